use std::path::Path;
use std::process::{Command, Output};

use proptest::prelude::*;

use ergl_cli::config::RunConfig;
use ergl_cli::manifest::RunManifest;
use ergl_core::ergodic::W1Method;
use ergl_core::experiment::{FormChoice, ModelSpec};
use ergl_core::network::{Activation, Checkpoint};
use ergl_core::training::{BatchSize, LossSpec, Schedule};
use ergl_core::SystemSpec;

fn ergl(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ergl"))
        .arg("--out-dir")
        .arg(out)
        .args(args)
        .env_remove("ERGL_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn ok(out: &Path, args: &[&str]) {
    let o = ergl(out, args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
}

fn manifest(dir: &Path) -> RunManifest {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_splits_ten_to_eight_and_lists_every_file() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("lorenz");
    ok(&out, &["simulate", "--system", "lorenz63", "--n", "1800", "--dt", "0.01"]);
    let m = manifest(&out);
    assert_eq!(m.metrics["n_train"], 1000.0);
    assert_eq!(m.metrics["n_test"], 800.0);
    assert_eq!(m.system.dt, Some(0.01));
    let mut listed: Vec<&str> = m.artifacts.iter().map(|a| a.path.as_str()).collect();
    listed.sort();
    assert_eq!(listed, ["orbit.bin", "orbit.csv", "test.bin", "train.bin"]);
    let mut on_disk: Vec<String> = std::fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n != "manifest.json")
        .collect();
    on_disk.sort();
    assert_eq!(on_disk, listed);

    let train = ergl_cli::commands::load_dataset(&out.join("train.bin")).unwrap();
    assert_eq!((train.len(), train.dim()), (1000, 3));
    assert!(train.jacobians.is_some());
}

#[test]
fn tent_dataset_is_one_dimensional_and_rerun_is_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for dir in [&a, &b] {
        ok(dir, &["--reproducible", "simulate", "--system", "tent_tilted", "--s", "0.2", "--n", "360", "--seed", "4"]);
    }
    let (ma, mb) = (manifest(&a), manifest(&b));
    assert_eq!(ma.metrics["dim"], 1.0);
    assert_eq!(ma.artifacts, mb.artifacts);
    assert_eq!(ma.config_hash, mb.config_hash);
    assert_eq!(
        std::fs::read(a.join("orbit.csv")).unwrap(),
        std::fs::read(b.join("orbit.csv")).unwrap()
    );
}

#[test]
fn manifest_rerun_reproduces_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let first = tmp.path().join("first");
    ok(&first, &["simulate", "--system", "baker", "--n", "180", "--seed", "2"]);
    let again = tmp.path().join("again");
    let from = first.join("manifest.json");
    ok(&again, &["--config", path_str(&from), "simulate"]);
    assert_eq!(manifest(&first).artifacts, manifest(&again).artifacts);
}

#[test]
fn train_evaluate_shadow_and_report_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    let data = t.join("data");
    ok(&data, &["simulate", "--system", "tent_tilted", "--s", "0.2", "--n", "360"]);
    let d = path_str(&data);

    // zero epochs keep the initialization
    let init = t.join("init");
    ok(&init, &["train", "--data", d, "--loss", "jac", "--lambda", "500", "--epochs", "0", "--width", "8"]);
    let ckpt = Checkpoint::load(&init.join("model.ckpt")).unwrap();
    let spec = ModelSpec {
        width: 8,
        ..ModelSpec::for_system(&SystemSpec::named("tent_tilted").with_param("s", 0.2).build().unwrap())
    };
    let train_set = ergl_cli::commands::load_dataset(&data.join("train.bin")).unwrap();
    let fresh = ergl_core::experiment::build_model(&ckpt_system(), &spec, &train_set, 0).unwrap();
    assert_eq!(ckpt.model, fresh);
    assert_eq!(ckpt.meta.loss, Some(LossSpec::Jacobian { lambda: 500.0 }));

    let mse = t.join("mse");
    ok(&mse, &["train", "--data", d, "--loss", "mse", "--epochs", "3", "--width", "8"]);
    let history = std::fs::read_to_string(mse.join("risk_history.csv")).unwrap();
    assert_eq!(history.lines().count(), 4);
    let unrolled = t.join("unrolled");
    ok(&unrolled, &["train", "--data", d, "--loss", "unrolled", "--k", "5", "--epochs", "2", "--width", "8"]);
    assert_eq!(manifest(&unrolled).loss, Some(LossSpec::Unrolled { k: 5 }));

    let eval = t.join("eval");
    let model_arg = format!("mse={}", path_str(&mse.join("model.ckpt")));
    ok(
        &eval,
        &[
            "evaluate", "--data", d, "--model", "truth", "--model", &model_arg, "--le-steps", "3000", "--le-ensemble", "3",
            "--horizon", "2000",
        ],
    );
    let csv = std::fs::read_to_string(eval.join("comparison.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("model,loss,W1,LE_diff,mean_diff"));
    assert_eq!(lines.next(), Some("truth,none,0,0,0"));
    assert!(lines.next().unwrap().starts_with("mse,mse,"));
    let spectrum: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(eval.join("spectrum.json")).unwrap()).unwrap();
    assert_eq!(spectrum["le_steps"], 3000);
    assert_eq!(spectrum["le_ensemble"], 3);
    let hist = std::fs::read_to_string(eval.join("histogram_x0.csv")).unwrap();
    assert_eq!(hist.lines().next(), Some("bin_left,bin_right,reference,truth,mse"));

    let sh = t.join("shadow");
    ok(&sh, &["shadow", "--data", d, "--model", "truth"]);
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(sh.join("shadow_report.json")).unwrap()).unwrap();
    assert_eq!(report["defects"]["max_state"], 0.0);
    assert_eq!(report["shadow_distance"], 0.0);
    assert_eq!(report["converged"], true);
    assert_eq!(report["measure"]["triangle_holds"], true);

    let summary = t.join("summary");
    ok(&summary, &["report", path_str(t)]);
    let table = std::fs::read_to_string(summary.join("summary.csv")).unwrap();
    assert_eq!(table.lines().count(), 1 + 6);
    assert!(table.lines().next().unwrap().starts_with("run,command,system,loss,seed,config_hash"));
}

fn ckpt_system() -> ergl_core::System {
    SystemSpec::named("tent_tilted").with_param("s", 0.2).build().unwrap()
}

#[test]
fn exit_codes_separate_config_and_numeric_failures() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x");
    assert_eq!(ergl(&out, &["simulate", "--system", "nope"]).status.code(), Some(2));
    assert_eq!(ergl(&out, &["simulate", "--system", "tent_tilted", "--param", "q=1"]).status.code(), Some(2));
    assert_eq!(ergl(&out, &["frobnicate"]).status.code(), Some(2));
    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, "[train]\nepoch = 3\n").unwrap();
    let o = ergl(&out, &["--config", path_str(&bad), "simulate", "--system", "lorenz63"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("epoch"));

    // a refinement that cannot finish in one Newton step is a numeric failure
    let o = ergl(
        &out,
        &["shadow", "--system", "lorenz63", "--model", "truth", "--noise", "1e-3", "--max-iter", "1", "--n", "50"],
    );
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("shadow_report.json")).unwrap()).unwrap();
    assert_eq!(report["converged"], false);
    assert!(report["error"].as_str().unwrap().contains("did not converge"));
}

#[test]
fn missing_jacobians_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d");
    ok(&data, &["simulate", "--system", "tent_tilted", "--n", "90", "--no-jacobians"]);
    let o = ergl(&tmp.path().join("m"), &["train", "--data", path_str(&data), "--loss", "jac", "--epochs", "1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn out_dir_defaults_to_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("from_env");
    let o = Command::new(env!("CARGO_BIN_EXE_ergl"))
        .args(["simulate", "--system", "tent_pinched", "--n", "36"])
        .env("ERGL_OUT_DIR", &out)
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(out.join("manifest.json").exists());
}

fn arb_loss() -> impl Strategy<Value = Option<LossSpec>> {
    prop_oneof![
        Just(None),
        Just(Some(LossSpec::Mse)),
        (0.0f64..1e3).prop_map(|lambda| Some(LossSpec::Jacobian { lambda })),
        (1usize..60).prop_map(|k| Some(LossSpec::Unrolled { k })),
    ]
}

fn arb_config() -> impl Strategy<Value = RunConfig> {
    (
        prop::option::of(prop::sample::select(ergl_core::dynamics::SYSTEM_NAMES.to_vec())),
        prop::option::of(0.01f64..0.99),
        prop::option::of(any::<u64>()),
        arb_loss(),
        (1usize..100_000, 0usize..5000, any::<bool>()),
        prop::option::of((1usize..1024, 1usize..8, any::<bool>(), any::<bool>())),
        (0usize..10_000, prop::option::of(1usize..4096), 1e-6f64..1.0, any::<bool>()),
        (1.0f64..1e4, 1usize..100, prop::sample::select(vec![0u8, 1, 2, 3])),
    )
        .prop_map(|(system, s, seed, loss, data, model, train, eval)| {
            let mut cfg = RunConfig {
                seed,
                loss,
                ..RunConfig::default()
            };
            cfg.system = system.map(|name| {
                let spec = SystemSpec::named(name);
                match s {
                    Some(v) => spec.with_param("s", v),
                    None => spec,
                }
            });
            cfg.data.n_train = data.0;
            cfg.data.n_test = data.1;
            cfg.data.jacobians = data.2;
            cfg.model = model.map(|(width, depth, gelu, skip)| ModelSpec {
                width,
                depth,
                activation: if gelu { Activation::Gelu } else { Activation::Relu },
                skip,
                form: if skip { FormChoice::Auto } else { FormChoice::Rk4 },
            });
            cfg.train.epochs = train.0;
            cfg.train.batch_size = train.1.map_or(BatchSize::Full, BatchSize::Size);
            cfg.train.learning_rate = train.2;
            cfg.train.schedule = if train.3 {
                Schedule::Step { factor: 0.5, every: 7 }
            } else {
                Schedule::Constant
            };
            cfg.evaluate.horizon = eval.0;
            cfg.evaluate.ensemble = eval.1;
            cfg.evaluate.w1 = match eval.2 {
                0 => W1Method::Auto,
                1 => W1Method::Exact1D,
                2 => W1Method::Assignment,
                _ => W1Method::Sliced {
                    projections: 50,
                    seed: 3,
                },
            };
            cfg.models = if train.3 { vec!["truth".into()] } else { Vec::new() };
            cfg
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn config_round_trips_through_toml_and_json(cfg in arb_config()) {
        let text = cfg.to_toml().unwrap();
        prop_assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg.clone(), "{}", text);
        let json = serde_json::to_string(&cfg).unwrap();
        prop_assert_eq!(RunConfig::from_json(&json).unwrap(), cfg);
    }
}
