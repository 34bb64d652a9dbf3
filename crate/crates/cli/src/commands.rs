//! The five subcommands.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use ergl_core::dynamics::trajectory;
use ergl_core::ergodic::statistics::histogram_csv;
use ergl_core::ergodic::{compare_model, comparison_csv, truth_reference, ComparisonRow, EmpiricalMeasure, LyapunovSpectrum};
use ergl_core::experiment::{build_model, simulate as simulate_data, ModelSpec};
use ergl_core::io::{read_binary, write_binary, write_csv};
use ergl_core::network::{Activation, Checkpoint, CheckpointMeta, MlpModel};
use ergl_core::shadowing::{
    classify_shadow, measure_defects, refine_shadow, typicality_threshold, DefectSummary, PseudoOrbit, ShadowMeasureReport,
    ShadowResult,
};
use ergl_core::training::{relative_error_dataset, train as fit, BatchSize, LossSpec, RelativeError, RiskReport};
use ergl_core::{Dataset, System, SystemSpec, TangentMap};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::manifest::{config_hash, load_manifest, now, Outputs, RunManifest, MANIFEST_FILE};
use crate::{
    ActivationArg, Context, EvaluateArgs, LossKind, ReportArgs, ShadowArgs, SimulateArgs, SystemArgs, TrainArgs,
};

pub const TRAIN_FILE: &str = "train.bin";
pub const TEST_FILE: &str = "test.bin";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const TRUTH_MODEL: &str = "truth";

/// Flags over config over the data directory's manifest.
fn resolve_system(cfg: &mut RunConfig, args: &SystemArgs, data_manifest: Option<&RunManifest>) -> CliResult<System> {
    let mut spec = cfg
        .system
        .clone()
        .or_else(|| data_manifest.map(|m| m.system.clone()))
        .or_else(|| args.system.as_deref().map(SystemSpec::named))
        .ok_or_else(|| CliError::Config("system: no system given (use --system or a [system] table)".into()))?;
    if let Some(name) = &args.system {
        if *name != spec.system {
            spec = SystemSpec::named(name);
        }
    }
    if let Some(s) = args.s {
        spec = spec.with_param("s", s);
    }
    for kv in &args.params {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("--param {kv:?}: expected key=value")))?;
        let v: f64 = v
            .trim()
            .parse()
            .map_err(|e| CliError::Config(format!("--param {kv:?}: {e}")))?;
        spec = spec.with_param(k.trim(), v);
    }
    if args.dt.is_some() {
        spec.dt = args.dt;
    }
    let system = spec.build()?;
    cfg.system = Some(spec);
    Ok(system)
}

fn data_dir(cfg: &mut RunConfig, flag: &Option<PathBuf>) -> Option<PathBuf> {
    if let Some(d) = flag {
        cfg.data_dir = Some(d.display().to_string());
    }
    cfg.data_dir.as_ref().map(PathBuf::from)
}

fn data_manifest(dir: Option<&Path>) -> CliResult<Option<RunManifest>> {
    match dir {
        Some(d) if d.join(MANIFEST_FILE).exists() => load_manifest(&d.join(MANIFEST_FILE)).map(Some),
        _ => Ok(None),
    }
}

fn start_manifest(ctx: &Context, cfg: &RunConfig, loss: Option<LossSpec>, train: bool) -> RunManifest {
    RunManifest {
        command: ctx.command.to_string(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: config_hash(cfg),
        seed: cfg.effective_seed(),
        system: cfg.system.clone().unwrap_or_else(|| SystemSpec::named("")),
        loss,
        train: train.then(|| cfg.train.clone()),
        config: cfg.clone(),
        reproducible: ctx.reproducible,
        threads: ctx.threads,
        inputs: Vec::new(),
        artifacts: Vec::new(),
        metrics: BTreeMap::new(),
        started: now(),
        finished: String::new(),
    }
}

fn read_file(path: &Path) -> CliResult<Vec<u8>> {
    std::fs::read(path).map_err(|e| CliError::io(path, e))
}

fn binary_bytes(states: &Array2<f64>, jacobians: Option<&ndarray::Array3<f64>>) -> CliResult<Vec<u8>> {
    let mut buf = Vec::new();
    write_binary(&mut buf, states, jacobians)?;
    Ok(buf)
}

fn dataset_bytes(data: &Dataset) -> CliResult<Vec<u8>> {
    let states = data
        .orbit_states()
        .ok_or_else(|| CliError::Config("dataset rows are not consecutive orbit points".into()))?;
    binary_bytes(&states, data.jacobians.as_ref())
}

pub fn load_dataset(path: &Path) -> CliResult<Dataset> {
    let (states, jacobians) = read_binary(&read_file(path)?).map_err(|e| match e {
        ergl_core::Error::Format(m) => CliError::io(path, m),
        other => other.into(),
    })?;
    Ok(Dataset::from_orbit_states(&states, jacobians)?)
}

pub fn simulate(mut ctx: Context, args: SimulateArgs) -> CliResult<()> {
    let cfg = &mut ctx.config;
    let system = resolve_system(cfg, &args.system, None)?;
    if let Some(n) = args.n {
        let n_train = (n as f64 * 10.0 / 18.0).round() as usize;
        cfg.data.n_train = n_train;
        cfg.data.n_test = n - n_train;
    }
    if let Some(v) = args.n_train {
        cfg.data.n_train = v;
    }
    if let Some(v) = args.n_test {
        cfg.data.n_test = v;
    }
    if let Some(v) = args.spinup {
        cfg.data.spinup = v;
    }
    if args.x0.is_some() {
        cfg.data.x0 = args.x0.clone();
    }
    if args.no_jacobians {
        cfg.data.jacobians = false;
    }
    let (_, train, test) = simulate_data(&system, &cfg.data)?;
    let full = train.concat(&test)?;
    let states = full
        .orbit_states()
        .ok_or_else(|| CliError::Config("simulated splits are not consecutive".into()))?;

    let mut out = Outputs::create(&ctx.out_dir)?;
    let mut csv = Vec::new();
    write_csv(&mut csv, &states, system.dt.unwrap_or(1.0))?;
    out.write("orbit.csv", &csv)?;
    out.write("orbit.bin", &binary_bytes(&states, full.jacobians.as_ref())?)?;
    out.write(TRAIN_FILE, &dataset_bytes(&train)?)?;
    out.write(TEST_FILE, &dataset_bytes(&test)?)?;

    let mut manifest = start_manifest(&ctx, &ctx.config, None, false);
    manifest.metrics.insert("n_train".into(), train.len() as f64);
    manifest.metrics.insert("n_test".into(), test.len() as f64);
    manifest.metrics.insert("dim".into(), train.dim() as f64);
    out.finish(manifest)?;
    println!(
        "simulated {}: {} train / {} test pairs in {}",
        system.name,
        train.len(),
        test.len(),
        ctx.out_dir.display()
    );
    Ok(())
}

fn resolve_loss(cfg: &RunConfig, args: &TrainArgs, spec: &SystemSpec) -> LossSpec {
    let configured = cfg.loss;
    let lambda = args.lambda.or(match configured {
        Some(LossSpec::Jacobian { lambda }) => Some(lambda),
        _ => None,
    });
    let k = args.k.or(match configured {
        Some(LossSpec::Unrolled { k }) => Some(k),
        _ => None,
    });
    let kind = args.loss.or(match configured {
        Some(LossSpec::Mse) | None => None,
        Some(LossSpec::Jacobian { .. }) => Some(LossKind::Jac),
        Some(LossSpec::Unrolled { .. }) => Some(LossKind::Unrolled),
    });
    match kind {
        None | Some(LossKind::Mse) => LossSpec::Mse,
        Some(LossKind::Jac) => LossSpec::Jacobian {
            lambda: lambda.unwrap_or_else(|| spec.default_lambda()),
        },
        Some(LossKind::Unrolled) => LossSpec::Unrolled { k: k.unwrap_or(10) },
    }
}

#[derive(Serialize)]
struct TrainReport<'a> {
    loss: LossSpec,
    epochs: usize,
    train_risk: f64,
    test_risk: f64,
    relative_error: RelativeError,
    history: &'a [ergl_core::training::EpochRecord],
}

pub fn train(mut ctx: Context, args: TrainArgs) -> CliResult<()> {
    let cfg = &mut ctx.config;
    let dir = data_dir(cfg, &args.data)
        .ok_or_else(|| CliError::Config("data_dir: no dataset given (use --data)".into()))?;
    let dm = data_manifest(Some(&dir))?;
    let system = resolve_system(cfg, &args.system, dm.as_ref())?;
    let spec = cfg.system.clone().expect("resolved");
    let train_set = load_dataset(&dir.join(TRAIN_FILE))?;
    let test_set = load_dataset(&dir.join(TEST_FILE))?;

    let loss = resolve_loss(cfg, &args, &spec);
    cfg.loss = Some(loss);
    let mut model_spec = cfg.model.unwrap_or_else(|| ModelSpec::for_system(&system));
    if let Some(w) = args.width {
        model_spec.width = w;
    }
    if let Some(d) = args.depth {
        model_spec.depth = d;
    }
    if let Some(a) = args.activation {
        model_spec.activation = match a {
            ActivationArg::Relu => Activation::Relu,
            ActivationArg::Gelu => Activation::Gelu,
        };
    }
    cfg.model = Some(model_spec);
    let t = &mut cfg.train;
    if let Some(v) = args.epochs {
        t.epochs = v;
    }
    if let Some(v) = args.batch_size {
        t.batch_size = if v == 0 { BatchSize::Full } else { BatchSize::Size(v) };
    }
    if let Some(v) = args.lr {
        t.learning_rate = v;
    }
    if let Some(v) = args.weight_decay {
        t.weight_decay = v;
    }
    let train_cfg = cfg.train.clone();

    let init = build_model(&system, &model_spec, &train_set, train_cfg.seed)?;
    let (model, report) = fit(init, &train_set, &test_set, &loss, &train_cfg)?;
    let relative = relative_error_dataset(&model, &test_set)?;

    let mut out = Outputs::create(&ctx.out_dir)?;
    let checkpoint = Checkpoint {
        model,
        meta: CheckpointMeta {
            seed: train_cfg.seed,
            loss: Some(loss),
            step: train_cfg.epochs,
            schedule: Some(serde_json::to_string(&train_cfg.schedule).expect("schedule serializes")),
            system: Some(system.name.clone()),
        },
    };
    out.write(CHECKPOINT_FILE, &checkpoint.to_bytes())?;
    out.write("risk_history.csv", report.history_csv().as_bytes())?;
    out.write_json("risk_report.json", &train_report(&loss, &train_cfg.epochs, &report, relative))?;

    let mut manifest = start_manifest(&ctx, &ctx.config, Some(loss), true);
    manifest.inputs = vec![dir.join(TRAIN_FILE).display().to_string(), dir.join(TEST_FILE).display().to_string()];
    manifest.metrics.insert("train_risk".into(), report.train_risk);
    manifest.metrics.insert("test_risk".into(), report.test_risk);
    manifest.metrics.insert("mean_relative_error".into(), report.mean_relative_error);
    out.finish(manifest)?;
    println!(
        "trained {} on {}: test risk {:.3e}, relative error {:.4}",
        loss.label(),
        system.name,
        report.test_risk,
        report.mean_relative_error
    );
    Ok(())
}

fn train_report<'a>(loss: &LossSpec, epochs: &usize, report: &'a RiskReport, relative: RelativeError) -> TrainReport<'a> {
    TrainReport {
        loss: *loss,
        epochs: *epochs,
        train_risk: report.train_risk,
        test_risk: report.test_risk,
        relative_error: relative,
        history: &report.history,
    }
}

/// A model named on the command line.
pub enum ModelRef {
    Truth,
    Checkpoint { label: String, path: PathBuf },
}

impl ModelRef {
    pub fn parse(text: &str) -> Self {
        if text == TRUTH_MODEL {
            return ModelRef::Truth;
        }
        if let Some((label, path)) = text.split_once('=') {
            return ModelRef::Checkpoint {
                label: label.to_string(),
                path: PathBuf::from(path),
            };
        }
        let path = PathBuf::from(text);
        // `run/model.ckpt` is labelled `run`
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let label = if stem == "model" {
            path.parent()
                .and_then(|p| p.file_name())
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or(stem)
        } else {
            stem
        };
        ModelRef::Checkpoint { label, path }
    }
}

enum Loaded {
    Truth,
    Net { label: String, loss: String, model: MlpModel },
}

fn load_model(r: ModelRef) -> CliResult<(Loaded, Option<String>)> {
    match r {
        ModelRef::Truth => Ok((Loaded::Truth, None)),
        ModelRef::Checkpoint { label, path } => {
            let ckpt = Checkpoint::from_bytes(&read_file(&path)?).or_else(|_| Checkpoint::load(&path))?;
            let loss = ckpt.meta.loss.map(|l| l.label()).unwrap_or_else(|| "unknown".into());
            Ok((
                Loaded::Net {
                    label,
                    loss,
                    model: ckpt.model,
                },
                Some(path.display().to_string()),
            ))
        }
    }
}

fn initial_state(cfg: &RunConfig, system: &System, seed: u64) -> Vec<f64> {
    cfg.data
        .x0
        .clone()
        .unwrap_or_else(|| system.sample_initial(&mut ChaCha8Rng::seed_from_u64(seed)))
}

#[derive(Serialize)]
struct RowSummary<'a> {
    model: &'a str,
    loss: &'a str,
    #[serde(rename = "W1")]
    w1: f64,
    #[serde(rename = "LE_diff")]
    le_diff: f64,
    mean_diff: f64,
    w1_method: ergl_core::ergodic::W1Method,
    exponents: &'a [f64],
    mean: &'a [f64],
    variance: &'a [f64],
}

fn summarize(r: &ComparisonRow) -> RowSummary<'_> {
    RowSummary {
        model: &r.model,
        loss: &r.loss,
        w1: r.w1,
        le_diff: r.le_diff,
        mean_diff: r.mean_diff,
        w1_method: r.w1_method,
        exponents: &r.spectrum.exponents,
        mean: &r.stats.mean,
        variance: &r.stats.variance,
    }
}

pub fn evaluate(mut ctx: Context, args: EvaluateArgs) -> CliResult<()> {
    let cfg = &mut ctx.config;
    let dir = data_dir(cfg, &args.data);
    let dm = data_manifest(dir.as_deref())?;
    if let (Some(m), None) = (&dm, &cfg.data.x0) {
        cfg.data.x0 = m.config.data.x0.clone();
    }
    let system = resolve_system(cfg, &args.system, dm.as_ref())?;
    if !args.models.is_empty() {
        cfg.models = args.models.clone();
    }
    let e = &mut cfg.evaluate;
    if let Some(v) = args.le_steps {
        e.lyapunov.steps = v;
    }
    if let Some(v) = args.le_ensemble {
        e.ensemble = v;
    }
    if let Some(v) = args.horizon {
        e.horizon = v;
    }
    if let Some(v) = args.w1_stride {
        e.w1_stride = v;
    }
    if let Some(v) = args.bins {
        e.bins = v;
    }
    e.lyapunov.exponents = e.lyapunov.exponents.min(system.dim()).max(1);
    let ecfg = cfg.evaluate.clone();
    let x0 = initial_state(cfg, &system, ecfg.seed);
    let truth = truth_reference(&system, &x0, &ecfg)?;

    let mut inputs = Vec::new();
    let mut rows = Vec::new();
    for text in &cfg.models {
        let (loaded, path) = load_model(ModelRef::parse(text))?;
        inputs.extend(path);
        let row = match &loaded {
            Loaded::Truth => compare_model(&truth, TRUTH_MODEL, "none", &system, &ecfg)?,
            Loaded::Net { label, loss, model } => compare_model(&truth, label, loss, model, &ecfg)?,
        };
        rows.push(row);
    }

    let mut out = Outputs::create(&ctx.out_dir)?;
    out.write("comparison.csv", comparison_csv(&rows).as_bytes())?;
    out.write_json("comparison.json", &rows.iter().map(summarize).collect::<Vec<_>>())?;
    let models: BTreeMap<&str, &LyapunovSpectrum> = rows.iter().map(|r| (r.model.as_str(), &r.spectrum)).collect();
    out.write_json(
        "spectrum.json",
        &json!({
            "le_steps": ecfg.lyapunov.steps,
            "le_ensemble": ecfg.ensemble,
            "exponents": ecfg.lyapunov.exponents,
            "reorth_every": ecfg.lyapunov.reorth_every,
            "truth": truth.spectrum,
            "models": models,
        }),
    )?;
    let mut labels = vec!["reference"];
    labels.extend(rows.iter().map(|r| r.model.as_str()));
    for (i, hist) in truth.stats.histograms.iter().enumerate() {
        let mut hs = vec![hist];
        hs.extend(rows.iter().map(|r| &r.stats.histograms[i]));
        out.write(&format!("histogram_x{i}.csv"), histogram_csv(&labels, &hs)?.as_bytes())?;
    }

    let mut manifest = start_manifest(&ctx, &ctx.config, None, false);
    manifest.inputs = inputs;
    for r in &rows {
        manifest.metrics.insert(format!("W1/{}", r.model), r.w1);
        manifest.metrics.insert(format!("LE_diff/{}", r.model), r.le_diff);
        manifest.metrics.insert(format!("mean_diff/{}", r.model), r.mean_diff);
    }
    out.finish(manifest)?;
    print!("{}", comparison_csv(&rows));
    Ok(())
}

#[derive(Serialize)]
struct ShadowReport<'a> {
    system: &'a str,
    model: &'a str,
    n: usize,
    noise: f64,
    defects: DefectSummary,
    converged: bool,
    shadow_distance: f64,
    residual: f64,
    iterations: usize,
    residual_history: &'a [f64],
    /// Shadow distance over the largest state defect.
    distance_over_defect: Option<f64>,
    min_relative_pivot: f64,
    near_singular: bool,
    halvings: usize,
    kink_crossings: usize,
    measure: Option<ShadowMeasureReport>,
    error: Option<String>,
}

pub fn shadow(mut ctx: Context, args: ShadowArgs) -> CliResult<()> {
    let cfg = &mut ctx.config;
    let dir = data_dir(cfg, &args.data);
    let dm = data_manifest(dir.as_deref())?;
    let system = resolve_system(cfg, &args.system, dm.as_ref())?;
    if let Some(m) = &args.model {
        cfg.models = vec![m.clone()];
    }
    let s = &mut cfg.shadow;
    if let Some(v) = args.n {
        s.n = v;
    }
    if let Some(v) = args.noise {
        s.noise = v;
    }
    if let Some(v) = args.tol {
        s.refine.tol = v;
    }
    if let Some(v) = args.max_iter {
        s.refine.max_iter = v;
    }
    let scfg = cfg.shadow.clone();
    if !(scfg.noise >= 0.0 && scfg.noise.is_finite()) {
        return Err(CliError::Config("shadow.noise: must be finite and non-negative".into()));
    }
    let model_text = cfg.models.first().cloned().unwrap_or_else(|| TRUTH_MODEL.into());
    let seed = cfg.effective_seed();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = initial_state(cfg, &system, seed);
    let x0 = system.orbit(&start, 1, scfg.spinup)?.state(0);

    let (loaded, path) = load_model(ModelRef::parse(&model_text))?;
    let (label, pseudo) = match &loaded {
        Loaded::Truth => (
            TRUTH_MODEL.to_string(),
            PseudoOrbit::noisy_truth(&system, &x0, scfg.n, scfg.noise, &mut rng)?,
        ),
        Loaded::Net { label, model, .. } => (label.clone(), measure_defects(&system, model as &dyn TangentMap, &x0, scfg.n)?),
    };
    let defects = pseudo.summary();

    let (result, failure) = match refine_shadow(&system, &pseudo, &scfg.refine) {
        Ok(r) => (r, None),
        Err(ergl_core::Error::NoConvergence {
            iterations,
            residual,
            best,
        }) => (
            *best.clone(),
            Some(ergl_core::Error::NoConvergence {
                iterations,
                residual,
                best,
            }),
        ),
        Err(e) => return Err(e.into()),
    };
    let measure = if result.converged {
        let ref_start = system.sample_initial(&mut rng);
        let reference = EmpiricalMeasure::new(trajectory(&system, &ref_start, scfg.reference_steps, scfg.spinup)?)?;
        let method = cfg.evaluate.w1;
        let threshold = typicality_threshold(
            &system,
            &reference,
            scfg.n,
            scfg.spinup,
            scfg.threshold_samples,
            scfg.threshold_factor,
            method,
            &mut rng,
        )?;
        Some(classify_shadow(&pseudo, &result, &reference, threshold, method)?)
    } else {
        None
    };

    let mut out = Outputs::create(&ctx.out_dir)?;
    let report = shadow_report(&system, &label, &scfg, defects, &result, measure.clone(), failure.as_ref());
    out.write_json("shadow_report.json", &report)?;
    let mut csv = Vec::new();
    write_csv(&mut csv, &result.shadow, system.dt.unwrap_or(1.0))?;
    out.write("shadow_orbit.csv", &csv)?;

    let mut manifest = start_manifest(&ctx, &ctx.config, None, false);
    manifest.inputs = path.into_iter().collect();
    let m = &mut manifest.metrics;
    m.insert("max_state_defect".into(), defects.max_state);
    m.insert("max_jacobian_defect".into(), defects.max_jacobian);
    m.insert("shadow_distance".into(), result.shadow_distance);
    m.insert("residual".into(), result.residual);
    m.insert("iterations".into(), result.iterations as f64);
    if let Some(r) = &measure {
        m.insert("w1_shadow_vs_reference".into(), r.w1_shadow_vs_reference);
        m.insert("w1_model_vs_reference".into(), r.w1_model_vs_reference);
        m.insert("w1_shadow_vs_model".into(), r.w1_shadow_vs_model);
        m.insert("typical".into(), if r.typical { 1.0 } else { 0.0 });
    }
    out.finish(manifest)?;
    match failure {
        Some(e) => Err(e.into()),
        None => {
            let verdict = measure.map_or("unclassified", |r| if r.typical { "typical" } else { "atypical" });
            println!(
                "shadowed {label} on {}: distance {:.3e}, residual {:.1e}, {}",
                system.name, result.shadow_distance, result.residual, verdict
            );
            Ok(())
        }
    }
}

fn shadow_report<'a>(
    system: &'a System,
    label: &'a str,
    scfg: &crate::config::ShadowSection,
    defects: DefectSummary,
    result: &'a ShadowResult,
    measure: Option<ShadowMeasureReport>,
    failure: Option<&ergl_core::Error>,
) -> ShadowReport<'a> {
    ShadowReport {
        system: &system.name,
        model: label,
        n: scfg.n,
        noise: scfg.noise,
        defects,
        converged: result.converged,
        shadow_distance: result.shadow_distance,
        residual: result.residual,
        iterations: result.iterations,
        residual_history: &result.residual_history,
        distance_over_defect: (defects.max_state > 0.0).then(|| result.shadow_distance / defects.max_state),
        min_relative_pivot: result.min_relative_pivot,
        near_singular: result.near_singular,
        halvings: result.halvings,
        kink_crossings: result.kink_crossings,
        measure,
        error: failure.map(|e| e.to_string()),
    }
}

/// Manifests in `dir` itself or its immediate subdirectories.
fn find_manifests(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let own = dir.join(MANIFEST_FILE);
    if own.exists() {
        return Ok(vec![own]);
    }
    let mut found: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path().join(MANIFEST_FILE))
        .filter(|p| p.exists())
        .collect();
    found.sort();
    Ok(found)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn report(ctx: Context, args: ReportArgs) -> CliResult<()> {
    let mut runs = Vec::new();
    for dir in &args.runs {
        for path in find_manifests(dir)? {
            let m = load_manifest(&path)?;
            if m.command != "report" {
                runs.push((path, m));
            }
        }
    }
    if runs.is_empty() {
        return Err(CliError::Config("report: no manifests found".into()));
    }
    let keys: std::collections::BTreeSet<&str> = runs.iter().flat_map(|(_, m)| m.metrics.keys().map(|k| k.as_str())).collect();
    let mut csv = String::from("run,command,system,loss,seed,config_hash");
    for k in &keys {
        csv.push(',');
        csv.push_str(&csv_field(k));
    }
    csv.push('\n');
    for (path, m) in &runs {
        let run = path.parent().map(|p| p.display().to_string()).unwrap_or_default();
        let loss = m.loss.map(|l| l.label()).unwrap_or_default();
        csv.push_str(&format!(
            "{},{},{},{},{},{}",
            csv_field(&run),
            m.command,
            m.system.system,
            csv_field(&loss),
            m.seed,
            m.config_hash
        ));
        for k in &keys {
            csv.push(',');
            if let Some(v) = m.metrics.get(*k) {
                csv.push_str(&v.to_string());
            }
        }
        csv.push('\n');
    }

    let mut out = Outputs::create(&ctx.out_dir)?;
    out.write("summary.csv", csv.as_bytes())?;
    out.write_json("summary.json", &runs.iter().map(|(_, m)| m).collect::<Vec<_>>())?;
    let mut manifest = start_manifest(&ctx, &ctx.config, None, false);
    manifest.inputs = runs.iter().map(|(p, _)| p.display().to_string()).collect();
    manifest.metrics.insert("runs".into(), runs.len() as f64);
    out.finish(manifest)?;
    print!("{csv}");
    Ok(())
}
