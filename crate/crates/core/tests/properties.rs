use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ergl_core::ergodic::wasserstein::solve_assignment;
use ergl_core::ergodic::{ensemble_lyapunov, lyapunov_spectrum, wasserstein1, EmpiricalMeasure, LyapunovConfig, W1Method};
use ergl_core::network::{loss_gradient, loss_value, Activation, Layer, LossSelection, MapForm, Mlp, MlpModel, ParamGradient};
use ergl_core::shadowing::{refine_shadow, PseudoOrbit, ShadowConfig};
use ergl_core::training::{loss_jac, loss_mse, train, AdamW, AdamWConfig, BatchSize, LossSpec, TrainConfig};
use ergl_core::{make_dataset, System};

fn fd_jacobian(sys: &System, x: &[f64], h: f64) -> Array2<f64> {
    let d = x.len();
    let mut j = Array2::zeros((d, d));
    for c in 0..d {
        let mut p = x.to_vec();
        let mut m = x.to_vec();
        p[c] += h;
        m[c] -= h;
        let fp = sys.step(&p).unwrap();
        let fm = sys.step(&m).unwrap();
        for r in 0..d {
            j[[r, c]] = (fp[r] - fm[r]) / (2.0 * h);
        }
    }
    j
}

fn rel_err(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let num: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt().max(1e-12);
    num / den
}

fn smooth_flows() -> Vec<System> {
    vec![System::lorenz63(), System::rossler(), System::hyperchaos()]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn flow_jacobians_match_finite_differences(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for sys in smooth_flows() {
            let x = sys.sample_initial(&mut rng);
            let j = sys.jacobian(&x).unwrap();
            let fd = fd_jacobian(&sys, &x, 1e-6);
            prop_assert!(rel_err(&fd, &j) < 1e-5, "{}: {}", sys.name, rel_err(&fd, &j));
        }
    }

    #[test]
    fn map_jacobians_match_finite_differences(x in 0.01f64..1.99, y in 0.01f64..6.27, s in prop::sample::select(vec![0.2, 0.8])) {
        let h = 1e-7;
        for sys in [System::tent_tilted(s), System::tent_pinched(s), System::tent_plucked(s)] {
            let p = [x];
            // skip stencils that straddle a kink
            if (-2..=2).any(|k| sys.near_kink(&[x + k as f64 * h]))
                || sys.branch_code(&[x - h]) != sys.branch_code(&[x + h]) {
                continue;
            }
            let j = sys.jacobian(&p).unwrap();
            prop_assert!(rel_err(&fd_jacobian(&sys, &p, h), &j) < 1e-5);
        }
        let baker = System::baker(0.1);
        let p = [x * 3.0, y];
        let straddles = (0..2).any(|c| {
            let mut a = p.to_vec();
            let mut b = p.to_vec();
            a[c] -= h;
            b[c] += h;
            baker.branch_code(&a) != baker.branch_code(&b)
        });
        if !straddles && !baker.near_kink(&p) {
            prop_assert!(rel_err(&fd_jacobian(&baker, &p, h), &baker.jacobian(&p).unwrap()) < 1e-5);
        }
    }

    #[test]
    fn maps_preserve_their_domains(x in 0.0f64..2.0, y in 0.0f64..6.283, s in prop::sample::select(vec![0.2, 0.8])) {
        for sys in [System::tent_tilted(s), System::tent_pinched(s), System::tent_plucked(s)] {
            let v = sys.step(&[x]).unwrap()[0];
            prop_assert!((0.0..=2.0).contains(&v), "{} maps {x} to {v}", sys.name);
        }
        let v = System::baker(s).step(&[x * 3.0, y]).unwrap();
        prop_assert!(v.iter().all(|c| (0.0..2.0 * std::f64::consts::PI).contains(c)));
    }

    #[test]
    fn orbits_are_deterministic(seed in any::<u64>()) {
        let sys = System::lorenz63();
        let x0 = sys.sample_initial(&mut ChaCha8Rng::seed_from_u64(seed));
        let a = sys.orbit(&x0, 200, 10).unwrap();
        let b = sys.orbit(&x0, 200, 10).unwrap();
        prop_assert_eq!(a.states, b.states);
    }
}

fn random_model(rng: &mut ChaCha8Rng, d: usize, form: MapForm, act: Activation) -> MlpModel {
    let mut net = Mlp::new(d, 6, 2, d, act, true, rng);
    for l in &mut net.layers {
        l.bias.mapv_inplace(|_| rng.gen_range(-0.3..0.3));
    }
    MlpModel::new(net, form).unwrap()
}

fn random_direction(rng: &mut ChaCha8Rng, net: &Mlp) -> ParamGradient {
    let mut g = ParamGradient::zeros_like(net);
    for (w, b) in &mut g.layers {
        w.mapv_inplace(|_| rng.gen_range(-1.0..1.0));
        b.mapv_inplace(|_| rng.gen_range(-1.0..1.0));
    }
    g
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn gradients_match_directional_differences(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sys = System::lorenz63();
        let orbit = sys.orbit(&sys.sample_initial(&mut rng), 12, 200).unwrap();
        let data = make_dataset(&sys, &orbit, true).unwrap();
        for loss in [LossSpec::Mse, LossSpec::Jacobian { lambda: 5.0 }, LossSpec::Unrolled { k: 3 }] {
            let model = random_model(&mut rng, 3, MapForm::Euler { dt: 0.01 }, Activation::Gelu);
            let (_, grad) = loss_gradient(&model, &data, &loss).unwrap();
            let u = random_direction(&mut rng, &model.net);
            let h = 1e-6;
            let mut plus = model.clone();
            plus.net.axpy(h, &u);
            let mut minus = model.clone();
            minus.net.axpy(-h, &u);
            let sel = LossSelection::default();
            let fd = (loss_value(&plus, &data, &loss, &sel).unwrap() - loss_value(&minus, &data, &loss, &sel).unwrap()) / (2.0 * h);
            let exact = grad.dot(&u);
            prop_assert!((fd - exact).abs() <= 1e-5 * exact.abs().max(1e-3), "{loss:?}: {fd} vs {exact}");
        }
    }

    #[test]
    fn linear_network_jacobian_is_constant(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = (0..3).map(|_| Layer {
            weight: Array2::from_shape_fn((3, 3), |_| rng.gen_range(-1.0..1.0)),
            bias: Array1::from_shape_fn(3, |_| rng.gen_range(-1.0..1.0)),
            activated: false,
            skip: false,
        }).collect();
        let model = MlpModel::new(Mlp::from_layers(layers, Activation::Gelu).unwrap(), MapForm::Direct).unwrap();
        let a = model.input_jacobian(&[rng.gen_range(-5.0..5.0), 0.3, -1.0]).unwrap();
        let b = model.input_jacobian(&[2.0, rng.gen_range(-5.0..5.0), 4.0]).unwrap();
        prop_assert!(rel_err(&a, &b) < 1e-13);
    }

    #[test]
    fn gelu_network_jacobian_is_continuous(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = random_model(&mut rng, 2, MapForm::Direct, Activation::Gelu);
        let x = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
        let a = model.input_jacobian(&x).unwrap();
        let b = model.input_jacobian(&[x[0] + 1e-9, x[1] - 1e-9]).unwrap();
        prop_assert!(rel_err(&a, &b) < 1e-6);
    }

    #[test]
    fn jacobian_loss_dominates_state_loss(
        p in prop::collection::vec(-3.0f64..3.0, 2),
        t in prop::collection::vec(-3.0f64..3.0, 2),
        j in prop::collection::vec(-3.0f64..3.0, 8),
        lambda in 0.0f64..1000.0,
    ) {
        let pj = Array2::from_shape_vec((2, 2), j[..4].to_vec()).unwrap();
        let tj = Array2::from_shape_vec((2, 2), j[4..].to_vec()).unwrap();
        let mse = loss_mse(&p, &t).unwrap();
        prop_assert!(loss_jac(&p, &t, pj.view(), tj.view(), lambda).unwrap() >= mse);
        prop_assert_eq!(loss_jac(&p, &t, pj.view(), pj.view(), lambda).unwrap(), mse);
        prop_assert_eq!(loss_jac(&p, &t, pj.view(), tj.view(), 0.0).unwrap(), mse);
    }

    #[test]
    fn adamw_zero_gradient_shrinks_weights(lr in 1e-5f64..1e-1, wd in 0.0f64..1e-2, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = random_model(&mut rng, 2, MapForm::Direct, Activation::Relu);
        let before = model.clone();
        let zero = ParamGradient::zeros_like(&model.net);
        let mut opt = AdamW::new(&model, AdamWConfig { learning_rate: lr, weight_decay: wd, ..AdamWConfig::default() });
        opt.step(&mut model, &zero);
        let factor = 1.0 - lr * wd;
        for (a, b) in model.net.layers.iter().zip(&before.net.layers) {
            for (x, y) in a.weight.iter().zip(b.weight.iter()) {
                prop_assert_eq!(*x, y * factor);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn w1_is_symmetric_and_satisfies_the_triangle_inequality(seed in any::<u64>(), n in 1usize..7, d in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cloud = |rng: &mut ChaCha8Rng| EmpiricalMeasure::new(Array2::from_shape_fn((n, d), |_| rng.gen_range(-2.0..2.0))).unwrap();
        let (a, b, c) = (cloud(&mut rng), cloud(&mut rng), cloud(&mut rng));
        let m = W1Method::Assignment;
        let ab = wasserstein1(&a, &b, m).unwrap();
        prop_assert_eq!(ab, wasserstein1(&b, &a, m).unwrap());
        let ac = wasserstein1(&a, &c, m).unwrap();
        let cb = wasserstein1(&c, &b, m).unwrap();
        prop_assert!(ab <= ac + cb + 1e-12);
    }

    #[test]
    fn sliced_w1_never_exceeds_assignment(seed in any::<u64>(), d in 2usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 12;
        let a = EmpiricalMeasure::new(Array2::from_shape_fn((n, d), |_| rng.gen_range(-1.0..1.0))).unwrap();
        let b = EmpiricalMeasure::new(Array2::from_shape_fn((n, d), |_| rng.gen_range(-1.0..1.5))).unwrap();
        let exact = wasserstein1(&a, &b, W1Method::Assignment).unwrap();
        let sliced = wasserstein1(&a, &b, W1Method::Sliced { projections: 50, seed }).unwrap();
        prop_assert!(sliced <= exact + 1e-12);
    }

    #[test]
    fn assignment_matches_brute_force(seed in any::<u64>(), n in 1usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cost = Array2::from_shape_fn((n, n), |_| rng.gen_range(0.0..10.0));
        let (total, perm) = solve_assignment(cost.view());
        let mut sorted = perm.clone();
        sorted.sort_unstable();
        prop_assert_eq!(sorted, (0..n).collect::<Vec<_>>());
        prop_assert!((total - brute_force(&cost)).abs() < 1e-12);
    }
}

fn brute_force(cost: &Array2<f64>) -> f64 {
    fn go(cost: &Array2<f64>, row: usize, used: &mut Vec<bool>) -> f64 {
        let n = cost.nrows();
        if row == n {
            return 0.0;
        }
        let mut best = f64::INFINITY;
        for j in 0..n {
            if !used[j] {
                used[j] = true;
                best = best.min(cost[[row, j]] + go(cost, row + 1, used));
                used[j] = false;
            }
        }
        best
    }
    go(cost, 0, &mut vec![false; cost.nrows()])
}

#[test]
fn lyapunov_sum_matches_mean_log_determinant() {
    let baker = System::baker(0.1);
    let cfg = LyapunovConfig {
        steps: 100_000,
        exponents: 2,
        spinup: 100,
        reorth_every: 1,
    };
    let x0 = [1.0, 2.0];
    let spec = lyapunov_spectrum(&baker, &x0, &cfg).unwrap();
    let orbit = baker.orbit(&x0, cfg.steps - 1, cfg.spinup).unwrap();
    let mean_log_det = (0..orbit.len())
        .map(|t| {
            let j = baker.jacobian_unchecked(&orbit.state(t)).unwrap();
            (j[[0, 0]] * j[[1, 1]] - j[[0, 1]] * j[[1, 0]]).abs().ln()
        })
        .sum::<f64>()
        / orbit.len() as f64;
    assert!(((spec.sum() - mean_log_det) / mean_log_det.abs().max(1e-12)).abs() < 1e-2 || (spec.sum() - mean_log_det).abs() < 1e-6);

    let linear = System::linear_map(ndarray::array![[1.1, 0.3], [0.0, 0.7]]);
    let spec = lyapunov_spectrum(&linear, &[0.1, 0.1], &LyapunovConfig { steps: 1000, spinup: 0, ..cfg }).unwrap();
    assert!((spec.sum() - (1.1f64 * 0.7).ln()).abs() < 1e-10);
}

#[test]
fn tent_exponent_independent_of_reorthonormalization_interval() {
    let sys = System::tent_pinched(0.2);
    let base = LyapunovConfig {
        steps: 1_000_000,
        exponents: 1,
        spinup: 100,
        reorth_every: 1,
    };
    let reference = lyapunov_spectrum(&sys, &[0.3], &base).unwrap().exponents[0];
    for every in [5, 10] {
        let e = lyapunov_spectrum(&sys, &[0.3], &LyapunovConfig { reorth_every: every, ..base }).unwrap().exponents[0];
        assert!((e - reference).abs() < 1e-3, "every {every}: {e} vs {reference}");
    }
}

#[test]
fn lorenz_has_one_neutral_exponent() {
    let sys = System::lorenz63();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x0s: Vec<Vec<f64>> = (0..4).map(|_| sys.sample_initial(&mut rng)).collect();
    let cfg = LyapunovConfig {
        steps: 30_000,
        exponents: 3,
        spinup: 1_000,
        reorth_every: 1,
    };
    let s = ensemble_lyapunov(&sys, &x0s, &cfg).unwrap();
    assert!(s.exponents[1].abs() < 0.02, "{:?}", s.exponents);
    assert!(s.exponents.windows(2).all(|w| w[0] >= w[1]));
}

#[test]
fn shadow_distance_scales_linearly_with_noise() {
    for sys in [System::tent_tilted(0.2), System::baker(0.1)] {
        let x0 = if sys.dim() == 1 { vec![0.37] } else { vec![1.0, 2.0] };
        let mut distances = Vec::new();
        for noise in [1e-7, 1e-6, 1e-5] {
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let pseudo = PseudoOrbit::noisy_truth(&sys, &x0, 200, noise, &mut rng).unwrap();
            let r = refine_shadow(&sys, &pseudo, &ShadowConfig::default()).unwrap();
            assert!(r.converged && r.residual < 1e-10);
            distances.push(r.shadow_distance);
        }
        for w in distances.windows(2) {
            // doubling the noise may scale the distance by at most 2.5, i.e. 1.25× linear
            let normalized = w[1] / w[0] / 10.0;
            assert!((0.8..=1.25).contains(&normalized), "{}: {distances:?}", sys.name);
        }
    }
}

#[test]
fn shadow_refinement_is_deterministic() {
    let sys = System::lorenz63();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let pseudo = PseudoOrbit::noisy_truth(&sys, &[-5.0, -6.0, 22.0], 100, 1e-5, &mut rng).unwrap();
    let a = refine_shadow(&sys, &pseudo, &ShadowConfig::default()).unwrap();
    let b = refine_shadow(&sys, &pseudo, &ShadowConfig::default()).unwrap();
    assert_eq!(a, b);
    for t in 0..100 {
        let next = sys.step(&a.shadow.row(t).to_vec()).unwrap();
        let err: f64 = next.iter().zip(a.shadow.row(t + 1)).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        assert!(err < 1e-10);
    }
}

#[test]
fn identical_training_runs_are_reproducible() {
    let sys = System::tent_tilted(0.2);
    let orbit = sys.orbit(&[0.3], 200, 0).unwrap();
    let data = make_dataset(&sys, &orbit, true).unwrap();
    let (tr, te) = data.split(120, 80).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let model = random_model(&mut rng, 1, MapForm::Direct, Activation::Relu);
    let cfg = TrainConfig {
        epochs: 5,
        batch_size: BatchSize::Size(32),
        ..TrainConfig::default()
    };
    let loss = LossSpec::Jacobian { lambda: 1.0 };
    let (ma, ra) = train(model.clone(), &tr, &te, &loss, &cfg).unwrap();
    let (mb, rb) = train(model, &tr, &te, &loss, &cfg).unwrap();
    assert_eq!(ra, rb);
    assert_eq!(ma, mb);
}
