use nalgebra::DMatrix;
use proxsc::dgp::{self, oracle_treatment_bridge, DgpConfig, Scenario};
use proxsc::gmm::{
    hac_meat, init_h_ols, init_q_logistic, initial_theta, objective, sandwich_vcov, wald_interval, Bandwidth,
    HacOptions,
};
use proxsc::mc::{run_mc, McDesign, McMethod};
use proxsc::moments::{average_moment, moment_series};
use proxsc::rng::Stream;
use proxsc::{fit, GmmOptions, ImportanceWeights, Method, MomentSpec, PanelData, WeightMatrix};

fn sim(k: usize, t: usize, seed: u64) -> PanelData {
    dgp::simulate(&DgpConfig::just_identified(k, t, seed)).unwrap().panel
}

fn sim_over(t: usize, seed: u64) -> (PanelData, MomentSpec) {
    let panel = dgp::simulate(&DgpConfig::over_identified(t, seed)).unwrap().panel;
    let spec = McMethod::CorrectDr.moment_spec(&panel, Scenario::OverIdentified).unwrap();
    (panel, spec)
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Solves `A x = b` by Gaussian elimination with partial pivoting.
fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let tail: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - tail) / a[r][r];
    }
    x
}

#[test]
fn ols_initialization_matches_normal_equations() {
    let mut rng = Stream::new(21);
    let (n, t0, dw) = (80, 60, 4);
    let w: Vec<f64> = (0..n * dw).map(|_| rng.normal()).collect();
    let y: Vec<f64> = (0..n).map(|t| 0.7 + w[t * dw] - 2.0 * w[t * dw + 2] + rng.normal()).collect();
    let z: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
    let panel = PanelData::new(y.clone(), w.clone(), dw, z, 1, t0).unwrap();
    let got = init_h_ols(&panel).unwrap();
    assert!(!got.ridge_used);

    let p = dw + 1;
    let row = |t: usize| -> Vec<f64> { std::iter::once(1.0).chain(w[t * dw..(t + 1) * dw].iter().copied()).collect() };
    let mut xtx = vec![vec![0.0; p]; p];
    let mut xty = vec![0.0; p];
    for t in 0..t0 {
        let x = row(t);
        for i in 0..p {
            for j in 0..p {
                xtx[i][j] += x[i] * x[j];
            }
            xty[i] += x[i] * y[t];
        }
    }
    let oracle = solve_dense(xtx, xty);
    assert!(max_abs_diff(&got.params.alpha, &oracle) < 1e-8);
}

#[test]
fn ols_initialization_special_cases() {
    let mut rng = Stream::new(22);
    let (n, dw) = (30, 3);
    let w: Vec<f64> = (0..n * dw).map(|_| rng.normal()).collect();
    let exact: Vec<f64> = (0..n).map(|t| w[t * dw]).collect();
    let panel = PanelData::new(exact, w.clone(), dw, vec![0.0; n], 1, 20).unwrap();
    assert!(max_abs_diff(&init_h_ols(&panel).unwrap().params.alpha, &[0.0, 1.0, 0.0, 0.0]) < 1e-10);

    let flat = PanelData::new(vec![3.0; n], w, dw, vec![0.0; n], 1, 20).unwrap();
    assert!(max_abs_diff(&init_h_ols(&flat).unwrap().params.alpha, &[3.0, 0.0, 0.0, 0.0]) < 1e-10);

    // duplicated donor column: singular design falls back to a ridge solve
    let dup: Vec<f64> = (0..n).flat_map(|t| [t as f64, t as f64]).collect();
    let singular = PanelData::new((0..n).map(|t| t as f64).collect(), dup, 2, vec![0.0; n], 1, 20).unwrap();
    let ridge = init_h_ols(&singular).unwrap();
    assert!(ridge.ridge_used);
    assert!(ridge.params.alpha.iter().all(|v| v.is_finite()));
}

#[test]
fn logistic_initialization_is_near_the_bridge() {
    let cfg = DgpConfig::just_identified(2, 4000, 23);
    let panel = dgp::simulate(&cfg).unwrap().panel;
    let init = init_q_logistic(&panel, &[0, 1]).unwrap();
    assert!(init.converged && !init.separated);
    let oracle = oracle_treatment_bridge(&cfg).unwrap().beta;
    let err = max_abs_diff(&init.params.beta, &oracle);
    assert!(err < 0.3, "logistic start {:?} vs {:?}", init.params.beta, oracle);
}

#[test]
fn logistic_initialization_balanced_and_separated() {
    let n = 200;
    let z: Vec<f64> = (0..n).map(|t| ((t * 37) % 11) as f64 - 5.0).collect();
    let mut rng = Stream::new(24);
    let w: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
    let panel = PanelData::new(vec![0.0; n], w.clone(), 1, z, 1, n / 2).unwrap();
    let init = init_q_logistic(&panel, &[0]).unwrap();
    assert!(init.converged);
    assert!(init.params.beta.iter().all(|b| b.abs() < 0.1), "{:?}", init.params.beta);

    let sep: Vec<f64> = (0..n).map(|t| if t < n / 2 { -10.0 } else { 10.0 }).collect();
    let panel = PanelData::new(vec![0.0; n], w, 1, sep, 1, n / 2).unwrap();
    let init = init_q_logistic(&panel, &[0]).unwrap();
    assert!(init.separated && !init.converged);
}

#[test]
fn just_identified_fits_solve_their_moments() {
    let panel = sim(2, 1000, 25);
    for method in [Method::OutcomeOnly, Method::WeightingOnly, Method::DoublyRobust] {
        let spec = MomentSpec::new(method, &panel);
        let f = fit(&panel, &spec, &GmmOptions::default(), None).unwrap();
        assert!(f.converged, "{method:?}");
        assert!(f.objective_value < 1e-10, "{method:?}: {}", f.objective_value);
        assert!(f.objective_value <= f.diagnostics.objective_init);
        let (lo, hi) = f.att_ci.unwrap();
        assert!(lo <= f.att_estimate && f.att_estimate <= hi);
        assert!(((hi - f.att_estimate) - (f.att_estimate - lo)).abs() < 1e-12);
    }
}

#[test]
fn fitting_never_increases_the_objective() {
    let (over, over_spec) = sim_over(800, 26);
    let just = sim(3, 600, 27);
    let mut mis = MomentSpec::new(Method::DoublyRobust, &just);
    mis.h_columns = vec![0];
    mis.gh = proxsc::bridges::InstrumentBasis::new(proxsc::bridges::BasisKind::Affine, vec![0]);
    for (panel, spec) in [(&over, over_spec), (&just, mis), (&just, MomentSpec::new(Method::WeightingOnly, &just))] {
        let opts = GmmOptions::default();
        let (start, _) = initial_theta(panel, &spec).unwrap();
        let f0 = objective(&start, panel, &spec, &opts).unwrap().value;
        let f = fit(panel, &spec, &opts, None).unwrap();
        assert!(f.objective_value <= f0);
        assert!(f.objective_value >= 0.0);
        assert_eq!(f.diagnostics.objective_init, f0);

        let v = &f.vcov;
        let scale = v.abs().max();
        assert!((v - v.transpose()).abs().max() <= 1e-12 * scale.max(1.0));
        assert!((0..v.nrows()).all(|i| v[(i, i)] >= 0.0), "{:?} {:?}", f.diagnostics, v.diagonal());
        assert_eq!(f.att_se, v[(f.layout.lambda, f.layout.lambda)].sqrt());
    }
}

#[test]
fn rescaling_the_weight_matrix_changes_nothing() {
    let (panel, spec) = sim_over(1000, 28);
    let m = spec.moment_dim();
    let base = fit(&panel, &spec, &GmmOptions::default(), None).unwrap();
    let scaled_opts = GmmOptions { weight_matrix: WeightMatrix::Fixed(DMatrix::identity(m, m) * 3.0), ..GmmOptions::default() };
    let scaled = fit(&panel, &spec, &scaled_opts, None).unwrap();
    assert!(base.converged && scaled.converged);
    assert!(max_abs_diff(&base.theta_hat, &scaled.theta_hat) < 1e-5);
    assert!((base.objective_value * 3.0 - scaled.objective_value).abs() < 1e-8 * scaled.objective_value.max(1e-12) + 1e-12);
    assert!((base.att_se - scaled.att_se).abs() < 1e-5 * base.att_se);

    // exact scaling check on the sandwich itself
    let mut rng = Stream::new(29);
    let p = 4;
    let r = DMatrix::from_fn(m, p, |_, _| rng.normal());
    let a = DMatrix::from_fn(m, m, |_, _| rng.normal());
    let s = &a * a.transpose();
    let omega = DMatrix::from_diagonal(&nalgebra::DVector::from_fn(m, |i, _| 1.0 + i as f64));
    let v1 = sandwich_vcov(&r, &omega, &s, 50).unwrap();
    let v2 = sandwich_vcov(&r, &(&omega * 7.5), &s, 50).unwrap();
    assert!((&v1 - &v2).abs().max() < 1e-12 * v1.abs().max());
}

#[test]
fn just_identified_estimate_ignores_the_weight_matrix() {
    let panel = sim(2, 1500, 30);
    let spec = MomentSpec::new(Method::DoublyRobust, &panel);
    let m = spec.moment_dim();
    let mut rng = Stream::new(31);
    let a = DMatrix::from_fn(m, m, |_, _| rng.normal());
    let omega = &a * a.transpose() + DMatrix::identity(m, m) * 0.5;
    let base = fit(&panel, &spec, &GmmOptions::default(), None).unwrap();
    let other = fit(&panel, &spec, &GmmOptions { weight_matrix: WeightMatrix::Fixed(omega), ..GmmOptions::default() }, None).unwrap();
    assert!(base.converged && other.converged);
    assert!(max_abs_diff(&base.theta_hat, &other.theta_hat) < 1e-6);
    assert!((base.att_se - other.att_se).abs() < 1e-6 * base.att_se);
}

#[test]
fn weighting_with_the_true_bridge_recovers_the_effect() {
    let cfg = DgpConfig::just_identified(2, 100_000, 32);
    let panel = dgp::simulate(&cfg).unwrap().panel;
    let spec = MomentSpec::new(Method::WeightingOnly, &panel);
    let layout = spec.layout();
    let beta = oracle_treatment_bridge(&cfg).unwrap().beta;

    // With beta held at the bridge, the remaining moments are solved exactly
    // by sample means.
    let t0 = panel.t0();
    let q = |t: usize| proxsc::bridges::eval_q(&beta, panel.z_row(t)).unwrap();
    let psi_m = (0..t0).map(|t| q(t) * panel.y()[t]).sum::<f64>() / t0 as f64;
    let post_mean = panel.y()[t0..].iter().sum::<f64>() / panel.n_post() as f64;
    let mut theta = vec![0.0; layout.len];
    theta[layout.beta.clone().unwrap()].copy_from_slice(&beta);
    theta[layout.lambda] = post_mean - psi_m;
    theta[layout.psi_minus.unwrap()] = psi_m;
    let g = average_moment(&theta, &panel, &spec).unwrap();
    let ml = spec.moment_layout();
    assert!(g[ml.post_att].abs() < 1e-12 && g[ml.pre_center.unwrap()].abs() < 1e-12);
    assert!((theta[layout.lambda] - 2.0).abs() < 0.05, "{}", theta[layout.lambda]);
}

#[test]
fn stationary_and_uniform_nonstationary_systems_coincide() {
    let panel = sim(2, 300, 33);
    let stat = MomentSpec::new(Method::DoublyRobust, &panel);
    let mut uniform = stat.clone();
    uniform.stationary = false;
    let mut explicit = uniform.clone();
    let n_post = panel.n_post();
    explicit.ell = ImportanceWeights::Custom(vec![1.0 / n_post as f64; n_post]);
    let (theta, _) = initial_theta(&panel, &stat).unwrap();
    let a = moment_series(&theta, &panel, &stat).unwrap();
    let b = moment_series(&theta, &panel, &uniform).unwrap();
    let c = moment_series(&theta, &panel, &explicit).unwrap();
    assert_eq!(a, b);
    assert!((&a - &c).abs().max() < 1e-13);

    let fs = fit(&panel, &stat, &GmmOptions::default(), None).unwrap();
    let fu = fit(&panel, &uniform, &GmmOptions::default(), None).unwrap();
    assert_eq!(fs.theta_hat, fu.theta_hat);
}

#[test]
fn hac_lag_zero_is_the_outer_product_mean() {
    let mut rng = Stream::new(34);
    let (n, m) = (257, 4);
    let x = DMatrix::from_fn(n, m, |_, _| rng.normal());
    let est = hac_meat(&x, &HacOptions { bandwidth: Bandwidth::Fixed(0), ..HacOptions::default() }).unwrap();
    let mut oracle = DMatrix::<f64>::zeros(m, m);
    for a in 0..m {
        for b in 0..m {
            let mut s = 0.0;
            for t in 0..n {
                s += x[(t, a)] * x[(t, b)];
            }
            oracle[(a, b)] = s / n as f64;
        }
    }
    assert_eq!(est.matrix, oracle);
    assert_eq!(est.lag, 0);
}

#[test]
fn hac_of_white_noise_is_near_identity() {
    let mut rng = Stream::new(35);
    let n = 100_000;
    let x = DMatrix::from_fn(n, 3, |_, _| rng.normal());
    let est = hac_meat(&x, &HacOptions::default()).unwrap();
    assert_eq!(est.lag, 18);
    assert!((&est.matrix - DMatrix::<f64>::identity(3, 3)).abs().max() < 0.05);
    assert!(!est.clipped && !est.rank_warning);
}

#[test]
fn hac_of_a_constant_series() {
    let c = [1.5, -2.0];
    let n = 400;
    let x = DMatrix::from_fn(n, 2, |_, j| c[j]);
    let lag = 6;
    let est = hac_meat(&x, &HacOptions { bandwidth: Bandwidth::Fixed(lag), ..HacOptions::default() }).unwrap();
    // each lag-j term averages T - j products over T
    let factor: f64 = 1.0
        + (1..=lag)
            .map(|j| 2.0 * (1.0 - j as f64 / (lag + 1) as f64) * (n - j) as f64 / n as f64)
            .sum::<f64>();
    let asymptotic: f64 = 1.0 + (1..=lag).map(|j| 2.0 * (1.0 - j as f64 / (lag + 1) as f64)).sum::<f64>();
    for a in 0..2 {
        for b in 0..2 {
            assert!((est.matrix[(a, b)] - factor * c[a] * c[b]).abs() < 1e-12);
            assert!((est.matrix[(a, b)] - asymptotic * c[a] * c[b]).abs() < 0.05 * asymptotic * c[a].abs() * c[b].abs());
        }
    }
    let centered = hac_meat(&x, &HacOptions { bandwidth: Bandwidth::Fixed(lag), centered: true, ..HacOptions::default() }).unwrap();
    assert!(centered.matrix.abs().max() < 1e-12);
}

#[test]
fn sandwich_and_wald_closed_forms() {
    let one = |v: f64| DMatrix::from_element(1, 1, v);
    assert!((sandwich_vcov(&one(2.0), &one(1.0), &one(4.0), 1).unwrap()[(0, 0)] - 1.0).abs() < 1e-15);
    let eye = DMatrix::<f64>::identity(3, 3);
    assert_eq!(sandwich_vcov(&eye, &eye, &eye, 1).unwrap(), eye);
    assert!(sandwich_vcov(&DMatrix::zeros(3, 2), &eye, &eye, 1).is_err());

    let (lo, hi) = wald_interval(2.0, 0.5, 0.95).unwrap();
    assert!((lo - 1.020018).abs() < 1e-6 && (hi - 2.979982).abs() < 1e-6);
    assert_eq!(wald_interval(2.0, 0.0, 0.95), Some((2.0, 2.0)));
    assert_eq!(wald_interval(2.0, f64::NAN, 0.95), None);
}

#[test]
fn options_are_validated() {
    let panel = sim(2, 200, 36);
    let spec = MomentSpec::new(Method::DoublyRobust, &panel);
    for opts in [
        GmmOptions { ci_level: 1.0, ..GmmOptions::default() },
        GmmOptions { multi_start: 0, ..GmmOptions::default() },
        GmmOptions { hac: HacOptions { prewhiten: true, ..HacOptions::default() }, ..GmmOptions::default() },
        GmmOptions { weight_matrix: WeightMatrix::Fixed(DMatrix::identity(3, 3)), ..GmmOptions::default() },
        GmmOptions { weight_matrix: WeightMatrix::Fixed(-DMatrix::identity(spec.moment_dim(), spec.moment_dim())), ..GmmOptions::default() },
    ] {
        assert!(fit(&panel, &spec, &opts, None).is_err(), "{opts:?}");
    }
    assert!(fit(&panel, &spec, &GmmOptions::default(), Some(&[0.0; 2])).is_err());
}

#[test]
fn multi_start_keeps_the_best_start() {
    let (panel, spec) = sim_over(600, 37);
    let single = fit(&panel, &spec, &GmmOptions::default(), None).unwrap();
    let multi = fit(&panel, &spec, &GmmOptions { multi_start: 4, seed: 3, ..GmmOptions::default() }, None).unwrap();
    assert_eq!(multi.diagnostics.starts, 4);
    assert!(multi.objective_value <= single.objective_value * (1.0 + 1e-9));
}

#[test]
fn standard_errors_shrink_at_root_t() {
    let design = McDesign {
        t_grid: vec![500, 1000, 2000, 4000],
        k_grid: vec![2],
        reps: 20,
        methods: vec![McMethod::CorrectDr],
        base_seed: 500,
        ..McDesign::default()
    };
    let report = run_mc(&design).unwrap();
    let se: Vec<f64> = design.t_grid.iter().map(|&t| report.cell(McMethod::CorrectDr, t, 2).unwrap().median_se).collect();
    for pair in se.windows(2) {
        let ratio = pair[1] / pair[0];
        assert!((0.6..=0.85).contains(&ratio), "SE ratio {ratio} from {se:?}");
    }
}
