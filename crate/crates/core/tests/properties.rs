use nalgebra::DMatrix;
use proptest::prelude::*;
use proxsc::bridges::{basis, eval_h, eval_q, BasisKind, TreatmentBridgeParams, ETA_CLAMP};
use proxsc::gmm::{hac_meat, wald_interval, Bandwidth, HacOptions};
use proxsc::mc::wilson_interval;
use proxsc::moments::moment_vector;
use proxsc::normal;
use proxsc::panel::{detrend, parse_panel, placebo_split, retrend};
use proxsc::{Method, MomentSpec, PanelData};

fn vec_f64(len: usize, scale: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-scale..scale, len)
}

fn panel_strategy() -> impl Strategy<Value = PanelData> {
    (5usize..40, 1usize..4, 1usize..4).prop_flat_map(|(n, dw, dz)| {
        (1..n, vec_f64(n, 50.0), vec_f64(n * dw, 50.0), vec_f64(n * dz, 50.0))
            .prop_map(move |(t0, y, w, z)| PanelData::new(y, w, dw, z, dz, t0).unwrap())
    })
}

proptest! {
    #[test]
    fn basis_dimension_formula(d in 1usize..10, x in vec_f64(10, 5.0)) {
        let x = &x[..d];
        let affine = basis(BasisKind::Affine, x);
        let poly = basis(BasisKind::Poly2, x);
        prop_assert_eq!(affine.len(), 1 + d);
        prop_assert_eq!(poly.len(), 1 + 2 * d + d * (d - 1) / 2);
        prop_assert_eq!(poly.len(), BasisKind::Poly2.output_dim(d));
        prop_assert_eq!(affine[0], 1.0);
        prop_assert_eq!(&poly[..1 + d], &affine[..]);
    }

    #[test]
    fn treatment_bridge_is_positive_and_log_linear(beta in vec_f64(4, 30.0), z in vec_f64(3, 10.0)) {
        let q = eval_q(&beta, &z).unwrap();
        prop_assert!(q > 0.0 && q.is_finite());
        let eta = beta[0] + beta[1..].iter().zip(&z).map(|(b, v)| b * v).sum::<f64>();
        let log = TreatmentBridgeParams::new(beta.clone()).log_eval(&z).unwrap();
        prop_assert!((log - eta.clamp(-ETA_CLAMP, ETA_CLAMP)).abs() <= 1e-12 * (1.0 + eta.abs()));
    }

    #[test]
    fn bridge_gradients_match_differences(alpha in vec_f64(3, 2.0), beta in vec_f64(3, 0.5), x in vec_f64(2, 2.0)) {
        let step = 1e-6;
        let features = [1.0, x[0], x[1]];
        for j in 0..3 {
            let mut up = alpha.clone();
            up[j] += step;
            let mut down = alpha.clone();
            down[j] -= step;
            let fd = (eval_h(&up, &x).unwrap() - eval_h(&down, &x).unwrap()) / (2.0 * step);
            prop_assert!((fd - features[j]).abs() < 1e-7 * (1.0 + features[j].abs()));

            let mut up = beta.clone();
            up[j] += step;
            let mut down = beta.clone();
            down[j] -= step;
            let fd = (eval_q(&up, &x).unwrap() - eval_q(&down, &x).unwrap()) / (2.0 * step);
            let exact = eval_q(&beta, &x).unwrap() * features[j];
            prop_assert!((fd - exact).abs() < 1e-7 * (1.0 + exact.abs()));
        }
    }

    #[test]
    fn hac_is_symmetric_psd(n in 5usize..60, m in 1usize..5, lag in 0usize..4, seed in any::<u64>(), centered in any::<bool>()) {
        prop_assume!(lag < n);
        let mut rng = proxsc::rng::Stream::new(seed);
        let x = DMatrix::from_fn(n, m, |_, _| rng.normal() + 0.3);
        let est = hac_meat(&x, &HacOptions { bandwidth: Bandwidth::Fixed(lag), centered, ..HacOptions::default() }).unwrap();
        let s = &est.matrix;
        prop_assert_eq!(s, &s.transpose());
        let min = s.clone().symmetric_eigenvalues().min();
        prop_assert!(min >= -1e-12 * s.abs().max());
    }

    #[test]
    fn wilson_interval_brackets_the_rate(n in 1usize..2000, frac in 0.0f64..=1.0, level in 0.5f64..0.999) {
        let k = ((n as f64) * frac).round() as usize;
        let (lo, hi) = wilson_interval(k, n, level).unwrap();
        let p = k as f64 / n as f64;
        prop_assert!(0.0 <= lo && lo <= p && p <= hi && hi <= 1.0);
    }

    #[test]
    fn wald_interval_is_symmetric(est in -100.0f64..100.0, se in 0.0f64..10.0, level in 0.01f64..0.999) {
        let (lo, hi) = wald_interval(est, se, level).unwrap();
        prop_assert!(lo <= est && est <= hi);
        prop_assert!(((hi - est) - (est - lo)).abs() <= 1e-12 * (1.0 + est.abs() + se));
    }

    #[test]
    fn normal_quantile_inverts_the_cdf(p in 1e-12f64..(1.0 - 1e-12)) {
        let x = normal::quantile(p);
        prop_assert!((normal::cdf(x) - p).abs() <= 1e-12 * p.min(1.0 - p).max(1e-3));
    }

    #[test]
    fn text_round_trip_is_idempotent(panel in panel_strategy()) {
        let text = panel.to_delimited();
        let back = parse_panel(&text, &panel.layout()).unwrap();
        prop_assert_eq!(&back, &panel);
        prop_assert_eq!(back.to_delimited(), text);
    }

    #[test]
    fn detrend_retrend_reconstructs(panel in panel_strategy(), degree in 0usize..3) {
        prop_assume!(degree < panel.t0());
        let (d, info) = detrend(&panel, degree).unwrap();
        let back = retrend(&d, &info);
        for t in 0..panel.n_periods() {
            prop_assert!((back.y()[t] - panel.y()[t]).abs() < 1e-12);
            for (a, b) in back.w_row(t).iter().zip(panel.w_row(t)) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn placebo_split_keeps_the_pre_period(panel in panel_strategy(), k in 1usize..40) {
        prop_assume!(k < panel.t0());
        let p = placebo_split(&panel, k).unwrap();
        prop_assert_eq!(p.n_periods(), panel.t0());
        prop_assert_eq!(p.t0(), k);
    }

    #[test]
    fn moment_blocks_are_sparse(panel in panel_strategy(), seed in any::<u64>()) {
        let spec = MomentSpec::new(Method::DoublyRobust, &panel);
        let ml = spec.moment_layout();
        let mut rng = proxsc::rng::Stream::new(seed);
        let theta: Vec<f64> = (0..spec.layout().len).map(|_| rng.symmetric(0.05)).collect();
        for t in 0..panel.n_periods() {
            let g = moment_vector(&theta, t, &panel, &spec).unwrap();
            let post_rows: Vec<usize> = ml.post_center.clone().unwrap().chain([ml.post_att]).collect();
            for i in 0..g.len() {
                let is_post = post_rows.contains(&i);
                if is_post == panel.is_pre(t) {
                    prop_assert_eq!(g[i], 0.0);
                }
            }
        }
    }
}
