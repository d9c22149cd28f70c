use proptest::prelude::*;
use vanetloc::channel::{expected_rss, ChannelModel};
use vanetloc::fit::*;
use vanetloc::metrics::*;

fn power_sum(p: &Polynomial4, r: f64) -> f64 {
    p.p1 * r.powi(4) + p.p2 * r.powi(3) + p.p3 * r.powi(2) + p.p4 * r + p.p5
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

fn pairs_strategy() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((-100.0f64..-60.0, 0.0f64..300.0), 8..60)
}

#[test]
fn published_coefficients_match_power_sum() {
    let p = Polynomial4::from_array([-0.005206, -1.553, -173.5, -8608.0, -1.601e5]);
    let v = evaluate_poly4(&p, -80.0);
    assert!(rel(v, power_sum(&p, -80.0)) < 1e-9);
    // exact rational value of the stored coefficients
    assert!((v - 38.24).abs() < 1e-6, "{v}");
}

#[test]
fn noiseless_log_distance_fits_tightly() {
    let m = ChannelModel::default();
    let pairs: Vec<(f64, f64)> = (0..=28).map(|i| {
        let d = 60.0 + 5.0 * i as f64;
        (expected_rss(&m, d).unwrap(), d)
    }).collect();
    let (_, report) = fit_poly4(&FitInput { pairs, min_distance_m: 60.0 }).unwrap();
    assert!(report.r_square >= 0.999, "{report:?}");
}

#[test]
fn table_variance_convention() {
    // 41 zero-mean errors with mse 6.0: ±a twenty times each plus one 0
    let a = (6.0f64 * 41.0 / 40.0).sqrt();
    let predicted: Vec<f64> = (0..41).map(|i| if i == 40 { 0.0 } else if i % 2 == 0 { a } else { -a }).collect();
    let actual: Vec<f64> = (0..41).map(|i| i as f64).collect();
    let predicted: Vec<f64> = predicted.iter().zip(&actual).map(|(e, x)| x + e).collect();
    let r = regression_metrics(&actual, &predicted).unwrap();
    assert!((r.mse - 6.0).abs() < 1e-12);
    assert!((r.variance - 6.15).abs() < 1e-12);
    assert!((r.std_dev - 2.48).abs() < 0.005);
}

proptest! {
    #[test]
    fn horner_matches_power_sum(c in prop::array::uniform5(-1e3f64..1e3), r in -120.0f64..0.0) {
        let p = Polynomial4::from_array(c);
        let (h, s) = (evaluate_poly4(&p, r), power_sum(&p, r));
        // cancellation bound: compare against the magnitude of the terms
        let scale = c.iter().enumerate().map(|(i, ci)| (ci * r.powi(4 - i as i32)).abs()).sum::<f64>();
        prop_assert!((h - s).abs() <= 1e-9 * scale.max(1e-300));
    }

    #[test]
    fn residuals_are_orthogonal_to_the_design(pairs in pairs_strategy()) {
        let input = FitInput { pairs: pairs.clone(), min_distance_m: 0.0 };
        let Ok((poly, _)) = fit_poly4(&input) else { return Ok(()) };
        let n = pairs.len() as f64;
        let mean = pairs.iter().map(|p| p.0).sum::<f64>() / n;
        let sd = (pairs.iter().map(|p| (p.0 - mean).powi(2)).sum::<f64>() / n).sqrt();
        prop_assume!(sd > 1.0);
        let norm_d = pairs.iter().map(|p| p.1 * p.1).sum::<f64>().sqrt();
        for j in 0..5 {
            let dot: f64 = pairs.iter().map(|&(r, d)| (d - evaluate_poly4(&poly, r)) * ((r - mean) / sd).powi(j)).sum();
            prop_assert!(dot.abs() <= 1e-6 * norm_d, "j {j}: {dot}");
        }
    }

    #[test]
    fn constant_shift_moves_only_the_intercept(pairs in pairs_strategy(), c in -50.0f64..50.0) {
        let base = FitInput { pairs: pairs.clone(), min_distance_m: 0.0 };
        let shifted = FitInput { pairs: pairs.iter().map(|&(r, d)| (r, d + c)).collect(), min_distance_m: 0.0 };
        let (Ok((p, _)), Ok((q, _))) = (fit_poly4(&base), fit_poly4(&shifted)) else { return Ok(()) };
        // Coefficients of R^k are compared at their contribution scale 100^k.
        let (a, b) = (p.to_array(), q.to_array());
        let scale = (0..5).map(|i| (a[i] * 100f64.powi(4 - i as i32)).abs()).fold(1.0, f64::max);
        for i in 0..4 {
            prop_assert!(((b[i] - a[i]) * 100f64.powi(4 - i as i32)).abs() <= 1e-8 * scale);
        }
        prop_assert!((b[4] - a[4] - c).abs() <= 1e-8 * scale);
    }

    #[test]
    fn mse_variance_identity(errs in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 3..50)) {
        let actual: Vec<f64> = errs.iter().map(|e| e.0).collect();
        let predicted: Vec<f64> = errs.iter().map(|e| e.0 + e.1).collect();
        let Ok(r) = regression_metrics(&actual, &predicted) else { return Ok(()) };
        let n = actual.len() as f64;
        let ebar = errs.iter().map(|e| e.1).sum::<f64>() / n;
        let identity = r.variance * (n - 1.0) / n + ebar * ebar;
        prop_assert!(rel(r.mse, identity) < 1e-12);
    }

    #[test]
    fn reports_match_naive_recomputation(xs in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 7..40)) {
        let actual: Vec<f64> = xs.iter().map(|x| x.0).collect();
        let predicted: Vec<f64> = xs.iter().map(|x| x.1).collect();
        let n = xs.len();
        let r = regression_metrics(&actual, &predicted).unwrap();

        // Independent two-pass evaluation in index order.
        let mut sq = Vec::new();
        let mut mx: f64 = 0.0;
        for i in 0..n {
            let e = predicted[i] - actual[i];
            sq.push(e * e);
            if e.abs() > mx { mx = e.abs(); }
        }
        let mse = sq.iter().sum::<f64>() / n as f64;
        let errors: Vec<f64> = (0..n).map(|i| predicted[i] - actual[i]).collect();
        let em = errors.iter().sum::<f64>() / n as f64;
        let var = errors.iter().map(|e| (e - em) * (e - em)).sum::<f64>() / (n as f64 - 1.0);
        let am = actual.iter().sum::<f64>() / n as f64;
        let pm = predicted.iter().sum::<f64>() / n as f64;
        let cov: f64 = (0..n).map(|i| (actual[i] - am) * (predicted[i] - pm)).sum();
        let va: f64 = actual.iter().map(|a| (a - am).powi(2)).sum();
        let vp: f64 = predicted.iter().map(|p| (p - pm).powi(2)).sum();
        let corr = cov / (va * vp).sqrt();

        prop_assert!(rel(r.mse, mse) < 1e-12);
        prop_assert_eq!(r.max_abs_error, mx);
        prop_assert!(rel(r.variance, var) < 1e-12);
        prop_assert!(rel(r.std_dev, var.sqrt()) < 1e-12);
        prop_assert!((r.correlation - corr).abs() < 1e-12);

        let g = goodness_of_fit(&actual, &predicted, 5).unwrap();
        let sst: f64 = va;
        let sse: f64 = sq.iter().sum();
        prop_assert!(rel(g.sse, sse) < 1e-12);
        prop_assert!((g.r_square - (1.0 - sse / sst)).abs() < 1e-12);
        prop_assert!(rel(g.rmse, (sse / (n as f64 - 5.0)).sqrt()) < 1e-12);
        let adj = 1.0 - (sse / sst) * (n as f64 - 1.0) / (n as f64 - 5.0);
        prop_assert!((g.adj_r_square - adj).abs() < 1e-10 * adj.abs().max(1.0));
    }

    #[test]
    fn metrics_ignore_joint_permutation(xs in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 3..30), k in 0usize..30) {
        let actual: Vec<f64> = xs.iter().map(|x| x.0).collect();
        let predicted: Vec<f64> = xs.iter().map(|x| x.1).collect();
        let mut perm = xs.clone();
        perm.rotate_left(k % xs.len());
        let pa: Vec<f64> = perm.iter().map(|x| x.0).collect();
        let pp: Vec<f64> = perm.iter().map(|x| x.1).collect();
        let (r, s) = (regression_metrics(&actual, &predicted).unwrap(), regression_metrics(&pa, &pp).unwrap());
        prop_assert!(rel(r.mse, s.mse) < 1e-12);
        prop_assert_eq!(r.max_abs_error, s.max_abs_error);
        prop_assert!(rel(r.variance, s.variance) < 1e-12);
        prop_assert!((r.correlation - s.correlation).abs() < 1e-12);
    }

    #[test]
    fn perfect_fit_report(xs in prop::collection::vec(-100.0f64..100.0, 6..30)) {
        prop_assume!(xs.iter().any(|x| (x - xs[0]).abs() > 1e-6));
        let g = goodness_of_fit(&xs, &xs, 5).unwrap();
        prop_assert_eq!((g.sse, g.r_square, g.rmse), (0.0, 1.0, 0.0));
    }
}
