use byzfed::numerics::{least_squares, top_eigenpair, Matrix};
use byzfed::robust_stats::{coord_median, geometric_median, trimmed_mean, AggregatorSpec};
use byzfed::ModelVector;
use proptest::prelude::*;

fn cloud(max_pts: usize, d: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-50.0..50.0f64, d), 1..max_pts)
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * (1.0 + x.abs().max(y.abs())))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn aggregators_commute_with_translation(pts in cloud(12, 3), shift in prop::collection::vec(-20.0..20.0f64, 3)) {
        let moved: Vec<Vec<f64>> = pts.iter().map(|p| p.iter().zip(&shift).map(|(a, b)| a + b).collect()).collect();
        for spec in [
            AggregatorSpec::SampleMean,
            AggregatorSpec::TrimmedMean { beta: 0.2 },
            AggregatorSpec::CoordMedian,
            AggregatorSpec::GeoMedian { tol: 1e-12, max_iter: 20_000 },
        ] {
            let a = spec.aggregate(&pts).unwrap();
            let b = spec.aggregate(&moved).unwrap();
            let expect: Vec<f64> = a.iter().zip(&shift).map(|(x, s)| x + s).collect();
            prop_assert!(close(&b, &expect, 1e-5), "{spec:?}: {b:?} vs {expect:?}");
        }
    }

    #[test]
    fn aggregators_ignore_point_order(pts in cloud(12, 2), seed in any::<u64>()) {
        let mut shuffled = pts.clone();
        let n = shuffled.len();
        let mut s = seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.swap(i, (s >> 33) as usize % (i + 1));
        }
        prop_assert_eq!(trimmed_mean(&pts, 0.25).unwrap(), trimmed_mean(&shuffled, 0.25).unwrap());
        prop_assert_eq!(coord_median(&pts).unwrap(), coord_median(&shuffled).unwrap());
        let g1 = geometric_median(&pts, 1e-10, 5000).unwrap();
        let g2 = geometric_median(&shuffled, 1e-10, 5000).unwrap();
        prop_assert!(close(&g1, &g2, 1e-6));
    }

    /// With at most `⌊βt⌋` corrupted values per coordinate, the trimmed mean
    /// stays inside the range of the clean values.
    #[test]
    fn trimmed_mean_survives_its_breakdown_budget(
        clean in prop::collection::vec(-1.0..1.0f64, 8..30),
        bad_value in prop::sample::select(vec![-1e12, 1e12, 3e8]),
    ) {
        let t = clean.len() + clean.len() / 4;
        let beta = 0.2;
        let bad = (beta * t as f64).floor() as usize;
        let mut pts: Vec<Vec<f64>> = clean.iter().map(|v| vec![*v]).collect();
        pts.extend(std::iter::repeat_n(vec![bad_value], bad));
        let tm = trimmed_mean(&pts, beta).unwrap()[0];
        let lo = clean.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = clean.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(tm >= lo - 1e-12 && tm <= hi + 1e-12, "{tm} outside [{lo}, {hi}]");
    }

    /// If a `1 − α` share of the points lies within `r` of the origin, the
    /// geometric median lies within `(1 − α)/√(1 − 2α) · r` of it, wherever
    /// the rest are.
    #[test]
    fn geometric_median_norm_bound(
        inliers in prop::collection::vec(prop::collection::vec(-1.0..1.0f64, 4), 14..30),
        outlier in prop::collection::vec(-1e4..1e4f64, 4),
    ) {
        let n_out = (inliers.len() * 3) / 7;
        let t = inliers.len() + n_out;
        let alpha = n_out as f64 / t as f64;
        let r = inliers.iter().map(|p| p.iter().map(|x| x * x).sum::<f64>().sqrt()).fold(0.0, f64::max);
        let mut pts = inliers.clone();
        pts.extend(std::iter::repeat_n(outlier, n_out));
        let g = geometric_median(&pts, 1e-12, 10_000).unwrap();
        let bound = (1.0 - alpha) / (1.0 - 2.0 * alpha).sqrt() * r;
        prop_assert!(g.norm() <= bound * (1.0 + 1e-6), "|g| = {} > {bound}", g.norm());
    }

    #[test]
    fn least_squares_residual_is_orthogonal(rows in prop::collection::vec(prop::collection::vec(-3.0..3.0f64, 3), 6..20), y_seed in prop::collection::vec(-5.0..5.0f64, 20)) {
        let x = Matrix::from_rows(&rows).unwrap();
        let y = &y_seed[..rows.len()];
        let w = least_squares(&x, y).unwrap();
        let fitted = x.mul_vec(&w);
        let resid: Vec<f64> = y.iter().zip(&fitted).map(|(a, b)| a - b).collect();
        let xtr = ModelVector::new(x.tr_mul_vec(&resid));
        let xty = ModelVector::new(x.tr_mul_vec(y));
        prop_assert!(xtr.norm() <= 1e-8 * xty.norm(), "{} vs {}", xtr.norm(), xty.norm());
    }

    #[test]
    fn top_eigenvalue_dominates_random_rayleigh_quotients(a in prop::collection::vec(-2.0..2.0f64, 25), probes in prop::collection::vec(prop::collection::vec(-1.0..1.0f64, 5), 50)) {
        let b = Matrix::from_vec(5, 5, a).unwrap();
        let m = b.transpose().gram();
        let (lambda, v) = top_eigenpair(&m).unwrap();
        let mv = m.mul_vec(&v);
        let resid: f64 = mv.iter().zip(v.iter()).map(|(x, y)| (x - lambda * y).powi(2)).sum::<f64>().sqrt();
        prop_assert!(resid <= 1e-8 * lambda.max(1.0));
        for p in probes {
            let n = p.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n < 1e-3 {
                continue;
            }
            let u: Vec<f64> = p.iter().map(|x| x / n).collect();
            let q: f64 = m.mul_vec(&u).iter().zip(&u).map(|(x, y)| x * y).sum();
            prop_assert!(q <= lambda * (1.0 + 1e-9) + 1e-12);
        }
    }
}
