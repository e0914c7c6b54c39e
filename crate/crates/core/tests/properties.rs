use ccloc::charting::{fit_affine_transform, siamese_loss, Affine};
use ccloc::evaluation::{continuity_trustworthiness, kruskal_stress, position_error_stats};
use ccloc::model::Vec2;
use proptest::prelude::*;

fn points(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<Vec2>> {
    prop::collection::vec((-50.0..50.0f64, -50.0..50.0f64).prop_map(|(x, y)| Vec2::new(x, y)), n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn stress_ignores_chart_similarity(pts in points(8..40), angle in -3.0..3.0f64, scale in 0.1..10.0f64, dx in -5.0..5.0f64) {
        let (c, s) = (angle.cos(), angle.sin());
        let chart: Vec<Vec2> = pts.iter().map(|p| scale * Vec2::new(c * p[0] - s * p[1] + dx, s * p[0] + c * p[1])).collect();
        prop_assume!(kruskal_stress(&pts, &pts).is_ok());
        prop_assert!(kruskal_stress(&pts, &chart).unwrap() < 1e-9);
    }

    #[test]
    fn neighborhood_scores_are_bounded(truth in points(12..30), chart in points(30..31), k in 1usize..4) {
        let chart = &chart[..truth.len()];
        let (ct, tw) = continuity_trustworthiness(&truth, chart, k).unwrap();
        prop_assert!((0.0..=1.0).contains(&ct) && (0.0..=1.0).contains(&tw));
    }

    #[test]
    fn error_statistics_are_ordered(a in points(1..50), shift in points(50..51)) {
        let b: Vec<Vec2> = a.iter().zip(&shift).map(|(p, d)| p + d / 10.0).collect();
        let s = position_error_stats(&a, &b).unwrap();
        prop_assert!(s.mae_m <= s.drms_m * (1.0 + 1e-12));
        prop_assert!(s.cep_m <= s.r95_m);
    }

    #[test]
    fn affine_fit_recovers_planted_map(pts in points(5..30), m in prop::array::uniform4(-3.0..3.0f64), b in prop::array::uniform2(-20.0..20.0f64)) {
        let det = m[0] * m[3] - m[1] * m[2];
        prop_assume!(det.abs() > 0.1);
        let planted = Affine::new([[m[0], m[1]], [m[2], m[3]]], b).unwrap();
        let world: Vec<Vec2> = pts.iter().map(|p| planted.apply(p)).collect();
        if let Ok(fit) = fit_affine_transform(&pts, &world) {
            for (p, w) in pts.iter().zip(&world) {
                prop_assert!((fit.apply(p) - w).norm() < 1e-6 * (1.0 + w.norm()));
            }
        }
    }

    #[test]
    fn siamese_loss_is_nonnegative(x in points(2..3), d in 0.0..100.0f64, beta in 0.01..10.0f64) {
        let l = siamese_loss(&x[0], &x[1], d, beta).unwrap();
        prop_assert!(l >= 0.0 && l.is_finite());
    }
}
