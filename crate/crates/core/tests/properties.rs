//! Randomized invariants: range, monotonicity, scale invariance and
//! scenario bundle shape.

use proptest::prelude::*;
use refracted_occupation::diffusion::*;
use refracted_occupation::eigen::*;
use refracted_occupation::inversion::isotonic;
use refracted_occupation::occupation::*;
use refracted_occupation::scenarios::{build, ScenarioKind, ScenarioSpec};

fn bm() -> (DiffusionSpec, ScaleFunction) {
    let spec = make_brownian(0.5, 1.0, 0.0).unwrap();
    let sc = scale(&spec).unwrap();
    (spec, sc)
}

fn occ(c: f64, y: f64, a: f64, q: f64) -> f64 {
    let (spec, sc) = bm();
    let w = w_functions(eigenpair(&spec, q).unwrap(), sc.clone());
    let refr = refraction_from_tax(TaxRate::Constant(c), 0.0).unwrap();
    lt_occupation_until_hitting(&spec, &sc, &w, &refr, y, a, q).unwrap().value
}

fn bankruptcy(c: f64, y: f64, q: f64, omega: f64) -> f64 {
    let (spec, sc) = bm();
    let w = w_functions(eigenpair(&spec, q).unwrap(), sc.clone());
    let refr = refraction_from_tax(TaxRate::Constant(c), 0.0).unwrap();
    lt_bankruptcy_tax(&spec, &sc, &w, &refr, y, q, omega).unwrap().value
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn occupation_in_unit_interval_and_decreasing_in_q(
        c in 0.0..0.9f64, y in 0.0..0.5f64, gap in 0.3..2.0f64, q1 in 0.1..3.0f64, dq in 0.05..2.0f64,
    ) {
        let v1 = occ(c, y, y + gap, q1);
        let v2 = occ(c, y, y + gap, q1 + dq);
        prop_assert!((0.0..=1.0).contains(&v1) && (0.0..=1.0).contains(&v2));
        prop_assert!(v1 >= v2 - 1e-10, "{} < {}", v1, v2);
    }

    #[test]
    fn bankruptcy_monotone_in_omega_and_q(
        c in 0.0..0.9f64, y in 0.0..1.0f64, q in 0.2..3.0f64, w1 in 0.1..3.0f64, dw in 0.05..2.0f64,
    ) {
        let v1 = bankruptcy(c, y, q, w1);
        let v2 = bankruptcy(c, y, q, w1 + dw);
        let v3 = bankruptcy(c, y, q + 0.5, w1);
        prop_assert!((0.0..=1.0).contains(&v1) && (0.0..=1.0).contains(&v2));
        // 1 - value is nonincreasing in ω
        prop_assert!(1.0 - v2 <= 1.0 - v1 + 1e-10);
        prop_assert!(v3 <= v1 + 1e-10);
    }

    #[test]
    fn exp_clock_in_unit_interval(c in 0.0..0.9f64, y in -0.5..1.0f64, q in 0.2..3.0f64, p in 0.1..5.0f64) {
        let (spec, sc) = bm();
        let w = w_functions(eigenpair(&spec, q).unwrap(), sc.clone());
        let refr = refraction_from_tax(TaxRate::Constant(c), 0.0).unwrap();
        let y = y.max(0.0);
        let v = lt_occupation_until_exp(&spec, &sc, &w, &refr, y, q, p).unwrap().value;
        prop_assert!((q / (q + p) - 1e-10..=1.0).contains(&v), "{}", v);
    }

    #[test]
    fn w_ratio_invariant_under_affine_scale(alpha in 0.1..10.0f64, beta in -5.0..5.0f64, x in -2.0..3.0f64, d in 0.05..3.0f64) {
        let (spec, sc) = bm();
        let pair = eigenpair(&spec, 1.0).unwrap();
        let w = w_functions(pair.clone(), sc.clone());
        let w2 = w_functions(pair, sc.affine(alpha, beta).unwrap());
        let y = x - d;
        prop_assert!(((w.w1(x, y) / w.w(x, y)) / (w2.w1(x, y) / w2.w(x, y)) - 1.0).abs() < 1e-10);
        prop_assert!(((w.w2(x, y) / w.w(x, y)) / (w2.w2(x, y) / w2.w(x, y)) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn brownian_w_is_antisymmetric(x in -3.0..3.0f64, y in -3.0..3.0f64, q in 0.0..5.0f64) {
        let (spec, sc) = bm();
        let w = w_functions(eigenpair(&spec, q).unwrap(), sc);
        let (a, b) = (w.w(x, y), w.w(y, x));
        prop_assert!((a + b).abs() <= 1e-12 * a.abs().max(1e-300));
        if x > y { prop_assert!(a > 0.0); }
    }

    #[test]
    fn scenario_bundles_have_g_above_h(
        kind in 0usize..7, alpha in 0.05..0.95f64, beta_frac in 0.0..1.0f64, x0 in 0.5..3.0f64, c in 0.0..0.9f64, frac in 0.0..1.0f64,
    ) {
        let kind = ScenarioKind::ALL[kind];
        let mut s = ScenarioSpec::new(kind);
        s.alpha = alpha;
        s.beta = alpha + (1.0 - alpha) * beta_frac;
        s.tax = TaxRate::Constant(c);
        s.y_raw = frac * alpha * x0;
        s.a_raw = (1.0 - alpha) * x0 + 0.5 + frac;
        let b = build(&s, x0).unwrap();
        prop_assert!(b.refr.h.eval(x0).abs() < 1e-15 && b.refr.g.eval(x0).abs() < 1e-15);
        for i in 0..=100 {
            let u = x0 + 10.0 * i as f64 / 100.0;
            prop_assert!(b.refr.g.eval(u) >= b.refr.h.eval(u) - 1e-12);
        }
        prop_assert!(b.y < b.a && b.y >= -x0);
    }

    #[test]
    fn isotonic_output_is_monotone_and_idempotent(v in proptest::collection::vec(-1.0..2.0f64, 0..40)) {
        let m = isotonic(&v);
        prop_assert_eq!(m.len(), v.len());
        prop_assert!(m.windows(2).all(|w| w[0] <= w[1]));
        let sum: f64 = v.iter().sum();
        let msum: f64 = m.iter().sum();
        prop_assert!((sum - msum).abs() < 1e-9);
        let again = isotonic(&m);
        for (a, b) in again.iter().zip(&m) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
