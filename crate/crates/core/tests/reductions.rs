//! Identities linking the transforms to each other and to closed forms.

use refracted_occupation::diffusion::*;
use refracted_occupation::eigen::*;
use refracted_occupation::func::Func;
use refracted_occupation::occupation::*;

fn bm(x0: f64) -> (DiffusionSpec, ScaleFunction) {
    let spec = make_brownian(0.5, 1.0, x0).unwrap();
    let sc = scale(&spec).unwrap();
    (spec, sc)
}

fn wfs(spec: &DiffusionSpec, sc: &ScaleFunction, q: f64) -> WFunctions {
    w_functions(eigenpair(spec, q).unwrap(), sc.clone())
}

fn printed_occupation(delta: f64, y: f64, a: f64, q: f64) -> f64 {
    let g = (delta * delta + 2.0 * q).sqrt();
    let d = a - y;
    g * (-delta * (a + y)).exp() / (g * (g * d).cosh() + delta * (g * d).sinh())
}

#[test]
fn occupation_with_full_drawdown_level_is_hitting_time() {
    for (x0, c, q) in [(0.0, 0.3, 1.0), (0.5, 0.2, 0.5), (0.0, 0.6, 2.0)] {
        let (spec, sc) = bm(x0);
        let w = wfs(&spec, &sc, q);
        let refr = RefractionSet::linear(c, 1.0, x0);
        let occ = lt_occupation_until_hitting(&spec, &sc, &w, &refr, -x0, 1.0, q).unwrap();
        let hit = lt_hitting_time(&spec, &sc, &w, &refr.h, 1.0, q).unwrap();
        assert!((occ.value - hit.value).abs() < 1e-8, "x0={x0} c={c} q={q}: {} vs {}", occ.value, hit.value);
    }
}

#[test]
fn drawdown_time_is_finite_at_zero_rate() {
    let (spec, sc) = bm(0.0);
    let w = wfs(&spec, &sc, 0.0);
    let h = Func::new(|u| u);
    let r = lt_hitting_time(&spec, &sc, &w, &h, 1.0, 0.0).unwrap();
    assert!((r.value - 1.0).abs() < 1e-8, "{}", r.value);
}

#[test]
fn unrefracted_occupation_matches_closed_form() {
    for (y, a, q) in [(0.0, 1.0, 1.0), (0.2, 2.0, 0.5), (0.5, 1.0, 2.0)] {
        let (spec, sc) = bm(0.0);
        let w = wfs(&spec, &sc, q);
        let gen = lt_occupation_until_hitting(&spec, &sc, &w, &RefractionSet::zero(0.0), y, a, q).unwrap();
        let closed = lt_occupation_no_refraction(&spec, &sc, &w, y, a).unwrap();
        let printed = printed_occupation(0.5, y, a, q);
        assert!((gen.value - closed.value).abs() < 1e-8, "{} vs {}", gen.value, closed.value);
        assert!((closed.value / printed - 1.0).abs() < 1e-12, "{} vs {printed}", closed.value);
    }
}

#[test]
fn exp_clock_with_full_drawdown_level_is_clock_transform() {
    for (x0, q, p) in [(0.0, 1.0, 2.0), (1.0, 0.5, 0.5), (0.0, 2.0, 1.0)] {
        let (spec, sc) = bm(x0);
        let w = wfs(&spec, &sc, q);
        let refr = RefractionSet::linear(0.0, 1.0, x0);
        let r = lt_occupation_until_exp(&spec, &sc, &w, &refr, -x0, q, p).unwrap();
        assert!((r.value - q / (q + p)).abs() < 1e-8, "{} vs {}", r.value, q / (q + p));
    }
}

#[test]
fn exp_clock_without_refraction_is_level_occupation() {
    for (x0, y, q, p) in [(0.0, 0.0, 1.0, 2.0), (0.5, 0.2, 1.0, 1.0), (1.0, -0.5, 0.5, 3.0)] {
        let (spec, sc) = bm(x0);
        let w = wfs(&spec, &sc, q);
        let r = lt_occupation_until_exp(&spec, &sc, &w, &RefractionSet::zero(x0), y, q, p).unwrap();
        let lvl = lt_occupation_below_level_exp(&spec, &sc, &w, -y, q, p).unwrap();
        assert!((r.value - lvl.value).abs() < 1e-8, "{} vs {}", r.value, lvl.value);
    }
}

#[test]
fn level_occupation_spot_value() {
    let (spec, sc) = bm(0.0);
    let w = wfs(&spec, &sc, 1.0);
    let r = lt_occupation_below_level_exp(&spec, &sc, &w, 0.0, 1.0, 2.0).unwrap();
    assert!((r.value - 2.0 / 3.0).abs() < 1e-12, "{}", r.value);
    let e = lt_occupation_until_exp(&spec, &sc, &w, &RefractionSet::zero(0.0), 0.0, 1.0, 2.0).unwrap();
    assert!((e.value - 2.0 / 3.0).abs() < 1e-9, "{}", e.value);
}

#[test]
fn level_occupation_branches_meet_at_the_level() {
    for (b, q, p) in [(0.0, 1.0, 2.0), (0.7, 0.5, 1.0), (-1.0, 2.0, 0.5)] {
        let at = {
            let (spec, sc) = bm(b);
            lt_occupation_below_level_exp(&spec, &sc, &wfs(&spec, &sc, q), b, q, p).unwrap().value
        };
        let below = {
            let (spec, sc) = bm(b - 1e-10);
            lt_occupation_below_level_exp(&spec, &sc, &wfs(&spec, &sc, q), b, q, p).unwrap().value
        };
        assert!((at - below).abs() < 1e-8, "b={b}: {at} vs {below}");
    }
}

#[test]
fn level_occupation_small_p_limit() {
    let (spec, sc) = bm(0.0);
    let r = lt_occupation_below_level_exp(&spec, &sc, &wfs(&spec, &sc, 1.0), 0.0, 1.0, 1e-8).unwrap();
    assert!((r.value - 1.0).abs() < 1e-6);
}

#[test]
fn unit_weight_reduces_to_plain_occupation() {
    for (c, y, a, q) in [(0.0, 0.0, 1.0, 1.0), (0.5, 0.2, 1.0, 1.0), (0.25, 0.1, 2.0, 0.5)] {
        let (spec, sc) = bm(0.0);
        let refr = RefractionSet::linear(c, c, 0.0);
        let plain = lt_occupation_until_hitting(&spec, &sc, &wfs(&spec, &sc, q), &refr, y, a, q).unwrap();
        let w1 = lt_weighted_occupation(&spec, &sc, &refr, y, a, q, &Weight::Constant(1.0)).unwrap();
        let f1 = lt_weighted_occupation(&spec, &sc, &refr, y, a, q, &Weight::Function(Func::new(|_| 1.0))).unwrap();
        assert!((plain.value - w1.value).abs() < 1e-8, "{} vs {}", plain.value, w1.value);
        assert!((plain.value - f1.value).abs() < 1e-8, "{} vs {}", plain.value, f1.value);
    }
}

#[test]
fn constant_weight_rescales_rate() {
    let (spec, sc) = bm(0.0);
    let refr = RefractionSet::linear(0.5, 0.5, 0.0);
    let w2 = lt_weighted_occupation(&spec, &sc, &refr, 0.2, 1.0, 1.0, &Weight::Constant(2.0)).unwrap();
    let plain = lt_occupation_until_hitting(&spec, &sc, &wfs(&spec, &sc, 4.0), &refr, 0.2, 1.0, 4.0).unwrap();
    assert!((plain.value - w2.value).abs() < 1e-8);
}

#[test]
fn tax_fast_paths_match_general_paths() {
    let (spec, sc) = bm(0.0);
    let w = wfs(&spec, &sc, 1.0);
    for c in [0.25, 0.5, 0.9] {
        let refr = refraction_from_tax(TaxRate::Constant(c), 0.0).unwrap();
        let gen = lt_occupation_until_hitting(&spec, &sc, &w, &refr, 0.2, 1.0, 1.0).unwrap();
        let fast = lt_occupation_bm_tax(0.5, 1.0, c, 0.2, 1.0, 1.0).unwrap();
        assert!((gen.value - fast.value).abs() < 1e-8, "c={c}: {} vs {}", gen.value, fast.value);
        for y in [0.0, 0.5] {
            let gen = lt_bankruptcy_tax(&spec, &sc, &w, &refr, y, 1.0, 2.0).unwrap();
            let fast = lt_bankruptcy_bm_tax(0.5, 1.0, c, y, 1.0, 2.0).unwrap();
            assert!((gen.value - fast.value).abs() < 1e-8, "c={c} y={y}: {} vs {}", gen.value, fast.value);
        }
    }
}

#[test]
fn zero_tax_fast_paths_are_closed_forms() {
    let occ = occupation_bm_tax_quadrature(0.5, 1.0, 0.0, 0.0, 1.0, 1.0).unwrap();
    assert!((occ.value - 0.198_072_207_584_526_7).abs() < 1e-10);
    // γ = 1.5, γ' = 2.5 at q = 1, ω = 2
    let bk = lt_bankruptcy_bm_tax(0.5, 1.0, 0.0, 0.5, 1.0, 2.0).unwrap();
    let expect = (2.0 / 3.0) * 2.0 / 4.0 * (-2.0f64 * 0.5).exp();
    assert!((bk.value - expect).abs() < 1e-14, "{} vs {expect}", bk.value);
    let qd = bankruptcy_bm_tax_quadrature(0.5, 1.0, 0.0, 0.5, 1.0, 2.0).unwrap();
    assert!((qd.value - expect).abs() < 1e-10, "{} vs {expect}", qd.value);
}

#[test]
fn bankruptcy_small_omega_limit() {
    let (spec, sc) = bm(0.0);
    let refr = refraction_from_tax(TaxRate::Constant(0.0), 0.0).unwrap();
    let r = lt_bankruptcy_tax(&spec, &sc, &wfs(&spec, &sc, 1.0), &refr, 0.0, 1.0, 1e-8).unwrap();
    assert!(r.value.abs() < 1e-6, "{}", r.value);
}

#[test]
fn affine_rescaled_scale_leaves_transforms_unchanged() {
    let (spec, sc) = bm(0.0);
    let sc2 = sc.clone().affine(3.0, -1.0).unwrap();
    let (q, y, a) = (1.0, 0.2, 1.0);
    let w = wfs(&spec, &sc, q);
    let w2 = w_functions(eigenpair(&spec, q).unwrap(), sc2.clone());
    for &(x, yy) in &[(1.0, 0.0), (0.5, -0.3), (2.0, 1.5)] {
        let r1 = w.w1(x, yy) / w.w(x, yy);
        let r2 = w2.w1(x, yy) / w2.w(x, yy);
        assert!((r1 / r2 - 1.0).abs() < 1e-10);
    }
    for refr in [RefractionSet::zero(0.0), refraction_from_tax(TaxRate::Constant(0.5), 0.0).unwrap()] {
        let a1 = lt_occupation_until_hitting(&spec, &sc, &w, &refr, y, a, q).unwrap().value;
        let a2 = lt_occupation_until_hitting(&spec, &sc2, &w2, &refr, y, a, q).unwrap().value;
        assert!((a1 - a2).abs() < 1e-10, "{a1} vs {a2}");
        let e1 = lt_occupation_until_exp(&spec, &sc, &w, &refr, y, q, 2.0).unwrap().value;
        let e2 = lt_occupation_until_exp(&spec, &sc2, &w2, &refr, y, q, 2.0).unwrap().value;
        assert!((e1 - e2).abs() < 1e-10, "{e1} vs {e2}");
        let h1 = lt_hitting_time(&spec, &sc, &w, &refr.h, a, q).unwrap().value;
        let h2 = lt_hitting_time(&spec, &sc2, &w2, &refr.h, a, q).unwrap().value;
        assert!((h1 - h2).abs() < 1e-10, "{h1} vs {h2}");
    }
    let n1 = lt_occupation_no_refraction(&spec, &sc, &w, y, a).unwrap().value;
    let n2 = lt_occupation_no_refraction(&spec, &sc2, &w2, y, a).unwrap().value;
    assert!((n1 - n2).abs() < 1e-10);
}
