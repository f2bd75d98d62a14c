//! Laplace inversion on transforms with known distribution functions.

use num::complex::Complex64;
use refracted_occupation::diffusion::*;
use refracted_occupation::error::Error;
use refracted_occupation::inversion::*;
use refracted_occupation::occupation::lt_bankruptcy_bm_tax;
use refracted_occupation::simulator::*;

/// `2Φ(-1/√t)`, the law of the first passage of standard Brownian motion
/// to level 1.
fn hitting_cdf(t: f64) -> f64 {
    erfc(1.0 / (2.0 * t).sqrt())
}

fn erfc(x: f64) -> f64 {
    // Numerical Recipes erfcc, relative error below 1.2e-7
    let z = x.abs();
    let t = 1.0 / (1.0 + 0.5 * z);
    let r = t * (-z * z - 1.26551223
        + t * (1.00002368
            + t * (0.37409196
                + t * (0.09678418
                    + t * (-0.18628806
                        + t * (0.27886807 + t * (-1.13520398 + t * (1.48851587 + t * (-0.82215223 + t * 0.17087277)))))))))
        .exp();
    if x >= 0.0 {
        r
    } else {
        2.0 - r
    }
}

#[test]
fn exponential_law() {
    let cfg = InversionConfig::new(InversionMethod::GaverStehfest, vec![1.0]);
    let out = invert_cdf(|q| Ok(1.0 / (1.0 + q)), &cfg).unwrap();
    assert!((out.points[0].f - (1.0 - (-1.0f64).exp())).abs() < 1e-6, "{}", out.points[0].f);
    assert!((out.points[0].f - 0.632121).abs() < 1e-6);
    assert!(out.warnings.is_empty());
}

#[test]
fn brownian_hitting_law_both_methods() {
    let ts = vec![0.5, 1.0, 2.0];
    for m in [InversionMethod::GaverStehfest, InversionMethod::FixedTalbot] {
        let cfg = InversionConfig::new(m, ts.clone());
        let out = invert_cdf_complex(|s: Complex64| Ok((-(2.0 * s).sqrt()).exp()), &cfg).unwrap();
        for p in &out.points {
            assert!((p.f - hitting_cdf(p.t)).abs() < 1e-4, "{m:?} t={}: {} vs {}", p.t, p.f, hitting_cdf(p.t));
        }
    }
}

#[test]
fn methods_agree_on_smooth_transforms() {
    let ts = vec![0.25, 0.5, 1.0, 2.0, 4.0];
    let transforms: [fn(Complex64) -> Complex64; 3] = [
        |s| 1.0 / (1.0 + s),
        |s| 6.0 / ((2.0 + s) * (3.0 + s)),
        |s| (-(2.0 * s).sqrt()).exp(),
    ];
    for f in transforms {
        let gs = invert_cdf_complex(|s| Ok(f(s)), &InversionConfig::new(InversionMethod::GaverStehfest, ts.clone())).unwrap();
        let ft = invert_cdf_complex(|s| Ok(f(s)), &InversionConfig::new(InversionMethod::FixedTalbot, ts.clone())).unwrap();
        for (a, b) in gs.points.iter().zip(&ft.points) {
            assert!((a.f - b.f).abs() < 1e-4, "t={}: {} vs {}", a.t, a.f, b.f);
        }
    }
}

#[test]
fn output_is_a_distribution_function() {
    let ts: Vec<f64> = (1..=40).map(|i| 0.05 * i as f64).collect();
    let cfg = InversionConfig::new(InversionMethod::GaverStehfest, ts);
    // point mass at 1: a hard case that produces ringing
    let out = invert_cdf(|q| Ok((-q).exp()), &cfg).unwrap();
    assert!(out.points.windows(2).all(|w| w[0].f <= w[1].f));
    assert!(out.points.iter().all(|p| (0.0..=1.0).contains(&p.f)));
    assert!(!out.warnings.is_empty());
}

#[test]
fn transform_failures_propagate() {
    let cfg = InversionConfig::new(InversionMethod::GaverStehfest, vec![1.0]);
    let err = invert_cdf(|q| if q > 3.0 { Err(Error::Precondition("boom".into())) } else { Ok(1.0) }, &cfg).unwrap_err();
    assert!(matches!(err, Error::Inversion(_)));
    let talbot = InversionConfig::new(InversionMethod::FixedTalbot, vec![1.0]);
    assert!(invert_cdf(|_| Ok(1.0), &talbot).is_err());
}

#[test]
fn csv_has_one_row_per_time() {
    let cfg = InversionConfig::new(InversionMethod::GaverStehfest, vec![1.0, 2.0]);
    let out = invert_cdf(|q| Ok(1.0 / (1.0 + q)), &cfg).unwrap();
    let csv = out.csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "t,F,method,order");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].ends_with(",gaver_stehfest,14"));
}

#[test]
fn bankruptcy_cdf_matches_simulation() {
    let ts = vec![1.0, 2.0, 5.0];
    let cfg = InversionConfig::new(InversionMethod::GaverStehfest, ts.clone());
    let inv = invert_cdf(|q| lt_bankruptcy_bm_tax(0.5, 1.0, 0.0, 0.0, q, 2.0).map(|r| r.value), &cfg).unwrap();
    let spec = make_brownian(0.5, 1.0, 0.0).unwrap();
    let refr = refraction_from_tax(TaxRate::Constant(0.0), 0.0).unwrap();
    let mut pc = PathConfig::new(1e-3, 10.0, 40_000, 61);
    pc.bridge_correction = true;
    let mc = simulate_bankruptcy_cdf(&spec, &refr, 0.0, 2.0, &ts, &pc).unwrap();
    for (p, e) in inv.points.iter().zip(&mc) {
        let z = (e.mean - p.f) / e.std_error;
        assert!(z.abs() <= 3.0, "t={}: inverted {} vs mc {} ± {}", p.t, p.f, e.mean, e.std_error);
    }
}
