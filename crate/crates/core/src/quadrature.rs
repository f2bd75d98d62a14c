//! Adaptive quadrature: Gauss–Kronrod panels on finite and semi-infinite
//! ranges, and a coupled sweep for integrals of the form
//! `∫ f(m) exp(-∫_{x0}^m κ(u) du) dm`.

use std::collections::BinaryHeap;

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

/// Result of a one-dimensional quadrature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quad {
    pub value: f64,
    pub abs_err: f64,
    pub n_evals: usize,
}

fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        kron += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    let err = ((kron - gauss) * h).abs();
    (kron * h, err)
}

struct Panel {
    a: f64,
    b: f64,
    value: f64,
    err: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.err == other.err
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.err.total_cmp(&other.err)
    }
}

/// Adaptive G7/K15 quadrature on a finite interval with global bisection.
pub fn integrate<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
) -> Result<Quad> {
    if a == b {
        return Ok(Quad { value: 0.0, abs_err: 0.0, n_evals: 0 });
    }
    const MAX_PANELS: usize = 4000;
    let (v, e) = gk15(&mut f, a, b);
    let mut n_evals = 15;
    let mut heap = BinaryHeap::new();
    heap.push(Panel { a, b, value: v, err: e });
    let mut total = v;
    let mut total_err = e;
    while total_err > abs_tol.max(rel_tol * total.abs()) {
        if heap.len() >= MAX_PANELS {
            return Err(Error::NonConvergence {
                reason: format!("adaptive quadrature exhausted {MAX_PANELS} panels (err {total_err:e})"),
                truncation_point: b,
                n_evals,
            });
        }
        let worst = heap.pop().expect("heap is never empty");
        let mid = 0.5 * (worst.a + worst.b);
        let (v1, e1) = gk15(&mut f, worst.a, mid);
        let (v2, e2) = gk15(&mut f, mid, worst.b);
        n_evals += 30;
        total += v1 + v2 - worst.value;
        total_err += e1 + e2 - worst.err;
        heap.push(Panel { a: worst.a, b: mid, value: v1, err: e1 });
        heap.push(Panel { a: mid, b: worst.b, value: v2, err: e2 });
        if !total.is_finite() {
            return Err(Error::NonConvergence {
                reason: "non-finite integrand".into(),
                truncation_point: b,
                n_evals,
            });
        }
    }
    // recompute to shed accumulated rounding from the running updates
    let value: f64 = heap.iter().map(|p| p.value).sum();
    let abs_err: f64 = heap.iter().map(|p| p.err).sum();
    Ok(Quad { value, abs_err, n_evals })
}

/// `∫_a^∞ f` through the map `x = a + L t/(1-t)`; `scale` is the decay length `L`.
pub fn integrate_to_infinity<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    scale: f64,
    abs_tol: f64,
    rel_tol: f64,
) -> Result<Quad> {
    let g = |t: f64| {
        if t >= 1.0 {
            return 0.0;
        }
        let one_m = 1.0 - t;
        let x = a + scale * t / one_m;
        let jac = scale / (one_m * one_m);
        let v = f(x) * jac;
        if v.is_finite() {
            v
        } else {
            0.0
        }
    };
    integrate(g, 0.0, 1.0, abs_tol, rel_tol)
}

/// Tolerances and limits for [`exp_weighted_sweep`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Tail-to-sum ratio at which the sweep may stop.
    pub tail_tol: f64,
    /// Largest admissible truncation point, measured from the start.
    pub max_span: f64,
    pub max_evals: usize,
    pub initial_step: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            rel_tol: 1e-11,
            abs_tol: 1e-14,
            tail_tol: 1e-12,
            max_span: 1e6,
            max_evals: 2_000_000,
            initial_step: 1e-3,
        }
    }
}

/// Output of the coupled sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepOutput {
    /// `∫_{x0}^{M} f(m) e^{-I(m)} dm` plus extrapolated tail.
    pub integral: f64,
    /// `I(M) = ∫_{x0}^{M} κ`.
    pub exponent: f64,
    pub truncation_point: f64,
    pub n_evals: usize,
    pub abs_err: f64,
}

/// Integrand sample returned by a sweep kernel: the hazard `κ(m)` and
/// `ln f(m)` (use `f64::NEG_INFINITY` for `f = 0`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSample {
    pub kappa: f64,
    pub ln_f: f64,
}

// Dormand–Prince 5(4)
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// One pass over `m ∈ [x0, M]` advancing `I(m) = ∫κ` and
/// `V(m) = ∫ f e^{-I}` together as an ODE system, so the nested integral
/// costs a single sweep. `M` grows until the integrand tail is negligible
/// relative to `V` and, when `need_exponent_decay` is set, until
/// `e^{-I(M)}` is negligible as well.
pub fn exp_weighted_sweep<K>(
    x0: f64,
    cfg: &SweepConfig,
    need_exponent_decay: bool,
    mut kernel: K,
) -> Result<SweepOutput>
where
    K: FnMut(f64) -> Result<KernelSample>,
{
    let mut n_evals = 0usize;
    let mut eval = |m: f64, ival: f64, n: &mut usize| -> Result<[f64; 2]> {
        *n += 1;
        let s = kernel(m)?;
        let g = (s.ln_f - ival).exp();
        if !s.kappa.is_finite() || g.is_nan() || g == f64::INFINITY {
            return Err(Error::NonConvergence {
                reason: format!("non-finite integrand at m = {m} (κ = {}, ln f = {})", s.kappa, s.ln_f),
                truncation_point: m,
                n_evals: *n,
            });
        }
        Ok([s.kappa, g])
    };

    let mut m = x0;
    let mut y = [0.0f64, 0.0f64];
    let mut k1 = eval(m, y[0], &mut n_evals)?;
    let mut h = cfg.initial_step;
    let mut err_acc = 0.0;
    let mut settled = 0usize;
    let mut prev_g = k1[1];
    let mut prev_m = m;
    let mut tail;

    loop {
        if n_evals > cfg.max_evals {
            return Err(Error::NonConvergence {
                reason: "evaluation budget exhausted".into(),
                truncation_point: m,
                n_evals,
            });
        }
        if m - x0 > cfg.max_span {
            return Err(Error::NonConvergence {
                reason: format!(
                    "tail not negligible within span {} (integrand {prev_g:e}, exponent {})",
                    cfg.max_span, y[0]
                ),
                truncation_point: m,
                n_evals,
            });
        }
        let mut k = [[0.0f64; 2]; 7];
        k[0] = k1;
        let mut failed = false;
        for s in 1..7 {
            let mut yi = y;
            for (j, kj) in k.iter().enumerate().take(s) {
                yi[0] += h * A[s][j] * kj[0];
                yi[1] += h * A[s][j] * kj[1];
            }
            match eval(m + C[s] * h, yi[0], &mut n_evals) {
                Ok(v) => k[s] = v,
                Err(e) => {
                    if h < 1e-12 {
                        return Err(e);
                    }
                    failed = true;
                    break;
                }
            }
        }
        if failed {
            h *= 0.25;
            continue;
        }
        let mut y5 = y;
        let mut y4 = y;
        for s in 0..7 {
            y5[0] += h * B5[s] * k[s][0];
            y5[1] += h * B5[s] * k[s][1];
            y4[0] += h * B4[s] * k[s][0];
            y4[1] += h * B4[s] * k[s][1];
        }
        let sc0 = cfg.rel_tol * (1.0 + y5[0].abs().min(1.0));
        let sc1 = cfg.abs_tol + cfg.rel_tol * y5[1].abs();
        let e0 = (y5[0] - y4[0]).abs() / sc0;
        let e1 = (y5[1] - y4[1]).abs() / sc1;
        let err = e0.max(e1);
        if err <= 1.0 || h < 1e-14 {
            err_acc += (y5[1] - y4[1]).abs();
            m += h;
            y = y5;
            k1 = k[6];
            let g = k1[1];
            // decay length of the integrand from consecutive accepted samples
            tail = if g == 0.0 {
                0.0
            } else if g < prev_g && prev_g > 0.0 {
                g * (m - prev_m) / (prev_g / g).ln()
            } else {
                f64::INFINITY
            };
            prev_g = g;
            prev_m = m;
            let tail_ok = tail <= cfg.tail_tol * y[1].abs().max(1e-300) || tail < cfg.abs_tol * 1e-3;
            let exp_ok = !need_exponent_decay || (-y[0]).exp() < cfg.tail_tol;
            if tail_ok && exp_ok {
                settled += 1;
                if settled >= 3 {
                    break;
                }
            } else {
                settled = 0;
            }
            let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            h *= fac;
        } else {
            h *= (0.9 * err.powf(-0.25)).clamp(0.1, 0.9);
        }
    }
    let tail = if tail.is_finite() { tail } else { 0.0 };
    Ok(SweepOutput {
        integral: y[1] + tail,
        exponent: y[0],
        truncation_point: m,
        n_evals,
        abs_err: err_acc + tail,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_kronrod_polynomial_and_smooth() {
        let q = integrate(|x| x * x, 0.0, 3.0, 1e-14, 1e-14).unwrap();
        assert!((q.value - 9.0).abs() < 1e-13);
        let q = integrate(|x: f64| x.sin(), 0.0, std::f64::consts::PI, 1e-13, 1e-13).unwrap();
        assert!((q.value - 2.0).abs() < 1e-12);
    }

    #[test]
    fn semi_infinite_exponential() {
        let q = integrate_to_infinity(|x: f64| (-2.0 * x).exp(), 0.0, 0.5, 1e-14, 1e-12).unwrap();
        assert!((q.value - 0.5).abs() < 1e-12, "{}", q.value);
        // slowly decaying tail with a matched scale
        let q = integrate_to_infinity(|x: f64| (-1e-3 * x).exp(), 0.0, 1e3, 1e-10, 1e-12).unwrap();
        assert!((q.value - 1e3).abs() < 1e-7, "{}", q.value);
    }

    #[test]
    fn sweep_matches_closed_form_hazard_integral() {
        // κ = 1, f = 1  ⇒  ∫ e^{-m} dm = 1, and I grows linearly
        let out = exp_weighted_sweep(0.0, &SweepConfig::default(), true, |_| {
            Ok(KernelSample { kappa: 1.0, ln_f: 0.0 })
        })
        .unwrap();
        assert!((out.integral - 1.0).abs() < 1e-10, "{}", out.integral);
        assert!(out.exponent > 27.0);
    }

    #[test]
    fn sweep_nested_density() {
        // κ(m) = 2m, f(m) = 2m: ∫ 2m e^{-m²} dm = 1
        let out = exp_weighted_sweep(0.0, &SweepConfig::default(), true, |m: f64| {
            Ok(KernelSample { kappa: 2.0 * m, ln_f: (2.0 * m).ln() })
        })
        .unwrap();
        assert!((out.integral - 1.0).abs() < 1e-10, "{}", out.integral);
    }

    #[test]
    fn sweep_defective_exponent_saturates() {
        // κ integrable: I → 1, f = e^{-m}: ∫ e^{-m} e^{-(1-e^{-m})} dm = 1 - e^{-1}
        let out = exp_weighted_sweep(0.0, &SweepConfig::default(), false, |m: f64| {
            Ok(KernelSample { kappa: (-m).exp(), ln_f: -m })
        })
        .unwrap();
        let exact = 1.0 - (-1.0f64).exp();
        assert!((out.integral - exact).abs() < 1e-10, "{} vs {exact}", out.integral);
    }
}
