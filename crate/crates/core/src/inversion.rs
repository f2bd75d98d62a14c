//! Numerical Laplace inversion for distribution functions.
//!
//! Given a transform `q ↦ E[e^{-qτ}]`, the distribution function of `τ` has
//! Laplace transform `E[e^{-qτ}]/q`; inverting that and projecting onto
//! nondecreasing sequences in `[0, 1]` gives `P(τ <= t)` on a time grid.
//! Gaver–Stehfest needs only real nodes. Fixed Talbot needs the transform
//! on a complex contour and is used for benchmark transforms with known
//! analytic continuations.

use num::bigint::BigInt;
use num::complex::Complex64;
use num::rational::BigRational;
use num::{One, ToPrimitive, Zero};
use rayon::prelude::*;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InversionMethod {
    GaverStehfest,
    FixedTalbot,
}

impl InversionMethod {
    pub fn name(&self) -> &'static str {
        match self {
            InversionMethod::GaverStehfest => "gaver_stehfest",
            InversionMethod::FixedTalbot => "fixed_talbot",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gaver_stehfest" | "gs" | "GaverStehfest" => Ok(InversionMethod::GaverStehfest),
            "fixed_talbot" | "talbot" | "FixedTalbot" => Ok(InversionMethod::FixedTalbot),
            _ => Err(Error::Config(format!("unknown inversion method '{s}'"))),
        }
    }

    pub fn default_order(&self) -> usize {
        match self {
            InversionMethod::GaverStehfest => 14,
            InversionMethod::FixedTalbot => 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InversionConfig {
    pub method: InversionMethod,
    /// Even order for Gaver–Stehfest, contour node count for Talbot.
    pub order: usize,
    pub t_grid: Vec<f64>,
}

impl InversionConfig {
    pub fn new(method: InversionMethod, t_grid: Vec<f64>) -> Self {
        InversionConfig { method, order: method.default_order(), t_grid }
    }

    pub fn validate(&self) -> Result<()> {
        match self.method {
            InversionMethod::GaverStehfest => {
                if self.order % 2 != 0 || !(8..=20).contains(&self.order) {
                    return Err(Error::Config(format!(
                        "Gaver-Stehfest order must be even and in [8, 20], got {}",
                        self.order
                    )));
                }
            }
            InversionMethod::FixedTalbot => {
                if self.order < 4 {
                    return Err(Error::Config(format!("Talbot needs at least 4 nodes, got {}", self.order)));
                }
            }
        }
        if self.t_grid.is_empty() {
            return Err(Error::Config("t_grid is empty".into()));
        }
        if self.t_grid.iter().any(|t| !(*t > 0.0) || !t.is_finite()) {
            return Err(Error::Config("t_grid must hold positive finite times".into()));
        }
        if self.t_grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Config("t_grid must be strictly increasing".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CdfPoint {
    pub t: f64,
    /// Clipped, monotone value.
    pub f: f64,
    /// Raw inversion output before clipping and the isotonic pass.
    pub raw: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InversionOutput {
    pub points: Vec<CdfPoint>,
    pub method: InversionMethod,
    pub order: usize,
    pub warnings: Vec<String>,
}

impl InversionOutput {
    pub fn csv(&self) -> String {
        let mut out = String::from("t,F,method,order\n");
        for p in &self.points {
            out.push_str(&format!("{:.11e},{:.11e},{},{}\n", p.t, p.f, self.method.name(), self.order));
        }
        out
    }
}

fn factorial(n: usize) -> BigInt {
    (1..=n).fold(BigInt::one(), |acc, k| acc * BigInt::from(k))
}

/// Exact Stehfest weights `V_1..V_N`.
pub fn stehfest_weights_exact(n: usize) -> Vec<BigRational> {
    let half = n / 2;
    (1..=n)
        .map(|k| {
            let mut sum = BigRational::zero();
            for j in k.div_ceil(2)..=k.min(half) {
                let num = BigInt::from(j).pow(half as u32) * factorial(2 * j);
                let den = factorial(half - j) * factorial(j) * factorial(j - 1) * factorial(k - j) * factorial(2 * j - k);
                sum += BigRational::new(num, den);
            }
            if (k + half) % 2 == 1 {
                -sum
            } else {
                sum
            }
        })
        .collect()
}

pub fn stehfest_weights(n: usize) -> Vec<f64> {
    stehfest_weights_exact(n).iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect()
}

/// Gaver–Stehfest value of the inverse of `f` at `t`. The weighted sum is
/// accumulated exactly in rationals, so the only rounding is in the
/// transform values themselves.
pub fn gaver_stehfest<F>(f: F, t: f64, n: usize) -> Result<f64>
where
    F: Fn(f64) -> Result<f64>,
{
    let weights = stehfest_weights_exact(n);
    let ln2t = std::f64::consts::LN_2 / t;
    let mut acc = BigRational::zero();
    for (k, w) in weights.iter().enumerate() {
        let s = (k + 1) as f64 * ln2t;
        let v = f(s).map_err(|e| Error::Inversion(format!("transform failed at q = {s}: {e}")))?;
        let r = BigRational::from_float(v)
            .ok_or_else(|| Error::Inversion(format!("non-finite transform value {v} at q = {s}")))?;
        acc += w * r;
    }
    Ok(acc.to_f64().unwrap_or(f64::NAN) * ln2t)
}

/// Fixed Talbot value of the inverse of `f` at `t` with `m` contour nodes.
pub fn fixed_talbot<F>(f: F, t: f64, m: usize) -> Result<f64>
where
    F: Fn(Complex64) -> Result<Complex64>,
{
    let r = 2.0 * m as f64 / (5.0 * t);
    let eval = |s: Complex64| f(s).map_err(|e| Error::Inversion(format!("transform failed at s = {s}: {e}")));
    let mut sum = 0.5 * (eval(Complex64::new(r, 0.0))?.re * (r * t).exp());
    for k in 1..m {
        let theta = k as f64 * std::f64::consts::PI / m as f64;
        let cot = theta.cos() / theta.sin();
        let s = Complex64::new(r * theta * cot, r * theta);
        let sigma = theta + (theta * cot - 1.0) * cot;
        let term = (s * t).exp() * eval(s)? * Complex64::new(1.0, sigma);
        sum += term.re;
    }
    Ok(sum * r / m as f64)
}

/// Pool-adjacent-violators projection onto nondecreasing sequences.
pub fn isotonic(values: &[f64]) -> Vec<f64> {
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(values.len());
    for &v in values {
        blocks.push((v, 1));
        while blocks.len() > 1 {
            let (m2, n2) = blocks[blocks.len() - 1];
            let (m1, n1) = blocks[blocks.len() - 2];
            if m1 <= m2 {
                break;
            }
            blocks.pop();
            let n = n1 + n2;
            *blocks.last_mut().unwrap() = ((m1 * n1 as f64 + m2 * n2 as f64) / n as f64, n);
        }
    }
    blocks.into_iter().flat_map(|(m, n)| std::iter::repeat_n(m, n)).collect()
}

fn finish(cfg: &InversionConfig, raw: Vec<f64>, warnings: Vec<String>) -> InversionOutput {
    let clipped: Vec<f64> = raw.iter().map(|v| v.clamp(0.0, 1.0)).collect();
    let mono = isotonic(&clipped);
    InversionOutput {
        points: cfg.t_grid.iter().zip(raw.iter().zip(mono)).map(|(&t, (&raw, f))| CdfPoint { t, f, raw }).collect(),
        method: cfg.method,
        order: cfg.order,
        warnings,
    }
}

/// Disagreement between successive Gaver–Stehfest orders that triggers a
/// cancellation warning.
pub const GS_ORDER_DISAGREEMENT: f64 = 1e-3;

/// Distribution function from a real-argument transform. Only
/// Gaver–Stehfest is available here.
pub fn invert_cdf<F>(transform: F, cfg: &InversionConfig) -> Result<InversionOutput>
where
    F: Fn(f64) -> Result<f64> + Sync,
{
    cfg.validate()?;
    if cfg.method != InversionMethod::GaverStehfest {
        return Err(Error::Inversion("fixed Talbot needs a complex-argument transform".into()));
    }
    let cdf = |q: f64| transform(q).map(|v| v / q);
    let pairs: Vec<Result<(f64, f64)>> = cfg
        .t_grid
        .par_iter()
        .map(|&t| Ok((gaver_stehfest(cdf, t, cfg.order)?, gaver_stehfest(cdf, t, cfg.order - 2)?)))
        .collect();
    let mut raw = Vec::with_capacity(pairs.len());
    let mut warnings = Vec::new();
    for (p, &t) in pairs.into_iter().zip(cfg.t_grid.iter()) {
        let (hi, lo) = p?;
        if (hi - lo).abs() > GS_ORDER_DISAGREEMENT {
            warnings.push(format!(
                "possible cancellation at t = {t}: orders {} and {} give {hi:.6} and {lo:.6}",
                cfg.order,
                cfg.order - 2
            ));
        }
        raw.push(hi);
    }
    Ok(finish(cfg, raw, warnings))
}

/// Distribution function from a transform with a known analytic
/// continuation. Either method may be used.
pub fn invert_cdf_complex<F>(transform: F, cfg: &InversionConfig) -> Result<InversionOutput>
where
    F: Fn(Complex64) -> Result<Complex64> + Sync,
{
    match cfg.method {
        InversionMethod::GaverStehfest => invert_cdf(|q| transform(Complex64::new(q, 0.0)).map(|z| z.re), cfg),
        InversionMethod::FixedTalbot => {
            cfg.validate()?;
            let cdf = |s: Complex64| transform(s).map(|v| v / s);
            let raw: Vec<Result<f64>> = cfg.t_grid.par_iter().map(|&t| fixed_talbot(cdf, t, cfg.order)).collect();
            let raw = raw.into_iter().collect::<Result<Vec<f64>>>()?;
            Ok(finish(cfg, raw, Vec::new()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stehfest_weights_sum_to_zero() {
        for n in [8, 10, 14, 20] {
            let s: BigRational = stehfest_weights_exact(n).iter().sum();
            assert!(s.is_zero(), "order {n}");
        }
        let w = stehfest_weights(8);
        assert_eq!(w[0], -1.0 / 3.0);
        let expect = [-1.0 / 3.0, 145.0 / 3.0, -906.0, 16394.0 / 3.0, -43130.0 / 3.0, 18730.0, -35840.0 / 3.0, 8960.0 / 3.0];
        for (a, b) in w.iter().zip(expect) {
            assert!((a - b).abs() <= 1e-12 * b.abs(), "{a} vs {b}");
        }
    }

    #[test]
    fn isotonic_pools_violators() {
        assert_eq!(isotonic(&[0.125, 0.375, 0.25, 0.5]), vec![0.125, 0.3125, 0.3125, 0.5]);
        assert_eq!(isotonic(&[0.75, 0.5, 0.25]), vec![0.5, 0.5, 0.5]);
        assert_eq!(isotonic(&[]), Vec::<f64>::new());
    }

    #[test]
    fn rejects_bad_configs() {
        let mut c = InversionConfig::new(InversionMethod::GaverStehfest, vec![1.0, 2.0]);
        c.order = 13;
        assert!(c.validate().is_err());
        c.order = 22;
        assert!(c.validate().is_err());
        c.order = 14;
        c.t_grid = vec![2.0, 1.0];
        assert!(c.validate().is_err());
        c.t_grid = vec![];
        assert!(c.validate().is_err());
    }
}
