//! Laplace transforms of occupation times, first-passage times and the
//! bankruptcy time of the Omega model with tax.
//!
//! The general transforms share one shape, `∫ f(m) exp(-∫_{x0}^m κ) dm`,
//! and are evaluated by [`exp_weighted_sweep`]. Kernels are assembled from
//! `ln φ±` and `ψ±` so that no exponentially large factor is ever formed.

use rayon::prelude::*;

use crate::diffusion::{scale, DiffusionSpec, OccupationQuery, RefractionSet, ScaleFunction, TaxRate, Weight};
use crate::eigen::{eigenpair, eigenpair_weighted, w_functions, EigenPair, WFunctions};
use crate::error::{invalid, precondition, Error, Result};
use crate::quadrature::{exp_weighted_sweep, integrate_to_infinity, KernelSample, SweepConfig, SweepOutput};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    ClosedForm,
    Quadrature,
}

impl Backend {
    pub fn as_str(&self) -> &'static str {
        match self {
            Backend::ClosedForm => "closed_form",
            Backend::Quadrature => "quadrature",
        }
    }
}

/// A transform value with its error estimate and integration diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformResult {
    pub value: f64,
    pub abs_err_estimate: f64,
    pub truncation_point: f64,
    pub n_evals: usize,
    pub backend: Backend,
}

const RANGE_SLACK: f64 = 1e-9;

fn finish(value: f64, abs_err: f64, truncation_point: f64, n_evals: usize, backend: Backend) -> Result<TransformResult> {
    if !value.is_finite() || value < -RANGE_SLACK || value > 1.0 + RANGE_SLACK {
        return Err(Error::NonConvergence {
            reason: format!("transform value {value} outside [0, 1]"),
            truncation_point,
            n_evals,
        });
    }
    let value = value.clamp(0.0, 1.0);
    // keep value ± err within the slack around [0, 1]
    let room = (value + RANGE_SLACK).min(1.0 + RANGE_SLACK - value);
    Ok(TransformResult {
        value,
        abs_err_estimate: abs_err.abs().min(room.max(0.0)),
        truncation_point,
        n_evals,
        backend,
    })
}

fn closed(value: f64) -> Result<TransformResult> {
    finish(value, 4.0 * f64::EPSILON * value.abs(), f64::NAN, 0, Backend::ClosedForm)
}

fn check_rate_matches(wfs: &WFunctions, q: f64) -> Result<()> {
    let wq = wfs.pair.q();
    if (wq - q).abs() > 1e-12 * (1.0 + q.abs()) {
        return Err(invalid(format!("W-functions were built at rate {wq}, query asks for {q}")));
    }
    Ok(())
}

#[inline]
fn in_domain(wfs: &WFunctions, pts: &[f64]) -> Result<()> {
    let d = wfs.domain();
    for &x in pts {
        d.check(x)?;
    }
    Ok(())
}

/// Hazard and density of the first-hitting transform at `u`.
#[inline]
fn hitting_kernel(scale: &ScaleFunction, wfs: &WFunctions, u: f64, z: f64, b: f64) -> Result<KernelSample> {
    in_domain(wfs, &[u, z, b])?;
    let p = &wfs.pair;
    let (lpz, lmz, lpb, lmb) = (p.ln_phi_plus(z), p.ln_phi_minus(z), p.ln_phi_plus(b), p.ln_phi_minus(b));
    let lr = lpb + lmz - lpz - lmb;
    let one_m_rho = -lr.exp_m1();
    let r = (p.psi_plus(z) + p.psi_minus(z) * lr.exp()) / one_m_rho;
    let s = scale.scaled_diff(u, z);
    let d = 1.0 + s * r;
    let lsu = scale.ln_s_prime(u);
    let kappa = (lsu - scale.ln_s_prime(z)).exp() * r / d;
    let ln_w = lpz + lmb + one_m_rho.ln() - wfs.ln_w();
    Ok(KernelSample { kappa, ln_f: lsu - ln_w - d.ln() })
}

fn hitting_sweep(
    spec: &DiffusionSpec,
    scale: &ScaleFunction,
    wfs: &WFunctions,
    refr: &RefractionSet,
    y: f64,
    a: f64,
    cfg: &SweepConfig,
) -> Result<SweepOutput> {
    exp_weighted_sweep(spec.x0, cfg, false, |u| {
        hitting_kernel(scale, wfs, u, refr.g.eval(u) - y, refr.h.eval(u) - a)
    })
}

fn validate_hitting(spec: &DiffusionSpec, refr: &RefractionSet, y: f64, a: f64, q: f64) -> Result<()> {
    OccupationQuery::hitting(y, a, q).check_hitting(spec.x0)?;
    if (refr.x0 - spec.x0).abs() > 1e-12 {
        return Err(precondition("refraction set and diffusion start at different points"));
    }
    refr.validate(spec.x0 + 10.0, true)
}

/// `E_x[e^{-q G}; τ_{h,a} < ∞]` for the time `G` that `U = X - g(X̄)` spends
/// below `-y` before `V = X - h(X̄)` first reaches `-a`.
pub fn lt_occupation_until_hitting(
    spec: &DiffusionSpec,
    scale: &ScaleFunction,
    wfs: &WFunctions,
    refr: &RefractionSet,
    y: f64,
    a: f64,
    q: f64,
) -> Result<TransformResult> {
    occupation_until_hitting_with(spec, scale, wfs, refr, y, a, q, &SweepConfig::default())
}

#[allow(clippy::too_many_arguments)]
pub fn occupation_until_hitting_with(
    spec: &DiffusionSpec,
    scale: &ScaleFunction,
    wfs: &WFunctions,
    refr: &RefractionSet,
    y: f64,
    a: f64,
    q: f64,
    cfg: &SweepConfig,
) -> Result<TransformResult> {
    validate_hitting(spec, refr, y, a, q)?;
    check_rate_matches(wfs, q)?;
    let out = hitting_sweep(spec, scale, wfs, refr, y, a, cfg)?;
    finish(out.integral, out.abs_err, out.truncation_point, out.n_evals, Backend::Quadrature)
}

/// `E_x[e^{-q τ_{h,a}}]` for the first time `X - h(X̄)` falls to `-a`.
pub fn lt_hitting_time(
    spec: &DiffusionSpec,
    scale: &ScaleFunction,
    wfs: &WFunctions,
    h: &crate::func::Func,
    a: f64,
    q: f64,
) -> Result<TransformResult> {
    if !(q >= 0.0) {
        return Err(precondition(format!("q = {q} must be nonnegative")));
    }
    if !(a > -spec.x0) {
        return Err(precondition(format!("need a > -x0, got a = {a}")));
    }
    check_rate_matches(wfs, q)?;
    let out = exp_weighted_sweep(spec.x0, &SweepConfig::default(), false, |u| {
        let b = h.eval(u) - a;
        in_domain(wfs, &[u, b])?;
        Ok(KernelSample { kappa: wfs.ratio(u, b), ln_f: scale.ln_s_prime(u) - wfs.ln_w_value(u, b) })
    })?;
    finish(out.integral, out.abs_err, out.truncation_point, out.n_evals, Backend::Quadrature)
}

/// Occupation below `-y` before the first passage below `-a`, without
/// refraction (`h = g = 0`), in closed form.
pub fn lt_occupation_no_refraction(
    spec: &DiffusionSpec,
    scale: &ScaleFunction,
    wfs: &WFunctions,
    y: f64,
    a: f64,
) -> Result<TransformResult> {
    OccupationQuery::hitting(y, a, wfs.pair.q()).check_hitting(spec.x0)?;
    in_domain(wfs, &[spec.x0, -y, -a])?;
    let r = wfs.ratio(-y, -a);
    let ln_w = wfs.ln_w_value(-y, -a);
    let lsz = scale.ln_s_prime(-y);
    let tx = scale.tail_ratio(spec.x0, -y);
    let ln_v = if tx.is_infinite() {
        lsz - ln_w - r.ln()
    } else {
        let ty = scale.tail_ratio(-y, -y);
        tx.ln() + lsz - ln_w - (ty * r).ln_1p()
    };
    closed(ln_v.exp())
}

/// Hazard and killing density of the exponential-clock transform at `u`.
#[inline]
fn exp_clock_kernel(
    scale: &ScaleFunction,
    wfs: &WFunctions,
    pair_qp: &EigenPair,
    ln_weight: f64,
    u: f64,
    z: f64,
) -> Result<KernelSample> {
    in_domain(wfs, &[u, z])?;
    pair_qp.domain().check(z)?;
    let p = &wfs.pair;
    let big_a = pair_qp.psi_plus(z);
    let (lpz, lmz, lpu, lmu) = (p.ln_phi_plus(z), p.ln_phi_minus(z), p.ln_phi_plus(u), p.ln_phi_minus(u));
    let lr = (lpz + lmu - lpu - lmz).min(0.0);
    let rho = lr.exp();
    let (ppz, pmz, ppu, pmu) = (p.psi_plus(z), p.psi_minus(z), p.psi_plus(u), p.psi_minus(u));
    let hn = ppz * rho + pmz + big_a * (-lr.exp_m1());
    let num = ppu * pmz - ppz * pmu * rho + big_a * (ppu + pmu * rho);
    let ln_f = ln_weight + big_a.ln() + wfs.ln_w() + scale.ln_s_prime(u) - lpu - lmz - hn.ln();
    Ok(KernelSample { kappa: num / hn, ln_f })
}

/// Returns `(e^{-I(∞)}, ∫ e^{-I} f)` for the exponential-clock transform.
fn exp_clock_sweep(
    spec: &DiffusionSpec,
    scale: &ScaleFunction,
    wfs: &WFunctions,
    refr: &RefractionSet,
    y: f64,
    q: f64,
    p: f64,
    cfg: &SweepConfig,
) -> Result<(f64, SweepOutput)> {
    let pair_qp = eigenpair(spec, q + p)?;
    let ln_weight = (p / (q + p)).ln();
    let out = exp_weighted_sweep(spec.x0, cfg, true, |u| {
        exp_clock_kernel(scale, wfs, &pair_qp, ln_weight, u, refr.g.eval(u) - y)
    })?;
    Ok(((-out.exponent).exp(), out))
}

fn validate_exp(spec: &DiffusionSpec, refr: &RefractionSet, y: f64, q: f64, p: f64) -> Result<()> {
    OccupationQuery::exp_clock(y, q, p).check_exp_clock(spec.x0)?;
    if (refr.x0 - spec.x0).abs() > 1e-12 {
        return Err(precondition("refraction set and diffusion start at different points"));
    }
    refr.validate(spec.x0 + 10.0, false)
}

/// `E_x[e^{-p O}]` for the time `O` that `U = X - g(X̄)` spends below `-y`
/// before an independent exponential time of rate `q`.
pub fn lt_occupation_until_exp(
    spec: &DiffusionSpec,
    scale: &ScaleFunction,
    wfs: &WFunctions,
    refr: &RefractionSet,
    y: f64,
    q: f64,
    p: f64,
) -> Result<TransformResult> {
    occupation_until_exp_with(spec, scale, wfs, refr, y, q, p, &SweepConfig::default())
}

#[allow(clippy::too_many_arguments)]
pub fn occupation_until_exp_with(
    spec: &DiffusionSpec,
    scale: &ScaleFunction,
    wfs: &WFunctions,
    refr: &RefractionSet,
    y: f64,
    q: f64,
    p: f64,
    cfg: &SweepConfig,
) -> Result<TransformResult> {
    validate_exp(spec, refr, y, q, p)?;
    check_rate_matches(wfs, q)?;
    let (surv, out) = exp_clock_sweep(spec, scale, wfs, refr, y, q, p, cfg)?;
    let value = 1.0 - surv - out.integral;
    finish(value, out.abs_err + surv, out.truncation_point, out.n_evals, Backend::Quadrature)
}

/// `E_x[e^{-p ∫_0^{e_q} 1{X_t < b} dt}]` in closed form, on either side of `b`.
pub fn lt_occupation_below_level_exp(
    spec: &DiffusionSpec,
    _scale: &ScaleFunction,
    wfs: &WFunctions,
    b_level: f64,
    q: f64,
    p: f64,
) -> Result<TransformResult> {
    if !(q > 0.0) || !(p > 0.0) {
        return Err(precondition(format!("need q > 0 and p > 0, got q = {q}, p = {p}")));
    }
    check_rate_matches(wfs, q)?;
    let pq = &wfs.pair;
    let pqp = eigenpair(spec, q + p)?;
    let x = spec.x0;
    in_domain(wfs, &[x, b_level])?;
    let big_a = pqp.psi_plus(b_level);
    let share = big_a / (big_a + pq.psi_minus(b_level));
    let wp = p / (q + p);
    let value = if x >= b_level {
        1.0 - wp * share * (pq.ln_phi_minus(x) - pq.ln_phi_minus(b_level)).exp()
    } else {
        wp * (pqp.ln_phi_plus(x) - pqp.ln_phi_plus(b_level)).exp() * (1.0 - share) + q / (q + p)
    };
    closed(value)
}

/// `E_x[e^{-q τ̂_ω}]` for the bankruptcy time with constant rate `ω`, the
/// after-tax surplus `U = X - X̄ + γ̄(X̄)` and red zone `U < -y`.
pub fn lt_bankruptcy_tax(
    spec: &DiffusionSpec,
    scale: &ScaleFunction,
    wfs: &WFunctions,
    refr: &RefractionSet,
    y: f64,
    q: f64,
    omega: f64,
) -> Result<TransformResult> {
    bankruptcy_tax_with(spec, scale, wfs, refr, y, q, omega, &SweepConfig::default())
}

#[allow(clippy::too_many_arguments)]
pub fn bankruptcy_tax_with(
    spec: &DiffusionSpec,
    scale: &ScaleFunction,
    wfs: &WFunctions,
    refr: &RefractionSet,
    y: f64,
    q: f64,
    omega: f64,
    cfg: &SweepConfig,
) -> Result<TransformResult> {
    if refr.gamma.is_none() {
        return Err(precondition("bankruptcy transform needs a refraction built from a tax rate"));
    }
    OccupationQuery::bankruptcy(y, q, omega).check_bankruptcy(spec.x0)?;
    validate_exp(spec, refr, y, q, omega)?;
    check_rate_matches(wfs, q)?;
    let (surv, out) = exp_clock_sweep(spec, scale, wfs, refr, y, q, omega, cfg)?;
    finish(surv + out.integral, out.abs_err + surv, out.truncation_point, out.n_evals, Backend::Quadrature)
}

/// `E_x[e^{-q ∫_0^{τ_{h,a}} b²(X_t) 1{U_t < -y} dt}; τ_{h,a} < ∞]`.
pub fn lt_weighted_occupation(
    spec: &DiffusionSpec,
    scale: &ScaleFunction,
    refr: &RefractionSet,
    y: f64,
    a: f64,
    q: f64,
    b: &Weight,
) -> Result<TransformResult> {
    validate_hitting(spec, refr, y, a, q)?;
    let pair = eigenpair_weighted(spec, q, b)?;
    let wfs = w_functions(pair, scale.clone());
    let out = hitting_sweep(spec, scale, &wfs, refr, y, a, &SweepConfig::default())?;
    finish(out.integral, out.abs_err, out.truncation_point, out.n_evals, Backend::Quadrature)
}

fn bm_gamma(delta: f64, sigma: f64, q: f64) -> f64 {
    (delta * delta + 2.0 * q / (sigma * sigma)).sqrt()
}

/// `ln(γ cosh(γd) + k sinh(γd))`, valid for `γ + k > 0`, `d >= 0`.
fn ln_cosh_sinh(gamma: f64, k: f64, d: f64) -> f64 {
    let e = (-2.0 * gamma * d).exp();
    gamma * d - std::f64::consts::LN_2 + ((gamma + k) + (gamma - k) * e).ln()
}

fn check_bm_tax(delta: f64, sigma: f64, c: f64) -> Result<()> {
    if !(sigma > 0.0) || delta == 0.0 || !delta.is_finite() {
        return Err(invalid("need sigma > 0 and a nonzero drift"));
    }
    if !(0.0..1.0).contains(&c) {
        return Err(invalid(format!("tax rate {c} outside [0, 1)")));
    }
    Ok(())
}

/// Occupation below `-y` before the after-tax surplus `X - cX̄` first falls
/// to `-a`, for Brownian motion with drift started at 0 under a constant
/// tax rate `c`. Closed form at `c = 0`, one-dimensional quadrature otherwise.
pub fn lt_occupation_bm_tax(delta: f64, sigma: f64, c: f64, y: f64, a: f64, q: f64) -> Result<TransformResult> {
    check_bm_tax(delta, sigma, c)?;
    if c == 0.0 {
        if !(0.0 <= y && y < a) || !(q >= 0.0) {
            return Err(precondition("need 0 <= y < a and q >= 0"));
        }
        let g = bm_gamma(delta, sigma, q);
        let d = a - y;
        let ln_v = g.ln() - delta * (a + y) - ln_cosh_sinh(g, delta, d);
        return closed(ln_v.exp());
    }
    occupation_bm_tax_quadrature(delta, sigma, c, y, a, q)
}

/// The quadrature representation of [`lt_occupation_bm_tax`], also at `c = 0`.
pub fn occupation_bm_tax_quadrature(delta: f64, sigma: f64, c: f64, y: f64, a: f64, q: f64) -> Result<TransformResult> {
    check_bm_tax(delta, sigma, c)?;
    if !(0.0 <= y && y < a) || !(q >= 0.0) {
        return Err(precondition("need 0 <= y < a and q >= 0"));
    }
    let g = bm_gamma(delta, sigma, q);
    let d = a - y;
    let gc = g / (g * d).tanh();
    let big_b = (gc + delta) / (gc - delta);
    let k = 1.0 / (1.0 - c);
    let ln_pref = (2.0 * delta.abs() * g).ln() - delta * d - ln_cosh_sinh(g, -delta, d);
    let ln_t0 = big_b.ln() + 2.0 * delta * y;
    let ln_t = move |m: f64| ln_t0 + 2.0 * delta * ((1.0 - c) * m);
    let (f, decay): (Box<dyn Fn(f64) -> f64>, f64) = if delta > 0.0 {
        let l0 = (-(-ln_t0).exp()).ln_1p();
        (
            Box::new(move |m: f64| {
                let lt = ln_t(m);
                let inv = (-lt).exp();
                let ln_tm1 = lt + (-inv).ln_1p();
                (-ln_tm1 + k * (l0 - (-inv).ln_1p()) + ln_pref).exp()
            }),
            2.0 * delta * (1.0 - c),
        )
    } else {
        let l0 = (-ln_t0.exp()).ln_1p();
        (
            Box::new(move |m: f64| {
                let l1 = (-ln_t(m).exp()).ln_1p();
                (2.0 * delta * m - l1 + k * (l0 - l1) + ln_pref).exp()
            }),
            -2.0 * delta,
        )
    };
    let qd = integrate_to_infinity(f, 0.0, 1.0 / decay, 1e-15, 1e-12)?;
    finish(qd.value, qd.abs_err, f64::INFINITY, qd.n_evals, Backend::Quadrature)
}

/// Bankruptcy-time transform for Brownian motion with drift started at 0,
/// constant tax rate `c`, red zone `U < -y` and bankruptcy rate `ω`.
/// Closed form at `c = 0`, one-dimensional quadrature otherwise.
pub fn lt_bankruptcy_bm_tax(delta: f64, sigma: f64, c: f64, y: f64, q: f64, omega: f64) -> Result<TransformResult> {
    check_bm_tax(delta, sigma, c)?;
    if c == 0.0 {
        if !(y >= 0.0) || !(q > 0.0) || !(omega > 0.0) {
            return Err(precondition("need y >= 0, q > 0 and omega > 0"));
        }
        let g = bm_gamma(delta, sigma, q);
        let gp = bm_gamma(delta, sigma, q + omega);
        let v = omega / (q + omega) * (gp - delta) / (g + gp) * (-(g + delta) * y).exp();
        return closed(v);
    }
    bankruptcy_bm_tax_quadrature(delta, sigma, c, y, q, omega)
}

/// The quadrature representation of [`lt_bankruptcy_bm_tax`], also at `c = 0`.
pub fn bankruptcy_bm_tax_quadrature(
    delta: f64,
    sigma: f64,
    c: f64,
    y: f64,
    q: f64,
    omega: f64,
) -> Result<TransformResult> {
    check_bm_tax(delta, sigma, c)?;
    if !(y >= 0.0) || !(q > 0.0) || !(omega > 0.0) {
        return Err(precondition("need y >= 0, q > 0 and omega > 0"));
    }
    let g = bm_gamma(delta, sigma, q);
    let gp = bm_gamma(delta, sigma, q + omega);
    let k = 1.0 / (1.0 - c);
    // ln F(v) - γv for F(v) = γ cosh(γv) + γ' sinh(γv)
    let ln_rest = move |v: f64| (0.5 * (g + gp) + 0.5 * (g - gp) * (-2.0 * g * v).exp()).ln();
    let rest_y = ln_rest(y);
    let ln_pref = (omega / (q + omega)).ln() + (gp - delta).ln() + g.ln() - delta * y;
    let f = move |m: f64| {
        let v = (1.0 - c) * m + y;
        let diff = -g * (1.0 - c) * m + rest_y - ln_rest(v);
        let ln_fv = g * v + ln_rest(v);
        (ln_pref + c * delta * m + k * diff - ln_fv).exp()
    };
    let decay = (2.0 - c) * g - c * delta;
    let qd = integrate_to_infinity(f, 0.0, 1.0 / decay, 1e-15, 1e-12)?;
    finish(qd.value, qd.abs_err, f64::INFINITY, qd.n_evals, Backend::Quadrature)
}

/// Transform families addressable from batch files.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Operation {
    OccupationUntilHitting,
    HittingTime,
    OccupationUntilExp,
    OccupationBelowLevelExp,
    BankruptcyTax,
    WeightedOccupation,
    OccupationBmTax,
    BankruptcyBmTax,
}

impl Operation {
    pub const ALL: [Operation; 8] = [
        Operation::OccupationUntilHitting,
        Operation::HittingTime,
        Operation::OccupationUntilExp,
        Operation::OccupationBelowLevelExp,
        Operation::BankruptcyTax,
        Operation::WeightedOccupation,
        Operation::OccupationBmTax,
        Operation::BankruptcyBmTax,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Operation::OccupationUntilHitting => "occupation_until_hitting",
            Operation::HittingTime => "hitting_time",
            Operation::OccupationUntilExp => "occupation_until_exp",
            Operation::OccupationBelowLevelExp => "occupation_below_level_exp",
            Operation::BankruptcyTax => "bankruptcy_tax",
            Operation::WeightedOccupation => "weighted_occupation",
            Operation::OccupationBmTax => "occupation_bm_tax",
            Operation::BankruptcyBmTax => "bankruptcy_bm_tax",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Operation::ALL
            .iter()
            .copied()
            .find(|op| op.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown operation '{s}'")))
    }
}

/// A model bound to a refraction, evaluating operations on queries.
#[derive(Debug, Clone)]
pub struct Evaluator {
    pub spec: DiffusionSpec,
    pub scale: ScaleFunction,
    pub refr: RefractionSet,
    pub cfg: SweepConfig,
}

/// A single batch record: an operation with its query and optional level.
#[derive(Debug, Clone)]
pub struct BatchQuery {
    pub op: Operation,
    pub query: OccupationQuery,
    /// Level `b` for [`Operation::OccupationBelowLevelExp`].
    pub level: f64,
}

impl Evaluator {
    pub fn new(spec: DiffusionSpec, refr: RefractionSet) -> Result<Self> {
        let scale = scale(&spec)?;
        Ok(Evaluator { spec, scale, refr, cfg: SweepConfig::default() })
    }

    pub fn wfs(&self, q: f64) -> Result<WFunctions> {
        Ok(w_functions(eigenpair(&self.spec, q)?, self.scale.clone()))
    }

    fn constant_tax(&self) -> Result<f64> {
        match &self.refr.gamma {
            Some(TaxRate::Constant(c)) => Ok(*c),
            _ => Err(precondition("Brownian tax fast path needs a constant tax rate")),
        }
    }

    fn bm_params(&self) -> Result<(f64, f64)> {
        match self.spec.kind {
            crate::diffusion::AnalyticKind::BrownianWithDrift { mu, sigma } if self.spec.x0 == 0.0 => {
                Ok((mu / (sigma * sigma), sigma))
            }
            _ => Err(precondition("Brownian tax fast path needs a Brownian model started at 0")),
        }
    }

    pub fn evaluate(&self, bq: &BatchQuery) -> Result<TransformResult> {
        let q = &bq.query;
        let (spec, sc, refr, cfg) = (&self.spec, &self.scale, &self.refr, &self.cfg);
        match bq.op {
            Operation::OccupationUntilHitting => {
                occupation_until_hitting_with(spec, sc, &self.wfs(q.q)?, refr, q.y, q.a, q.q, cfg)
            }
            Operation::HittingTime => lt_hitting_time(spec, sc, &self.wfs(q.q)?, &refr.h, q.a, q.q),
            Operation::OccupationUntilExp => occupation_until_exp_with(spec, sc, &self.wfs(q.q)?, refr, q.y, q.q, q.p, cfg),
            Operation::OccupationBelowLevelExp => lt_occupation_below_level_exp(spec, sc, &self.wfs(q.q)?, bq.level, q.q, q.p),
            Operation::BankruptcyTax => bankruptcy_tax_with(spec, sc, &self.wfs(q.q)?, refr, q.y, q.q, q.omega, cfg),
            Operation::WeightedOccupation => lt_weighted_occupation(spec, sc, refr, q.y, q.a, q.q, &q.b),
            Operation::OccupationBmTax => {
                let (d, s) = self.bm_params()?;
                lt_occupation_bm_tax(d, s, self.constant_tax()?, q.y, q.a, q.q)
            }
            Operation::BankruptcyBmTax => {
                let (d, s) = self.bm_params()?;
                lt_bankruptcy_bm_tax(d, s, self.constant_tax()?, q.y, q.q, q.omega)
            }
        }
    }

    /// Evaluate a batch in parallel; results keep the input order.
    pub fn evaluate_batch(&self, queries: &[BatchQuery]) -> Vec<Result<TransformResult>> {
        queries.par_iter().map(|bq| self.evaluate(bq)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::make_brownian;

    fn bm() -> (DiffusionSpec, ScaleFunction) {
        let spec = make_brownian(0.5, 1.0, 0.0).unwrap();
        let sc = scale(&spec).unwrap();
        (spec, sc)
    }

    #[test]
    fn no_tax_closed_form_spot_value() {
        let v = lt_occupation_bm_tax(0.5, 1.0, 0.0, 0.0, 1.0, 1.0).unwrap();
        let e = 1.5 * (-0.5f64).exp() / (1.5 * 1.5f64.cosh() + 0.5 * 1.5f64.sinh());
        assert!((v.value - e).abs() < 1e-15);
        assert!((v.value - 0.198_073).abs() < 1e-6);
        assert_eq!(v.backend, Backend::ClosedForm);
    }

    #[test]
    fn general_path_matches_no_refraction_closed_form() {
        let (spec, sc) = bm();
        let wfs = w_functions(eigenpair(&spec, 1.0).unwrap(), sc.clone());
        let r = lt_occupation_until_hitting(&spec, &sc, &wfs, &RefractionSet::zero(0.0), 0.0, 1.0, 1.0).unwrap();
        assert!((r.value - 0.198_072_207_584_526_7).abs() < 1e-9, "{}", r.value);
        let c = lt_occupation_no_refraction(&spec, &sc, &wfs, 0.0, 1.0).unwrap();
        assert!((r.value - c.value).abs() < 1e-9, "{} vs {}", r.value, c.value);
    }

    #[test]
    fn exp_clock_full_drawdown_is_clock_transform() {
        let (spec, sc) = bm();
        let wfs = w_functions(eigenpair(&spec, 1.0).unwrap(), sc.clone());
        let refr = RefractionSet::linear(1.0, 1.0, 0.0);
        let r = lt_occupation_until_exp(&spec, &sc, &wfs, &refr, 0.0, 1.0, 2.0).unwrap();
        assert!((r.value - 1.0 / 3.0).abs() < 1e-9, "{}", r.value);
    }

    #[test]
    fn bankruptcy_no_tax_spot_value() {
        let v = lt_bankruptcy_bm_tax(0.5, 1.0, 0.0, 0.0, 1.0, 2.0).unwrap();
        assert!((v.value - 1.0 / 3.0).abs() < 1e-15);
        let qd = bankruptcy_bm_tax_quadrature(0.5, 1.0, 0.0, 0.0, 1.0, 2.0).unwrap();
        assert!((qd.value - 1.0 / 3.0).abs() < 1e-10, "{}", qd.value);
    }

    #[test]
    fn operation_names_round_trip() {
        for op in Operation::ALL {
            assert_eq!(Operation::parse(op.name()).unwrap(), op);
        }
        assert!(Operation::parse("nope").is_err());
    }
}
