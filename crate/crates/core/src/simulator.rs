//! Monte Carlo path simulation of the refracted processes, used as an
//! independent check of the transforms.
//!
//! Brownian motion with drift is stepped exactly, with bridge sampling of
//! the running maximum and of barrier crossings inside a step. Far from
//! every active level the step grows, since no event can occur there.
//! General diffusions use uniform Euler–Maruyama steps. Each path has its
//! own ChaCha stream keyed by `(seed, path index)`, so results do not depend
//! on the number of worker threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;

use crate::diffusion::{AnalyticKind, DiffusionSpec, OccupationQuery, RefractionSet, ScaleFunction, Weight};
use crate::error::{invalid, Result};
use crate::func::Func;

/// Simulation controls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathConfig {
    pub dt: f64,
    pub horizon: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub bridge_correction: bool,
    /// Lengthen exact Brownian steps away from all active levels. Only
    /// honoured together with `bridge_correction`, which supplies the
    /// in-step crossing test.
    pub adaptive: bool,
    /// Longest step the adaptive rule may take.
    pub max_step: f64,
    /// Censored fraction above which a warning is attached.
    pub censor_warning: f64,
}

impl PathConfig {
    pub fn new(dt: f64, horizon: f64, n_paths: usize, seed: u64) -> Self {
        PathConfig {
            dt,
            horizon,
            n_paths,
            seed,
            bridge_correction: false,
            adaptive: true,
            max_step: 1.0,
            censor_warning: 0.01,
        }
    }

    pub fn with_horizon(mut self, horizon: f64) -> Self {
        self.horizon = horizon;
        self
    }

    /// Default horizon `50/|δ|` for Brownian models and 100 otherwise.
    pub fn default_horizon(spec: &DiffusionSpec) -> f64 {
        match spec.delta() {
            Some(d) => 50.0 / d.abs(),
            None => 100.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !(self.horizon > 0.0) || self.dt > self.horizon {
            return Err(invalid(format!("need 0 < dt <= horizon, got dt = {}, horizon = {}", self.dt, self.horizon)));
        }
        if self.n_paths == 0 {
            return Err(invalid("n_paths must be at least 1"));
        }
        if !(self.max_step >= self.dt) {
            return Err(invalid("max_step must be at least dt"));
        }
        Ok(())
    }
}

/// A Monte Carlo mean with its standard error.
#[derive(Debug, Clone, PartialEq)]
pub struct SimEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_censored: usize,
    pub n_paths: usize,
    pub warnings: Vec<String>,
}

/// Which functional a run estimates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target {
    /// `E[e^{-q G}; τ_{h,a} < ∞]`.
    HittingOccupation,
    /// `E[e^{-p O}]` with an exponential clock of rate `q`.
    ExpClockOccupation,
    /// `E[e^{-q τ̂_ω}]`.
    BankruptcyTime,
    /// `E[e^{-q τ_{h,a}}]`.
    HittingTime,
    /// `E[e^{-q ∫ b²(X) 1{U < -y} dt}; τ_{h,a} < ∞]`.
    WeightedOccupation,
    /// `E[e^{-q T}]` for `T` the first time the occupation below `-y`
    /// exceeds `grace` or `V` reaches `-a`, whichever is first.
    HybridBankruptcy { grace: f64 },
}

impl Target {
    fn uses_barrier(&self) -> bool {
        matches!(
            self,
            Target::HittingOccupation | Target::HittingTime | Target::WeightedOccupation | Target::HybridBankruptcy { .. }
        )
    }

    fn uses_level(&self) -> bool {
        !matches!(self, Target::HittingTime)
    }
}

/// Negligible-payoff cutoff for the exponent of the discount.
const EXP_CUTOFF: f64 = 40.0;

#[derive(Debug, Clone)]
enum Dynamics {
    Brownian { mu: f64, sigma: f64 },
    Euler { mu: Func, sigma: Func },
}

/// One step of a path, offered to observers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    pub x: f64,
    pub xbar: f64,
    pub u: f64,
    pub v: f64,
    pub occupation: f64,
}

#[derive(Debug, Clone, Copy)]
struct Outcome {
    payoff: f64,
    censored: bool,
    /// Event time, infinite when the event was not reached.
    tau: f64,
}

struct Runner<'a> {
    dyn_: Dynamics,
    refr: &'a RefractionSet,
    x0: f64,
    y: f64,
    a: f64,
    q: f64,
    p: f64,
    omega: f64,
    weight: Option<&'a Weight>,
    target: Target,
    cfg: PathConfig,
}

#[inline]
fn bridge_max<R: Rng>(rng: &mut R, x0: f64, x1: f64, sigma: f64, dt: f64) -> f64 {
    let u: f64 = 1.0 - rng.gen::<f64>();
    let d = x1 - x0;
    0.5 * (x0 + x1 + (d * d - 2.0 * sigma * sigma * dt * u.ln()).sqrt())
}

impl<'a> Runner<'a> {
    fn new(
        spec: &DiffusionSpec,
        refr: &'a RefractionSet,
        query: &'a OccupationQuery,
        target: Target,
        cfg: PathConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let x0 = spec.x0;
        match target {
            Target::HittingOccupation | Target::WeightedOccupation | Target::HybridBankruptcy { .. } => {
                query.check_hitting(x0)?
            }
            Target::HittingTime => {
                if !(query.q >= 0.0) || !(query.a > -x0) {
                    return Err(invalid("hitting-time target needs q >= 0 and a > -x0"));
                }
            }
            Target::ExpClockOccupation => {
                // any finite level is simulable, including ones above the start
                if !(query.q > 0.0) || !(query.p > 0.0) || !query.y.is_finite() {
                    return Err(invalid("exp-clock target needs q > 0, p > 0 and a finite level"));
                }
            }
            Target::BankruptcyTime => query.check_bankruptcy(x0)?,
        }
        if let Target::HybridBankruptcy { grace } = target {
            if !(grace > 0.0) {
                return Err(invalid("grace period must be positive"));
            }
        }
        let dyn_ = match spec.kind {
            AnalyticKind::BrownianWithDrift { mu, sigma } => Dynamics::Brownian { mu, sigma },
            AnalyticKind::GeneralNumeric => Dynamics::Euler { mu: spec.mu.clone(), sigma: spec.sigma.clone() },
        };
        Ok(Runner {
            dyn_,
            refr,
            x0,
            y: query.y,
            a: query.a,
            q: query.q,
            p: query.p,
            omega: query.omega,
            weight: match target {
                Target::WeightedOccupation => Some(&query.b),
                _ => None,
            },
            target,
            cfg,
        })
    }

    /// Step length for the exact Brownian scheme at distance `d` from the
    /// nearest active level: `7σ√Δ + |μ|Δ <= d/2`.
    #[inline]
    fn step_for(&self, mu: f64, sigma: f64, d: f64) -> f64 {
        let base = self.cfg.dt;
        if !(self.cfg.adaptive && self.cfg.bridge_correction) || !d.is_finite() {
            return if d.is_finite() { base } else { self.cfg.max_step };
        }
        let half = 0.5 * d;
        let m = mu.abs();
        let s = if m > 0.0 {
            (-7.0 * sigma + (49.0 * sigma * sigma + 4.0 * m * half).sqrt()) / (2.0 * m)
        } else {
            half / (7.0 * sigma)
        };
        (s * s).clamp(base, self.cfg.max_step)
    }

    fn run<R: Rng, O: FnMut(TraceRow)>(&self, rng: &mut R, mut observe: O) -> Outcome {
        let tgt = self.target;
        let uses_barrier = tgt.uses_barrier();
        let uses_level = tgt.uses_level();
        let clock = match tgt {
            Target::ExpClockOccupation => {
                let e: f64 = rng.sample(Exp1);
                e / self.q
            }
            _ => f64::INFINITY,
        };
        let threshold = match tgt {
            Target::BankruptcyTime => rng.sample::<f64, _>(Exp1),
            _ => f64::INFINITY,
        };
        let t_end = clock.min(self.cfg.horizon);
        let (g, h) = (&self.refr.g, &self.refr.h);
        let (y, a) = (self.y, self.a);
        let w2 = |x: f64| match self.weight {
            Some(b) => {
                let v = b.eval(x);
                v * v
            }
            None => 1.0,
        };

        let mut t = 0.0f64;
        let mut x = self.x0;
        let mut xbar = self.x0;
        let mut g_bar = g.eval(xbar);
        let mut h_bar = h.eval(xbar);
        let mut ind0 = if x - g_bar < -y { w2(x) } else { 0.0 };
        let mut occ = 0.0f64;
        let mut intensity = 0.0f64;
        observe(TraceRow { t, x, xbar, u: x - g_bar, v: x - h_bar, occupation: occ });

        loop {
            // discount already negligible
            let dead = match tgt {
                Target::HittingOccupation | Target::WeightedOccupation => self.q * occ > EXP_CUTOFF,
                Target::ExpClockOccupation => self.p * occ > EXP_CUTOFF,
                Target::HittingTime | Target::BankruptcyTime | Target::HybridBankruptcy { .. } => {
                    self.q * t > EXP_CUTOFF
                }
            };
            if dead {
                return Outcome { payoff: 0.0, censored: false, tau: f64::INFINITY };
            }
            if t >= t_end {
                return if clock <= self.cfg.horizon {
                    Outcome { payoff: (-self.p * occ).exp(), censored: false, tau: clock }
                } else {
                    Outcome { payoff: 0.0, censored: true, tau: f64::INFINITY }
                };
            }
            let level = g_bar - y;
            let barrier = h_bar - a;
            let (x1, xbar1, crossed, dt) = match &self.dyn_ {
                Dynamics::Brownian { mu, sigma } => {
                    let mut d = f64::INFINITY;
                    if uses_level {
                        d = d.min((x - level).abs());
                    }
                    if uses_barrier {
                        d = d.min(x - barrier);
                    }
                    let dt = self.step_for(*mu, *sigma, d).min(t_end - t);
                    let z: f64 = rng.sample(StandardNormal);
                    let x1 = x + mu * dt + sigma * dt.sqrt() * z;
                    let xbar1 = if self.cfg.bridge_correction {
                        xbar.max(bridge_max(rng, x, x1, *sigma, dt))
                    } else {
                        xbar.max(x1)
                    };
                    let mut crossed = false;
                    if uses_barrier && self.cfg.bridge_correction && x1 > barrier {
                        let pr = (-2.0 * (x - barrier) * (x1 - barrier) / (sigma * sigma * dt)).exp();
                        if pr > 1e-15 && rng.gen::<f64>() < pr {
                            crossed = true;
                        }
                    }
                    (x1, xbar1, crossed, dt)
                }
                Dynamics::Euler { mu, sigma } => {
                    let dt = self.cfg.dt.min(t_end - t);
                    let (m, s) = (mu.eval(x), sigma.eval(x));
                    let z: f64 = rng.sample(StandardNormal);
                    let x1 = x + m * dt + s * dt.sqrt() * z;
                    let xbar1 = if self.cfg.bridge_correction {
                        xbar.max(bridge_max(rng, x, x1, s, dt))
                    } else {
                        xbar.max(x1)
                    };
                    let mut crossed = false;
                    if uses_barrier && self.cfg.bridge_correction && x1 > barrier {
                        let pr = (-2.0 * (x - barrier) * (x1 - barrier) / (s * s * dt)).exp();
                        if pr > 1e-15 && rng.gen::<f64>() < pr {
                            crossed = true;
                        }
                    }
                    (x1, xbar1, crossed, dt)
                }
            };
            if xbar1 > xbar {
                g_bar = g.eval(xbar1);
                h_bar = h.eval(xbar1);
            }
            let ind1 = if x1 - g_bar < -y { w2(x1) } else { 0.0 };
            let d_occ = 0.5 * dt * (ind0 + ind1);
            let hit = uses_barrier && (crossed || x1 - h_bar <= -a);
            let t1 = t + dt;

            match tgt {
                Target::BankruptcyTime => {
                    let add = self.omega * d_occ;
                    if intensity + add > threshold {
                        let frac = (threshold - intensity) / add;
                        let tau = t + frac * dt;
                        return Outcome { payoff: (-self.q * tau).exp(), censored: false, tau };
                    }
                    intensity += add;
                }
                Target::HybridBankruptcy { grace } => {
                    if occ + d_occ > grace {
                        let frac = (grace - occ) / d_occ;
                        let tau = t + frac * dt;
                        return Outcome { payoff: (-self.q * tau).exp(), censored: false, tau };
                    }
                }
                _ => {}
            }
            occ += d_occ;
            t = t1;
            x = x1;
            xbar = xbar1;
            ind0 = ind1;
            observe(TraceRow { t, x, xbar, u: x - g_bar, v: x - h_bar, occupation: occ });
            if hit {
                // crossing inside the step: place it mid-step
                let tau = if crossed { t - 0.5 * dt } else { t };
                let payoff = match tgt {
                    Target::HittingOccupation | Target::WeightedOccupation => (-self.q * occ).exp(),
                    _ => (-self.q * tau).exp(),
                };
                return Outcome { payoff, censored: false, tau };
            }
        }
    }
}

fn path_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
struct KSum {
    s: f64,
    c: f64,
}

impl KSum {
    #[inline]
    fn add(&mut self, v: f64) {
        let t = self.s + v;
        if self.s.abs() >= v.abs() {
            self.c += (self.s - t) + v;
        } else {
            self.c += (v - t) + self.s;
        }
        self.s = t;
    }

    fn value(&self) -> f64 {
        self.s + self.c
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    sum: KSum,
    sum2: KSum,
    n: usize,
    censored: usize,
}

impl Moments {
    fn merge(mut self, o: &Moments) -> Moments {
        self.sum.add(o.sum.value());
        self.sum2.add(o.sum2.value());
        self.n += o.n;
        self.censored += o.censored;
        self
    }
}

const CHUNK: usize = 4096;

/// Run `n_paths` paths in fixed-size chunks and reduce the chunk moments in
/// chunk order, so the result is bitwise reproducible.
fn reduce_paths<F>(n_paths: usize, f: F) -> Moments
where
    F: Fn(u64) -> Outcome + Sync,
{
    let n_chunks = n_paths.div_ceil(CHUNK);
    let parts: Vec<Moments> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut m = Moments::default();
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(n_paths);
            for i in lo..hi {
                let o = f(i as u64);
                m.sum.add(o.payoff);
                m.sum2.add(o.payoff * o.payoff);
                m.n += 1;
                m.censored += o.censored as usize;
            }
            m
        })
        .collect();
    parts.iter().fold(Moments::default(), |acc, m| acc.merge(m))
}

fn estimate(m: &Moments, cfg: &PathConfig, censored_note: &str) -> SimEstimate {
    let n = m.n as f64;
    let mean = m.sum.value() / n;
    let mut warnings = Vec::new();
    let std_error = if m.n < 2 {
        warnings.push(format!("low power: {} path(s), standard error set to the bounded-payoff limit", m.n));
        0.5 / n.sqrt()
    } else {
        let var = (m.sum2.value() / n - mean * mean).max(0.0);
        (var / n).sqrt()
    };
    let frac = m.censored as f64 / n;
    if frac > cfg.censor_warning {
        warnings.push(format!(
            "{} of {} paths ({:.2}%) reached the horizon {} without the event; {censored_note}",
            m.censored,
            m.n,
            100.0 * frac,
            cfg.horizon
        ));
    }
    SimEstimate { mean, std_error, n_censored: m.censored, n_paths: m.n, warnings }
}

/// Estimate the transform named by `target` from `cfg.n_paths` paths.
///
/// Censored paths contribute zero: for the hitting targets they are paths
/// whose event was not observed by the horizon, which is where the mass of
/// a defective transform sits.
pub fn simulate_transform(
    spec: &DiffusionSpec,
    refr: &RefractionSet,
    query: &OccupationQuery,
    target: Target,
    cfg: &PathConfig,
) -> Result<SimEstimate> {
    let runner = Runner::new(spec, refr, query, target, *cfg)?;
    let m = reduce_paths(cfg.n_paths, |i| {
        let mut rng = path_rng(cfg.seed, i);
        runner.run(&mut rng, |_| {})
    });
    Ok(estimate(&m, cfg, "they count as zero"))
}

/// Per-step traces of the first `max_paths` paths.
pub fn trace_paths(
    spec: &DiffusionSpec,
    refr: &RefractionSet,
    query: &OccupationQuery,
    target: Target,
    cfg: &PathConfig,
    max_paths: usize,
) -> Result<Vec<Vec<TraceRow>>> {
    let runner = Runner::new(spec, refr, query, target, *cfg)?;
    Ok((0..max_paths.min(cfg.n_paths) as u64)
        .map(|i| {
            let mut rng = path_rng(cfg.seed, i);
            let mut rows = Vec::new();
            runner.run(&mut rng, |r| rows.push(r));
            rows
        })
        .collect())
}

/// CSV rendering of traces: `path,t,x,xbar,u,v,occupation`.
pub fn traces_csv(traces: &[Vec<TraceRow>]) -> String {
    let mut out = String::from("path,t,x,xbar,u,v,occupation\n");
    for (i, tr) in traces.iter().enumerate() {
        for r in tr {
            out.push_str(&format!(
                "{i},{:.11e},{:.11e},{:.11e},{:.11e},{:.11e},{:.11e}\n",
                r.t, r.x, r.xbar, r.u, r.v, r.occupation
            ));
        }
    }
    out
}

/// Empirical distribution function of the bankruptcy time at each `t` in
/// `t_grid`, with binomial standard errors.
pub fn simulate_bankruptcy_cdf(
    spec: &DiffusionSpec,
    refr: &RefractionSet,
    y: f64,
    omega: f64,
    t_grid: &[f64],
    cfg: &PathConfig,
) -> Result<Vec<SimEstimate>> {
    if t_grid.is_empty() || t_grid.iter().any(|t| !(*t > 0.0)) {
        return Err(invalid("t_grid must hold positive times"));
    }
    let t_max = t_grid.iter().cloned().fold(0.0, f64::max);
    // a vanishing discount rate keeps every path alive up to t_max
    let query = OccupationQuery::bankruptcy(y, 1e-300, omega);
    let mut c = *cfg;
    c.horizon = t_max;
    let runner = Runner::new(spec, refr, &query, Target::BankruptcyTime, c)?;
    let taus: Vec<f64> = {
        let n_chunks = cfg.n_paths.div_ceil(CHUNK);
        let parts: Vec<Vec<f64>> = (0..n_chunks)
            .into_par_iter()
            .map(|ch| {
                let lo = ch * CHUNK;
                let hi = (lo + CHUNK).min(cfg.n_paths);
                (lo..hi)
                    .map(|i| {
                        let mut rng = path_rng(cfg.seed, i as u64);
                        runner.run(&mut rng, |_| {}).tau
                    })
                    .collect()
            })
            .collect();
        parts.concat()
    };
    let n = taus.len() as f64;
    Ok(t_grid
        .iter()
        .map(|&t| {
            let k = taus.iter().filter(|&&tau| tau <= t).count() as f64;
            let p = k / n;
            SimEstimate {
                mean: p,
                std_error: (p * (1.0 - p) / n).sqrt().max(0.5 / n),
                n_censored: 0,
                n_paths: taus.len(),
                warnings: Vec::new(),
            }
        })
        .collect())
}

/// Supermartingale check of `Y_t = (s(X) - s(h(X̄) - a)) / (s(X̄) - s(h(X̄) - a))`
/// on `[0, τ_{h,a}]`, sampled on a regular observation grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LastPassageReport {
    pub times: Vec<f64>,
    pub mean_y: Vec<f64>,
    pub mean_increment: Vec<f64>,
    pub se_increment: Vec<f64>,
    /// Largest `increment / se` over the grid; positive values are rises.
    pub max_increment_z: f64,
    pub y0: f64,
    pub min_y: f64,
    pub max_y: f64,
    /// Mean of `Y` at the last simulation step before `τ`, over paths that hit.
    pub mean_y_before_tau: f64,
    /// Mean of `Y` at the step that detected `τ`, over paths that hit. It
    /// is positive only for crossings found by the bridge test.
    pub mean_y_at_tau: f64,
    pub n_hit: usize,
    pub n_paths: usize,
}

impl LastPassageReport {
    pub fn csv(&self) -> String {
        let mut out = String::from("t,mean_y,mean_increment,se_increment\n");
        for i in 0..self.times.len() {
            let (inc, se) = if i == 0 { (0.0, 0.0) } else { (self.mean_increment[i - 1], self.se_increment[i - 1]) };
            out.push_str(&format!("{:.11e},{:.11e},{:.11e},{:.11e}\n", self.times[i], self.mean_y[i], inc, se));
        }
        out
    }
}

pub fn last_passage_diagnostic(
    spec: &DiffusionSpec,
    scale: &ScaleFunction,
    refr: &RefractionSet,
    a: f64,
    cfg: &PathConfig,
    n_obs: usize,
) -> Result<LastPassageReport> {
    if n_obs == 0 {
        return Err(invalid("need at least one observation interval"));
    }
    let query = OccupationQuery::hitting(-spec.x0, a, 0.0);
    let runner = Runner::new(spec, refr, &query, Target::HittingTime, *cfg)?;
    let h = refr.h.clone();
    let y_of = |x: f64, xbar: f64| {
        let b = h.eval(xbar) - a;
        let sb = scale.s(b);
        (scale.s(x) - sb) / (scale.s(xbar) - sb)
    };
    let dt_obs = cfg.horizon / n_obs as f64;
    let times: Vec<f64> = (0..=n_obs).map(|k| k as f64 * dt_obs).collect();

    struct PathY {
        ys: Vec<f64>,
        before: f64,
        after: f64,
        hit: bool,
    }

    let per_path = |i: u64| -> PathY {
        let mut rng = path_rng(cfg.seed, i);
        let mut ys = vec![f64::NAN; n_obs + 1];
        ys[0] = 1.0;
        let mut k = 1usize;
        let mut last = 1.0;
        // Y at the previous and the current simulation step
        let mut prev = 1.0;
        let mut cur = 1.0;
        let out = runner.run(&mut rng, |r| {
            let yv = if r.v <= -a { 0.0 } else { y_of(r.x, r.xbar) };
            while k <= n_obs && times[k] <= r.t {
                ys[k] = last;
                k += 1;
            }
            last = yv;
            prev = cur;
            cur = yv;
        });
        let hit = out.tau.is_finite();
        let before = prev;
        // stopped at τ: Y stays at zero from there on
        let fill = if hit { 0.0 } else { last };
        for v in ys.iter_mut().skip(k) {
            *v = fill;
        }
        PathY { ys, before, after: cur, hit }
    };

    let n_chunks = cfg.n_paths.div_ceil(CHUNK);
    let parts: Vec<(Vec<KSum>, Vec<KSum>, Vec<KSum>, f64, f64, f64, f64, KSum, KSum, usize)> = (0..n_chunks)
        .into_par_iter()
        .map(|ch| {
            let lo = ch * CHUNK;
            let hi = (lo + CHUNK).min(cfg.n_paths);
            let mut sy = vec![KSum::default(); n_obs + 1];
            let mut sd = vec![KSum::default(); n_obs];
            let mut sd2 = vec![KSum::default(); n_obs];
            let (mut y0, mut ymin, mut ymax) = (1.0f64, f64::INFINITY, f64::NEG_INFINITY);
            let mut before = KSum::default();
            let mut after = KSum::default();
            let mut n_hit = 0usize;
            for i in lo..hi {
                let p = per_path(i as u64);
                y0 = y0.min(p.ys[0]);
                for (j, v) in p.ys.iter().enumerate() {
                    sy[j].add(*v);
                    ymin = ymin.min(*v);
                    ymax = ymax.max(*v);
                    if j > 0 {
                        let d = v - p.ys[j - 1];
                        sd[j - 1].add(d);
                        sd2[j - 1].add(d * d);
                    }
                }
                if p.hit {
                    n_hit += 1;
                    before.add(p.before);
                    after.add(p.after);
                }
            }
            (sy, sd, sd2, y0, ymin, ymax, 0.0, before, after, n_hit)
        })
        .collect();

    let n = cfg.n_paths as f64;
    let mut sy = vec![KSum::default(); n_obs + 1];
    let mut sd = vec![KSum::default(); n_obs];
    let mut sd2 = vec![KSum::default(); n_obs];
    let (mut y0, mut ymin, mut ymax) = (1.0f64, f64::INFINITY, f64::NEG_INFINITY);
    let (mut before, mut after, mut n_hit) = (KSum::default(), KSum::default(), 0usize);
    for p in &parts {
        for j in 0..=n_obs {
            sy[j].add(p.0[j].value());
        }
        for j in 0..n_obs {
            sd[j].add(p.1[j].value());
            sd2[j].add(p.2[j].value());
        }
        y0 = y0.min(p.3);
        ymin = ymin.min(p.4);
        ymax = ymax.max(p.5);
        before.add(p.7.value());
        after.add(p.8.value());
        n_hit += p.9;
    }
    let mean_increment: Vec<f64> = sd.iter().map(|s| s.value() / n).collect();
    let se_increment: Vec<f64> = sd2
        .iter()
        .zip(mean_increment.iter())
        .map(|(s2, m)| ((s2.value() / n - m * m).max(0.0) / n).sqrt())
        .collect();
    let max_increment_z = mean_increment
        .iter()
        .zip(se_increment.iter())
        .filter(|(_, se)| **se > 0.0)
        .map(|(m, se)| m / se)
        .fold(f64::NEG_INFINITY, f64::max);
    let nh = n_hit.max(1) as f64;
    Ok(LastPassageReport {
        times,
        mean_y: sy.iter().map(|s| s.value() / n).collect(),
        mean_increment,
        se_increment,
        max_increment_z,
        y0,
        min_y: ymin,
        max_y: ymax,
        mean_y_before_tau: before.value() / nh,
        mean_y_at_tau: after.value() / nh,
        n_hit,
        n_paths: cfg.n_paths,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::make_brownian;

    #[test]
    fn bridge_maximum_dominates_endpoints() {
        let mut rng = path_rng(1, 0);
        for _ in 0..1000 {
            let m = bridge_max(&mut rng, 0.1, -0.2, 1.0, 0.01);
            assert!(m >= 0.1);
        }
    }

    #[test]
    fn adaptive_step_respects_bounds() {
        let spec = make_brownian(0.5, 1.0, 0.0).unwrap();
        let refr = RefractionSet::zero(0.0);
        let q = OccupationQuery::hitting(0.0, 1.0, 1.0);
        let mut cfg = PathConfig::new(1e-4, 100.0, 1, 0);
        cfg.bridge_correction = true;
        let r = Runner::new(&spec, &refr, &q, Target::HittingOccupation, cfg).unwrap();
        assert_eq!(r.step_for(0.5, 1.0, 0.01), 1e-4);
        let big = r.step_for(0.5, 1.0, 10.0);
        assert!(7.0 * big.sqrt() + 0.5 * big <= 5.0 + 1e-12);
        assert!(r.step_for(0.5, 1.0, 1e6) <= 1.0);
    }

    #[test]
    fn same_seed_same_bits() {
        let spec = make_brownian(0.5, 1.0, 0.0).unwrap();
        let refr = RefractionSet::zero(0.0);
        let q = OccupationQuery::hitting(0.0, 1.0, 1.0);
        let cfg = PathConfig::new(1e-3, 50.0, 3000, 42);
        let a = simulate_transform(&spec, &refr, &q, Target::HittingOccupation, &cfg).unwrap();
        let b = simulate_transform(&spec, &refr, &q, Target::HittingOccupation, &cfg).unwrap();
        assert_eq!(a.mean.to_bits(), b.mean.to_bits());
        assert_eq!(a.std_error.to_bits(), b.std_error.to_bits());
    }

    #[test]
    fn single_path_flags_low_power() {
        let spec = make_brownian(0.5, 1.0, 0.0).unwrap();
        let refr = RefractionSet::zero(0.0);
        let q = OccupationQuery::hitting(0.0, 1.0, 1.0);
        let e = simulate_transform(&spec, &refr, &q, Target::HittingOccupation, &PathConfig::new(1e-3, 50.0, 1, 7)).unwrap();
        assert_eq!(e.std_error, 0.5);
        assert!(!e.warnings.is_empty());
    }
}
