//! The underlying diffusion, its scale function, and the maximum-refraction
//! functionals built from a tax rate.

use std::sync::Arc;

use crate::error::{invalid, precondition, Error, Result};
use crate::func::{Func, LinearTable};

const GL5_X: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683,
    0.0,
    0.538_469_310_105_683,
    0.906_179_845_938_664,
];
const GL5_W: [f64; 5] = [
    0.236_926_885_056_189,
    0.478_628_670_499_366,
    0.568_888_888_888_889,
    0.478_628_670_499_366,
    0.236_926_885_056_189,
];

pub(crate) fn gl5<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> f64 {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    GL5_X.iter().zip(GL5_W.iter()).map(|(x, w)| w * f(c + h * x)).sum::<f64>() * h
}

/// Declared evaluation window for black-box coefficient functions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    pub lo: f64,
    pub hi: f64,
}

impl Window {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(invalid(format!("window [{lo}, {hi}] is not a finite interval")));
        }
        Ok(Window { lo, hi })
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    pub fn check(&self, x: f64) -> Result<()> {
        if self.contains(x) {
            Ok(())
        } else {
            Err(Error::WindowTooSmall { point: x, lo: self.lo, hi: self.hi })
        }
    }

    pub fn grid(&self, n: usize) -> impl Iterator<Item = f64> + '_ {
        let h = (self.hi - self.lo) / n as f64;
        (0..=n).map(move |i| self.lo + h * i as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AnalyticKind {
    GeneralNumeric,
    BrownianWithDrift { mu: f64, sigma: f64 },
}

/// `dX = μ(X) dt + σ(X) dW`, started at `x0`.
#[derive(Debug, Clone)]
pub struct DiffusionSpec {
    pub mu: Func,
    pub sigma: Func,
    pub lower_boundary: f64,
    pub x0: f64,
    pub kind: AnalyticKind,
    pub window: Window,
}

/// Brownian motion with drift `μ` and volatility `σ`.
pub fn make_brownian(mu: f64, sigma: f64, x0: f64) -> Result<DiffusionSpec> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(invalid(format!("sigma must be positive, got {sigma}")));
    }
    if mu == 0.0 || !mu.is_finite() {
        return Err(invalid(format!("Brownian backend needs a nonzero finite drift, got {mu}")));
    }
    if !x0.is_finite() {
        return Err(invalid("x0 must be finite"));
    }
    Ok(DiffusionSpec {
        mu: Func::constant(mu),
        sigma: Func::constant(sigma),
        lower_boundary: f64::NEG_INFINITY,
        x0,
        kind: AnalyticKind::BrownianWithDrift { mu, sigma },
        window: Window { lo: x0 - 30.0, hi: x0 + 60.0 },
    })
}

/// Sampled Lipschitz and linear-growth constants on the declared window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrowthReport {
    pub lipschitz: f64,
    pub growth: f64,
    pub sigma_min: f64,
}

impl DiffusionSpec {
    /// A diffusion with black-box coefficients, checked for `σ > 0` on a grid
    /// over `window`.
    pub fn custom(mu: Func, sigma: Func, x0: f64, window: Window) -> Result<Self> {
        if !window.contains(x0) {
            return Err(invalid(format!("x0 = {x0} lies outside the window [{}, {}]", window.lo, window.hi)));
        }
        let spec = DiffusionSpec {
            mu,
            sigma,
            lower_boundary: f64::NEG_INFINITY,
            x0,
            kind: AnalyticKind::GeneralNumeric,
            window,
        };
        for z in window.grid(2000) {
            let s = spec.sigma.eval(z);
            if !(s > 0.0) || !s.is_finite() {
                return Err(invalid(format!("sigma({z}) = {s} is not positive")));
            }
            if !spec.mu.eval(z).is_finite() {
                return Err(invalid(format!("mu({z}) is not finite")));
            }
        }
        Ok(spec)
    }

    pub fn with_window(mut self, window: Window) -> Result<Self> {
        if !window.contains(self.x0) {
            return Err(invalid("window must contain x0"));
        }
        self.window = window;
        Ok(self)
    }

    /// Treat the same coefficients through the generic numerical backends.
    pub fn as_numeric(&self) -> Self {
        let mut s = self.clone();
        s.kind = AnalyticKind::GeneralNumeric;
        s
    }

    /// `δ = μ/σ²` for the Brownian backend.
    pub fn delta(&self) -> Option<f64> {
        match self.kind {
            AnalyticKind::BrownianWithDrift { mu, sigma } => Some(mu / (sigma * sigma)),
            AnalyticKind::GeneralNumeric => None,
        }
    }

    pub fn is_brownian(&self) -> bool {
        matches!(self.kind, AnalyticKind::BrownianWithDrift { .. })
    }

    /// Heuristic check of the Lipschitz and linear-growth conditions by finite
    /// differences on an `n`-cell grid of the window.
    pub fn growth_report(&self, n: usize) -> GrowthReport {
        let pts: Vec<f64> = self.window.grid(n.max(2)).collect();
        let mut lip = 0.0f64;
        let mut growth = 0.0f64;
        let mut sigma_min = f64::INFINITY;
        for w in pts.windows(2) {
            let (x1, x2) = (w[0], w[1]);
            let d = (self.mu.eval(x1) - self.mu.eval(x2)).abs() + (self.sigma.eval(x1) - self.sigma.eval(x2)).abs();
            lip = lip.max(d / (x2 - x1));
        }
        for &x in &pts {
            let (m, s) = (self.mu.eval(x), self.sigma.eval(x));
            growth = growth.max(((m * m + s * s) / (1.0 + x * x)).sqrt());
            sigma_min = sigma_min.min(s);
        }
        GrowthReport { lipschitz: lip, growth, sigma_min }
    }

    /// Validate the Lipschitz and growth conditions against a declared constant.
    pub fn check_growth(&self, c: f64) -> Result<GrowthReport> {
        let r = self.growth_report(4000);
        if r.lipschitz > c || r.growth > c {
            return Err(precondition(format!(
                "sampled Lipschitz constant {} or growth constant {} exceeds C = {c}",
                r.lipschitz, r.growth
            )));
        }
        Ok(r)
    }

    /// Non-fatal observations about the model.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        let zero_drift = self.window.grid(200).all(|z| self.mu.eval(z) == 0.0);
        if zero_drift {
            out.push("drift vanishes on the window: the process is recurrent and s(∞) = ∞".to_string());
        }
        out
    }
}

/// Uniform-grid Hermite table of a function with known derivative.
#[derive(Debug, Clone)]
pub(crate) struct HermiteTable {
    pub lo: f64,
    pub h: f64,
    pub y: Vec<f64>,
    pub dy: Vec<f64>,
}

impl HermiteTable {
    #[inline]
    fn locate(&self, x: f64) -> (usize, f64) {
        let n = self.y.len() - 1;
        let t = (x - self.lo) / self.h;
        let i = (t.floor().max(0.0) as usize).min(n - 1);
        (i, t - i as f64)
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        let (i, t) = self.locate(x);
        let (y0, y1) = (self.y[i], self.y[i + 1]);
        let (d0, d1) = (self.dy[i] * self.h, self.dy[i + 1] * self.h);
        let t2 = t * t;
        let t3 = t2 * t;
        (2.0 * t3 - 3.0 * t2 + 1.0) * y0 + (t3 - 2.0 * t2 + t) * d0 + (-2.0 * t3 + 3.0 * t2) * y1 + (t3 - t2) * d1
    }

    /// Exact integral of the interpolant from the left end of the cell containing `x` to `x`.
    #[inline]
    pub fn cell_integral(&self, x: f64) -> (usize, f64) {
        let (i, t) = self.locate(x);
        let (y0, y1) = (self.y[i], self.y[i + 1]);
        let (d0, d1) = (self.dy[i] * self.h, self.dy[i + 1] * self.h);
        let t2 = t * t;
        let t3 = t2 * t;
        let t4 = t3 * t;
        let v = (0.5 * t4 - t3 + t) * y0
            + (0.25 * t4 - 2.0 / 3.0 * t3 + 0.5 * t2) * d0
            + (-0.5 * t4 + t3) * y1
            + (0.25 * t4 - t3 / 3.0) * d1;
        (i, v * self.h)
    }

    /// Cumulative integrals of the interpolant from `lo` to every node.
    pub fn node_integrals(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.y.len());
        out.push(0.0);
        let mut acc = 0.0;
        for i in 0..self.y.len() - 1 {
            acc += self.h * (0.5 * (self.y[i] + self.y[i + 1]) + self.h * (self.dy[i] - self.dy[i + 1]) / 12.0);
            out.push(acc);
        }
        out
    }
}

/// Tabulated scale function `s' = exp(Λ)`, `Λ' = -2μ/σ²`, anchored at
/// `s(x0) = 0`, `s'(x0) = 1`.
#[derive(Debug, Clone)]
pub struct NumericScale {
    lambda: HermiteTable,
    s_nodes: Vec<f64>,
    x0: f64,
    s_inf: f64,
    window: Window,
}

impl NumericScale {
    fn build(spec: &DiffusionSpec, cells: usize) -> Result<Self> {
        let w = spec.window;
        let n = cells.max(16);
        let h = (w.hi - w.lo) / n as f64;
        let rate = |z: f64| {
            let s = spec.sigma.eval(z);
            -2.0 * spec.mu.eval(z) / (s * s)
        };
        let mut lam = vec![0.0; n + 1];
        let mut dlam = vec![0.0; n + 1];
        for i in 0..=n {
            dlam[i] = rate(w.lo + h * i as f64);
        }
        for i in 0..n {
            let a = w.lo + h * i as f64;
            lam[i + 1] = lam[i] + gl5(rate, a, a + h);
        }
        if lam.iter().any(|v| !v.is_finite()) {
            return Err(Error::Ode("scale density integral is not finite".into()));
        }
        let mut table = HermiteTable { lo: w.lo, h, y: lam, dy: dlam };
        // anchor Λ(x0) = 0
        let shift = table.eval(spec.x0);
        for v in table.y.iter_mut() {
            *v -= shift;
        }
        if table.y.iter().any(|v| *v > 700.0) {
            return Err(Error::WindowTooSmall { point: w.hi, lo: w.lo, hi: w.hi });
        }
        let mut s_nodes = vec![0.0; n + 1];
        for i in 0..n {
            let a = w.lo + h * i as f64;
            s_nodes[i + 1] = s_nodes[i] + gl5(|z| table.eval(z).exp(), a, a + h);
        }
        let mut sc = NumericScale { lambda: table, s_nodes, x0: spec.x0, s_inf: f64::INFINITY, window: w };
        let s_x0 = sc.raw_s(spec.x0);
        for v in sc.s_nodes.iter_mut() {
            *v -= s_x0;
        }
        // tail beyond the window from the edge slope of Λ
        let slope = sc.lambda.dy[n];
        sc.s_inf = if slope < 0.0 { sc.s_nodes[n] + sc.lambda.y[n].exp() / (-slope) } else { f64::INFINITY };
        Ok(sc)
    }

    fn raw_s(&self, x: f64) -> f64 {
        let (i, t) = self.lambda.locate(x);
        let a = self.lambda.lo + self.lambda.h * i as f64;
        let b = a + t * self.lambda.h;
        self.s_nodes[i] + gl5(|z| self.lambda.eval(z).exp(), a, b)
    }

    pub fn window(&self) -> Window {
        self.window
    }

    pub fn x0(&self) -> f64 {
        self.x0
    }
}

/// A scale function `s` with density `s'`.
#[derive(Debug, Clone)]
pub enum ScaleFunction {
    /// `s(x) = (1 - e^{-2δx})/δ`.
    Brownian { delta: f64 },
    Numeric(Arc<NumericScale>),
    /// `α s + β` for a base scale `s`.
    Affine { base: Box<ScaleFunction>, alpha: f64, beta: f64 },
}

/// Scale function of `spec`: closed form for Brownian motion with drift,
/// otherwise a tabulated quadrature over the window.
pub fn scale(spec: &DiffusionSpec) -> Result<ScaleFunction> {
    match spec.delta() {
        Some(delta) => Ok(ScaleFunction::Brownian { delta }),
        None => Ok(ScaleFunction::Numeric(Arc::new(NumericScale::build(spec, 8192)?))),
    }
}

impl ScaleFunction {
    pub fn affine(self, alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0) {
            return Err(invalid("affine rescaling of the scale needs alpha > 0"));
        }
        Ok(ScaleFunction::Affine { base: Box::new(self), alpha, beta })
    }

    pub fn s(&self, x: f64) -> f64 {
        match self {
            ScaleFunction::Brownian { delta } => -(-2.0 * delta * x).exp_m1() / delta,
            ScaleFunction::Numeric(n) => {
                if !n.window.contains(x) {
                    return f64::NAN;
                }
                n.raw_s(x)
            }
            ScaleFunction::Affine { base, alpha, beta } => alpha * base.s(x) + beta,
        }
    }

    pub fn ln_s_prime(&self, x: f64) -> f64 {
        match self {
            ScaleFunction::Brownian { delta } => std::f64::consts::LN_2 - 2.0 * delta * x,
            ScaleFunction::Numeric(n) => {
                if !n.window.contains(x) {
                    return f64::NAN;
                }
                n.lambda.eval(x)
            }
            ScaleFunction::Affine { base, alpha, .. } => base.ln_s_prime(x) + alpha.ln(),
        }
    }

    pub fn s_prime(&self, x: f64) -> f64 {
        self.ln_s_prime(x).exp()
    }

    /// `(s(u) - s(z)) / s'(z)`, free of the overflow in either factor.
    pub fn scaled_diff(&self, u: f64, z: f64) -> f64 {
        match self {
            ScaleFunction::Brownian { delta } => {
                let d = u - z;
                if *delta == 0.0 {
                    0.5 * d
                } else {
                    -(-2.0 * delta * d).exp_m1() / (2.0 * delta)
                }
            }
            ScaleFunction::Numeric(_) => (self.s(u) - self.s(z)) / self.s_prime(z),
            ScaleFunction::Affine { base, .. } => base.scaled_diff(u, z),
        }
    }

    /// `s(∞)`, possibly infinite.
    pub fn s_infinity(&self) -> f64 {
        match self {
            ScaleFunction::Brownian { delta } => {
                if *delta > 0.0 {
                    1.0 / delta
                } else {
                    f64::INFINITY
                }
            }
            ScaleFunction::Numeric(n) => n.s_inf,
            ScaleFunction::Affine { base, alpha, beta } => alpha * base.s_infinity() + beta,
        }
    }

    /// `(s(∞) - s(x)) / s'(z)`; infinite when `s(∞) = ∞`.
    pub fn tail_ratio(&self, x: f64, z: f64) -> f64 {
        match self {
            ScaleFunction::Brownian { delta } => {
                if *delta > 0.0 {
                    (-2.0 * delta * (x - z)).exp() / (2.0 * delta)
                } else {
                    f64::INFINITY
                }
            }
            ScaleFunction::Numeric(_) => {
                let inf = self.s_infinity();
                if inf.is_infinite() {
                    f64::INFINITY
                } else {
                    (inf - self.s(x)) / self.s_prime(z)
                }
            }
            ScaleFunction::Affine { base, .. } => base.tail_ratio(x, z),
        }
    }

    /// Domain on which the function can be evaluated.
    pub fn domain(&self) -> Window {
        match self {
            ScaleFunction::Brownian { .. } => Window { lo: f64::NEG_INFINITY, hi: f64::INFINITY },
            ScaleFunction::Numeric(n) => n.window,
            ScaleFunction::Affine { base, .. } => base.domain(),
        }
    }
}

/// Tax rate `γ(·)` with values in `[0, 1)`.
#[derive(Debug, Clone)]
pub enum TaxRate {
    Constant(f64),
    Table(LinearTable),
    /// Black-box rate, integrated on a uniform grid over the window.
    Function { gamma: Func, window: Window },
}

impl TaxRate {
    pub fn eval(&self, z: f64) -> f64 {
        match self {
            TaxRate::Constant(c) => *c,
            TaxRate::Table(t) => t.eval(z),
            TaxRate::Function { gamma, .. } => gamma.eval(z),
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |v: f64| !(0.0..1.0).contains(&v);
        match self {
            TaxRate::Constant(c) => {
                if bad(*c) {
                    return Err(invalid(format!("tax rate {c} outside [0, 1)")));
                }
            }
            TaxRate::Table(t) => {
                if let Some((u, v)) = t.points().find(|&(_, v)| bad(v)) {
                    return Err(invalid(format!("tax rate {v} at {u} outside [0, 1)")));
                }
            }
            TaxRate::Function { gamma, window } => {
                for z in window.grid(4000) {
                    let v = gamma.eval(z);
                    if bad(v) {
                        return Err(invalid(format!("tax rate {v} at {z} outside [0, 1)")));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum TaxIntegral {
    Constant(f64),
    Table(LinearTable),
    Grid(Arc<HermiteTable>, Arc<Vec<f64>>),
}

/// The maximum functionals `h`, `g` defining `V = X - h(X̄)` and `U = X - g(X̄)`,
/// with the tax rate they came from when there is one.
#[derive(Debug, Clone)]
pub struct RefractionSet {
    pub h: Func,
    pub g: Func,
    pub gamma: Option<TaxRate>,
    pub x0: f64,
    integral: Option<TaxIntegral>,
}

/// `g(u) = ∫_{x0}^u γ(z) dz`, equivalently `u - γ̄(u)`, with `h = g`.
pub fn refraction_from_tax(gamma: TaxRate, x0: f64) -> Result<RefractionSet> {
    gamma.validate()?;
    let integral = match &gamma {
        TaxRate::Constant(c) => TaxIntegral::Constant(*c),
        TaxRate::Table(t) => TaxIntegral::Table(t.clone()),
        TaxRate::Function { gamma: f, window } => {
            let lo = x0.min(window.lo);
            let hi = window.hi.max(x0 + 1.0);
            let n = 8192;
            let h = (hi - lo) / n as f64;
            let y: Vec<f64> = (0..=n).map(|i| f.eval(lo + h * i as f64)).collect();
            let dy = (0..=n)
                .map(|i| {
                    let z = lo + h * i as f64;
                    let e = 1e-5 * (1.0 + z.abs());
                    (f.eval(z + e) - f.eval(z - e)) / (2.0 * e)
                })
                .collect();
            let t = HermiteTable { lo, h, y, dy };
            let nodes = t.node_integrals();
            TaxIntegral::Grid(Arc::new(t), Arc::new(nodes))
        }
    };
    let integ = integral.clone();
    let g = Func::new(move |u| tax_integral(&integ, x0, u));
    Ok(RefractionSet { h: g.clone(), g, gamma: Some(gamma), x0, integral: Some(integral) })
}

fn tax_integral(t: &TaxIntegral, x0: f64, u: f64) -> f64 {
    match t {
        TaxIntegral::Constant(c) => c * (u - x0),
        TaxIntegral::Table(tab) => tab.integral(x0, u),
        TaxIntegral::Grid(tab, nodes) => {
            let at = |x: f64| {
                let (i, v) = tab.cell_integral(x);
                nodes[i] + v
            };
            at(u) - at(x0)
        }
    }
}

impl RefractionSet {
    /// Arbitrary functionals `h` and `g`.
    pub fn new(h: Func, g: Func, x0: f64) -> Self {
        RefractionSet { h, g, gamma: None, x0, integral: None }
    }

    /// `h = g = 0`: no refraction.
    pub fn zero(x0: f64) -> Self {
        RefractionSet::new(Func::zero(), Func::zero(), x0)
    }

    /// `h(u) = c_h (u - x0)`, `g(u) = c_g (u - x0)`.
    pub fn linear(c_h: f64, c_g: f64, x0: f64) -> Self {
        RefractionSet::new(
            Func::new(move |u| c_h * (u - x0)),
            Func::new(move |u| c_g * (u - x0)),
            x0,
        )
    }

    pub fn with_h(mut self, h: Func) -> Self {
        self.h = h;
        self
    }

    pub fn with_g(mut self, g: Func) -> Self {
        self.g = g;
        self.gamma = None;
        self.integral = None;
        self
    }

    /// `γ̄(u) = u - ∫_{x0}^u γ` when the set was built from a tax rate.
    pub fn gamma_bar(&self, u: f64) -> Option<f64> {
        self.integral.as_ref().map(|t| u - tax_integral(t, self.x0, u))
    }

    /// Check the standing bounds on `[x0, upto]`.
    pub fn validate(&self, upto: f64, require_g_ge_h: bool) -> Result<()> {
        let x0 = self.x0;
        let tol = |u: f64| 1e-12 * (1.0 + u.abs());
        if self.h.eval(x0).abs() > tol(x0) || self.g.eval(x0).abs() > tol(x0) {
            return Err(precondition("h(x0) and g(x0) must vanish"));
        }
        let n = 2000;
        let span = (upto - x0).max(1.0);
        for i in 0..=n {
            let u = x0 + span * i as f64 / n as f64;
            let (h, g) = (self.h.eval(u), self.g.eval(u));
            let t = tol(u);
            if !(h >= -t && h <= u - x0 + t) {
                return Err(precondition(format!("h({u}) = {h} violates 0 <= h(u) <= u - x0")));
            }
            if !(g >= -t && g <= u - x0 + t) {
                return Err(precondition(format!("g({u}) = {g} violates 0 <= g(u) <= u - x0")));
            }
            if require_g_ge_h && g < h - t {
                return Err(precondition(format!("g({u}) = {g} < h({u}) = {h}")));
            }
        }
        Ok(())
    }
}

/// Positive weight `b(·)` for integral functionals.
#[derive(Debug, Clone)]
pub enum Weight {
    Constant(f64),
    Function(Func),
}

impl Default for Weight {
    fn default() -> Self {
        Weight::Constant(1.0)
    }
}

impl Weight {
    #[inline]
    pub fn eval(&self, z: f64) -> f64 {
        match self {
            Weight::Constant(c) => *c,
            Weight::Function(f) => f.eval(z),
        }
    }
}

/// Levels and transform arguments for a single evaluation.
#[derive(Debug, Clone)]
pub struct OccupationQuery {
    pub y: f64,
    pub a: f64,
    pub q: f64,
    pub p: f64,
    pub omega: f64,
    pub b: Weight,
}

impl OccupationQuery {
    pub fn hitting(y: f64, a: f64, q: f64) -> Self {
        OccupationQuery { y, a, q, p: f64::NAN, omega: f64::NAN, b: Weight::default() }
    }

    pub fn exp_clock(y: f64, q: f64, p: f64) -> Self {
        OccupationQuery { y, a: f64::NAN, q, p, omega: f64::NAN, b: Weight::default() }
    }

    pub fn bankruptcy(y: f64, q: f64, omega: f64) -> Self {
        OccupationQuery { y, a: f64::NAN, q, p: f64::NAN, omega, b: Weight::default() }
    }

    pub fn with_weight(mut self, b: Weight) -> Self {
        self.b = b;
        self
    }

    /// `-x0 <= y < a`, `q >= 0`.
    pub fn check_hitting(&self, x0: f64) -> Result<()> {
        if !(self.q >= 0.0) || !self.q.is_finite() {
            return Err(precondition(format!("q = {} must be nonnegative", self.q)));
        }
        if !(self.y >= -x0) {
            return Err(precondition(format!("y = {} must be >= -x0 = {}", self.y, -x0)));
        }
        if !(self.y < self.a) || !self.a.is_finite() {
            return Err(precondition(format!("need y < a, got y = {}, a = {}", self.y, self.a)));
        }
        Ok(())
    }

    /// `y >= -x0`, `q > 0`, `p > 0`.
    pub fn check_exp_clock(&self, x0: f64) -> Result<()> {
        if !(self.q > 0.0) || !self.q.is_finite() {
            return Err(precondition(format!("q = {} must be positive", self.q)));
        }
        if !(self.p > 0.0) || !self.p.is_finite() {
            return Err(precondition(format!("p = {} must be positive", self.p)));
        }
        if !(self.y >= -x0) || !self.y.is_finite() {
            return Err(precondition(format!("y = {} must be >= -x0 = {}", self.y, -x0)));
        }
        Ok(())
    }

    /// `y >= -x0`, `q > 0`, `ω > 0`.
    pub fn check_bankruptcy(&self, x0: f64) -> Result<()> {
        if !(self.omega > 0.0) || !self.omega.is_finite() {
            return Err(precondition(format!("omega = {} must be positive", self.omega)));
        }
        OccupationQuery { p: self.omega, ..self.clone() }.check_exp_clock(x0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn brownian_delta() {
        assert_eq!(make_brownian(0.5, 1.0, 0.0).unwrap().delta(), Some(0.5));
        assert_eq!(make_brownian(1.0, 1.0, 0.0).unwrap().delta(), Some(1.0));
        let d = make_brownian(-0.3, 2.0, 1.0).unwrap().delta().unwrap();
        assert!((d + 0.075).abs() < 1e-15);
    }

    #[test]
    fn brownian_rejects_bad_parameters() {
        assert!(make_brownian(0.5, 0.0, 0.0).is_err());
        assert!(make_brownian(0.5, -1.0, 0.0).is_err());
        assert!(make_brownian(0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn brownian_scale_values() {
        let sc = scale(&make_brownian(0.5, 1.0, 0.0).unwrap()).unwrap();
        // 2(1 - e^{-1})
        assert!((sc.s(1.0) - 1.264_241_117_657_115_4).abs() < 1e-14);
        assert_eq!(sc.s(0.0), 0.0);
        assert!((sc.s_infinity() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn numeric_scale_matches_brownian_up_to_factor() {
        let spec = make_brownian(0.5, 1.0, 0.0).unwrap().with_window(Window::new(-8.0, 8.0).unwrap()).unwrap();
        let exact = scale(&spec).unwrap();
        let num = scale(&spec.as_numeric()).unwrap();
        for i in 0..=100 {
            let x = -5.0 + 0.1 * i as f64;
            let (a, b) = (exact.s(x), 2.0 * num.s(x));
            assert!((a - b).abs() <= 1e-8 * a.abs().max(1e-3), "x = {x}: {a} vs {b}");
            let (da, db) = (exact.s_prime(x), 2.0 * num.s_prime(x));
            assert!((da - db).abs() <= 1e-8 * da, "x = {x}");
        }
    }

    #[test]
    fn constant_tax_refraction() {
        let r = refraction_from_tax(TaxRate::Constant(0.3), 0.0).unwrap();
        assert!((r.g.eval(2.0) - 0.6).abs() < 1e-15);
        assert!((r.gamma_bar(2.0).unwrap() - 1.4).abs() < 1e-15);
        assert!(refraction_from_tax(TaxRate::Constant(1.0), 0.0).is_err());
        assert!(refraction_from_tax(TaxRate::Constant(-0.1), 0.0).is_err());
    }

    #[test]
    fn zero_tax_is_no_refraction() {
        let r = refraction_from_tax(TaxRate::Constant(0.0), 0.0).unwrap();
        for u in [0.0, 1.0, 10.0] {
            assert_eq!(r.g.eval(u), 0.0);
        }
    }

    #[test]
    fn function_tax_matches_antiderivative() {
        let w = Window::new(0.0, 20.0).unwrap();
        let gamma = TaxRate::Function { gamma: Func::new(|z: f64| z / (1.0 + z)), window: w };
        let r = refraction_from_tax(gamma, 0.0).unwrap();
        for u in [0.0, 0.3, 1.0, 4.5, 19.0] {
            let exact = u - (1.0f64 + u).ln();
            assert!((r.g.eval(u) - exact).abs() < 1e-10, "u = {u}");
        }
        r.validate(20.0, true).unwrap();
    }

    #[test]
    fn table_tax_integrates_piecewise_linear() {
        let t = LinearTable::new(&[(0.0, 0.0), (1.0, 0.5), (2.0, 0.5)]).unwrap();
        let r = refraction_from_tax(TaxRate::Table(t), 0.0).unwrap();
        assert!((r.g.eval(2.0) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn custom_spec_rejects_nonpositive_sigma() {
        let w = Window::new(-1.0, 1.0).unwrap();
        assert!(DiffusionSpec::custom(Func::zero(), Func::new(|z: f64| z), 0.0, w).is_err());
        let ok = DiffusionSpec::custom(Func::zero(), Func::constant(1.0), 0.0, w).unwrap();
        assert_eq!(ok.warnings().len(), 1);
    }

    #[test]
    fn growth_constants_for_brownian() {
        let spec = make_brownian(0.5, 1.0, 0.0).unwrap().with_window(Window::new(-2.0, 2.0).unwrap()).unwrap();
        let r = spec.growth_report(100);
        assert_eq!(r.lipschitz, 0.0);
        assert!((r.growth - 1.25f64.sqrt()).abs() < 1e-12);
        assert!(spec.check_growth(2.0).is_ok());
    }
}
