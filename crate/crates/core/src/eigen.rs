//! Increasing and decreasing positive solutions of `½σ²f'' + μf' = q b² f`
//! and the two-variable combinations built from them.
//!
//! Everything is carried in log-space: `ln φ±` and the logarithmic
//! derivatives `ψ+ = φ+'/φ+`, `ψ- = -φ-'/φ-`.

use std::sync::Arc;

use crate::diffusion::{DiffusionSpec, HermiteTable, ScaleFunction, Weight, Window};
use crate::error::{invalid, Error, Result};

/// Tabulated numerical solution pair.
#[derive(Debug, Clone)]
pub struct NumericEigen {
    q: f64,
    psi_p: HermiteTable,
    psi_m: HermiteTable,
    int_p: Vec<f64>,
    int_m: Vec<f64>,
    anchor_p: f64,
    anchor_m: f64,
    x0: f64,
    window: Window,
}

impl NumericEigen {
    #[inline]
    fn cumulative(t: &HermiteTable, nodes: &[f64], x: f64) -> f64 {
        let (i, v) = t.cell_integral(x);
        nodes[i] + v
    }
}

/// The pair `φ±_q` with the Wronskian constant `w_q` relative to the
/// canonical scale of the diffusion it was built from.
#[derive(Debug, Clone)]
pub enum EigenPair {
    /// `φ+ = e^{(γ-δ)x}`, `φ- = e^{-(γ+δ)x}`, `γ = √(δ² + 2q/σ²)`.
    Brownian { q: f64, delta: f64, gamma: f64 },
    Numeric(Arc<NumericEigen>),
}

/// Cell count for the Riccati sweep. `stiff` bounds the largest local root
/// magnitude, which sets the explicit RK4 stability limit.
fn riccati_cells(window: &Window, stiff: f64) -> usize {
    let width = window.hi - window.lo;
    let by_width = width / 0.004;
    let by_stiffness = width * stiff;
    (by_width.max(by_stiffness).ceil() as usize).clamp(4096, 400_000)
}

/// Solve the Riccati equations for `ψ±` on the window: `ψ+` forward from the
/// left edge and `ψ-` backward from the right edge, each started at the
/// local constant-coefficient root.
fn solve_numeric(spec: &DiffusionSpec, q: f64, b: &Weight) -> Result<NumericEigen> {
    let w = spec.window;
    let coef = |x: f64| {
        let s = spec.sigma.eval(x);
        let s2 = s * s;
        let bw = b.eval(x);
        (2.0 * spec.mu.eval(x) / s2, 2.0 * q * bw * bw / s2)
    };
    let stiff = (0..=512)
        .map(|i| {
            let (m, k) = coef(w.lo + (w.hi - w.lo) * i as f64 / 512.0);
            0.5 * m.abs() + (0.25 * m * m + k.max(0.0)).sqrt()
        })
        .filter(|v| v.is_finite())
        .fold(0.0, f64::max);
    let n = riccati_cells(&w, stiff);
    let h = (w.hi - w.lo) / n as f64;
    let fp = |x: f64, y: f64| {
        let (m, k) = coef(x);
        k - m * y - y * y
    };
    let fm = |x: f64, y: f64| {
        let (m, k) = coef(x);
        -k - m * y + y * y
    };
    let root = |x: f64, sign: f64| {
        let (m, k) = coef(x);
        let half = 0.5 * m;
        -sign * half + (half * half + k).sqrt()
    };
    let rk4 = |f: &dyn Fn(f64, f64) -> f64, x: f64, y: f64, h: f64| {
        let k1 = f(x, y);
        let k2 = f(x + 0.5 * h, y + 0.5 * h * k1);
        let k3 = f(x + 0.5 * h, y + 0.5 * h * k2);
        let k4 = f(x + h, y + h * k3);
        y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    };
    let xs = |i: usize| w.lo + h * i as f64;
    let mut yp = vec![0.0; n + 1];
    yp[0] = root(w.lo, 1.0);
    for i in 0..n {
        yp[i + 1] = rk4(&fp, xs(i), yp[i], h);
    }
    let mut ym = vec![0.0; n + 1];
    ym[n] = root(w.hi, -1.0);
    for i in (0..n).rev() {
        ym[i] = rk4(&fm, xs(i + 1), ym[i + 1], -h);
    }
    if yp.iter().chain(ym.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Ode("Riccati solution blew up on the window".into()));
    }
    if yp.iter().chain(ym.iter()).any(|&v| v < -1e-10) {
        return Err(Error::Ode("logarithmic derivative changed sign".into()));
    }
    let dp = (0..=n).map(|i| fp(xs(i), yp[i])).collect();
    let dm = (0..=n).map(|i| fm(xs(i), ym[i])).collect();
    let psi_p = HermiteTable { lo: w.lo, h, y: yp, dy: dp };
    let psi_m = HermiteTable { lo: w.lo, h, y: ym, dy: dm };
    let int_p = psi_p.node_integrals();
    let int_m = psi_m.node_integrals();
    let mut ne = NumericEigen { q, psi_p, psi_m, int_p, int_m, anchor_p: 0.0, anchor_m: 0.0, x0: spec.x0, window: w };
    ne.anchor_p = NumericEigen::cumulative(&ne.psi_p, &ne.int_p, spec.x0);
    ne.anchor_m = NumericEigen::cumulative(&ne.psi_m, &ne.int_m, spec.x0);
    Ok(ne)
}

/// Eigenfunction pair at rate `q`.
pub fn eigenpair(spec: &DiffusionSpec, q: f64) -> Result<EigenPair> {
    eigenpair_weighted(spec, q, &Weight::Constant(1.0))
}

/// Eigenfunction pair of the time-changed equation `½σ²f'' + μf' = q b² f`.
pub fn eigenpair_weighted(spec: &DiffusionSpec, q: f64, b: &Weight) -> Result<EigenPair> {
    if !(q >= 0.0) || !q.is_finite() {
        return Err(invalid(format!("rate q = {q} must be nonnegative")));
    }
    match (spec.delta(), b, spec.kind) {
        (Some(delta), Weight::Constant(c), crate::diffusion::AnalyticKind::BrownianWithDrift { sigma, .. }) => {
            if !(*c > 0.0) {
                return Err(invalid("weight must be positive"));
            }
            let qe = q * c * c;
            let gamma = (delta * delta + 2.0 * qe / (sigma * sigma)).sqrt();
            Ok(EigenPair::Brownian { q: qe, delta, gamma })
        }
        _ => {
            for z in spec.window.grid(2000) {
                if !(b.eval(z) > 0.0) {
                    return Err(invalid(format!("weight b({z}) must be positive")));
                }
            }
            Ok(EigenPair::Numeric(Arc::new(solve_numeric(spec, q, b)?)))
        }
    }
}

impl EigenPair {
    pub fn q(&self) -> f64 {
        match self {
            EigenPair::Brownian { q, .. } => *q,
            EigenPair::Numeric(n) => n.q,
        }
    }

    /// Window on which the pair can be evaluated.
    pub fn domain(&self) -> Window {
        match self {
            EigenPair::Brownian { .. } => Window { lo: f64::NEG_INFINITY, hi: f64::INFINITY },
            EigenPair::Numeric(n) => n.window,
        }
    }

    /// Point at which the Wronskian constant is measured.
    fn reference(&self) -> f64 {
        match self {
            EigenPair::Brownian { .. } => 0.0,
            EigenPair::Numeric(n) => n.x0,
        }
    }

    #[inline]
    pub fn ln_phi_plus(&self, x: f64) -> f64 {
        match self {
            EigenPair::Brownian { delta, gamma, .. } => (gamma - delta) * x,
            EigenPair::Numeric(n) => {
                if !n.window.contains(x) {
                    return f64::NAN;
                }
                NumericEigen::cumulative(&n.psi_p, &n.int_p, x) - n.anchor_p
            }
        }
    }

    #[inline]
    pub fn ln_phi_minus(&self, x: f64) -> f64 {
        match self {
            EigenPair::Brownian { delta, gamma, .. } => -(gamma + delta) * x,
            EigenPair::Numeric(n) => {
                if !n.window.contains(x) {
                    return f64::NAN;
                }
                n.anchor_m - NumericEigen::cumulative(&n.psi_m, &n.int_m, x)
            }
        }
    }

    /// `φ+'(x)/φ+(x)`.
    #[inline]
    pub fn psi_plus(&self, x: f64) -> f64 {
        match self {
            EigenPair::Brownian { delta, gamma, .. } => gamma - delta,
            EigenPair::Numeric(n) => {
                if !n.window.contains(x) {
                    return f64::NAN;
                }
                n.psi_p.eval(x)
            }
        }
    }

    /// `-φ-'(x)/φ-(x)`.
    #[inline]
    pub fn psi_minus(&self, x: f64) -> f64 {
        match self {
            EigenPair::Brownian { delta, gamma, .. } => gamma + delta,
            EigenPair::Numeric(n) => {
                if !n.window.contains(x) {
                    return f64::NAN;
                }
                n.psi_m.eval(x)
            }
        }
    }

    pub fn phi_plus(&self, x: f64) -> f64 {
        self.ln_phi_plus(x).exp()
    }

    pub fn phi_minus(&self, x: f64) -> f64 {
        self.ln_phi_minus(x).exp()
    }

    pub fn dphi_plus(&self, x: f64) -> f64 {
        self.psi_plus(x) * self.phi_plus(x)
    }

    pub fn dphi_minus(&self, x: f64) -> f64 {
        -self.psi_minus(x) * self.phi_minus(x)
    }

    /// `ln w`, where `φ+'φ- - φ-'φ+ = w s'` for the given scale.
    pub fn ln_wronskian(&self, scale: &ScaleFunction) -> f64 {
        let r = self.reference();
        (self.psi_plus(r) + self.psi_minus(r)).ln() + self.ln_phi_plus(r) + self.ln_phi_minus(r) - scale.ln_s_prime(r)
    }

    /// `w_q` relative to the Brownian scale for the analytic backend and to
    /// the scale anchored at `x0` for the numerical one.
    pub fn w_q(&self) -> f64 {
        match self {
            EigenPair::Brownian { gamma, .. } => *gamma,
            EigenPair::Numeric(n) => n.psi_p.eval(n.x0) + n.psi_m.eval(n.x0),
        }
    }
}

/// `W(x,y) = (φ+(x)φ-(y) - φ+(y)φ-(x))/w` with `W1 = ∂_x W` and `W2 = ∂_y W1`.
#[derive(Debug, Clone)]
pub struct WFunctions {
    pub pair: EigenPair,
    pub scale: ScaleFunction,
    ln_w: f64,
}

/// `W`, `W1`, `W2` sharing the common factor `exp(ln_scale)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WTriple {
    pub ln_scale: f64,
    pub w: f64,
    pub w1: f64,
    pub w2: f64,
}

pub fn w_functions(pair: EigenPair, scale: ScaleFunction) -> WFunctions {
    let ln_w = pair.ln_wronskian(&scale);
    WFunctions { pair, scale, ln_w }
}

impl WFunctions {
    pub fn ln_w(&self) -> f64 {
        self.ln_w
    }

    pub fn psi_plus(&self, z: f64) -> f64 {
        self.pair.psi_plus(z)
    }

    pub fn psi_minus(&self, z: f64) -> f64 {
        self.pair.psi_minus(z)
    }

    /// Domain shared by the pair and the scale.
    pub fn domain(&self) -> Window {
        let (a, b) = (self.pair.domain(), self.scale.domain());
        Window { lo: a.lo.max(b.lo), hi: a.hi.min(b.hi) }
    }

    /// `ρ(x, y) = φ+(y)φ-(x) / (φ+(x)φ-(y))`, in `(0, 1]` for `x >= y`.
    #[inline]
    pub fn rho(&self, x: f64, y: f64) -> f64 {
        let p = &self.pair;
        (p.ln_phi_plus(y) + p.ln_phi_minus(x) - p.ln_phi_plus(x) - p.ln_phi_minus(y)).exp()
    }

    /// Factored form with the common scale `φ+(x)φ-(y)/w`.
    pub fn triple(&self, x: f64, y: f64) -> WTriple {
        let p = &self.pair;
        let rho = self.rho(x, y);
        let (ppx, pmx, ppy, pmy) = (p.psi_plus(x), p.psi_minus(x), p.psi_plus(y), p.psi_minus(y));
        WTriple {
            ln_scale: p.ln_phi_plus(x) + p.ln_phi_minus(y) - self.ln_w,
            w: 1.0 - rho,
            w1: ppx + rho * pmx,
            w2: -ppx * pmy + rho * ppy * pmx,
        }
    }

    pub fn w(&self, x: f64, y: f64) -> f64 {
        let t = self.triple(x, y);
        t.w * t.ln_scale.exp()
    }

    pub fn w1(&self, x: f64, y: f64) -> f64 {
        let t = self.triple(x, y);
        t.w1 * t.ln_scale.exp()
    }

    pub fn w2(&self, x: f64, y: f64) -> f64 {
        let t = self.triple(x, y);
        t.w2 * t.ln_scale.exp()
    }

    /// `ln W(x, y)` for `x > y`.
    pub fn ln_w_value(&self, x: f64, y: f64) -> f64 {
        let p = &self.pair;
        let lr = p.ln_phi_plus(y) + p.ln_phi_minus(x) - p.ln_phi_plus(x) - p.ln_phi_minus(y);
        p.ln_phi_plus(x) + p.ln_phi_minus(y) + (-lr.exp_m1()).ln() - self.ln_w
    }

    /// `W1(x, y)/W(x, y)` for `x > y`.
    pub fn ratio(&self, x: f64, y: f64) -> f64 {
        let p = &self.pair;
        let lr = p.ln_phi_plus(y) + p.ln_phi_minus(x) - p.ln_phi_plus(x) - p.ln_phi_minus(y);
        let rho = lr.exp();
        (p.psi_plus(x) + rho * p.psi_minus(x)) / (-lr.exp_m1())
    }

    /// Rows `(z, φ+, φ-, relative Wronskian residual)` on a uniform grid.
    pub fn wronskian_table(&self, lo: f64, hi: f64, n: usize) -> Vec<[f64; 4]> {
        let n = n.max(1);
        (0..=n)
            .map(|i| {
                let z = lo + (hi - lo) * i as f64 / n as f64;
                let p = &self.pair;
                let lw = (p.psi_plus(z) + p.psi_minus(z)).ln() + p.ln_phi_plus(z) + p.ln_phi_minus(z)
                    - self.scale.ln_s_prime(z)
                    - self.ln_w;
                [z, p.phi_plus(z), p.phi_minus(z), lw.exp_m1()]
            })
            .collect()
    }

    /// CSV rendering of [`Self::wronskian_table`].
    pub fn wronskian_csv(&self, lo: f64, hi: f64, n: usize) -> String {
        let mut out = String::from("z,phi_plus,phi_minus,wronskian_residual\n");
        for r in self.wronskian_table(lo, hi, n) {
            out.push_str(&format!("{:.11e},{:.11e},{:.11e},{:.11e}\n", r[0], r[1], r[2], r[3]));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{make_brownian, scale};

    #[test]
    fn brownian_pair_closed_form() {
        let spec = make_brownian(0.5, 1.0, 0.0).unwrap();
        let p = eigenpair(&spec, 1.0).unwrap();
        assert!((p.w_q() - 1.5).abs() < 1e-15);
        assert!((p.phi_plus(0.7) - 0.7f64.exp()).abs() < 1e-14);
        assert!((p.phi_minus(0.7) - (-1.4f64).exp()).abs() < 1e-14);
        let p0 = eigenpair(&spec, 0.0).unwrap();
        assert!((p0.w_q() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn brownian_w_values() {
        let spec = make_brownian(0.5, 1.0, 0.0).unwrap();
        let wf = w_functions(eigenpair(&spec, 1.0).unwrap(), scale(&spec).unwrap());
        assert!((wf.ln_w() - 1.5f64.ln()).abs() < 1e-14);
        assert_eq!(wf.w(1.0, 1.0), 0.0);
        // 2 e^{-0.5} sinh(1.5)/1.5
        let expect = 2.0 * (-0.5f64).exp() * 1.5f64.sinh() / 1.5;
        assert!((wf.w(1.0, 0.0) - expect).abs() < 1e-13);
        assert!((expect - 1.721_964_363_481_621_5).abs() < 1e-12);
        for (x, y) in [(1.0, 0.0), (0.3, -2.0), (5.0, 4.9)] {
            let d: f64 = x - y;
            let r = 1.5 / (1.5 * d).tanh() - 0.5;
            assert!((wf.ratio(x, y) - r).abs() < 1e-12 * r.abs());
            assert!((wf.w(x, y) + wf.w(y, x)).abs() < 1e-12 * wf.w(x, y).abs());
        }
    }

    #[test]
    fn weighted_constant_rescales_rate() {
        let spec = make_brownian(0.5, 1.0, 0.0).unwrap();
        let a = eigenpair_weighted(&spec, 1.0, &Weight::Constant(2.0)).unwrap();
        let b = eigenpair(&spec, 4.0).unwrap();
        assert_eq!(a.psi_plus(0.0), b.psi_plus(0.0));
        assert_eq!(a.w_q(), b.w_q());
    }
}
