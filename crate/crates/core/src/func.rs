//! Shared function handles and a piecewise-linear table.

use std::fmt;
use std::sync::Arc;

use crate::error::{invalid, Result};

/// A thread-safe real function of one variable.
#[derive(Clone)]
pub struct Func(Arc<dyn Fn(f64) -> f64 + Send + Sync>);

impl Func {
    pub fn new(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Func(Arc::new(f))
    }

    pub fn constant(c: f64) -> Self {
        Func::new(move |_| c)
    }

    pub fn zero() -> Self {
        Func::constant(0.0)
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        (self.0)(x)
    }
}

impl fmt::Debug for Func {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Func(..)")
    }
}

/// Linear interpolation through `(x, y)` knots, held flat outside the knot range.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearTable {
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl LinearTable {
    pub fn new(points: &[(f64, f64)]) -> Result<Self> {
        if points.is_empty() {
            return Err(invalid("interpolation table is empty"));
        }
        let mut pts = points.to_vec();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in pts.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(invalid(format!("duplicate table abscissa {}", w[0].0)));
            }
        }
        if pts.iter().any(|p| !p.0.is_finite() || !p.1.is_finite()) {
            return Err(invalid("non-finite table entry"));
        }
        Ok(LinearTable {
            xs: pts.iter().map(|p| p.0).collect(),
            ys: pts.iter().map(|p| p.1).collect(),
        })
    }

    pub fn points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.xs.iter().copied().zip(self.ys.iter().copied())
    }

    fn segment(&self, x: f64) -> usize {
        match self.xs.binary_search_by(|v| v.total_cmp(&x)) {
            Ok(i) => i.min(self.xs.len().saturating_sub(2)),
            Err(i) => i.saturating_sub(1).min(self.xs.len().saturating_sub(2)),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if n == 1 || x <= self.xs[0] {
            return self.ys[0];
        }
        if x >= self.xs[n - 1] {
            return self.ys[n - 1];
        }
        let i = self.segment(x);
        let t = (x - self.xs[i]) / (self.xs[i + 1] - self.xs[i]);
        self.ys[i] + t * (self.ys[i + 1] - self.ys[i])
    }

    /// Exact integral of the interpolant over `[a, b]`.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        if b < a {
            return -self.integral(b, a);
        }
        // breakpoints inside (a, b)
        let mut knots = vec![a];
        knots.extend(self.xs.iter().copied().filter(|&x| x > a && x < b));
        knots.push(b);
        knots
            .windows(2)
            .map(|w| 0.5 * (w[1] - w[0]) * (self.eval(w[0]) + self.eval(w[1])))
            .sum()
    }

    pub fn into_func(self) -> Func {
        Func::new(move |x| self.eval(x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_interpolates_and_integrates() {
        let t = LinearTable::new(&[(0.0, 0.0), (1.0, 1.0), (3.0, 1.0)]).unwrap();
        assert_eq!(t.eval(0.5), 0.5);
        assert_eq!(t.eval(2.0), 1.0);
        assert_eq!(t.eval(-1.0), 0.0);
        assert_eq!(t.eval(10.0), 1.0);
        assert!((t.integral(0.0, 3.0) - 2.5).abs() < 1e-15);
        assert!((t.integral(0.5, 4.0) - (0.375 + 2.0 + 1.0)).abs() < 1e-15);
    }

    #[test]
    fn table_rejects_duplicates() {
        assert!(LinearTable::new(&[(0.0, 0.0), (0.0, 1.0)]).is_err());
        assert!(LinearTable::new(&[]).is_err());
    }
}
