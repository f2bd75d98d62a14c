//! Named parameterizations of the refraction functionals for the standard
//! tax, drawdown and relative-drawdown applications.
//!
//! Every kind maps user-level intent onto a `(h, g, y, a, b)` bundle for the
//! general transforms. Relative drawdown of `X` over size `α` is the event
//! `X < (1-α) X̄`, and absolute drawdown over `y'` is `X̄ - X > y'`.

use crate::diffusion::{refraction_from_tax, RefractionSet, TaxRate, Weight};
use crate::error::{invalid, Result};
use crate::func::Func;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenarioKind {
    /// Time the after-tax surplus spends below `-y` until `X` hits `-a`.
    TaxBelowYUntilXHits,
    /// Time the after-tax surplus spends below `-y` until it hits `-a` itself.
    TaxBelowYUntilUHits,
    /// Time in relative drawdown over `α` until `X - (1-β)(X̄ - x0)` hits `-a`.
    RelDrawdownUntilHit,
    /// Time the after-tax surplus `V` spends in relative drawdown over `α`
    /// until `V` hits `-a`.
    RelDrawdownOfVUntilVHits,
    /// Time in drawdown over `y'` until the first relative drawdown over `α`.
    DrawdownUntilRelDrawdown,
    /// Same for the after-tax surplus `V`.
    DrawdownOfVUntilRelDrawdownOfV,
    /// `∫ b²(X) 1{X̄ - X > y'} dt` until `X` hits `-a`.
    WeightedArea,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 7] = [
        ScenarioKind::TaxBelowYUntilXHits,
        ScenarioKind::TaxBelowYUntilUHits,
        ScenarioKind::RelDrawdownUntilHit,
        ScenarioKind::RelDrawdownOfVUntilVHits,
        ScenarioKind::DrawdownUntilRelDrawdown,
        ScenarioKind::DrawdownOfVUntilRelDrawdownOfV,
        ScenarioKind::WeightedArea,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ScenarioKind::TaxBelowYUntilXHits => "tax_below_y_until_x_hits",
            ScenarioKind::TaxBelowYUntilUHits => "tax_below_y_until_u_hits",
            ScenarioKind::RelDrawdownUntilHit => "rel_drawdown_until_hit",
            ScenarioKind::RelDrawdownOfVUntilVHits => "rel_drawdown_of_v_until_v_hits",
            ScenarioKind::DrawdownUntilRelDrawdown => "drawdown_until_rel_drawdown",
            ScenarioKind::DrawdownOfVUntilRelDrawdownOfV => "drawdown_of_v_until_rel_drawdown_of_v",
            ScenarioKind::WeightedArea => "weighted_area",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        ScenarioKind::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s || format!("{k:?}") == s)
            .ok_or_else(|| invalid(format!("unknown scenario kind '{s}'")))
    }
}

/// User-level scenario parameters.
///
/// `y_raw` and `a_raw` are the levels as the user states them: the red-zone
/// depth and ruin depth for the tax kinds, the barrier `a` for the relative
/// drawdown kinds, and the absolute drawdown size `y'` for the drawdown kinds.
#[derive(Debug, Clone)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    pub alpha: f64,
    pub beta: f64,
    pub y_raw: f64,
    pub a_raw: f64,
    pub tax: TaxRate,
    pub weight: Weight,
}

impl ScenarioSpec {
    pub fn new(kind: ScenarioKind) -> Self {
        ScenarioSpec {
            kind,
            alpha: f64::NAN,
            beta: 1.0,
            y_raw: 0.0,
            a_raw: f64::NAN,
            tax: TaxRate::Constant(0.0),
            weight: Weight::default(),
        }
    }
}

/// Parameters for the general transforms.
#[derive(Debug, Clone)]
pub struct ScenarioBundle {
    pub refr: RefractionSet,
    pub y: f64,
    pub a: f64,
    pub weight: Weight,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid(format!("alpha = {alpha} must lie in (0, 1)")));
    }
    Ok(())
}

fn check_positive_start(x0: f64) -> Result<()> {
    if !(x0 > 0.0) {
        return Err(invalid(format!("relative drawdown needs x0 > 0, got {x0}")));
    }
    Ok(())
}

fn linear(c: f64, x0: f64) -> Func {
    Func::new(move |u| c * (u - x0))
}

/// `(1-α)(u - x0) + α h(u)`.
fn blend(alpha: f64, h: Func, x0: f64) -> Func {
    Func::new(move |u| (1.0 - alpha) * (u - x0) + alpha * h.eval(u))
}

/// Build the bundle for `s` with the diffusion started at `x0`.
pub fn build(s: &ScenarioSpec, x0: f64) -> Result<ScenarioBundle> {
    let bundle = match s.kind {
        ScenarioKind::TaxBelowYUntilXHits => {
            let refr = refraction_from_tax(s.tax.clone(), x0)?.with_h(Func::zero());
            ScenarioBundle { refr, y: s.y_raw, a: s.a_raw, weight: Weight::default() }
        }
        ScenarioKind::TaxBelowYUntilUHits => {
            let refr = refraction_from_tax(s.tax.clone(), x0)?;
            ScenarioBundle { refr, y: s.y_raw, a: s.a_raw, weight: Weight::default() }
        }
        ScenarioKind::RelDrawdownUntilHit => {
            check_positive_start(x0)?;
            check_alpha(s.alpha)?;
            if !(s.beta >= s.alpha && s.beta <= 1.0) {
                return Err(invalid(format!("beta = {} must lie in [alpha, 1]", s.beta)));
            }
            if !(s.a_raw > (1.0 - s.alpha) * x0) {
                return Err(invalid(format!("need a > (1 - alpha) x0 = {}", (1.0 - s.alpha) * x0)));
            }
            let refr = RefractionSet::new(linear(1.0 - s.beta, x0), linear(1.0 - s.alpha, x0), x0);
            ScenarioBundle { refr, y: -(1.0 - s.alpha) * x0, a: s.a_raw, weight: Weight::default() }
        }
        ScenarioKind::RelDrawdownOfVUntilVHits => {
            check_positive_start(x0)?;
            check_alpha(s.alpha)?;
            if !(s.a_raw > (1.0 - s.alpha) * x0) {
                return Err(invalid(format!("need a > (1 - alpha) x0 = {}", (1.0 - s.alpha) * x0)));
            }
            let h = refraction_from_tax(s.tax.clone(), x0)?.g;
            let g = blend(s.alpha, h.clone(), x0);
            ScenarioBundle { refr: RefractionSet::new(h, g, x0), y: -(1.0 - s.alpha) * x0, a: s.a_raw, weight: Weight::default() }
        }
        ScenarioKind::DrawdownUntilRelDrawdown | ScenarioKind::DrawdownOfVUntilRelDrawdownOfV => {
            check_positive_start(x0)?;
            check_alpha(s.alpha)?;
            if !(s.y_raw >= 0.0 && s.y_raw < s.alpha * x0) {
                return Err(invalid(format!(
                    "drawdown size y' = {} must lie in [0, alpha x0) = [0, {})",
                    s.y_raw,
                    s.alpha * x0
                )));
            }
            let h = if s.kind == ScenarioKind::DrawdownUntilRelDrawdown {
                linear(1.0 - s.alpha, x0)
            } else {
                blend(s.alpha, refraction_from_tax(s.tax.clone(), x0)?.g, x0)
            };
            let refr = RefractionSet::new(h, linear(1.0, x0), x0);
            ScenarioBundle { refr, y: s.y_raw - x0, a: -(1.0 - s.alpha) * x0, weight: Weight::default() }
        }
        ScenarioKind::WeightedArea => {
            if !(s.y_raw >= 0.0) {
                return Err(invalid(format!("drawdown size y' = {} must be nonnegative", s.y_raw)));
            }
            let refr = RefractionSet::new(Func::zero(), linear(1.0, x0), x0);
            ScenarioBundle { refr, y: s.y_raw - x0, a: s.a_raw, weight: s.weight.clone() }
        }
    };
    if !(bundle.y < bundle.a) {
        return Err(invalid(format!("scenario levels give y = {} >= a = {}", bundle.y, bundle.a)));
    }
    if !(bundle.y >= -x0) {
        return Err(invalid(format!("scenario levels give y = {} < -x0", bundle.y)));
    }
    bundle.refr.validate(x0 + 10.0, true)?;
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_drawdown_with_full_beta_has_no_h() {
        let mut s = ScenarioSpec::new(ScenarioKind::RelDrawdownUntilHit);
        s.alpha = 0.3;
        s.beta = 1.0;
        s.a_raw = 2.0;
        let b = build(&s, 1.0).unwrap();
        assert_eq!(b.refr.h.eval(3.0), 0.0);
        assert!((b.refr.g.eval(3.0) - 1.4).abs() < 1e-15);
        // U < -y  ⇔  X < 0.7 X̄
        assert!((b.y + 0.7).abs() < 1e-15);
        assert_eq!(b.a, 2.0);
    }

    #[test]
    fn drawdown_until_relative_drawdown_levels() {
        let mut s = ScenarioSpec::new(ScenarioKind::DrawdownUntilRelDrawdown);
        s.alpha = 0.5;
        s.y_raw = 0.4;
        let b = build(&s, 2.0).unwrap();
        assert!((b.refr.h.eval(4.0) - 1.0).abs() < 1e-15);
        assert!((b.refr.g.eval(4.0) - 2.0).abs() < 1e-15);
        // V <= -a  ⇔  X <= 0.5 X̄
        assert!((b.a + 1.0).abs() < 1e-15);
        // U < -y  ⇔  X̄ - X > 0.4
        assert!((b.y + 1.6).abs() < 1e-15);
        s.y_raw = 1.0;
        assert!(build(&s, 2.0).is_err());
    }

    #[test]
    fn zero_tax_collapses_refraction() {
        let mut s = ScenarioSpec::new(ScenarioKind::TaxBelowYUntilUHits);
        s.y_raw = 0.2;
        s.a_raw = 1.0;
        let b = build(&s, 0.0).unwrap();
        for u in [0.0, 1.0, 5.0] {
            assert_eq!(b.refr.h.eval(u), 0.0);
            assert_eq!(b.refr.g.eval(u), 0.0);
        }
        assert_eq!((b.y, b.a), (0.2, 1.0));
    }

    #[test]
    fn relative_drawdown_of_v_blends_tax() {
        let mut s = ScenarioSpec::new(ScenarioKind::RelDrawdownOfVUntilVHits);
        s.alpha = 0.4;
        s.a_raw = 1.0;
        s.tax = TaxRate::Constant(0.2);
        let b = build(&s, 1.0).unwrap();
        // g = 0.6 (u - 1) + 0.4 · 0.2 (u - 1)
        assert!((b.refr.g.eval(2.0) - 0.68).abs() < 1e-15);
        assert!((b.refr.h.eval(2.0) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn kinds_parse_by_name() {
        for k in ScenarioKind::ALL {
            assert_eq!(ScenarioKind::parse(k.name()).unwrap(), k);
        }
    }

    #[test]
    fn constraint_violations_are_rejected() {
        let mut s = ScenarioSpec::new(ScenarioKind::RelDrawdownUntilHit);
        s.alpha = 0.3;
        s.beta = 0.2;
        s.a_raw = 2.0;
        assert!(build(&s, 1.0).is_err());
        s.beta = 1.0;
        assert!(build(&s, -1.0).is_err());
        s.a_raw = 0.5;
        assert!(build(&s, 1.0).is_err());
    }
}
