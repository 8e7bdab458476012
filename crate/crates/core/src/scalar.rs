//! Closed families of smooth scalar functions with analytic derivatives,
//! used for controller objectives `f` and agent costs `g`.
//!
//! Keeping the families closed (instead of accepting black-box closures)
//! gives every solver exact gradients and curvature bounds, which is what
//! makes the convergence tests in this crate assertable rather than
//! approximate.

use alloc::string::ToString;
use alloc::vec::Vec;

use crate::error::{FnError, SolveError};
use crate::fmath;

/// Inclusive interval `[lo, hi]` a cell's resource level must stay in.
///
/// Resources are nonnegative, so `lo >= 0`; both ends are finite so every
/// scalar subproblem has a minimizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    lo: f64,
    hi: f64,
}

impl Bounds {
    pub fn new(lo: f64, hi: f64) -> Result<Self, SolveError> {
        if !lo.is_finite() || !hi.is_finite() {
            return Err(SolveError::InvalidParameter {
                message: "bounds must be finite".to_string(),
            });
        }
        if lo < 0.0 {
            return Err(SolveError::InvalidParameter {
                message: "resource lower bound must be >= 0".to_string(),
            });
        }
        if lo > hi {
            return Err(SolveError::InvalidParameter {
                message: "lower bound exceeds upper bound".to_string(),
            });
        }
        Ok(Bounds { lo, hi })
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.lo, self.hi)
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }
}

/// A scalar function from a closed parametric family.
///
/// Every family except [`ScalarFn::LogConcaveCost`] is convex on its
/// admissible domain (`x >= 0` where the family requires it). The concave
/// log cost is provided for out-of-regime experiments and is flagged by
/// [`ScalarFn::is_convex`].
#[derive(Debug, Clone, PartialEq)]
pub enum ScalarFn {
    /// `a*(x - b)^2 + c`. Convex iff `a >= 0`; validation reports negative
    /// curvature instead of construction rejecting it, so malformed
    /// instances can be diagnosed rather than silently unbuildable.
    Quadratic { a: f64, b: f64, c: f64 },
    /// `s*x + c`.
    Linear { s: f64, c: f64 },
    /// `n0 * (2^(x/w) - 1)`: transmit power required to sustain rate `x`
    /// over a channel with noise scale `n0` and bandwidth scale `w`.
    /// Convex and increasing for `x >= 0`.
    InvShannon { n0: f64, w: f64 },
    /// `alpha * ln(1 + beta*x)`: concave, outside the guaranteed-convergence
    /// regime; kept for exploring the literal log-cost choice.
    LogConcaveCost { alpha: f64, beta: f64 },
    /// `a * x^p` with `a > 0`, `p >= 1`, on `x >= 0`.
    PowerLaw { a: f64, p: f64 },
    /// Pointwise sum of sub-functions.
    Sum(Vec<ScalarFn>),
}

fn require_finite(family: &'static str, name: &str, v: f64) -> Result<(), FnError> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(FnError::InvalidParams {
            family,
            message: alloc::format!("{name} must be finite, got {v}"),
        })
    }
}

fn require_positive(family: &'static str, name: &str, v: f64) -> Result<(), FnError> {
    require_finite(family, name, v)?;
    if v > 0.0 {
        Ok(())
    } else {
        Err(FnError::InvalidParams {
            family,
            message: alloc::format!("{name} must be > 0, got {v}"),
        })
    }
}

impl ScalarFn {
    pub fn quadratic(a: f64, b: f64, c: f64) -> Result<Self, FnError> {
        require_finite("quadratic", "a", a)?;
        require_finite("quadratic", "b", b)?;
        require_finite("quadratic", "c", c)?;
        Ok(ScalarFn::Quadratic { a, b, c })
    }

    pub fn linear(s: f64, c: f64) -> Result<Self, FnError> {
        require_finite("linear", "s", s)?;
        require_finite("linear", "c", c)?;
        Ok(ScalarFn::Linear { s, c })
    }

    pub fn inv_shannon(n0: f64, w: f64) -> Result<Self, FnError> {
        require_positive("inv_shannon", "n0", n0)?;
        require_positive("inv_shannon", "w", w)?;
        Ok(ScalarFn::InvShannon { n0, w })
    }

    pub fn log_concave_cost(alpha: f64, beta: f64) -> Result<Self, FnError> {
        require_positive("log_concave_cost", "alpha", alpha)?;
        require_positive("log_concave_cost", "beta", beta)?;
        Ok(ScalarFn::LogConcaveCost { alpha, beta })
    }

    pub fn power_law(a: f64, p: f64) -> Result<Self, FnError> {
        require_positive("power_law", "a", a)?;
        require_finite("power_law", "p", p)?;
        if p < 1.0 {
            return Err(FnError::InvalidParams {
                family: "power_law",
                message: alloc::format!("p must be >= 1, got {p}"),
            });
        }
        Ok(ScalarFn::PowerLaw { a, p })
    }

    pub fn sum(terms: Vec<ScalarFn>) -> Result<Self, FnError> {
        for t in &terms {
            t.validate()?;
        }
        Ok(ScalarFn::Sum(terms))
    }

    /// Re-checks the construction-time parameter constraints. Useful for
    /// values built directly from enum literals or deserialized data.
    pub fn validate(&self) -> Result<(), FnError> {
        match *self {
            ScalarFn::Quadratic { a, b, c } => {
                require_finite("quadratic", "a", a)?;
                require_finite("quadratic", "b", b)?;
                require_finite("quadratic", "c", c)
            }
            ScalarFn::Linear { s, c } => {
                require_finite("linear", "s", s)?;
                require_finite("linear", "c", c)
            }
            ScalarFn::InvShannon { n0, w } => {
                require_positive("inv_shannon", "n0", n0)?;
                require_positive("inv_shannon", "w", w)
            }
            ScalarFn::LogConcaveCost { alpha, beta } => {
                require_positive("log_concave_cost", "alpha", alpha)?;
                require_positive("log_concave_cost", "beta", beta)
            }
            ScalarFn::PowerLaw { a, p } => {
                require_positive("power_law", "a", a)?;
                require_finite("power_law", "p", p)?;
                if p < 1.0 {
                    return Err(FnError::InvalidParams {
                        family: "power_law",
                        message: alloc::format!("p must be >= 1, got {p}"),
                    });
                }
                Ok(())
            }
            ScalarFn::Sum(ref terms) => {
                for t in terms {
                    t.validate()?;
                }
                Ok(())
            }
        }
    }

    fn family_name(&self) -> &'static str {
        match self {
            ScalarFn::Quadratic { .. } => "quadratic",
            ScalarFn::Linear { .. } => "linear",
            ScalarFn::InvShannon { .. } => "inv_shannon",
            ScalarFn::LogConcaveCost { .. } => "log_concave_cost",
            ScalarFn::PowerLaw { .. } => "power_law",
            ScalarFn::Sum(_) => "sum",
        }
    }

    /// Whether the family is convex on its admissible domain. This is a
    /// family-level flag: true for everything except `LogConcaveCost`
    /// (and quadratics constructed with negative curvature), and for sums
    /// iff every term is convex.
    pub fn is_convex(&self) -> bool {
        match self {
            ScalarFn::Quadratic { a, .. } => *a >= 0.0,
            ScalarFn::Linear { .. } => true,
            ScalarFn::InvShannon { .. } => true,
            ScalarFn::LogConcaveCost { .. } => false,
            ScalarFn::PowerLaw { .. } => true,
            ScalarFn::Sum(terms) => terms.iter().all(ScalarFn::is_convex),
        }
    }

    fn check_domain(&self, x: f64) -> Result<(), FnError> {
        let needs_nonneg = matches!(
            self,
            ScalarFn::InvShannon { .. } | ScalarFn::LogConcaveCost { .. } | ScalarFn::PowerLaw { .. }
        );
        if needs_nonneg && x < 0.0 {
            return Err(FnError::Domain {
                family: self.family_name(),
                x,
            });
        }
        if let ScalarFn::Sum(terms) = self {
            for t in terms {
                t.check_domain(x)?;
            }
        }
        Ok(())
    }

    /// Analytic value of the family formula at `x`.
    pub fn eval(&self, x: f64) -> Result<f64, FnError> {
        self.check_domain(x)?;
        Ok(self.eval_unchecked(x))
    }

    fn eval_unchecked(&self, x: f64) -> f64 {
        match self {
            ScalarFn::Quadratic { a, b, c } => a * (x - b) * (x - b) + c,
            ScalarFn::Linear { s, c } => s * x + c,
            ScalarFn::InvShannon { n0, w } => n0 * (fmath::exp2(x / w) - 1.0),
            ScalarFn::LogConcaveCost { alpha, beta } => alpha * fmath::ln(1.0 + beta * x),
            ScalarFn::PowerLaw { a, p } => a * fmath::powf(x, *p),
            ScalarFn::Sum(terms) => terms.iter().map(|t| t.eval_unchecked(x)).sum(),
        }
    }

    /// Analytic first derivative at `x`.
    pub fn grad(&self, x: f64) -> Result<f64, FnError> {
        self.check_domain(x)?;
        Ok(self.grad_unchecked(x))
    }

    fn grad_unchecked(&self, x: f64) -> f64 {
        match self {
            ScalarFn::Quadratic { a, b, .. } => 2.0 * a * (x - b),
            ScalarFn::Linear { s, .. } => *s,
            ScalarFn::InvShannon { n0, w } => n0 * (fmath::LN_2 / w) * fmath::exp2(x / w),
            ScalarFn::LogConcaveCost { alpha, beta } => alpha * beta / (1.0 + beta * x),
            ScalarFn::PowerLaw { a, p } => {
                if *p == 1.0 {
                    *a
                } else {
                    a * p * fmath::powf(x, p - 1.0)
                }
            }
            ScalarFn::Sum(terms) => terms.iter().map(|t| t.grad_unchecked(x)).sum(),
        }
    }

    /// Analytic second derivative at `x`. May be `+inf` (power laws with
    /// `1 < p < 2` at the origin); never NaN on the admissible domain.
    pub fn second_derivative(&self, x: f64) -> Result<f64, FnError> {
        self.check_domain(x)?;
        Ok(self.second_derivative_unchecked(x))
    }

    fn second_derivative_unchecked(&self, x: f64) -> f64 {
        match self {
            ScalarFn::Quadratic { a, .. } => 2.0 * a,
            ScalarFn::Linear { .. } => 0.0,
            ScalarFn::InvShannon { n0, w } => {
                let r = fmath::LN_2 / w;
                n0 * r * r * fmath::exp2(x / w)
            }
            ScalarFn::LogConcaveCost { alpha, beta } => {
                let d = 1.0 + beta * x;
                -alpha * beta * beta / (d * d)
            }
            ScalarFn::PowerLaw { a, p } => {
                if *p == 1.0 {
                    0.0
                } else if *p == 2.0 {
                    2.0 * a
                } else {
                    a * p * (p - 1.0) * fmath::powf(x, p - 2.0)
                }
            }
            ScalarFn::Sum(terms) => terms.iter().map(|t| t.second_derivative_unchecked(x)).sum(),
        }
    }

    /// Curvature bounds `(m, L)` with `m <= f''(x) <= L` on the box.
    ///
    /// `m` is the strong-convexity modulus and `L` the gradient-Lipschitz
    /// constant. Each family's second derivative is monotone in `x`, so the
    /// bounds are evaluated at the box endpoints and are tight per family;
    /// sums combine endpoint bounds componentwise (valid, tight when the
    /// terms' curvatures are monotone the same way). A negative `m` signals
    /// non-convexity on the box.
    pub fn curvature_bounds(&self, bounds: Bounds) -> (f64, f64) {
        match self {
            ScalarFn::Sum(terms) => terms.iter().fold((0.0, 0.0), |(m, l), t| {
                let (tm, tl) = t.curvature_bounds(bounds);
                (m + tm, l + tl)
            }),
            _ => {
                let at_lo = self.second_derivative_unchecked(bounds.lo());
                let at_hi = self.second_derivative_unchecked(bounds.hi());
                (at_lo.min(at_hi), at_lo.max(at_hi))
            }
        }
    }
}

/// Derivative tolerance for the scalar box-constrained solve.
pub const ARGMIN_TOL: f64 = 1e-10;
const ARGMIN_MAX_ITER: usize = 200;

/// Minimizes `fn_sum(x) + linear_coef*x + (prox_weight/2)*(x - prox_center)^2`
/// over the box. This is the single scalar solve behind every agent update.
///
/// Requires `fn_sum` convex on the box, or a proximal weight exceeding the
/// magnitude of its negative curvature so the subproblem is strictly convex.
/// The returned point satisfies first-order optimality at [`ARGMIN_TOL`]:
/// derivative `>= -tol` at `lo`, `<= tol` at `hi`, `|derivative| <= tol`
/// in the interior.
pub fn argmin_shifted(
    fn_sum: &ScalarFn,
    linear_coef: f64,
    prox_center: f64,
    prox_weight: f64,
    bounds: Bounds,
) -> Result<f64, SolveError> {
    let (m, _) = fn_sum.curvature_bounds(bounds);
    if m < 0.0 && prox_weight <= -m {
        return Err(SolveError::NonConvex {
            detail: alloc::format!(
                "curvature lower bound {m} not rescued by proximal weight {prox_weight}"
            ),
        });
    }

    let dphi = |x: f64| -> Result<f64, FnError> {
        Ok(fn_sum.grad(x)? + linear_coef + prox_weight * (x - prox_center))
    };

    let (lo, hi) = (bounds.lo(), bounds.hi());
    let d_lo = dphi(lo)?;
    if d_lo >= 0.0 {
        return Ok(lo);
    }
    let d_hi = dphi(hi)?;
    if d_hi <= 0.0 {
        return Ok(hi);
    }

    // Bracketed root of the monotone derivative: Newton when it stays inside
    // the bracket, bisection otherwise.
    let mut a = lo;
    let mut b = hi;
    let mut x = 0.5 * (lo + hi);
    for _ in 0..ARGMIN_MAX_ITER {
        let d = dphi(x)?;
        if d.abs() <= ARGMIN_TOL {
            return Ok(x);
        }
        if d < 0.0 {
            a = x;
        } else {
            b = x;
        }
        let h = fn_sum.second_derivative(x)? + prox_weight;
        let newton = x - d / h;
        x = if h.is_finite() && h > 0.0 && newton > a && newton < b {
            newton
        } else {
            0.5 * (a + b)
        };
        // The bracket can hit f64 resolution before the derivative meets the
        // tolerance when curvature is extreme; the midpoint is then the best
        // representable answer.
        if (b - a) <= 4.0 * f64::EPSILON * (1.0 + x.abs()) {
            return Ok(x);
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn quad(a: f64, b: f64, c: f64) -> ScalarFn {
        ScalarFn::quadratic(a, b, c).unwrap()
    }

    #[test]
    fn eval_matches_family_formulas() {
        assert_eq!(quad(1.0, 2.0, 0.0).eval(0.0).unwrap(), 4.0);
        // 2^1 - 1
        assert_eq!(ScalarFn::inv_shannon(1.0, 1.0).unwrap().eval(1.0).unwrap(), 1.0);
        let sum = ScalarFn::sum(vec![quad(1.0, 2.0, 0.0), ScalarFn::linear(1.0, 0.0).unwrap()])
            .unwrap();
        assert_eq!(sum.eval(2.0).unwrap(), 2.0);
    }

    #[test]
    fn grad_matches_analytic_values() {
        assert_eq!(quad(1.0, 2.0, 0.0).grad(0.0).unwrap(), -4.0);
        let shannon = ScalarFn::inv_shannon(1.0, 1.0).unwrap();
        assert!((shannon.grad(0.0).unwrap() - core::f64::consts::LN_2).abs() < 1e-15);
        let lin = ScalarFn::linear(3.0, 5.0).unwrap();
        assert_eq!(lin.grad(-7.3).unwrap(), 3.0);
        assert_eq!(lin.grad(11.0).unwrap(), 3.0);
    }

    #[test]
    fn curvature_bounds_per_family() {
        let b01 = Bounds::new(0.0, 1.0).unwrap();
        assert_eq!(quad(1.0, 5.0, 1.0).curvature_bounds(b01), (2.0, 2.0));
        let (m, l) = ScalarFn::inv_shannon(1.0, 1.0).unwrap().curvature_bounds(b01);
        let ln2sq = core::f64::consts::LN_2 * core::f64::consts::LN_2;
        assert!((m - ln2sq).abs() < 1e-15);
        assert!((l - 2.0 * ln2sq).abs() < 1e-15);
        assert_eq!(ScalarFn::linear(2.0, 0.0).unwrap().curvature_bounds(b01), (0.0, 0.0));
        // Concave cost reports negative lower curvature.
        let (m, l) = ScalarFn::log_concave_cost(1.0, 1.0).unwrap().curvature_bounds(b01);
        assert!(m < 0.0 && l <= 0.0);
    }

    #[test]
    fn domain_violations_are_rejected() {
        let shannon = ScalarFn::inv_shannon(1.0, 1.0).unwrap();
        assert!(matches!(shannon.eval(-0.5), Err(FnError::Domain { .. })));
        assert!(matches!(shannon.grad(-1e-9), Err(FnError::Domain { .. })));
        // Quadratics are defined everywhere.
        assert!(quad(1.0, 0.0, 0.0).eval(-3.0).is_ok());
    }

    #[test]
    fn invalid_params_rejected_at_construction() {
        assert!(ScalarFn::inv_shannon(0.0, 1.0).is_err());
        assert!(ScalarFn::inv_shannon(1.0, -2.0).is_err());
        assert!(ScalarFn::log_concave_cost(-1.0, 1.0).is_err());
        assert!(ScalarFn::power_law(1.0, 0.5).is_err());
        assert!(ScalarFn::quadratic(f64::NAN, 0.0, 0.0).is_err());
        // Negative quadratic curvature is constructible; validation layers
        // report it as a convexity violation instead.
        assert!(ScalarFn::quadratic(-1.0, 0.0, 0.0).is_ok());
    }

    #[test]
    fn argmin_examples() {
        let b = Bounds::new(0.0, 10.0).unwrap();
        let x = argmin_shifted(&quad(1.0, 2.0, 0.0), 0.0, 0.0, 0.0, b).unwrap();
        assert!((x - 2.0).abs() <= 1e-9);

        let tight = Bounds::new(0.0, 1.0).unwrap();
        let x = argmin_shifted(&quad(1.0, 2.0, 0.0), 0.0, 0.0, 0.0, tight).unwrap();
        assert_eq!(x, 1.0);

        // f + g with g = 0.5 x^2: stationarity 3x = 4.
        let fg = ScalarFn::sum(vec![quad(1.0, 2.0, 0.0), quad(0.5, 0.0, 0.0)]).unwrap();
        let x = argmin_shifted(&fg, 0.0, 0.0, 0.0, b).unwrap();
        assert!((x - 4.0 / 3.0).abs() <= 1e-9);
    }

    #[test]
    fn argmin_rejects_unrescued_nonconvexity() {
        let concave = quad(-1.0, 0.0, 0.0);
        let b = Bounds::new(0.0, 1.0).unwrap();
        assert!(matches!(
            argmin_shifted(&concave, 0.0, 0.0, 0.0, b),
            Err(SolveError::NonConvex { .. })
        ));
        // Sufficient proximal weight rescues it: minimize -x^2 + (3/2)(x-0.2)^2.
        let x = argmin_shifted(&concave, 0.0, 0.2, 3.0, b).unwrap();
        // Stationarity: -2x + 3(x - 0.2) = 0 -> x = 0.6.
        assert!((x - 0.6).abs() <= 1e-9);
    }

    #[test]
    fn argmin_linear_hits_the_correct_edge() {
        let b = Bounds::new(0.0, 10.0).unwrap();
        let lin = ScalarFn::linear(1.5, 0.0).unwrap();
        assert_eq!(argmin_shifted(&lin, 0.0, 0.0, 0.0, b).unwrap(), 0.0);
        assert_eq!(argmin_shifted(&lin, -3.0, 0.0, 0.0, b).unwrap(), 10.0);
        // Exactly flat: any point is optimal, the lower edge is returned.
        let flat = ScalarFn::linear(0.0, 1.0).unwrap();
        assert_eq!(argmin_shifted(&flat, 0.0, 0.0, 0.0, b).unwrap(), 0.0);
    }
}
