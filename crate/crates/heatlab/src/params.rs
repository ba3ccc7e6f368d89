//! Feasibility of the dimensionless exponent tuple steering the gluing
//! estimates: κ (outer gain), ν (remainder exponent), α (fractional decay),
//! a (spatial decay of inner right-hand sides), γ (inner radius exponent),
//! 5δ (cutoff slack, stored as the combination it always appears in), and a₁
//! (mode-1 spatial decay). The thirteen strict inequalities below make every
//! error term in the composite ansatz summable against the weights actually
//! used; one verified sample point is provided by `ParameterTuple::example`.

use serde::{Deserialize, Serialize};

/// The dimensionless exponents. `delta5` stores the combination 5δ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParameterTuple {
    pub kappa: f64,
    pub nu: f64,
    pub alpha: f64,
    pub a: f64,
    pub gamma: f64,
    pub delta5: f64,
    pub a1: f64,
}

/// Outcome of one inequality: `margin > 0` means satisfied (for the single
/// non-strict bound `a₁ ≤ 1`, `margin ≥ 0` suffices and is flagged so).
#[derive(Debug, Clone, Serialize)]
pub struct InequalityStatus {
    pub name: &'static str,
    pub satisfied: bool,
    pub margin: f64,
}

/// Per-inequality feasibility verdict.
#[derive(Debug, Clone, Serialize)]
pub struct FeasibilityReport {
    pub feasible: bool,
    pub checks: Vec<InequalityStatus>,
}

impl ParameterTuple {
    /// A verified feasible sample: κ = 9/8, ν = 49/100, α = 375/392,
    /// a = 36/19, γ = 9/32, 5δ = 1/64, a₁ = 1/9.
    pub fn example() -> Self {
        Self {
            kappa: 9.0 / 8.0,
            nu: 49.0 / 100.0,
            alpha: 375.0 / 392.0,
            a: 36.0 / 19.0,
            gamma: 9.0 / 32.0,
            delta5: 1.0 / 64.0,
            a1: 1.0 / 9.0,
        }
    }

    /// Evaluates all thirteen inequalities and reports each margin.
    pub fn check(&self) -> FeasibilityReport {
        let Self { kappa, nu, alpha, a, gamma, delta5, a1 } = *self;
        let strict = |name: &'static str, margin: f64| InequalityStatus {
            name,
            satisfied: margin > 0.0,
            margin,
        };
        let checks = vec![
            strict("5d-kappa-a*gamma > -2", delta5 - kappa - a * gamma + 2.0),
            strict("5d-kappa < -1", -1.0 - (delta5 - kappa)),
            strict("0 < a < 2", a.min(2.0 - a)),
            strict("0 < gamma < 1/2", gamma.min(0.5 - gamma)),
            strict("0 < alpha < 1", alpha.min(1.0 - alpha)),
            strict("0 < nu < 1/2", nu.min(0.5 - nu)),
            strict(
                "a1*gamma-2 < 5d-kappa-a*gamma",
                (delta5 - kappa - a * gamma) - (a1 * gamma - 2.0),
            ),
            InequalityStatus {
                name: "0 < a1 <= 1",
                satisfied: a1 > 0.0 && a1 <= 1.0,
                margin: a1.min(1.0 - a1),
            },
            strict("gamma*min(a,a1) > 5d", gamma * a.min(a1) - delta5),
            strict("6d < 1", 1.0 - 6.0 * delta5 / 5.0),
            strict("-nu*alpha+(2-a)*gamma < 0", nu * alpha - (2.0 - a) * gamma),
            strict("1-nu*alpha-a*gamma < 0", nu * alpha + a * gamma - 1.0),
            strict(
                "1-nu*alpha+5d-kappa+2*gamma < 0",
                nu * alpha - delta5 + kappa - 2.0 * gamma - 1.0,
            ),
        ];
        let feasible = checks.iter().all(|c| c.satisfied);
        FeasibilityReport { feasible, checks }
    }
}
