//! Convex loss families, the feasible ball, and stepsize schedules.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::vector::{check_dims, dot, norm2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Hinge,
    Logistic,
}

impl std::str::FromStr for LossKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hinge" => Ok(LossKind::Hinge),
            "logistic" => Ok(LossKind::Logistic),
            other => Err(invalid(format!("unknown loss kind `{other}`"))),
        }
    }
}

/// A margin loss `ℓ(y⟨w,x⟩)` plus an optional `(λ/2)‖w‖²` term.
///
/// `strong_convexity` is the modulus λ of the whole function. Without explicit
/// regularization it is zero. `lipschitz` bounds the subgradient norm over the
/// feasible set for data in the unit ball.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossModel {
    pub kind: LossKind,
    pub strong_convexity: f64,
    pub lipschitz: f64,
}

impl LossModel {
    pub fn hinge() -> Self {
        Self {
            kind: LossKind::Hinge,
            strong_convexity: 0.0,
            lipschitz: 1.0,
        }
    }

    pub fn logistic() -> Self {
        Self {
            kind: LossKind::Logistic,
            strong_convexity: 0.0,
            lipschitz: 1.0,
        }
    }

    pub fn new(kind: LossKind) -> Self {
        match kind {
            LossKind::Hinge => Self::hinge(),
            LossKind::Logistic => Self::logistic(),
        }
    }

    /// Adds `(λ/2)‖w‖²`. On a ball of radius `r` the gradient of that term is
    /// at most `λr`, so the Lipschitz bound becomes `1 + λr`.
    pub fn regularized(self, lambda: f64, set: &FeasibleSet) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(invalid(format!("regularization must be >= 0, got {lambda}")));
        }
        Ok(Self {
            strong_convexity: lambda,
            lipschitz: 1.0 + lambda * set.radius,
            ..self
        })
    }

    /// Replaces the Lipschitz bound. Runs check it against observed norms.
    pub fn with_lipschitz(self, lipschitz: f64) -> Result<Self> {
        if !(lipschitz > 0.0 && lipschitz.is_finite()) {
            return Err(invalid(format!("lipschitz bound must be > 0, got {lipschitz}")));
        }
        Ok(Self { lipschitz, ..self })
    }

    pub fn value(&self, w: &[f64], x: &[f64], y: f64) -> Result<f64> {
        check_dims(w, x)?;
        check_label(y)?;
        Ok(self.value_unchecked(w, x, y))
    }

    pub fn subgradient(&self, w: &[f64], x: &[f64], y: f64) -> Result<Vec<f64>> {
        check_dims(w, x)?;
        check_label(y)?;
        let mut g = vec![0.0; w.len()];
        self.subgradient_into(w, x, y, &mut g);
        Ok(g)
    }

    pub(crate) fn value_unchecked(&self, w: &[f64], x: &[f64], y: f64) -> f64 {
        let z = y * dot(w, x);
        let base = match self.kind {
            LossKind::Hinge => (1.0 - z).max(0.0),
            LossKind::Logistic => softplus(-z),
        };
        if self.strong_convexity > 0.0 {
            base + 0.5 * self.strong_convexity * dot(w, w)
        } else {
            base
        }
    }

    /// Writes a subgradient at `w` into `out`. At the hinge kink (margin
    /// exactly 1) the zero vector is used for the data term.
    pub(crate) fn subgradient_into(&self, w: &[f64], x: &[f64], y: f64, out: &mut [f64]) {
        let z = y * dot(w, x);
        let coef = match self.kind {
            LossKind::Hinge => {
                if z < 1.0 {
                    -y
                } else {
                    0.0
                }
            }
            LossKind::Logistic => -y * sigmoid(-z),
        };
        let lambda = self.strong_convexity;
        for ((o, &xi), &wi) in out.iter_mut().zip(x).zip(w) {
            *o = if lambda > 0.0 {
                coef * xi + lambda * wi
            } else {
                coef * xi
            };
        }
    }
}

fn check_label(y: f64) -> Result<()> {
    if y == 1.0 || y == -1.0 {
        Ok(())
    } else {
        Err(invalid(format!("label must be +1 or -1, got {y}")))
    }
}

/// `ln(1 + e^u)` without overflow.
fn softplus(u: f64) -> f64 {
    if u > 0.0 {
        u + (-u).exp().ln_1p()
    } else {
        u.exp().ln_1p()
    }
}

fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// Euclidean ball `{w : ‖w‖ ≤ radius}` centered at the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeasibleSet {
    pub radius: f64,
}

impl Default for FeasibleSet {
    fn default() -> Self {
        Self { radius: 1.0 }
    }
}

impl FeasibleSet {
    pub fn new(radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(invalid(format!("radius must be > 0, got {radius}")));
        }
        Ok(Self { radius })
    }

    pub fn diameter(&self) -> f64 {
        2.0 * self.radius
    }

    pub fn contains(&self, w: &[f64]) -> bool {
        norm2(w) <= self.radius * (1.0 + 4.0 * f64::EPSILON)
    }

    pub fn project(&self, w: &[f64]) -> Vec<f64> {
        let mut out = w.to_vec();
        self.project_in_place(&mut out);
        out
    }

    /// Radial projection. Points within a few ulps of the sphere count as
    /// inside, which makes the map exactly idempotent.
    pub fn project_in_place(&self, w: &mut [f64]) {
        let norm = norm2(w);
        if norm <= self.radius * (1.0 + 4.0 * f64::EPSILON) {
            return;
        }
        let scale = self.radius / norm;
        for v in w.iter_mut() {
            *v *= scale;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum StepsizeSchedule {
    /// `α_t = 1/(λt)`.
    StronglyConvex { lambda: f64 },
    /// `α_t = 1/(2√t)`.
    Convex,
}

impl StepsizeSchedule {
    pub fn strongly_convex(lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(invalid(format!(
                "strongly convex stepsize needs lambda > 0, got {lambda}"
            )));
        }
        Ok(Self::StronglyConvex { lambda })
    }

    /// Picks `1/(λt)` when the loss is strongly convex, `1/(2√t)` otherwise.
    pub fn for_loss(loss: &LossModel) -> Self {
        if loss.strong_convexity > 0.0 {
            Self::StronglyConvex {
                lambda: loss.strong_convexity,
            }
        } else {
            Self::Convex
        }
    }

    pub fn at(&self, t: usize) -> Result<f64> {
        if t == 0 {
            return Err(invalid("stepsize rounds start at 1"));
        }
        Ok(match *self {
            Self::StronglyConvex { lambda } => 1.0 / (lambda * t as f64),
            Self::Convex => 1.0 / (2.0 * (t as f64).sqrt()),
        })
    }
}
