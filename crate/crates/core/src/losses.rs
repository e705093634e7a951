//! Loss functions and the constants that parameterize the selectors.
//!
//! Each [`LossFunction`] carries the smoothness order `nu` and constant `c0`
//! (`|l'|^nu <= c0 * l`), a bound on loss values over the restricted class, and
//! the gradient bounds used by the step-size schedules.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Logistic,
    Square,
    SquaredHinge,
    Absolute,
    Hinge,
}

impl LossKind {
    pub const ALL: [LossKind; 5] = [
        LossKind::Logistic,
        LossKind::Square,
        LossKind::SquaredHinge,
        LossKind::Absolute,
        LossKind::Hinge,
    ];

    /// Classification kinds expect labels in {-1, +1}.
    pub fn is_classification(self) -> bool {
        matches!(
            self,
            LossKind::Logistic | LossKind::SquaredHinge | LossKind::Hinge
        )
    }

    pub fn is_smooth(self) -> bool {
        matches!(
            self,
            LossKind::Logistic | LossKind::Square | LossKind::SquaredHinge
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Logistic => "logistic",
            LossKind::Square => "square",
            LossKind::SquaredHinge => "squared_hinge",
            LossKind::Absolute => "absolute",
            LossKind::Hinge => "hinge",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s || k.as_str().replace('_', "-") == s)
            .ok_or_else(|| invalid(format!("unknown loss '{s}'")))
    }
}

/// A loss together with the constants of its smoothness and Lipschitz bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossFunction {
    pub kind: LossKind,
    /// Smoothness order; `None` for non-smooth kinds.
    pub nu: Option<u8>,
    /// Smoothness constant; `None` for non-smooth kinds.
    pub c0: Option<f64>,
    /// Upper bound on loss values over the restricted hypothesis class.
    pub ell_max: f64,
    /// Bound on `|l'(f(x), y)|` over the restricted class.
    pub g_scalar: f64,
    /// Bound on the functional gradient norm `||l'(f(x), y) k(x, .)||`.
    pub g_rkhs: f64,
}

impl LossFunction {
    /// Builds the loss with constants derived for hypotheses bounded by
    /// `|f(x)| <= radius * feature_bound` and labels in `[-1, 1]`.
    pub fn new(kind: LossKind, radius: f64, feature_bound: f64) -> Result<Self> {
        if !(radius > 0.0) || !(feature_bound > 0.0) {
            return Err(invalid("radius and feature bound must be positive"));
        }
        let reach = radius * feature_bound;
        let (nu, c0, ell_max, g_scalar) = match kind {
            LossKind::Logistic => (Some(1), Some(1.0), softplus(reach), 1.0),
            LossKind::Square => (
                Some(2),
                Some(4.0),
                (reach + 1.0).powi(2),
                2.0 * (reach + 1.0),
            ),
            LossKind::SquaredHinge => (
                Some(2),
                Some(4.0),
                (reach + 1.0).powi(2),
                2.0 * (reach + 1.0),
            ),
            LossKind::Absolute => (None, None, reach + 1.0, 1.0),
            LossKind::Hinge => (None, None, reach + 1.0, 1.0),
        };
        // k(x, x) <= 1 for the kernels used here, so the functional gradient
        // is bounded by the scalar one times the feature bound.
        Ok(Self {
            kind,
            nu,
            c0,
            ell_max,
            g_scalar,
            g_rkhs: g_scalar * feature_bound.max(1.0),
        })
    }

    pub fn with_ell_max(mut self, ell_max: f64) -> Result<Self> {
        if !(ell_max > 0.0) {
            return Err(invalid("ell_max must be positive"));
        }
        self.ell_max = ell_max;
        Ok(self)
    }

    pub fn is_smooth(&self) -> bool {
        self.nu.is_some()
    }

    /// Gradient bound substituted into the adaptive schedules: `g_scalar` for
    /// first-order smooth losses, 1 for second-order ones.
    pub fn schedule_gradient_bound(&self) -> f64 {
        match self.nu {
            Some(2) => 1.0,
            _ => self.g_scalar,
        }
    }

    fn check(&self, prediction: f64, label: f64) -> Result<()> {
        if !prediction.is_finite() {
            return Err(invalid(format!("non-finite prediction {prediction}")));
        }
        if self.kind.is_classification() {
            if label != 1.0 && label != -1.0 {
                return Err(invalid(format!(
                    "{} loss expects labels in {{-1, +1}}, got {label}",
                    self.kind
                )));
            }
        } else if !(-1.0..=1.0).contains(&label) {
            return Err(invalid(format!(
                "{} loss expects labels in [-1, 1], got {label}",
                self.kind
            )));
        }
        Ok(())
    }

    pub fn value(&self, prediction: f64, label: f64) -> Result<f64> {
        self.check(prediction, label)?;
        let a = prediction;
        let y = label;
        Ok(match self.kind {
            LossKind::Logistic => softplus(-y * a),
            LossKind::Square => (a - y) * (a - y),
            LossKind::SquaredHinge => {
                let m = (1.0 - y * a).max(0.0);
                m * m
            }
            LossKind::Absolute => (a - y).abs(),
            LossKind::Hinge => (1.0 - y * a).max(0.0),
        })
    }

    /// Derivative with respect to the prediction. At kinks the zero
    /// subgradient is returned.
    pub fn derivative(&self, prediction: f64, label: f64) -> Result<f64> {
        self.check(prediction, label)?;
        let a = prediction;
        let y = label;
        Ok(match self.kind {
            LossKind::Logistic => -y * logistic_sigmoid(-y * a),
            LossKind::Square => 2.0 * (a - y),
            LossKind::SquaredHinge => -2.0 * y * (1.0 - y * a).max(0.0),
            LossKind::Absolute => {
                if a > y {
                    1.0
                } else if a < y {
                    -1.0
                } else {
                    0.0
                }
            }
            LossKind::Hinge => {
                if y * a < 1.0 {
                    -y
                } else {
                    0.0
                }
            }
        })
    }

    /// Checks `|l'(a, y)|^nu <= c0 * l(a, y)` on every sample.
    pub fn smoothness_check(&self, samples: &[(f64, f64)]) -> Result<bool> {
        let (nu, c0) = match (self.nu, self.c0) {
            (Some(nu), Some(c0)) => (nu, c0),
            _ => {
                return Err(Error::Unsupported(format!(
                    "{} loss is not smooth",
                    self.kind
                )))
            }
        };
        for &(a, y) in samples {
            let lhs = self.derivative(a, y)?.abs().powi(i32::from(nu));
            if lhs > c0 * self.value(a, y)? {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `1 / (1 + e^{-x})` without overflow.
fn logistic_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
