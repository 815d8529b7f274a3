//! Training losses and their dual gains `g(λ) = -ℓ*(-λ)`.

use std::fmt;
use std::sync::Arc;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    MaxMargin,
    Hinge,
    General,
}

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A concave per-coordinate gain together with the primal loss it comes from.
#[derive(Clone)]
pub struct GeneralLoss {
    pub name: String,
    pub loss: ScalarFn,
    pub gain: ScalarFn,
    pub gain_d1: ScalarFn,
    pub gain_d2: ScalarFn,
    /// Upper end of the gain's domain (`∞` when unbounded).
    pub upper: f64,
    pub c: f64,
}

impl GeneralLoss {
    /// `ℓ(z) = max(0, 1 - z)²`, whose gain is `g(λ) = λ - λ²/4` on `λ ≥ 0`.
    pub fn squared_hinge() -> Self {
        GeneralLoss {
            name: "squared_hinge".into(),
            loss: Arc::new(|z| {
                let s = (1.0 - z).max(0.0);
                s * s
            }),
            gain: Arc::new(|l| l - 0.25 * l * l),
            gain_d1: Arc::new(|l| 1.0 - 0.5 * l),
            gain_d2: Arc::new(|_| -0.5),
            upper: f64::INFINITY,
            c: 1.0,
        }
    }
}

impl fmt::Debug for GeneralLoss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GeneralLoss")
            .field("name", &self.name)
            .field("c", &self.c)
            .finish()
    }
}

#[derive(Clone, Debug)]
pub enum LossModel {
    MaxMargin,
    Hinge { beta: f64 },
    General { beta: f64, family: GeneralLoss },
}

impl LossModel {
    pub fn kind(&self) -> LossKind {
        match self {
            LossModel::MaxMargin => LossKind::MaxMargin,
            LossModel::Hinge { .. } => LossKind::Hinge,
            LossModel::General { .. } => LossKind::General,
        }
    }

    pub fn squared_hinge(beta: f64) -> Self {
        LossModel::General { beta, family: GeneralLoss::squared_hinge() }
    }

    /// Radius of the dual norm ball (1 for max-margin).
    pub fn beta(&self) -> f64 {
        match self {
            LossModel::MaxMargin => 1.0,
            LossModel::Hinge { beta } | LossModel::General { beta, .. } => *beta,
        }
    }

    /// Upper end of the dual box.
    pub fn upper(&self) -> f64 {
        match self {
            LossModel::MaxMargin => f64::INFINITY,
            LossModel::Hinge { .. } => 1.0,
            LossModel::General { family, .. } => family.upper,
        }
    }

    pub fn c_const(&self) -> f64 {
        match self {
            LossModel::General { family, .. } => family.c,
            _ => 1.0,
        }
    }

    pub fn is_penalized(&self) -> bool {
        !matches!(self, LossModel::MaxMargin)
    }

    pub fn loss(&self, z: f64) -> f64 {
        match self {
            LossModel::MaxMargin => {
                if z >= 1.0 - 1e-9 {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            LossModel::Hinge { .. } => (1.0 - z).max(0.0),
            LossModel::General { family, .. } => (family.loss)(z),
        }
    }

    pub fn gain(&self, l: f64) -> f64 {
        match self {
            LossModel::General { family, .. } => (family.gain)(l),
            _ => l,
        }
    }

    pub fn gain_d1(&self, l: f64) -> f64 {
        match self {
            LossModel::General { family, .. } => (family.gain_d1)(l),
            _ => 1.0,
        }
    }

    pub fn gain_d2(&self, l: f64) -> f64 {
        match self {
            LossModel::General { family, .. } => (family.gain_d2)(l),
            _ => 0.0,
        }
    }

    /// `Σ g(λᵢ)` over a nonnegative vector.
    pub fn total_gain(&self, l: &[f64]) -> f64 {
        l.iter().map(|&v| self.gain(v)).sum()
    }
}
