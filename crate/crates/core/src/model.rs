//! The 14 parsimonious Gaussian covariance parameterizations and their
//! partial-order structure used by the discovery phase.
//!
//! Each model is a three-letter code: the first letter governs the volume
//! `λ`, the second the shape `A` and the third the orientation `D`.
//! `E` means the component is shared across groups, `V` that it varies
//! freely, and `I` (legal in positions 2 and 3 only) that it is the
//! identity.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::RaeddaError;

/// How one factor of the eigen-decomposition behaves across groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Letter {
    /// Identity (spherical shape / axis-aligned orientation).
    Identity,
    /// Equal across groups.
    Equal,
    /// Varies freely per group.
    Variable,
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[allow(clippy::upper_case_acronyms)]
pub enum ModelName {
    EII,
    VII,
    EEI,
    VEI,
    EVI,
    VVI,
    EEE,
    VEE,
    EVE,
    EEV,
    VVE,
    VEV,
    EVV,
    VVV,
}

/// All 14 models, in increasing complexity order (left-to-right reading of
/// the model family chart); used as the deterministic tie-break order.
pub const ALL_MODELS: [ModelName; 14] = [
    ModelName::EII,
    ModelName::VII,
    ModelName::EEI,
    ModelName::VEI,
    ModelName::EVI,
    ModelName::VVI,
    ModelName::EEE,
    ModelName::VEE,
    ModelName::EVE,
    ModelName::EEV,
    ModelName::VVE,
    ModelName::VEV,
    ModelName::EVV,
    ModelName::VVV,
];

impl ModelName {
    pub fn volume(self) -> Letter {
        match self {
            ModelName::EII
            | ModelName::EEI
            | ModelName::EVI
            | ModelName::EEE
            | ModelName::EVE
            | ModelName::EEV
            | ModelName::EVV => Letter::Equal,
            _ => Letter::Variable,
        }
    }

    pub fn shape(self) -> Letter {
        match self {
            ModelName::EII | ModelName::VII => Letter::Identity,
            ModelName::EEI | ModelName::VEI | ModelName::EEE | ModelName::VEE
            | ModelName::EEV | ModelName::VEV => Letter::Equal,
            _ => Letter::Variable,
        }
    }

    pub fn orientation(self) -> Letter {
        match self {
            ModelName::EII
            | ModelName::VII
            | ModelName::EEI
            | ModelName::VEI
            | ModelName::EVI
            | ModelName::VVI => Letter::Identity,
            ModelName::EEE | ModelName::VEE | ModelName::EVE | ModelName::VVE => Letter::Equal,
            ModelName::EEV | ModelName::VEV | ModelName::EVV | ModelName::VVV => Letter::Variable,
        }
    }

    /// Position in the complexity order of [`ALL_MODELS`].
    pub fn complexity_rank(self) -> usize {
        ALL_MODELS.iter().position(|&m| m == self).unwrap()
    }

    /// Whether the eigenvalue-ratio constraint must be enforced for this
    /// model (last column of the free-parameter table).
    pub fn er_required(self) -> bool {
        !matches!(
            self,
            ModelName::EII | ModelName::EEI | ModelName::EEE | ModelName::EEV
        )
    }

    /// Orientation parameter count `γ` for the transductive approach.
    pub fn gamma_transductive(self, e: usize, p: usize) -> usize {
        let rot = p * (p - 1) / 2;
        match self.orientation() {
            Letter::Identity => 0,
            Letter::Equal => rot,
            Letter::Variable => e * rot,
        }
    }

    /// Eigenvalue parameter count `δ` for the transductive approach.
    pub fn delta_transductive(self, e: usize, p: usize) -> usize {
        match (self.volume(), self.shape()) {
            (Letter::Equal, Letter::Identity) => 1,
            (Letter::Variable, Letter::Identity) => e,
            (Letter::Equal, Letter::Equal) => p,
            (Letter::Variable, Letter::Equal) => e + p - 1,
            (Letter::Equal, Letter::Variable) => e * p - (e - 1),
            (Letter::Variable, Letter::Variable) => e * p,
            _ => unreachable!("volume letter is never Identity"),
        }
    }

    /// Orientation parameter count `γ` for the discovery phase of the
    /// inductive approach.
    pub fn gamma_inductive(self, h: usize, p: usize) -> usize {
        let rot = p * (p - 1) / 2;
        match self.orientation() {
            Letter::Variable => h * rot,
            _ => 0,
        }
    }

    /// Eigenvalue parameter count `δ` for the discovery phase of the
    /// inductive approach.
    pub fn delta_inductive(self, h: usize, p: usize) -> usize {
        match (self.volume(), self.shape()) {
            (Letter::Equal, Letter::Identity) => 0,
            (Letter::Variable, Letter::Identity) => h,
            (Letter::Equal, Letter::Equal) => 0,
            (Letter::Variable, Letter::Equal) => h,
            (Letter::Equal, Letter::Variable) => h * p - h,
            (Letter::Variable, Letter::Variable) => h * p,
            _ => unreachable!("volume letter is never Identity"),
        }
    }

    /// Models selectable in the discovery phase after this model was chosen
    /// in the learning phase: every letter may be relaxed (I → E → V for
    /// shape and orientation, E → V for volume) but never tightened.
    pub fn allowed_discovery_models(self) -> Vec<ModelName> {
        ALL_MODELS
            .iter()
            .copied()
            .filter(|m| {
                m.volume() >= self.volume()
                    && m.shape() >= self.shape()
                    && m.orientation() >= self.orientation()
            })
            .collect()
    }

    /// Whether `discovery` is reachable from `self` in the partial order.
    pub fn allows_discovery(self, discovery: ModelName) -> bool {
        self.allowed_discovery_models().contains(&discovery)
    }
}

impl fmt::Display for ModelName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self)
    }
}

impl FromStr for ModelName {
    type Err = RaeddaError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ALL_MODELS
            .iter()
            .copied()
            .find(|m| m.to_string() == s.to_uppercase())
            .ok_or_else(|| RaeddaError::ConfigError(format!("unknown model name `{s}`")))
    }
}
