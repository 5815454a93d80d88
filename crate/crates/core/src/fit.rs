use serde::{Deserialize, Serialize};

/// How an iterative fit or projection ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitStatus {
    /// Relative objective change fell below the tolerance.
    Converged,
    /// Iteration budget exhausted before the tolerance was met.
    MaxIterations,
    /// Line search could not find an acceptable step; the current iterate was kept.
    Stalled,
}

impl FitStatus {
    pub fn is_converged(self) -> bool {
        self == FitStatus::Converged
    }
}

/// Penalty on the per-parent blocks `Z^j`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PenaltyKind {
    /// `Σ_j (1/m_j)·1ᵀZ^j1`, i.e. `Σ_j γ_j` on the nonnegative MTD set.
    #[serde(rename = "l1")]
    L1,
    /// `Σ_j ‖Z^j‖_F`.
    #[serde(rename = "group")]
    GroupLasso,
}

impl PenaltyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PenaltyKind::L1 => "l1",
            PenaltyKind::GroupLasso => "group",
        }
    }
}

impl std::str::FromStr for PenaltyKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "l1" => Ok(PenaltyKind::L1),
            "group" => Ok(PenaltyKind::GroupLasso),
            other => Err(crate::Error::Parse(format!("unknown penalty '{other}' (expected l1|group)"))),
        }
    }
}

impl std::fmt::Display for PenaltyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A model family together with its penalty.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "mtd-l1")]
    MtdL1,
    #[serde(rename = "mtd-group")]
    MtdGroup,
    #[serde(rename = "mltd-group")]
    MltdGroup,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::MtdL1, ModelKind::MtdGroup, ModelKind::MltdGroup];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::MtdL1 => "mtd-l1",
            ModelKind::MtdGroup => "mtd-group",
            ModelKind::MltdGroup => "mltd-group",
        }
    }

    /// Penalty of an MTD kind; `None` for mLTD.
    pub fn mtd_penalty(self) -> Option<PenaltyKind> {
        match self {
            ModelKind::MtdL1 => Some(PenaltyKind::L1),
            ModelKind::MtdGroup => Some(PenaltyKind::GroupLasso),
            ModelKind::MltdGroup => None,
        }
    }

    /// Combines a model name (`mtd` or `mltd`) with a penalty; mLTD only takes the group penalty.
    pub fn from_parts(model: &str, penalty: PenaltyKind) -> crate::Result<Self> {
        match (model, penalty) {
            ("mtd", PenaltyKind::L1) => Ok(ModelKind::MtdL1),
            ("mtd", PenaltyKind::GroupLasso) => Ok(ModelKind::MtdGroup),
            ("mltd", PenaltyKind::GroupLasso) => Ok(ModelKind::MltdGroup),
            ("mltd", PenaltyKind::L1) => Err(crate::Error::InvalidConfig(
                "the mLTD model only supports the group penalty".into(),
            )),
            (other, _) => Err(crate::Error::Parse(format!("unknown model '{other}' (expected mtd|mltd)"))),
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| crate::Error::Parse(format!("unknown method '{s}' (expected mtd-l1|mtd-group|mltd-group)")))
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}
