//! The two staged constructions and their certification harness.

mod discontinuity;
mod generic;
mod sampling;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use discontinuity::{
    build_lowered, build_stage_b, check_bottom_bracket, choose_h, discontinuity_report, eigen_split, lowering_trial,
    normalize_potential, reverify_history_b, run_construction_b, run_construction_b_from, stage_zero_b,
    verify_l0_growth, verify_smallness_on_spectra_b, BottomBracket, BottomSample, ConstructionBOutcome,
    DiscontinuityReport, HChoice, HyperbolicSplitting, L0Entry, LogValue, LoweringTrial, StageRecordB, TelescopeCheck,
    UnshiftCheck, VerificationReportB,
};
pub use generic::{
    build_hat_potential, build_stage, choose_m0, choose_m_for_stage, find_band_in_shifted_interval, initial_stage,
    min_growth_length, nested_chain, reverify_history_a, run_construction_a, run_construction_a_from,
    trial_vector_residual, verify_property_iii, ChainReport, ConstructionAOutcome, GrowthLength, StageChoice,
    StageRecordA, TrialResidual, VerificationReportA,
};
pub use sampling::{
    chebyshev_nodes, discover_bands, prefix_check, smallness_entry, smallness_target, sweep_lyapunov, MTrial,
    PrefixCheck, SmallnessEntry, SweepLength, SweepRow, SMALLNESS_TOL,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Parameters honor the sufficient bounds exactly.
    Strict,
    /// `m0` and `m` are capped; achieved margins are reported.
    Capped,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "strict" => Ok(Mode::Strict),
            "capped" => Ok(Mode::Capped),
            other => Err(Error::InvalidInput(format!("mode must be strict or capped, got {other:?}"))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Strict => "strict",
            Mode::Capped => "capped",
        })
    }
}

/// Upper limit of the doubling search for `m` in strict mode.
pub const STRICT_M_LIMIT: u64 = 1 << 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstructionConfig {
    /// Number of stages `K` built after stage 0.
    pub stages: u32,
    /// Half period of the initial step potential.
    pub l: u64,
    pub samples_per_band: usize,
    pub mode: Mode,
    pub m0_cap: u64,
    pub m_cap: u64,
    pub seed: u64,
    /// Distance budget for the discontinuity construction.
    pub eps: f64,
    /// One period of the unperturbed potential for the discontinuity construction.
    pub v0: Vec<f64>,
}

impl Default for ConstructionConfig {
    fn default() -> Self {
        Self {
            stages: 2,
            l: 5,
            samples_per_band: 33,
            mode: Mode::Strict,
            m0_cap: 4096,
            m_cap: 1 << 16,
            seed: 0,
            eps: 1.0,
            v0: vec![0.0],
        }
    }
}

impl ConstructionConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidInput(msg.into()));
        if self.l <= 4 {
            return bad("L must exceed 4");
        }
        if self.samples_per_band < 2 {
            return bad("samples_per_band must be at least 2");
        }
        if self.m0_cap < 2 {
            return bad("m0_cap must be at least 2");
        }
        if self.m_cap < 1 {
            return bad("m_cap must be at least 1");
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return bad("eps must be positive");
        }
        if self.v0.is_empty() || self.v0.iter().any(|v| !v.is_finite()) {
            return bad("v0 needs at least one finite value");
        }
        Ok(())
    }

    /// `m0` actually used: the required value, capped in capped mode.
    pub fn effective_m0(&self, required: u64) -> u64 {
        match self.mode {
            Mode::Strict => required,
            Mode::Capped => required.min(self.m0_cap).max(2),
        }
    }

    /// Largest `m` tried by the doubling search.
    pub fn m_limit(&self) -> u64 {
        match self.mode {
            Mode::Strict => STRICT_M_LIMIT,
            Mode::Capped => self.m_cap,
        }
    }
}

/// Where and why a construction stopped early.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageFailure {
    pub stage: u32,
    pub reason: String,
}

impl From<StageFailure> for Error {
    fn from(f: StageFailure) -> Self {
        Error::StageFailure { stage: f.stage as usize, reason: f.reason }
    }
}

/// One re-verified property of a saved stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropertyCheck {
    pub stage: u32,
    pub property: String,
    pub value: f64,
    pub bound: f64,
    /// Positive when the property holds with room to spare.
    pub margin: f64,
    pub pass: bool,
    pub detail: String,
}

impl PropertyCheck {
    /// A check of `value <= bound`.
    pub fn upper(stage: u32, property: impl Into<String>, value: f64, bound: f64, tol: f64) -> Self {
        Self {
            stage,
            property: property.into(),
            value,
            bound,
            margin: bound - value,
            pass: value <= bound + tol,
            detail: String::new(),
        }
    }

    /// A check of `value >= bound`.
    pub fn lower(stage: u32, property: impl Into<String>, value: f64, bound: f64, tol: f64) -> Self {
        Self {
            stage,
            property: property.into(),
            value,
            bound,
            margin: value - bound,
            pass: value >= bound - tol,
            detail: String::new(),
        }
    }

    /// A yes/no check; `count` is the number of offending items.
    pub fn count(stage: u32, property: impl Into<String>, count: usize, detail: String) -> Self {
        Self {
            stage,
            property: property.into(),
            value: count as f64,
            bound: 0.0,
            margin: -(count as f64),
            pass: count == 0,
            detail,
        }
    }

    pub fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = detail.into();
        self
    }
}
