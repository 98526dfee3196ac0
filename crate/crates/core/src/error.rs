use thiserror::Error;

/// Errors raised by the spectral toolkit and the staged constructions.
#[derive(Debug, Error)]
pub enum Error {
    #[error("period {period} exceeds the eigensolver cap {cap}; use local_bands")]
    PeriodTooLarge { period: u64, cap: u64 },

    #[error("period overflow while stacking overlays")]
    PeriodOverflow,

    #[error("energy {energy} is not in the spectrum (|tr| = {trace_abs:e})")]
    NotInSpectrum { energy: f64, trace_abs: f64 },

    #[error("energy {energy} lies in the spectrum; no hyperbolic splitting exists")]
    EllipticEnergy { energy: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("no band of the spectrum meets the window ({lo}, {hi})")]
    NoBandFound { lo: f64, hi: f64 },

    #[error(
        "window ({lo}, {hi}) holds {count} bands by count, none resolvable above width {floor:e} with trace-confirmed edges"
    )]
    BandBelowResolution { lo: f64, hi: f64, count: u128, floor: f64 },

    #[error("interval family is empty")]
    EmptyFamily,

    #[error("interval family is not {eps}-dense in [-4, 4]")]
    DensityFailure { eps: f64 },

    #[error("iteration cap exceeded: {0}")]
    IterationCap(String),

    #[error("degenerate Cayley-Hamilton selection: max |q_h| = {0:e}")]
    DegenerateSelection(f64),

    #[error("stage {stage} failed: {reason}")]
    StageFailure { stage: usize, reason: String },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
