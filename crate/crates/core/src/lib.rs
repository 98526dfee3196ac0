//! Transfer-matrix cocycles of discrete Schrödinger operators, band spectra of
//! periodic potentials, and the two staged limit-periodic constructions
//! (vanishing Lyapunov exponent on dense sets, and a discontinuity at energy 0).
//!
//! The operator is `(Hu)(n) = u(n+1) + u(n-1) + V(n) u(n)`; potentials are
//! described lazily by [`PotentialRecipe`] so periods far beyond memory stay usable.

pub mod construct;
pub mod error;
pub mod intervals;
pub mod io;
pub mod spectrum;
pub mod transfer;

pub use construct::{ConstructionConfig, DiscontinuityReport, Mode, StageRecordA, StageRecordB};
pub use error::{Error, Result};
pub use intervals::{IntervalFamily, OpenInterval, ParentLink};
pub use spectrum::{Band, BandList};
pub use transfer::{
    BaseRun, BlochVector, Cocycle, LiftedMatrix, PotentialRecipe, ScaledMatrix2, SpectralPosition, StageOverlay,
};
