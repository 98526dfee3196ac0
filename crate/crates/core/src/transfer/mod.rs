//! Potential recipes, overflow-safe transfer-matrix products, monodromy,
//! discriminant, periodic Lyapunov exponent and Bloch solutions.

mod bloch;
mod gram;
mod lift;
mod product;
mod recipe;
mod scaled;

pub use bloch::{bloch_solution, BlochVector, BLOCH_MAX_PERIOD};
pub use gram::{bloch_boundary, BlochBoundary, GramProduct};
pub use lift::{LiftedMatrix, SpectralPosition};
pub use product::{
    arccosh_half_trace, discriminant, finite_lyapunov, level_monodromy, lifted_monodromy, lyapunov_periodic, monodromy,
    naive_transfer_product, one_step, range_product, spectral_position, transfer_product, Cocycle, Discriminant,
};
pub use recipe::{BaseRun, PotentialRecipe, StageOverlay, MAX_PERIOD};
pub use scaled::{floor_log2, ldexp, ScaledMatrix2, ScaledScalar};

/// `V(n)` for any integer `n`.
pub fn eval_potential(recipe: &PotentialRecipe, n: i64) -> f64 {
    recipe.eval(n)
}
