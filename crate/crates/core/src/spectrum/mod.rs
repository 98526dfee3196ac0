//! Band structure of periodic operators: exact and windowed band edges, spectral
//! distance and infimum, integrated density of states, Thouless' formula, and a
//! truncated-operator oracle.

mod bands;
mod ids;
mod local;
mod truncated;

pub use bands::{
    band_edges_exact, band_edges_exact_with_cap, band_index_at, raw_band_edges, spectrum_measure, Band, BandList,
    EXACT_PERIOD_CAP, MERGE_TOL,
};

pub use ids::{ids, ids_by_rotation, ids_from_bands, thouless_lyapunov};
pub use local::{
    band_confirmed, band_edges_by_index, count_position, dist_to_spectrum, in_spectrum, local_bands,
    local_bands_detailed, spectrum_infimum, IndexedBand, LocalBands, DEFAULT_MAX_BANDS, RESOLUTION_FLOOR,
};
pub(crate) use local::{band_piece, spectral_hull};
pub use truncated::{truncated_count, truncated_eigenvalues, TRUNCATION_CAP};
