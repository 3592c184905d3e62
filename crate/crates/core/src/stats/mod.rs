//! Gap statistics, correlation matrices and the coupled-rollout Monte Carlo oracle.

mod ecdf;
mod mc;
mod moments;

pub use ecdf::{
    all_pairs, chebyshev_ecdf, gap_report, save_ecdf_csv, write_ecdf_csv, EcdfResult, EcdfRow, GapReport,
};
pub use mc::{
    horizon, mc_coords, mc_oracle, mc_product_moment, Interval, McEstimate, McGap, McOptions, CHUNK_ROLLOUTS,
    Z95, Z99,
};
pub use moments::{cantelli_bound, corr_matrix, gap_stats, CorrMatrix, GapStats, DEGENERATE_VARIANCE};
