//! Linear approximation of joint moments: weighted projections with a PSD
//! second-moment parameter, the projected fixed-point iteration, and the pair
//! kernel diagnostics that govern its stability.

mod coupling;
mod features;
mod projected;
mod projection;
mod stationary;

pub use coupling::{
    beta_weight, coupling_coefficient, BetaWeight, CouplingReport, JointKernel, DEFAULT_PAIR_CAP,
};
pub use features::{
    features_from_json, load_features, save_features, FeatureFile, FeatureKind, FeatureMap, RANK_TOL,
};
pub use projected::{projected_jipe2, ProjectedOptions, ProjectedRecord, ProjectedReport, ProjectedStatus};
pub use projection::{
    beta_distance, beta_norm, nu2_norm, nu_norm, project, project_mu, project_sigma_psd, LinearMoments,
    SigmaProjection,
};
pub use stationary::{stationary_distribution, DistSource, StationaryDist};
