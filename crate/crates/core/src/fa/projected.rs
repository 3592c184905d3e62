use serde::Serialize;

use super::coupling::beta_weight;
use super::features::FeatureMap;
use super::projection::{beta_distance, project, LinearMoments};
use crate::dp::apply_t2;
use crate::env::{ExoJmdp, Policy};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectedOptions {
    pub epsilon: f64,
    pub max_iter: usize,
    /// Coupling coefficient used to pick the norm weight and quoted in diagnostics.
    pub sqrt_c_rho: f64,
    /// Iterate even when `gamma^2 sqrt_c_rho >= 1`.
    pub override_assumption: bool,
    /// Consecutive growing steps treated as divergence.
    pub patience: usize,
}

impl ProjectedOptions {
    pub fn new(epsilon: f64, max_iter: usize, sqrt_c_rho: f64) -> Self {
        Self {
            epsilon,
            max_iter,
            sqrt_c_rho,
            override_assumption: false,
            patience: 10,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProjectedStatus {
    Converged,
    NotConverged,
    Diverged,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ProjectedRecord {
    pub iteration: usize,
    /// Weighted distance between iterates `k` and `k + 1`.
    pub distance: f64,
    /// `distance_k / distance_{k-1}`.
    pub ratio: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ProjectedReport {
    pub moments: LinearMoments,
    pub status: ProjectedStatus,
    pub trace: Vec<ProjectedRecord>,
    pub iterations: usize,
    pub beta: f64,
    /// Contraction factor implied by `beta`; absent when the assumption fails.
    pub kappa: Option<f64>,
    pub sqrt_c_rho: f64,
    pub diagnostic: Option<String>,
    /// Largest asymmetry removed from a projected target.
    pub max_asymmetry: f64,
}

/// Iterates `theta <- Pi T (M(theta))` from zero, with `T` the exact operator on
/// dense tables, until successive induced tables are within `epsilon` in the
/// `(nu, beta)` norm.
///
/// When `gamma^2 sqrt_c_rho >= 1` and the assumption is overridden, `beta` is
/// taken as if `sqrt_c_rho = 1`.
pub fn projected_jipe2(
    env: &ExoJmdp,
    policy: &Policy,
    features: &FeatureMap,
    nu: &[f64],
    opts: &ProjectedOptions,
) -> Result<ProjectedReport> {
    let gamma = env.gamma();
    features.check_nx(env.space().len())?;
    if !(opts.epsilon > 0.0) {
        return Err(Error::InvalidInput(format!("epsilon must be > 0, got {}", opts.epsilon)));
    }
    let g2c = gamma * gamma * opts.sqrt_c_rho;
    let (beta, kappa) = match beta_weight(gamma, opts.sqrt_c_rho) {
        Ok(b) => (b.beta, Some(b.kappa)),
        Err(Error::AssumptionViolated(msg)) if opts.override_assumption => {
            let _ = msg;
            (beta_weight(gamma, 1.0)?.beta, None)
        }
        Err(e) => return Err(e),
    };

    let mut theta = LinearMoments::zeros(features.dim());
    let mut current = theta.densify(features);
    let mut trace: Vec<ProjectedRecord> = Vec::new();
    let mut growing = 0usize;
    let mut max_asymmetry = 0.0f64;
    let mut k = 0usize;
    let (status, diagnostic) = loop {
        let target = apply_t2(env, policy, &current)?;
        if target.mu().iter().chain(target.sigma()).any(|v| !v.is_finite()) {
            break (
                ProjectedStatus::Diverged,
                Some(format!("iterate overflowed at step {k}; gamma^2 sqrt(c_rho) = {g2c}")),
            );
        }
        let (next, asym) = project(&target, features, nu)?;
        max_asymmetry = max_asymmetry.max(asym);
        let next_dense = next.densify(features);
        let distance = beta_distance(&next_dense, &current, nu, beta)?;
        let ratio = trace.last().map(|r| distance / r.distance);
        trace.push(ProjectedRecord {
            iteration: k,
            distance,
            ratio,
        });
        theta = next;
        current = next_dense;
        k += 1;
        if !distance.is_finite() {
            break (
                ProjectedStatus::Diverged,
                Some(format!("distance became non-finite; gamma^2 sqrt(c_rho) = {g2c}")),
            );
        }
        if distance <= opts.epsilon {
            break (ProjectedStatus::Converged, None);
        }
        growing = match ratio {
            Some(r) if r > 1.0 => growing + 1,
            _ => 0,
        };
        if growing >= opts.patience {
            break (
                ProjectedStatus::Diverged,
                Some(format!(
                    "successive distances grew for {growing} consecutive iterations; \
                     gamma^2 sqrt(c_rho) = {g2c} (gamma = {gamma}, sqrt(c_rho) = {})",
                    opts.sqrt_c_rho
                )),
            );
        }
        if k >= opts.max_iter {
            break (ProjectedStatus::NotConverged, None);
        }
    };
    Ok(ProjectedReport {
        moments: theta,
        status,
        trace,
        iterations: k,
        beta,
        kappa,
        sqrt_c_rho: opts.sqrt_c_rho,
        diagnostic,
        max_asymmetry,
    })
}
