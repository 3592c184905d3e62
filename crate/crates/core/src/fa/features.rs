use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::env::io::{check_version, FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::jsonio;
use crate::space::StateActionSpace;

/// Relative singular-value threshold below which a feature matrix is rank deficient.
pub const RANK_TOL: f64 = 1e-10;

/// Feature matrix with one row per state-action pair and full column rank.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    phi: DMatrix<f64>,
}

/// Built-in feature constructions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum FeatureKind {
    /// One column per state-action pair.
    Identity,
    /// `1, t, ..., t^degree` with `t = s / (|S| - 1)`, shared by all actions.
    Polynomial { degree: usize },
    /// One column per state, shared by all actions.
    StateOneHot,
    /// A single column `s + 1`.
    Ramp,
}

pub(crate) fn full_column_rank(m: &DMatrix<f64>) -> bool {
    if m.ncols() == 0 || m.ncols() > m.nrows() {
        return false;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.max();
    max > 0.0 && sv.min() > RANK_TOL * max
}

impl FeatureMap {
    pub fn from_matrix(phi: DMatrix<f64>) -> Result<Self> {
        if let Some(i) = phi.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidFeatures(format!(
                "non-finite entry at row {}, column {}",
                i % phi.nrows(),
                i / phi.nrows()
            )));
        }
        if !full_column_rank(&phi) {
            return Err(Error::InvalidFeatures(format!(
                "{}x{} feature matrix does not have full column rank",
                phi.nrows(),
                phi.ncols()
            )));
        }
        Ok(Self { phi })
    }

    /// Builds from rows `phi[x]`.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        for (x, r) in rows.iter().enumerate() {
            if r.len() != d {
                return Err(Error::schema(
                    format!("phi[{x}]"),
                    format!("expected {d} features, got {}", r.len()),
                ));
            }
        }
        Self::from_matrix(DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]))
    }

    pub fn builtin(kind: FeatureKind, space: &StateActionSpace) -> Result<Self> {
        let nx = space.len();
        let ns = space.num_states();
        let phi = match kind {
            FeatureKind::Identity => DMatrix::identity(nx, nx),
            FeatureKind::Polynomial { degree } => {
                let scale = if ns > 1 { 1.0 / (ns - 1) as f64 } else { 0.0 };
                DMatrix::from_fn(nx, degree + 1, |x, j| {
                    (space.state_of(x) as f64 * scale).powi(j as i32)
                })
            }
            FeatureKind::StateOneHot => DMatrix::from_fn(nx, ns, |x, j| {
                if space.state_of(x) == j {
                    1.0
                } else {
                    0.0
                }
            }),
            FeatureKind::Ramp => DMatrix::from_fn(nx, 1, |x, _| (space.state_of(x) + 1) as f64),
        };
        Self::from_matrix(phi)
    }

    pub fn nx(&self) -> usize {
        self.phi.nrows()
    }

    pub fn dim(&self) -> usize {
        self.phi.ncols()
    }

    pub fn phi(&self) -> &DMatrix<f64> {
        &self.phi
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.phi.row_iter().map(|r| r.iter().copied().collect()).collect()
    }

    pub(crate) fn check_nx(&self, nx: usize) -> Result<()> {
        if self.nx() != nx {
            return Err(Error::InvalidFeatures(format!(
                "features have {} rows, expected |X| = {nx}",
                self.nx()
            )));
        }
        Ok(())
    }
}

/// On-disk feature document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureFile {
    pub format_version: u32,
    pub phi: Vec<Vec<f64>>,
}

pub fn features_from_json(text: &str) -> Result<FeatureMap> {
    let f: FeatureFile = jsonio::from_str(text)?;
    check_version(f.format_version)?;
    FeatureMap::from_rows(&f.phi)
}

pub fn load_features(path: &Path) -> Result<FeatureMap> {
    let f: FeatureFile = jsonio::read(path)?;
    check_version(f.format_version)?;
    FeatureMap::from_rows(&f.phi)
}

pub fn save_features(features: &FeatureMap, path: &Path) -> Result<()> {
    jsonio::write(
        path,
        &FeatureFile {
            format_version: FORMAT_VERSION,
            phi: features.rows(),
        },
    )
}
