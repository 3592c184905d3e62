use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default tolerance for the symmetry check on construction, relative to the
/// entry magnitude.
pub const DEFAULT_SYMMETRY_TOL: f64 = 1e-9;

/// Candidate first and second joint moments over X and X x X.
///
/// `sigma` is stored row-major as a full `nx * nx` table and is exactly
/// symmetric after construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentCollection2 {
    nx: usize,
    mu: Vec<f64>,
    sigma: Vec<f64>,
}

impl MomentCollection2 {
    pub fn zeros(nx: usize) -> Self {
        Self {
            nx,
            mu: vec![0.0; nx],
            sigma: vec![0.0; nx * nx],
        }
    }

    pub fn new(mu: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        Self::with_tolerance(mu, sigma, DEFAULT_SYMMETRY_TOL)
    }

    /// Checks shape and symmetry within `tol` (relative to max(1, |entry|)),
    /// then averages the two triangles so the stored table is exactly symmetric.
    pub fn with_tolerance(mu: Vec<f64>, mut sigma: Vec<f64>, tol: f64) -> Result<Self> {
        let nx = mu.len();
        if sigma.len() != nx * nx {
            return Err(Error::InvalidInput(format!(
                "sigma has {} entries, expected {}",
                sigma.len(),
                nx * nx
            )));
        }
        for x in 0..nx {
            for y in (x + 1)..nx {
                let (a, b) = (sigma[x * nx + y], sigma[y * nx + x]);
                let scale = 1f64.max(a.abs()).max(b.abs());
                if (a - b).abs() > tol * scale || a.is_nan() != b.is_nan() {
                    return Err(Error::InvalidInput(format!(
                        "sigma not symmetric at ({x}, {y}): {a} vs {b}"
                    )));
                }
                let avg = 0.5 * (a + b);
                sigma[x * nx + y] = avg;
                sigma[y * nx + x] = avg;
            }
        }
        Ok(Self { nx, mu, sigma })
    }

    /// Internal constructor for operator outputs that are symmetric by construction.
    pub(crate) fn from_parts(mu: Vec<f64>, sigma: Vec<f64>) -> Self {
        let nx = mu.len();
        debug_assert_eq!(sigma.len(), nx * nx);
        Self { nx, mu, sigma }
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    #[inline]
    pub fn mu_at(&self, x: usize) -> f64 {
        self.mu[x]
    }

    #[inline]
    pub fn sigma_at(&self, x: usize, y: usize) -> f64 {
        self.sigma[x * self.nx + y]
    }

    /// Writes `value` at (x, y) and (y, x).
    pub(crate) fn set_sigma_sym(&mut self, x: usize, y: usize, value: f64) {
        self.sigma[x * self.nx + y] = value;
        self.sigma[y * self.nx + x] = value;
    }

    pub(crate) fn set_mu(&mut self, x: usize, value: f64) {
        self.mu[x] = value;
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.nx).all(|x| (0..x).all(|y| self.sigma_at(x, y) == self.sigma_at(y, x)))
    }

    /// Entrywise `self - other`.
    pub fn sub(&self, other: &Self) -> Result<Self> {
        if self.nx != other.nx {
            return Err(Error::InvalidInput(format!(
                "dimension mismatch: {} vs {}",
                self.nx, other.nx
            )));
        }
        Ok(Self {
            nx: self.nx,
            mu: self.mu.iter().zip(&other.mu).map(|(a, b)| a - b).collect(),
            sigma: self
                .sigma
                .iter()
                .zip(&other.sigma)
                .map(|(a, b)| a - b)
                .collect(),
        })
    }

    pub fn scale(&self, c: f64) -> Self {
        Self {
            nx: self.nx,
            mu: self.mu.iter().map(|v| c * v).collect(),
            sigma: self.sigma.iter().map(|v| c * v).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.sub(&other.scale(-1.0))
    }
}

/// Discount and the derived weights lambda = 2/(1-gamma), lambda_k = lambda^(k-1).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaWeights {
    gamma: f64,
    lambda: f64,
}

impl LambdaWeights {
    pub fn new(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::InvalidInput(format!(
                "gamma must lie in (0, 1), got {gamma}"
            )));
        }
        Ok(Self {
            gamma,
            lambda: 2.0 / (1.0 - gamma),
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// lambda_k for k >= 1, by repeated multiplication so that lambda_2 == lambda exactly.
    pub fn lambda_k(&self, k: usize) -> f64 {
        assert!(k >= 1, "order starts at 1");
        let mut w = 1.0;
        for _ in 1..k {
            w *= self.lambda;
        }
        w
    }
}

fn max_abs(values: &[f64], what: &str) -> Result<f64> {
    let mut m = 0.0f64;
    for (i, v) in values.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::InvalidInput(format!(
                "non-finite entry {v} in {what} at flat index {i}"
            )));
        }
        m = m.max(v.abs());
    }
    Ok(m)
}

/// max(||M_mu||_inf, ||M_sigma||_inf / lambda).
pub fn lambda_norm(m: &MomentCollection2, w: &LambdaWeights) -> Result<f64> {
    let a = max_abs(&m.mu, "m_mu")?;
    let b = max_abs(&m.sigma, "m_sigma")? / w.lambda_k(2);
    Ok(a.max(b))
}

/// ||a - b||_lambda.
pub fn lambda_distance(a: &MomentCollection2, b: &MomentCollection2, w: &LambdaWeights) -> Result<f64> {
    lambda_norm(&a.sub(b)?, w)
}

/// Order-k joint moment tables for k = 1..=n, each over X^k in row-major order
/// (first coordinate most significant).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentCollectionN {
    nx: usize,
    tables: Vec<Vec<f64>>,
}

impl MomentCollectionN {
    pub fn zeros(nx: usize, order: usize) -> Self {
        let tables = (1..=order).map(|k| vec![0.0; nx.pow(k as u32)]).collect();
        Self { nx, tables }
    }

    /// Checks table sizes and permutation invariance (relative tolerance `tol`).
    pub fn new(nx: usize, tables: Vec<Vec<f64>>, tol: f64) -> Result<Self> {
        if tables.is_empty() {
            return Err(Error::InvalidInput("order must be at least 1".into()));
        }
        for (i, t) in tables.iter().enumerate() {
            let k = i + 1;
            if t.len() != nx.pow(k as u32) {
                return Err(Error::InvalidInput(format!(
                    "table of order {k} has {} entries, expected {}",
                    t.len(),
                    nx.pow(k as u32)
                )));
            }
        }
        let m = Self { nx, tables };
        for k in 2..=m.order() {
            let t = &m.tables[k - 1];
            let mut coords = vec![0usize; k];
            for flat in 0..t.len() {
                decode(flat, nx, &mut coords);
                coords.sort_unstable();
                let canon = encode(&coords, nx);
                let (a, b) = (t[flat], t[canon]);
                if (a - b).abs() > tol * 1f64.max(a.abs()).max(b.abs()) {
                    return Err(Error::InvalidInput(format!(
                        "table of order {k} not permutation invariant at flat index {flat}"
                    )));
                }
            }
        }
        Ok(m)
    }

    pub(crate) fn from_tables(nx: usize, tables: Vec<Vec<f64>>) -> Self {
        Self { nx, tables }
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn order(&self) -> usize {
        self.tables.len()
    }

    /// Table of order k (1-based).
    pub fn table(&self, k: usize) -> &[f64] {
        &self.tables[k - 1]
    }

    pub fn tables(&self) -> &[Vec<f64>] {
        &self.tables
    }

    pub fn get(&self, coords: &[usize]) -> f64 {
        self.tables[coords.len() - 1][encode(coords, self.nx)]
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        if self.nx != other.nx || self.order() != other.order() {
            return Err(Error::InvalidInput("moment collections differ in shape".into()));
        }
        let tables = self
            .tables
            .iter()
            .zip(&other.tables)
            .map(|(a, b)| a.iter().zip(b).map(|(p, q)| p - q).collect())
            .collect();
        Ok(Self { nx: self.nx, tables })
    }

    /// The order-1 and order-2 tables as a second-order collection.
    pub fn to_second_order(&self) -> Result<MomentCollection2> {
        if self.order() < 2 {
            return Err(Error::InvalidInput("need order at least 2".into()));
        }
        MomentCollection2::new(self.tables[0].clone(), self.tables[1].clone())
    }

    pub fn from_second_order(m: &MomentCollection2) -> Self {
        Self {
            nx: m.nx(),
            tables: vec![m.mu().to_vec(), m.sigma().to_vec()],
        }
    }
}

pub(crate) fn encode(coords: &[usize], nx: usize) -> usize {
    coords.iter().fold(0, |acc, &c| acc * nx + c)
}

pub(crate) fn decode(mut flat: usize, nx: usize, out: &mut [usize]) {
    for slot in out.iter_mut().rev() {
        *slot = flat % nx;
        flat /= nx;
    }
}

/// max over k of ||M^(k)||_inf / lambda_k.
pub fn lambda_norm_n(m: &MomentCollectionN, w: &LambdaWeights) -> Result<f64> {
    let mut out = 0.0f64;
    for (i, t) in m.tables.iter().enumerate() {
        let k = i + 1;
        let v = max_abs(t, &format!("order-{k} table"))? / w.lambda_k(k);
        out = out.max(v);
    }
    Ok(out)
}

pub fn lambda_distance_n(a: &MomentCollectionN, b: &MomentCollectionN, w: &LambdaWeights) -> Result<f64> {
    lambda_norm_n(&a.sub(b)?, w)
}
