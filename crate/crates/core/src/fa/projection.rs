use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use super::features::{full_column_rank, FeatureMap};
use crate::error::{Error, Result};
use crate::moments::MomentCollection2;

/// Linear parameters: `M_mu = Phi theta_mu`, `M_sigma = Phi Theta Phi^T` with `Theta` PSD.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearMoments {
    pub theta_mu: DVector<f64>,
    pub theta_sigma: DMatrix<f64>,
}

#[derive(Serialize)]
struct LinearMomentsDoc {
    theta_mu: Vec<f64>,
    theta_sigma: Vec<Vec<f64>>,
}

impl Serialize for LinearMoments {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        LinearMomentsDoc {
            theta_mu: self.theta_mu.iter().copied().collect(),
            theta_sigma: self
                .theta_sigma
                .row_iter()
                .map(|r| r.iter().copied().collect())
                .collect(),
        }
        .serialize(s)
    }
}

impl LinearMoments {
    pub fn zeros(d: usize) -> Self {
        Self {
            theta_mu: DVector::zeros(d),
            theta_sigma: DMatrix::zeros(d, d),
        }
    }

    /// Smallest eigenvalue of `theta_sigma`.
    pub fn min_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.theta_sigma.clone()).eigenvalues.min()
    }

    /// Dense tables induced on X.
    pub fn densify(&self, features: &FeatureMap) -> MomentCollection2 {
        let phi = features.phi();
        let mu = phi * &self.theta_mu;
        let sigma = phi * &self.theta_sigma * phi.transpose();
        let nx = phi.nrows();
        let mut flat = vec![0.0; nx * nx];
        for x in 0..nx {
            for y in x..nx {
                let v = 0.5 * (sigma[(x, y)] + sigma[(y, x)]);
                flat[x * nx + y] = v;
                flat[y * nx + x] = v;
            }
        }
        MomentCollection2::from_parts(mu.iter().copied().collect(), flat)
    }
}

/// PSD projection of a second-moment table together with the asymmetry removed
/// from the target before projecting.
#[derive(Clone, Debug, PartialEq)]
pub struct SigmaProjection {
    pub theta: DMatrix<f64>,
    /// max |T - T^T| / 2 of the target.
    pub asymmetry: f64,
}

fn check_nu(nu: &[f64], nx: usize) -> Result<()> {
    if nu.len() != nx {
        return Err(Error::InvalidInput(format!("nu has {} entries, expected {nx}", nu.len())));
    }
    if nu.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidInput("nu entries must be finite and non-negative".into()));
    }
    Ok(())
}

/// Thin QR of `D^{1/2} Phi` after checking the weighted design has full rank.
fn weighted_qr(features: &FeatureMap, nu: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>, DVector<f64>)> {
    check_nu(nu, features.nx())?;
    let sqrt_nu = DVector::from_iterator(nu.len(), nu.iter().map(|v| v.sqrt()));
    let b = DMatrix::from_fn(features.nx(), features.dim(), |i, j| sqrt_nu[i] * features.phi()[(i, j)]);
    if !full_column_rank(&b) {
        return Err(Error::InvalidFeatures(
            "weighted feature matrix D^(1/2) Phi does not have full column rank".into(),
        ));
    }
    let qr = b.qr();
    Ok((qr.q(), qr.r(), sqrt_nu))
}

/// Weighted least-squares coefficients of `target` on the feature span.
pub fn project_mu(target: &[f64], features: &FeatureMap, nu: &[f64]) -> Result<DVector<f64>> {
    features.check_nx(target.len())?;
    let (q, r, sqrt_nu) = weighted_qr(features, nu)?;
    let rhs = q.transpose() * DVector::from_iterator(target.len(), target.iter().zip(sqrt_nu.iter()).map(|(t, w)| t * w));
    r.solve_upper_triangular(&rhs)
        .ok_or_else(|| Error::InvalidFeatures("singular triangular factor".into()))
}

/// Minimizer of the nu x nu weighted Frobenius distance between `Phi Theta Phi^T`
/// and the symmetrized target over PSD `Theta`. `target` is row-major |X| x |X|.
pub fn project_sigma_psd(target: &[f64], features: &FeatureMap, nu: &[f64]) -> Result<SigmaProjection> {
    let nx = features.nx();
    if target.len() != nx * nx {
        return Err(Error::InvalidInput(format!(
            "target has {} entries, expected {}",
            target.len(),
            nx * nx
        )));
    }
    let (q, r, w) = weighted_qr(features, nu)?;
    let mut asymmetry = 0.0f64;
    let scaled = DMatrix::from_fn(nx, nx, |i, j| {
        let (a, b) = (target[i * nx + j], target[j * nx + i]);
        asymmetry = asymmetry.max(0.5 * (a - b).abs());
        w[i] * 0.5 * (a + b) * w[j]
    });
    let c = q.transpose() * scaled * &q;
    let c = 0.5 * (&c + c.transpose());
    let eig = SymmetricEigen::new(c);
    let clipped = eig.eigenvalues.map(|l| l.max(0.0));
    let psi = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    let r_inv = r
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::InvalidFeatures("singular triangular factor".into()))?;
    let theta = &r_inv * psi * r_inv.transpose();
    Ok(SigmaProjection {
        theta: 0.5 * (&theta + theta.transpose()),
        asymmetry,
    })
}

/// Applies both projections to dense tables.
pub fn project(m: &MomentCollection2, features: &FeatureMap, nu: &[f64]) -> Result<(LinearMoments, f64)> {
    let theta_mu = project_mu(m.mu(), features, nu)?;
    let s = project_sigma_psd(m.sigma(), features, nu)?;
    Ok((
        LinearMoments {
            theta_mu,
            theta_sigma: s.theta,
        },
        s.asymmetry,
    ))
}

/// sqrt(sum_x nu(x) f(x)^2).
pub fn nu_norm(f: &[f64], nu: &[f64]) -> f64 {
    f.iter().zip(nu).map(|(v, w)| w * v * v).sum::<f64>().sqrt()
}

/// Norm of a row-major |X| x |X| table in L2(nu x nu).
pub fn nu2_norm(f: &[f64], nu: &[f64]) -> f64 {
    let nx = nu.len();
    let mut total = 0.0;
    for x in 0..nx {
        for y in 0..nx {
            let v = f[x * nx + y];
            total += nu[x] * nu[y] * v * v;
        }
    }
    total.sqrt()
}

/// max{||M_mu||_nu, beta ||M_sigma||_{nu x nu}}.
pub fn beta_norm(m: &MomentCollection2, nu: &[f64], beta: f64) -> f64 {
    nu_norm(m.mu(), nu).max(beta * nu2_norm(m.sigma(), nu))
}

pub fn beta_distance(a: &MomentCollection2, b: &MomentCollection2, nu: &[f64], beta: f64) -> Result<f64> {
    Ok(beta_norm(&a.sub(b)?, nu, beta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fa::FeatureKind;
    use crate::space::StateActionSpace;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_features(rng: &mut ChaCha8Rng, nx: usize, d: usize) -> FeatureMap {
        FeatureMap::from_matrix(DMatrix::from_fn(nx, d, |_, _| rng.random_range(-1.0..1.0))).unwrap()
    }

    fn random_nu(rng: &mut ChaCha8Rng, nx: usize) -> Vec<f64> {
        let w: Vec<f64> = (0..nx).map(|_| rng.random_range(0.1..1.0)).collect();
        let t: f64 = w.iter().sum();
        w.iter().map(|v| v / t).collect()
    }

    #[test]
    fn mu_identity_and_mean() {
        let space = StateActionSpace::new(3, 2).unwrap();
        let id = FeatureMap::builtin(FeatureKind::Identity, &space).unwrap();
        let target = [1.0, -2.0, 3.0, 0.5, 7.0, 4.0];
        let nu = [1.0 / 6.0; 6];
        let th = project_mu(&target, &id, &nu).unwrap();
        for (a, b) in th.iter().zip(&target) {
            assert!((a - b).abs() < 1e-12);
        }
        let ones = FeatureMap::from_matrix(DMatrix::from_element(6, 1, 1.0)).unwrap();
        let th = project_mu(&target, &ones, &nu).unwrap();
        assert!((th[0] - target.iter().sum::<f64>() / 6.0).abs() < 1e-12);
    }

    #[test]
    fn mu_residual_orthogonal_and_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = random_features(&mut rng, 8, 3);
        let nu = random_nu(&mut rng, 8);
        let target: Vec<f64> = (0..8).map(|_| rng.random_range(-5.0..5.0)).collect();
        let th = project_mu(&target, &f, &nu).unwrap();
        let fit = f.phi() * &th;
        for j in 0..3 {
            let ip: f64 = (0..8).map(|i| nu[i] * f.phi()[(i, j)] * (fit[i] - target[i])).sum();
            assert!(ip.abs() < 1e-12);
        }
        let fit: Vec<f64> = fit.iter().copied().collect();
        let again = project_mu(&fit, &f, &nu).unwrap();
        assert!((again - th).amax() < 1e-10);
    }

    #[test]
    fn sigma_recovers_representable_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = random_features(&mut rng, 7, 3);
        let nu = random_nu(&mut rng, 7);
        let a = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
        let theta0 = &a * a.transpose();
        let m = LinearMoments {
            theta_mu: DVector::zeros(3),
            theta_sigma: theta0.clone(),
        }
        .densify(&f);
        let p = project_sigma_psd(m.sigma(), &f, &nu).unwrap();
        assert!((p.theta - theta0).amax() < 1e-9);
        assert!(p.asymmetry < 1e-15);
    }

    #[test]
    fn sigma_negative_target_clips_to_zero() {
        let ones = FeatureMap::from_matrix(DMatrix::from_element(4, 1, 1.0)).unwrap();
        let p = project_sigma_psd(&[-2.0; 16], &ones, &[0.25; 4]).unwrap();
        assert_eq!(p.theta[(0, 0)], 0.0);
    }

    #[test]
    fn sigma_records_asymmetry() {
        let ones = FeatureMap::from_matrix(DMatrix::from_element(2, 1, 1.0)).unwrap();
        let p = project_sigma_psd(&[1.0, 0.2, 0.0, 1.0], &ones, &[0.5, 0.5]).unwrap();
        assert!((p.asymmetry - 0.1).abs() < 1e-15);
        assert!((p.theta[(0, 0)] - 0.55).abs() < 1e-12);
    }

    #[test]
    fn zero_weight_rank_loss() {
        let space = StateActionSpace::new(2, 1).unwrap();
        let id = FeatureMap::builtin(FeatureKind::Identity, &space).unwrap();
        assert!(matches!(project_mu(&[1.0, 2.0], &id, &[1.0, 0.0]), Err(Error::InvalidFeatures(_))));
    }

    #[test]
    fn sigma_projection_non_expansive() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..30 {
            let f = random_features(&mut rng, 6, 2);
            let nu = random_nu(&mut rng, 6);
            let sym = |rng: &mut ChaCha8Rng| {
                let a = DMatrix::from_fn(6, 6, |_, _| rng.random_range(-3.0..3.0));
                let s = &a + a.transpose();
                s.iter().copied().collect::<Vec<f64>>()
            };
            let (s1, s2) = (sym(&mut rng), sym(&mut rng));
            let dense = |t: DMatrix<f64>| {
                LinearMoments {
                    theta_mu: DVector::zeros(2),
                    theta_sigma: t,
                }
                .densify(&f)
            };
            let p1 = dense(project_sigma_psd(&s1, &f, &nu).unwrap().theta);
            let p2 = dense(project_sigma_psd(&s2, &f, &nu).unwrap().theta);
            let dp: Vec<f64> = p1.sigma().iter().zip(p2.sigma()).map(|(a, b)| a - b).collect();
            let dt: Vec<f64> = s1.iter().zip(&s2).map(|(a, b)| a - b).collect();
            assert!(nu2_norm(&dp, &nu) <= nu2_norm(&dt, &nu) + 1e-9);
        }
    }

    #[test]
    fn tensor_norm_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let nu = random_nu(&mut rng, 9);
        let f: Vec<f64> = (0..9).map(|_| rng.random_range(-2.0..2.0)).collect();
        // (1 x f)(x, y) = f(y)
        let t: Vec<f64> = (0..81).map(|i| f[i % 9]).collect();
        assert!((nu2_norm(&t, &nu) - nu_norm(&f, &nu)).abs() < 1e-12);
    }
}
