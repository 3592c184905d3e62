use serde::Serialize;

use crate::error::{Error, Result};
use crate::moments::MomentCollection2;
use crate::space::StateActionSpace;

/// Variances below this are treated as zero when forming correlations.
pub const DEGENERATE_VARIANCE: f64 = 1e-12;

/// Mean and variance of `G = Z(s, a) - Z(s, b)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GapStats {
    pub mean: f64,
    pub variance: f64,
    /// Variance before clamping at zero.
    pub raw_variance: f64,
}

impl GapStats {
    pub fn clamped(&self) -> bool {
        self.raw_variance < 0.0
    }
}

fn check_state(space: &StateActionSpace, m: &MomentCollection2, s: usize) -> Result<()> {
    if m.nx() != space.len() {
        return Err(Error::InvalidInput(format!(
            "moment collection has |X| = {}, space has {}",
            m.nx(),
            space.len()
        )));
    }
    if s >= space.num_states() {
        return Err(Error::InvalidQuery(format!("state {s} out of range")));
    }
    Ok(())
}

/// `var(X - Y) = E[X^2] + E[Y^2] - 2 E[XY] - (E[X] - E[Y])^2`, clamped at zero.
pub fn gap_stats(m: &MomentCollection2, space: &StateActionSpace, s: usize, a: usize, b: usize) -> Result<GapStats> {
    check_state(space, m, s)?;
    let na = space.num_actions();
    if a >= na || b >= na {
        return Err(Error::InvalidQuery(format!("action out of range: {a}, {b}")));
    }
    if a == b {
        return Err(Error::InvalidQuery(format!("gap needs two distinct actions, got {a} twice")));
    }
    Ok(gap_unchecked(m, space.x(s, a), space.x(s, b)))
}

pub(crate) fn gap_unchecked(m: &MomentCollection2, xa: usize, xb: usize) -> GapStats {
    let mean = m.mu_at(xa) - m.mu_at(xb);
    let raw = m.sigma_at(xa, xa) + m.sigma_at(xb, xb) - 2.0 * m.sigma_at(xa, xb) - mean * mean;
    GapStats {
        mean,
        variance: raw.max(0.0),
        raw_variance: raw,
    }
}

/// One-sided Chebyshev bound on `P(G <= 0)`: `sigma^2 / (sigma^2 + mu^2)`.
pub fn cantelli_bound(mean: f64, variance: f64) -> Result<f64> {
    if !(mean > 0.0) {
        return Err(Error::NotApplicable(format!("bound needs a positive gap mean, got {mean}")));
    }
    if !(variance >= 0.0) {
        return Err(Error::InvalidInput(format!("variance must be >= 0, got {variance}")));
    }
    Ok(variance / (variance + mean * mean))
}

/// Per-state action covariance and correlation. Correlations involving a
/// degenerate variance are `None`; the diagonal is always 1.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CorrMatrix {
    pub state: usize,
    pub cov: Vec<Vec<f64>>,
    pub corr: Vec<Vec<Option<f64>>>,
}

pub fn corr_matrix(m: &MomentCollection2, space: &StateActionSpace, s: usize) -> Result<CorrMatrix> {
    check_state(space, m, s)?;
    let na = space.num_actions();
    let xs: Vec<usize> = (0..na).map(|a| space.x(s, a)).collect();
    let cov: Vec<Vec<f64>> = xs
        .iter()
        .map(|&x| xs.iter().map(|&y| m.sigma_at(x, y) - m.mu_at(x) * m.mu_at(y)).collect())
        .collect();
    let corr = (0..na)
        .map(|i| {
            (0..na)
                .map(|j| {
                    if i == j {
                        Some(1.0)
                    } else if cov[i][i] < DEGENERATE_VARIANCE || cov[j][j] < DEGENERATE_VARIANCE {
                        None
                    } else {
                        Some(cov[i][j] / (cov[i][i] * cov[j][j]).sqrt())
                    }
                })
                .collect()
        })
        .collect();
    Ok(CorrMatrix { state: s, cov, corr })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dp::jipe2;
    use crate::env::{build_crc, build_wgw, Policy};

    fn crc_fixed_point() -> (StateActionSpace, MomentCollection2) {
        let env = build_crc(25, 0.9).unwrap();
        let pol = Policy::uniform(env.space());
        let rep = jipe2(&env, &pol, 1e-12, 100_000, &MomentCollection2::zeros(50)).unwrap();
        (*env.space(), rep.final_moments)
    }

    #[test]
    fn crc_gap_closed_form() {
        let (space, m) = crc_fixed_point();
        let g = gap_stats(&m, &space, 0, 0, 1).unwrap();
        assert!(g.mean.abs() < 1e-12);
        let expected = 1.0 + 2.0 * 0.81 * 0.25 / (1.0 - 0.81);
        assert!((g.variance - expected).abs() < 1e-9);
        assert!(matches!(cantelli_bound(g.mean, g.variance), Err(Error::NotApplicable(_))));
    }

    #[test]
    fn identical_actions_have_zero_gap_variance() {
        let (space, m) = crc_fixed_point();
        let x = space.x(3, 1);
        let g = gap_unchecked(&m, x, x);
        assert_eq!(g.mean, 0.0);
        assert!(g.raw_variance.abs() < 1e-10);
        assert!(gap_stats(&m, &space, 3, 1, 1).is_err());
    }

    #[test]
    fn crc_correlation() {
        let (space, m) = crc_fixed_point();
        let c = corr_matrix(&m, &space, 0).unwrap();
        assert!((c.corr[0][1].unwrap() + 0.19).abs() < 1e-9);
        assert_eq!(c.corr[1][1], Some(1.0));
    }

    #[test]
    fn cantelli_values() {
        assert_eq!(cantelli_bound(1.0, 0.0).unwrap(), 0.0);
        assert_eq!(cantelli_bound(2.0, 4.0).unwrap(), 0.5);
        assert!(cantelli_bound(-1.0, 1.0).is_err());
    }

    #[test]
    fn deterministic_env_has_undefined_correlations() {
        let env = build_wgw(3, 3, (2, 2), 0.0, 0.9).unwrap();
        let pol = Policy::deterministic(4, &[1; 9]).unwrap();
        let rep = jipe2(&env, &pol, 1e-12, 10_000, &MomentCollection2::zeros(36)).unwrap();
        let c = corr_matrix(&rep.final_moments, env.space(), 0).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(c.corr[i][j], if i == j { Some(1.0) } else { None });
            }
        }
    }

    #[test]
    fn wgw_correlations_bounded() {
        let env = build_wgw(3, 3, (2, 2), 0.3, 0.9).unwrap();
        let pol = Policy::uniform(env.space());
        let rep = jipe2(&env, &pol, 1e-12, 10_000, &MomentCollection2::zeros(36)).unwrap();
        for s in 0..9 {
            let c = corr_matrix(&rep.final_moments, env.space(), s).unwrap();
            for row in &c.corr {
                for v in row.iter().flatten() {
                    assert!(v.abs() <= 1.0 + 1e-9);
                }
            }
        }
    }
}
