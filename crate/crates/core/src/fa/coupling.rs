use nalgebra::DMatrix;
use rand::Rng;
use serde::Serialize;

use crate::env::{marginal_mdp, ExoJmdp, Policy};
use crate::error::{Error, Result};
use crate::rng::stream_rng;

/// Default cap on |X|^2 for densified pair kernels.
pub const DEFAULT_PAIR_CAP: usize = 1 << 16;
const MAX_POWER_ITERATIONS: usize = 20_000;
const START_SEED: u64 = 0x6a09_e667_f3bc_c908;

/// Pair kernel `P_2` over X^2. Rows `(x, y)` with `x != y` at a common state
/// follow the coupled one-step law of the two actions; all other rows follow
/// the product law `P_1 x P_1`. Next actions are drawn from the policy
/// independently for the two branches.
pub struct JointKernel {
    nx: usize,
    p1: DMatrix<f64>,
    coupled: Vec<CoupledRow>,
}

struct CoupledRow {
    x: usize,
    y: usize,
    /// (x', y', probability)
    atoms: Vec<(usize, usize, f64)>,
}

impl JointKernel {
    pub fn new(env: &ExoJmdp, policy: &Policy, pair_cap: usize) -> Result<Self> {
        policy.check_compatible(env)?;
        let space = env.space();
        let nx = space.len();
        let pairs = nx.checked_mul(nx).unwrap_or(usize::MAX);
        if pairs > pair_cap {
            return Err(Error::SizeLimit(format!(
                "pair kernel over |X|^2 = {pairs} exceeds the cap of {pair_cap}"
            )));
        }
        let k = marginal_mdp(env).state_action_kernel(policy);
        let p1 = DMatrix::from_row_slice(nx, nx, &k);
        let na = space.num_actions();
        let mut coupled = Vec::new();
        for s in 0..env.num_states() {
            for a in 0..na {
                for b in 0..na {
                    if a == b {
                        continue;
                    }
                    let mut atoms = Vec::new();
                    for (u, &p) in env.noise().probs().iter().enumerate() {
                        let (sa, sb) = (env.h(s, a, u), env.h(s, b, u));
                        for ap in 0..na {
                            let pa = policy.prob(sa, ap);
                            if pa == 0.0 {
                                continue;
                            }
                            for bp in 0..na {
                                let pb = policy.prob(sb, bp);
                                if pb > 0.0 {
                                    atoms.push((space.x(sa, ap), space.x(sb, bp), p * pa * pb));
                                }
                            }
                        }
                    }
                    coupled.push(CoupledRow {
                        x: space.x(s, a),
                        y: space.x(s, b),
                        atoms,
                    });
                }
            }
        }
        Ok(Self { nx, p1, coupled })
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    /// `(P_2 g)(x, y) = E[g(X', Y') | x, y]`.
    pub fn apply(&self, g: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = &self.p1 * g * self.p1.transpose();
        for row in &self.coupled {
            out[(row.x, row.y)] = row.atoms.iter().map(|&(xp, yp, p)| p * g[(xp, yp)]).sum();
        }
        out
    }

    /// Adjoint of [`JointKernel::apply`] under the counting measure.
    pub fn apply_transpose(&self, k: &DMatrix<f64>) -> DMatrix<f64> {
        let mut masked = k.clone();
        for row in &self.coupled {
            masked[(row.x, row.y)] = 0.0;
        }
        let mut out = self.p1.transpose() * masked * &self.p1;
        for row in &self.coupled {
            let w = k[(row.x, row.y)];
            for &(xp, yp, p) in &row.atoms {
                out[(xp, yp)] += w * p;
            }
        }
        out
    }
}

/// Estimated operator norm of `P_2` on L2(nu x nu) and the resulting check.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CouplingReport {
    pub sqrt_c_rho: f64,
    pub gamma: f64,
    pub gamma2_sqrt_c_rho: f64,
    pub satisfied: bool,
    pub iterations: usize,
    pub converged: bool,
}

/// Largest singular value of `D^{1/2} P_2 D^{-1/2}`, `D = diag(nu x nu)`, by power
/// iteration on `A^T A` until the estimate changes by at most `tol` (relative).
/// Pairs with zero weight are excluded from the space.
pub fn coupling_coefficient(
    env: &ExoJmdp,
    policy: &Policy,
    nu: &[f64],
    tol: f64,
    pair_cap: usize,
) -> Result<CouplingReport> {
    let kernel = JointKernel::new(env, policy, pair_cap)?;
    let nx = kernel.nx();
    if nu.len() != nx || nu.iter().any(|&v| !(v >= 0.0)) {
        return Err(Error::InvalidInput(format!("nu must be {nx} non-negative weights")));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidInput(format!("tol must be > 0, got {tol}")));
    }
    let w = DMatrix::from_fn(nx, nx, |x, y| (nu[x] * nu[y]).sqrt());
    let divide = |f: &DMatrix<f64>| f.zip_map(&w, |a, b| if b > 0.0 { a / b } else { 0.0 });
    let a_op = |f: &DMatrix<f64>| kernel.apply(&divide(f)).component_mul(&w);
    let at_op = |h: &DMatrix<f64>| divide(&kernel.apply_transpose(&h.component_mul(&w)));

    let mut rng = stream_rng(START_SEED, 0);
    let mut v = w.map(|c| if c > 0.0 { c * (1.0 + 0.1 * rng.random::<f64>()) } else { 0.0 });
    let norm = v.norm();
    if norm == 0.0 {
        return Err(Error::InvalidInput("nu has no positive entries".into()));
    }
    v /= norm;
    let mut sigma = 0.0;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_POWER_ITERATIONS {
        iterations += 1;
        let u = a_op(&v);
        let s = u.norm();
        let mut next = at_op(&u);
        let n = next.norm();
        if n == 0.0 {
            sigma = s;
            converged = true;
            break;
        }
        next /= n;
        let done = (s - sigma).abs() <= tol * s.max(1.0);
        sigma = s;
        v = next;
        if done {
            converged = true;
            break;
        }
    }
    let gamma = env.gamma();
    let product = gamma * gamma * sigma;
    Ok(CouplingReport {
        sqrt_c_rho: sigma,
        gamma,
        gamma2_sqrt_c_rho: product,
        satisfied: product < 1.0,
        iterations,
        converged,
    })
}

/// Mid-interval weight for the mixed norm and the contraction factor it yields.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BetaWeight {
    pub beta: f64,
    pub kappa: f64,
}

/// `beta = (1 - gamma^2 sqrt_c) / (4 gamma)`, `kappa = max{gamma, 2 beta gamma + gamma^2 sqrt_c}`.
pub fn beta_weight(gamma: f64, sqrt_c_rho: f64) -> Result<BetaWeight> {
    let g2c = gamma * gamma * sqrt_c_rho;
    if !(gamma > 0.0 && gamma < 1.0) || !(sqrt_c_rho >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "need 0 < gamma < 1 and sqrt_c_rho >= 0, got {gamma}, {sqrt_c_rho}"
        )));
    }
    if g2c >= 1.0 {
        return Err(Error::AssumptionViolated(format!(
            "gamma^2 sqrt(c_rho) = {g2c} is not below 1"
        )));
    }
    let beta = (1.0 - g2c) / (4.0 * gamma);
    Ok(BetaWeight {
        beta,
        kappa: gamma.max(2.0 * beta * gamma + g2c),
    })
}
