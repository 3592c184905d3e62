use serde::Serialize;

use crate::env::{marginal_mdp, ExoJmdp, Policy};
use crate::error::Result;

const MAX_POWER_ITERATIONS: usize = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistSource {
    Stationary,
    UniformFallback,
}

/// Weighting distribution over X.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StationaryDist {
    pub nu: Vec<f64>,
    pub source: DistSource,
    pub diagnostic: Option<String>,
}

impl StationaryDist {
    pub fn uniform(nx: usize, diagnostic: Option<String>) -> Self {
        Self {
            nu: vec![1.0 / nx as f64; nx],
            source: DistSource::UniformFallback,
            diagnostic,
        }
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn reach(adj: &[Vec<usize>], from: usize) -> Vec<Option<usize>> {
    let mut level = vec![None; adj.len()];
    level[from] = Some(0);
    let mut queue = std::collections::VecDeque::from([from]);
    while let Some(u) = queue.pop_front() {
        let lu = level[u].unwrap();
        for &v in &adj[u] {
            if level[v].is_none() {
                level[v] = Some(lu + 1);
                queue.push_back(v);
            }
        }
    }
    level
}

/// Which of irreducibility and aperiodicity fails for the chain `adj`, if any.
fn ergodicity_violation(adj: &[Vec<usize>]) -> Option<String> {
    let n = adj.len();
    let fwd = reach(adj, 0);
    let mut rev = vec![Vec::new(); n];
    for (u, out) in adj.iter().enumerate() {
        for &v in out {
            rev[v].push(u);
        }
    }
    let bwd = reach(&rev, 0);
    if let Some(s) = (0..n).find(|&s| fwd[s].is_none() || bwd[s].is_none()) {
        return Some(format!(
            "state chain under the policy is not irreducible (state {s} and state 0 do not communicate)"
        ));
    }
    let mut period = 0;
    for (u, out) in adj.iter().enumerate() {
        for &v in out {
            let d = (fwd[u].unwrap() + 1).abs_diff(fwd[v].unwrap());
            period = gcd(period, d);
        }
    }
    if period != 1 {
        return Some(format!("state chain under the policy is periodic with period {period}"));
    }
    None
}

/// Stationary state-action distribution `nu(s, a) = d(s) pi(a|s)` of the policy's
/// chain, or a uniform fallback when the state chain is not irreducible and aperiodic.
pub fn stationary_distribution(env: &ExoJmdp, policy: &Policy, tol: f64) -> Result<StationaryDist> {
    policy.check_compatible(env)?;
    let mdp = marginal_mdp(env);
    let (ns, na) = (env.num_states(), env.num_actions());
    let nx = env.space().len();
    // P(s -> s') under the policy.
    let mut p = vec![0.0; ns * ns];
    for s in 0..ns {
        for a in 0..na {
            let w = policy.prob(s, a);
            for sp in 0..ns {
                p[s * ns + sp] += w * mdp.p(env.space().x(s, a), sp);
            }
        }
    }
    let adj: Vec<Vec<usize>> = (0..ns)
        .map(|s| (0..ns).filter(|&sp| p[s * ns + sp] > 0.0).collect())
        .collect();
    if let Some(why) = ergodicity_violation(&adj) {
        return Ok(StationaryDist::uniform(nx, Some(format!("{why}; using uniform weights"))));
    }
    let mut d = vec![1.0 / ns as f64; ns];
    let mut converged = false;
    for _ in 0..MAX_POWER_ITERATIONS {
        let mut next = vec![0.0; ns];
        for s in 0..ns {
            for sp in 0..ns {
                next[sp] += d[s] * p[s * ns + sp];
            }
        }
        let total: f64 = next.iter().sum();
        next.iter_mut().for_each(|v| *v /= total);
        let change: f64 = next.iter().zip(&d).map(|(a, b)| (a - b).abs()).sum();
        d = next;
        if change <= tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Ok(StationaryDist::uniform(
            nx,
            Some(format!(
                "power iteration did not reach tolerance {tol} in {MAX_POWER_ITERATIONS} steps; using uniform weights"
            )),
        ));
    }
    let nu: Vec<f64> = (0..nx)
        .map(|x| {
            let (s, a) = env.space().sa(x);
            d[s] * policy.prob(s, a)
        })
        .collect();
    let diagnostic = nu
        .iter()
        .any(|&v| v == 0.0)
        .then(|| "policy leaves some state-action pairs with zero weight".to_string());
    Ok(StationaryDist {
        nu,
        source: DistSource::Stationary,
        diagnostic,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{build_coupling_independent, build_example1, build_wgw, NoiseModel};
    use crate::space::StateActionSpace;

    fn random_walk() -> ExoJmdp {
        // Two states, two actions; each action flips or stays with a fair coin.
        let space = StateActionSpace::new(2, 2).unwrap();
        let g = vec![0.0; 8];
        let h = vec![0, 1, 0, 1, 1, 0, 1, 0];
        ExoJmdp::new(space, NoiseModel::uniform(2).unwrap(), g, h, 0.9).unwrap()
    }

    #[test]
    fn single_state_splits_by_policy() {
        let env = build_example1(0.9).unwrap();
        let pol = Policy::new(vec![vec![0.3, 0.7]]).unwrap();
        let d = stationary_distribution(&env, &pol, 1e-14).unwrap();
        assert_eq!(d.source, DistSource::Stationary);
        assert!((d.nu[0] - 0.3).abs() < 1e-15 && (d.nu[1] - 0.7).abs() < 1e-15);
    }

    #[test]
    fn symmetric_walk_is_uniform() {
        let env = random_walk();
        let d = stationary_distribution(&env, &Policy::uniform(env.space()), 1e-14).unwrap();
        assert_eq!(d.source, DistSource::Stationary);
        assert!(d.nu.iter().all(|v| (v - 0.25).abs() < 1e-14));
    }

    #[test]
    fn absorbing_goal_falls_back() {
        let env = build_wgw(3, 3, (2, 2), 0.3, 0.9).unwrap();
        let d = stationary_distribution(&env, &Policy::uniform(env.space()), 1e-12).unwrap();
        assert_eq!(d.source, DistSource::UniformFallback);
        assert!(d.diagnostic.unwrap().contains("irreducible"));
        assert!(d.nu.iter().all(|&v| v == 1.0 / 36.0));
    }

    #[test]
    fn periodic_chain_falls_back() {
        let space = StateActionSpace::new(2, 1).unwrap();
        let env = ExoJmdp::new(space, NoiseModel::uniform(1).unwrap(), vec![0.0; 2], vec![1, 0], 0.9).unwrap();
        let d = stationary_distribution(&env, &Policy::uniform(env.space()), 1e-12).unwrap();
        assert!(d.diagnostic.unwrap().contains("period 2"));
    }

    #[test]
    fn invariance_holds() {
        let env = build_coupling_independent(4, 0.9).unwrap();
        let pol = Policy::new((0..4).map(|s| vec![0.2 + 0.1 * s as f64, 0.8 - 0.1 * s as f64]).collect()).unwrap();
        let d = stationary_distribution(&env, &pol, 1e-15).unwrap();
        let nx = env.space().len();
        let k = marginal_mdp(&env).state_action_kernel(&pol);
        for y in 0..nx {
            let v: f64 = (0..nx).map(|x| d.nu[x] * k[x * nx + y]).sum();
            assert!((v - d.nu[y]).abs() < 1e-10);
        }
    }
}
