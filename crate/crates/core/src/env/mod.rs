//! Finite JMDPs in exogenous-noise form.
//!
//! At state `s` one noise value `u` is drawn and fixes the whole outcome
//! table: action `a` would yield reward `g[s][a][u]` and successor
//! `h[s][a][u]`. Consecutive steps draw fresh noise.

mod builtins;
pub(crate) mod io;

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::error::{Error, Result};
use crate::space::StateActionSpace;

pub use builtins::{
    build_coupling_independent, build_coupling_shared, build_crc, build_divergent_pair,
    build_example1, build_successor_coupling, build_wgw, wgw_fig1_policy, SuccessorCoupling,
    WGW_ACTIONS,
};
pub use io::{
    env_from_json, env_to_json, load_env, load_policy, policy_from_json, policy_to_json, save_env,
    save_policy, EnvFile, PolicyFile, FORMAT_VERSION,
};

/// Tolerance on probability normalization.
pub const PROB_SUM_TOL: f64 = 1e-12;

/// Finite exogenous noise law with strictly positive probabilities.
#[derive(Clone, Debug)]
pub struct NoiseModel {
    probs: Vec<f64>,
    sampler: WeightedIndex<f64>,
}

impl PartialEq for NoiseModel {
    fn eq(&self, other: &Self) -> bool {
        self.probs == other.probs
    }
}

impl NoiseModel {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::schema("noise_probs", "noise support must be non-empty"));
        }
        for (i, &p) in probs.iter().enumerate() {
            if !(p.is_finite() && p > 0.0) {
                return Err(Error::schema(
                    format!("noise_probs[{i}]"),
                    format!("probability must be finite and > 0, got {p}"),
                ));
            }
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > PROB_SUM_TOL {
            return Err(Error::schema(
                "noise_probs",
                format!("probabilities sum to {total}, expected 1"),
            ));
        }
        let sampler = WeightedIndex::new(&probs)
            .map_err(|e| Error::schema("noise_probs", e.to_string()))?;
        Ok(Self { probs, sampler })
    }

    pub fn uniform(n: usize) -> Result<Self> {
        Self::new(vec![1.0 / n as f64; n])
    }

    pub fn support_size(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.sampler.sample(rng)
    }
}

/// Finite JMDP: reward map `g`, successor map `h`, noise law, discount.
#[derive(Clone, Debug, PartialEq)]
pub struct ExoJmdp {
    space: StateActionSpace,
    noise: NoiseModel,
    g: Vec<f64>,
    h: Vec<usize>,
    gamma: f64,
}

impl ExoJmdp {
    /// `g` and `h` are flat `[s][a][u]` tables.
    pub fn new(
        space: StateActionSpace,
        noise: NoiseModel,
        g: Vec<f64>,
        h: Vec<usize>,
        gamma: f64,
    ) -> Result<Self> {
        let nu = noise.support_size();
        let want = space.len() * nu;
        if g.len() != want || h.len() != want {
            return Err(Error::InvalidInput(format!(
                "g/h tables need {want} entries, got {} and {}",
                g.len(),
                h.len()
            )));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::schema("gamma", format!("must lie in (0, 1), got {gamma}")));
        }
        let na = space.num_actions();
        for (i, (&r, &sp)) in g.iter().zip(&h).enumerate() {
            let (s, a, u) = (i / (na * nu), (i / nu) % na, i % nu);
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::schema(
                    format!("g[{s}][{a}][{u}]"),
                    format!("reward {r} outside [0, 1]"),
                ));
            }
            if sp >= space.num_states() {
                return Err(Error::schema(
                    format!("h[{s}][{a}][{u}]"),
                    format!("successor {sp} is not a state index (num_states = {})", space.num_states()),
                ));
            }
        }
        Ok(Self {
            space,
            noise,
            g,
            h,
            gamma,
        })
    }

    pub fn space(&self) -> &StateActionSpace {
        &self.space
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn num_states(&self) -> usize {
        self.space.num_states()
    }

    pub fn num_actions(&self) -> usize {
        self.space.num_actions()
    }

    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        Self::new(self.space, self.noise.clone(), self.g.clone(), self.h.clone(), gamma)
    }

    #[inline]
    fn flat(&self, s: usize, a: usize, u: usize) -> usize {
        (s * self.space.num_actions() + a) * self.noise.support_size() + u
    }

    #[inline]
    pub fn g(&self, s: usize, a: usize, u: usize) -> f64 {
        self.g[self.flat(s, a, u)]
    }

    #[inline]
    pub fn h(&self, s: usize, a: usize, u: usize) -> usize {
        self.h[self.flat(s, a, u)]
    }

    #[cfg(test)]
    pub(crate) fn g_flat(&self) -> &[f64] {
        &self.g
    }

    #[cfg(test)]
    pub(crate) fn h_flat(&self) -> &[usize] {
        &self.h
    }

    /// True when every action self-loops with zero reward under every noise value.
    pub fn is_absorbing_zero(&self, s: usize) -> bool {
        (0..self.num_actions()).all(|a| {
            (0..self.noise.support_size()).all(|u| self.h(s, a, u) == s && self.g(s, a, u) == 0.0)
        })
    }
}

/// Markov policy over a finite space.
#[derive(Clone, Debug, PartialEq)]
pub struct Policy {
    num_states: usize,
    num_actions: usize,
    probs: Vec<f64>,
}

impl Policy {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let num_states = rows.len();
        if num_states == 0 {
            return Err(Error::schema("probs", "policy needs at least one state"));
        }
        let num_actions = rows[0].len();
        let mut probs = Vec::with_capacity(num_states * num_actions);
        for (s, row) in rows.iter().enumerate() {
            if row.len() != num_actions || num_actions == 0 {
                return Err(Error::schema(
                    format!("probs[{s}]"),
                    format!("expected {num_actions} actions, got {}", row.len()),
                ));
            }
            for (a, &p) in row.iter().enumerate() {
                if !(p.is_finite() && p >= 0.0) {
                    return Err(Error::schema(
                        format!("probs[{s}][{a}]"),
                        format!("probability must be finite and >= 0, got {p}"),
                    ));
                }
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > PROB_SUM_TOL {
                return Err(Error::schema(
                    format!("probs[{s}]"),
                    format!("row sums to {total}, expected 1"),
                ));
            }
            probs.extend_from_slice(row);
        }
        Ok(Self {
            num_states,
            num_actions,
            probs,
        })
    }

    pub fn uniform(space: &StateActionSpace) -> Self {
        let n = space.num_actions();
        Self {
            num_states: space.num_states(),
            num_actions: n,
            probs: vec![1.0 / n as f64; space.len()],
        }
    }

    /// Deterministic policy from one action per state.
    pub fn deterministic(num_actions: usize, choice: &[usize]) -> Result<Self> {
        let rows = choice
            .iter()
            .map(|&a| {
                let mut r = vec![0.0; num_actions];
                r[a] = 1.0;
                r
            })
            .collect();
        Self::new(rows)
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    #[inline]
    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.num_actions + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.num_actions..(s + 1) * self.num_actions]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.num_states).map(|s| self.row(s).to_vec()).collect()
    }

    pub fn check_compatible(&self, env: &ExoJmdp) -> Result<()> {
        if self.num_states != env.num_states() || self.num_actions != env.num_actions() {
            return Err(Error::InvalidInput(format!(
                "policy is {}x{} but environment is {}x{}",
                self.num_states,
                self.num_actions,
                env.num_states(),
                env.num_actions()
            )));
        }
        Ok(())
    }
}

/// Per-state action samplers for a policy.
#[derive(Clone, Debug)]
pub struct PolicySampler {
    rows: Vec<WeightedIndex<f64>>,
}

impl PolicySampler {
    pub fn new(policy: &Policy) -> Self {
        let rows = (0..policy.num_states())
            .map(|s| WeightedIndex::new(policy.row(s)).expect("validated policy row"))
            .collect();
        Self { rows }
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, s: usize, rng: &mut R) -> usize {
        self.rows[s].sample(rng)
    }
}

/// One sampled outcome table: the noise index and `(reward, successor)` per action.
#[derive(Clone, Debug, PartialEq)]
pub struct OutcomeTable {
    pub noise_index: usize,
    pub entries: Vec<(f64, usize)>,
}

/// Draws one noise value at `s` and returns the full counterfactual table.
pub fn sample_table<R: Rng + ?Sized>(env: &ExoJmdp, s: usize, rng: &mut R) -> OutcomeTable {
    let u = env.noise.sample(rng);
    let entries = (0..env.num_actions())
        .map(|a| (env.g(s, a, u), env.h(s, a, u)))
        .collect();
    OutcomeTable {
        noise_index: u,
        entries,
    }
}

/// Exact finite joint law of the queried coordinates of an outcome table.
#[derive(Clone, Debug, PartialEq)]
pub struct JointLaw {
    pub state: usize,
    pub actions: Vec<usize>,
    /// Distinct outcome vectors with their probabilities, in a deterministic order.
    pub atoms: Vec<(Vec<(f64, usize)>, f64)>,
}

impl JointLaw {
    /// Law of coordinate `i` alone.
    pub fn marginal(&self, i: usize) -> Vec<((f64, usize), f64)> {
        let mut acc: BTreeMap<(u64, usize), f64> = BTreeMap::new();
        for (o, p) in &self.atoms {
            *acc.entry((o[i].0.to_bits(), o[i].1)).or_insert(0.0) += p;
        }
        acc.into_iter()
            .map(|((r, s), p)| ((f64::from_bits(r), s), p))
            .collect()
    }

    pub fn expect<F: Fn(&[(f64, usize)]) -> f64>(&self, f: F) -> f64 {
        self.atoms.iter().map(|(o, p)| p * f(o)).sum()
    }

    pub fn prob_of(&self, outcome: &[(f64, usize)]) -> f64 {
        self.atoms
            .iter()
            .filter(|(o, _)| o.as_slice() == outcome)
            .map(|(_, p)| p)
            .sum()
    }
}

/// Push-forward of the noise law onto the outcomes of `actions` at `s`.
pub fn induced_jstm(env: &ExoJmdp, s: usize, actions: &[usize]) -> Result<JointLaw> {
    if s >= env.num_states() {
        return Err(Error::InvalidQuery(format!("state {s} out of range")));
    }
    if actions.is_empty() || actions.len() > env.num_actions() {
        return Err(Error::InvalidQuery(format!(
            "need between 1 and {} actions, got {}",
            env.num_actions(),
            actions.len()
        )));
    }
    for (i, &a) in actions.iter().enumerate() {
        if a >= env.num_actions() {
            return Err(Error::InvalidQuery(format!("action {a} out of range")));
        }
        if actions[..i].contains(&a) {
            return Err(Error::InvalidQuery(format!("duplicate action {a} in query")));
        }
    }
    let mut acc: BTreeMap<Vec<(u64, usize)>, f64> = BTreeMap::new();
    for (u, &p) in env.noise.probs().iter().enumerate() {
        let key = actions
            .iter()
            .map(|&a| (env.g(s, a, u).to_bits(), env.h(s, a, u)))
            .collect();
        *acc.entry(key).or_insert(0.0) += p;
    }
    let atoms = acc
        .into_iter()
        .map(|(k, p)| {
            (
                k.into_iter().map(|(r, sp)| (f64::from_bits(r), sp)).collect(),
                p,
            )
        })
        .collect();
    Ok(JointLaw {
        state: s,
        actions: actions.to_vec(),
        atoms,
    })
}

/// Expected rewards and transition kernel of the marginal MDP.
#[derive(Clone, Debug, PartialEq)]
pub struct MarginalMdp {
    pub space: StateActionSpace,
    /// E[R | s, a], indexed by x.
    pub reward_mean: Vec<f64>,
    /// P(s' | s, a), row-major `[x][s']`.
    pub transition: Vec<f64>,
}

impl MarginalMdp {
    pub fn p(&self, x: usize, sp: usize) -> f64 {
        self.transition[x * self.space.num_states() + sp]
    }

    /// P^pi over X: `P((s,a) -> (s',a')) = P(s'|s,a) pi(a'|s')`, row-major.
    pub fn state_action_kernel(&self, policy: &Policy) -> Vec<f64> {
        let nx = self.space.len();
        let ns = self.space.num_states();
        let na = self.space.num_actions();
        let mut k = vec![0.0; nx * nx];
        for x in 0..nx {
            for sp in 0..ns {
                let p = self.transition[x * ns + sp];
                if p == 0.0 {
                    continue;
                }
                for ap in 0..na {
                    k[x * nx + sp * na + ap] += p * policy.prob(sp, ap);
                }
            }
        }
        k
    }
}

pub fn marginal_mdp(env: &ExoJmdp) -> MarginalMdp {
    let space = *env.space();
    let ns = space.num_states();
    let mut reward_mean = vec![0.0; space.len()];
    let mut transition = vec![0.0; space.len() * ns];
    for x in 0..space.len() {
        let (s, a) = space.sa(x);
        for (u, &p) in env.noise.probs().iter().enumerate() {
            reward_mean[x] += p * env.g(s, a, u);
            transition[x * ns + env.h(s, a, u)] += p;
        }
    }
    MarginalMdp {
        space,
        reward_mean,
        transition,
    }
}

/// A state and action pair whose 2-JSTM differs from the product of its marginals.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CouplingWitness {
    pub state: usize,
    pub actions: (usize, usize),
}

/// First pair (in state, then action order) with a non-product 2-JSTM, if any.
pub fn coupling_witness(env: &ExoJmdp, tol: f64) -> Option<CouplingWitness> {
    for s in 0..env.num_states() {
        for a in 0..env.num_actions() {
            for b in (a + 1)..env.num_actions() {
                let law = induced_jstm(env, s, &[a, b]).expect("valid query");
                let ma = law.marginal(0);
                let mb = law.marginal(1);
                let lookup = |m: &[((f64, usize), f64)], o: (f64, usize)| {
                    m.iter().find(|(k, _)| *k == o).map_or(0.0, |(_, p)| *p)
                };
                // Joint mass equal to product mass on every joint atom implies
                // equality everywhere, since both sum to one.
                let non_product = law.atoms.iter().any(|(o, p)| {
                    (p - lookup(&ma, o[0]) * lookup(&mb, o[1])).abs() > tol
                });
                if non_product {
                    return Some(CouplingWitness {
                        state: s,
                        actions: (a, b),
                    });
                }
            }
        }
    }
    None
}
