use rayon::prelude::*;
use serde::Serialize;

use crate::env::{ExoJmdp, Policy, PolicySampler};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, StreamRng};

/// Rollouts per generator stream. Streams are merged in index order, so
/// estimates do not depend on the number of worker threads.
pub const CHUNK_ROLLOUTS: usize = 4096;

/// Normal quantile for two-sided 95% intervals.
pub const Z95: f64 = 1.959_963_984_540_054;
/// Normal quantile for two-sided 99% intervals.
pub const Z99: f64 = 2.575_829_303_548_901;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct McOptions {
    pub num_rollouts: usize,
    /// Bound on the discounted tail dropped by truncation, assuming rewards in [0, 1].
    pub trunc_tol: f64,
    pub seed: u64,
    /// Normal quantile for interval half-widths.
    pub z: f64,
}

impl McOptions {
    pub fn new(num_rollouts: usize, trunc_tol: f64, seed: u64) -> Self {
        Self {
            num_rollouts,
            trunc_tol,
            seed,
            z: Z95,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.trunc_tol > 0.0) {
            return Err(Error::InvalidInput(format!("trunc_tol must be > 0, got {}", self.trunc_tol)));
        }
        if self.num_rollouts < 2 {
            return Err(Error::InvalidInput("need at least 2 rollouts".into()));
        }
        if !(self.z > 0.0) {
            return Err(Error::InvalidInput(format!("z must be > 0, got {}", self.z)));
        }
        Ok(())
    }
}

/// Smallest `T` with `gamma^T / (1 - gamma) <= tol`.
pub fn horizon(gamma: f64, tol: f64) -> usize {
    let mut t = 0;
    let mut tail = 1.0 / (1.0 - gamma);
    while tail > tol {
        tail *= gamma;
        t += 1;
    }
    t
}

/// Estimate with a normal-approximation half-width.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Interval {
    pub estimate: f64,
    pub halfwidth: f64,
}

impl Interval {
    pub fn contains(&self, v: f64) -> bool {
        (v - self.estimate).abs() <= self.halfwidth
    }
}

/// Functionals of `G = Z_0 - Z_1` for a queried pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct McGap {
    pub mean: Interval,
    pub variance: Interval,
    /// Frequency of `G <= 0`.
    pub inferiority: Interval,
}

/// Monte Carlo estimates for a set of state-action coordinates.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct McEstimate {
    pub coords: Vec<usize>,
    pub horizon: usize,
    pub num_rollouts: usize,
    /// `E[Z_i]`
    pub mean: Vec<Interval>,
    /// `E[Z_i Z_j]`, row-major over the queried coordinates.
    pub second: Vec<Interval>,
    /// Present when exactly two coordinates are queried.
    pub gap: Option<McGap>,
}

impl McEstimate {
    pub fn second_at(&self, i: usize, j: usize) -> Interval {
        self.second[i * self.coords.len() + j]
    }
}

/// Discounted returns of one joint rollout. Coordinates sharing a state share
/// the first noise draw; every later step draws fresh noise per branch.
fn rollout(
    env: &ExoJmdp,
    sampler: &PolicySampler,
    coords: &[(usize, usize)],
    horizon: usize,
    rng: &mut StreamRng,
    out: &mut [f64],
) {
    let gamma = env.gamma();
    let mut first_u: Vec<(usize, usize)> = Vec::with_capacity(coords.len());
    for (i, &(s0, a0)) in coords.iter().enumerate() {
        let u = match first_u.iter().find(|(s, _)| *s == s0) {
            Some(&(_, u)) => u,
            None => {
                let u = env.noise().sample(rng);
                first_u.push((s0, u));
                u
            }
        };
        let mut total = env.g(s0, a0, u);
        let mut s = env.h(s0, a0, u);
        let mut disc = 1.0;
        for _ in 1..horizon {
            if env.is_absorbing_zero(s) {
                break;
            }
            disc *= gamma;
            let a = sampler.sample(s, rng);
            let u = env.noise().sample(rng);
            total += disc * env.g(s, a, u);
            s = env.h(s, a, u);
        }
        out[i] = total;
    }
}

#[derive(Clone)]
struct Sums {
    n: usize,
    z: Vec<f64>,
    z2: Vec<f64>,
    zz: Vec<f64>,
    zz2: Vec<f64>,
    /// powers 1..=4 of the gap and the count of `G <= 0`
    g: [f64; 4],
    inferior: usize,
}

impl Sums {
    fn new(k: usize) -> Self {
        Self {
            n: 0,
            z: vec![0.0; k],
            z2: vec![0.0; k],
            zz: vec![0.0; k * k],
            zz2: vec![0.0; k * k],
            g: [0.0; 4],
            inferior: 0,
        }
    }

    fn push(&mut self, z: &[f64]) {
        let k = z.len();
        self.n += 1;
        for i in 0..k {
            self.z[i] += z[i];
            self.z2[i] += z[i] * z[i];
            for j in 0..k {
                let p = z[i] * z[j];
                self.zz[i * k + j] += p;
                self.zz2[i * k + j] += p * p;
            }
        }
        if k == 2 {
            let g = z[0] - z[1];
            let mut p = 1.0;
            for slot in self.g.iter_mut() {
                p *= g;
                *slot += p;
            }
            if g <= 0.0 {
                self.inferior += 1;
            }
        }
    }

    fn merge(&mut self, o: &Sums) {
        self.n += o.n;
        let add = |a: &mut [f64], b: &[f64]| a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        add(&mut self.z, &o.z);
        add(&mut self.z2, &o.z2);
        add(&mut self.zz, &o.zz);
        add(&mut self.zz2, &o.zz2);
        add(&mut self.g, &o.g);
        self.inferior += o.inferior;
    }
}

fn interval(sum: f64, sum_sq: f64, n: usize, z: f64) -> Interval {
    let nf = n as f64;
    let mean = sum / nf;
    let var = ((sum_sq - nf * mean * mean) / (nf - 1.0)).max(0.0);
    Interval {
        estimate: mean,
        halfwidth: z * (var / nf).sqrt(),
    }
}

fn gap_functionals(s: &Sums, zq: f64) -> McGap {
    let n = s.n as f64;
    let [m1, m2, m3, m4] = s.g.map(|v| v / n);
    let mean = interval(s.g[0], s.g[1], s.n, zq);
    // Central moments from raw moments.
    let c2 = (m2 - m1 * m1).max(0.0);
    let c4 = (m4 - 4.0 * m1 * m3 + 6.0 * m1 * m1 * m2 - 3.0 * m1.powi(4)).max(0.0);
    let variance = Interval {
        estimate: c2 * n / (n - 1.0),
        halfwidth: zq * ((c4 - c2 * c2).max(0.0) / n).sqrt(),
    };
    let p = s.inferior as f64 / n;
    let inferiority = Interval {
        estimate: p,
        halfwidth: zq * (p * (1.0 - p) / n).sqrt(),
    };
    McGap {
        mean,
        variance,
        inferiority,
    }
}

/// Coupled-rollout estimates for arbitrary distinct coordinates of X.
pub fn mc_coords(env: &ExoJmdp, policy: &Policy, coords: &[usize], opts: &McOptions) -> Result<McEstimate> {
    opts.validate()?;
    policy.check_compatible(env)?;
    let space = env.space();
    if coords.is_empty() {
        return Err(Error::InvalidQuery("no coordinates queried".into()));
    }
    for (i, &x) in coords.iter().enumerate() {
        if x >= space.len() {
            return Err(Error::InvalidQuery(format!("coordinate {x} out of range")));
        }
        if coords[..i].contains(&x) {
            return Err(Error::InvalidQuery(format!("coordinate {x} repeated")));
        }
    }
    let sa: Vec<(usize, usize)> = coords.iter().map(|&x| space.sa(x)).collect();
    let k = coords.len();
    let t = horizon(env.gamma(), opts.trunc_tol);
    let sampler = PolicySampler::new(policy);
    let chunks = opts.num_rollouts.div_ceil(CHUNK_ROLLOUTS);
    let partial: Vec<Sums> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let count = CHUNK_ROLLOUTS.min(opts.num_rollouts - c * CHUNK_ROLLOUTS);
            let mut rng = stream_rng(opts.seed, c as u64);
            let mut sums = Sums::new(k);
            let mut z = vec![0.0; k];
            for _ in 0..count {
                rollout(env, &sampler, &sa, t, &mut rng, &mut z);
                sums.push(&z);
            }
            sums
        })
        .collect();
    let mut total = Sums::new(k);
    for p in &partial {
        total.merge(p);
    }
    let n = total.n;
    Ok(McEstimate {
        coords: coords.to_vec(),
        horizon: t,
        num_rollouts: n,
        mean: (0..k).map(|i| interval(total.z[i], total.z2[i], n, opts.z)).collect(),
        second: (0..k * k).map(|i| interval(total.zz[i], total.zz2[i], n, opts.z)).collect(),
        gap: (k == 2).then(|| gap_functionals(&total, opts.z)),
    })
}

/// Estimates for actions queried at a common state `s`: one shared table draw,
/// then independent continuations.
pub fn mc_oracle(
    env: &ExoJmdp,
    policy: &Policy,
    s: usize,
    actions: &[usize],
    opts: &McOptions,
) -> Result<McEstimate> {
    let space = env.space();
    if s >= space.num_states() || actions.iter().any(|&a| a >= space.num_actions()) {
        return Err(Error::InvalidQuery(format!("state {s} or actions {actions:?} out of range")));
    }
    let coords: Vec<usize> = actions.iter().map(|&a| space.x(s, a)).collect();
    mc_coords(env, policy, &coords, opts)
}

/// Sample of `prod_i Z_{coords[i]}` for possibly repeated coordinates; repeated
/// coordinates refer to one branch.
pub fn mc_product_moment(env: &ExoJmdp, policy: &Policy, coords: &[usize], opts: &McOptions) -> Result<Interval> {
    let mut distinct: Vec<usize> = coords.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    opts.validate()?;
    policy.check_compatible(env)?;
    let space = env.space();
    if distinct.is_empty() || distinct.iter().any(|&x| x >= space.len()) {
        return Err(Error::InvalidQuery(format!("bad coordinates {coords:?}")));
    }
    let powers: Vec<i32> = distinct
        .iter()
        .map(|x| coords.iter().filter(|c| *c == x).count() as i32)
        .collect();
    let sa: Vec<(usize, usize)> = distinct.iter().map(|&x| space.sa(x)).collect();
    let t = horizon(env.gamma(), opts.trunc_tol);
    let sampler = PolicySampler::new(policy);
    let chunks = opts.num_rollouts.div_ceil(CHUNK_ROLLOUTS);
    let partial: Vec<(f64, f64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let count = CHUNK_ROLLOUTS.min(opts.num_rollouts - c * CHUNK_ROLLOUTS);
            let mut rng = stream_rng(opts.seed, c as u64);
            let mut z = vec![0.0; sa.len()];
            let (mut s1, mut s2) = (0.0, 0.0);
            for _ in 0..count {
                rollout(env, &sampler, &sa, t, &mut rng, &mut z);
                let p: f64 = z.iter().zip(&powers).map(|(v, &k)| v.powi(k)).product();
                s1 += p;
                s2 += p * p;
            }
            (s1, s2)
        })
        .collect();
    let (s1, s2) = partial.iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    Ok(interval(s1, s2, opts.num_rollouts, opts.z))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dp::jipe2;
    use crate::env::{build_crc, build_wgw};
    use crate::moments::MomentCollection2;

    #[test]
    fn horizon_is_minimal() {
        let t = horizon(0.9, 1e-6);
        assert!(0.9f64.powi(t as i32) / 0.1 <= 1e-6);
        assert!(0.9f64.powi(t as i32 - 1) / 0.1 > 1e-6);
        assert_eq!(horizon(0.5, 2.0), 0);
    }

    #[test]
    fn deterministic_env_is_exact() {
        let env = build_wgw(3, 3, (2, 2), 0.0, 0.9).unwrap();
        let pol = Policy::deterministic(4, &[1, 1, 0, 1, 1, 0, 1, 1, 0]).unwrap();
        let est = mc_oracle(&env, &pol, 0, &[0, 1], &McOptions::new(500, 1e-9, 1)).unwrap();
        // From (0,0): R -> (1,0) -> (2,0) -> U (2,1) -> U goal at the fourth reward.
        let exact = 0.9f64.powi(3);
        assert!((est.mean[1].estimate - exact).abs() < 1e-12);
        assert_eq!(est.mean[1].halfwidth, 0.0);
        assert_eq!(est.gap.unwrap().inferiority.halfwidth, 0.0);
    }

    #[test]
    fn crc_cross_moment_matches_fixed_point() {
        let env = build_crc(5, 0.9).unwrap();
        let pol = Policy::uniform(env.space());
        let m = jipe2(&env, &pol, 1e-12, 10_000, &MomentCollection2::zeros(10)).unwrap().final_moments;
        let mut opts = McOptions::new(20_000, 1e-6, 7);
        opts.z = Z99;
        let est = mc_oracle(&env, &pol, 0, &[0, 1], &opts).unwrap();
        assert!(est.second_at(0, 1).contains(m.sigma_at(0, 1)), "{:?} vs {}", est.second_at(0, 1), m.sigma_at(0, 1));
        assert!(est.mean[0].contains(m.mu_at(0)));
    }

    #[test]
    fn thread_count_does_not_change_estimates() {
        let env = build_wgw(3, 3, (2, 2), 0.3, 0.9).unwrap();
        let pol = Policy::uniform(env.space());
        let opts = McOptions::new(3 * CHUNK_ROLLOUTS + 17, 1e-4, 11);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| mc_oracle(&env, &pol, 4, &[0, 1], &opts).unwrap())
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn product_moment_reduces_to_pair() {
        let env = build_crc(3, 0.8).unwrap();
        let pol = Policy::uniform(env.space());
        let opts = McOptions::new(5000, 1e-6, 3);
        let pair = mc_oracle(&env, &pol, 0, &[0, 1], &opts).unwrap().second_at(0, 1);
        let prod = mc_product_moment(&env, &pol, &[1, 0], &opts).unwrap();
        assert!((pair.estimate - prod.estimate).abs() < 1e-12);
        assert!(mc_coords(&env, &pol, &[0, 0], &opts).is_err());
        assert!(mc_oracle(&env, &pol, 0, &[0], &McOptions::new(100, 0.0, 1)).is_err());
    }
}
