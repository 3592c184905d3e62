//! Asynchronous stochastic approximation of the second-order operator from
//! one-sample backups drawn through the induced 1- and 2-JSTMs.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dp::t2_coordinate;
use crate::env::{ExoJmdp, Policy, PolicySampler};
use crate::error::{Error, Result};
use crate::moments::{lambda_distance, lambda_norm, LambdaWeights, MomentCollection2};
use crate::rng::{stream_rng, StreamRng};
use crate::space::Index2;

/// Step-size rule. Harmonic uses `c / (c + n)` with `n` the prior visits of the
/// coordinate (an unordered pair for second moments).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum StepRule {
    Harmonic { c: f64 },
    Constant { alpha: f64 },
}

impl Default for StepRule {
    fn default() -> Self {
        StepRule::Harmonic { c: 10.0 }
    }
}

impl StepRule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            StepRule::Harmonic { c } if !(c > 0.0 && c.is_finite()) => {
                Err(Error::InvalidInput(format!("harmonic constant must be > 0, got {c}")))
            }
            StepRule::Constant { alpha } if !(alpha > 0.0 && alpha <= 1.0) => {
                Err(Error::InvalidInput(format!("constant step must lie in (0, 1], got {alpha}")))
            }
            _ => Ok(()),
        }
    }
}

/// Step rule plus per-coordinate visit counters.
#[derive(Clone, Debug)]
pub struct StepSchedule {
    rule: StepRule,
    nx: usize,
    visits: Vec<u64>,
}

impl StepSchedule {
    pub fn new(rule: StepRule, nx: usize) -> Result<Self> {
        rule.validate()?;
        Ok(Self {
            rule,
            nx,
            visits: vec![0; nx + nx * nx],
        })
    }

    fn slot(&self, idx: Index2) -> usize {
        match idx {
            Index2::Mu(x) => x,
            Index2::Sigma(x, y) => self.nx + x.min(y) * self.nx + x.max(y),
        }
    }

    pub fn visits(&self, idx: Index2) -> u64 {
        self.visits[self.slot(idx)]
    }

    /// Step size for the next update at `idx`; counts the visit.
    pub fn next(&mut self, idx: Index2) -> f64 {
        let slot = self.slot(idx);
        let n = self.visits[slot];
        self.visits[slot] += 1;
        match self.rule {
            StepRule::Harmonic { c } => c / (c + n as f64),
            StepRule::Constant { alpha } => alpha,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VisitationScheme {
    /// Cyclic over the coordinate enumeration: means, then second moments row-major.
    Sweep,
    #[default]
    UniformRandom,
}

/// Draws one-sample backups; holds the policy samplers.
pub struct BackupSampler<'a> {
    env: &'a ExoJmdp,
    policy: PolicySampler,
}

impl<'a> BackupSampler<'a> {
    pub fn new(env: &'a ExoJmdp, policy: &Policy) -> Result<Self> {
        policy.check_compatible(env)?;
        Ok(Self {
            env,
            policy: PolicySampler::new(policy),
        })
    }

    /// Reward and successor pair `x' = (s', a')` for action `a` under noise `u`.
    #[inline]
    fn step<R: Rng + ?Sized>(&self, s: usize, a: usize, u: usize, rng: &mut R) -> (f64, usize) {
        let sp = self.env.h(s, a, u);
        let ap = self.policy.sample(sp, rng);
        (self.env.g(s, a, u), self.env.space().x(sp, ap))
    }

    pub fn sample<R: Rng + ?Sized>(&self, m: &MomentCollection2, idx: Index2, rng: &mut R) -> f64 {
        let env = self.env;
        let space = env.space();
        let gamma = env.gamma();
        match idx {
            Index2::Mu(x) => {
                let (s, a) = space.sa(x);
                let u = env.noise().sample(rng);
                let (r, xp) = self.step(s, a, u, rng);
                r + gamma * m.mu_at(xp)
            }
            Index2::Sigma(x, y) if x == y => {
                let (s, a) = space.sa(x);
                let u = env.noise().sample(rng);
                let (r, xp) = self.step(s, a, u, rng);
                r * r + 2.0 * gamma * r * m.mu_at(xp) + gamma * gamma * m.sigma_at(xp, xp)
            }
            Index2::Sigma(x, y) => {
                let ((s, a), (t, b)) = (space.sa(x), space.sa(y));
                let u = env.noise().sample(rng);
                // Same state: one coupled draw. Different states: independent draws.
                let v = if s == t { u } else { env.noise().sample(rng) };
                let (r, xp) = self.step(s, a, u, rng);
                let (rt, yp) = self.step(t, b, v, rng);
                (r + gamma * m.mu_at(xp)) * (rt + gamma * m.mu_at(yp))
            }
        }
    }
}

/// One random backup at coordinate `idx`.
pub fn sample_backup<R: Rng + ?Sized>(
    env: &ExoJmdp,
    policy: &Policy,
    m: &MomentCollection2,
    idx: Index2,
    rng: &mut R,
) -> Result<f64> {
    Ok(BackupSampler::new(env, policy)?.sample(m, idx, rng))
}

/// One trace row, recorded after `update_index` updates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TraceRow {
    pub update_index: u64,
    /// `||M_k - M*||_lambda` when a fixed point was supplied.
    pub lambda_distance: Option<f64>,
    pub step_size_last: f64,
}

#[derive(Clone, Debug)]
pub struct IncrementalRun {
    pub moments: MomentCollection2,
    pub trace: Vec<TraceRow>,
}

#[derive(Clone, Debug)]
pub struct IncrementalOptions<'a> {
    pub rule: StepRule,
    pub visitation: VisitationScheme,
    pub num_updates: u64,
    pub seed: u64,
    /// Trace every `stride` updates (and after the last one); 0 records only the end.
    pub stride: u64,
    pub fixed_point: Option<&'a MomentCollection2>,
}

fn decode_index(i: usize, nx: usize) -> Index2 {
    if i < nx {
        Index2::Mu(i)
    } else {
        let j = i - nx;
        Index2::Sigma(j / nx, j % nx)
    }
}

/// Runs the asynchronous recursion from `m0`. Second-moment updates are mirrored
/// to the swapped coordinate.
pub fn run_incremental(
    env: &ExoJmdp,
    policy: &Policy,
    m0: &MomentCollection2,
    opts: &IncrementalOptions<'_>,
) -> Result<IncrementalRun> {
    if opts.num_updates == 0 {
        return Err(Error::InvalidInput("num_updates must be at least 1".into()));
    }
    let nx = env.space().len();
    if m0.nx() != nx || opts.fixed_point.is_some_and(|f| f.nx() != nx) {
        return Err(Error::InvalidInput("moment collection does not match environment".into()));
    }
    let sampler = BackupSampler::new(env, policy)?;
    let w = LambdaWeights::new(env.gamma())?;
    let mut schedule = StepSchedule::new(opts.rule, nx)?;
    let mut rng: StreamRng = stream_rng(opts.seed, 0);
    let total = nx + nx * nx;
    let mut m = m0.clone();
    let mut trace = Vec::new();
    let mut last_alpha = f64::NAN;

    let mut record = |k: u64, m: &MomentCollection2, alpha: f64| -> Result<()> {
        let lambda_distance = match opts.fixed_point {
            Some(f) => Some(lambda_distance(m, f, &w)?),
            None => None,
        };
        trace.push(TraceRow {
            update_index: k,
            lambda_distance,
            step_size_last: alpha,
        });
        Ok(())
    };

    for k in 0..opts.num_updates {
        let i = match opts.visitation {
            VisitationScheme::Sweep => (k % total as u64) as usize,
            VisitationScheme::UniformRandom => rng.random_range(0..total),
        };
        let idx = decode_index(i, nx);
        let target = sampler.sample(&m, idx, &mut rng);
        let alpha = schedule.next(idx);
        match idx {
            Index2::Mu(x) => m.set_mu(x, (1.0 - alpha) * m.mu_at(x) + alpha * target),
            Index2::Sigma(x, y) => {
                let v = (1.0 - alpha) * m.sigma_at(x, y) + alpha * target;
                m.set_sigma_sym(x, y, v);
            }
        }
        last_alpha = alpha;
        let done = k + 1;
        if (opts.stride > 0 && done % opts.stride == 0) || done == opts.num_updates {
            record(done, &m, alpha)?;
        }
    }
    debug_assert!(last_alpha.is_finite());
    Ok(IncrementalRun { moments: m, trace })
}

pub const NOISE_C0: f64 = 8.0;

/// `8 * max(gamma^2, (2 gamma + gamma^2 lambda)^2)`.
pub fn noise_c1(gamma: f64) -> f64 {
    let lambda = 2.0 / (1.0 - gamma);
    8.0 * (gamma * gamma).max((2.0 * gamma + gamma * gamma * lambda).powi(2))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct NoiseDiagnostic {
    /// Empirical mean of backup minus exact coordinate.
    pub mean_error: f64,
    /// Standard error of `mean_error`.
    pub mean_error_stderr: f64,
    /// Empirical E[omega^2].
    pub second_moment: f64,
    /// C0 + C1 ||m||_lambda^2
    pub bound: f64,
}

/// Empirical moments of the backup noise at coordinate `idx`.
pub fn noise_diagnostic(
    env: &ExoJmdp,
    policy: &Policy,
    m: &MomentCollection2,
    idx: Index2,
    num_samples: usize,
    seed: u64,
) -> Result<NoiseDiagnostic> {
    if num_samples < 1000 {
        return Err(Error::InvalidInput(format!(
            "noise diagnostic needs at least 1000 samples, got {num_samples}"
        )));
    }
    let exact = t2_coordinate(env, policy, m, idx)?;
    let sampler = BackupSampler::new(env, policy)?;
    let mut rng = stream_rng(seed, 0);
    let (mut s1, mut s2) = (0.0, 0.0);
    for _ in 0..num_samples {
        let omega = sampler.sample(m, idx, &mut rng) - exact;
        s1 += omega;
        s2 += omega * omega;
    }
    let n = num_samples as f64;
    let mean = s1 / n;
    let var = (s2 / n - mean * mean).max(0.0);
    let norm = lambda_norm(m, &LambdaWeights::new(env.gamma())?)?;
    Ok(NoiseDiagnostic {
        mean_error: mean,
        mean_error_stderr: (var / n).sqrt(),
        second_moment: s2 / n,
        bound: NOISE_C0 + noise_c1(env.gamma()) * norm * norm,
    })
}

/// Columns `update_index,lambda_distance_to_fixed_point,step_size_last`; an
/// absent distance is written as an empty field.
pub fn write_trace_csv<W: Write>(trace: &[TraceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["update_index", "lambda_distance_to_fixed_point", "step_size_last"])?;
    for r in trace {
        w.write_record([
            r.update_index.to_string(),
            r.lambda_distance.map(|d| d.to_string()).unwrap_or_default(),
            r.step_size_last.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn save_trace_csv(trace: &[TraceRow], path: &Path) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_trace_csv(trace, std::io::BufWriter::new(f))
}
