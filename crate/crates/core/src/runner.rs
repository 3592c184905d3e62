//! Subcommand implementations behind the `jmdp` binary.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::config::{AlgorithmSpec, RunConfig};
use crate::dp::{jipe2, jipe_n, save_residual_csv};
use crate::env::{coupling_witness, load_env, marginal_mdp, ExoJmdp, Policy};
use crate::error::{Error, Result};
use crate::fa::{
    coupling_coefficient, projected_jipe2, stationary_distribution, ProjectedOptions, ProjectedRecord,
    ProjectedStatus, DEFAULT_PAIR_CAP,
};
use crate::incremental::{run_incremental, save_trace_csv, IncrementalOptions};
use crate::jsonio;
use crate::moments::{MomentCollection2, MomentCollectionN};
use crate::rng::child_seed;
use crate::stats::{all_pairs, chebyshev_ecdf, corr_matrix, gap_report, mc_oracle, save_ecdf_csv, McOptions};

/// Tolerance and budget used whenever a reference fixed point is needed.
const REFERENCE_EPSILON: f64 = 1e-12;
const REFERENCE_MAX_ITER: usize = 1_000_000;
const STATIONARY_TOL: f64 = 1e-13;
const COUPLING_TOL: f64 = 1e-10;

/// Result class of a run, mapped to the process exit status.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    Certified,
    Completed,
    NotCertified,
    Diverged,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Certified | Outcome::Completed => 0,
            Outcome::NotCertified => 2,
            Outcome::Diverged => 3,
        }
    }
}

/// Exit status for an error.
pub fn error_exit_code(e: &Error) -> i32 {
    match e {
        Error::AssumptionViolated(_) => 3,
        _ => 1,
    }
}

#[derive(Serialize)]
struct OutputEntry {
    file: String,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    seed: u64,
    config_sha256: String,
    config: &'a RunConfig,
    outcome: Outcome,
    exit_code: i32,
    outputs: Vec<OutputEntry>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Collects output files and writes the manifest last.
struct OutputDir {
    dir: PathBuf,
    files: Vec<String>,
}

impl OutputDir {
    fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let p = self.path(name);
        jsonio::write(&p, value)
    }

    fn finish(self, command: &str, cfg: &RunConfig, outcome: Outcome) -> Result<()> {
        let mut outputs = Vec::new();
        for f in &self.files {
            let p = self.dir.join(f);
            let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
            outputs.push(OutputEntry {
                file: f.clone(),
                sha256: sha256_hex(&bytes),
            });
        }
        let manifest = Manifest {
            tool: "jmdp",
            version: env!("CARGO_PKG_VERSION"),
            command,
            seed: cfg.seed,
            config_sha256: sha256_hex(cfg.to_json()?.as_bytes()),
            config: cfg,
            outcome,
            exit_code: outcome.exit_code(),
            outputs,
        };
        jsonio::write(&self.dir.join("manifest.json"), &manifest)
    }
}

fn build(cfg: &RunConfig) -> Result<(ExoJmdp, Policy)> {
    let env = cfg.env.build()?;
    let policy = cfg.policy.build(&cfg.env, &env)?;
    Ok((env, policy))
}

fn reference_fixed_point(env: &ExoJmdp, policy: &Policy) -> Result<(MomentCollection2, bool)> {
    let rep = jipe2(
        env,
        policy,
        REFERENCE_EPSILON,
        REFERENCE_MAX_ITER,
        &MomentCollection2::zeros(env.space().len()),
    )?;
    Ok((rep.final_moments, rep.certified))
}

#[derive(Serialize)]
struct Moments2Doc<'a> {
    nx: usize,
    mu: &'a [f64],
    sigma: &'a [f64],
}

#[derive(Serialize)]
struct Dp2Summary<'a> {
    moments: Moments2Doc<'a>,
    iterations: usize,
    certified: bool,
    certified_error_bound: f64,
    rounding_error: f64,
}

#[derive(Serialize)]
struct DpnSummary<'a> {
    order: usize,
    nx: usize,
    tables: &'a [Vec<f64>],
    iterations: usize,
    certified: bool,
    certified_error_bound: f64,
    rounding_error: f64,
}

#[derive(Serialize)]
struct IncrementalSummary<'a> {
    moments: Moments2Doc<'a>,
    num_updates: u64,
    reference_certified: bool,
    final_lambda_distance: Option<f64>,
}

fn doc(m: &MomentCollection2) -> Moments2Doc<'_> {
    Moments2Doc {
        nx: m.nx(),
        mu: m.mu(),
        sigma: m.sigma(),
    }
}

fn write_projected_csv(trace: &[ProjectedRecord], path: &Path) -> Result<()> {
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(f));
    w.write_record(["iteration", "distance", "ratio"])?;
    for r in trace {
        w.write_record([
            r.iteration.to_string(),
            r.distance.to_string(),
            r.ratio.map_or(String::new(), |v| v.to_string()),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Runs the configured algorithm and writes its outputs and manifest.
pub fn cmd_eval(cfg: &RunConfig, log: &mut dyn Write) -> Result<Outcome> {
    cfg.validate()?;
    let (env, policy) = build(cfg)?;
    let mut out = OutputDir::create(&cfg.out_dir)?;
    let nx = env.space().len();
    let outcome = match &cfg.algorithm {
        AlgorithmSpec::Dp2 { epsilon, max_iter } => {
            let rep = jipe2(&env, &policy, *epsilon, *max_iter, &MomentCollection2::zeros(nx))?;
            save_residual_csv(&rep.residual_trace, &out.path("residuals.csv"))?;
            out.json(
                "moments.json",
                &Dp2Summary {
                    moments: doc(&rep.final_moments),
                    iterations: rep.iterations,
                    certified: rep.certified,
                    certified_error_bound: rep.certified_error_bound,
                    rounding_error: rep.rounding_error,
                },
            )?;
            let _ = writeln!(
                log,
                "dp2: {} iterations, residual bound {:e}, certified: {}",
                rep.iterations, rep.certified_error_bound, rep.certified
            );
            if rep.certified {
                Outcome::Certified
            } else {
                Outcome::NotCertified
            }
        }
        AlgorithmSpec::Dpn {
            n,
            epsilon,
            max_iter,
            memory_budget,
        } => {
            let rep = jipe_n(&env, &policy, *n, *epsilon, *max_iter, None, *memory_budget)?;
            save_residual_csv(&rep.residual_trace, &out.path("residuals.csv"))?;
            let m: &MomentCollectionN = &rep.final_moments;
            out.json(
                "moments.json",
                &DpnSummary {
                    order: m.order(),
                    nx: m.nx(),
                    tables: m.tables(),
                    iterations: rep.iterations,
                    certified: rep.certified,
                    certified_error_bound: rep.certified_error_bound,
                    rounding_error: rep.rounding_error,
                },
            )?;
            let _ = writeln!(log, "dpn(n={n}): {} iterations, certified: {}", rep.iterations, rep.certified);
            if rep.certified {
                Outcome::Certified
            } else {
                Outcome::NotCertified
            }
        }
        AlgorithmSpec::Incremental {
            schedule,
            visitation,
            num_updates,
            stride,
        } => {
            let (reference, reference_certified) = reference_fixed_point(&env, &policy)?;
            let run = run_incremental(
                &env,
                &policy,
                &MomentCollection2::zeros(nx),
                &IncrementalOptions {
                    rule: *schedule,
                    visitation: *visitation,
                    num_updates: *num_updates,
                    seed: cfg.seed,
                    stride: *stride,
                    fixed_point: Some(&reference),
                },
            )?;
            save_trace_csv(&run.trace, &out.path("trace.csv"))?;
            let last = run.trace.last().and_then(|r| r.lambda_distance);
            out.json(
                "moments.json",
                &IncrementalSummary {
                    moments: doc(&run.moments),
                    num_updates: *num_updates,
                    reference_certified,
                    final_lambda_distance: last,
                },
            )?;
            let _ = writeln!(log, "incremental: {num_updates} updates, distance to fixed point {last:?}");
            Outcome::Completed
        }
        AlgorithmSpec::Projected {
            features,
            epsilon,
            max_iter,
            override_assumption,
            pair_cap,
            tol,
        } => {
            let phi = features.build(&env)?;
            let nu = stationary_distribution(&env, &policy, *tol)?;
            if let Some(d) = &nu.diagnostic {
                let _ = writeln!(log, "weighting: {d}");
            }
            let coupling = coupling_coefficient(&env, &policy, &nu.nu, *tol, *pair_cap)?;
            out.json("coupling.json", &coupling)?;
            out.json("nu.json", &nu)?;
            let _ = writeln!(
                log,
                "coupling: sqrt(c_rho) = {}, gamma^2 sqrt(c_rho) = {}",
                coupling.sqrt_c_rho, coupling.gamma2_sqrt_c_rho
            );
            let mut opts = ProjectedOptions::new(*epsilon, *max_iter, coupling.sqrt_c_rho);
            opts.override_assumption = *override_assumption;
            let rep = match projected_jipe2(&env, &policy, &phi, &nu.nu, &opts) {
                Ok(r) => r,
                Err(e @ Error::AssumptionViolated(_)) => {
                    let _ = writeln!(log, "{e}; set algorithm.override_assumption to iterate anyway");
                    out.finish("eval", cfg, Outcome::Diverged)?;
                    return Ok(Outcome::Diverged);
                }
                Err(e) => return Err(e),
            };
            write_projected_csv(&rep.trace, &out.path("projected_trace.csv"))?;
            out.json("linear_moments.json", &rep)?;
            if let Some(d) = &rep.diagnostic {
                let _ = writeln!(log, "projected: {d}");
            }
            let _ = writeln!(log, "projected: {:?} after {} iterations", rep.status, rep.iterations);
            match rep.status {
                ProjectedStatus::Converged => Outcome::Certified,
                ProjectedStatus::NotConverged => Outcome::NotCertified,
                ProjectedStatus::Diverged => Outcome::Diverged,
            }
        }
    };
    out.finish("eval", cfg, outcome)?;
    Ok(outcome)
}

fn z_for(confidence: f64) -> f64 {
    Normal::standard().inverse_cdf(0.5 + 0.5 * confidence)
}

#[derive(Serialize)]
struct AnalysisSummary {
    reference_certified: bool,
    gap_pairs: usize,
    ecdf_rows: usize,
    ecdf_skipped: Vec<String>,
    mc_compare_total: usize,
    mc_compare_outside: usize,
}

/// Gap, correlation, ECDF, coupling and oracle-comparison outputs at the exact fixed point.
pub fn cmd_analyze(cfg: &RunConfig, log: &mut dyn Write) -> Result<Outcome> {
    cfg.validate()?;
    let (env, policy) = build(cfg)?;
    let a = &cfg.analysis;
    let mut out = OutputDir::create(&cfg.out_dir)?;
    let (m, certified) = reference_fixed_point(&env, &policy)?;
    out.json("moments.json", &doc(&m))?;
    let mc = McOptions {
        num_rollouts: a.num_rollouts,
        trunc_tol: a.trunc_tol,
        seed: 0,
        z: z_for(a.confidence),
    };
    let pairs = all_pairs(&env);
    let mut summary = AnalysisSummary {
        reference_certified: certified,
        gap_pairs: 0,
        ecdf_rows: 0,
        ecdf_skipped: Vec::new(),
        mc_compare_total: 0,
        mc_compare_outside: 0,
    };
    if a.gaps {
        let base = child_seed(cfg.seed, 1);
        let reports = pairs
            .iter()
            .enumerate()
            .map(|(i, &p)| {
                let opts = McOptions {
                    seed: child_seed(base, i as u64),
                    ..mc
                };
                gap_report(&env, &policy, &m, p, &opts)
            })
            .collect::<Result<Vec<_>>>()?;
        summary.gap_pairs = reports.len();
        out.json("gaps.json", &reports)?;
    }
    if a.corr {
        let mats = (0..env.num_states())
            .map(|s| corr_matrix(&m, env.space(), s))
            .collect::<Result<Vec<_>>>()?;
        out.json("corr.json", &mats)?;
    }
    if a.ecdf {
        let opts = McOptions {
            seed: child_seed(cfg.seed, 2),
            ..mc
        };
        let res = chebyshev_ecdf(&env, &policy, &m, &pairs, &opts)?;
        save_ecdf_csv(&res.rows, &out.path("ecdf.csv"))?;
        summary.ecdf_rows = res.rows.len();
        summary.ecdf_skipped = res
            .skipped
            .iter()
            .map(|((s, a, b), why)| format!("({s}, {a}, {b}): {why}"))
            .collect();
    }
    if a.coupling {
        let nu = stationary_distribution(&env, &policy, STATIONARY_TOL)?;
        let report = coupling_coefficient(&env, &policy, &nu.nu, COUPLING_TOL, DEFAULT_PAIR_CAP)?;
        let _ = writeln!(log, "coupling: sqrt(c_rho) = {}", report.sqrt_c_rho);
        out.json("coupling.json", &report)?;
    }
    if a.mc_compare {
        let path = out.path("mc_vs_dp.csv");
        let f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = csv::Writer::from_writer(std::io::BufWriter::new(f));
        w.write_record(["state", "action_a", "action_b", "kind", "dp_value", "mc_estimate", "mc_halfwidth", "inside"])?;
        let base = child_seed(cfg.seed, 3);
        let actions: Vec<usize> = (0..env.num_actions()).collect();
        let space = env.space();
        for s in 0..env.num_states() {
            let opts = McOptions {
                seed: child_seed(base, s as u64),
                ..mc
            };
            let est = mc_oracle(&env, &policy, s, &actions, &opts)?;
            let mut row = |a: usize, b: Option<usize>, dp: f64, iv: crate::stats::Interval| -> Result<()> {
                summary.mc_compare_total += 1;
                if !iv.contains(dp) {
                    summary.mc_compare_outside += 1;
                }
                w.write_record([
                    s.to_string(),
                    a.to_string(),
                    b.map_or(String::new(), |b| b.to_string()),
                    if b.is_some() { "sigma" } else { "mu" }.to_string(),
                    dp.to_string(),
                    iv.estimate.to_string(),
                    iv.halfwidth.to_string(),
                    iv.contains(dp).to_string(),
                ])?;
                Ok(())
            };
            for i in 0..actions.len() {
                row(i, None, m.mu_at(space.x(s, i)), est.mean[i])?;
            }
            for i in 0..actions.len() {
                for j in i..actions.len() {
                    row(i, Some(j), m.sigma_at(space.x(s, i), space.x(s, j)), est.second_at(i, j))?;
                }
            }
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        let _ = writeln!(
            log,
            "mc comparison: {} of {} coordinates outside the interval",
            summary.mc_compare_outside, summary.mc_compare_total
        );
    }
    out.json("analysis.json", &summary)?;
    let outcome = if certified {
        Outcome::Completed
    } else {
        Outcome::NotCertified
    };
    out.finish("analyze", cfg, outcome)?;
    Ok(outcome)
}

/// Result of checking an environment file.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnvSummary {
    pub num_states: usize,
    pub num_actions: usize,
    pub noise_outcomes: usize,
    pub gamma: f64,
    pub reward_min: f64,
    pub reward_max: f64,
    pub mean_reward_min: f64,
    pub mean_reward_max: f64,
    pub max_successors: usize,
    pub absorbing_zero_states: Vec<usize>,
    /// First state and action pair with a non-product joint law.
    pub coupling_witness: Option<(usize, usize, usize)>,
}

impl fmt::Display for EnvSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "states: {}", self.num_states)?;
        writeln!(f, "actions: {}", self.num_actions)?;
        writeln!(f, "noise outcomes: {}", self.noise_outcomes)?;
        writeln!(f, "gamma: {}", self.gamma)?;
        writeln!(f, "reward range: [{}, {}]", self.reward_min, self.reward_max)?;
        writeln!(
            f,
            "marginal MDP: mean reward in [{}, {}], at most {} successors per state-action pair",
            self.mean_reward_min, self.mean_reward_max, self.max_successors
        )?;
        writeln!(f, "absorbing zero-reward states: {:?}", self.absorbing_zero_states)?;
        match self.coupling_witness {
            Some((s, a, b)) => writeln!(f, "coupled-dynamics: yes (state {s}, actions {a} and {b})"),
            None => writeln!(f, "coupled-dynamics: no"),
        }
    }
}

pub fn summarize_env(env: &ExoJmdp) -> EnvSummary {
    let space = env.space();
    let mdp = marginal_mdp(env);
    let nu = env.noise().support_size();
    let mut rmin = f64::INFINITY;
    let mut rmax = f64::NEG_INFINITY;
    for s in 0..env.num_states() {
        for a in 0..env.num_actions() {
            for u in 0..nu {
                rmin = rmin.min(env.g(s, a, u));
                rmax = rmax.max(env.g(s, a, u));
            }
        }
    }
    let max_successors = (0..space.len())
        .map(|x| (0..env.num_states()).filter(|&sp| mdp.p(x, sp) > 0.0).count())
        .max()
        .unwrap_or(0);
    EnvSummary {
        num_states: env.num_states(),
        num_actions: env.num_actions(),
        noise_outcomes: nu,
        gamma: env.gamma(),
        reward_min: rmin,
        reward_max: rmax,
        mean_reward_min: mdp.reward_mean.iter().copied().fold(f64::INFINITY, f64::min),
        mean_reward_max: mdp.reward_mean.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        max_successors,
        absorbing_zero_states: (0..env.num_states()).filter(|&s| env.is_absorbing_zero(s)).collect(),
        coupling_witness: coupling_witness(env, 1e-12).map(|w| (w.state, w.actions.0, w.actions.1)),
    }
}

/// Loads and checks an environment file.
pub fn cmd_validate_env(path: &Path) -> Result<EnvSummary> {
    Ok(summarize_env(&load_env(path)?))
}
