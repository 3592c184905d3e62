//! Run configuration documents.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dp::DEFAULT_MEMORY_BUDGET;
use crate::env::{
    build_coupling_independent, build_coupling_shared, build_crc, build_divergent_pair, build_example1,
    build_successor_coupling, build_wgw, load_env, load_policy, wgw_fig1_policy, ExoJmdp, Policy,
    SuccessorCoupling,
};
use crate::error::{Error, Result};
use crate::fa::{load_features, FeatureKind, FeatureMap, DEFAULT_PAIR_CAP};
use crate::incremental::{StepRule, VisitationScheme};
use crate::jsonio;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EnvSpec {
    Crc {
        num_states: usize,
        gamma: f64,
    },
    Wgw {
        width: usize,
        height: usize,
        /// `[col, row]`; defaults to the top-right cell.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        goal: Option<[usize; 2]>,
        p_wind: f64,
        gamma: f64,
    },
    Example1 {
        gamma: f64,
    },
    SuccessorShared {
        num_states: usize,
        gamma: f64,
    },
    SuccessorMirrored {
        num_states: usize,
        gamma: f64,
    },
    CouplingIndependent {
        num_states: usize,
        gamma: f64,
    },
    CouplingShared {
        num_states: usize,
        gamma: f64,
    },
    DivergentPair {
        gamma: f64,
    },
    File {
        path: PathBuf,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PolicySpec {
    Uniform,
    Fig1WgwPolicy,
    File { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FeatureSpec {
    Identity,
    Polynomial { degree: usize },
    StateOneHot,
    Ramp,
    File { path: PathBuf },
}

fn default_epsilon() -> f64 {
    1e-8
}

fn default_max_iter() -> usize {
    100_000
}

fn default_memory_budget() -> usize {
    DEFAULT_MEMORY_BUDGET
}

fn default_num_updates() -> u64 {
    2_000_000
}

fn default_stride() -> u64 {
    100_000
}

fn default_pair_cap() -> usize {
    DEFAULT_PAIR_CAP
}

fn default_tol() -> f64 {
    1e-12
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AlgorithmSpec {
    Dp2 {
        #[serde(default = "default_epsilon")]
        epsilon: f64,
        #[serde(default = "default_max_iter")]
        max_iter: usize,
    },
    Dpn {
        n: usize,
        #[serde(default = "default_epsilon")]
        epsilon: f64,
        #[serde(default = "default_max_iter")]
        max_iter: usize,
        #[serde(default = "default_memory_budget")]
        memory_budget: usize,
    },
    Incremental {
        #[serde(default)]
        schedule: StepRule,
        #[serde(default)]
        visitation: VisitationScheme,
        #[serde(default = "default_num_updates")]
        num_updates: u64,
        #[serde(default = "default_stride")]
        stride: u64,
    },
    Projected {
        features: FeatureSpec,
        #[serde(default = "default_epsilon")]
        epsilon: f64,
        #[serde(default = "default_max_iter")]
        max_iter: usize,
        /// Run even when the coupling check fails.
        #[serde(default)]
        override_assumption: bool,
        #[serde(default = "default_pair_cap")]
        pair_cap: usize,
        /// Tolerance for the stationary distribution and the coupling power iteration.
        #[serde(default = "default_tol")]
        tol: f64,
    },
}

fn default_rollouts() -> usize {
    100_000
}

fn default_trunc_tol() -> f64 {
    1e-6
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSpec {
    #[serde(default)]
    pub gaps: bool,
    #[serde(default)]
    pub corr: bool,
    #[serde(default)]
    pub ecdf: bool,
    #[serde(default)]
    pub coupling: bool,
    /// Compare every fixed-point coordinate at a common state with the MC oracle.
    #[serde(default)]
    pub mc_compare: bool,
    #[serde(default = "default_rollouts")]
    pub num_rollouts: usize,
    #[serde(default = "default_trunc_tol")]
    pub trunc_tol: f64,
    /// Two-sided confidence level for MC intervals.
    #[serde(default = "default_confidence")]
    pub confidence: f64,
}

fn default_confidence() -> f64 {
    0.95
}

impl Default for AnalysisSpec {
    fn default() -> Self {
        Self {
            gaps: false,
            corr: false,
            ecdf: false,
            coupling: false,
            mc_compare: false,
            num_rollouts: default_rollouts(),
            trunc_tol: default_trunc_tol(),
            confidence: default_confidence(),
        }
    }
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub env: EnvSpec,
    #[serde(default = "default_policy")]
    pub policy: PolicySpec,
    pub algorithm: AlgorithmSpec,
    #[serde(default)]
    pub analysis: AnalysisSpec,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
}

fn default_policy() -> PolicySpec {
    PolicySpec::Uniform
}

fn positive(path: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(path, format!("must be a positive finite number, got {v}")))
    }
}

fn gamma_ok(v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(Error::config("env.gamma", format!("must lie in (0, 1), got {v}")))
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = jsonio::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cfg: RunConfig = jsonio::read(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        jsonio::to_string(self)
    }

    /// Range checks that do not need to build anything, reported with field paths.
    pub fn validate(&self) -> Result<()> {
        match &self.env {
            EnvSpec::Crc { num_states, gamma } => {
                if *num_states < 2 {
                    return Err(Error::config("env.num_states", "chain needs at least 2 states"));
                }
                gamma_ok(*gamma)?;
            }
            EnvSpec::Wgw {
                width,
                height,
                goal,
                p_wind,
                gamma,
            } => {
                if *width == 0 || *height == 0 {
                    return Err(Error::config("env.width", "grid dimensions must be at least 1"));
                }
                if let Some([c, r]) = goal {
                    if c >= width || r >= height {
                        return Err(Error::config("env.goal", "goal outside the grid"));
                    }
                }
                if !(0.0..=1.0).contains(p_wind) {
                    return Err(Error::config("env.p_wind", format!("must lie in [0, 1], got {p_wind}")));
                }
                gamma_ok(*gamma)?;
            }
            EnvSpec::SuccessorShared { num_states, gamma }
            | EnvSpec::SuccessorMirrored { num_states, gamma }
            | EnvSpec::CouplingIndependent { num_states, gamma }
            | EnvSpec::CouplingShared { num_states, gamma } => {
                if *num_states < 1 {
                    return Err(Error::config("env.num_states", "need at least one state"));
                }
                gamma_ok(*gamma)?;
            }
            EnvSpec::Example1 { gamma } | EnvSpec::DivergentPair { gamma } => gamma_ok(*gamma)?,
            EnvSpec::File { .. } => {}
        }
        if matches!(self.policy, PolicySpec::Fig1WgwPolicy) && !matches!(self.env, EnvSpec::Wgw { .. }) {
            return Err(Error::config("policy.kind", "fig1-wgw-policy needs a wgw environment"));
        }
        match &self.algorithm {
            AlgorithmSpec::Dp2 { epsilon, .. } => positive("algorithm.epsilon", *epsilon)?,
            AlgorithmSpec::Dpn { n, epsilon, .. } => {
                if *n == 0 {
                    return Err(Error::config("algorithm.n", "order must be at least 1"));
                }
                positive("algorithm.epsilon", *epsilon)?;
            }
            AlgorithmSpec::Incremental {
                schedule, num_updates, ..
            } => {
                schedule
                    .validate()
                    .map_err(|e| Error::config("algorithm.schedule", e.to_string()))?;
                if *num_updates == 0 {
                    return Err(Error::config("algorithm.num_updates", "must be at least 1"));
                }
            }
            AlgorithmSpec::Projected { epsilon, tol, features, .. } => {
                positive("algorithm.epsilon", *epsilon)?;
                positive("algorithm.tol", *tol)?;
                if let FeatureSpec::Polynomial { degree } = features {
                    if *degree > 16 {
                        return Err(Error::config("algorithm.features.degree", "degree above 16 is not supported"));
                    }
                }
            }
        }
        let a = &self.analysis;
        if a.num_rollouts < 2 {
            return Err(Error::config("analysis.num_rollouts", "need at least 2 rollouts"));
        }
        positive("analysis.trunc_tol", a.trunc_tol)?;
        if !(a.confidence > 0.0 && a.confidence < 1.0) {
            return Err(Error::config("analysis.confidence", "must lie in (0, 1)"));
        }
        Ok(())
    }

    /// Applies `f` to a copy and keeps it only if it still validates.
    fn update(&mut self, f: impl FnOnce(&mut Self) -> Result<()>) -> Result<()> {
        let mut next = self.clone();
        f(&mut next)?;
        next.validate()?;
        *self = next;
        Ok(())
    }

    /// Overrides the discount of a builtin environment.
    pub fn set_gamma(&mut self, g: f64) -> Result<()> {
        self.update(|c| c.set_gamma_unchecked(g))
    }

    fn set_gamma_unchecked(&mut self, g: f64) -> Result<()> {
        match &mut self.env {
            EnvSpec::Crc { gamma, .. }
            | EnvSpec::Wgw { gamma, .. }
            | EnvSpec::Example1 { gamma }
            | EnvSpec::SuccessorShared { gamma, .. }
            | EnvSpec::SuccessorMirrored { gamma, .. }
            | EnvSpec::CouplingIndependent { gamma, .. }
            | EnvSpec::CouplingShared { gamma, .. }
            | EnvSpec::DivergentPair { gamma } => *gamma = g,
            EnvSpec::File { .. } => {
                return Err(Error::config("env.gamma", "cannot override gamma of a file environment"))
            }
        }
        Ok(())
    }

    pub fn set_epsilon(&mut self, e: f64) -> Result<()> {
        self.update(|c| c.set_epsilon_unchecked(e))
    }

    fn set_epsilon_unchecked(&mut self, e: f64) -> Result<()> {
        match &mut self.algorithm {
            AlgorithmSpec::Dp2 { epsilon, .. }
            | AlgorithmSpec::Dpn { epsilon, .. }
            | AlgorithmSpec::Projected { epsilon, .. } => *epsilon = e,
            AlgorithmSpec::Incremental { .. } => {
                return Err(Error::config("algorithm.epsilon", "incremental runs have no epsilon"))
            }
        }
        Ok(())
    }

    pub fn set_max_iter(&mut self, m: usize) -> Result<()> {
        self.update(|c| c.set_max_iter_unchecked(m))
    }

    fn set_max_iter_unchecked(&mut self, m: usize) -> Result<()> {
        match &mut self.algorithm {
            AlgorithmSpec::Dp2 { max_iter, .. }
            | AlgorithmSpec::Dpn { max_iter, .. }
            | AlgorithmSpec::Projected { max_iter, .. } => *max_iter = m,
            AlgorithmSpec::Incremental { .. } => {
                return Err(Error::config("algorithm.max_iter", "incremental runs have no max_iter"))
            }
        }
        Ok(())
    }

    pub fn set_num_updates(&mut self, n: u64) -> Result<()> {
        self.update(|c| c.set_num_updates_unchecked(n))
    }

    fn set_num_updates_unchecked(&mut self, n: u64) -> Result<()> {
        match &mut self.algorithm {
            AlgorithmSpec::Incremental { num_updates, .. } => *num_updates = n,
            _ => return Err(Error::config("algorithm.num_updates", "only incremental runs take num_updates")),
        }
        Ok(())
    }

    /// Resolves relative paths in the document against `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let EnvSpec::File { path } = &mut self.env {
            fix(path);
        }
        if let PolicySpec::File { path } = &mut self.policy {
            fix(path);
        }
        if let AlgorithmSpec::Projected {
            features: FeatureSpec::File { path },
            ..
        } = &mut self.algorithm
        {
            fix(path);
        }
    }
}

/// Default goal of a `width x height` grid.
pub fn default_goal(width: usize, height: usize) -> (usize, usize) {
    (width - 1, height - 1)
}

impl EnvSpec {
    pub fn build(&self) -> Result<ExoJmdp> {
        match self {
            EnvSpec::Crc { num_states, gamma } => build_crc(*num_states, *gamma),
            EnvSpec::Wgw {
                width,
                height,
                goal,
                p_wind,
                gamma,
            } => {
                let goal = goal.map_or(default_goal(*width, *height), |[c, r]| (c, r));
                build_wgw(*width, *height, goal, *p_wind, *gamma)
            }
            EnvSpec::Example1 { gamma } => build_example1(*gamma),
            EnvSpec::SuccessorShared { num_states, gamma } => {
                build_successor_coupling(*num_states, SuccessorCoupling::Shared, *gamma)
            }
            EnvSpec::SuccessorMirrored { num_states, gamma } => {
                build_successor_coupling(*num_states, SuccessorCoupling::Mirrored, *gamma)
            }
            EnvSpec::CouplingIndependent { num_states, gamma } => build_coupling_independent(*num_states, *gamma),
            EnvSpec::CouplingShared { num_states, gamma } => build_coupling_shared(*num_states, *gamma),
            EnvSpec::DivergentPair { gamma } => build_divergent_pair(*gamma),
            EnvSpec::File { path } => load_env(path),
        }
    }
}

impl PolicySpec {
    pub fn build(&self, env_spec: &EnvSpec, env: &ExoJmdp) -> Result<Policy> {
        let policy = match self {
            PolicySpec::Uniform => Policy::uniform(env.space()),
            PolicySpec::Fig1WgwPolicy => match env_spec {
                EnvSpec::Wgw { width, height, goal, .. } => {
                    let goal = goal.map_or(default_goal(*width, *height), |[c, r]| (c, r));
                    wgw_fig1_policy(*width, *height, goal)?
                }
                _ => return Err(Error::config("policy.kind", "fig1-wgw-policy needs a wgw environment")),
            },
            PolicySpec::File { path } => load_policy(path)?,
        };
        policy
            .check_compatible(env)
            .map_err(|e| Error::config("policy", e.to_string()))?;
        Ok(policy)
    }
}

impl FeatureSpec {
    pub fn build(&self, env: &ExoJmdp) -> Result<FeatureMap> {
        let kind = match self {
            FeatureSpec::Identity => FeatureKind::Identity,
            FeatureSpec::Polynomial { degree } => FeatureKind::Polynomial { degree: *degree },
            FeatureSpec::StateOneHot => FeatureKind::StateOneHot,
            FeatureSpec::Ramp => FeatureKind::Ramp,
            FeatureSpec::File { path } => return load_features(path),
        };
        FeatureMap::builtin(kind, env.space())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const CRC: &str = r#"{
        "env": {"kind": "crc", "num_states": 25, "gamma": 0.9},
        "algorithm": {"kind": "dp2", "epsilon": 1e-8}
    }"#;

    #[test]
    fn defaults_and_round_trip() {
        let cfg = RunConfig::from_json(CRC).unwrap();
        assert_eq!(cfg.policy, PolicySpec::Uniform);
        assert_eq!(cfg.seed, 0);
        assert_eq!(cfg.out_dir, PathBuf::from("out"));
        let again = RunConfig::from_json(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn unknown_fields_rejected_with_path() {
        let text = CRC.replace("\"epsilon\"", "\"epsilom\"");
        let err = RunConfig::from_json(&text).unwrap_err();
        assert!(matches!(&err, Error::Schema { path, .. } if path.starts_with("algorithm")), "{err}");
        let text = CRC.replace("\"env\"", "\"bogus\": 1, \"env\"");
        assert!(RunConfig::from_json(&text).is_err());
    }

    #[test]
    fn range_errors_name_the_field() {
        let text = CRC.replace("0.9", "1.5");
        let err = RunConfig::from_json(&text).unwrap_err();
        assert!(matches!(err, Error::InvalidConfig { path, .. } if path == "env.gamma"));
        let text = CRC.replace("1e-8", "-1");
        let err = RunConfig::from_json(&text).unwrap_err();
        assert!(matches!(err, Error::InvalidConfig { path, .. } if path == "algorithm.epsilon"));
    }

    #[test]
    fn fig1_policy_needs_grid() {
        let text = CRC.replace("\"algorithm\"", "\"policy\": {\"kind\": \"fig1-wgw-policy\"}, \"algorithm\"");
        let err = RunConfig::from_json(&text).unwrap_err();
        assert!(matches!(err, Error::InvalidConfig { path, .. } if path == "policy.kind"));
    }

    #[test]
    fn every_variant_round_trips() {
        let cfg = RunConfig {
            env: EnvSpec::Wgw {
                width: 5,
                height: 5,
                goal: Some([4, 4]),
                p_wind: 0.3,
                gamma: 0.9,
            },
            policy: PolicySpec::Fig1WgwPolicy,
            algorithm: AlgorithmSpec::Projected {
                features: FeatureSpec::Polynomial { degree: 2 },
                epsilon: 1e-9,
                max_iter: 10,
                override_assumption: true,
                pair_cap: 100,
                tol: 1e-10,
            },
            analysis: AnalysisSpec {
                gaps: true,
                ..AnalysisSpec::default()
            },
            seed: 9,
            out_dir: PathBuf::from("x"),
        };
        assert_eq!(RunConfig::from_json(&cfg.to_json().unwrap()).unwrap(), cfg);
        let inc = AlgorithmSpec::Incremental {
            schedule: StepRule::Constant { alpha: 0.5 },
            visitation: VisitationScheme::Sweep,
            num_updates: 10,
            stride: 2,
        };
        let text = serde_json::to_string(&inc).unwrap();
        assert_eq!(serde_json::from_str::<AlgorithmSpec>(&text).unwrap(), inc);
    }

    #[test]
    fn overrides_validate() {
        let mut cfg = RunConfig::from_json(CRC).unwrap();
        cfg.set_gamma(0.5).unwrap();
        assert!(cfg.set_gamma(1.0).is_err());
        assert!(cfg.set_num_updates(5).is_err());
        cfg.set_epsilon(1e-3).unwrap();
        assert!(matches!(cfg.algorithm, AlgorithmSpec::Dp2 { epsilon, .. } if epsilon == 1e-3));
    }

    #[test]
    fn relative_paths_resolve() {
        let mut cfg = RunConfig::from_json(r#"{"env":{"kind":"file","path":"e.json"},"algorithm":{"kind":"dp2"}}"#).unwrap();
        cfg.resolve_paths(Path::new("/tmp/base"));
        assert_eq!(cfg.env, EnvSpec::File { path: PathBuf::from("/tmp/base/e.json") });
    }
}
