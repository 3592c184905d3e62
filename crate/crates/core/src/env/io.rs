use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ExoJmdp, NoiseModel, Policy};
use crate::error::{Error, Result};
use crate::jsonio;
use crate::space::StateActionSpace;

pub const FORMAT_VERSION: u32 = 1;

/// On-disk environment document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvFile {
    pub format_version: u32,
    pub num_states: usize,
    pub num_actions: usize,
    pub gamma: f64,
    pub noise_probs: Vec<f64>,
    /// `[s][a][u]`
    pub g: Vec<Vec<Vec<f64>>>,
    /// `[s][a][u]`
    pub h: Vec<Vec<Vec<usize>>>,
}

/// On-disk policy document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyFile {
    pub format_version: u32,
    pub probs: Vec<Vec<f64>>,
}

pub(crate) fn check_version(v: u32) -> Result<()> {
    if v != FORMAT_VERSION {
        return Err(Error::schema(
            "format_version",
            format!("unsupported version {v}, expected {FORMAT_VERSION}"),
        ));
    }
    Ok(())
}

fn check_shape<T>(name: &str, t: &[Vec<Vec<T>>], ns: usize, na: usize, nu: usize) -> Result<()> {
    if t.len() != ns {
        return Err(Error::schema(name, format!("expected {ns} states, got {}", t.len())));
    }
    for (s, row) in t.iter().enumerate() {
        if row.len() != na {
            return Err(Error::schema(
                format!("{name}[{s}]"),
                format!("expected {na} actions, got {}", row.len()),
            ));
        }
        for (a, cell) in row.iter().enumerate() {
            if cell.len() != nu {
                return Err(Error::schema(
                    format!("{name}[{s}][{a}]"),
                    format!("expected {nu} noise outcomes, got {}", cell.len()),
                ));
            }
        }
    }
    Ok(())
}

impl TryFrom<EnvFile> for ExoJmdp {
    type Error = Error;

    fn try_from(f: EnvFile) -> Result<Self> {
        check_version(f.format_version)?;
        let space = StateActionSpace::new(f.num_states, f.num_actions)
            .map_err(|e| Error::schema("num_states/num_actions", e.to_string()))?;
        let noise = NoiseModel::new(f.noise_probs)?;
        let nu = noise.support_size();
        check_shape("g", &f.g, f.num_states, f.num_actions, nu)?;
        check_shape("h", &f.h, f.num_states, f.num_actions, nu)?;
        let g = f.g.into_iter().flatten().flatten().collect();
        let h = f.h.into_iter().flatten().flatten().collect();
        ExoJmdp::new(space, noise, g, h, f.gamma)
    }
}

impl From<&ExoJmdp> for EnvFile {
    fn from(env: &ExoJmdp) -> Self {
        let (ns, na, nu) = (env.num_states(), env.num_actions(), env.noise().support_size());
        let g = (0..ns)
            .map(|s| (0..na).map(|a| (0..nu).map(|u| env.g(s, a, u)).collect()).collect())
            .collect();
        let h = (0..ns)
            .map(|s| (0..na).map(|a| (0..nu).map(|u| env.h(s, a, u)).collect()).collect())
            .collect();
        EnvFile {
            format_version: FORMAT_VERSION,
            num_states: ns,
            num_actions: na,
            gamma: env.gamma(),
            noise_probs: env.noise().probs().to_vec(),
            g,
            h,
        }
    }
}

pub fn env_from_json(text: &str) -> Result<ExoJmdp> {
    jsonio::from_str::<EnvFile>(text)?.try_into()
}

pub fn env_to_json(env: &ExoJmdp) -> Result<String> {
    jsonio::to_string(&EnvFile::from(env))
}

pub fn load_env(path: &Path) -> Result<ExoJmdp> {
    jsonio::read::<EnvFile>(path)?.try_into()
}

pub fn save_env(env: &ExoJmdp, path: &Path) -> Result<()> {
    jsonio::write(path, &EnvFile::from(env))
}

impl TryFrom<PolicyFile> for Policy {
    type Error = Error;

    fn try_from(f: PolicyFile) -> Result<Self> {
        check_version(f.format_version)?;
        Policy::new(f.probs)
    }
}

pub fn policy_from_json(text: &str) -> Result<Policy> {
    jsonio::from_str::<PolicyFile>(text)?.try_into()
}

pub fn policy_to_json(policy: &Policy) -> Result<String> {
    jsonio::to_string(&PolicyFile {
        format_version: FORMAT_VERSION,
        probs: policy.rows(),
    })
}

pub fn load_policy(path: &Path) -> Result<Policy> {
    jsonio::read::<PolicyFile>(path)?.try_into()
}

pub fn save_policy(policy: &Policy, path: &Path) -> Result<()> {
    jsonio::write(
        path,
        &PolicyFile {
            format_version: FORMAT_VERSION,
            probs: policy.rows(),
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{build_crc, build_wgw};

    fn schema_path(e: Error) -> String {
        match e {
            Error::Schema { path, .. } => path,
            other => panic!("expected schema error, got {other}"),
        }
    }

    #[test]
    fn round_trip_crc() {
        let env = build_crc(5, 0.9).unwrap();
        let back = env_from_json(&env_to_json(&env).unwrap()).unwrap();
        assert_eq!(back, env);
        let wgw = build_wgw(3, 2, (2, 1), 0.3, 0.95).unwrap();
        assert_eq!(env_from_json(&env_to_json(&wgw).unwrap()).unwrap(), wgw);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("env.json");
        let env = build_crc(4, 0.8).unwrap();
        save_env(&env, &p).unwrap();
        assert_eq!(load_env(&p).unwrap(), env);
    }

    fn doc(g: &str, probs: &str) -> String {
        format!(
            r#"{{"format_version":1,"num_states":2,"num_actions":1,"gamma":0.9,
            "noise_probs":{probs},"g":{g},"h":[[[0,1]],[[1,1]]]}}"#
        )
    }

    #[test]
    fn reward_range_error_names_cell() {
        let e = env_from_json(&doc("[[[0.0,0.2]],[[0.1,1.5]]]", "[0.5,0.5]")).unwrap_err();
        assert_eq!(schema_path(e), "g[1][0][1]");
    }

    #[test]
    fn normalization_error() {
        let e = env_from_json(&doc("[[[0.0,0.2]],[[0.1,0.5]]]", "[0.6,0.6]")).unwrap_err();
        assert_eq!(schema_path(e), "noise_probs");
    }

    #[test]
    fn type_error_has_path() {
        let text = doc("[[[0.0,\"x\"]],[[0.1,0.5]]]", "[0.5,0.5]");
        let e = env_from_json(&text).unwrap_err();
        assert_eq!(schema_path(e), "g[0][0][1]");
    }

    #[test]
    fn unknown_field_and_version() {
        let text = doc("[[[0.0,0.2]],[[0.1,0.5]]]", "[0.5,0.5]").replace("\"gamma\"", "\"extra\":1,\"gamma\"");
        assert!(env_from_json(&text).is_err());
        let text = doc("[[[0.0,0.2]],[[0.1,0.5]]]", "[0.5,0.5]").replace("\"format_version\":1", "\"format_version\":2");
        assert_eq!(schema_path(env_from_json(&text).unwrap_err()), "format_version");
    }

    #[test]
    fn ragged_table_rejected() {
        let text = doc("[[[0.0,0.2]],[[0.1]]]", "[0.5,0.5]");
        assert_eq!(schema_path(env_from_json(&text).unwrap_err()), "g[1][0]");
    }

    #[test]
    fn policy_round_trip() {
        let p = Policy::new(vec![vec![0.1, 0.9], vec![1.0, 0.0]]).unwrap();
        assert_eq!(policy_from_json(&policy_to_json(&p).unwrap()).unwrap(), p);
        let e = policy_from_json(r#"{"format_version":1,"probs":[[0.5,0.6]]}"#).unwrap_err();
        assert_eq!(schema_path(e), "probs[0]");
    }
}
