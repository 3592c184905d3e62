use std::io::Write;
use std::path::Path;

use serde::Serialize;

use super::mc::{mc_oracle, McOptions};
use super::moments::{cantelli_bound, gap_stats};
use crate::env::{ExoJmdp, Policy};
use crate::error::{Error, Result};
use crate::moments::MomentCollection2;
use crate::rng::child_seed;

/// Gap summary for one ordered action pair from both the moment tables and the
/// Monte Carlo oracle.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GapReport {
    pub state: usize,
    pub action_a: usize,
    pub action_b: usize,
    pub gap_mean: f64,
    pub gap_variance: f64,
    pub cantelli_bound: Option<f64>,
    pub mc_gap_mean: f64,
    pub mc_gap_variance: f64,
    pub mc_inferiority_prob: f64,
    /// Half-widths for (mean, variance, inferiority).
    pub mc_ci_halfwidths: [f64; 3],
}

pub fn gap_report(
    env: &ExoJmdp,
    policy: &Policy,
    m: &MomentCollection2,
    (s, a, b): (usize, usize, usize),
    opts: &McOptions,
) -> Result<GapReport> {
    let g = gap_stats(m, env.space(), s, a, b)?;
    let est = mc_oracle(env, policy, s, &[a, b], opts)?;
    let mc = est.gap.expect("pair query");
    Ok(GapReport {
        state: s,
        action_a: a,
        action_b: b,
        gap_mean: g.mean,
        gap_variance: g.variance,
        cantelli_bound: cantelli_bound(g.mean, g.variance).ok(),
        mc_gap_mean: mc.mean.estimate,
        mc_gap_variance: mc.variance.estimate,
        mc_inferiority_prob: mc.inferiority.estimate,
        mc_ci_halfwidths: [mc.mean.halfwidth, mc.variance.halfwidth, mc.inferiority.halfwidth],
    })
}

/// Inferiority frequency over the one-sided Chebyshev bound, from two sources of moments.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EcdfRow {
    pub state: usize,
    pub action_a: usize,
    pub action_b: usize,
    /// MC frequency over the bound from the moment tables.
    pub ratio_jipe: f64,
    /// MC frequency over the bound from MC moments.
    pub ratio_mc: f64,
    /// Delta-method half-width of `ratio_mc`.
    pub mc_ci: f64,
    pub mc_inferiority: f64,
    pub mc_inferiority_ci: f64,
    pub bound_jipe: f64,
    pub bound_mc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EcdfResult {
    pub rows: Vec<EcdfRow>,
    /// Pairs left out, with the reason.
    pub skipped: Vec<((usize, usize, usize), String)>,
}

fn ratio(p: f64, bound: f64) -> f64 {
    if p == 0.0 {
        0.0
    } else {
        p / bound
    }
}

/// Half-width of `p / B(mean, var)` propagated from independent half-widths of
/// `p`, `mean` and `var`. The covariance of the mean and variance estimators is ignored.
fn ratio_halfwidth(p: f64, hp: f64, mean: f64, hm: f64, var: f64, hv: f64) -> f64 {
    let denom = var + mean * mean;
    let bound = var / denom;
    if bound == 0.0 {
        return if p == 0.0 && hp == 0.0 { 0.0 } else { f64::INFINITY };
    }
    let d_mean = -2.0 * mean * var / (denom * denom);
    let d_var = mean * mean / (denom * denom);
    let hb = ((d_mean * hm).powi(2) + (d_var * hv).powi(2)).sqrt();
    ((hp / bound).powi(2) + (p * hb / (bound * bound)).powi(2)).sqrt()
}

/// One ECDF row per `(s, a, b)` pair. Each pair gets its own seed stream derived
/// from `opts.seed` and its position. Pairs whose gap mean is not positive
/// under either source are skipped.
pub fn chebyshev_ecdf(
    env: &ExoJmdp,
    policy: &Policy,
    m: &MomentCollection2,
    pairs: &[(usize, usize, usize)],
    opts: &McOptions,
) -> Result<EcdfResult> {
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for (i, &(s, a, b)) in pairs.iter().enumerate() {
        let g = gap_stats(m, env.space(), s, a, b)?;
        if g.mean <= 0.0 {
            skipped.push(((s, a, b), format!("gap mean {} from moment tables is not positive", g.mean)));
            continue;
        }
        let pair_opts = McOptions {
            seed: child_seed(opts.seed, i as u64),
            ..*opts
        };
        let mc = mc_oracle(env, policy, s, &[a, b], &pair_opts)?.gap.expect("pair query");
        if mc.mean.estimate <= 0.0 {
            skipped.push(((s, a, b), format!("MC gap mean {} is not positive", mc.mean.estimate)));
            continue;
        }
        let p = mc.inferiority.estimate;
        let bound_jipe = cantelli_bound(g.mean, g.variance)?;
        let bound_mc = cantelli_bound(mc.mean.estimate, mc.variance.estimate)?;
        rows.push(EcdfRow {
            state: s,
            action_a: a,
            action_b: b,
            ratio_jipe: ratio(p, bound_jipe),
            ratio_mc: ratio(p, bound_mc),
            mc_ci: ratio_halfwidth(
                p,
                mc.inferiority.halfwidth,
                mc.mean.estimate,
                mc.mean.halfwidth,
                mc.variance.estimate,
                mc.variance.halfwidth,
            ),
            mc_inferiority: p,
            mc_inferiority_ci: mc.inferiority.halfwidth,
            bound_jipe,
            bound_mc,
        });
    }
    Ok(EcdfResult { rows, skipped })
}

/// Every ordered pair of distinct actions at every state.
pub fn all_pairs(env: &ExoJmdp) -> Vec<(usize, usize, usize)> {
    let na = env.num_actions();
    (0..env.num_states())
        .flat_map(|s| (0..na).flat_map(move |a| (0..na).filter(move |&b| b != a).map(move |b| (s, a, b))))
        .collect()
}

/// Columns `state,action_a,action_b,ratio_jipe,ratio_mc,mc_ci`.
pub fn write_ecdf_csv<W: Write>(rows: &[EcdfRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["state", "action_a", "action_b", "ratio_jipe", "ratio_mc", "mc_ci"])?;
    for r in rows {
        w.write_record([
            r.state.to_string(),
            r.action_a.to_string(),
            r.action_b.to_string(),
            r.ratio_jipe.to_string(),
            r.ratio_mc.to_string(),
            r.mc_ci.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn save_ecdf_csv(rows: &[EcdfRow], path: &Path) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_ecdf_csv(rows, std::io::BufWriter::new(f))
}
