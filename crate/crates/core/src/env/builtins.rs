use super::{ExoJmdp, NoiseModel, Policy};
use crate::error::{Error, Result};
use crate::space::StateActionSpace;

/// Gridworld action labels in index order. `U` increases the row.
pub const WGW_ACTIONS: [&str; 4] = ["U", "R", "D", "L"];

fn flat_tables(
    space: StateActionSpace,
    nu: usize,
    mut f: impl FnMut(usize, usize, usize) -> (f64, usize),
) -> (Vec<f64>, Vec<usize>) {
    let n = space.len() * nu;
    let mut g = Vec::with_capacity(n);
    let mut h = Vec::with_capacity(n);
    for s in 0..space.num_states() {
        for a in 0..space.num_actions() {
            for u in 0..nu {
                let (r, sp) = f(s, a, u);
                g.push(r);
                h.push(sp);
            }
        }
    }
    (g, h)
}

/// Coupled-reward chain with `m` states and two actions.
///
/// Both actions advance `i -> min(i + 1, m - 1)`. A fair bit `U` (noise index
/// equals its value) pays `U` to action 0 and `1 - U` to action 1 at every
/// state, including the absorbing end.
pub fn build_crc(m: usize, gamma: f64) -> Result<ExoJmdp> {
    if m < 2 {
        return Err(Error::config("num_states", format!("chain needs at least 2 states, got {m}")));
    }
    let space = StateActionSpace::new(m, 2)?;
    let (g, h) = flat_tables(space, 2, |s, a, u| {
        let bit = u as f64;
        let r = if a == 0 { bit } else { 1.0 - bit };
        (r, (s + 1).min(m - 1))
    });
    ExoJmdp::new(space, NoiseModel::uniform(2)?, g, h, gamma)
}

/// Windy gridworld. State index is `row * width + col`; `goal` is `(col, row)`.
///
/// The intended move is clamped at the walls, then a gust (probability
/// `p_wind`) shifts one cell left, clamped. Entering the goal pays 1; the goal
/// is absorbing with reward 0. Noise outcomes with zero probability are dropped,
/// so `p_wind = 0` gives a deterministic environment.
pub fn build_wgw(
    width: usize,
    height: usize,
    goal: (usize, usize),
    p_wind: f64,
    gamma: f64,
) -> Result<ExoJmdp> {
    if width == 0 || height == 0 {
        return Err(Error::config("width/height", "grid dimensions must be at least 1"));
    }
    if goal.0 >= width || goal.1 >= height {
        return Err(Error::config(
            "goal",
            format!("goal {:?} outside a {width}x{height} grid", goal),
        ));
    }
    if !(0.0..=1.0).contains(&p_wind) {
        return Err(Error::config("p_wind", format!("must lie in [0, 1], got {p_wind}")));
    }
    // (gust flag, probability)
    let outcomes: Vec<(bool, f64)> = [(false, 1.0 - p_wind), (true, p_wind)]
        .into_iter()
        .filter(|(_, p)| *p > 0.0)
        .collect();
    let space = StateActionSpace::new(width * height, 4)?;
    let goal_state = goal.1 * width + goal.0;
    let (g, h) = flat_tables(space, outcomes.len(), |s, a, u| {
        if s == goal_state {
            return (0.0, s);
        }
        let (col, row) = (s % width, s / width);
        let (mut c, r) = match a {
            0 => (col, (row + 1).min(height - 1)),
            1 => ((col + 1).min(width - 1), row),
            2 => (col, row.saturating_sub(1)),
            _ => (col.saturating_sub(1), row),
        };
        if outcomes[u].0 {
            c = c.saturating_sub(1);
        }
        let sp = r * width + c;
        (if sp == goal_state { 1.0 } else { 0.0 }, sp)
    });
    let noise = NoiseModel::new(outcomes.iter().map(|(_, p)| *p).collect())?;
    ExoJmdp::new(space, noise, g, h, gamma)
}

/// Deterministic goal-seeking policy: move horizontally toward the goal column,
/// then vertically toward the goal row. Takes `U` at the goal.
pub fn wgw_fig1_policy(width: usize, height: usize, goal: (usize, usize)) -> Result<Policy> {
    if goal.0 >= width || goal.1 >= height {
        return Err(Error::config("goal", "goal outside grid"));
    }
    let choice: Vec<usize> = (0..width * height)
        .map(|s| {
            let (col, row) = (s % width, s / width);
            if col < goal.0 {
                1
            } else if col > goal.0 {
                3
            } else if row > goal.1 {
                2
            } else {
                0
            }
        })
        .collect();
    Policy::deterministic(4, &choice)
}

/// One absorbing state with perfectly anti-correlated Bernoulli rewards.
pub fn build_example1(gamma: f64) -> Result<ExoJmdp> {
    let space = StateActionSpace::new(1, 2)?;
    let (g, h) = flat_tables(space, 2, |_, a, u| {
        let bit = u as f64;
        (if a == 0 { bit } else { 1.0 - bit }, 0)
    });
    ExoJmdp::new(space, NoiseModel::uniform(2)?, g, h, gamma)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SuccessorCoupling {
    /// Both actions move to `U`.
    Shared,
    /// Action 0 moves to `U`, action 1 to the mirrored state `n - 1 - U`.
    Mirrored,
}

/// Two actions whose successors are driven by one uniform `U` over the states.
/// Reward is 1 when the successor is state 0.
pub fn build_successor_coupling(n: usize, kind: SuccessorCoupling, gamma: f64) -> Result<ExoJmdp> {
    let space = StateActionSpace::new(n, 2)?;
    let (g, h) = flat_tables(space, n, |_, a, u| {
        let sp = match (kind, a) {
            (SuccessorCoupling::Mirrored, 1) => n - 1 - u,
            _ => u,
        };
        (if sp == 0 { 1.0 } else { 0.0 }, sp)
    });
    ExoJmdp::new(space, NoiseModel::uniform(n)?, g, h, gamma)
}

fn scaled_reward(sp: usize, m: usize) -> f64 {
    if m > 1 {
        sp as f64 / (m - 1) as f64
    } else {
        0.0
    }
}

/// `m` states, two actions, independent uniform successor per action.
/// Noise index `u = i * m + j` sends action 0 to `i` and action 1 to `j`.
/// Reward is the successor index scaled to [0, 1].
pub fn build_coupling_independent(m: usize, gamma: f64) -> Result<ExoJmdp> {
    let space = StateActionSpace::new(m, 2)?;
    let (g, h) = flat_tables(space, m * m, |_, a, u| {
        let sp = if a == 0 { u / m } else { u % m };
        (scaled_reward(sp, m), sp)
    });
    ExoJmdp::new(space, NoiseModel::uniform(m * m)?, g, h, gamma)
}

/// `m` states, two actions, both moved to the same uniform successor `U`.
/// Reward is the successor index scaled to [0, 1].
pub fn build_coupling_shared(m: usize, gamma: f64) -> Result<ExoJmdp> {
    let space = StateActionSpace::new(m, 2)?;
    let (g, h) = flat_tables(space, m, |_, _, u| (scaled_reward(u, m), u));
    ExoJmdp::new(space, NoiseModel::uniform(m)?, g, h, gamma)
}

/// Two states, one action: `0 -> 1 -> 1`, reward 1/2 everywhere.
pub fn build_divergent_pair(gamma: f64) -> Result<ExoJmdp> {
    let space = StateActionSpace::new(2, 1)?;
    ExoJmdp::new(space, NoiseModel::uniform(1)?, vec![0.5, 0.5], vec![1, 1], gamma)
}
