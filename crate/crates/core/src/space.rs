use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Finite state-action space with the flat index `x = s * N + a`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateActionSpace {
    num_states: usize,
    num_actions: usize,
}

impl StateActionSpace {
    pub fn new(num_states: usize, num_actions: usize) -> Result<Self> {
        if num_states == 0 || num_actions == 0 {
            return Err(Error::InvalidInput(format!(
                "state-action space needs at least one state and one action, got {num_states}x{num_actions}"
            )));
        }
        Ok(Self {
            num_states,
            num_actions,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    /// |X| = |S| * N.
    pub fn len(&self) -> usize {
        self.num_states * self.num_actions
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn x(&self, s: usize, a: usize) -> usize {
        debug_assert!(s < self.num_states && a < self.num_actions);
        s * self.num_actions + a
    }

    #[inline]
    pub fn sa(&self, x: usize) -> (usize, usize) {
        (x / self.num_actions, x % self.num_actions)
    }

    #[inline]
    pub fn state_of(&self, x: usize) -> usize {
        x / self.num_actions
    }
}

/// A coordinate of a second-order moment collection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Index2 {
    Mu(usize),
    Sigma(usize, usize),
}

/// All coordinates: the mean entries in `x` order, then the second-moment
/// entries in row-major order.
pub fn enumerate_indices(space: &StateActionSpace) -> Vec<Index2> {
    let nx = space.len();
    let mut out = Vec::with_capacity(nx + nx * nx);
    out.extend((0..nx).map(Index2::Mu));
    for x in 0..nx {
        out.extend((0..nx).map(|y| Index2::Sigma(x, y)));
    }
    out
}
