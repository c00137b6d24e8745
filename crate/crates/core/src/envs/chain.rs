use rand_chacha::ChaCha8Rng;

use super::{one_hot, Dynamics};
use crate::policy::{Action, ActionSpace};
use crate::tabular::TabularMdp;

pub const LEFT: usize = 0;
pub const RIGHT: usize = 1;

/// A corridor of `n` states. The agent starts at the left end; stepping into
/// the right end pays 1 and ends the episode. Moving left from 0 stays put.
#[derive(Debug, Clone)]
pub struct Chain {
    n: usize,
    pos: usize,
}

impl Chain {
    pub fn new(n: usize) -> Self {
        assert!(n >= 2, "a chain needs at least two states");
        Self { n, pos: 0 }
    }

    fn next(&self, s: usize, a: usize) -> usize {
        if a == RIGHT {
            (s + 1).min(self.n - 1)
        } else {
            s.saturating_sub(1)
        }
    }
}

impl Dynamics for Chain {
    fn name(&self) -> &'static str {
        "chain5"
    }

    fn observation_dim(&self) -> usize {
        self.n
    }

    fn action_space(&self) -> ActionSpace {
        ActionSpace::Discrete { n: 2 }
    }

    fn max_episode_steps(&self) -> usize {
        50
    }

    fn reset(&mut self, _: &mut ChaCha8Rng) -> Vec<f64> {
        self.pos = 0;
        one_hot(self.n, 0)
    }

    fn advance(&mut self, action: &Action, _: &mut ChaCha8Rng) -> (Vec<f64>, f64, bool) {
        let a = action.as_discrete().expect("validated by the wrapper");
        self.pos = self.next(self.pos, a);
        let done = self.pos == self.n - 1;
        (one_hot(self.n, self.pos), if done { 1.0 } else { 0.0 }, done)
    }

    fn constants(&self) -> serde_json::Value {
        serde_json::json!({ "states": self.n, "start": 0, "goal": self.n - 1, "goal_reward": 1.0 })
    }
}

/// The exact MDP behind `chain5`; the goal is an absorbing zero-reward state.
pub fn chain5_mdp(gamma: f64) -> TabularMdp {
    let chain = Chain::new(5);
    let n = chain.n;
    let mut p = vec![vec![vec![0.0; n]; 2]; n];
    let mut r = vec![vec![0.0; 2]; n];
    for s in 0..n {
        for a in [LEFT, RIGHT] {
            if s == n - 1 {
                p[s][a][s] = 1.0;
                continue;
            }
            let s2 = chain.next(s, a);
            p[s][a][s2] = 1.0;
            if s2 == n - 1 {
                r[s][a] = 1.0;
            }
        }
    }
    TabularMdp::new(p, r, gamma, one_hot(n, 0)).expect("chain MDP is well formed")
}
