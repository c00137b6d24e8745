use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{one_hot, Dynamics};
use crate::policy::{Action, ActionSpace};
use crate::tabular::TabularMdp;

/// Row and column offsets for up, right, down, left.
const MOVES: [(isize, isize); 4] = [(-1, 0), (0, 1), (1, 0), (0, -1)];

/// A square grid. The agent starts in the top-left corner; reaching the
/// bottom-right corner pays 1 and ends the episode. With probability `slip`
/// the chosen action is replaced by one drawn uniformly from all four.
/// Moves into a wall leave the agent in place.
#[derive(Debug, Clone)]
pub struct GridWorld {
    size: usize,
    slip: f64,
    pos: usize,
}

impl Default for GridWorld {
    fn default() -> Self {
        Self {
            size: 5,
            slip: 0.1,
            pos: 0,
        }
    }
}

impl GridWorld {
    pub fn n_states(&self) -> usize {
        self.size * self.size
    }

    pub fn goal(&self) -> usize {
        self.n_states() - 1
    }

    pub fn slip(&self) -> f64 {
        self.slip
    }

    fn next(&self, s: usize, a: usize) -> usize {
        let (row, col) = ((s / self.size) as isize, (s % self.size) as isize);
        let (dr, dc) = MOVES[a];
        let (r2, c2) = (row + dr, col + dc);
        let n = self.size as isize;
        if (0..n).contains(&r2) && (0..n).contains(&c2) {
            (r2 * n + c2) as usize
        } else {
            s
        }
    }
}

impl Dynamics for GridWorld {
    fn name(&self) -> &'static str {
        "gridworld"
    }

    fn observation_dim(&self) -> usize {
        self.n_states()
    }

    fn action_space(&self) -> ActionSpace {
        ActionSpace::Discrete { n: 4 }
    }

    fn max_episode_steps(&self) -> usize {
        100
    }

    fn reset(&mut self, _: &mut ChaCha8Rng) -> Vec<f64> {
        self.pos = 0;
        one_hot(self.n_states(), 0)
    }

    fn advance(&mut self, action: &Action, rng: &mut ChaCha8Rng) -> (Vec<f64>, f64, bool) {
        let mut a = action.as_discrete().expect("validated by the wrapper");
        if rng.random::<f64>() < self.slip {
            a = rng.random_range(0..MOVES.len());
        }
        self.pos = self.next(self.pos, a);
        let done = self.pos == self.goal();
        (one_hot(self.n_states(), self.pos), if done { 1.0 } else { 0.0 }, done)
    }

    fn constants(&self) -> serde_json::Value {
        serde_json::json!({
            "size": self.size,
            "slip": self.slip,
            "start": [0, 0],
            "goal": [self.size - 1, self.size - 1],
            "goal_reward": 1.0,
            "step_cost": 0.0,
            "actions": ["up", "right", "down", "left"],
        })
    }
}

/// The exact MDP behind `gridworld`, slip included; the goal is absorbing.
pub fn gridworld_mdp(gamma: f64) -> TabularMdp {
    let g = GridWorld::default();
    let n = g.n_states();
    let k = MOVES.len();
    let mut p = vec![vec![vec![0.0; n]; k]; n];
    let mut r = vec![vec![0.0; k]; n];
    for s in 0..n {
        for a in 0..k {
            if s == g.goal() {
                p[s][a][s] = 1.0;
                continue;
            }
            p[s][a][g.next(s, a)] += 1.0 - g.slip;
            for b in 0..k {
                p[s][a][g.next(s, b)] += g.slip / k as f64;
            }
            r[s][a] = p[s][a][g.goal()];
        }
    }
    TabularMdp::new(p, r, gamma, one_hot(n, 0)).expect("grid MDP is well formed")
}
