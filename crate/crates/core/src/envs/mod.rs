//! Small self-contained control tasks behind one step interface.
//!
//! Each task implements [`Dynamics`]; [`Episodic`] wraps it with the episode
//! bookkeeping every environment shares (step limit, finished-episode guard,
//! action validation and clipping), and exposes it as an [`Env`].

mod cartpole;
mod chain;
mod dataset;
mod gridworld;
mod pendulum;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::policy::{Action, ActionSpace, PolicyHead};
use crate::returns::{Termination, Trajectory, Transition};
use crate::tabular::TabularPolicy;
use crate::{Error, Result};

pub use cartpole::CartPole;
pub use chain::{chain5_mdp, Chain};
pub use dataset::Dataset;
pub use gridworld::{gridworld_mdp, GridWorld};
pub use pendulum::Pendulum;

/// Names accepted by [`make_env`].
pub const ENV_NAMES: [&str; 4] = ["chain5", "gridworld", "cartpole", "pendulum"];

/// Episode status after a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Running,
    Terminal,
    Truncated,
}

impl Status {
    pub fn termination(self) -> Option<Termination> {
        match self {
            Status::Running => None,
            Status::Terminal => Some(Termination::Terminal),
            Status::Truncated => Some(Termination::Truncated),
        }
    }
}

impl From<Termination> for Status {
    fn from(t: Termination) -> Self {
        match t {
            Termination::Terminal => Status::Terminal,
            Termination::Truncated => Status::Truncated,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub next_state: Vec<f64>,
    pub reward: f64,
    pub status: Status,
}

pub trait Env {
    fn name(&self) -> &str;
    fn observation_dim(&self) -> usize;
    fn action_space(&self) -> ActionSpace;
    fn max_episode_steps(&self) -> usize;
    /// Starts a new episode and returns the first observation.
    fn reset(&mut self) -> Vec<f64>;
    fn step(&mut self, action: &Action) -> Result<Step>;
    /// Physical constants and episode settings as JSON.
    fn describe(&self) -> serde_json::Value;
}

/// The task-specific part of an environment.
pub trait Dynamics {
    fn name(&self) -> &'static str;
    fn observation_dim(&self) -> usize;
    fn action_space(&self) -> ActionSpace;
    fn max_episode_steps(&self) -> usize;
    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Vec<f64>;
    /// Applies an in-bounds action; returns `(observation, reward, terminal)`.
    fn advance(&mut self, action: &Action, rng: &mut ChaCha8Rng) -> (Vec<f64>, f64, bool);
    fn constants(&self) -> serde_json::Value;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Idle,
    Running,
    Finished,
}

/// Episode bookkeeping around a [`Dynamics`].
#[derive(Debug, Clone)]
pub struct Episodic<D> {
    dynamics: D,
    rng: ChaCha8Rng,
    steps: usize,
    phase: Phase,
}

impl<D: Dynamics> Episodic<D> {
    pub fn new(dynamics: D, seed: u64) -> Self {
        Self {
            dynamics,
            rng: ChaCha8Rng::seed_from_u64(seed),
            steps: 0,
            phase: Phase::Idle,
        }
    }

    pub fn dynamics(&self) -> &D {
        &self.dynamics
    }

    pub fn dynamics_mut(&mut self) -> &mut D {
        &mut self.dynamics
    }

    pub fn steps_taken(&self) -> usize {
        self.steps
    }

    fn checked_action(&self, action: &Action) -> Result<Action> {
        match (self.dynamics.action_space(), action) {
            (ActionSpace::Discrete { n }, Action::Discrete(a)) if *a < n => Ok(action.clone()),
            (ActionSpace::Discrete { n }, _) => Err(Error::Validation(format!(
                "{} takes a discrete action below {n}, got {action:?}",
                self.dynamics.name()
            ))),
            (ActionSpace::Continuous { low, high }, Action::Continuous(a)) if a.len() == low.len() => {
                if a.iter().any(|x| x.is_nan()) {
                    return Err(Error::Validation("NaN action".into()));
                }
                let clipped = a
                    .iter()
                    .zip(low.iter().zip(&high))
                    .map(|(x, (lo, hi))| x.clamp(*lo, *hi))
                    .collect();
                Ok(Action::Continuous(clipped))
            }
            (ActionSpace::Continuous { low, .. }, _) => Err(Error::Validation(format!(
                "{} takes a {}-dimensional continuous action, got {action:?}",
                self.dynamics.name(),
                low.len()
            ))),
        }
    }
}

impl<D: Dynamics> Env for Episodic<D> {
    fn name(&self) -> &str {
        self.dynamics.name()
    }

    fn observation_dim(&self) -> usize {
        self.dynamics.observation_dim()
    }

    fn action_space(&self) -> ActionSpace {
        self.dynamics.action_space()
    }

    fn max_episode_steps(&self) -> usize {
        self.dynamics.max_episode_steps()
    }

    fn reset(&mut self) -> Vec<f64> {
        self.steps = 0;
        self.phase = Phase::Running;
        self.dynamics.reset(&mut self.rng)
    }

    fn step(&mut self, action: &Action) -> Result<Step> {
        match self.phase {
            Phase::Running => {}
            Phase::Idle => return Err(Error::Contract("step called before reset".into())),
            Phase::Finished => return Err(Error::Contract("step called after the episode ended".into())),
        }
        let action = self.checked_action(action)?;
        let (next_state, reward, terminal) = self.dynamics.advance(&action, &mut self.rng);
        self.steps += 1;
        let status = if terminal {
            Status::Terminal
        } else if self.steps >= self.dynamics.max_episode_steps() {
            Status::Truncated
        } else {
            Status::Running
        };
        if status != Status::Running {
            self.phase = Phase::Finished;
        }
        Ok(Step {
            next_state,
            reward,
            status,
        })
    }

    fn describe(&self) -> serde_json::Value {
        serde_json::json!({
            "name": self.dynamics.name(),
            "observation_dim": self.dynamics.observation_dim(),
            "action_space": self.dynamics.action_space(),
            "max_episode_steps": self.dynamics.max_episode_steps(),
            "constants": self.dynamics.constants(),
        })
    }
}

pub fn make_env(name: &str, seed: u64) -> Result<Box<dyn Env>> {
    Ok(match name {
        "chain5" => Box::new(Episodic::new(Chain::new(5), seed)),
        "gridworld" => Box::new(Episodic::new(GridWorld::default(), seed)),
        "cartpole" => Box::new(Episodic::new(CartPole::default(), seed)),
        "pendulum" => Box::new(Episodic::new(Pendulum::default(), seed)),
        other => {
            return Err(Error::Config(format!(
                "unknown environment {other:?}, expected one of {}",
                ENV_NAMES.join(", ")
            )))
        }
    })
}

/// Index of the hot entry of a one-hot observation.
pub fn one_hot_index(state: &[f64]) -> usize {
    crate::policy::argmax(state)
}

pub(crate) fn one_hot(n: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}

/// Anything that picks actions.
pub trait Actor {
    fn act(&self, state: &[f64], rng: &mut dyn RngCore) -> Result<Action>;
    /// Short human-readable description, stored in dataset headers.
    fn describe(&self) -> String;
}

/// Samples from a policy head.
pub struct Sampled<'a>(pub &'a PolicyHead);

/// Always takes the mode of a policy head.
pub struct Greedy<'a>(pub &'a PolicyHead);

/// Uniform over the action space.
pub struct UniformRandom(pub ActionSpace);

/// A tabular policy over one-hot observations.
pub struct Tabular {
    pub policy: TabularPolicy,
    pub label: String,
}

impl Actor for Sampled<'_> {
    fn act(&self, state: &[f64], rng: &mut dyn RngCore) -> Result<Action> {
        self.0.sample(state, rng)
    }

    fn describe(&self) -> String {
        "policy checkpoint (sampled)".into()
    }
}

impl Actor for Greedy<'_> {
    fn act(&self, state: &[f64], _: &mut dyn RngCore) -> Result<Action> {
        self.0.mode(state)
    }

    fn describe(&self) -> String {
        "policy checkpoint (mode)".into()
    }
}

impl Actor for UniformRandom {
    fn act(&self, _: &[f64], rng: &mut dyn RngCore) -> Result<Action> {
        Ok(match &self.0 {
            ActionSpace::Discrete { n } => Action::Discrete(rng.random_range(0..*n)),
            ActionSpace::Continuous { low, high } => Action::Continuous(
                low.iter().zip(high).map(|(lo, hi)| rng.random_range(*lo..=*hi)).collect(),
            ),
        })
    }

    fn describe(&self) -> String {
        "uniform random".into()
    }
}

impl Tabular {
    /// `(1 - ε)` on the policy's greedy action plus `ε` spread uniformly.
    pub fn epsilon_greedy(greedy: &TabularPolicy, epsilon: f64) -> Self {
        let rows = greedy.rows();
        let n_actions = rows.first().map_or(1, Vec::len);
        let uniform = TabularPolicy::uniform(rows.len(), n_actions);
        let det = TabularPolicy::deterministic(&greedy.greedy_actions(), n_actions);
        Self {
            policy: det.mix(&uniform, epsilon),
            label: format!("epsilon-greedy({epsilon}) optimal"),
        }
    }
}

impl Actor for Tabular {
    fn act(&self, state: &[f64], rng: &mut dyn RngCore) -> Result<Action> {
        let s = one_hot_index(state);
        let row = self
            .policy
            .rows()
            .get(s)
            .ok_or_else(|| Error::Shape(format!("state {s} is outside the tabular policy")))?;
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (a, p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                return Ok(Action::Discrete(a));
            }
        }
        // Rounding left u above the final cumulative sum.
        Ok(Action::Discrete(row.iter().rposition(|&p| p > 0.0).unwrap_or(0)))
    }

    fn describe(&self) -> String {
        self.label.clone()
    }
}

/// Plays one whole episode.
pub fn run_episode<R: RngCore>(env: &mut dyn Env, actor: &dyn Actor, rng: &mut R) -> Result<Trajectory> {
    let mut state = env.reset();
    let mut transitions = Vec::new();
    loop {
        let action = actor.act(&state, rng)?;
        let step = env.step(&action)?;
        transitions.push(Transition {
            state: std::mem::replace(&mut state, step.next_state.clone()),
            action,
            reward: step.reward,
            next_state: step.next_state,
        });
        if let Some(termination) = step.status.termination() {
            return Trajectory::new(transitions, termination);
        }
    }
}

/// Whole episodes until at least `n` transitions have been gathered.
pub fn collect_dataset<R: RngCore>(env: &mut dyn Env, actor: &dyn Actor, n: usize, rng: &mut R) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::Config("dataset size must be at least 1".into()));
    }
    let mut episodes = Vec::new();
    let mut size = 0;
    while size < n {
        let t = run_episode(env, actor, rng)?;
        size += t.len();
        episodes.push(t);
    }
    Dataset::new(env.name(), &actor.describe(), episodes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_name_is_a_config_error() {
        assert!(matches!(make_env("mountaincar", 0), Err(Error::Config(_))));
        for name in ENV_NAMES {
            assert_eq!(make_env(name, 0).unwrap().name(), name);
        }
    }

    #[test]
    fn step_guards() {
        let mut env = make_env("chain5", 0).unwrap();
        assert!(matches!(env.step(&Action::Discrete(1)), Err(Error::Contract(_))));
        env.reset();
        assert!(matches!(env.step(&Action::Discrete(2)), Err(Error::Validation(_))));
        assert!(env.step(&Action::Continuous(vec![1.0])).is_err());
        for _ in 0..4 {
            env.step(&Action::Discrete(1)).unwrap();
        }
        assert!(matches!(env.step(&Action::Discrete(1)), Err(Error::Contract(_))));
    }

    #[test]
    fn cap_truncates() {
        let mut env = make_env("chain5", 0).unwrap();
        env.reset();
        let mut last = None;
        for _ in 0..50 {
            last = Some(env.step(&Action::Discrete(0)).unwrap().status);
        }
        assert_eq!(last, Some(Status::Truncated));
    }

    #[test]
    fn continuous_actions_are_clipped() {
        let mut a = Episodic::new(Pendulum::default(), 3);
        let mut b = Episodic::new(Pendulum::default(), 3);
        a.reset();
        b.reset();
        let sa = a.step(&Action::Continuous(vec![50.0])).unwrap();
        let sb = b.step(&Action::Continuous(vec![2.0])).unwrap();
        assert_eq!(sa, sb);
        assert!(a.step(&Action::Continuous(vec![f64::NAN])).is_err());
    }

    #[test]
    fn episodes_are_seed_deterministic() {
        for name in ENV_NAMES {
            let mut e1 = make_env(name, 9).unwrap();
            let mut e2 = make_env(name, 9).unwrap();
            let actor = UniformRandom(e1.action_space());
            let mut r1 = ChaCha8Rng::seed_from_u64(4);
            let mut r2 = ChaCha8Rng::seed_from_u64(4);
            for _ in 0..3 {
                let t1 = run_episode(e1.as_mut(), &actor, &mut r1).unwrap();
                let t2 = run_episode(e2.as_mut(), &actor, &mut r2).unwrap();
                assert_eq!(t1, t2);
                assert!(t1.len() <= e1.max_episode_steps());
                assert!(t1.transitions().iter().all(|t| t.next_state.iter().all(|x| x.is_finite())));
            }
        }
    }

    #[test]
    fn collection_takes_whole_episodes() {
        let mut env = make_env("chain5", 0).unwrap();
        let det = TabularPolicy::deterministic(&[1; 5], 2);
        let actor = Tabular {
            policy: det,
            label: "right".into(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = collect_dataset(env.as_mut(), &actor, 1, &mut rng).unwrap();
        assert_eq!(d.episodes().len(), 1);
        assert_eq!(d.size(), 4);
        let d = collect_dataset(env.as_mut(), &actor, 9, &mut rng).unwrap();
        assert_eq!(d.episodes().len(), 3);
        assert!(d.episodes().windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn describe_lists_constants() {
        let env = make_env("cartpole", 0).unwrap();
        let d = env.describe();
        assert_eq!(d["max_episode_steps"], 200);
        assert_eq!(d["constants"]["tau"], 0.02);
    }
}
