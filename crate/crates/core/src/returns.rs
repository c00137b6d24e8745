//! Return targets and advantage weights.
//!
//! Every estimator here runs backwards over one episode. The TD(λ) recursion is
//!
//! ```text
//! G_T = r_T + γ · V_boot
//! G_i = r_i + γ · ((1 - λ) · V(s_{i+1}) + λ · G_{i+1})
//! ```
//!
//! where `V_boot` is zero for a terminal episode and `V(s_{T+1})` for one cut
//! off by a step limit. At `λ = 1` this is exactly the (tail-bootstrapped)
//! Monte Carlo return, at `λ = 0` the one-step TD target.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::mlp::Mlp;
use crate::policy::Action;
use crate::{Error, Result};

/// Something that assigns a value to a state.
pub trait StateValue {
    fn value(&self, state: &[f64]) -> f64;

    /// Values for a list of states. Implementations backed by a network batch this.
    fn values(&self, states: &[&[f64]]) -> Vec<f64> {
        states.iter().map(|s| self.value(s)).collect()
    }
}

impl<F: Fn(&[f64]) -> f64> StateValue for F {
    fn value(&self, state: &[f64]) -> f64 {
        self(state)
    }
}

/// Batched evaluation of a single-output network.
impl StateValue for Mlp {
    fn value(&self, state: &[f64]) -> f64 {
        self.forward_one(state).expect("state width matches the value network")[0]
    }

    fn values(&self, states: &[&[f64]]) -> Vec<f64> {
        if states.is_empty() {
            return Vec::new();
        }
        let width = states[0].len();
        let flat: Vec<f64> = states.iter().flat_map(|s| s.iter().copied()).collect();
        let batch = Array2::from_shape_vec((states.len(), width), flat)
            .expect("states share one width");
        self.forward(batch.view())
            .expect("state width matches the value network")
            .column(0)
            .to_vec()
    }
}

/// A network whose output is multiplied by a fixed factor: `V(s) = scale · f(s)`.
#[derive(Debug, Clone, Copy)]
pub struct Scaled<'a> {
    pub net: &'a Mlp,
    pub scale: f64,
}

impl StateValue for Scaled<'_> {
    fn value(&self, state: &[f64]) -> f64 {
        self.scale * self.net.value(state)
    }

    fn values(&self, states: &[&[f64]]) -> Vec<f64> {
        self.net.values(states).into_iter().map(|v| self.scale * v).collect()
    }
}

/// `V ≡ 0`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroValue;

impl StateValue for ZeroValue {
    fn value(&self, _: &[f64]) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// The environment reached an absorbing state; the tail is worth nothing.
    Terminal,
    /// The episode was cut by a step limit; the tail is bootstrapped.
    Truncated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Action,
    pub reward: f64,
    pub next_state: Vec<f64>,
}

/// One whole episode, plus the per-step targets cached by the replay buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    transitions: Vec<Transition>,
    termination: Termination,
    pub(crate) returns: Vec<f64>,
    pub(crate) weights: Vec<f64>,
}

impl Trajectory {
    pub fn new(transitions: Vec<Transition>, termination: Termination) -> Result<Self> {
        let first = transitions
            .first()
            .ok_or_else(|| Error::Validation("a trajectory needs at least one transition".into()))?;
        let dim = first.state.len();
        for (i, t) in transitions.iter().enumerate() {
            if t.state.len() != dim || t.next_state.len() != dim {
                return Err(Error::Shape(format!(
                    "transition {i} has state width {} / {}, expected {dim}",
                    t.state.len(),
                    t.next_state.len()
                )));
            }
        }
        let n = transitions.len();
        Ok(Self {
            transitions,
            termination,
            returns: vec![0.0; n],
            weights: vec![1.0; n],
        })
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn termination(&self) -> Termination {
        self.termination
    }

    pub fn rewards(&self) -> impl Iterator<Item = f64> + '_ {
        self.transitions.iter().map(|t| t.reward)
    }

    /// Undiscounted sum of rewards.
    pub fn total_reward(&self) -> f64 {
        self.rewards().sum()
    }

    /// Cached return targets (zeros until annotated).
    pub fn cached_returns(&self) -> &[f64] {
        &self.returns
    }

    /// Cached policy weights (ones until annotated).
    pub fn cached_weights(&self) -> &[f64] {
        &self.weights
    }

    /// `V(s_{i+1})` for every step, as consumed by the estimators below.
    pub fn next_values<V: StateValue + ?Sized>(&self, value: &V) -> Vec<f64> {
        let next: Vec<&[f64]> = self.transitions.iter().map(|t| t.next_state.as_slice()).collect();
        value.values(&next)
    }

    fn reward_at(&self, i: usize) -> f64 {
        self.transitions[i].reward
    }

    fn bootstrap(&self, next_values: &[f64]) -> f64 {
        match self.termination {
            Termination::Terminal => 0.0,
            Termination::Truncated => *next_values.last().expect("trajectories are nonempty"),
        }
    }
}

/// How `R^D` is estimated for each stored transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReturnEstimator {
    #[default]
    TdLambda,
    MonteCarlo,
}

/// What the policy regression weights each sample by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// `exp((R - V(s)) / β)`, clipped.
    #[default]
    Advantage,
    /// `exp(R / β)`, clipped: reward-weighted regression without a baseline.
    Return,
    /// All ones: behavioral cloning.
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReturnConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub beta: f64,
    pub omega_max: f64,
}

impl Default for ReturnConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lambda: 0.95,
            beta: 0.05,
            omega_max: 20.0,
        }
    }
}

impl ReturnConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma must be in [0, 1), got {}", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("lambda must be in [0, 1], got {}", self.lambda)));
        }
        if !(self.beta > 0.0) {
            return Err(Error::Config(format!("beta must be positive, got {}", self.beta)));
        }
        if !(self.omega_max > 0.0) {
            return Err(Error::Config(format!(
                "omega_max must be positive, got {}",
                self.omega_max
            )));
        }
        Ok(())
    }
}

/// `R_i = Σ_{k≥i} γ^{k-i} r_k`, plus the discounted value of the final next
/// state when the episode was truncated.
pub fn monte_carlo_returns(t: &Trajectory, next_values: &[f64], gamma: f64) -> Vec<f64> {
    debug_assert_eq!(next_values.len(), t.len());
    let mut out = vec![0.0; t.len()];
    let mut g = t.bootstrap(next_values);
    for i in (0..t.len()).rev() {
        g = t.transitions[i].reward + gamma * g;
        out[i] = g;
    }
    out
}

/// λ-returns bootstrapped from `next_values[i] = V(s_{i+1})`.
pub fn td_lambda_returns(t: &Trajectory, next_values: &[f64], gamma: f64, lambda: f64) -> Vec<f64> {
    debug_assert_eq!(next_values.len(), t.len());
    let n = t.len();
    let mut out = vec![0.0; n];
    let mut g = t.reward_at(n - 1) + gamma * t.bootstrap(next_values);
    out[n - 1] = g;
    for i in (0..n - 1).rev() {
        g = t.reward_at(i) + gamma * ((1.0 - lambda) * next_values[i] + lambda * g);
        out[i] = g;
    }
    out
}

/// `A_i = R_i - V(s_i)`.
pub fn advantages(returns: &[f64], values: &[f64]) -> Result<Vec<f64>> {
    if returns.len() != values.len() {
        return Err(Error::Shape(format!(
            "{} returns but {} values",
            returns.len(),
            values.len()
        )));
    }
    Ok(returns.iter().zip(values).map(|(r, v)| r - v).collect())
}

/// `ω = min(exp(x / β), ω_max)` for one score `x` (an advantage, or a raw return).
///
/// Underflow is floored at the smallest normal float so weights stay strictly positive.
pub fn exp_weight(x: f64, beta: f64, omega_max: f64) -> f64 {
    (x / beta).exp().min(omega_max).max(f64::MIN_POSITIVE)
}

/// Clipped exponentiated advantages.
pub fn advantage_weights(advantages: &[f64], beta: f64, omega_max: f64) -> Vec<f64> {
    advantages.iter().map(|&a| exp_weight(a, beta, omega_max)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj(rewards: &[f64], termination: Termination) -> Trajectory {
        let transitions = rewards
            .iter()
            .enumerate()
            .map(|(i, &r)| Transition {
                state: vec![i as f64],
                action: Action::Discrete(0),
                reward: r,
                next_state: vec![i as f64 + 1.0],
            })
            .collect();
        Trajectory::new(transitions, termination).unwrap()
    }

    #[test]
    fn monte_carlo_examples() {
        let t = traj(&[1.0, 1.0], Termination::Terminal);
        assert_eq!(monte_carlo_returns(&t, &[0.0; 2], 0.9), vec![1.9, 1.0]);
        let t = traj(&[-3.5], Termination::Terminal);
        assert_eq!(monte_carlo_returns(&t, &[7.0], 0.3), vec![-3.5]);
        let t = traj(&[0.0, 0.0, 1.0], Termination::Terminal);
        assert_eq!(monte_carlo_returns(&t, &[0.0; 3], 0.5), vec![0.25, 0.5, 1.0]);
    }

    #[test]
    fn truncated_monte_carlo_bootstraps_tail() {
        let t = traj(&[1.0, 2.0], Termination::Truncated);
        // R_1 = 2 + 0.5 * 10, R_0 = 1 + 0.5 * R_1
        assert_eq!(monte_carlo_returns(&t, &[99.0, 10.0], 0.5), vec![4.5, 7.0]);
    }

    #[test]
    fn td_lambda_hand_unrolled() {
        let t = traj(&[1.0, 1.0], Termination::Terminal);
        let g = td_lambda_returns(&t, &[0.0, 0.0], 0.9, 0.95);
        assert_eq!(g[1], 1.0);
        assert!((g[0] - 1.855).abs() < 1e-15);
        // Cross-check against the TD-error form Σ_l (γλ)^l δ_{i+l} with V ≡ 0.
        let deltas = [1.0, 1.0];
        let brute = deltas[0] + 0.9 * 0.95 * deltas[1];
        assert!((g[0] - brute).abs() < 1e-15);
    }

    #[test]
    fn td_lambda_limits() {
        let t = traj(&[0.5, -1.0, 2.0], Termination::Truncated);
        let nv = [3.0, -2.0, 4.0];
        assert_eq!(td_lambda_returns(&t, &nv, 0.9, 1.0), monte_carlo_returns(&t, &nv, 0.9));
        let one_step = td_lambda_returns(&t, &nv, 0.9, 0.0);
        assert_eq!(one_step, vec![0.5 + 0.9 * 3.0, -1.0 + 0.9 * -2.0, 2.0 + 0.9 * 4.0]);
    }

    #[test]
    fn advantage_examples() {
        assert_eq!(advantages(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(advantages(&[2.0, 0.0], &[1.0, 1.0]).unwrap(), vec![1.0, -1.0]);
        assert!(matches!(advantages(&[1.0], &[]), Err(Error::Shape(_))));
    }

    #[test]
    fn weight_examples() {
        assert_eq!(advantage_weights(&[0.0], 0.05, 20.0), vec![1.0]);
        assert_eq!(advantage_weights(&[0.0], 123.0, 20.0), vec![1.0]);
        // exp(0.2 / 0.05) = e^4 ≈ 54.598 > 20
        assert!((0.2_f64 / 0.05).exp() > 54.59);
        assert_eq!(advantage_weights(&[0.2], 0.05, 20.0), vec![20.0]);
        let w = advantage_weights(&[-0.05], 0.05, 20.0)[0];
        assert!((w - 0.367_879_441_171_442_3).abs() < 1e-15);
    }

    #[test]
    fn extreme_advantages_stay_in_range() {
        let w = advantage_weights(&[1e6, -1e6, f64::MAX], 0.05, 20.0);
        assert_eq!(w[0], 20.0);
        assert!(w[1] > 0.0 && w[1] <= 20.0);
        assert_eq!(w[2], 20.0);
    }

    #[test]
    fn config_validation() {
        assert!(ReturnConfig::default().validate().is_ok());
        let bad = ReturnConfig { gamma: 1.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = ReturnConfig { beta: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = ReturnConfig { lambda: 1.5, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn empty_trajectory_rejected() {
        assert!(Trajectory::new(vec![], Termination::Terminal).is_err());
    }
}
