//! FIFO trajectory replay buffer.
//!
//! The buffer holds whole episodes from the most recent policies. Sampling
//! transitions uniformly from it draws from the mixture of those policies, each
//! weighted by how many of its transitions are still stored, so the mixture
//! weights never need to be tracked explicitly.

use std::collections::VecDeque;

use ndarray::Array2;
use rand::Rng;

use crate::policy::Action;
use crate::returns::{
    advantages, exp_weight, monte_carlo_returns, td_lambda_returns, ReturnConfig, ReturnEstimator,
    StateValue, Trajectory, Transition, Weighting,
};
use crate::{Error, Result};

/// Default capacity in transitions.
pub const DEFAULT_CAPACITY: usize = 50_000;

#[derive(Debug, Clone)]
struct Entry {
    trajectory: Trajectory,
    iteration: usize,
}

/// Points at one stored transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransitionRef {
    pub trajectory: usize,
    pub step: usize,
}

/// Which cache [`ReplayBuffer::annotate`] refreshes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// Return targets, bootstrapped from the given value function.
    Returns(ReturnEstimator),
    /// Policy weights, using the given value function as the baseline.
    Weights(Weighting),
}

/// Summary of the cached weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightStats {
    pub mean: f64,
    /// Fraction of transitions whose weight sits at the clipping threshold.
    pub clip_fraction: f64,
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    entries: VecDeque<Entry>,
    total: usize,
    // Start index of each entry in the flattened transition order.
    offsets: Vec<usize>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity < 1 {
            return Err(Error::Config("replay capacity must be at least 1".into()));
        }
        Ok(Self {
            capacity,
            entries: VecDeque::new(),
            total: 0,
            offsets: Vec::new(),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Number of stored transitions.
    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn num_trajectories(&self) -> usize {
        self.entries.len()
    }

    pub fn trajectories(&self) -> impl Iterator<Item = &Trajectory> + '_ {
        self.entries.iter().map(|e| &e.trajectory)
    }

    /// Iteration tag of each stored trajectory, oldest first.
    pub fn iteration_tags(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.iter().map(|e| e.iteration)
    }

    /// Appends an episode, evicting the oldest whole episodes until the buffer
    /// fits. Returns the number of evicted transitions.
    pub fn push_trajectory(&mut self, trajectory: Trajectory, iteration: usize) -> Result<usize> {
        if trajectory.len() > self.capacity {
            return Err(Error::Validation(format!(
                "trajectory of {} transitions exceeds replay capacity {}",
                trajectory.len(),
                self.capacity
            )));
        }
        self.total += trajectory.len();
        self.entries.push_back(Entry {
            trajectory,
            iteration,
        });
        let mut evicted = 0;
        while self.total > self.capacity {
            let old = self.entries.pop_front().expect("over capacity implies nonempty");
            self.total -= old.trajectory.len();
            evicted += old.trajectory.len();
        }
        self.rebuild_offsets();
        Ok(evicted)
    }

    pub fn clear(&mut self) {
        self.entries.clear();
        self.offsets.clear();
        self.total = 0;
    }

    pub fn transition(&self, r: TransitionRef) -> &Transition {
        &self.entries[r.trajectory].trajectory.transitions()[r.step]
    }

    /// Uniform draws with replacement over all stored transitions.
    pub fn sample_minibatch<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<TransitionRef>> {
        if self.is_empty() {
            return Err(Error::Validation("cannot sample from an empty replay buffer".into()));
        }
        Ok((0..n)
            .map(|_| self.locate(rng.random_range(0..self.total)))
            .collect())
    }

    /// Refreshes one of the per-transition caches.
    ///
    /// `Returns` recomputes every target from scratch with `value` as the
    /// bootstrap; `Weights` turns the cached targets into clipped exponentiated
    /// weights, using `value` as the baseline when the weighting needs one.
    pub fn annotate<V: StateValue + ?Sized>(&mut self, value: &V, cfg: &ReturnConfig, phase: Phase) {
        match phase {
            Phase::Returns(estimator) => {
                let next: Vec<&[f64]> = self
                    .entries
                    .iter()
                    .flat_map(|e| e.trajectory.transitions().iter().map(|t| t.next_state.as_slice()))
                    .collect();
                let next_values = value.values(&next);
                let mut start = 0;
                for e in &mut self.entries {
                    let t = &mut e.trajectory;
                    let nv = &next_values[start..start + t.len()];
                    t.returns = match estimator {
                        ReturnEstimator::TdLambda => td_lambda_returns(t, nv, cfg.gamma, cfg.lambda),
                        ReturnEstimator::MonteCarlo => monte_carlo_returns(t, nv, cfg.gamma),
                    };
                    start += t.len();
                }
            }
            Phase::Weights(Weighting::Advantage) => {
                let states: Vec<&[f64]> = self
                    .entries
                    .iter()
                    .flat_map(|e| e.trajectory.transitions().iter().map(|t| t.state.as_slice()))
                    .collect();
                let values = value.values(&states);
                let mut start = 0;
                for e in &mut self.entries {
                    let t = &mut e.trajectory;
                    let adv = advantages(&t.returns, &values[start..start + t.len()])
                        .expect("one value per cached return");
                    t.weights = adv.iter().map(|&a| exp_weight(a, cfg.beta, cfg.omega_max)).collect();
                    start += t.len();
                }
            }
            Phase::Weights(Weighting::Return) => {
                for e in &mut self.entries {
                    let t = &mut e.trajectory;
                    t.weights = t.returns.iter().map(|&r| exp_weight(r, cfg.beta, cfg.omega_max)).collect();
                }
            }
            Phase::Weights(Weighting::Uniform) => {
                for e in &mut self.entries {
                    let t = &mut e.trajectory;
                    t.weights = vec![1.0; t.len()];
                }
            }
        }
    }

    pub fn cached_return(&self, r: TransitionRef) -> f64 {
        self.entries[r.trajectory].trajectory.returns[r.step]
    }

    pub fn cached_weight(&self, r: TransitionRef) -> f64 {
        self.entries[r.trajectory].trajectory.weights[r.step]
    }

    pub fn weight_stats(&self, omega_max: f64) -> WeightStats {
        if self.is_empty() {
            return WeightStats {
                mean: 1.0,
                clip_fraction: 0.0,
            };
        }
        let (sum, clipped) = self
            .trajectories()
            .flat_map(|t| t.weights.iter())
            .fold((0.0, 0usize), |(s, c), &w| (s + w, c + usize::from(w >= omega_max)));
        WeightStats {
            mean: sum / self.total as f64,
            clip_fraction: clipped as f64 / self.total as f64,
        }
    }

    /// Stacks the states of `refs` into a batch matrix.
    pub fn states(&self, refs: &[TransitionRef]) -> Array2<f64> {
        let width = refs.first().map_or(0, |&r| self.transition(r).state.len());
        let mut out = Array2::zeros((refs.len(), width));
        for (mut row, &r) in out.rows_mut().into_iter().zip(refs) {
            row.assign(&ndarray::ArrayView1::from(&self.transition(r).state));
        }
        out
    }

    pub fn actions(&self, refs: &[TransitionRef]) -> Vec<Action> {
        refs.iter().map(|&r| self.transition(r).action.clone()).collect()
    }

    fn locate(&self, flat: usize) -> TransitionRef {
        let trajectory = self.offsets.partition_point(|&o| o <= flat) - 1;
        TransitionRef {
            trajectory,
            step: flat - self.offsets[trajectory],
        }
    }

    fn rebuild_offsets(&mut self) {
        self.offsets.clear();
        let mut acc = 0;
        for e in &self.entries {
            self.offsets.push(acc);
            acc += e.trajectory.len();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::returns::{Termination, ZeroValue};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn traj(id: f64, rewards: &[f64]) -> Trajectory {
        let transitions = rewards
            .iter()
            .enumerate()
            .map(|(i, &r)| Transition {
                state: vec![id, i as f64],
                action: Action::Discrete(0),
                reward: r,
                next_state: vec![id, i as f64 + 1.0],
            })
            .collect();
        Trajectory::new(transitions, Termination::Terminal).unwrap()
    }

    #[test]
    fn capacity_bounds() {
        let b = ReplayBuffer::new(DEFAULT_CAPACITY).unwrap();
        assert_eq!(b.len(), 0);
        assert!(b.is_empty());
        assert!(ReplayBuffer::new(1).is_ok());
        assert!(matches!(ReplayBuffer::new(0), Err(Error::Config(_))));
    }

    #[test]
    fn whole_trajectory_eviction() {
        let mut b = ReplayBuffer::new(5).unwrap();
        assert_eq!(b.push_trajectory(traj(0.0, &[0.0; 3]), 1).unwrap(), 0);
        assert_eq!(b.push_trajectory(traj(1.0, &[0.0; 3]), 2).unwrap(), 3);
        assert_eq!(b.len(), 3);
        assert_eq!(b.iteration_tags().collect::<Vec<_>>(), vec![2]);
    }

    #[test]
    fn eviction_sequence_by_hand() {
        let mut b = ReplayBuffer::new(4).unwrap();
        b.push_trajectory(traj(0.0, &[0.0; 2]), 0).unwrap();
        b.push_trajectory(traj(1.0, &[0.0; 2]), 1).unwrap();
        assert_eq!(b.push_trajectory(traj(2.0, &[0.0; 1]), 2).unwrap(), 2);
        assert_eq!(b.len(), 3);
        assert_eq!(b.iteration_tags().collect::<Vec<_>>(), vec![1, 2]);
    }

    #[test]
    fn oversized_trajectory_rejected() {
        let mut b = ReplayBuffer::new(2).unwrap();
        assert!(b.push_trajectory(traj(0.0, &[0.0; 3]), 0).is_err());
        assert!(b.is_empty());
    }

    #[test]
    fn single_transition_sampling() {
        let mut b = ReplayBuffer::new(10).unwrap();
        b.push_trajectory(traj(0.0, &[1.0]), 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let refs = b.sample_minibatch(4, &mut rng).unwrap();
        assert_eq!(refs, vec![TransitionRef { trajectory: 0, step: 0 }; 4]);
    }

    #[test]
    fn empty_sampling_fails() {
        let b = ReplayBuffer::new(10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(b.sample_minibatch(1, &mut rng).is_err());
    }

    #[test]
    fn two_transition_frequencies() {
        let mut b = ReplayBuffer::new(10).unwrap();
        b.push_trajectory(traj(0.0, &[1.0]), 0).unwrap();
        b.push_trajectory(traj(1.0, &[1.0]), 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let refs = b.sample_minibatch(100_000, &mut rng).unwrap();
        let first = refs.iter().filter(|r| r.trajectory == 0).count() as f64 / 1e5;
        assert!((first - 0.5).abs() < 0.01, "{first}");
    }

    #[test]
    fn annotate_monte_carlo_reduction() {
        let mut b = ReplayBuffer::new(10).unwrap();
        b.push_trajectory(traj(0.0, &[0.0, 0.0, 1.0]), 0).unwrap();
        b.push_trajectory(traj(1.0, &[1.0, 1.0]), 0).unwrap();
        let cfg = ReturnConfig {
            gamma: 0.5,
            lambda: 1.0,
            ..Default::default()
        };
        b.annotate(&ZeroValue, &cfg, Phase::Returns(ReturnEstimator::TdLambda));
        let cached: Vec<Vec<f64>> = b.trajectories().map(|t| t.cached_returns().to_vec()).collect();
        assert_eq!(cached, vec![vec![0.25, 0.5, 1.0], vec![1.5, 1.0]]);
    }

    #[test]
    fn annotate_weights_are_clipped_and_pure() {
        let mut b = ReplayBuffer::new(20).unwrap();
        b.push_trajectory(traj(0.0, &[3.0, -2.0, 0.1]), 0).unwrap();
        b.push_trajectory(traj(1.0, &[0.0, 5.0]), 0).unwrap();
        let cfg = ReturnConfig::default();
        let v = |s: &[f64]| 0.1 * s[1];
        b.annotate(&v, &cfg, Phase::Returns(ReturnEstimator::TdLambda));
        b.annotate(&v, &cfg, Phase::Weights(Weighting::Advantage));
        let first: Vec<f64> = b.trajectories().flat_map(|t| t.cached_weights().to_vec()).collect();
        assert!(first.iter().all(|&w| w > 0.0 && w <= cfg.omega_max));
        b.annotate(&v, &cfg, Phase::Returns(ReturnEstimator::TdLambda));
        b.annotate(&v, &cfg, Phase::Weights(Weighting::Advantage));
        let second: Vec<f64> = b.trajectories().flat_map(|t| t.cached_weights().to_vec()).collect();
        assert_eq!(first, second);
        let stats = b.weight_stats(cfg.omega_max);
        assert!(stats.clip_fraction > 0.0 && stats.mean > 0.0);
    }
}
