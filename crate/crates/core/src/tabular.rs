//! Exact finite-MDP machinery.
//!
//! Everything here is computed by dense linear algebra rather than sampling,
//! which makes it the ground truth for the learned stack:
//!
//! * `V^π` solves `(I - γ P_π) V = r_π`, and `Q^π = r + γ P V^π`.
//! * The unnormalized discounted state distribution solves
//!   `d_π = (I - γ P_πᵀ)^{-1} p₀` and sums to `1 / (1 - γ)`.
//! * The expected improvement of `π` over `μ` is
//!   `η(π) = Σ_s d_π(s) Σ_a π(a|s) A^μ(s,a) = J(π) - J(μ)`; the surrogate
//!   `η̂` swaps `d_π` for `d_μ`.
//! * The KL-regularized improvement step has the closed form
//!   `π*(a|s) = μ(a|s) exp(A^μ(s,a) / β) / Z(s)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Largest state space the dense solvers accept.
pub const MAX_STATES: usize = 1000;

const STOCHASTIC_TOL: f64 = 1e-12;

/// Explicit `(P, R, γ, p₀)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MdpJson", into = "MdpJson")]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    // transitions[s][a][s'] = P(s'|s,a)
    transitions: Vec<Vec<Vec<f64>>>,
    rewards: Vec<Vec<f64>>,
    gamma: f64,
    initial: Vec<f64>,
}

/// Row-stochastic `π(a|s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularPolicy {
    probs: Vec<Vec<f64>>,
}

/// Exact values of one policy.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub v: Vec<f64>,
    pub q: Vec<Vec<f64>>,
    pub advantage: Vec<Vec<f64>>,
}

impl TabularPolicy {
    pub fn new(probs: Vec<Vec<f64>>) -> Result<Self> {
        for (s, row) in probs.iter().enumerate() {
            if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
                return Err(Error::Validation(format!("policy row {s} has a negative entry")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::Validation(format!("policy row {s} sums to {sum}")));
            }
        }
        Ok(Self { probs })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            probs: vec![vec![1.0 / n_actions as f64; n_actions]; n_states],
        }
    }

    /// Puts all mass on `actions[s]` in state `s`.
    pub fn deterministic(actions: &[usize], n_actions: usize) -> Self {
        let probs = actions
            .iter()
            .map(|&a| {
                let mut row = vec![0.0; n_actions];
                row[a] = 1.0;
                row
            })
            .collect();
        Self { probs }
    }

    /// A random policy with every action strictly probable.
    pub fn random_full_support<R: Rng + ?Sized>(n_states: usize, n_actions: usize, rng: &mut R) -> Self {
        let probs = (0..n_states)
            .map(|_| {
                let raw: Vec<f64> = (0..n_actions).map(|_| rng.random_range(0.05..1.0)).collect();
                normalize(raw)
            })
            .collect();
        Self { probs }
    }

    /// `(1 - t) · self + t · other`.
    pub fn mix(&self, other: &TabularPolicy, t: f64) -> TabularPolicy {
        let probs = self
            .probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (1.0 - t) * x + t * y).collect())
            .collect();
        TabularPolicy { probs }
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s][a]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.probs
    }

    /// Most probable action in each state, ties to the lowest index.
    pub fn greedy_actions(&self) -> Vec<usize> {
        self.probs.iter().map(|row| crate::policy::argmax(row)).collect()
    }

    /// `Σ_s KL(self(·|s) || other(·|s))`, maximized over states.
    pub fn max_row_kl(&self, other: &TabularPolicy) -> f64 {
        self.probs
            .iter()
            .zip(&other.probs)
            .map(|(p, q)| kl(p, q))
            .fold(0.0, f64::max)
    }

    /// Largest per-state total-variation distance.
    pub fn max_row_tv(&self, other: &TabularPolicy) -> f64 {
        self.probs
            .iter()
            .zip(&other.probs)
            .map(|(p, q)| 0.5 * p.iter().zip(q).map(|(x, y)| (x - y).abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

/// `KL(p || q)` for two discrete distributions.
pub fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (pi / qi).ln())
        .sum()
}

impl TabularMdp {
    pub fn new(
        transitions: Vec<Vec<Vec<f64>>>,
        rewards: Vec<Vec<f64>>,
        gamma: f64,
        initial: Vec<f64>,
    ) -> Result<Self> {
        let n_states = transitions.len();
        if n_states == 0 || n_states > MAX_STATES {
            return Err(Error::Config(format!(
                "state count {n_states} is outside 1..={MAX_STATES}"
            )));
        }
        let n_actions = transitions[0].len();
        if n_actions == 0 {
            return Err(Error::Config("need at least one action".into()));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::Config(format!("gamma must be in [0, 1), got {gamma}")));
        }
        if rewards.len() != n_states || initial.len() != n_states {
            return Err(Error::Shape("rewards and p0 must have one entry per state".into()));
        }
        for s in 0..n_states {
            if transitions[s].len() != n_actions || rewards[s].len() != n_actions {
                return Err(Error::Shape(format!("state {s} has the wrong number of actions")));
            }
            for a in 0..n_actions {
                let row = &transitions[s][a];
                if row.len() != n_states || row.iter().any(|&p| !(p >= 0.0)) {
                    return Err(Error::Validation(format!("P(.|{s},{a}) is not a distribution")));
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > STOCHASTIC_TOL {
                    return Err(Error::Validation(format!("P(.|{s},{a}) sums to {sum}")));
                }
            }
        }
        let sum0: f64 = initial.iter().sum();
        if (sum0 - 1.0).abs() > STOCHASTIC_TOL || initial.iter().any(|&p| !(p >= 0.0)) {
            return Err(Error::Validation(format!("p0 sums to {sum0}")));
        }
        Ok(Self {
            n_states,
            n_actions,
            transitions,
            rewards,
            gamma,
            initial,
        })
    }

    /// Random dense MDP: Dirichlet-like transition rows, rewards in `[0, 1)`,
    /// and a random full-support start distribution.
    pub fn random<R: Rng + ?Sized>(n_states: usize, n_actions: usize, gamma: f64, rng: &mut R) -> Result<Self> {
        let transitions = (0..n_states)
            .map(|_| {
                (0..n_actions)
                    .map(|_| normalize((0..n_states).map(|_| -rng.random::<f64>().max(1e-300).ln()).collect()))
                    .collect()
            })
            .collect();
        let rewards = (0..n_states)
            .map(|_| (0..n_actions).map(|_| rng.random::<f64>()).collect())
            .collect();
        let initial = normalize((0..n_states).map(|_| rng.random_range(0.05..1.0)).collect());
        Self::new(transitions, rewards, gamma, initial)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn transition(&self, s: usize, a: usize, next: usize) -> f64 {
        self.transitions[s][a][next]
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.rewards[s][a]
    }

    /// Same dynamics with a different discount.
    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        Self::new(self.transitions.clone(), self.rewards.clone(), gamma, self.initial.clone())
    }

    fn check_policy(&self, pi: &TabularPolicy) -> Result<()> {
        if pi.probs.len() != self.n_states || pi.probs.iter().any(|r| r.len() != self.n_actions) {
            return Err(Error::Shape(format!(
                "policy is not {}x{}",
                self.n_states, self.n_actions
            )));
        }
        Ok(())
    }

    /// `(P_π, r_π)`.
    fn induced_chain(&self, pi: &TabularPolicy) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.n_states;
        let mut p = DMatrix::zeros(n, n);
        let mut r = DVector::zeros(n);
        for s in 0..n {
            for a in 0..self.n_actions {
                let w = pi.probs[s][a];
                if w == 0.0 {
                    continue;
                }
                r[s] += w * self.rewards[s][a];
                for s2 in 0..n {
                    p[(s, s2)] += w * self.transitions[s][a][s2];
                }
            }
        }
        (p, r)
    }

    fn q_from_v(&self, v: &[f64]) -> Vec<Vec<f64>> {
        (0..self.n_states)
            .map(|s| {
                (0..self.n_actions)
                    .map(|a| {
                        let next: f64 = self.transitions[s][a].iter().zip(v).map(|(p, v)| p * v).sum();
                        self.rewards[s][a] + self.gamma * next
                    })
                    .collect()
            })
            .collect()
    }

    /// `V^π`, `Q^π` and `A^π` by a direct linear solve.
    pub fn policy_evaluation(&self, pi: &TabularPolicy) -> Result<Evaluation> {
        self.check_policy(pi)?;
        let (p, r) = self.induced_chain(pi);
        let a = DMatrix::identity(self.n_states, self.n_states) - p * self.gamma;
        let v = a
            .lu()
            .solve(&r)
            .ok_or_else(|| Error::Validation("I - γP_π is singular".into()))?;
        let v: Vec<f64> = v.iter().copied().collect();
        let q = self.q_from_v(&v);
        let advantage = q
            .iter()
            .zip(&v)
            .map(|(row, vs)| row.iter().map(|qa| qa - vs).collect())
            .collect();
        Ok(Evaluation { v, q, advantage })
    }

    /// `J(π) = Σ_s p₀(s) V^π(s)`.
    pub fn expected_return(&self, pi: &TabularPolicy) -> Result<f64> {
        let v = self.policy_evaluation(pi)?.v;
        Ok(self.initial.iter().zip(&v).map(|(p, v)| p * v).sum())
    }

    /// `‖T V - V‖_∞` for the Bellman optimality operator `T`.
    pub fn bellman_residual(&self, v: &[f64]) -> f64 {
        self.q_from_v(v)
            .iter()
            .zip(v)
            .map(|(q, vs)| (q.iter().copied().fold(f64::NEG_INFINITY, f64::max) - vs).abs())
            .fold(0.0, f64::max)
    }

    /// Iterates the Bellman optimality operator until `‖T V - V‖_∞ ≤ tol`, then
    /// returns `V` and the greedy policy (ties to the lowest action index).
    pub fn value_iteration(&self, tol: f64) -> Result<(Vec<f64>, TabularPolicy)> {
        if !(tol > 0.0) {
            return Err(Error::Config(format!("tolerance must be positive, got {tol}")));
        }
        let mut v = vec![0.0; self.n_states];
        loop {
            let q = self.q_from_v(&v);
            let next: Vec<f64> = q
                .iter()
                .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
                .collect();
            let residual = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            if residual <= tol {
                break;
            }
            v = next;
        }
        let greedy = self.greedy(&v);
        Ok((v, greedy))
    }

    /// Deterministic greedy policy with respect to `v`.
    pub fn greedy(&self, v: &[f64]) -> TabularPolicy {
        let q = self.q_from_v(v);
        let actions: Vec<usize> = q
            .iter()
            .map(|row| {
                let best = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let slack = 1e-12 * (1.0 + best.abs());
                row.iter().position(|&x| x >= best - slack).expect("nonempty row")
            })
            .collect();
        TabularPolicy::deterministic(&actions, self.n_actions)
    }

    /// `d_π = (I - γ P_πᵀ)^{-1} p₀`.
    pub fn discounted_state_distribution(&self, pi: &TabularPolicy) -> Result<Vec<f64>> {
        self.check_policy(pi)?;
        let (p, _) = self.induced_chain(pi);
        let a = DMatrix::identity(self.n_states, self.n_states) - p.transpose() * self.gamma;
        let p0 = DVector::from_column_slice(&self.initial);
        let d = a
            .lu()
            .solve(&p0)
            .ok_or_else(|| Error::Validation("I - γP_πᵀ is singular".into()))?;
        Ok(d.iter().copied().collect())
    }

    /// `Σ_s weights(s) Σ_a π(a|s) A(s,a)`.
    fn weighted_advantage(&self, weights: &[f64], pi: &TabularPolicy, advantage: &[Vec<f64>]) -> f64 {
        weights
            .iter()
            .enumerate()
            .map(|(s, d)| d * pi.probs[s].iter().zip(&advantage[s]).map(|(p, a)| p * a).sum::<f64>())
            .sum()
    }

    /// `η(π) = E_{s~d_π} E_{a~π} A^μ(s,a)`, computed in advantage form.
    pub fn expected_improvement(&self, pi: &TabularPolicy, mu: &TabularPolicy) -> Result<f64> {
        let adv = self.policy_evaluation(mu)?.advantage;
        let d = self.discounted_state_distribution(pi)?;
        Ok(self.weighted_advantage(&d, pi, &adv))
    }

    /// `η̂(π) = E_{s~d_μ} E_{a~π} A^μ(s,a)`.
    pub fn surrogate_improvement(&self, pi: &TabularPolicy, mu: &TabularPolicy) -> Result<f64> {
        let adv = self.policy_evaluation(mu)?.advantage;
        let d = self.discounted_state_distribution(mu)?;
        Ok(self.weighted_advantage(&d, pi, &adv))
    }

    /// `π*(a|s) ∝ μ(a|s) exp(A^μ(s,a) / β)`, normalized per state by `Z(s)`.
    pub fn closed_form_awr(&self, mu: &TabularPolicy, beta: f64) -> Result<TabularPolicy> {
        if !(beta > 0.0) {
            return Err(Error::Config(format!("beta must be positive, got {beta}")));
        }
        let adv = self.policy_evaluation(mu)?.advantage;
        Ok(exponentiated_reweighting(mu, &adv, beta))
    }

    /// Expected undiscounted reward collected in the first `horizon` steps.
    pub fn finite_horizon_return(&self, pi: &TabularPolicy, horizon: usize) -> Result<f64> {
        self.check_policy(pi)?;
        let (p, r) = self.induced_chain(pi);
        let mut dist = DVector::from_column_slice(&self.initial);
        let mut total = 0.0;
        for _ in 0..horizon {
            total += dist.dot(&r);
            dist = p.transpose() * dist;
        }
        Ok(total)
    }
}

/// `π(a|s) ∝ μ(a|s) exp(A(s,a) / β)`, normalized with a log-sum-exp per state.
pub fn exponentiated_reweighting(mu: &TabularPolicy, advantage: &[Vec<f64>], beta: f64) -> TabularPolicy {
    let probs = mu
        .probs
        .iter()
        .zip(advantage)
        .map(|(m, a)| {
            let logits: Vec<f64> = m
                .iter()
                .zip(a)
                .map(|(p, adv)| if *p > 0.0 { p.ln() + adv / beta } else { f64::NEG_INFINITY })
                .collect();
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let unnorm: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            normalize(unnorm)
        })
        .collect();
    TabularPolicy { probs }
}

fn normalize(mut xs: Vec<f64>) -> Vec<f64> {
    let sum: f64 = xs.iter().sum();
    xs.iter_mut().for_each(|x| *x /= sum);
    xs
}

#[derive(Serialize, Deserialize)]
struct MdpJson {
    #[serde(rename = "P")]
    p: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "R")]
    r: Vec<Vec<f64>>,
    gamma: f64,
    p0: Vec<f64>,
}

impl From<TabularMdp> for MdpJson {
    fn from(m: TabularMdp) -> Self {
        MdpJson {
            p: m.transitions,
            r: m.rewards,
            gamma: m.gamma,
            p0: m.initial,
        }
    }
}

impl TryFrom<MdpJson> for TabularMdp {
    type Error = Error;

    fn try_from(j: MdpJson) -> Result<Self> {
        TabularMdp::new(j.p, j.r, j.gamma, j.p0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn absorbing(gamma: f64) -> TabularMdp {
        TabularMdp::new(vec![vec![vec![1.0]]], vec![vec![1.0]], gamma, vec![1.0]).unwrap()
    }

    /// 5-state chain: left/right, reward 1 on entering the absorbing right end.
    fn chain(gamma: f64) -> TabularMdp {
        let n = 5;
        let mut p = vec![vec![vec![0.0; n]; 2]; n];
        let mut r = vec![vec![0.0; 2]; n];
        for s in 0..n {
            if s == n - 1 {
                p[s][0][s] = 1.0;
                p[s][1][s] = 1.0;
                continue;
            }
            p[s][0][s.saturating_sub(1)] = 1.0;
            p[s][1][s + 1] = 1.0;
            if s + 1 == n - 1 {
                r[s][1] = 1.0;
            }
        }
        let mut p0 = vec![0.0; n];
        p0[0] = 1.0;
        TabularMdp::new(p, r, gamma, p0).unwrap()
    }

    #[test]
    fn geometric_value() {
        let m = absorbing(0.9);
        let e = m.policy_evaluation(&TabularPolicy::uniform(1, 1)).unwrap();
        assert!((e.v[0] - 10.0).abs() < 1e-12);
        let d = m.discounted_state_distribution(&TabularPolicy::uniform(1, 1)).unwrap();
        assert!((d[0] - 10.0).abs() < 1e-12);
    }

    #[test]
    fn chain_values_by_backward_induction() {
        let m = chain(0.9);
        let right = TabularPolicy::deterministic(&[1; 5], 2);
        let e = m.policy_evaluation(&right).unwrap();
        let expected = [0.729, 0.81, 0.9, 1.0, 0.0];
        for (v, x) in e.v.iter().zip(expected) {
            assert!((v - x).abs() < 1e-12, "{:?}", e.v);
        }
        let (vstar, pistar) = m.value_iteration(1e-12).unwrap();
        assert!((vstar[0] - 0.729).abs() < 1e-10);
        assert_eq!(&pistar.greedy_actions()[..4], &[1, 1, 1, 1]);
    }

    #[test]
    fn chain_state_distribution() {
        let m = chain(0.9);
        let right = TabularPolicy::deterministic(&[1; 5], 2);
        let d = m.discounted_state_distribution(&right).unwrap();
        // Truncated power series Σ_t γ^t p(s_t = s).
        let mut series = vec![0.0; 5];
        let mut s = 0;
        let mut disc = 1.0;
        for _ in 0..2000 {
            series[s] += disc;
            disc *= 0.9;
            s = (s + 1).min(4);
        }
        for (a, b) in d.iter().zip(&series) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!((d[..4].iter().zip([1.0, 0.9, 0.81, 0.729]).map(|(a, b)| (a - b).abs()).sum::<f64>()) < 1e-12);
        assert!((d.iter().sum::<f64>() - 10.0).abs() < 1e-9);
    }

    #[test]
    fn advantage_has_zero_policy_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = TabularMdp::random(6, 3, 0.95, &mut rng).unwrap();
        let pi = TabularPolicy::random_full_support(6, 3, &mut rng);
        let e = m.policy_evaluation(&pi).unwrap();
        for s in 0..6 {
            let mean: f64 = (0..3).map(|a| pi.prob(s, a) * e.advantage[s][a]).sum();
            assert!(mean.abs() < 1e-12);
        }
    }

    #[test]
    fn value_iteration_stopping_rule() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = TabularMdp::random(8, 3, 0.9, &mut rng).unwrap();
        let (v, _) = m.value_iteration(1e-10).unwrap();
        assert!(m.bellman_residual(&v) <= 1e-10);
        assert!(m.value_iteration(0.0).is_err());
    }

    #[test]
    fn zero_reward_values_vanish() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = TabularMdp::random(4, 2, 0.9, &mut rng).unwrap();
        let zero = TabularMdp::new(m.transitions.clone(), vec![vec![0.0; 2]; 4], 0.9, m.initial.clone()).unwrap();
        let (v, _) = zero.value_iteration(1e-12).unwrap();
        assert!(v.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn improvement_identities_on_chain() {
        let m = chain(0.9);
        let (_, pistar) = m.value_iteration(1e-12).unwrap();
        let random = TabularPolicy::uniform(5, 2);
        let eta = m.expected_improvement(&pistar, &random).unwrap();
        let diff = m.expected_return(&pistar).unwrap() - m.expected_return(&random).unwrap();
        assert!((eta - diff).abs() < 1e-9);
        assert!(eta >= 0.0);
        assert_eq!(m.expected_improvement(&random, &random).unwrap().abs() < 1e-12, true);
        assert!(m.surrogate_improvement(&random, &random).unwrap().abs() < 1e-12);
    }

    #[test]
    fn closed_form_examples() {
        // One state, two actions, μ uniform, A = (β ln 2, 0) with β = 0.5.
        let beta = 0.5;
        let mu = TabularPolicy::uniform(1, 2);
        let pi = exponentiated_reweighting(&mu, &[vec![beta * 2f64.ln(), 0.0]], beta);
        assert!((pi.prob(0, 0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((pi.prob(0, 1) - 1.0 / 3.0).abs() < 1e-15);

        let same = exponentiated_reweighting(&mu, &[vec![0.0, 0.0]], beta);
        assert_eq!(same, mu);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = TabularMdp::random(5, 3, 0.9, &mut rng).unwrap();
        let mu = TabularPolicy::random_full_support(5, 3, &mut rng);
        let hot = m.closed_form_awr(&mu, 1e6).unwrap();
        assert!(hot.max_row_tv(&mu) < 1e-5);
    }

    #[test]
    fn finite_horizon_on_chain() {
        let m = chain(0.9);
        let right = TabularPolicy::deterministic(&[1; 5], 2);
        assert_eq!(m.finite_horizon_return(&right, 50).unwrap(), 1.0);
        assert_eq!(m.finite_horizon_return(&right, 3).unwrap(), 0.0);
    }

    #[test]
    fn json_round_trip_and_validation() {
        let m = chain(0.9);
        let json = serde_json::to_string(&m).unwrap();
        assert!(json.contains("\"P\"") && json.contains("\"p0\""));
        let back: TabularMdp = serde_json::from_str(&json).unwrap();
        assert_eq!(back, m);
        let bad = json.replace("\"gamma\":0.9", "\"gamma\":1.5");
        assert!(serde_json::from_str::<TabularMdp>(&bad).is_err());
    }

    #[test]
    fn non_stochastic_inputs_rejected() {
        assert!(TabularMdp::new(vec![vec![vec![0.5]]], vec![vec![0.0]], 0.9, vec![1.0]).is_err());
        assert!(TabularPolicy::new(vec![vec![0.3, 0.3]]).is_err());
    }
}
