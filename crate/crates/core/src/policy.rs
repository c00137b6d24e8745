//! Action distributions over network outputs.
//!
//! A [`PolicyHead`] wraps an [`Mlp`] whose output is either the mean of a
//! diagonal Gaussian (continuous actions) or the logits of a categorical
//! distribution (discrete actions). The policy improvement step only ever needs
//! `log π(a|s)` and its gradient, weighted per sample; that is
//! [`PolicyHead::weighted_nll_grad`].

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::mlp::{Mlp, MlpJson, ParamGrads};
use crate::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Rows weighted below this get no gradient. Their share of any step is far
/// under one ulp of the parameters, and backpropagating them fills the
/// network with subnormals, which are very slow on common hardware.
const NEGLIGIBLE_WEIGHT: f64 = 1e-150;

/// Default fixed standard deviation of Gaussian policies, per action dimension.
pub const DEFAULT_ACTION_STD: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Action {
    Discrete(usize),
    Continuous(Vec<f64>),
}

impl Action {
    pub fn as_discrete(&self) -> Option<usize> {
        match self {
            Action::Discrete(a) => Some(*a),
            Action::Continuous(_) => None,
        }
    }

    pub fn as_continuous(&self) -> Option<&[f64]> {
        match self {
            Action::Continuous(a) => Some(a),
            Action::Discrete(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum ActionSpace {
    Discrete { n: usize },
    Continuous { low: Vec<f64>, high: Vec<f64> },
}

impl ActionSpace {
    /// Width of the network output needed to parameterize this space.
    pub fn head_width(&self) -> usize {
        match self {
            ActionSpace::Discrete { n } => *n,
            ActionSpace::Continuous { low, .. } => low.len(),
        }
    }

    pub fn contains(&self, action: &Action) -> bool {
        match (self, action) {
            (ActionSpace::Discrete { n }, Action::Discrete(a)) => a < n,
            (ActionSpace::Continuous { low, .. }, Action::Continuous(a)) => {
                a.len() == low.len() && a.iter().all(|x| x.is_finite())
            }
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Gaussian,
    Categorical,
}

#[derive(Debug, Clone, PartialEq)]
enum Distribution {
    Categorical,
    Gaussian {
        log_std: Vec<f64>,
        learn_std: bool,
        log_std_momentum: Vec<f64>,
    },
}

/// `π(a|s)`: a network plus the distribution family its outputs parameterize.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "PolicyJson", try_from = "PolicyJson")]
pub struct PolicyHead {
    net: Mlp,
    dist: Distribution,
}

/// Gradient of the weighted negative log-likelihood.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyGrads {
    pub net: ParamGrads,
    /// Present only for Gaussian heads with a learnable standard deviation.
    pub log_std: Option<Vec<f64>>,
}

impl PolicyGrads {
    pub fn is_finite(&self) -> bool {
        self.net.is_finite()
            && self
                .log_std
                .as_ref()
                .is_none_or(|g| g.iter().all(|x| x.is_finite()))
    }
}

/// States, actions and per-sample weights `ω` for one regression step.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedBatch {
    pub states: Array2<f64>,
    pub actions: Vec<Action>,
    pub weights: Vec<f64>,
}

impl WeightedBatch {
    pub fn new(states: Array2<f64>, actions: Vec<Action>, weights: Vec<f64>) -> Result<Self> {
        if states.nrows() != actions.len() || actions.len() != weights.len() {
            return Err(Error::Shape(format!(
                "batch has {} states, {} actions and {} weights",
                states.nrows(),
                actions.len(),
                weights.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::Validation(format!("sample weight {w} is not a finite non-negative number")));
        }
        Ok(Self {
            states,
            actions,
            weights,
        })
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

impl PolicyHead {
    /// Softmax over the network's outputs; needs at least two logits.
    pub fn categorical(net: Mlp) -> Result<Self> {
        if net.output_dim() < 2 {
            return Err(Error::Config(format!(
                "a categorical head needs at least 2 logits, network has {}",
                net.output_dim()
            )));
        }
        Ok(Self {
            net,
            dist: Distribution::Categorical,
        })
    }

    /// Diagonal Gaussian with state-independent standard deviation `std`.
    pub fn gaussian(net: Mlp, std: Vec<f64>, learn_std: bool) -> Result<Self> {
        if std.len() != net.output_dim() {
            return Err(Error::Config(format!(
                "std has {} entries but the network outputs {}",
                std.len(),
                net.output_dim()
            )));
        }
        if let Some(s) = std.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(Error::Config(format!("std must be positive, got {s}")));
        }
        let n = std.len();
        Ok(Self {
            net,
            dist: Distribution::Gaussian {
                log_std: std.iter().map(|s| s.ln()).collect(),
                learn_std,
                log_std_momentum: vec![0.0; n],
            },
        })
    }

    /// Builds a head with a freshly initialized network sized for `space`.
    pub fn for_space(
        obs_dim: usize,
        space: &ActionSpace,
        hidden: &[usize],
        seed: u64,
        output_scale: f64,
        action_std: f64,
        learn_std: bool,
    ) -> Result<Self> {
        let net = Mlp::with_hidden(obs_dim, hidden, space.head_width(), seed, output_scale)?;
        match space {
            ActionSpace::Discrete { .. } => Self::categorical(net),
            ActionSpace::Continuous { low, .. } => {
                Self::gaussian(net, vec![action_std; low.len()], learn_std)
            }
        }
    }

    pub fn kind(&self) -> HeadKind {
        match self.dist {
            Distribution::Categorical => HeadKind::Categorical,
            Distribution::Gaussian { .. } => HeadKind::Gaussian,
        }
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    /// Standard deviations of a Gaussian head; empty for categorical heads.
    pub fn std(&self) -> Vec<f64> {
        match &self.dist {
            Distribution::Categorical => Vec::new(),
            Distribution::Gaussian { log_std, .. } => log_std.iter().map(|l| l.exp()).collect(),
        }
    }

    pub fn action_dim(&self) -> usize {
        self.net.output_dim()
    }

    /// `log π(a|s)`.
    pub fn log_prob(&self, state: &[f64], action: &Action) -> Result<f64> {
        let out = self.net.forward_one(state)?;
        self.log_prob_from_output(&out, action)
    }

    /// Action probabilities of a categorical head.
    pub fn probabilities(&self, state: &[f64]) -> Result<Vec<f64>> {
        match self.dist {
            Distribution::Categorical => {
                let logits = self.net.forward_one(state)?;
                Ok(log_softmax(&logits).into_iter().map(f64::exp).collect())
            }
            Distribution::Gaussian { .. } => Err(Error::Contract(
                "probabilities are only defined for categorical heads".into(),
            )),
        }
    }

    /// Draws `a ~ π(·|s)`.
    pub fn sample<R: Rng + ?Sized>(&self, state: &[f64], rng: &mut R) -> Result<Action> {
        let out = self.net.forward_one(state)?;
        Ok(match &self.dist {
            Distribution::Categorical => {
                let probs: Vec<f64> = log_softmax(&out).into_iter().map(f64::exp).collect();
                Action::Discrete(inverse_cdf(&probs, rng.random::<f64>()))
            }
            Distribution::Gaussian { log_std, .. } => Action::Continuous(
                out.iter()
                    .zip(log_std)
                    .map(|(m, ls)| {
                        let z: f64 = rng.sample(StandardNormal);
                        m + ls.exp() * z
                    })
                    .collect(),
            ),
        })
    }

    /// Most likely action: the mean, or the first maximal logit.
    pub fn mode(&self, state: &[f64]) -> Result<Action> {
        let out = self.net.forward_one(state)?;
        Ok(match self.dist {
            Distribution::Categorical => Action::Discrete(argmax(&out)),
            Distribution::Gaussian { .. } => Action::Continuous(out),
        })
    }

    /// Loss `-mean_i ω_i log π(a_i|s_i)` and its gradient.
    pub fn weighted_nll_grad(&self, batch: &WeightedBatch) -> Result<(f64, PolicyGrads)> {
        if batch.is_empty() {
            return Err(Error::Validation("empty policy batch".into()));
        }
        let n = batch.len() as f64;
        let trace = self.net.forward_trace(batch.states.view())?;
        let out = trace.output();
        let mut upstream = Array2::zeros(out.dim());
        let mut loss = 0.0;
        let mut log_std_grad = match &self.dist {
            Distribution::Gaussian { learn_std: true, log_std, .. } => Some(vec![0.0; log_std.len()]),
            _ => None,
        };

        for (i, (action, &w)) in batch.actions.iter().zip(&batch.weights).enumerate() {
            let row = out.row(i);
            let mut up = upstream.row_mut(i);
            let gw = if w < NEGLIGIBLE_WEIGHT { 0.0 } else { w };
            match &self.dist {
                Distribution::Categorical => {
                    let a = self.discrete_index(action)?;
                    let logp = log_softmax_view(row);
                    loss -= w * logp[a];
                    for (k, lp) in logp.iter().enumerate() {
                        let indicator = if k == a { 1.0 } else { 0.0 };
                        up[k] = gw * (lp.exp() - indicator) / n;
                    }
                }
                Distribution::Gaussian { log_std, .. } => {
                    let a = self.continuous_action(action)?;
                    let mut logp = 0.0;
                    for k in 0..a.len() {
                        let inv_var = (-2.0 * log_std[k]).exp();
                        let diff = a[k] - row[k];
                        logp += -0.5 * diff * diff * inv_var - log_std[k] - 0.5 * LN_2PI;
                        up[k] = -gw * diff * inv_var / n;
                        if let Some(g) = log_std_grad.as_mut() {
                            g[k] -= gw * (diff * diff * inv_var - 1.0) / n;
                        }
                    }
                    loss -= w * logp;
                }
            }
        }
        loss /= n;
        if !loss.is_finite() {
            return Err(Error::Divergence(format!("policy loss is {loss}")));
        }
        let net = self.net.backward_from(&trace, upstream.view())?;
        Ok((
            loss,
            PolicyGrads {
                net,
                log_std: log_std_grad,
            },
        ))
    }

    /// Applies one SGD-with-momentum step to the network and, if learnable, the log-std.
    pub fn sgd_momentum_step(&mut self, grads: &PolicyGrads, lr: f64, momentum: f64) -> Result<()> {
        if !grads.is_finite() {
            return Err(Error::Divergence("non-finite policy gradient".into()));
        }
        self.net.sgd_momentum_step(&grads.net, lr, momentum)?;
        if let (
            Distribution::Gaussian {
                log_std,
                learn_std: true,
                log_std_momentum,
            },
            Some(g),
        ) = (&mut self.dist, &grads.log_std)
        {
            for ((p, v), g) in log_std.iter_mut().zip(log_std_momentum.iter_mut()).zip(g) {
                *v = momentum * *v + g;
                *p -= lr * *v;
            }
        }
        Ok(())
    }

    fn log_prob_from_output(&self, out: &[f64], action: &Action) -> Result<f64> {
        match &self.dist {
            Distribution::Categorical => {
                let a = self.discrete_index(action)?;
                Ok(log_softmax(out)[a])
            }
            Distribution::Gaussian { log_std, .. } => {
                let a = self.continuous_action(action)?;
                Ok(a.iter()
                    .zip(out)
                    .zip(log_std)
                    .map(|((x, m), ls)| {
                        let z = (x - m) * (-ls).exp();
                        -0.5 * z * z - ls - 0.5 * LN_2PI
                    })
                    .sum())
            }
        }
    }

    fn discrete_index(&self, action: &Action) -> Result<usize> {
        match action {
            Action::Discrete(a) if *a < self.net.output_dim() => Ok(*a),
            Action::Discrete(a) => Err(Error::Shape(format!(
                "action {a} is outside a {}-way categorical",
                self.net.output_dim()
            ))),
            Action::Continuous(_) => Err(Error::Shape(
                "continuous action given to a categorical head".into(),
            )),
        }
    }

    fn continuous_action<'a>(&self, action: &'a Action) -> Result<&'a [f64]> {
        match action {
            Action::Continuous(a) if a.len() == self.net.output_dim() => Ok(a),
            Action::Continuous(a) => Err(Error::Shape(format!(
                "action has {} dimensions, policy expects {}",
                a.len(),
                self.net.output_dim()
            ))),
            Action::Discrete(_) => Err(Error::Shape(
                "discrete action given to a Gaussian head".into(),
            )),
        }
    }
}

/// Numerically stable `log softmax`.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

fn log_softmax_view(logits: ArrayView1<'_, f64>) -> Vec<f64> {
    match logits.as_slice() {
        Some(s) => log_softmax(s),
        None => log_softmax(&logits.to_vec()),
    }
}

/// Index of the first maximal entry.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

fn inverse_cdf(probs: &[f64], u: f64) -> usize {
    let mut cum = 0.0;
    for (i, p) in probs.iter().enumerate() {
        cum += p;
        if u < cum {
            return i;
        }
    }
    // Round-off left u above the final cumulative sum.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// Evaluates `log π(a|s)` row by row for a batch.
pub fn batch_log_prob(policy: &PolicyHead, states: ArrayView2<'_, f64>, actions: &[Action]) -> Result<Vec<f64>> {
    let out = policy.net.forward(states)?;
    actions
        .iter()
        .enumerate()
        .map(|(i, a)| policy.log_prob_from_output(&out.row(i).to_vec(), a))
        .collect()
}

#[derive(Serialize, Deserialize)]
struct PolicyJson {
    kind: HeadKind,
    std: Vec<f64>,
    #[serde(default)]
    learn_std: bool,
    #[serde(flatten)]
    net: MlpJson,
}

impl From<PolicyHead> for PolicyJson {
    fn from(p: PolicyHead) -> Self {
        let kind = p.kind();
        let std = p.std();
        let learn_std = matches!(p.dist, Distribution::Gaussian { learn_std: true, .. });
        PolicyJson {
            kind,
            std,
            learn_std,
            net: p.net.into(),
        }
    }
}

impl TryFrom<PolicyJson> for PolicyHead {
    type Error = Error;

    fn try_from(j: PolicyJson) -> Result<Self> {
        let net = Mlp::try_from(j.net)?;
        match j.kind {
            HeadKind::Categorical => PolicyHead::categorical(net),
            HeadKind::Gaussian => PolicyHead::gaussian(net, j.std, j.learn_std),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Single linear layer with zero weights and the given biases, so the
    /// output is the bias regardless of the state.
    fn constant_net(bias: Vec<f64>) -> Mlp {
        let k = bias.len();
        Mlp::from_parameters(vec![Array2::zeros((1, k))], vec![Array1::from(bias)]).unwrap()
    }

    #[test]
    fn gaussian_log_prob_at_mode() {
        let p = PolicyHead::gaussian(constant_net(vec![0.0]), vec![1.0], false).unwrap();
        let lp = p.log_prob(&[0.0], &Action::Continuous(vec![0.0])).unwrap();
        assert!((lp - (-0.918_938_533_204_672_7)).abs() < 1e-12);
    }

    #[test]
    fn categorical_uniform_log_prob() {
        let p = PolicyHead::categorical(constant_net(vec![0.0, 0.0])).unwrap();
        let lp = p.log_prob(&[0.0], &Action::Discrete(0)).unwrap();
        assert!((lp - 0.5_f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn softmax_shift_invariance() {
        let a = PolicyHead::categorical(constant_net(vec![0.3, -1.2, 2.0])).unwrap();
        let b = PolicyHead::categorical(constant_net(vec![100.3, 98.8, 102.0])).unwrap();
        for k in 0..3 {
            let la = a.log_prob(&[0.0], &Action::Discrete(k)).unwrap();
            let lb = b.log_prob(&[0.0], &Action::Discrete(k)).unwrap();
            assert!((la - lb).abs() < 1e-12);
        }
    }

    #[test]
    fn gaussian_dimension_mismatch() {
        let p = PolicyHead::gaussian(constant_net(vec![0.0, 0.0]), vec![1.0, 1.0], false).unwrap();
        let r = p.log_prob(&[0.0], &Action::Continuous(vec![0.0]));
        assert!(matches!(r, Err(Error::Shape(_))));
    }

    #[test]
    fn degenerate_gaussian_samples_mean() {
        let p = PolicyHead::gaussian(constant_net(vec![0.7, -0.1]), vec![1e-12; 2], false).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = p.sample(&[0.0], &mut rng).unwrap();
        let a = a.as_continuous().unwrap();
        assert!((a[0] - 0.7).abs() < 1e-9 && (a[1] + 0.1).abs() < 1e-9);
    }

    #[test]
    fn saturated_softmax_always_picks_first() {
        let p = PolicyHead::categorical(constant_net(vec![1000.0, 0.0])).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            assert_eq!(p.sample(&[0.0], &mut rng).unwrap(), Action::Discrete(0));
        }
    }

    #[test]
    fn uniform_categorical_frequencies() {
        let p = PolicyHead::categorical(constant_net(vec![0.0, 0.0])).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 100_000;
        let zeros = (0..n)
            .filter(|_| p.sample(&[0.0], &mut rng).unwrap() == Action::Discrete(0))
            .count();
        let freq = zeros as f64 / n as f64;
        assert!((freq - 0.5).abs() < 0.01, "{freq}");
    }

    #[test]
    fn sampling_is_reproducible() {
        let p = PolicyHead::gaussian(constant_net(vec![0.0]), vec![1.0], false).unwrap();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..5).map(|_| p.sample(&[0.0], &mut rng).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(draw(9), draw(9));
    }

    #[test]
    fn modes() {
        let g = PolicyHead::gaussian(constant_net(vec![0.3, -0.2]), vec![0.2; 2], false).unwrap();
        assert_eq!(g.mode(&[0.0]).unwrap(), Action::Continuous(vec![0.3, -0.2]));
        let c = PolicyHead::categorical(constant_net(vec![1.0, 3.0, 2.0])).unwrap();
        assert_eq!(c.mode(&[0.0]).unwrap(), Action::Discrete(1));
        let tie = PolicyHead::categorical(constant_net(vec![2.0, 2.0])).unwrap();
        assert_eq!(tie.mode(&[0.0]).unwrap(), Action::Discrete(0));
    }

    #[test]
    fn kind_round_trips() {
        let c = PolicyHead::categorical(constant_net(vec![0.0, 0.0])).unwrap();
        assert_eq!(c.kind(), HeadKind::Categorical);
        let g = PolicyHead::gaussian(constant_net(vec![0.0]), vec![0.5], true).unwrap();
        assert_eq!(g.kind(), HeadKind::Gaussian);
        for p in [c, g] {
            let json = serde_json::to_string(&p).unwrap();
            let back: PolicyHead = serde_json::from_str(&json).unwrap();
            assert_eq!(back.net(), p.net());
            assert_eq!(back.kind(), p.kind());
            for (a, b) in back.std().iter().zip(p.std()) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn unit_weights_equal_plain_nll() {
        let net = Mlp::new(&[2, 8, 3], 1, 1.0).unwrap();
        let p = PolicyHead::categorical(net).unwrap();
        let states = array![[0.1, 0.2], [-0.3, 0.9], [1.0, -1.0]];
        let actions = vec![Action::Discrete(0), Action::Discrete(2), Action::Discrete(1)];
        let batch = WeightedBatch::new(states.clone(), actions.clone(), vec![1.0; 3]).unwrap();
        let (loss, _) = p.weighted_nll_grad(&batch).unwrap();
        let nll = -batch_log_prob(&p, states.view(), &actions).unwrap().iter().sum::<f64>() / 3.0;
        assert!((loss - nll).abs() < 1e-14);
    }

    #[test]
    fn tiny_weights_give_tiny_gradients() {
        let net = Mlp::new(&[2, 8, 2], 1, 1.0).unwrap();
        let p = PolicyHead::gaussian(net, vec![0.2; 2], false).unwrap();
        let batch = WeightedBatch::new(
            array![[0.5, -0.5]],
            vec![Action::Continuous(vec![1.0, -1.0])],
            vec![1e-300],
        )
        .unwrap();
        let (_, g) = p.weighted_nll_grad(&batch).unwrap();
        assert!(g.net.max_abs() < 1e-290);
    }

    #[test]
    fn floored_rows_leave_no_subnormals() {
        let net = Mlp::new(&[2, 8, 2], 1, 1.0).unwrap();
        let p = PolicyHead::gaussian(net, vec![0.2; 2], true).unwrap();
        let states = array![[0.5, -0.5], [0.1, 0.3]];
        let grads = |far: f64| {
            let actions = vec![
                Action::Continuous(vec![1.0, -1.0]),
                Action::Continuous(vec![far, -far]),
            ];
            let batch = WeightedBatch::new(states.clone(), actions, vec![2.0, f64::MIN_POSITIVE]).unwrap();
            p.weighted_nll_grad(&batch).unwrap().1
        };
        let (a, b) = (grads(3.0), grads(-7.0));
        assert_eq!(a.net, b.net);
        assert_eq!(a.log_std, b.log_std);
        for (w, bias) in a.net.weights.iter().zip(&a.net.biases) {
            assert!(w.iter().chain(bias.iter()).all(|x| *x == 0.0 || x.is_normal()));
        }
    }

    #[test]
    fn doubling_weights_doubles_everything() {
        let net = Mlp::new(&[2, 6, 2], 4, 1.0).unwrap();
        let p = PolicyHead::gaussian(net, vec![0.3, 0.5], true).unwrap();
        let states = array![[0.5, -0.5], [0.1, 0.3]];
        let actions = vec![
            Action::Continuous(vec![1.0, -1.0]),
            Action::Continuous(vec![0.0, 0.2]),
        ];
        let b1 = WeightedBatch::new(states.clone(), actions.clone(), vec![0.7, 1.3]).unwrap();
        let b2 = WeightedBatch::new(states, actions, vec![1.4, 2.6]).unwrap();
        let (l1, g1) = p.weighted_nll_grad(&b1).unwrap();
        let (l2, g2) = p.weighted_nll_grad(&b2).unwrap();
        assert_eq!(l2, 2.0 * l1);
        let mut doubled = g1.net.clone();
        doubled.scale(2.0);
        assert_eq!(g2.net, doubled);
        let ls1 = g1.log_std.unwrap();
        let ls2 = g2.log_std.unwrap();
        for (a, b) in ls1.iter().zip(&ls2) {
            assert_eq!(*b, 2.0 * a);
        }
    }

    #[test]
    fn empty_batch_rejected() {
        let p = PolicyHead::categorical(constant_net(vec![0.0, 0.0])).unwrap();
        let batch = WeightedBatch::new(Array2::zeros((0, 1)), vec![], vec![]).unwrap();
        assert!(p.weighted_nll_grad(&batch).is_err());
    }

    #[test]
    fn construction_errors() {
        assert!(PolicyHead::categorical(constant_net(vec![0.0])).is_err());
        assert!(PolicyHead::gaussian(constant_net(vec![0.0]), vec![0.0], false).is_err());
        assert!(PolicyHead::gaussian(constant_net(vec![0.0]), vec![1.0, 1.0], false).is_err());
    }
}
