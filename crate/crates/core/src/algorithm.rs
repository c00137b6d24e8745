//! The training loop.
//!
//! One iteration: gather whole episodes with the current policy until at least
//! `samples_per_iter` transitions are in hand, push them into the replay
//! buffer, recompute return targets with the previous value function, regress
//! the value function onto them, recompute the weights with the new value
//! function, then regress the policy onto buffer actions weighted by them.

use std::io::Write;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::envs::{run_episode, Env, Greedy, Sampled};
use crate::mlp::{Mlp, DEFAULT_HIDDEN};
use crate::policy::{ActionSpace, PolicyHead, WeightedBatch, DEFAULT_ACTION_STD};
use crate::replay::{Phase, ReplayBuffer, DEFAULT_CAPACITY};
use crate::returns::{ReturnConfig, ReturnEstimator, Scaled, Weighting};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Advantage weights, TD(λ) targets, replay.
    #[default]
    Awr,
    /// `exp(R / β)` weights on Monte Carlo returns of the latest batch only.
    Rwr,
    /// `exp(R / β)` weights with replay retained.
    AwrNoBaseline,
    /// Advantage weights, but the buffer only holds the latest batch.
    AwrOnPolicy,
    /// Advantage weights on Monte Carlo returns.
    AwrMonteCarlo,
    /// Advantage weights on a fixed dataset.
    OfflineAwr,
    /// Unit weights on a fixed dataset: behavioral cloning.
    OfflineBc,
}

impl Mode {
    pub fn is_offline(self) -> bool {
        matches!(self, Mode::OfflineAwr | Mode::OfflineBc)
    }

    pub fn clears_buffer(self) -> bool {
        matches!(self, Mode::Rwr | Mode::AwrOnPolicy)
    }

    pub fn default_estimator(self) -> ReturnEstimator {
        match self {
            Mode::Rwr | Mode::AwrMonteCarlo => ReturnEstimator::MonteCarlo,
            _ => ReturnEstimator::TdLambda,
        }
    }

    pub fn default_weighting(self) -> Weighting {
        match self {
            Mode::Rwr | Mode::AwrNoBaseline => Weighting::Return,
            Mode::OfflineBc => Weighting::Uniform,
            _ => Weighting::Advantage,
        }
    }
}

/// Which value function the advantages subtract.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    /// The value function fitted in this iteration.
    #[default]
    Current,
    /// The value function from before this iteration's fit, which also
    /// produced the return targets.
    Previous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AwrConfig {
    pub returns: ReturnConfig,
    pub samples_per_iter: usize,
    pub buffer_capacity: usize,
    pub minibatch: usize,
    pub value_steps: usize,
    pub policy_steps: usize,
    pub lr_value: f64,
    pub lr_policy: f64,
    pub momentum: f64,
    pub max_iters: usize,
    /// Stop collecting once this many environment steps have been taken.
    pub max_env_steps: Option<u64>,
    pub mode: Mode,
    /// Overrides the return estimator implied by `mode`.
    pub estimator: Option<ReturnEstimator>,
    /// Overrides the weighting implied by `mode`.
    pub weighting: Option<Weighting>,
    pub advantage_baseline: Baseline,
    pub eval_episodes: usize,
    pub seed: u64,
    pub policy_hidden: Vec<usize>,
    pub value_hidden: Vec<usize>,
    /// Initial standard deviation of a Gaussian policy.
    pub action_std: f64,
    pub learn_std: bool,
    /// Scale of the initial output layer weights.
    pub policy_init_scale: f64,
    pub value_init_scale: f64,
    /// Fixed factor on the value network output. The network regresses onto
    /// `R / value_scale`, which keeps large returns from blowing up SGD.
    pub value_scale: f64,
}

impl Default for AwrConfig {
    fn default() -> Self {
        Self {
            returns: ReturnConfig::default(),
            samples_per_iter: 2000,
            buffer_capacity: DEFAULT_CAPACITY,
            minibatch: 256,
            value_steps: 200,
            policy_steps: 1000,
            lr_value: 1e-4,
            lr_policy: 5e-5,
            momentum: 0.9,
            max_iters: 100,
            max_env_steps: None,
            mode: Mode::Awr,
            estimator: None,
            weighting: None,
            advantage_baseline: Baseline::Current,
            eval_episodes: 10,
            seed: 0,
            policy_hidden: DEFAULT_HIDDEN.to_vec(),
            value_hidden: DEFAULT_HIDDEN.to_vec(),
            action_std: DEFAULT_ACTION_STD,
            learn_std: false,
            policy_init_scale: 1e-3,
            value_init_scale: 1.0,
            value_scale: 1.0,
        }
    }
}

impl AwrConfig {
    pub fn validate(&self) -> Result<()> {
        self.returns.validate()?;
        let positive = [
            ("samples_per_iter", self.samples_per_iter),
            ("buffer_capacity", self.buffer_capacity),
            ("minibatch", self.minibatch),
            ("eval_episodes", self.eval_episodes),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        for (name, lr) in [("lr_value", self.lr_value), ("lr_policy", self.lr_policy)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {lr}")));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if self.policy_hidden.contains(&0) || self.value_hidden.contains(&0) {
            return Err(Error::Config("hidden layers must have at least one unit".into()));
        }
        if !(self.value_scale > 0.0 && self.value_scale.is_finite()) {
            return Err(Error::Config(format!("value_scale must be positive, got {}", self.value_scale)));
        }
        if !(self.action_std > 0.0) {
            return Err(Error::Config(format!("action_std must be positive, got {}", self.action_std)));
        }
        Ok(())
    }

    pub fn estimator(&self) -> ReturnEstimator {
        self.estimator.unwrap_or(self.mode.default_estimator())
    }

    pub fn weighting(&self) -> Weighting {
        self.weighting.unwrap_or(self.mode.default_weighting())
    }
}

/// One row of the learning curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub iter: usize,
    pub env_steps: u64,
    pub eval_return_mean: f64,
    pub eval_return_std: f64,
    pub value_loss: f64,
    pub policy_loss: f64,
    pub mean_weight: f64,
    pub clip_fraction: f64,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub records: Vec<TrainRecord>,
    pub policy: PolicyHead,
    pub value: Mlp,
}

/// Writes records as CSV with a header row.
pub fn write_curve<W: Write>(records: &[TrainRecord], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in records {
        out.serialize(r).map_err(|e| Error::Validation(e.to_string()))?;
    }
    out.flush().map_err(|e| Error::io("<curve>", e))
}

impl TrainResult {
    pub fn final_return(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.eval_return_mean)
    }

    pub fn curve_csv(&self) -> Result<String> {
        let mut buf = Vec::new();
        write_curve(&self.records, &mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is UTF-8"))
    }
}

/// What the observer sees after each iteration.
pub struct Progress<'a> {
    pub record: &'a TrainRecord,
    pub policy: &'a PolicyHead,
    pub value: &'a Mlp,
    /// Transitions in the replay buffer after this iteration.
    pub buffer_len: usize,
}

pub type Observer<'a> = dyn FnMut(Progress<'_>) -> Result<()> + 'a;

/// Fits `value` to the cached return targets.
///
/// Runs `cfg.value_steps` minibatch steps on the mean squared error between
/// `cfg.value_scale · value(s)` and the target, and returns the loss of the
/// last minibatch (before its update) in return units, or 0 if no step ran.
pub fn value_update<R: Rng>(buffer: &ReplayBuffer, value: &mut Mlp, cfg: &AwrConfig, rng: &mut R) -> Result<f64> {
    let mut loss = 0.0;
    for step in 0..cfg.value_steps {
        let refs = buffer.sample_minibatch(cfg.minibatch, rng)?;
        let x = buffer.states(&refs);
        let trace = value.forward_trace(x.view())?;
        let n = refs.len() as f64;
        let scale = cfg.value_scale;
        let mut upstream = Array2::zeros((refs.len(), 1));
        loss = 0.0;
        for (i, &r) in refs.iter().enumerate() {
            let diff = trace.output()[[i, 0]] - buffer.cached_return(r) / scale;
            loss += diff * diff / n;
            upstream[[i, 0]] = 2.0 * diff / n;
        }
        loss *= scale * scale;
        if !loss.is_finite() {
            return Err(Error::Divergence(format!("value loss {loss} at value step {step}")));
        }
        let grads = value.backward_from(&trace, upstream.view())?;
        value
            .sgd_momentum_step(&grads, cfg.lr_value, cfg.momentum)
            .map_err(|e| Error::Divergence(format!("value step {step}: {e}")))?;
    }
    Ok(loss)
}

/// Weighted maximum likelihood on buffer actions with the cached weights.
///
/// Runs `cfg.policy_steps` minibatch steps and returns the last minibatch loss.
pub fn policy_update<R: Rng>(
    buffer: &ReplayBuffer,
    policy: &mut PolicyHead,
    cfg: &AwrConfig,
    rng: &mut R,
) -> Result<f64> {
    let mut loss = 0.0;
    for step in 0..cfg.policy_steps {
        let refs = buffer.sample_minibatch(cfg.minibatch, rng)?;
        let weights = refs.iter().map(|&r| buffer.cached_weight(r)).collect();
        let batch = WeightedBatch::new(buffer.states(&refs), buffer.actions(&refs), weights)?;
        let (l, grads) = policy.weighted_nll_grad(&batch)?;
        loss = l;
        if !loss.is_finite() || !grads.is_finite() {
            return Err(Error::Divergence(format!("policy loss {loss} at policy step {step}")));
        }
        policy
            .sgd_momentum_step(&grads, cfg.lr_policy, cfg.momentum)
            .map_err(|e| Error::Divergence(format!("policy step {step}: {e}")))?;
    }
    Ok(loss)
}

/// Mean and population standard deviation of undiscounted episode returns.
pub fn evaluate<R: Rng>(
    env: &mut dyn Env,
    policy: &PolicyHead,
    episodes: usize,
    rng: &mut R,
    deterministic: bool,
) -> Result<(f64, f64)> {
    if episodes == 0 {
        return Err(Error::Config("evaluation needs at least one episode".into()));
    }
    let mut returns = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let t = if deterministic {
            run_episode(env, &Greedy(policy), rng)?
        } else {
            run_episode(env, &Sampled(policy), rng)?
        };
        returns.push(t.total_reward());
    }
    let n = episodes as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

/// Parameters, buffer and bookkeeping shared by the online and offline loops.
struct Learner {
    cfg: AwrConfig,
    policy: PolicyHead,
    value: Mlp,
    rng: ChaCha8Rng,
    records: Vec<TrainRecord>,
}

impl Learner {
    fn new(cfg: &AwrConfig, obs_dim: usize, space: &ActionSpace) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let policy = PolicyHead::for_space(
            obs_dim,
            space,
            &cfg.policy_hidden,
            rng.random(),
            cfg.policy_init_scale,
            cfg.action_std,
            cfg.learn_std,
        )?;
        let value = Mlp::with_hidden(obs_dim, &cfg.value_hidden, 1, rng.random(), cfg.value_init_scale)?;
        Ok(Self {
            cfg: cfg.clone(),
            policy,
            value,
            rng,
            records: Vec::new(),
        })
    }

    /// Both regressions on the current buffer.
    fn update(&mut self, buffer: &mut ReplayBuffer, iteration: usize) -> Result<(f64, f64)> {
        let cfg = &self.cfg;
        let context = |e: Error| match e {
            Error::Divergence(m) => Error::Divergence(format!("iteration {iteration}: {m}")),
            other => other,
        };
        let value = Scaled {
            net: &self.value,
            scale: cfg.value_scale,
        };
        buffer.annotate(&value, &cfg.returns, Phase::Returns(cfg.estimator()));
        let previous = (cfg.advantage_baseline == Baseline::Previous).then(|| self.value.clone());
        let value_loss = value_update(buffer, &mut self.value, cfg, &mut self.rng).map_err(context)?;
        let value = Scaled {
            net: previous.as_ref().unwrap_or(&self.value),
            scale: cfg.value_scale,
        };
        buffer.annotate(&value, &cfg.returns, Phase::Weights(cfg.weighting()));
        let policy_loss = policy_update(buffer, &mut self.policy, cfg, &mut self.rng).map_err(context)?;
        Ok((value_loss, policy_loss))
    }

    fn record(&mut self, record: TrainRecord, buffer_len: usize, observer: &mut Observer<'_>) -> Result<()> {
        observer(Progress {
            record: &record,
            policy: &self.policy,
            value: &self.value,
            buffer_len,
        })?;
        self.records.push(record);
        Ok(())
    }

    fn eval(&mut self, env: Option<&mut (dyn Env + '_)>) -> Result<(f64, f64)> {
        match env {
            Some(env) => evaluate(env, &self.policy, self.cfg.eval_episodes, &mut self.rng, true),
            None => Ok((f64::NAN, f64::NAN)),
        }
    }

    fn finish(self) -> TrainResult {
        TrainResult {
            records: self.records,
            policy: self.policy,
            value: self.value,
        }
    }
}

pub fn awr_train(cfg: &AwrConfig, env: &mut dyn Env) -> Result<TrainResult> {
    awr_train_with(cfg, env, &mut |_| Ok(()))
}

/// [`awr_train`] with a callback after every iteration. An error from the
/// callback stops training.
pub fn awr_train_with(cfg: &AwrConfig, env: &mut dyn Env, observer: &mut Observer<'_>) -> Result<TrainResult> {
    if cfg.mode.is_offline() {
        return Err(Error::Contract(format!(
            "mode {:?} trains from a dataset, not an environment",
            cfg.mode
        )));
    }
    if cfg.buffer_capacity < env.max_episode_steps() {
        return Err(Error::Config(format!(
            "buffer_capacity {} cannot hold a full {}-step episode",
            cfg.buffer_capacity,
            env.max_episode_steps()
        )));
    }
    let mut learner = Learner::new(cfg, env.observation_dim(), &env.action_space())?;
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity)?;

    let mut env_steps = 0u64;
    for iteration in 1..=cfg.max_iters {
        if cfg.max_env_steps.is_some_and(|cap| env_steps >= cap) {
            break;
        }
        if cfg.mode.clears_buffer() {
            buffer.clear();
        }
        let mut collected = 0;
        while collected < cfg.samples_per_iter {
            let t = run_episode(env, &Sampled(&learner.policy), &mut learner.rng)?;
            collected += t.len();
            buffer.push_trajectory(t, iteration)?;
        }
        env_steps += collected as u64;

        let (value_loss, policy_loss) = learner.update(&mut buffer, iteration)?;
        let stats = buffer.weight_stats(cfg.returns.omega_max);
        let (mean, std) = learner.eval(Some(&mut *env))?;
        learner.record(
            TrainRecord {
                iter: iteration,
                env_steps,
                eval_return_mean: mean,
                eval_return_std: std,
                value_loss,
                policy_loss,
                mean_weight: stats.mean,
                clip_fraction: stats.clip_fraction,
            },
            buffer.len(),
            observer,
        )?;
    }
    Ok(learner.finish())
}

/// Trains on a fixed buffer without collecting anything.
///
/// `space` describes the dataset's actions. `eval_env`, when given, is used
/// only for the deterministic evaluation rollouts that fill the curve; without
/// it the evaluation columns are NaN.
pub fn offline_train(
    dataset: ReplayBuffer,
    cfg: &AwrConfig,
    space: &ActionSpace,
    eval_env: Option<&mut dyn Env>,
) -> Result<TrainResult> {
    offline_train_with(dataset, cfg, space, eval_env, &mut |_| Ok(()))
}

pub fn offline_train_with(
    mut dataset: ReplayBuffer,
    cfg: &AwrConfig,
    space: &ActionSpace,
    mut eval_env: Option<&mut dyn Env>,
    observer: &mut Observer<'_>,
) -> Result<TrainResult> {
    if !cfg.mode.is_offline() {
        return Err(Error::Contract(format!(
            "mode {:?} collects experience and cannot run on a static dataset",
            cfg.mode
        )));
    }
    let obs_dim = dataset
        .trajectories()
        .next()
        .map(|t| t.transitions()[0].state.len())
        .ok_or_else(|| Error::Validation("offline training needs a nonempty dataset".into()))?;
    if let Some(env) = eval_env.as_deref() {
        if env.observation_dim() != obs_dim || &env.action_space() != space {
            return Err(Error::Shape(format!(
                "evaluation environment {} does not match the dataset",
                env.name()
            )));
        }
    }
    let mut learner = Learner::new(cfg, obs_dim, space)?;
    for iteration in 1..=cfg.max_iters {
        let (value_loss, policy_loss) = learner.update(&mut dataset, iteration)?;
        let stats = dataset.weight_stats(cfg.returns.omega_max);
        let (mean, std) = learner.eval(eval_env.as_deref_mut())?;
        learner.record(
            TrainRecord {
                iter: iteration,
                env_steps: 0,
                eval_return_mean: mean,
                eval_return_std: std,
                value_loss,
                policy_loss,
                mean_weight: stats.mean,
                clip_fraction: stats.clip_fraction,
            },
            dataset.len(),
            observer,
        )?;
    }
    Ok(learner.finish())
}
