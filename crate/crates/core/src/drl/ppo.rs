use super::env::{observation_len, DrlEnv, ObsVariant};
use super::net::{masked_argmax, masked_distribution, masked_log_softmax, Activation, BatchOutput, PolicyNet};
use super::{DrlError, DrlPolicy, PolicyMode};
use crate::model::ProcessModel;
use crate::sim::run_episode;
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::sync::Arc;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub clip: f64,
    /// Decision steps collected per update.
    pub rollout: usize,
    pub minibatch: usize,
    pub learning_rate: f64,
    /// Decay the learning rate linearly to zero over `max_steps`.
    pub lr_decay: bool,
    pub gamma: f64,
    pub max_steps: u64,
    pub gae_lambda: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub epochs: usize,
    /// Global gradient-norm limit; 0 disables clipping.
    pub max_grad_norm: f64,
    pub normalize_advantage: bool,
    pub adam_eps: f64,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub variant: ObsVariant,
    pub horizon: f64,
    /// Added to the reward of every postpone action.
    pub postpone_penalty: f64,
    /// Decision steps between greedy evaluations.
    pub eval_interval: u64,
    pub eval_episodes: usize,
    /// Return the best evaluated parameters instead of the last ones.
    pub checkpoint_best: bool,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self::paper()
    }
}

impl PpoConfig {
    pub fn paper() -> Self {
        PpoConfig {
            clip: 0.2,
            rollout: 25_600,
            minibatch: 256,
            learning_rate: 3e-5,
            lr_decay: true,
            gamma: 0.999,
            max_steps: 20_000_000,
            gae_lambda: 0.95,
            entropy_coef: 0.0,
            value_coef: 0.5,
            epochs: 10,
            max_grad_norm: 0.5,
            normalize_advantage: true,
            adam_eps: 1e-5,
            hidden: vec![128, 128],
            activation: Activation::Tanh,
            variant: ObsVariant::Plain,
            horizon: crate::sim::DEFAULT_HORIZON,
            postpone_penalty: 0.0,
            eval_interval: 256_000,
            eval_episodes: 10,
            checkpoint_best: true,
        }
    }

    pub fn desk() -> Self {
        PpoConfig { max_steps: 2_000_000, eval_interval: 51_200, ..Self::paper() }
    }

    pub fn validate(&self) -> Result<(), DrlError> {
        let bad = |m: &str| Err(DrlError::Config(m.to_string()));
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return bad("clip must lie in (0, 1)");
        }
        if self.rollout == 0 || self.minibatch == 0 || self.epochs == 0 || self.max_steps == 0 {
            return bad("rollout, minibatch, epochs and max_steps must be positive");
        }
        if self.learning_rate.is_nan() || self.learning_rate < 0.0 || !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("learning rate must be non-negative and gamma in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gae_lambda must lie in [0, 1]");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden layers must be non-empty");
        }
        if self.horizon.is_nan() || self.horizon <= 0.0 || !self.postpone_penalty.is_finite() {
            return bad("horizon must be positive and the penalty finite");
        }
        Ok(())
    }
}

/// One completed training episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub episode: usize,
    /// Decision steps taken since training started, at the episode's end.
    pub steps: u64,
    pub total_reward: f64,
    pub mean_cycle_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalPoint {
    pub steps: u64,
    pub mean_cycle_time: f64,
    /// Best evaluation so far.
    pub incumbent: f64,
}

/// Summary of one parameter update.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateInfo {
    pub update: usize,
    pub steps: u64,
    pub learning_rate: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub last_eval: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best evaluated network, or the final one without checkpointing.
    pub net: PolicyNet,
    pub final_net: PolicyNet,
    pub log: Vec<EpisodeLog>,
    pub evals: Vec<EvalPoint>,
    pub steps: u64,
}

const EVAL_SEED_BASE: u64 = 1 << 40;

fn episode_seed(seed: u64, episode: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(episode)
}

struct Rollout {
    obs_dim: usize,
    n_actions: usize,
    obs: Vec<f64>,
    masks: Vec<bool>,
    actions: Vec<usize>,
    log_probs: Vec<f64>,
    rewards: Vec<f64>,
    values: Vec<f64>,
    dones: Vec<bool>,
    advantages: Vec<f64>,
    returns: Vec<f64>,
}

impl Rollout {
    fn new(obs_dim: usize, n_actions: usize, cap: usize) -> Self {
        Rollout {
            obs_dim,
            n_actions,
            obs: Vec::with_capacity(cap * obs_dim),
            masks: Vec::with_capacity(cap * n_actions),
            actions: Vec::with_capacity(cap),
            log_probs: Vec::with_capacity(cap),
            rewards: Vec::with_capacity(cap),
            values: Vec::with_capacity(cap),
            dones: Vec::with_capacity(cap),
            advantages: Vec::new(),
            returns: Vec::new(),
        }
    }

    fn len(&self) -> usize {
        self.actions.len()
    }

    fn clear(&mut self) {
        self.obs.clear();
        self.masks.clear();
        self.actions.clear();
        self.log_probs.clear();
        self.rewards.clear();
        self.values.clear();
        self.dones.clear();
    }
}

/// Generalized advantage estimates and returns. `dones[t]` marks the last
/// step of an episode, after which nothing is bootstrapped.
pub fn gae(rewards: &[f64], values: &[f64], dones: &[bool], last_value: f64, gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut acc = 0.0;
    for t in (0..n).rev() {
        let next_value = if t + 1 < n { values[t + 1] } else { last_value };
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        acc = delta + gamma * lambda * live * acc;
        adv[t] = acc;
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, ret)
}

/// Mean cycle time of the greedy policy over the fixed evaluation seeds.
fn evaluate_greedy(model: &Arc<ProcessModel>, net: &PolicyNet, cfg: &PpoConfig) -> Result<f64, DrlError> {
    let runs: Result<Vec<f64>, DrlError> = (0..cfg.eval_episodes as u64)
        .into_par_iter()
        .map(|i| {
            let mut p = DrlPolicy::new(net.clone(), model, cfg.variant, PolicyMode::Greedy)?;
            Ok(run_episode(model, &mut p, cfg.horizon, EVAL_SEED_BASE + i)?.mean_cycle_time)
        })
        .collect();
    let runs = runs?;
    Ok(runs.iter().sum::<f64>() / runs.len().max(1) as f64)
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    eps: f64,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;

    fn new(n: usize, eps: f64) -> Self {
        Adam { m: vec![0.0; n], v: vec![0.0; n], t: 0, eps }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * grad[i];
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

#[derive(Default, Clone, Copy)]
struct LossParts {
    policy: f64,
    value: f64,
    entropy: f64,
}

/// Samples per gradient chunk; chunks are summed in a fixed order so the
/// result does not depend on the number of threads.
const CHUNK: usize = 64;

/// Gradient of the PPO loss over the given rollout indices, averaged over
/// `batch` samples.
fn chunk_gradient(net: &PolicyNet, buf: &Rollout, idx: &[usize], adv: &[f64], batch: usize, cfg: &PpoConfig) -> (Vec<f64>, LossParts) {
    let d = buf.obs_dim;
    let na = buf.n_actions;
    let mut obs = Vec::with_capacity(idx.len() * d);
    for &i in idx {
        obs.extend_from_slice(&buf.obs[i * d..(i + 1) * d]);
    }
    let out: BatchOutput = net.forward_batch(&obs, idx.len());
    let scale = 1.0 / batch as f64;
    let mut d_logits = DMatrix::zeros(na, idx.len());
    let mut d_values = vec![0.0; idx.len()];
    let mut parts = LossParts::default();
    for (j, &i) in idx.iter().enumerate() {
        let mask = &buf.masks[i * na..(i + 1) * na];
        let logits: Vec<f64> = out.logits.column(j).iter().copied().collect();
        let logp = masked_log_softmax(&logits, mask);
        let p = masked_distribution(&logits, mask);
        let a = buf.actions[i];
        let ratio = (logp[a] - buf.log_probs[i]).exp();
        let clipped = ratio.clamp(1.0 - cfg.clip, 1.0 + cfg.clip);
        let adv_j = adv[j];
        let (s1, s2) = (ratio * adv_j, clipped * adv_j);
        parts.policy -= s1.min(s2) * scale;
        let entropy: f64 = -p.iter().zip(&logp).filter(|(q, _)| **q > 0.0).map(|(q, l)| q * l).sum::<f64>();
        parts.entropy += entropy * scale;
        let v = out.values[j];
        let err = v - buf.returns[i];
        parts.value += err * err * scale;
        d_values[j] = cfg.value_coef * 2.0 * err * scale;
        let through_ratio = s1 <= s2;
        for k in 0..na {
            if !mask[k] {
                continue;
            }
            let mut g = 0.0;
            if through_ratio {
                g -= adv_j * ratio * (f64::from(k == a) - p[k]) * scale;
            }
            if cfg.entropy_coef != 0.0 && p[k] > 0.0 {
                // dH/dz_k = -p_k (log p_k + H)
                g += cfg.entropy_coef * p[k] * (logp[k] + entropy) * scale;
            }
            d_logits[(k, j)] = g;
        }
    }
    let mut grad = vec![0.0; net.n_params()];
    net.backward_batch(&out, d_logits, &d_values, &mut grad);
    (grad, parts)
}

pub fn ppo_train(model: &Arc<ProcessModel>, cfg: &PpoConfig, seed: u64) -> Result<TrainOutcome, DrlError> {
    ppo_train_observed(model, cfg, seed, &mut |_| {})
}

/// Maskable PPO. `observer` sees a summary after every update.
pub fn ppo_train_observed(
    model: &Arc<ProcessModel>,
    cfg: &PpoConfig,
    seed: u64,
    observer: &mut dyn FnMut(&UpdateInfo),
) -> Result<TrainOutcome, DrlError> {
    cfg.validate()?;
    let obs_dim = observation_len(model, cfg.variant);
    let mut episode: u64 = 0;
    let mut env = DrlEnv::new(Arc::clone(model), cfg.variant, cfg.horizon, cfg.postpone_penalty, episode_seed(seed, 0))?;
    let n_actions = env.actions().len();
    let mut net = PolicyNet::new(obs_dim, n_actions, &cfg.hidden, cfg.activation, seed);
    let mut adam = Adam::new(net.n_params(), cfg.adam_eps);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(7);

    let mut buf = Rollout::new(obs_dim, n_actions, cfg.rollout);
    let mut log = Vec::new();
    let mut evals: Vec<EvalPoint> = Vec::new();
    let mut best: Option<(f64, PolicyNet)> = None;
    let mut steps: u64 = 0;
    let mut next_eval = cfg.eval_interval;
    let mut update = 0usize;
    let (mut obs, mut mask) = (Vec::with_capacity(obs_dim), Vec::with_capacity(n_actions));

    while env.is_done() {
        episode += 1;
        env.reset(episode_seed(seed, episode))?;
    }

    let run_eval =
        |net: &PolicyNet, steps: u64, evals: &mut Vec<EvalPoint>, best: &mut Option<(f64, PolicyNet)>| -> Result<f64, DrlError> {
            let ct = evaluate_greedy(model, net, cfg)?;
            if best.as_ref().is_none_or(|(b, _)| ct < *b) {
                *best = Some((ct, net.clone()));
            }
            let incumbent = best.as_ref().map_or(ct, |b| b.0);
            evals.push(EvalPoint { steps, mean_cycle_time: ct, incumbent });
            Ok(ct)
        };

    while steps < cfg.max_steps {
        let progress_left = 1.0 - steps as f64 / cfg.max_steps as f64;
        let lr = if cfg.lr_decay { cfg.learning_rate * progress_left } else { cfg.learning_rate };
        buf.clear();
        let target = cfg.rollout.min((cfg.max_steps - steps) as usize);
        while buf.len() < target {
            obs.clear();
            mask.clear();
            env.observe_into(&mut obs, &mut mask);
            let (logits, value) = net.logits_and_value(&obs);
            let p = masked_distribution(&logits, &mask);
            let u: f64 = rng.random();
            let mut action = masked_argmax(&p, &mask);
            let mut acc = 0.0;
            for (k, q) in p.iter().enumerate() {
                acc += q;
                if mask[k] && u < acc {
                    action = k;
                    break;
                }
            }
            let res = env.step(action)?;
            buf.obs.extend_from_slice(&obs);
            buf.masks.extend_from_slice(&mask);
            buf.actions.push(action);
            buf.log_probs.push(p[action].ln());
            buf.rewards.push(res.reward);
            buf.values.push(value);
            buf.dones.push(res.done);
            steps += 1;
            if res.done {
                let stats = env.stats();
                log.push(EpisodeLog {
                    episode: log.len(),
                    steps,
                    total_reward: env.episode_reward(),
                    mean_cycle_time: stats.mean_cycle_time,
                });
                loop {
                    episode += 1;
                    env.reset(episode_seed(seed, episode))?;
                    if !env.is_done() {
                        break;
                    }
                }
            }
        }
        let last_value = if buf.dones.last() == Some(&true) { 0.0 } else { net.value(&env.observation()) };
        let (adv, ret) = gae(&buf.rewards, &buf.values, &buf.dones, last_value, cfg.gamma, cfg.gae_lambda);
        buf.advantages = adv;
        buf.returns = ret;

        let mut indices: Vec<usize> = (0..buf.len()).collect();
        let mut sums = LossParts::default();
        let mut n_batches = 0usize;
        for epoch in 0..cfg.epochs {
            indices.shuffle(&mut rng);
            for mb in indices.chunks(cfg.minibatch) {
                let mut adv: Vec<f64> = mb.iter().map(|&i| buf.advantages[i]).collect();
                if cfg.normalize_advantage && adv.len() > 1 {
                    let m = adv.iter().sum::<f64>() / adv.len() as f64;
                    let sd = (adv.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (adv.len() - 1) as f64).sqrt();
                    for a in &mut adv {
                        *a = (*a - m) / (sd + 1e-8);
                    }
                }
                let parts: Vec<(Vec<f64>, LossParts)> = mb
                    .par_chunks(CHUNK)
                    .zip(adv.par_chunks(CHUNK))
                    .map(|(idx, a)| chunk_gradient(&net, &buf, idx, a, mb.len(), cfg))
                    .collect();
                let mut grad = vec![0.0; net.n_params()];
                let mut loss = LossParts::default();
                for (g, l) in parts {
                    for (acc, x) in grad.iter_mut().zip(g) {
                        *acc += x;
                    }
                    loss.policy += l.policy;
                    loss.value += l.value;
                    loss.entropy += l.entropy;
                }
                let total = loss.policy + cfg.value_coef * loss.value - cfg.entropy_coef * loss.entropy;
                if !total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                    return Err(DrlError::NonFiniteLoss(format!(
                        "update {update}, epoch {epoch}: policy loss {}, value loss {}, entropy {}",
                        loss.policy, loss.value, loss.entropy
                    )));
                }
                if cfg.max_grad_norm > 0.0 {
                    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                    if norm > cfg.max_grad_norm {
                        let s = cfg.max_grad_norm / (norm + 1e-6);
                        grad.iter_mut().for_each(|g| *g *= s);
                    }
                }
                adam.step(&mut net.params, &grad, lr);
                sums.policy += loss.policy;
                sums.value += loss.value;
                sums.entropy += loss.entropy;
                n_batches += 1;
            }
        }
        update += 1;
        let mut last_eval = None;
        if cfg.eval_interval > 0 && cfg.eval_episodes > 0 && (steps >= next_eval || steps >= cfg.max_steps) {
            last_eval = Some(run_eval(&net, steps, &mut evals, &mut best)?);
            while next_eval <= steps {
                next_eval += cfg.eval_interval;
            }
        }
        let nb = n_batches.max(1) as f64;
        observer(&UpdateInfo {
            update,
            steps,
            learning_rate: lr,
            policy_loss: sums.policy / nb,
            value_loss: sums.value / nb,
            entropy: sums.entropy / nb,
            last_eval,
        });
    }

    let final_net = net;
    let chosen = match best {
        Some((_, b)) if cfg.checkpoint_best => b,
        _ => final_net.clone(),
    };
    Ok(TrainOutcome { net: chosen, final_net, log, evals, steps })
}

/// Writes `episode,steps,total_reward,mean_cycle_time` rows.
pub fn write_training_log<W: Write>(out: W, log: &[EpisodeLog]) -> Result<(), DrlError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["episode", "steps", "total_reward", "mean_cycle_time"])?;
    for e in log {
        w.write_record([e.episode.to_string(), e.steps.to_string(), e.total_reward.to_string(), e.mean_cycle_time.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
