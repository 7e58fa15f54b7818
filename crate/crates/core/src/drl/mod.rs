//! Resource allocation as a decision process, and a maskable PPO trainer.

mod checkpoint;
mod env;
mod net;
mod ppo;

pub use checkpoint::{model_fingerprint, Checkpoint, CHECKPOINT_VERSION};
pub use env::{encode_state, observation_len, ActionSpace, DrlEnv, ObsVariant, StepResult};
pub use net::{masked_argmax, masked_distribution, masked_log_softmax, Activation, BatchOutput, PolicyNet};
pub use ppo::{gae, ppo_train, ppo_train_observed, write_training_log, EpisodeLog, EvalPoint, PpoConfig, TrainOutcome, UpdateInfo};

use crate::model::ProcessModel;
use crate::policies::{Decision, DecisionContext, Policy};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, thiserror::Error)]
pub enum DrlError {
    #[error("action {0} is not feasible in this state")]
    InfeasibleAction(usize),
    #[error("the episode has ended; reset the environment")]
    EpisodeOver,
    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Sim(#[from] crate::sim::SimError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PolicyMode {
    /// Most probable feasible action.
    #[default]
    Greedy,
    /// Draw from the masked distribution using the engine's policy stream.
    Sample,
}

/// A trained network used as an allocation policy.
#[derive(Debug, Clone)]
pub struct DrlPolicy {
    net: PolicyNet,
    actions: ActionSpace,
    variant: ObsVariant,
    mode: PolicyMode,
    obs: Vec<f64>,
    mask: Vec<bool>,
}

impl DrlPolicy {
    pub fn new(net: PolicyNet, model: &ProcessModel, variant: ObsVariant, mode: PolicyMode) -> Result<Self, DrlError> {
        let actions = ActionSpace::new(model);
        if net.obs_dim() != observation_len(model, variant) || net.n_actions() != actions.len() {
            return Err(DrlError::Checkpoint("network shape does not match the model".into()));
        }
        Ok(DrlPolicy { net, actions, variant, mode, obs: Vec::new(), mask: Vec::new() })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint, model: &ProcessModel, mode: PolicyMode) -> Result<Self, DrlError> {
        Self::new(ckpt.network_for(model)?, model, ckpt.variant, mode)
    }

    pub fn net(&self) -> &PolicyNet {
        &self.net
    }

    /// Action index chosen in the given state.
    pub fn choose(&mut self, ctx: &DecisionContext<'_>, rng: &mut ChaCha8Rng) -> usize {
        self.obs.clear();
        self.mask.clear();
        env::encode_into(ctx.state, ctx.model, self.variant, &mut self.obs);
        self.actions.mask_into(ctx.state, &mut self.mask);
        let (logits, _) = self.net.logits_and_value(&self.obs);
        match self.mode {
            PolicyMode::Greedy => masked_argmax(&logits, &self.mask),
            PolicyMode::Sample => {
                let p = masked_distribution(&logits, &self.mask);
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (k, q) in p.iter().enumerate() {
                    acc += q;
                    if self.mask[k] && u < acc {
                        return k;
                    }
                }
                masked_argmax(&logits, &self.mask)
            }
        }
    }
}

impl Policy for DrlPolicy {
    fn name(&self) -> String {
        "drl".into()
    }

    fn decide(&mut self, ctx: &DecisionContext<'_>, rng: &mut ChaCha8Rng) -> Decision {
        let a = self.choose(ctx, rng);
        self.actions.decode(ctx.state, a).unwrap_or(Decision::Postpone)
    }
}
