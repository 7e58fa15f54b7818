use super::env::{observation_len, ActionSpace, ObsVariant};
use super::net::PolicyNet;
use super::ppo::PpoConfig;
use super::DrlError;
use crate::model::ProcessModel;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Hash of the activity and resource orderings and the action list, so a
/// network is only ever loaded for a model with the same layout.
pub fn model_fingerprint(model: &ProcessModel) -> String {
    let mut h = Sha256::new();
    for a in &model.activities {
        h.update(b"a:");
        h.update(a.id.as_bytes());
        h.update(b"\n");
    }
    for r in &model.resources {
        h.update(b"r:");
        h.update(r.id.as_bytes());
        h.update(b"\n");
    }
    for p in ActionSpace::new(model).pairs() {
        h.update(format!("p:{},{}\n", p.resource, p.activity).as_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub fingerprint: String,
    pub obs_dim: usize,
    pub n_actions: usize,
    pub variant: ObsVariant,
    pub config: PpoConfig,
    pub params: Vec<f64>,
}

impl Checkpoint {
    pub fn new(model: &ProcessModel, net: &PolicyNet, config: &PpoConfig) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            fingerprint: model_fingerprint(model),
            obs_dim: net.obs_dim(),
            n_actions: net.n_actions(),
            variant: config.variant,
            config: config.clone(),
            params: net.params.clone(),
        }
    }

    /// Rebuilds the network after checking it fits `model`.
    pub fn network_for(&self, model: &ProcessModel) -> Result<PolicyNet, DrlError> {
        if self.version != CHECKPOINT_VERSION {
            return Err(DrlError::Checkpoint(format!("unsupported checkpoint version {}", self.version)));
        }
        if self.fingerprint != model_fingerprint(model) {
            return Err(DrlError::Checkpoint("checkpoint was trained on a different model layout".into()));
        }
        if self.obs_dim != observation_len(model, self.variant) || self.n_actions != ActionSpace::new(model).len() {
            return Err(DrlError::Checkpoint("network shape does not match the model".into()));
        }
        let mut net = PolicyNet::zeros(self.obs_dim, self.n_actions, &self.config.hidden, self.config.activation);
        if net.n_params() != self.params.len() {
            return Err(DrlError::Checkpoint("parameter count does not match the network".into()));
        }
        if self.params.iter().any(|p| !p.is_finite()) {
            return Err(DrlError::Checkpoint("non-finite parameters".into()));
        }
        net.params.clone_from(&self.params);
        Ok(net)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, DrlError> {
        serde_json::from_str(text).map_err(|e| DrlError::Checkpoint(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<(), DrlError> {
        Ok(std::fs::write(path, self.to_json())?)
    }

    pub fn load(path: &Path) -> Result<Self, DrlError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
