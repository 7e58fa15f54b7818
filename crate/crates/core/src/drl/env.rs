use super::DrlError;
use crate::model::{EligiblePair, ProcessModel};
use crate::policies::Decision;
use crate::sim::{Assignment, EpisodeStats, ExecutionState, Simulation, Step};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Which features the observation carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObsVariant {
    #[default]
    Plain,
    /// Adds the phase of the arrival pattern, `(t mod period) / period`.
    Temporal,
}

pub fn observation_len(model: &ProcessModel, variant: ObsVariant) -> usize {
    2 * model.n_resources() + model.n_activities() + usize::from(variant == ObsVariant::Temporal)
}

/// Availability per resource, the normalized index of the activity each
/// busy resource works on, then the normalized queue length per activity.
pub fn encode_state(state: &ExecutionState, model: &ProcessModel, variant: ObsVariant) -> Vec<f64> {
    let mut obs = Vec::with_capacity(observation_len(model, variant));
    encode_into(state, model, variant, &mut obs);
    obs
}

pub(crate) fn encode_into(state: &ExecutionState, model: &ProcessModel, variant: ObsVariant, obs: &mut Vec<f64>) {
    let n_a = model.n_activities() as f64;
    obs.extend((0..model.n_resources()).map(|r| if state.is_available(r) { 1.0 } else { 0.0 }));
    obs.extend((0..model.n_resources()).map(|r| match state.processing(r) {
        Some(k) => (state.instance(k).activity + 1) as f64 / n_a,
        None => 0.0,
    }));
    obs.extend((0..model.n_activities()).map(|a| (state.queue_length(a) as f64 / 100.0).min(1.0)));
    if variant == ObsVariant::Temporal {
        let phase = match model.arrivals.period() {
            Some(p) => state.time().rem_euclid(p) / p,
            None => 0.0,
        };
        obs.push(phase);
    }
}

/// Fixed action list: every eligible (resource, activity) pair in
/// lexicographic order, then postpone as the last action.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionSpace {
    pairs: Vec<EligiblePair>,
}

impl ActionSpace {
    pub fn new(model: &ProcessModel) -> Self {
        ActionSpace { pairs: model.eligible_pairs() }
    }

    pub fn len(&self) -> usize {
        self.pairs.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn postpone(&self) -> usize {
        self.pairs.len()
    }

    pub fn pairs(&self) -> &[EligiblePair] {
        &self.pairs
    }

    pub fn mask(&self, state: &ExecutionState) -> Vec<bool> {
        let mut m = Vec::with_capacity(self.len());
        self.mask_into(state, &mut m);
        m
    }

    pub(crate) fn mask_into(&self, state: &ExecutionState, m: &mut Vec<bool>) {
        m.extend(self.pairs.iter().map(|p| state.is_available(p.resource) && state.queue_length(p.activity) > 0));
        m.push(true);
    }

    /// Action of an assignment; the instance itself is not encoded.
    pub fn index_of(&self, state: &ExecutionState, a: Assignment) -> Option<usize> {
        let activity = state.instance(a.instance).activity;
        self.pairs.binary_search(&EligiblePair { resource: a.resource, activity }).ok()
    }

    /// Turns an action into a decision. A pair action takes the oldest
    /// waiting instance of its activity.
    pub fn decode(&self, state: &ExecutionState, action: usize) -> Option<Decision> {
        if action == self.postpone() {
            return Some(Decision::Postpone);
        }
        let p = self.pairs.get(action)?;
        if !state.is_available(p.resource) {
            return None;
        }
        let instance = state.waiting_of(p.activity).next()?;
        Some(Decision::Assign(Assignment { resource: p.resource, instance }))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub reward: f64,
    pub done: bool,
}

/// The decision process over one simulation run.
#[derive(Debug, Clone)]
pub struct DrlEnv {
    model: Arc<ProcessModel>,
    actions: ActionSpace,
    variant: ObsVariant,
    horizon: f64,
    postpone_penalty: f64,
    sim: Simulation,
    done: bool,
    episode_reward: f64,
}

impl DrlEnv {
    pub fn new(model: Arc<ProcessModel>, variant: ObsVariant, horizon: f64, postpone_penalty: f64, seed: u64) -> Result<Self, DrlError> {
        let sim = Simulation::new(Arc::clone(&model), seed)?;
        let mut env =
            DrlEnv { actions: ActionSpace::new(&model), model, variant, horizon, postpone_penalty, sim, done: false, episode_reward: 0.0 };
        env.reset(seed)?;
        Ok(env)
    }

    /// Starts a new episode and runs it to its first decision point.
    pub fn reset(&mut self, seed: u64) -> Result<(), DrlError> {
        self.sim = Simulation::new(Arc::clone(&self.model), seed)?;
        self.episode_reward = 0.0;
        let (reward, done) = self.settle(|sim, h| sim.advance_to_next_decision(h));
        self.episode_reward += reward;
        self.done = done;
        Ok(())
    }

    fn settle(&mut self, f: impl FnOnce(&mut Simulation, f64) -> Step) -> (f64, bool) {
        let before = self.sim.completed_cases();
        let step = f(&mut self.sim, self.horizon);
        let reward = self.sim.cycle_times()[before..].iter().map(|ct| 1.0 / (ct + 1.0)).sum();
        (reward, step.is_horizon())
    }

    pub fn model(&self) -> &Arc<ProcessModel> {
        &self.model
    }

    pub fn actions(&self) -> &ActionSpace {
        &self.actions
    }

    pub fn variant(&self) -> ObsVariant {
        self.variant
    }

    pub fn state(&self) -> &ExecutionState {
        self.sim.state()
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Rewards since the last reset, penalties included.
    pub fn episode_reward(&self) -> f64 {
        self.episode_reward
    }

    pub fn observation(&self) -> Vec<f64> {
        encode_state(self.sim.state(), &self.model, self.variant)
    }

    pub(crate) fn observe_into(&self, obs: &mut Vec<f64>, mask: &mut Vec<bool>) {
        encode_into(self.sim.state(), &self.model, self.variant, obs);
        self.actions.mask_into(self.sim.state(), mask);
    }

    pub fn mask(&self) -> Vec<bool> {
        self.actions.mask(self.sim.state())
    }

    /// Applies an action and evolves to the next decision point. The reward
    /// is `1 / (cycle time + 1)` summed over the cases completed on the way,
    /// plus the postpone penalty for postpone actions.
    pub fn step(&mut self, action: usize) -> Result<StepResult, DrlError> {
        if self.done {
            return Err(DrlError::EpisodeOver);
        }
        let decision = self.actions.decode(self.sim.state(), action).ok_or(DrlError::InfeasibleAction(action))?;
        let (reward, done) = match decision {
            Decision::Assign(a) => {
                self.sim.apply_assignment(a)?;
                self.settle(|sim, h| sim.advance_to_next_decision(h))
            }
            Decision::Postpone => {
                let (r, d) = self.settle(|sim, h| sim.postpone(h));
                (r + self.postpone_penalty, d)
            }
        };
        self.episode_reward += reward;
        self.done = done;
        Ok(StepResult { reward, done })
    }

    pub fn stats(&self) -> EpisodeStats {
        self.sim.stats()
    }
}
