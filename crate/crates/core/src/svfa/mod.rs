//! Score-based value function approximation: six features per possible
//! assignment, a linear score, and a threshold below which the best-scoring
//! assignment is made.

mod bo;
mod gp;

pub use bo::{bayes_optimize, minimize, write_history, BoConfig, BoResult, Trial};
pub use gp::{GaussianProcess, GpHyper};

use crate::model::ProcessModel;
use crate::policies::{Decision, DecisionContext, Policy};
use crate::sim::{Assignment, ExecutionState};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum SvfaError {
    #[error("resource {resource} cannot take instance {instance} in this state")]
    InfeasiblePair { resource: usize, instance: usize },
    #[error("weights file: {0}")]
    Weights(String),
    #[error("invalid optimizer configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Sim(#[from] crate::sim::SimError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector {
    pub mean_assignment: f64,
    pub var_assignment: f64,
    pub activity_rank: usize,
    pub resource_rank: usize,
    pub prob_fin: f64,
    pub queue_length: usize,
}

/// Features of assigning `a.instance` to `a.resource`.
///
/// Ranks are one plus the number of strictly faster candidates, so equal
/// means share a rank. Only instances `r` may serve and resources eligible
/// for the instance's activity are ranked.
pub fn compute_features(state: &ExecutionState, a: Assignment, model: &ProcessModel) -> Result<FeatureVector, SvfaError> {
    if !state.is_possible(model, a) {
        return Err(SvfaError::InfeasiblePair { resource: a.resource, instance: a.instance });
    }
    Ok(features_unchecked(state, a, model))
}

fn features_unchecked(state: &ExecutionState, a: Assignment, model: &ProcessModel) -> FeatureVector {
    let r = a.resource;
    let inst = state.instance(a.instance);
    let act = inst.activity;
    let mean = model.mean(r, act);
    let faster_instances: usize =
        (0..model.n_activities()).filter(|&b| model.is_eligible(r, b) && model.mean(r, b) < mean).map(|b| state.queue_length(b)).sum();
    let faster_resources = state.available().filter(|&s| model.is_eligible(s, act) && model.mean(s, act) < mean).count();
    let case = state.case(inst.case);
    FeatureVector {
        mean_assignment: mean,
        var_assignment: model.service_times.variance(r, act),
        activity_rank: 1 + faster_instances,
        resource_rank: 1 + faster_resources,
        prob_fin: model.prob_fin(&case.progress, inst.node),
        queue_length: state.queue_length(act),
    }
}

/// The seven weights; `w[6]` is the postpone threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    pub w4: f64,
    pub w5: f64,
    pub w6: f64,
    pub w7: f64,
}

pub const WEIGHT_BOUNDS: (f64, f64) = (0.0, 100.0);

impl WeightVector {
    pub fn new(w: [f64; 7]) -> Self {
        WeightVector { w1: w[0], w2: w[1], w3: w[2], w4: w[3], w5: w[4], w6: w[5], w7: w[6] }
    }

    pub fn to_array(self) -> [f64; 7] {
        [self.w1, self.w2, self.w3, self.w4, self.w5, self.w6, self.w7]
    }

    pub fn threshold(&self) -> f64 {
        self.w7
    }

    pub fn in_bounds(&self) -> bool {
        self.to_array().iter().all(|w| (WEIGHT_BOUNDS.0..=WEIGHT_BOUNDS.1).contains(w))
    }

    pub fn from_toml(text: &str) -> Result<Self, SvfaError> {
        let w: WeightVector = toml::from_str(text).map_err(|e| SvfaError::Weights(e.to_string()))?;
        if w.to_array().iter().any(|x| !x.is_finite()) {
            return Err(SvfaError::Weights("weights must be finite".into()));
        }
        Ok(w)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("plain numeric table")
    }

    pub fn load(path: &Path) -> Result<Self, SvfaError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), SvfaError> {
        Ok(std::fs::write(path, self.to_toml())?)
    }
}

pub fn score(w: &WeightVector, f: &FeatureVector) -> f64 {
    w.w1 * f.mean_assignment + w.w2 * f.var_assignment + w.w3 * f.activity_rank as f64 + w.w4 * f.resource_rank as f64
        - w.w5 * f.prob_fin
        - w.w6 * f.queue_length as f64
}

/// Assigns the lowest-scoring possible assignment if its score is below
/// the threshold, otherwise postpones. Ties go to the earliest pair in D.
#[derive(Debug, Clone, Copy)]
pub struct SvfaPolicy {
    pub weights: WeightVector,
}

impl SvfaPolicy {
    pub fn new(weights: WeightVector) -> Self {
        SvfaPolicy { weights }
    }
}

impl Policy for SvfaPolicy {
    fn name(&self) -> String {
        "svfa".into()
    }

    fn decide(&mut self, ctx: &DecisionContext<'_>, _rng: &mut ChaCha8Rng) -> Decision {
        let mut best: Option<(f64, Assignment)> = None;
        for &a in ctx.possible() {
            let s = score(&self.weights, &features_unchecked(ctx.state, a, ctx.model));
            if best.is_none_or(|(b, _)| s < b) {
                best = Some((s, a));
            }
        }
        match best {
            Some((s, a)) if s < self.weights.w7 => Decision::Assign(a),
            _ => Decision::Postpone,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policies::tests::state_with;
    use rand::SeedableRng;

    #[test]
    fn score_arithmetic() {
        let f =
            FeatureVector { mean_assignment: 2.0, var_assignment: 4.0, activity_rank: 1, resource_rank: 2, prob_fin: 1.0, queue_length: 3 };
        assert_eq!(score(&WeightVector::new([1.0; 7]), &f), 5.0);
        assert_eq!(score(&WeightVector::new([0.0; 7]), &f), 0.0);
        let g = FeatureVector { mean_assignment: 1.7, ..f };
        assert_eq!(score(&WeightVector::new([1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 5.0]), &g), 1.7);
    }

    #[test]
    fn weights_round_trip() {
        let w = WeightVector::new([1.5, 0.0, 3.0, 4.25, 99.0, 0.125, 100.0]);
        let text = w.to_toml();
        assert!(text.contains("w7 = 100"));
        assert_eq!(WeightVector::from_toml(&text).unwrap(), w);
        assert!(WeightVector::from_toml("w1 = 1.0").is_err());
    }

    const THREE: &str = r#"
activities = ["X", "Y", "Z"]
resources = ["r1", "r2"]
[eligibility]
X = ["r1", "r2"]
Y = ["r1"]
Z = ["r1"]
[[service_means]]
resource = "r1"
activity = "X"
mean = 2.0
[[service_means]]
resource = "r1"
activity = "Y"
mean = 1.0
[[service_means]]
resource = "r1"
activity = "Z"
mean = 3.0
[[service_means]]
resource = "r2"
activity = "X"
mean = 1.5
[[routing]]
type = "start"
id = "start"
to = "choice"
[[routing]]
type = "xor"
id = "choice"
branches = [{ to = "X", p = 0.4 }, { to = "Y", p = 0.3 }, { to = "Z", p = 0.3 }]
[[routing]]
type = "activity"
id = "X"
to = "end"
[[routing]]
type = "activity"
id = "Y"
to = "end"
[[routing]]
type = "activity"
id = "Z"
to = "end"
[[routing]]
type = "end"
id = "end"
[arrivals]
constant = 0.5
"#;

    fn three() -> ProcessModel {
        crate::model::load_model(THREE).unwrap()
    }

    fn pair(resource: usize, instance: usize) -> Assignment {
        Assignment { resource, instance }
    }

    #[test]
    fn lone_pair_ranks_first() {
        let m = three();
        let st = state_with(&m, &[(2, 0.0)], &[0]);
        let f = compute_features(&st, pair(0, 0), &m).unwrap();
        assert_eq!((f.activity_rank, f.resource_rank, f.queue_length), (1, 1, 1));
        assert_eq!(f.mean_assignment, 3.0);
        assert_eq!(f.var_assignment, 9.0);
        assert_eq!(f.prob_fin, 1.0);
    }

    #[test]
    fn ranks_count_faster_candidates() {
        let m = three();
        // r1 sees X (2.0), Y (1.0) and Z (3.0)
        let st = state_with(&m, &[(0, 0.0), (1, 0.0), (2, 0.0)], &[0, 1]);
        let ranks: Vec<usize> = (0..3).map(|k| compute_features(&st, pair(0, k), &m).unwrap().activity_rank).collect();
        assert_eq!(ranks, vec![2, 1, 3]);
        // r2 is faster at X than r1
        assert_eq!(compute_features(&st, pair(0, 0), &m).unwrap().resource_rank, 2);
        assert_eq!(compute_features(&st, pair(1, 0), &m).unwrap().resource_rank, 1);
        assert!(matches!(compute_features(&st, pair(1, 1), &m), Err(SvfaError::InfeasiblePair { .. })));
    }

    #[test]
    fn threshold_is_strict() {
        let m = three();
        let st = state_with(&m, &[(1, 0.0), (2, 0.0)], &[0]);
        let ctx = DecisionContext::new(&st, &m);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mean_only = |w7| SvfaPolicy::new(WeightVector::new([1.0, 0.0, 0.0, 0.0, 0.0, 0.0, w7]));
        // scores are 1.0 (Y) and 3.0 (Z)
        assert_eq!(mean_only(2.0).decide(&ctx, &mut rng), Decision::Assign(pair(0, 0)));
        assert_eq!(mean_only(1.0).decide(&ctx, &mut rng), Decision::Postpone);
        assert_eq!(SvfaPolicy::new(WeightVector::new([0.0; 7])).decide(&ctx, &mut rng), Decision::Postpone);
    }

    #[test]
    fn queue_weight_serves_the_longest_queue() {
        let m = three();
        let st = state_with(&m, &[(1, 0.0), (2, 0.0), (2, 1.0)], &[0]);
        let ctx = DecisionContext::new(&st, &m);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = SvfaPolicy::new(WeightVector::new([0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 100.0]));
        assert_eq!(p.decide(&ctx, &mut rng), Decision::Assign(pair(0, 1)));
    }
}
