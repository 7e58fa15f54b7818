//! Scenario file format.
//!
//! One TOML document per model:
//!
//! ```toml
//! name = "n_network"
//! activities = ["I", "J"]
//! resources = ["r9", "r10"]
//!
//! [eligibility]
//! I = ["r10"]
//! J = ["r9", "r10"]
//!
//! [[service_means]]
//! resource = "r10"
//! activity = "I"
//! mean = 1.2
//!
//! [[routing]]
//! type = "start"
//! id = "start"
//! to = "choice"
//!
//! [[routing]]
//! type = "xor"
//! id = "choice"
//! branches = [{ to = "I", p = 0.5 }, { to = "J", p = 0.5 }]
//!
//! [[routing]]
//! type = "activity"
//! id = "I"
//! activity = "I"   # optional, defaults to the node id
//! to = "end"
//!
//! [arrivals]
//! constant = 0.5
//! # or: pattern = { period = 250.0, lambda_max = 0.88, curve = [[0.0, 0.08], ...] }
//! ```
//!
//! `and_split` nodes take `to = [..]`, `and_join` nodes `to = ".."`, `end`
//! nodes nothing. Pattern curves are linearly interpolated between knots.

use super::{
    Activity, ArrivalPattern, ArrivalSpec, Branch, EligibilityMap, ModelError, Node, NodeKind, ProcessModel, Resource, RoutingGraph,
    ServiceTimeTable,
};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    #[serde(default)]
    pub name: String,
    pub activities: Vec<String>,
    pub resources: Vec<String>,
    pub eligibility: BTreeMap<String, Vec<String>>,
    pub service_means: Vec<ServiceMeanEntry>,
    pub routing: Vec<RoutingEntry>,
    pub arrivals: ArrivalsEntry,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ServiceMeanEntry {
    pub resource: String,
    pub activity: String,
    pub mean: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum RoutingEntry {
    Start {
        id: String,
        to: String,
    },
    Activity {
        id: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        activity: Option<String>,
        to: String,
    },
    Xor {
        id: String,
        branches: Vec<BranchEntry>,
    },
    AndSplit {
        id: String,
        to: Vec<String>,
    },
    AndJoin {
        id: String,
        to: String,
    },
    End {
        id: String,
    },
}

impl RoutingEntry {
    fn id(&self) -> &str {
        match self {
            RoutingEntry::Start { id, .. }
            | RoutingEntry::Activity { id, .. }
            | RoutingEntry::Xor { id, .. }
            | RoutingEntry::AndSplit { id, .. }
            | RoutingEntry::AndJoin { id, .. }
            | RoutingEntry::End { id } => id,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct BranchEntry {
    pub to: String,
    pub p: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum ArrivalsEntry {
    Constant(f64),
    Pattern(PatternEntry),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PatternEntry {
    pub period: f64,
    pub lambda_max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_rate: Option<f64>,
    pub curve: Vec<(f64, f64)>,
}

/// Parses and validates a scenario file.
pub fn load_model(text: &str) -> Result<ProcessModel, ModelError> {
    let file: ModelFile = toml::from_str(text).map_err(|e| ModelError::Parse(e.to_string()))?;
    let model = file.into_model()?;
    model.validate().into_result()?;
    Ok(model)
}

/// Serializes a model to the scenario file format.
pub fn to_config_text(model: &ProcessModel) -> String {
    toml::to_string(&ModelFile::from_model(model)).expect("scenario files always serialize")
}

impl ModelFile {
    /// Resolves names to positions. Dangling references are reported as
    /// validation errors; invariants are checked separately by `validate`.
    pub fn into_model(self) -> Result<ProcessModel, ModelError> {
        let mut errors = Vec::new();
        let activities: Vec<Activity> =
            self.activities.iter().enumerate().map(|(i, id)| Activity { id: id.clone(), index: i + 1 }).collect();
        let resources: Vec<Resource> = self.resources.iter().enumerate().map(|(i, id)| Resource { id: id.clone(), index: i + 1 }).collect();
        let act = |id: &str| self.activities.iter().position(|a| a == id);
        let res = |id: &str| self.resources.iter().position(|r| r == id);

        let mut by_activity = vec![Vec::new(); activities.len()];
        for (a_id, rs) in &self.eligibility {
            let Some(a) = act(a_id) else {
                errors.push(format!("eligibility lists unknown activity '{a_id}'"));
                continue;
            };
            for r_id in rs {
                match res(r_id) {
                    Some(r) => by_activity[a].push(r),
                    None => errors.push(format!("eligibility of '{a_id}' lists unknown resource '{r_id}'")),
                }
            }
        }

        let mut service_times = ServiceTimeTable::new(resources.len(), activities.len());
        for e in &self.service_means {
            match (res(&e.resource), act(&e.activity)) {
                (Some(r), Some(a)) => service_times.set(r, a, e.mean),
                _ => errors.push(format!("service mean for unknown pair ({}, {})", e.resource, e.activity)),
            }
        }

        let node_idx = |id: &str| self.routing.iter().position(|n| n.id() == id);
        let resolve = |id: &str, errors: &mut Vec<String>| {
            node_idx(id).unwrap_or_else(|| {
                errors.push(format!("routing refers to unknown node '{id}'"));
                usize::MAX
            })
        };
        let mut nodes = Vec::with_capacity(self.routing.len());
        for entry in &self.routing {
            let kind = match entry {
                RoutingEntry::Start { to, .. } => NodeKind::Start { next: resolve(to, &mut errors) },
                RoutingEntry::Activity { id, activity, to } => {
                    let name = activity.as_deref().unwrap_or(id);
                    let a = act(name).unwrap_or_else(|| {
                        errors.push(format!("routing node '{id}' refers to unknown activity '{name}'"));
                        usize::MAX
                    });
                    NodeKind::Activity { activity: a, next: resolve(to, &mut errors) }
                }
                RoutingEntry::Xor { branches, .. } => NodeKind::Xor {
                    branches: branches.iter().map(|b| Branch { target: resolve(&b.to, &mut errors), probability: b.p }).collect(),
                },
                RoutingEntry::AndSplit { to, .. } => NodeKind::AndSplit { targets: to.iter().map(|t| resolve(t, &mut errors)).collect() },
                RoutingEntry::AndJoin { to, .. } => NodeKind::AndJoin { next: resolve(to, &mut errors) },
                RoutingEntry::End { .. } => NodeKind::End,
            };
            nodes.push(Node::new(entry.id(), kind));
        }

        let arrivals = match self.arrivals {
            ArrivalsEntry::Constant(rate) => ArrivalSpec::Constant { rate },
            ArrivalsEntry::Pattern(p) => {
                ArrivalSpec::Pattern(ArrivalPattern { period: p.period, lambda_max: p.lambda_max, mean_rate: p.mean_rate, curve: p.curve })
            }
        };

        if !errors.is_empty() {
            return Err(ModelError::Validation(errors));
        }
        Ok(ProcessModel {
            name: self.name,
            activities,
            resources,
            eligibility: EligibilityMap::new(by_activity),
            service_times,
            routing: RoutingGraph::new(nodes),
            arrivals,
        })
    }

    pub fn from_model(model: &ProcessModel) -> ModelFile {
        let a_id = |a: usize| model.activities[a].id.clone();
        let r_id = |r: usize| model.resources[r].id.clone();
        let eligibility =
            (0..model.n_activities()).map(|a| (a_id(a), model.eligibility.resources_for(a).iter().map(|&r| r_id(r)).collect())).collect();
        let mut service_means = Vec::new();
        for r in 0..model.n_resources() {
            for a in 0..model.n_activities() {
                if let Some(mean) = model.service_times.get(r, a) {
                    service_means.push(ServiceMeanEntry { resource: r_id(r), activity: a_id(a), mean });
                }
            }
        }
        let graph = &model.routing;
        let n_id = |n: usize| graph.node(n).id.clone();
        let routing = graph
            .nodes()
            .iter()
            .map(|node| {
                let id = node.id.clone();
                match &node.kind {
                    NodeKind::Start { next } => RoutingEntry::Start { id, to: n_id(*next) },
                    NodeKind::Activity { activity, next } => {
                        let name = a_id(*activity);
                        RoutingEntry::Activity { activity: (name != id).then_some(name), id, to: n_id(*next) }
                    }
                    NodeKind::Xor { branches } => RoutingEntry::Xor {
                        id,
                        branches: branches.iter().map(|b| BranchEntry { to: n_id(b.target), p: b.probability }).collect(),
                    },
                    NodeKind::AndSplit { targets } => RoutingEntry::AndSplit { id, to: targets.iter().map(|&t| n_id(t)).collect() },
                    NodeKind::AndJoin { next } => RoutingEntry::AndJoin { id, to: n_id(*next) },
                    NodeKind::End => RoutingEntry::End { id },
                }
            })
            .collect();
        let arrivals = match &model.arrivals {
            ArrivalSpec::Constant { rate } => ArrivalsEntry::Constant(*rate),
            ArrivalSpec::Pattern(p) => ArrivalsEntry::Pattern(PatternEntry {
                period: p.period,
                lambda_max: p.lambda_max,
                mean_rate: p.mean_rate,
                curve: p.curve.clone(),
            }),
        };
        ModelFile {
            name: model.name.clone(),
            activities: model.activities.iter().map(|a| a.id.clone()).collect(),
            resources: model.resources.iter().map(|r| r.id.clone()).collect(),
            eligibility,
            service_means,
            routing,
            arrivals,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
activities = ["A"]
resources = ["r1"]

[eligibility]
A = ["r1"]

[[service_means]]
resource = "r1"
activity = "A"
mean = 1.0

[[routing]]
type = "start"
id = "start"
to = "A"

[[routing]]
type = "activity"
id = "A"
to = "end"

[[routing]]
type = "end"
id = "end"

[arrivals]
constant = 0.5
"#;

    #[test]
    fn minimal_file_loads() {
        let m = load_model(MINIMAL).unwrap();
        assert_eq!(m.n_activities(), 1);
        assert_eq!(m.n_resources(), 1);
        assert_eq!(m.arrivals, ArrivalSpec::Constant { rate: 0.5 });
    }

    #[test]
    fn bad_xor_probabilities_are_rejected() {
        let text = r#"
activities = ["I", "J"]
resources = ["r1"]
[eligibility]
I = ["r1"]
J = ["r1"]
[[service_means]]
resource = "r1"
activity = "I"
mean = 1.0
[[service_means]]
resource = "r1"
activity = "J"
mean = 1.0
[[routing]]
type = "start"
id = "start"
to = "x"
[[routing]]
type = "xor"
id = "x"
branches = [{ to = "I", p = 0.6 }, { to = "J", p = 0.5 }]
[[routing]]
type = "activity"
id = "I"
to = "end"
[[routing]]
type = "activity"
id = "J"
to = "end"
[[routing]]
type = "end"
id = "end"
[arrivals]
constant = 0.5
"#;
        match load_model(text) {
            Err(ModelError::Validation(v)) => {
                assert!(v.iter().any(|s| s.contains("probabilities must sum to 1")), "{v:?}")
            }
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_file_is_a_parse_error() {
        assert!(matches!(load_model("activities = ["), Err(ModelError::Parse(_))));
        assert!(matches!(load_model("activities = []"), Err(ModelError::Parse(_))));
    }

    #[test]
    fn dangling_reference_is_rejected() {
        let text = MINIMAL.replace("to = \"end\"", "to = \"nowhere\"");
        assert!(matches!(load_model(&text), Err(ModelError::Validation(_))));
    }
}
