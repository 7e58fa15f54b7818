//! Static structure of a business process: activities, resources, who may
//! execute what, how long it takes, how cases are routed and how they
//! arrive.

mod config;
mod routing;
mod scenarios;

pub use config::{load_model, to_config_text, ModelFile};
pub use routing::{Branch, CaseProgress, JoinState, Node, NodeKind, RoutingGraph};
pub use scenarios::{builtin_scenario, builtin_with_arrivals, Scenario, DEFAULT_PATTERN};

use std::fmt;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("failed to parse scenario file: {0}")]
    Parse(String),
    #[error("invalid process model: {}", .0.join("; "))]
    Validation(Vec<String>),
    #[error("unknown scenario '{0}'")]
    UnknownScenario(String),
    #[error("arrival rate must be positive, got {0}")]
    BadRate(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Activity {
    pub id: String,
    /// 1-based position in the model's activity ordering.
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Resource {
    pub id: String,
    /// 1-based position in the model's resource ordering.
    pub index: usize,
}

/// Per activity, the resources allowed to execute it (sorted by resource
/// position).
#[derive(Debug, Clone, PartialEq)]
pub struct EligibilityMap {
    by_activity: Vec<Vec<usize>>,
}

impl EligibilityMap {
    pub fn new(mut by_activity: Vec<Vec<usize>>) -> Self {
        for rs in &mut by_activity {
            rs.sort_unstable();
            rs.dedup();
        }
        EligibilityMap { by_activity }
    }

    pub fn resources_for(&self, activity: usize) -> &[usize] {
        &self.by_activity[activity]
    }

    pub fn is_eligible(&self, resource: usize, activity: usize) -> bool {
        self.by_activity[activity].binary_search(&resource).is_ok()
    }

    pub fn n_activities(&self) -> usize {
        self.by_activity.len()
    }
}

/// Mean processing time per (resource, activity). Processing times are
/// exponential, so the variance is the squared mean.
#[derive(Debug, Clone, PartialEq)]
pub struct ServiceTimeTable {
    n_activities: usize,
    means: Vec<Option<f64>>,
}

impl ServiceTimeTable {
    pub fn new(n_resources: usize, n_activities: usize) -> Self {
        ServiceTimeTable { n_activities, means: vec![None; n_resources * n_activities] }
    }

    pub fn set(&mut self, resource: usize, activity: usize, mean: f64) {
        self.means[resource * self.n_activities + activity] = Some(mean);
    }

    pub fn get(&self, resource: usize, activity: usize) -> Option<f64> {
        self.means[resource * self.n_activities + activity]
    }

    /// Mean for an eligible pair. Panics on a pair without an entry, which
    /// validation rules out.
    pub fn mean(&self, resource: usize, activity: usize) -> f64 {
        self.get(resource, activity).unwrap_or_else(|| panic!("no service time for resource {resource}, activity {activity}"))
    }

    pub fn variance(&self, resource: usize, activity: usize) -> f64 {
        let m = self.mean(resource, activity);
        m * m
    }
}

/// A periodic, piecewise-linear arrival-rate curve sampled by thinning.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrivalPattern {
    pub period: f64,
    pub lambda_max: f64,
    /// Declared time-average rate; checked against the curve when present.
    pub mean_rate: Option<f64>,
    /// Knots `(phase, rate)` sorted by phase within `[0, period)`; the curve
    /// wraps around from the last knot to the first.
    pub curve: Vec<(f64, f64)>,
}

impl ArrivalPattern {
    pub fn rate_at(&self, t: f64) -> f64 {
        let phase = t.rem_euclid(self.period);
        let k = &self.curve;
        if k.len() == 1 {
            return k[0].1;
        }
        let pos = k.partition_point(|&(p, _)| p <= phase);
        let (left, right) = if pos == 0 {
            let (lp, lr) = k[k.len() - 1];
            ((lp - self.period, lr), k[0])
        } else if pos == k.len() {
            let (fp, fr) = k[0];
            (k[k.len() - 1], (fp + self.period, fr))
        } else {
            (k[pos - 1], k[pos])
        };
        let span = right.0 - left.0;
        if span <= 0.0 {
            return left.1;
        }
        let w = (phase - left.0) / span;
        left.1 + w * (right.1 - left.1)
    }

    /// Exact time-average of the curve over one period.
    pub fn time_average(&self) -> f64 {
        let k = &self.curve;
        if k.len() == 1 {
            return k[0].1;
        }
        let mut area = 0.0;
        for i in 0..k.len() {
            let (p0, r0) = k[i];
            let (p1, r1) = if i + 1 < k.len() { k[i + 1] } else { (k[0].0 + self.period, k[0].1) };
            area += 0.5 * (r0 + r1) * (p1 - p0);
        }
        area / self.period
    }

    /// Same shape, rescaled so the time-average equals `mean`.
    pub fn scaled_to_mean(&self, mean: f64) -> ArrivalPattern {
        let f = mean / self.time_average();
        ArrivalPattern {
            period: self.period,
            lambda_max: self.lambda_max * f,
            mean_rate: Some(mean),
            curve: self.curve.iter().map(|&(p, r)| (p, r * f)).collect(),
        }
    }

    fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.period > 0.0 && self.period.is_finite()) {
            out.push("pattern period must be positive".into());
        }
        if !(self.lambda_max > 0.0 && self.lambda_max.is_finite()) {
            out.push("pattern lambda_max must be positive".into());
        }
        if self.curve.is_empty() {
            out.push("pattern curve needs at least one knot".into());
            return out;
        }
        if self.curve.windows(2).any(|w| w[1].0 <= w[0].0) {
            out.push("pattern knots must have strictly increasing phases".into());
        }
        if self.curve.iter().any(|&(p, _)| p < 0.0 || p >= self.period) {
            out.push("pattern knot phases must lie in [0, period)".into());
        }
        if self.curve.iter().any(|&(_, r)| !(r > 0.0 && r <= self.lambda_max * (1.0 + 1e-12))) {
            out.push("pattern rates must lie in (0, lambda_max]".into());
        }
        if let Some(mean) = self.mean_rate {
            let avg = self.time_average();
            if (avg - mean).abs() > 0.01 * mean {
                out.push(format!("pattern time-average {avg} differs from declared mean {mean} by more than 1%"));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ArrivalSpec {
    Constant { rate: f64 },
    Pattern(ArrivalPattern),
}

impl ArrivalSpec {
    pub fn mean_rate(&self) -> f64 {
        match self {
            ArrivalSpec::Constant { rate } => *rate,
            ArrivalSpec::Pattern(p) => p.mean_rate.unwrap_or_else(|| p.time_average()),
        }
    }

    /// Period of the pattern, if arrivals follow one.
    pub fn period(&self) -> Option<f64> {
        match self {
            ArrivalSpec::Constant { .. } => None,
            ArrivalSpec::Pattern(p) => Some(p.period),
        }
    }
}

/// Violations found by [`ProcessModel::validate`]; empty means valid.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<(), ModelError> {
        if self.violations.is_empty() {
            Ok(())
        } else {
            Err(ModelError::Validation(self.violations))
        }
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.violations {
            writeln!(f, "- {v}")?;
        }
        Ok(())
    }
}

/// An (resource, activity) pair the resource is eligible for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EligiblePair {
    pub resource: usize,
    pub activity: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProcessModel {
    pub name: String,
    pub activities: Vec<Activity>,
    pub resources: Vec<Resource>,
    pub eligibility: EligibilityMap,
    pub service_times: ServiceTimeTable,
    pub routing: RoutingGraph,
    pub arrivals: ArrivalSpec,
}

impl ProcessModel {
    pub fn n_activities(&self) -> usize {
        self.activities.len()
    }

    pub fn n_resources(&self) -> usize {
        self.resources.len()
    }

    pub fn activity_index(&self, id: &str) -> Option<usize> {
        self.activities.iter().position(|a| a.id == id)
    }

    pub fn resource_index(&self, id: &str) -> Option<usize> {
        self.resources.iter().position(|r| r.id == id)
    }

    pub fn is_eligible(&self, resource: usize, activity: usize) -> bool {
        self.eligibility.is_eligible(resource, activity)
    }

    pub fn mean(&self, resource: usize, activity: usize) -> f64 {
        self.service_times.mean(resource, activity)
    }

    /// All eligible pairs in (resource, activity) lexicographic order. This
    /// is the static action list of the learned policies.
    pub fn eligible_pairs(&self) -> Vec<EligiblePair> {
        let mut pairs = Vec::new();
        for r in 0..self.n_resources() {
            for a in 0..self.n_activities() {
                if self.is_eligible(r, a) {
                    pairs.push(EligiblePair { resource: r, activity: a });
                }
            }
        }
        pairs
    }

    /// Probability that completing the instance at activity node `node` of a
    /// case with the given progress leaves the case finished.
    pub fn prob_fin(&self, progress: &CaseProgress, node: usize) -> f64 {
        self.routing.completion_probability(progress, node)
    }

    pub fn validate(&self) -> ValidationReport {
        let mut v = Vec::new();
        let n_a = self.activities.len();
        let n_r = self.resources.len();
        if n_a == 0 {
            v.push("model needs at least one activity".to_string());
        }
        if n_r == 0 {
            v.push("model needs at least one resource".to_string());
        }
        check_ids(self.activities.iter().map(|a| (a.id.as_str(), a.index)), "activity", &mut v);
        check_ids(self.resources.iter().map(|r| (r.id.as_str(), r.index)), "resource", &mut v);

        if self.eligibility.n_activities() != n_a {
            v.push("eligibility must list every activity".to_string());
        } else {
            for (a, act) in self.activities.iter().enumerate() {
                let rs = self.eligibility.resources_for(a);
                if rs.is_empty() {
                    v.push(format!("activity '{}': empty eligibility", act.id));
                }
                for &r in rs {
                    if r >= n_r {
                        v.push(format!("activity '{}': eligible resource does not exist", act.id));
                        continue;
                    }
                    match self.service_times.get(r, a) {
                        None => v.push(format!("missing service mean for ({}, {})", self.resources[r].id, act.id)),
                        Some(m) if !(m > 0.0 && m.is_finite()) => {
                            v.push(format!("non-positive mean {m} for ({}, {})", self.resources[r].id, act.id))
                        }
                        _ => {}
                    }
                }
            }
        }

        v.extend(self.routing.violations(n_a));

        match &self.arrivals {
            ArrivalSpec::Constant { rate } => {
                if !(*rate > 0.0 && rate.is_finite()) {
                    v.push(format!("arrival rate must be positive, got {rate}"));
                }
            }
            ArrivalSpec::Pattern(p) => v.extend(p.violations()),
        }
        ValidationReport { violations: v }
    }
}

fn check_ids<'a>(items: impl Iterator<Item = (&'a str, usize)>, what: &str, out: &mut Vec<String>) {
    let mut seen = std::collections::BTreeSet::new();
    for (pos, (id, index)) in items.enumerate() {
        if !seen.insert(id) {
            out.push(format!("duplicate {what} id '{id}'"));
        }
        if index != pos + 1 {
            out.push(format!("{what} '{id}' has index {index}, expected {}", pos + 1));
        }
    }
}
