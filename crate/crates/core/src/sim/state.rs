use crate::model::{CaseProgress, ProcessModel};
use std::collections::BTreeSet;

pub type CaseId = usize;
/// Instance ids are handed out in creation order.
pub type InstanceId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Lifecycle {
    Start,
    Complete,
}

impl Lifecycle {
    pub fn as_str(self) -> &'static str {
        match self {
            Lifecycle::Start => "start",
            Lifecycle::Complete => "complete",
        }
    }
}

/// An activity lifecycle transition of a case.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub activity: usize,
    pub case: CaseId,
    pub time: f64,
    pub resource: Option<usize>,
    pub lifecycle: Lifecycle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InstanceState {
    Waiting,
    Processing,
    Complete,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActivityInstance {
    pub id: InstanceId,
    pub case: CaseId,
    pub activity: usize,
    /// Routing node the instance belongs to.
    pub node: usize,
    pub state: InstanceState,
    pub created: f64,
    pub started: Option<f64>,
    pub resource: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Case {
    pub id: CaseId,
    pub arrival: f64,
    pub completion: Option<f64>,
    pub progress: CaseProgress,
    pub instances: Vec<InstanceId>,
}

impl Case {
    pub fn cycle_time(&self) -> Option<f64> {
        self.completion.map(|c| c - self.arrival)
    }
}

/// A (resource, activity instance) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Assignment {
    pub resource: usize,
    pub instance: InstanceId,
}

/// Execution state: open cases, unassigned instances, available and busy
/// resources, current assignments and the clock.
#[derive(Debug, Clone, PartialEq)]
pub struct ExecutionState {
    pub(crate) cases: Vec<Case>,
    pub(crate) open: BTreeSet<CaseId>,
    pub(crate) instances: Vec<ActivityInstance>,
    pub(crate) waiting: BTreeSet<InstanceId>,
    pub(crate) waiting_by_activity: Vec<BTreeSet<InstanceId>>,
    pub(crate) available: BTreeSet<usize>,
    /// Per resource, the instance it is processing.
    pub(crate) busy_with: Vec<Option<InstanceId>>,
    pub(crate) time: f64,
    /// Bumped whenever the unassigned set or the available set changes.
    pub(crate) version: u64,
}

impl ExecutionState {
    pub(crate) fn new(model: &ProcessModel) -> Self {
        ExecutionState {
            cases: Vec::new(),
            open: BTreeSet::new(),
            instances: Vec::new(),
            waiting: BTreeSet::new(),
            waiting_by_activity: vec![BTreeSet::new(); model.n_activities()],
            available: (0..model.n_resources()).collect(),
            busy_with: vec![None; model.n_resources()],
            time: 0.0,
            version: 0,
        }
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn open_cases(&self) -> impl Iterator<Item = &Case> + '_ {
        self.open.iter().map(|&c| &self.cases[c])
    }

    pub fn n_open_cases(&self) -> usize {
        self.open.len()
    }

    /// Every case that has arrived so far.
    pub fn all_cases(&self) -> &[Case] {
        &self.cases
    }

    pub fn case(&self, id: CaseId) -> &Case {
        &self.cases[id]
    }

    pub fn instance(&self, id: InstanceId) -> &ActivityInstance {
        &self.instances[id]
    }

    /// Unassigned instances, oldest first.
    pub fn waiting(&self) -> impl Iterator<Item = &ActivityInstance> + '_ {
        self.waiting.iter().map(|&k| &self.instances[k])
    }

    pub fn n_waiting(&self) -> usize {
        self.waiting.len()
    }

    pub fn waiting_of(&self, activity: usize) -> impl Iterator<Item = InstanceId> + '_ {
        self.waiting_by_activity[activity].iter().copied()
    }

    pub fn queue_length(&self, activity: usize) -> usize {
        self.waiting_by_activity[activity].len()
    }

    pub fn available(&self) -> impl Iterator<Item = usize> + '_ {
        self.available.iter().copied()
    }

    pub fn is_available(&self, resource: usize) -> bool {
        self.available.contains(&resource)
    }

    pub fn n_available(&self) -> usize {
        self.available.len()
    }

    pub fn busy(&self) -> impl Iterator<Item = usize> + '_ {
        self.busy_with.iter().enumerate().filter_map(|(r, k)| k.map(|_| r))
    }

    /// Current assignments (resource, instance being processed).
    pub fn assignments(&self) -> impl Iterator<Item = Assignment> + '_ {
        self.busy_with.iter().enumerate().filter_map(|(r, k)| k.map(|instance| Assignment { resource: r, instance }))
    }

    pub fn processing(&self, resource: usize) -> Option<InstanceId> {
        self.busy_with[resource]
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// Possible assignments in (resource, activity, instance age) order.
    pub fn possible_assignments(&self, model: &ProcessModel) -> Vec<Assignment> {
        let mut out = Vec::new();
        for r in self.available() {
            for a in 0..model.n_activities() {
                if model.is_eligible(r, a) {
                    out.extend(self.waiting_by_activity[a].iter().map(|&k| Assignment { resource: r, instance: k }));
                }
            }
        }
        out
    }

    pub fn has_possible_assignment(&self, model: &ProcessModel) -> bool {
        self.available().any(|r| (0..model.n_activities()).any(|a| !self.waiting_by_activity[a].is_empty() && model.is_eligible(r, a)))
    }

    pub fn is_possible(&self, model: &ProcessModel, a: Assignment) -> bool {
        a.instance < self.instances.len()
            && self.available.contains(&a.resource)
            && self.waiting.contains(&a.instance)
            && model.is_eligible(a.resource, self.instances[a.instance].activity)
    }
}
