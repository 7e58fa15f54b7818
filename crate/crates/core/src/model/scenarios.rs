//! Built-in scenario catalog: six two-activity, two-resource processes and
//! three composites assembled from them.

use super::{
    load_model, Activity, ArrivalPattern, ArrivalSpec, Branch, EligibilityMap, ModelError, Node, NodeKind, ProcessModel, Resource,
    RoutingGraph, ServiceTimeTable,
};
use std::fmt;
use std::str::FromStr;
use std::sync::LazyLock;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scenario {
    LowUtilization,
    HighUtilization,
    SlowServer,
    SlowDownstream,
    NNetwork,
    Parallel,
    Composite,
    CompositeReversed,
    CompositeParallel,
}

impl Scenario {
    pub const ALL: [Scenario; 9] = [
        Scenario::LowUtilization,
        Scenario::HighUtilization,
        Scenario::SlowServer,
        Scenario::SlowDownstream,
        Scenario::NNetwork,
        Scenario::Parallel,
        Scenario::Composite,
        Scenario::CompositeReversed,
        Scenario::CompositeParallel,
    ];

    /// The six elementary scenarios, in catalog order.
    pub const BASIC: [Scenario; 6] = [
        Scenario::LowUtilization,
        Scenario::HighUtilization,
        Scenario::SlowServer,
        Scenario::SlowDownstream,
        Scenario::NNetwork,
        Scenario::Parallel,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::LowUtilization => "low_utilization",
            Scenario::HighUtilization => "high_utilization",
            Scenario::SlowServer => "slow_server",
            Scenario::SlowDownstream => "slow_downstream",
            Scenario::NNetwork => "n_network",
            Scenario::Parallel => "parallel",
            Scenario::Composite => "composite",
            Scenario::CompositeReversed => "composite_reversed",
            Scenario::CompositeParallel => "composite_parallel",
        }
    }

    /// Shipped scenario file for an elementary scenario.
    pub fn config_text(self) -> Option<&'static str> {
        Some(match self {
            Scenario::LowUtilization => include_str!("../../scenarios/low_utilization.toml"),
            Scenario::HighUtilization => include_str!("../../scenarios/high_utilization.toml"),
            Scenario::SlowServer => include_str!("../../scenarios/slow_server.toml"),
            Scenario::SlowDownstream => include_str!("../../scenarios/slow_downstream.toml"),
            Scenario::NNetwork => include_str!("../../scenarios/n_network.toml"),
            Scenario::Parallel => include_str!("../../scenarios/parallel.toml"),
            _ => return None,
        })
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Scenario::ALL.into_iter().find(|sc| sc.name() == s).ok_or_else(|| ModelError::UnknownScenario(s.to_string()))
    }
}

/// Daily arrival-rate pattern: period 250, peak rate 0.88, time-average 0.5.
pub static DEFAULT_PATTERN: LazyLock<ArrivalPattern> = LazyLock::new(|| ArrivalPattern {
    period: 250.0,
    lambda_max: 0.88,
    mean_rate: Some(0.5),
    curve: vec![
        (0.0, 0.08),
        (25.0, 0.36),
        (50.0, 0.72),
        (75.0, 0.88),
        (100.0, 0.68),
        (125.0, 0.58),
        (150.0, 0.78),
        (175.0, 0.64),
        (200.0, 0.20),
        (225.0, 0.08),
    ],
});

/// A catalog scenario with constant Poisson arrivals at rate `lambda`.
pub fn builtin_scenario(scenario: Scenario, lambda: f64) -> Result<ProcessModel, ModelError> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(ModelError::BadRate(lambda));
    }
    builtin_with_arrivals(scenario, ArrivalSpec::Constant { rate: lambda })
}

/// A catalog scenario with the given external arrival process.
pub fn builtin_with_arrivals(scenario: Scenario, arrivals: ArrivalSpec) -> Result<ProcessModel, ModelError> {
    let mut model = match scenario {
        Scenario::Composite => sequential(&Scenario::BASIC)?,
        Scenario::CompositeReversed => {
            let mut order = Scenario::BASIC;
            order.reverse();
            sequential(&order)?
        }
        Scenario::CompositeParallel => parallel()?,
        basic => load_model(basic.config_text().expect("elementary scenarios ship a file"))?,
    };
    model.name = scenario.name().to_string();
    model.arrivals = arrivals;
    model.validate().into_result()?;
    Ok(model)
}

/// Copies the parts of elementary models into one model. Each part's
/// start node is dropped and its end node becomes a single-branch XOR that
/// forwards to `exit_of(part)`.
struct Assembly {
    activities: Vec<Activity>,
    resources: Vec<Resource>,
    eligibility: Vec<Vec<usize>>,
    means: Vec<(usize, usize, f64)>,
    nodes: Vec<Node>,
}

struct PlacedPart {
    entry: usize,
    /// Index of the node that replaced the part's end node.
    exit: usize,
}

impl Assembly {
    fn new() -> Self {
        Assembly { activities: Vec::new(), resources: Vec::new(), eligibility: Vec::new(), means: Vec::new(), nodes: Vec::new() }
    }

    fn place(&mut self, part: &ProcessModel, prefix: &str) -> PlacedPart {
        let a_off = self.activities.len();
        let r_off = self.resources.len();
        for a in &part.activities {
            self.activities.push(Activity { id: a.id.clone(), index: self.activities.len() + 1 });
        }
        for r in &part.resources {
            self.resources.push(Resource { id: r.id.clone(), index: self.resources.len() + 1 });
        }
        for a in 0..part.n_activities() {
            self.eligibility.push(part.eligibility.resources_for(a).iter().map(|r| r + r_off).collect());
            for &r in part.eligibility.resources_for(a) {
                self.means.push((r + r_off, a + a_off, part.mean(r, a)));
            }
        }
        let g = &part.routing;
        let start = g.start().expect("valid part has a start");
        let ends: Vec<usize> = (0..g.len()).filter(|&i| matches!(g.node(i).kind, NodeKind::End)).collect();
        assert_eq!(ends.len(), 1, "elementary scenarios have one end node");
        // old index -> new index, skipping the start node
        let base = self.nodes.len();
        let mut map = vec![usize::MAX; g.len()];
        let mut next = base;
        for (i, slot) in map.iter_mut().enumerate() {
            if i != start {
                *slot = next;
                next += 1;
            }
        }
        for (i, node) in g.nodes().iter().enumerate() {
            if i == start {
                continue;
            }
            let kind = match &node.kind {
                NodeKind::Activity { activity, next } => NodeKind::Activity { activity: activity + a_off, next: map[*next] },
                NodeKind::Xor { branches } => NodeKind::Xor {
                    branches: branches.iter().map(|b| Branch { target: map[b.target], probability: b.probability }).collect(),
                },
                NodeKind::AndSplit { targets } => NodeKind::AndSplit { targets: targets.iter().map(|t| map[*t]).collect() },
                NodeKind::AndJoin { next } => NodeKind::AndJoin { next: map[*next] },
                // exit target patched by the caller
                NodeKind::End => NodeKind::Xor { branches: vec![Branch { target: usize::MAX, probability: 1.0 }] },
                NodeKind::Start { .. } => unreachable!(),
            };
            self.nodes.push(Node::new(format!("{prefix}.{}", node.id), kind));
        }
        let entry = match g.node(start).kind {
            NodeKind::Start { next } => map[next],
            _ => unreachable!(),
        };
        PlacedPart { entry, exit: map[ends[0]] }
    }

    fn connect(&mut self, exit: usize, target: usize) {
        match &mut self.nodes[exit].kind {
            NodeKind::Xor { branches } => branches[0].target = target,
            _ => unreachable!("exit nodes are single-branch xors"),
        }
    }

    fn push(&mut self, id: &str, kind: NodeKind) -> usize {
        self.nodes.push(Node::new(id, kind));
        self.nodes.len() - 1
    }

    fn finish(self) -> ProcessModel {
        let mut service_times = ServiceTimeTable::new(self.resources.len(), self.activities.len());
        for (r, a, m) in self.means {
            service_times.set(r, a, m);
        }
        ProcessModel {
            name: String::new(),
            activities: self.activities,
            resources: self.resources,
            eligibility: EligibilityMap::new(self.eligibility),
            service_times,
            routing: RoutingGraph::new(self.nodes),
            arrivals: ArrivalSpec::Constant { rate: 0.5 },
        }
    }
}

fn elementary(s: Scenario) -> Result<ProcessModel, ModelError> {
    load_model(s.config_text().expect("elementary scenario"))
}

fn sequential(order: &[Scenario]) -> Result<ProcessModel, ModelError> {
    let mut asm = Assembly::new();
    let start = asm.push("start", NodeKind::Start { next: usize::MAX });
    let mut placed = Vec::new();
    for &s in order {
        placed.push(asm.place(&elementary(s)?, s.name()));
    }
    let end = asm.push("end", NodeKind::End);
    asm.nodes[start].kind = NodeKind::Start { next: placed[0].entry };
    for i in 0..placed.len() {
        let target = placed.get(i + 1).map_or(end, |p| p.entry);
        asm.connect(placed[i].exit, target);
    }
    Ok(asm.finish())
}

fn parallel() -> Result<ProcessModel, ModelError> {
    let mut asm = Assembly::new();
    let start = asm.push("start", NodeKind::Start { next: usize::MAX });
    let split = asm.push("split", NodeKind::AndSplit { targets: Vec::new() });
    let mut placed = Vec::new();
    for s in Scenario::BASIC {
        placed.push(asm.place(&elementary(s)?, s.name()));
    }
    let end = asm.push("end", NodeKind::End);
    let join = asm.push("join", NodeKind::AndJoin { next: end });
    asm.nodes[start].kind = NodeKind::Start { next: split };
    asm.nodes[split].kind = NodeKind::AndSplit { targets: placed.iter().map(|p| p.entry).collect() };
    for p in &placed {
        asm.connect(p.exit, join);
    }
    Ok(asm.finish())
}
