//! Routing graph of a process model and the token game that drives cases
//! through it.
//!
//! Nodes are referenced by position. A token entering a node behaves as
//! follows:
//!
//! * `Start` forwards to its successor.
//! * `Activity` stops and spawns a waiting activity instance; the token moves
//!   on once that instance completes.
//! * `Xor` forwards to exactly one branch, picked by probability.
//! * `AndSplit` forwards one token to each target.
//! * `AndJoin` holds tokens until one has arrived on every incoming edge.
//! * `End` consumes the token.
//!
//! A node with several incoming edges that is not an `AndJoin` merges
//! exclusively, which is how XOR branches reconverge.

use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub target: usize,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeKind {
    Start { next: usize },
    Activity { activity: usize, next: usize },
    Xor { branches: Vec<Branch> },
    AndSplit { targets: Vec<usize> },
    AndJoin { next: usize },
    End,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: String,
    pub kind: NodeKind,
}

impl Node {
    pub fn new(id: impl Into<String>, kind: NodeKind) -> Self {
        Node { id: id.into(), kind }
    }

    pub fn successors(&self) -> Vec<usize> {
        match &self.kind {
            NodeKind::Start { next } | NodeKind::Activity { next, .. } | NodeKind::AndJoin { next } => {
                vec![*next]
            }
            NodeKind::Xor { branches } => branches.iter().map(|b| b.target).collect(),
            NodeKind::AndSplit { targets } => targets.clone(),
            NodeKind::End => Vec::new(),
        }
    }
}

/// Partially filled AND-joins of one case: join node -> tokens received.
pub type JoinState = BTreeMap<usize, usize>;

/// Routing progress of a single case.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CaseProgress {
    /// Activity instances of the case that are waiting or processing.
    pub pending: usize,
    pub joins: JoinState,
}

impl CaseProgress {
    /// A case is finished once no instance is outstanding and no token
    /// rests at a join.
    pub fn is_finished(&self) -> bool {
        self.pending == 0 && self.joins.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoutingGraph {
    nodes: Vec<Node>,
    in_degree: Vec<usize>,
}

impl RoutingGraph {
    pub fn new(nodes: Vec<Node>) -> Self {
        let mut in_degree = vec![0; nodes.len()];
        for node in &nodes {
            for s in node.successors() {
                if s < in_degree.len() {
                    in_degree[s] += 1;
                }
            }
        }
        RoutingGraph { nodes, in_degree }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, idx: usize) -> &Node {
        &self.nodes[idx]
    }

    pub fn in_degree(&self, idx: usize) -> usize {
        self.in_degree[idx]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn find(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    pub fn start(&self) -> Option<usize> {
        self.nodes.iter().position(|n| matches!(n.kind, NodeKind::Start { .. }))
    }

    /// Successor of an activity node, i.e. where the token goes once the
    /// instance completes.
    pub fn after_activity(&self, node: usize) -> usize {
        match self.nodes[node].kind {
            NodeKind::Activity { next, .. } => next,
            _ => panic!("node {} is not an activity node", self.nodes[node].id),
        }
    }

    /// Moves one token into `node` and follows it until it rests. Activity
    /// nodes reached are appended to `spawned` in visiting order.
    ///
    /// `choose` picks a branch index for XOR nodes.
    pub fn propagate<F>(&self, node: usize, joins: &mut JoinState, choose: &mut F, spawned: &mut Vec<usize>)
    where
        F: FnMut(&[Branch]) -> usize,
    {
        let mut stack = vec![node];
        while let Some(n) = stack.pop() {
            match &self.nodes[n].kind {
                NodeKind::Start { next } => stack.push(*next),
                NodeKind::Activity { .. } => spawned.push(n),
                NodeKind::Xor { branches } => {
                    let pick = choose(branches);
                    stack.push(branches[pick].target);
                }
                NodeKind::AndSplit { targets } => {
                    // reversed so the first target is visited first
                    stack.extend(targets.iter().rev().copied());
                }
                NodeKind::AndJoin { next } => {
                    let count = joins.entry(n).or_insert(0);
                    *count += 1;
                    if *count >= self.in_degree[n] {
                        joins.remove(&n);
                        stack.push(*next);
                    }
                }
                NodeKind::End => {}
            }
        }
    }

    /// Probability that completing the instance at activity node `node`
    /// finishes its case, given the case's progress (which still counts the
    /// instance itself as pending).
    pub fn completion_probability(&self, progress: &CaseProgress, node: usize) -> f64 {
        if progress.pending > 1 {
            return 0.0;
        }
        let next = self.after_activity(node);
        self.finish_probability(vec![next], progress.joins.clone())
    }

    fn finish_probability(&self, mut stack: Vec<usize>, mut joins: JoinState) -> f64 {
        while let Some(n) = stack.pop() {
            match &self.nodes[n].kind {
                NodeKind::Start { next } => stack.push(*next),
                NodeKind::Activity { .. } => return 0.0,
                NodeKind::Xor { branches } => {
                    return branches
                        .iter()
                        .filter(|b| b.probability > 0.0)
                        .map(|b| {
                            let mut s = stack.clone();
                            s.push(b.target);
                            b.probability * self.finish_probability(s, joins.clone())
                        })
                        .sum();
                }
                NodeKind::AndSplit { targets } => stack.extend(targets.iter().rev().copied()),
                NodeKind::AndJoin { next } => {
                    let count = joins.entry(n).or_insert(0);
                    *count += 1;
                    if *count >= self.in_degree[n] {
                        joins.remove(&n);
                        stack.push(*next);
                    }
                }
                NodeKind::End => {}
            }
        }
        if joins.is_empty() {
            1.0
        } else {
            0.0
        }
    }

    /// Structural problems of the graph, as human-readable messages.
    pub(crate) fn violations(&self, n_activities: usize) -> Vec<String> {
        let mut out = Vec::new();
        let n = self.nodes.len();
        let starts: Vec<usize> = (0..n).filter(|&i| matches!(self.nodes[i].kind, NodeKind::Start { .. })).collect();
        if starts.len() != 1 {
            out.push(format!("routing must have exactly one start node, found {}", starts.len()));
        }
        let mut ids = std::collections::BTreeSet::new();
        for node in &self.nodes {
            if !ids.insert(node.id.as_str()) {
                out.push(format!("duplicate routing node id '{}'", node.id));
            }
        }
        let mut refs_ok = true;
        for node in &self.nodes {
            for s in node.successors() {
                if s >= n {
                    out.push(format!("node '{}' points to a missing node", node.id));
                    refs_ok = false;
                }
            }
            match &node.kind {
                NodeKind::Activity { activity, .. } if *activity >= n_activities => {
                    out.push(format!("node '{}' refers to an unknown activity", node.id));
                }
                NodeKind::Xor { branches } => {
                    if branches.is_empty() {
                        out.push(format!("xor '{}' has no branches", node.id));
                    }
                    if branches.iter().any(|b| !(0.0..=1.0).contains(&b.probability)) {
                        out.push(format!("xor '{}': branch probabilities must lie in [0, 1]", node.id));
                    }
                    let total: f64 = branches.iter().map(|b| b.probability).sum();
                    if (total - 1.0).abs() > 1e-9 {
                        out.push(format!("xor '{}': probabilities must sum to 1 (got {total})", node.id));
                    }
                }
                NodeKind::AndSplit { targets } if targets.len() < 2 => {
                    out.push(format!("and_split '{}' needs at least two targets", node.id));
                }
                _ => {}
            }
        }
        if !refs_ok {
            return out;
        }
        if self.topological_order().is_none() {
            out.push("routing graph must be acyclic".to_string());
            return out;
        }
        if let Some(&start) = starts.first() {
            let reach = self.reachable_from(start);
            if !(0..n).any(|i| reach[i] && matches!(self.nodes[i].kind, NodeKind::End)) {
                out.push("no end node is reachable from start".to_string());
            }
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if let NodeKind::AndSplit { targets } = &node.kind {
                if self.matching_join(i, targets).is_none() {
                    out.push(format!("and_split '{}' has no matching and_join", node.id));
                }
            }
            if let NodeKind::AndJoin { .. } = node.kind {
                if self.in_degree[i] < 2 {
                    out.push(format!("and_join '{}' needs at least two incoming edges", node.id));
                }
            }
        }
        out
    }

    fn reachable_from(&self, from: usize) -> Vec<bool> {
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![from];
        while let Some(n) = stack.pop() {
            if std::mem::replace(&mut seen[n], true) {
                continue;
            }
            stack.extend(self.nodes[n].successors());
        }
        seen
    }

    /// The nearest join reachable from every branch of the split whose
    /// in-degree equals the branch count.
    fn matching_join(&self, _split: usize, targets: &[usize]) -> Option<usize> {
        let reach: Vec<Vec<bool>> = targets.iter().map(|&t| self.reachable_from(t)).collect();
        let order = self.topological_order()?;
        order.into_iter().find(|&j| {
            matches!(self.nodes[j].kind, NodeKind::AndJoin { .. }) && self.in_degree[j] == targets.len() && reach.iter().all(|r| r[j])
        })
    }

    /// Kahn's algorithm; `None` when the graph has a cycle.
    pub fn topological_order(&self) -> Option<Vec<usize>> {
        let n = self.nodes.len();
        let mut indeg = self.in_degree.clone();
        let mut queue: std::collections::VecDeque<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(i) = queue.pop_front() {
            order.push(i);
            for s in self.nodes[i].successors() {
                indeg[s] -= 1;
                if indeg[s] == 0 {
                    queue.push_back(s);
                }
            }
        }
        (order.len() == n).then_some(order)
    }
}
