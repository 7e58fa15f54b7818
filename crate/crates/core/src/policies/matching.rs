use super::{Decision, DecisionContext, Policy};
use crate::sim::Assignment;
use rand_chacha::ChaCha8Rng;

/// Maximum-cardinality bipartite matching of minimum total cost.
///
/// `edges` holds `(left, right, cost)` triples. Returns the matched
/// `(left, right)` pairs sorted by left node. Uses successive shortest
/// augmenting paths, found with Bellman-Ford on the residual graph; every
/// intermediate flow is cost-optimal for its size, so stopping when no
/// augmenting path remains gives the cheapest maximum matching.
pub fn min_cost_matching(n_left: usize, n_right: usize, edges: &[(usize, usize, f64)]) -> Vec<(usize, usize)> {
    // node ids: source 0, left 1..=n_left, right after that, sink last
    let n = n_left + n_right + 2;
    let (source, sink) = (0, n - 1);
    let mut g = Residual::new(n);
    for l in 0..n_left {
        g.add(source, 1 + l, 0.0);
    }
    for r in 0..n_right {
        g.add(1 + n_left + r, sink, 0.0);
    }
    let mut edge_ids = Vec::with_capacity(edges.len());
    for &(l, r, c) in edges {
        assert!(l < n_left && r < n_right, "edge endpoint out of range");
        edge_ids.push(g.add(1 + l, 1 + n_left + r, c));
    }
    while let Some(path) = g.shortest_path(source, sink) {
        for e in path {
            g.cap[e] -= 1;
            g.cap[e ^ 1] += 1;
        }
    }
    let mut out: Vec<(usize, usize)> = edges.iter().zip(edge_ids).filter(|(_, id)| g.cap[*id] == 0).map(|(&(l, r, _), _)| (l, r)).collect();
    out.sort_unstable();
    out
}

struct Residual {
    head: Vec<Vec<usize>>,
    to: Vec<usize>,
    cap: Vec<i32>,
    cost: Vec<f64>,
}

impl Residual {
    fn new(n: usize) -> Self {
        Residual { head: vec![Vec::new(); n], to: Vec::new(), cap: Vec::new(), cost: Vec::new() }
    }

    /// Adds a unit-capacity arc and its reverse; returns the forward id.
    fn add(&mut self, from: usize, to: usize, cost: f64) -> usize {
        let id = self.to.len();
        self.head[from].push(id);
        self.to.push(to);
        self.cap.push(1);
        self.cost.push(cost);
        self.head[to].push(id + 1);
        self.to.push(from);
        self.cap.push(0);
        self.cost.push(-cost);
        id
    }

    fn shortest_path(&self, source: usize, sink: usize) -> Option<Vec<usize>> {
        let n = self.head.len();
        let mut dist = vec![f64::INFINITY; n];
        let mut via: Vec<Option<usize>> = vec![None; n];
        dist[source] = 0.0;
        // Bellman-Ford; the residual graph never has negative cycles here
        for _ in 0..n {
            let mut changed = false;
            for u in 0..n {
                if dist[u].is_infinite() {
                    continue;
                }
                for &e in &self.head[u] {
                    let v = self.to[e];
                    if self.cap[e] > 0 && dist[u] + self.cost[e] < dist[v] - 1e-12 {
                        dist[v] = dist[u] + self.cost[e];
                        via[v] = Some(e);
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        if dist[sink].is_infinite() {
            return None;
        }
        let mut path = Vec::new();
        let mut v = sink;
        while v != source {
            let e = via[v].expect("reachable nodes have a predecessor arc");
            path.push(e);
            v = self.to[e ^ 1];
        }
        Some(path)
    }
}

/// Matches idle resources to waiting instances with a min-cost maximum
/// matching on expected processing times, then emits the matched pairs one
/// per decision. The plan is rebuilt whenever the waiting or idle sets
/// changed other than by its own emitted assignments.
#[derive(Debug, Clone, Default)]
pub struct MatchingPolicy {
    plan: Vec<Assignment>,
    /// State version expected at the next call if nothing else happened.
    expected_version: Option<u64>,
    /// The assignment emitted last.
    last: Option<Assignment>,
}

impl MatchingPolicy {
    fn rebuild(&mut self, ctx: &DecisionContext<'_>) {
        let state = ctx.state;
        let model = ctx.model;
        let resources: Vec<usize> = state.available().collect();
        // per activity only the oldest instances that could possibly be served
        let mut instances = Vec::new();
        for a in 0..model.n_activities() {
            let servers = resources.iter().filter(|&&r| model.is_eligible(r, a)).count();
            instances.extend(state.waiting_of(a).take(servers));
        }
        let mut edges = Vec::new();
        for (li, &r) in resources.iter().enumerate() {
            for (ri, &k) in instances.iter().enumerate() {
                let a = state.instance(k).activity;
                if model.is_eligible(r, a) {
                    edges.push((li, ri, model.mean(r, a)));
                }
            }
        }
        let matching = min_cost_matching(resources.len(), instances.len(), &edges);
        self.plan = matching.into_iter().map(|(l, r)| Assignment { resource: resources[l], instance: instances[r] }).collect();
        self.plan.sort_unstable_by_key(|a| (a.resource, state.instance(a.instance).activity, a.instance));
        self.plan.reverse();
    }
}

impl Policy for MatchingPolicy {
    fn name(&self) -> String {
        "matching".into()
    }

    fn decide(&mut self, ctx: &DecisionContext<'_>, _rng: &mut ChaCha8Rng) -> Decision {
        // the plan stays valid only if our last pair was applied and nothing else happened
        let followed = self.last.is_some_and(|a| ctx.state.processing(a.resource) == Some(a.instance));
        if !followed || self.expected_version != Some(ctx.state.version()) || self.plan.is_empty() {
            self.rebuild(ctx);
        }
        match self.plan.pop() {
            Some(a) => {
                debug_assert!(ctx.state.is_possible(ctx.model, a));
                // applying the assignment bumps the version exactly once
                self.expected_version = Some(ctx.state.version() + 1);
                self.last = Some(a);
                Decision::Assign(a)
            }
            None => {
                self.expected_version = None;
                self.last = None;
                Decision::Postpone
            }
        }
    }

    fn reset(&mut self, _seed: u64) {
        self.plan.clear();
        self.expected_version = None;
        self.last = None;
    }
}
