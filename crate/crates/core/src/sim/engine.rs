use super::arrivals::{exp, ArrivalProcess};
use super::state::{ActivityInstance, Assignment, Case, Event, ExecutionState, InstanceState, Lifecycle};
use super::stats::EpisodeStats;
use super::SimError;
use crate::model::{CaseProgress, JoinState, ProcessModel};
use crate::policies::{Decision, DecisionContext, Policy};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::sync::Arc;

pub const DEFAULT_HORIZON: f64 = 5000.0;

/// Stream numbers of the per-run random number generators.
const ARRIVAL_STREAM: u64 = 1;
const SERVICE_STREAM: u64 = 2;
const ROUTING_STREAM: u64 = 3;
const POLICY_STREAM: u64 = 4;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Result of advancing the simulation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Step {
    /// At least one assignment is possible at this time.
    Decision {
        time: f64,
    },
    HorizonReached {
        time: f64,
    },
}

impl Step {
    pub fn is_horizon(self) -> bool {
        matches!(self, Step::HorizonReached { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum EventKind {
    Completion { resource: usize },
    Arrival,
}

#[derive(Debug, Clone, Copy)]
struct Scheduled {
    time: f64,
    seq: u64,
    kind: EventKind,
}

impl Scheduled {
    /// Completions precede arrivals at equal times; then scheduling order.
    fn key(&self) -> (f64, u8, u64) {
        let class = match self.kind {
            EventKind::Completion { .. } => 0,
            EventKind::Arrival => 1,
        };
        (self.time, class, self.seq)
    }
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Scheduled {}
impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> Ordering {
        let (t1, c1, s1) = self.key();
        let (t2, c2, s2) = other.key();
        t1.total_cmp(&t2).then(c1.cmp(&c2)).then(s1.cmp(&s2))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SimOptions {
    /// Keep the full event trace in the episode statistics.
    pub record_trace: bool,
}

/// One simulation run of a process model.
#[derive(Debug, Clone)]
pub struct Simulation {
    model: Arc<ProcessModel>,
    state: ExecutionState,
    queue: BinaryHeap<Reverse<Scheduled>>,
    seq: u64,
    arrivals: ArrivalProcess,
    service_rng: ChaCha8Rng,
    routing_rng: ChaCha8Rng,
    policy_rng: ChaCha8Rng,
    options: SimOptions,
    ended: bool,
    busy_time: Vec<f64>,
    cycle_times: Vec<f64>,
    reward_total: f64,
    assignments_made: usize,
    postpones: usize,
    trace: Vec<Event>,
}

impl Simulation {
    pub fn new(model: Arc<ProcessModel>, seed: u64) -> Result<Self, SimError> {
        Self::with_options(model, seed, SimOptions::default())
    }

    pub fn with_options(model: Arc<ProcessModel>, seed: u64, options: SimOptions) -> Result<Self, SimError> {
        model.validate().into_result()?;
        let state = ExecutionState::new(&model);
        let arrivals = ArrivalProcess::new(model.arrivals.clone(), stream(seed, ARRIVAL_STREAM));
        let n_resources = model.n_resources();
        let mut sim = Simulation {
            model,
            state,
            queue: BinaryHeap::new(),
            seq: 0,
            arrivals,
            service_rng: stream(seed, SERVICE_STREAM),
            routing_rng: stream(seed, ROUTING_STREAM),
            policy_rng: stream(seed, POLICY_STREAM),
            options,
            ended: false,
            busy_time: vec![0.0; n_resources],
            cycle_times: Vec::new(),
            reward_total: 0.0,
            assignments_made: 0,
            postpones: 0,
            trace: Vec::new(),
        };
        let first = sim.arrivals.next_arrival();
        sim.schedule(first, EventKind::Arrival);
        Ok(sim)
    }

    pub fn model(&self) -> &Arc<ProcessModel> {
        &self.model
    }

    pub fn state(&self) -> &ExecutionState {
        &self.state
    }

    pub fn time(&self) -> f64 {
        self.state.time
    }

    pub fn is_ended(&self) -> bool {
        self.ended
    }

    /// Sum of `1 / (cycle time + 1)` over cases completed so far.
    pub fn reward_total(&self) -> f64 {
        self.reward_total
    }

    pub fn completed_cases(&self) -> usize {
        self.cycle_times.len()
    }

    pub fn cycle_times(&self) -> &[f64] {
        &self.cycle_times
    }

    pub fn possible_assignments(&self) -> Vec<Assignment> {
        self.state.possible_assignments(&self.model)
    }

    pub fn has_possible_assignment(&self) -> bool {
        self.state.has_possible_assignment(&self.model)
    }

    pub fn policy_rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.policy_rng
    }

    /// Time of the next arrival already scheduled.
    pub fn next_arrival_time(&self) -> f64 {
        self.arrivals.last()
    }

    fn schedule(&mut self, time: f64, kind: EventKind) {
        self.seq += 1;
        self.queue.push(Reverse(Scheduled { time, seq: self.seq, kind }));
    }

    /// Starts processing `a.instance` on `a.resource` at the current time.
    pub fn apply_assignment(&mut self, a: Assignment) -> Result<(), SimError> {
        if self.ended || !self.state.is_possible(&self.model, a) {
            return Err(SimError::InfeasibleAssignment { resource: a.resource, instance: a.instance });
        }
        let now = self.state.time;
        let st = &mut self.state;
        let inst = &mut st.instances[a.instance];
        inst.state = InstanceState::Processing;
        inst.started = Some(now);
        inst.resource = Some(a.resource);
        let activity = inst.activity;
        let case = inst.case;
        st.waiting.remove(&a.instance);
        st.waiting_by_activity[activity].remove(&a.instance);
        st.available.remove(&a.resource);
        st.busy_with[a.resource] = Some(a.instance);
        st.version += 1;
        self.assignments_made += 1;
        if self.options.record_trace {
            self.trace.push(Event { activity, case, time: now, resource: Some(a.resource), lifecycle: Lifecycle::Start });
        }
        let duration = exp(1.0 / self.model.mean(a.resource, activity), &mut self.service_rng);
        self.schedule(now + duration, EventKind::Completion { resource: a.resource });
        Ok(())
    }

    /// Processes events until an assignment is possible or the horizon is
    /// reached. Returns immediately if an assignment is already possible.
    pub fn advance_to_next_decision(&mut self, horizon: f64) -> Step {
        loop {
            if self.ended {
                return Step::HorizonReached { time: self.state.time };
            }
            if self.has_possible_assignment() {
                return Step::Decision { time: self.state.time };
            }
            if !self.process_next_event(horizon) {
                return self.end(horizon);
            }
        }
    }

    /// Lets time pass until the unassigned or available set changes, then
    /// continues to the next decision point.
    pub fn postpone(&mut self, horizon: f64) -> Step {
        self.postpones += 1;
        let before = self.state.version;
        while !self.ended && self.state.version == before {
            if !self.process_next_event(horizon) {
                return self.end(horizon);
            }
        }
        self.advance_to_next_decision(horizon)
    }

    fn end(&mut self, horizon: f64) -> Step {
        if !self.ended {
            self.ended = true;
            self.state.time = self.state.time.max(horizon);
        }
        Step::HorizonReached { time: self.state.time }
    }

    /// Processes one event if its time is within the horizon.
    fn process_next_event(&mut self, horizon: f64) -> bool {
        match self.queue.peek() {
            Some(Reverse(ev)) if ev.time <= horizon => {}
            _ => return false,
        }
        let Reverse(ev) = self.queue.pop().expect("peeked");
        self.state.time = ev.time;
        match ev.kind {
            EventKind::Arrival => {
                self.on_arrival();
                let next = self.arrivals.next_arrival();
                self.schedule(next, EventKind::Arrival);
            }
            EventKind::Completion { resource } => self.on_completion(resource),
        }
        true
    }

    fn route(&mut self, case: usize, from: usize) {
        let now = self.state.time;
        let mut joins = std::mem::take(&mut self.state.cases[case].progress.joins);
        let mut spawned = Vec::new();
        let rng = &mut self.routing_rng;
        self.model.routing.propagate(from, &mut joins, &mut |branches| pick_branch(branches, rng), &mut spawned);
        for node in spawned {
            let activity = match self.model.routing.node(node).kind {
                crate::model::NodeKind::Activity { activity, .. } => activity,
                _ => unreachable!(),
            };
            let id = self.state.instances.len();
            self.state.instances.push(ActivityInstance {
                id,
                case,
                activity,
                node,
                state: InstanceState::Waiting,
                created: now,
                started: None,
                resource: None,
            });
            self.state.waiting.insert(id);
            self.state.waiting_by_activity[activity].insert(id);
            self.state.version += 1;
            let c = &mut self.state.cases[case];
            c.instances.push(id);
            c.progress.pending += 1;
        }
        let c = &mut self.state.cases[case];
        c.progress.joins = joins;
        if c.progress.is_finished() {
            c.completion = Some(now);
            let ct = now - c.arrival;
            self.state.open.remove(&case);
            self.cycle_times.push(ct);
            self.reward_total += 1.0 / (ct + 1.0);
        }
    }

    fn on_arrival(&mut self) {
        let id = self.state.cases.len();
        self.state.cases.push(Case {
            id,
            arrival: self.state.time,
            completion: None,
            progress: CaseProgress { pending: 0, joins: JoinState::new() },
            instances: Vec::new(),
        });
        self.state.open.insert(id);
        let start = self.model.routing.start().expect("validated model has a start node");
        self.route(id, start);
    }

    fn on_completion(&mut self, resource: usize) {
        let now = self.state.time;
        let k = self.state.busy_with[resource].take().expect("completion for an idle resource");
        self.state.available.insert(resource);
        self.state.version += 1;
        let inst = &mut self.state.instances[k];
        inst.state = InstanceState::Complete;
        let started = inst.started.expect("processing instances have a start time");
        let (case, activity, node) = (inst.case, inst.activity, inst.node);
        self.busy_time[resource] += now - started;
        if self.options.record_trace {
            self.trace.push(Event { activity, case, time: now, resource: Some(resource), lifecycle: Lifecycle::Complete });
        }
        self.state.cases[case].progress.pending -= 1;
        let next = self.model.routing.after_activity(node);
        self.route(case, next);
    }

    /// Asks `policy` for decisions until the horizon. Requires that no
    /// decision has been made on this simulation yet.
    pub fn run(&mut self, policy: &mut dyn Policy, horizon: f64) -> Result<(), SimError> {
        loop {
            if self.advance_to_next_decision(horizon).is_horizon() {
                return Ok(());
            }
            let ctx = DecisionContext::new(&self.state, &self.model);
            match policy.decide(&ctx, &mut self.policy_rng) {
                Decision::Assign(a) => self.apply_assignment(a)?,
                Decision::Postpone => {
                    if self.postpone(horizon).is_horizon() {
                        return Ok(());
                    }
                }
            }
        }
    }

    /// Statistics of the run so far; open cases are truncated at the
    /// current clock and in-flight processing counts as busy time.
    pub fn stats(&self) -> EpisodeStats {
        let now = self.state.time;
        let truncated: Vec<f64> = self.state.open_cases().map(|c| now - c.arrival).collect();
        let mut busy = self.busy_time.clone();
        for a in self.state.assignments() {
            busy[a.resource] += now - self.state.instances[a.instance].started.unwrap_or(now);
        }
        let utilization = busy.iter().map(|b| if now > 0.0 { (b / now).clamp(0.0, 1.0) } else { 0.0 }).collect();
        let n = self.cycle_times.len() + truncated.len();
        let total: f64 = self.cycle_times.iter().sum::<f64>() + truncated.iter().sum::<f64>();
        EpisodeStats {
            horizon: now,
            mean_cycle_time: if n > 0 { total / n as f64 } else { 0.0 },
            completed_cases: self.cycle_times.len(),
            arrived_cases: self.state.cases.len(),
            cycle_times: self.cycle_times.clone(),
            truncated_cycle_times: truncated,
            busy_time: busy,
            utilization,
            reward_total: self.reward_total,
            assignments: self.assignments_made,
            postpones: self.postpones,
            trace: self.trace.clone(),
        }
    }
}

fn pick_branch(branches: &[crate::model::Branch], rng: &mut ChaCha8Rng) -> usize {
    if branches.len() == 1 {
        return 0;
    }
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, b) in branches.iter().enumerate() {
        acc += b.probability;
        if u < acc {
            return i;
        }
    }
    // rounding: fall back to the last branch with positive probability
    branches.iter().rposition(|b| b.probability > 0.0).unwrap_or(branches.len() - 1)
}

/// Runs one episode of `policy` on `model` and returns its statistics.
pub fn run_episode(model: &Arc<ProcessModel>, policy: &mut dyn Policy, horizon: f64, seed: u64) -> Result<EpisodeStats, SimError> {
    run_episode_with(model, policy, horizon, seed, SimOptions::default())
}

pub fn run_episode_with(
    model: &Arc<ProcessModel>,
    policy: &mut dyn Policy,
    horizon: f64,
    seed: u64,
    options: SimOptions,
) -> Result<EpisodeStats, SimError> {
    policy.reset(seed);
    let mut sim = Simulation::with_options(Arc::clone(model), seed, options)?;
    sim.run(policy, horizon)?;
    Ok(sim.stats())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{builtin_scenario, load_model, Scenario};
    use crate::policies::SptPolicy;

    const SINGLE: &str = r#"
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

    struct AlwaysPostpone;

    impl Policy for AlwaysPostpone {
        fn name(&self) -> String {
            "postpone".into()
        }
        fn decide(&mut self, _: &DecisionContext, _: &mut ChaCha8Rng) -> Decision {
            Decision::Postpone
        }
    }

    fn single() -> Arc<ProcessModel> {
        Arc::new(load_model(SINGLE).unwrap())
    }

    fn scenario(s: Scenario) -> Arc<ProcessModel> {
        Arc::new(builtin_scenario(s, 0.5).unwrap())
    }

    #[test]
    fn init_is_deterministic_and_idle() {
        let m = scenario(Scenario::Composite);
        let a = Simulation::new(Arc::clone(&m), 7).unwrap();
        let b = Simulation::new(Arc::clone(&m), 7).unwrap();
        assert_eq!(a.state(), b.state());
        assert_eq!(a.next_arrival_time(), b.next_arrival_time());
        assert_eq!(a.state().n_available(), 12);
        assert_eq!(a.state().n_waiting(), 0);
        assert_eq!(a.time(), 0.0);
    }

    #[test]
    fn first_decision_is_the_first_arrival() {
        let mut sim = Simulation::new(scenario(Scenario::LowUtilization), 3).unwrap();
        let first = sim.next_arrival_time();
        assert_eq!(sim.advance_to_next_decision(DEFAULT_HORIZON), Step::Decision { time: first });
        assert_eq!(sim.state().n_open_cases(), 1);
        assert_eq!(sim.state().n_waiting(), 1);
        // two idle resources can both serve the one instance
        assert_eq!(sim.possible_assignments().len(), 2);
    }

    #[test]
    fn assignment_updates_sets() {
        let mut sim = Simulation::new(single(), 1).unwrap();
        sim.advance_to_next_decision(DEFAULT_HORIZON);
        let d = sim.possible_assignments();
        assert_eq!(d.len(), 1);
        sim.apply_assignment(d[0]).unwrap();
        assert_eq!(sim.state().n_waiting(), 0);
        assert!(!sim.state().is_available(0));
        assert_eq!(sim.state().assignments().count(), 1);
        assert!(sim.possible_assignments().is_empty());
        assert!(matches!(sim.apply_assignment(d[0]), Err(SimError::InfeasibleAssignment { .. })));
    }

    #[test]
    fn simultaneous_assignments_share_the_clock() {
        let m = scenario(Scenario::LowUtilization);
        let mut sim = Simulation::with_options(m, 11, SimOptions { record_trace: true }).unwrap();
        // postpone until two instances wait, then start both at once
        sim.advance_to_next_decision(DEFAULT_HORIZON);
        while sim.state().n_waiting() < 2 {
            sim.postpone(DEFAULT_HORIZON);
        }
        let t = sim.time();
        let first = sim.possible_assignments()[0];
        sim.apply_assignment(first).unwrap();
        let second = sim.possible_assignments()[0];
        sim.apply_assignment(second).unwrap();
        let starts: Vec<f64> = sim.stats().trace.iter().filter(|e| e.lifecycle == Lifecycle::Start).map(|e| e.time).collect();
        assert_eq!(starts, vec![t, t]);
    }

    #[test]
    fn n_network_i_needs_r10() {
        let m = scenario(Scenario::NNetwork);
        let i = m.activity_index("I").unwrap();
        let r10 = m.resource_index("r10").unwrap();
        let mut st = ExecutionState::new(&m);
        st.available.remove(&r10);
        st.instances.push(ActivityInstance {
            id: 0,
            case: 0,
            activity: i,
            node: 0,
            state: InstanceState::Waiting,
            created: 0.0,
            started: None,
            resource: None,
        });
        st.waiting.insert(0);
        st.waiting_by_activity[i].insert(0);
        assert!(st.possible_assignments(&m).is_empty());
    }

    #[test]
    fn postpone_returns_at_the_completion() {
        // one busy server with a queue: the next decision is its completion
        let (mut sim, completion) = (0..100)
            .find_map(|seed| {
                let mut sim = Simulation::new(single(), seed).unwrap();
                sim.advance_to_next_decision(DEFAULT_HORIZON);
                sim.apply_assignment(sim.possible_assignments()[0]).unwrap();
                let completion = sim.queue.iter().find(|Reverse(e)| matches!(e.kind, EventKind::Completion { .. })).unwrap().0.time;
                (sim.next_arrival_time() < completion).then_some((sim, completion))
            })
            .unwrap();
        assert!(sim.process_next_event(DEFAULT_HORIZON));
        assert_eq!(sim.state().n_waiting(), 1);
        let before = sim.time();
        assert_eq!(sim.postpone(DEFAULT_HORIZON), Step::Decision { time: completion });
        assert!(completion > before);
    }

    #[test]
    fn postponing_in_an_empty_system_walks_the_arrivals() {
        let mut sim = Simulation::new(single(), 9).unwrap();
        let mut last = 0.0;
        sim.advance_to_next_decision(DEFAULT_HORIZON);
        for _ in 0..20 {
            let t = sim.time();
            assert!(t > last);
            last = t;
            sim.postpone(DEFAULT_HORIZON);
        }
    }

    #[test]
    fn always_postpone_truncates_open_cases() {
        let m = single();
        let horizon = 10.0;
        // find a seed with exactly one arrival before the horizon
        let seed = (0..1000)
            .find(|&s| {
                let mut p = AlwaysPostpone;
                run_episode(&m, &mut p, horizon, s).unwrap().arrived_cases == 1
            })
            .unwrap();
        let mut sim = Simulation::new(Arc::clone(&m), seed).unwrap();
        let arrival = sim.next_arrival_time();
        sim.run(&mut AlwaysPostpone, horizon).unwrap();
        let stats = sim.stats();
        assert_eq!(stats.completed_cases, 0);
        assert_eq!(stats.horizon, horizon);
        assert!((stats.mean_cycle_time - (horizon - arrival)).abs() < 1e-12);
    }

    #[test]
    fn horizon_is_reported_exactly() {
        let mut p = SptPolicy;
        let s = run_episode(&single(), &mut p, 50.0, 2).unwrap();
        assert_eq!(s.horizon, 50.0);
    }

    #[test]
    fn same_seed_same_stats() {
        let m = scenario(Scenario::Parallel);
        let opts = SimOptions { record_trace: true };
        let a = run_episode_with(&m, &mut SptPolicy, 500.0, 42, opts).unwrap();
        let b = run_episode_with(&m, &mut SptPolicy, 500.0, 42, opts).unwrap();
        assert_eq!(a, b);
        let c = run_episode_with(&m, &mut SptPolicy, 500.0, 43, opts).unwrap();
        assert_ne!(a.trace, c.trace);
    }

    #[test]
    fn parallel_case_completes_after_both_branches() {
        let m = scenario(Scenario::Parallel);
        let s = run_episode_with(&m, &mut SptPolicy, 300.0, 8, SimOptions { record_trace: true }).unwrap();
        // completed cases executed both K and L
        let mut done = 0;
        for case in 0..s.arrived_cases {
            let n = s.trace.iter().filter(|e| e.case == case && e.lifecycle == Lifecycle::Complete).count();
            if n == 2 {
                done += 1;
            }
        }
        assert_eq!(done, s.completed_cases);
    }

    #[test]
    fn busy_time_matches_trace() {
        let m = scenario(Scenario::HighUtilization);
        let s = run_episode_with(&m, &mut SptPolicy, 400.0, 4, SimOptions { record_trace: true }).unwrap();
        let mut busy = vec![0.0; m.n_resources()];
        let mut open: Vec<Option<f64>> = vec![None; m.n_resources()];
        for e in &s.trace {
            let r = e.resource.unwrap();
            match e.lifecycle {
                Lifecycle::Start => open[r] = Some(e.time),
                Lifecycle::Complete => busy[r] += e.time - open[r].take().unwrap(),
            }
        }
        for (r, start) in open.iter().enumerate() {
            if let Some(t) = start {
                busy[r] += s.horizon - t;
            }
        }
        for (a, b) in busy.iter().zip(&s.busy_time) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn mm1_mean_cycle_time() {
        // single server, lambda 0.5, mu 1: 1 / (mu - lambda) = 2
        let m = single();
        let n = 200;
        let total: f64 = (0..n).map(|s| run_episode(&m, &mut SptPolicy, DEFAULT_HORIZON, s).unwrap().mean_cycle_time).sum();
        let mean = total / n as f64;
        assert!((mean - 2.0).abs() < 0.1, "mean cycle time {mean}");
    }
}
