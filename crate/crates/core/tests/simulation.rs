use bpalloc::model::{builtin_scenario, Branch, CaseProgress, JoinState, ProcessModel, RoutingGraph, Scenario};
use bpalloc::policies::{Decision, DecisionContext, FifoPolicy, MatchingPolicy, Policy, RandomPolicy, SptPolicy};
use bpalloc::sim::{run_episode_with, InstanceState, Lifecycle, SimOptions, Simulation};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::sync::Arc;

/// Probability that a token entering `from` leaves nothing behind, found
/// by enumerating every sequence of XOR choices.
fn brute_finish(graph: &RoutingGraph, from: usize, joins: &JoinState, script: &mut Vec<usize>) -> f64 {
    let mut j = joins.clone();
    let mut spawned = Vec::new();
    let mut used = 0;
    let mut prob = 1.0;
    let mut open: Option<Vec<f64>> = None;
    graph.propagate(
        from,
        &mut j,
        &mut |branches: &[Branch]| {
            if used < script.len() {
                let pick = script[used];
                used += 1;
                prob *= branches[pick].probability;
                pick
            } else {
                open.get_or_insert_with(|| branches.iter().map(|b| b.probability).collect());
                0
            }
        },
        &mut spawned,
    );
    match open {
        Some(probs) => probs
            .iter()
            .enumerate()
            .filter(|(_, p)| **p > 0.0)
            .map(|(i, _)| {
                script.push(i);
                let v = brute_finish(graph, from, joins, script);
                script.pop();
                v
            })
            .sum(),
        None if spawned.is_empty() && j.is_empty() => prob,
        None => 0.0,
    }
}

fn oracle_prob_fin(model: &ProcessModel, progress: &CaseProgress, node: usize) -> f64 {
    if progress.pending > 1 {
        return 0.0;
    }
    brute_finish(&model.routing, model.routing.after_activity(node), &progress.joins, &mut Vec::new())
}

fn baseline(which: u8, seed: u64) -> Box<dyn Policy> {
    match which % 4 {
        0 => Box::new(SptPolicy),
        1 => Box::new(FifoPolicy),
        2 => Box::new(RandomPolicy::new(seed)),
        _ => Box::new(MatchingPolicy::default()),
    }
}

fn check_state(sim: &Simulation) {
    let st = sim.state();
    let model = sim.model();
    let n = model.n_resources();
    let available: Vec<usize> = st.available().collect();
    let busy: Vec<usize> = st.busy().collect();
    assert_eq!(available.len() + busy.len(), n);
    for r in 0..n {
        assert_ne!(available.contains(&r), busy.contains(&r));
    }
    for a in st.assignments() {
        assert_eq!(st.instance(a.instance).state, InstanceState::Processing);
        assert_eq!(st.instance(a.instance).resource, Some(a.resource));
    }
    for k in st.waiting() {
        assert_eq!(k.state, InstanceState::Waiting);
    }
    assert_eq!(st.all_cases().len(), sim.completed_cases() + st.n_open_cases());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn state_invariants_hold_along_episodes(scenario in 0..Scenario::ALL.len(), which in 0u8..4, seed in any::<u64>(), postpone_every in 0usize..5) {
        let model = Arc::new(builtin_scenario(Scenario::ALL[scenario], 0.5).unwrap());
        let mut sim = Simulation::new(Arc::clone(&model), seed).unwrap();
        let mut policy = baseline(which, seed);
        policy.reset(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let horizon = 200.0;
        let mut step = 0usize;
        let mut last_time = 0.0;
        while !sim.advance_to_next_decision(horizon).is_horizon() {
            check_state(&sim);
            prop_assert!(sim.time() >= last_time);
            last_time = sim.time();
            for k in sim.state().waiting() {
                let case = sim.state().case(k.case);
                let p = model.prob_fin(&case.progress, k.node);
                prop_assert!((p - oracle_prob_fin(&model, &case.progress, k.node)).abs() < 1e-12);
            }
            step += 1;
            if postpone_every > 0 && step.is_multiple_of(postpone_every) {
                sim.postpone(horizon);
                continue;
            }
            let ctx = DecisionContext::new(sim.state(), &model);
            let d = policy.decide(&ctx, &mut rng);
            match d {
                Decision::Assign(a) => {
                    prop_assert!(ctx.possible().contains(&a));
                    sim.apply_assignment(a).unwrap();
                }
                Decision::Postpone => prop_assert!(false, "baselines never postpone"),
            }
            check_state(&sim);
        }
        check_state(&sim);
        prop_assert_eq!(sim.time(), horizon);
    }

    #[test]
    fn traces_are_ordered_and_paired(scenario in 0..Scenario::ALL.len(), which in 0u8..4, seed in any::<u64>()) {
        let model = Arc::new(builtin_scenario(Scenario::ALL[scenario], 0.5).unwrap());
        let opts = SimOptions { record_trace: true };
        let s = run_episode_with(&model, &mut baseline(which, seed), 300.0, seed, opts).unwrap();
        let mut by_case: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        let mut running: BTreeMap<usize, (usize, f64)> = BTreeMap::new();
        let mut busy = vec![0.0; model.n_resources()];
        for e in &s.trace {
            by_case.entry(e.case).or_default().push(e.time);
            let r = e.resource.unwrap();
            match e.lifecycle {
                Lifecycle::Start => prop_assert!(running.insert(r, (e.case, e.time)).is_none()),
                Lifecycle::Complete => {
                    let (case, start) = running.remove(&r).unwrap();
                    prop_assert_eq!(case, e.case);
                    busy[r] += e.time - start;
                }
            }
        }
        for times in by_case.values() {
            prop_assert!(times.windows(2).all(|w| w[0] <= w[1]));
        }
        for (r, (_, start)) in running {
            busy[r] += s.horizon - start;
        }
        for (a, b) in busy.iter().zip(&s.busy_time) {
            prop_assert!((a - b).abs() < 1e-9);
        }
        for u in &s.utilization {
            prop_assert!((0.0..=1.0).contains(u));
        }
        prop_assert_eq!(s.arrived_cases, s.completed_cases + s.truncated_cycle_times.len());
        let again = run_episode_with(&model, &mut baseline(which, seed), 300.0, seed, opts).unwrap();
        prop_assert_eq!(s, again);
    }
}

#[test]
fn composite_cases_execute_eleven_activities() {
    for scenario in [Scenario::Composite, Scenario::CompositeReversed, Scenario::CompositeParallel] {
        let model = Arc::new(builtin_scenario(scenario, 0.5).unwrap());
        let s = run_episode_with(&model, &mut SptPolicy, 2000.0, 3, SimOptions { record_trace: true }).unwrap();
        let mut done: BTreeMap<usize, usize> = BTreeMap::new();
        for e in s.trace.iter().filter(|e| e.lifecycle == Lifecycle::Complete) {
            *done.entry(e.case).or_default() += 1;
        }
        let complete: Vec<usize> = done.values().copied().filter(|&n| n == 11).collect();
        assert_eq!(complete.len(), s.completed_cases, "{scenario}");
        assert!(done.values().all(|&n| n <= 11));
    }
}

#[test]
fn common_random_numbers_share_arrivals() {
    let model = Arc::new(builtin_scenario(Scenario::HighUtilization, 0.5).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..5 {
        let seed: u64 = rng.random();
        let arrivals = |policy: &mut dyn Policy| {
            let mut sim = Simulation::new(Arc::clone(&model), seed).unwrap();
            sim.run(policy, 500.0).unwrap();
            let times: Vec<f64> = sim.state().all_cases().iter().map(|c| c.arrival).collect();
            (times, sim.stats())
        };
        let (ta, a) = arrivals(&mut SptPolicy);
        let (tb, b) = arrivals(&mut RandomPolicy::new(seed));
        assert!(ta.len() > 100);
        assert_eq!(ta, tb);
        assert_ne!(a.busy_time, b.busy_time);
    }
}
