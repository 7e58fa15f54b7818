//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use bpalloc::drl::{encode_state, masked_log_softmax, observation_len, ActionSpace, Activation, DrlEnv, ObsVariant, PolicyNet};
use bpalloc::harness::{compare, evaluate, EvalReport, PolicyFactory};
use bpalloc::model::{builtin_scenario, load_model, Scenario};
use bpalloc::policies::{min_cost_matching, FifoPolicy, Policy, RandomPolicy, SptPolicy};
use bpalloc::sim::{run_episode_with, SimOptions, Simulation, DEFAULT_HORIZON};
use bpalloc::svfa::{minimize, BoConfig, SvfaPolicy, WeightVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

type Check = Result<String, String>;
type Criterion = Box<dyn Fn() -> Check>;

const SINGLE: &str = r#"
name = "mm1"
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

fn factory<P: Policy + Clone + Send + Sync + 'static>(p: P) -> Arc<PolicyFactory> {
    Arc::new(move || Box::new(p.clone()) as Box<dyn Policy>)
}

fn queueing_oracle() -> Check {
    let model = Arc::new(load_model(SINGLE).map_err(|e| e.to_string())?);
    let r = evaluate(&model, &*factory(SptPolicy), 200, 5000.0, 1).map_err(|e| e.to_string())?;
    // M/M/1 sojourn time 1 / (mu - lambda)
    let exact = 1.0 / (1.0 - 0.5);
    let rel = (r.mean - exact).abs() / exact;
    let msg = format!("mean cycle time {:.4} vs {exact}, relative error {:.2}%", r.mean, rel * 100.0);
    if rel <= 0.05 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn score_policy_reduces_to_spt() -> Check {
    let weights = WeightVector::new([1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 100.0]);
    let opts = SimOptions { record_trace: true };
    let mut events = 0;
    for s in Scenario::BASIC {
        let model = Arc::new(builtin_scenario(s, 0.5).map_err(|e| e.to_string())?);
        for seed in 0..50 {
            let a = run_episode_with(&model, &mut SptPolicy, DEFAULT_HORIZON, seed, opts).map_err(|e| e.to_string())?;
            let b = run_episode_with(&model, &mut SvfaPolicy::new(weights), DEFAULT_HORIZON, seed, opts).map_err(|e| e.to_string())?;
            if a.trace != b.trace {
                let at = a.trace.iter().zip(&b.trace).position(|(x, y)| x != y).unwrap_or(a.trace.len().min(b.trace.len()));
                return Err(format!("{s} seed {seed}: traces differ at event {at}"));
            }
            events += a.trace.len();
        }
    }
    Ok(format!("6 scenarios x 50 seeds, {events} identical events"))
}

fn mask_soundness() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let target = 100_000;
    let (mut states, mut samples) = (0usize, 0usize);
    let mut episode = 0u64;
    while states < target {
        let model = Arc::new(builtin_scenario(Scenario::ALL[episode as usize % 9], 0.5).map_err(|e| e.to_string())?);
        let space = ActionSpace::new(&model);
        let variant = if episode.is_multiple_of(2) { ObsVariant::Plain } else { ObsVariant::Temporal };
        let obs_len = observation_len(&model, variant);
        let mut net = PolicyNet::new(obs_len, space.len(), &[32, 32], Activation::Tanh, episode);
        let scale = [1.0, 10.0, 100.0][episode as usize % 3];
        net.params.iter_mut().for_each(|p| *p *= scale);
        let mut sim = Simulation::new(Arc::clone(&model), episode).map_err(|e| e.to_string())?;
        while states < target && !sim.advance_to_next_decision(500.0).is_horizon() {
            states += 1;
            let st = sim.state();
            let mask = space.mask(st);
            let (probs, _) = net.forward(&encode_state(st, &model, variant), &mask);
            for (i, (&p, &m)) in probs.iter().zip(&mask).enumerate() {
                if !m && p != 0.0 {
                    return Err(format!("state {states}: infeasible action {i} has probability {p}"));
                }
            }
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let action = probs
                .iter()
                .position(|p| {
                    acc += p;
                    u < acc
                })
                .unwrap_or_else(|| mask.iter().rposition(|&m| m).expect("postpone is always feasible"));
            samples += 1;
            if !mask[action] {
                return Err(format!("state {states}: sampled infeasible action {action}"));
            }
            match space.decode(st, action) {
                Some(bpalloc::policies::Decision::Assign(a)) => {
                    if !sim.possible_assignments().contains(&a) {
                        return Err(format!("state {states}: action {action} decodes outside the possible assignments"));
                    }
                    sim.apply_assignment(a).map_err(|e| e.to_string())?;
                }
                Some(bpalloc::policies::Decision::Postpone) => {
                    sim.postpone(500.0);
                }
                None => return Err(format!("state {states}: feasible action {action} does not decode")),
            }
        }
        episode += 1;
    }
    Ok(format!("{states} states, {samples} sampled actions all feasible, masked probabilities all 0"))
}

fn action_space_arithmetic() -> Check {
    for s in [Scenario::Composite, Scenario::CompositeReversed, Scenario::CompositeParallel] {
        let model = Arc::new(builtin_scenario(s, 0.5).map_err(|e| e.to_string())?);
        let n = ActionSpace::new(&model).len();
        if n != 24 {
            return Err(format!("{s}: {n} actions"));
        }
        let run = run_episode_with(&model, &mut SptPolicy, 3000.0, 11, SimOptions { record_trace: true }).map_err(|e| e.to_string())?;
        let mut per_case = std::collections::BTreeMap::<usize, usize>::new();
        for e in run.trace.iter().filter(|e| e.lifecycle == bpalloc::sim::Lifecycle::Complete) {
            *per_case.entry(e.case).or_default() += 1;
        }
        let full = per_case.values().filter(|&&n| n == 11).count();
        if full != run.completed_cases || per_case.values().any(|&n| n > 11) {
            return Err(format!("{s}: {} completed cases but {full} ran 11 activities", run.completed_cases));
        }
    }
    Ok("24 actions and 11 activities per completed case in all composite models".into())
}

fn gradient_check() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(123);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let rel = |a: &[f64], b: &[f64]| {
        let d = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let n = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
        if n == 0.0 {
            d
        } else {
            d / n
        }
    };
    for point in 0..20u64 {
        let obs_dim = rng.random_range(3..10);
        let n_actions = rng.random_range(2..8);
        let act = if point.is_multiple_of(2) { Activation::Tanh } else { Activation::Relu };
        let mut net = PolicyNet::new(obs_dim, n_actions, &[rng.random_range(3..9), rng.random_range(3..9)], act, point);
        net.params.iter_mut().for_each(|p| *p += rng.random_range(-0.3..0.3));
        let obs: Vec<f64> = (0..obs_dim).map(|_| rng.random()).collect();
        let mut mask: Vec<bool> = (0..n_actions).map(|_| rng.random_bool(0.7)).collect();
        mask[n_actions - 1] = true;
        let feasible: Vec<usize> = (0..n_actions).filter(|&i| mask[i]).collect();
        let action = feasible[rng.random_range(0..feasible.len())];
        let mut fd_lp = vec![0.0; net.n_params()];
        let mut fd_v = vec![0.0; net.n_params()];
        for i in 0..net.n_params() {
            let (mut plus, mut minus) = (net.clone(), net.clone());
            plus.params[i] += h;
            minus.params[i] -= h;
            let lp = |n: &PolicyNet| masked_log_softmax(&n.logits_and_value(&obs).0, &mask)[action];
            fd_lp[i] = (lp(&plus) - lp(&minus)) / (2.0 * h);
            fd_v[i] = (plus.value(&obs) - minus.value(&obs)) / (2.0 * h);
        }
        worst = worst.max(rel(&net.grad_log_prob(&obs, &mask, action), &fd_lp));
        worst = worst.max(rel(&net.grad_value(&obs), &fd_v));
    }
    let msg = format!("worst relative error {worst:.2e} over 20 points");
    if worst <= 1e-4 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn reward_reconciliation() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for (i, s) in Scenario::ALL.iter().enumerate() {
        for penalty in [0.0, -0.1] {
            let model = Arc::new(builtin_scenario(*s, 0.5).map_err(|e| e.to_string())?);
            let mut env = DrlEnv::new(Arc::clone(&model), ObsVariant::Plain, 1000.0, penalty, i as u64).map_err(|e| e.to_string())?;
            let mut postpones = 0usize;
            while !env.is_done() {
                let mask = env.mask();
                let feasible: Vec<usize> = (0..mask.len()).filter(|&k| mask[k]).collect();
                let a = feasible[rng.random_range(0..feasible.len())];
                postpones += usize::from(a == env.actions().postpone());
                env.step(a).map_err(|e| e.to_string())?;
            }
            let st = env.stats();
            let expected = st.cycle_times.iter().map(|c| 1.0 / (c + 1.0)).sum::<f64>() + penalty * postpones as f64;
            worst = worst.max((env.episode_reward() - expected).abs() / expected.abs().max(1.0));
        }
    }
    let msg = format!("worst relative gap {worst:.1e} over 18 episodes");
    if worst <= 1e-12 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn bpalloc(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_bpalloc")).args(args).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(String::from_utf8_lossy(&out.stdout).into_owned())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr).trim()))
    }
}

fn comparison_row(dir: &Path) -> Result<(String, f64), String> {
    let text = std::fs::read_to_string(dir.join("comparisons.csv")).map_err(|e| e.to_string())?;
    let row = text.lines().nth(1).ok_or("no comparison row")?;
    let f: Vec<&str> = row.split(',').collect();
    Ok((f[2].to_string(), f[6].parse().map_err(|_| "bad p-value")?))
}

fn summary_means(dir: &Path) -> Result<Vec<(String, f64)>, String> {
    let text = std::fs::read_to_string(dir.join("summary.csv")).map_err(|e| e.to_string())?;
    let header: Vec<&str> = text.lines().next().ok_or("empty summary")?.split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).ok_or(format!("no {name} column"));
    let (p, m) = (col("policy")?, col("mean")?);
    text.lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            Ok((f[p].to_string(), f[m].parse().map_err(|_| "bad mean")?))
        })
        .collect()
}

fn trained_agent_beats_spt() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let train = dir.path().join("drl");
    let eval = dir.path().join("eval");
    let t = Instant::now();
    bpalloc(&["train", "drl", "--model", "slow_server", "--seed", "1", "--out", train.to_str().unwrap()])?;
    let train_secs = t.elapsed().as_secs();
    let ckpt = format!("drl:{}", train.join("checkpoint.json").display());
    bpalloc(&[
        "evaluate",
        "--model",
        "slow_server",
        "--policy",
        &ckpt,
        "--policy",
        "spt",
        "-n",
        "100",
        "--seed",
        "1000",
        "--out",
        eval.to_str().unwrap(),
    ])?;
    let means = summary_means(&eval)?;
    let (_, p) = comparison_row(&eval)?;
    let (drl, spt) = (means[0].1, means[1].1);
    let msg = format!("ppo {drl:.2} vs spt {spt:.2}, p = {p:.2e}, trained in {train_secs}s");
    if drl < spt && p < 0.05 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn beats(scenario: Scenario, a: (&str, Arc<PolicyFactory>), b: (&str, Arc<PolicyFactory>)) -> Check {
    let model = Arc::new(builtin_scenario(scenario, 0.5).map_err(|e| e.to_string())?);
    let run = |(name, f): (&str, Arc<PolicyFactory>)| -> Result<EvalReport, String> {
        let mut r = evaluate(&model, &*f, 100, DEFAULT_HORIZON, 2000).map_err(|e| e.to_string())?;
        r.policy = name.into();
        Ok(r)
    };
    let (ra, rb) = (run(a)?, run(b)?);
    let c = compare(&ra, &rb, false).map_err(|e| e.to_string())?;
    let msg = format!("{} {:.2} vs {} {:.2}, p = {:.2e}", ra.policy, ra.mean, rb.policy, rb.mean, c.p_value);
    if ra.mean < rb.mean && c.p_value < 0.05 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn stability_boundary() -> Check {
    let lambdas = bpalloc::harness::parse_range("0.3:0.6:0.05").map_err(|e| e.to_string())?;
    let mut means = Vec::new();
    let mut util_at = 0.0;
    for &l in &lambdas {
        let model = Arc::new(builtin_scenario(Scenario::SlowServer, l).map_err(|e| e.to_string())?);
        let r = evaluate(&model, &*factory(SptPolicy), 30, DEFAULT_HORIZON, 3000).map_err(|e| e.to_string())?;
        if (l - 0.55).abs() < 1e-9 {
            util_at = r.max_utilization();
        }
        means.push(r.mean);
    }
    let increasing = means.windows(2).all(|w| w[0] < w[1]);
    let shown: Vec<String> = means.iter().map(|m| format!("{m:.2}")).collect();
    let msg = format!("max utilization {util_at:.3} at 0.55; cycle times [{}]", shown.join(", "));
    if util_at >= 0.95 && increasing {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn bayesian_optimization_sanity() -> Check {
    let mut hits = 0;
    for seed in 0..100u64 {
        let cfg = BoConfig { trials: 20, seed, ..BoConfig::paper() };
        let r = minimize(|x| (x[0] - 30.0).powi(2), &[(0.0, 100.0)], &cfg).map_err(|e| e.to_string())?;
        hits += usize::from((r.best_x[0] - 30.0).abs() <= 5.0);
    }
    let msg = format!("{hits}/100 runs within 5 of the optimum");
    if hits >= 95 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn exhaustive(nl: usize, nr: usize, cost: &[Vec<Option<f64>>]) -> (usize, f64) {
    fn go(i: usize, used: &mut [bool], cost: &[Vec<Option<f64>>], card: usize, total: f64, best: &mut (usize, f64)) {
        if i == cost.len() {
            if card > best.0 || (card == best.0 && total < best.1) {
                *best = (card, total);
            }
            return;
        }
        go(i + 1, used, cost, card, total, best);
        for r in 0..used.len() {
            if let (false, Some(c)) = (used[r], cost[i][r]) {
                used[r] = true;
                go(i + 1, used, cost, card + 1, total + c, best);
                used[r] = false;
            }
        }
    }
    let mut best = (0, 0.0);
    go(0, &mut vec![false; nr], &cost[..nl], 0, 0.0, &mut best);
    best
}

fn matching_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for instance in 0..1000 {
        let (nl, nr) = (rng.random_range(1..=4), rng.random_range(1..=4));
        let cost: Vec<Vec<Option<f64>>> =
            (0..nl).map(|_| (0..nr).map(|_| rng.random_bool(0.6).then(|| rng.random_range(0.0..10.0))).collect()).collect();
        let c = &cost;
        let edges: Vec<(usize, usize, f64)> = (0..nl).flat_map(|l| (0..nr).filter_map(move |r| c[l][r].map(|x| (l, r, x)))).collect();
        let m = min_cost_matching(nl, nr, &edges);
        let total: f64 = m.iter().map(|&(l, r)| cost[l][r].unwrap_or(f64::NAN)).sum();
        let (card, best) = exhaustive(nl, nr, &cost);
        if m.len() != card || (total - best).abs() > 1e-9 {
            return Err(format!("instance {instance}: {} pairs cost {total} vs {card} pairs cost {best}", m.len()));
        }
    }
    Ok("1000 instances equal exhaustive search".into())
}

fn determinism() -> Check {
    let mut files = 0;
    // `{dir}` is replaced by a fresh output directory per run
    let runs = [
        "simulate --model composite_parallel --policy fifo --horizon 800 --trace {dir}/trace.csv --stats {dir}/stats.csv",
        "evaluate --model n_network --policy spt --policy random --policy matching -n 8 --horizon 1000 --out {dir}",
        "evaluate --model slow_server --policy fifo --policy spt --sweep 0.4:0.5:0.05 -n 4 --horizon 500 --out {dir}",
        "train svfa --model parallel --trials 6 --sims-per-trial 5 --set horizon=300 --out {dir}",
        "train drl --model n_network --max-steps 4096 --set rollout=1024 --set minibatch=128 --set hidden=[16] \
         --set eval_interval=2048 --set eval_episodes=2 --set horizon=300 --out {dir}",
    ];
    for (i, run) in runs.iter().enumerate() {
        let dirs = [tempfile::tempdir().map_err(|e| e.to_string())?, tempfile::tempdir().map_err(|e| e.to_string())?];
        for (d, jobs) in dirs.iter().zip(["1", "2"]) {
            let line = run.replace("{dir}", d.path().to_str().unwrap());
            let mut args: Vec<&str> = line.split_whitespace().collect();
            args.extend(["--seed", "21", "--jobs", jobs]);
            bpalloc(&args)?;
        }
        let mut names: Vec<_> = std::fs::read_dir(dirs[0].path())
            .map_err(|e| e.to_string())?
            .filter_map(|e| e.ok().map(|e| e.file_name()))
            .filter(|n| n.to_string_lossy().ends_with(".csv"))
            .collect();
        names.sort();
        if names.is_empty() {
            return Err(format!("run {i} wrote no CSV files"));
        }
        for n in names {
            let a = std::fs::read(dirs[0].path().join(&n)).map_err(|e| e.to_string())?;
            let b = std::fs::read(dirs[1].path().join(&n)).map_err(|e| e.to_string())?;
            if a != b {
                return Err(format!("run {i}: {} differs", n.to_string_lossy()));
            }
            files += 1;
        }
    }
    Ok(format!("{files} CSV files from {} commands byte-identical across repeated runs", runs.len()))
}

fn main() {
    let criteria: Vec<(&str, Criterion)> = vec![
        ("1 queueing oracle", Box::new(queueing_oracle)),
        ("2 score policy reduces to spt", Box::new(score_policy_reduces_to_spt)),
        ("3 mask soundness", Box::new(mask_soundness)),
        ("4 action-space arithmetic", Box::new(action_space_arithmetic)),
        ("5 gradient correctness", Box::new(gradient_check)),
        ("6 reward reconciliation", Box::new(reward_reconciliation)),
        ("7a slow server: ppo beats spt", Box::new(trained_agent_beats_spt)),
        ("7b parallel: fifo beats spt", Box::new(|| beats(Scenario::Parallel, ("fifo", factory(FifoPolicy)), ("spt", factory(SptPolicy))))),
        (
            "7c high utilization: spt beats random",
            Box::new(|| beats(Scenario::HighUtilization, ("spt", factory(SptPolicy)), ("random", factory(RandomPolicy::new(0))))),
        ),
        ("8 stability boundary", Box::new(stability_boundary)),
        ("9 bayesian optimization sanity", Box::new(bayesian_optimization_sanity)),
        ("10 matching oracle", Box::new(matching_oracle)),
        ("11 determinism", Box::new(determinism)),
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, check) in &criteria {
        if !only.is_empty() && !only.iter().any(|o| name.starts_with(&format!("{o} "))) {
            continue;
        }
        let t = Instant::now();
        let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        let secs = t.elapsed().as_secs_f64();
        match result {
            Ok(msg) => println!("PASS [{name}] {msg} ({secs:.1}s)"),
            Err(msg) => {
                failed += 1;
                println!("FAIL [{name}] {msg} ({secs:.1}s)");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
