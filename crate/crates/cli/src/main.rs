mod manifest;
mod overrides;

use anyhow::{anyhow, bail, Context};
use bpalloc::drl::{self, Checkpoint, DrlPolicy, PolicyMode, PpoConfig};
use bpalloc::harness::{self, EvalReport, PolicyFactory, SweepEntry};
use bpalloc::model::{builtin_with_arrivals, load_model, to_config_text, ArrivalSpec, ProcessModel, Scenario, DEFAULT_PATTERN};
use bpalloc::policies::{Policy, PolicySpec, UnknownPolicy};
use bpalloc::sim::{run_episode_with, write_stats, write_trace, SimOptions};
use bpalloc::svfa::{self, BoConfig, SvfaPolicy, WeightVector};
use clap::{Args, Parser, Subcommand, ValueEnum};
use manifest::RunManifest;
use std::hash::{BuildHasher, Hasher};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

#[derive(Parser)]
#[command(name = "bpalloc", version, about = "Simulate business processes and learn resource allocation policies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Preset {
    /// Small budgets that finish in minutes.
    Desk,
    /// Full training and evaluation budgets.
    Paper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Arrivals {
    Constant,
    /// Periodic rate curve sampled by thinning, scaled to the mean rate.
    Pattern,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Seed for every random stream of the run.
    #[arg(long, required_unless_present = "no_seed", conflicts_with = "no_seed")]
    seed: Option<u64>,
    /// Run with a fresh seed (recorded in the manifest).
    #[arg(long)]
    no_seed: bool,
    /// Worker threads; results do not depend on this.
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long, value_enum, default_value_t = Preset::Desk)]
    preset: Preset,
    /// Configuration override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Common {
    fn seed(&self) -> u64 {
        self.seed.unwrap_or_else(|| std::collections::hash_map::RandomState::new().build_hasher().finish())
    }

    fn preset_name(&self) -> &'static str {
        match self.preset {
            Preset::Desk => "desk",
            Preset::Paper => "paper",
        }
    }
}

#[derive(Args, Debug, Clone)]
struct ModelArgs {
    /// Built-in scenario name or path to a scenario file.
    #[arg(long)]
    model: String,
    /// Mean arrival rate; overrides the model's arrivals.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, value_enum)]
    arrivals: Option<Arrivals>,
}

fn parse_policy(s: &str) -> Result<PolicySpec, UnknownPolicy> {
    s.parse()
}

#[derive(Subcommand)]
enum Command {
    /// Run one episode and print its statistics.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelArgs,
        /// spt, fifo, random, matching, svfa:WEIGHTS.toml or drl:CHECKPOINT.json
        #[arg(long, value_parser = parse_policy)]
        policy: PolicySpec,
        #[arg(long, default_value_t = 5000.0)]
        horizon: f64,
        /// Write the event trace here.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Write the statistics as key,value rows here.
        #[arg(long)]
        stats: Option<PathBuf>,
    },
    /// Train a learned policy.
    #[command(subcommand)]
    Train(Train),
    /// Evaluate policies over replications and compare them.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Built-in scenario names or scenario files, repeatable.
        #[arg(long = "model", required = true)]
        models: Vec<String>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long, value_enum)]
        arrivals: Option<Arrivals>,
        /// Policy to evaluate, repeatable; see `simulate --help`
        #[arg(long = "policy", required = true, value_parser = parse_policy)]
        policies: Vec<PolicySpec>,
        /// Replications per policy.
        #[arg(short = 'n', long, default_value_t = 100)]
        replications: usize,
        #[arg(long, default_value_t = 5000.0)]
        horizon: f64,
        /// Use Welch's t-test instead of the pooled-variance test.
        #[arg(long)]
        welch: bool,
        /// Arrival rates as start:stop:step.
        #[arg(long)]
        sweep: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate policies over a range of arrival rates. The policies
    /// `svfa:@train` and `drl:@train` are trained separately for every rate;
    /// their settings take `--set svfa.KEY=VALUE` and `--set drl.KEY=VALUE`.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: String,
        #[arg(long, default_value = "0.3:0.6:0.05")]
        rates: String,
        #[arg(long, value_enum)]
        arrivals: Option<Arrivals>,
        /// Policy to evaluate, repeatable; see `simulate --help`
        #[arg(long = "policy", required = true, value_parser = parse_policy)]
        policies: Vec<PolicySpec>,
        #[arg(short = 'n', long, default_value_t = 100)]
        replications: usize,
        #[arg(long, default_value_t = 5000.0)]
        horizon: f64,
        #[arg(long)]
        welch: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a model as a scenario file or summarize a long-format CSV.
    #[command(subcommand)]
    Export(Export),
}

#[derive(Subcommand)]
enum Train {
    /// Tune score weights with Bayesian optimization.
    Svfa {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        sims_per_trial: Option<usize>,
        #[arg(long)]
        horizon: Option<f64>,
        /// Sample every trial at random instead of using the surrogate.
        #[arg(long)]
        random_search: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a policy network with maskable PPO.
    Drl {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelArgs,
        /// Decision steps, e.g. 2e6.
        #[arg(long)]
        max_steps: Option<f64>,
        /// Reward added to every postpone action, e.g. -0.1.
        #[arg(long, allow_hyphen_values = true)]
        postpone_penalty: Option<f64>,
        /// Add the arrival-pattern phase to the observation.
        #[arg(long)]
        temporal: bool,
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum Export {
    /// Write a model in the scenario file format.
    Model {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate a long-format CSV into the summary format.
    Summary {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        welch: bool,
    },
}

fn resolve_model(name: &str, lambda: Option<f64>, arrivals: Option<Arrivals>) -> anyhow::Result<ProcessModel> {
    if let Some(l) = lambda {
        if !(l > 0.0 && l.is_finite()) {
            bail!("arrival rate must be positive, got {l}");
        }
    }
    let spec = |default: f64| -> ArrivalSpec {
        let rate = lambda.unwrap_or(default);
        match arrivals.unwrap_or(Arrivals::Constant) {
            Arrivals::Constant => ArrivalSpec::Constant { rate },
            Arrivals::Pattern => ArrivalSpec::Pattern(DEFAULT_PATTERN.scaled_to_mean(rate)),
        }
    };
    if let Ok(s) = name.parse::<Scenario>() {
        return Ok(builtin_with_arrivals(s, spec(0.5))?);
    }
    let text = std::fs::read_to_string(name).with_context(|| format!("`{name}` is neither a built-in scenario nor a readable file"))?;
    let mut model = load_model(&text)?;
    if lambda.is_some() || arrivals.is_some() {
        model.arrivals = spec(model.arrivals.mean_rate());
        model.validate().into_result()?;
    }
    Ok(model)
}

fn policy_factory(spec: &PolicySpec, model: &Arc<ProcessModel>, seed: u64) -> anyhow::Result<Arc<PolicyFactory>> {
    if spec.baseline(seed).is_some() {
        let spec = spec.clone();
        return Ok(Arc::new(move || spec.baseline(seed).expect("baseline")));
    }
    match spec {
        PolicySpec::Svfa(path) => {
            let w = WeightVector::load(Path::new(path)).with_context(|| format!("loading weights {path}"))?;
            Ok(Arc::new(move || Box::new(SvfaPolicy::new(w))))
        }
        PolicySpec::Drl(path) => {
            let ckpt = Checkpoint::load(Path::new(path)).with_context(|| format!("loading checkpoint {path}"))?;
            let policy = DrlPolicy::from_checkpoint(&ckpt, model, PolicyMode::Greedy)?;
            Ok(Arc::new(move || Box::new(policy.clone())))
        }
        _ => unreachable!("baselines handled above"),
    }
}

fn bo_config(common: &Common, set: &[String], seed: u64) -> anyhow::Result<BoConfig> {
    let base = match common.preset {
        Preset::Desk => BoConfig::desk(),
        Preset::Paper => BoConfig::paper(),
    };
    let mut cfg = overrides::apply(&base, set)?;
    cfg.seed = seed;
    Ok(cfg)
}

fn ppo_config(common: &Common, set: &[String]) -> anyhow::Result<PpoConfig> {
    let base = match common.preset {
        Preset::Desk => PpoConfig::desk(),
        Preset::Paper => PpoConfig::paper(),
    };
    overrides::apply(&base, set)
}

fn install_jobs(jobs: Option<usize>) -> anyhow::Result<()> {
    if let Some(n) = jobs {
        rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global().map_err(|e| anyhow!("thread pool: {e}"))?;
    }
    Ok(())
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn file(path: &Path) -> anyhow::Result<std::io::BufWriter<std::fs::File>> {
    let f = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(std::io::BufWriter::new(f))
}

fn train_svfa(model: &Arc<ProcessModel>, cfg: &BoConfig, out: &Path) -> anyhow::Result<WeightVector> {
    let (w, result) = svfa::bayes_optimize(model, cfg)?;
    create_dir(out)?;
    w.save(&out.join("weights.toml"))?;
    svfa::write_history(file(&out.join("history.csv"))?, &result.history)?;
    if result.surrogate_failed {
        eprintln!("note: the surrogate could not be fitted; later trials used random search");
    }
    Ok(w)
}

fn train_drl(model: &Arc<ProcessModel>, cfg: &PpoConfig, seed: u64, out: &Path) -> anyhow::Result<Checkpoint> {
    let outcome = drl::ppo_train_observed(model, cfg, seed, &mut |u| {
        let eval = u.last_eval.map(|e| format!(", eval mean cycle time {e:.3}")).unwrap_or_default();
        eprintln!("update {} at {} steps: policy loss {:.5}, value loss {:.5}{eval}", u.update, u.steps, u.policy_loss, u.value_loss);
    })?;
    create_dir(out)?;
    let ckpt = Checkpoint::new(model, &outcome.net, cfg);
    ckpt.save(&out.join("checkpoint.json"))?;
    drl::write_training_log(file(&out.join("training_log.csv"))?, &outcome.log)?;
    let mut w = file(&out.join("evaluations.csv"))?;
    writeln!(w, "steps,mean_cycle_time,incumbent")?;
    for e in &outcome.evals {
        writeln!(w, "{},{},{}", e.steps, e.mean_cycle_time, e.incumbent)?;
    }
    w.flush()?;
    Ok(ckpt)
}

fn print_reports(reports: &[EvalReport], tied: &[bool]) {
    println!("{:<22} {:<28} {:>7} {:>12} {:>10} {:>8}  best", "model", "policy", "lambda", "mean CT", "95% CI", "max util");
    for (r, t) in reports.iter().zip(tied) {
        let lambda = r.lambda.map(|l| l.to_string()).unwrap_or_else(|| "-".into());
        println!(
            "{:<22} {:<28} {:>7} {:>12.4} {:>10.4} {:>8.4}  {}",
            r.model,
            r.policy,
            lambda,
            r.mean,
            r.ci_half_width,
            r.max_utilization(),
            if *t { "*" } else { "" }
        );
    }
}

/// Tied-best flags and pairwise comparisons within each (model, rate) group.
type Comparisons = Vec<(String, Option<f64>, harness::Comparison)>;

fn analyse(reports: &[EvalReport], welch: bool) -> anyhow::Result<(Vec<bool>, Comparisons)> {
    let mut tied = vec![false; reports.len()];
    let mut comparisons = Vec::new();
    let mut start = 0;
    while start < reports.len() {
        let key = (&reports[start].model, reports[start].lambda.map(f64::to_bits));
        let mut end = start;
        while end < reports.len() && (&reports[end].model, reports[end].lambda.map(f64::to_bits)) == key {
            end += 1;
        }
        let group = &reports[start..end];
        tied[start..end].copy_from_slice(&harness::tied_best(group, welch));
        for i in 0..group.len() {
            for j in i + 1..group.len() {
                comparisons.push((group[i].model.clone(), group[i].lambda, harness::compare(&group[i], &group[j], welch)?));
            }
        }
        start = end;
    }
    Ok((tied, comparisons))
}

fn write_tables(
    out: &Path,
    reports: &[EvalReport],
    tied: &[bool],
    comparisons: &[(String, Option<f64>, harness::Comparison)],
) -> anyhow::Result<Vec<String>> {
    create_dir(out)?;
    harness::write_long(file(&out.join("replications.csv"))?, reports)?;
    harness::write_summary(file(&out.join("summary.csv"))?, reports, Some(tied))?;
    harness::write_comparisons(file(&out.join("comparisons.csv"))?, comparisons)?;
    Ok(vec!["replications.csv".into(), "summary.csv".into(), "comparisons.csv".into()])
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Simulate { common, model, policy, horizon, trace, stats } => {
            install_jobs(common.jobs)?;
            let seed = common.seed();
            let m = Arc::new(resolve_model(&model.model, model.lambda, model.arrivals)?);
            let factory = policy_factory(&policy, &m, seed)?;
            let mut p = factory();
            let options = SimOptions { record_trace: trace.is_some() };
            let s = run_episode_with(&m, &mut p, horizon, seed, options)?;
            for (k, v) in s.key_values() {
                println!("{k}: {v}");
            }
            let mut manifest = RunManifest::new("simulate", seed, common.preset_name(), &common.set);
            manifest.models.push(model.model.clone());
            manifest.policies.push(policy.to_string());
            manifest.config = serde_json::json!({ "horizon": horizon, "lambda": model.lambda, "arrivals": model.arrivals.map(|a| format!("{a:?}").to_lowercase()) });
            let mut manifest_path = None;
            if let Some(path) = &trace {
                write_trace(file(path)?, &m, &s.trace)?;
                manifest.artifacts.push(path.display().to_string());
                manifest_path = Some(path.with_extension("manifest.json"));
            }
            if let Some(path) = &stats {
                write_stats(file(path)?, &s)?;
                manifest.artifacts.push(path.display().to_string());
                manifest_path.get_or_insert_with(|| path.with_extension("manifest.json"));
            }
            if let Some(mp) = manifest_path {
                manifest.write(&mp)?;
            }
        }
        Command::Train(Train::Svfa { common, model, trials, sims_per_trial, horizon, random_search, out }) => {
            install_jobs(common.jobs)?;
            let seed = common.seed();
            let m = Arc::new(resolve_model(&model.model, model.lambda, model.arrivals)?);
            let mut cfg = bo_config(&common, &common.set, seed)?;
            if let Some(t) = trials {
                cfg.trials = t;
                cfg.initial_design = cfg.initial_design.min(t);
            }
            if let Some(s) = sims_per_trial {
                cfg.sims_per_trial = s;
            }
            if let Some(h) = horizon {
                cfg.horizon = h;
            }
            cfg.random_search |= random_search;
            let w = train_svfa(&m, &cfg, &out)?;
            println!("weights: {:?}", w.to_array());
            let mut manifest = RunManifest::new("train svfa", seed, common.preset_name(), &common.set);
            manifest.models.push(model.model.clone());
            manifest.config = serde_json::to_value(&cfg)?;
            manifest.artifacts = vec!["weights.toml".into(), "history.csv".into()];
            manifest.write(&out.join("manifest.json"))?;
        }
        Command::Train(Train::Drl { common, model, max_steps, postpone_penalty, temporal, horizon, out }) => {
            install_jobs(common.jobs)?;
            let seed = common.seed();
            let m = Arc::new(resolve_model(&model.model, model.lambda, model.arrivals)?);
            let mut cfg = ppo_config(&common, &common.set)?;
            if let Some(s) = max_steps {
                if !(s >= 1.0 && s.fract() == 0.0) {
                    bail!("--max-steps must be a positive whole number, got {s}");
                }
                cfg.max_steps = s as u64;
            }
            if let Some(p) = postpone_penalty {
                cfg.postpone_penalty = p;
            }
            if temporal {
                cfg.variant = drl::ObsVariant::Temporal;
            }
            if let Some(h) = horizon {
                cfg.horizon = h;
            }
            train_drl(&m, &cfg, seed, &out)?;
            let mut manifest = RunManifest::new("train drl", seed, common.preset_name(), &common.set);
            manifest.models.push(model.model.clone());
            manifest.config = serde_json::to_value(&cfg)?;
            manifest.artifacts = vec!["checkpoint.json".into(), "training_log.csv".into(), "evaluations.csv".into()];
            manifest.write(&out.join("manifest.json"))?;
        }
        Command::Evaluate { common, models, lambda, arrivals, policies, replications, horizon, welch, sweep, out } => {
            install_jobs(common.jobs)?;
            let seed = common.seed();
            let rates: Vec<Option<f64>> = match &sweep {
                Some(s) => harness::parse_range(s)?.into_iter().map(Some).collect(),
                None => vec![lambda],
            };
            let mut reports = Vec::new();
            for name in &models {
                for &rate in &rates {
                    let m = Arc::new(resolve_model(name, rate, arrivals)?);
                    for spec in &policies {
                        let factory = policy_factory(spec, &m, seed)?;
                        let mut r = harness::evaluate(&m, &*factory, replications, horizon, seed)?;
                        r.policy = spec.to_string();
                        r.lambda = rate;
                        reports.push(r);
                    }
                }
            }
            let (tied, comparisons) = analyse(&reports, welch)?;
            print_reports(&reports, &tied);
            for (model, lambda, c) in &comparisons {
                let l = lambda.map(|l| format!(" at lambda {l}")).unwrap_or_default();
                println!("{model}{l}: {} vs {}: t = {:.4}, p = {:.4e}", c.a, c.b, c.t, c.p_value);
            }
            if let Some(dir) = out {
                let mut manifest = RunManifest::new("evaluate", seed, common.preset_name(), &common.set);
                manifest.models = models.clone();
                manifest.policies = policies.iter().map(ToString::to_string).collect();
                manifest.config = serde_json::json!({ "replications": replications, "horizon": horizon, "welch": welch, "rates": rates });
                manifest.artifacts = write_tables(&dir, &reports, &tied, &comparisons)?;
                manifest.write(&dir.join("manifest.json"))?;
            }
        }
        Command::Sweep { common, model, rates, arrivals, policies, replications, horizon, welch, out } => {
            install_jobs(common.jobs)?;
            let seed = common.seed();
            let lambdas = harness::parse_range(&rates)?;
            let (svfa_set, drl_set) = overrides::split_scoped(&common.set, "svfa", "drl")?;
            let bo = bo_config(&common, &svfa_set, seed)?;
            let ppo = ppo_config(&common, &drl_set)?;
            let train_root = out.clone().unwrap_or_else(|| PathBuf::from("."));
            let entries: Vec<SweepEntry> = policies
                .iter()
                .map(|spec| -> SweepEntry {
                    let spec = spec.clone();
                    let name = spec.to_string();
                    let (bo, ppo, root) = (bo.clone(), ppo.clone(), train_root.clone());
                    SweepEntry {
                        name,
                        make: Box::new(move |m, lambda| {
                            let to_harness = |e: anyhow::Error| harness::HarnessError::Other(format!("{e:#}"));
                            match &spec {
                                PolicySpec::Svfa(p) if p == "@train" => {
                                    let dir = root.join(format!("svfa_lambda_{lambda}"));
                                    let w = train_svfa(m, &bo, &dir).map_err(to_harness)?;
                                    Ok(Arc::new(move || Box::new(SvfaPolicy::new(w)) as Box<dyn Policy>) as Arc<PolicyFactory>)
                                }
                                PolicySpec::Drl(p) if p == "@train" => {
                                    let dir = root.join(format!("drl_lambda_{lambda}"));
                                    let ckpt = train_drl(m, &ppo, seed, &dir).map_err(to_harness)?;
                                    let policy = DrlPolicy::from_checkpoint(&ckpt, m, PolicyMode::Greedy)
                                        .map_err(|e| harness::HarnessError::Other(e.to_string()))?;
                                    Ok(Arc::new(move || Box::new(policy.clone()) as Box<dyn Policy>) as Arc<PolicyFactory>)
                                }
                                _ => policy_factory(&spec, m, seed).map_err(to_harness),
                            }
                        }),
                    }
                })
                .collect();
            let model_for_rate =
                |l: f64| resolve_model(&model, Some(l), arrivals).map_err(|e| harness::HarnessError::Other(format!("{e:#}")));
            let reports = harness::sweep(&model_for_rate, &lambdas, &entries, replications, horizon, seed)?;
            let (tied, comparisons) = analyse(&reports, welch)?;
            print_reports(&reports, &tied);
            if let Some(dir) = out {
                let mut manifest = RunManifest::new("sweep", seed, common.preset_name(), &common.set);
                manifest.models.push(model.clone());
                manifest.policies = policies.iter().map(ToString::to_string).collect();
                manifest.config = serde_json::json!({
                    "replications": replications, "horizon": horizon, "welch": welch, "rates": lambdas,
                    "svfa": bo, "drl": ppo,
                });
                manifest.artifacts = write_tables(&dir, &reports, &tied, &comparisons)?;
                manifest.write(&dir.join("manifest.json"))?;
            }
        }
        Command::Export(Export::Model { model, out }) => {
            let m = resolve_model(&model.model, model.lambda, model.arrivals)?;
            std::fs::write(&out, to_config_text(&m)).with_context(|| format!("writing {}", out.display()))?;
        }
        Command::Export(Export::Summary { input, out, welch }) => {
            let rows = harness::read_long(std::fs::File::open(&input).with_context(|| format!("opening {}", input.display()))?)?;
            let mut reports: Vec<EvalReport> = Vec::new();
            for row in rows {
                let same = reports.last().is_some_and(|r: &EvalReport| {
                    r.model == row.model && r.policy == row.policy && r.lambda.map(f64::to_bits) == row.lambda.map(f64::to_bits)
                });
                if !same {
                    reports.push(EvalReport {
                        policy: row.policy.clone(),
                        model: row.model.clone(),
                        lambda: row.lambda,
                        horizon: f64::NAN,
                        base_seed: row.seed,
                        samples: Vec::new(),
                        mean: 0.0,
                        ci_half_width: 0.0,
                        utilization: Vec::new(),
                    });
                }
                reports.last_mut().expect("pushed above").samples.push(row.mean_cycle_time);
            }
            for r in &mut reports {
                r.mean = harness::mean(&r.samples);
                r.ci_half_width = harness::ci_half_width(&r.samples);
            }
            let (tied, _) = analyse(&reports, welch)?;
            harness::write_summary(file(&out)?, &reports, Some(&tied))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
