//! Replicated evaluation, confidence intervals, t-tests, arrival-rate
//! sweeps and CSV export.

mod export;

pub use export::{read_long, read_summary, write_comparisons, write_long, write_summary, LongRow, SummaryRow};

use crate::model::ProcessModel;
use crate::policies::Policy;
use crate::sim::{run_episode, SimError};
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, StudentsT};
use std::sync::Arc;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("at least 2 replications are needed, got {0}")]
    TooFewReplications(usize),
    #[error("report `{0}` has no samples")]
    NoSamples(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("{0}")]
    Other(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Builds a fresh policy for one replication.
pub type PolicyFactory = dyn Fn() -> Box<dyn Policy> + Send + Sync;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub policy: String,
    pub model: String,
    /// Arrival rate, when the report belongs to a sweep.
    pub lambda: Option<f64>,
    pub horizon: f64,
    pub base_seed: u64,
    /// Mean cycle time of each replication, by seed.
    pub samples: Vec<f64>,
    pub mean: f64,
    pub ci_half_width: f64,
    /// Mean utilization of each resource over the replications.
    pub utilization: Vec<f64>,
}

impl EvalReport {
    pub fn n(&self) -> usize {
        self.samples.len()
    }

    pub fn max_utilization(&self) -> f64 {
        self.utilization.iter().copied().fold(0.0, f64::max)
    }

    pub fn seed_of(&self, replication: usize) -> u64 {
        self.base_seed.wrapping_add(replication as u64)
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Half-width of the two-sided 95% Student-t interval of the mean.
pub fn ci_half_width(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return f64::NAN;
    }
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("positive degrees of freedom").inverse_cdf(0.975);
    t * (variance(xs) / n as f64).sqrt()
}

/// Runs `n` episodes with seeds `base_seed..base_seed + n` in parallel.
/// Results are indexed by seed, so they do not depend on scheduling.
pub fn evaluate(
    model: &Arc<ProcessModel>,
    policy: &PolicyFactory,
    n: usize,
    horizon: f64,
    base_seed: u64,
) -> Result<EvalReport, HarnessError> {
    if n < 2 {
        return Err(HarnessError::TooFewReplications(n));
    }
    let stats: Result<Vec<_>, SimError> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut p = policy();
            run_episode(model, &mut p, horizon, base_seed.wrapping_add(i as u64))
        })
        .collect();
    let stats = stats?;
    let samples: Vec<f64> = stats.iter().map(|s| s.mean_cycle_time).collect();
    let mut utilization = vec![0.0; model.n_resources()];
    for s in &stats {
        for (u, v) in utilization.iter_mut().zip(&s.utilization) {
            *u += v / n as f64;
        }
    }
    Ok(EvalReport {
        policy: policy().name(),
        model: model.name.clone(),
        lambda: None,
        horizon,
        base_seed,
        mean: mean(&samples),
        ci_half_width: ci_half_width(&samples),
        samples,
        utilization,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub a: String,
    pub b: String,
    pub t: f64,
    pub df: f64,
    /// Two-sided p-value.
    pub p_value: f64,
    /// `p < 0.05`.
    pub significant: bool,
    /// Both samples were constant; `p` is 1 if they are equal, else 0.
    pub degenerate: bool,
}

/// Two-sample t-test on replication means. The pooled-variance Student
/// test is used unless `welch` is set.
pub fn compare(a: &EvalReport, b: &EvalReport, welch: bool) -> Result<Comparison, HarnessError> {
    for r in [a, b] {
        if r.samples.len() < 2 {
            return Err(HarnessError::NoSamples(r.policy.clone()));
        }
    }
    let (t, df, p, degenerate) = t_test(&a.samples, &b.samples, welch);
    Ok(Comparison { a: a.policy.clone(), b: b.policy.clone(), t, df, p_value: p, significant: p < 0.05, degenerate })
}

/// Returns `(t, degrees of freedom, two-sided p, degenerate)`.
pub fn t_test(a: &[f64], b: &[f64], welch: bool) -> (f64, f64, f64, bool) {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, mb) = (mean(a), mean(b));
    let (va, vb) = (variance(a), variance(b));
    let (se, df) = if welch {
        let (qa, qb) = (va / na, vb / nb);
        let se = (qa + qb).sqrt();
        let df = (qa + qb).powi(2) / (qa * qa / (na - 1.0) + qb * qb / (nb - 1.0));
        (se, df)
    } else {
        let df = na + nb - 2.0;
        let pooled = ((na - 1.0) * va + (nb - 1.0) * vb) / df;
        ((pooled * (1.0 / na + 1.0 / nb)).sqrt(), df)
    };
    let diff = ma - mb;
    if se == 0.0 {
        return if diff == 0.0 { (0.0, df.max(1.0), 1.0, true) } else { (diff.signum() * f64::INFINITY, df.max(1.0), 0.0, true) };
    }
    let t = diff / se;
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    let p = (2.0 * dist.sf(t.abs())).clamp(0.0, 1.0);
    (t, df, p, false)
}

/// For each report, whether it is the lowest mean or not significantly
/// different from it (`p >= 0.05`).
pub fn tied_best(reports: &[EvalReport], welch: bool) -> Vec<bool> {
    let Some(best) = reports.iter().min_by(|x, y| x.mean.total_cmp(&y.mean)) else {
        return Vec::new();
    };
    reports.iter().map(|r| std::ptr::eq(r, best) || compare(r, best, welch).is_ok_and(|c| !c.significant)).collect()
}

/// A policy in a sweep. `make` is called once per arrival rate with the
/// model for that rate, so learned policies can be trained per rate.
pub struct SweepEntry {
    pub name: String,
    #[allow(clippy::type_complexity)]
    pub make: Box<dyn Fn(&Arc<ProcessModel>, f64) -> Result<Arc<PolicyFactory>, HarnessError> + Send + Sync>,
}

impl SweepEntry {
    /// The same policy at every rate.
    pub fn fixed(name: impl Into<String>, factory: Arc<PolicyFactory>) -> Self {
        SweepEntry { name: name.into(), make: Box::new(move |_, _| Ok(Arc::clone(&factory))) }
    }
}

/// Evaluates every (rate, policy) cell; rows come rate-major.
pub fn sweep(
    model_for_rate: &dyn Fn(f64) -> Result<ProcessModel, HarnessError>,
    lambdas: &[f64],
    policies: &[SweepEntry],
    n: usize,
    horizon: f64,
    base_seed: u64,
) -> Result<Vec<EvalReport>, HarnessError> {
    let mut out = Vec::with_capacity(lambdas.len() * policies.len());
    for &lambda in lambdas {
        let model = Arc::new(model_for_rate(lambda)?);
        for entry in policies {
            let factory = (entry.make)(&model, lambda)?;
            let mut r = evaluate(&model, &*factory, n, horizon, base_seed)?;
            r.policy.clone_from(&entry.name);
            r.lambda = Some(lambda);
            out.push(r);
        }
    }
    Ok(out)
}

/// Parses `start:stop:step` into an inclusive list of rates.
pub fn parse_range(spec: &str) -> Result<Vec<f64>, HarnessError> {
    let bad = || HarnessError::Other(format!("expected start:stop:step, got `{spec}`"));
    let parts: Vec<f64> = spec.split(':').map(|s| s.trim().parse::<f64>().map_err(|_| bad())).collect::<Result<_, _>>()?;
    let [start, stop, step] = parts[..] else { return Err(bad()) };
    if step.is_nan() || step <= 0.0 || start.is_nan() || start <= 0.0 || stop.is_nan() || stop < start {
        return Err(bad());
    }
    let count = ((stop - start) / step + 1e-9).floor() as usize;
    // round to the step's decimals so 0.3 + 5 * 0.05 prints as 0.55
    let decimals = spec.split(':').map(|s| s.split('.').nth(1).map_or(0, str::len)).max().unwrap_or(0) as i32;
    let scale = 10f64.powi(decimals);
    Ok((0..=count).map(|i| ((start + i as f64 * step) * scale).round() / scale).collect())
}
