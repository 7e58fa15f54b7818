use super::gp::GaussianProcess;
use super::{SvfaError, SvfaPolicy, WeightVector, WEIGHT_BOUNDS};
use crate::model::ProcessModel;
use crate::sim::run_episode;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::sync::Arc;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoConfig {
    pub trials: usize,
    /// Size of the Latin hypercube design evaluated before the surrogate
    /// takes over.
    pub initial_design: usize,
    pub sims_per_trial: usize,
    pub horizon: f64,
    pub seed: u64,
    /// Skip the surrogate and sample every trial uniformly.
    pub random_search: bool,
    /// Random candidates scored per acquisition step.
    pub acquisition_samples: usize,
    /// Best candidates refined by local search.
    pub acquisition_starts: usize,
    /// Expected-improvement margin, in units of the objective's spread.
    pub xi: f64,
}

impl Default for BoConfig {
    fn default() -> Self {
        Self::paper()
    }
}

impl BoConfig {
    pub fn paper() -> Self {
        BoConfig {
            trials: 20,
            initial_design: 5,
            sims_per_trial: 5000,
            horizon: crate::sim::DEFAULT_HORIZON,
            seed: 0,
            random_search: false,
            acquisition_samples: 2000,
            acquisition_starts: 5,
            xi: 0.01,
        }
    }

    pub fn desk() -> Self {
        BoConfig { sims_per_trial: 100, ..Self::paper() }
    }

    pub fn validate(&self) -> Result<(), SvfaError> {
        if self.initial_design < 2 {
            return Err(SvfaError::Config("initial design needs at least 2 points".into()));
        }
        if self.trials < self.initial_design {
            return Err(SvfaError::Config("trials must be at least the initial design size".into()));
        }
        if self.sims_per_trial == 0 || self.horizon.is_nan() || self.horizon <= 0.0 {
            return Err(SvfaError::Config("sims per trial and horizon must be positive".into()));
        }
        if self.acquisition_samples == 0 {
            return Err(SvfaError::Config("acquisition needs at least one sample".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub index: usize,
    pub x: Vec<f64>,
    pub objective: f64,
    /// Lowest objective seen up to and including this trial.
    pub incumbent: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoResult {
    pub best_x: Vec<f64>,
    pub best_objective: f64,
    pub history: Vec<Trial>,
    /// Set if the surrogate could not be fitted and random search took over.
    pub surrogate_failed: bool,
}

fn latin_hypercube(n: usize, dim: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut pts = vec![vec![0.0; dim]; n];
    for d in 0..dim {
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(rng);
        for (p, s) in pts.iter_mut().zip(strata) {
            p[d] = (s as f64 + rng.random::<f64>()) / n as f64;
        }
    }
    pts
}

fn uniform(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..dim).map(|_| rng.random::<f64>()).collect()
}

fn maximize_ei(gp: &GaussianProcess, best: f64, xi: f64, dim: usize, cfg: &BoConfig, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut cands: Vec<(f64, Vec<f64>)> = (0..cfg.acquisition_samples)
        .map(|_| {
            let p = uniform(dim, rng);
            (gp.expected_improvement(&p, best, xi), p)
        })
        .collect();
    cands.sort_by(|a, b| b.0.total_cmp(&a.0));
    cands.truncate(cfg.acquisition_starts.max(1));
    let mut best_c = cands[0].clone();
    for (mut v, mut p) in cands {
        let mut sigma = 0.1;
        while sigma > 0.002 {
            let noise = Normal::new(0.0, sigma).expect("positive sigma");
            let mut improved = false;
            for _ in 0..10 {
                let q: Vec<f64> = p.iter().map(|x| (x + noise.sample(rng)).clamp(0.0, 1.0)).collect();
                let w = gp.expected_improvement(&q, best, xi);
                if w > v {
                    v = w;
                    p = q;
                    improved = true;
                }
            }
            if !improved {
                sigma *= 0.5;
            }
        }
        if v > best_c.0 {
            best_c = (v, p);
        }
    }
    best_c.1
}

/// Minimizes `f` over the box `bounds` with Gaussian-process Bayesian
/// optimization: a Latin hypercube design, then one expected-improvement
/// maximizer per trial. Inputs are scaled to the unit cube for the
/// surrogate. Non-finite objective values are recorded but not modelled.
pub fn minimize<F>(mut f: F, bounds: &[(f64, f64)], cfg: &BoConfig) -> Result<BoResult, SvfaError>
where
    F: FnMut(&[f64]) -> f64,
{
    cfg.validate()?;
    let dim = bounds.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let scale = |u: &[f64]| -> Vec<f64> { u.iter().zip(bounds).map(|(x, (lo, hi))| lo + x * (hi - lo)).collect() };

    let mut xs: Vec<Vec<f64>> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    let mut history = Vec::with_capacity(cfg.trials);
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut surrogate_failed = false;
    let design = latin_hypercube(cfg.initial_design, dim, &mut rng);

    for t in 0..cfg.trials {
        let u = if let Some(point) = design.get(t) {
            point.clone()
        } else if cfg.random_search || surrogate_failed {
            uniform(dim, &mut rng)
        } else {
            let fx: Vec<Vec<f64>> = xs.iter().zip(&ys).filter(|(_, y)| y.is_finite()).map(|(x, _)| x.clone()).collect();
            let fy: Vec<f64> = ys.iter().copied().filter(|y| y.is_finite()).collect();
            match GaussianProcess::fit(&fx, &fy, &mut rng) {
                Some(gp) => {
                    let spread = {
                        let m = fy.iter().sum::<f64>() / fy.len() as f64;
                        (fy.iter().map(|y| (y - m).powi(2)).sum::<f64>() / fy.len() as f64).sqrt()
                    };
                    let incumbent = fy.iter().copied().fold(f64::INFINITY, f64::min);
                    maximize_ei(&gp, incumbent, cfg.xi * spread, dim, cfg, &mut rng)
                }
                None => {
                    surrogate_failed = true;
                    uniform(dim, &mut rng)
                }
            }
        };
        let x = scale(&u);
        let y = f(&x);
        if y.is_finite() && best.as_ref().is_none_or(|(b, _)| y < *b) {
            best = Some((y, x.clone()));
        }
        history.push(Trial { index: t, x: x.clone(), objective: y, incumbent: best.as_ref().map_or(f64::INFINITY, |b| b.0) });
        xs.push(u);
        ys.push(y);
    }
    let (best_objective, best_x) = best.unwrap_or((f64::INFINITY, scale(&design[0])));
    Ok(BoResult { best_x, best_objective, history, surrogate_failed })
}

/// Mean cycle time of the policy with weights `w` over the episodes with
/// seeds `base..base + n`. Every trial uses the same seeds.
fn svfa_objective(model: &Arc<ProcessModel>, w: WeightVector, cfg: &BoConfig) -> Result<f64, SvfaError> {
    let base = cfg.seed.wrapping_mul(1_000_003);
    let results: Result<Vec<f64>, _> = (0..cfg.sims_per_trial as u64)
        .into_par_iter()
        .map(|i| {
            let mut p = SvfaPolicy::new(w);
            run_episode(model, &mut p, cfg.horizon, base.wrapping_add(i)).map(|s| s.mean_cycle_time)
        })
        .collect();
    let v = results?;
    Ok(v.iter().sum::<f64>() / v.len() as f64)
}

/// Tunes the seven weights in `[0, 100]^7` to minimize mean cycle time.
pub fn bayes_optimize(model: &Arc<ProcessModel>, cfg: &BoConfig) -> Result<(WeightVector, BoResult), SvfaError> {
    let bounds = [WEIGHT_BOUNDS; 7];
    let mut err = None;
    let result = minimize(
        |x| {
            let w = WeightVector::new(x.try_into().expect("seven weights"));
            match svfa_objective(model, w, cfg) {
                Ok(v) => v,
                Err(e) => {
                    err.get_or_insert(e);
                    f64::NAN
                }
            }
        },
        &bounds,
        cfg,
    )?;
    if let Some(e) = err {
        return Err(e);
    }
    let w = WeightVector::new(result.best_x.clone().try_into().expect("seven weights"));
    Ok((w, result))
}

/// Writes `trial,w1..wD,objective,incumbent` rows.
pub fn write_history<W: Write>(out: W, history: &[Trial]) -> Result<(), SvfaError> {
    let mut w = csv::Writer::from_writer(out);
    let dim = history.first().map_or(7, |t| t.x.len());
    let mut header = vec!["trial".to_string()];
    header.extend((1..=dim).map(|i| format!("w{i}")));
    header.push("objective".into());
    header.push("incumbent".into());
    w.write_record(&header)?;
    for t in history {
        let mut row = vec![t.index.to_string()];
        row.extend(t.x.iter().map(|v| v.to_string()));
        row.push(t.objective.to_string());
        row.push(t.incumbent.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
