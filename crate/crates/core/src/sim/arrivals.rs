use crate::model::ArrivalSpec;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

/// External arrival process of one simulation run.
///
/// Constant rates give exponential inter-arrival times. Patterns are sampled
/// by thinning: candidate gaps are drawn at `lambda_max` and a candidate at
/// time `t` is kept with probability `rate(t) / lambda_max`, e.g. about
/// 0.568 at rate 0.5 under a peak of 0.88 (not 0.44).
#[derive(Debug, Clone, PartialEq)]
pub struct ArrivalProcess {
    spec: ArrivalSpec,
    rng: ChaCha8Rng,
    last: f64,
}

impl ArrivalProcess {
    pub fn new(spec: ArrivalSpec, rng: ChaCha8Rng) -> Self {
        ArrivalProcess { spec, rng, last: 0.0 }
    }

    /// Draws the arrival following the previous one (or time 0).
    pub fn next_arrival(&mut self) -> f64 {
        self.last = match &self.spec {
            ArrivalSpec::Constant { rate } => self.last + exp(*rate, &mut self.rng),
            ArrivalSpec::Pattern(p) => {
                let mut t = self.last;
                loop {
                    t += exp(p.lambda_max, &mut self.rng);
                    let accept = p.rate_at(t) / p.lambda_max;
                    if accept >= 1.0 || self.rng.random::<f64>() < accept {
                        break t;
                    }
                }
            }
        };
        self.last
    }

    pub fn last(&self) -> f64 {
        self.last
    }
}

pub(crate) fn exp(rate: f64, rng: &mut ChaCha8Rng) -> f64 {
    Exp::new(rate).expect("rates are validated positive").sample(rng)
}
