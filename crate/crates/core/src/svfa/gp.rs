use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

/// Hyperparameters of a squared-exponential kernel with one length scale
/// per input dimension and additive observation noise.
#[derive(Debug, Clone, PartialEq)]
pub struct GpHyper {
    pub length_scales: Vec<f64>,
    pub signal_var: f64,
    pub noise_var: f64,
}

impl GpHyper {
    fn to_log(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.length_scales.iter().map(|l| l.ln()).collect();
        v.push(self.signal_var.ln());
        v.push(self.noise_var.ln());
        v
    }

    fn from_log(v: &[f64]) -> Self {
        let d = v.len() - 2;
        GpHyper { length_scales: v[..d].iter().map(|x| x.exp()).collect(), signal_var: v[d].exp(), noise_var: v[d + 1].exp() }
    }
}

/// Log-space search box for the hyperparameters; inputs live in the unit
/// cube and outputs are standardized.
const LOG_LENGTH: (f64, f64) = (-4.6, 2.3);
const LOG_SIGNAL: (f64, f64) = (-3.0, 3.0);
const LOG_NOISE: (f64, f64) = (-13.8, 0.0);

fn log_bounds(dim: usize) -> Vec<(f64, f64)> {
    let mut b = vec![LOG_LENGTH; dim];
    b.push(LOG_SIGNAL);
    b.push(LOG_NOISE);
    b
}

/// Gaussian-process regression on points in the unit cube.
#[derive(Debug, Clone)]
pub struct GaussianProcess {
    x: Vec<Vec<f64>>,
    y_mean: f64,
    y_std: f64,
    hyper: GpHyper,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
}

fn kernel(h: &GpHyper, a: &[f64], b: &[f64]) -> f64 {
    let d2: f64 = a.iter().zip(b).zip(&h.length_scales).map(|((p, q), l)| ((p - q) / l).powi(2)).sum();
    h.signal_var * (-0.5 * d2).exp()
}

fn gram(h: &GpHyper, x: &[Vec<f64>]) -> DMatrix<f64> {
    let n = x.len();
    DMatrix::from_fn(n, n, |i, j| kernel(h, &x[i], &x[j]) + if i == j { h.noise_var + 1e-10 } else { 0.0 })
}

/// Negative log marginal likelihood (up to a constant) and the factors.
fn nll(h: &GpHyper, x: &[Vec<f64>], y: &DVector<f64>) -> Option<(f64, Cholesky<f64, Dyn>, DVector<f64>)> {
    let chol = Cholesky::new(gram(h, x))?;
    let alpha = chol.solve(y);
    let log_det: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
    let v = 0.5 * y.dot(&alpha) + 0.5 * log_det;
    v.is_finite().then_some((v, chol, alpha))
}

impl GaussianProcess {
    /// Fits with maximum-likelihood hyperparameters found by random search
    /// followed by a shrinking coordinate pattern search. Returns `None` if
    /// no hyperparameter setting gives a positive-definite kernel matrix.
    pub fn fit(x: &[Vec<f64>], y: &[f64], rng: &mut ChaCha8Rng) -> Option<Self> {
        assert_eq!(x.len(), y.len());
        if x.is_empty() || y.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let dim = x[0].len();
        let n = y.len() as f64;
        let y_mean = y.iter().sum::<f64>() / n;
        let var = y.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / n;
        let y_std = if var > 1e-24 { var.sqrt() } else { 1.0 };
        let ys = DVector::from_iterator(y.len(), y.iter().map(|v| (v - y_mean) / y_std));

        let bounds = log_bounds(dim);
        let eval = |p: &[f64]| nll(&GpHyper::from_log(p), x, &ys).map(|r| r.0).unwrap_or(f64::INFINITY);
        let default = GpHyper { length_scales: vec![0.3; dim], signal_var: 1.0, noise_var: 1e-4 }.to_log();
        let mut best = default.clone();
        let mut best_v = eval(&best);
        for _ in 0..150 {
            let p: Vec<f64> = bounds.iter().map(|&(lo, hi)| rng.random_range(lo..hi)).collect();
            let v = eval(&p);
            if v < best_v {
                best_v = v;
                best = p;
            }
        }
        let mut step = 1.0;
        while step > 0.02 {
            let mut improved = false;
            for i in 0..best.len() {
                for dir in [-1.0, 1.0] {
                    let mut p = best.clone();
                    p[i] = (p[i] + dir * step).clamp(bounds[i].0, bounds[i].1);
                    let v = eval(&p);
                    if v < best_v {
                        best_v = v;
                        best = p;
                        improved = true;
                    }
                }
            }
            if !improved {
                step *= 0.5;
            }
        }
        let hyper = GpHyper::from_log(&best);
        let (_, chol, alpha) = nll(&hyper, x, &ys)?;
        Some(GaussianProcess { x: x.to_vec(), y_mean, y_std, hyper, chol, alpha })
    }

    pub fn hyper(&self) -> &GpHyper {
        &self.hyper
    }

    /// Posterior mean and standard deviation of the latent function at `p`,
    /// in the original output units.
    pub fn predict(&self, p: &[f64]) -> (f64, f64) {
        let k = DVector::from_iterator(self.x.len(), self.x.iter().map(|xi| kernel(&self.hyper, xi, p)));
        let mu = k.dot(&self.alpha);
        let v = self.chol.solve(&k);
        let var = (self.hyper.signal_var - k.dot(&v)).max(1e-18);
        (self.y_mean + self.y_std * mu, self.y_std * var.sqrt())
    }

    /// Expected improvement below `best` (minimization), with margin `xi`
    /// in output units.
    pub fn expected_improvement(&self, p: &[f64], best: f64, xi: f64) -> f64 {
        let (mu, sd) = self.predict(p);
        let imp = best - mu - xi;
        if sd <= 1e-12 {
            return imp.max(0.0);
        }
        let z = imp / sd;
        let n = Normal::standard();
        imp * n.cdf(z) + sd * n.pdf(z)
    }
}
