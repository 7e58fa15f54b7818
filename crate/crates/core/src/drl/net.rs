use nalgebra::{DMatrix, DMatrixView, DMatrixViewMut, DVectorView};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the activation's output.
    fn slope(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Fully connected network over a slice of a flat parameter vector. Each
/// layer stores its weight matrix (column-major, outputs by inputs)
/// followed by its bias.
#[derive(Debug, Clone, PartialEq)]
struct Mlp {
    sizes: Vec<usize>,
}

/// Layer outputs of a batch, inputs first; one column per sample.
struct Trace {
    layers: Vec<DMatrix<f64>>,
}

impl Mlp {
    fn n_params(&self) -> usize {
        self.sizes.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
    }

    fn layer<'a>(&self, params: &'a [f64], i: usize, offset: usize) -> (DMatrixView<'a, f64>, DVectorView<'a, f64>, usize) {
        let (n_in, n_out) = (self.sizes[i], self.sizes[i + 1]);
        let w = DMatrixView::from_slice(&params[offset..offset + n_out * n_in], n_out, n_in);
        let b = DVectorView::from_slice(&params[offset + n_out * n_in..offset + n_out * n_in + n_out], n_out);
        (w, b, offset + n_out * n_in + n_out)
    }

    fn forward(&self, params: &[f64], x: DMatrix<f64>, act: Activation) -> Trace {
        let mut layers = vec![x];
        let mut off = 0;
        let last = self.sizes.len() - 2;
        for i in 0..=last {
            let (w, b, next) = self.layer(params, i, off);
            off = next;
            let mut z = w * layers.last().expect("input layer");
            for mut col in z.column_iter_mut() {
                col += b;
            }
            if i < last {
                z.apply(|v| *v = act.apply(*v));
            }
            layers.push(z);
        }
        Trace { layers }
    }

    /// Adds the gradient of `sum(d_out .* output)` to `grad`.
    fn backward(&self, params: &[f64], trace: &Trace, d_out: DMatrix<f64>, act: Activation, grad: &mut [f64]) {
        let n_layers = self.sizes.len() - 1;
        let mut offsets = Vec::with_capacity(n_layers);
        let mut off = 0;
        for i in 0..n_layers {
            offsets.push(off);
            off += self.sizes[i + 1] * self.sizes[i] + self.sizes[i + 1];
        }
        let mut dz = d_out;
        for i in (0..n_layers).rev() {
            let (n_in, n_out) = (self.sizes[i], self.sizes[i + 1]);
            let o = offsets[i];
            let input = &trace.layers[i];
            {
                let mut gw = DMatrixViewMut::from_slice(&mut grad[o..o + n_out * n_in], n_out, n_in);
                gw.gemm(1.0, &dz, &input.transpose(), 1.0);
            }
            let gb = &mut grad[o + n_out * n_in..o + n_out * n_in + n_out];
            for (j, g) in gb.iter_mut().enumerate() {
                *g += dz.row(j).sum();
            }
            if i > 0 {
                let (w, _, _) = self.layer(params, i, o);
                let mut dh = w.transpose() * &dz;
                dh.zip_apply(input, |d, y| *d *= act.slope(y));
                dz = dh;
            }
        }
    }

    fn init(&self, params: &mut [f64], out_gain: f64, rng: &mut ChaCha8Rng) {
        let mut off = 0;
        let n_layers = self.sizes.len() - 1;
        for i in 0..n_layers {
            let (n_in, n_out) = (self.sizes[i], self.sizes[i + 1]);
            let gain = if i + 1 == n_layers { out_gain } else { 1.0 };
            let std = gain / (n_in as f64).sqrt();
            for p in &mut params[off..off + n_out * n_in] {
                let z: f64 = StandardNormal.sample(rng);
                *p = z * std;
            }
            for p in &mut params[off + n_out * n_in..off + n_out * n_in + n_out] {
                *p = 0.0;
            }
            off += n_out * n_in + n_out;
        }
    }
}

/// Separate actor and critic networks sharing one flat parameter vector,
/// actor first.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet {
    obs_dim: usize,
    n_actions: usize,
    hidden: Vec<usize>,
    activation: Activation,
    actor: Mlp,
    critic: Mlp,
    pub params: Vec<f64>,
}

/// Forward pass of a batch, kept for the backward pass.
pub struct BatchOutput {
    /// Logits, one column per sample.
    pub logits: DMatrix<f64>,
    pub values: Vec<f64>,
    actor: Trace,
    critic: Trace,
}

impl PolicyNet {
    /// A network with all parameters zero.
    pub fn zeros(obs_dim: usize, n_actions: usize, hidden: &[usize], activation: Activation) -> Self {
        let mut sizes = vec![obs_dim];
        sizes.extend_from_slice(hidden);
        let mut actor_sizes = sizes.clone();
        actor_sizes.push(n_actions);
        sizes.push(1);
        let actor = Mlp { sizes: actor_sizes };
        let critic = Mlp { sizes };
        let n = actor.n_params() + critic.n_params();
        PolicyNet { obs_dim, n_actions, hidden: hidden.to_vec(), activation, actor, critic, params: vec![0.0; n] }
    }

    /// Gaussian initialization scaled by fan-in, with a small actor output
    /// layer so the initial policy is close to uniform.
    pub fn new(obs_dim: usize, n_actions: usize, hidden: &[usize], activation: Activation, seed: u64) -> Self {
        let mut net = Self::zeros(obs_dim, n_actions, hidden, activation);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let split = net.actor.n_params();
        let (a, c) = net.params.split_at_mut(split);
        net.actor.init(a, 0.01, &mut rng);
        net.critic.init(c, 1.0, &mut rng);
        net
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn hidden(&self) -> &[usize] {
        &self.hidden
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    fn split(&self) -> usize {
        self.actor.n_params()
    }

    /// `obs` holds `batch` observations back to back.
    pub fn forward_batch(&self, obs: &[f64], batch: usize) -> BatchOutput {
        assert_eq!(obs.len(), batch * self.obs_dim, "observation shape");
        let x = DMatrix::from_column_slice(self.obs_dim, batch, obs);
        let (pa, pc) = self.params.split_at(self.split());
        let actor = self.actor.forward(pa, x.clone(), self.activation);
        let critic = self.critic.forward(pc, x, self.activation);
        let logits = actor.layers.last().expect("output layer").clone();
        let values = critic.layers.last().expect("output layer").iter().copied().collect();
        BatchOutput { logits, values, actor, critic }
    }

    /// Adds to `grad` the gradient of `sum(d_logits .* logits) + d_values . values`.
    pub fn backward_batch(&self, out: &BatchOutput, d_logits: DMatrix<f64>, d_values: &[f64], grad: &mut [f64]) {
        let split = self.split();
        let (pa, pc) = self.params.split_at(split);
        let (ga, gc) = grad.split_at_mut(split);
        self.actor.backward(pa, &out.actor, d_logits, self.activation, ga);
        let dv = DMatrix::from_row_slice(1, d_values.len(), d_values);
        self.critic.backward(pc, &out.critic, dv, self.activation, gc);
    }

    pub fn logits_and_value(&self, obs: &[f64]) -> (Vec<f64>, f64) {
        let out = self.forward_batch(obs, 1);
        (out.logits.iter().copied().collect(), out.values[0])
    }

    /// Masked action probabilities and the state value.
    pub fn forward(&self, obs: &[f64], mask: &[bool]) -> (Vec<f64>, f64) {
        let (logits, v) = self.logits_and_value(obs);
        (masked_distribution(&logits, mask), v)
    }

    pub fn value(&self, obs: &[f64]) -> f64 {
        self.logits_and_value(obs).1
    }

    /// Gradient of `log pi(action | obs)` under the mask.
    pub fn grad_log_prob(&self, obs: &[f64], mask: &[bool], action: usize) -> Vec<f64> {
        let out = self.forward_batch(obs, 1);
        let logits: Vec<f64> = out.logits.iter().copied().collect();
        let p = masked_distribution(&logits, mask);
        let d = DMatrix::from_iterator(self.n_actions, 1, (0..self.n_actions).map(|i| f64::from(i == action) - p[i]));
        let mut g = vec![0.0; self.n_params()];
        self.backward_batch(&out, d, &[0.0], &mut g);
        g
    }

    pub fn grad_value(&self, obs: &[f64]) -> Vec<f64> {
        let out = self.forward_batch(obs, 1);
        let mut g = vec![0.0; self.n_params()];
        self.backward_batch(&out, DMatrix::zeros(self.n_actions, 1), &[1.0], &mut g);
        g
    }
}

/// Softmax over the feasible entries; infeasible entries are exactly 0.
pub fn masked_distribution(logits: &[f64], mask: &[bool]) -> Vec<f64> {
    assert_eq!(logits.len(), mask.len(), "mask length");
    let max = logits.iter().zip(mask).filter(|(_, &m)| m).map(|(l, _)| *l).fold(f64::NEG_INFINITY, f64::max);
    assert!(max.is_finite(), "mask needs a feasible action with a finite logit");
    let mut p: Vec<f64> = logits.iter().zip(mask).map(|(l, &m)| if m { (l - max).exp() } else { 0.0 }).collect();
    let total: f64 = p.iter().sum();
    for v in &mut p {
        *v /= total;
    }
    p
}

/// Log-probabilities of the feasible entries (others are `-inf`).
pub fn masked_log_softmax(logits: &[f64], mask: &[bool]) -> Vec<f64> {
    let max = logits.iter().zip(mask).filter(|(_, &m)| m).map(|(l, _)| *l).fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().zip(mask).filter(|(_, &m)| m).map(|(l, _)| (l - max).exp()).sum::<f64>().ln();
    logits.iter().zip(mask).map(|(l, &m)| if m { l - lse } else { f64::NEG_INFINITY }).collect()
}

/// Index of the largest feasible probability; the lowest index wins ties.
pub fn masked_argmax(logits: &[f64], mask: &[bool]) -> usize {
    let mut best: Option<usize> = None;
    for (i, (&l, &m)) in logits.iter().zip(mask).enumerate() {
        if m && best.is_none_or(|b| l > logits[b]) {
            best = Some(i);
        }
    }
    best.expect("mask needs a feasible action")
}
