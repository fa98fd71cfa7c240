//! Minimal fully-connected network with manual backpropagation.
//!
//! Everything is batched `f64` matrix math on top of `ndarray`, which is fast
//! enough for the model sizes used here (two hidden layers of 256) and keeps
//! training bit-reproducible across runs on the same platform.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// ReLU network: linear layers with rectification between them, linear output.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Mlp {
    dims: Vec<usize>,
    /// Per layer: weight matrix (in x out).
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
}

/// Per-layer parameter gradients from one backward pass.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

/// Layer inputs retained by the forward pass for backprop.
pub struct ForwardCache {
    inputs: Vec<Array2<f64>>,
}

impl Mlp {
    /// He-initialized network with the given layer sizes (input first).
    pub fn new(dims: &[usize], rng: &mut impl Rng) -> Self {
        Self::new_with_gain(dims, rng, 1.0)
    }

    /// He-style init with the weight scale multiplied by `gain`. Gains above
    /// one produce higher-frequency random functions, used for the frozen
    /// prior networks so that nearby inputs decorrelate faster.
    pub fn new_with_gain(dims: &[usize], rng: &mut impl Rng, gain: f64) -> Self {
        assert!(dims.len() >= 2, "need at least input and output dims");
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in dims.windows(2) {
            let (n_in, n_out) = (w[0], w[1]);
            let scale = gain * (2.0 / n_in as f64).sqrt();
            let weight = Array2::from_shape_fn((n_in, n_out), |_| {
                // Box-Muller from two uniforms keeps the dependency surface small
                // and the draw order deterministic.
                let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
                let u2: f64 = rng.gen_range(0.0..1.0);
                scale * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
            });
            weights.push(weight);
            biases.push(Array1::zeros(n_out));
        }
        Self {
            dims: dims.to_vec(),
            weights,
            biases,
        }
    }

    /// Zero-initialized network, e.g. a shell to load saved parameters into.
    pub fn zeros(dims: &[usize]) -> Self {
        assert!(dims.len() >= 2, "need at least input and output dims");
        Self {
            dims: dims.to_vec(),
            weights: dims.windows(2).map(|w| Array2::zeros((w[0], w[1]))).collect(),
            biases: dims.windows(2).map(|w| Array1::zeros(w[1])).collect(),
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    /// Batched forward pass; rows are samples.
    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut h = x.clone();
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            h = h.dot(w) + b;
            if i + 1 < self.weights.len() {
                h.mapv_inplace(|v| v.max(0.0));
            }
        }
        h
    }

    /// Forward pass that retains layer inputs for `backward`.
    pub fn forward_cached(&self, x: &Array2<f64>) -> (Array2<f64>, ForwardCache) {
        let mut inputs = Vec::with_capacity(self.weights.len());
        let mut h = x.clone();
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            inputs.push(h.clone());
            h = h.dot(w) + b;
            if i + 1 < self.weights.len() {
                h.mapv_inplace(|v| v.max(0.0));
            }
        }
        (h, ForwardCache { inputs })
    }

    /// Backpropagate `grad_out` (dLoss/dOutput) through the cached pass.
    /// Returns parameter gradients and the gradient w.r.t. the input batch.
    pub fn backward(&self, cache: &ForwardCache, grad_out: &Array2<f64>) -> (Gradients, Array2<f64>) {
        let n_layers = self.weights.len();
        let mut grad_w = vec![Array2::zeros((0, 0)); n_layers];
        let mut grad_b = vec![Array1::zeros(0); n_layers];
        let mut grad = grad_out.clone();
        for i in (0..n_layers).rev() {
            let input = &cache.inputs[i];
            if i + 1 < n_layers {
                // The stored input of layer i+1 is layer i's post-ReLU output;
                // its positive entries mark where the ReLU passed gradient.
                let post = &cache.inputs[i + 1];
                grad.zip_mut_with(post, |g, &p| {
                    if p <= 0.0 {
                        *g = 0.0;
                    }
                });
            }
            grad_w[i] = input.t().dot(&grad);
            grad_b[i] = grad.sum_axis(Axis(0));
            grad = grad.dot(&self.weights[i].t());
        }
        (
            Gradients {
                weights: grad_w,
                biases: grad_b,
            },
            grad,
        )
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// All parameters flattened in a fixed order (per layer: weights row-major,
    /// then biases). Used by checkpoints and finite-difference checks.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params());
        let mut idx = 0;
        for (w, b) in self.weights.iter_mut().zip(&mut self.biases) {
            for v in w.iter_mut() {
                *v = flat[idx];
                idx += 1;
            }
            for v in b.iter_mut() {
                *v = flat[idx];
                idx += 1;
            }
        }
    }

    pub fn grads_flat(grads: &Gradients) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in grads.weights.iter().zip(&grads.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }
}

/// Adam optimizer state for one network.
#[derive(Debug, Clone)]
pub struct Adam {
    m_w: Vec<Array2<f64>>,
    v_w: Vec<Array2<f64>>,
    m_b: Vec<Array1<f64>>,
    v_b: Vec<Array1<f64>>,
    t: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(net: &Mlp) -> Self {
        Self {
            m_w: net.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            v_w: net.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            m_b: net.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
            v_b: net.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step(&mut self, net: &mut Mlp, grads: &Gradients, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..net.weights.len() {
            update(
                &mut net.weights[i],
                &grads.weights[i],
                &mut self.m_w[i],
                &mut self.v_w[i],
                self.beta1,
                self.beta2,
                self.eps,
                lr,
                bc1,
                bc2,
            );
            update1(
                &mut net.biases[i],
                &grads.biases[i],
                &mut self.m_b[i],
                &mut self.v_b[i],
                self.beta1,
                self.beta2,
                self.eps,
                lr,
                bc1,
                bc2,
            );
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn update(
    param: &mut Array2<f64>,
    grad: &Array2<f64>,
    m: &mut Array2<f64>,
    v: &mut Array2<f64>,
    beta1: f64,
    beta2: f64,
    eps: f64,
    lr: f64,
    bc1: f64,
    bc2: f64,
) {
    m.zip_mut_with(grad, |m, &g| *m = beta1 * *m + (1.0 - beta1) * g);
    v.zip_mut_with(grad, |v, &g| *v = beta2 * *v + (1.0 - beta2) * g * g);
    ndarray::Zip::from(param)
        .and(&*m)
        .and(&*v)
        .for_each(|p, &m, &v| {
            *p -= lr * (m / bc1) / ((v / bc2).sqrt() + eps);
        });
}

#[allow(clippy::too_many_arguments)]
fn update1(
    param: &mut Array1<f64>,
    grad: &Array1<f64>,
    m: &mut Array1<f64>,
    v: &mut Array1<f64>,
    beta1: f64,
    beta2: f64,
    eps: f64,
    lr: f64,
    bc1: f64,
    bc2: f64,
) {
    m.zip_mut_with(grad, |m, &g| *m = beta1 * *m + (1.0 - beta1) * g);
    v.zip_mut_with(grad, |v, &g| *v = beta2 * *v + (1.0 - beta2) * g * g);
    ndarray::Zip::from(param)
        .and(&*m)
        .and(&*v)
        .for_each(|p, &m, &v| {
            *p -= lr * (m / bc1) / ((v / bc2).sqrt() + eps);
        });
}

/// Cosine-annealed learning rate from `base` down to zero over `total` steps.
pub fn cosine_lr(base: f64, step: usize, total: usize) -> f64 {
    let frac = (step as f64 / total.max(1) as f64).min(1.0);
    base * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
}

/// Mean squared error and its gradient w.r.t. predictions.
pub fn mse_loss(pred: &Array2<f64>, target: &Array2<f64>) -> (f64, Array2<f64>) {
    let diff = pred - target;
    let n = pred.len() as f64;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
    let grad = diff.mapv(|d| 2.0 * d / n);
    (loss, grad)
}

/// Binary cross-entropy on logits (numerically stable) and its gradient.
/// Targets are 0/1 values, one column.
pub fn bce_with_logits_loss(logits: &Array2<f64>, target: &Array2<f64>) -> (f64, Array2<f64>) {
    let n = logits.len() as f64;
    let mut loss = 0.0;
    let mut grad = logits.clone();
    for (g, (&z, &y)) in grad.iter_mut().zip(logits.iter().zip(target.iter())) {
        loss += z.max(0.0) - z * y + (1.0 + (-z.abs()).exp()).ln();
        *g = (sigmoid(z) - y) / n;
    }
    (loss / n, grad)
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_net(seed: u64) -> Mlp {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Mlp::new(&[3, 5, 4, 2], &mut rng)
    }

    /// Central finite differences on the flat parameter vector.
    fn numeric_grad(net: &Mlp, x: &Array2<f64>, target: &Array2<f64>, mse: bool) -> Vec<f64> {
        let mut probe = net.clone();
        let mut flat = net.params_flat();
        let eps = 1e-5;
        let mut out = Vec::with_capacity(flat.len());
        for i in 0..flat.len() {
            let orig = flat[i];
            flat[i] = orig + eps;
            probe.set_params_flat(&flat);
            let hi = loss_of(&probe, x, target, mse);
            flat[i] = orig - eps;
            probe.set_params_flat(&flat);
            let lo = loss_of(&probe, x, target, mse);
            flat[i] = orig;
            out.push((hi - lo) / (2.0 * eps));
        }
        out
    }

    fn loss_of(net: &Mlp, x: &Array2<f64>, target: &Array2<f64>, mse: bool) -> f64 {
        let pred = net.forward(x);
        if mse {
            mse_loss(&pred, target).0
        } else {
            bce_with_logits_loss(&pred, target).0
        }
    }

    fn check_grads(mse: bool) {
        let net = tiny_net(11);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let x = Array2::from_shape_fn((6, 3), |_| rng.gen_range(-1.0..1.0));
        let target = if mse {
            Array2::from_shape_fn((6, 2), |_| rng.gen_range(-1.0..1.0))
        } else {
            Array2::from_shape_fn((6, 2), |_| f64::from(rng.gen_bool(0.5)))
        };
        let (pred, cache) = net.forward_cached(&x);
        let grad_out = if mse {
            mse_loss(&pred, &target).1
        } else {
            bce_with_logits_loss(&pred, &target).1
        };
        let (grads, _) = net.backward(&cache, &grad_out);
        let analytic = Mlp::grads_flat(&grads);
        let numeric = numeric_grad(&net, &x, &target, mse);
        assert_eq!(analytic.len(), numeric.len());
        for (i, (&a, &n)) in analytic.iter().zip(&numeric).enumerate() {
            let denom = a.abs().max(n.abs()).max(1e-8);
            let rel = (a - n).abs() / denom;
            assert!(rel <= 1e-4, "param {i}: analytic {a}, numeric {n}, rel {rel}");
        }
    }

    #[test]
    fn gradient_check_mse() {
        check_grads(true);
    }

    #[test]
    fn gradient_check_bce() {
        check_grads(false);
    }

    #[test]
    fn params_round_trip() {
        let net = tiny_net(5);
        let mut other = tiny_net(6);
        assert_ne!(net, other);
        other.set_params_flat(&net.params_flat());
        assert_eq!(net, other);
    }

    #[test]
    fn adam_reduces_loss_on_regression() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = Mlp::new(&[2, 32, 1], &mut rng);
        let mut opt = Adam::new(&net);
        let x = Array2::<f64>::from_shape_fn((64, 2), |_| rng.gen_range(-1.0..1.0));
        let target = {
            let mut t = Array2::zeros((64, 1));
            for (i, row) in x.rows().into_iter().enumerate() {
                t[[i, 0]] = (row[0] * 3.0).sin() + row[1];
            }
            t
        };
        let initial = loss_of(&net, &x, &target, true);
        for step in 0..400 {
            let (pred, cache) = net.forward_cached(&x);
            let (_, grad_out) = mse_loss(&pred, &target);
            let (grads, _) = net.backward(&cache, &grad_out);
            opt.step(&mut net, &grads, cosine_lr(1e-2, step, 400));
        }
        let trained = loss_of(&net, &x, &target, true);
        assert!(trained < initial * 0.05, "loss {initial} -> {trained}");
    }

    #[test]
    fn cosine_schedule_endpoints() {
        assert!((cosine_lr(1.0, 0, 100) - 1.0).abs() < 1e-12);
        assert!(cosine_lr(1.0, 100, 100).abs() < 1e-12);
        assert!((cosine_lr(1.0, 50, 100) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn forward_matches_hand_computation() {
        let mut net = tiny_net(1);
        // Overwrite with a known tiny configuration: 3 -> 5 -> 4 -> 2 is too
        // big to hand-check, so collapse to near-identity pieces instead.
        let n = net.num_params();
        net.set_params_flat(&vec![0.0; n]);
        let x = arr2(&[[1.0, -2.0, 0.5]]);
        let y = net.forward(&x);
        assert_eq!(y, arr2(&[[0.0, 0.0]]));
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(1000.0), 1.0);
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
    }
}
