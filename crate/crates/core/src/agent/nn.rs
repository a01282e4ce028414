//! A minimal dense-network engine: rectifier hidden layers, a sigmoid or
//! linear head, exact batch backpropagation and Adam. Everything is `f64`
//! so analytic gradients can be checked against central finite differences
//! to tight tolerances.

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputActivation {
    /// Squashes the head to `(0, 1)`; used by the actor.
    Sigmoid,
    /// Raw affine head; used by the quantile critic.
    Linear,
}

#[derive(Debug, Clone, PartialEq)]
struct Layer {
    /// `out_dim x in_dim`, row-major.
    w: Vec<f64>,
    b: Vec<f64>,
    in_dim: usize,
    out_dim: usize,
}

/// Fully connected network `sizes[0] -> ... -> sizes.last()`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    sizes: Vec<usize>,
    layers: Vec<Layer>,
    out_act: OutputActivation,
}

/// Per-layer gradients, shaped like the network parameters.
#[derive(Debug, Clone)]
pub struct Grads {
    w: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
}

/// Cached activations of one batch forward pass. `acts[0]` is the input;
/// `acts[l + 1]` holds layer `l` outputs after its activation.
pub struct BatchCache {
    batch: usize,
    acts: Vec<Vec<f64>>,
}

impl BatchCache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().unwrap()
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl DenseNet {
    /// He-normal hidden layers; the head starts near zero (uniform in
    /// `[-3e-3, 3e-3]`) so an untrained sigmoid actor outputs ~0.5.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], out_act: OutputActivation, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "need input and output sizes");
        let mut layers = Vec::with_capacity(sizes.len() - 1);
        for l in 0..sizes.len() - 1 {
            let (in_dim, out_dim) = (sizes[l], sizes[l + 1]);
            let last = l + 2 == sizes.len();
            let w = if last {
                (0..in_dim * out_dim)
                    .map(|_| rng.random_range(-3e-3..3e-3))
                    .collect()
            } else {
                let scale = (2.0 / in_dim as f64).sqrt();
                (0..in_dim * out_dim)
                    .map(|_| {
                        let u: f64 = rng.sample(rand_distr::StandardNormal);
                        u * scale
                    })
                    .collect()
            };
            layers.push(Layer {
                w,
                b: vec![0.0; out_dim],
                in_dim,
                out_dim,
            });
        }
        DenseNet {
            sizes: sizes.to_vec(),
            layers,
            out_act,
        }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.out_act
    }

    /// Zeroes the head layer (weights and biases).
    pub fn zero_output_layer(&mut self) {
        let last = self.layers.last_mut().unwrap();
        last.w.iter_mut().for_each(|w| *w = 0.0);
        last.b.iter_mut().for_each(|b| *b = 0.0);
    }

    /// Single-sample forward pass.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let cache = self.forward_batch(x, 1);
        cache.output().to_vec()
    }

    /// Single-sample head pre-activation (the actor's pre-squash logit).
    pub fn forward_preactivation(&self, x: &[f64]) -> Vec<f64> {
        let mut a = x.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let last = l + 1 == self.layers.len();
            let mut out = vec![0.0; layer.out_dim];
            for o in 0..layer.out_dim {
                let row = &layer.w[o * layer.in_dim..(o + 1) * layer.in_dim];
                let z: f64 =
                    layer.b[o] + row.iter().zip(&a).map(|(w, x)| w * x).sum::<f64>();
                out[o] = if last { z } else { z.max(0.0) };
            }
            a = out;
        }
        a
    }

    /// Batch forward pass over `batch` rows of `input_dim` features.
    pub fn forward_batch(&self, xs: &[f64], batch: usize) -> BatchCache {
        assert_eq!(xs.len(), batch * self.input_dim());
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(xs.to_vec());
        for (l, layer) in self.layers.iter().enumerate() {
            let last = l + 1 == self.layers.len();
            let prev = &acts[l];
            let mut out = vec![0.0; batch * layer.out_dim];
            for bi in 0..batch {
                let x = &prev[bi * layer.in_dim..(bi + 1) * layer.in_dim];
                let y = &mut out[bi * layer.out_dim..(bi + 1) * layer.out_dim];
                for o in 0..layer.out_dim {
                    let row = &layer.w[o * layer.in_dim..(o + 1) * layer.in_dim];
                    let z: f64 =
                        layer.b[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
                    y[o] = if last {
                        match self.out_act {
                            OutputActivation::Linear => z,
                            OutputActivation::Sigmoid => sigmoid(z),
                        }
                    } else {
                        z.max(0.0)
                    };
                }
            }
            acts.push(out);
        }
        BatchCache { batch, acts }
    }

    /// Backpropagates `dl_dout` (batch x output_dim) through the cached
    /// pass. Returns parameter gradients and the gradient with respect to
    /// the input batch.
    pub fn backward(&self, cache: &BatchCache, dl_dout: &[f64]) -> (Grads, Vec<f64>) {
        let batch = cache.batch;
        assert_eq!(dl_dout.len(), batch * self.output_dim());
        let mut grads = self.grads_zero();
        let mut upstream = dl_dout.to_vec();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let last = l + 1 == self.layers.len();
            let outputs = &cache.acts[l + 1];
            let inputs = &cache.acts[l];
            // dz = upstream (.) activation'
            let mut dz = upstream;
            for bi in 0..batch {
                for o in 0..layer.out_dim {
                    let y = outputs[bi * layer.out_dim + o];
                    let g = &mut dz[bi * layer.out_dim + o];
                    if last {
                        if self.out_act == OutputActivation::Sigmoid {
                            *g *= y * (1.0 - y);
                        }
                    } else if y <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            let gw = &mut grads.w[l];
            let gb = &mut grads.b[l];
            let mut dl_din = vec![0.0; batch * layer.in_dim];
            for bi in 0..batch {
                let x = &inputs[bi * layer.in_dim..(bi + 1) * layer.in_dim];
                let dzb = &dz[bi * layer.out_dim..(bi + 1) * layer.out_dim];
                let din = &mut dl_din[bi * layer.in_dim..(bi + 1) * layer.in_dim];
                for o in 0..layer.out_dim {
                    let g = dzb[o];
                    if g == 0.0 {
                        continue;
                    }
                    gb[o] += g;
                    let wrow = &layer.w[o * layer.in_dim..(o + 1) * layer.in_dim];
                    let grow = &mut gw[o * layer.in_dim..(o + 1) * layer.in_dim];
                    for i in 0..layer.in_dim {
                        grow[i] += g * x[i];
                        din[i] += g * wrow[i];
                    }
                }
            }
            upstream = dl_din;
        }
        (grads, upstream)
    }

    pub fn grads_zero(&self) -> Grads {
        Grads {
            w: self.layers.iter().map(|l| vec![0.0; l.w.len()]).collect(),
            b: self.layers.iter().map(|l| vec![0.0; l.b.len()]).collect(),
        }
    }

    /// Target-network soft update: `self += tau * (main - self)`.
    pub fn soft_update_from(&mut self, main: &DenseNet, tau: f64) {
        for (t, m) in self.layers.iter_mut().zip(&main.layers) {
            for (tw, mw) in t.w.iter_mut().zip(&m.w) {
                *tw += tau * (*mw - *tw);
            }
            for (tb, mb) in t.b.iter_mut().zip(&m.b) {
                *tb += tau * (*mb - *tb);
            }
        }
    }

    /// L2 distance between parameter vectors.
    pub fn param_distance(&self, other: &DenseNet) -> f64 {
        let mut sum = 0.0;
        for (a, b) in self.layers.iter().zip(&other.layers) {
            sum += a
                .w
                .iter()
                .zip(&b.w)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>();
            sum += a
                .b
                .iter()
                .zip(&b.b)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>();
        }
        sum.sqrt()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn param_get(&self, mut idx: usize) -> f64 {
        for l in &self.layers {
            if idx < l.w.len() {
                return l.w[idx];
            }
            idx -= l.w.len();
            if idx < l.b.len() {
                return l.b[idx];
            }
            idx -= l.b.len();
        }
        panic!("parameter index out of range");
    }

    pub fn param_add(&mut self, mut idx: usize, delta: f64) {
        for l in &mut self.layers {
            if idx < l.w.len() {
                l.w[idx] += delta;
                return;
            }
            idx -= l.w.len();
            if idx < l.b.len() {
                l.b[idx] += delta;
                return;
            }
            idx -= l.b.len();
        }
        panic!("parameter index out of range");
    }

    /// Gradient at a flat parameter index, matching [`Self::param_get`].
    pub fn grad_get(&self, grads: &Grads, mut idx: usize) -> f64 {
        for (l, layer) in self.layers.iter().enumerate() {
            if idx < layer.w.len() {
                return grads.w[l][idx];
            }
            idx -= layer.w.len();
            if idx < layer.b.len() {
                return grads.b[l][idx];
            }
            idx -= layer.b.len();
        }
        panic!("parameter index out of range");
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.w);
            out.extend_from_slice(&l.b);
        }
        out
    }

    pub fn set_params_flat(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::invalid(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                params.len()
            )));
        }
        let mut offset = 0;
        for l in &mut self.layers {
            let wn = l.w.len();
            l.w.copy_from_slice(&params[offset..offset + wn]);
            offset += wn;
            let bn = l.b.len();
            l.b.copy_from_slice(&params[offset..offset + bn]);
            offset += bn;
        }
        Ok(())
    }
}

/// Adam optimizer with per-parameter first/second moment estimates.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Grads,
    v: Grads,
}

impl Adam {
    pub fn new(net: &DenseNet, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: net.grads_zero(),
            v: net.grads_zero(),
        }
    }

    pub fn step(&mut self, net: &mut DenseNet, grads: &Grads) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (l, layer) in net.layers.iter_mut().enumerate() {
            for (param, (g, (m, v))) in layer.w.iter_mut().zip(
                grads.w[l]
                    .iter()
                    .zip(self.m.w[l].iter_mut().zip(self.v.w[l].iter_mut())),
            ) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                *param -= self.lr * (*m / bc1) / ((*v / bc2).sqrt() + self.eps);
            }
            for (param, (g, (m, v))) in layer.b.iter_mut().zip(
                grads.b[l]
                    .iter()
                    .zip(self.m.b[l].iter_mut().zip(self.v.b[l].iter_mut())),
            ) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                *param -= self.lr * (*m / bc1) / ((*v / bc2).sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn net(sizes: &[usize], act: OutputActivation, seed: u64) -> DenseNet {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        DenseNet::new(sizes, act, &mut rng)
    }

    #[test]
    fn zeroed_head_sigmoid_outputs_half() {
        let mut n = net(&[4, 8, 1], OutputActivation::Sigmoid, 1);
        n.zero_output_layer();
        let y = n.forward(&[0.3, -0.5, 1.0, 2.0]);
        assert_eq!(y, vec![0.5]);
        assert_eq!(n.forward_preactivation(&[0.3, -0.5, 1.0, 2.0]), vec![0.0]);
    }

    /// Scalar loss L = sum(out) for gradient checks.
    fn loss_and_grads(n: &DenseNet, xs: &[f64], batch: usize) -> (f64, Grads) {
        let cache = n.forward_batch(xs, batch);
        let loss: f64 = cache.output().iter().sum();
        let dl = vec![1.0; cache.output().len()];
        let (grads, _) = n.backward(&cache, &dl);
        (loss, grads)
    }

    fn check_gradients(sizes: &[usize], act: OutputActivation, seed: u64) {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let n0 = DenseNet::new(sizes, act, &mut rng);
        let batch = 3;
        let xs: Vec<f64> = (0..batch * sizes[0])
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let (_, grads) = loss_and_grads(&n0, &xs, batch);
        let h = 1e-6;
        for idx in (0..n0.param_count()).step_by(7) {
            let mut up = n0.clone();
            up.param_add(idx, h);
            let (lu, _) = loss_and_grads(&up, &xs, batch);
            let mut dn = n0.clone();
            dn.param_add(idx, -h);
            let (ld, _) = loss_and_grads(&dn, &xs, batch);
            let fd = (lu - ld) / (2.0 * h);
            let an = n0.grad_get(&grads, idx);
            let denom = an.abs().max(fd.abs()).max(1e-6);
            assert!(
                (an - fd).abs() / denom <= 1e-4,
                "param {idx}: analytic {an} vs fd {fd}"
            );
        }
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        check_gradients(&[3, 8, 6, 2], OutputActivation::Linear, 11);
        check_gradients(&[5, 10, 1], OutputActivation::Sigmoid, 12);
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let n = net(&[4, 6, 2], OutputActivation::Linear, 3);
        let x = [0.2, -0.4, 0.9, 1.3];
        let cache = n.forward_batch(&x, 1);
        let dl = vec![1.0, 1.0];
        let (_, din) = n.backward(&cache, &dl);
        let h = 1e-6;
        for i in 0..4 {
            let mut xu = x;
            xu[i] += h;
            let mut xd = x;
            xd[i] -= h;
            let lu: f64 = n.forward(&xu).iter().sum();
            let ld: f64 = n.forward(&xd).iter().sum();
            let fd = (lu - ld) / (2.0 * h);
            assert!(
                (din[i] - fd).abs() <= 1e-6 * fd.abs().max(1.0),
                "input grad {i}: {} vs {fd}",
                din[i]
            );
        }
    }

    #[test]
    fn soft_update_contracts_toward_main() {
        let main = net(&[3, 6, 2], OutputActivation::Linear, 21);
        let mut target = net(&[3, 6, 2], OutputActivation::Linear, 22);
        let mut prev = target.param_distance(&main);
        for _ in 0..20 {
            target.soft_update_from(&main, 0.1);
            let d = target.param_distance(&main);
            assert!(d < prev, "distance must shrink monotonically");
            prev = d;
        }
    }

    #[test]
    fn params_flat_round_trip() {
        let a = net(&[4, 5, 3], OutputActivation::Linear, 31);
        let mut b = net(&[4, 5, 3], OutputActivation::Linear, 99);
        b.set_params_flat(&a.params_flat()).unwrap();
        assert_eq!(a, b);
        assert!(b.set_params_flat(&[0.0]).is_err());
    }

    #[test]
    fn adam_descends_a_quadratic() {
        // Fit y = 2x via a linear net; Adam should reduce the loss.
        let mut n = net(&[1, 1], OutputActivation::Linear, 7);
        let mut adam = Adam::new(&n, 0.05);
        let xs = [1.0, -2.0, 0.5, 3.0];
        let mut first_loss = None;
        let mut last_loss = 0.0;
        for _ in 0..200 {
            let cache = n.forward_batch(&xs, 4);
            let out = cache.output().to_vec();
            let mut dl = vec![0.0; 4];
            let mut loss = 0.0;
            for i in 0..4 {
                let err = out[i] - 2.0 * xs[i];
                loss += err * err / 4.0;
                dl[i] = 2.0 * err / 4.0;
            }
            let (grads, _) = n.backward(&cache, &dl);
            adam.step(&mut n, &grads);
            first_loss.get_or_insert(loss);
            last_loss = loss;
        }
        assert!(last_loss < 1e-3 * first_loss.unwrap());
    }
}
