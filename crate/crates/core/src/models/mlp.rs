//! Fully connected ReLU network trained with Adam on mean squared error.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::distr::{Distribution, Uniform};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{LossPoint, ModelError};
use crate::scalar::Scalar;
use crate::seed::{derive_seed, Purpose};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpHyper {
    pub hidden_layers: Vec<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_validation")]
    pub validation_fraction: f64,
}

fn default_epochs() -> usize {
    300
}
fn default_patience() -> usize {
    20
}
fn default_validation() -> f64 {
    0.1
}

impl MlpHyper {
    pub fn new(hidden_layers: Vec<usize>, learning_rate: f64, batch_size: usize) -> Self {
        Self {
            hidden_layers,
            learning_rate,
            batch_size,
            max_epochs: default_epochs(),
            patience: default_patience(),
            validation_fraction: default_validation(),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let ok = self.hidden_layers.iter().all(|w| *w > 0)
            && self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && self.batch_size > 0
            && self.max_epochs > 0
            && (0.0..1.0).contains(&self.validation_fraction);
        if !ok {
            return Err(ModelError::BadHyper(format!("invalid network settings {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer<T> {
    /// `inputs × outputs`.
    pub weights: Array2<T>,
    pub bias: Array1<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp<T> {
    pub layers: Vec<Layer<T>>,
}

impl<T: Scalar> Mlp<T> {
    /// Uniform `±1/sqrt(fan_in)` initialization for weights and biases.
    pub fn init(sizes: &[usize], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = sizes
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
                let weights = Array2::from_shape_simple_fn((w[0], w[1]), || T::lit(dist.sample(&mut rng)));
                let bias = Array1::from_shape_simple_fn(w[1], || T::lit(dist.sample(&mut rng)));
                Layer { weights, bias }
            })
            .collect();
        Self { layers }
    }

    pub fn n_inputs(&self) -> usize {
        self.layers[0].weights.nrows()
    }

    pub fn n_outputs(&self) -> usize {
        self.layers.last().expect("at least one layer").weights.ncols()
    }

    pub fn forward(&self, x: ArrayView2<T>) -> Array2<T> {
        let last = self.layers.len() - 1;
        let mut a = x.to_owned();
        for (i, l) in self.layers.iter().enumerate() {
            a = a.dot(&l.weights) + &l.bias;
            if i < last {
                a.mapv_inplace(|v| v.max(T::zero()));
            }
        }
        a
    }

    /// Mean squared error over all entries and its gradient.
    pub fn loss_and_grad(&self, x: ArrayView2<T>, y: ArrayView2<T>) -> (T, Vec<Layer<T>>) {
        let last = self.layers.len() - 1;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_owned());
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = acts[i].dot(&l.weights) + &l.bias;
            if i < last {
                z.mapv_inplace(|v| v.max(T::zero()));
            }
            acts.push(z);
        }
        let count = T::lit(y.len() as f64);
        let mut delta = &acts[last + 1] - &y;
        let loss = delta.iter().map(|v| *v * *v).sum::<T>() / count;
        delta.mapv_inplace(|v| v * T::lit(2.0) / count);
        let mut grads = Vec::with_capacity(self.layers.len());
        for i in (0..self.layers.len()).rev() {
            let gw = acts[i].t().dot(&delta);
            let gb = delta.sum_axis(Axis(0));
            if i > 0 {
                let mut prev = delta.dot(&self.layers[i].weights.t());
                // acts[i] is post-ReLU; zero where the unit was inactive.
                prev.zip_mut_with(&acts[i], |p, a| {
                    if *a <= T::zero() {
                        *p = T::zero();
                    }
                });
                delta = prev;
            }
            grads.push(Layer { weights: gw, bias: gb });
        }
        grads.reverse();
        (loss, grads)
    }

    pub fn loss(&self, x: ArrayView2<T>, y: ArrayView2<T>) -> T {
        let d = self.forward(x) - &y;
        d.iter().map(|v| *v * *v).sum::<T>() / T::lit(y.len() as f64)
    }

    pub fn params_flat(&self) -> Vec<T> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied())
            .collect()
    }

    pub fn set_params_flat(&mut self, p: &[T]) {
        let mut it = p.iter();
        for l in &mut self.layers {
            for v in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *v = *it.next().expect("parameter vector length");
            }
        }
    }
}

struct Adam<T> {
    m: Vec<Layer<T>>,
    v: Vec<Layer<T>>,
    t: i32,
    lr: T,
}

impl<T: Scalar> Adam<T> {
    fn new(net: &Mlp<T>, lr: T) -> Self {
        let zeros = || {
            net.layers
                .iter()
                .map(|l| Layer {
                    weights: Array2::zeros(l.weights.raw_dim()),
                    bias: Array1::zeros(l.bias.raw_dim()),
                })
                .collect::<Vec<_>>()
        };
        Self {
            m: zeros(),
            v: zeros(),
            t: 0,
            lr,
        }
    }

    fn step(&mut self, net: &mut Mlp<T>, grads: &[Layer<T>]) {
        let (b1, b2, eps) = (T::lit(0.9), T::lit(0.999), T::lit(1e-8));
        self.t += 1;
        let c1 = T::one() - b1.powi(self.t);
        let c2 = T::one() - b2.powi(self.t);
        let update = |p: &mut T, g: T, m: &mut T, v: &mut T| {
            *m = b1 * *m + (T::one() - b1) * g;
            *v = b2 * *v + (T::one() - b2) * g * g;
            let mh = *m / c1;
            let vh = *v / c2;
            *p -= self.lr * mh / (vh.sqrt() + eps);
        };
        for (((l, g), m), v) in net.layers.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            ndarray::Zip::from(&mut l.weights)
                .and(&g.weights)
                .and(&mut m.weights)
                .and(&mut v.weights)
                .for_each(|p, g, m, v| update(p, *g, m, v));
            ndarray::Zip::from(&mut l.bias)
                .and(&g.bias)
                .and(&mut m.bias)
                .and(&mut v.bias)
                .for_each(|p, g, m, v| update(p, *g, m, v));
        }
    }
}

/// Trains on already-scaled inputs and targets. Returns the best-validation
/// network and the per-epoch loss curve.
pub fn train<T: Scalar>(
    x: ArrayView2<T>,
    y: ArrayView2<T>,
    h: &MlpHyper,
    seed: u64,
) -> Result<(Mlp<T>, Vec<LossPoint>), ModelError> {
    let n = x.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &[Purpose::Split as u64])));
    let n_val = ((h.validation_fraction * n as f64).round() as usize).min(n.saturating_sub(1));
    let (val_idx, train_idx) = order.split_at(n_val);
    let mut train_idx = train_idx.to_vec();
    let xv = x.select(Axis(0), val_idx);
    let yv = y.select(Axis(0), val_idx);

    let mut sizes = vec![x.ncols()];
    sizes.extend(&h.hidden_layers);
    sizes.push(y.ncols());
    let mut net = Mlp::init(&sizes, derive_seed(seed, &[Purpose::WeightInit as u64]));
    let mut adam = Adam::new(&net, T::lit(h.learning_rate));
    let mut best = (f64::INFINITY, net.clone());
    let mut stale = 0;
    let mut curve = Vec::new();
    for epoch in 0..h.max_epochs {
        train_idx.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
            seed,
            &[Purpose::Shuffle as u64, epoch as u64],
        )));
        let mut total = 0.0;
        for batch in train_idx.chunks(h.batch_size) {
            let xb = x.select(Axis(0), batch);
            let yb = y.select(Axis(0), batch);
            let (loss, grads) = net.loss_and_grad(xb.view(), yb.view());
            let loss = loss.to_f64_lossy();
            if !loss.is_finite() {
                return Err(ModelError::Diverged { epoch });
            }
            total += loss * batch.len() as f64;
            adam.step(&mut net, &grads);
        }
        let train_loss = total / train_idx.len() as f64;
        let val_loss = (n_val > 0).then(|| net.loss(xv.view(), yv.view()).to_f64_lossy());
        let monitored = val_loss.unwrap_or(train_loss);
        if !monitored.is_finite() {
            return Err(ModelError::Diverged { epoch });
        }
        curve.push(LossPoint {
            step: epoch + 1,
            train: train_loss,
            validation: val_loss,
        });
        if monitored < best.0 {
            best = (monitored, net.clone());
            stale = 0;
        } else {
            stale += 1;
            if stale >= h.patience {
                break;
            }
        }
    }
    Ok((best.1, curve))
}

/// Splits `x` into row blocks and returns the forward pass, for callers that
/// need bounded memory on very large batches.
pub fn forward_blocked<T: Scalar>(net: &Mlp<T>, x: ArrayView2<T>, block: usize) -> Array2<T> {
    let mut out = Array2::zeros((x.nrows(), net.n_outputs()));
    for start in (0..x.nrows()).step_by(block.max(1)) {
        let end = (start + block).min(x.nrows());
        out.slice_mut(s![start..end, ..])
            .assign(&net.forward(x.slice(s![start..end, ..])));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_matches_central_differences() {
        let net = Mlp::<f64>::init(&[2, 3, 2], 11);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = Uniform::new(-1.0, 1.0).unwrap();
        let x = Array2::from_shape_simple_fn((5, 2), || u.sample(&mut rng));
        let y = Array2::from_shape_simple_fn((5, 2), || u.sample(&mut rng));
        let (_, grads) = net.loss_and_grad(x.view(), y.view());
        let analytic: Vec<f64> = grads
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied())
            .collect();
        let p0 = net.params_flat();
        let h = 1e-6;
        let mut probe = net.clone();
        for (i, g) in analytic.iter().enumerate() {
            let mut p = p0.clone();
            p[i] = p0[i] + h;
            probe.set_params_flat(&p);
            let up = probe.loss(x.view(), y.view());
            p[i] = p0[i] - h;
            probe.set_params_flat(&p);
            let down = probe.loss(x.view(), y.view());
            let fd = (up - down) / (2.0 * h);
            let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-8);
            assert!(rel <= 1e-5, "param {i}: analytic {g} vs fd {fd}");
        }
    }

    #[test]
    fn interpolates_small_set() {
        let x = Array2::from_shape_fn((10, 2), |(i, j)| (i as f64 * 0.3 + j as f64).sin());
        let y = Array2::from_shape_fn((10, 1), |(i, _)| (i as f64 * 0.7).cos());
        let h = MlpHyper {
            hidden_layers: vec![32, 32],
            learning_rate: 0.01,
            batch_size: 10,
            max_epochs: 3000,
            patience: 3000,
            validation_fraction: 0.0,
        };
        let (net, curve) = train(x.view(), y.view(), &h, 9).unwrap();
        assert!(net.loss(x.view(), y.view()) <= 1e-3, "{:?}", curve.last());
    }

    #[test]
    fn training_is_deterministic() {
        let x = Array2::from_shape_fn((30, 3), |(i, j)| ((i + j) % 5) as f64);
        let y = Array2::from_shape_fn((30, 2), |(i, j)| ((i * j) % 3) as f64);
        let h = MlpHyper::new(vec![8], 0.01, 8);
        let a = train(x.view(), y.view(), &h, 4).unwrap();
        let b = train(x.view(), y.view(), &h, 4).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1.len(), b.1.len());
    }

    #[test]
    fn divergence_is_reported() {
        let x = Array2::from_shape_fn((8, 1), |(i, _)| i as f64 * 1e200);
        let y = Array2::from_shape_fn((8, 1), |(i, _)| i as f64 * 1e200);
        let h = MlpHyper::new(vec![4], 0.01, 4);
        assert!(matches!(train(x.view(), y.view(), &h, 1), Err(ModelError::Diverged { .. })));
    }

    #[test]
    fn single_precision_network() {
        let net = Mlp::<f32>::init(&[3, 4, 1], 2);
        let x = Array2::<f32>::ones((2, 3));
        assert_eq!(net.forward(x.view()).dim(), (2, 1));
    }
}
