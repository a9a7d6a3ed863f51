//! Dense ReLU network trained with Adam on mean squared error.

use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `inputs x outputs`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    fn he(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let normal = Normal::new(0.0, (2.0 / inputs as f64).sqrt()).expect("positive sigma");
        Self {
            weights: Array2::from_shape_fn((inputs, outputs), |_| normal.sample(rng)),
            bias: Array1::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weights.ncols()
    }
}

/// Per-layer gradients, same shapes as the layers.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub bias: Vec<Array1<f64>>,
}

/// ReLU on hidden layers, identity on the output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    pub fn new(sizes: &[usize], seed: u64) -> Self {
        assert!(sizes.len() >= 2, "need input and output sizes");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = sizes.windows(2).map(|w| Dense::he(w[0], w[1], &mut rng)).collect();
        Self { layers }
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].inputs()];
        s.extend(self.layers.iter().map(Dense::outputs));
        s
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|d| d.weights.len() + d.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|d| d.weights.iter().chain(d.bias.iter()).all(|v| v.is_finite()))
    }

    /// Batch forward pass; one row per example.
    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let last = self.layers.len() - 1;
        let mut h = x.clone();
        for (k, layer) in self.layers.iter().enumerate() {
            h = h.dot(&layer.weights) + &layer.bias;
            if k < last {
                h.mapv_inplace(|v| v.max(0.0));
            }
        }
        h
    }

    /// Single-example forward pass without batch allocation overhead.
    pub fn forward_one(&self, x: &[f64]) -> Vec<f64> {
        let last = self.layers.len() - 1;
        let mut h = x.to_vec();
        for (k, layer) in self.layers.iter().enumerate() {
            let mut out = layer.bias.to_vec();
            for (i, &hi) in h.iter().enumerate() {
                if hi != 0.0 {
                    for (o, &w) in out.iter_mut().zip(layer.weights.row(i)) {
                        *o += hi * w;
                    }
                }
            }
            if k < last {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            h = out;
        }
        h
    }

    /// Mean squared error over a batch and its parameter gradients.
    pub fn loss_and_gradients(&self, x: &Array2<f64>, y: &Array1<f64>) -> (f64, Gradients) {
        let last = self.layers.len() - 1;
        let mut activations = vec![x.clone()];
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = activations[k].dot(&layer.weights) + &layer.bias;
            if k < last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            activations.push(z);
        }
        let batch = x.nrows() as f64;
        let out = activations[last + 1].column(0).to_owned();
        let err = &out - y;
        let loss = err.mapv(|e| e * e).sum() / batch;

        let mut delta = (err * (2.0 / batch)).insert_axis(Axis(1));
        let mut gw = Vec::with_capacity(self.layers.len());
        let mut gb = Vec::with_capacity(self.layers.len());
        for k in (0..self.layers.len()).rev() {
            gw.push(activations[k].t().dot(&delta));
            gb.push(delta.sum_axis(Axis(0)));
            if k > 0 {
                let mut back = delta.dot(&self.layers[k].weights.t());
                // ReLU derivative: zero where the forward activation was clipped.
                ndarray::Zip::from(&mut back)
                    .and(&activations[k])
                    .for_each(|b, &a| {
                        if a <= 0.0 {
                            *b = 0.0;
                        }
                    });
                delta = back;
            }
        }
        gw.reverse();
        gb.reverse();
        (loss, Gradients { weights: gw, bias: gb })
    }

    pub fn mse(&self, x: &Array2<f64>, y: &Array1<f64>) -> f64 {
        let out = self.forward(x);
        out.column(0)
            .iter()
            .zip(y)
            .map(|(o, t)| (o - t).powi(2))
            .sum::<f64>()
            / y.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    step: i32,
    m: Gradients,
    v: Gradients,
}

impl Adam {
    pub fn new(net: &Mlp, cfg: AdamConfig) -> Self {
        let zeros = || Gradients {
            weights: net.layers.iter().map(|d| Array2::zeros(d.weights.dim())).collect(),
            bias: net.layers.iter().map(|d| Array1::zeros(d.bias.dim())).collect(),
        };
        Self {
            cfg,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn update(&mut self, net: &mut Mlp, grads: &Gradients) {
        self.step += 1;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.step);
        let bc2 = 1.0 - c.beta2.powi(self.step);
        let lr = c.learning_rate;
        for (k, layer) in net.layers.iter_mut().enumerate() {
            ndarray::Zip::from(&mut layer.weights)
                .and(&mut self.m.weights[k])
                .and(&mut self.v.weights[k])
                .and(&grads.weights[k])
                .for_each(|p, m, v, &g| {
                    *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                    *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                    *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + c.epsilon);
                });
            ndarray::Zip::from(&mut layer.bias)
                .and(&mut self.m.bias[k])
                .and(&mut self.v.bias[k])
                .and(&grads.bias[k])
                .for_each(|p, m, v, &g| {
                    *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                    *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                    *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + c.epsilon);
                });
        }
    }
}
