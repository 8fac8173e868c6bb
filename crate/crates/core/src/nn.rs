//! Minimal dense-network building blocks with hand-written backward passes.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub const LEAKY_SLOPE: f64 = 0.01;

pub fn leaky_relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

pub fn leaky_relu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

pub fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

pub fn silu_grad(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Fills `out` with N(0, 1/fan_in) samples.
pub fn init_normal<R: Rng + ?Sized>(rng: &mut R, out: &mut [f64], fan_in: usize) {
    let normal = Normal::new(0.0, (1.0 / fan_in.max(1) as f64).sqrt()).expect("valid std");
    for v in out.iter_mut() {
        *v = normal.sample(rng);
    }
}

/// Scales `grad` down so its Euclidean norm is at most `max_norm`.
pub fn clip_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

/// Fully connected layer `y = W x + b`, row-major `W` (out × in).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, inputs: usize, outputs: usize) -> Self {
        let mut weight = vec![0.0; inputs * outputs];
        init_normal(rng, &mut weight, inputs);
        Dense { inputs, outputs, weight, bias: vec![0.0; outputs] }
    }

    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense { inputs, outputs, weight: vec![0.0; inputs * outputs], bias: vec![0.0; outputs] }
    }

    pub fn num_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn forward(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.inputs);
        for (o, out) in y.iter_mut().enumerate().take(self.outputs) {
            let row = &self.weight[o * self.inputs..(o + 1) * self.inputs];
            *out = self.bias[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }

    /// Accumulates parameter gradients into `grad` and writes `dL/dx` into `dx`.
    pub fn backward(&self, x: &[f64], dy: &[f64], grad: &mut DenseGrad, dx: Option<&mut [f64]>) {
        for (o, &g) in dy.iter().enumerate().take(self.outputs) {
            if g == 0.0 {
                continue;
            }
            grad.bias[o] += g;
            let row = &mut grad.weight[o * self.inputs..(o + 1) * self.inputs];
            for (w, v) in row.iter_mut().zip(x) {
                *w += g * v;
            }
        }
        if let Some(dx) = dx {
            dx.iter_mut().for_each(|v| *v = 0.0);
            for (o, &g) in dy.iter().enumerate().take(self.outputs) {
                if g == 0.0 {
                    continue;
                }
                let row = &self.weight[o * self.inputs..(o + 1) * self.inputs];
                for (d, w) in dx.iter_mut().zip(row) {
                    *d += g * w;
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct DenseGrad {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseGrad {
    pub fn for_layer(layer: &Dense) -> Self {
        DenseGrad { weight: vec![0.0; layer.weight.len()], bias: vec![0.0; layer.bias.len()] }
    }

    pub fn zero(&mut self) {
        self.weight.iter_mut().for_each(|v| *v = 0.0);
        self.bias.iter_mut().for_each(|v| *v = 0.0);
    }
}

/// Adam optimiser state over one flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(num_params: usize, lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; num_params], v: vec![0.0; num_params], t: 0 }
    }

    /// Applies one update; `params` and `grad` are visited in the same order
    /// on every call.
    pub fn step<'a>(&mut self, params: impl Iterator<Item = &'a mut f64>, grad: impl Iterator<Item = f64>) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for (((p, g), m), v) in params.zip(grad).zip(self.m.iter_mut()).zip(self.v.iter_mut()) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / bc1) / ((*v / bc2).sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn dense_backward_matches_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let layer = Dense::new(&mut rng, 4, 3);
        let x = [0.3, -1.2, 0.5, 2.0];
        let upstream = [1.0, -0.5, 0.25];
        let loss = |l: &Dense, x: &[f64]| {
            let mut y = [0.0; 3];
            l.forward(x, &mut y);
            y.iter().zip(&upstream).map(|(a, b)| a * b).sum::<f64>()
        };
        let mut grad = DenseGrad::for_layer(&layer);
        let mut dx = [0.0; 4];
        layer.backward(&x, &upstream, &mut grad, Some(&mut dx));
        let h = 1e-6;
        for i in 0..layer.weight.len() {
            let (mut p, mut m) = (layer.clone(), layer.clone());
            p.weight[i] += h;
            m.weight[i] -= h;
            let fd = (loss(&p, &x) - loss(&m, &x)) / (2.0 * h);
            assert!((fd - grad.weight[i]).abs() < 1e-8);
        }
        for i in 0..4 {
            let (mut xp, mut xm) = (x, x);
            xp[i] += h;
            xm[i] -= h;
            let fd = (loss(&layer, &xp) - loss(&layer, &xm)) / (2.0 * h);
            assert!((fd - dx[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn activation_derivatives() {
        for &x in &[-2.0, -0.1, 0.3, 1.7] {
            let h = 1e-6;
            let fd = (silu(x + h) - silu(x - h)) / (2.0 * h);
            assert!((fd - silu_grad(x)).abs() < 1e-8);
            let fd = (leaky_relu(x + h) - leaky_relu(x - h)) / (2.0 * h);
            assert!((fd - leaky_relu_grad(x)).abs() < 1e-8);
        }
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
    }
}
