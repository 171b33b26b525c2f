//! Two-layer perceptron heads: projectors, the query-side predictor, and the
//! cell-side environment head all share this shape.

use super::layers::{relu, relu_backward, Linear};
use super::tensor::Tensor;
use rand::Rng;

#[derive(Debug, Clone)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

pub struct MlpCache {
    x: Vec<f64>,
    pre: Vec<f64>,
}

impl Mlp {
    pub fn new<R: Rng>(din: usize, hidden: usize, dout: usize, rng: &mut R) -> Mlp {
        Mlp { fc1: Linear::new(din, hidden, rng), fc2: Linear::new(hidden, dout, rng) }
    }

    pub fn in_dim(&self) -> usize {
        self.fc1.w.shape[1]
    }

    pub fn out_dim(&self) -> usize {
        self.fc2.w.shape[0]
    }

    pub fn forward(&self, x: &[f64]) -> (Vec<f64>, MlpCache) {
        let pre = self.fc1.forward(x);
        let mut h = pre.clone();
        relu(&mut h);
        let y = self.fc2.forward(&h);
        (y, MlpCache { x: x.to_vec(), pre })
    }

    pub fn forward_eval(&self, x: &[f64]) -> Vec<f64> {
        self.forward(x).0
    }

    /// grads layout: [fc1.w, fc1.b, fc2.w, fc2.b]; returns dx.
    pub fn backward(&self, cache: &MlpCache, dy: &[f64], grads: &mut [Tensor]) -> Vec<f64> {
        debug_assert_eq!(grads.len(), 4);
        let (g1, g2) = grads.split_at_mut(2);
        let (g1w, g1b) = g1.split_at_mut(1);
        let (g2w, g2b) = g2.split_at_mut(1);
        let mut h = cache.pre.clone();
        relu(&mut h);
        let mut dh = self.fc2.backward(&h, dy, &mut g2w[0], &mut g2b[0]);
        relu_backward(&cache.pre, &mut dh);
        self.fc1.backward(&cache.x, &dh, &mut g1w[0], &mut g1b[0])
    }

    pub fn params(&self) -> Vec<&Tensor> {
        vec![&self.fc1.w, &self.fc1.b, &self.fc2.w, &self.fc2.b]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.fc1.w, &mut self.fc1.b, &mut self.fc2.w, &mut self.fc2.b]
    }

    pub fn named_params(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        vec![
            (format!("{prefix}.fc1.w"), &self.fc1.w),
            (format!("{prefix}.fc1.b"), &self.fc1.b),
            (format!("{prefix}.fc2.w"), &self.fc2.w),
            (format!("{prefix}.fc2.b"), &self.fc2.b),
        ]
    }
}
