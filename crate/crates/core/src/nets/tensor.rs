//! Dense f64 tensor used by the network components. Training-scale models
//! are small enough that a plain contiguous buffer with explicit loops beats
//! pulling in a tensor framework, and it keeps every arithmetic step exact
//! and inspectable for the gradient checks.

use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Tensor {
        let len = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![0.0; len] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Tensor {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "shape/data mismatch");
        Tensor { shape: shape.to_vec(), data }
    }

    /// Kaiming-normal initialization for a parameter with the given fan-in.
    pub fn kaiming<R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
        let std = (2.0 / fan_in as f64).sqrt();
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(sample_normal(rng) * std);
        }
        Tensor { shape: shape.to_vec(), data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn zeros_like(&self) -> Tensor {
        Tensor::zeros(&self.shape)
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Box-Muller standard normal; `rand`'s uniform is all we depend on.
fn sample_normal<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        if z.is_finite() {
            return z;
        }
    }
}

/// L2-normalize a vector in place; returns the norm. Rows with norm below
/// `eps` are left untouched (callers assert non-degenerate inputs).
pub fn l2_normalize(v: &mut [f64]) -> f64 {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 1e-12 {
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
    norm
}

/// Backward of `y = x / ||x||`: `dx = (dy - y * (y . dy)) / ||x||`.
pub fn l2_normalize_backward(y: &[f64], dy: &[f64], norm: f64) -> Vec<f64> {
    let dot: f64 = y.iter().zip(dy).map(|(a, b)| a * b).sum();
    y.iter()
        .zip(dy)
        .map(|(yi, dyi)| (dyi - yi * dot) / norm.max(1e-12))
        .collect()
}
