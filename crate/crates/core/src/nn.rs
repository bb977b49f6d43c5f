//! Layers and the optimizer.

use rand::Rng;

use crate::scalar::Scalar;
use crate::tensor::{uniform01, Parameter, Tensor, TensorError};

/// Glorot uniform initialization: samples from `[-lim, lim]` with
/// `lim = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<T: Scalar>(rng: &mut dyn Rng, fan_in: usize, fan_out: usize, n: usize) -> Vec<T> {
    let lim = T::from_f64((6.0 / (fan_in + fan_out) as f64).sqrt());
    let two = T::from_f64(2.0);
    (0..n)
        .map(|_| (uniform01::<T>(rng) * two - T::one()) * lim)
        .collect()
}

/// Fully connected layer storing its weight as `[out, in]`.
pub struct Linear<T: Scalar> {
    pub weight: Parameter<T>,
    pub bias: Option<Parameter<T>>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl<T: Scalar> Linear<T> {
    pub fn new(name: &str, in_dim: usize, out_dim: usize, bias: bool, rng: &mut dyn Rng) -> Self {
        let w = glorot_uniform(rng, in_dim, out_dim, in_dim * out_dim);
        let weight = Parameter::new(
            format!("{name}.weight"),
            Tensor::parameter(vec![out_dim, in_dim], w),
        );
        let bias = bias.then(|| {
            Parameter::new(
                format!("{name}.bias"),
                Tensor::parameter(vec![out_dim], vec![T::zero(); out_dim]),
            )
        });
        Linear {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        let y = self.weight.tensor.matvec(x)?;
        match &self.bias {
            Some(b) => y.add(&b.tensor),
            None => Ok(y),
        }
    }

    /// Apply to each row of a `[rows, in]` matrix, yielding `[rows, out]`.
    pub fn forward_rows(&self, m: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        let y = m.matmul(&self.weight.tensor.transpose()?)?;
        match &self.bias {
            Some(b) => y.add_row_broadcast(&b.tensor),
            None => Ok(y),
        }
    }

    pub fn params(&self) -> Vec<Parameter<T>> {
        let mut out = vec![self.weight.clone()];
        if let Some(b) = &self.bias {
            out.push(b.clone());
        }
        out
    }
}

/// Adam with bias-corrected moment estimates.
pub struct Adam<T: Scalar> {
    pub lr: T,
    beta1: T,
    beta2: T,
    eps: T,
    t: i32,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr: T::from_f64(lr),
            beta1: T::from_f64(0.9),
            beta2: T::from_f64(0.999),
            eps: T::from_f64(1e-8),
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Apply one update using the gradients currently stored on `params`,
    /// then clear them. Parameters without a gradient are left untouched.
    /// The slice must keep the same order across calls; moment buffers are
    /// matched by position.
    pub fn step(&mut self, params: &[Parameter<T>]) {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![T::zero(); p.tensor.numel()]).collect();
            self.v = self.m.clone();
        }
        assert_eq!(self.m.len(), params.len(), "optimizer bound to a different parameter set");
        self.t += 1;
        let bc1 = T::one() - self.beta1.powi(self.t);
        let bc2 = T::one() - self.beta2.powi(self.t);
        for (idx, p) in params.iter().enumerate() {
            let Some(grad) = p.tensor.grad() else { continue };
            let mut vals = p.tensor.to_vec();
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            for i in 0..vals.len() {
                let g = grad[i];
                m[i] = self.beta1 * m[i] + (T::one() - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (T::one() - self.beta2) * g * g;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                vals[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
            p.tensor.set_values(&vals);
            p.tensor.zero_grad();
        }
    }
}
