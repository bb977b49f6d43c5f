//! Fully connected classification head: four relu+dropout hidden layers
//! narrowing 1024 -> 512 -> 256 -> 128 -> 64, a 2-unit output layer, and a
//! softmax over the two classes.

use rand::Rng;

use crate::nn::Linear;
use crate::tensor::{Parameter, Tensor, TensorError};
use crate::Scalar;

#[derive(Debug, Clone)]
pub struct ClassifierConfig {
    pub layer_dims: Vec<usize>,
    pub dropout_p: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            layer_dims: vec![1024, 512, 256, 128, 64, 2],
            dropout_p: 0.2,
        }
    }
}

pub struct DnnClassifier<T: Scalar> {
    layers: Vec<Linear<T>>,
    dropout_p: f64,
}

impl<T: Scalar> DnnClassifier<T> {
    pub fn new(name: &str, cfg: &ClassifierConfig, rng: &mut dyn Rng) -> Self {
        assert!(cfg.layer_dims.len() >= 2);
        let layers = cfg
            .layer_dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(&format!("{name}.fc{i}"), w[0], w[1], true, rng))
            .collect();
        DnnClassifier {
            layers,
            dropout_p: cfg.dropout_p,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    /// Class probabilities; dropout fires on the hidden layers only and
    /// only in training mode.
    pub fn forward(
        &self,
        v: &Tensor<T>,
        training: bool,
        rng: &mut dyn Rng,
    ) -> Result<Tensor<T>, TensorError> {
        let mut h = v.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(&h)?;
            if i < last {
                h = h.relu().dropout(self.dropout_p, rng, training)?;
            }
        }
        h.softmax_vec()
    }

    pub fn params(&self) -> Vec<Parameter<T>> {
        self.layers.iter().flat_map(Linear::params).collect()
    }
}

/// Index of the most probable class.
pub fn argmax<T: Scalar>(probs: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in probs.iter().enumerate() {
        if *v > probs[best] {
            best = i;
        }
    }
    best
}
