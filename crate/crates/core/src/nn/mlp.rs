use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Matrix;

/// Two-layer perceptron: tanh hidden layer, linear output (logits).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
}

#[derive(Debug, Clone)]
pub struct MlpCache {
    pub input: Vec<f64>,
    /// tanh activations before the dropout mask.
    act: Vec<f64>,
    mask: Vec<f64>,
    pub logits: Vec<f64>,
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn new<R: Rng>(input_dim: usize, hidden_dim: usize, output_dim: usize, rng: &mut R) -> Self {
        let l1 = (6.0 / (input_dim + hidden_dim) as f64).sqrt();
        let l2 = (6.0 / (hidden_dim + output_dim) as f64).sqrt();
        Mlp {
            w1: Matrix::uniform(hidden_dim, input_dim, l1, rng),
            b1: Matrix::zeros(hidden_dim, 1),
            w2: Matrix::uniform(output_dim, hidden_dim, l2, rng),
            b2: Matrix::zeros(output_dim, 1),
        }
    }

    pub fn zeros(input_dim: usize, hidden_dim: usize, output_dim: usize) -> Self {
        Mlp {
            w1: Matrix::zeros(hidden_dim, input_dim),
            b1: Matrix::zeros(hidden_dim, 1),
            w2: Matrix::zeros(output_dim, hidden_dim),
            b2: Matrix::zeros(output_dim, 1),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.rows
    }

    pub fn output_dim(&self) -> usize {
        self.w2.rows
    }

    /// `mask` multiplies the hidden activations (inverted dropout); `None` is inference.
    pub fn forward(&self, input: &[f64], mask: Option<&[f64]>) -> MlpCache {
        let mut act = self.b1.data.clone();
        self.w1.matvec_acc(input, &mut act);
        act.iter_mut().for_each(|v| *v = v.tanh());
        let mask = mask.map_or_else(|| vec![1.0; act.len()], <[f64]>::to_vec);
        let hidden: Vec<f64> = act.iter().zip(&mask).map(|(a, m)| a * m).collect();
        let mut logits = self.b2.data.clone();
        self.w2.matvec_acc(&hidden, &mut logits);
        MlpCache { input: input.to_vec(), act, mask, logits }
    }

    pub fn logits(&self, input: &[f64]) -> Vec<f64> {
        self.forward(input, None).logits
    }

    /// Accumulates parameter gradients and returns the gradient with respect to the input.
    pub fn backward(&self, cache: &MlpCache, d_logits: &[f64], grad: &mut Mlp) -> Vec<f64> {
        let hidden: Vec<f64> = cache.act.iter().zip(&cache.mask).map(|(a, m)| a * m).collect();
        grad.w2.outer_acc(d_logits, &hidden);
        grad.b2.data.iter_mut().zip(d_logits).for_each(|(b, d)| *b += d);
        let mut d_hidden = vec![0.0; self.hidden_dim()];
        self.w2.matvec_t_acc(d_logits, &mut d_hidden);
        let d_pre: Vec<f64> = d_hidden
            .iter()
            .zip(&cache.act)
            .zip(&cache.mask)
            .map(|((d, a), m)| d * m * (1.0 - a * a))
            .collect();
        grad.w1.outer_acc(&d_pre, &cache.input);
        grad.b1.data.iter_mut().zip(&d_pre).for_each(|(b, d)| *b += d);
        let mut d_input = vec![0.0; cache.input.len()];
        self.w1.matvec_t_acc(&d_pre, &mut d_input);
        d_input
    }
}
