use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{sigmoid, Matrix};

/// Single-layer LSTM. Gate blocks are stacked in the order input, forget,
/// cell candidate, output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lstm {
    pub w_x: Matrix,
    pub w_h: Matrix,
    pub bias: Matrix,
}

/// Activations kept from the forward pass for backpropagation through time.
#[derive(Debug, Clone)]
pub struct LstmCache {
    pub inputs: Vec<Vec<f64>>,
    /// Post-activation gates per step, `4 * hidden` wide.
    gates: Vec<Vec<f64>>,
    cells: Vec<Vec<f64>>,
    pub hidden: Vec<Vec<f64>>,
}

impl Lstm {
    pub fn new<R: Rng>(input_dim: usize, hidden_dim: usize, rng: &mut R) -> Self {
        let limit = 1.0 / (hidden_dim as f64).sqrt();
        let mut bias = Matrix::uniform(4 * hidden_dim, 1, limit, rng);
        for v in &mut bias.data[hidden_dim..2 * hidden_dim] {
            *v += 1.0;
        }
        Lstm {
            w_x: Matrix::uniform(4 * hidden_dim, input_dim, limit, rng),
            w_h: Matrix::uniform(4 * hidden_dim, hidden_dim, limit, rng),
            bias,
        }
    }

    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        Lstm {
            w_x: Matrix::zeros(4 * hidden_dim, input_dim),
            w_h: Matrix::zeros(4 * hidden_dim, hidden_dim),
            bias: Matrix::zeros(4 * hidden_dim, 1),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_x.cols
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_h.cols
    }

    /// Runs the recurrence from a zero state.
    pub fn forward(&self, inputs: &[Vec<f64>]) -> LstmCache {
        let h = self.hidden_dim();
        let mut cache = LstmCache {
            inputs: inputs.to_vec(),
            gates: Vec::with_capacity(inputs.len()),
            cells: Vec::with_capacity(inputs.len()),
            hidden: Vec::with_capacity(inputs.len()),
        };
        let mut h_prev = vec![0.0; h];
        let mut c_prev = vec![0.0; h];
        for x in inputs {
            let mut a = self.bias.data.clone();
            self.w_x.matvec_acc(x, &mut a);
            self.w_h.matvec_acc(&h_prev, &mut a);
            for v in &mut a[..2 * h] {
                *v = sigmoid(*v);
            }
            for v in &mut a[2 * h..3 * h] {
                *v = v.tanh();
            }
            for v in &mut a[3 * h..] {
                *v = sigmoid(*v);
            }
            let mut c = vec![0.0; h];
            let mut hn = vec![0.0; h];
            for k in 0..h {
                c[k] = a[h + k] * c_prev[k] + a[k] * a[2 * h + k];
                hn[k] = a[3 * h + k] * c[k].tanh();
            }
            cache.gates.push(a);
            cache.cells.push(c.clone());
            cache.hidden.push(hn.clone());
            h_prev = hn;
            c_prev = c;
        }
        cache
    }

    /// Backpropagation through time. `d_hidden[t]` is the loss gradient with
    /// respect to the output at step `t`; parameter gradients are accumulated
    /// into `grad`.
    pub fn backward(&self, cache: &LstmCache, d_hidden: &[Vec<f64>], grad: &mut Lstm) {
        let h = self.hidden_dim();
        let n = cache.hidden.len();
        let zero = vec![0.0; h];
        let mut dh_next = vec![0.0; h];
        let mut dc_next = vec![0.0; h];
        let mut da = vec![0.0; 4 * h];
        for t in (0..n).rev() {
            let a = &cache.gates[t];
            let c = &cache.cells[t];
            let c_prev = if t > 0 { &cache.cells[t - 1] } else { &zero };
            let h_prev = if t > 0 { &cache.hidden[t - 1] } else { &zero };
            for k in 0..h {
                let (i, f, g, o) = (a[k], a[h + k], a[2 * h + k], a[3 * h + k]);
                let dh = d_hidden[t][k] + dh_next[k];
                let tc = c[k].tanh();
                let dc = dh * o * (1.0 - tc * tc) + dc_next[k];
                da[k] = dc * g * i * (1.0 - i);
                da[h + k] = dc * c_prev[k] * f * (1.0 - f);
                da[2 * h + k] = dc * i * (1.0 - g * g);
                da[3 * h + k] = dh * tc * o * (1.0 - o);
                dc_next[k] = dc * f;
            }
            grad.w_x.outer_acc(&da, &cache.inputs[t]);
            grad.w_h.outer_acc(&da, h_prev);
            grad.bias.data.iter_mut().zip(&da).for_each(|(b, d)| *b += d);
            dh_next.iter_mut().for_each(|v| *v = 0.0);
            self.w_h.matvec_t_acc(&da, &mut dh_next);
        }
    }
}
