use std::ops::Range;

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::ParameterSet;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Gated recurrent unit with reset, update and candidate gates.
///
/// ```text
/// r  = σ(W_ir x + b_ir + W_hr h + b_hr)
/// z  = σ(W_iz x + b_iz + W_hz h + b_hz)
/// n  = tanh(W_in x + b_in + r ⊙ (W_hn h + b_hn))
/// h' = (1 - z) ⊙ n + z ⊙ h
/// ```
///
/// Input and recurrent weights are stored as `[3H x I]` and `[3H x H]`
/// blocks in gate order r, z, n.
#[derive(Debug, Clone)]
pub struct GruCell {
    inputs: usize,
    hidden: usize,
    w_input: Range<usize>,
    w_hidden: Range<usize>,
    b_input: Range<usize>,
    b_hidden: Range<usize>,
}

#[derive(Debug, Clone)]
pub struct GruCache {
    input: Vec<f64>,
    h_prev: Vec<f64>,
    reset: Vec<f64>,
    update: Vec<f64>,
    candidate: Vec<f64>,
    hidden_candidate: Vec<f64>,
}

impl GruCell {
    pub fn new(params: &mut ParameterSet, name: &str, inputs: usize, hidden: usize) -> Self {
        let w_input = params.allocate(format!("{name}.w_input"), 3 * hidden * inputs);
        let w_hidden = params.allocate(format!("{name}.w_hidden"), 3 * hidden * hidden);
        let b_input = params.allocate(format!("{name}.b_input"), 3 * hidden);
        let b_hidden = params.allocate(format!("{name}.b_hidden"), 3 * hidden);
        Self {
            inputs,
            hidden,
            w_input,
            w_hidden,
            b_input,
            b_hidden,
        }
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    /// Range of the input-side bias; the update gate occupies the middle third.
    pub fn input_bias_range(&self) -> Range<usize> {
        self.b_input.clone()
    }

    pub fn init<R: Rng + ?Sized>(&self, params: &mut ParameterSet, rng: &mut R) {
        let bound = 1.0 / (self.hidden.max(1) as f64).sqrt();
        for r in [&self.w_input, &self.w_hidden, &self.b_input, &self.b_hidden] {
            params.init_uniform(r.clone(), bound, rng);
        }
    }

    fn affine(values: &[f64], w: &Range<usize>, b: &Range<usize>, cols: usize, x: &[f64]) -> Vec<f64> {
        let w = &values[w.clone()];
        values[b.clone()]
            .iter()
            .enumerate()
            .map(|(row, bias)| {
                let r = &w[row * cols..(row + 1) * cols];
                bias + r.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect()
    }

    pub fn step(&self, params: &ParameterSet, input: &[f64], h_prev: &[f64]) -> Result<(Vec<f64>, GruCache)> {
        if input.len() != self.inputs || h_prev.len() != self.hidden {
            return Err(Error::config(format!(
                "gru expects input {} / hidden {}, got {} / {}",
                self.inputs,
                self.hidden,
                input.len(),
                h_prev.len()
            )));
        }
        let h = self.hidden;
        let values = params.values();
        let gi = Self::affine(values, &self.w_input, &self.b_input, self.inputs, input);
        let gh = Self::affine(values, &self.w_hidden, &self.b_hidden, self.hidden, h_prev);

        let mut reset = vec![0.0; h];
        let mut update = vec![0.0; h];
        let mut candidate = vec![0.0; h];
        let mut h_next = vec![0.0; h];
        for j in 0..h {
            reset[j] = sigmoid(gi[j] + gh[j]);
            update[j] = sigmoid(gi[h + j] + gh[h + j]);
            candidate[j] = (gi[2 * h + j] + reset[j] * gh[2 * h + j]).tanh();
            h_next[j] = (1.0 - update[j]) * candidate[j] + update[j] * h_prev[j];
        }
        Ok((
            h_next,
            GruCache {
                input: input.to_vec(),
                h_prev: h_prev.to_vec(),
                reset,
                update,
                candidate,
                hidden_candidate: gh[2 * h..].to_vec(),
            },
        ))
    }

    /// Backward through one step. Returns `(d input, d h_prev)`.
    pub fn backward(
        &self,
        params: &mut ParameterSet,
        cache: &GruCache,
        d_h_next: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let h = self.hidden;
        if cache.input.len() != self.inputs || cache.h_prev.len() != h || d_h_next.len() != h {
            return Err(Error::usage("gru cache or upstream gradient has wrong shape"));
        }
        let mut d_gi = vec![0.0; 3 * h];
        let mut d_gh = vec![0.0; 3 * h];
        let mut d_h_prev = vec![0.0; h];
        for j in 0..h {
            let (r, z, n) = (cache.reset[j], cache.update[j], cache.candidate[j]);
            let dh = d_h_next[j];
            let dn = dh * (1.0 - z);
            let dz = dh * (cache.h_prev[j] - n);
            d_h_prev[j] = dh * z;
            let dn_pre = dn * (1.0 - n * n);
            let dr = dn_pre * cache.hidden_candidate[j];
            let dr_pre = dr * r * (1.0 - r);
            let dz_pre = dz * z * (1.0 - z);
            d_gi[j] = dr_pre;
            d_gi[h + j] = dz_pre;
            d_gi[2 * h + j] = dn_pre;
            d_gh[j] = dr_pre;
            d_gh[h + j] = dz_pre;
            d_gh[2 * h + j] = dn_pre * r;
        }

        let mut d_input = vec![0.0; self.inputs];
        let (values, grads) = params.split_mut();
        for row in 0..3 * h {
            let gi = d_gi[row];
            if gi != 0.0 {
                grads[self.b_input.start + row] += gi;
                let base = self.w_input.start + row * self.inputs;
                for i in 0..self.inputs {
                    grads[base + i] += gi * cache.input[i];
                    d_input[i] += gi * values[base + i];
                }
            }
            let gh = d_gh[row];
            if gh != 0.0 {
                grads[self.b_hidden.start + row] += gh;
                let base = self.w_hidden.start + row * h;
                for k in 0..h {
                    grads[base + k] += gh * cache.h_prev[k];
                    d_h_prev[k] += gh * values[base + k];
                }
            }
        }
        Ok((d_input, d_h_prev))
    }
}
