//! Layers assembled from tape operations: affine maps, LSTM cells and
//! sequences, scaled dot-product attention.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// `x · W (+ b)` with `W: [input × output]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        bias: bool,
        rng: &mut Rng,
    ) -> Result<Self> {
        let weight = store.add_uniform(format!("{name}.weight"), &[input, output], input, rng)?;
        let bias = if bias {
            Some(store.add_zeros(format!("{name}.bias"), &[output])?)
        } else {
            None
        };
        Ok(Self { weight, bias })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let y = tape.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = tape.param(store, b);
                tape.add_row(y, b)
            }
            None => Ok(y),
        }
    }
}

/// LSTM weights with gate blocks ordered input, forget, candidate, output.
#[derive(Clone, Debug)]
pub struct LstmParams {
    pub w_input: ParamId,
    pub w_hidden: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl LstmParams {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let w_input = store.add_uniform(format!("{name}.w_input"), &[input, 4 * hidden], input, rng)?;
        let w_hidden =
            store.add_uniform(format!("{name}.w_hidden"), &[hidden, 4 * hidden], hidden, rng)?;
        let mut b = vec![0.0; 4 * hidden];
        b[hidden..2 * hidden].iter_mut().for_each(|v| *v = 1.0);
        let bias = store.add(format!("{name}.bias"), Tensor::vector(b))?;
        Ok(Self {
            w_input,
            w_hidden,
            bias,
            input,
            hidden,
        })
    }

    pub fn zero_state(&self, tape: &mut Tape) -> (Var, Var) {
        let h = tape.constant(Tensor::zeros(&[self.hidden]));
        let c = tape.constant(Tensor::zeros(&[self.hidden]));
        (h, c)
    }
}

/// Nonlinear part of the cell, given pre-activations `[4h]`.
fn lstm_gates(tape: &mut Tape, gates: Var, c_prev: Var, hidden: usize) -> Result<(Var, Var)> {
    let i = tape.slice_cols(gates, 0, hidden)?;
    let f = tape.slice_cols(gates, hidden, hidden)?;
    let g = tape.slice_cols(gates, 2 * hidden, hidden)?;
    let o = tape.slice_cols(gates, 3 * hidden, hidden)?;
    let i = tape.sigmoid(i);
    let f = tape.sigmoid(f);
    let g = tape.tanh(g);
    let o = tape.sigmoid(o);
    let keep = tape.mul(f, c_prev)?;
    let write = tape.mul(i, g)?;
    let c = tape.add(keep, write)?;
    let tc = tape.tanh(c);
    let h = tape.mul(o, tc)?;
    Ok((h, c))
}

/// One LSTM step: `x: [d_in]`, `h_prev, c_prev: [d_h]` to `(h, c)`.
pub fn lstm_cell(
    tape: &mut Tape,
    store: &ParamStore,
    p: &LstmParams,
    x: Var,
    h_prev: Var,
    c_prev: Var,
) -> Result<(Var, Var)> {
    if tape.value(x).len() != p.input || tape.value(h_prev).len() != p.hidden {
        return Err(Error::Dimension {
            op: "lstm_cell",
            left: vec![p.input, p.hidden],
            right: vec![tape.value(x).len(), tape.value(h_prev).len()],
        });
    }
    let wx = tape.param(store, p.w_input);
    let wh = tape.param(store, p.w_hidden);
    let b = tape.param(store, p.bias);
    let xw = tape.matmul(x, wx)?;
    let hw = tape.matmul(h_prev, wh)?;
    let pre = tape.add(xw, hw)?;
    let pre = tape.add(pre, b)?;
    lstm_gates(tape, pre, c_prev, p.hidden)
}

/// Runs the LSTM over the rows of `xs: [n × d_in]` and returns one hidden
/// state per position, in input order. With `reverse` the recurrence runs
/// from the last row to the first.
pub fn lstm_sequence(
    tape: &mut Tape,
    store: &ParamStore,
    p: &LstmParams,
    xs: Var,
    reverse: bool,
) -> Result<Vec<Var>> {
    let n = tape.value(xs).rows();
    let wx = tape.param(store, p.w_input);
    let wh = tape.param(store, p.w_hidden);
    let b = tape.param(store, p.bias);
    // input projections for all positions at once
    let proj = tape.matmul(xs, wx)?;
    let proj = tape.add_row(proj, b)?;
    let (mut h, mut c) = p.zero_state(tape);
    let mut out = vec![h; n];
    let order: Vec<usize> = if reverse { (0..n).rev().collect() } else { (0..n).collect() };
    for t in order {
        let xt = tape.row(proj, t)?;
        let hw = tape.matmul(h, wh)?;
        let pre = tape.add(xt, hw)?;
        (h, c) = lstm_gates(tape, pre, c, p.hidden)?;
        out[t] = h;
    }
    Ok(out)
}

/// Bidirectional LSTM; row `i` of the result is `forward_i ‖ backward_i`.
pub fn bilstm(
    tape: &mut Tape,
    store: &ParamStore,
    fwd: &LstmParams,
    bwd: &LstmParams,
    xs: Var,
) -> Result<Var> {
    let f = lstm_sequence(tape, store, fwd, xs, false)?;
    let b = lstm_sequence(tape, store, bwd, xs, true)?;
    let f = tape.stack_rows(&f)?;
    let b = tape.stack_rows(&b)?;
    tape.concat(&[f, b])
}

/// Query, key and value projections for single-head attention.
#[derive(Clone, Debug)]
pub struct AttentionParams {
    pub query: ParamId,
    pub key: ParamId,
    pub value: ParamId,
    pub key_dim: usize,
}

impl AttentionParams {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        key_dim: usize,
        value_dim: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        Ok(Self {
            query: store.add_uniform(format!("{name}.query"), &[input, key_dim], input, rng)?,
            key: store.add_uniform(format!("{name}.key"), &[input, key_dim], input, rng)?,
            value: store.add_uniform(format!("{name}.value"), &[input, value_dim], input, rng)?,
            key_dim,
        })
    }
}

/// `softmax(Q Kᵀ / sqrt(d_k)) V` over the rows of `xs`.
pub fn scaled_dot_attention(
    tape: &mut Tape,
    store: &ParamStore,
    p: &AttentionParams,
    xs: Var,
) -> Result<Var> {
    let wq = tape.param(store, p.query);
    let wk = tape.param(store, p.key);
    let wv = tape.param(store, p.value);
    let q = tape.matmul(xs, wq)?;
    let k = tape.matmul(xs, wk)?;
    let v = tape.matmul(xs, wv)?;
    let kt = tape.transpose(k)?;
    let scores = tape.matmul(q, kt)?;
    let scores = tape.scale(scores, 1.0 / (p.key_dim as f64).sqrt());
    let weights = tape.softmax_rows(scores);
    tape.matmul(weights, v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_lstm_outputs_zero() {
        let mut store = ParamStore::new();
        let mut rng = Rng::seed(0);
        let p = LstmParams::new(&mut store, "l", 3, 4, &mut rng).unwrap();
        for id in [p.w_input, p.w_hidden, p.bias] {
            store.get_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![0.3, -1.0, 2.0]));
        let (h0, c0) = p.zero_state(&mut tape);
        let (h, _) = lstm_cell(&mut tape, &store, &p, x, h0, c0).unwrap();
        assert!(tape.value(h).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lstm_cell_rejects_wrong_width() {
        let mut store = ParamStore::new();
        let p = LstmParams::new(&mut store, "l", 3, 4, &mut Rng::seed(0)).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![0.0; 2]));
        let (h0, c0) = p.zero_state(&mut tape);
        assert!(lstm_cell(&mut tape, &store, &p, x, h0, c0).is_err());
    }

    #[test]
    fn sequence_step_matches_cell() {
        let mut store = ParamStore::new();
        let mut rng = Rng::seed(3);
        let p = LstmParams::new(&mut store, "l", 2, 3, &mut rng).unwrap();
        let mut tape = Tape::new();
        let xs = tape.constant(Tensor::matrix(&[vec![0.5, -0.2], vec![0.1, 0.9]]).unwrap());
        let seq = lstm_sequence(&mut tape, &store, &p, xs, false).unwrap();
        let x0 = tape.row(xs, 0).unwrap();
        let x1 = tape.row(xs, 1).unwrap();
        let (h, c) = p.zero_state(&mut tape);
        let (h, c) = lstm_cell(&mut tape, &store, &p, x0, h, c).unwrap();
        let (h2, _) = lstm_cell(&mut tape, &store, &p, x1, h, c).unwrap();
        for (a, b) in tape.value(seq[1]).data().iter().zip(tape.value(h2).data()) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}
