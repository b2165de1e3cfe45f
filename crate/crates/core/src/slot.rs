//! Two-stage slot decoder: Filter mask, Controller weights, token-level
//! fusion, and an intent-conditioned unidirectional LSTM tagger.
//!
//! ```text
//! f_i   = sigmoid(W_f [g^g_i, g^l_i] + b_f)       probability token i is domain-general
//! u^l_i = (1 - f_i) g^l_i
//! p_i   = sigmoid(W_c [g^g_i, g^l_i] + b_c)
//! u^f_i = p_i u^l_i + (1 - p_i) g^g_i
//! h^S_i = LSTM(h^S_{i-1}, [y^S_{i-1}, y^I M, u^f_i])
//! y^S_i = softmax(W_S h^S_i)
//! ```
//!
//! `y^I M` is the expected intent embedding under the intent distribution.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{lstm_cell, Linear, LstmParams};
use crate::params::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct TwoStageParams {
    pub filter: Option<Linear>,
    pub controller: Option<Linear>,
    pub decoder: LstmParams,
    pub classifier: Linear,
    pub intent_embedding: ParamId,
    pub num_slots: usize,
}

impl TwoStageParams {
    /// `learned_filter` and `controller` allocate only the gates the model
    /// configuration actually uses.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        width: usize,
        num_intents: usize,
        num_slots: usize,
        intent_dim: usize,
        hidden: usize,
        learned_filter: bool,
        controller: bool,
        rng: &mut Rng,
    ) -> Result<Self> {
        let filter = if learned_filter {
            Some(Linear::new(store, "slot.filter", 2 * width, 1, true, rng)?)
        } else {
            None
        };
        let controller = if controller {
            Some(Linear::new(store, "slot.controller", 2 * width, 1, true, rng)?)
        } else {
            None
        };
        // distribution inputs sum to one: effective fan-in of 1
        let intent_embedding = store.add_uniform("slot.intent_embedding", &[num_intents, intent_dim], 1, rng)?;
        let decoder = LstmParams::new(store, "slot.decoder", num_slots + intent_dim + width, hidden, rng)?;
        let classifier = Linear::new(store, "slot.classifier", hidden, num_slots, false, rng)?;
        Ok(Self {
            filter,
            controller,
            decoder,
            classifier,
            intent_embedding,
            num_slots,
        })
    }
}

fn token_gate(tape: &mut Tape, store: &ParamStore, gate: &Linear, g: Var, l: Var) -> Result<Var> {
    if tape.shape(g) != tape.shape(l) {
        return Err(Error::Dimension {
            op: "token_gate",
            left: tape.shape(g).to_vec(),
            right: tape.shape(l).to_vec(),
        });
    }
    let n = tape.value(g).rows();
    let gl = tape.concat(&[g, l])?;
    let a = gate.forward(tape, store, gl)?;
    let a = tape.reshape(a, &[n])?;
    Ok(tape.sigmoid(a))
}

/// Filter probabilities `F: [n]`.
pub fn filter_forward(tape: &mut Tape, store: &ParamStore, filter: &Linear, g: Var, l: Var) -> Result<Var> {
    token_gate(tape, store, filter, g, l)
}

/// Controller weights `P: [n]`.
pub fn controller_forward(
    tape: &mut Tape,
    store: &ParamStore,
    controller: &Linear,
    g: Var,
    l: Var,
) -> Result<Var> {
    token_gate(tape, store, controller, g, l)
}

/// `u^l_i = (1 - f_i) g^l_i`.
pub fn apply_filter(tape: &mut Tape, f: Var, l: Var) -> Result<Var> {
    let keep = tape.one_minus(f);
    tape.scale_rows(l, keep)
}

/// `u^f_i = p_i u^l_i + (1 - p_i) g^g_i`.
pub fn fuse_token(tape: &mut Tape, p: Var, u: Var, g: Var) -> Result<Var> {
    let q = tape.one_minus(p);
    let a = tape.scale_rows(u, p)?;
    let b = tape.scale_rows(g, q)?;
    tape.add(a, b)
}

/// Gold Filter vector as a constant, for oracle mode.
pub fn oracle_filter(tape: &mut Tape, gold: Option<&[f64]>) -> Result<Var> {
    let gold = gold.ok_or_else(|| Error::usage("oracle filter requested without gold slot labels"))?;
    Ok(tape.constant(Tensor::vector(gold.to_vec())))
}

/// Greedy left-to-right decoding. Returns one slot distribution per token.
/// With `teacher` the gold previous label (one-hot) replaces the predicted
/// distribution as the recurrent label input.
pub fn decode_slots(
    tape: &mut Tape,
    store: &ParamStore,
    p: &TwoStageParams,
    fused: Var,
    intent_probs: Var,
    teacher: Option<&[usize]>,
) -> Result<Vec<Var>> {
    let n = tape.value(fused).rows();
    let emb = tape.param(store, p.intent_embedding);
    let intent_ctx = tape.matmul(intent_probs, emb)?;
    let (mut h, mut c) = p.decoder.zero_state(tape);
    let mut prev = tape.constant(Tensor::zeros(&[p.num_slots]));
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let u = tape.row(fused, i)?;
        let x = tape.concat(&[prev, intent_ctx, u])?;
        (h, c) = lstm_cell(tape, store, &p.decoder, x, h, c)?;
        let logits = p.classifier.forward(tape, store, h)?;
        let y = tape.softmax_rows(logits);
        out.push(y);
        prev = match teacher {
            Some(gold) => {
                let mut onehot = vec![0.0; p.num_slots];
                onehot[gold[i]] = 1.0;
                tape.constant(Tensor::vector(onehot))
            }
            None => y,
        };
    }
    Ok(out)
}
