//! Syntax-aware encoders and their global/local composition.
//!
//! A syntax-aware encoder runs a BiLSTM and a single-head self-attention
//! over token embeddings, concatenates the two per token (`E = H ⊕ C`), then
//! applies `L` graph-convolution layers over the dependency adjacency:
//!
//! ```text
//! g_i^(l) = relu( Σ_j Ã_ij W^(l) g_j^(l-1) + b^(l) ),   G^(0) = E
//! ```

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{bilstm, scaled_dot_attention, AttentionParams, LstmParams};
use crate::params::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub emb_dim: usize,
    /// Hidden units per LSTM direction.
    pub lstm_hidden: usize,
    /// Width of queries, keys and values.
    pub attn_dim: usize,
    pub gcn_layers: usize,
    pub dropout: f64,
    /// Divide each adjacency row by its sum before aggregation.
    pub mean_aggregation: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            emb_dim: 64,
            lstm_hidden: 128,
            attn_dim: 64,
            gcn_layers: 2,
            dropout: 0.4,
            mean_aggregation: false,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.emb_dim == 0 || self.lstm_hidden == 0 || self.attn_dim == 0 {
            return Err(Error::config("encoder dimensions must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// Width of `E` and of every GCN layer.
    pub fn output_dim(&self) -> usize {
        2 * self.lstm_hidden + self.attn_dim
    }
}

#[derive(Clone, Debug)]
pub struct GcnLayer {
    pub weight: ParamId,
    pub bias: ParamId,
}

#[derive(Clone, Debug)]
pub struct SyntaxAwareEncoder {
    pub forward_lstm: LstmParams,
    pub backward_lstm: LstmParams,
    pub attention: AttentionParams,
    pub gcn: Vec<GcnLayer>,
    pub mean_aggregation: bool,
}

/// Adjacency as fed to the GCN, optionally row-normalised.
pub fn aggregation_matrix(adj: &Tensor, mean: bool) -> Tensor {
    let mut a = adj.clone();
    if mean {
        let n = a.cols();
        for row in a.data_mut().chunks_mut(n) {
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= s);
        }
    }
    a
}

impl SyntaxAwareEncoder {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cfg: &EncoderConfig,
        gcn_layers: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let forward_lstm =
            LstmParams::new(store, &format!("{name}.lstm_fwd"), cfg.emb_dim, cfg.lstm_hidden, rng)?;
        let backward_lstm =
            LstmParams::new(store, &format!("{name}.lstm_bwd"), cfg.emb_dim, cfg.lstm_hidden, rng)?;
        let attention = AttentionParams::new(
            store,
            &format!("{name}.attn"),
            cfg.emb_dim,
            cfg.attn_dim,
            cfg.attn_dim,
            rng,
        )?;
        let d = cfg.output_dim();
        let gcn = (0..gcn_layers)
            .map(|l| {
                Ok(GcnLayer {
                    weight: store.add_uniform(format!("{name}.gcn{l}.weight"), &[d, d], d, rng)?,
                    bias: store.add_zeros(format!("{name}.gcn{l}.bias"), &[d])?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            forward_lstm,
            backward_lstm,
            attention,
            gcn,
            mean_aggregation: cfg.mean_aggregation,
        })
    }

    /// `E = BiLSTM(X) ⊕ Attention(X)`; returns `(E, C)`.
    pub fn self_attentive(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<(Var, Var)> {
        let h = bilstm(tape, store, &self.forward_lstm, &self.backward_lstm, x)?;
        let c = scaled_dot_attention(tape, store, &self.attention, x)?;
        let e = tape.concat(&[h, c])?;
        Ok((e, c))
    }

    /// Stacked graph convolution. `adj` is the aggregation matrix (already
    /// including self loops).
    pub fn gcn_forward(&self, tape: &mut Tape, store: &ParamStore, e: Var, adj: Var) -> Result<Var> {
        let mut g = e;
        for layer in &self.gcn {
            let w = tape.param(store, layer.weight);
            let b = tape.param(store, layer.bias);
            let agg = tape.matmul(adj, g)?;
            let lin = tape.matmul(agg, w)?;
            let pre = tape.add_row(lin, b)?;
            g = tape.relu(pre);
        }
        Ok(g)
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, adj: &Tensor) -> Result<Var> {
        let (e, _) = self.self_attentive(tape, store, x)?;
        if self.gcn.is_empty() {
            return Ok(e);
        }
        let a = tape.constant(aggregation_matrix(adj, self.mean_aggregation));
        self.gcn_forward(tape, store, e, a)
    }
}

/// Which encoder processes an utterance.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Which {
    Global,
    Local(usize),
}

/// Shared embedding table, one global encoder and one local encoder per
/// domain. With `shared_only` there are no local encoders and the global
/// encoding stands in for the local one.
#[derive(Clone, Debug)]
pub struct GlobalLocalEncoder {
    pub embedding: ParamId,
    pub global: SyntaxAwareEncoder,
    pub locals: Vec<SyntaxAwareEncoder>,
    pub dropout: f64,
    pub output_dim: usize,
}

impl GlobalLocalEncoder {
    pub fn new(
        store: &mut ParamStore,
        cfg: &EncoderConfig,
        vocab_size: usize,
        domains: &[String],
        shared_only: bool,
        use_gcn: bool,
        rng: &mut Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        // one-hot inputs: effective fan-in of 1
        let embedding = store.add_uniform("embedding", &[vocab_size, cfg.emb_dim], 1, rng)?;
        let layers = if use_gcn { cfg.gcn_layers } else { 0 };
        let global = SyntaxAwareEncoder::new(store, "global", cfg, layers, rng)?;
        let locals = if shared_only {
            Vec::new()
        } else {
            domains
                .iter()
                .map(|d| SyntaxAwareEncoder::new(store, &format!("local.{d}"), cfg, layers, rng))
                .collect::<Result<_>>()?
        };
        Ok(Self {
            embedding,
            global,
            locals,
            dropout: cfg.dropout,
            output_dim: cfg.output_dim(),
        })
    }

    pub fn shared_only(&self) -> bool {
        self.locals.is_empty()
    }

    /// Embedding lookup followed by dropout (training only).
    pub fn embed(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        ids: &[usize],
        rng: Option<&mut Rng>,
    ) -> Result<Var> {
        let table = tape.param(store, self.embedding);
        let x = tape.gather_rows(table, ids)?;
        match rng {
            Some(rng) => tape.dropout(x, self.dropout, true, rng),
            None => Ok(x),
        }
    }

    fn select(&self, which: Which) -> Result<&SyntaxAwareEncoder> {
        match which {
            Which::Global => Ok(&self.global),
            Which::Local(_) if self.shared_only() => Ok(&self.global),
            Which::Local(d) => self
                .locals
                .get(d)
                .ok_or_else(|| Error::UnknownDomain(format!("domain index {d}"))),
        }
    }

    pub fn encode(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        ids: &[usize],
        adj: &Tensor,
        which: Which,
        rng: Option<&mut Rng>,
    ) -> Result<Var> {
        let enc = self.select(which)?;
        let x = self.embed(tape, store, ids, rng)?;
        enc.forward(tape, store, x, adj)
    }

    /// `(G^g, G^l)` for an utterance routed to `domain`. Both encoders read
    /// the same (dropped-out) embeddings.
    pub fn encode_global_local(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        ids: &[usize],
        adj: &Tensor,
        domain: usize,
        rng: Option<&mut Rng>,
    ) -> Result<(Var, Var)> {
        let local = self.select(Which::Local(domain))?;
        let x = self.embed(tape, store, ids, rng)?;
        let g = self.global.forward(tape, store, x, adj)?;
        if self.shared_only() {
            return Ok((g, g));
        }
        let l = local.forward(tape, store, x, adj)?;
        Ok((g, l))
    }
}
