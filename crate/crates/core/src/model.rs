//! The joint multi-domain SLU model: global/local encoders, intent head and
//! two-stage slot decoder, wired according to the ablation flags.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::corpus::{adjacency_from_heads, gold_filter_vector, Example, FilterLabelSet, Vocab};
use crate::encoder::{EncoderConfig, GlobalLocalEncoder};
use crate::error::{Error, Result};
use crate::intent::{argmax, IntentHead};
use crate::params::ParamStore;
use crate::rng::Rng;
use crate::slot::{
    apply_filter, controller_forward, decode_slots, filter_forward, fuse_token, oracle_filter,
    TwoStageParams,
};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    /// Width of the intent embedding fed to the slot decoder.
    pub intent_dim: usize,
    pub decoder_hidden: usize,
    /// Feed the gold previous slot label to the decoder during training.
    pub teacher_forcing: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            intent_dim: 16,
            decoder_hidden: 128,
            teacher_forcing: false,
        }
    }
}

/// Architecture switches. All false is the full model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModeFlags {
    /// Shared encoder only: `G^l := G^g`.
    pub no_local: bool,
    /// Summation fusion `u^f_i = g^g_i + g^l_i`, no Filter or Controller.
    pub no_filter_controller: bool,
    /// Skip graph convolution: `G := E`.
    pub no_gcn: bool,
    /// Gold domain-general indicators replace the learned Filter.
    pub oracle_filter: bool,
}

impl ModeFlags {
    pub fn full() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        if self.oracle_filter && self.no_filter_controller {
            return Err(Error::config("oracle_filter has no effect with no_filter_controller"));
        }
        Ok(())
    }

    /// Parses `full` or a comma-separated list of flag names.
    pub fn parse(s: &str) -> Result<Self> {
        let mut m = Self::default();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "full" => {}
                "no_local" => m.no_local = true,
                "no_filter_controller" => m.no_filter_controller = true,
                "no_gcn" => m.no_gcn = true,
                "oracle_filter" => m.oracle_filter = true,
                other => return Err(Error::config(format!("unknown mode `{other}`"))),
            }
        }
        m.validate()?;
        Ok(m)
    }

    pub fn name(&self) -> String {
        let mut parts = Vec::new();
        if self.no_local {
            parts.push("no_local");
        }
        if self.no_filter_controller {
            parts.push("no_filter_controller");
        }
        if self.no_gcn {
            parts.push("no_gcn");
        }
        if self.oracle_filter {
            parts.push("oracle_filter");
        }
        if parts.is_empty() {
            "full".into()
        } else {
            parts.join(",")
        }
    }

    /// Whether the Filter auxiliary loss applies.
    pub fn uses_filter_loss(&self) -> bool {
        !self.oracle_filter && !self.no_filter_controller
    }
}

/// An [`Example`] mapped to ids.
#[derive(Clone, Debug)]
pub struct Encoded {
    pub token_ids: Vec<usize>,
    pub adjacency: Tensor,
    pub intent: Option<usize>,
    /// Gold slot ids; `None` when some label is outside the vocabulary.
    pub slots: Option<Vec<usize>>,
    pub domain: Option<usize>,
    pub gold_filter: Vec<f64>,
}

impl Encoded {
    pub fn new(ex: &Example, vocab: &Vocab, fl: &FilterLabelSet) -> Self {
        Self {
            token_ids: ex.tokens.iter().map(|t| vocab.token_id(t)).collect(),
            adjacency: adjacency_from_heads(&ex.heads),
            intent: vocab.intent_id(&ex.intent),
            slots: ex.slots.iter().map(|s| vocab.slot_id(s)).collect(),
            domain: vocab.domain_id(&ex.domain),
            gold_filter: gold_filter_vector(ex, fl).into_iter().map(f64::from).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }
}

/// Tape handles produced by one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub intent_probs: Var,
    pub slot_probs: Vec<Var>,
    /// Learned Filter probabilities, when the mode has a learned Filter.
    pub filter: Option<Var>,
    pub pooled_global: Var,
    pub pooled_local: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub intent: usize,
    pub slots: Vec<usize>,
    pub intent_probs: Vec<f64>,
    pub slot_probs: Vec<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct JointModel {
    pub config: ModelConfig,
    pub modes: ModeFlags,
    pub store: ParamStore,
    pub encoder: GlobalLocalEncoder,
    pub intent_head: IntentHead,
    pub slot_head: TwoStageParams,
}

impl JointModel {
    pub fn new(config: &ModelConfig, modes: ModeFlags, vocab: &Vocab, rng: &mut Rng) -> Result<Self> {
        modes.validate()?;
        if vocab.intents().is_empty() || vocab.slots().is_empty() {
            return Err(Error::config("vocabulary has no intents or slots"));
        }
        let mut store = ParamStore::new();
        let encoder = GlobalLocalEncoder::new(
            &mut store,
            &config.encoder,
            vocab.num_tokens(),
            vocab.domains(),
            modes.no_local,
            !modes.no_gcn,
            rng,
        )?;
        let width = encoder.output_dim;
        let intent_head = IntentHead::new(&mut store, width, vocab.intents().len(), rng)?;
        let gated = !modes.no_filter_controller;
        let slot_head = TwoStageParams::new(
            &mut store,
            width,
            vocab.intents().len(),
            vocab.slots().len(),
            config.intent_dim,
            config.decoder_hidden,
            gated && !modes.oracle_filter,
            gated,
            rng,
        )?;
        Ok(Self {
            config: config.clone(),
            modes,
            store,
            encoder,
            intent_head,
            slot_head,
        })
    }

    /// One forward pass for an utterance whose local encoder is `domain`.
    /// `rng` is `Some` in training mode (dropout active).
    pub fn forward(
        &self,
        tape: &mut Tape,
        ex: &Encoded,
        domain: usize,
        mut rng: Option<&mut Rng>,
    ) -> Result<ForwardOutput> {
        let store = &self.store;
        let training = rng.is_some();
        let (g, l) = self.encoder.encode_global_local(
            tape,
            store,
            &ex.token_ids,
            &ex.adjacency,
            domain,
            rng.as_deref_mut(),
        )?;
        let (cg, cl) = self.intent_head.pool(tape, store, g, l)?;
        let intent_probs = self.intent_head.predict(tape, store, cg, cl)?;

        let (fused, filter) = if self.modes.no_filter_controller {
            (tape.add(g, l)?, None)
        } else {
            let (f, learned) = if self.modes.oracle_filter {
                (oracle_filter(tape, Some(&ex.gold_filter))?, None)
            } else {
                let lin = self.slot_head.filter.as_ref().expect("learned filter allocated");
                let f = filter_forward(tape, store, lin, g, l)?;
                (f, Some(f))
            };
            let u = apply_filter(tape, f, l)?;
            let ctl = self.slot_head.controller.as_ref().expect("controller allocated");
            let p = controller_forward(tape, store, ctl, g, l)?;
            (fuse_token(tape, p, u, g)?, learned)
        };

        let teacher = match (training && self.config.teacher_forcing, &ex.slots) {
            (true, Some(s)) => Some(s.as_slice()),
            _ => None,
        };
        let slot_probs = decode_slots(tape, store, &self.slot_head, fused, intent_probs, teacher)?;
        Ok(ForwardOutput {
            intent_probs,
            slot_probs,
            filter,
            pooled_global: cg,
            pooled_local: cl,
        })
    }

    /// Eval-mode prediction.
    pub fn predict(&self, ex: &Encoded, domain: usize) -> Result<Prediction> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, ex, domain, None)?;
        let intent_probs = tape.value(out.intent_probs).data().to_vec();
        let slot_probs: Vec<Vec<f64>> = out
            .slot_probs
            .iter()
            .map(|&v| tape.value(v).data().to_vec())
            .collect();
        Ok(Prediction {
            intent: argmax(&intent_probs),
            slots: slot_probs.iter().map(|p| argmax(p)).collect(),
            intent_probs,
            slot_probs,
        })
    }

    /// Pooled `(c^g, c^l)` sentence vectors in eval mode.
    pub fn sentence_vectors(&self, ex: &Encoded, domain: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut tape = Tape::new();
        let (g, l) = self.encoder.encode_global_local(
            &mut tape,
            &self.store,
            &ex.token_ids,
            &ex.adjacency,
            domain,
            None,
        )?;
        let (cg, cl) = self.intent_head.pool(&mut tape, &self.store, g, l)?;
        Ok((tape.value(cg).data().to_vec(), tape.value(cl).data().to_vec()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_modes() {
        assert_eq!(ModeFlags::parse("full").unwrap(), ModeFlags::full());
        let m = ModeFlags::parse("no_local,no_gcn").unwrap();
        assert!(m.no_local && m.no_gcn && !m.oracle_filter);
        assert_eq!(m.name(), "no_local,no_gcn");
        assert!(ModeFlags::parse("bogus").is_err());
        assert!(ModeFlags::parse("oracle_filter,no_filter_controller").is_err());
        assert!(!ModeFlags::parse("oracle_filter").unwrap().uses_filter_loss());
    }
}
