//! Fixtures shared by the benchmarks.

use mdslu_core::corpus::{derive_filter_labels, Vocab};
use mdslu_core::encoder::EncoderConfig;
use mdslu_core::model::{Encoded, JointModel, ModeFlags, ModelConfig};
use mdslu_core::{generate_synthetic, CorpusSplit, Rng, SynthConfig, TrainConfig};

pub struct Fixture {
    pub corpus: CorpusSplit,
    pub vocab: Vocab,
    pub model: JointModel,
    pub encoded: Vec<Encoded>,
    pub config: TrainConfig,
}

/// A three-domain synthetic corpus and an untrained model of width `width`.
pub fn fixture(width: usize, modes: ModeFlags) -> Fixture {
    let corpus = generate_synthetic(&SynthConfig {
        train_per_domain: 32,
        dev_per_domain: 8,
        test_per_domain: 8,
        ..SynthConfig::default()
    })
    .expect("synthetic corpus");
    let vocab = Vocab::build(&corpus.train);
    let fl = derive_filter_labels(&corpus.train, vocab.domains()).expect("filter labels");
    let config = TrainConfig {
        model: ModelConfig {
            encoder: EncoderConfig {
                emb_dim: width,
                lstm_hidden: width,
                attn_dim: width,
                ..EncoderConfig::default()
            },
            decoder_hidden: width,
            ..ModelConfig::default()
        },
        modes,
        ..TrainConfig::default()
    };
    let model = JointModel::new(&config.model, modes, &vocab, &mut Rng::seed(1)).expect("model");
    let encoded = corpus.train.iter().map(|e| Encoded::new(e, &vocab, &fl)).collect();
    Fixture { corpus, vocab, model, encoded, config }
}
