//! Multi-domain spoken language understanding: joint intent detection and
//! slot filling with shared and per-domain syntax-aware encoders, built on a
//! small reverse-mode autodiff engine.

pub mod autodiff;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod evaluate;
pub mod experiments;
pub mod export;
pub mod intent;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod params;
pub mod rng;
pub mod router;
pub mod slot;
pub mod synth;
pub mod tensor;
pub mod training;

pub use autodiff::{Tape, Var};
pub use corpus::{CorpusSplit, Example, FilterLabelSet, Span, Vocab};
pub use encoder::EncoderConfig;
pub use error::{Error, Result};
pub use experiments::{run_ablation, run_adaptation, AdaptationResult, MeanMetrics, ModeRun};
pub use export::{export_vectors, VectorRecord, VectorTag};
pub use metrics::{LabeledPrediction, MetricsReport};
pub use model::{JointModel, ModeFlags, ModelConfig};
pub use params::{ParamId, ParamStore};
pub use rng::Rng;
pub use router::{
    train_domain_classifier, DomainClassifier, DomainClfCheckpoint, DomainClfConfig, Routing,
};
pub use synth::{generate_synthetic, SynthConfig};
pub use tensor::Tensor;
pub use training::{train, Checkpoint, TrainConfig};
