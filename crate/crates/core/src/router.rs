//! Utterance-level domain classification and routing to local encoders.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::corpus::{adjacency_from_heads, CorpusSplit, Example, Vocab};
use crate::encoder::{EncoderConfig, SyntaxAwareEncoder};
use crate::error::{Error, Result};
use crate::intent::{argmax, attention_pool};
use crate::nn::Linear;
use crate::optim::{AdamConfig, AdamState};
use crate::params::{ParamId, ParamStore};
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DomainClfConfig {
    pub encoder: EncoderConfig,
    pub epochs: usize,
    pub accumulate: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Stop once dev accuracy reaches this value.
    pub early_stop_accuracy: Option<f64>,
}

impl Default for DomainClfConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            epochs: 10,
            accumulate: 16,
            learning_rate: 1e-3,
            seed: 1,
            early_stop_accuracy: Some(1.0),
        }
    }
}

/// Syntax-aware encoder, attention pooling and a softmax over domains.
#[derive(Clone, Debug)]
pub struct DomainClassifier {
    pub vocab: Vocab,
    pub store: ParamStore,
    embedding: ParamId,
    encoder: SyntaxAwareEncoder,
    pool: Linear,
    head: Linear,
    dropout: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClfEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_accuracy: f64,
}

#[derive(Clone, Debug)]
pub struct DomainClfCheckpoint {
    pub classifier: DomainClassifier,
    pub config: DomainClfConfig,
    pub best_dev_accuracy: f64,
    pub history: Vec<ClfEpoch>,
}

#[derive(Serialize, Deserialize)]
struct ClfMeta {
    vocab: Vocab,
    config: DomainClfConfig,
    best_dev_accuracy: f64,
    history: Vec<ClfEpoch>,
}

impl DomainClassifier {
    pub fn new(cfg: &EncoderConfig, vocab: Vocab, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        if vocab.domains().is_empty() {
            return Err(Error::config("domain classifier needs at least one domain"));
        }
        let mut store = ParamStore::new();
        let embedding = store.add_uniform("embedding", &[vocab.num_tokens(), cfg.emb_dim], 1, rng)?;
        let encoder = SyntaxAwareEncoder::new(&mut store, "encoder", cfg, cfg.gcn_layers, rng)?;
        let d = cfg.output_dim();
        let pool = Linear::new(&mut store, "pool", d, 1, true, rng)?;
        let head = Linear::new(&mut store, "head", d, vocab.domains().len(), true, rng)?;
        Ok(Self {
            vocab,
            store,
            embedding,
            encoder,
            pool,
            head,
            dropout: cfg.dropout,
        })
    }

    pub fn domains(&self) -> &[String] {
        self.vocab.domains()
    }

    fn logits_probs(
        &self,
        tape: &mut Tape,
        tokens: &[String],
        heads: &[usize],
        rng: Option<&mut Rng>,
    ) -> Result<crate::autodiff::Var> {
        let ids: Vec<usize> = tokens.iter().map(|t| self.vocab.token_id(t)).collect();
        let table = tape.param(&self.store, self.embedding);
        let mut x = tape.gather_rows(table, &ids)?;
        if let Some(rng) = rng {
            x = tape.dropout(x, self.dropout, true, rng)?;
        }
        let g = self.encoder.forward(tape, &self.store, x, &adjacency_from_heads(heads))?;
        let c = attention_pool(tape, &self.store, &self.pool, g)?;
        let logits = self.head.forward(tape, &self.store, c)?;
        Ok(tape.softmax_rows(logits))
    }

    /// Most probable domain and the full distribution. Ties go to the lowest
    /// domain id; a single-domain classifier answers without running.
    pub fn classify_domain(&self, tokens: &[String], heads: &[usize]) -> Result<(String, Vec<f64>)> {
        if self.domains().len() == 1 {
            return Ok((self.domains()[0].clone(), vec![1.0]));
        }
        let mut tape = Tape::new();
        let p = self.logits_probs(&mut tape, tokens, heads, None)?;
        let dist = tape.value(p).data().to_vec();
        Ok((self.domains()[argmax(&dist)].clone(), dist))
    }

    pub fn accuracy(&self, examples: &[Example]) -> Result<f64> {
        if examples.is_empty() {
            return Ok(0.0);
        }
        let mut hits = 0;
        for ex in examples {
            if self.classify_domain(&ex.tokens, &ex.heads)?.0 == ex.domain {
                hits += 1;
            }
        }
        Ok(hits as f64 / examples.len() as f64)
    }
}

/// Cross-entropy training on `(utterance, domain)` pairs with dev-accuracy
/// model selection.
pub fn train_domain_classifier(corpus: &CorpusSplit, cfg: &DomainClfConfig) -> Result<DomainClfCheckpoint> {
    if corpus.train.is_empty() || corpus.dev.is_empty() {
        return Err(Error::config("domain classifier needs nonempty train and dev splits"));
    }
    if cfg.accumulate == 0 {
        return Err(Error::config("accumulate must be at least 1"));
    }
    let vocab = Vocab::build(&corpus.train);
    if vocab.domains().len() < 2 {
        return Err(Error::config("domain classifier needs at least 2 training domains"));
    }
    let mut rng = Rng::seed(cfg.seed);
    let mut clf = DomainClassifier::new(&cfg.encoder, vocab, &mut rng)?;
    let mut adam = AdamState::new(
        &clf.store,
        AdamConfig {
            lr: cfg.learning_rate,
            ..AdamConfig::default()
        },
    );
    let gold: Vec<usize> = corpus
        .train
        .iter()
        .map(|e| clf.vocab.domain_id(&e.domain).expect("train domain in vocab"))
        .collect();
    let mut best = (f64::NEG_INFINITY, clf.store.clone());
    let mut history = Vec::new();
    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..corpus.train.len()).collect();
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.accumulate) {
            for &i in chunk {
                let ex = &corpus.train[i];
                let mut tape = Tape::new();
                let p = clf.logits_probs(&mut tape, &ex.tokens, &ex.heads, Some(&mut rng))?;
                let pg = tape.pick(p, &[gold[i]])?;
                let lp = tape.log_eps(pg, 1e-12);
                let loss = tape.scale(lp, -1.0);
                epoch_loss += tape.value(loss).item();
                tape.backward(loss)?;
                tape.write_param_grads(&mut clf.store)?;
            }
            adam.step(&mut clf.store)?;
        }
        let dev_accuracy = clf.accuracy(&corpus.dev)?;
        history.push(ClfEpoch {
            epoch,
            train_loss: epoch_loss,
            dev_accuracy,
        });
        if dev_accuracy > best.0 {
            best = (dev_accuracy, clf.store.clone());
        }
        if cfg.early_stop_accuracy.is_some_and(|t| dev_accuracy >= t) {
            break;
        }
    }
    clf.store = best.1;
    Ok(DomainClfCheckpoint {
        classifier: clf,
        config: cfg.clone(),
        best_dev_accuracy: best.0,
        history,
    })
}

impl DomainClfCheckpoint {
    /// Writes parameters to `path` and metadata to `path.json`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.classifier.store.save(path)?;
        let meta = ClfMeta {
            vocab: self.classifier.vocab.clone(),
            config: self.config.clone(),
            best_dev_accuracy: self.best_dev_accuracy,
            history: self.history.clone(),
        };
        std::fs::write(sidecar(path), serde_json::to_string_pretty(&meta)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let meta: ClfMeta = serde_json::from_str(&std::fs::read_to_string(sidecar(path))?)?;
        let stored = ParamStore::load(path)?;
        let mut clf = DomainClassifier::new(&meta.config.encoder, meta.vocab, &mut Rng::seed(0))?;
        clf.store.load_values_from(&stored)?;
        Ok(Self {
            classifier: clf,
            config: meta.config,
            best_dev_accuracy: meta.best_dev_accuracy,
            history: meta.history,
        })
    }
}

pub(crate) fn sidecar(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

/// How the local encoder is chosen at inference.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Routing {
    /// Use the gold domain label.
    Oracle,
    /// Use the domain classifier's prediction.
    #[default]
    Predicted,
}

impl std::str::FromStr for Routing {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(Routing::Oracle),
            "predicted" => Ok(Routing::Predicted),
            other => Err(Error::config(format!("unknown routing mode `{other}`"))),
        }
    }
}

/// Domain whose local encoder should process `ex`, checked against the
/// domains the SLU model knows.
pub fn route(
    ex: &Example,
    routing: Routing,
    classifier: Option<&DomainClassifier>,
    known: &[String],
) -> Result<String> {
    let d = match routing {
        Routing::Oracle => ex.domain.clone(),
        Routing::Predicted => {
            let clf = classifier
                .ok_or_else(|| Error::usage("predicted routing needs a trained domain classifier"))?;
            clf.classify_domain(&ex.tokens, &ex.heads)?.0
        }
    };
    if !known.contains(&d) {
        return Err(Error::UnknownDomain(d));
    }
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_synthetic, SynthConfig};

    fn tiny_cfg() -> EncoderConfig {
        EncoderConfig {
            emb_dim: 8,
            lstm_hidden: 6,
            attn_dim: 4,
            gcn_layers: 1,
            dropout: 0.1,
            mean_aggregation: false,
        }
    }

    fn corpus() -> CorpusSplit {
        generate_synthetic(&SynthConfig {
            train_per_domain: 40,
            dev_per_domain: 15,
            test_per_domain: 15,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn single_domain_short_circuits() {
        let c = corpus();
        let movie: Vec<_> = c.train.iter().filter(|e| e.domain == "movie").cloned().collect();
        let clf = DomainClassifier::new(&tiny_cfg(), Vocab::build(&movie), &mut Rng::seed(0)).unwrap();
        let (d, p) = clf.classify_domain(&c.train[0].tokens, &c.train[0].heads).unwrap();
        assert_eq!(d, "movie");
        assert_eq!(p, vec![1.0]);

        let single = CorpusSplit { train: movie.clone(), dev: movie, test: vec![] };
        assert!(train_domain_classifier(&single, &DomainClfConfig::default()).is_err());
    }

    #[test]
    fn trains_deterministically_and_loss_drops() {
        let c = corpus();
        let cfg = DomainClfConfig {
            encoder: tiny_cfg(),
            epochs: 3,
            early_stop_accuracy: None,
            ..Default::default()
        };
        let a = train_domain_classifier(&c, &cfg).unwrap();
        let b = train_domain_classifier(&c, &cfg).unwrap();
        assert_eq!(a.classifier.store, b.classifier.store);
        assert_eq!(a.history, b.history);
        assert!(a.history[2].train_loss < a.history[0].train_loss);
        let (_, dist) = a.classifier.classify_domain(&c.test[0].tokens, &c.test[0].heads).unwrap();
        assert!((dist.iter().sum::<f64>() - 1.0).abs() < 1e-12);

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("clf.bin");
        a.save(&p).unwrap();
        let back = DomainClfCheckpoint::load(&p).unwrap();
        assert_eq!(back.classifier.store, a.classifier.store);
    }

    #[test]
    fn oracle_routing_checks_domain() {
        let c = corpus();
        let known = vec!["movie".to_string(), "music".into(), "weather".into()];
        let ex = &c.test[0];
        assert_eq!(route(ex, Routing::Oracle, None, &known).unwrap(), ex.domain);
        let mut odd = ex.clone();
        odd.domain = "zzz".into();
        assert!(matches!(route(&odd, Routing::Oracle, None, &known), Err(Error::UnknownDomain(_))));
        assert!(route(ex, Routing::Predicted, None, &known).is_err());
    }
}
