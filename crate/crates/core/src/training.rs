//! Joint objective, the accumulate-then-step training loop and dev-set
//! model selection.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::corpus::{derive_filter_labels, CorpusSplit, FilterLabelSet, Vocab};
use crate::error::{Error, Result};
use crate::evaluate::evaluate_examples;
use crate::model::{Encoded, JointModel, ModeFlags, ModelConfig};
use crate::optim::{AdamConfig, AdamState};
use crate::params::ParamStore;
use crate::rng::Rng;
use crate::router::{sidecar, Routing};

const LOG_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub modes: ModeFlags,
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    pub epochs: usize,
    /// Examples whose gradients are summed before each optimizer step.
    pub accumulate: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Global gradient-norm clipping threshold; off by default.
    pub clip_norm: Option<f64>,
    /// Stop once dev exact accuracy reaches this value.
    pub early_stop_exact: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            modes: ModeFlags::full(),
            alpha1: 1.0,
            alpha2: 1.0,
            alpha3: 0.5,
            epochs: 30,
            accumulate: 16,
            learning_rate: 1e-3,
            seed: 1,
            clip_norm: None,
            early_stop_exact: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, a) in [("alpha1", self.alpha1), ("alpha2", self.alpha2), ("alpha3", self.alpha3)] {
            if !(a >= 0.0 && a.is_finite()) {
                return Err(Error::config(format!("{name} must be finite and >= 0, got {a}")));
            }
        }
        if self.accumulate == 0 {
            return Err(Error::config("accumulate must be at least 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("learning_rate must be positive"));
        }
        if self.clip_norm.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::config("clip_norm must be positive"));
        }
        self.modes.validate()?;
        self.model.encoder.validate()
    }
}

/// `L1 = -ln y^I[gold]`.
pub fn intent_loss(tape: &mut Tape, intent_probs: Var, gold: usize) -> Result<Var> {
    let p = tape.pick(intent_probs, &[gold])?;
    let lp = tape.log_eps(p, LOG_EPS);
    let s = tape.sum(lp);
    Ok(tape.scale(s, -1.0))
}

/// `L2 = -sum_i ln y^S_i[gold_i]`.
pub fn slot_loss(tape: &mut Tape, slot_probs: &[Var], gold: &[usize]) -> Result<Var> {
    if slot_probs.len() != gold.len() || gold.is_empty() {
        return Err(Error::Dimension {
            op: "slot_loss",
            left: vec![slot_probs.len()],
            right: vec![gold.len()],
        });
    }
    let picked = slot_probs
        .iter()
        .zip(gold)
        .map(|(&p, &g)| tape.pick(p, &[g]))
        .collect::<Result<Vec<_>>>()?;
    let all = tape.concat(&picked)?;
    let lp = tape.log_eps(all, LOG_EPS);
    let s = tape.sum(lp);
    Ok(tape.scale(s, -1.0))
}

/// Binary cross-entropy between Filter outputs and gold indicators.
pub fn filter_loss(tape: &mut Tape, filter: Var, gold: &[f64]) -> Result<Var> {
    let lf = tape.log_eps(filter, LOG_EPS);
    let inv = tape.one_minus(filter);
    let linv = tape.log_eps(inv, LOG_EPS);
    let pos = tape.mul_const(lf, gold.to_vec())?;
    let neg = tape.mul_const(linv, gold.iter().map(|y| 1.0 - y).collect())?;
    let both = tape.add(pos, neg)?;
    let s = tape.sum(both);
    Ok(tape.scale(s, -1.0))
}

/// `alpha1 L1 + alpha2 L2 (+ alpha3 L3)`; the filter term is dropped
/// whenever the mode has no learned Filter.
pub fn joint_loss(
    tape: &mut Tape,
    l1: Var,
    l2: Var,
    l3: Option<Var>,
    cfg: &TrainConfig,
) -> Result<Var> {
    let a = tape.scale(l1, cfg.alpha1);
    let b = tape.scale(l2, cfg.alpha2);
    let mut total = tape.add(a, b)?;
    if let (Some(l3), true) = (l3, cfg.modes.uses_filter_loss()) {
        let c = tape.scale(l3, cfg.alpha3);
        total = tape.add(total, c)?;
    }
    Ok(total)
}

/// Joint loss for one example, built on `tape`.
pub fn example_loss(
    tape: &mut Tape,
    model: &JointModel,
    ex: &Encoded,
    cfg: &TrainConfig,
    rng: Option<&mut Rng>,
) -> Result<Var> {
    let (Some(intent), Some(slots), Some(domain)) = (ex.intent, ex.slots.as_ref(), ex.domain) else {
        return Err(Error::InvalidExample {
            field: "labels".into(),
            message: "training example has labels outside the vocabulary".into(),
        });
    };
    let out = model.forward(tape, ex, domain, rng)?;
    let l1 = intent_loss(tape, out.intent_probs, intent)?;
    let l2 = slot_loss(tape, &out.slot_probs, slots)?;
    let l3 = match out.filter {
        Some(f) => Some(filter_loss(tape, f, &ex.gold_filter)?),
        None => None,
    };
    joint_loss(tape, l1, l2, l3, cfg)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean joint loss per training example.
    pub train_loss: f64,
    pub dev_exact: f64,
    pub optimizer_steps: u64,
}

/// A trained model with everything needed to run it again.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: JointModel,
    pub vocab: Vocab,
    pub filter_labels: FilterLabelSet,
    pub config: TrainConfig,
    pub best_dev_exact: f64,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    vocab: Vocab,
    filter_labels: FilterLabelSet,
    config: TrainConfig,
    best_dev_exact: f64,
    best_epoch: usize,
    history: Vec<EpochRecord>,
}

impl Checkpoint {
    /// Parameters go to `path`, everything else to `path.json`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.model.store.save(path)?;
        let meta = CheckpointMeta {
            vocab: self.vocab.clone(),
            filter_labels: self.filter_labels.clone(),
            config: self.config.clone(),
            best_dev_exact: self.best_dev_exact,
            best_epoch: self.best_epoch,
            history: self.history.clone(),
        };
        std::fs::write(sidecar(path), serde_json::to_string_pretty(&meta)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(sidecar(path))
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", sidecar(path).display())))?;
        let meta: CheckpointMeta = serde_json::from_str(&text)?;
        let stored = ParamStore::load(path)?;
        let mut model =
            JointModel::new(&meta.config.model, meta.config.modes, &meta.vocab, &mut Rng::seed(0))?;
        model.store.load_values_from(&stored)?;
        Ok(Self {
            model,
            vocab: meta.vocab,
            filter_labels: meta.filter_labels,
            config: meta.config,
            best_dev_exact: meta.best_dev_exact,
            best_epoch: meta.best_epoch,
            history: meta.history,
        })
    }
}

/// Trains on `corpus.train`, selecting the epoch with the best dev exact
/// accuracy (gold-domain routing).
pub fn train(corpus: &CorpusSplit, cfg: &TrainConfig) -> Result<Checkpoint> {
    cfg.validate()?;
    if corpus.train.is_empty() {
        return Err(Error::config("train split is empty"));
    }
    if corpus.dev.is_empty() {
        return Err(Error::config("dev split is empty"));
    }
    for ex in corpus.train.iter().chain(&corpus.dev) {
        ex.validate()?;
    }
    let vocab = Vocab::build(&corpus.train);
    let filter_labels = derive_filter_labels(&corpus.train, vocab.domains())?;
    let mut rng = Rng::seed(cfg.seed);
    let mut model = JointModel::new(&cfg.model, cfg.modes, &vocab, &mut rng)?;
    let mut adam = AdamState::new(
        &model.store,
        AdamConfig {
            lr: cfg.learning_rate,
            ..AdamConfig::default()
        },
    );
    let encoded: Vec<Encoded> = corpus
        .train
        .iter()
        .map(|e| Encoded::new(e, &vocab, &filter_labels))
        .collect();

    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..encoded.len()).collect();
        rng.shuffle(&mut order);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.accumulate) {
            for &i in chunk {
                let mut tape = Tape::new();
                let loss = example_loss(&mut tape, &model, &encoded[i], cfg, Some(&mut rng))?;
                let v = tape.value(loss).item();
                if !v.is_finite() {
                    return Err(Error::usage(format!("non-finite loss at epoch {epoch}")));
                }
                total += v;
                tape.backward(loss)?;
                tape.write_param_grads(&mut model.store)?;
            }
            if model.store.grads_all_zero() {
                model.store.zero_grads();
                continue;
            }
            if let Some(c) = cfg.clip_norm {
                model.store.clip_grad_norm(c);
            }
            adam.step(&mut model.store)?;
        }
        let dev = evaluate_examples(&model, &vocab, &filter_labels, &corpus.dev, Routing::Oracle, None)?;
        history.push(EpochRecord {
            epoch,
            train_loss: total / encoded.len() as f64,
            dev_exact: dev.overall_exact,
            optimizer_steps: adam.step_count(),
        });
        if best.as_ref().is_none_or(|b| dev.overall_exact > b.0) {
            best = Some((dev.overall_exact, epoch, model.store.clone()));
        }
        if cfg.early_stop_exact.is_some_and(|t| dev.overall_exact >= t) {
            break;
        }
    }
    let (best_dev_exact, best_epoch) = match best {
        Some((score, epoch, store)) => {
            model.store = store;
            (score, epoch)
        }
        None => (0.0, 0),
    };
    Ok(Checkpoint {
        model,
        vocab,
        filter_labels,
        config: cfg.clone(),
        best_dev_exact,
        best_epoch,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-9
    }

    #[test]
    fn intent_loss_values() {
        let mut t = Tape::new();
        let p = t.constant(Tensor::vector(vec![0.25, 0.25, 0.25, 0.25]));
        let l = intent_loss(&mut t, p, 2).unwrap();
        assert!(close(t.value(l).item(), 4f64.ln()));
        let q = t.constant(Tensor::vector(vec![0.0, 1.0]));
        let l = intent_loss(&mut t, q, 1).unwrap();
        assert!(t.value(l).item().abs() < 1e-9);
    }

    #[test]
    fn slot_loss_values() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::vector(vec![0.5, 0.5, 0.0]));
        let b = t.constant(Tensor::vector(vec![0.25, 0.5, 0.25]));
        let l = slot_loss(&mut t, &[a, b], &[0, 2]).unwrap();
        assert!(close(t.value(l).item(), 2f64.ln() + 4f64.ln()));
        assert!(slot_loss(&mut t, &[a], &[0, 1]).is_err());
    }

    #[test]
    fn filter_loss_values() {
        let mut t = Tape::new();
        let f = t.constant(Tensor::vector(vec![0.8, 0.4]));
        let l = filter_loss(&mut t, f, &[1.0, 0.0]).unwrap();
        let want = -(0.8f64.ln() + 0.6f64.ln());
        assert!(close(t.value(l).item(), want));
        assert!((t.value(l).item() - 0.7340).abs() < 1e-4);
        let h = t.constant(Tensor::vector(vec![0.5; 3]));
        let l = filter_loss(&mut t, h, &[1.0, 0.0, 1.0]).unwrap();
        assert!(close(t.value(l).item(), 3.0 * 2f64.ln()));
    }

    #[test]
    fn joint_weights() {
        let mut t = Tape::new();
        let l1 = t.constant(Tensor::scalar(2.0));
        let l2 = t.constant(Tensor::scalar(4.0));
        let l3 = t.constant(Tensor::scalar(2.0));
        let cfg = TrainConfig::default();
        let j = joint_loss(&mut t, l1, l2, Some(l3), &cfg).unwrap();
        assert!(close(t.value(j).item(), 7.0));
        let only = TrainConfig { alpha2: 0.0, alpha3: 0.0, ..TrainConfig::default() };
        let j = joint_loss(&mut t, l1, l2, Some(l3), &only).unwrap();
        assert!(close(t.value(j).item(), 2.0));
        let oracle = TrainConfig {
            modes: ModeFlags { oracle_filter: true, ..ModeFlags::default() },
            ..TrainConfig::default()
        };
        let j = joint_loss(&mut t, l1, l2, Some(l3), &oracle).unwrap();
        assert!(close(t.value(j).item(), 6.0));
    }

    #[test]
    fn config_checks() {
        assert!(TrainConfig { alpha1: -1.0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { accumulate: 0, ..TrainConfig::default() }.validate().is_err());
        let empty = CorpusSplit::default();
        assert!(matches!(train(&empty, &TrainConfig::default()), Err(Error::Config(_))));
    }
}
