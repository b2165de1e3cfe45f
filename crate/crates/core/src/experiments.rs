//! Multi-seed experiment harnesses: architecture ablations and the
//! target-domain data-ratio sweep.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{subsample_ratio, CorpusSplit};
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::model::ModeFlags;
use crate::router::Routing;
use crate::training::{train, TrainConfig};

/// Seed-mean of the headline metrics.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanMetrics {
    pub overall_exact: f64,
    pub slot_f1: f64,
    pub intent_accuracy: f64,
    pub per_domain_exact: BTreeMap<String, f64>,
}

impl MeanMetrics {
    pub fn of(reports: &[MetricsReport]) -> Self {
        let n = reports.len().max(1) as f64;
        let mut m = MeanMetrics::default();
        for r in reports {
            m.overall_exact += r.overall_exact / n;
            m.slot_f1 += r.slot_f1 / n;
            m.intent_accuracy += r.intent_accuracy / n;
            for (d, v) in &r.per_domain_exact {
                *m.per_domain_exact.entry(d.clone()).or_default() += v / n;
            }
        }
        m
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeRun {
    pub mode: String,
    pub seeds: Vec<u64>,
    pub per_seed: Vec<MetricsReport>,
    pub mean: MeanMetrics,
}

/// Trains `base` under every mode and seed and evaluates on the test split
/// with gold-domain routing.
pub fn run_ablation(
    corpus: &CorpusSplit,
    base: &TrainConfig,
    modes: &[ModeFlags],
    seeds: &[u64],
) -> Result<Vec<ModeRun>> {
    if seeds.is_empty() || modes.is_empty() {
        return Err(Error::config("ablation needs at least one mode and one seed"));
    }
    modes
        .iter()
        .map(|&mode| {
            let per_seed = seeds
                .iter()
                .map(|&seed| {
                    let cfg = TrainConfig { modes: mode, seed, ..base.clone() };
                    train(corpus, &cfg)?.evaluate(&corpus.test, Routing::Oracle, None)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(ModeRun {
                mode: mode.name(),
                seeds: seeds.to_vec(),
                mean: MeanMetrics::of(&per_seed),
                per_seed,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioRun {
    pub ratio: f64,
    pub runs: Vec<ModeRun>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptationResult {
    pub target_domain: String,
    pub ratios: Vec<RatioRun>,
}

impl AdaptationResult {
    /// Seed-mean target-domain exact accuracy for `mode` at `ratio`.
    pub fn target_exact(&self, ratio: f64, mode: &str) -> Option<f64> {
        let r = self.ratios.iter().find(|r| r.ratio == ratio)?;
        let m = r.runs.iter().find(|m| m.mode == mode)?;
        m.mean.per_domain_exact.get(&self.target_domain).copied()
    }
}

/// For each ratio, subsamples the target domain's training data (other
/// domains untouched) and runs every mode and seed; dev and test stay whole.
pub fn run_adaptation(
    corpus: &CorpusSplit,
    target_domain: &str,
    ratios: &[f64],
    modes: &[ModeFlags],
    seeds: &[u64],
    base: &TrainConfig,
) -> Result<AdaptationResult> {
    if !corpus.train.iter().any(|e| e.domain == target_domain) {
        return Err(Error::UnknownDomain(target_domain.to_string()));
    }
    if ratios.is_empty() {
        return Err(Error::config("ratio list is empty"));
    }
    if let Some(r) = ratios.iter().find(|&&r| !(r > 0.0 && r <= 1.0)) {
        return Err(Error::config(format!("ratio {r} outside (0, 1]")));
    }
    if seeds.is_empty() || modes.is_empty() {
        return Err(Error::config("adaptation needs at least one mode and one seed"));
    }
    let mut out = Vec::with_capacity(ratios.len());
    for &ratio in ratios {
        let mut runs = Vec::with_capacity(modes.len());
        for &mode in modes {
            let mut per_seed = Vec::with_capacity(seeds.len());
            for &seed in seeds {
                let sub = CorpusSplit {
                    train: subsample_ratio(&corpus.train, target_domain, ratio, seed)?,
                    dev: corpus.dev.clone(),
                    test: corpus.test.clone(),
                };
                let cfg = TrainConfig { modes: mode, seed, ..base.clone() };
                per_seed.push(train(&sub, &cfg)?.evaluate(&sub.test, Routing::Oracle, None)?);
            }
            runs.push(ModeRun {
                mode: mode.name(),
                seeds: seeds.to_vec(),
                mean: MeanMetrics::of(&per_seed),
                per_seed,
            });
        }
        out.push(RatioRun { ratio, runs });
    }
    Ok(AdaptationResult {
        target_domain: target_domain.to_string(),
        ratios: out,
    })
}
