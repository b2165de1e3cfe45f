//! Span-level slot F1, intent accuracy and sentence-level exact accuracy.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{bio_spans, Example};
use crate::error::{Error, Result};

/// A model output mapped back to label strings.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledPrediction {
    pub intent: String,
    pub slots: Vec<String>,
    /// Domain whose local encoder produced this prediction.
    pub routed_domain: String,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanCounts {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

impl SpanCounts {
    pub fn precision(&self) -> f64 {
        ratio(self.true_positives, self.true_positives + self.false_positives)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.true_positives, self.true_positives + self.false_negatives)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Micro-averaged span counts; a predicted span is a true positive only on
/// an exact `(label, start, end)` match.
pub fn span_counts<S: AsRef<str>>(gold: &[Vec<S>], pred: &[Vec<S>]) -> Result<SpanCounts> {
    if gold.len() != pred.len() {
        return Err(Error::usage(format!(
            "{} gold sequences vs {} predicted",
            gold.len(),
            pred.len()
        )));
    }
    let mut c = SpanCounts::default();
    for (i, (g, p)) in gold.iter().zip(pred).enumerate() {
        if g.len() != p.len() {
            return Err(Error::usage(format!(
                "sequence {i}: {} gold labels vs {} predicted",
                g.len(),
                p.len()
            )));
        }
        let gs = bio_spans(g);
        let ps = bio_spans(p);
        let tp = gs.intersection(&ps).count();
        c.true_positives += tp;
        c.false_positives += ps.len() - tp;
        c.false_negatives += gs.len() - tp;
    }
    Ok(c)
}

/// `(precision, recall, f1)`.
pub fn slot_f1<S: AsRef<str>>(gold: &[Vec<S>], pred: &[Vec<S>]) -> Result<(f64, f64, f64)> {
    let c = span_counts(gold, pred)?;
    Ok((c.precision(), c.recall(), c.f1()))
}

fn is_exact(g: &Example, p: &LabeledPrediction) -> bool {
    g.intent == p.intent && g.slots == p.slots
}

/// Overall and per-gold-domain exact accuracy.
pub fn exact_accuracy(
    gold: &[Example],
    pred: &[LabeledPrediction],
) -> Result<(f64, BTreeMap<String, f64>)> {
    check_aligned(gold, pred)?;
    let mut per: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    let mut hits = 0;
    for (g, p) in gold.iter().zip(pred) {
        let e = per.entry(g.domain.clone()).or_default();
        e.1 += 1;
        if is_exact(g, p) {
            e.0 += 1;
            hits += 1;
        }
    }
    let per = per.into_iter().map(|(d, (h, n))| (d, ratio(h, n))).collect();
    Ok((ratio(hits, gold.len()), per))
}

fn check_aligned(gold: &[Example], pred: &[LabeledPrediction]) -> Result<()> {
    if gold.len() != pred.len() {
        return Err(Error::usage(format!(
            "{} gold examples vs {} predictions",
            gold.len(),
            pred.len()
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub examples: usize,
    pub gold_spans: usize,
    pub predicted_spans: usize,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub intent_correct: usize,
    pub slots_all_correct: usize,
    pub exact_correct: usize,
    pub per_domain_examples: BTreeMap<String, usize>,
    pub per_domain_exact_correct: BTreeMap<String, usize>,
}

/// Evaluation summary; serialised as the JSON report.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub slot_f1: f64,
    pub slot_precision: f64,
    pub slot_recall: f64,
    pub intent_accuracy: f64,
    pub overall_exact: f64,
    /// Fraction of sentences whose every slot label is correct.
    pub slot_sentence_accuracy: f64,
    pub per_domain_exact: BTreeMap<String, f64>,
    pub counts: Counts,
}

impl MetricsReport {
    pub fn compute(gold: &[Example], pred: &[LabeledPrediction]) -> Result<Self> {
        check_aligned(gold, pred)?;
        let gs: Vec<&[String]> = gold.iter().map(|e| e.slots.as_slice()).collect();
        let ps: Vec<&[String]> = pred.iter().map(|p| p.slots.as_slice()).collect();
        let mut counts = Counts::default();
        for (g, p) in gs.iter().zip(&ps) {
            if g.len() != p.len() {
                return Err(Error::usage("slot sequence length mismatch"));
            }
        }
        let spans = span_counts(
            &gs.iter().map(|s| s.to_vec()).collect::<Vec<_>>(),
            &ps.iter().map(|s| s.to_vec()).collect::<Vec<_>>(),
        )?;
        counts.true_positives = spans.true_positives;
        counts.false_positives = spans.false_positives;
        counts.false_negatives = spans.false_negatives;
        counts.gold_spans = spans.true_positives + spans.false_negatives;
        counts.predicted_spans = spans.true_positives + spans.false_positives;
        counts.examples = gold.len();
        for (g, p) in gold.iter().zip(pred) {
            *counts.per_domain_examples.entry(g.domain.clone()).or_default() += 1;
            let hit = counts.per_domain_exact_correct.entry(g.domain.clone()).or_default();
            if g.intent == p.intent {
                counts.intent_correct += 1;
            }
            if g.slots == p.slots {
                counts.slots_all_correct += 1;
            }
            if is_exact(g, p) {
                counts.exact_correct += 1;
                *hit += 1;
            }
        }
        Ok(Self::from_counts(counts))
    }

    /// Derives every rate from raw counts, so reports over shards can be
    /// merged by summing counts first.
    pub fn from_counts(counts: Counts) -> Self {
        let spans = SpanCounts {
            true_positives: counts.true_positives,
            false_positives: counts.false_positives,
            false_negatives: counts.false_negatives,
        };
        let per_domain_exact = counts
            .per_domain_examples
            .iter()
            .map(|(d, &n)| {
                let h = counts.per_domain_exact_correct.get(d).copied().unwrap_or(0);
                (d.clone(), ratio(h, n))
            })
            .collect();
        Self {
            slot_f1: spans.f1(),
            slot_precision: spans.precision(),
            slot_recall: spans.recall(),
            intent_accuracy: ratio(counts.intent_correct, counts.examples),
            overall_exact: ratio(counts.exact_correct, counts.examples),
            slot_sentence_accuracy: ratio(counts.slots_all_correct, counts.examples),
            per_domain_exact,
            counts,
        }
    }

    pub fn merge(&self, other: &MetricsReport) -> MetricsReport {
        let (a, b) = (&self.counts, &other.counts);
        let mut c = Counts {
            examples: a.examples + b.examples,
            gold_spans: a.gold_spans + b.gold_spans,
            predicted_spans: a.predicted_spans + b.predicted_spans,
            true_positives: a.true_positives + b.true_positives,
            false_positives: a.false_positives + b.false_positives,
            false_negatives: a.false_negatives + b.false_negatives,
            intent_correct: a.intent_correct + b.intent_correct,
            slots_all_correct: a.slots_all_correct + b.slots_all_correct,
            exact_correct: a.exact_correct + b.exact_correct,
            per_domain_examples: a.per_domain_examples.clone(),
            per_domain_exact_correct: a.per_domain_exact_correct.clone(),
        };
        for (d, n) in &b.per_domain_examples {
            *c.per_domain_examples.entry(d.clone()).or_default() += n;
        }
        for (d, n) in &b.per_domain_exact_correct {
            *c.per_domain_exact_correct.entry(d.clone()).or_default() += n;
        }
        Self::from_counts(c)
    }

    /// Human-readable summary table.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<22}{:>10}", "metric", "value");
        for (name, v) in [
            ("overall exact", self.overall_exact),
            ("intent accuracy", self.intent_accuracy),
            ("slot f1", self.slot_f1),
            ("slot precision", self.slot_precision),
            ("slot recall", self.slot_recall),
        ] {
            let _ = writeln!(s, "{name:<22}{:>10.4}", v);
        }
        for (d, v) in &self.per_domain_exact {
            let _ = writeln!(s, "{:<22}{:>10.4}", format!("exact[{d}]"), v);
        }
        let _ = writeln!(s, "{:<22}{:>10}", "examples", self.counts.examples);
        s
    }
}
