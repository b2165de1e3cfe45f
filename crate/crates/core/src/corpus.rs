//! Annotated utterances, their on-disk JSON Lines form, vocabularies, and
//! the label-level utilities the model and scorer build on.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const PAD: usize = 0;
pub const UNK: usize = 1;

/// One utterance with its intent, BIO slot labels, domain and dependency
/// heads (1-indexed, 0 marks the root).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub tokens: Vec<String>,
    pub slots: Vec<String>,
    pub intent: String,
    pub domain: String,
    pub heads: Vec<usize>,
}

fn is_bio(label: &str) -> bool {
    label == "O"
        || label
            .strip_prefix("B-")
            .or_else(|| label.strip_prefix("I-"))
            .is_some_and(|t| !t.is_empty())
}

impl Example {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field, message: String| Err(Error::InvalidExample { field, message });
        let n = self.tokens.len();
        if n == 0 {
            return bad("tokens", "utterance has no tokens".into());
        }
        if self.slots.len() != n {
            return bad("slots", format!("{} labels for {} tokens", self.slots.len(), n));
        }
        if self.heads.len() != n {
            return bad("heads", format!("{} heads for {} tokens", self.heads.len(), n));
        }
        if let Some(l) = self.slots.iter().find(|l| !is_bio(l)) {
            return bad("slots", format!("`{l}` is not a BIO label"));
        }
        let roots = self.heads.iter().filter(|&&h| h == 0).count();
        if roots != 1 {
            return bad("heads", format!("expected exactly one root, found {roots}"));
        }
        for (i, &h) in self.heads.iter().enumerate() {
            if h > n {
                return bad("heads", format!("head {h} of token {} out of range", i + 1));
            }
            if h == i + 1 {
                return bad("heads", format!("token {} is its own head", i + 1));
            }
        }
        if self.intent.is_empty() {
            return bad("intent", "empty intent".into());
        }
        if self.domain.is_empty() {
            return bad("domain", "empty domain".into());
        }
        Ok(())
    }
}

pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Vec<Example>> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let ex: Example = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        ex.validate().map_err(|e| parse_err(e.to_string()))?;
        out.push(ex);
    }
    Ok(out)
}

pub fn write_jsonl(path: impl AsRef<Path>, examples: &[Example]) -> Result<()> {
    let mut f = std::io::BufWriter::new(File::create(path)?);
    for ex in examples {
        serde_json::to_writer(&mut f, ex)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

/// Train/dev/test splits, used as loaded.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CorpusSplit {
    pub train: Vec<Example>,
    pub dev: Vec<Example>,
    pub test: Vec<Example>,
}

impl CorpusSplit {
    /// Reads `train.jsonl`, `dev.jsonl` and `test.jsonl` from `dir`.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        Ok(Self {
            train: load_jsonl(dir.join("train.jsonl"))?,
            dev: load_jsonl(dir.join("dev.jsonl"))?,
            test: load_jsonl(dir.join("test.jsonl"))?,
        })
    }

    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        write_jsonl(dir.join("train.jsonl"), &self.train)?;
        write_jsonl(dir.join("dev.jsonl"), &self.dev)?;
        write_jsonl(dir.join("test.jsonl"), &self.test)?;
        Ok(())
    }
}

/// Token, intent, slot and domain inventories.
///
/// Token ids 0 and 1 are reserved for padding and unknown tokens. All
/// inventories are sorted so ids depend only on the set of training labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "VocabRepr", into = "VocabRepr")]
pub struct Vocab {
    tokens: Vec<String>,
    intents: Vec<String>,
    slots: Vec<String>,
    domains: Vec<String>,
    token_ids: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    tokens: Vec<String>,
    intents: Vec<String>,
    slots: Vec<String>,
    domains: Vec<String>,
}

impl From<VocabRepr> for Vocab {
    fn from(r: VocabRepr) -> Self {
        let token_ids = r.tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self {
            tokens: r.tokens,
            intents: r.intents,
            slots: r.slots,
            domains: r.domains,
            token_ids,
        }
    }
}

impl From<Vocab> for VocabRepr {
    fn from(v: Vocab) -> Self {
        Self {
            tokens: v.tokens,
            intents: v.intents,
            slots: v.slots,
            domains: v.domains,
        }
    }
}

fn sorted_unique<'a>(items: impl Iterator<Item = &'a String>) -> Vec<String> {
    items.collect::<BTreeSet<_>>().into_iter().cloned().collect()
}

impl Vocab {
    pub fn build(train: &[Example]) -> Self {
        let mut tokens = vec!["<pad>".to_string(), "<unk>".to_string()];
        tokens.extend(sorted_unique(train.iter().flat_map(|e| &e.tokens)));
        VocabRepr {
            tokens,
            intents: sorted_unique(train.iter().map(|e| &e.intent)),
            slots: sorted_unique(train.iter().flat_map(|e| &e.slots)),
            domains: sorted_unique(train.iter().map(|e| &e.domain)),
        }
        .into()
    }

    pub fn num_tokens(&self) -> usize {
        self.tokens.len()
    }

    pub fn token_id(&self, token: &str) -> usize {
        self.token_ids.get(token).copied().unwrap_or(UNK)
    }

    pub fn intents(&self) -> &[String] {
        &self.intents
    }

    pub fn slots(&self) -> &[String] {
        &self.slots
    }

    pub fn domains(&self) -> &[String] {
        &self.domains
    }

    pub fn intent_id(&self, intent: &str) -> Option<usize> {
        self.intents.iter().position(|i| i == intent)
    }

    pub fn slot_id(&self, slot: &str) -> Option<usize> {
        self.slots.iter().position(|s| s == slot)
    }

    pub fn domain_id(&self, domain: &str) -> Option<usize> {
        self.domains.iter().position(|d| d == domain)
    }
}

/// Slot labels present in the training data of every domain.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterLabelSet(pub BTreeSet<String>);

impl FilterLabelSet {
    pub fn contains(&self, label: &str) -> bool {
        self.0.contains(label)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn derive_filter_labels(train: &[Example], domains: &[String]) -> Result<FilterLabelSet> {
    let mut per_domain: BTreeMap<&str, BTreeSet<&str>> =
        domains.iter().map(|d| (d.as_str(), BTreeSet::new())).collect();
    for ex in train {
        if let Some(set) = per_domain.get_mut(ex.domain.as_str()) {
            set.extend(ex.slots.iter().map(String::as_str));
        }
    }
    let mut shared: Option<BTreeSet<&str>> = None;
    for (d, labels) in &per_domain {
        if labels.is_empty() {
            return Err(Error::config(format!("domain `{d}` has no training examples")));
        }
        shared = Some(match shared {
            None => labels.clone(),
            Some(s) => s.intersection(labels).copied().collect(),
        });
    }
    Ok(FilterLabelSet(
        shared.unwrap_or_default().into_iter().map(str::to_string).collect(),
    ))
}

/// 1 where the gold slot label is domain-general, 0 elsewhere.
pub fn gold_filter_vector(ex: &Example, fl: &FilterLabelSet) -> Vec<u8> {
    ex.slots.iter().map(|s| u8::from(fl.contains(s))).collect()
}

/// Undirected dependency adjacency: `A[i][h-1] = A[h-1][i] = 1` for every
/// non-root token `i` with head `h`.
pub fn dependency_adjacency(heads: &[usize]) -> Tensor {
    let n = heads.len();
    let mut a = Tensor::zeros(&[n, n]);
    let d = a.data_mut();
    for (i, &h) in heads.iter().enumerate() {
        if h > 0 {
            d[i * n + (h - 1)] = 1.0;
            d[(h - 1) * n + i] = 1.0;
        }
    }
    a
}

/// `Ã = A + I`.
pub fn adjacency_from_heads(heads: &[usize]) -> Tensor {
    let n = heads.len();
    let mut a = dependency_adjacency(heads);
    let d = a.data_mut();
    for i in 0..n {
        d[i * n + i] = 1.0;
    }
    a
}

/// A labelled slot span over inclusive token positions.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Span {
    pub label: String,
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(label: impl Into<String>, start: usize, end: usize) -> Self {
        Self {
            label: label.into(),
            start,
            end,
        }
    }
}

/// CoNLL-style chunk extraction. `I-X` not preceded by `B-X`/`I-X` opens a
/// new span, as conlleval does.
pub fn bio_spans<S: AsRef<str>>(slots: &[S]) -> BTreeSet<Span> {
    let mut spans = BTreeSet::new();
    let mut open: Option<(&str, usize)> = None;
    for (i, s) in slots.iter().enumerate() {
        let s = s.as_ref();
        let (begins, ty) = if let Some(t) = s.strip_prefix("B-") {
            (true, Some(t))
        } else if let Some(t) = s.strip_prefix("I-") {
            (false, Some(t))
        } else {
            (false, None)
        };
        let continues = matches!((open, ty), (Some((cur, _)), Some(t)) if !begins && cur == t);
        if continues {
            continue;
        }
        if let Some((label, start)) = open.take() {
            spans.insert(Span::new(label, start, i - 1));
        }
        if let Some(t) = ty {
            open = Some((t, i));
        }
    }
    if let Some((label, start)) = open {
        spans.insert(Span::new(label, start, slots.len() - 1));
    }
    spans
}

/// Canonical BIO labelling of non-overlapping spans over `n` tokens.
pub fn spans_to_bio(spans: &BTreeSet<Span>, n: usize) -> Vec<String> {
    let mut out = vec!["O".to_string(); n];
    for s in spans {
        out[s.start] = format!("B-{}", s.label);
        for slot in out.iter_mut().take(s.end + 1).skip(s.start + 1) {
            *slot = format!("I-{}", s.label);
        }
    }
    out
}

/// Keeps every non-target example and a seeded uniform sample of
/// `ceil(ratio * count)` target-domain examples, preserving input order.
pub fn subsample_ratio(
    train: &[Example],
    target_domain: &str,
    ratio: f64,
    seed: u64,
) -> Result<Vec<Example>> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::config(format!("ratio {ratio} outside (0, 1]")));
    }
    let target: Vec<usize> = (0..train.len())
        .filter(|&i| train[i].domain == target_domain)
        .collect();
    if target.is_empty() {
        return Err(Error::UnknownDomain(target_domain.to_string()));
    }
    let keep_n = ((ratio * target.len() as f64).ceil() as usize).min(target.len());
    let mut shuffled = target.clone();
    Rng::seed(seed).shuffle(&mut shuffled);
    let keep: BTreeSet<usize> = shuffled[..keep_n].iter().copied().collect();
    Ok(train
        .iter()
        .enumerate()
        .filter(|(i, e)| e.domain != target_domain || keep.contains(i))
        .map(|(_, e)| e.clone())
        .collect())
}
