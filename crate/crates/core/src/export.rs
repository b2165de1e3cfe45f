//! Pooled sentence-vector export, one `domain<TAB>tag<TAB>v1,v2,...` record
//! per line with `tag` in {global, local}.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::corpus::Example;
use crate::error::{Error, Result};
use crate::model::Encoded;
use crate::router::{route, DomainClassifier, Routing};
use crate::training::Checkpoint;

#[derive(Clone, Debug, PartialEq)]
pub struct VectorRecord {
    pub domain: String,
    pub tag: VectorTag,
    pub values: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum VectorTag {
    Global,
    Local,
}

impl VectorTag {
    pub fn as_str(self) -> &'static str {
        match self {
            VectorTag::Global => "global",
            VectorTag::Local => "local",
        }
    }
}

/// `c^g` and `c^l` for every example, labelled with its gold domain.
pub fn sentence_vectors(
    ckpt: &Checkpoint,
    examples: &[Example],
    routing: Routing,
    classifier: Option<&DomainClassifier>,
) -> Result<Vec<VectorRecord>> {
    let mut out = Vec::with_capacity(2 * examples.len());
    for ex in examples {
        ex.validate()?;
        let d = route(ex, routing, classifier, ckpt.vocab.domains())?;
        let did = ckpt.vocab.domain_id(&d).ok_or(Error::UnknownDomain(d))?;
        let enc = Encoded::new(ex, &ckpt.vocab, &ckpt.filter_labels);
        let (g, l) = ckpt.model.sentence_vectors(&enc, did)?;
        out.push(VectorRecord { domain: ex.domain.clone(), tag: VectorTag::Global, values: g });
        out.push(VectorRecord { domain: ex.domain.clone(), tag: VectorTag::Local, values: l });
    }
    Ok(out)
}

pub fn format_records(records: &[VectorRecord]) -> String {
    let mut s = String::new();
    for r in records {
        let vals: Vec<String> = r.values.iter().map(|v| format!("{v}")).collect();
        let _ = writeln!(s, "{}\t{}\t{}", r.domain, r.tag.as_str(), vals.join(","));
    }
    s
}

pub fn parse_records(text: &str) -> Result<Vec<VectorRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let bad = |m: &str| Error::Parse { path: "<vectors>".into(), line: i + 1, message: m.into() };
            let mut parts = line.split('\t');
            let (Some(domain), Some(tag), Some(vals), None) = (parts.next(), parts.next(), parts.next(), parts.next())
            else {
                return Err(bad("expected 3 tab-separated fields"));
            };
            let tag = match tag {
                "global" => VectorTag::Global,
                "local" => VectorTag::Local,
                _ => return Err(bad("tag must be global or local")),
            };
            let values = vals
                .split(',')
                .map(|v| v.parse::<f64>().map_err(|_| bad("bad float")))
                .collect::<Result<Vec<_>>>()?;
            Ok(VectorRecord { domain: domain.to_string(), tag, values })
        })
        .collect()
}

pub fn export_vectors(
    ckpt: &Checkpoint,
    examples: &[Example],
    routing: Routing,
    classifier: Option<&DomainClassifier>,
    out_path: impl AsRef<Path>,
) -> Result<usize> {
    let records = sentence_vectors(ckpt, examples, routing, classifier)?;
    std::fs::write(out_path, format_records(&records))?;
    Ok(records.len())
}

/// Mean Euclidean distance between per-domain centroids of the vectors
/// carrying `tag`. `None` with fewer than two domains.
pub fn centroid_separation(records: &[VectorRecord], tag: VectorTag) -> Option<f64> {
    let mut sums: BTreeMap<&str, (Vec<f64>, usize)> = BTreeMap::new();
    for r in records.iter().filter(|r| r.tag == tag) {
        let e = sums
            .entry(r.domain.as_str())
            .or_insert_with(|| (vec![0.0; r.values.len()], 0));
        e.0.iter_mut().zip(&r.values).for_each(|(a, b)| *a += b);
        e.1 += 1;
    }
    let cents: Vec<Vec<f64>> = sums
        .into_values()
        .map(|(s, n)| s.into_iter().map(|v| v / n as f64).collect())
        .collect();
    if cents.len() < 2 {
        return None;
    }
    let mut total = 0.0;
    let mut pairs = 0;
    for i in 0..cents.len() {
        for j in i + 1..cents.len() {
            total += cents[i]
                .iter()
                .zip(&cents[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            pairs += 1;
        }
    }
    Some(total / pairs as f64)
}
