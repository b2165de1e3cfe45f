//! Inference over example sets: routing, prediction and metric reports.

use crate::corpus::{Example, FilterLabelSet, Vocab};
use crate::error::{Error, Result};
use crate::metrics::{LabeledPrediction, MetricsReport};
use crate::model::{Encoded, JointModel};
use crate::router::{route, DomainClassifier, Routing};
use crate::training::Checkpoint;

/// Predicted labels for each example, in input order.
pub fn predict_examples(
    model: &JointModel,
    vocab: &Vocab,
    filter_labels: &FilterLabelSet,
    examples: &[Example],
    routing: Routing,
    classifier: Option<&DomainClassifier>,
) -> Result<Vec<LabeledPrediction>> {
    examples
        .iter()
        .map(|ex| {
            ex.validate()?;
            let domain = route(ex, routing, classifier, vocab.domains())?;
            let did = vocab.domain_id(&domain).ok_or_else(|| Error::UnknownDomain(domain.clone()))?;
            let enc = Encoded::new(ex, vocab, filter_labels);
            let p = model.predict(&enc, did)?;
            Ok(LabeledPrediction {
                intent: vocab.intents()[p.intent].clone(),
                slots: p.slots.iter().map(|&s| vocab.slots()[s].clone()).collect(),
                routed_domain: domain,
            })
        })
        .collect()
}

pub fn evaluate_examples(
    model: &JointModel,
    vocab: &Vocab,
    filter_labels: &FilterLabelSet,
    examples: &[Example],
    routing: Routing,
    classifier: Option<&DomainClassifier>,
) -> Result<MetricsReport> {
    let preds = predict_examples(model, vocab, filter_labels, examples, routing, classifier)?;
    MetricsReport::compute(examples, &preds)
}

impl Checkpoint {
    pub fn predict(
        &self,
        examples: &[Example],
        routing: Routing,
        classifier: Option<&DomainClassifier>,
    ) -> Result<Vec<LabeledPrediction>> {
        predict_examples(&self.model, &self.vocab, &self.filter_labels, examples, routing, classifier)
    }

    pub fn evaluate(
        &self,
        examples: &[Example],
        routing: Routing,
        classifier: Option<&DomainClassifier>,
    ) -> Result<MetricsReport> {
        evaluate_examples(&self.model, &self.vocab, &self.filter_labels, examples, routing, classifier)
    }
}
