//! Labels an unannotated corpus with a trained tagger and draws a
//! magnitude-preserving audit subset.

use serde::{Deserialize, Serialize};

use crate::corpus::{is_numeral, magnitude_audit_sample, Corpus, EntityLabel};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::tagger::tag_sentence;
use crate::tokenizer::Vocabulary;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationConfig {
    pub checkpoint: String,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default)]
    pub audit_n: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}

impl AnnotationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config(format!("threshold {} outside [0, 1]", self.threshold)));
        }
        Ok(())
    }
}

/// Replaces every sentence's labels with tagger output. A numeral keeps its
/// predicted label only when the winning probability reaches `threshold`;
/// anything else is `O`. Gold labels, if any, are ignored. Each sentence gets
/// per-token confidences (the max label probability).
pub fn annotate_corpus(model: &Model, vocab: &Vocabulary, raw: &Corpus, threshold: f64) -> Result<Corpus> {
    if threshold.is_nan() {
        return Err(Error::Config("threshold is NaN".into()));
    }
    let mut out = Vec::with_capacity(raw.len());
    for s in &raw.sentences {
        let tagged = tag_sentence(model, vocab, s)?;
        let conf = tagged.confidences();
        let mut s = s.clone();
        s.labels = s
            .tokens
            .iter()
            .zip(tagged.labels.iter().zip(&conf))
            .map(|(t, (&l, &c))| {
                if is_numeral(t) && c >= threshold {
                    l
                } else {
                    EntityLabel::Other
                }
            })
            .collect();
        // mask fields must stay consistent with the new labels
        if let Some(mi) = s.mask_index {
            if s.labels[mi].is_entity() {
                s.mask_entity = Some(s.labels[mi]);
            } else {
                s.mask_index = None;
                s.mask_entity = None;
                s.mask_answer = None;
            }
        }
        s.confidences = Some(conf);
        out.push(s);
    }
    let provenance = format!("{}|annotated:tau={threshold}", raw.provenance);
    Ok(Corpus::new(out, provenance))
}

pub fn make_audit_subset(annotated: &Corpus, n: usize, seed: u64) -> Result<Corpus> {
    magnitude_audit_sample(annotated, n, seed)
}
