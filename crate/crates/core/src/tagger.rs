//! Number entity recognition: a bias-free `K x d` projection of each
//! contextual output followed by a softmax over the seven labels, trained with
//! categorical cross-entropy summed over token positions.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{is_numeral, Corpus, EntityLabel, Sentence};
use crate::encoder::INIT_STD;
use crate::error::{Error, Result};
use crate::model::{Head, Model};
use crate::nn::{cross_entropy, softmax_ce_grad, softmax_in_place, Matrix, Param};
use crate::tokenizer::{encode, EncodedSequence, TokenRef, Vocabulary};
use crate::train::{train_loop, TrainConfig, TrainLog};

pub const DEFAULT_EPOCHS: usize = 20;
pub const DEFAULT_LR: f64 = 2e-5;
pub const DEFAULT_BATCH: usize = 32;

#[derive(Clone, Debug, PartialEq)]
pub struct TagHead {
    /// `K x d`, rows `w_k`.
    pub w: Param,
}

impl TagHead {
    pub fn new<R: Rng>(d: usize, rng: &mut R) -> Self {
        TagHead {
            w: Param::truncated_normal(&[EntityLabel::COUNT, d], INIT_STD, rng),
        }
    }

    /// `T x K` logits `W o_i`.
    pub fn logits(&self, hidden: &Matrix) -> Matrix {
        crate::nn::linear(hidden, &self.w, None).expect("tag head width matches encoder")
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate() {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

pub fn tag_logits(model: &Model, seq: &EncodedSequence) -> Result<Matrix> {
    let (out, _) = model.encoder.forward(seq, None, None)?;
    Ok(model.tag_head()?.logits(&out.hidden))
}

/// Tagger output for one sentence, aligned to its context tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct Tagged {
    pub labels: Vec<EntityLabel>,
    /// Label distribution per token; `None` for tokens lost to truncation.
    pub probs: Vec<Option<[f64; EntityLabel::COUNT]>>,
}

impl Tagged {
    /// Max probability per token (0 for truncated tokens).
    pub fn confidences(&self) -> Vec<f64> {
        self.probs
            .iter()
            .map(|p| p.map_or(0.0, |p| p.iter().copied().fold(0.0, f64::max)))
            .collect()
    }
}

/// Runs the tagger over a sentence. Only numeral tokens can receive an entity
/// label: non-numerals and truncated tokens are `O`.
pub fn tag_sentence(model: &Model, vocab: &Vocabulary, sentence: &Sentence) -> Result<Tagged> {
    let seq = encode(sentence, vocab, model.encoder.config.max_len, None)?;
    let logits = tag_logits(model, &seq.trimmed())?;
    let n = sentence.tokens.len();
    let mut labels = vec![EntityLabel::Other; n];
    let mut probs = vec![None; n];
    for (pos, a) in seq.alignment.iter().enumerate() {
        let Some(TokenRef::Context(i)) = *a else { continue };
        let mut p = [0.0; EntityLabel::COUNT];
        p.copy_from_slice(logits.row(pos));
        softmax_in_place(&mut p);
        probs[i] = Some(p);
        if is_numeral(&sentence.tokens[i]) {
            labels[i] = EntityLabel::from_code(argmax(&p)).unwrap();
        }
    }
    Ok(Tagged { labels, probs })
}

/// Loss and (optionally) gradients for one sentence. Every question and
/// context token contributes; specials and padding never do.
pub fn tagger_loss(
    model: &mut Model,
    seq: &EncodedSequence,
    sentence: &Sentence,
    grad_scale: Option<f64>,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<f64> {
    let (out, cache) = model.encoder.forward(seq, None, rng)?;
    let head = model.tag_head()?;
    let logits = head.logits(&out.hidden);
    let mut loss = 0.0;
    let mut g_logits = Matrix::zeros(logits.rows, logits.cols);
    for (pos, a) in seq.alignment.iter().enumerate() {
        let target = match a {
            Some(TokenRef::Context(i)) => sentence.labels[*i],
            Some(TokenRef::Question(_)) => EntityLabel::Other,
            None => continue,
        };
        let mut p = logits.row(pos).to_vec();
        softmax_in_place(&mut p);
        loss += cross_entropy(&p, target.code())?;
        if let Some(s) = grad_scale {
            g_logits.row_mut(pos).copy_from_slice(&softmax_ce_grad(&p, target.code(), s));
        }
    }
    if grad_scale.is_some() {
        let Head::Tag(head) = &mut model.head else { unreachable!() };
        let g_hidden = crate::nn::linear_backward(&out.hidden, &mut head.w, None, &g_logits)?;
        model.encoder.backward(&cache, &g_hidden)?;
    }
    Ok(loss)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

/// Percent-scale precision, recall and their harmonic mean (0 when undefined).
pub fn prf(tp: usize, fp: usize, fn_: usize) -> Scores {
    let pct = |num: usize, den: usize| if den == 0 { 0.0 } else { 100.0 * num as f64 / den as f64 };
    let precision = pct(tp, tp + fp);
    let recall = pct(tp, tp + fn_);
    Scores {
        precision,
        recall,
        f1: f1_score(precision, recall),
        support: tp + fn_,
    }
}

/// `2PR / (P + R)`, or 0 when `P + R = 0`.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

/// Token-level confusion counts per label code.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: [usize; EntityLabel::COUNT],
    pub fp: [usize; EntityLabel::COUNT],
    pub fn_: [usize; EntityLabel::COUNT],
}

impl Confusion {
    pub fn add(&mut self, gold: EntityLabel, pred: EntityLabel) {
        if gold == pred {
            if gold.is_entity() {
                self.tp[gold.code()] += 1;
            }
            return;
        }
        if pred.is_entity() {
            self.fp[pred.code()] += 1;
        }
        if gold.is_entity() {
            self.fn_[gold.code()] += 1;
        }
    }

    pub fn add_sentence(&mut self, gold: &[EntityLabel], pred: &[EntityLabel]) {
        for (g, p) in gold.iter().zip(pred) {
            self.add(*g, *p);
        }
    }

    pub fn metrics(&self) -> EntityMetrics {
        let per_entity = EntityLabel::ENTITIES
            .iter()
            .map(|e| {
                let c = e.code();
                (*e, prf(self.tp[c], self.fp[c], self.fn_[c]))
            })
            .collect();
        let sum = |a: &[usize; 7]| a[1..].iter().sum::<usize>();
        EntityMetrics {
            per_entity,
            total: prf(sum(&self.tp), sum(&self.fp), sum(&self.fn_)),
            confusion: self.clone(),
        }
    }
}

/// Per-entity and micro-averaged scores over non-`O` tokens.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntityMetrics {
    pub per_entity: BTreeMap<EntityLabel, Scores>,
    pub total: Scores,
    pub confusion: Confusion,
}

impl EntityMetrics {
    pub fn micro_f1(&self) -> f64 {
        self.total.f1
    }

    pub fn f1(&self, e: EntityLabel) -> f64 {
        self.per_entity.get(&e).map_or(0.0, |s| s.f1)
    }
}

pub fn evaluate_tagger(model: &Model, vocab: &Vocabulary, data: &Corpus) -> Result<EntityMetrics> {
    let mut c = Confusion::default();
    for s in &data.sentences {
        let tagged = tag_sentence(model, vocab, s)?;
        c.add_sentence(&s.labels, &tagged.labels);
    }
    Ok(c.metrics())
}

/// The first `n_per_class` sentences (corpus order) containing each listed
/// class; a sentence qualifying for several classes is kept once.
pub fn few_shot_subset(train: &Corpus, n_per_class: usize, classes: &[EntityLabel]) -> Result<Corpus> {
    let mut keep = vec![false; train.len()];
    for &class in classes {
        if !class.is_entity() {
            return Err(Error::invalid("few-shot classes must be number entities"));
        }
        let hits: Vec<usize> = train
            .sentences
            .iter()
            .enumerate()
            .filter(|(_, s)| s.has_label(class))
            .map(|(i, _)| i)
            .take(n_per_class)
            .collect();
        if hits.is_empty() {
            return Err(Error::invalid(format!("class {class} has no training instances")));
        }
        for i in hits {
            keep[i] = true;
        }
    }
    let idx: Vec<usize> = (0..train.len()).filter(|&i| keep[i]).collect();
    let names: Vec<&str> = classes.iter().map(|c| c.as_str()).collect();
    Ok(train.subset(
        &idx,
        format!("{}|few-shot:{}x{}", train.provenance, n_per_class, names.join("+")),
    ))
}

/// Trains the tag head and backbone; keeps the epoch with the best validation
/// micro-F1.
pub fn train_tagger(
    model: &mut Model,
    vocab: &Vocabulary,
    train: &Corpus,
    val: &Corpus,
    cfg: &TrainConfig,
) -> Result<(Model, TrainLog)> {
    model.tag_head()?;
    let max_len = model.encoder.config.max_len;
    let encoded: Vec<EncodedSequence> = train
        .sentences
        .iter()
        .map(|s| encode(s, vocab, max_len, None).map(|e| e.trimmed()))
        .collect::<Result<_>>()?;
    train_loop(
        model,
        train.len(),
        cfg,
        |m, i, scale, rng| tagger_loss(m, &encoded[i], &train.sentences[i], Some(scale), Some(rng)),
        |m| {
            if val.is_empty() {
                Ok(None)
            } else {
                evaluate_tagger(m, vocab, val).map(|r| Some(r.micro_f1()))
            }
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f1_consistency_examples() {
        assert!((f1_score(98.61, 98.99) - 98.80).abs() < 0.005);
        assert!((f1_score(75.00, 7.14) - 13.04).abs() < 0.005);
        assert_eq!(f1_score(0.0, 0.0), 0.0);
    }

    #[test]
    fn confusion_counting() {
        use EntityLabel::*;
        let mut c = Confusion::default();
        c.add_sentence(&[Other, Year, Count, Other], &[Year, Year, Other, Other]);
        assert_eq!(c.tp[Year.code()], 1);
        assert_eq!(c.fp[Year.code()], 1);
        assert_eq!(c.fn_[Count.code()], 1);
        let m = c.metrics();
        assert_eq!(m.per_entity[&Year].precision, 50.0);
        assert_eq!(m.per_entity[&Year].recall, 100.0);
        assert_eq!(m.total.support, 2);
        assert!((m.total.f1 - f1_score(50.0, 50.0)).abs() < 1e-12);
    }

    #[test]
    fn perfect_predictions() {
        use EntityLabel::*;
        let gold = [Year, Count, Percentage, Age, Size, Date, Other];
        let mut c = Confusion::default();
        c.add_sentence(&gold, &gold);
        let m = c.metrics();
        for s in m.per_entity.values().chain([&m.total]) {
            assert_eq!((s.precision, s.recall, s.f1), (100.0, 100.0, 100.0));
        }
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.0; 7]), 0);
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
    }
}
