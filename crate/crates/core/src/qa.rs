//! Span-prediction question answering. The baseline sees tokens only; the
//! joint mode also sums a trainable entity embedding into every position.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, EntityLabel, Sentence};
use crate::encoder::{entity_inputs, INIT_STD};
use crate::error::{Error, Result};
use crate::model::{Head, Model, Task};
use crate::nn::{cross_entropy, softmax_ce_grad, softmax_in_place, Matrix, Param};
use crate::tagger::tag_sentence;
use crate::tokenizer::{encode, EncodedSequence, Vocabulary};
use crate::train::{train_loop, TrainConfig, TrainLog};

pub const DEFAULT_EPOCHS: usize = 2;
pub const DEFAULT_LR: f64 = 2e-5;
pub const DEFAULT_BATCH: usize = 32;
pub const DEFAULT_MAX_SPAN_LEN: usize = 8;
/// Parameter prefix of the entity embedding table.
pub const ENTITY_TABLE: &str = "embeddings.entity";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QaMode {
    Baseline,
    Jem,
}

impl QaMode {
    pub fn as_str(self) -> &'static str {
        match self {
            QaMode::Baseline => "baseline",
            QaMode::Jem => "jem",
        }
    }
}

impl std::str::FromStr for QaMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(QaMode::Baseline),
            "jem" => Ok(QaMode::Jem),
            _ => Err(Error::invalid(format!("unknown QA mode `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpanHeads {
    pub start: Param,
    pub end: Param,
}

impl SpanHeads {
    pub fn new<R: Rng>(d: usize, rng: &mut R) -> Self {
        SpanHeads {
            start: Param::truncated_normal(&[1, d], INIT_STD, rng),
            end: Param::truncated_normal(&[1, d], INIT_STD, rng),
        }
    }
}

/// Start and end distributions over the context tokens that survived encoding
/// (index `i` is context token `i`).
#[derive(Clone, Debug, PartialEq)]
pub struct SpanProbs {
    pub start: Vec<f64>,
    pub end: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn qa_mode(model: &Model) -> Result<QaMode> {
    match model.task {
        Task::Qa { mode } => Ok(mode),
        _ => Err(Error::invalid("model is not a QA model")),
    }
}

/// Context positions plus start/end logits at those positions.
fn span_logits(heads: &SpanHeads, seq: &EncodedSequence, hidden: &Matrix) -> Result<(Vec<usize>, Vec<f64>, Vec<f64>)> {
    if !seq.has_pair() {
        return Err(Error::invalid("QA input has no question segment"));
    }
    let ctx = seq.context_positions();
    if ctx.is_empty() {
        return Err(Error::invalid("QA input has no context segment"));
    }
    let s = ctx.iter().map(|&p| dot(heads.start.row(0), hidden.row(p))).collect();
    let e = ctx.iter().map(|&p| dot(heads.end.row(0), hidden.row(p))).collect();
    Ok((ctx, s, e))
}

/// Forward pass for one encoded question/context pair. `entities` is only
/// read in joint mode.
pub fn qa_forward(model: &Model, seq: &EncodedSequence, entities: Option<&[EntityLabel]>) -> Result<SpanProbs> {
    let entities = match qa_mode(model)? {
        QaMode::Baseline => None,
        QaMode::Jem => Some(entities.ok_or_else(|| Error::invalid("joint mode needs entity inputs"))?),
    };
    let (out, _) = model.encoder.forward(seq, entities, None)?;
    let (_, mut start, mut end) = span_logits(model.span_heads()?, seq, &out.hidden)?;
    softmax_in_place(&mut start);
    softmax_in_place(&mut end);
    Ok(SpanProbs { start, end })
}

/// Best pair `i <= j < i + max_span_len` by `start[i] * end[j]`; ties go to
/// the smallest `i`, then the smallest `j`.
pub fn select_span(start: &[f64], end: &[f64], max_span_len: usize) -> (usize, usize) {
    let n = start.len().min(end.len());
    let mut best = (0, 0);
    let mut best_score = f64::NEG_INFINITY;
    for i in 0..n {
        for j in i..n.min(i + max_span_len.max(1)) {
            let score = start[i] * end[j];
            if score > best_score {
                best_score = score;
                best = (i, j);
            }
        }
    }
    best
}

/// Where joint-mode entity inputs come from at evaluation time.
#[derive(Clone, Copy, Debug)]
pub enum EntitySource<'a> {
    Gold,
    /// Labels predicted by a tagger that shares the vocabulary.
    Tagger(&'a Model),
}

/// Per-position entity inputs for `seq`. Question tokens and specials are `O`.
pub fn qa_entities(
    seq: &EncodedSequence,
    sentence: &Sentence,
    source: EntitySource,
    vocab: &Vocabulary,
) -> Result<Vec<EntityLabel>> {
    match source {
        EntitySource::Gold => Ok(entity_inputs(seq, &sentence.labels)),
        EntitySource::Tagger(tagger) => {
            let mut plain = sentence.clone();
            plain.question = None;
            plain.answer_span = None;
            let tagged = tag_sentence(tagger, vocab, &plain)?;
            Ok(entity_inputs(seq, &tagged.labels))
        }
    }
}

/// Mean of the start and end cross-entropies for one example.
pub fn qa_loss(
    model: &mut Model,
    seq: &EncodedSequence,
    entities: Option<&[EntityLabel]>,
    answer: (usize, usize),
    grad_scale: Option<f64>,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<f64> {
    let entities = match qa_mode(model)? {
        QaMode::Baseline => None,
        QaMode::Jem => entities,
    };
    let (out, cache) = model.encoder.forward(seq, entities, rng)?;
    let (ctx, mut ps, mut pe) = span_logits(model.span_heads()?, seq, &out.hidden)?;
    if answer.1 >= ctx.len() || answer.0 > answer.1 {
        return Err(Error::invalid("answer span outside the encoded context"));
    }
    softmax_in_place(&mut ps);
    softmax_in_place(&mut pe);
    let loss = 0.5 * (cross_entropy(&ps, answer.0)? + cross_entropy(&pe, answer.1)?);
    if let Some(scale) = grad_scale {
        let gs = softmax_ce_grad(&ps, answer.0, 0.5 * scale);
        let ge = softmax_ce_grad(&pe, answer.1, 0.5 * scale);
        let d = out.hidden.cols;
        let Head::Span(heads) = &mut model.head else { unreachable!() };
        let mut g_hidden = Matrix::zeros(out.hidden.rows, d);
        for (k, &p) in ctx.iter().enumerate() {
            let o = out.hidden.row(p);
            let row = g_hidden.row_mut(p);
            for j in 0..d {
                row[j] = gs[k] * heads.start.value[j] + ge[k] * heads.end.value[j];
            }
            let gsr = heads.start.grad_row_mut(0);
            for j in 0..d {
                gsr[j] += gs[k] * o[j];
            }
            let ger = heads.end.grad_row_mut(0);
            for j in 0..d {
                ger[j] += ge[k] * o[j];
            }
        }
        model.encoder.backward(&cache, &g_hidden)?;
    }
    Ok(loss)
}

/// Bag-of-tokens F1 between two token spans, in `[0, 1]`.
pub fn token_f1(pred: &[String], gold: &[String]) -> f64 {
    let mut counts: HashMap<&str, i64> = HashMap::new();
    for t in gold {
        *counts.entry(t).or_default() += 1;
    }
    let mut common = 0;
    for t in pred {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let p = common as f64 / pred.len() as f64;
    let r = common as f64 / gold.len() as f64;
    2.0 * p * r / (p + r)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct QaMetrics {
    pub exact_match: f64,
    pub f1: f64,
    pub n: usize,
}

fn answer_of(s: &Sentence) -> Result<(usize, usize)> {
    if s.question.is_none() {
        return Err(Error::invalid(format!("sentence `{}` has no question", s.id)));
    }
    s.answer_span
        .ok_or_else(|| Error::invalid(format!("sentence `{}` has no answer_span", s.id)))
}

/// Predicted span (context token indices) for one sentence.
pub fn predict_span(
    model: &Model,
    vocab: &Vocabulary,
    sentence: &Sentence,
    source: EntitySource,
    max_span_len: usize,
) -> Result<(usize, usize)> {
    let seq = encode(sentence, vocab, model.encoder.config.max_len, None)?.trimmed();
    let ents = match qa_mode(model)? {
        QaMode::Jem => Some(qa_entities(&seq, sentence, source, vocab)?),
        QaMode::Baseline => None,
    };
    let probs = qa_forward(model, &seq, ents.as_deref())?;
    Ok(select_span(&probs.start, &probs.end, max_span_len))
}

/// Exact match and token-overlap F1 in percent, averaged over examples.
pub fn evaluate_qa(model: &Model, vocab: &Vocabulary, data: &Corpus, source: EntitySource) -> Result<QaMetrics> {
    let (mut em, mut f1) = (0.0, 0.0);
    for s in &data.sentences {
        let gold = answer_of(s)?;
        let (i, j) = predict_span(model, vocab, s, source, DEFAULT_MAX_SPAN_LEN)?;
        let pred = &s.tokens[i..=j];
        let gold = &s.tokens[gold.0..=gold.1];
        if pred == gold {
            em += 1.0;
        }
        f1 += token_f1(pred, gold);
    }
    let n = data.len();
    let denom = n.max(1) as f64;
    Ok(QaMetrics {
        exact_match: 100.0 * em / denom,
        f1: 100.0 * f1 / denom,
        n,
    })
}

/// Trains span heads and backbone. The baseline never updates the entity
/// table; `cfg.frozen` can freeze it in joint mode too. Keeps the epoch with
/// the best validation exact match.
pub fn train_qa(
    model: &mut Model,
    vocab: &Vocabulary,
    train: &Corpus,
    val: &Corpus,
    cfg: &TrainConfig,
) -> Result<(Model, TrainLog)> {
    let mode = qa_mode(model)?;
    let mut cfg = cfg.clone();
    if mode == QaMode::Baseline && !cfg.frozen.iter().any(|f| f == ENTITY_TABLE) {
        cfg.frozen.push(ENTITY_TABLE.into());
    }
    let max_len = model.encoder.config.max_len;
    let mut examples = Vec::with_capacity(train.len());
    for s in &train.sentences {
        let answer = answer_of(s)?;
        let seq = encode(s, vocab, max_len, None)?.trimmed();
        let ents = entity_inputs(&seq, &s.labels);
        examples.push((seq, ents, answer));
    }
    train_loop(
        model,
        train.len(),
        &cfg,
        |m, i, scale, rng| {
            let (seq, ents, answer) = &examples[i];
            qa_loss(m, seq, Some(ents), *answer, Some(scale), Some(rng))
        },
        |m| {
            if val.is_empty() {
                Ok(None)
            } else {
                evaluate_qa(m, vocab, val, EntitySource::Gold).map(|r| Some(r.exact_match))
            }
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split(' ').map(String::from).collect()
    }

    #[test]
    fn token_f1_overlap_example() {
        let f = token_f1(&toks("5 2003"), &toks("march 5 2003"));
        assert!((f - 0.8).abs() < 1e-12);
        assert_eq!(token_f1(&toks("a"), &toks("b")), 0.0);
        assert_eq!(token_f1(&toks("a b"), &toks("a b")), 1.0);
    }

    #[test]
    fn span_point_masses() {
        let mut s = vec![0.0; 6];
        let mut e = vec![0.0; 6];
        s[3] = 1.0;
        e[3] = 1.0;
        assert_eq!(select_span(&s, &e, 8), (3, 3));
    }

    #[test]
    fn span_uniform_ties() {
        let u = vec![0.25; 4];
        assert_eq!(select_span(&u, &u, 8), (0, 0));
    }

    #[test]
    fn span_crossed_peaks() {
        // start peaks after end: best legal pair
        let s = [0.1, 0.1, 0.7, 0.1];
        let e = [0.1, 0.7, 0.1, 0.1];
        let mut best = (0, 0, -1.0);
        for i in 0..4 {
            for j in i..4 {
                let v = s[i] * e[j];
                if v > best.2 {
                    best = (i, j, v);
                }
            }
        }
        assert_eq!(select_span(&s, &e, 8), (best.0, best.1));
    }

    #[test]
    fn span_length_cap() {
        let s = [1.0, 0.0, 0.0];
        let e = [0.0, 0.0, 1.0];
        let (i, j) = select_span(&s, &e, 2);
        assert!(j < i + 2);
    }
}
