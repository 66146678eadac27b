//! Fill-in-the-blank: predict a masked numeral over the closed numeral
//! vocabulary. The entity-conditioned mode puts a marker token after `[CLS]`
//! and concatenates a learned per-entity vector to the hidden state.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{numeral_value, Corpus, EntityLabel, Sentence};
use crate::encoder::INIT_STD;
use crate::error::{Error, Result};
use crate::model::{Head, Model, Task};
use crate::nn::{cross_entropy, softmax_ce_grad, softmax_in_place, Linear, Matrix, Param};
use crate::tagger::tag_sentence;
use crate::tokenizer::{encode_with, EncodeOptions, EncodedSequence, Vocabulary};
use crate::train::{train_loop, TrainConfig, TrainLog};

pub const DEFAULT_EPOCHS: usize = 3;
pub const DEFAULT_LR: f64 = 2e-4;
pub const DEFAULT_BATCH: usize = 64;
pub const DEFAULT_KS: [usize; 4] = [1, 2, 5, 10];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitbMode {
    Baseline,
    Entity,
}

impl FitbMode {
    pub fn as_str(self) -> &'static str {
        match self {
            FitbMode::Baseline => "baseline",
            FitbMode::Entity => "entity",
        }
    }
}

impl std::str::FromStr for FitbMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(FitbMode::Baseline),
            "entity" => Ok(FitbMode::Entity),
            _ => Err(Error::invalid(format!("unknown FITB mode `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitbHead {
    /// One row per number entity (`6 x d`); unused in baseline mode.
    pub entity_proj: Param,
    /// `V x 2d` (entity mode) or `V x d` (baseline), with bias.
    pub out: Linear,
}

impl FitbHead {
    pub fn new<R: Rng>(mode: FitbMode, d: usize, n_numerals: usize, rng: &mut R) -> Self {
        let entity_proj = Param::truncated_normal(&[EntityLabel::ENTITIES.len(), d], INIT_STD, rng);
        let n_in = match mode {
            FitbMode::Baseline => d,
            FitbMode::Entity => 2 * d,
        };
        FitbHead {
            entity_proj,
            out: Linear::new(n_in, n_numerals, true, INIT_STD, rng),
        }
    }

    /// Classifier input: `o` alone, or `[o ; p_e]`.
    pub fn features(&self, hidden: &[f64], entity: Option<EntityLabel>) -> Result<Vec<f64>> {
        let mut x = hidden.to_vec();
        if self.out.w.cols() == 2 * hidden.len() {
            let e = entity
                .and_then(EntityLabel::entity_index)
                .ok_or_else(|| Error::invalid("entity-conditioned FITB needs a number entity"))?;
            x.extend_from_slice(self.entity_proj.row(e));
        }
        Ok(x)
    }

    /// Logits over the numeral vocabulary for one hidden state.
    pub fn logits(&self, hidden: &[f64], entity: Option<EntityLabel>) -> Result<Vec<f64>> {
        let x = self.features(hidden, entity)?;
        let m = Matrix::from_vec(1, x.len(), x)?;
        Ok(self.out.forward(&m)?.data)
    }
}

/// Closed output vocabulary: distinct numeral tokens ordered by value, then
/// lexicographically.
#[derive(Clone, Debug, PartialEq)]
pub struct NumeralVocab {
    tokens: Vec<String>,
    values: Vec<f64>,
    index: HashMap<String, usize>,
}

impl NumeralVocab {
    pub fn new<I: IntoIterator<Item = String>>(numerals: I) -> Result<Self> {
        let mut items: Vec<(f64, String)> = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for t in numerals {
            let Some(v) = numeral_value(&t) else { continue };
            if seen.insert(t.clone()) {
                items.push((v, t));
            }
        }
        if items.is_empty() {
            return Err(Error::invalid("no numerals to build a numeral vocabulary"));
        }
        items.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
        let index = items.iter().enumerate().map(|(i, (_, t))| (t.clone(), i)).collect();
        let (values, tokens) = items.into_iter().unzip();
        Ok(NumeralVocab { tokens, values, index })
    }

    /// The numerals of a word vocabulary. A vocabulary built over the whole
    /// corpus yields the same list as [`build_numeral_vocab`] on that corpus.
    pub fn from_vocabulary(vocab: &Vocabulary) -> Result<Self> {
        Self::new(
            vocab
                .numeral_ids()
                .iter()
                .map(|&id| vocab.token(id).unwrap().to_string()),
        )
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn value(&self, i: usize) -> f64 {
        self.values[i]
    }

    pub fn index(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }
}

pub fn build_numeral_vocab(corpus: &Corpus) -> Result<NumeralVocab> {
    NumeralVocab::new(
        corpus
            .sentences
            .iter()
            .flat_map(|s| s.tokens.iter().cloned()),
    )
}

/// A sentence prepared for training or scoring.
#[derive(Clone, Debug, PartialEq)]
pub struct FitbExample {
    pub seq: EncodedSequence,
    pub mask_pos: usize,
    pub entity: EntityLabel,
    pub answer: usize,
}

fn fitb_mode(model: &Model) -> Result<FitbMode> {
    match model.task {
        Task::Fitb { mode, .. } => Ok(mode),
        _ => Err(Error::invalid("model is not a FITB model")),
    }
}

/// Encodes `sentence` with its numeral masked; entity mode also inserts the
/// marker of `entity` (the gold mask entity unless overridden).
pub fn fitb_example(
    sentence: &Sentence,
    vocab: &Vocabulary,
    numerals: &NumeralVocab,
    mode: FitbMode,
    max_len: usize,
    entity: Option<EntityLabel>,
) -> Result<FitbExample> {
    let (Some(mi), Some(gold_entity), Some(answer)) = (sentence.mask_index, sentence.mask_entity, &sentence.mask_answer)
    else {
        return Err(Error::invalid(format!("sentence `{}` lacks mask fields", sentence.id)));
    };
    let entity = entity.unwrap_or(gold_entity);
    if !entity.is_entity() {
        return Err(Error::invalid(format!("sentence `{}`: FITB entity cannot be O", sentence.id)));
    }
    let answer = numerals
        .index(answer)
        .ok_or_else(|| Error::invalid(format!("sentence `{}`: answer `{answer}` not in numeral vocabulary", sentence.id)))?;
    let opts = EncodeOptions {
        max_len,
        entity_marker: (mode == FitbMode::Entity).then_some(entity),
        mask_numeral: true,
    };
    let seq = encode_with(sentence, vocab, &opts)?.trimmed();
    let mask_pos = seq.context_position(mi).expect("encode guards the masked token");
    Ok(FitbExample {
        seq,
        mask_pos,
        entity,
        answer,
    })
}

/// Probability vector over the numeral vocabulary.
pub fn fitb_forward(model: &Model, ex: &FitbExample) -> Result<Vec<f64>> {
    fitb_mode(model)?;
    let (out, _) = model.encoder.forward(&ex.seq, None, None)?;
    let mut p = model.fitb_head()?.logits(out.hidden.row(ex.mask_pos), Some(ex.entity))?;
    softmax_in_place(&mut p);
    Ok(p)
}

pub fn fitb_loss(model: &mut Model, ex: &FitbExample, grad_scale: Option<f64>, rng: Option<&mut ChaCha8Rng>) -> Result<f64> {
    fitb_mode(model)?;
    let (out, cache) = model.encoder.forward(&ex.seq, None, rng)?;
    let o = out.hidden.row(ex.mask_pos);
    let head = model.fitb_head()?;
    let x = head.features(o, Some(ex.entity))?;
    let xm = Matrix::from_vec(1, x.len(), x)?;
    let mut p = head.out.forward(&xm)?.data;
    softmax_in_place(&mut p);
    let loss = cross_entropy(&p, ex.answer)?;
    if let Some(scale) = grad_scale {
        let g = Matrix::from_vec(1, p.len(), softmax_ce_grad(&p, ex.answer, scale))?;
        let Head::Fitb(head) = &mut model.head else { unreachable!() };
        let gx = head.out.backward(&xm, &g)?;
        let d = o.len();
        if gx.cols == 2 * d {
            let e = ex.entity.entity_index().unwrap();
            let gp = head.entity_proj.grad_row_mut(e);
            for j in 0..d {
                gp[j] += gx.data[d + j];
            }
        }
        let mut g_hidden = Matrix::zeros(out.hidden.rows, d);
        g_hidden.row_mut(ex.mask_pos).copy_from_slice(&gx.data[..d]);
        model.encoder.backward(&cache, &g_hidden)?;
    }
    Ok(loss)
}

/// Indices sorted by descending probability; ties keep vocabulary order.
pub fn ranking(probs: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..probs.len()).collect();
    idx.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]));
    idx
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FitbMetrics {
    /// Percent of examples whose gold numeral is in the top k.
    pub top_k: BTreeMap<usize, f64>,
    /// Mean over examples of the mean absolute value gap over the top k.
    pub dist: BTreeMap<usize, f64>,
    pub n: usize,
}

/// Scores per-example distributions. `k` larger than the vocabulary is
/// capped at its size.
pub fn score_predictions(
    probs: &[Vec<f64>],
    answers: &[usize],
    values: &[f64],
    ks: &[usize],
) -> FitbMetrics {
    let mut hits = vec![0usize; ks.len()];
    let mut dist = vec![0.0; ks.len()];
    for (p, &gold) in probs.iter().zip(answers) {
        let order = ranking(p);
        for (slot, &k) in ks.iter().enumerate() {
            let top = &order[..k.min(order.len())];
            if top.contains(&gold) {
                hits[slot] += 1;
            }
            if !top.is_empty() {
                let gap: f64 = top.iter().map(|&i| (values[i] - values[gold]).abs()).sum();
                dist[slot] += gap / top.len() as f64;
            }
        }
    }
    let n = probs.len();
    let denom = n.max(1) as f64;
    FitbMetrics {
        top_k: ks.iter().zip(&hits).map(|(&k, &h)| (k, 100.0 * h as f64 / denom)).collect(),
        dist: ks.iter().zip(&dist).map(|(&k, &d)| (k, d / denom)).collect(),
        n,
    }
}

/// Where the entity used to condition the model comes from.
#[derive(Clone, Copy, Debug)]
pub enum EntitySource<'a> {
    Gold,
    /// The tagger's prediction for the numeral; if it predicts `O`, its most
    /// probable number entity is used.
    Tagger(&'a Model),
}

fn resolve_entity(source: EntitySource, vocab: &Vocabulary, s: &Sentence) -> Result<Option<EntityLabel>> {
    match source {
        EntitySource::Gold => Ok(None),
        EntitySource::Tagger(tagger) => {
            let mi = s.mask_index.ok_or_else(|| Error::invalid(format!("sentence `{}` lacks mask fields", s.id)))?;
            let mut plain = s.clone();
            plain.question = None;
            plain.answer_span = None;
            let tagged = tag_sentence(tagger, vocab, &plain)?;
            let probs = tagged.probs[mi].ok_or_else(|| Error::invalid("masked numeral truncated"))?;
            let best = EntityLabel::ENTITIES
                .iter()
                .copied()
                .fold(EntityLabel::ENTITIES[0], |b, e| if probs[e.code()] > probs[b.code()] { e } else { b });
            Ok(Some(best))
        }
    }
}

pub fn fitb_examples(
    model: &Model,
    vocab: &Vocabulary,
    numerals: &NumeralVocab,
    data: &Corpus,
    source: EntitySource,
) -> Result<Vec<FitbExample>> {
    let mode = fitb_mode(model)?;
    check_numerals(model, numerals)?;
    data.sentences
        .iter()
        .map(|s| {
            let e = resolve_entity(source, vocab, s)?;
            fitb_example(s, vocab, numerals, mode, model.encoder.config.max_len, e)
        })
        .collect()
}

fn check_numerals(model: &Model, numerals: &NumeralVocab) -> Result<()> {
    let Task::Fitb { n_numerals, .. } = model.task else {
        return Err(Error::invalid("model is not a FITB model"));
    };
    if n_numerals != numerals.len() {
        return Err(Error::invalid(format!(
            "model predicts {n_numerals} numerals but the numeral vocabulary has {}",
            numerals.len()
        )));
    }
    Ok(())
}

pub fn evaluate_fitb(
    model: &Model,
    vocab: &Vocabulary,
    numerals: &NumeralVocab,
    data: &Corpus,
    ks: &[usize],
    source: EntitySource,
) -> Result<FitbMetrics> {
    let examples = fitb_examples(model, vocab, numerals, data, source)?;
    let probs = examples.iter().map(|e| fitb_forward(model, e)).collect::<Result<Vec<_>>>()?;
    let answers: Vec<usize> = examples.iter().map(|e| e.answer).collect();
    Ok(score_predictions(&probs, &answers, &numerals.values, ks))
}

/// Trains the FITB head and backbone; keeps the epoch with the best
/// validation top-1.
pub fn train_fitb(
    model: &mut Model,
    vocab: &Vocabulary,
    numerals: &NumeralVocab,
    train: &Corpus,
    val: &Corpus,
    cfg: &TrainConfig,
) -> Result<(Model, TrainLog)> {
    let examples = fitb_examples(model, vocab, numerals, train, EntitySource::Gold)?;
    train_loop(
        model,
        examples.len(),
        cfg,
        |m, i, scale, rng| fitb_loss(m, &examples[i], Some(scale), Some(rng)),
        |m| {
            if val.is_empty() {
                Ok(None)
            } else {
                evaluate_fitb(m, vocab, numerals, val, &[1], EntitySource::Gold).map(|r| Some(r.top_k[&1]))
            }
        },
    )
}

/// Most frequent gold label of each token in `corpus` (ties to the lower code).
pub fn token_majority_labels(corpus: &Corpus) -> HashMap<String, EntityLabel> {
    let mut counts: HashMap<&str, [usize; EntityLabel::COUNT]> = HashMap::new();
    for s in &corpus.sentences {
        for (t, l) in s.tokens.iter().zip(&s.labels) {
            counts.entry(t).or_default()[l.code()] += 1;
        }
    }
    counts
        .into_iter()
        .map(|(t, c)| {
            let best = (0..c.len()).fold(0, |b, i| if c[i] > c[b] { i } else { b });
            (t.to_string(), EntityLabel::from_code(best).unwrap())
        })
        .collect()
}

/// One row of a side-by-side qualitative dump.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualitativeRow {
    pub id: String,
    pub sentence: String,
    pub entity: EntityLabel,
    pub gold: String,
    pub baseline: Vec<String>,
    pub entity_mode: Vec<String>,
}

/// Top-`k` predictions of both models for each example.
pub fn qualitative_rows(
    baseline: &Model,
    entity: &Model,
    vocab: &Vocabulary,
    numerals: &NumeralVocab,
    data: &Corpus,
    k: usize,
) -> Result<Vec<QualitativeRow>> {
    if fitb_mode(baseline)? != FitbMode::Baseline || fitb_mode(entity)? != FitbMode::Entity {
        return Err(Error::invalid("qualitative dump needs a baseline and an entity-mode model"));
    }
    let eb = fitb_examples(baseline, vocab, numerals, data, EntitySource::Gold)?;
    let ee = fitb_examples(entity, vocab, numerals, data, EntitySource::Gold)?;
    let top = |m: &Model, ex: &FitbExample| -> Result<Vec<String>> {
        let p = fitb_forward(m, ex)?;
        Ok(ranking(&p)
            .into_iter()
            .take(k)
            .map(|i| numerals.tokens[i].clone())
            .collect())
    };
    data.sentences
        .iter()
        .zip(eb.iter().zip(&ee))
        .map(|(s, (b, e))| {
            let mi = s.mask_index.unwrap();
            let blanked: Vec<&str> = s
                .tokens
                .iter()
                .enumerate()
                .map(|(i, t)| if i == mi { "____" } else { t.as_str() })
                .collect();
            Ok(QualitativeRow {
                id: s.id.clone(),
                sentence: blanked.join(" "),
                entity: e.entity,
                gold: numerals.tokens[e.answer].clone(),
                baseline: top(baseline, b)?,
                entity_mode: top(entity, e)?,
            })
        })
        .collect()
}

/// Fraction of listed predictions whose majority training label equals the
/// example's entity. Predictions never seen in training count as mismatches.
pub fn entity_consistency(rows: &[QualitativeRow], majority: &HashMap<String, EntityLabel>, entity_mode: bool) -> f64 {
    let (mut hit, mut total) = (0usize, 0usize);
    for r in rows {
        let preds = if entity_mode { &r.entity_mode } else { &r.baseline };
        for p in preds {
            total += 1;
            if majority.get(p) == Some(&r.entity) {
                hit += 1;
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        hit as f64 / total as f64
    }
}

/// Plain-text rendering: one block per example with both prediction lists.
pub fn render_qualitative(rows: &[QualitativeRow]) -> String {
    let mut out = String::new();
    for r in rows {
        let _ = writeln!(out, "[{}] {}", r.id, r.sentence);
        let _ = writeln!(out, "  gold: {} ({})", r.gold, r.entity);
        let _ = writeln!(out, "  baseline: {}", r.baseline.join(", "));
        let _ = writeln!(out, "  entity:   {}", r.entity_mode.join(", "));
    }
    out
}

/// Writes the qualitative dump as JSON lines (one row per example).
pub fn dump_qualitative(
    baseline: &Model,
    entity: &Model,
    vocab: &Vocabulary,
    numerals: &NumeralVocab,
    data: &Corpus,
    k: usize,
    path: impl AsRef<Path>,
) -> Result<Vec<QualitativeRow>> {
    let rows = qualitative_rows(baseline, entity, vocab, numerals, data, k)?;
    let mut text = String::new();
    for r in &rows {
        text.push_str(&serde_json::to_string(r).expect("row serializes"));
        text.push('\n');
    }
    let path = path.as_ref();
    std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
    Ok(rows)
}
