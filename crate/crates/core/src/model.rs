//! A backbone plus one task head, with a serializable configuration.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::fitb::{FitbHead, FitbMode};
use crate::nn::{HasParams, Param};
use crate::qa::{QaMode, SpanHeads};
use crate::tagger::TagHead;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Task {
    Tagger,
    Qa { mode: QaMode },
    Fitb { mode: FitbMode, n_numerals: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub task: Task,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Head {
    Tag(TagHead),
    Span(SpanHeads),
    Fitb(FitbHead),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub task: Task,
    pub encoder: Encoder,
    pub head: Head,
}

impl Model {
    /// Deterministic initialization from `config.encoder.seed`. Heads draw from
    /// a separate stream so the backbone init does not depend on the task.
    pub fn new(config: ModelConfig) -> Result<Self> {
        let encoder = Encoder::new(config.encoder)?;
        let mut rng = ChaCha8Rng::seed_from_u64(encoder.config.seed);
        rng.set_stream(1);
        let d = encoder.config.d_model;
        let head = match &config.task {
            Task::Tagger => Head::Tag(TagHead::new(d, &mut rng)),
            Task::Qa { .. } => Head::Span(SpanHeads::new(d, &mut rng)),
            Task::Fitb { mode, n_numerals } => {
                if *n_numerals == 0 {
                    return Err(Error::Config("FITB head needs at least one numeral".into()));
                }
                Head::Fitb(FitbHead::new(*mode, d, *n_numerals, &mut rng))
            }
        };
        Ok(Model {
            task: config.task,
            encoder,
            head,
        })
    }

    pub fn config(&self) -> ModelConfig {
        ModelConfig {
            encoder: self.encoder.config.clone(),
            task: self.task.clone(),
        }
    }

    pub fn tag_head(&self) -> Result<&TagHead> {
        match &self.head {
            Head::Tag(h) => Ok(h),
            _ => Err(Error::invalid("model has no tagging head")),
        }
    }

    pub fn span_heads(&self) -> Result<&SpanHeads> {
        match &self.head {
            Head::Span(h) => Ok(h),
            _ => Err(Error::invalid("model has no span heads")),
        }
    }

    pub fn fitb_head(&self) -> Result<&FitbHead> {
        match &self.head {
            Head::Fitb(h) => Ok(h),
            _ => Err(Error::invalid("model has no FITB head")),
        }
    }

    /// Rounds every parameter to `f32` precision, the precision checkpoints store.
    pub fn round_to_f32(&mut self) {
        for (_, p) in self.params_mut() {
            for v in &mut p.value {
                *v = *v as f32 as f64;
            }
        }
    }

    /// Name of the last layer-norm bias when it cannot affect the loss: a
    /// shared shift of every position cancels in the span softmax, so span
    /// models keep it fixed at zero and do not treat it as a parameter.
    fn inert_param(&self) -> Option<String> {
        match self.task {
            Task::Qa { .. } if !self.encoder.layers.is_empty() => {
                Some(format!("layers.{}.norm2.bias", self.encoder.layers.len() - 1))
            }
            _ => None,
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params().iter().all(|(_, p)| p.is_finite())
    }
}

impl HasParams for Model {
    fn params(&self) -> Vec<(String, &Param)> {
        let inert = self.inert_param();
        let mut v = self.encoder.params();
        v.retain(|(n, _)| Some(n) != inert.as_ref());
        match &self.head {
            Head::Tag(h) => v.push(("heads.tag.w".into(), &h.w)),
            Head::Span(h) => {
                v.push(("heads.span.start".into(), &h.start));
                v.push(("heads.span.end".into(), &h.end));
            }
            Head::Fitb(h) => {
                v.push(("heads.fitb.entity_proj".into(), &h.entity_proj));
                v.push(("heads.fitb.out.w".into(), &h.out.w));
                if let Some(b) = &h.out.b {
                    v.push(("heads.fitb.out.b".into(), b));
                }
            }
        }
        v
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Param)> {
        let inert = self.inert_param();
        let mut v = self.encoder.params_mut();
        v.retain(|(n, _)| Some(n) != inert.as_ref());
        match &mut self.head {
            Head::Tag(h) => v.push(("heads.tag.w".into(), &mut h.w)),
            Head::Span(h) => {
                v.push(("heads.span.start".into(), &mut h.start));
                v.push(("heads.span.end".into(), &mut h.end));
            }
            Head::Fitb(h) => {
                v.push(("heads.fitb.entity_proj".into(), &mut h.entity_proj));
                v.push(("heads.fitb.out.w".into(), &mut h.out.w));
                if let Some(b) = &mut h.out.b {
                    v.push(("heads.fitb.out.b".into(), b));
                }
            }
        }
        v
    }
}
