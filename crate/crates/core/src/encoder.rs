//! Shared backbone: summed token, position, segment and (optionally) entity
//! embeddings feeding a stack of post-norm transformer layers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{EntityLabel, Sentence};
use crate::error::{Error, Result};
use crate::nn::{
    embedding_backward, AttentionCache, Dropout, FeedForward, FfnCache, LayerNorm, LnCache, Matrix,
    MultiHeadAttention, Param,
};
use crate::tokenizer::{EncodedSequence, TokenRef};

pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ffn: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            d_ffn: 256,
            max_len: 64,
            vocab_size: 0,
            dropout: 0.1,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_heads == 0 || self.d_model == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.max_len < 4 {
            return Err(Error::Config("max_len must be at least 4".into()));
        }
        if self.vocab_size < crate::tokenizer::RESERVED.len() {
            return Err(Error::Config("vocab_size is smaller than the reserved block".into()));
        }
        if self.d_ffn == 0 {
            return Err(Error::Config("d_ffn must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must be in [0, 1)".into()));
        }
        Ok(())
    }

    /// Closed-form parameter count of the backbone.
    pub fn param_count(&self) -> usize {
        let d = self.d_model;
        let emb = (self.vocab_size + self.max_len + 2 + EntityLabel::COUNT) * d;
        let attn = 4 * d * d + 3 * d; // no key bias
        let ffn = 2 * d * self.d_ffn + self.d_ffn + d;
        let norms = 4 * d;
        emb + self.n_layers * (attn + ffn + norms)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderLayer {
    pub attention: MultiHeadAttention,
    pub norm1: LayerNorm,
    pub ffn: FeedForward,
    pub norm2: LayerNorm,
}

#[derive(Debug)]
struct LayerCache {
    attn: AttentionCache,
    drop_attn: Dropout,
    ln1: LnCache,
    ffn: FfnCache,
    drop_ffn: Dropout,
    ln2: LnCache,
}

impl EncoderLayer {
    fn new<R: Rng>(cfg: &EncoderConfig, rng: &mut R) -> Self {
        EncoderLayer {
            attention: MultiHeadAttention::new(cfg.d_model, cfg.n_heads, INIT_STD, rng),
            norm1: LayerNorm::new(cfg.d_model),
            ffn: FeedForward::new(cfg.d_model, cfg.d_ffn, INIT_STD, rng),
            norm2: LayerNorm::new(cfg.d_model),
        }
    }

    fn forward(
        &self,
        x: &Matrix,
        attend: &[bool],
        dropout: f64,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Matrix, LayerCache)> {
        let (mut a, attn) = self.attention.forward(x, attend)?;
        let drop_attn = Dropout::sample(a.data.len(), dropout, rng.as_deref_mut());
        drop_attn.apply(&mut a);
        a.add_assign(x);
        let (h1, ln1) = self.norm1.forward(&a)?;
        let (mut f, ffn) = self.ffn.forward(&h1)?;
        let drop_ffn = Dropout::sample(f.data.len(), dropout, rng.as_deref_mut());
        drop_ffn.apply(&mut f);
        f.add_assign(&h1);
        let (y, ln2) = self.norm2.forward(&f)?;
        Ok((
            y,
            LayerCache {
                attn,
                drop_attn,
                ln1,
                ffn,
                drop_ffn,
                ln2,
            },
        ))
    }

    fn backward(&mut self, c: &LayerCache, gy: &Matrix) -> Result<Matrix> {
        let g_r2 = self.norm2.backward(&c.ln2, gy);
        let mut g_f = g_r2.clone();
        c.drop_ffn.apply(&mut g_f);
        let mut g_h1 = self.ffn.backward(&c.ffn, &g_f)?;
        g_h1.add_assign(&g_r2);
        let g_r1 = self.norm1.backward(&c.ln1, &g_h1);
        let mut g_a = g_r1.clone();
        c.drop_attn.apply(&mut g_a);
        let mut gx = self.attention.backward(&c.attn, &g_a)?;
        gx.add_assign(&g_r1);
        Ok(gx)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub token: Param,
    pub position: Param,
    pub segment: Param,
    /// Entity embeddings (7 rows), zero at init; only read when entity inputs are given.
    pub entity: Param,
    pub layers: Vec<EncoderLayer>,
}

/// Classification-token output and per-position contextual outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderOutput {
    pub cls: Vec<f64>,
    pub hidden: Matrix,
}

#[derive(Debug)]
pub struct EncoderCache {
    token_ids: Vec<usize>,
    segment_ids: Vec<usize>,
    entity_ids: Option<Vec<usize>>,
    drop_embed: Dropout,
    layers: Vec<LayerCache>,
}

impl Encoder {
    pub fn new(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.d_model;
        let token = Param::truncated_normal(&[config.vocab_size, d], INIT_STD, &mut rng);
        let position = Param::truncated_normal(&[config.max_len, d], INIT_STD, &mut rng);
        let segment = Param::truncated_normal(&[2, d], INIT_STD, &mut rng);
        let entity = Param::zeros(&[EntityLabel::COUNT, d]);
        let layers = (0..config.n_layers)
            .map(|_| EncoderLayer::new(&config, &mut rng))
            .collect();
        Ok(Encoder {
            config,
            token,
            position,
            segment,
            entity,
            layers,
        })
    }

    fn check_input(&self, seq: &EncodedSequence, entities: Option<&[EntityLabel]>) -> Result<()> {
        if seq.len() > self.config.max_len {
            return Err(Error::invalid(format!(
                "sequence length {} exceeds max_len {}",
                seq.len(),
                self.config.max_len
            )));
        }
        if seq.is_empty() {
            return Err(Error::invalid("empty sequence"));
        }
        if let Some(&bad) = seq.token_ids.iter().find(|&&id| id as usize >= self.config.vocab_size) {
            return Err(Error::invalid(format!("token id {bad} outside vocabulary")));
        }
        if seq.segment_ids.iter().any(|&s| s > 1) {
            return Err(Error::invalid("segment id above 1"));
        }
        if let Some(e) = entities {
            if e.len() != seq.len() {
                return Err(Error::invalid(format!(
                    "{} entity inputs for {} positions",
                    e.len(),
                    seq.len()
                )));
            }
        }
        Ok(())
    }

    /// Row `i` = token(i) + position(i) + segment(i) (+ entity(i)).
    pub fn embed(&self, seq: &EncodedSequence, entities: Option<&[EntityLabel]>) -> Result<Matrix> {
        self.check_input(seq, entities)?;
        let d = self.config.d_model;
        let mut x = Matrix::zeros(seq.len(), d);
        for i in 0..seq.len() {
            let tok = self.token.row(seq.token_ids[i] as usize);
            let pos = self.position.row(i);
            let seg = self.segment.row(seq.segment_ids[i] as usize);
            let row = x.row_mut(i);
            for j in 0..d {
                row[j] = tok[j] + pos[j] + seg[j];
            }
            if let Some(e) = entities {
                let h = self.entity.row(e[i].code());
                for j in 0..d {
                    row[j] += h[j];
                }
            }
        }
        Ok(x)
    }

    /// Forward pass. Dropout is active only when `rng` is given.
    pub fn forward(
        &self,
        seq: &EncodedSequence,
        entities: Option<&[EntityLabel]>,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(EncoderOutput, EncoderCache)> {
        let mut x = self.embed(seq, entities)?;
        let p = self.config.dropout;
        let drop_embed = Dropout::sample(x.data.len(), p, rng.as_deref_mut());
        drop_embed.apply(&mut x);
        let attend: Vec<bool> = seq.attention_mask.iter().map(|&m| m == 1).collect();
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (y, c) = layer.forward(&x, &attend, p, rng.as_deref_mut())?;
            caches.push(c);
            x = y;
        }
        let out = EncoderOutput {
            cls: x.row(0).to_vec(),
            hidden: x,
        };
        let cache = EncoderCache {
            token_ids: seq.token_ids.iter().map(|&t| t as usize).collect(),
            segment_ids: seq.segment_ids.iter().map(|&s| s as usize).collect(),
            entity_ids: entities.map(|e| e.iter().map(|l| l.code()).collect()),
            drop_embed,
            layers: caches,
        };
        Ok((out, cache))
    }

    /// Backpropagates `grad_hidden` (gradient w.r.t. every output row) into all
    /// parameters. Gradients for the classification token belong in row 0.
    pub fn backward(&mut self, cache: &EncoderCache, grad_hidden: &Matrix) -> Result<()> {
        let mut g = grad_hidden.clone();
        for (layer, c) in self.layers.iter_mut().zip(&cache.layers).rev() {
            g = layer.backward(c, &g)?;
        }
        cache.drop_embed.apply(&mut g);
        let positions: Vec<usize> = (0..g.rows).collect();
        embedding_backward(&mut self.token, &cache.token_ids, &g);
        embedding_backward(&mut self.position, &positions, &g);
        embedding_backward(&mut self.segment, &cache.segment_ids, &g);
        if let Some(ids) = &cache.entity_ids {
            embedding_backward(&mut self.entity, ids, &g);
        }
        Ok(())
    }

    pub fn params(&self) -> Vec<(String, &Param)> {
        let mut v: Vec<(String, &Param)> = vec![
            ("embeddings.token".into(), &self.token),
            ("embeddings.position".into(), &self.position),
            ("embeddings.segment".into(), &self.segment),
            ("embeddings.entity".into(), &self.entity),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            let a = &l.attention;
            let p = |s: &str| format!("layers.{i}.{s}");
            v.push((p("attn.query.w"), &a.query.w));
            v.push((p("attn.query.b"), a.query.b.as_ref().unwrap()));
            v.push((p("attn.key.w"), &a.key.w));
            v.push((p("attn.value.w"), &a.value.w));
            v.push((p("attn.value.b"), a.value.b.as_ref().unwrap()));
            v.push((p("attn.output.w"), &a.output.w));
            v.push((p("attn.output.b"), a.output.b.as_ref().unwrap()));
            v.push((p("norm1.gain"), &l.norm1.gain));
            v.push((p("norm1.bias"), &l.norm1.bias));
            v.push((p("ffn.up.w"), &l.ffn.up.w));
            v.push((p("ffn.up.b"), l.ffn.up.b.as_ref().unwrap()));
            v.push((p("ffn.down.w"), &l.ffn.down.w));
            v.push((p("ffn.down.b"), l.ffn.down.b.as_ref().unwrap()));
            v.push((p("norm2.gain"), &l.norm2.gain));
            v.push((p("norm2.bias"), &l.norm2.bias));
        }
        v
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Param)> {
        let mut v: Vec<(String, &mut Param)> = vec![
            ("embeddings.token".into(), &mut self.token),
            ("embeddings.position".into(), &mut self.position),
            ("embeddings.segment".into(), &mut self.segment),
            ("embeddings.entity".into(), &mut self.entity),
        ];
        for (i, l) in self.layers.iter_mut().enumerate() {
            let a = &mut l.attention;
            let p = |s: &str| format!("layers.{i}.{s}");
            v.push((p("attn.query.w"), &mut a.query.w));
            v.push((p("attn.query.b"), a.query.b.as_mut().unwrap()));
            v.push((p("attn.key.w"), &mut a.key.w));
            v.push((p("attn.value.w"), &mut a.value.w));
            v.push((p("attn.value.b"), a.value.b.as_mut().unwrap()));
            v.push((p("attn.output.w"), &mut a.output.w));
            v.push((p("attn.output.b"), a.output.b.as_mut().unwrap()));
            v.push((p("norm1.gain"), &mut l.norm1.gain));
            v.push((p("norm1.bias"), &mut l.norm1.bias));
            v.push((p("ffn.up.w"), &mut l.ffn.up.w));
            v.push((p("ffn.up.b"), l.ffn.up.b.as_mut().unwrap()));
            v.push((p("ffn.down.w"), &mut l.ffn.down.w));
            v.push((p("ffn.down.b"), l.ffn.down.b.as_mut().unwrap()));
            v.push((p("norm2.gain"), &mut l.norm2.gain));
            v.push((p("norm2.bias"), &mut l.norm2.bias));
        }
        v
    }
}

/// Per-position entity inputs for an encoded sentence: the gold label of each
/// context token, `Other` everywhere else.
pub fn entity_inputs(seq: &EncodedSequence, labels: &[EntityLabel]) -> Vec<EntityLabel> {
    seq.alignment
        .iter()
        .map(|a| match a {
            Some(TokenRef::Context(i)) => labels.get(*i).copied().unwrap_or(EntityLabel::Other),
            _ => EntityLabel::Other,
        })
        .collect()
}

/// Convenience wrapper returning `(c, o)` without dropout.
pub fn encode_sequence(
    encoder: &Encoder,
    seq: &EncodedSequence,
    entities: Option<&[EntityLabel]>,
) -> Result<EncoderOutput> {
    encoder.forward(seq, entities, None).map(|(o, _)| o)
}

/// Gold entity inputs for `sentence` under `seq`'s alignment.
pub fn gold_entities(seq: &EncodedSequence, sentence: &Sentence) -> Vec<EntityLabel> {
    entity_inputs(seq, &sentence.labels)
}
