//! Finite-difference gradient checks for every primitive and for the full
//! encoder under each task head.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{generate_corpus, Corpus, GenConfig};
use crate::encoder::EncoderConfig;
use crate::error::Result;
use crate::fitb::{fitb_example, fitb_loss, FitbMode, NumeralVocab};
use crate::model::{Model, ModelConfig, Task};
use crate::nn::{
    cross_entropy, embedding_backward, gelu, gelu_backward, grad_check, layer_norm, layer_norm_backward,
    linear, linear_backward, softmax_ce_grad, softmax_in_place, FeedForward, GradCheckOptions, HasParams, Matrix,
    MultiHeadAttention, Param,
};
use crate::qa::{qa_loss, QaMode};
use crate::tagger::tagger_loss;
use crate::tokenizer::{build_vocab, encode, Vocabulary};

pub const MODEL_TOLERANCE: f64 = 1e-3;
pub const PRIMITIVE_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_error: f64,
    pub checked: usize,
    /// Tensor, flat index, analytic and numeric gradient at the worst coordinate.
    pub worst: Option<(String, usize, f64, f64)>,
}

/// Named tensors with no structure; used for primitive checks.
struct Tensors(Vec<(String, Param)>);

impl HasParams for Tensors {
    fn params(&self) -> Vec<(String, &Param)> {
        self.0.iter().map(|(n, p)| (n.clone(), p)).collect()
    }
    fn params_mut(&mut self) -> Vec<(String, &mut Param)> {
        self.0.iter_mut().map(|(n, p)| (n.clone(), p)).collect()
    }
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Param {
    let n = shape.iter().product();
    let v = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Param::from_values(shape, v).unwrap()
}

fn as_matrix(p: &Param) -> Matrix {
    Matrix::from_vec(p.rows(), p.cols(), p.value.clone()).unwrap()
}

fn weighted_sum(y: &Matrix, r: &Matrix) -> f64 {
    y.data.iter().zip(&r.data).map(|(a, b)| a * b).sum()
}

fn run_check<M: HasParams>(
    name: &str,
    model: &mut M,
    loss: impl FnMut(&mut M, bool) -> Result<f64>,
    opts: GradCheckOptions,
) -> Result<CheckResult> {
    let r = grad_check(model, loss, opts)?;
    Ok(CheckResult {
        name: name.into(),
        max_rel_error: r.max_rel_error,
        checked: r.checked,
        worst: r.worst,
    })
}

/// Exhaustive checks of each primitive on small random inputs.
pub fn primitive_checks(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let all = GradCheckOptions {
        min_coords: usize::MAX,
        seed,
        ..GradCheckOptions::default()
    };
    let mut out = Vec::new();

    let r = as_matrix(&random(&[3, 5], &mut rng));
    let mut t = Tensors(vec![
        ("x".into(), random(&[3, 4], &mut rng)),
        ("w".into(), random(&[5, 4], &mut rng)),
        ("b".into(), random(&[5], &mut rng)),
    ]);
    out.push(run_check("linear", &mut t, |t, back| {
        let x = as_matrix(&t.0[0].1);
        let [(_, _), (_, w), (_, b)] = &mut t.0[..] else { unreachable!() };
        let y = linear(&x, w, Some(b))?;
        if back {
            let gx = linear_backward(&x, w, Some(b), &r)?;
            t.0[0].1.grad.copy_from_slice(&gx.data);
        }
        Ok(weighted_sum(&y, &r))
    }, all)?);

    let r = as_matrix(&random(&[3, 6], &mut rng));
    let mut t = Tensors(vec![
        ("x".into(), random(&[3, 6], &mut rng)),
        ("gain".into(), random(&[6], &mut rng)),
        ("bias".into(), random(&[6], &mut rng)),
    ]);
    out.push(run_check("layer_norm", &mut t, |t, back| {
        let x = as_matrix(&t.0[0].1);
        let [_, (_, g), (_, b)] = &mut t.0[..] else { unreachable!() };
        let (y, xhat, inv) = layer_norm(&x, g, b)?;
        if back {
            let gx = layer_norm_backward(&xhat, &inv, g, b, &r);
            t.0[0].1.grad.copy_from_slice(&gx.data);
        }
        Ok(weighted_sum(&y, &r))
    }, all)?);

    let r = random(&[12], &mut rng).value;
    let mut t = Tensors(vec![("x".into(), {
        let mut p = random(&[12], &mut rng);
        p.value.iter_mut().for_each(|v| *v *= 3.0);
        p
    })]);
    out.push(run_check("gelu", &mut t, |t, back| {
        let p = &mut t.0[0].1;
        let loss = p.value.iter().zip(&r).map(|(x, w)| w * gelu(*x)).sum();
        if back {
            for i in 0..p.len() {
                p.grad[i] += r[i] * gelu_backward(p.value[i]);
            }
        }
        Ok(loss)
    }, all)?);

    let mut t = Tensors(vec![("logits".into(), random(&[7], &mut rng))]);
    out.push(run_check("softmax_cross_entropy", &mut t, |t, back| {
        let p = &mut t.0[0].1;
        let mut probs = p.value.clone();
        softmax_in_place(&mut probs);
        let loss = cross_entropy(&probs, 2)?;
        if back {
            for (g, d) in p.grad.iter_mut().zip(softmax_ce_grad(&probs, 2, 1.0)) {
                *g += d;
            }
        }
        Ok(loss)
    }, all)?);

    let ids = [0usize, 2, 2, 4];
    let r = as_matrix(&random(&[4, 3], &mut rng));
    let mut t = Tensors(vec![("table".into(), random(&[5, 3], &mut rng))]);
    out.push(run_check("embedding", &mut t, |t, back| {
        let p = &mut t.0[0].1;
        let mut y = Matrix::zeros(ids.len(), 3);
        for (i, &id) in ids.iter().enumerate() {
            y.row_mut(i).copy_from_slice(p.row(id));
        }
        if back {
            embedding_backward(p, &ids, &r);
        }
        Ok(weighted_sum(&y, &r))
    }, all)?);

    struct Attn {
        x: Param,
        mha: MultiHeadAttention,
    }
    impl HasParams for Attn {
        fn params(&self) -> Vec<(String, &Param)> {
            let m = &self.mha;
            vec![
                ("x".into(), &self.x),
                ("query.w".into(), &m.query.w),
                ("query.b".into(), m.query.b.as_ref().unwrap()),
                ("key.w".into(), &m.key.w),
                ("value.w".into(), &m.value.w),
                ("value.b".into(), m.value.b.as_ref().unwrap()),
                ("output.w".into(), &m.output.w),
                ("output.b".into(), m.output.b.as_ref().unwrap()),
            ]
        }
        fn params_mut(&mut self) -> Vec<(String, &mut Param)> {
            let m = &mut self.mha;
            vec![
                ("x".into(), &mut self.x),
                ("query.w".into(), &mut m.query.w),
                ("query.b".into(), m.query.b.as_mut().unwrap()),
                ("key.w".into(), &mut m.key.w),
                ("value.w".into(), &mut m.value.w),
                ("value.b".into(), m.value.b.as_mut().unwrap()),
                ("output.w".into(), &mut m.output.w),
                ("output.b".into(), m.output.b.as_mut().unwrap()),
            ]
        }
    }
    let attend = [true, true, true, false];
    let r = as_matrix(&random(&[4, 4], &mut rng));
    let mut a = Attn {
        x: random(&[4, 4], &mut rng),
        mha: MultiHeadAttention::new(4, 2, 0.5, &mut rng),
    };
    for (_, p) in a.params_mut() {
        if p.value.iter().all(|v| *v == 0.0) {
            p.value.iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
        }
    }
    out.push(run_check("attention", &mut a, |a, back| {
        let x = as_matrix(&a.x);
        let (y, cache) = a.mha.forward(&x, &attend)?;
        if back {
            let gx = a.mha.backward(&cache, &r)?;
            a.x.grad.copy_from_slice(&gx.data);
        }
        Ok(weighted_sum(&y, &r))
    }, all)?);

    struct Ffn {
        x: Param,
        ffn: FeedForward,
    }
    impl HasParams for Ffn {
        fn params(&self) -> Vec<(String, &Param)> {
            let f = &self.ffn;
            vec![
                ("x".into(), &self.x),
                ("up.w".into(), &f.up.w),
                ("up.b".into(), f.up.b.as_ref().unwrap()),
                ("down.w".into(), &f.down.w),
                ("down.b".into(), f.down.b.as_ref().unwrap()),
            ]
        }
        fn params_mut(&mut self) -> Vec<(String, &mut Param)> {
            let f = &mut self.ffn;
            vec![
                ("x".into(), &mut self.x),
                ("up.w".into(), &mut f.up.w),
                ("up.b".into(), f.up.b.as_mut().unwrap()),
                ("down.w".into(), &mut f.down.w),
                ("down.b".into(), f.down.b.as_mut().unwrap()),
            ]
        }
    }
    let r = as_matrix(&random(&[3, 4], &mut rng));
    let mut f = Ffn {
        x: random(&[3, 4], &mut rng),
        ffn: FeedForward::new(4, 6, 0.5, &mut rng),
    };
    for (_, p) in f.params_mut() {
        if p.value.iter().all(|v| *v == 0.0) {
            p.value.iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
        }
    }
    out.push(run_check("feed_forward", &mut f, |f, back| {
        let x = as_matrix(&f.x);
        let (y, cache) = f.ffn.forward(&x)?;
        if back {
            let gx = f.ffn.backward(&cache, &r)?;
            f.x.grad.copy_from_slice(&gx.data);
        }
        Ok(weighted_sum(&y, &r))
    }, all)?);

    Ok(out)
}

/// Small backbone used by the model-level checks.
pub fn check_encoder_config(vocab_size: usize, seed: u64) -> EncoderConfig {
    EncoderConfig {
        d_model: 8,
        n_layers: 2,
        n_heads: 2,
        d_ffn: 16,
        max_len: 32,
        vocab_size,
        dropout: 0.0,
        seed,
    }
}

fn check_data(seed: u64) -> Result<(Corpus, Vocabulary)> {
    let corpus = generate_corpus(&GenConfig {
        n_sentences: 6,
        questions: true,
        seed,
        ..GenConfig::default()
    })?;
    let vocab = build_vocab(&corpus, 1)?;
    Ok((corpus, vocab))
}

/// Randomizes parameters that start at exactly zero or one (biases, gains,
/// the entity table) so every tensor is probed away from its init.
fn perturb(model: &mut Model, rng: &mut ChaCha8Rng) {
    for (_, p) in model.params_mut() {
        for v in &mut p.value {
            *v += rng.random_range(-0.5..0.5);
        }
    }
}

pub const CHECK_TASKS: [&str; 5] = ["tagger", "qa-baseline", "qa-jem", "fitb-baseline", "fitb-entity"];

/// Full-model check (backbone plus one head) on a handful of generated
/// sentences, dropout off. `encoder` defaults to [`check_encoder_config`].
pub fn model_check(
    task: &str,
    encoder: Option<EncoderConfig>,
    opts: GradCheckOptions,
    n_examples: usize,
) -> Result<CheckResult> {
    let seed = opts.seed;
    let (corpus, vocab) = check_data(seed)?;
    let mut enc = encoder.unwrap_or_else(|| check_encoder_config(vocab.len(), seed));
    enc.vocab_size = vocab.len();
    enc.dropout = 0.0;
    enc.seed = seed;
    let numerals = NumeralVocab::from_vocabulary(&vocab)?;
    let task_cfg = match task {
        "tagger" => Task::Tagger,
        "qa-baseline" => Task::Qa { mode: QaMode::Baseline },
        "qa-jem" => Task::Qa { mode: QaMode::Jem },
        "fitb-baseline" => Task::Fitb {
            mode: FitbMode::Baseline,
            n_numerals: numerals.len(),
        },
        "fitb-entity" => Task::Fitb {
            mode: FitbMode::Entity,
            n_numerals: numerals.len(),
        },
        other => return Err(crate::error::Error::invalid(format!("unknown grad-check task `{other}`"))),
    };
    let max_len = enc.max_len;
    let mut model = Model::new(ModelConfig {
        encoder: enc,
        task: task_cfg.clone(),
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    perturb(&mut model, &mut rng);
    let sentences = &corpus.sentences[..n_examples.clamp(1, corpus.len())];
    let loss: Box<dyn FnMut(&mut Model, bool) -> Result<f64>> = match task_cfg {
        Task::Tagger => {
            let seqs: Vec<_> = sentences
                .iter()
                .map(|s| encode(s, &vocab, max_len, None))
                .collect::<Result<_>>()?;
            Box::new(move |m, back| {
                let mut l = 0.0;
                for (s, q) in sentences.iter().zip(&seqs) {
                    l += tagger_loss(m, q, s, back.then_some(1.0), None)?;
                }
                Ok(l)
            })
        }
        Task::Qa { .. } => {
            let items: Vec<_> = sentences
                .iter()
                .map(|s| {
                    let q = encode(s, &vocab, max_len, None)?;
                    let e = crate::encoder::gold_entities(&q, s);
                    Ok((q, e, s.answer_span.unwrap()))
                })
                .collect::<Result<_>>()?;
            Box::new(move |m, back| {
                let mut l = 0.0;
                for (q, e, a) in &items {
                    l += qa_loss(m, q, Some(e), *a, back.then_some(1.0), None)?;
                }
                Ok(l)
            })
        }
        Task::Fitb { mode, .. } => {
            let items: Vec<_> = sentences
                .iter()
                .map(|s| fitb_example(s, &vocab, &numerals, mode, max_len, None))
                .collect::<Result<_>>()?;
            Box::new(move |m, back| {
                let mut l = 0.0;
                for ex in &items {
                    l += fitb_loss(m, ex, back.then_some(1.0), None)?;
                }
                Ok(l)
            })
        }
    };
    run_check(task, &mut model, loss, opts)
}

/// Every model-level check with the default backbone.
pub fn model_checks(opts: GradCheckOptions) -> Result<Vec<CheckResult>> {
    CHECK_TASKS
        .iter()
        .map(|t| model_check(t, None, opts, 1))
        .collect()
}
