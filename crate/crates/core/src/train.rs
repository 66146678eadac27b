//! Shared mini-batch loop: seeded shuffling, summed per-example losses scaled
//! by `1/batch`, one Adam step per batch, and best-on-validation selection.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Model;
use crate::nn::{adam_step, AdamHyper, HasParams, Param};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamHyper,
    pub seed: u64,
    /// Parameter-name prefixes excluded from updates.
    pub frozen: Vec<String>,
    #[serde(skip)]
    pub verbose: bool,
}

impl TrainConfig {
    pub fn new(epochs: usize, lr: f64, batch_size: usize, seed: u64) -> Self {
        TrainConfig {
            epochs,
            batch_size,
            adam: AdamHyper::with_lr(lr),
            seed,
            frozen: Vec::new(),
            verbose: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        self.adam.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub val_score: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_score: Option<f64>,
}

/// Runs `cfg.epochs` epochs over `n_train` examples.
///
/// `step(model, index, scale, rng)` must run forward and backward for one
/// example, scaling its gradient by `scale`, and return the unscaled loss.
/// `validate` scores the model after each epoch (higher is better); the
/// earliest best-scoring epoch is returned, rounded to checkpoint precision.
pub fn train_loop<S, V>(
    model: &mut Model,
    n_train: usize,
    cfg: &TrainConfig,
    mut step: S,
    mut validate: V,
) -> Result<(Model, TrainLog)>
where
    S: FnMut(&mut Model, usize, f64, &mut ChaCha8Rng) -> Result<f64>,
    V: FnMut(&Model) -> Result<Option<f64>>,
{
    cfg.validate()?;
    if n_train == 0 {
        return Err(Error::invalid("training set is empty"));
    }
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(2);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    dropout_rng.set_stream(3);

    model.zero_grads();
    let mut log = TrainLog::default();
    let mut best: Option<(f64, Model)> = None;
    let mut order: Vec<usize> = (0..n_train).collect();
    let mut global_step = 0usize;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let loss = step(model, i, scale, &mut dropout_rng)?;
                if !loss.is_finite() {
                    return Err(Error::Diverged {
                        epoch,
                        step: global_step,
                        loss,
                    });
                }
                total += loss;
            }
            let mut params: Vec<&mut Param> = Vec::new();
            for (name, p) in model.params_mut() {
                if cfg.frozen.iter().any(|f| name.starts_with(f.as_str())) {
                    p.zero_grad();
                } else {
                    params.push(p);
                }
            }
            adam_step(&mut params, &cfg.adam);
            global_step += 1;
            if !model.all_finite() {
                return Err(Error::Diverged {
                    epoch,
                    step: global_step,
                    loss: f64::NAN,
                });
            }
        }
        let val_score = validate(model)?;
        let mean_loss = total / n_train as f64;
        if cfg.verbose {
            match val_score {
                Some(v) => eprintln!("epoch {epoch:>3}  loss {mean_loss:.5}  val {v:.3}"),
                None => eprintln!("epoch {epoch:>3}  loss {mean_loss:.5}"),
            }
        }
        log.epochs.push(EpochLog {
            epoch,
            mean_loss,
            val_score,
        });
        let improved = match (&best, val_score) {
            (_, None) => true,
            (None, Some(_)) => true,
            (Some((b, _)), Some(v)) => v > *b,
        };
        if improved {
            log.best_epoch = epoch;
            log.best_score = val_score;
            best = Some((val_score.unwrap_or(f64::NEG_INFINITY), model.clone()));
        }
    }
    let (_, mut best) = best.expect("at least one epoch ran");
    best.round_to_f32();
    for (_, p) in best.params_mut() {
        p.adam_m.iter_mut().for_each(|x| *x = 0.0);
        p.adam_v.iter_mut().for_each(|x| *x = 0.0);
        p.step = 0;
    }
    Ok((best, log))
}
