use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Param;
use crate::error::{Error, Result};

/// Named access to every trainable tensor of a model, in a fixed order.
pub trait HasParams {
    fn params(&self) -> Vec<(String, &Param)>;
    fn params_mut(&mut self) -> Vec<(String, &mut Param)>;

    fn zero_grads(&mut self) {
        for (_, p) in self.params_mut() {
            p.zero_grad();
        }
    }

    fn param_count(&self) -> usize {
        self.params().iter().map(|(_, p)| p.len()).sum()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Minimum number of coordinates to probe (all of them when the model is smaller).
    pub min_coords: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            eps: 1e-5,
            min_coords: 200,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Tensor name, flat index, analytic and numeric gradient at the worst coordinate.
    pub worst: Option<(String, usize, f64, f64)>,
}

/// Compares analytic gradients with central differences
/// `(f(x+eps) - f(x-eps)) / 2eps`, relative error denominator
/// `max(|a|, |n|, 1e-8)`.
///
/// `loss(model, backward)` returns the loss; when `backward` is true it must
/// also accumulate gradients into the model's parameters.
///
/// Every tensor is probed: half of its share of coordinates among entries with
/// a nonzero analytic gradient, the rest uniformly.
pub fn grad_check<M, F>(model: &mut M, mut loss: F, opts: GradCheckOptions) -> Result<GradCheckReport>
where
    M: HasParams,
    F: FnMut(&mut M, bool) -> Result<f64>,
{
    model.zero_grads();
    let base = loss(model, true)?;
    if !base.is_finite() {
        return Err(Error::NonFinite(format!("loss {base}")));
    }
    let analytic: Vec<(String, Vec<f64>)> = model
        .params()
        .into_iter()
        .map(|(n, p)| (n, p.grad.clone()))
        .collect();
    model.zero_grads();

    let total: usize = analytic.iter().map(|(_, g)| g.len()).sum();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut coords: Vec<(usize, usize)> = Vec::new();
    if total <= opts.min_coords {
        for (t, (_, g)) in analytic.iter().enumerate() {
            coords.extend((0..g.len()).map(|i| (t, i)));
        }
    } else {
        let per_tensor = opts.min_coords.div_ceil(analytic.len().max(1)).max(4);
        for (t, (_, g)) in analytic.iter().enumerate() {
            let nonzero: Vec<usize> = (0..g.len()).filter(|&i| g[i] != 0.0).collect();
            let half = (per_tensor / 2).min(nonzero.len());
            for j in index::sample(&mut rng, nonzero.len(), half) {
                coords.push((t, nonzero[j]));
            }
            let rest = (per_tensor - half).min(g.len());
            for i in index::sample(&mut rng, g.len(), rest) {
                coords.push((t, i));
            }
        }
        coords.sort_unstable();
        coords.dedup();
        // overlap between the two draws can leave us short; top up uniformly
        let mut seen: std::collections::BTreeSet<(usize, usize)> = coords.iter().copied().collect();
        let offsets: Vec<usize> = analytic
            .iter()
            .scan(0, |acc, (_, g)| {
                let o = *acc;
                *acc += g.len();
                Some(o)
            })
            .collect();
        while seen.len() < opts.min_coords {
            let flat = rng.random_range(0..total);
            let t = offsets.partition_point(|&o| o <= flat) - 1;
            seen.insert((t, flat - offsets[t]));
        }
        coords = seen.into_iter().collect();
    }

    let mut report = GradCheckReport::default();
    for (t, i) in coords {
        let orig = model.params_mut()[t].1.value[i];
        model.params_mut()[t].1.value[i] = orig + opts.eps;
        let plus = loss(model, false)?;
        model.params_mut()[t].1.value[i] = orig - opts.eps;
        let minus = loss(model, false)?;
        model.params_mut()[t].1.value[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!("loss {plus} / {minus}")));
        }
        let numeric = (plus - minus) / (2.0 * opts.eps);
        let a = analytic[t].1[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        report.checked += 1;
        if report.worst.is_none() || rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst = Some((analytic[t].0.clone(), i, a, numeric));
        }
    }
    model.zero_grads();
    Ok(report)
}
