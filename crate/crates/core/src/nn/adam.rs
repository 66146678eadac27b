use serde::{Deserialize, Serialize};

use super::Param;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub eta: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    /// eta = 1e-3, beta1 = 0.9, beta2 = 0.999, epsilon = 1e-7.
    fn default() -> Self {
        AdamHyper {
            eta: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
        }
    }
}

impl AdamHyper {
    pub fn with_lr(eta: f64) -> Self {
        AdamHyper {
            eta,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.eta > 0.0
            && self.epsilon > 0.0
            && self.beta1 > 0.0
            && self.beta1 < 1.0
            && self.beta2 > 0.0
            && self.beta2 < 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid Adam hyperparameters {self:?}")))
        }
    }
}

/// One bias-corrected Adam update per parameter, then zeroes the gradients.
pub fn adam_step(params: &mut [&mut Param], hyper: &AdamHyper) {
    for p in params.iter_mut() {
        p.step += 1;
        let t = p.step as i32;
        let c1 = 1.0 - hyper.beta1.powi(t);
        let c2 = 1.0 - hyper.beta2.powi(t);
        #[cfg(target_arch = "x86_64")]
        if std::arch::is_x86_feature_detected!("avx") {
            // SAFETY: AVX support checked above.
            unsafe { update_avx(p, hyper, c1, c2) };
            continue;
        }
        update(p, hyper, c1, c2);
    }
}

// Same bits as the plain build: no fused multiply-add, IEEE sqrt and division.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx")]
unsafe fn update_avx(p: &mut Param, hyper: &AdamHyper, c1: f64, c2: f64) {
    update(p, hyper, c1, c2)
}

#[inline(always)]
fn update(p: &mut Param, hyper: &AdamHyper, c1: f64, c2: f64) {
    let n = p.value.len();
    let (value, grad) = (&mut p.value[..n], &mut p.grad[..n]);
    let (ms, vs) = (&mut p.adam_m[..n], &mut p.adam_v[..n]);
    for i in 0..n {
        let g = grad[i];
        let m = hyper.beta1 * ms[i] + (1.0 - hyper.beta1) * g;
        let v = hyper.beta2 * vs[i] + (1.0 - hyper.beta2) * g * g;
        ms[i] = m;
        vs[i] = v;
        let m_hat = m / c1;
        let v_hat = v / c2;
        value[i] -= hyper.eta * m_hat / (v_hat.sqrt() + hyper.epsilon);
        grad[i] = 0.0;
    }
}
