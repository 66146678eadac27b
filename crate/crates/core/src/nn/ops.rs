use super::{Matrix, Param};
use crate::error::{Error, Result};

/// Probability floor applied before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;
pub const LN_EPS: f64 = 1e-12;
/// Additive attention mask for padding keys.
pub const MASK_NEG: f64 = -1e9;

/// Max-shifted softmax in place. Inputs must be finite.
pub fn softmax_in_place(x: &mut [f64]) {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in x.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in x.iter_mut() {
        *v /= sum;
    }
}

pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.iter().any(|x| x.is_nan()) {
        return Err(Error::NonFinite("NaN logit in softmax".into()));
    }
    let mut p = logits.to_vec();
    softmax_in_place(&mut p);
    Ok(p)
}

/// `-ln(max(p[target], 1e-12))`.
pub fn cross_entropy(probs: &[f64], target: usize) -> Result<f64> {
    let p = probs.get(target).ok_or_else(|| {
        Error::invalid(format!("target {target} out of range for {} classes", probs.len()))
    })?;
    Ok(-p.max(PROB_FLOOR).ln())
}

/// Gradient of `cross_entropy(softmax(z), target)` with respect to `z`, scaled.
pub fn softmax_ce_grad(probs: &[f64], target: usize, scale: f64) -> Vec<f64> {
    probs
        .iter()
        .enumerate()
        .map(|(k, p)| scale * (p - if k == target { 1.0 } else { 0.0 }))
        .collect()
}

fn check_linear(x: &Matrix, w: &Param, b: Option<&Param>) -> Result<()> {
    if w.shape().len() != 2 || w.cols() != x.cols {
        return Err(Error::Shape {
            left: x.shape().to_vec(),
            right: w.shape().to_vec(),
            context: "linear input vs weight [out, in]",
        });
    }
    if let Some(b) = b {
        if b.len() != w.rows() {
            return Err(Error::Shape {
                left: w.shape().to_vec(),
                right: b.shape().to_vec(),
                context: "linear weight vs bias",
            });
        }
    }
    Ok(())
}

/// `y_r = W x_r (+ b)` for every row `x_r`, with `W` stored `[out, in]`.
pub fn linear(x: &Matrix, w: &Param, b: Option<&Param>) -> Result<Matrix> {
    check_linear(x, w, b)?;
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx") {
        // SAFETY: AVX support checked above.
        return Ok(unsafe { linear_avx(x, w, b) });
    }
    Ok(linear_kernel(x, w, b))
}

// The AVX copies only widen element-wise loops; Rust never fuses a multiply
// and an add, so every result is bit-identical to the plain build.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx")]
unsafe fn linear_avx(x: &Matrix, w: &Param, b: Option<&Param>) -> Matrix {
    linear_kernel(x, w, b)
}

#[inline(always)]
fn linear_kernel(x: &Matrix, w: &Param, b: Option<&Param>) -> Matrix {
    let (n_out, n_in) = (w.rows(), w.cols());
    // transposed copy so the inner loop runs over contiguous outputs
    let mut wt = vec![0.0; n_in * n_out];
    for o in 0..n_out {
        for i in 0..n_in {
            wt[i * n_out + o] = w.value[o * n_in + i];
        }
    }
    let mut y = Matrix::zeros(x.rows, n_out);
    for r in 0..x.rows {
        let xr = x.row(r);
        let yr = y.row_mut(r);
        for (i, &xi) in xr.iter().enumerate() {
            let wrow = &wt[i * n_out..(i + 1) * n_out];
            for (yo, wo) in yr.iter_mut().zip(wrow) {
                *yo += xi * wo;
            }
        }
        if let Some(b) = b {
            for (yo, bo) in yr.iter_mut().zip(&b.value) {
                *yo += bo;
            }
        }
    }
    y
}

/// Accumulates `dW += g x^T`, `db += g` and returns `dx = W^T g`.
pub fn linear_backward(x: &Matrix, w: &mut Param, b: Option<&mut Param>, gy: &Matrix) -> Result<Matrix> {
    check_linear(x, w, None)?;
    let n_out = w.rows();
    if gy.rows != x.rows || gy.cols != n_out {
        return Err(Error::Shape {
            left: gy.shape().to_vec(),
            right: vec![x.rows, n_out],
            context: "linear upstream gradient",
        });
    }
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx") {
        // SAFETY: AVX support checked above.
        return Ok(unsafe { linear_backward_avx(x, w, b, gy) });
    }
    Ok(linear_backward_kernel(x, w, b, gy))
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx")]
unsafe fn linear_backward_avx(x: &Matrix, w: &mut Param, b: Option<&mut Param>, gy: &Matrix) -> Matrix {
    linear_backward_kernel(x, w, b, gy)
}

#[inline(always)]
fn linear_backward_kernel(x: &Matrix, w: &mut Param, b: Option<&mut Param>, gy: &Matrix) -> Matrix {
    let n_in = w.cols();
    let mut gx = Matrix::zeros(x.rows, n_in);
    for r in 0..x.rows {
        let xr = x.row(r);
        let gr = gy.row(r);
        let gxr = &mut gx.data[r * n_in..(r + 1) * n_in];
        for (o, &g) in gr.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let wrow = &w.value[o * n_in..(o + 1) * n_in];
            for (a, wv) in gxr.iter_mut().zip(wrow) {
                *a += g * wv;
            }
            let grow = &mut w.grad[o * n_in..(o + 1) * n_in];
            for (a, xv) in grow.iter_mut().zip(xr) {
                *a += g * xv;
            }
        }
    }
    if let Some(b) = b {
        for r in 0..gy.rows {
            for (a, g) in b.grad.iter_mut().zip(gy.row(r)) {
                *a += g;
            }
        }
    }
    gx
}

/// Row-wise layer normalization. Returns the output, normalized inputs and
/// per-row inverse standard deviations.
pub fn layer_norm(x: &Matrix, gain: &Param, bias: &Param) -> Result<(Matrix, Matrix, Vec<f64>)> {
    if gain.len() != x.cols || bias.len() != x.cols {
        return Err(Error::Shape {
            left: x.shape().to_vec(),
            right: gain.shape().to_vec(),
            context: "layer norm width",
        });
    }
    let d = x.cols as f64;
    let mut y = Matrix::zeros(x.rows, x.cols);
    let mut xhat = Matrix::zeros(x.rows, x.cols);
    let mut inv = Vec::with_capacity(x.rows);
    for r in 0..x.rows {
        let xr = x.row(r);
        let mean = xr.iter().sum::<f64>() / d;
        let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
        let is = 1.0 / (var + LN_EPS).sqrt();
        inv.push(is);
        let hr = xhat.row_mut(r);
        for (h, v) in hr.iter_mut().zip(xr) {
            *h = (v - mean) * is;
        }
        let hr = xhat.row(r).to_vec();
        for (j, yv) in y.row_mut(r).iter_mut().enumerate() {
            *yv = gain.value[j] * hr[j] + bias.value[j];
        }
    }
    Ok((y, xhat, inv))
}

pub fn layer_norm_backward(
    xhat: &Matrix,
    inv_std: &[f64],
    gain: &mut Param,
    bias: &mut Param,
    gy: &Matrix,
) -> Matrix {
    let d = xhat.cols as f64;
    let mut gx = Matrix::zeros(xhat.rows, xhat.cols);
    let mut gxhat = vec![0.0; xhat.cols];
    for r in 0..xhat.rows {
        let hr = xhat.row(r);
        let gr = gy.row(r);
        for j in 0..xhat.cols {
            gain.grad[j] += gr[j] * hr[j];
            bias.grad[j] += gr[j];
            gxhat[j] = gr[j] * gain.value[j];
        }
        let sum_g: f64 = gxhat.iter().sum();
        let sum_gh: f64 = gxhat.iter().zip(hr).map(|(g, h)| g * h).sum();
        let is = inv_std[r];
        for (j, out) in gx.row_mut(r).iter_mut().enumerate() {
            *out = is / d * (d * gxhat[j] - sum_g - hr[j] * sum_gh);
        }
    }
    gx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// Tanh-approximated GELU.
pub fn gelu(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

pub fn gelu_backward(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

/// Scatter-add of row gradients into an embedding table.
pub fn embedding_backward(table: &mut Param, ids: &[usize], g: &Matrix) {
    debug_assert_eq!(ids.len(), g.rows);
    for (r, &id) in ids.iter().enumerate() {
        for (a, v) in table.grad_row_mut(id).iter_mut().zip(g.row(r)) {
            *a += v;
        }
    }
}
