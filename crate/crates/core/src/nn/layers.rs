use rand::Rng;

use super::ops::{self, MASK_NEG};
use super::{Matrix, Param};
use crate::error::Result;

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub w: Param,
    pub b: Option<Param>,
}

impl Linear {
    pub fn new<R: Rng>(n_in: usize, n_out: usize, bias: bool, std: f64, rng: &mut R) -> Self {
        Linear {
            w: Param::truncated_normal(&[n_out, n_in], std, rng),
            b: bias.then(|| Param::zeros(&[n_out])),
        }
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        ops::linear(x, &self.w, self.b.as_ref())
    }

    pub fn backward(&mut self, x: &Matrix, gy: &Matrix) -> Result<Matrix> {
        ops::linear_backward(x, &mut self.w, self.b.as_mut(), gy)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm {
    pub gain: Param,
    pub bias: Param,
}

#[derive(Clone, Debug)]
pub struct LnCache {
    xhat: Matrix,
    inv_std: Vec<f64>,
}

impl LayerNorm {
    pub fn new(d: usize) -> Self {
        LayerNorm {
            gain: Param::filled(&[d], 1.0),
            bias: Param::zeros(&[d]),
        }
    }

    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, LnCache)> {
        let (y, xhat, inv_std) = ops::layer_norm(x, &self.gain, &self.bias)?;
        Ok((y, LnCache { xhat, inv_std }))
    }

    pub fn backward(&mut self, cache: &LnCache, gy: &Matrix) -> Matrix {
        ops::layer_norm_backward(&cache.xhat, &cache.inv_std, &mut self.gain, &mut self.bias, gy)
    }
}

/// Inverted dropout mask; `None` when inactive.
#[derive(Clone, Debug, Default)]
pub struct Dropout(Option<Vec<f64>>);

impl Dropout {
    pub fn sample<R: Rng>(len: usize, p: f64, rng: Option<&mut R>) -> Self {
        match rng {
            Some(rng) if p > 0.0 => {
                let keep = 1.0 / (1.0 - p);
                Dropout(Some(
                    (0..len)
                        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
                        .collect(),
                ))
            }
            _ => Dropout(None),
        }
    }

    pub fn apply(&self, x: &mut Matrix) {
        if let Some(mask) = &self.0 {
            for (v, m) in x.data.iter_mut().zip(mask) {
                *v *= m;
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

#[derive(Clone, Debug)]
pub struct FfnCache {
    x: Matrix,
    pre: Matrix,
    act: Matrix,
}

impl FeedForward {
    pub fn new<R: Rng>(d: usize, d_ffn: usize, std: f64, rng: &mut R) -> Self {
        FeedForward {
            up: Linear::new(d, d_ffn, true, std, rng),
            down: Linear::new(d_ffn, d, true, std, rng),
        }
    }

    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, FfnCache)> {
        let pre = self.up.forward(x)?;
        let mut act = pre.clone();
        act.data.iter_mut().for_each(|v| *v = ops::gelu(*v));
        let y = self.down.forward(&act)?;
        Ok((
            y,
            FfnCache {
                x: x.clone(),
                pre,
                act,
            },
        ))
    }

    pub fn backward(&mut self, cache: &FfnCache, gy: &Matrix) -> Result<Matrix> {
        let mut g = self.down.backward(&cache.act, gy)?;
        for (gv, p) in g.data.iter_mut().zip(&cache.pre.data) {
            *gv *= ops::gelu_backward(*p);
        }
        self.up.backward(&cache.x, &g)
    }
}

/// Multi-head scaled dot-product self-attention. The key projection carries
/// no bias: a key bias shifts every score in a row equally and cancels in the
/// softmax.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub n_heads: usize,
}

#[derive(Clone, Debug)]
pub struct AttentionCache {
    x: Matrix,
    q: Matrix,
    k: Matrix,
    v: Matrix,
    /// Per-head `T x T` attention weights.
    pub probs: Vec<Matrix>,
    ctx: Matrix,
}

impl MultiHeadAttention {
    pub fn new<R: Rng>(d: usize, n_heads: usize, std: f64, rng: &mut R) -> Self {
        MultiHeadAttention {
            query: Linear::new(d, d, true, std, rng),
            key: Linear::new(d, d, false, std, rng),
            value: Linear::new(d, d, true, std, rng),
            output: Linear::new(d, d, true, std, rng),
            n_heads,
        }
    }

    /// `attend[j]` is false for padding keys.
    pub fn forward(&self, x: &Matrix, attend: &[bool]) -> Result<(Matrix, AttentionCache)> {
        let t = x.rows;
        let d = x.cols;
        let dh = d / self.n_heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let q = self.query.forward(x)?;
        let k = self.key.forward(x)?;
        let v = self.value.forward(x)?;
        let mut ctx = Matrix::zeros(t, d);
        let mut probs = Vec::with_capacity(self.n_heads);
        for h in 0..self.n_heads {
            let cols = h * dh..(h + 1) * dh;
            let mut a = Matrix::zeros(t, t);
            for i in 0..t {
                let qi = &q.row(i)[cols.clone()];
                let row = a.row_mut(i);
                for j in 0..t {
                    let kj = &k.row(j)[cols.clone()];
                    let s: f64 = qi.iter().zip(kj).map(|(x, y)| x * y).sum::<f64>() * scale;
                    row[j] = if attend[j] { s } else { s + MASK_NEG };
                }
                ops::softmax_in_place(row);
            }
            for i in 0..t {
                let ci = &mut ctx.data[i * d + h * dh..i * d + (h + 1) * dh];
                for j in 0..t {
                    let w = a.get(i, j);
                    if w == 0.0 {
                        continue;
                    }
                    for (c, vv) in ci.iter_mut().zip(&v.row(j)[cols.clone()]) {
                        *c += w * vv;
                    }
                }
            }
            probs.push(a);
        }
        let y = self.output.forward(&ctx)?;
        Ok((
            y,
            AttentionCache {
                x: x.clone(),
                q,
                k,
                v,
                probs,
                ctx,
            },
        ))
    }

    pub fn backward(&mut self, cache: &AttentionCache, gy: &Matrix) -> Result<Matrix> {
        let t = cache.x.rows;
        let d = cache.x.cols;
        let dh = d / self.n_heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let gctx = self.output.backward(&cache.ctx, gy)?;
        let mut gq = Matrix::zeros(t, d);
        let mut gk = Matrix::zeros(t, d);
        let mut gv = Matrix::zeros(t, d);
        let mut ga = vec![0.0; t];
        for h in 0..self.n_heads {
            let off = h * dh;
            let a = &cache.probs[h];
            for i in 0..t {
                let gci = &gctx.row(i)[off..off + dh];
                // dA[i,j] = dctx_i . v_j ;  dV_j += A[i,j] dctx_i
                for j in 0..t {
                    let vj = &cache.v.row(j)[off..off + dh];
                    ga[j] = gci.iter().zip(vj).map(|(x, y)| x * y).sum();
                    let w = a.get(i, j);
                    if w != 0.0 {
                        let gvj = &mut gv.data[j * d + off..j * d + off + dh];
                        for (acc, g) in gvj.iter_mut().zip(gci) {
                            *acc += w * g;
                        }
                    }
                }
                let dot: f64 = (0..t).map(|j| a.get(i, j) * ga[j]).sum();
                let qi = &cache.q.row(i)[off..off + dh];
                for j in 0..t {
                    let gs = a.get(i, j) * (ga[j] - dot) * scale;
                    if gs == 0.0 {
                        continue;
                    }
                    let kj = &cache.k.row(j)[off..off + dh];
                    let gqi = &mut gq.data[i * d + off..i * d + off + dh];
                    for (acc, kv) in gqi.iter_mut().zip(kj) {
                        *acc += gs * kv;
                    }
                    let gkj = &mut gk.data[j * d + off..j * d + off + dh];
                    for (acc, qv) in gkj.iter_mut().zip(qi) {
                        *acc += gs * qv;
                    }
                }
            }
        }
        let mut gx = self.query.backward(&cache.x, &gq)?;
        gx.add_assign(&self.key.backward(&cache.x, &gk)?);
        gx.add_assign(&self.value.backward(&cache.x, &gv)?);
        Ok(gx)
    }
}
