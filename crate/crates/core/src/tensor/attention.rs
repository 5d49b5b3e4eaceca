//! Transformer building blocks with explicit backward passes.
//!
//! Each block owns only its configuration and a name prefix; the weights
//! live in a shared [`ParamSet`] under `"{prefix}.…"` so that several blocks
//! can be trained by one optimizer.

use rand::Rng;

use super::ops::{affine, affine_backward, gelu, gelu_grad, softmax};
use super::{xavier, ParamSet, Tensor};
use crate::error::{Error, Result};

fn key(prefix: &str, name: &str) -> String {
    format!("{prefix}.{name}")
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct LayerNorm {
    prefix: String,
    dim: usize,
    eps: f64,
}

#[derive(Debug, Clone)]
pub struct LayerNormCache {
    normed: Tensor,
    inv_std: Vec<f64>,
}

impl LayerNorm {
    pub fn new(prefix: impl Into<String>, dim: usize) -> Self {
        Self {
            prefix: prefix.into(),
            dim,
            eps: 1e-5,
        }
    }

    pub fn init(&self, params: &mut ParamSet) -> Result<()> {
        params.insert(key(&self.prefix, "g"), Tensor::filled(&[self.dim], 1.0))?;
        params.insert(key(&self.prefix, "b"), Tensor::zeros(&[self.dim]))
    }

    pub fn forward(&self, params: &ParamSet, x: &Tensor) -> Result<(Tensor, LayerNormCache)> {
        let d = self.dim;
        if x.cols() != d {
            return Err(Error::dim("layer_norm", x.shape(), &[d]));
        }
        let g = params.value(&key(&self.prefix, "g"))?;
        let b = params.value(&key(&self.prefix, "b"))?;
        let n = x.rows();
        let mut normed = Tensor::zeros(&[n, d]);
        let mut out = Tensor::zeros(&[n, d]);
        let mut inv_std = Vec::with_capacity(n);
        for i in 0..n {
            let row = x.row(i);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + self.eps).sqrt();
            inv_std.push(inv);
            for j in 0..d {
                let xh = (row[j] - mean) * inv;
                normed.set(i, j, xh);
                out.set(i, j, xh * g.data()[j] + b.data()[j]);
            }
        }
        Ok((out, LayerNormCache { normed, inv_std }))
    }

    pub fn backward(
        &self,
        params: &mut ParamSet,
        cache: &LayerNormCache,
        grad_out: &Tensor,
    ) -> Result<Tensor> {
        let d = self.dim;
        let n = grad_out.rows();
        let g = params.value(&key(&self.prefix, "g"))?.clone();
        let mut dg = vec![0.0; d];
        let mut db = vec![0.0; d];
        let mut dx = Tensor::zeros(&[n, d]);
        for i in 0..n {
            let dy = grad_out.row(i);
            let xh = cache.normed.row(i);
            let mut dxh = vec![0.0; d];
            for j in 0..d {
                dg[j] += dy[j] * xh[j];
                db[j] += dy[j];
                dxh[j] = dy[j] * g.data()[j];
            }
            let sum_dxh: f64 = dxh.iter().sum();
            let sum_dxh_xh: f64 = dxh.iter().zip(xh).map(|(a, b)| a * b).sum();
            let scale = cache.inv_std[i] / d as f64;
            for j in 0..d {
                dx.set(
                    i,
                    j,
                    scale * (d as f64 * dxh[j] - sum_dxh - xh[j] * sum_dxh_xh),
                );
            }
        }
        params.accumulate(&key(&self.prefix, "g"), &Tensor::vector(dg))?;
        params.accumulate(&key(&self.prefix, "b"), &Tensor::vector(db))?;
        Ok(dx)
    }
}

// ---------------------------------------------------------------------------

/// Multi-head scaled dot-product attention with input and output projections.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    prefix: String,
    dim: usize,
    heads: usize,
    causal: bool,
}

#[derive(Debug, Clone)]
pub struct MhaCache {
    q_in: Tensor,
    kv_in: Tensor,
    q: Tensor,
    k: Tensor,
    v: Tensor,
    /// Attention weights per head, `[n×m]` each.
    weights: Vec<Tensor>,
    merged: Tensor,
}

impl MhaCache {
    pub fn weights(&self, head: usize) -> &Tensor {
        &self.weights[head]
    }
}

impl MultiHeadAttention {
    pub fn new(prefix: impl Into<String>, dim: usize, heads: usize, causal: bool) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::Config(format!(
                "hidden dimension {dim} is not divisible by {heads} heads"
            )));
        }
        Ok(Self {
            prefix: prefix.into(),
            dim,
            heads,
            causal,
        })
    }

    pub fn init(&self, params: &mut ParamSet, rng: &mut impl Rng) -> Result<()> {
        for p in ["q", "k", "v", "o"] {
            params.insert(
                key(&self.prefix, &format!("w{p}")),
                xavier(rng, self.dim, self.dim),
            )?;
            params.insert(
                key(&self.prefix, &format!("b{p}")),
                Tensor::zeros(&[self.dim]),
            )?;
        }
        Ok(())
    }

    fn project(&self, params: &ParamSet, x: &Tensor, p: &str) -> Result<Tensor> {
        affine(
            x,
            params.value(&key(&self.prefix, &format!("w{p}")))?,
            params.value(&key(&self.prefix, &format!("b{p}")))?,
        )
    }

    pub fn forward(
        &self,
        params: &ParamSet,
        q_in: &Tensor,
        kv_in: &Tensor,
    ) -> Result<(Tensor, MhaCache)> {
        let (n, m) = (q_in.rows(), kv_in.rows());
        if self.causal && n != m {
            return Err(Error::dim("causal attention", q_in.shape(), kv_in.shape()));
        }
        let q = self.project(params, q_in, "q")?;
        let k = self.project(params, kv_in, "k")?;
        let v = self.project(params, kv_in, "v")?;
        let dh = self.dim / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut merged = Tensor::zeros(&[n, self.dim]);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let off = h * dh;
            let mut a = Tensor::zeros(&[n, m]);
            for i in 0..n {
                let limit = if self.causal { i + 1 } else { m };
                let qi = &q.row(i)[off..off + dh];
                let scores: Vec<f64> = (0..limit)
                    .map(|j| {
                        let kj = &k.row(j)[off..off + dh];
                        qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale
                    })
                    .collect();
                let p = softmax(&scores);
                for (j, &pj) in p.iter().enumerate() {
                    a.set(i, j, pj);
                    let vj = &v.row(j)[off..off + dh];
                    let out = &mut merged.row_mut(i)[off..off + dh];
                    for (o, &vv) in out.iter_mut().zip(vj) {
                        *o += pj * vv;
                    }
                }
            }
            weights.push(a);
        }
        let out = self.project(params, &merged, "o")?;
        out.ensure_finite("attention")?;
        Ok((
            out,
            MhaCache {
                q_in: q_in.clone(),
                kv_in: kv_in.clone(),
                q,
                k,
                v,
                weights,
                merged,
            },
        ))
    }

    /// Returns gradients with respect to the query input and the key/value
    /// input. For self-attention the caller adds the two.
    pub fn backward(
        &self,
        params: &mut ParamSet,
        cache: &MhaCache,
        grad_out: &Tensor,
    ) -> Result<(Tensor, Tensor)> {
        let wo = params.value(&key(&self.prefix, "wo"))?.clone();
        let go = affine_backward(&cache.merged, &wo, grad_out)?;
        params.accumulate(&key(&self.prefix, "wo"), &go.w)?;
        params.accumulate(&key(&self.prefix, "bo"), &go.b)?;
        let d_merged = go.x;

        let (n, m) = (cache.q.rows(), cache.k.rows());
        let dh = self.dim / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut dq = Tensor::zeros(&[n, self.dim]);
        let mut dk = Tensor::zeros(&[m, self.dim]);
        let mut dv = Tensor::zeros(&[m, self.dim]);
        for h in 0..self.heads {
            let off = h * dh;
            let a = &cache.weights[h];
            for i in 0..n {
                let limit = if self.causal { i + 1 } else { m };
                let dout = &d_merged.row(i)[off..off + dh];
                // dA_ij = dO_i · V_j ; dV_j += A_ij dO_i
                let mut da = vec![0.0; limit];
                for j in 0..limit {
                    let vj = &cache.v.row(j)[off..off + dh];
                    da[j] = dout.iter().zip(vj).map(|(x, y)| x * y).sum();
                    let aij = a.get(i, j);
                    let dvj = &mut dv.row_mut(j)[off..off + dh];
                    for (g, &x) in dvj.iter_mut().zip(dout) {
                        *g += aij * x;
                    }
                }
                let dot: f64 = (0..limit).map(|j| da[j] * a.get(i, j)).sum();
                for j in 0..limit {
                    let ds = a.get(i, j) * (da[j] - dot) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    let kj: Vec<f64> = cache.k.row(j)[off..off + dh].to_vec();
                    let qi: Vec<f64> = cache.q.row(i)[off..off + dh].to_vec();
                    for (g, x) in dq.row_mut(i)[off..off + dh].iter_mut().zip(&kj) {
                        *g += ds * x;
                    }
                    for (g, x) in dk.row_mut(j)[off..off + dh].iter_mut().zip(&qi) {
                        *g += ds * x;
                    }
                }
            }
        }

        let mut grad_in = |p: &str, input: &Tensor, d: &Tensor| -> Result<Tensor> {
            let w = params.value(&key(&self.prefix, &format!("w{p}")))?.clone();
            let g = affine_backward(input, &w, d)?;
            params.accumulate(&key(&self.prefix, &format!("w{p}")), &g.w)?;
            params.accumulate(&key(&self.prefix, &format!("b{p}")), &g.b)?;
            Ok(g.x)
        };
        let dq_in = grad_in("q", &cache.q_in, &dq)?;
        let mut dkv_in = grad_in("k", &cache.kv_in, &dk)?;
        dkv_in.add_assign(&grad_in("v", &cache.kv_in, &dv)?)?;
        Ok((dq_in, dkv_in))
    }
}

// ---------------------------------------------------------------------------

/// Two-layer position-wise feed-forward network with a GELU in between.
#[derive(Debug, Clone)]
pub struct FeedForward {
    prefix: String,
    dim: usize,
    hidden: usize,
}

#[derive(Debug, Clone)]
pub struct FeedForwardCache {
    x: Tensor,
    pre: Tensor,
    act: Tensor,
}

impl FeedForward {
    pub fn new(prefix: impl Into<String>, dim: usize, hidden: usize) -> Self {
        Self {
            prefix: prefix.into(),
            dim,
            hidden,
        }
    }

    pub fn init(&self, params: &mut ParamSet, rng: &mut impl Rng) -> Result<()> {
        params.insert(key(&self.prefix, "w1"), xavier(rng, self.dim, self.hidden))?;
        params.insert(key(&self.prefix, "b1"), Tensor::zeros(&[self.hidden]))?;
        params.insert(key(&self.prefix, "w2"), xavier(rng, self.hidden, self.dim))?;
        params.insert(key(&self.prefix, "b2"), Tensor::zeros(&[self.dim]))
    }

    pub fn forward(&self, params: &ParamSet, x: &Tensor) -> Result<(Tensor, FeedForwardCache)> {
        let pre = affine(
            x,
            params.value(&key(&self.prefix, "w1"))?,
            params.value(&key(&self.prefix, "b1"))?,
        )?;
        let act = pre.map(gelu);
        let out = affine(
            &act,
            params.value(&key(&self.prefix, "w2"))?,
            params.value(&key(&self.prefix, "b2"))?,
        )?;
        Ok((
            out,
            FeedForwardCache {
                x: x.clone(),
                pre,
                act,
            },
        ))
    }

    pub fn backward(
        &self,
        params: &mut ParamSet,
        cache: &FeedForwardCache,
        grad_out: &Tensor,
    ) -> Result<Tensor> {
        let w2 = params.value(&key(&self.prefix, "w2"))?.clone();
        let g2 = affine_backward(&cache.act, &w2, grad_out)?;
        params.accumulate(&key(&self.prefix, "w2"), &g2.w)?;
        params.accumulate(&key(&self.prefix, "b2"), &g2.b)?;
        let mut d_pre = g2.x;
        for (g, &p) in d_pre.data_mut().iter_mut().zip(cache.pre.data()) {
            *g *= gelu_grad(p);
        }
        let w1 = params.value(&key(&self.prefix, "w1"))?.clone();
        let g1 = affine_backward(&cache.x, &w1, &d_pre)?;
        params.accumulate(&key(&self.prefix, "w1"), &g1.w)?;
        params.accumulate(&key(&self.prefix, "b1"), &g1.b)?;
        Ok(g1.x)
    }
}

// ---------------------------------------------------------------------------

/// One pre-norm transformer encoder layer: self-attention and feed-forward
/// sublayers, each wrapped in a residual connection. Output shape equals
/// input shape. Contains no positional signal of its own.
#[derive(Debug, Clone)]
pub struct AttentionLayer {
    ln1: LayerNorm,
    attn: MultiHeadAttention,
    ln2: LayerNorm,
    ffn: FeedForward,
    dim: usize,
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    ln1: LayerNormCache,
    attn: MhaCache,
    ln2: LayerNormCache,
    ffn: FeedForwardCache,
}

impl AttentionCache {
    pub fn attention_weights(&self, head: usize) -> &Tensor {
        self.attn.weights(head)
    }
}

impl AttentionLayer {
    pub fn new(prefix: &str, dim: usize, heads: usize) -> Result<Self> {
        Ok(Self {
            ln1: LayerNorm::new(key(prefix, "ln1"), dim),
            attn: MultiHeadAttention::new(key(prefix, "attn"), dim, heads, false)?,
            ln2: LayerNorm::new(key(prefix, "ln2"), dim),
            ffn: FeedForward::new(key(prefix, "ffn"), dim, 2 * dim),
            dim,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn init(&self, params: &mut ParamSet, rng: &mut impl Rng) -> Result<()> {
        self.ln1.init(params)?;
        self.attn.init(params, rng)?;
        self.ln2.init(params)?;
        self.ffn.init(params, rng)
    }

    pub fn forward(&self, params: &ParamSet, x: &Tensor) -> Result<(Tensor, AttentionCache)> {
        if x.rank() != 2 || x.cols() != self.dim {
            return Err(Error::dim(
                "attention_layer",
                x.shape(),
                &[x.rows(), self.dim],
            ));
        }
        let (a, ln1) = self.ln1.forward(params, x)?;
        let (s, attn) = self.attn.forward(params, &a, &a)?;
        let x1 = x.add(&s)?;
        let (b, ln2) = self.ln2.forward(params, &x1)?;
        let (f, ffn) = self.ffn.forward(params, &b)?;
        let out = x1.add(&f)?;
        out.ensure_finite("attention_layer")?;
        Ok((
            out,
            AttentionCache {
                ln1,
                attn,
                ln2,
                ffn,
            },
        ))
    }

    pub fn backward(
        &self,
        params: &mut ParamSet,
        cache: &AttentionCache,
        grad_out: &Tensor,
    ) -> Result<Tensor> {
        let d_b = self.ffn.backward(params, &cache.ffn, grad_out)?;
        let mut d_x1 = grad_out.clone();
        d_x1.add_assign(&self.ln2.backward(params, &cache.ln2, &d_b)?)?;
        let (dq, dkv) = self.attn.backward(params, &cache.attn, &d_x1)?;
        let d_a = dq.add(&dkv)?;
        let mut d_x = d_x1;
        d_x.add_assign(&self.ln1.backward(params, &cache.ln1, &d_a)?)?;
        Ok(d_x)
    }
}
