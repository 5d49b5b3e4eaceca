use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{xavier, ParamSet, Tensor};
use crate::text::{fnv1a, tokenize};

/// Stand-in for a language model's mask token.
pub const MASK_TOKEN: &str = "<mask>";
pub const SEP_TOKEN: &str = "<sep>";
const EMPTY_TOKEN: &str = "<empty>";

/// Maps a token sequence to a fixed-width vector.
///
/// Parameters live in a caller-owned [`ParamSet`] so that a model can train
/// the encoder jointly with its own heads.
pub trait SegmentEncoder {
    /// Whatever `backward` needs from the forward pass.
    type Trace;

    fn dim(&self) -> usize;

    fn init<R: Rng>(&self, params: &mut ParamSet, rng: &mut R) -> Result<()>;

    /// Sequence representation of `tokens`.
    fn encode(&self, params: &ParamSet, tokens: &[String]) -> Result<(Vec<f64>, Self::Trace)>;

    /// Hidden state at the mask position of `tokens`.
    fn encode_masked(
        &self,
        params: &ParamSet,
        tokens: &[String],
        mask_index: usize,
    ) -> Result<(Vec<f64>, Self::Trace)>;

    /// Accumulates parameter gradients given `d output`.
    fn backward(&self, params: &mut ParamSet, trace: &Self::Trace, grad: &[f64]) -> Result<()>;
}

/// Hashed-bucket embeddings feeding a tanh recurrence
/// `r_t = tanh(e_t·Wx + r_{t−1}·Wh + b)`.
///
/// `encode` returns `r_T + mean_t(e_t)`: the final recurrent state keeps word
/// order, the embedding average keeps a bag-of-words signal that trains fast.
/// `encode_masked` runs the recurrence over the unmasked tokens in order and
/// feeds the mask token last, returning the state at that final mask step, so
/// the mask state has seen the whole prompt wherever the mask sits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyEncoder {
    pub prefix: String,
    pub dim: usize,
    pub buckets: usize,
    pub max_tokens: usize,
}

#[derive(Debug, Clone)]
pub struct ToyTrace {
    ids: Vec<usize>,
    emb: Vec<Vec<f64>>,
    /// `states[t]` is `r_t`; `states[0]` is the zero initial state.
    states: Vec<Vec<f64>>,
    with_mean: bool,
}

impl ToyEncoder {
    pub fn new(prefix: impl Into<String>, dim: usize) -> Self {
        Self {
            prefix: prefix.into(),
            dim,
            buckets: 2048,
            max_tokens: 128,
        }
    }

    fn key(&self, leaf: &str) -> String {
        format!("{}.{leaf}", self.prefix)
    }

    pub fn bucket(&self, token: &str) -> usize {
        (fnv1a(token.as_bytes()) % self.buckets as u64) as usize
    }

    fn run(
        &self,
        params: &ParamSet,
        tokens: &[&str],
        with_mean: bool,
    ) -> Result<(Vec<f64>, ToyTrace)> {
        let d = self.dim;
        let table = params.value(&self.key("emb"))?;
        let wx = params.value(&self.key("wx"))?;
        let wh = params.value(&self.key("wh"))?;
        let b = params.value(&self.key("b"))?;
        if table.shape() != [self.buckets, d] {
            return Err(Error::dim(
                "toy encoder embedding",
                table.shape(),
                &[self.buckets, d],
            ));
        }
        let ids: Vec<usize> = tokens.iter().map(|t| self.bucket(t)).collect();
        let emb: Vec<Vec<f64>> = ids.iter().map(|&i| table.row(i).to_vec()).collect();
        let mut states = vec![vec![0.0; d]];
        for e in &emb {
            let prev = states.last().expect("non-empty");
            let mut next = b.data().to_vec();
            for (i, (&ei, &ri)) in e.iter().zip(prev).enumerate() {
                let (xr, hr) = (wx.row(i), wh.row(i));
                for j in 0..d {
                    next[j] += ei * xr[j] + ri * hr[j];
                }
            }
            next.iter_mut().for_each(|v| *v = v.tanh());
            states.push(next);
        }
        let mut out = states.last().expect("non-empty").clone();
        if with_mean {
            let n = emb.len() as f64;
            for e in &emb {
                for (o, v) in out.iter_mut().zip(e) {
                    *o += v / n;
                }
            }
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(
                "toy encoder produced a non-finite state".into(),
            ));
        }
        Ok((
            out,
            ToyTrace {
                ids,
                emb,
                states,
                with_mean,
            },
        ))
    }
}

impl SegmentEncoder for ToyEncoder {
    type Trace = ToyTrace;

    fn dim(&self) -> usize {
        self.dim
    }

    fn init<R: Rng>(&self, params: &mut ParamSet, rng: &mut R) -> Result<()> {
        if self.dim == 0 || self.buckets == 0 || self.max_tokens == 0 {
            return Err(Error::Config("toy encoder sizes must be positive".into()));
        }
        let d = self.dim;
        let emb = (0..self.buckets * d)
            .map(|_| rng.gen_range(-0.5..0.5))
            .collect();
        params.insert(self.key("emb"), Tensor::new(vec![self.buckets, d], emb)?)?;
        params.insert(self.key("wx"), xavier(rng, d, d))?;
        params.insert(self.key("wh"), xavier(rng, d, d).scale(0.5))?;
        params.insert(self.key("b"), Tensor::zeros(&[d]))
    }

    /// Empty input is encoded as a single placeholder token; input longer
    /// than `max_tokens` is truncated.
    fn encode(&self, params: &ParamSet, tokens: &[String]) -> Result<(Vec<f64>, ToyTrace)> {
        let mut toks: Vec<&str> = tokens
            .iter()
            .take(self.max_tokens)
            .map(String::as_str)
            .collect();
        if toks.is_empty() {
            toks.push(EMPTY_TOKEN);
        }
        self.run(params, &toks, true)
    }

    fn encode_masked(
        &self,
        params: &ParamSet,
        tokens: &[String],
        mask_index: usize,
    ) -> Result<(Vec<f64>, ToyTrace)> {
        if mask_index >= tokens.len() {
            return Err(Error::Index {
                index: mask_index,
                len: tokens.len(),
            });
        }
        let mut order: Vec<&str> = tokens
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != mask_index)
            .map(|(_, t)| t.as_str())
            .take(self.max_tokens - 1)
            .collect();
        order.push(tokens[mask_index].as_str());
        self.run(params, &order, false)
    }

    fn backward(&self, params: &mut ParamSet, trace: &ToyTrace, grad: &[f64]) -> Result<()> {
        let d = self.dim;
        if grad.len() != d {
            return Err(Error::dim("toy encoder backward", &[grad.len()], &[d]));
        }
        let steps = trace.emb.len();
        let mut d_emb = vec![vec![0.0; d]; steps];
        if trace.with_mean {
            for row in &mut d_emb {
                for (r, g) in row.iter_mut().zip(grad) {
                    *r += g / steps as f64;
                }
            }
        }
        let wx = params.value(&self.key("wx"))?.clone();
        let wh = params.value(&self.key("wh"))?.clone();
        let mut d_wx = Tensor::zeros(&[d, d]);
        let mut d_wh = Tensor::zeros(&[d, d]);
        let mut d_b = vec![0.0; d];
        let mut d_r = grad.to_vec();
        for t in (0..steps).rev() {
            let r = &trace.states[t + 1];
            let prev = &trace.states[t];
            let da: Vec<f64> = d_r.iter().zip(r).map(|(g, r)| g * (1.0 - r * r)).collect();
            let mut next_dr = vec![0.0; d];
            for i in 0..d {
                let (ei, pi) = (trace.emb[t][i], prev[i]);
                let (gx, gh) = (d_wx.row_mut(i), &mut next_dr[i]);
                let (xr, hr) = (wx.row(i), wh.row(i));
                let mut acc_e = 0.0;
                for j in 0..d {
                    gx[j] += ei * da[j];
                    acc_e += da[j] * xr[j];
                    *gh += da[j] * hr[j];
                }
                d_emb[t][i] += acc_e;
                let gh_row = d_wh.row_mut(i);
                for j in 0..d {
                    gh_row[j] += pi * da[j];
                }
            }
            for (b, a) in d_b.iter_mut().zip(&da) {
                *b += a;
            }
            d_r = next_dr;
        }
        params.accumulate(&self.key("wx"), &d_wx)?;
        params.accumulate(&self.key("wh"), &d_wh)?;
        params.accumulate(&self.key("b"), &Tensor::vector(d_b))?;
        let emb_key = self.key("emb");
        for (t, &id) in trace.ids.iter().enumerate() {
            params.accumulate_row(&emb_key, id, &d_emb[t])?;
        }
        Ok(())
    }
}

/// Stacks `enc(s_i)` for every segment text into a `[k×d]` matrix.
pub fn encode_segments<E: SegmentEncoder>(
    texts: &[impl AsRef<str>],
    enc: &E,
    params: &ParamSet,
) -> Result<(Tensor, Vec<E::Trace>)> {
    if texts.is_empty() {
        return Err(Error::Input("no segments to encode".into()));
    }
    let d = enc.dim();
    let mut data = Vec::with_capacity(texts.len() * d);
    let mut traces = Vec::with_capacity(texts.len());
    for (i, text) in texts.iter().enumerate() {
        let (row, trace) = enc.encode(params, &tokenize(text.as_ref()))?;
        if row.len() != d {
            return Err(Error::Integrity(format!(
                "encoder returned width {} for segment {i}, expected {d}",
                row.len()
            )));
        }
        data.extend(row);
        traces.push(trace);
    }
    Ok((Tensor::new(vec![texts.len(), d], data)?, traces))
}
