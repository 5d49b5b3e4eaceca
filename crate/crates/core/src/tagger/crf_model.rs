use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::crf::{crf_nll_grad, viterbi};
use super::encoder::{encode_segments, SegmentEncoder, ToyEncoder};
use super::{Tag, TagSequence};
use crate::bundle::{load_model, save_model};
use crate::error::{Error, Result};
use crate::subtitle::Segment;
use crate::tensor::{
    adam_step, affine, affine_backward, sinusoidal_positions, xavier, AttentionCache,
    AttentionLayer, OptimState, ParamSet, Tensor,
};

const KIND: &str = "crf-tagger";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CrfConfig {
    pub dim: usize,
    pub heads: usize,
    pub buckets: usize,
    pub max_tokens: usize,
    /// Adds a learned score for the first tag. Off keeps the plain chain.
    pub start_bias: bool,
    pub seed: u64,
}

impl Default for CrfConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            heads: 2,
            buckets: 2048,
            max_tokens: 128,
            start_bias: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CrfTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for CrfTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            lr: 4e-3,
            weight_decay: 1e-4,
            batch_size: 4,
            seed: 0,
        }
    }
}

impl CrfTrainConfig {
    /// Learning rate used with a pretrained encoder.
    pub fn paper_defaults() -> Self {
        Self {
            lr: 4e-5,
            ..Self::default()
        }
    }
}

/// Segment texts of one video with gold tags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaggedSequence {
    #[serde(default)]
    pub video_id: String,
    pub segments: Vec<String>,
    pub tags: TagSequence,
}

impl TaggedSequence {
    pub fn from_segments(video_id: &str, segments: &[Segment], tags: TagSequence) -> Self {
        Self {
            video_id: video_id.to_string(),
            segments: segments.iter().map(|s| s.text.clone()).collect(),
            tags,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean loss of each epoch.
    pub loss_trace: Vec<f64>,
    /// Set when the last epoch's loss did not improve on the first.
    pub diagnostic: Option<String>,
}

/// Encoder, positional self-attention, linear emission head and a
/// transition matrix, all in one parameter set.
#[derive(Debug, Clone)]
pub struct CrfModel<E: SegmentEncoder = ToyEncoder> {
    config: CrfConfig,
    encoder: E,
    context: AttentionLayer,
    params: ParamSet,
}

struct Pass<T> {
    traces: Vec<T>,
    ctx: AttentionCache,
    u: Tensor,
    l: Tensor,
}

impl CrfModel<ToyEncoder> {
    pub fn new(config: CrfConfig) -> Result<Self> {
        let mut enc = ToyEncoder::new("enc", config.dim);
        enc.buckets = config.buckets;
        enc.max_tokens = config.max_tokens;
        Self::with_encoder(enc, config)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_model(path.as_ref(), KIND, &self.config, &self.params)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (config, params) = load_model::<CrfConfig>(path.as_ref(), KIND)?;
        let mut model = Self::new(config)?;
        model.params.load_values(&params)?;
        Ok(model)
    }
}

impl<E: SegmentEncoder> CrfModel<E> {
    pub fn with_encoder(encoder: E, config: CrfConfig) -> Result<Self> {
        if encoder.dim() != config.dim {
            return Err(Error::Config(format!(
                "encoder width {} does not match model width {}",
                encoder.dim(),
                config.dim
            )));
        }
        let context = AttentionLayer::new("ctx", config.dim, config.heads)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamSet::new();
        encoder.init(&mut params, &mut rng)?;
        context.init(&mut params, &mut rng)?;
        params.insert("proj.w", xavier(&mut rng, config.dim, Tag::COUNT))?;
        params.insert("proj.b", Tensor::zeros(&[Tag::COUNT]))?;
        params.insert("crf.trans", Tensor::zeros(&[Tag::COUNT, Tag::COUNT]))?;
        if config.start_bias {
            params.insert("crf.start", Tensor::zeros(&[Tag::COUNT]))?;
        }
        Ok(Self {
            config,
            encoder,
            context,
            params,
        })
    }

    pub fn config(&self) -> &CrfConfig {
        &self.config
    }

    pub fn encoder(&self) -> &E {
        &self.encoder
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn transitions(&self) -> &Tensor {
        self.params
            .value("crf.trans")
            .expect("initialized in constructor")
    }

    /// `u = attention_layer(h + positions)`.
    pub fn contextualize(&self, h: &Tensor) -> Result<(Tensor, AttentionCache)> {
        contextualize_with(&self.context, &self.params, h)
    }

    /// Raw per-tag scores `u·W + b`, plus the start bias on row 0 when
    /// enabled.
    pub fn emission_scores(&self, u: &Tensor) -> Result<Tensor> {
        emission_scores_with(&self.params, u)
    }

    fn pass(&self, texts: &[impl AsRef<str>]) -> Result<Pass<E::Trace>> {
        let (h, traces) = encode_segments(texts, &self.encoder, &self.params)?;
        let (u, ctx) = self.contextualize(&h)?;
        let l = self.emission_scores(&u)?;
        Ok(Pass { traces, ctx, u, l })
    }

    pub fn emissions(&self, texts: &[impl AsRef<str>]) -> Result<Tensor> {
        Ok(self.pass(texts)?.l)
    }

    pub fn predict(&self, texts: &[impl AsRef<str>]) -> Result<TagSequence> {
        let l = self.emissions(texts)?;
        let (path, _) = viterbi(&l, self.transitions())?;
        TagSequence::from_indices(&path)
    }

    pub fn nll(&self, texts: &[impl AsRef<str>], tags: &TagSequence) -> Result<f64> {
        check_lengths(texts.len(), tags)?;
        let l = self.emissions(texts)?;
        Ok(crf_nll_grad(&l, self.transitions(), &tags.indices())?.loss)
    }

    /// Adds the gradient of the sequence NLL into the parameter gradient
    /// slots and returns the loss.
    pub fn nll_backward(&mut self, texts: &[impl AsRef<str>], tags: &TagSequence) -> Result<f64> {
        check_lengths(texts.len(), tags)?;
        let pass = self.pass(texts)?;
        let g = crf_nll_grad(&pass.l, self.transitions(), &tags.indices())?;
        let p = &mut self.params;
        p.accumulate("crf.trans", &g.transitions)?;
        if self.config.start_bias {
            p.accumulate("crf.start", &Tensor::vector(g.emissions.row(0).to_vec()))?;
        }
        let ag = affine_backward(&pass.u, p.value("proj.w")?, &g.emissions)?;
        p.accumulate("proj.w", &ag.w)?;
        p.accumulate("proj.b", &ag.b)?;
        let dh = self.context.backward(p, &pass.ctx, &ag.x)?;
        for (i, trace) in pass.traces.iter().enumerate() {
            self.encoder.backward(p, trace, dh.row(i))?;
        }
        Ok(g.loss)
    }

    pub fn train(
        &mut self,
        corpus: &[TaggedSequence],
        cfg: &CrfTrainConfig,
    ) -> Result<TrainReport> {
        if corpus.is_empty() {
            return Err(Error::Input("training corpus is empty".into()));
        }
        for seq in corpus {
            check_lengths(seq.segments.len(), &seq.tags)?;
        }
        if cfg.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        let mut opt = OptimState::new(cfg.lr, cfg.weight_decay)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut order: Vec<usize> = (0..corpus.len()).collect();
        let mut trace = Vec::with_capacity(cfg.epochs);
        self.params.zero_grads();
        for _ in 0..cfg.epochs {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for batch in order.chunks(cfg.batch_size) {
                for &i in batch {
                    total += self.nll_backward(&corpus[i].segments, &corpus[i].tags)?;
                }
                self.params.scale_grads(1.0 / batch.len() as f64);
                adam_step(&mut self.params, &mut opt)?;
            }
            trace.push(total / corpus.len() as f64);
        }
        let diagnostic = match (trace.first(), trace.last()) {
            (Some(first), Some(last)) if trace.len() > 1 && last >= first => {
                let msg = format!(
                    "training loss did not decrease: first epoch {first:.6}, last {last:.6}"
                );
                log::warn!("{msg}");
                Some(msg)
            }
            _ => None,
        };
        Ok(TrainReport {
            loss_trace: trace,
            diagnostic,
        })
    }

    /// Fraction of segments whose Viterbi tag matches gold.
    pub fn accuracy(&self, corpus: &[TaggedSequence]) -> Result<f64> {
        let (mut hit, mut total) = (0usize, 0usize);
        for seq in corpus {
            let pred = self.predict(&seq.segments)?;
            hit += pred
                .tags()
                .iter()
                .zip(seq.tags.tags())
                .filter(|(a, b)| a == b)
                .count();
            total += seq.tags.len();
        }
        Ok(if total == 0 {
            0.0
        } else {
            hit as f64 / total as f64
        })
    }
}

fn check_lengths(segments: usize, tags: &TagSequence) -> Result<()> {
    if segments != tags.len() {
        return Err(Error::Integrity(format!(
            "{} gold tags for {segments} segments",
            tags.len()
        )));
    }
    Ok(())
}

pub(crate) fn contextualize_with(
    layer: &AttentionLayer,
    params: &ParamSet,
    h: &Tensor,
) -> Result<(Tensor, AttentionCache)> {
    let pos = sinusoidal_positions(h.rows(), layer.dim())?;
    layer.forward(params, &h.add(&pos)?)
}

fn emission_scores_with(params: &ParamSet, u: &Tensor) -> Result<Tensor> {
    let mut l = affine(u, params.value("proj.w")?, params.value("proj.b")?)?;
    if let Ok(start) = params.value("crf.start") {
        for (v, s) in l.row_mut(0).iter_mut().zip(start.data()) {
            *v += s;
        }
    }
    Ok(l)
}
