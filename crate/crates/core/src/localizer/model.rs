use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::pack::{
    decode_span, gold_word_range, pack_input, span_to_timestamps, PackedInput, DEFAULT_MAX_LEN,
    DEFAULT_MAX_SPAN,
};
use super::vision::{
    align_frames, fuse_vision, fuse_vision_backward, FrameFeatureTrack, FusionCache,
    ToyVisionEncoder, VisionEncoder,
};
use crate::bundle::{load_model, save_model};
use crate::error::{Error, Result};
use crate::qg::{QgModel, QgSource};
use crate::subtitle::{TimeSpan, WordTimeline};
use crate::tensor::{
    adam_step, affine, affine_backward, sinusoidal_positions, softmax_xent, xavier, AttentionCache,
    AttentionLayer, OptimState, ParamSet, Tensor,
};
use crate::text::tokenize;

const KIND: &str = "answer-localizer";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub feature_dim: usize,
    pub vision_dim: usize,
    /// Pool frames under each word instead of over the whole video.
    #[serde(default)]
    pub per_word: bool,
    /// Bias of the identity-initialized projection; keeps the rectifier in
    /// its linear region at initialization.
    #[serde(default = "default_shift")]
    pub identity_shift: f64,
}

fn default_shift() -> f64 {
    10.0
}

impl FusionConfig {
    pub fn new(feature_dim: usize, vision_dim: usize) -> Self {
        Self {
            feature_dim,
            vision_dim,
            per_word: false,
            identity_shift: default_shift(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RcConfig {
    pub dim: usize,
    pub heads: usize,
    pub buckets: usize,
    pub max_len: usize,
    pub max_span: usize,
    pub fusion: Option<FusionConfig>,
    pub seed: u64,
}

impl Default for RcConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            heads: 2,
            buckets: 4096,
            max_len: DEFAULT_MAX_LEN,
            max_span: DEFAULT_MAX_SPAN,
            fusion: None,
            seed: 0,
        }
    }
}

/// Subtitle timeline and optional frame features of one video.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalizerVideo {
    pub video_id: String,
    pub timeline: WordTimeline,
    pub track: Option<FrameFeatureTrack>,
    pub duration_s: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct LocalizerItem {
    pub video: Arc<LocalizerVideo>,
    pub question_id: String,
    pub question: String,
    pub gold: TimeSpan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub video_id: String,
    pub question_id: String,
    pub start_s: f64,
    pub end_s: f64,
}

impl Prediction {
    pub fn span(&self) -> TimeSpan {
        TimeSpan {
            start_s: self.start_s,
            end_s: self.end_s,
        }
    }
}

#[derive(Debug, Clone)]
struct FusionPass {
    pooled: Tensor,
    cache: FusionCache,
}

/// Forward state of one packed question.
#[derive(Debug, Clone)]
pub struct RcPass {
    pub input: PackedInput,
    ctx: AttentionCache,
    fusion: Option<FusionPass>,
    /// Final per-position states fed to the span heads.
    pub states: Tensor,
    pub start: Vec<f64>,
    pub end: Vec<f64>,
}

impl RcPass {
    /// Best valid span as packed positions.
    pub fn decode(&self, max_span: usize) -> Result<(usize, usize)> {
        decode_span(&self.start, &self.end, &self.input.valid(), max_span)
    }
}

/// Reading-comprehension span model: hashed token embeddings with positions,
/// one self-attention layer, optional late vision fusion, start/end heads.
#[derive(Debug, Clone)]
pub struct RcModel {
    config: RcConfig,
    context: AttentionLayer,
    vision: Option<ToyVisionEncoder>,
    params: ParamSet,
}

impl RcModel {
    pub fn new(config: RcConfig) -> Result<Self> {
        let d = config.dim;
        if config.buckets < 2 || config.max_span == 0 {
            return Err(Error::Config(
                "need ≥ 2 buckets and a positive max span".into(),
            ));
        }
        let context = AttentionLayer::new("rc.ctx", d, config.heads)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamSet::new();
        let emb = (0..config.buckets * d)
            .map(|_| rng.gen_range(-0.5..0.5))
            .collect();
        params.insert("rc.emb", Tensor::new(vec![config.buckets, d], emb)?)?;
        context.init(&mut params, &mut rng)?;
        for head in ["rc.start", "rc.end"] {
            params.insert(format!("{head}.w"), xavier(&mut rng, d, 1))?;
            params.insert(format!("{head}.b"), Tensor::zeros(&[1]))?;
        }
        let vision = match &config.fusion {
            Some(f) => {
                let enc = ToyVisionEncoder {
                    prefix: "vis".into(),
                    feature_dim: f.feature_dim,
                    out_dim: f.vision_dim,
                };
                enc.init(&mut params, &mut rng)?;
                let mut w = Tensor::zeros(&[d + f.vision_dim, d]);
                for i in 0..d {
                    w.set(i, i, 1.0);
                }
                params.insert("rc.fuse.w", w)?;
                params.insert("rc.fuse.b", Tensor::filled(&[d], f.identity_shift))?;
                Some(enc)
            }
            None => None,
        };
        Ok(Self {
            config,
            context,
            vision,
            params,
        })
    }

    pub fn config(&self) -> &RcConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn pack(&self, question: &str, timeline: &WordTimeline) -> Result<PackedInput> {
        pack_input(
            &tokenize(question),
            timeline,
            self.config.max_len,
            self.config.buckets,
        )
    }

    fn pooled_frames(
        &self,
        input: &PackedInput,
        video: &LocalizerVideo,
        per_word: bool,
    ) -> Result<Tensor> {
        let track = video.track.as_ref().ok_or_else(|| {
            Error::Input(format!(
                "video `{}` has no frame features for the fusion model",
                video.video_id
            ))
        })?;
        if track.n_frames() == 0 {
            return Err(Error::Input(format!(
                "video `{}` has an empty feature track",
                video.video_id
            )));
        }
        let global = track
            .features()
            .sum_rows()
            .scale(1.0 / track.n_frames() as f64)
            .into_data();
        if !per_word {
            return Tensor::new(vec![1, global.len()], global);
        }
        let rows: Vec<Vec<f64>> = input
            .word_map
            .iter()
            .map(|w| match w {
                Some(w) => align_frames(track, &video.timeline.spans()[*w]),
                None => global.clone(),
            })
            .collect();
        Tensor::from_rows(&rows)
    }

    pub fn forward(&self, input: PackedInput, video: &LocalizerVideo) -> Result<RcPass> {
        let d = self.config.dim;
        let table = self.params.value("rc.emb")?;
        let rows: Vec<&[f64]> = input.tokens.iter().map(|&t| table.row(t)).collect();
        let x = Tensor::stack_rows(&rows)?.add(&sinusoidal_positions(input.len(), d)?)?;
        let (h, ctx) = self.context.forward(&self.params, &x)?;
        let (states, fusion) = match (&self.vision, &self.config.fusion) {
            (Some(enc), Some(f)) => {
                let pooled = self.pooled_frames(&input, video, f.per_word)?;
                let v = enc.encode(&self.params, &pooled)?;
                let (out, cache) = fuse_vision(&self.params, "rc.fuse", &h, &v)?;
                (out, Some(FusionPass { pooled, cache }))
            }
            _ => (h, None),
        };
        let head = |name: &str| -> Result<Vec<f64>> {
            let w = self.params.value(&format!("{name}.w"))?;
            let b = self.params.value(&format!("{name}.b"))?;
            Ok(affine(&states, w, b)?.into_data())
        };
        let (start, end) = (head("rc.start")?, head("rc.end")?);
        Ok(RcPass {
            input,
            ctx,
            fusion,
            states,
            start,
            end,
        })
    }

    /// Accumulates gradients given `d start`, `d end` and an optional extra
    /// gradient on the final states.
    pub fn backward(
        &mut self,
        pass: &RcPass,
        d_start: &[f64],
        d_end: &[f64],
        d_states: Option<&Tensor>,
    ) -> Result<()> {
        let n = pass.input.len();
        let mut ds = match d_states {
            Some(g) => g.clone(),
            None => Tensor::zeros(&[n, self.config.dim]),
        };
        for (name, g) in [("rc.start", d_start), ("rc.end", d_end)] {
            let gt = Tensor::new(vec![n, 1], g.to_vec())?;
            let wk = format!("{name}.w");
            let ag = affine_backward(&pass.states, self.params.value(&wk)?, &gt)?;
            self.params.accumulate(&wk, &ag.w)?;
            self.params.accumulate(&format!("{name}.b"), &ag.b)?;
            ds.add_assign(&ag.x)?;
        }
        let dh = match (&pass.fusion, &self.vision) {
            (Some(f), Some(enc)) => {
                let (dh, dv) = fuse_vision_backward(
                    &mut self.params,
                    "rc.fuse",
                    &f.cache,
                    &ds,
                    f.pooled.rows(),
                )?;
                enc.backward(&mut self.params, &f.pooled, &dv)?;
                dh
            }
            _ => ds,
        };
        let dx = self.context.backward(&mut self.params, &pass.ctx, &dh)?;
        for (i, &t) in pass.input.tokens.iter().enumerate() {
            self.params.accumulate_row("rc.emb", t, dx.row(i))?;
        }
        Ok(())
    }

    /// Start + end cross-entropy over subtitle positions, with the logit
    /// gradients (zero on masked positions).
    pub fn span_loss(
        pass: &RcPass,
        gold_i: usize,
        gold_j: usize,
    ) -> Result<(f64, Vec<f64>, Vec<f64>)> {
        let valid: Vec<usize> = (0..pass.input.len())
            .filter(|&p| pass.input.word_map[p].is_some())
            .collect();
        let mut total = 0.0;
        let mut grads = Vec::with_capacity(2);
        for (logits, gold) in [(&pass.start, gold_i), (&pass.end, gold_j)] {
            let target = valid.iter().position(|&p| p == gold).ok_or_else(|| {
                Error::Integrity(format!("gold position {gold} is not a subtitle word"))
            })?;
            let sub: Vec<f64> = valid.iter().map(|&p| logits[p]).collect();
            let (l, g) = softmax_xent(&sub, target)?;
            total += l;
            let mut full = vec![0.0; logits.len()];
            for (&p, &v) in valid.iter().zip(g.data()) {
                full[p] = v;
            }
            grads.push(full);
        }
        let end = grads.pop().expect("two heads");
        let start = grads.pop().expect("two heads");
        Ok((total, start, end))
    }

    /// Packed gold positions for `item`, or `None` when the gold words fall
    /// outside the packed subtitle.
    pub fn gold_positions(
        &self,
        input: &PackedInput,
        item: &LocalizerItem,
    ) -> Option<(usize, usize)> {
        let (a, b) = gold_word_range(&item.video.timeline, &item.gold)?;
        Some((input.position_of(a)?, input.position_of(b)?))
    }

    /// Span loss of one item, for checks and evaluation.
    pub fn item_loss(&self, item: &LocalizerItem) -> Result<f64> {
        let input = self.pack(&item.question, &item.video.timeline)?;
        let (gi, gj) = self
            .gold_positions(&input, item)
            .ok_or_else(|| Error::Input("gold span outside the packed subtitle".into()))?;
        let pass = self.forward(input, &item.video)?;
        Ok(Self::span_loss(&pass, gi, gj)?.0)
    }

    pub fn predict(&self, question: &str, video: &LocalizerVideo) -> Result<TimeSpan> {
        let input = self.pack(question, &video.timeline)?;
        let pass = self.forward(input, video)?;
        let (i, j) = pass.decode(self.config.max_span)?;
        let mut span = span_to_timestamps(i, j, &pass.input, &video.timeline)?;
        if let Some(d) = video.duration_s {
            span.end_s = span.end_s.min(d);
            span.start_s = span.start_s.min(span.end_s);
        }
        Ok(span)
    }

    pub fn predict_item(&self, item: &LocalizerItem) -> Result<Prediction> {
        let span = self.predict(&item.question, &item.video)?;
        Ok(Prediction {
            video_id: item.video.video_id.clone(),
            question_id: item.question_id.clone(),
            start_s: span.start_s,
            end_s: span.end_s,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_model(path.as_ref(), KIND, &self.config, &self.params)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (config, params) = load_model::<RcConfig>(path.as_ref(), KIND)?;
        let mut model = Self::new(config)?;
        model.params.load_values(&params)?;
        Ok(model)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LocalizerTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Weight of the question-generation term; 1 is the unit-weight cycle
    /// objective, 0 leaves plain span training.
    pub lambda: f64,
    pub seed: u64,
}

impl Default for LocalizerTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            lr: 5e-3,
            weight_decay: 1e-4,
            batch_size: 2,
            lambda: 1.0,
            seed: 0,
        }
    }
}

impl LocalizerTrainConfig {
    pub fn paper_defaults() -> Self {
        Self {
            lr: 5e-5,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizerReport {
    /// Per-epoch mean of `span loss + λ·question loss`.
    pub loss_trace: Vec<f64>,
    pub span_loss_trace: Vec<f64>,
    /// Empty when trained without a question generator.
    pub question_loss_trace: Vec<f64>,
    /// Items whose gold span fell outside the packed subtitle.
    pub skipped: usize,
    pub steps: usize,
}

/// Joint span and question-generation training.
///
/// With `qg = None` this is the plain span trainer. Otherwise each item also
/// decodes its current best span, feeds the final states of those positions
/// to the question generator and adds `λ` times its loss on the gold
/// question; that gradient reaches both the generator and the span model
/// through the shared states. The span choice itself is a hard argmax.
pub fn train_localizer(
    rc: &mut RcModel,
    mut qg: Option<&mut QgModel>,
    items: &[LocalizerItem],
    cfg: &LocalizerTrainConfig,
) -> Result<LocalizerReport> {
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    if !(cfg.lambda >= 0.0 && cfg.lambda.is_finite()) {
        return Err(Error::Config(format!(
            "λ must be finite and ≥ 0, got {}",
            cfg.lambda
        )));
    }
    if let Some(g) = qg.as_deref() {
        if g.config().dim != rc.config.dim {
            return Err(Error::Config(format!(
                "question generator width {} differs from span model width {}",
                g.config().dim,
                rc.config.dim
            )));
        }
    }
    let mut usable = Vec::with_capacity(items.len());
    for item in items {
        let input = rc.pack(&item.question, &item.video.timeline)?;
        match rc.gold_positions(&input, item) {
            Some(gold) => usable.push((item, gold)),
            None => log::warn!(
                "skipping question `{}`: gold span outside the packed subtitle",
                item.question_id
            ),
        }
    }
    let skipped = items.len() - usable.len();
    if usable.is_empty() {
        return Err(Error::Input("no trainable localization items".into()));
    }

    let mut rc_opt = OptimState::new(cfg.lr, cfg.weight_decay)?;
    let mut qg_opt = OptimState::new(cfg.lr, cfg.weight_decay)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..usable.len()).collect();
    let mut report = LocalizerReport {
        loss_trace: Vec::with_capacity(cfg.epochs),
        span_loss_trace: Vec::with_capacity(cfg.epochs),
        question_loss_trace: Vec::new(),
        skipped,
        steps: 0,
    };
    rc.params.zero_grads();
    if let Some(g) = qg.as_deref_mut() {
        g.params_mut().zero_grads();
    }
    let max_q = qg.as_deref().map(|g| g.config().max_len).unwrap_or(0);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut lf_sum, mut lg_sum) = (0.0, 0.0);
        for batch in order.chunks(cfg.batch_size) {
            let w = 1.0 / batch.len() as f64;
            for &k in batch {
                let (item, (gi, gj)) = usable[k];
                let input = rc.pack(&item.question, &item.video.timeline)?;
                let pass = rc.forward(input, &item.video)?;
                let (lf, ds, de) = RcModel::span_loss(&pass, gi, gj)?;
                lf_sum += lf;
                let mut d_states = None;
                if let Some(g) = qg.as_deref_mut() {
                    let (i, j) = pass.decode(rc.config.max_span)?;
                    let rows: Vec<usize> = (i..=j).collect();
                    let window = pass.states.select_rows(&rows)?;
                    let mut q = tokenize(&item.question);
                    q.truncate(max_q);
                    let src = QgSource::States(&window);
                    if cfg.lambda > 0.0 {
                        let (lg, d_win) = g.loss_backward(src, &q, cfg.lambda * w)?;
                        lg_sum += lg;
                        let d_win = d_win.expect("state source returns a gradient");
                        let mut full = Tensor::zeros(&[pass.input.len(), rc.config.dim]);
                        for (r, &p) in rows.iter().enumerate() {
                            full.row_mut(p).copy_from_slice(d_win.row(r));
                        }
                        d_states = Some(full);
                    } else {
                        lg_sum += g.loss(src, &q)?;
                    }
                }
                let scale = |v: Vec<f64>| v.into_iter().map(|x| x * w).collect::<Vec<_>>();
                rc.backward(&pass, &scale(ds), &scale(de), d_states.as_ref())?;
            }
            adam_step(&mut rc.params, &mut rc_opt)?;
            if let Some(g) = qg.as_deref_mut() {
                if cfg.lambda > 0.0 {
                    adam_step(g.params_mut(), &mut qg_opt)?;
                }
            }
            report.steps += 1;
        }
        let n = usable.len() as f64;
        report.span_loss_trace.push(lf_sum / n);
        if qg.is_some() {
            report.question_loss_trace.push(lg_sum / n);
            report.loss_trace.push((lf_sum + cfg.lambda * lg_sum) / n);
        } else {
            report.loss_trace.push(lf_sum / n);
        }
    }
    Ok(report)
}
