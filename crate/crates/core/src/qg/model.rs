use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::vocab::Vocab;
use crate::bundle::{load_model, save_model};
use crate::error::{Error, Result};
use crate::tagger::TrainReport;
use crate::tensor::{
    adam_step, affine, affine_backward, log_sum_exp, sinusoidal_positions, softmax_xent,
    AttentionCache, AttentionLayer, FeedForward, FeedForwardCache, LayerNorm, LayerNormCache,
    MhaCache, MultiHeadAttention, OptimState, ParamSet, Tensor,
};

const KIND: &str = "question-generator";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum QgProfile {
    /// Plain encoder-decoder.
    #[default]
    BartStyle,
    /// Prepends a task-prefix token to the source.
    T5Style,
}

impl std::str::FromStr for QgProfile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bart-style" => Ok(Self::BartStyle),
            "t5-style" => Ok(Self::T5Style),
            other => Err(Error::Config(format!(
                "unknown question-generation profile `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QgConfig {
    pub dim: usize,
    pub heads: usize,
    /// Longest question in words, excluding the end marker.
    pub max_len: usize,
    /// Source tokens beyond this are dropped.
    pub max_source: usize,
    pub profile: QgProfile,
    pub seed: u64,
}

impl Default for QgConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            heads: 2,
            max_len: 19,
            max_source: 256,
            profile: QgProfile::BartStyle,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QgTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for QgTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            lr: 4e-3,
            weight_decay: 1e-4,
            batch_size: 2,
            seed: 0,
        }
    }
}

impl QgTrainConfig {
    pub fn paper_defaults() -> Self {
        Self {
            lr: 4e-5,
            ..Self::default()
        }
    }
}

/// What the encoder reads: subtitle words, or externally computed states
/// (one row per window word) whose gradient is handed back to the caller.
#[derive(Debug, Clone, Copy)]
pub enum QgSource<'a> {
    Tokens(&'a [String]),
    States(&'a Tensor),
}

/// Answer-window words and the question asked about them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QgPair {
    pub window: Vec<String>,
    pub question: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub tokens: Vec<String>,
    /// Mean log-probability per emitted token, the end marker included when
    /// it was emitted.
    pub score: f64,
}

/// Pre-norm decoder block: causal self-attention, cross-attention over the
/// encoder memory, feed-forward, each with a residual connection.
#[derive(Debug, Clone)]
struct DecoderLayer {
    ln1: LayerNorm,
    self_attn: MultiHeadAttention,
    ln2: LayerNorm,
    cross: MultiHeadAttention,
    ln3: LayerNorm,
    ffn: FeedForward,
}

struct DecoderCache {
    ln1: LayerNormCache,
    self_attn: MhaCache,
    ln2: LayerNormCache,
    cross: MhaCache,
    ln3: LayerNormCache,
    ffn: FeedForwardCache,
}

impl DecoderLayer {
    fn new(prefix: &str, dim: usize, heads: usize) -> Result<Self> {
        Ok(Self {
            ln1: LayerNorm::new(format!("{prefix}.ln1"), dim),
            self_attn: MultiHeadAttention::new(format!("{prefix}.self"), dim, heads, true)?,
            ln2: LayerNorm::new(format!("{prefix}.ln2"), dim),
            cross: MultiHeadAttention::new(format!("{prefix}.cross"), dim, heads, false)?,
            ln3: LayerNorm::new(format!("{prefix}.ln3"), dim),
            ffn: FeedForward::new(format!("{prefix}.ffn"), dim, 2 * dim),
        })
    }

    fn init(&self, params: &mut ParamSet, rng: &mut impl Rng) -> Result<()> {
        self.ln1.init(params)?;
        self.self_attn.init(params, rng)?;
        self.ln2.init(params)?;
        self.cross.init(params, rng)?;
        self.ln3.init(params)?;
        self.ffn.init(params, rng)
    }

    fn forward(
        &self,
        params: &ParamSet,
        y: &Tensor,
        memory: &Tensor,
    ) -> Result<(Tensor, DecoderCache)> {
        let (a, ln1) = self.ln1.forward(params, y)?;
        let (s, self_attn) = self.self_attn.forward(params, &a, &a)?;
        let y1 = y.add(&s)?;
        let (b, ln2) = self.ln2.forward(params, &y1)?;
        let (c, cross) = self.cross.forward(params, &b, memory)?;
        let y2 = y1.add(&c)?;
        let (e, ln3) = self.ln3.forward(params, &y2)?;
        let (f, ffn) = self.ffn.forward(params, &e)?;
        let cache = DecoderCache {
            ln1,
            self_attn,
            ln2,
            cross,
            ln3,
            ffn,
        };
        Ok((y2.add(&f)?, cache))
    }

    /// Returns `(d y, d memory)`.
    fn backward(
        &self,
        params: &mut ParamSet,
        cache: &DecoderCache,
        grad: &Tensor,
    ) -> Result<(Tensor, Tensor)> {
        let d_e = self.ffn.backward(params, &cache.ffn, grad)?;
        let mut d_y2 = grad.clone();
        d_y2.add_assign(&self.ln3.backward(params, &cache.ln3, &d_e)?)?;
        let (d_b, d_mem) = self.cross.backward(params, &cache.cross, &d_y2)?;
        let mut d_y1 = d_y2;
        d_y1.add_assign(&self.ln2.backward(params, &cache.ln2, &d_b)?)?;
        let (dq, dkv) = self.self_attn.backward(params, &cache.self_attn, &d_y1)?;
        let mut d_y = d_y1;
        d_y.add_assign(&self.ln1.backward(params, &cache.ln1, &dq.add(&dkv)?)?)?;
        Ok((d_y, d_mem))
    }
}

struct SourcePass {
    /// Embedding-table rows feeding each source row, when the row came from
    /// the table.
    rows: Vec<Option<usize>>,
    enc: AttentionCache,
    memory: Tensor,
    /// Leading rows that are not caller-supplied states.
    lead: usize,
}

#[derive(Debug, Clone)]
pub struct QgModel {
    config: QgConfig,
    vocab: Vocab,
    encoder: AttentionLayer,
    decoder: DecoderLayer,
    params: ParamSet,
}

#[derive(Serialize, Deserialize)]
struct Saved {
    config: QgConfig,
    vocab: Vec<String>,
}

impl QgModel {
    pub fn new(config: QgConfig, vocab: Vocab) -> Result<Self> {
        if config.max_len < 5 {
            return Err(Error::Config(format!(
                "max question length must be ≥ 5, got {}",
                config.max_len
            )));
        }
        if config.max_source == 0 {
            return Err(Error::Config("max source length must be positive".into()));
        }
        let (d, v) = (config.dim, vocab.len());
        let encoder = AttentionLayer::new("qg.enc", d, config.heads)?;
        let decoder = DecoderLayer::new("qg.dec", d, config.heads)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamSet::new();
        let table = |rng: &mut ChaCha8Rng| {
            Tensor::new(
                vec![v, d],
                (0..v * d).map(|_| rng.gen_range(-0.5..0.5)).collect(),
            )
        };
        params.insert("qg.src", table(&mut rng)?)?;
        params.insert("qg.tgt", table(&mut rng)?)?;
        encoder.init(&mut params, &mut rng)?;
        decoder.init(&mut params, &mut rng)?;
        // A zero output layer starts from the uniform distribution.
        params.insert("qg.out.w", Tensor::zeros(&[d, v]))?;
        params.insert("qg.out.b", Tensor::zeros(&[v]))?;
        Ok(Self {
            config,
            vocab,
            encoder,
            decoder,
            params,
        })
    }

    pub fn config(&self) -> &QgConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn source(&self, src: QgSource<'_>) -> Result<SourcePass> {
        let d = self.config.dim;
        let table = self.params.value("qg.src")?;
        let mut rows: Vec<Option<usize>> = Vec::new();
        if self.config.profile == QgProfile::T5Style {
            rows.push(Some(Vocab::TASK));
        }
        let x = match src {
            QgSource::Tokens(tokens) => {
                let cap = tokens.len().min(self.config.max_source);
                rows.extend(tokens[..cap].iter().map(|t| Some(self.vocab.id(t))));
                if rows.is_empty() {
                    rows.push(Some(Vocab::BOS));
                }
                let ids: Vec<&[f64]> = rows
                    .iter()
                    .map(|r| table.row(r.expect("table rows")))
                    .collect();
                Tensor::stack_rows(&ids)?.add(&sinusoidal_positions(rows.len(), d)?)?
            }
            QgSource::States(states) => {
                if states.rank() != 2 || states.cols() != d {
                    return Err(Error::dim(
                        "qg source states",
                        states.shape(),
                        &[states.rows(), d],
                    ));
                }
                let lead: Vec<&[f64]> = rows
                    .iter()
                    .map(|r| table.row(r.expect("table rows")))
                    .collect();
                rows.extend(std::iter::repeat_n(None, states.rows()));
                if lead.is_empty() {
                    states.clone()
                } else {
                    let mut all = lead;
                    all.extend((0..states.rows()).map(|i| states.row(i)));
                    Tensor::stack_rows(&all)?
                }
            }
        };
        let lead = rows.len() - src_state_rows(src);
        let (memory, enc) = self.encoder.forward(&self.params, &x)?;
        Ok(SourcePass {
            rows,
            enc,
            memory,
            lead,
        })
    }

    fn target_input(&self, prefix: &[usize]) -> Result<Tensor> {
        let table = self.params.value("qg.tgt")?;
        let mut rows: Vec<&[f64]> = vec![table.row(Vocab::BOS)];
        rows.extend(prefix.iter().map(|&i| table.row(i)));
        Tensor::stack_rows(&rows)?.add(&sinusoidal_positions(rows.len(), self.config.dim)?)
    }

    fn question_ids(&self, question: &[String]) -> Result<Vec<usize>> {
        if question.is_empty() || question.len() > self.config.max_len {
            return Err(Error::Input(format!(
                "question must have 1..={} tokens, got {}",
                self.config.max_len,
                question.len()
            )));
        }
        Ok(self.vocab.ids(question))
    }

    /// Teacher-forced mean token cross-entropy of `question` + end marker.
    pub fn loss(&self, src: QgSource<'_>, question: &[String]) -> Result<f64> {
        let ids = self.question_ids(question)?;
        let pass = self.source(src)?;
        let y = self.target_input(&ids)?;
        let (h, _) = self.decoder.forward(&self.params, &y, &pass.memory)?;
        let logits = affine(
            &h,
            self.params.value("qg.out.w")?,
            self.params.value("qg.out.b")?,
        )?;
        let mut total = 0.0;
        for (i, t) in ids.iter().copied().chain([Vocab::EOS]).enumerate() {
            total += softmax_xent(logits.row(i), t)?.0;
        }
        Ok(total / (ids.len() + 1) as f64)
    }

    /// Like [`QgModel::loss`], also accumulating `d loss` into the parameter
    /// gradients scaled by `weight`. For a `States` source the gradient with
    /// respect to those states (times `weight`) is returned.
    pub fn loss_backward(
        &mut self,
        src: QgSource<'_>,
        question: &[String],
        weight: f64,
    ) -> Result<(f64, Option<Tensor>)> {
        let ids = self.question_ids(question)?;
        let pass = self.source(src)?;
        let y = self.target_input(&ids)?;
        let (h, dec) = self.decoder.forward(&self.params, &y, &pass.memory)?;
        let w_out = self.params.value("qg.out.w")?.clone();
        let logits = affine(&h, &w_out, self.params.value("qg.out.b")?)?;
        let m = ids.len() + 1;
        let mut d_logits = Tensor::zeros(&[m, self.vocab.len()]);
        let mut total = 0.0;
        for (i, t) in ids.iter().copied().chain([Vocab::EOS]).enumerate() {
            let (l, g) = softmax_xent(logits.row(i), t)?;
            total += l;
            for (dst, v) in d_logits.row_mut(i).iter_mut().zip(g.data()) {
                *dst = v * weight / m as f64;
            }
        }
        let ag = affine_backward(&h, &w_out, &d_logits)?;
        let p = &mut self.params;
        p.accumulate("qg.out.w", &ag.w)?;
        p.accumulate("qg.out.b", &ag.b)?;
        let (d_y, d_mem) = self.decoder.backward(p, &dec, &ag.x)?;
        for (i, tok) in [Vocab::BOS].iter().chain(&ids).enumerate() {
            p.accumulate_row("qg.tgt", *tok, d_y.row(i))?;
        }
        let d_x = self.encoder.backward(p, &pass.enc, &d_mem)?;
        for (i, row) in pass.rows.iter().enumerate() {
            if let Some(id) = row {
                p.accumulate_row("qg.src", *id, d_x.row(i))?;
            }
        }
        let d_states = match src {
            QgSource::States(s) => {
                let idx: Vec<usize> = (pass.lead..pass.lead + s.rows()).collect();
                Some(d_x.select_rows(&idx)?)
            }
            QgSource::Tokens(_) => None,
        };
        Ok((total / m as f64, d_states))
    }

    /// Log-probabilities of the next token after `prefix`.
    fn next_log_probs(&self, memory: &Tensor, prefix: &[usize]) -> Result<Vec<f64>> {
        let y = self.target_input(prefix)?;
        let (h, _) = self.decoder.forward(&self.params, &y, memory)?;
        let last = h.select_rows(&[h.rows() - 1])?;
        let w = self.params.value("qg.out.w")?;
        let b = self.params.value("qg.out.b")?;
        let logits: Vec<f64> = last
            .matmul(w)?
            .data()
            .iter()
            .zip(b.data())
            .map(|(a, b)| a + b)
            .collect();
        let z = log_sum_exp(&logits);
        Ok(logits.iter().map(|v| v - z).collect())
    }

    /// Mean log-probability per emitted token of `tokens`, followed by the
    /// end marker unless `tokens` already has the maximum length.
    pub fn sequence_score(&self, src: QgSource<'_>, tokens: &[String]) -> Result<f64> {
        let pass = self.source(src)?;
        let ids = self.vocab.ids(tokens);
        self.score_ids(&pass.memory, &ids)
    }

    fn score_ids(&self, memory: &Tensor, ids: &[usize]) -> Result<f64> {
        let mut total = 0.0;
        for i in 0..ids.len() {
            total += self.next_log_probs(memory, &ids[..i])?[ids[i]];
        }
        let mut n = ids.len();
        if ids.len() < self.config.max_len {
            total += self.next_log_probs(memory, ids)?[Vocab::EOS];
            n += 1;
        }
        Ok(total / n as f64)
    }

    /// Beam search ranked by length-normalized log-probability. Special
    /// tokens other than the end marker are never emitted. For `beam > 1`
    /// the greedy sequence is kept as a candidate, so the result never
    /// scores below greedy decoding.
    pub fn generate(&self, src: QgSource<'_>, beam: usize) -> Result<Generated> {
        if beam == 0 {
            return Err(Error::Config("beam size must be ≥ 1".into()));
        }
        let pass = self.source(src)?;
        let mut best = self.beam_search(&pass.memory, beam)?;
        if beam > 1 {
            let greedy = self.beam_search(&pass.memory, 1)?;
            if greedy.1 >= best.1 {
                best = greedy;
            }
        }
        Ok(Generated {
            tokens: best
                .0
                .iter()
                .map(|&i| self.vocab.token(i).to_string())
                .collect(),
            score: best.1,
        })
    }

    fn beam_search(&self, memory: &Tensor, beam: usize) -> Result<(Vec<usize>, f64)> {
        let max = self.config.max_len;
        let norm = |lp: f64, n: usize| lp / n.max(1) as f64;
        let mut live: Vec<(Vec<usize>, f64)> = vec![(Vec::new(), 0.0)];
        let mut done: Vec<(Vec<usize>, f64)> = Vec::new();
        while !live.is_empty() {
            // (tokens, log-prob, emitted count, finished)
            let mut cands: Vec<(Vec<usize>, f64, usize, bool)> = Vec::new();
            for (toks, lp) in &live {
                let logp = self.next_log_probs(memory, toks)?;
                cands.push((toks.clone(), lp + logp[Vocab::EOS], toks.len() + 1, true));
                for (id, &l) in logp.iter().enumerate() {
                    if !Vocab::is_special(id) {
                        let mut next = toks.clone();
                        next.push(id);
                        cands.push((next, lp + l, toks.len() + 1, false));
                    }
                }
            }
            // Stable sort keeps lower ids first among equal scores.
            cands.sort_by(|a, b| norm(b.1, b.2).total_cmp(&norm(a.1, a.2)));
            live.clear();
            for (toks, lp, n, finished) in cands.into_iter().take(beam) {
                if finished || toks.len() == max {
                    done.push((toks, norm(lp, n)));
                } else {
                    live.push((toks, lp));
                }
            }
        }
        let mut best = done[0].clone();
        for cand in &done[1..] {
            if cand.1 > best.1 {
                best = cand.clone();
            }
        }
        Ok(best)
    }

    pub fn train(&mut self, pairs: &[QgPair], cfg: &QgTrainConfig) -> Result<TrainReport> {
        if pairs.is_empty() {
            return Err(Error::Input("no question pairs to train on".into()));
        }
        if cfg.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        let mut opt = OptimState::new(cfg.lr, cfg.weight_decay)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        let mut trace = Vec::with_capacity(cfg.epochs);
        self.params.zero_grads();
        for _ in 0..cfg.epochs {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for batch in order.chunks(cfg.batch_size) {
                let w = 1.0 / batch.len() as f64;
                for &i in batch {
                    let pair = &pairs[i];
                    total += self
                        .loss_backward(QgSource::Tokens(&pair.window), &pair.question, w)?
                        .0;
                }
                adam_step(&mut self.params, &mut opt)?;
            }
            trace.push(total / pairs.len() as f64);
        }
        let diagnostic = match (trace.first(), trace.last()) {
            (Some(first), Some(last)) if trace.len() > 1 && last >= first => {
                let msg =
                    format!("question-generation loss did not decrease: {first:.6} -> {last:.6}");
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

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let saved = Saved {
            config: self.config.clone(),
            vocab: self.vocab.tokens().to_vec(),
        };
        save_model(path.as_ref(), KIND, &saved, &self.params)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (saved, params) = load_model::<Saved>(path.as_ref(), KIND)?;
        let mut model = Self::new(saved.config, Vocab::from_tokens(saved.vocab)?)?;
        model.params.load_values(&params)?;
        Ok(model)
    }
}

fn src_state_rows(src: QgSource<'_>) -> usize {
    match src {
        QgSource::States(s) => s.rows(),
        QgSource::Tokens(_) => 0,
    }
}
