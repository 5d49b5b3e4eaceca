use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::crf_model::{TaggedSequence, TrainReport};
use super::encoder::{SegmentEncoder, ToyEncoder, MASK_TOKEN, SEP_TOKEN};
use super::{Tag, TagSequence};
use crate::bundle::{load_model, save_model};
use crate::error::{Error, Result};
use crate::tensor::{adam_step, softmax, softmax_xent, OptimState, ParamSet, Tensor};
use crate::text::tokenize;

const KIND: &str = "prompt-tagger";
const LABELS: &str = "prompt.labels";

/// The nine published prompt templates, by 1-based id.
pub const TABLE_TEMPLATES: [&str; 9] = [
    "[MASK] <SEG>",
    "[MASK] [SEP] <SEG>",
    "<SEG> [SEP] [MASK]",
    "This is the [MASK] step where <SEG>",
    "This is the [MASK] step where [SEP] <SEG>",
    "This is the [MASK] step <SEG>",
    "This is the [MASK] step [SEP] <SEG>",
    "[MASK] I am going to <SEG>",
    "[MASK] I am going to [SEP] <SEG>",
];

pub fn table_template(id: usize) -> Result<Template> {
    let text = id
        .checked_sub(1)
        .and_then(|i| TABLE_TEMPLATES.get(i))
        .ok_or_else(|| Error::Config(format!("template id must be in 1..=9, got {id}")))?;
    Template::parse(text)
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece {
    Mask,
    Sep,
    Seg,
    Word(String),
}

/// Prompt template with exactly one mask and one segment placeholder.
///
/// Placeholders are whole whitespace-separated words: `MASK` or `[MASK]`,
/// `SEG` or `<SEG>`, and the optional separator `SEP` or `[SEP]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Template {
    text: String,
    pieces: Vec<Piece>,
}

impl Template {
    pub fn parse(text: &str) -> Result<Self> {
        let pieces: Vec<Piece> = text
            .split_whitespace()
            .map(|w| match w {
                "MASK" | "[MASK]" => Piece::Mask,
                "SEG" | "<SEG>" => Piece::Seg,
                "SEP" | "[SEP]" => Piece::Sep,
                other => Piece::Word(other.to_string()),
            })
            .collect();
        for (want, name) in [(Piece::Mask, "MASK"), (Piece::Seg, "SEG")] {
            let n = pieces.iter().filter(|p| **p == want).count();
            if n != 1 {
                return Err(Error::Config(format!(
                    "template `{text}` must contain exactly one {name} placeholder, found {n}"
                )));
            }
        }
        Ok(Self {
            text: text.to_string(),
            pieces,
        })
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }
}

impl TryFrom<String> for Template {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        Template::parse(&s)
    }
}

impl From<Template> for String {
    fn from(t: Template) -> String {
        t.text
    }
}

impl fmt::Display for Template {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

/// Label word per tag, indexed by [`Tag::index`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "[String; 3]", into = "[String; 3]")]
pub struct Verbalizer {
    words: [String; 3],
}

impl Verbalizer {
    pub fn new(first: &str, next: &str, other: &str) -> Result<Self> {
        let words = [first.to_string(), next.to_string(), other.to_string()];
        for w in &words {
            if tokenize(w) != [w.as_str()] {
                return Err(Error::Config(format!(
                    "label word `{w}` is not a single normalized token"
                )));
            }
        }
        if words[0] == words[1] || words[0] == words[2] || words[1] == words[2] {
            return Err(Error::Config("label words must be distinct".into()));
        }
        Ok(Self { words })
    }

    pub fn word(&self, tag: Tag) -> &str {
        &self.words[tag.index()]
    }
}

impl Default for Verbalizer {
    fn default() -> Self {
        Self::new("first", "next", "other").expect("valid defaults")
    }
}

impl TryFrom<[String; 3]> for Verbalizer {
    type Error = Error;

    fn try_from(w: [String; 3]) -> Result<Self> {
        Verbalizer::new(&w[0], &w[1], &w[2])
    }
}

impl From<Verbalizer> for [String; 3] {
    fn from(v: Verbalizer) -> Self {
        v.words
    }
}

/// Prompt tokens ready for the encoder's masked mode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptInput {
    pub tokens: Vec<String>,
    pub mask_index: usize,
}

impl PromptInput {
    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }
}

/// Fills the template: the segment is tokenized and spliced in at the SEG
/// placeholder, the mask and separator placeholders become encoder special
/// tokens. Segment words are never re-scanned for placeholders.
pub fn apply_prompt(segment: &str, template: &Template) -> PromptInput {
    let mut tokens = Vec::new();
    let mut mask_index = 0;
    for piece in &template.pieces {
        match piece {
            Piece::Mask => {
                mask_index = tokens.len();
                tokens.push(MASK_TOKEN.to_string());
            }
            Piece::Sep => tokens.push(SEP_TOKEN.to_string()),
            Piece::Seg => tokens.extend(tokenize(segment)),
            Piece::Word(w) => tokens.extend(tokenize(w)),
        }
    }
    PromptInput { tokens, mask_index }
}

/// Softmax over `h^v · mask_state` for each label-embedding row `h^v`.
pub fn prompt_label_distribution(mask_state: &[f64], labels: &Tensor) -> Result<Vec<f64>> {
    if labels.rank() != 2 || labels.cols() != mask_state.len() {
        return Err(Error::dim(
            "prompt_label_distribution",
            labels.shape(),
            &[Tag::COUNT, mask_state.len()],
        ));
    }
    Ok(softmax(&label_logits(mask_state, labels)))
}

fn label_logits(mask_state: &[f64], labels: &Tensor) -> Vec<f64> {
    (0..labels.rows())
        .map(|v| {
            labels
                .row(v)
                .iter()
                .zip(mask_state)
                .map(|(a, b)| a * b)
                .sum()
        })
        .collect()
}

/// Tag whose label word is strictly most probable; any tie at the top is O.
pub fn verbalize(dist: &[f64]) -> Tag {
    let max = dist.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let winners: Vec<usize> = (0..dist.len()).filter(|&i| dist[i] == max).collect();
    match winners.as_slice() {
        [only] => Tag::from_index(*only).unwrap_or(Tag::O),
        _ => Tag::O,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptConfig {
    pub template: Template,
    #[serde(default)]
    pub verbalizer: Verbalizer,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_buckets")]
    pub buckets: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_dim() -> usize {
    32
}

fn default_buckets() -> usize {
    2048
}

impl PromptConfig {
    pub fn with_template(template: Template) -> Self {
        Self {
            template,
            verbalizer: Verbalizer::default(),
            dim: default_dim(),
            buckets: default_buckets(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for PromptTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            lr: 4e-3,
            weight_decay: 1e-4,
            batch_size: 8,
            seed: 0,
        }
    }
}

/// Tags each segment independently by filling the template's mask with a
/// label word.
#[derive(Debug, Clone)]
pub struct PromptTagger {
    config: PromptConfig,
    encoder: ToyEncoder,
    params: ParamSet,
}

impl PromptTagger {
    pub fn new(config: PromptConfig) -> Result<Self> {
        let mut encoder = ToyEncoder::new("enc", config.dim);
        encoder.buckets = config.buckets;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamSet::new();
        encoder.init(&mut params, &mut rng)?;
        let d = config.dim;
        let labels = (0..Tag::COUNT * d)
            .map(|_| rng.gen_range(-0.5..0.5))
            .collect();
        params.insert(LABELS, Tensor::new(vec![Tag::COUNT, d], labels)?)?;
        Ok(Self {
            config,
            encoder,
            params,
        })
    }

    pub fn config(&self) -> &PromptConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn mask_state(&self, segment: &str) -> Result<Vec<f64>> {
        let input = apply_prompt(segment, &self.config.template);
        Ok(self
            .encoder
            .encode_masked(&self.params, &input.tokens, input.mask_index)?
            .0)
    }

    pub fn distribution(&self, segment: &str) -> Result<Vec<f64>> {
        prompt_label_distribution(&self.mask_state(segment)?, self.params.value(LABELS)?)
    }

    pub fn predict(&self, segments: &[impl AsRef<str>]) -> Result<TagSequence> {
        segments
            .iter()
            .map(|s| Ok(verbalize(&self.distribution(s.as_ref())?)))
            .collect::<Result<Vec<_>>>()
            .map(TagSequence)
    }

    /// Cross-entropy of the gold label word at the mask; gradients are
    /// accumulated into the parameter slots.
    pub fn loss_backward(&mut self, segment: &str, gold: Tag) -> Result<f64> {
        let input = apply_prompt(segment, &self.config.template);
        let (state, trace) =
            self.encoder
                .encode_masked(&self.params, &input.tokens, input.mask_index)?;
        let labels = self.params.value(LABELS)?.clone();
        let (loss, dlogits) = softmax_xent(&label_logits(&state, &labels), gold.index())?;
        let d = state.len();
        let mut d_labels = Tensor::zeros(&[Tag::COUNT, d]);
        let mut d_state = vec![0.0; d];
        for v in 0..Tag::COUNT {
            let g = dlogits.data()[v];
            for j in 0..d {
                d_labels.set(v, j, g * state[j]);
                d_state[j] += g * labels.get(v, j);
            }
        }
        self.params.accumulate(LABELS, &d_labels)?;
        self.encoder.backward(&mut self.params, &trace, &d_state)?;
        Ok(loss)
    }

    pub fn loss(&self, segment: &str, gold: Tag) -> Result<f64> {
        let state = self.mask_state(segment)?;
        let logits = label_logits(&state, self.params.value(LABELS)?);
        Ok(softmax_xent(&logits, gold.index())?.0)
    }

    pub fn train(
        &mut self,
        corpus: &[TaggedSequence],
        cfg: &PromptTrainConfig,
    ) -> Result<TrainReport> {
        let examples: Vec<(&str, Tag)> = corpus
            .iter()
            .flat_map(|s| {
                s.segments
                    .iter()
                    .map(String::as_str)
                    .zip(s.tags.tags().iter().copied())
            })
            .collect();
        if examples.is_empty() {
            return Err(Error::Input("training corpus has no segments".into()));
        }
        if cfg.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        let mut opt = OptimState::new(cfg.lr, cfg.weight_decay)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut order: Vec<usize> = (0..examples.len()).collect();
        let mut trace = Vec::with_capacity(cfg.epochs);
        self.params.zero_grads();
        for _ in 0..cfg.epochs {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for batch in order.chunks(cfg.batch_size) {
                for &i in batch {
                    total += self.loss_backward(examples[i].0, examples[i].1)?;
                }
                self.params.scale_grads(1.0 / batch.len() as f64);
                adam_step(&mut self.params, &mut opt)?;
            }
            trace.push(total / examples.len() as f64);
        }
        let diagnostic = match (trace.first(), trace.last()) {
            (Some(first), Some(last)) if trace.len() > 1 && last >= first => {
                let msg = format!("prompt training loss did not decrease: {first:.6} -> {last:.6}");
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
        save_model(path.as_ref(), KIND, &self.config, &self.params)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (config, params) = load_model::<PromptConfig>(path.as_ref(), KIND)?;
        let mut model = Self::new(config)?;
        model.params.load_values(&params)?;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::fd_gradcheck;

    #[test]
    fn first_template_mask_leads() {
        let p = apply_prompt("do this", &table_template(1).unwrap());
        assert_eq!(p.text(), "<mask> do this");
        assert_eq!(p.mask_index, 0);
    }

    #[test]
    fn step_where_template_mask_index() {
        let p = apply_prompt("rinse the wound", &table_template(4).unwrap());
        assert_eq!(p.mask_index, 3);
        assert_eq!(p.tokens[p.mask_index], MASK_TOKEN);
        assert_eq!(p.text(), "this is the <mask> step where rinse the wound");
    }

    #[test]
    fn literal_placeholder_words_in_segment_are_text() {
        let p = apply_prompt(
            "MASK the SEG [MASK]",
            &Template::parse("MASK SEP SEG").unwrap(),
        );
        assert_eq!(p.mask_index, 0);
        assert_eq!(p.tokens, ["<mask>", "<sep>", "mask", "the", "seg", "mask"]);
    }

    #[test]
    fn every_published_template_parses() {
        for id in 1..=9 {
            let t = table_template(id).unwrap();
            let p = apply_prompt("x", &t);
            assert_eq!(p.tokens[p.mask_index], MASK_TOKEN, "template {id}");
        }
        assert!(table_template(0).is_err());
        assert!(table_template(10).is_err());
    }

    #[test]
    fn template_validation() {
        assert!(matches!(Template::parse("SEG only"), Err(Error::Config(_))));
        assert!(matches!(
            Template::parse("MASK MASK SEG"),
            Err(Error::Config(_))
        ));
        let t: Template = serde_json::from_str("\"SEG SEP MASK\"").unwrap();
        assert_eq!(serde_json::to_string(&t).unwrap(), "\"SEG SEP MASK\"");
    }

    #[test]
    fn verbalizer_rules() {
        assert!(Verbalizer::new("first", "first", "other").is_err());
        assert!(Verbalizer::new("two words", "next", "other").is_err());
        let v = Verbalizer::default();
        assert_eq!(v.word(Tag::BSeg), "first");
        assert_eq!(v.word(Tag::O), "other");
    }

    #[test]
    fn verbalize_and_ties() {
        assert_eq!(verbalize(&[0.7, 0.2, 0.1]), Tag::BSeg);
        assert_eq!(verbalize(&[0.1, 0.2, 0.7]), Tag::O);
        assert_eq!(verbalize(&[1.0 / 3.0; 3]), Tag::O);
        assert_eq!(verbalize(&[0.4, 0.4, 0.2]), Tag::O);
    }

    #[test]
    fn label_distribution_cases() {
        let state = [0.3, -0.2, 0.5];
        let same = Tensor::from_rows(&vec![vec![1.0, 2.0, 3.0]; 3]).unwrap();
        let p = prompt_label_distribution(&state, &same).unwrap();
        assert!(p.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));

        // Unit-norm state; the other two rows are orthogonal to it.
        let unit = [0.6, 0.0, 0.8];
        let peaked = Tensor::from_rows(&[
            unit.iter().map(|v| v * 10.0).collect(),
            vec![0.0, 1.0, 0.0],
            vec![0.8, 0.0, -0.6],
        ])
        .unwrap();
        let p = prompt_label_distribution(&unit, &peaked).unwrap();
        assert!(p[0] > 0.99);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let mut cfg = PromptConfig::with_template(table_template(5).unwrap());
        cfg.dim = 6;
        cfg.buckets = 32;
        let mut tagger = PromptTagger::new(cfg).unwrap();
        tagger
            .loss_backward("hold it for ten seconds", Tag::ISeg)
            .unwrap();
        let frozen = tagger.clone();
        let err = fd_gradcheck(
            |p| {
                let mut probe = frozen.clone();
                probe.params.load_values(p)?;
                probe.loss("hold it for ten seconds", Tag::ISeg)
            },
            tagger.params(),
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }
}
