use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::corpus::{Corpus, IngestedVideo};
use super::Failure;
use crate::error::{Error, Result};
use crate::localizer::{LocalizerItem, LocalizerVideo};
use crate::metrics::EvalReport;
use crate::qg::{answer_window, format_question, question_words, QgModel, QgPair, QgSource};
use crate::subtitle::{
    align_timestamps, topic_segment, PunctuationSegmenter, Segment, TimeSpan, DEFAULT_WORD_BUDGET,
};
use crate::tagger::{
    table_template, tags_from_answers, CrfModel, PromptTagger, TagSequence, TaggedSequence,
};
use crate::text::tokenize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaggerKind {
    Crf,
    Prompt,
    /// Human-annotated, not generated.
    Gold,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub tagger: TaggerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template_id: Option<usize>,
}

/// One (video, question, answer span) record, in dataset line format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VqaTriplet {
    pub video_id: String,
    pub question: String,
    pub answer_start_s: f64,
    pub answer_end_s: f64,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TripletRules {
    pub min_question_words: usize,
    pub max_question_words: usize,
    pub min_answer_s: f64,
}

impl Default for TripletRules {
    fn default() -> Self {
        Self {
            min_question_words: 5,
            max_question_words: 19,
            min_answer_s: 5.0,
        }
    }
}

impl VqaTriplet {
    pub fn answer(&self) -> TimeSpan {
        TimeSpan {
            start_s: self.answer_start_s,
            end_s: self.answer_end_s,
        }
    }

    /// Checks the question length, answer length and answer placement.
    pub fn validate(&self, duration_s: f64, rules: &TripletRules) -> Result<()> {
        let words = question_words(&self.question);
        if !(rules.min_question_words..=rules.max_question_words).contains(&words) {
            return Err(Error::Schema(format!(
                "question has {words} words, outside {}..={}",
                rules.min_question_words, rules.max_question_words
            )));
        }
        let span = TimeSpan::new(self.answer_start_s, self.answer_end_s)
            .map_err(|e| Error::Schema(format!("answer span: {e}")))?;
        if span.duration() < rules.min_answer_s {
            return Err(Error::Schema(format!(
                "answer lasts {:.2}s, shorter than {}s",
                span.duration(),
                rules.min_answer_s
            )));
        }
        if span.end_s > duration_s {
            return Err(Error::Schema(format!(
                "answer ends at {}s after the video ({duration_s}s)",
                span.end_s
            )));
        }
        Ok(())
    }
}

/// Stable per-video ids: `{video_id}#{k}` for the k-th triplet of a video in
/// file order.
pub fn triplet_ids(triplets: &[VqaTriplet]) -> Vec<String> {
    let mut seen: HashMap<&str, usize> = HashMap::new();
    triplets
        .iter()
        .map(|t| {
            let k = seen.entry(&t.video_id).or_insert(0);
            *k += 1;
            format!("{}#{}", t.video_id, *k)
        })
        .collect()
}

/// Tags the segments of one video and names itself in triplet provenance.
pub trait SegmentTagger: Sync {
    fn tag(&self, segments: &[&str]) -> Result<TagSequence>;
    fn provenance(&self) -> Provenance;
}

/// A trained segment tagger of either family.
#[derive(Debug, Clone)]
pub enum Tagger {
    Crf(CrfModel),
    Prompt(PromptTagger),
}

impl Tagger {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        match self {
            Tagger::Crf(m) => m.save(path),
            Tagger::Prompt(m) => m.save(path),
        }
    }

    /// Loads either tagger family, dispatching on the saved model kind.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        match crate::bundle::model_kind(path)?.as_str() {
            "prompt-tagger" => Ok(Tagger::Prompt(PromptTagger::load(path)?)),
            _ => Ok(Tagger::Crf(CrfModel::load(path)?)),
        }
    }
}

impl SegmentTagger for Tagger {
    fn tag(&self, segments: &[&str]) -> Result<TagSequence> {
        match self {
            Tagger::Crf(m) => m.predict(segments),
            Tagger::Prompt(m) => m.predict(segments),
        }
    }

    fn provenance(&self) -> Provenance {
        match self {
            Tagger::Crf(_) => Provenance {
                tagger: TaggerKind::Crf,
                template_id: None,
            },
            Tagger::Prompt(m) => Provenance {
                tagger: TaggerKind::Prompt,
                template_id: (1..=9).find(|&id| {
                    table_template(id).is_ok_and(|t| t.as_str() == m.config().template.as_str())
                }),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerateConfig {
    pub word_budget: usize,
    pub beam: usize,
    pub rules: TripletRules,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            word_budget: DEFAULT_WORD_BUDGET,
            beam: 4,
            rules: TripletRules::default(),
        }
    }
}

/// Candidate answers dropped by the triplet rules, by reason.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterCounts {
    pub candidates: usize,
    pub question_length: usize,
    pub answer_length: usize,
    pub out_of_bounds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationOutput {
    pub triplets: Vec<VqaTriplet>,
    pub failures: Vec<Failure>,
    pub filtered: FilterCounts,
}

pub fn segment_video(video: &IngestedVideo, word_budget: usize) -> Result<Vec<Segment>> {
    let segs = topic_segment(&video.timeline, &PunctuationSegmenter { word_budget })?;
    align_timestamps(&segs, &video.timeline)
}

/// Answer spans from B-Seg-rooted runs of the repaired tags.
pub fn answer_spans(
    segments: &[Segment],
    tags: &TagSequence,
) -> Result<Vec<(TimeSpan, std::ops::Range<usize>)>> {
    if segments.len() != tags.len() {
        return Err(Error::dim("answer_spans", &[segments.len()], &[tags.len()]));
    }
    Ok(tags
        .repaired()
        .runs()
        .into_iter()
        .map(|r| {
            let span = TimeSpan {
                start_s: segments[r.start].span.start_s,
                end_s: segments[r.end - 1].span.end_s,
            };
            let words = segments[r.start].word_range.start..segments[r.end - 1].word_range.end;
            (span, words)
        })
        .collect())
}

fn video_triplets(
    video: &IngestedVideo,
    tagger: &(impl SegmentTagger + ?Sized),
    qg: &QgModel,
    cfg: &GenerateConfig,
) -> Result<(Vec<VqaTriplet>, FilterCounts)> {
    let segments = segment_video(video, cfg.word_budget)?;
    let texts: Vec<&str> = segments.iter().map(|s| s.text.as_str()).collect();
    let tags = tagger.tag(&texts)?;
    let mut out = Vec::new();
    let mut counts = FilterCounts::default();
    for (span, words) in answer_spans(&segments, &tags)? {
        counts.candidates += 1;
        let window = &video.timeline.words()[words];
        let generated = qg.generate(QgSource::Tokens(window), cfg.beam)?;
        let t = VqaTriplet {
            video_id: video.record.video_id.clone(),
            question: format_question(&generated.tokens),
            answer_start_s: span.start_s,
            answer_end_s: span.end_s,
            provenance: tagger.provenance(),
        };
        let q = question_words(&t.question);
        if !(cfg.rules.min_question_words..=cfg.rules.max_question_words).contains(&q) {
            counts.question_length += 1;
        } else if span.duration() < cfg.rules.min_answer_s {
            counts.answer_length += 1;
        } else if span.end_s > video.record.duration_s {
            counts.out_of_bounds += 1;
        } else {
            t.validate(video.record.duration_s, &cfg.rules)?;
            out.push(t);
        }
    }
    Ok((out, counts))
}

/// Segments, tags and questions every video in parallel. Output order
/// follows input order; a failing video is recorded and skipped.
pub fn generate_dataset(
    videos: &[IngestedVideo],
    tagger: &(impl SegmentTagger + ?Sized),
    qg: &QgModel,
    cfg: &GenerateConfig,
) -> GenerationOutput {
    let results: Vec<_> = videos
        .par_iter()
        .map(|v| video_triplets(v, tagger, qg, cfg))
        .collect();
    let mut out = GenerationOutput {
        triplets: Vec::new(),
        failures: Vec::new(),
        filtered: FilterCounts::default(),
    };
    for (v, r) in videos.iter().zip(results) {
        match r {
            Ok((ts, c)) => {
                out.triplets.extend(ts);
                out.filtered.candidates += c.candidates;
                out.filtered.question_length += c.question_length;
                out.filtered.answer_length += c.answer_length;
                out.filtered.out_of_bounds += c.out_of_bounds;
            }
            Err(e) => {
                log::warn!("video `{}` failed: {e}", v.record.video_id);
                out.failures
                    .push(Failure::new(&v.record.video_id, "generate", &e));
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub max: f64,
    pub min: f64,
}

impl Summary {
    fn of(values: &[f64]) -> Self {
        Self {
            mean: values.iter().sum::<f64>() / values.len() as f64,
            max: values.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            min: values.iter().cloned().fold(f64::INFINITY, f64::min),
        }
    }
}

/// Dataset-level counts and length summaries. Question and subtitle lengths
/// are in words (subtitle = words under the answer span), answers in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub triplets: usize,
    pub videos: usize,
    pub question_length: Summary,
    pub subtitle_length: Summary,
    pub answer_length: Summary,
}

pub fn dataset_stats(triplets: &[VqaTriplet], videos: &[IngestedVideo]) -> Result<DatasetStats> {
    if triplets.is_empty() {
        return Err(Error::Undefined("statistics of an empty dataset".into()));
    }
    let by_id: HashMap<&str, &IngestedVideo> = videos
        .iter()
        .map(|v| (v.record.video_id.as_str(), v))
        .collect();
    let mut subtitle = Vec::with_capacity(triplets.len());
    for t in triplets {
        let v = by_id.get(t.video_id.as_str()).ok_or_else(|| {
            Error::Input(format!("triplet refers to unknown video `{}`", t.video_id))
        })?;
        subtitle.push(answer_window(&v.timeline, &t.answer()).len() as f64);
    }
    let questions: Vec<f64> = triplets
        .iter()
        .map(|t| question_words(&t.question) as f64)
        .collect();
    let answers: Vec<f64> = triplets
        .iter()
        .map(|t| t.answer_end_s - t.answer_start_s)
        .collect();
    Ok(DatasetStats {
        triplets: triplets.len(),
        videos: triplets
            .iter()
            .map(|t| t.video_id.as_str())
            .collect::<BTreeSet<_>>()
            .len(),
        question_length: Summary::of(&questions),
        subtitle_length: Summary::of(&subtitle),
        answer_length: Summary::of(&answers),
    })
}

impl DatasetStats {
    pub fn to_report(&self) -> EvalReport {
        let mut r = EvalReport::new("dataset statistics");
        r.metric("# Question-Answer", self.triplets as f64);
        r.metric("# Videos", self.videos as f64);
        for (name, s) in [
            ("Question Length", &self.question_length),
            ("Subtitle Length", &self.subtitle_length),
            ("Visual Answer Length", &self.answer_length),
        ] {
            r.metric(format!("Mean {name}"), s.mean);
            r.metric(format!("Max {name}"), s.max);
            r.metric(format!("Min {name}"), s.min);
        }
        r
    }
}

/// Train/validation/test id lists.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

/// Question counts of the public medical answer-localization splits, used
/// as default split proportions.
pub const REFERENCE_SPLIT: [usize; 3] = [2710, 145, 155];

/// Splits triplet ids by video so no video spans two splits. Videos are
/// shuffled with `seed` and cut by `ratio`; ids keep file order within each
/// split.
pub fn split_by_video(triplets: &[VqaTriplet], ratio: [usize; 3], seed: u64) -> Result<Splits> {
    let total: usize = ratio.iter().sum();
    if total == 0 {
        return Err(Error::Config("split ratio must not be all zero".into()));
    }
    let mut vids: Vec<&str> = triplets
        .iter()
        .map(|t| t.video_id.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    vids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = vids.len();
    let n_val = (n * ratio[1] + total / 2) / total;
    let n_test = ((n * ratio[2] + total / 2) / total).min(n - n_val);
    let part: HashMap<&str, usize> = vids
        .iter()
        .enumerate()
        .map(|(i, v)| {
            (
                *v,
                if i < n_test {
                    2
                } else if i < n_test + n_val {
                    1
                } else {
                    0
                },
            )
        })
        .collect();
    let mut s = Splits {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for (t, id) in triplets.iter().zip(triplet_ids(triplets)) {
        match part[t.video_id.as_str()] {
            0 => s.train.push(id),
            1 => s.val.push(id),
            _ => s.test.push(id),
        }
    }
    Ok(s)
}

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, items: &[T]) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item)?;
        buf.push(b'\n');
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: format!("{}: {e}", path.display()),
        })?);
    }
    Ok(out)
}

pub fn write_json<T: Serialize + ?Sized>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    Ok(serde_json::from_slice(
        &std::fs::read(path).map_err(|e| Error::io(path, e))?,
    )?)
}

pub const DATASET_FILE: &str = "dataset.jsonl";
pub const STATS_FILE: &str = "stats.json";
pub const FAILURES_FILE: &str = "failures.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildSummary {
    pub selected_videos: usize,
    pub filtered: FilterCounts,
    pub failures: usize,
    pub stats: Option<DatasetStats>,
}

/// Generates the dataset for `videos` and writes the dataset, statistics,
/// failure manifest and split files into `out_dir`.
pub fn build_dataset(
    videos: &[IngestedVideo],
    mut failures: Vec<Failure>,
    tagger: &(impl SegmentTagger + ?Sized),
    qg: &QgModel,
    cfg: &GenerateConfig,
    seed: u64,
    out_dir: &Path,
) -> Result<BuildSummary> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let generated = generate_dataset(videos, tagger, qg, cfg);
    failures.extend(generated.failures);
    write_jsonl(out_dir.join(DATASET_FILE), &generated.triplets)?;
    write_json(out_dir.join(FAILURES_FILE), &failures)?;
    let stats = match dataset_stats(&generated.triplets, videos) {
        Ok(s) => {
            write_json(out_dir.join(STATS_FILE), &s)?;
            Some(s)
        }
        Err(Error::Undefined(_)) => {
            log::warn!("no triplets survived; {STATS_FILE} not written");
            None
        }
        Err(e) => return Err(e),
    };
    let splits = split_by_video(&generated.triplets, REFERENCE_SPLIT, seed)?;
    for (name, ids) in [
        ("train", &splits.train),
        ("val", &splits.val),
        ("test", &splits.test),
    ] {
        write_json(out_dir.join(format!("{name}.json")), ids)?;
    }
    Ok(BuildSummary {
        selected_videos: videos.len(),
        filtered: generated.filtered,
        failures: failures.len(),
        stats,
    })
}

/// Ingests the videos that `triplets` refer to, in manifest order.
pub fn ingest_referenced(corpus: &Corpus, triplets: &[VqaTriplet]) -> Result<Vec<IngestedVideo>> {
    let wanted: BTreeSet<&str> = triplets.iter().map(|t| t.video_id.as_str()).collect();
    for id in &wanted {
        if corpus.get(id).is_none() {
            return Err(Error::Input(format!(
                "video `{id}` is not in the corpus manifest"
            )));
        }
    }
    corpus
        .videos
        .iter()
        .filter(|r| wanted.contains(r.video_id.as_str()))
        .map(|r| corpus.ingest(r))
        .collect()
}

fn answers_by_video(triplets: &[VqaTriplet]) -> BTreeMap<&str, Vec<TimeSpan>> {
    let mut m: BTreeMap<&str, Vec<TimeSpan>> = BTreeMap::new();
    for t in triplets {
        m.entry(&t.video_id).or_default().push(t.answer());
    }
    m
}

/// Segment/tag training sequences from annotated answers. Videos without
/// answers contribute all-O sequences.
pub fn tagging_corpus(
    videos: &[IngestedVideo],
    gold: &[VqaTriplet],
    word_budget: usize,
) -> Result<Vec<TaggedSequence>> {
    let answers = answers_by_video(gold);
    videos
        .iter()
        .map(|v| {
            let segs = segment_video(v, word_budget)?;
            let spans = answers
                .get(v.record.video_id.as_str())
                .map(Vec::as_slice)
                .unwrap_or(&[]);
            Ok(TaggedSequence::from_segments(
                &v.record.video_id,
                &segs,
                tags_from_answers(&segs, spans),
            ))
        })
        .collect()
}

/// (answer words, question) pairs for the question generator.
pub fn qg_pairs(videos: &[IngestedVideo], gold: &[VqaTriplet]) -> Result<Vec<QgPair>> {
    let by_id: HashMap<&str, &IngestedVideo> = videos
        .iter()
        .map(|v| (v.record.video_id.as_str(), v))
        .collect();
    gold.iter()
        .map(|t| {
            let v = by_id
                .get(t.video_id.as_str())
                .ok_or_else(|| Error::Input(format!("no subtitles for video `{}`", t.video_id)))?;
            Ok(QgPair {
                window: answer_window(&v.timeline, &t.answer()),
                question: tokenize(&t.question),
            })
        })
        .collect()
}

/// Localizer items keyed by [`triplet_ids`]; feature tracks load when
/// `with_tracks` is set.
pub fn localizer_items(
    corpus: &Corpus,
    videos: &[IngestedVideo],
    triplets: &[VqaTriplet],
    with_tracks: bool,
) -> Result<Vec<LocalizerItem>> {
    let mut shared = HashMap::new();
    for v in videos {
        let track = if with_tracks {
            corpus.load_track(&v.record)?
        } else {
            None
        };
        let lv = LocalizerVideo {
            video_id: v.record.video_id.clone(),
            timeline: v.timeline.clone(),
            track,
            duration_s: Some(v.record.duration_s),
        };
        shared.insert(v.record.video_id.as_str(), std::sync::Arc::new(lv));
    }
    triplets
        .iter()
        .zip(triplet_ids(triplets))
        .map(|(t, id)| {
            let video = shared
                .get(t.video_id.as_str())
                .ok_or_else(|| Error::Input(format!("no subtitles for video `{}`", t.video_id)))?;
            Ok(LocalizerItem {
                video: video.clone(),
                question_id: id,
                question: t.question.clone(),
                gold: TimeSpan::new(t.answer_start_s, t.answer_end_s)?,
            })
        })
        .collect()
}
