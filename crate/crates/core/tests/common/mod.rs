//! Small hand-built fixtures shared by the integration tests.
#![allow(dead_code)]

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vlf_core::localizer::{FrameFeatureTrack, LocalizerItem, LocalizerVideo};
use vlf_core::subtitle::{build_word_timeline, Cue, CueList, TimeSpan};
use vlf_core::tagger::{Tag, TagSequence, TaggedSequence};
use vlf_core::tensor::Tensor;

pub fn cues(items: &[(&str, f64, f64)]) -> CueList {
    CueList::new(
        items
            .iter()
            .map(|&(t, s, e)| Cue {
                text: t.into(),
                span: TimeSpan::new(s, e).unwrap(),
            })
            .collect(),
    )
}

/// A ramp track: frame `t` has every feature equal to `t / n`.
pub fn ramp_track(n_frames: usize, dim: usize) -> FrameFeatureTrack {
    let data = (0..n_frames * dim)
        .map(|i| (i / dim) as f64 / n_frames as f64)
        .collect();
    FrameFeatureTrack::new(Tensor::new(vec![n_frames, dim], data).unwrap()).unwrap()
}

/// Five videos, each with a distinct answer cue that shares words with its
/// question, surrounded by filler cues.
pub fn localization_fixture(with_track: bool) -> Vec<LocalizerItem> {
    let specs: [(&str, &str, usize); 5] = [
        (
            "how do i stop a cut bleeding",
            "press a clean cloth on the cut to stop bleeding",
            2,
        ),
        (
            "how should i cool a burn",
            "cool the burn under running water",
            1,
        ),
        (
            "what helps a nosebleed",
            "pinch the soft nose and lean forward for a nosebleed",
            3,
        ),
        (
            "how do i wrap a sprained ankle",
            "wrap the sprained ankle with an elastic bandage",
            2,
        ),
        (
            "how long should i wash hands",
            "wash hands with soap for twenty seconds",
            1,
        ),
    ];
    let filler = [
        "welcome back to the channel",
        "today we talk about first aid",
        "remember to like and subscribe",
        "thanks for watching see you soon",
    ];
    specs
        .iter()
        .enumerate()
        .map(|(k, &(question, answer, at))| {
            let mut items: Vec<(String, f64, f64)> = Vec::new();
            let mut t = 0.0;
            let mut gold = None;
            for c in 0..5 {
                let text = if c == at {
                    answer
                } else {
                    filler[(c + k) % filler.len()]
                };
                let len = 6.0 + c as f64;
                if c == at {
                    gold = Some(TimeSpan::new(t, t + len).unwrap());
                }
                items.push((text.to_string(), t, t + len));
                t += len;
            }
            let refs: Vec<(&str, f64, f64)> =
                items.iter().map(|(s, a, b)| (s.as_str(), *a, *b)).collect();
            let timeline = build_word_timeline(&cues(&refs));
            let video = LocalizerVideo {
                video_id: format!("vid{k}"),
                timeline,
                track: with_track.then(|| ramp_track(t.ceil() as usize, 4)),
                duration_s: Some(t),
            };
            LocalizerItem {
                video: Arc::new(video),
                question_id: format!("q{k}"),
                question: question.to_string(),
                gold: gold.unwrap(),
            }
        })
        .collect()
}

/// Models trained on the bundled corpus: classifier on the manifest labels,
/// CRF tagger and question generator on the gold answers.
pub struct MiniPipeline {
    pub corpus: vlf_core::pipeline::Corpus,
    pub selected: Vec<vlf_core::pipeline::IngestedVideo>,
    pub failures: Vec<vlf_core::pipeline::Failure>,
    pub gold: Vec<vlf_core::pipeline::VqaTriplet>,
    pub tagger: vlf_core::pipeline::Tagger,
    pub qg: vlf_core::qg::QgModel,
}

pub fn mini_pipeline() -> MiniPipeline {
    use vlf_core::pipeline::*;
    use vlf_core::qg::{QgConfig, QgModel, QgTrainConfig, Vocab};
    use vlf_core::subtitle::DEFAULT_WORD_BUDGET;
    use vlf_core::tagger::{CrfConfig, CrfModel, CrfTrainConfig};

    let corpus = Corpus::load(mini_corpus_manifest()).unwrap();
    let all: Vec<IngestedVideo> = corpus
        .videos
        .iter()
        .map(|r| corpus.ingest(r).unwrap())
        .collect();
    let docs: Vec<(String, VideoClass)> = all
        .iter()
        .map(|v| (v.text(), v.record.category.unwrap()))
        .collect();
    let clf = BowClassifier::train(&docs, &BowTrainConfig::default()).unwrap();
    let (selected, failures) = select_instructional(&corpus, &corpus.videos, &clf);
    let gold: Vec<VqaTriplet> = read_jsonl(mini_corpus_gold()).unwrap();

    let seqs = tagging_corpus(&all, &gold, DEFAULT_WORD_BUDGET).unwrap();
    let mut crf = CrfModel::new(CrfConfig {
        seed: 1,
        ..CrfConfig::default()
    })
    .unwrap();
    crf.train(
        &seqs,
        &CrfTrainConfig {
            epochs: 60,
            seed: 1,
            ..CrfTrainConfig::default()
        },
    )
    .unwrap();

    let pairs = qg_pairs(&all, &gold).unwrap();
    let vocab = Vocab::build(
        pairs
            .iter()
            .flat_map(|p| [p.window.as_slice(), p.question.as_slice()]),
        1,
    );
    let mut qg = QgModel::new(
        QgConfig {
            seed: 1,
            ..QgConfig::default()
        },
        vocab,
    )
    .unwrap();
    qg.train(
        &pairs,
        &QgTrainConfig {
            epochs: 60,
            seed: 1,
            ..QgTrainConfig::default()
        },
    )
    .unwrap();

    MiniPipeline {
        corpus,
        selected,
        failures,
        gold,
        tagger: Tagger::Crf(crf),
        qg,
    }
}

const B_WORDS: [&str; 4] = ["first", "begin", "start", "open"];
const I_WORDS: [&str; 4] = ["continue", "keep", "press", "hold"];
const O_WORDS: [&str; 4] = ["subscribe", "thanks", "music", "welcome"];

/// Sequences whose tag is readable from each segment's words alone.
pub fn separable_corpus(n: usize, seed: u64) -> Vec<TaggedSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|v| {
            let mut tags = vec![Tag::O];
            for _ in 0..rng.gen_range(1..3) {
                tags.push(Tag::BSeg);
                for _ in 0..rng.gen_range(0..3) {
                    tags.push(Tag::ISeg);
                }
            }
            tags.push(Tag::O);
            let segments = tags
                .iter()
                .map(|t| {
                    let pool = match t {
                        Tag::BSeg => &B_WORDS,
                        Tag::ISeg => &I_WORDS,
                        Tag::O => &O_WORDS,
                    };
                    (0..3)
                        .map(|_| *pool.choose(&mut rng).unwrap())
                        .collect::<Vec<_>>()
                        .join(" ")
                })
                .collect();
            TaggedSequence {
                video_id: format!("v{v}"),
                segments,
                tags: TagSequence(tags),
            }
        })
        .collect()
}
