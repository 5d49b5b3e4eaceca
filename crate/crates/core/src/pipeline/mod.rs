//! Corpus ingestion, video selection, dataset generation and statistics, and
//! the human-review store.

mod classifier;
mod corpus;
mod dataset;
mod review;

use serde::{Deserialize, Serialize};

pub use classifier::{
    select_instructional, BowClassifier, BowTrainConfig, TextClassifier, VideoClass,
};
pub use corpus::{mini_corpus_gold, mini_corpus_manifest, Corpus, IngestedVideo, VideoRecord};
pub use dataset::{
    answer_spans, build_dataset, dataset_stats, generate_dataset, ingest_referenced,
    localizer_items, qg_pairs, read_json, read_jsonl, segment_video, split_by_video,
    tagging_corpus, triplet_ids, write_json, write_jsonl, BuildSummary, DatasetStats, FilterCounts,
    GenerateConfig, GenerationOutput, Provenance, SegmentTagger, Splits, Summary, Tagger,
    TaggerKind, TripletRules, VqaTriplet, DATASET_FILE, FAILURES_FILE, REFERENCE_SPLIT, STATS_FILE,
};
pub use review::{
    replay_summary, sample_for_review, ReviewError, ReviewSample, ReviewStore, DEFAULT_REVIEW_SIZE,
    JUDGMENTS_FILE, SAMPLES_FILE,
};

/// A video that dropped out of a pipeline stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Failure {
    pub video_id: String,
    pub stage: String,
    pub message: String,
}

impl Failure {
    pub fn new(video_id: &str, stage: &str, err: &impl std::fmt::Display) -> Self {
        Self {
            video_id: video_id.to_string(),
            stage: stage.to_string(),
            message: err.to_string(),
        }
    }
}
