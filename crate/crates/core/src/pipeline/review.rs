use std::collections::{HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::corpus::IngestedVideo;
use super::dataset::{read_json, read_jsonl, triplet_ids, write_json, VqaTriplet};
use crate::error::{Error, Result};
use crate::metrics::{agreement_table, AgreementReport, Criterion, Judgment};
use crate::qg::answer_window;

/// Sample size of the human evaluation round.
pub const DEFAULT_REVIEW_SIZE: usize = 308;

pub const SAMPLES_FILE: &str = "samples.json";
pub const JUDGMENTS_FILE: &str = "judgments.jsonl";

/// One triplet as shown to annotators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewSample {
    pub sample_id: String,
    pub video_id: String,
    pub question: String,
    pub answer_start_s: f64,
    pub answer_end_s: f64,
    /// Subtitle words under the answer span.
    pub subtitle_excerpt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub video_link: Option<String>,
}

/// Draws `n` triplets uniformly without replacement. Samples keep dataset
/// order and take their ids from [`triplet_ids`].
pub fn sample_for_review(
    triplets: &[VqaTriplet],
    videos: &[IngestedVideo],
    n: usize,
    seed: u64,
) -> Result<Vec<ReviewSample>> {
    if n > triplets.len() {
        return Err(Error::Input(format!(
            "cannot sample {n} of {} triplets",
            triplets.len()
        )));
    }
    let by_id: HashMap<&str, &IngestedVideo> = videos
        .iter()
        .map(|v| (v.record.video_id.as_str(), v))
        .collect();
    let ids = triplet_ids(triplets);
    let mut picked =
        rand::seq::index::sample(&mut ChaCha8Rng::seed_from_u64(seed), triplets.len(), n)
            .into_vec();
    picked.sort_unstable();
    picked
        .into_iter()
        .map(|i| {
            let t = &triplets[i];
            let v = by_id
                .get(t.video_id.as_str())
                .ok_or_else(|| Error::Input(format!("no subtitles for video `{}`", t.video_id)))?;
            Ok(ReviewSample {
                sample_id: ids[i].clone(),
                video_id: t.video_id.clone(),
                question: t.question.clone(),
                answer_start_s: t.answer_start_s,
                answer_end_s: t.answer_end_s,
                subtitle_excerpt: answer_window(&v.timeline, &t.answer()).join(" "),
                video_link: v.record.url.clone(),
            })
        })
        .collect()
}

/// Why a judgment was refused.
#[derive(Debug, thiserror::Error)]
pub enum ReviewError {
    #[error("unknown sample `{0}`")]
    UnknownSample(String),
    #[error("invalid judgment: {message}")]
    Invalid {
        message: String,
        criterion: Option<Criterion>,
        allowed: Vec<String>,
    },
    #[error("sample `{sample_id}` already has a {criterion} judgment from `{annotator_id}`")]
    Duplicate {
        sample_id: String,
        annotator_id: String,
        criterion: Criterion,
    },
    #[error(transparent)]
    Store(#[from] Error),
}

struct State {
    judgments: Vec<Judgment>,
    keys: HashSet<(String, String, Criterion)>,
    log: File,
}

/// Review set plus an append-only judgment log. Every accepted judgment is
/// written to the log before it becomes visible; the log never holds two
/// judgments with the same (sample, annotator, criterion).
pub struct ReviewStore {
    dir: PathBuf,
    samples: Vec<ReviewSample>,
    index: HashMap<String, usize>,
    state: Mutex<State>,
}

fn key(j: &Judgment) -> (String, String, Criterion) {
    (j.sample_id.clone(), j.annotator_id.clone(), j.criterion)
}

impl ReviewStore {
    /// Writes a new review set into `dir`. Refuses to replace a set that
    /// already has judgments.
    pub fn create(dir: impl AsRef<Path>, samples: &[ReviewSample]) -> Result<Self> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let log = dir.join(JUDGMENTS_FILE);
        if std::fs::metadata(&log).is_ok_and(|m| m.len() > 0) {
            return Err(Error::Input(format!(
                "{} already holds judgments",
                log.display()
            )));
        }
        let mut seen = HashSet::new();
        if let Some(s) = samples.iter().find(|s| !seen.insert(s.sample_id.as_str())) {
            return Err(Error::Schema(format!(
                "duplicate sample id `{}`",
                s.sample_id
            )));
        }
        write_json(dir.join(SAMPLES_FILE), samples)?;
        std::fs::write(&log, b"").map_err(|e| Error::io(&log, e))?;
        Self::open(dir)
    }

    /// Opens an existing review set and replays its judgment log.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        let samples: Vec<ReviewSample> = read_json(dir.join(SAMPLES_FILE))?;
        let index: HashMap<String, usize> = samples
            .iter()
            .enumerate()
            .map(|(i, s)| (s.sample_id.clone(), i))
            .collect();
        let log_path = dir.join(JUDGMENTS_FILE);
        let judgments: Vec<Judgment> = if log_path.exists() {
            read_jsonl(&log_path)?
        } else {
            Vec::new()
        };
        let mut keys = HashSet::new();
        for j in &judgments {
            j.validate()?;
            if !index.contains_key(&j.sample_id) {
                return Err(Error::Schema(format!(
                    "{}: unknown sample `{}`",
                    log_path.display(),
                    j.sample_id
                )));
            }
            if !keys.insert(key(j)) {
                return Err(Error::Integrity(format!(
                    "{}: duplicate judgment {:?}",
                    log_path.display(),
                    j.key()
                )));
            }
        }
        let log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .map_err(|e| Error::io(&log_path, e))?;
        Ok(Self {
            dir,
            samples,
            index,
            state: Mutex::new(State {
                judgments,
                keys,
                log,
            }),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn samples(&self) -> &[ReviewSample] {
        &self.samples
    }

    pub fn sample(&self, id: &str) -> Option<&ReviewSample> {
        self.index.get(id).map(|&i| &self.samples[i])
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Validates and appends one judgment.
    pub fn submit(&self, j: Judgment) -> std::result::Result<(), ReviewError> {
        if !self.index.contains_key(&j.sample_id) {
            return Err(ReviewError::UnknownSample(j.sample_id));
        }
        if let Err(e) = j.validate() {
            return Err(ReviewError::Invalid {
                message: e.to_string(),
                criterion: Some(j.criterion),
                allowed: j.criterion.labels().iter().map(|s| s.to_string()).collect(),
            });
        }
        let mut state = self.lock();
        let k = key(&j);
        if state.keys.contains(&k) {
            return Err(ReviewError::Duplicate {
                sample_id: k.0,
                annotator_id: k.1,
                criterion: k.2,
            });
        }
        let mut line = serde_json::to_vec(&j).map_err(Error::from)?;
        line.push(b'\n');
        let path = self.dir.join(JUDGMENTS_FILE);
        state
            .log
            .write_all(&line)
            .map_err(|e| Error::io(&path, e))?;
        state.log.flush().map_err(|e| Error::io(&path, e))?;
        state.keys.insert(k);
        state.judgments.push(j);
        Ok(())
    }

    /// First sample, in review-set order, that `annotator` has not judged on
    /// every criterion.
    pub fn next_for(&self, annotator: &str) -> Option<&ReviewSample> {
        let state = self.lock();
        self.samples.iter().find(|s| {
            Criterion::ALL.iter().any(|&c| {
                !state
                    .keys
                    .contains(&(s.sample_id.clone(), annotator.to_string(), c))
            })
        })
    }

    pub fn judgments(&self) -> Vec<Judgment> {
        self.lock().judgments.clone()
    }

    pub fn summary(&self) -> Result<AgreementReport> {
        agreement_table(&self.lock().judgments, Some(self.samples.len()))
    }
}

/// Agreement table recomputed from the files in `dir` alone.
pub fn replay_summary(dir: impl AsRef<Path>) -> Result<AgreementReport> {
    let dir = dir.as_ref();
    let samples: Vec<ReviewSample> = read_json(dir.join(SAMPLES_FILE))?;
    let judgments: Vec<Judgment> = read_jsonl(dir.join(JUDGMENTS_FILE))?;
    agreement_table(&judgments, Some(samples.len()))
}
