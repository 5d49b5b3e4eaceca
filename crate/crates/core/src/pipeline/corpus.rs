use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::classifier::VideoClass;
use crate::error::{Error, Result};
use crate::localizer::FrameFeatureTrack;
use crate::subtitle::{
    build_word_timeline, dedup_overlap, parse_subtitles, CueList, SubtitleFormat, WordTimeline,
};

/// One entry of a corpus manifest. Paths are relative to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoRecord {
    pub video_id: String,
    pub subtitle_path: PathBuf,
    #[serde(default)]
    pub feature_path: Option<PathBuf>,
    pub duration_s: f64,
    /// Known class, when the manifest is labeled.
    #[serde(default)]
    pub category: Option<VideoClass>,
    #[serde(default)]
    pub url: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub root: PathBuf,
    pub videos: Vec<VideoRecord>,
}

impl Corpus {
    /// Loads a JSON manifest; rejects duplicate ids and non-positive
    /// durations.
    pub fn load(manifest: impl AsRef<Path>) -> Result<Self> {
        let manifest = manifest.as_ref();
        let text = std::fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
        let videos: Vec<VideoRecord> = serde_json::from_str(&text)?;
        let mut seen = std::collections::HashSet::new();
        for v in &videos {
            if !seen.insert(v.video_id.as_str()) {
                return Err(Error::Schema(format!(
                    "duplicate video id `{}`",
                    v.video_id
                )));
            }
            if !(v.duration_s > 0.0 && v.duration_s.is_finite()) {
                return Err(Error::Schema(format!(
                    "video `{}` has duration {}",
                    v.video_id, v.duration_s
                )));
            }
        }
        let root = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { root, videos })
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.root.join(path)
        }
    }

    pub fn get(&self, video_id: &str) -> Option<&VideoRecord> {
        self.videos.iter().find(|v| v.video_id == video_id)
    }

    pub fn ingest(&self, record: &VideoRecord) -> Result<IngestedVideo> {
        let path = self.resolve(&record.subtitle_path);
        let format = SubtitleFormat::from_path(&path).ok_or_else(|| {
            Error::Input(format!("{}: unknown subtitle extension", path.display()))
        })?;
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let cues = dedup_overlap(&parse_subtitles(&bytes, format)?);
        if cues.is_empty() {
            return Err(Error::Input(format!(
                "{}: no subtitle cues",
                path.display()
            )));
        }
        let timeline = build_word_timeline(&cues);
        Ok(IngestedVideo {
            record: record.clone(),
            cues,
            timeline,
        })
    }

    pub fn load_track(&self, record: &VideoRecord) -> Result<Option<FrameFeatureTrack>> {
        let Some(p) = &record.feature_path else {
            return Ok(None);
        };
        let track = FrameFeatureTrack::load(self.resolve(p))?;
        track.check_duration(record.duration_s)?;
        Ok(Some(track))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestedVideo {
    pub record: VideoRecord,
    pub cues: CueList,
    pub timeline: WordTimeline,
}

impl IngestedVideo {
    pub fn text(&self) -> String {
        self.timeline.words().join(" ")
    }
}

/// Manifest of the bundled ten-video synthetic corpus.
pub fn mini_corpus_manifest() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/mini_corpus/manifest.json")
}

/// Annotated answers of the bundled corpus, in dataset line format.
pub fn mini_corpus_gold() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/mini_corpus/gold.jsonl")
}
