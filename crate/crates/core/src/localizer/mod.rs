//! Span localization of answers in subtitles, with optional vision fusion
//! and joint question-generation training.

mod model;
mod pack;
mod vision;

pub use model::{
    train_localizer, FusionConfig, LocalizerItem, LocalizerReport, LocalizerTrainConfig,
    LocalizerVideo, Prediction, RcConfig, RcModel, RcPass,
};
pub use pack::{
    decode_span, gold_word_range, pack_input, span_to_timestamps, token_id, PackedInput,
    DEFAULT_MAX_LEN, DEFAULT_MAX_SPAN, SEP_ID,
};
pub use vision::{
    align_frames, fuse_vision, fuse_vision_backward, vision_encode, FrameFeatureTrack, FusionCache,
    ToyVisionEncoder, VisionEncoder,
};
