//! Evaluation: temporal IoU family, windowed boundary F1, BLEU/ROUGE,
//! classifier F1 and annotator agreement.

mod agreement;
mod report;
mod span;
mod tagging;
mod text;

pub use agreement::{
    agreement_table, AgreementReport, Criterion, CriterionSummary, Judgment, LabelShare,
};
pub use report::{EvalReport, ItemScore};
pub use span::{iou, localization_report, miou, r_at_1, DEFAULT_THRESHOLDS};
pub use tagging::{cls_f1, windowed_f1, windowed_f1_corpus, Prf, WindowRadius};
pub use text::{bleu, rouge, RougeVariant};
