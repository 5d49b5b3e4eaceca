use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::localizer::Prediction;
use crate::subtitle::TimeSpan;

use super::report::{EvalReport, ItemScore};

/// Interval overlap ratio. Two zero-length spans score 1 when equal.
pub fn iou(pred: &TimeSpan, gold: &TimeSpan) -> f64 {
    let inter = (pred.end_s.min(gold.end_s) - pred.start_s.max(gold.start_s)).max(0.0);
    let union = pred.duration() + gold.duration() - inter;
    if union > 0.0 {
        (inter / union).clamp(0.0, 1.0)
    } else if pred == gold {
        1.0
    } else {
        0.0
    }
}

/// Percentage of pairs whose IoU is strictly above `mu`.
pub fn r_at_1(pairs: &[(TimeSpan, TimeSpan)], mu: f64) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Undefined("R@1 of an empty set".into()));
    }
    if !(mu > 0.0 && mu < 1.0) {
        return Err(Error::Input(format!(
            "IoU threshold must lie in (0, 1), got {mu}"
        )));
    }
    let hits = pairs.iter().filter(|(p, g)| iou(p, g) > mu).count();
    Ok(100.0 * hits as f64 / pairs.len() as f64)
}

pub fn miou(pairs: &[(TimeSpan, TimeSpan)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Undefined("mIoU of an empty set".into()));
    }
    Ok(pairs.iter().map(|(p, g)| iou(p, g)).sum::<f64>() / pairs.len() as f64)
}

pub const DEFAULT_THRESHOLDS: [f64; 3] = [0.3, 0.5, 0.7];

/// R@1 at each threshold plus mIoU, joining predictions to gold spans on
/// `(video_id, question_id)`. Every gold item needs a prediction.
pub fn localization_report(
    preds: &[Prediction],
    golds: &[Prediction],
    thresholds: &[f64],
) -> Result<EvalReport> {
    let by_key: HashMap<(&str, &str), &Prediction> = preds
        .iter()
        .map(|p| ((p.video_id.as_str(), p.question_id.as_str()), p))
        .collect();
    let mut pairs = Vec::with_capacity(golds.len());
    let mut items = Vec::with_capacity(golds.len());
    for g in golds {
        let p = by_key
            .get(&(g.video_id.as_str(), g.question_id.as_str()))
            .ok_or_else(|| {
                Error::Input(format!(
                    "no prediction for {}/{}",
                    g.video_id, g.question_id
                ))
            })?;
        let pair = (p.span(), g.span());
        items.push(ItemScore {
            id: format!("{}/{}", g.video_id, g.question_id),
            value: iou(&pair.0, &pair.1),
        });
        pairs.push(pair);
    }
    let mut report = EvalReport::new("localization");
    for &mu in thresholds {
        report.metric(format!("R@1 IoU={mu}"), r_at_1(&pairs, mu)?);
    }
    report.metric("mIoU", 100.0 * miou(&pairs)?);
    report.items = items;
    report.config("thresholds", thresholds);
    Ok(report)
}
