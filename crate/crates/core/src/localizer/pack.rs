use crate::error::{Error, Result};
use crate::subtitle::{TimeSpan, WordTimeline};
use crate::text::{fnv1a, normalize_token};

pub const DEFAULT_MAX_LEN: usize = 1024;
pub const DEFAULT_MAX_SPAN: usize = 256;
/// Token id of the separator; word ids start at 1.
pub const SEP_ID: usize = 0;

/// Question ⧺ separator ⧺ subtitle words, as hashed token ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedInput {
    pub tokens: Vec<usize>,
    /// Timeline word index for subtitle positions, `None` elsewhere.
    pub word_map: Vec<Option<usize>>,
    pub question_len: usize,
}

impl PackedInput {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Positions that may start or end an answer.
    pub fn valid(&self) -> Vec<bool> {
        self.word_map.iter().map(Option::is_some).collect()
    }

    /// Packed position of timeline word `w`, if it survived truncation.
    pub fn position_of(&self, w: usize) -> Option<usize> {
        let pos = self.question_len + 1 + w;
        (self.word_map.get(pos).copied().flatten() == Some(w)).then_some(pos)
    }
}

/// Hashes a token into `1..buckets`.
pub fn token_id(token: &str, buckets: usize) -> usize {
    1 + (fnv1a(token.as_bytes()) % (buckets as u64 - 1)) as usize
}

/// Packs the question and as much of the subtitle as fits in `max_len`.
/// The question is never truncated.
pub fn pack_input(
    question: &[String],
    timeline: &WordTimeline,
    max_len: usize,
    buckets: usize,
) -> Result<PackedInput> {
    if question.is_empty() {
        return Err(Error::Input("question is empty".into()));
    }
    if buckets < 2 {
        return Err(Error::Config("need at least two token buckets".into()));
    }
    if question.len() + 1 > max_len {
        return Err(Error::Input(format!(
            "question of {} tokens does not fit a packed length of {max_len}",
            question.len()
        )));
    }
    let room = (max_len - question.len() - 1).min(timeline.len());
    let mut tokens: Vec<usize> = question.iter().map(|t| token_id(t, buckets)).collect();
    let mut word_map = vec![None; question.len() + 1];
    tokens.push(SEP_ID);
    for (w, word) in timeline.words()[..room].iter().enumerate() {
        tokens.push(token_id(&normalize_token(word), buckets));
        word_map.push(Some(w));
    }
    Ok(PackedInput {
        tokens,
        word_map,
        question_len: question.len(),
    })
}

/// Best `(i, j)` with `i ≤ j`, `j − i < max_span`, both valid, maximizing
/// `start[i] + end[j]`. Ties go to the smallest `i`, then the smallest `j`.
pub fn decode_span(
    start: &[f64],
    end: &[f64],
    valid: &[bool],
    max_span: usize,
) -> Result<(usize, usize)> {
    let n = start.len();
    if end.len() != n || valid.len() != n {
        return Err(Error::dim(
            "decode_span",
            &[start.len(), end.len()],
            &[valid.len()],
        ));
    }
    let mut best: Option<(usize, usize, f64)> = None;
    for i in (0..n).filter(|&i| valid[i]) {
        for j in (i..n.min(i + max_span.max(1))).filter(|&j| valid[j]) {
            let s = start[i] + end[j];
            if best.is_none_or(|(_, _, b)| s > b) {
                best = Some((i, j, s));
            }
        }
    }
    best.map(|(i, j, _)| (i, j))
        .ok_or_else(|| Error::Input("no subtitle position to answer from".into()))
}

/// Cue-granular time span covered by packed positions `i..=j`.
pub fn span_to_timestamps(
    i: usize,
    j: usize,
    input: &PackedInput,
    timeline: &WordTimeline,
) -> Result<TimeSpan> {
    let word =
        |p: usize| {
            input.word_map.get(p).copied().flatten().ok_or_else(|| {
                Error::Integrity(format!("packed position {p} is not a subtitle word"))
            })
        };
    let (wi, wj) = (word(i)?, word(j)?);
    if wi > wj {
        return Err(Error::Integrity(format!("span start {i} after end {j}")));
    }
    Ok(TimeSpan {
        start_s: timeline.cue_span_of(wi).start_s,
        end_s: timeline.cue_span_of(wj).end_s,
    })
}

/// First and last timeline words intersecting `gold`.
pub fn gold_word_range(timeline: &WordTimeline, gold: &TimeSpan) -> Option<(usize, usize)> {
    let words = timeline.words_in(gold);
    Some((*words.first()?, *words.last()?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::subtitle::{build_word_timeline, Cue, CueList};

    fn timeline(cues: &[(&str, f64, f64)]) -> WordTimeline {
        build_word_timeline(&CueList::new(
            cues.iter()
                .map(|&(t, s, e)| Cue {
                    text: t.into(),
                    span: TimeSpan::new(s, e).unwrap(),
                })
                .collect(),
        ))
    }

    fn q(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("q{i}")).collect()
    }

    #[test]
    fn length_bookkeeping_and_truncation() {
        let words: Vec<String> = (0..10).map(|i| format!("w{i}")).collect();
        let t = timeline(&[(&words.join(" "), 0.0, 10.0)]);
        let p = pack_input(&q(5), &t, 100, 64).unwrap();
        assert_eq!(p.len(), 16);
        assert_eq!(p.tokens[5], SEP_ID);
        assert_eq!(p.word_map[6], Some(0));
        assert_eq!(p.position_of(9), Some(15));

        let cut = pack_input(&q(5), &t, 10, 64).unwrap();
        assert_eq!(cut.len(), 10);
        assert_eq!(cut.word_map.last(), Some(&Some(3)));
        assert_eq!(cut.position_of(4), None);

        assert!(matches!(
            pack_input(&q(10), &t, 10, 64),
            Err(Error::Input(_))
        ));
        assert!(pack_input(&[], &t, 10, 64).is_err());
    }

    #[test]
    fn word_map_points_at_same_surface_word() {
        let t = timeline(&[("Press FIRMLY, then", 0.0, 3.0), ("release.", 3.0, 4.0)]);
        let p = pack_input(&q(2), &t, 50, 1 << 20).unwrap();
        for (pos, w) in p.word_map.iter().enumerate() {
            if let Some(w) = w {
                assert_eq!(
                    p.tokens[pos],
                    token_id(&normalize_token(&t.words()[*w]), 1 << 20)
                );
            }
        }
    }

    #[test]
    fn decode_dominant_pair_and_order_constraint() {
        let valid = vec![true; 10];
        let mut s = vec![0.0; 10];
        let mut e = vec![0.0; 10];
        s[3] = 5.0;
        e[7] = 5.0;
        assert_eq!(decode_span(&s, &e, &valid, 256).unwrap(), (3, 7));

        let mut s = vec![0.0; 10];
        let mut e = vec![0.0; 10];
        s[8] = 5.0;
        e[2] = 5.0;
        let (i, j) = decode_span(&s, &e, &valid, 256).unwrap();
        assert!(i <= j);
        // (0,2) and (8,8) both score 5; the smaller start wins.
        assert_eq!((i, j), (0, 2));
    }

    #[test]
    fn decode_respects_mask_ties_and_span_cap() {
        let valid = [false, false, true, false, true, true];
        assert_eq!(
            decode_span(&[0.0; 6], &[0.0; 6], &valid, 256).unwrap(),
            (2, 2)
        );
        let only = [false, false, false, true, false, false];
        assert_eq!(
            decode_span(&[9.0; 6], &[1.0; 6], &only, 256).unwrap(),
            (3, 3)
        );
        let s = [5.0, 0.0, 0.0, 0.0];
        let e = [0.0, 0.0, 0.0, 5.0];
        assert_eq!(decode_span(&s, &e, &[true; 4], 3).unwrap(), (0, 0));
        assert!(decode_span(&[0.0; 2], &[0.0; 2], &[false; 2], 256).is_err());
    }

    #[test]
    fn timestamps_are_cue_granular() {
        let t = timeline(&[("a b", 1.0, 3.0), ("c", 4.0, 9.0), ("d e", 8.0, 10.0)]);
        let p = pack_input(&q(1), &t, 50, 64).unwrap();
        let pos = |w| p.position_of(w).unwrap();
        assert_eq!(
            span_to_timestamps(pos(2), pos(2), &p, &t).unwrap(),
            TimeSpan::new(4.0, 9.0).unwrap()
        );
        assert_eq!(
            span_to_timestamps(pos(1), pos(4), &p, &t).unwrap(),
            TimeSpan::new(1.0, 10.0).unwrap()
        );
        assert!(matches!(
            span_to_timestamps(0, pos(1), &p, &t),
            Err(Error::Integrity(_))
        ));
    }
}
