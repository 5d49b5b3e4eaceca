use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Cue, CueList, TimeSpan};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SubtitleFormat {
    Srt,
    WebVtt,
}

impl SubtitleFormat {
    /// Guesses the format from a `.srt` / `.vtt` extension.
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "srt" => Some(Self::Srt),
            "vtt" => Some(Self::WebVtt),
            _ => None,
        }
    }

    fn millis_separator(self) -> char {
        match self {
            Self::Srt => ',',
            Self::WebVtt => '.',
        }
    }
}

/// Parses SRT or WebVTT bytes into a sorted cue list. Markup tags are
/// stripped and multi-line cue text is joined with single spaces.
pub fn parse_subtitles(bytes: &[u8], format: SubtitleFormat) -> Result<CueList> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Parse {
        line: 0,
        message: format!("input is not UTF-8: {e}"),
    })?;
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);

    let mut cues = Vec::new();
    let mut block: Vec<(usize, &str)> = Vec::new();
    let mut first_block = true;
    let lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')));
    for (no, line) in lines.chain(std::iter::once((0, ""))) {
        if !line.trim().is_empty() {
            block.push((no, line));
            continue;
        }
        if block.is_empty() {
            continue;
        }
        let is_header = first_block && format == SubtitleFormat::WebVtt;
        first_block = false;
        if is_header {
            if !block[0].1.starts_with("WEBVTT") {
                return Err(Error::Parse {
                    line: block[0].0,
                    message: "WebVTT file must start with `WEBVTT`".into(),
                });
            }
        } else if let Some(cue) = parse_block(&block, format)? {
            cues.push(cue);
        }
        block.clear();
    }
    Ok(CueList::new(cues))
}

fn parse_block(block: &[(usize, &str)], format: SubtitleFormat) -> Result<Option<Cue>> {
    if format == SubtitleFormat::WebVtt {
        let head = block[0].1;
        if ["NOTE", "STYLE", "REGION"]
            .iter()
            .any(|k| head.starts_with(k))
        {
            return Ok(None);
        }
    }
    let ts_idx = block.iter().take(2).position(|(_, l)| l.contains("-->"));
    let Some(ts_idx) = ts_idx else {
        return Err(Error::Parse {
            line: block[0].0,
            message: "expected a `start --> end` timestamp line".into(),
        });
    };
    let (line_no, ts_line) = block[ts_idx];
    let span = parse_timing_line(ts_line, format).map_err(|message| Error::Parse {
        line: line_no,
        message,
    })?;
    let raw: Vec<&str> = block[ts_idx + 1..].iter().map(|(_, l)| *l).collect();
    let mut text = strip_markup(&raw.join(" "));
    if format == SubtitleFormat::WebVtt {
        text = decode_entities(&text);
    }
    Ok(Some(Cue { text, span }))
}

fn parse_timing_line(line: &str, format: SubtitleFormat) -> std::result::Result<TimeSpan, String> {
    let (left, right) = line.split_once("-->").ok_or("missing `-->`")?;
    let end_tok = right
        .split_whitespace()
        .next()
        .ok_or("missing end timestamp")?;
    let start = parse_timestamp(left.trim(), format)?;
    let end = parse_timestamp(end_tok, format)?;
    if end < start {
        return Err(format!(
            "cue ends before it starts ({} > {})",
            left.trim(),
            end_tok
        ));
    }
    Ok(TimeSpan {
        start_s: start as f64 / 1000.0,
        end_s: end as f64 / 1000.0,
    })
}

/// Parses `HH:MM:SS<sep>mmm` (hours optional for WebVTT) into milliseconds.
fn parse_timestamp(s: &str, format: SubtitleFormat) -> std::result::Result<u64, String> {
    let bad = || format!("malformed timestamp `{s}`");
    let (clock, millis) = s.split_once(format.millis_separator()).ok_or_else(bad)?;
    if millis.len() != 3 || !millis.bytes().all(|b| b.is_ascii_digit()) {
        return Err(bad());
    }
    let parts: Vec<&str> = clock.split(':').collect();
    let (h, m, sec) = match (parts.as_slice(), format) {
        ([h, m, s], _) => (*h, *m, *s),
        ([m, s], SubtitleFormat::WebVtt) => ("0", *m, *s),
        _ => return Err(bad()),
    };
    let num = |v: &str, two: bool| -> std::result::Result<u64, String> {
        if v.is_empty() || !v.bytes().all(|b| b.is_ascii_digit()) || (two && v.len() != 2) {
            return Err(bad());
        }
        v.parse().map_err(|_| bad())
    };
    let (h, m, sec) = (num(h, false)?, num(m, true)?, num(sec, true)?);
    if m >= 60 || sec >= 60 {
        return Err(bad());
    }
    Ok(((h * 60 + m) * 60 + sec) * 1000 + millis.parse::<u64>().map_err(|_| bad())?)
}

/// Removes closed `<…>` tags and `{…}` override blocks; an unmatched `<` or
/// `{` is kept as text.
fn strip_markup(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(pos) = rest.find(['<', '{']) {
        let close = if rest.as_bytes()[pos] == b'<' {
            '>'
        } else {
            '}'
        };
        out.push_str(&rest[..pos]);
        match rest[pos + 1..].find(close) {
            Some(end) => rest = &rest[pos + 1 + end + 1..],
            None => {
                out.push_str(&rest[pos..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}

fn decode_entities(s: &str) -> String {
    s.replace("&lt;", "<")
        .replace("&gt;", ">")
        .replace("&nbsp;", " ")
        .replace("&amp;", "&")
}

fn encode_entities(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn format_timestamp(seconds: f64, sep: char) -> String {
    let ms = (seconds * 1000.0).round() as u64;
    let (h, rem) = (ms / 3_600_000, ms % 3_600_000);
    let (m, rem) = (rem / 60_000, rem % 60_000);
    let (s, ms) = (rem / 1000, rem % 1000);
    format!("{h:02}:{m:02}:{s:02}{sep}{ms:03}")
}

pub fn to_srt(cues: &CueList) -> String {
    let mut out = String::new();
    for (i, c) in cues.cues().iter().enumerate() {
        let _ = write!(
            out,
            "{}\n{} --> {}\n{}\n\n",
            i + 1,
            format_timestamp(c.span.start_s, ','),
            format_timestamp(c.span.end_s, ','),
            c.text
        );
    }
    out
}

pub fn to_webvtt(cues: &CueList) -> String {
    let mut out = String::from("WEBVTT\n\n");
    for c in cues.cues() {
        let _ = write!(
            out,
            "{} --> {}\n{}\n\n",
            format_timestamp(c.span.start_s, '.'),
            format_timestamp(c.span.end_s, '.'),
            encode_entities(&c.text)
        );
    }
    out
}

/// Removes caption roll-over: when a cue starts with the longest suffix
/// (of at least three words) of the preceding cue, that prefix is cut.
/// Cues left empty are dropped.
pub fn dedup_overlap(cues: &CueList) -> CueList {
    dedup_overlap_with(cues, 3)
}

/// [`dedup_overlap`] with a configurable minimum overlap in words.
pub fn dedup_overlap_with(cues: &CueList, min_words: usize) -> CueList {
    let min_words = min_words.max(1);
    let mut out = Vec::with_capacity(cues.len());
    let mut prev: Option<Vec<&str>> = None;
    for cue in cues.cues() {
        let words: Vec<&str> = cue.text.split_whitespace().collect();
        let cut = prev
            .as_ref()
            .map_or(0, |p| longest_suffix_prefix(p, &words));
        let kept = if cut >= min_words {
            &words[cut..]
        } else {
            &words[..]
        };
        if !kept.is_empty() {
            out.push(Cue {
                text: kept.join(" "),
                span: cue.span,
            });
        }
        prev = Some(words);
    }
    CueList::new(out)
}

/// Length of the longest suffix of `prev` that is a prefix of `next`.
fn longest_suffix_prefix(prev: &[&str], next: &[&str]) -> usize {
    let max = prev.len().min(next.len());
    (1..=max)
        .rev()
        .find(|&n| prev[prev.len() - n..] == next[..n])
        .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texts(c: &CueList) -> Vec<&str> {
        c.cues().iter().map(|c| c.text.as_str()).collect()
    }

    fn cues(items: &[(&str, f64, f64)]) -> CueList {
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

    #[test]
    fn srt_single_block() {
        let c = parse_subtitles(
            b"1\n00:00:01,000 --> 00:00:04,000\nhello world\n",
            SubtitleFormat::Srt,
        )
        .unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.cues()[0].span, TimeSpan::new(1.0, 4.0).unwrap());
        assert_eq!(c.cues()[0].text, "hello world");
    }

    #[test]
    fn webvtt_time_arithmetic() {
        let src = "WEBVTT\n\n00:01:00.500 --> 00:01:02.250 align:start\n<v Bob>wash <b>hands</b>\n";
        let c = parse_subtitles(src.as_bytes(), SubtitleFormat::WebVtt).unwrap();
        assert_eq!(c.cues()[0].span, TimeSpan::new(60.5, 62.25).unwrap());
        assert_eq!(c.cues()[0].text, "wash hands");
    }

    #[test]
    fn webvtt_short_form_and_notes() {
        let src = "\u{feff}WEBVTT - title\n\nNOTE a comment\n\nid-1\n01:02.003 --> 01:03.000\nok &amp; done\n";
        let c = parse_subtitles(src.as_bytes(), SubtitleFormat::WebVtt).unwrap();
        assert_eq!(c.cues()[0].span.start_s, 62.003);
        assert_eq!(c.cues()[0].text, "ok & done");
    }

    #[test]
    fn end_before_start_is_error() {
        let err = parse_subtitles(
            b"1\n00:00:05,000 --> 00:00:04,000\nx\n",
            SubtitleFormat::Srt,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn malformed_timestamp_reports_line() {
        let src = "1\n00:00:01,000 --> 00:00:02,000\na\n\n2\n00:00:0x,000 --> 00:00:03,000\nb\n";
        let err = parse_subtitles(src.as_bytes(), SubtitleFormat::Srt).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 6, .. }), "{err}");
        let wrong_sep = parse_subtitles(
            b"1\n00:00:01.000 --> 00:00:02.000\na\n",
            SubtitleFormat::Srt,
        );
        assert!(wrong_sep.is_err());
    }

    #[test]
    fn empty_input_is_empty_list() {
        assert!(parse_subtitles(b"", SubtitleFormat::Srt)
            .unwrap()
            .is_empty());
        assert!(parse_subtitles(b"", SubtitleFormat::WebVtt)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn crlf_and_unsorted_input() {
        let src = "2\r\n00:00:05,000 --> 00:00:06,000\r\nlater\r\n\r\n1\r\n00:00:01,000 --> 00:00:02,000\r\nearlier\r\n";
        let c = parse_subtitles(src.as_bytes(), SubtitleFormat::Srt).unwrap();
        assert_eq!(texts(&c), ["earlier", "later"]);
    }

    #[test]
    fn serialization_round_trip() {
        let c = cues(&[("a < b & c", 0.001, 1.5), ("second line", 3661.25, 3662.0)]);
        let srt = parse_subtitles(to_srt(&c).as_bytes(), SubtitleFormat::Srt).unwrap();
        let vtt = parse_subtitles(to_webvtt(&c).as_bytes(), SubtitleFormat::WebVtt).unwrap();
        assert_eq!(srt, c);
        assert_eq!(vtt, c);
    }

    #[test]
    fn dedup_two_word_overlap_with_lower_threshold() {
        let c = cues(&[("a b c", 0.0, 1.0), ("b c d", 1.0, 2.0)]);
        assert_eq!(texts(&dedup_overlap_with(&c, 2)), ["a b c", "d"]);
        // Below the default three-word threshold nothing is stripped.
        assert_eq!(texts(&dedup_overlap(&c)), ["a b c", "b c d"]);
    }

    #[test]
    fn dedup_full_duplicate_collapses() {
        let c = cues(&[("x y z", 0.0, 1.0), ("x y z", 1.0, 2.0)]);
        assert_eq!(texts(&dedup_overlap(&c)), ["x y z"]);
    }

    #[test]
    fn dedup_rolling_captions() {
        let c = cues(&[
            ("put the gauze on top", 0.0, 2.0),
            ("gauze on top of the wound", 2.0, 4.0),
        ]);
        assert_eq!(
            texts(&dedup_overlap(&c)),
            ["put the gauze on top", "of the wound"]
        );
    }

    #[test]
    fn dedup_identity_on_clean_input() {
        let c = cues(&[("one two three", 0.0, 1.0), ("four five six", 1.0, 2.0)]);
        assert_eq!(dedup_overlap(&c), c);
    }
}
