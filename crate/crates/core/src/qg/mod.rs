//! Toy encoder-decoder question generator.

mod model;
mod vocab;

pub use model::{Generated, QgConfig, QgModel, QgPair, QgProfile, QgSource, QgTrainConfig};
pub use vocab::{Vocab, BOS, EOS, MASK, PAD, SEP, SPECIALS, TASK, UNK};

use crate::subtitle::{TimeSpan, WordTimeline};

/// Words of `timeline` whose spans intersect `window`, in order.
pub fn answer_window(timeline: &WordTimeline, window: &TimeSpan) -> Vec<String> {
    timeline
        .words_in(window)
        .into_iter()
        .map(|i| timeline.words()[i].clone())
        .collect()
}

/// Joins generated tokens into a question ending in exactly one "?".
pub fn format_question(tokens: &[String]) -> String {
    let mut q = tokens.join(" ");
    while q.ends_with(['?', ' ']) {
        q.pop();
    }
    if q.is_empty() {
        return q;
    }
    q.push('?');
    q
}

/// Word count of a question as seen by the length filter.
pub fn question_words(question: &str) -> usize {
    question.split_whitespace().filter(|w| *w != "?").count()
}
