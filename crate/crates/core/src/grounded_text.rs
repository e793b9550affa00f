//! Grounded captions: free text with box groups interleaved after the phrases
//! they localize, e.g. `Two elephants [0.10, 0.20, 0.50, 0.90] are in a field`.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::{parse_group_prefix, BoxGroup};

/// Longest phrase (in tokens) a box group is attached to.
pub const MAX_PHRASE_TOKENS: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mention {
    /// Byte span into [`GroundedCaption::plain`].
    pub start: usize,
    pub end: usize,
    pub phrase: String,
    pub boxes: BoxGroup,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundedCaption {
    pub raw: String,
    pub plain: String,
    pub mentions: Vec<Mention>,
    /// Box-like groups that failed to parse; removed from `plain`.
    pub malformed_groups: usize,
    /// Well-formed groups with no preceding phrase to attach to.
    pub unattached_groups: usize,
}

impl GroundedCaption {
    pub fn well_formed_groups(&self) -> usize {
        self.mentions.len() + self.unattached_groups
    }

    pub fn has_boxes(&self) -> bool {
        self.well_formed_groups() > 0 || self.malformed_groups > 0
    }
}

/// A bracketed, box-like span found in raw text.
#[derive(Debug)]
pub struct ScannedGroup {
    pub range: Range<usize>,
    pub parsed: Result<BoxGroup>,
}

/// Finds every `[...]` span whose contents look like coordinates (digits,
/// separators, signs, whitespace) and tries to parse it. Brackets holding
/// anything else are ordinary text.
pub fn scan_groups(raw: &str) -> Vec<ScannedGroup> {
    let bytes = raw.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] != b'[' {
            i += 1;
            continue;
        }
        let mut j = i + 1;
        let mut close = None;
        while j < bytes.len() {
            match bytes[j] {
                b']' => {
                    close = Some(j);
                    break;
                }
                b'[' => break,
                _ => j += 1,
            }
        }
        let Some(close) = close else {
            // Either unterminated or a nested '[' starts a new candidate.
            i = j.max(i + 1);
            continue;
        };
        let inner = &bytes[i + 1..close];
        let box_like = inner.iter().any(u8::is_ascii_digit)
            && inner.iter().all(|c| {
                c.is_ascii_digit() || c.is_ascii_whitespace() || b".,;+-".contains(c)
            });
        if box_like {
            let parsed = parse_group_prefix(&raw[i..=close], i).map(|(g, _)| g);
            out.push(ScannedGroup {
                range: i..close + 1,
                parsed,
            });
        }
        i = close + 1;
    }
    out
}

pub fn parse_grounded(raw: &str) -> GroundedCaption {
    let groups = scan_groups(raw);
    let mut b = PlainBuilder::default();
    let mut mentions = Vec::new();
    let mut malformed = 0;
    let mut unattached = 0;
    let mut cursor = 0;

    for g in groups {
        b.push_text(&raw[cursor..g.range.start]);
        cursor = g.range.end;
        match g.parsed {
            Ok(boxes) => match b.attach() {
                Some(span) => mentions.push(Mention {
                    phrase: b.plain[span.clone()].to_string(),
                    start: span.start,
                    end: span.end,
                    boxes,
                }),
                None => unattached += 1,
            },
            Err(_) => malformed += 1,
        }
        b.mark_group();
    }
    b.push_text(&raw[cursor..]);

    GroundedCaption {
        raw: raw.to_string(),
        plain: b.plain,
        mentions,
        malformed_groups: malformed,
        unattached_groups: unattached,
    }
}

/// Removes all box groups and normalizes whitespace.
pub fn strip_boxes(raw: &str) -> String {
    parse_grounded(raw).plain
}

pub fn word_count(plain: &str) -> usize {
    plain.split_whitespace().count()
}

#[derive(Default)]
struct PlainBuilder {
    plain: String,
    /// Spans of words pushed since the last group.
    recent: Vec<Range<usize>>,
    after_group: bool,
}

impl PlainBuilder {
    fn push_text(&mut self, text: &str) {
        let glue = self.after_group
            && !self.plain.is_empty()
            && !text.starts_with(|c: char| c.is_whitespace());
        for (k, tok) in text.split_whitespace().enumerate() {
            if k == 0 && glue {
                // Text directly after a removed group continues the previous word.
                self.plain.push_str(tok);
                continue;
            }
            if !self.plain.is_empty() {
                self.plain.push(' ');
            }
            let start = self.plain.len();
            self.plain.push_str(tok);
            self.recent.push(start..self.plain.len());
        }
        if !text.is_empty() {
            self.after_group = false;
        }
    }

    fn mark_group(&mut self) {
        self.recent.clear();
        self.after_group = true;
    }

    /// Span of the phrase a group placed here refers to.
    fn attach(&self) -> Option<Range<usize>> {
        let is_punct = |c: char| c.is_ascii_punctuation();
        let mut start = None;
        let mut end = None;
        for (n, w) in self.recent.iter().rev().enumerate() {
            if n == MAX_PHRASE_TOKENS {
                break;
            }
            let word = &self.plain[w.clone()];
            if n == 0 {
                let trimmed = word.trim_end_matches(is_punct);
                if trimmed.is_empty() {
                    return None;
                }
                end = Some(w.start + trimmed.len());
            } else if word.ends_with(is_punct) {
                break;
            }
            let lead = word.len() - word.trim_start_matches(is_punct).len();
            start = Some(w.start + lead);
            if lead > 0 {
                break;
            }
        }
        match (start, end) {
            (Some(s), Some(e)) if s < e => Some(s..e),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grounded_example() {
        let c = parse_grounded("Two elephants [0.10, 0.20, 0.50, 0.90] are in a field");
        assert_eq!(c.plain, "Two elephants are in a field");
        assert_eq!(c.mentions.len(), 1);
        assert_eq!(c.mentions[0].phrase, "Two elephants");
        assert_eq!(&c.plain[c.mentions[0].start..c.mentions[0].end], "Two elephants");
        assert_eq!(c.malformed_groups, 0);
    }

    #[test]
    fn box_free_text_unchanged() {
        let c = parse_grounded("A dog runs.");
        assert_eq!(c.plain, "A dog runs.");
        assert!(c.mentions.is_empty());
        assert!(!c.has_boxes());
    }

    #[test]
    fn malformed_group_removed_without_mention() {
        let c = parse_grounded("a cat [0.1, 0.2] sits");
        assert_eq!(c.plain, "a cat sits");
        assert!(c.mentions.is_empty());
        assert_eq!(c.malformed_groups, 1);
    }

    #[test]
    fn two_groups_and_punctuation() {
        let raw = "A woman [0.10, 0.05, 0.64, 1.00] holds two cups [0.1, 0.1, 0.2, 0.2; 0.3, 0.1, 0.4, 0.2].";
        let c = parse_grounded(raw);
        assert_eq!(c.plain, "A woman holds two cups.");
        assert_eq!(c.mentions.len(), 2);
        assert_eq!(c.mentions[0].phrase, "A woman");
        assert_eq!(c.mentions[1].phrase, "holds two cups");
        assert_eq!(c.mentions[1].boxes.len(), 2);
        assert_eq!(strip_boxes(raw), c.plain);
    }

    #[test]
    fn attachment_stops_at_clause_punctuation_and_limit() {
        let c = parse_grounded("In the park, a big brown dog [0,0,1,1] sleeps");
        assert_eq!(c.mentions[0].phrase, "a big brown dog");
        let c = parse_grounded("one two three four five six seven eight [0,0,1,1]");
        assert_eq!(c.mentions[0].phrase, "three four five six seven eight");
        let c = parse_grounded("the dog. [0,0,1,1]");
        assert_eq!(c.mentions[0].phrase, "the dog");
    }

    #[test]
    fn leading_or_stacked_groups_are_unattached() {
        let c = parse_grounded("[0,0,1,1] a dog [0,0,0.5,0.5] [0.5,0.5,1,1]");
        assert_eq!(c.plain, "a dog");
        assert_eq!(c.mentions.len(), 1);
        assert_eq!(c.unattached_groups, 2);
        assert_eq!(c.well_formed_groups(), 3);
    }

    #[test]
    fn non_numeric_brackets_are_text() {
        let c = parse_grounded("a sign reading [closed] [0,0,1,1]");
        assert_eq!(c.plain, "a sign reading [closed]");
        assert_eq!(c.mentions[0].phrase, "closed");
    }

    #[test]
    fn strip_edge_cases() {
        assert_eq!(strip_boxes(""), "");
        assert_eq!(strip_boxes("  a   b  "), "a b");
        assert_eq!(strip_boxes("[0,0,1,1]"), "");
        assert_eq!(strip_boxes("unclosed [0.1, 0.2"), "unclosed [0.1, 0.2");
    }

    #[test]
    fn word_counts() {
        assert_eq!(word_count("A small bird."), 3);
        assert_eq!(word_count(""), 0);
        assert_eq!(word_count("  A man riding a wave on top of a surfboard.  "), 10);
    }
}
