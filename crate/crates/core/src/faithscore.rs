//! FaithScore: a chat model splits each caption into atomic facts, a VQA
//! model checks each fact against the image, and the score is the share of
//! facts it confirms.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::annotations::ImageId;
use crate::chair::CaptionRecord;
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::pope::normalize_answer;
use crate::providers::{input_key, ChatProvider, VqaProvider};

pub const VERIFY_PREFIX: &str = "Is the following statement correct?";
const CAPTION_SLOT: &str = "{caption}";
const BUILTIN_V1: &str = include_str!("../data/faithscore_prompt_v1.txt");

/// Few-shot extraction prompt with a `{caption}` slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    text: String,
}

impl PromptTemplate {
    pub fn builtin() -> Self {
        PromptTemplate {
            text: BUILTIN_V1.to_string(),
        }
    }

    pub fn new(text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        if text.matches(CAPTION_SLOT).count() != 1 {
            return Err(Error::validation("prompt template needs exactly one {caption} slot"));
        }
        Ok(PromptTemplate { text })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::new(std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn render(&self, caption: &str) -> String {
        self.text.replace(CAPTION_SLOT, caption.trim())
    }

    pub fn sha256(&self) -> String {
        hex::encode(Sha256::digest(self.text.as_bytes()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FactCategory {
    Entity,
    Color,
    Relation,
    Count,
    Other,
}

const COLORS: &[&str] = &[
    "red", "green", "blue", "yellow", "orange", "purple", "pink", "brown", "black", "white",
    "gray", "grey", "silver", "gold", "golden", "beige", "tan",
];
const NUMBERS: &[&str] = &[
    "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "several",
    "many", "multiple", "pair", "couple", "dozen",
];
const SPATIAL: &[&str] = &[
    "on", "in", "under", "above", "below", "behind", "beside", "near", "next", "between",
    "inside", "outside", "over", "atop", "against", "front", "top", "across", "along",
];

/// Keyword heuristic, for diagnostics only.
pub fn categorize(statement: &str) -> FactCategory {
    let toks = crate::chair::tokenize(statement);
    let has = |lex: &[&str]| toks.iter().any(|t| lex.contains(&t.as_str()));
    if toks.iter().any(|t| t.chars().all(|c| c.is_ascii_digit())) || has(NUMBERS) {
        FactCategory::Count
    } else if has(COLORS) {
        FactCategory::Color
    } else if has(SPATIAL) {
        FactCategory::Relation
    } else if toks.len() >= 2 && toks[0] == "there" && (toks[1] == "is" || toks[1] == "are") {
        FactCategory::Entity
    } else {
        FactCategory::Other
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AtomicFact {
    pub statement: String,
    pub category: FactCategory,
    pub image_id: ImageId,
}

fn strip_marker(line: &str) -> &str {
    let l = line.trim();
    let l = l.trim_start_matches(['-', '*', '•']).trim_start();
    let digits = l.chars().take_while(|c| c.is_ascii_digit()).count();
    if digits > 0 {
        let rest = &l[digits..];
        if let Some(r) = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')')) {
            return r.trim_start();
        }
    }
    l
}

/// One statement per line. Bullets and numbering are removed; questions,
/// headings (trailing `:`) and single-word lines are dropped; a trailing
/// period is stripped.
pub fn parse_facts(output: &str) -> Vec<String> {
    output
        .lines()
        .map(strip_marker)
        .filter(|l| !l.ends_with('?') && !l.ends_with(':'))
        .map(|l| l.trim_end_matches('.').trim())
        .filter(|l| l.split_whitespace().count() >= 2)
        .map(|l| l.split_whitespace().collect::<Vec<_>>().join(" "))
        .collect()
}

pub fn extract_facts(
    caption: &str,
    image_id: ImageId,
    chat: &dyn ChatProvider,
    template: &PromptTemplate,
) -> Result<Vec<AtomicFact>> {
    if caption.trim().is_empty() {
        return Ok(Vec::new());
    }
    let out = chat.chat(&template.render(caption))?;
    Ok(parse_facts(&out)
        .into_iter()
        .map(|statement| AtomicFact {
            category: categorize(&statement),
            statement,
            image_id,
        })
        .collect())
}

pub fn render_verification(statement: &str) -> String {
    format!("{VERIFY_PREFIX} {statement}")
}

/// `Some(true)` for a yes, `Some(false)` for a no, `None` if the answer has
/// neither (scored as negative).
pub fn verify_fact(fact: &AtomicFact, vqa: &dyn VqaProvider) -> Result<Option<bool>> {
    let answer = vqa.vqa(fact.image_id, &render_verification(&fact.statement))?;
    Ok(normalize_answer(&answer))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionFacts {
    pub image_id: ImageId,
    pub facts: Vec<AtomicFact>,
    pub verdicts: Vec<bool>,
    pub unparseable: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaithResult {
    pub faith_score: f64,
    /// No fact at all was extracted; `faith_score` is then 0.
    pub faith_score_undefined: bool,
    pub avg_facts: f64,
    pub total_facts: usize,
    pub positive: usize,
    pub unparseable: usize,
    pub captions: usize,
    /// Set when some captions failed; aggregates cover the rest only.
    pub incomplete: bool,
    pub failed_captions: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub first_error: Option<String>,
    pub prompt_sha256: String,
    pub per_caption: Vec<CaptionFacts>,
}

impl FaithResult {
    /// Integer totals make the fold independent of caption and fact order.
    pub fn aggregate(per_caption: Vec<CaptionFacts>, prompt_sha256: String) -> Self {
        let total_facts: usize = per_caption.iter().map(|c| c.facts.len()).sum();
        let positive: usize = per_caption
            .iter()
            .map(|c| c.verdicts.iter().filter(|v| **v).count())
            .sum();
        let unparseable = per_caption.iter().map(|c| c.unparseable).sum();
        let captions = per_caption.len();
        FaithResult {
            faith_score: if total_facts == 0 { 0.0 } else { positive as f64 / total_facts as f64 },
            faith_score_undefined: total_facts == 0,
            avg_facts: if captions == 0 { 0.0 } else { total_facts as f64 / captions as f64 },
            total_facts,
            positive,
            unparseable,
            captions,
            incomplete: false,
            failed_captions: 0,
            first_error: None,
            prompt_sha256,
            per_caption,
        }
    }
}

fn score_caption(
    rec: &CaptionRecord,
    chat: &dyn ChatProvider,
    vqa: &dyn VqaProvider,
    template: &PromptTemplate,
) -> Result<CaptionFacts> {
    let facts = extract_facts(&rec.caption, rec.image_id, chat, template)?;
    let answers = facts
        .par_iter()
        .map(|f| verify_fact(f, vqa))
        .collect::<Result<Vec<_>>>()?;
    Ok(CaptionFacts {
        image_id: rec.image_id,
        verdicts: answers.iter().map(|a| *a == Some(true)).collect(),
        unparseable: answers.iter().filter(|a| a.is_none()).count(),
        facts,
    })
}

/// Scores every caption concurrently. Provider failures do not abort the
/// run: failed captions are left out, the result is flagged incomplete, and
/// with a checkpoint a rerun only redoes the failed ones.
pub fn score_faith(
    records: &[CaptionRecord],
    chat: &dyn ChatProvider,
    vqa: &dyn VqaProvider,
    template: &PromptTemplate,
    checkpoint: Option<&Path>,
) -> Result<FaithResult> {
    if records.is_empty() {
        return Err(Error::Scoring("no captions to score".into()));
    }
    let prompt_sha = template.sha256();
    let ck = checkpoint.map(Checkpoint::<CaptionFacts>::open).transpose()?;
    let results: Vec<Result<CaptionFacts>> = records
        .par_iter()
        .enumerate()
        .map(|(i, rec)| {
            let key = input_key(&format!("{prompt_sha} {} {}", rec.image_id, rec.caption));
            if let Some(hit) = ck.as_ref().and_then(|c| c.get(i, &key)) {
                return Ok(hit);
            }
            let out = score_caption(rec, chat, vqa, template)?;
            if let Some(c) = &ck {
                c.append(i, &key, &out)?;
            }
            Ok(out)
        })
        .collect();

    let mut done = Vec::with_capacity(results.len());
    let mut failed = 0;
    let mut first_error = None;
    for r in results {
        match r {
            Ok(c) => done.push(c),
            Err(e) if e.is_provider_failure() => {
                failed += 1;
                first_error.get_or_insert_with(|| e.to_string());
            }
            Err(e) => return Err(e),
        }
    }
    let mut out = FaithResult::aggregate(done, prompt_sha);
    out.incomplete = failed > 0;
    out.failed_captions = failed;
    out.first_error = first_error;
    Ok(out)
}
