//! CHAIR with exact string matching against class names and synonyms.
//!
//! Per image the matched classes are compared with the gold annotation;
//! matched-but-absent classes are hallucinations. Dataset scores:
//!
//! * `chair_i`: hallucinated / matched, as a ratio of corpus-wide totals
//! * `chair_s`: share of captions with at least one hallucination
//! * `coverage`: mean share of annotated classes that were mentioned,
//!   over images with at least one annotated class
//! * `avg_objects`: mean number of distinct matched classes per caption

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::annotations::{ClassId, ClassRegistry, Corpus, ImageId};
use crate::error::{Error, Result};
use crate::grounded_text::word_count;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub image_id: ImageId,
    pub caption: String,
}

/// Per-caption outcome shared by CHAIR and CHAIR-MEN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageChair {
    pub image_id: ImageId,
    pub matched: Vec<ClassId>,
    pub hallucinated: Vec<ClassId>,
    /// Gold classes counted as mentioned.
    pub covered: usize,
    pub gold: usize,
    pub words: usize,
}

impl ImageChair {
    pub fn coverage(&self) -> Option<f64> {
        (self.gold > 0).then(|| self.covered as f64 / self.gold as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChairResult {
    pub chair_i: f64,
    /// Set when no object was matched at all; `chair_i` is then reported as 0.
    pub chair_i_undefined: bool,
    pub chair_s: f64,
    /// `None` when no scored image has annotations.
    pub coverage: Option<f64>,
    pub avg_objects: f64,
    pub avg_words: f64,
    pub images: usize,
    pub coverage_images: usize,
    pub total_matched: usize,
    pub total_hallucinated: usize,
    pub per_image: Vec<ImageChair>,
}

impl ChairResult {
    /// Folds per-image outcomes in order; the fold is a plain sequential sum
    /// so equal inputs always give bit-identical aggregates.
    pub fn aggregate(per_image: Vec<ImageChair>) -> Result<Self> {
        if per_image.is_empty() {
            return Err(Error::Scoring("no captions to score".into()));
        }
        let n = per_image.len() as f64;
        let total_matched: usize = per_image.iter().map(|d| d.matched.len()).sum();
        let total_hallucinated: usize = per_image.iter().map(|d| d.hallucinated.len()).sum();
        let with_hallucination = per_image.iter().filter(|d| !d.hallucinated.is_empty()).count();
        let coverages: Vec<f64> = per_image.iter().filter_map(ImageChair::coverage).collect();
        let coverage = (!coverages.is_empty())
            .then(|| coverages.iter().sum::<f64>() / coverages.len() as f64);
        let total_words: usize = per_image.iter().map(|d| d.words).sum();
        Ok(ChairResult {
            chair_i: if total_matched == 0 {
                0.0
            } else {
                total_hallucinated as f64 / total_matched as f64
            },
            chair_i_undefined: total_matched == 0,
            chair_s: with_hallucination as f64 / n,
            coverage,
            avg_objects: total_matched as f64 / n,
            avg_words: total_words as f64 / n,
            images: per_image.len(),
            coverage_images: coverages.len(),
            total_matched,
            total_hallucinated,
            per_image,
        })
    }
}

/// Surface-form index used by [`match_string`]. Build once per registry.
#[derive(Debug, Clone)]
pub struct StringMatcher {
    forms: HashMap<Vec<String>, ClassId>,
    max_len: usize,
}

impl StringMatcher {
    pub fn new(registry: &ClassRegistry) -> Self {
        let mut forms = HashMap::new();
        let mut max_len = 0;
        for (form, id) in registry.lexicon() {
            let toks = tokenize(&form);
            if toks.is_empty() {
                continue;
            }
            max_len = max_len.max(toks.len());
            forms.insert(toks, id);
        }
        StringMatcher { forms, max_len }
    }

    fn lookup(&self, window: &[String]) -> Option<ClassId> {
        if let Some(id) = self.forms.get(window) {
            return Some(*id);
        }
        let (last, head) = window.split_last()?;
        for suffix in ["es", "s"] {
            if let Some(stem) = last.strip_suffix(suffix) {
                if stem.is_empty() {
                    continue;
                }
                let mut key = head.to_vec();
                key.push(stem.to_string());
                if let Some(id) = self.forms.get(&key) {
                    return Some(*id);
                }
            }
        }
        None
    }

    /// Left-to-right scan; at each word the longest matching form wins and
    /// consumes its words.
    pub fn find(&self, caption: &str) -> BTreeSet<ClassId> {
        let toks = tokenize(caption);
        let mut out = BTreeSet::new();
        let mut i = 0;
        while i < toks.len() {
            let longest = self.max_len.min(toks.len() - i);
            let hit = (1..=longest)
                .rev()
                .find_map(|len| self.lookup(&toks[i..i + len]).map(|id| (id, len)));
            match hit {
                Some((id, len)) => {
                    out.insert(id);
                    i += len;
                }
                None => i += 1,
            }
        }
        out
    }
}

/// Lowercased alphanumeric words.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

pub fn match_string(caption: &str, registry: &ClassRegistry) -> BTreeSet<ClassId> {
    StringMatcher::new(registry).find(caption)
}

/// Resolves every record's image or fails listing all unknown ids.
pub(crate) fn resolve_images<'a>(
    records: &[CaptionRecord],
    corpus: &'a Corpus,
) -> Result<Vec<&'a BTreeSet<ClassId>>> {
    let mut unknown = Vec::new();
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        match corpus.image(r.image_id) {
            Some(img) => out.push(&img.present),
            None => unknown.push(r.image_id.to_string()),
        }
    }
    if !unknown.is_empty() {
        return Err(Error::Scoring(format!(
            "image ids not in corpus: {}",
            unknown.join(", ")
        )));
    }
    Ok(out)
}

pub fn score_chair(records: &[CaptionRecord], corpus: &Corpus) -> Result<ChairResult> {
    let golds = resolve_images(records, corpus)?;
    let matcher = StringMatcher::new(corpus.registry());
    let per_image = records
        .iter()
        .zip(golds)
        .map(|(r, gold)| {
            let matched = matcher.find(&r.caption);
            let hallucinated: Vec<ClassId> = matched.difference(gold).copied().collect();
            ImageChair {
                image_id: r.image_id,
                covered: matched.intersection(gold).count(),
                gold: gold.len(),
                matched: matched.into_iter().collect(),
                hallucinated,
                words: word_count(&r.caption),
            }
        })
        .collect();
    ChairResult::aggregate(per_image)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotations::{ClassInfo, ImageEntry};

    fn coco() -> ClassRegistry {
        ClassRegistry::coco()
    }

    fn names(reg: &ClassRegistry, ids: &BTreeSet<ClassId>) -> Vec<String> {
        ids.iter().map(|c| reg.name(*c).unwrap().to_string()).collect()
    }

    #[test]
    fn plural_and_synonym() {
        let r = coco();
        let m = match_string("two dogs chase a frisbee", &r);
        assert_eq!(names(&r, &m), vec!["dog", "frisbee"]);
        let m = match_string("Three horses and some buses.", &r);
        assert_eq!(names(&r, &m), vec!["bus", "horse"]);
        let m = match_string("a man and two women", &r);
        assert_eq!(names(&r, &m), vec!["person"]);
    }

    #[test]
    fn longest_multiword_wins() {
        let r = coco();
        assert_eq!(names(&r, &match_string("a hot dog on a plate", &r)), vec!["hot dog"]);
        assert_eq!(names(&r, &match_string("hot dogs and a dog", &r)), vec!["dog", "hot dog"]);
        assert_eq!(
            names(&r, &match_string("a baby elephant near its mother", &r)),
            vec!["person", "elephant"]
        );
        assert_eq!(names(&r, &match_string("a teddy bear", &r)), vec!["teddy bear"]);
    }

    #[test]
    fn empty_and_objectless() {
        let r = coco();
        assert!(match_string("", &r).is_empty());
        assert!(match_string("sunset over the hills", &r).is_empty());
    }

    fn one_image(gold: &[&str], caption: &str) -> ChairResult {
        let reg = coco();
        let present = gold.iter().map(|g| reg.id_of(g).unwrap()).collect();
        let corpus = Corpus::new(
            vec![ImageEntry { image_id: ImageId(1), present }],
            reg,
        )
        .unwrap();
        score_chair(
            &[CaptionRecord { image_id: ImageId(1), caption: caption.into() }],
            &corpus,
        )
        .unwrap()
    }

    #[test]
    fn hand_example_half_hallucinated() {
        let r = one_image(&["dog"], "A dog and a cat on a lawn");
        assert_eq!(r.chair_i, 0.5);
        assert_eq!(r.chair_s, 1.0);
        assert_eq!(r.coverage, Some(1.0));
        assert_eq!(r.avg_objects, 2.0);
        assert_eq!(r.avg_words, 8.0);
    }

    #[test]
    fn exact_gold_mention() {
        let r = one_image(&["dog", "frisbee"], "a dog catching a frisbee");
        assert_eq!((r.chair_i, r.chair_s, r.coverage), (0.0, 0.0, Some(1.0)));
        assert!(!r.chair_i_undefined);
    }

    #[test]
    fn undefined_and_not_applicable() {
        let r = one_image(&[], "an empty sky");
        assert!(r.chair_i_undefined);
        assert_eq!(r.chair_i, 0.0);
        assert_eq!(r.coverage, None);
    }

    #[test]
    fn unknown_images_listed() {
        let reg = ClassRegistry::new(vec![ClassInfo {
            id: ClassId(1),
            name: "dog".into(),
            synonyms: vec![],
        }])
        .unwrap();
        let corpus = Corpus::new(vec![], reg).unwrap();
        let recs = [
            CaptionRecord { image_id: ImageId(7), caption: "x".into() },
            CaptionRecord { image_id: ImageId(9), caption: "y".into() },
        ];
        match score_chair(&recs, &corpus) {
            Err(Error::Scoring(msg)) => assert!(msg.contains('7') && msg.contains('9')),
            other => panic!("{other:?}"),
        }
        assert!(score_chair(&[], &corpus).is_err());
    }
}
