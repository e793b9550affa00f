//! Yes/no object-existence question sets and their scoring.
//!
//! Every generation step draws one image uniformly among those that can
//! still contribute, asks about one of its unused annotated classes (label
//! `yes`) and pairs it with one unused absent class of the same image
//! (label `no`) chosen by the strategy:
//!
//! * random: uniform over absent classes
//! * popular: most frequent absent class, ties by class id
//! * adversarial: absent class with the highest co-occurrence score with the
//!   image's present classes, ties by class id
//!
//! Once a negative has been used for an image the next-ranked one is taken,
//! so no `(image, class)` pair is asked twice.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotations::{ClassId, CooccurrenceAggregation, CooccurrenceTable, Corpus, ImageId};
use crate::error::{Error, Result};

pub const ANSWER_SUFFIX: &str = "Answer with yes or no.";
pub const DEFAULT_SET_SIZE: usize = 1500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Random,
    Popular,
    Adversarial,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Random, Strategy::Popular, Strategy::Adversarial];
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Random => "random",
            Strategy::Popular => "popular",
            Strategy::Adversarial => "adversarial",
        })
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Strategy::Random),
            "popular" => Ok(Strategy::Popular),
            "adversarial" => Ok(Strategy::Adversarial),
            _ => Err(Error::validation(format!("unknown strategy {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Yes,
    No,
}

impl Label {
    pub fn as_bool(self) -> bool {
        self == Label::Yes
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopeQuestion {
    pub question_id: u64,
    pub image_id: ImageId,
    pub class_id: ClassId,
    /// Class name.
    pub class: String,
    pub text: String,
    pub label: Label,
    pub strategy: Strategy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopeSet {
    pub strategy: Strategy,
    pub seed: u64,
    pub corpus_digest: String,
    pub aggregation: CooccurrenceAggregation,
    pub questions: Vec<PopeQuestion>,
}

impl PopeSet {
    pub fn to_jsonl(&self) -> String {
        questions_to_jsonl(&self.questions)
    }
}

pub fn questions_to_jsonl(questions: &[PopeQuestion]) -> String {
    let mut out = String::new();
    for q in questions {
        out.push_str(&serde_json::to_string(q).expect("plain data"));
        out.push('\n');
    }
    out
}

pub fn read_questions(path: &Path) -> Result<Vec<PopeQuestion>> {
    crate::providers::read_jsonl(path)
}

pub fn render_question(name: &str) -> Result<String> {
    let name = name.trim();
    let first = name
        .chars()
        .next()
        .ok_or_else(|| Error::validation("class name is empty"))?;
    let article = if "aeiouAEIOU".contains(first) { "an" } else { "a" };
    Ok(format!("Is there {article} {name} in the image? {ANSWER_SUFFIX}"))
}

struct ImageState {
    image_id: ImageId,
    present: Vec<ClassId>,
    // unused negatives in strategy order (random: id order, drawn uniformly)
    negatives: Vec<ClassId>,
    unused_present: Vec<ClassId>,
}

impl ImageState {
    fn eligible(&self) -> bool {
        !self.unused_present.is_empty() && !self.negatives.is_empty()
    }
}

fn ranked_negatives(
    present: &BTreeSet<ClassId>,
    all: &[ClassId],
    stats: &CooccurrenceTable,
    strategy: Strategy,
    agg: CooccurrenceAggregation,
) -> Vec<ClassId> {
    let absent = all.iter().copied().filter(|c| !present.contains(c));
    match strategy {
        Strategy::Random => absent.collect(),
        Strategy::Popular => stats
            .frequency_ranking()
            .into_iter()
            .filter(|c| !present.contains(c))
            .collect(),
        Strategy::Adversarial => {
            let mut scored: Vec<(u64, ClassId)> = absent
                .map(|c| (stats.cooccurrence_score(c, present, agg), c))
                .collect();
            scored.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
            scored.into_iter().map(|(_, c)| c).collect()
        }
    }
}

/// Upper bound on the questions `generate` can emit for this corpus.
pub fn max_questions(corpus: &Corpus) -> usize {
    let k = corpus.registry().len();
    corpus
        .images()
        .iter()
        .map(|img| img.present.len().min(k - img.present.len()) * 2)
        .sum()
}

pub fn generate(
    corpus: &Corpus,
    stats: &CooccurrenceTable,
    strategy: Strategy,
    n: usize,
    seed: u64,
    agg: CooccurrenceAggregation,
) -> Result<PopeSet> {
    if n == 0 || !n.is_multiple_of(2) {
        return Err(Error::validation(format!("set size must be a positive even number, got {n}")));
    }
    let registry = corpus.registry();
    let all: Vec<ClassId> = registry.ids().collect();
    let mut states: Vec<ImageState> = Vec::new();
    for img in corpus.images() {
        if img.present.is_empty() {
            continue;
        }
        if img.present.len() == all.len() {
            log::warn!("image {} contains every class; no negative possible, skipped", img.image_id);
            continue;
        }
        let present: Vec<ClassId> = img.present.iter().copied().collect();
        states.push(ImageState {
            image_id: img.image_id,
            negatives: ranked_negatives(&img.present, &all, stats, strategy, agg),
            unused_present: present.clone(),
            present,
        });
    }
    let achievable: usize = states
        .iter()
        .map(|s| s.present.len().min(s.negatives.len()) * 2)
        .sum();
    if achievable < n {
        return Err(Error::Generation {
            reason: format!("cannot build {n} questions without repeating an (image, class) pair"),
            achievable,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut questions = Vec::with_capacity(n);
    let mut eligible: Vec<usize> = (0..states.len()).collect();
    let mut next_id = 1u64;
    let mut push = |questions: &mut Vec<PopeQuestion>, image_id, class_id: ClassId, label| -> Result<()> {
        let class = registry.name(class_id).expect("registry class").to_string();
        questions.push(PopeQuestion {
            question_id: next_id,
            image_id,
            class_id,
            text: render_question(&class)?,
            class,
            label,
            strategy,
        });
        next_id += 1;
        Ok(())
    };
    while questions.len() < n {
        let slot = rng.random_range(0..eligible.len());
        let st = &mut states[eligible[slot]];
        let pos = st.unused_present.remove(rng.random_range(0..st.unused_present.len()));
        let neg_idx = match strategy {
            Strategy::Random => rng.random_range(0..st.negatives.len()),
            Strategy::Popular | Strategy::Adversarial => 0,
        };
        let neg = st.negatives.remove(neg_idx);
        let image_id = st.image_id;
        if !st.eligible() {
            eligible.remove(slot);
        }
        push(&mut questions, image_id, pos, Label::Yes)?;
        push(&mut questions, image_id, neg, Label::No)?;
    }
    Ok(PopeSet {
        strategy,
        seed,
        corpus_digest: corpus.digest(),
        aggregation: agg,
        questions,
    })
}

/// Lowercases, strips punctuation, then takes the first token if it is
/// `yes`/`no`, else the first standalone `yes`/`no` anywhere.
pub fn normalize_answer(raw: &str) -> Option<bool> {
    let cleaned: String = raw
        .to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() || c.is_whitespace() { c } else { ' ' })
        .collect();
    cleaned.split_whitespace().find_map(|t| match t {
        "yes" => Some(true),
        "no" => Some(false),
        _ => None,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PopeAnswer {
    pub question_id: u64,
    pub raw_text: String,
}

pub fn read_answers(path: &Path) -> Result<Vec<PopeAnswer>> {
    crate::providers::read_jsonl(path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyScore {
    pub questions: usize,
    pub correct: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopeScore {
    pub questions: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub per_strategy: BTreeMap<Strategy, StrategyScore>,
    /// Share of parsed answers that were `yes`.
    pub yes_rate: f64,
    pub unparseable: usize,
    /// Questions without an answer; counted as wrong.
    pub missing: usize,
}

pub fn score(answers: &[PopeAnswer], questions: &[PopeQuestion]) -> Result<PopeScore> {
    if questions.is_empty() {
        return Err(Error::Scoring("question set is empty".into()));
    }
    let index: BTreeMap<u64, usize> = questions
        .iter()
        .enumerate()
        .map(|(i, q)| (q.question_id, i))
        .collect();
    if index.len() != questions.len() {
        return Err(Error::validation("question set has duplicate question ids"));
    }
    let mut by_question: Vec<Option<&str>> = vec![None; questions.len()];
    let mut unknown = Vec::new();
    for a in answers {
        match index.get(&a.question_id) {
            Some(&i) if by_question[i].is_some() => {
                return Err(Error::validation(format!(
                    "question {} answered more than once",
                    a.question_id
                )))
            }
            Some(&i) => by_question[i] = Some(&a.raw_text),
            None => unknown.push(a.question_id.to_string()),
        }
    }
    if !unknown.is_empty() {
        return Err(Error::Scoring(format!("unknown question ids: {}", unknown.join(", "))));
    }

    let parsed: Vec<Option<Option<bool>>> = by_question
        .par_iter()
        .map(|a| a.map(normalize_answer))
        .collect();

    let mut per: BTreeMap<Strategy, (usize, usize)> = BTreeMap::new();
    let (mut correct, mut yes, mut parsed_n, mut unparseable, mut missing) = (0, 0, 0, 0, 0);
    for (q, p) in questions.iter().zip(&parsed) {
        let ok = match p {
            None => {
                missing += 1;
                false
            }
            Some(None) => {
                unparseable += 1;
                false
            }
            Some(Some(v)) => {
                parsed_n += 1;
                yes += usize::from(*v);
                *v == q.label.as_bool()
            }
        };
        correct += usize::from(ok);
        let e = per.entry(q.strategy).or_default();
        e.0 += 1;
        e.1 += usize::from(ok);
    }
    Ok(PopeScore {
        questions: questions.len(),
        correct,
        accuracy: correct as f64 / questions.len() as f64,
        per_strategy: per
            .into_iter()
            .map(|(s, (n, c))| {
                (
                    s,
                    StrategyScore {
                        questions: n,
                        correct: c,
                        accuracy: c as f64 / n as f64,
                    },
                )
            })
            .collect(),
        yes_rate: if parsed_n == 0 { 0.0 } else { yes as f64 / parsed_n as f64 },
        unparseable,
        missing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotations::{build_stats, ClassInfo, ClassRegistry, ImageEntry};

    fn corpus(names: &[&str], images: &[&[&str]]) -> Corpus {
        let reg = ClassRegistry::new(
            names
                .iter()
                .enumerate()
                .map(|(i, n)| ClassInfo {
                    id: ClassId(i as u32 + 1),
                    name: n.to_string(),
                    synonyms: vec![],
                })
                .collect(),
        )
        .unwrap();
        let images = images
            .iter()
            .enumerate()
            .map(|(i, p)| ImageEntry {
                image_id: ImageId(i as u64 + 1),
                present: p.iter().map(|n| reg.id_of(n).unwrap()).collect(),
            })
            .collect();
        Corpus::new(images, reg).unwrap()
    }

    #[test]
    fn render() {
        assert_eq!(
            render_question("dog").unwrap(),
            "Is there a dog in the image? Answer with yes or no."
        );
        assert!(render_question("orange").unwrap().starts_with("Is there an orange in the image?"));
        assert!(render_question("").is_err());
        assert!(render_question("  ").is_err());
    }

    #[test]
    fn popular_takes_most_frequent_absent() {
        let c = corpus(
            &["dog", "car", "person"],
            &[&["person"], &["person", "car"], &["person", "car", "dog"]],
        );
        let stats = build_stats(&c).unwrap();
        let s = generate(&c, &stats, Strategy::Popular, 2, 1, Default::default());
        // only image 1 and 2 have a free negative; both pick by frequency
        let s = s.unwrap();
        let neg = &s.questions[1];
        assert_eq!(neg.label, Label::No);
        let expected = if neg.image_id == ImageId(1) { "car" } else { "dog" };
        assert_eq!(neg.class, expected);
    }

    #[test]
    fn adversarial_picks_cooccurring() {
        let mut images: Vec<&[&str]> = vec![&["dog", "leash"]; 5];
        images.push(&["dog"]);
        images.push(&["cat", "car"]);
        let c = corpus(&["dog", "leash", "cat", "car"], &images);
        let stats = build_stats(&c).unwrap();
        let ranked = ranked_negatives(
            &c.image(ImageId(6)).unwrap().present,
            &c.registry().ids().collect::<Vec<_>>(),
            &stats,
            Strategy::Adversarial,
            Default::default(),
        );
        assert_eq!(c.registry().name(ranked[0]), Some("leash"));
    }

    #[test]
    fn balance_and_errors() {
        let c = corpus(&["a1", "b1", "c1", "d1"], &[&["a1", "b1"], &["c1"], &[], &["a1", "b1", "c1", "d1"]]);
        let stats = build_stats(&c).unwrap();
        let s = generate(&c, &stats, Strategy::Random, 4, 3, Default::default()).unwrap();
        assert_eq!(s.questions.iter().filter(|q| q.label == Label::Yes).count(), 2);
        assert_eq!(max_questions(&c), 6);
        match generate(&c, &stats, Strategy::Random, 8, 3, Default::default()) {
            Err(Error::Generation { achievable, .. }) => assert_eq!(achievable, 6),
            other => panic!("{other:?}"),
        }
        assert!(generate(&c, &stats, Strategy::Random, 3, 3, Default::default()).is_err());
        assert!(generate(&c, &stats, Strategy::Random, 0, 3, Default::default()).is_err());
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize_answer("Yes, there is."), Some(true));
        assert_eq!(normalize_answer("NO."), Some(false));
        assert_eq!(normalize_answer("I think yes"), Some(true));
        assert_eq!(normalize_answer("There is no dog"), Some(false));
        assert_eq!(normalize_answer("nothing here, yesterday"), None);
        assert_eq!(normalize_answer(""), None);
    }

    fn q(id: u64, label: Label) -> PopeQuestion {
        PopeQuestion {
            question_id: id,
            image_id: ImageId(1),
            class_id: ClassId(1),
            class: "dog".into(),
            text: String::new(),
            label,
            strategy: Strategy::Random,
        }
    }

    fn a(id: u64, t: &str) -> PopeAnswer {
        PopeAnswer { question_id: id, raw_text: t.into() }
    }

    #[test]
    fn scoring() {
        let qs = [q(1, Label::Yes), q(2, Label::No)];
        let s = score(&[a(1, "Yes, there is."), a(2, "no")], &qs).unwrap();
        assert_eq!(s.accuracy, 1.0);
        assert_eq!(s.yes_rate, 0.5);
        let s = score(&[a(1, "maybe")], &qs).unwrap();
        assert_eq!((s.accuracy, s.unparseable, s.missing), (0.0, 1, 1));
        assert!(matches!(score(&[a(9, "yes")], &qs), Err(Error::Scoring(_))));
        assert!(score(&[a(1, "yes"), a(1, "no")], &qs).is_err());
    }
}
