//! CHAIR-MEN: CHAIR with noun phrases matched to classes by embedding cosine.
//!
//! Each noun phrase of a caption is assigned, in this order:
//!
//! 1. the most similar class among the image's annotated objects, if the
//!    cosine is at least `t1`;
//! 2. otherwise the most similar class among the remaining classes, if the
//!    cosine is at least `t2` (a hallucination);
//! 3. otherwise nothing.
//!
//! Ties go to the smaller class id. Scoring is split into a threshold-free
//! [`analyze`] pass (provider calls, best cosines per phrase) and a cheap
//! [`score_analyzed`] pass, which lets threshold sweeps reuse one analysis.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotations::{ClassId, Corpus, ImageId};
use crate::chair::{resolve_images, CaptionRecord, ChairResult, ImageChair};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::grounded_text::word_count;
use crate::providers::{cosine, input_key, normalize, EmbeddingProvider, NounPhraseProvider};

pub const DEFAULT_T1: f64 = 0.73;
pub const DEFAULT_T2: f64 = 0.78;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChairMenConfig {
    /// Minimum cosine to match a phrase to one of the image's own objects.
    pub t1: f64,
    /// Minimum cosine to match a phrase to an object absent from the image.
    pub t2: f64,
    /// Text embedded for each class; `{name}` is replaced by the class name.
    pub class_template: String,
}

impl Default for ChairMenConfig {
    fn default() -> Self {
        ChairMenConfig {
            t1: DEFAULT_T1,
            t2: DEFAULT_T2,
            class_template: "{name}".into(),
        }
    }
}

impl ChairMenConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, t) in [("t1", self.t1), ("t2", self.t2)] {
            if !(t > 0.0 && t <= 1.0) {
                return Err(Error::validation(format!("{name} must lie in (0,1], got {t}")));
            }
        }
        if !self.class_template.contains("{name}") {
            return Err(Error::validation("class template must contain {name}"));
        }
        Ok(())
    }

    pub fn class_text(&self, name: &str) -> String {
        self.class_template.replace("{name}", name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", content = "class_id", rename_all = "snake_case")]
pub enum Verdict {
    Present(ClassId),
    Absent(ClassId),
    Unassigned,
}

/// Best-scoring class of one candidate pool.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BestMatch {
    pub class_id: ClassId,
    pub cosine: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NpAssignment {
    pub phrase: String,
    #[serde(flatten)]
    pub verdict: Verdict,
    pub best_present: Option<BestMatch>,
    pub best_absent: Option<BestMatch>,
}

/// The three-step rule on precomputed best matches.
pub fn decide(
    best_present: Option<BestMatch>,
    best_absent: Option<BestMatch>,
    t1: f64,
    t2: f64,
) -> Verdict {
    match (best_present, best_absent) {
        (Some(p), _) if p.cosine >= t1 => Verdict::Present(p.class_id),
        (_, Some(a)) if a.cosine >= t2 => Verdict::Absent(a.class_id),
        _ => Verdict::Unassigned,
    }
}

fn best_of(np: &[f64], pool: &[(ClassId, &[f64])]) -> Result<Option<BestMatch>> {
    let mut best: Option<BestMatch> = None;
    let mut sorted: Vec<&(ClassId, &[f64])> = pool.iter().collect();
    sorted.sort_by_key(|(c, _)| *c);
    for (class_id, emb) in sorted {
        let c = cosine(np, emb)?;
        // strict comparison keeps the smallest id on ties
        if best.is_none_or(|b| c > b.cosine) {
            best = Some(BestMatch {
                class_id: *class_id,
                cosine: c,
            });
        }
    }
    Ok(best)
}

/// Assigns one phrase embedding given the image's present and absent class
/// embeddings.
pub fn assign(
    np_embedding: &[f64],
    present: &[(ClassId, &[f64])],
    absent: &[(ClassId, &[f64])],
    cfg: &ChairMenConfig,
) -> Result<(Verdict, Option<BestMatch>, Option<BestMatch>)> {
    let bp = best_of(np_embedding, present)?;
    let ba = best_of(np_embedding, absent)?;
    Ok((decide(bp, ba, cfg.t1, cfg.t2), bp, ba))
}

/// Noun phrases of a box-free caption, as returned by the provider.
pub fn extract_nps(plain_caption: &str, np: &dyn NounPhraseProvider) -> Result<Vec<String>> {
    if plain_caption.trim().is_empty() {
        return Ok(Vec::new());
    }
    np.noun_phrases(plain_caption)
}

type Pool<'a> = Vec<(ClassId, &'a [f64])>;

/// Unit-norm class-name embeddings, computed once per corpus.
#[derive(Debug, Clone)]
pub struct ClassEmbeddings {
    vectors: BTreeMap<ClassId, Vec<f64>>,
}

impl ClassEmbeddings {
    pub fn compute(corpus: &Corpus, cfg: &ChairMenConfig, embedder: &dyn EmbeddingProvider) -> Result<Self> {
        let classes = corpus.registry().classes();
        let texts: Vec<String> = classes.iter().map(|c| cfg.class_text(&c.name)).collect();
        let resp = embedder.embed(&texts)?;
        if resp.vectors.len() != texts.len() {
            return Err(Error::Transport("class embedding count mismatch".into()));
        }
        let vectors = classes
            .iter()
            .zip(resp.vectors)
            .map(|(c, v)| Ok((c.id, normalize(&v)?)))
            .collect::<Result<_>>()?;
        Ok(ClassEmbeddings { vectors })
    }

    pub fn get(&self, id: ClassId) -> Option<&[f64]> {
        self.vectors.get(&id).map(Vec::as_slice)
    }

    fn split(&self, gold: &BTreeSet<ClassId>) -> (Pool<'_>, Pool<'_>) {
        self.vectors
            .iter()
            .map(|(c, v)| (*c, v.as_slice()))
            .partition(|(c, _)| gold.contains(c))
    }
}

/// Threshold-free per-phrase analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NpMatch {
    pub phrase: String,
    pub best_present: Option<BestMatch>,
    pub best_absent: Option<BestMatch>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyzedCaption {
    pub image_id: ImageId,
    pub gold: usize,
    pub words: usize,
    pub nps: Vec<NpMatch>,
}

fn analyze_one(
    record: &CaptionRecord,
    gold: &BTreeSet<ClassId>,
    classes: &ClassEmbeddings,
    embedder: &dyn EmbeddingProvider,
    np: &dyn NounPhraseProvider,
) -> Result<AnalyzedCaption> {
    let phrases = extract_nps(&record.caption, np)?;
    let mut nps = Vec::with_capacity(phrases.len());
    if !phrases.is_empty() {
        let resp = embedder.embed(&phrases)?;
        if resp.vectors.len() != phrases.len() {
            return Err(Error::Transport("phrase embedding count mismatch".into()));
        }
        let (present, absent) = classes.split(gold);
        for (phrase, v) in phrases.into_iter().zip(resp.vectors) {
            let v = normalize(&v)?;
            nps.push(NpMatch {
                phrase,
                best_present: best_of(&v, &present)?,
                best_absent: best_of(&v, &absent)?,
            });
        }
    }
    Ok(AnalyzedCaption {
        image_id: record.image_id,
        gold: gold.len(),
        words: word_count(&record.caption),
        nps,
    })
}

/// Runs the provider-backed part of scoring for every record, in parallel.
/// With a checkpoint, finished captions are appended as they complete and
/// reused on the next run; if any caption fails the error is
/// [`Error::Partial`].
pub fn analyze(
    records: &[CaptionRecord],
    corpus: &Corpus,
    cfg: &ChairMenConfig,
    embedder: &dyn EmbeddingProvider,
    np: &dyn NounPhraseProvider,
    checkpoint: Option<&Path>,
) -> Result<Vec<AnalyzedCaption>> {
    cfg.validate()?;
    let golds = resolve_images(records, corpus)?;
    let classes = ClassEmbeddings::compute(corpus, cfg, embedder)?;
    let ck = checkpoint.map(Checkpoint::<AnalyzedCaption>::open).transpose()?;

    let results: Vec<Result<AnalyzedCaption>> = records
        .par_iter()
        .zip(golds.par_iter())
        .enumerate()
        .map(|(i, (rec, gold))| {
            let key = input_key(&rec.caption);
            if let Some(hit) = ck.as_ref().and_then(|c| c.get(i, &key)) {
                return Ok(hit);
            }
            let out = analyze_one(rec, gold, &classes, embedder, np)?;
            if let Some(c) = &ck {
                c.append(i, &key, &out)?;
            }
            Ok(out)
        })
        .collect();

    let total = results.len();
    let completed = results.iter().filter(|r| r.is_ok()).count();
    let mut out = Vec::with_capacity(total);
    for r in results {
        match r {
            Ok(a) => out.push(a),
            Err(e) => {
                return Err(Error::Partial {
                    completed,
                    total,
                    checkpoint: ck.as_ref().map(|c| c.path().to_path_buf()),
                    cause: Box::new(e),
                })
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionAssignments {
    pub image_id: ImageId,
    pub nps: Vec<NpAssignment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChairMenResult {
    #[serde(flatten)]
    pub chair: ChairResult,
    pub t1: f64,
    pub t2: f64,
    /// Noun phrases before per-caption deduplication.
    pub raw_np_count: usize,
    pub assignments: Vec<CaptionAssignments>,
}

/// Applies thresholds to an analysis. Matched and hallucinated classes use
/// set semantics per caption; coverage counts only present-verdict classes.
pub fn score_analyzed(analyzed: &[AnalyzedCaption], t1: f64, t2: f64) -> Result<ChairMenResult> {
    let mut per_image = Vec::with_capacity(analyzed.len());
    let mut assignments = Vec::with_capacity(analyzed.len());
    let mut raw = 0;
    for a in analyzed {
        raw += a.nps.len();
        let mut present = BTreeSet::new();
        let mut absent = BTreeSet::new();
        let mut nps = Vec::with_capacity(a.nps.len());
        for m in &a.nps {
            let verdict = decide(m.best_present, m.best_absent, t1, t2);
            match verdict {
                Verdict::Present(c) => {
                    present.insert(c);
                }
                Verdict::Absent(c) => {
                    absent.insert(c);
                }
                Verdict::Unassigned => {}
            }
            nps.push(NpAssignment {
                phrase: m.phrase.clone(),
                verdict,
                best_present: m.best_present,
                best_absent: m.best_absent,
            });
        }
        per_image.push(ImageChair {
            image_id: a.image_id,
            matched: present.union(&absent).copied().collect(),
            hallucinated: absent.into_iter().collect(),
            covered: present.len(),
            gold: a.gold,
            words: a.words,
        });
        assignments.push(CaptionAssignments {
            image_id: a.image_id,
            nps,
        });
    }
    Ok(ChairMenResult {
        chair: ChairResult::aggregate(per_image)?,
        t1,
        t2,
        raw_np_count: raw,
        assignments,
    })
}

pub fn score_chair_men(
    records: &[CaptionRecord],
    corpus: &Corpus,
    cfg: &ChairMenConfig,
    embedder: &dyn EmbeddingProvider,
    np: &dyn NounPhraseProvider,
) -> Result<ChairMenResult> {
    let analyzed = analyze(records, corpus, cfg, embedder, np, None)?;
    score_analyzed(&analyzed, cfg.t1, cfg.t2)
}

/// One grid point of a threshold sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPoint {
    pub t1: f64,
    pub t2: f64,
    pub chair_i: f64,
    pub coverage: Option<f64>,
    pub avg_objects: f64,
    /// |CHAIR-MEN CHAIR_i - reference CHAIR_i|
    pub chair_i_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub reference_chair_i: f64,
    pub reference_coverage: Option<f64>,
    pub points: Vec<CalibrationPoint>,
    /// Smallest gap; ties keep the earliest grid point.
    pub best: Option<CalibrationPoint>,
}

/// Sweeps every `(t1, t2)` pair against a reference CHAIR result.
pub fn calibrate(
    analyzed: &[AnalyzedCaption],
    reference: &ChairResult,
    t1_grid: &[f64],
    t2_grid: &[f64],
) -> Result<Calibration> {
    let mut points = Vec::new();
    for &t1 in t1_grid {
        for &t2 in t2_grid {
            ChairMenConfig {
                t1,
                t2,
                ..Default::default()
            }
            .validate()?;
            let r = score_analyzed(analyzed, t1, t2)?;
            points.push(CalibrationPoint {
                t1,
                t2,
                chair_i: r.chair.chair_i,
                coverage: r.chair.coverage,
                avg_objects: r.chair.avg_objects,
                chair_i_gap: (r.chair.chair_i - reference.chair_i).abs(),
            });
        }
    }
    let best = points
        .iter()
        .fold(None::<&CalibrationPoint>, |acc, p| match acc {
            Some(b) if b.chair_i_gap <= p.chair_i_gap => Some(b),
            _ => Some(p),
        })
        .cloned();
    Ok(Calibration {
        reference_chair_i: reference.chair_i,
        reference_coverage: reference.coverage,
        points,
        best,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotations::{ClassInfo, ClassRegistry, ImageEntry};
    use crate::providers::{MockEmbedder, MockNounPhrases};
    use proptest::prelude::*;

    /// Unit vector with cosine `c` to e0 and the remainder on axis `k`.
    fn with_cos(c: f64, k: usize, dim: usize) -> Vec<f64> {
        let mut v = vec![0.0; dim];
        v[0] = c;
        v[k] = (1.0 - c * c).sqrt();
        v
    }

    fn e0(dim: usize) -> Vec<f64> {
        let mut v = vec![0.0; dim];
        v[0] = 1.0;
        v
    }

    fn run(present_cos: f64, absent_cos: f64) -> Verdict {
        let p = with_cos(present_cos, 1, 4);
        let a = with_cos(absent_cos, 2, 4);
        let (v, _, _) = assign(
            &e0(4),
            &[(ClassId(1), &p)],
            &[(ClassId(2), &a)],
            &ChairMenConfig::default(),
        )
        .unwrap();
        v
    }

    #[test]
    fn threshold_cases() {
        assert_eq!(run(0.90, 0.95), Verdict::Present(ClassId(1)));
        assert_eq!(run(0.70, 0.80), Verdict::Absent(ClassId(2)));
        assert_eq!(run(0.70, 0.75), Verdict::Unassigned);
        assert_eq!(run(0.73, 0.0), Verdict::Present(ClassId(1)));
        assert_eq!(run(0.0, 0.78), Verdict::Absent(ClassId(2)));
    }

    #[test]
    fn ties_prefer_smaller_id_and_empty_pools() {
        let v = with_cos(0.9, 1, 3);
        let (verdict, bp, _) = assign(
            &e0(3),
            &[(ClassId(9), &v), (ClassId(4), &v)],
            &[],
            &ChairMenConfig::default(),
        )
        .unwrap();
        assert_eq!(verdict, Verdict::Present(ClassId(4)));
        assert_eq!(bp.unwrap().class_id, ClassId(4));
        let (verdict, bp, ba) = assign(&e0(3), &[], &[], &ChairMenConfig::default()).unwrap();
        assert_eq!((verdict, bp, ba), (Verdict::Unassigned, None, None));
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let p = vec![1.0, 0.0];
        assert!(assign(&e0(3), &[(ClassId(1), &p)], &[], &ChairMenConfig::default()).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(ChairMenConfig::default().validate().is_ok());
        let bad = ChairMenConfig { t1: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = ChairMenConfig { t2: 1.2, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = ChairMenConfig { class_template: "a photo".into(), ..Default::default() };
        assert!(bad.validate().is_err());
        let c = ChairMenConfig { class_template: "a photo of a {name}".into(), ..Default::default() };
        assert_eq!(c.class_text("dog"), "a photo of a dog");
    }

    fn dog_cat_corpus() -> Corpus {
        let reg = ClassRegistry::new(vec![
            ClassInfo { id: ClassId(1), name: "dog".into(), synonyms: vec![] },
            ClassInfo { id: ClassId(2), name: "cat".into(), synonyms: vec![] },
            ClassInfo { id: ClassId(3), name: "car".into(), synonyms: vec![] },
        ])
        .unwrap();
        Corpus::new(
            vec![ImageEntry { image_id: ImageId(1), present: [ClassId(1)].into() }],
            reg,
        )
        .unwrap()
    }

    fn head_embedder() -> MockEmbedder {
        MockEmbedder::new("onehot", |t: &str| {
            let head = t.split_whitespace().last().unwrap_or("");
            let mut v = vec![0.0; 4];
            let idx = match head.trim_end_matches('s') {
                "dog" => 0,
                "cat" => 1,
                "car" => 2,
                _ => 3,
            };
            v[idx] = 1.0;
            v
        })
    }

    #[test]
    fn present_and_absent_give_half() {
        let corpus = dog_cat_corpus();
        let np = MockNounPhrases::new(|_| vec!["a dog".into(), "a cat".into(), "the dogs".into(), "grass".into()]);
        let recs = [CaptionRecord { image_id: ImageId(1), caption: "a dog and a cat".into() }];
        let r = score_chair_men(&recs, &corpus, &ChairMenConfig::default(), &head_embedder(), &np).unwrap();
        assert_eq!(r.chair.chair_i, 0.5);
        assert_eq!(r.chair.coverage, Some(1.0));
        assert_eq!(r.chair.avg_objects, 2.0);
        assert_eq!(r.raw_np_count, 4);
        assert_eq!(r.assignments[0].nps[3].verdict, Verdict::Unassigned);
    }

    #[test]
    fn all_unassigned_is_undefined() {
        let corpus = dog_cat_corpus();
        let np = MockNounPhrases::new(|_| vec!["grass".into()]);
        let recs = [CaptionRecord { image_id: ImageId(1), caption: "grass".into() }];
        let r = score_chair_men(&recs, &corpus, &ChairMenConfig::default(), &head_embedder(), &np).unwrap();
        assert!(r.chair.chair_i_undefined);
        assert_eq!(r.chair.coverage, Some(0.0));
    }

    #[test]
    fn empty_caption_skips_provider() {
        let np = MockNounPhrases::new(|_| panic!("should not be called"));
        assert!(extract_nps("   ", &np).unwrap().is_empty());
        assert_eq!(np.requests(), 0);
    }

    #[test]
    fn calibration_recovers_matching_thresholds() {
        let corpus = dog_cat_corpus();
        let np = MockNounPhrases::new(|_| vec!["a dog".into(), "a cat".into()]);
        let recs = [CaptionRecord { image_id: ImageId(1), caption: "a dog and a cat".into() }];
        let analyzed = analyze(&recs, &corpus, &ChairMenConfig::default(), &head_embedder(), &np, None).unwrap();
        let reference = crate::chair::score_chair(&recs, &corpus).unwrap();
        let cal = calibrate(&analyzed, &reference, &[0.5, 0.9], &[0.5, 1.0]).unwrap();
        assert_eq!(cal.points.len(), 4);
        let best = cal.best.unwrap();
        assert_eq!(best.chair_i_gap, 0.0);
        assert_eq!((best.t1, best.t2), (0.5, 0.5));
        assert!(calibrate(&analyzed, &reference, &[0.0], &[0.5]).is_err());
    }

    fn arb_match() -> impl Strategy<Value = Option<BestMatch>> {
        proptest::option::of((1u32..6, -1.0f64..=1.0).prop_map(|(c, cosine)| BestMatch {
            class_id: ClassId(c),
            cosine,
        }))
    }

    proptest! {
        #[test]
        fn present_first(bp in arb_match(), ba in arb_match(), t1 in 0.01f64..=1.0, t2 in 0.01f64..=1.0) {
            let v = decide(bp, ba, t1, t2);
            if let Some(p) = bp {
                if p.cosine >= t1 {
                    prop_assert_eq!(v, Verdict::Present(p.class_id));
                }
            }
            if let Verdict::Absent(_) = v {
                prop_assert!(bp.is_none_or(|p| p.cosine < t1));
                prop_assert!(ba.unwrap().cosine >= t2);
            }
        }

        #[test]
        fn raising_thresholds_is_monotone(bp in arb_match(), ba in arb_match(), t1 in 0.01f64..0.9, t2 in 0.01f64..0.9, d in 0.0f64..0.1) {
            let absent = |t1, t2| matches!(decide(bp, ba, t1, t2), Verdict::Absent(_)) as u8;
            let present = |t1, t2| matches!(decide(bp, ba, t1, t2), Verdict::Present(_)) as u8;
            prop_assert!(absent(t1, t2 + d) <= absent(t1, t2));
            prop_assert!(present(t1 + d, t2) <= present(t1, t2));
        }
    }
}
