//! Referring-expression grounding: Precision@K over predicted boxes.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};
use crate::grounded_text::scan_groups;

pub const DEFAULT_K: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefExpExample {
    pub example_id: String,
    pub expression: String,
    pub gold: BBox,
    pub predicted_raw: String,
}

pub fn read_examples(path: &Path) -> Result<Vec<RefExpExample>> {
    crate::providers::read_jsonl(path)
}

/// How a box is taken from free-form model output.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Extraction {
    /// First well-formed group, merged to its covering box.
    #[default]
    FirstMerged,
    /// Every well-formed group (each merged); the best IoU counts.
    BestOfAll,
}

fn candidates(raw: &str) -> Vec<BBox> {
    scan_groups(raw)
        .into_iter()
        .filter_map(|g| g.parsed.ok())
        .map(|g| g.covering_box())
        .collect()
}

/// IoU of the extracted prediction with gold, or `None` when no box parses.
pub fn example_iou(ex: &RefExpExample, extraction: Extraction) -> Option<f64> {
    let boxes = candidates(&ex.predicted_raw);
    match extraction {
        Extraction::FirstMerged => boxes.first().map(|b| iou(b, &ex.gold)),
        Extraction::BestOfAll => boxes
            .iter()
            .map(|b| iou(b, &ex.gold))
            .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v)))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefExpResult {
    pub k: f64,
    /// Percentage of examples with IoU >= k.
    pub precision: f64,
    /// Mean IoU, unparseable predictions counting as 0.
    pub mean_iou: f64,
    pub n: usize,
    pub successes: usize,
    pub parse_failures: usize,
    pub extraction: Extraction,
}

pub fn precision_at(examples: &[RefExpExample], k: f64, extraction: Extraction) -> Result<RefExpResult> {
    if !(k > 0.0 && k <= 1.0) {
        return Err(Error::validation(format!("k must lie in (0,1], got {k}")));
    }
    if examples.is_empty() {
        return Err(Error::Scoring("no referring expressions to score".into()));
    }
    let ious: Vec<Option<f64>> = examples.par_iter().map(|e| example_iou(e, extraction)).collect();
    let successes = ious.iter().filter(|v| v.is_some_and(|x| x >= k)).count();
    let parse_failures = ious.iter().filter(|v| v.is_none()).count();
    let n = examples.len();
    Ok(RefExpResult {
        k,
        precision: successes as f64 * 100.0 / n as f64,
        mean_iou: ious.iter().map(|v| v.unwrap_or(0.0)).sum::<f64>() / n as f64,
        n,
        successes,
        parse_failures,
        extraction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ex(pred: &str) -> RefExpExample {
        RefExpExample {
            example_id: "e".into(),
            expression: "the dog".into(),
            gold: BBox::new(0.0, 0.0, 0.5, 0.5).unwrap(),
            predicted_raw: pred.into(),
        }
    }

    #[test]
    fn boundary_and_failures() {
        let set = [
            ex("[0.00, 0.00, 0.50, 0.50]"),
            // half the gold area inside gold: IoU exactly 0.5
            ex("It is at [0.00, 0.00, 0.50, 0.25]."),
            ex("I cannot find it"),
            ex("[0.25, 0.25, 0.75, 0.75]"),
        ];
        let r = precision_at(&set, 0.5, Extraction::FirstMerged).unwrap();
        assert_eq!(r.precision, 50.0);
        assert_eq!(r.parse_failures, 1);
        assert!((r.mean_iou - (1.0 + 0.5 + 1.0 / 7.0) / 4.0).abs() < 1e-12);
    }

    #[test]
    fn merging_and_best_of_all() {
        let e = ex("[0.00, 0.00, 0.25, 0.50; 0.25, 0.00, 0.50, 0.50]");
        assert_eq!(example_iou(&e, Extraction::FirstMerged), Some(1.0));
        let e = ex("[0.60, 0.60, 0.90, 0.90] or [0.00, 0.00, 0.50, 0.50]");
        assert_eq!(example_iou(&e, Extraction::FirstMerged), Some(0.0));
        assert_eq!(example_iou(&e, Extraction::BestOfAll), Some(1.0));
        let e = ex("[1.5, 0, 1, 1] then [0.00, 0.00, 0.50, 0.50]");
        assert_eq!(example_iou(&e, Extraction::FirstMerged), Some(1.0));
    }

    #[test]
    fn invalid_inputs() {
        assert!(precision_at(&[], 0.5, Extraction::FirstMerged).is_err());
        assert!(precision_at(&[ex("")], 0.0, Extraction::FirstMerged).is_err());
        assert!(precision_at(&[ex("")], 1.1, Extraction::FirstMerged).is_err());
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (0u32..90, 0u32..90, 1u32..10, 1u32..10).prop_map(|(x, y, w, h)| {
            let f = |v: u32| f64::from(v) / 100.0;
            BBox::new(f(x), f(y), f(x + w), f(y + h)).unwrap()
        })
    }

    proptest! {
        #[test]
        fn monotone_in_k(boxes in proptest::collection::vec((arb_box(), arb_box()), 1..20), k1 in 0.01f64..=1.0, k2 in 0.01f64..=1.0) {
            let set: Vec<RefExpExample> = boxes
                .iter()
                .map(|(g, p)| RefExpExample {
                    example_id: String::new(),
                    expression: String::new(),
                    gold: *g,
                    predicted_raw: format!("[{p}]"),
                })
                .collect();
            let (lo, hi) = if k1 <= k2 { (k1, k2) } else { (k2, k1) };
            let a = precision_at(&set, lo, Extraction::FirstMerged).unwrap();
            let b = precision_at(&set, hi, Extraction::FirstMerged).unwrap();
            prop_assert!(b.precision <= a.precision);
        }

        #[test]
        fn fixing_a_failure_adds_one(boxes in proptest::collection::vec((arb_box(), arb_box()), 1..20), pick in 0usize..20) {
            let mut set: Vec<RefExpExample> = boxes
                .iter()
                .map(|(g, p)| RefExpExample {
                    example_id: String::new(),
                    expression: String::new(),
                    gold: *g,
                    predicted_raw: format!("[{p}]"),
                })
                .collect();
            let before = precision_at(&set, 0.5, Extraction::FirstMerged).unwrap();
            let failures: Vec<usize> = (0..set.len())
                .filter(|&i| example_iou(&set[i], Extraction::FirstMerged).is_none_or(|v| v < 0.5))
                .collect();
            prop_assume!(!failures.is_empty());
            let i = failures[pick % failures.len()];
            set[i].predicted_raw = format!("[{}]", set[i].gold);
            let after = precision_at(&set, 0.5, Extraction::FirstMerged).unwrap();
            prop_assert_eq!(after.successes, before.successes + 1);
        }
    }
}
