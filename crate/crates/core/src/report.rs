//! Versioned metric reports, their markdown rendering, and report diffs.
//!
//! A report holds only values derived from its inputs (digests, config and
//! metric blocks), so equal inputs serialize to identical bytes. Wall-clock
//! data belongs in a separate metadata file.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::chair::ChairResult;
use crate::chair_men::ChairMenResult;
use crate::error::{Error, Result};
use crate::faithscore::FaithResult;
use crate::grounded_text::GroundedCaption;
use crate::pope::PopeScore;
use crate::refexp::RefExpResult;

pub const SCHEMA_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundingStats {
    pub captions: usize,
    pub captions_with_boxes: usize,
    pub mentions: usize,
    pub well_formed_groups: usize,
    pub malformed_groups: usize,
    pub unattached_groups: usize,
    pub avg_mentions: f64,
}

impl GroundingStats {
    pub fn from_captions(caps: &[GroundedCaption]) -> Self {
        let mut s = GroundingStats {
            captions: caps.len(),
            ..Default::default()
        };
        for c in caps {
            s.captions_with_boxes += usize::from(c.has_boxes());
            s.mentions += c.mentions.len();
            s.well_formed_groups += c.well_formed_groups();
            s.malformed_groups += c.malformed_groups;
            s.unattached_groups += c.unattached_groups;
        }
        if s.captions > 0 {
            s.avg_mentions = s.mentions as f64 / s.captions as f64;
        }
        s
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chair: Option<ChairResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chair_men: Option<ChairMenResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub faithscore: Option<FaithResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pope: Option<PopeScore>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub refexp: Option<RefExpResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clip_score: Option<f64>,
    /// Not computed; kept so exports line up with caption-quality tables.
    pub cider: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub schema_version: u32,
    pub tool_version: String,
    pub command: String,
    pub dataset_digest: Option<String>,
    pub predictions_digest: Option<String>,
    pub config: Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grounding: Option<GroundingStats>,
    pub metrics: Metrics,
}

pub fn digest_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn digest_file(path: &Path) -> Result<String> {
    Ok(digest_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?))
}

impl MetricReport {
    pub fn new(command: impl Into<String>, config: Value) -> Self {
        MetricReport {
            schema_version: SCHEMA_VERSION,
            tool_version: TOOL_VERSION.to_string(),
            command: command.into(),
            dataset_digest: None,
            predictions_digest: None,
            config,
            grounding: None,
            metrics: Metrics::default(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report is plain data");
        s.push('\n');
        s
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let r: MetricReport =
            serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))?;
        if r.schema_version != SCHEMA_VERSION {
            return Err(Error::validation(format!(
                "{}: schema version {} not supported (expected {SCHEMA_VERSION})",
                path.display(),
                r.schema_version
            )));
        }
        Ok(r)
    }

    /// Headline numbers in table units: rates in percent, counts raw.
    pub fn headline(&self) -> BTreeMap<String, f64> {
        let mut h = BTreeMap::new();
        let m = &self.metrics;
        let pct = |x: f64| x * 100.0;
        if let Some(c) = &m.chair {
            if !c.chair_i_undefined {
                h.insert("chair_i".into(), pct(c.chair_i));
            }
            h.insert("chair_s".into(), pct(c.chair_s));
            if let Some(cov) = c.coverage {
                h.insert("coverage".into(), pct(cov));
            }
            h.insert("objects".into(), c.avg_objects);
            h.insert("words".into(), c.avg_words);
        }
        if let Some(c) = &m.chair_men {
            if !c.chair.chair_i_undefined {
                h.insert("chair_men_i".into(), pct(c.chair.chair_i));
            }
            if let Some(cov) = c.chair.coverage {
                h.insert("chair_men_coverage".into(), pct(cov));
            }
            h.insert("chair_men_objects".into(), c.chair.avg_objects);
            h.entry("words".into()).or_insert(c.chair.avg_words);
        }
        if let Some(f) = &m.faithscore {
            if !f.faith_score_undefined {
                h.insert("faithscore".into(), pct(f.faith_score));
            }
            h.insert("facts".into(), f.avg_facts);
        }
        if let Some(p) = &m.pope {
            h.insert("pope_accuracy".into(), pct(p.accuracy));
            for (s, v) in &p.per_strategy {
                h.insert(format!("pope_{s}"), pct(v.accuracy));
            }
            h.insert("pope_yes_rate".into(), pct(p.yes_rate));
        }
        if let Some(r) = &m.refexp {
            h.insert(format!("p_at_{}", (r.k * 100.0).round() as u32), r.precision);
        }
        if let Some(c) = m.clip_score {
            h.insert("clip_score".into(), pct(c));
        }
        h
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# {} report\n", self.command);
        if let Some(d) = &self.dataset_digest {
            let _ = writeln!(s, "dataset digest: `{d}`\n");
        }
        let _ = writeln!(s, "| metric | value |\n|---|---|");
        for (k, v) in self.headline() {
            let _ = writeln!(s, "| {k} | {v:.2} |");
        }
        if self.metrics.chair.is_some() || self.metrics.chair_men.is_some() {
            let _ = writeln!(s, "| cider | n/a |");
        }
        if let Some(g) = &self.grounding {
            let _ = writeln!(
                s,
                "\ngrounded captions: {}/{} with boxes, {} mentions, {} malformed groups, {} unattached groups",
                g.captions_with_boxes, g.captions, g.mentions, g.malformed_groups, g.unattached_groups
            );
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Delta {
    pub a: f64,
    pub b: f64,
    /// `b - a` rounded to two decimals.
    pub delta: f64,
    /// Signed, two decimals, e.g. `-1.18`.
    pub formatted: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDiff {
    pub deltas: BTreeMap<String, Delta>,
    /// Metrics present in only one report.
    pub omitted: Vec<String>,
}

fn round2(x: f64) -> f64 {
    let r = (x * 100.0).round() / 100.0;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

/// Per-metric `b - a` over shared headline metrics.
pub fn diff_reports(a: &MetricReport, b: &MetricReport) -> Result<ReportDiff> {
    if let (Some(da), Some(db)) = (&a.dataset_digest, &b.dataset_digest) {
        if da != db {
            return Err(Error::validation(format!(
                "reports describe different datasets ({} vs {})",
                &da[..da.len().min(12)],
                &db[..db.len().min(12)]
            )));
        }
    }
    let ha = a.headline();
    let hb = b.headline();
    let mut deltas = BTreeMap::new();
    let mut omitted = Vec::new();
    for (k, va) in &ha {
        match hb.get(k) {
            Some(vb) => {
                let d = round2(vb - va);
                deltas.insert(
                    k.clone(),
                    Delta {
                        a: *va,
                        b: *vb,
                        delta: d,
                        formatted: format!("{d:+.2}"),
                    },
                );
            }
            None => omitted.push(k.clone()),
        }
    }
    omitted.extend(hb.keys().filter(|k| !ha.contains_key(*k)).cloned());
    omitted.sort();
    for k in &omitted {
        log::info!("metric {k} appears in only one report; omitted from diff");
    }
    Ok(ReportDiff { deltas, omitted })
}

impl ReportDiff {
    pub fn to_markdown(&self) -> String {
        let mut s = String::from("| metric | a | b | delta |\n|---|---|---|---|\n");
        for (k, d) in &self.deltas {
            let _ = writeln!(s, "| {k} | {:.2} | {:.2} | {} |", d.a, d.b, d.formatted);
        }
        if !self.omitted.is_empty() {
            let _ = writeln!(s, "\nomitted (in one report only): {}", self.omitted.join(", "));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chair::ImageChair;

    fn chair_report(chair_i: f64) -> MetricReport {
        let mut r = MetricReport::new("chair", Value::Null);
        let mut c = ChairResult::aggregate(vec![ImageChair {
            image_id: crate::annotations::ImageId(1),
            matched: vec![],
            hallucinated: vec![],
            covered: 0,
            gold: 1,
            words: 10,
        }])
        .unwrap();
        c.chair_i = chair_i;
        c.chair_i_undefined = false;
        r.metrics.chair = Some(c);
        r.dataset_digest = Some("d".into());
        r
    }

    #[test]
    fn replay_delta() {
        let d = diff_reports(&chair_report(0.1451), &chair_report(0.1333)).unwrap();
        assert_eq!(d.deltas["chair_i"].formatted, "-1.18");
        assert_eq!(d.deltas["chair_i"].delta, -1.18);
        assert_eq!(d.deltas["words"].formatted, "+0.00");
    }

    #[test]
    fn identical_and_missing() {
        let a = chair_report(0.2);
        let d = diff_reports(&a, &a).unwrap();
        assert!(d.deltas.values().all(|x| x.delta == 0.0));
        let mut b = a.clone();
        b.metrics.clip_score = Some(0.12);
        let d = diff_reports(&a, &b).unwrap();
        assert_eq!(d.omitted, vec!["clip_score"]);
        b.dataset_digest = Some("other".into());
        assert!(diff_reports(&a, &b).is_err());
    }

    #[test]
    fn json_roundtrip_and_markdown() {
        let r = chair_report(0.25);
        let back: MetricReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
        assert!(r.to_json().contains("\"cider\": null"));
        let md = r.to_markdown();
        assert!(md.contains("| chair_i | 25.00 |"));
        assert!(md.contains("| cider | n/a |"));
    }
}
