//! Config file loading. Precedence: command-line flag, then `HALLU_*`
//! environment variable (both resolved by clap), then the TOML file given
//! with `--config`, then built-in defaults.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use hallueval::providers::{ProviderConfig, ProviderKind};
use serde::Deserialize;

pub const ENV_PREFIX: &str = "HALLU_";

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub corpus: Option<PathBuf>,
    pub preds: Option<PathBuf>,
    pub classes: Option<PathBuf>,
    pub synonyms: Option<PathBuf>,
    pub no_synonyms: Option<bool>,
    pub t1: Option<f64>,
    pub t2: Option<f64>,
    pub class_template: Option<String>,
    pub strategy: Option<String>,
    pub n: Option<usize>,
    pub seed: Option<u64>,
    pub aggregation: Option<String>,
    pub k: Option<f64>,
    pub extraction: Option<String>,
    pub prompt: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub t1_grid: Option<String>,
    pub t2_grid: Option<String>,
    pub out: Option<PathBuf>,
    pub md: Option<bool>,
    #[serde(default)]
    pub providers: ProvidersSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProvidersSection {
    pub embed: Option<ProviderConfig>,
    pub np: Option<ProviderConfig>,
    pub chat: Option<ProviderConfig>,
    pub vqa: Option<ProviderConfig>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: FileConfig = toml::from_str(&text)
            .map_err(|e| hallueval::Error::validation(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.rebase(base);
        Ok(cfg)
    }

    /// Relative paths in the file are taken relative to the file itself.
    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(v) = p {
                if v.is_relative() {
                    *v = base.join(&*v);
                }
            }
        };
        for p in [
            &mut self.corpus,
            &mut self.preds,
            &mut self.classes,
            &mut self.synonyms,
            &mut self.prompt,
            &mut self.checkpoint,
            &mut self.out,
        ] {
            fix(p);
        }
        for pc in [
            &mut self.providers.embed,
            &mut self.providers.np,
            &mut self.providers.chat,
            &mut self.providers.vqa,
        ]
        .into_iter()
        .flatten()
        {
            fix(&mut pc.fixture);
        }
    }
}

/// `fixture:PATH`, `http:URL` or `mock:RULE`.
pub fn parse_provider_spec(spec: &str) -> Result<ProviderConfig> {
    let Some((kind, rest)) = spec.split_once(':') else {
        bail!(hallueval::Error::validation(format!(
            "provider spec {spec:?} must look like fixture:PATH, http:URL or mock:RULE"
        )));
    };
    let cfg = match kind {
        "fixture" => ProviderConfig::fixture(rest),
        "http" => ProviderConfig::http(rest),
        "mock" => ProviderConfig::mock(rest),
        _ => bail!(hallueval::Error::validation(format!("unknown provider kind {kind:?}"))),
    };
    Ok(cfg)
}

/// Flag/env spec wins over the file section; a bearer token from the
/// environment is attached to HTTP backends.
pub fn provider(flag: Option<&str>, file: Option<&ProviderConfig>, role: &str) -> Result<ProviderConfig> {
    let mut cfg = match (flag, file) {
        (Some(spec), _) => parse_provider_spec(spec)?,
        (None, Some(c)) => c.clone(),
        (None, None) => bail!(hallueval::Error::validation(format!(
            "no {role} provider configured (flag, {ENV_PREFIX}{} or [providers.{role}])",
            role.to_uppercase()
        ))),
    };
    if cfg.kind == ProviderKind::Http && cfg.bearer_token.is_none() {
        cfg.bearer_token = std::env::var(format!("{ENV_PREFIX}BEARER_TOKEN")).ok();
    }
    Ok(cfg)
}

/// `a,b,c` or `start:end:step` (inclusive, rounded to 1e-9).
pub fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let bad = || hallueval::Error::validation(format!("bad grid {s:?}"));
    if let [a, b, step] = s.split(':').collect::<Vec<_>>()[..] {
        let (a, b, step): (f64, f64, f64) = (
            a.trim().parse().map_err(|_| bad())?,
            b.trim().parse().map_err(|_| bad())?,
            step.trim().parse().map_err(|_| bad())?,
        );
        if ![a, b, step].iter().all(|v| v.is_finite()) || step <= 0.0 || b < a {
            bail!(bad());
        }
        let n = ((b - a) / step + 1e-9).floor() as usize;
        return Ok((0..=n)
            .map(|i| ((a + i as f64 * step) * 1e9).round() / 1e9)
            .collect());
    }
    s.split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| bad().into()))
        .collect()
}
