use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    Cached, ChatProvider, EmbeddingProvider, FixtureChat, FixtureEmbedder, FixtureNounPhrases,
    FixtureVqa, HttpProvider, MockChat, MockEmbedder, MockNounPhrases, MockVqa,
    NounPhraseProvider, ProviderCache, VqaProvider,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Http,
    Fixture,
    Mock,
}

/// Backend selection for one provider role.
///
/// Built-in mock rules: embed `hash` (hashed bag of words), noun phrases
/// `words` (content words), chat `echo` (caption sentences, one per line),
/// vqa `yes` / `no`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub fixture: Option<PathBuf>,
    #[serde(default)]
    pub mock: Option<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default, skip_serializing)]
    pub bearer_token: Option<String>,
}

fn default_timeout_ms() -> u64 {
    30_000
}
fn default_retries() -> u32 {
    3
}
fn default_in_flight() -> usize {
    8
}

impl ProviderConfig {
    fn base(kind: ProviderKind) -> Self {
        ProviderConfig {
            kind,
            endpoint: None,
            fixture: None,
            mock: None,
            timeout_ms: default_timeout_ms(),
            max_retries: default_retries(),
            max_in_flight: default_in_flight(),
            bearer_token: None,
        }
    }

    pub fn http(endpoint: impl Into<String>) -> Self {
        ProviderConfig {
            endpoint: Some(endpoint.into()),
            ..Self::base(ProviderKind::Http)
        }
    }

    pub fn fixture(path: impl Into<PathBuf>) -> Self {
        ProviderConfig {
            fixture: Some(path.into()),
            ..Self::base(ProviderKind::Fixture)
        }
    }

    pub fn mock(rule: impl Into<String>) -> Self {
        ProviderConfig {
            mock: Some(rule.into()),
            ..Self::base(ProviderKind::Mock)
        }
    }

    /// Exactly the field matching `kind` must be set.
    pub fn validate(&self) -> Result<()> {
        let set = [
            (ProviderKind::Http, self.endpoint.is_some()),
            (ProviderKind::Fixture, self.fixture.is_some()),
            (ProviderKind::Mock, self.mock.is_some()),
        ];
        for (kind, present) in set {
            if (kind == self.kind) != present {
                return Err(Error::validation(format!(
                    "provider of kind {:?} must set exactly its own backend field (endpoint/fixture/mock)",
                    self.kind
                )));
            }
        }
        if self.max_in_flight == 0 {
            return Err(Error::validation("max_in_flight must be at least 1"));
        }
        Ok(())
    }

    /// Short provenance label, e.g. `fixture:nps.jsonl` or `http:http://host`.
    pub fn describe(&self) -> String {
        match self.kind {
            ProviderKind::Http => format!("http:{}", self.endpoint.as_deref().unwrap_or("")),
            ProviderKind::Fixture => format!(
                "fixture:{}",
                self.fixture
                    .as_ref()
                    .and_then(|p| p.file_name())
                    .map(|f| f.to_string_lossy().into_owned())
                    .unwrap_or_default()
            ),
            ProviderKind::Mock => format!("mock:{}", self.mock.as_deref().unwrap_or("")),
        }
    }

    fn http_client(&self) -> HttpProvider {
        HttpProvider::new(
            self.endpoint.as_deref().unwrap_or_default(),
            Duration::from_millis(self.timeout_ms),
            self.max_retries,
            self.max_in_flight,
            self.bearer_token.clone(),
        )
    }

    fn fixture_path(&self) -> &std::path::Path {
        self.fixture.as_deref().expect("validated")
    }

    fn mock_rule(&self) -> &str {
        self.mock.as_deref().expect("validated")
    }
}

fn unknown_rule(role: &str, rule: &str) -> Error {
    Error::validation(format!("unknown {role} mock rule {rule:?}"))
}

pub const HASH_EMBED_DIM: usize = 64;

/// Hashed bag-of-words embedding, unit-normalized.
fn hash_embedding(text: &str) -> Vec<f64> {
    let mut v = vec![0.0; HASH_EMBED_DIM];
    for tok in crate::chair::tokenize(text) {
        let h = Sha256::digest(tok.as_bytes());
        v[usize::from(h[0]) % HASH_EMBED_DIM] += 1.0;
    }
    if v.iter().all(|x| *x == 0.0) {
        v[0] = 1.0;
    }
    super::normalize(&v).expect("non-zero")
}

const STOPWORDS: &[&str] = &[
    "a", "an", "the", "is", "are", "was", "were", "be", "of", "on", "in", "at", "to", "with",
    "and", "or", "its", "it", "their", "his", "her", "some", "two", "three", "there", "this",
    "that", "near", "next", "by", "for", "from", "while", "as", "into", "over", "under",
];

fn content_words(text: &str) -> Vec<String> {
    crate::chair::tokenize(text)
        .into_iter()
        .filter(|t| !STOPWORDS.contains(&t.as_str()))
        .collect()
}

/// Echo mock: the caption is whatever follows the last `Caption:` marker up
/// to `Facts:`; each sentence becomes one line.
fn echo_sentences(prompt: &str) -> String {
    let caption = prompt
        .rfind("Caption:")
        .map(|i| &prompt[i + "Caption:".len()..])
        .unwrap_or(prompt);
    let caption = caption.split("Facts:").next().unwrap_or_default();
    caption
        .split(['.', '!', '?', '\n'])
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn build_embedder(
    cfg: &ProviderConfig,
    cache: &Arc<ProviderCache>,
) -> Result<Arc<dyn EmbeddingProvider>> {
    cfg.validate()?;
    Ok(match cfg.kind {
        ProviderKind::Http => Arc::new(Cached::with_cache(cfg.http_client(), cache.clone())),
        ProviderKind::Fixture => Arc::new(Cached::with_cache(
            FixtureEmbedder::load(cfg.fixture_path())?,
            cache.clone(),
        )),
        ProviderKind::Mock => match cfg.mock_rule() {
            "hash" => Arc::new(Cached::with_cache(
                MockEmbedder::new("mock:hash", hash_embedding),
                cache.clone(),
            )),
            other => return Err(unknown_rule("embed", other)),
        },
    })
}

pub fn build_noun_phrases(
    cfg: &ProviderConfig,
    cache: &Arc<ProviderCache>,
) -> Result<Arc<dyn NounPhraseProvider>> {
    cfg.validate()?;
    Ok(match cfg.kind {
        ProviderKind::Http => Arc::new(Cached::with_cache(cfg.http_client(), cache.clone())),
        ProviderKind::Fixture => Arc::new(Cached::with_cache(
            FixtureNounPhrases::load(cfg.fixture_path())?,
            cache.clone(),
        )),
        ProviderKind::Mock => match cfg.mock_rule() {
            "words" => Arc::new(Cached::with_cache(
                MockNounPhrases::new(content_words),
                cache.clone(),
            )),
            other => return Err(unknown_rule("noun phrase", other)),
        },
    })
}

pub fn build_chat(cfg: &ProviderConfig, cache: &Arc<ProviderCache>) -> Result<Arc<dyn ChatProvider>> {
    cfg.validate()?;
    Ok(match cfg.kind {
        ProviderKind::Http => Arc::new(Cached::with_cache(cfg.http_client(), cache.clone())),
        ProviderKind::Fixture => Arc::new(Cached::with_cache(
            FixtureChat::load(cfg.fixture_path())?,
            cache.clone(),
        )),
        ProviderKind::Mock => match cfg.mock_rule() {
            "echo" => Arc::new(Cached::with_cache(MockChat::new(echo_sentences), cache.clone())),
            other => return Err(unknown_rule("chat", other)),
        },
    })
}

pub fn build_vqa(cfg: &ProviderConfig, cache: &Arc<ProviderCache>) -> Result<Arc<dyn VqaProvider>> {
    cfg.validate()?;
    Ok(match cfg.kind {
        ProviderKind::Http => Arc::new(Cached::with_cache(cfg.http_client(), cache.clone())),
        ProviderKind::Fixture => Arc::new(Cached::with_cache(
            FixtureVqa::load(cfg.fixture_path())?,
            cache.clone(),
        )),
        ProviderKind::Mock => match cfg.mock_rule() {
            rule @ ("yes" | "no") => {
                Arc::new(Cached::with_cache(MockVqa::always(rule), cache.clone()))
            }
            other => return Err(unknown_rule("vqa", other)),
        },
    })
}
