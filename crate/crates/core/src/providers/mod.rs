//! Model-backed dependencies behind uniform traits.
//!
//! Four roles exist: sentence embeddings, noun-phrase extraction, chat
//! completion, and visual question answering. Each role has an HTTP backend
//! (sidecar wire protocol), a fixture backend (recorded JSON Lines replayed by
//! normalized-input hash), and test mocks. [`Cached`] memoizes any backend.

mod cache;
mod config;
mod fixture;
mod http;
mod mock;
mod vector;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::annotations::ImageId;
use crate::error::{Error, Result};

pub use cache::{Cached, ProviderCache};
pub use config::{
    build_chat, build_embedder, build_noun_phrases, build_vqa, ProviderConfig, ProviderKind,
};
pub use fixture::{parse_jsonl, read_jsonl, FixtureChat, FixtureEmbedder, FixtureNounPhrases, FixtureVqa};
pub use http::HttpProvider;
pub use mock::{MockChat, MockEmbedder, MockNounPhrases, MockVqa};
pub use vector::{clip_score, cosine, mean_clip_score, normalize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Embed,
    NounPhrases,
    Chat,
    Vqa,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingResponse {
    pub model: String,
    pub dim: usize,
    pub vectors: Vec<Vec<f64>>,
}

impl EmbeddingResponse {
    pub fn new(model: impl Into<String>, vectors: Vec<Vec<f64>>) -> Result<Self> {
        let dim = vectors.first().map_or(0, Vec::len);
        if let Some(v) = vectors.iter().find(|v| v.len() != dim) {
            return Err(Error::validation(format!(
                "embedding dimensions differ: {} vs {dim}",
                v.len()
            )));
        }
        Ok(EmbeddingResponse {
            model: model.into(),
            dim,
            vectors,
        })
    }
}

pub trait EmbeddingProvider: Send + Sync {
    /// One vector per input text, in input order.
    fn embed(&self, texts: &[String]) -> Result<EmbeddingResponse>;
}

pub trait NounPhraseProvider: Send + Sync {
    fn noun_phrases(&self, text: &str) -> Result<Vec<String>>;
}

pub trait ChatProvider: Send + Sync {
    fn chat(&self, prompt: &str) -> Result<String>;
}

pub trait VqaProvider: Send + Sync {
    fn vqa(&self, image: ImageId, question: &str) -> Result<String>;
}

/// Trim and collapse internal whitespace.
pub fn normalize_input(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Hex SHA-256 of the normalized input; the key for caches and fixtures.
pub fn input_key(text: &str) -> String {
    hex::encode(Sha256::digest(normalize_input(text).as_bytes()))
}

pub fn vqa_key(image: ImageId, question: &str) -> String {
    input_key(&format!("{image}\n{}", normalize_input(question)))
}
