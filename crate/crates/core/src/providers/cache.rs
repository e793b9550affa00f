use std::collections::HashMap;
use std::sync::Arc;

use parking_lot::RwLock;

use super::{
    input_key, vqa_key, ChatProvider, EmbeddingProvider, EmbeddingResponse, NounPhraseProvider,
    Role, VqaProvider,
};
use crate::annotations::ImageId;
use crate::error::Result;

#[derive(Debug, Clone)]
enum Entry {
    Vector { model: String, vector: Vec<f64> },
    Phrases(Vec<String>),
    Text(String),
}

/// Shared memo table keyed by `(role, normalized-input hash)`. Values are
/// deterministic per key, so concurrent inserts of the same key are harmless
/// and the last write wins.
#[derive(Debug, Default)]
pub struct ProviderCache {
    entries: RwLock<HashMap<(Role, String), Entry>>,
}

impl ProviderCache {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    pub fn len(&self) -> usize {
        self.entries.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn get(&self, role: Role, key: &str) -> Option<Entry> {
        self.entries.read().get(&(role, key.to_string())).cloned()
    }

    fn put(&self, role: Role, key: String, e: Entry) {
        self.entries.write().insert((role, key), e);
    }
}

/// Memoizing wrapper around any provider.
pub struct Cached<P> {
    inner: P,
    cache: Arc<ProviderCache>,
}

impl<P> Cached<P> {
    pub fn new(inner: P) -> Self {
        Self::with_cache(inner, ProviderCache::new())
    }

    pub fn with_cache(inner: P, cache: Arc<ProviderCache>) -> Self {
        Cached { inner, cache }
    }

    pub fn inner(&self) -> &P {
        &self.inner
    }
}

impl<P: EmbeddingProvider> EmbeddingProvider for Cached<P> {
    fn embed(&self, texts: &[String]) -> Result<EmbeddingResponse> {
        let keys: Vec<String> = texts.iter().map(|t| input_key(t)).collect();
        let mut found: Vec<Option<(String, Vec<f64>)>> = keys
            .iter()
            .map(|k| match self.cache.get(Role::Embed, k) {
                Some(Entry::Vector { model, vector }) => Some((model, vector)),
                _ => None,
            })
            .collect();
        let misses: Vec<usize> = (0..texts.len()).filter(|&i| found[i].is_none()).collect();
        if !misses.is_empty() {
            // Duplicate texts within one batch are sent once.
            let mut unique: Vec<usize> = Vec::new();
            for &i in &misses {
                if !unique.iter().any(|&u| keys[u] == keys[i]) {
                    unique.push(i);
                }
            }
            let batch: Vec<String> = unique.iter().map(|&i| texts[i].clone()).collect();
            let resp = self.inner.embed(&batch)?;
            for (&i, v) in unique.iter().zip(resp.vectors) {
                self.cache.put(
                    Role::Embed,
                    keys[i].clone(),
                    Entry::Vector {
                        model: resp.model.clone(),
                        vector: v.clone(),
                    },
                );
            }
            for &i in &misses {
                if let Some(Entry::Vector { model, vector }) = self.cache.get(Role::Embed, &keys[i]) {
                    found[i] = Some((model, vector));
                }
            }
        }
        let model = found
            .iter()
            .flatten()
            .next()
            .map(|(m, _)| m.clone())
            .unwrap_or_default();
        let vectors = found
            .into_iter()
            .map(|f| f.map(|(_, v)| v).unwrap_or_default())
            .collect();
        EmbeddingResponse::new(model, vectors)
    }
}

impl<P: NounPhraseProvider> NounPhraseProvider for Cached<P> {
    fn noun_phrases(&self, text: &str) -> Result<Vec<String>> {
        let key = input_key(text);
        if let Some(Entry::Phrases(p)) = self.cache.get(Role::NounPhrases, &key) {
            return Ok(p);
        }
        let p = self.inner.noun_phrases(text)?;
        self.cache.put(Role::NounPhrases, key, Entry::Phrases(p.clone()));
        Ok(p)
    }
}

impl<P: ChatProvider> ChatProvider for Cached<P> {
    fn chat(&self, prompt: &str) -> Result<String> {
        let key = input_key(prompt);
        if let Some(Entry::Text(t)) = self.cache.get(Role::Chat, &key) {
            return Ok(t);
        }
        let t = self.inner.chat(prompt)?;
        self.cache.put(Role::Chat, key, Entry::Text(t.clone()));
        Ok(t)
    }
}

impl<P: VqaProvider> VqaProvider for Cached<P> {
    fn vqa(&self, image: ImageId, question: &str) -> Result<String> {
        let key = vqa_key(image, question);
        if let Some(Entry::Text(t)) = self.cache.get(Role::Vqa, &key) {
            return Ok(t);
        }
        let t = self.inner.vqa(image, question)?;
        self.cache.put(Role::Vqa, key, Entry::Text(t.clone()));
        Ok(t)
    }
}
