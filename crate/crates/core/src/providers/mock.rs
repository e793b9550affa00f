//! Deterministic in-process providers driven by closures.

use std::sync::atomic::{AtomicUsize, Ordering};

use super::{ChatProvider, EmbeddingProvider, EmbeddingResponse, NounPhraseProvider, VqaProvider};
use crate::annotations::ImageId;
use crate::error::Result;

type EmbedFn = dyn Fn(&str) -> Vec<f64> + Send + Sync;
type PhraseFn = dyn Fn(&str) -> Vec<String> + Send + Sync;
type TextFn = dyn Fn(&str) -> String + Send + Sync;
type VqaFn = dyn Fn(ImageId, &str) -> String + Send + Sync;

pub struct MockEmbedder {
    model: String,
    rule: Box<EmbedFn>,
    requests: AtomicUsize,
    texts: AtomicUsize,
}

impl MockEmbedder {
    pub fn new(model: impl Into<String>, rule: impl Fn(&str) -> Vec<f64> + Send + Sync + 'static) -> Self {
        MockEmbedder {
            model: model.into(),
            rule: Box::new(rule),
            requests: AtomicUsize::new(0),
            texts: AtomicUsize::new(0),
        }
    }

    /// Number of `embed` calls received.
    pub fn requests(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }

    /// Total texts across all calls.
    pub fn texts_seen(&self) -> usize {
        self.texts.load(Ordering::SeqCst)
    }
}

impl EmbeddingProvider for MockEmbedder {
    fn embed(&self, texts: &[String]) -> Result<EmbeddingResponse> {
        self.requests.fetch_add(1, Ordering::SeqCst);
        self.texts.fetch_add(texts.len(), Ordering::SeqCst);
        EmbeddingResponse::new(self.model.clone(), texts.iter().map(|t| (self.rule)(t)).collect())
    }
}

pub struct MockNounPhrases {
    rule: Box<PhraseFn>,
    requests: AtomicUsize,
}

impl MockNounPhrases {
    pub fn new(rule: impl Fn(&str) -> Vec<String> + Send + Sync + 'static) -> Self {
        MockNounPhrases {
            rule: Box::new(rule),
            requests: AtomicUsize::new(0),
        }
    }

    pub fn requests(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }
}

impl NounPhraseProvider for MockNounPhrases {
    fn noun_phrases(&self, text: &str) -> Result<Vec<String>> {
        self.requests.fetch_add(1, Ordering::SeqCst);
        Ok((self.rule)(text))
    }
}

pub struct MockChat {
    rule: Box<TextFn>,
    requests: AtomicUsize,
}

impl MockChat {
    pub fn new(rule: impl Fn(&str) -> String + Send + Sync + 'static) -> Self {
        MockChat {
            rule: Box::new(rule),
            requests: AtomicUsize::new(0),
        }
    }

    pub fn requests(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }
}

impl ChatProvider for MockChat {
    fn chat(&self, prompt: &str) -> Result<String> {
        self.requests.fetch_add(1, Ordering::SeqCst);
        Ok((self.rule)(prompt))
    }
}

pub struct MockVqa {
    rule: Box<VqaFn>,
    requests: AtomicUsize,
}

impl MockVqa {
    pub fn new(rule: impl Fn(ImageId, &str) -> String + Send + Sync + 'static) -> Self {
        MockVqa {
            rule: Box::new(rule),
            requests: AtomicUsize::new(0),
        }
    }

    pub fn always(answer: &str) -> Self {
        let answer = answer.to_string();
        Self::new(move |_, _| answer.clone())
    }

    pub fn requests(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }
}

impl VqaProvider for MockVqa {
    fn vqa(&self, image: ImageId, question: &str) -> Result<String> {
        self.requests.fetch_add(1, Ordering::SeqCst);
        Ok((self.rule)(image, question))
    }
}
