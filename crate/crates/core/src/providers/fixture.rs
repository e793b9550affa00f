//! Replay of recorded provider traffic.
//!
//! Each role reads its own JSON Lines file:
//!
//! | role | record |
//! |------|--------|
//! | embed | `{"text": .., "vector": [..]}` |
//! | noun phrases | `{"text": .., "phrases": [..]}` (strings or `{"text","start","end"}`) |
//! | chat | `{"prompt": .., "text": ..}` |
//! | vqa | `{"image_id": .., "question": .., "text": ..}` |
//!
//! Lookups go through [`input_key`]; a miss is an error naming the missing inputs.

use std::collections::HashMap;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Deserialize;

use super::{
    input_key, vqa_key, ChatProvider, EmbeddingProvider, EmbeddingResponse, NounPhraseProvider,
    VqaProvider,
};
use crate::annotations::ImageId;
use crate::error::{Error, Result};

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(&text, &path.display().to_string())
}

pub fn parse_jsonl<T: DeserializeOwned>(text: &str, source: &str) -> Result<Vec<T>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::json(format!("{source} line {}", i + 1), e))
        })
        .collect()
}

fn miss(what: impl Into<String>) -> Error {
    Error::FixtureMiss {
        missing: vec![what.into()],
    }
}

#[derive(Deserialize)]
struct EmbedRecord {
    text: String,
    vector: Vec<f64>,
}

pub struct FixtureEmbedder {
    model: String,
    vectors: HashMap<String, Vec<f64>>,
}

impl FixtureEmbedder {
    pub fn load(path: &Path) -> Result<Self> {
        let recs: Vec<EmbedRecord> = read_jsonl(path)?;
        Self::from_records(format!("fixture:{}", file_name(path)), recs.into_iter().map(|r| (r.text, r.vector)))
    }

    pub fn from_records(
        model: impl Into<String>,
        records: impl IntoIterator<Item = (String, Vec<f64>)>,
    ) -> Result<Self> {
        let mut vectors = HashMap::new();
        let mut dim = None;
        for (text, v) in records {
            if *dim.get_or_insert(v.len()) != v.len() {
                return Err(Error::validation(format!(
                    "fixture vector for {text:?} has dimension {}",
                    v.len()
                )));
            }
            vectors.insert(input_key(&text), v);
        }
        Ok(FixtureEmbedder {
            model: model.into(),
            vectors,
        })
    }
}

impl EmbeddingProvider for FixtureEmbedder {
    fn embed(&self, texts: &[String]) -> Result<EmbeddingResponse> {
        let mut missing = Vec::new();
        let mut out = Vec::with_capacity(texts.len());
        for t in texts {
            match self.vectors.get(&input_key(t)) {
                Some(v) => out.push(v.clone()),
                None => missing.push(format!("embed:{t:?}")),
            }
        }
        if !missing.is_empty() {
            return Err(Error::FixtureMiss { missing });
        }
        EmbeddingResponse::new(self.model.clone(), out)
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum PhraseEntry {
    Plain(String),
    Span { text: String },
}

#[derive(Deserialize)]
struct PhraseRecord {
    text: String,
    phrases: Vec<PhraseEntry>,
}

pub struct FixtureNounPhrases {
    phrases: HashMap<String, Vec<String>>,
}

impl FixtureNounPhrases {
    pub fn load(path: &Path) -> Result<Self> {
        let recs: Vec<PhraseRecord> = read_jsonl(path)?;
        Ok(FixtureNounPhrases {
            phrases: recs
                .into_iter()
                .map(|r| {
                    let p = r
                        .phrases
                        .into_iter()
                        .map(|e| match e {
                            PhraseEntry::Plain(t) | PhraseEntry::Span { text: t } => t,
                        })
                        .collect();
                    (input_key(&r.text), p)
                })
                .collect(),
        })
    }
}

impl NounPhraseProvider for FixtureNounPhrases {
    fn noun_phrases(&self, text: &str) -> Result<Vec<String>> {
        self.phrases
            .get(&input_key(text))
            .cloned()
            .ok_or_else(|| miss(format!("noun_phrases:{text:?}")))
    }
}

#[derive(Deserialize)]
struct ChatRecord {
    prompt: String,
    text: String,
}

pub struct FixtureChat {
    replies: HashMap<String, String>,
}

impl FixtureChat {
    pub fn load(path: &Path) -> Result<Self> {
        let recs: Vec<ChatRecord> = read_jsonl(path)?;
        Ok(FixtureChat {
            replies: recs
                .into_iter()
                .map(|r| (input_key(&r.prompt), r.text))
                .collect(),
        })
    }
}

impl ChatProvider for FixtureChat {
    fn chat(&self, prompt: &str) -> Result<String> {
        self.replies
            .get(&input_key(prompt))
            .cloned()
            .ok_or_else(|| miss(format!("chat:{}", input_key(prompt))))
    }
}

#[derive(Deserialize)]
struct VqaRecord {
    image_id: ImageId,
    question: String,
    text: String,
}

pub struct FixtureVqa {
    answers: HashMap<String, String>,
}

impl FixtureVqa {
    pub fn load(path: &Path) -> Result<Self> {
        let recs: Vec<VqaRecord> = read_jsonl(path)?;
        Ok(FixtureVqa {
            answers: recs
                .into_iter()
                .map(|r| (vqa_key(r.image_id, &r.question), r.text))
                .collect(),
        })
    }
}

impl VqaProvider for FixtureVqa {
    fn vqa(&self, image: ImageId, question: &str) -> Result<String> {
        self.answers
            .get(&vqa_key(image, question))
            .cloned()
            .ok_or_else(|| miss(format!("vqa:{image}:{question:?}")))
    }
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|f| f.to_string_lossy().into_owned())
        .unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(lines: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(lines.as_bytes()).unwrap();
        f
    }

    #[test]
    fn embed_fixture_hit_is_byte_identical() {
        let f = write(
            "{\"text\":\"a dog\",\"vector\":[0.1234567890123456,-0.9923878414]}\n\n{\"text\":\"cat\",\"vector\":[1.0,0.0]}\n",
        );
        let p = FixtureEmbedder::load(f.path()).unwrap();
        let r = p.embed(&["  a   dog".to_string()]).unwrap();
        assert_eq!(r.vectors[0], vec![0.1234567890123456, -0.9923878414]);
        assert_eq!(r.dim, 2);
        match p.embed(&["wolf".into(), "cat".into(), "fox".into()]) {
            Err(Error::FixtureMiss { missing }) => assert_eq!(missing.len(), 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn embed_fixture_rejects_mixed_dims() {
        let f = write("{\"text\":\"a\",\"vector\":[1.0]}\n{\"text\":\"b\",\"vector\":[1.0,0.0]}\n");
        assert!(FixtureEmbedder::load(f.path()).is_err());
    }

    #[test]
    fn phrase_fixture_accepts_both_shapes() {
        let f = write(concat!(
            "{\"text\":\"A black bird is eating a peeled apple\",\"phrases\":[\"A black bird\",\"a peeled apple\"]}\n",
            "{\"text\":\"Run quickly!\",\"phrases\":[]}\n",
            "{\"text\":\"a cat\",\"phrases\":[{\"text\":\"a cat\",\"start\":0,\"end\":5}]}\n",
        ));
        let p = FixtureNounPhrases::load(f.path()).unwrap();
        assert_eq!(
            p.noun_phrases("A black bird is eating a peeled apple").unwrap(),
            vec!["A black bird", "a peeled apple"]
        );
        assert!(p.noun_phrases("Run quickly!").unwrap().is_empty());
        assert_eq!(p.noun_phrases("a cat").unwrap(), vec!["a cat"]);
        assert!(matches!(p.noun_phrases("other"), Err(Error::FixtureMiss { .. })));
    }

    #[test]
    fn chat_and_vqa_fixtures() {
        let c = write("{\"prompt\":\"hello\\nworld\",\"text\":\"There is a man\"}\n");
        let chat = FixtureChat::load(c.path()).unwrap();
        assert_eq!(chat.chat("hello world").unwrap(), "There is a man");
        let v = write("{\"image_id\":3,\"question\":\"Is it?\",\"text\":\"yes\"}\n");
        let vqa = FixtureVqa::load(v.path()).unwrap();
        assert_eq!(vqa.vqa(ImageId(3), "Is it?").unwrap(), "yes");
        assert!(vqa.vqa(ImageId(4), "Is it?").is_err());
    }

    #[test]
    fn bad_json_reports_line() {
        let f = write("{\"text\":\"a\",\"vector\":[1.0]}\nnot json\n");
        match FixtureEmbedder::load(f.path()) {
            Err(Error::Json { context, .. }) => assert!(context.ends_with("line 2")),
            other => panic!("{:?}", other.err()),
        }
    }
}
