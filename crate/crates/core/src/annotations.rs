//! Object annotations: class registry with synonyms, COCO-format ingestion,
//! and image-level frequency / co-occurrence statistics.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// MSCOCO synonym table shipped with the crate.
pub const COCO_SYNONYMS_TSV: &str = include_str!("../data/coco_synonyms.tsv");
const COCO_CATEGORIES_JSON: &str = include_str!("../data/coco_categories.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassId(pub u32);

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ImageId(pub u64);

impl fmt::Display for ImageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassInfo {
    pub id: ClassId,
    pub name: String,
    #[serde(default)]
    pub synonyms: Vec<String>,
}

fn normalize_term(s: &str) -> String {
    s.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassRegistry {
    classes: Vec<ClassInfo>,
    by_name: HashMap<String, ClassId>,
    by_id: HashMap<ClassId, usize>,
}

impl ClassRegistry {
    pub fn new(mut classes: Vec<ClassInfo>) -> Result<Self> {
        classes.sort_by_key(|c| c.id);
        let mut by_name = HashMap::new();
        let mut by_id = HashMap::new();
        for (idx, c) in classes.iter_mut().enumerate() {
            c.name = normalize_term(&c.name);
            if c.name.is_empty() {
                return Err(Error::validation(format!("class {} has an empty name", c.id)));
            }
            if by_id.insert(c.id, idx).is_some() {
                return Err(Error::validation(format!("duplicate class id {}", c.id)));
            }
            if let Some(prev) = by_name.insert(c.name.clone(), c.id) {
                return Err(Error::validation(format!(
                    "class name {:?} used by ids {} and {}",
                    c.name, prev, c.id
                )));
            }
        }
        let mut reg = ClassRegistry {
            classes,
            by_name,
            by_id,
        };
        let syns: Vec<(ClassId, String)> = reg
            .classes
            .iter()
            .flat_map(|c| c.synonyms.iter().map(move |s| (c.id, s.clone())))
            .collect();
        for c in &mut reg.classes {
            c.synonyms.clear();
        }
        for (id, s) in syns {
            reg.add_synonym(id, &s)?;
        }
        Ok(reg)
    }

    /// The 80 MSCOCO detection classes with the bundled synonym table.
    pub fn coco() -> Self {
        let classes: Vec<ClassInfo> =
            serde_json::from_str(COCO_CATEGORIES_JSON).expect("bundled categories parse");
        let mut reg = ClassRegistry::new(classes).expect("bundled categories are valid");
        reg.apply_synonyms_tsv(COCO_SYNONYMS_TSV, false)
            .expect("bundled synonyms are consistent");
        reg
    }

    pub fn add_synonym(&mut self, id: ClassId, synonym: &str) -> Result<()> {
        let syn = normalize_term(synonym);
        if syn.is_empty() {
            return Ok(());
        }
        let idx = *self
            .by_id
            .get(&id)
            .ok_or_else(|| Error::validation(format!("synonym for unknown class {id}")))?;
        if let Some(&owner) = self.by_name.get(&syn) {
            if owner == id {
                return Ok(());
            }
            return Err(Error::validation(format!(
                "synonym {syn:?} would map to both class {owner} and class {id}"
            )));
        }
        for c in &self.classes {
            if c.id != id && c.synonyms.contains(&syn) {
                return Err(Error::validation(format!(
                    "synonym {syn:?} would map to both class {} and class {id}",
                    c.id
                )));
            }
        }
        let class = &mut self.classes[idx];
        if !class.synonyms.contains(&syn) {
            class.synonyms.push(syn);
        }
        Ok(())
    }

    /// Reads `class_name<TAB>synonym` lines. Blank lines and `#` comments are
    /// skipped. With `strict`, a class name missing from the registry is an
    /// error; otherwise the line is ignored. Returns the number of lines applied.
    pub fn apply_synonyms_tsv(&mut self, tsv: &str, strict: bool) -> Result<usize> {
        let mut applied = 0;
        for (lineno, line) in tsv.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let (name, syn) = line.split_once('\t').ok_or_else(|| Error::Ingest {
                record: format!("synonyms line {}", lineno + 1),
                reason: "expected class_name<TAB>synonym".into(),
            })?;
            match self.id_of(name) {
                Some(id) => {
                    self.add_synonym(id, syn)?;
                    applied += 1;
                }
                None if strict => {
                    return Err(Error::Ingest {
                        record: format!("synonyms line {}", lineno + 1),
                        reason: format!("unknown class {name:?}"),
                    })
                }
                None => {}
            }
        }
        Ok(applied)
    }

    pub fn id_of(&self, name: &str) -> Option<ClassId> {
        self.by_name.get(&normalize_term(name)).copied()
    }

    pub fn get(&self, id: ClassId) -> Option<&ClassInfo> {
        self.by_id.get(&id).map(|&i| &self.classes[i])
    }

    pub fn name(&self, id: ClassId) -> Option<&str> {
        self.get(id).map(|c| c.name.as_str())
    }

    pub fn contains(&self, id: ClassId) -> bool {
        self.by_id.contains_key(&id)
    }

    /// Classes in ascending id order.
    pub fn classes(&self) -> &[ClassInfo] {
        &self.classes
    }

    pub fn ids(&self) -> impl Iterator<Item = ClassId> + '_ {
        self.classes.iter().map(|c| c.id)
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    /// Every matchable surface form (name and synonyms) with its class.
    pub fn lexicon(&self) -> Vec<(String, ClassId)> {
        let mut out = Vec::new();
        for c in &self.classes {
            out.push((c.name.clone(), c.id));
            for s in &c.synonyms {
                out.push((s.clone(), c.id));
            }
        }
        out
    }

    pub fn has_synonyms(&self) -> bool {
        self.classes.iter().any(|c| !c.synonyms.is_empty())
    }

    /// Registry reduced to `keep`.
    pub fn restrict(&self, keep: &BTreeSet<ClassId>) -> ClassRegistry {
        let classes = self
            .classes
            .iter()
            .filter(|c| keep.contains(&c.id))
            .cloned()
            .collect();
        ClassRegistry::new(classes).expect("subset of a valid registry is valid")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageEntry {
    pub image_id: ImageId,
    pub present: BTreeSet<ClassId>,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    images: Vec<ImageEntry>,
    registry: ClassRegistry,
    index: HashMap<ImageId, usize>,
}

impl Corpus {
    pub fn new(mut images: Vec<ImageEntry>, registry: ClassRegistry) -> Result<Self> {
        images.sort_by_key(|i| i.image_id);
        let mut index = HashMap::with_capacity(images.len());
        for (idx, img) in images.iter().enumerate() {
            if index.insert(img.image_id, idx).is_some() {
                return Err(Error::validation(format!("duplicate image id {}", img.image_id)));
            }
            if let Some(bad) = img.present.iter().find(|c| !registry.contains(**c)) {
                return Err(Error::validation(format!(
                    "image {} references unknown class {bad}",
                    img.image_id
                )));
            }
        }
        Ok(Corpus {
            images,
            registry,
            index,
        })
    }

    /// Images in ascending id order.
    pub fn images(&self) -> &[ImageEntry] {
        &self.images
    }

    pub fn image(&self, id: ImageId) -> Option<&ImageEntry> {
        self.index.get(&id).map(|&i| &self.images[i])
    }

    pub fn registry(&self) -> &ClassRegistry {
        &self.registry
    }

    pub fn registry_mut(&mut self) -> &mut ClassRegistry {
        &mut self.registry
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Content digest over classes (ids and names) and image membership.
    /// Synonyms are excluded; they are part of the scoring configuration.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for c in self.registry.classes() {
            h.update(format!("c\t{}\t{}\n", c.id, c.name));
        }
        for img in &self.images {
            let ids: Vec<String> = img.present.iter().map(|c| c.to_string()).collect();
            h.update(format!("i\t{}\t{}\n", img.image_id, ids.join(",")));
        }
        hex::encode(h.finalize())
    }
}

/// Reads a COCO "instances" file. With `filter`, both the registry and every
/// image's present set are intersected with it.
pub fn load_coco_instances(path: &Path, filter: Option<&BTreeSet<ClassId>>) -> Result<Corpus> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_coco_instances(&text, filter)
}

pub fn parse_coco_instances(json: &str, filter: Option<&BTreeSet<ClassId>>) -> Result<Corpus> {
    let root: Value = serde_json::from_str(json).map_err(|e| Error::json("instances file", e))?;
    let section = |key: &str| -> Result<&Vec<Value>> {
        root.get(key)
            .and_then(Value::as_array)
            .ok_or_else(|| Error::Ingest {
                record: "top level".into(),
                reason: format!("missing array {key:?}"),
            })
    };

    let mut classes = Vec::new();
    for (i, cat) in section("categories")?.iter().enumerate() {
        let record = || format!("categories[{i}]");
        let id = u32_field(cat, "id", record)?;
        let name = cat
            .get("name")
            .and_then(Value::as_str)
            .ok_or_else(|| missing(record(), "name"))?;
        classes.push(ClassInfo {
            id: ClassId(id),
            name: name.to_string(),
            synonyms: Vec::new(),
        });
    }
    let registry = ClassRegistry::new(classes)?;

    let mut present: BTreeMap<ImageId, BTreeSet<ClassId>> = BTreeMap::new();
    for (i, img) in section("images")?.iter().enumerate() {
        let id = ImageId(u64_field(img, "id", || format!("images[{i}]"))?);
        if present.insert(id, BTreeSet::new()).is_some() {
            return Err(Error::Ingest {
                record: format!("images[{i}]"),
                reason: format!("duplicate image id {id}"),
            });
        }
    }
    for (i, ann) in section("annotations")?.iter().enumerate() {
        let record = || format!("annotations[{i}]");
        let image = ImageId(u64_field(ann, "image_id", record)?);
        let class = ClassId(u32_field(ann, "category_id", record)?);
        if !registry.contains(class) {
            return Err(Error::Ingest {
                record: record(),
                reason: format!("unknown category_id {class}"),
            });
        }
        let set = present.get_mut(&image).ok_or_else(|| Error::Ingest {
            record: record(),
            reason: format!("unknown image_id {image}"),
        })?;
        if filter.is_none_or(|f| f.contains(&class)) {
            set.insert(class);
        }
    }

    let registry = match filter {
        Some(f) => {
            if let Some(bad) = f.iter().find(|c| !registry.contains(**c)) {
                return Err(Error::validation(format!(
                    "class filter names id {bad}, which the file does not define"
                )));
            }
            registry.restrict(f)
        }
        None => registry,
    };
    let images = present
        .into_iter()
        .map(|(image_id, present)| ImageEntry { image_id, present })
        .collect();
    Corpus::new(images, registry)
}

fn missing(record: String, key: &str) -> Error {
    Error::Ingest {
        record,
        reason: format!("missing or invalid key {key:?}"),
    }
}

fn u64_field(v: &Value, key: &str, record: impl Fn() -> String) -> Result<u64> {
    v.get(key)
        .and_then(Value::as_u64)
        .ok_or_else(|| missing(record(), key))
}

fn u32_field(v: &Value, key: &str, record: impl Fn() -> String) -> Result<u32> {
    u64_field(v, key, &record)?
        .try_into()
        .map_err(|_| missing(record(), key))
}

/// Newline-separated class names; blank lines and `#` comments ignored.
pub fn parse_class_split(text: &str, registry: &ClassRegistry) -> Result<BTreeSet<ClassId>> {
    let mut out = BTreeSet::new();
    for (lineno, line) in text.lines().enumerate() {
        let name = line.trim();
        if name.is_empty() || name.starts_with('#') {
            continue;
        }
        let id = registry.id_of(name).ok_or_else(|| Error::Ingest {
            record: format!("class split line {}", lineno + 1),
            reason: format!("unknown class {name:?}"),
        })?;
        out.insert(id);
    }
    Ok(out)
}

/// Resolves a class-split file against the unfiltered categories of an
/// instances file.
pub fn load_class_split(path: &Path, registry: &ClassRegistry) -> Result<BTreeSet<ClassId>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_class_split(&text, registry)
}

/// How the co-occurrence scores of a candidate with an image's present
/// classes are combined when ranking adversarial negatives.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CooccurrenceAggregation {
    #[default]
    Sum,
    Max,
}

/// Image-level class frequencies and pairwise co-occurrence counts.
#[derive(Debug, Clone)]
pub struct CooccurrenceTable {
    freq: BTreeMap<ClassId, u32>,
    // keyed with the smaller id first
    pairs: HashMap<(ClassId, ClassId), u32>,
}

pub fn build_stats(corpus: &Corpus) -> Result<CooccurrenceTable> {
    if corpus.is_empty() {
        return Err(Error::validation("cannot build statistics for an empty corpus"));
    }
    let mut freq: BTreeMap<ClassId, u32> = corpus.registry().ids().map(|c| (c, 0)).collect();
    let mut pairs = HashMap::new();
    for img in corpus.images() {
        let present: Vec<ClassId> = img.present.iter().copied().collect();
        for (k, &a) in present.iter().enumerate() {
            *freq.entry(a).or_default() += 1;
            for &b in &present[k + 1..] {
                *pairs.entry((a, b)).or_default() += 1;
            }
        }
    }
    Ok(CooccurrenceTable { freq, pairs })
}

impl CooccurrenceTable {
    pub fn frequency(&self, c: ClassId) -> u32 {
        self.freq.get(&c).copied().unwrap_or(0)
    }

    /// Number of images containing both classes; zero on the diagonal.
    pub fn count(&self, a: ClassId, b: ClassId) -> u32 {
        if a == b {
            return 0;
        }
        let key = if a < b { (a, b) } else { (b, a) };
        self.pairs.get(&key).copied().unwrap_or(0)
    }

    /// All classes by descending frequency, ties by ascending id.
    pub fn frequency_ranking(&self) -> Vec<ClassId> {
        let mut ids: Vec<ClassId> = self.freq.keys().copied().collect();
        ids.sort_by(|a, b| self.frequency(*b).cmp(&self.frequency(*a)).then(a.cmp(b)));
        ids
    }

    pub fn cooccurrence_score<'a>(
        &self,
        candidate: ClassId,
        present: impl IntoIterator<Item = &'a ClassId>,
        agg: CooccurrenceAggregation,
    ) -> u64 {
        let counts = present
            .into_iter()
            .map(|p| u64::from(self.count(candidate, *p)));
        match agg {
            CooccurrenceAggregation::Sum => counts.sum(),
            CooccurrenceAggregation::Max => counts.max().unwrap_or(0),
        }
    }

    /// Plain-data view for the `stats` dump.
    pub fn summary(&self, registry: &ClassRegistry) -> StatsSummary {
        let name = |c: ClassId| registry.name(c).unwrap_or("?").to_string();
        let frequencies = self
            .frequency_ranking()
            .into_iter()
            .map(|c| ClassFrequency {
                class_id: c,
                name: name(c),
                images: self.frequency(c),
            })
            .collect();
        let mut pairs: Vec<PairCount> = self
            .pairs
            .iter()
            .filter(|(_, &n)| n > 0)
            .map(|(&(a, b), &n)| PairCount {
                a: name(a),
                b: name(b),
                a_id: a,
                b_id: b,
                images: n,
            })
            .collect();
        pairs.sort_by(|x, y| {
            y.images
                .cmp(&x.images)
                .then(x.a_id.cmp(&y.a_id))
                .then(x.b_id.cmp(&y.b_id))
        });
        StatsSummary { frequencies, pairs }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassFrequency {
    pub class_id: ClassId,
    pub name: String,
    pub images: u32,
}

#[derive(Debug, Clone, Serialize)]
pub struct PairCount {
    pub a_id: ClassId,
    pub a: String,
    pub b_id: ClassId,
    pub b: String,
    pub images: u32,
}

#[derive(Debug, Clone, Serialize)]
pub struct StatsSummary {
    pub frequencies: Vec<ClassFrequency>,
    pub pairs: Vec<PairCount>,
}
