//! Annotated mention datasets, silver data from anchor links, and difficulty statistics.

mod silver;
mod strsim;

pub use silver::{build_silver_dataset, record_anchor_stats, Anchor, AnchoredDocument, SilverReport};
pub use strsim::{jaro, jaro_winkler};

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::kb::KnowledgeBase;
use crate::NIL;

/// Gold or predicted link target.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Link {
    Nil,
    Entity(String),
}

impl Link {
    pub fn entity(&self) -> Option<&str> {
        match self {
            Link::Nil => None,
            Link::Entity(id) => Some(id),
        }
    }

    pub fn is_nil(&self) -> bool {
        matches!(self, Link::Nil)
    }
}

impl From<&str> for Link {
    fn from(s: &str) -> Self {
        if s == NIL {
            Link::Nil
        } else {
            Link::Entity(s.to_string())
        }
    }
}

impl fmt::Display for Link {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.entity().unwrap_or(NIL))
    }
}

impl Serialize for Link {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.entity().unwrap_or(NIL))
    }
}

impl<'de> Deserialize<'de> for Link {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(Link::from(s.as_str()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub language: String,
    pub sentences: Vec<String>,
}

impl Document {
    pub fn validate(&self) -> Result<()> {
        if self.sentences.is_empty() {
            return Err(Error::Invalid(format!("document `{}` has no sentences", self.id)));
        }
        if let Some(i) = self.sentences.iter().position(|s| s.is_empty()) {
            return Err(Error::Invalid(format!("document `{}` sentence {i} is empty", self.id)));
        }
        Ok(())
    }
}

/// An annotated mention. `start`/`end` are half-open offsets in Unicode
/// scalar values into `sentences[sentence_index]` of the document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mention {
    pub id: String,
    pub doc_id: String,
    pub sentence_index: usize,
    pub start: usize,
    pub end: usize,
    pub surface: String,
    pub gold: Link,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mention_type: Option<String>,
    /// Filled from the document at load time.
    #[serde(skip)]
    pub language: String,
    /// Audit trail for mentions relabeled as NIL in silver data. Never used for training.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub original_gold: Option<String>,
}

/// Substring by scalar-value offsets.
pub fn char_slice(s: &str, start: usize, end: usize) -> Option<&str> {
    if start > end {
        return None;
    }
    let mut indices = s.char_indices().map(|(i, _)| i).chain(std::iter::once(s.len()));
    let from = indices.nth(start)?;
    let to = if end == start { from } else { indices.nth(end - start - 1)? };
    Some(&s[from..to])
}

impl Mention {
    pub fn validate_against(&self, doc: &Document) -> Result<()> {
        let err = |message: String| Error::InvalidMention { mention_id: self.id.clone(), message };
        let sentence = doc
            .sentences
            .get(self.sentence_index)
            .ok_or_else(|| err(format!("sentence index {} out of range", self.sentence_index)))?;
        if self.start >= self.end {
            return Err(err(format!("empty span ({}, {})", self.start, self.end)));
        }
        let spanned = char_slice(sentence, self.start, self.end)
            .ok_or_else(|| err(format!("span ({}, {}) exceeds sentence", self.start, self.end)))?;
        if spanned != self.surface {
            return Err(err(format!("surface `{}` does not match spanned text `{spanned}`", self.surface)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Dev,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub documents: BTreeMap<String, Document>,
    pub mentions: Vec<Mention>,
    pub split: Split,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    split: Split,
}

pub const DOCUMENTS_FILE: &str = "documents.jsonl";
pub const MENTIONS_FILE: &str = "mentions.jsonl";
const META_FILE: &str = "meta.json";

pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Malformed {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn write_jsonl<'a, T: Serialize + 'a>(path: &Path, items: impl IntoIterator<Item = &'a T>) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(|e| Error::json(path, e))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

impl Dataset {
    /// Validates documents and mentions and fills mention languages.
    pub fn new(documents: Vec<Document>, mut mentions: Vec<Mention>, split: Split) -> Result<Self> {
        let mut docs = BTreeMap::new();
        for doc in documents {
            doc.validate()?;
            if docs.contains_key(&doc.id) {
                return Err(Error::DuplicateId(doc.id));
            }
            docs.insert(doc.id.clone(), doc);
        }
        let mut seen = std::collections::HashSet::new();
        for m in &mut mentions {
            if !seen.insert(m.id.clone()) {
                return Err(Error::DuplicateId(m.id.clone()));
            }
            let doc = docs.get(&m.doc_id).ok_or_else(|| Error::InvalidMention {
                mention_id: m.id.clone(),
                message: format!("unknown document `{}`", m.doc_id),
            })?;
            m.validate_against(doc)?;
            m.language = doc.language.clone();
        }
        Ok(Dataset { documents: docs, mentions, split })
    }

    pub fn document(&self, id: &str) -> Result<&Document> {
        self.documents.get(id).ok_or_else(|| Error::NotFound { kind: "document", id: id.to_string() })
    }

    pub fn len(&self) -> usize {
        self.mentions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mentions.is_empty()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_jsonl(&dir.join(DOCUMENTS_FILE), self.documents.values())?;
        write_jsonl(&dir.join(MENTIONS_FILE), &self.mentions)?;
        let meta = serde_json::to_vec(&Meta { split: self.split }).expect("serializable");
        let p = dir.join(META_FILE);
        fs::write(&p, meta).map_err(|e| Error::io(p, e))
    }

    /// Keeps only the given mentions and the documents they reference.
    pub fn restrict_to(&self, mentions: Vec<Mention>) -> Dataset {
        let documents =
            mentions.iter().filter_map(|m| self.documents.get(&m.doc_id)).map(|d| (d.id.clone(), d.clone())).collect();
        Dataset { documents, mentions, split: self.split }
    }
}

/// Loads `documents.jsonl` + `mentions.jsonl` from a dataset directory.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let meta_path = dir.join(META_FILE);
    let split = if meta_path.exists() {
        let bytes = fs::read(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        serde_json::from_slice::<Meta>(&bytes).map_err(|e| Error::json(&meta_path, e))?.split
    } else {
        Split::default()
    };
    load_dataset_files(&dir.join(DOCUMENTS_FILE), &dir.join(MENTIONS_FILE), split)
}

pub fn load_dataset_files(documents: &Path, mentions: &Path, split: Split) -> Result<Dataset> {
    Dataset::new(read_jsonl(documents)?, read_jsonl(mentions)?, split)
}

/// Loads a bare mentions file without documents (for scoring).
pub fn load_mentions(path: &Path) -> Result<Vec<Mention>> {
    read_jsonl(path)
}

pub fn dataset_dir_files(dir: &Path) -> (PathBuf, PathBuf) {
    (dir.join(DOCUMENTS_FILE), dir.join(MENTIONS_FILE))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub n_mentions: usize,
    pub n_linked: usize,
    /// Fraction of non-NIL mentions whose surface equals the gold entity name;
    /// absent when every mention is NIL.
    pub exact_match_rate: Option<f64>,
    pub mean_jaro_winkler: Option<f64>,
}

pub fn dataset_stats(ds: &Dataset, kb: &KnowledgeBase) -> Result<DatasetStats> {
    let mut missing = Vec::new();
    let mut exact = 0usize;
    let mut jw_sum = 0.0;
    let mut linked = 0usize;
    for m in &ds.mentions {
        let Some(id) = m.gold.entity() else { continue };
        match kb.get(id) {
            Some(e) => {
                linked += 1;
                if m.surface == e.name {
                    exact += 1;
                }
                jw_sum += jaro_winkler(&m.surface, &e.name);
            }
            None => missing.push(id.to_string()),
        }
    }
    if !missing.is_empty() {
        missing.sort();
        missing.dedup();
        return Err(Error::Invalid(format!("gold entities missing from KB: {}", missing.join(", "))));
    }
    let (exact_match_rate, mean_jaro_winkler) =
        if linked == 0 { (None, None) } else { (Some(exact as f64 / linked as f64), Some(jw_sum / linked as f64)) };
    Ok(DatasetStats { n_mentions: ds.mentions.len(), n_linked: linked, exact_match_rate, mean_jaro_winkler })
}
