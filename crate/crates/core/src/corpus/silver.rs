//! Silver training data from anchor-linked text.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{char_slice, read_jsonl, Dataset, Document, Link, Mention, Split};
use crate::error::{Error, Result};
use crate::kb::KnowledgeBase;
use crate::rng::{stream, stream_rng};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Anchor {
    pub sentence_index: usize,
    pub start: usize,
    pub end: usize,
    pub target: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mention_type: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnchoredDocument {
    pub id: String,
    pub language: String,
    pub sentences: Vec<String>,
    #[serde(default)]
    pub anchors: Vec<Anchor>,
}

impl AnchoredDocument {
    pub fn load_all(path: &Path) -> Result<Vec<AnchoredDocument>> {
        read_jsonl(path)
    }

    pub fn document(&self) -> Document {
        Document { id: self.id.clone(), language: self.language.clone(), sentences: self.sentences.clone() }
    }

    /// Spanned text of anchor `i`.
    pub fn anchor_surface(&self, i: usize) -> Result<&str> {
        let a = &self.anchors[i];
        self.sentences
            .get(a.sentence_index)
            .and_then(|s| if a.start < a.end { char_slice(s, a.start, a.end) } else { None })
            .ok_or_else(|| Error::Invalid(format!("document `{}` anchor {i} has an invalid span", self.id)))
    }

    pub fn anchor_id(&self, i: usize) -> String {
        format!("{}#{i}", self.id)
    }
}

/// Adds one anchor count per (surface, target) occurrence to the KB.
/// Returns the number of anchors whose target is not in the KB.
pub fn record_anchor_stats(kb: &mut KnowledgeBase, docs: &[AnchoredDocument]) -> Result<usize> {
    let mut skipped = 0;
    for doc in docs {
        for i in 0..doc.anchors.len() {
            let surface = doc.anchor_surface(i)?.to_string();
            if !kb.add_anchor(&surface, &doc.anchors[i].target, 1) {
                skipped += 1;
            }
        }
    }
    Ok(skipped)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SilverReport {
    pub seeds_skipped: usize,
    pub pages_selected: usize,
    pub mentions: usize,
    pub nil_mentions: usize,
    pub targets_outside_kb: usize,
}

/// Builds a silver dataset: for each seed entity (ascending id) one anchor
/// pointing at it is sampled, and every anchor on that anchor's page becomes a
/// mention. Then `floor(nil_fraction * N)` uniformly chosen mentions are
/// relabeled NIL, keeping the original target in `original_gold`.
pub fn build_silver_dataset(
    anchored_docs: &[AnchoredDocument],
    kb: &KnowledgeBase,
    seed_entities: &BTreeSet<String>,
    nil_fraction: f64,
    rng_seed: u64,
) -> Result<(Dataset, SilverReport)> {
    if !(0.0..1.0).contains(&nil_fraction) {
        return Err(Error::Config(format!("nil_fraction {nil_fraction} outside [0, 1)")));
    }
    let mut rng = stream_rng(rng_seed, stream::SILVER);

    let mut occurrences: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (d, doc) in anchored_docs.iter().enumerate() {
        for a in &doc.anchors {
            occurrences.entry(a.target.as_str()).or_default().push(d);
        }
    }

    let mut seeds_skipped = 0;
    let mut selected: Vec<usize> = Vec::new();
    let mut selected_set = BTreeSet::new();
    for seed in seed_entities {
        match occurrences.get(seed.as_str()) {
            Some(docs) if !docs.is_empty() => {
                let page = docs[rng.random_range(0..docs.len())];
                if selected_set.insert(page) {
                    selected.push(page);
                }
            }
            _ => seeds_skipped += 1,
        }
    }
    if seeds_skipped > 0 {
        log::warn!("{seeds_skipped} seed entities have no anchors and were skipped");
    }

    let mut documents = Vec::new();
    let mut mentions = Vec::new();
    let mut targets_outside_kb = 0;
    for &d in &selected {
        let doc = &anchored_docs[d];
        documents.push(doc.document());
        for (i, a) in doc.anchors.iter().enumerate() {
            if !kb.contains(&a.target) {
                targets_outside_kb += 1;
            }
            mentions.push(Mention {
                id: doc.anchor_id(i),
                doc_id: doc.id.clone(),
                sentence_index: a.sentence_index,
                start: a.start,
                end: a.end,
                surface: doc.anchor_surface(i)?.to_string(),
                gold: Link::Entity(a.target.clone()),
                mention_type: a.mention_type.clone(),
                language: String::new(),
                original_gold: None,
            });
        }
    }

    let n = mentions.len();
    // Guards against products like 0.29 * 100 landing just below an integer.
    let n_nil = ((nil_fraction * n as f64) + 1e-9).floor() as usize;
    for i in index::sample(&mut rng, n, n_nil.min(n)) {
        let m = &mut mentions[i];
        if let Link::Entity(id) = std::mem::replace(&mut m.gold, Link::Nil) {
            m.original_gold = Some(id);
        }
    }

    let report =
        SilverReport { seeds_skipped, pages_selected: selected.len(), mentions: n, nil_mentions: n_nil, targets_outside_kb };
    Ok((Dataset::new(documents, mentions, Split::Train)?, report))
}
