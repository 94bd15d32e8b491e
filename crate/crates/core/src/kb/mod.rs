//! Same-language knowledge base: entities, cross-link popularity, anchor statistics.

mod index;

pub use index::InvertedIndex;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::NIL;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub id: String,
    pub language: String,
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub wiki_title: Option<String>,
    #[serde(default)]
    pub outlinks: BTreeSet<String>,
}

/// Which cross-links count toward an entity's popularity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CrossLinkDirection {
    /// Unique links listed on the entity's own record.
    #[default]
    Out,
    /// Unique entities that link to this entity.
    In,
}

/// surface string → entity id → count
pub type AnchorStats = BTreeMap<String, BTreeMap<String, u64>>;

#[derive(Debug, Clone)]
pub struct KnowledgeBase {
    language: String,
    entities: BTreeMap<String, Entity>,
    direction: CrossLinkDirection,
    link_counts: BTreeMap<String, usize>,
    median_links: f64,
    anchor_stats: AnchorStats,
    dangling_dropped: usize,
}

impl Default for KnowledgeBase {
    fn default() -> Self {
        KnowledgeBase {
            language: String::new(),
            entities: BTreeMap::new(),
            direction: CrossLinkDirection::Out,
            link_counts: BTreeMap::new(),
            median_links: 0.0,
            anchor_stats: AnchorStats::new(),
            dangling_dropped: 0,
        }
    }
}

/// Median of `values`; mean of the two middle values for even length, 0 when empty.
pub fn median(values: &[usize]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2] as f64
    } else {
        (sorted[n / 2 - 1] as f64 + sorted[n / 2] as f64) / 2.0
    }
}

impl KnowledgeBase {
    /// Builds a KB from entity records. Dangling outlinks are dropped and counted.
    pub fn from_entities(entities: impl IntoIterator<Item = Entity>) -> Result<Self> {
        let mut kb = KnowledgeBase::default();
        for entity in entities {
            kb.check_new(&entity)?;
            kb.entities.insert(entity.id.clone(), entity);
        }
        kb.resolve_links();
        Ok(kb)
    }

    fn check_new(&mut self, entity: &Entity) -> Result<()> {
        if entity.id.is_empty() || entity.id == NIL {
            return Err(Error::Invalid(format!("reserved or empty entity id `{}`", entity.id)));
        }
        if self.entities.contains_key(&entity.id) {
            return Err(Error::DuplicateId(entity.id.clone()));
        }
        if self.entities.is_empty() {
            self.language = entity.language.clone();
        } else if entity.language != self.language {
            return Err(Error::Invalid(format!(
                "entity `{}` has language `{}` but the KB is `{}`",
                entity.id, entity.language, self.language
            )));
        }
        Ok(())
    }

    /// Inserts one entity and recomputes popularity statistics.
    pub fn insert(&mut self, entity: Entity) -> Result<()> {
        self.check_new(&entity)?;
        self.entities.insert(entity.id.clone(), entity);
        self.resolve_links();
        Ok(())
    }

    fn resolve_links(&mut self) {
        let ids: BTreeSet<String> = self.entities.keys().cloned().collect();
        let mut dropped = 0;
        for entity in self.entities.values_mut() {
            let before = entity.outlinks.len();
            entity.outlinks.retain(|t| ids.contains(t));
            dropped += before - entity.outlinks.len();
        }
        if dropped > 0 {
            log::warn!("dropped {dropped} dangling outlink(s)");
        }
        self.dangling_dropped += dropped;
        self.recompute_popularity();
    }

    fn recompute_popularity(&mut self) {
        self.link_counts = match self.direction {
            CrossLinkDirection::Out => self.entities.values().map(|e| (e.id.clone(), e.outlinks.len())).collect(),
            CrossLinkDirection::In => {
                let mut counts: BTreeMap<String, usize> = self.entities.keys().map(|id| (id.clone(), 0)).collect();
                for e in self.entities.values() {
                    for target in &e.outlinks {
                        *counts.get_mut(target).expect("links resolved") += 1;
                    }
                }
                counts
            }
        };
        let counts: Vec<usize> = self.link_counts.values().copied().collect();
        self.median_links = median(&counts);
    }

    pub fn with_direction(mut self, direction: CrossLinkDirection) -> Self {
        self.direction = direction;
        self.recompute_popularity();
        self
    }

    pub fn language(&self) -> &str {
        &self.language
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Entity> {
        self.entities.get(id)
    }

    pub fn entity(&self, id: &str) -> Result<&Entity> {
        self.entities.get(id).ok_or_else(|| Error::NotFound { kind: "entity", id: id.to_string() })
    }

    pub fn contains(&self, id: &str) -> bool {
        self.entities.contains_key(id)
    }

    /// Entities in ascending id order.
    pub fn entities(&self) -> impl Iterator<Item = &Entity> {
        self.entities.values()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entities.keys().map(String::as_str)
    }

    /// Median of unique cross-link counts over all entities.
    pub fn median_outlinks(&self) -> f64 {
        self.median_links
    }

    pub fn dangling_dropped(&self) -> usize {
        self.dangling_dropped
    }

    pub fn direction(&self) -> CrossLinkDirection {
        self.direction
    }

    /// Unique cross-link count divided by the KB median; 0 when the median is 0.
    pub fn popularity_score(&self, entity_id: &str) -> Result<f64> {
        let count =
            *self.link_counts.get(entity_id).ok_or_else(|| Error::NotFound { kind: "entity", id: entity_id.to_string() })?;
        if self.median_links == 0.0 {
            return Ok(0.0);
        }
        Ok(count as f64 / self.median_links)
    }

    pub fn anchor_stats(&self) -> &AnchorStats {
        &self.anchor_stats
    }

    /// Records `count` anchors of `surface` pointing at `entity_id`. Anchors to
    /// unknown entities are ignored; returns whether the anchor was kept.
    pub fn add_anchor(&mut self, surface: &str, entity_id: &str, count: u64) -> bool {
        if count == 0 || !self.entities.contains_key(entity_id) {
            return false;
        }
        *self.anchor_stats.entry(surface.to_string()).or_default().entry(entity_id.to_string()).or_insert(0) += count;
        true
    }

    pub fn anchor_targets(&self, surface: &str) -> Option<&BTreeMap<String, u64>> {
        self.anchor_stats.get(surface)
    }

    /// Replaces the anchor table, dropping targets missing from the KB.
    /// Returns the number of dropped (surface, target) pairs.
    pub fn set_anchor_stats(&mut self, stats: AnchorStats) -> usize {
        self.anchor_stats.clear();
        let mut dropped = 0;
        for (surface, targets) in stats {
            for (id, count) in targets {
                if !self.add_anchor(&surface, &id, count) {
                    dropped += 1;
                }
            }
        }
        dropped
    }

    pub fn save_entities(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for entity in self.entities.values() {
            serde_json::to_writer(&mut w, entity).map_err(|e| Error::json(path, e))?;
            w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn save_anchor_stats(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec_pretty(&self.anchor_stats).map_err(|e| Error::json(path, e))?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load_anchor_stats(&mut self, path: &Path) -> Result<usize> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let stats: AnchorStats = serde_json::from_slice(&bytes).map_err(|e| Error::json(path, e))?;
        Ok(self.set_anchor_stats(stats))
    }
}

/// Loads a JSONL entity file. Blank lines are skipped.
pub fn load_kb(path: &Path) -> Result<KnowledgeBase> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut entities = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let entity: Entity = serde_json::from_str(&line).map_err(|e| Error::Malformed {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        if !seen.insert(entity.id.clone()) {
            return Err(Error::DuplicateId(entity.id));
        }
        entities.push(entity);
    }
    KnowledgeBase::from_entities(entities)
}
