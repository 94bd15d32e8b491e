//! Glue between datasets, triage, representations and the ranker.

use std::collections::BTreeMap;

use crate::adversarial::{PoolItem, TextKind};
use crate::corpus::Dataset;
use crate::encoder::{cached_entity_reps, cached_mention_reps, combine, EncoderAdapter, EntityReps, RepCache};
use crate::error::{Error, Result};
use crate::eval::{predict_with_nil, Prediction};
use crate::kb::{InvertedIndex, KnowledgeBase};
use crate::parallel::{self, ExecMode};
use crate::ranker::{EntitySource, EntityTable, Scorer, TrainExample};
use crate::triage::{generate_candidates, two_stage_retrieve, CandidateSet, TriageConfig};

/// Entity representations computed on demand through the cache.
pub struct LazyEntities<'a, E: EncoderAdapter + ?Sized> {
    enc: &'a E,
    cache: &'a RepCache,
    kb: &'a KnowledgeBase,
    ids: Vec<String>,
}

impl<'a, E: EncoderAdapter + ?Sized> LazyEntities<'a, E> {
    pub fn new(enc: &'a E, cache: &'a RepCache, kb: &'a KnowledgeBase) -> Self {
        LazyEntities { enc, cache, kb, ids: kb.ids().map(String::from).collect() }
    }
}

impl<E: EncoderAdapter + ?Sized> EntitySource for LazyEntities<'_, E> {
    fn entity_reps(&self, id: &str) -> Result<EntityReps> {
        cached_entity_reps(self.enc, self.cache, self.kb, id)
    }

    fn entity_ids(&self) -> &[String] {
        &self.ids
    }
}

/// Precomputes representations for every KB entity.
pub fn entity_table<E: EncoderAdapter + ?Sized>(
    enc: &E,
    cache: &RepCache,
    kb: &KnowledgeBase,
    exec: ExecMode,
) -> Result<EntityTable> {
    let ids: Vec<&str> = kb.ids().collect();
    let reps = parallel::try_map(exec, &ids, |id| cached_entity_reps(enc, cache, kb, id))?;
    Ok(EntityTable::new(ids.iter().map(|s| s.to_string()).zip(reps).collect()))
}

pub fn triage_dataset(
    kb: &KnowledgeBase,
    index: &InvertedIndex,
    ds: &Dataset,
    cfg: &TriageConfig,
    two_stage: bool,
    exec: ExecMode,
) -> Result<Vec<CandidateSet>> {
    cfg.validate()?;
    Ok(parallel::map(exec, &ds.mentions, |m| CandidateSet {
        mention_id: m.id.clone(),
        candidates: if two_stage {
            two_stage_retrieve(kb, index, &m.surface, cfg)
        } else {
            generate_candidates(kb, index, &m.surface, cfg)
        },
    }))
}

pub fn candidate_map(sets: &[CandidateSet]) -> BTreeMap<String, Vec<String>> {
    sets.iter().map(|s| (s.mention_id.clone(), s.candidates.iter().map(|c| c.entity_id.clone()).collect())).collect()
}

/// Linked mentions as training examples; NIL-gold mentions are skipped.
pub fn training_examples<E: EncoderAdapter + ?Sized>(
    enc: &E,
    cache: &RepCache,
    kb: &KnowledgeBase,
    ds: &Dataset,
    candidates: &BTreeMap<String, Vec<String>>,
    exec: ExecMode,
) -> Result<Vec<TrainExample>> {
    let linked: Vec<_> = ds.mentions.iter().filter(|m| !m.gold.is_nil()).collect();
    let missing: Vec<&str> = linked.iter().filter_map(|m| m.gold.entity()).filter(|id| !kb.contains(id)).collect();
    if !missing.is_empty() {
        return Err(Error::NotFound { kind: "gold entity", id: missing.join(", ") });
    }
    parallel::try_map(exec, &linked, |m| {
        let doc = ds.document(&m.doc_id)?;
        Ok(TrainExample {
            mention_id: m.id.clone(),
            language: doc.language.clone(),
            mention: cached_mention_reps(enc, cache, doc, m)?,
            gold: m.gold.entity().unwrap().to_string(),
            candidates: candidates.get(&m.id).cloned().unwrap_or_default(),
        })
    })
}

/// Scores each mention's candidates and applies the NIL threshold. Mentions
/// without a candidate entry are treated as having none.
#[allow(clippy::too_many_arguments)]
pub fn predict_dataset<E: EncoderAdapter + ?Sized, S: Scorer + ?Sized>(
    scorer: &S,
    enc: &E,
    cache: &RepCache,
    entities: &dyn EntitySource,
    ds: &Dataset,
    candidates: &BTreeMap<String, Vec<String>>,
    threshold: f64,
    exec: ExecMode,
) -> Result<Vec<Prediction>> {
    parallel::try_map(exec, &ds.mentions, |m| {
        let doc = ds.document(&m.doc_id)?;
        let reps = cached_mention_reps(enc, cache, doc, m)?;
        let cands = candidates.get(&m.id).map(Vec::as_slice).unwrap_or(&[]);
        let bundles =
            cands.iter().map(|id| Ok((id.clone(), combine(&reps, &entities.entity_reps(id)?)))).collect::<Result<Vec<_>>>()?;
        predict_with_nil(scorer, &m.id, &bundles, threshold)
    })
}

/// Pool texts from a KB: entity names or descriptions.
pub fn pool_from_kb(kb: &KnowledgeBase, kind: TextKind) -> Vec<PoolItem> {
    kb.entities()
        .filter_map(|e| {
            let text = match kind {
                TextKind::Name => &e.name,
                TextKind::Description => &e.description,
            };
            (!text.is_empty()).then(|| PoolItem { language: e.language.clone(), text: text.clone() })
        })
        .collect()
}
