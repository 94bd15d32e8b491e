//! Candidate triage from anchor priors, with two-stage index retrieval.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{read_jsonl, write_jsonl};
use crate::error::{Error, Result};
use crate::kb::{InvertedIndex, KnowledgeBase};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub entity_id: String,
    pub prior: f64,
}

impl Candidate {
    pub fn new(entity_id: impl Into<String>, prior: f64) -> Self {
        Candidate { entity_id: entity_id.into(), prior }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TriageConfig {
    pub k: usize,
    pub l: usize,
}

impl Default for TriageConfig {
    fn default() -> Self {
        TriageConfig { k: 10, l: 200 }
    }
}

impl TriageConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("triage k must be at least 1".into()));
        }
        if self.l < self.k {
            return Err(Error::Config(format!("triage l ({}) must be at least k ({})", self.l, self.k)));
        }
        Ok(())
    }
}

fn sort_candidates(c: &mut [Candidate]) {
    c.sort_by(|a, b| b.prior.total_cmp(&a.prior).then_with(|| a.entity_id.cmp(&b.entity_id)));
}

/// P(e | surface) from anchor counts, descending by prior then ascending id.
pub fn estimate_prior(kb: &KnowledgeBase, surface: &str) -> Vec<Candidate> {
    let Some(targets) = kb.anchor_targets(surface) else {
        return Vec::new();
    };
    let total: u64 = targets.values().sum();
    if total == 0 {
        return Vec::new();
    }
    let mut out: Vec<Candidate> =
        targets.iter().filter(|(_, &c)| c > 0).map(|(id, &c)| Candidate::new(id.clone(), c as f64 / total as f64)).collect();
    sort_candidates(&mut out);
    out
}

fn uniform(ids: Vec<String>) -> Vec<Candidate> {
    let p = 1.0 / ids.len().max(1) as f64;
    ids.into_iter().map(|id| Candidate::new(id, p)).collect()
}

/// Top-k anchor candidates; falls back to an index query with uniform priors.
pub fn generate_candidates(kb: &KnowledgeBase, index: &InvertedIndex, surface: &str, cfg: &TriageConfig) -> Vec<Candidate> {
    let mut priors = estimate_prior(kb, surface);
    if priors.is_empty() {
        return uniform(index.query(surface, cfg.k));
    }
    priors.truncate(cfg.k);
    priors
}

/// Per-title retrieval budgets: `max(1, round_half_up(l·p_i/Σp))`, trimmed
/// from the lowest-prior (last) titles until the total fits in `l`.
///
/// `priors` must already be sorted descending.
pub fn allocate(priors: &[f64], l: usize) -> Vec<usize> {
    let sum: f64 = priors.iter().sum();
    if priors.is_empty() {
        return Vec::new();
    }
    let mut n: Vec<usize> = priors
        .iter()
        .map(|&p| {
            let share = if sum > 0.0 { l as f64 * p / sum } else { l as f64 / priors.len() as f64 };
            ((share + 0.5 + 1e-9).floor() as usize).max(1)
        })
        .collect();
    let mut total: usize = n.iter().sum();
    // trim overflow from the tail, keeping every title at 1 while possible
    let mut i = n.len();
    while total > l && i > 0 {
        i -= 1;
        let excess = total - l;
        let cut = excess.min(n[i] - 1);
        n[i] -= cut;
        total -= cut;
    }
    // more titles than budget: drop whole titles from the tail
    let mut i = n.len();
    while total > l && i > 0 {
        i -= 1;
        total -= n[i];
        n[i] = 0;
    }
    n
}

/// Ids retrieved for one title: wiki_title query results, then name query
/// results, deduplicated in that order, at most `n`.
fn retrieve_for_title(kb: &KnowledgeBase, index: &InvertedIndex, entity_id: &str, n: usize) -> Vec<String> {
    let Some(entity) = kb.get(entity_id) else {
        return Vec::new();
    };
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    let queries = entity.wiki_title.iter().map(String::as_str).chain(std::iter::once(entity.name.as_str()));
    for q in queries {
        for id in index.query(q, n) {
            if out.len() == n {
                return out;
            }
            if seen.insert(id.clone()) {
                out.push(id);
            }
        }
    }
    out
}

/// Two-stage retrieval: top-k anchor titles, then a prior-proportional number
/// of index results per title.
///
/// Entities retrieved for title i share its prior equally. The prior mass of
/// titles that retrieve nothing goes to a query on the surface string. With no
/// anchor titles at all the surface query alone is used, capped at `l`.
pub fn two_stage_retrieve(kb: &KnowledgeBase, index: &InvertedIndex, surface: &str, cfg: &TriageConfig) -> Vec<Candidate> {
    let mut titles = estimate_prior(kb, surface);
    titles.truncate(cfg.k);
    if titles.is_empty() {
        return uniform(index.query(surface, cfg.l));
    }
    let priors: Vec<f64> = titles.iter().map(|c| c.prior).collect();
    let budgets = allocate(&priors, cfg.l);

    let mut best: BTreeMap<String, f64> = BTreeMap::new();
    let take = |id: String, p: f64, best: &mut BTreeMap<String, f64>| {
        let e = best.entry(id).or_insert(p);
        if p > *e {
            *e = p;
        }
    };
    let mut unfound_mass = 0.0;
    for (title, &n) in titles.iter().zip(&budgets) {
        if n == 0 {
            continue;
        }
        let got = retrieve_for_title(kb, index, &title.entity_id, n);
        if got.is_empty() {
            unfound_mass += title.prior;
            continue;
        }
        let p = title.prior / got.len() as f64;
        for id in got {
            take(id, p, &mut best);
        }
    }
    if unfound_mass > 0.0 && best.len() < cfg.l {
        let extra = index.query(surface, cfg.l - best.len());
        let fresh: Vec<String> = extra.into_iter().filter(|id| !best.contains_key(id)).collect();
        if !fresh.is_empty() {
            let p = unfound_mass / fresh.len() as f64;
            for id in fresh {
                take(id, p, &mut best);
            }
        }
    }
    let mut out: Vec<Candidate> = best.into_iter().map(|(id, p)| Candidate::new(id, p)).collect();
    sort_candidates(&mut out);
    out.truncate(cfg.l);
    out
}

/// One line of the candidate dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub mention_id: String,
    pub candidates: Vec<Candidate>,
}

pub fn save_candidates(path: &Path, sets: &[CandidateSet]) -> Result<()> {
    write_jsonl(path, sets)
}

pub fn load_candidates(path: &Path) -> Result<Vec<CandidateSet>> {
    read_jsonl(path)
}
