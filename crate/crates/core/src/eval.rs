//! NIL-thresholded prediction and linking metrics.
//!
//! The metric definitions are reconstructions of a TAC-style scorer:
//! precision and recall over non-NIL links, F1 restricted to gold non-NIL
//! mentions, per-gold-entity mean accuracy, and plain mention accuracy.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{read_jsonl, write_jsonl, Link, Mention};
use crate::encoder::RepresentationBundle;
use crate::error::{Error, Result};
use crate::ranker::Scorer;

pub const DEFAULT_THRESHOLD: f64 = -1.0;
pub const UNTYPED: &str = "OTHER";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub mention_id: String,
    pub predicted: Link,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

/// Picks the best-scoring candidate (ties to the smaller id), or NIL when
/// there are no candidates or the best score is strictly below `threshold`.
pub fn decide(mention_id: &str, scored: &[(String, f64)], threshold: f64) -> Prediction {
    let mut best: Option<&(String, f64)> = None;
    for c in scored {
        best = match best {
            None => Some(c),
            Some(b) if c.1 > b.1 || (c.1 == b.1 && c.0 < b.0) => Some(c),
            keep => keep,
        };
    }
    let predicted = match best {
        Some((id, s)) if *s >= threshold => Link::Entity(id.clone()),
        _ => Link::Nil,
    };
    Prediction { mention_id: mention_id.to_string(), predicted, score: best.map(|b| b.1) }
}

/// Scores every candidate bundle and applies [`decide`].
pub fn predict_with_nil<S: Scorer + ?Sized>(
    scorer: &S,
    mention_id: &str,
    candidates: &[(String, RepresentationBundle)],
    threshold: f64,
) -> Result<Prediction> {
    if !(-1.0..=1.0).contains(&threshold) {
        return Err(Error::Invalid(format!("threshold {threshold} outside [-1, 1]")));
    }
    let scored = candidates.iter().map(|(id, b)| Ok((id.clone(), scorer.score(b)?))).collect::<Result<Vec<_>>>()?;
    Ok(decide(mention_id, &scored, threshold))
}

pub fn save_predictions(path: &Path, preds: &[Prediction]) -> Result<()> {
    write_jsonl(path, preds)
}

pub fn load_predictions(path: &Path) -> Result<Vec<Prediction>> {
    read_jsonl(path)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub n_mentions: usize,
    pub n_gold_nil: usize,
    pub n_gold_linked: usize,
    pub n_predicted_linked: usize,
    pub n_correct_linked: usize,
}

/// Metrics whose denominator was zero (reported as 0).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZeroDenominators {
    pub precision: bool,
    pub recall: bool,
    pub nn_f1: bool,
    pub entity_avg_precision: bool,
    pub mention_accuracy: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub nn_f1: f64,
    /// Mean over gold entities of the fraction of their mentions linked correctly.
    pub entity_avg_precision: f64,
    pub mention_accuracy: f64,
    pub counts: Counts,
    pub zero_denominators: ZeroDenominators,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub note: String,
    #[serde(flatten)]
    pub overall: Metrics,
    pub per_type: BTreeMap<String, Metrics>,
}

pub const REPORT_NOTE: &str = "metric definitions are explicit reconstructions of a TAC-style scorer";

fn ratio(num: usize, den: usize, flag: &mut bool) -> f64 {
    if den == 0 {
        *flag = true;
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn metrics(pairs: &[(&Mention, &Prediction)]) -> Metrics {
    let mut c = Counts { n_mentions: pairs.len(), ..Default::default() };
    let mut zero = ZeroDenominators::default();
    let mut correct_all = 0;
    // non-NIL predictions restricted to gold non-NIL mentions
    let (mut nn_pred, mut nn_correct) = (0usize, 0usize);
    let mut per_entity: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for (m, p) in pairs {
        let correct = m.gold == p.predicted;
        if correct {
            correct_all += 1;
        }
        match &m.gold {
            Link::Nil => c.n_gold_nil += 1,
            Link::Entity(id) => {
                c.n_gold_linked += 1;
                let e = per_entity.entry(id).or_default();
                e.0 += 1;
                if correct {
                    e.1 += 1;
                }
                if !p.predicted.is_nil() {
                    nn_pred += 1;
                    if correct {
                        nn_correct += 1;
                    }
                }
            }
        }
        if !p.predicted.is_nil() {
            c.n_predicted_linked += 1;
            if correct {
                c.n_correct_linked += 1;
            }
        }
    }
    let precision = ratio(c.n_correct_linked, c.n_predicted_linked, &mut zero.precision);
    let recall = ratio(c.n_correct_linked, c.n_gold_linked, &mut zero.recall);
    let mut nn_flag = false;
    let nn_p = ratio(nn_correct, nn_pred, &mut nn_flag);
    let nn_r = ratio(nn_correct, c.n_gold_linked, &mut nn_flag);
    zero.nn_f1 = nn_flag;
    let entity_avg_precision = if per_entity.is_empty() {
        zero.entity_avg_precision = true;
        0.0
    } else {
        per_entity.values().map(|&(n, k)| k as f64 / n as f64).sum::<f64>() / per_entity.len() as f64
    };
    let mention_accuracy = ratio(correct_all, c.n_mentions, &mut zero.mention_accuracy);
    Metrics {
        precision,
        recall,
        f1: harmonic(precision, recall),
        nn_f1: harmonic(nn_p, nn_r),
        entity_avg_precision,
        mention_accuracy,
        counts: c,
        zero_denominators: zero,
    }
}

fn align<'a>(gold: &'a [Mention], preds: &'a [Prediction]) -> Result<Vec<(&'a Mention, &'a Prediction)>> {
    let mut by_id: BTreeMap<&str, &Prediction> = BTreeMap::new();
    let mut dup = BTreeSet::new();
    for p in preds {
        if by_id.insert(&p.mention_id, p).is_some() {
            dup.insert(p.mention_id.clone());
        }
    }
    if !dup.is_empty() {
        return Err(Error::Invalid(format!("duplicate predictions for {:?}", dup)));
    }
    let gold_ids: BTreeSet<&str> = gold.iter().map(|m| m.id.as_str()).collect();
    let missing: Vec<&str> = gold_ids.iter().filter(|id| !by_id.contains_key(*id)).copied().collect();
    let extra: Vec<&str> = by_id.keys().filter(|id| !gold_ids.contains(*id)).copied().collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(Error::Invalid(format!("prediction ids differ from gold: missing {missing:?}, extra {extra:?}")));
    }
    Ok(gold.iter().map(|m| (m, by_id[m.id.as_str()])).collect())
}

fn type_of(m: &Mention) -> &str {
    m.mention_type.as_deref().unwrap_or(UNTYPED)
}

pub fn breakdown_by_type(gold: &[Mention], preds: &[Prediction]) -> Result<BTreeMap<String, Metrics>> {
    let pairs = align(gold, preds)?;
    let mut groups: BTreeMap<&str, Vec<(&Mention, &Prediction)>> = BTreeMap::new();
    for pair in pairs {
        groups.entry(type_of(pair.0)).or_default().push(pair);
    }
    Ok(groups.into_iter().map(|(t, ps)| (t.to_string(), metrics(&ps))).collect())
}

pub fn evaluate(gold: &[Mention], preds: &[Prediction]) -> Result<EvaluationReport> {
    let pairs = align(gold, preds)?;
    Ok(EvaluationReport { note: REPORT_NOTE.into(), overall: metrics(&pairs), per_type: breakdown_by_type(gold, preds)? })
}

impl EvaluationReport {
    /// Aligned plain-text table: micro, p, r, F1, nn F1 per row.
    pub fn to_table(&self) -> String {
        let mut rows = vec![("all".to_string(), &self.overall)];
        rows.extend(self.per_type.iter().map(|(t, m)| (t.clone(), m)));
        let w = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(3).max(5);
        let mut out = format!("# {}\n", self.note);
        let _ = writeln!(out, "{:<w$}  {:>6}  {:>6}  {:>6}  {:>6}  {:>6}  {:>6}", "split", "micro", "p", "r", "F1", "nn F1", "n");
        for (name, m) in rows {
            let _ = writeln!(
                out,
                "{:<w$}  {:>6.3}  {:>6.3}  {:>6.3}  {:>6.3}  {:>6.3}  {:>6}",
                name, m.entity_avg_precision, m.precision, m.recall, m.f1, m.nn_f1, m.counts.n_mentions
            );
        }
        out
    }
}
