use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::encoder::{combine, EntityReps, MentionReps, RepresentationBundle};
use crate::error::{Error, Result};
use crate::parallel::{self, ExecMode};
use crate::rng::{keyed_rng, stream, Rng};

use super::model::{ClassifierTerm, LossParts, RankerModel};
use super::nn::Group;
use super::OptimizerKind;

/// Examples per gradient chunk; fixed so that parallel and sequential runs
/// sum in the same order.
const GRAD_CHUNK: usize = 4;

/// Entity-side representations by id.
pub trait EntitySource: Sync {
    fn entity_reps(&self, id: &str) -> Result<EntityReps>;
    /// All entity ids, sorted; used to top up negatives.
    fn entity_ids(&self) -> &[String];
}

/// Precomputed entity representations.
#[derive(Debug, Clone, Default)]
pub struct EntityTable {
    ids: Vec<String>,
    reps: BTreeMap<String, EntityReps>,
}

impl EntityTable {
    pub fn new(reps: BTreeMap<String, EntityReps>) -> Self {
        EntityTable { ids: reps.keys().cloned().collect(), reps }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&EntityReps> {
        self.reps.get(id)
    }

    /// Copy with every popularity replaced by `f(id, old)`.
    pub fn map_popularity(&self, f: impl Fn(&str, f64) -> f64) -> Self {
        let reps =
            self.reps.iter().map(|(id, r)| (id.clone(), EntityReps { popularity: f(id, r.popularity), ..r.clone() })).collect();
        EntityTable::new(reps)
    }
}

impl EntitySource for EntityTable {
    fn entity_reps(&self, id: &str) -> Result<EntityReps> {
        self.reps.get(id).cloned().ok_or_else(|| Error::NotFound { kind: "entity", id: id.to_string() })
    }

    fn entity_ids(&self) -> &[String] {
        &self.ids
    }
}

/// One linked training mention.
#[derive(Debug, Clone)]
pub struct TrainExample {
    pub mention_id: String,
    pub language: String,
    pub mention: MentionReps,
    pub gold: String,
    /// Triage candidates; negatives are drawn from these first.
    pub candidates: Vec<String>,
}

/// `n` distinct non-gold ids: uniformly from `candidates`, topped up
/// uniformly from `kb_ids` when the candidates run out.
pub fn sample_negatives(candidates: &[String], gold: &str, n: usize, kb_ids: &[String], rng: &mut Rng) -> Result<Vec<String>> {
    if n == 0 {
        return Err(Error::Invalid("n_negatives must be at least 1".into()));
    }
    let mut seen: BTreeSet<&str> = BTreeSet::new();
    let mut pool: Vec<&str> = Vec::new();
    for c in candidates {
        if c != gold && seen.insert(c) {
            pool.push(c);
        }
    }
    pool.shuffle(rng);
    let mut chosen: Vec<String> = pool.into_iter().take(n).map(String::from).collect();
    if chosen.len() < n {
        let taken: BTreeSet<String> = chosen.iter().cloned().chain(std::iter::once(gold.to_string())).collect();
        let available = kb_ids.iter().filter(|id| !taken.contains(*id)).count();
        let need = n - chosen.len();
        if available <= need {
            chosen.extend(kb_ids.iter().filter(|id| !taken.contains(*id)).cloned());
        } else {
            let mut taken = taken;
            while chosen.len() < n {
                let id = &kb_ids[rng.random_range(0..kb_ids.len())];
                if taken.insert(id.clone()) {
                    chosen.push(id.clone());
                }
            }
        }
    }
    if chosen.is_empty() {
        return Err(Error::Invalid(format!("no non-gold entity available as a negative for `{gold}`")));
    }
    Ok(chosen)
}

/// Optimizer state for a masked subset of the parameters.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    mask: Vec<bool>,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

const ADAM_B1: f64 = 0.9;
const ADAM_B2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, mask: Vec<bool>) -> Self {
        let n = if kind == OptimizerKind::Adam { mask.len() } else { 0 };
        Optimizer { kind, lr, mask, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    /// Updates every group except the language classifier.
    pub fn for_main(model: &RankerModel) -> Self {
        let cfg = model.config();
        Optimizer::new(cfg.optimizer, cfg.learning_rate, model.layout().mask(|g| g != Group::Classifier))
    }

    /// Updates only the language classifier.
    pub fn for_classifier(model: &RankerModel, lr: f64) -> Self {
        Optimizer::new(model.config().optimizer, lr, model.layout().mask(|g| g == Group::Classifier))
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        if self.lr == 0.0 {
            return;
        }
        match self.kind {
            OptimizerKind::Sgd => {
                for ((p, g), &on) in params.iter_mut().zip(grad).zip(&self.mask) {
                    if on {
                        *p -= self.lr * g;
                    }
                }
            }
            OptimizerKind::Adam => {
                self.t += 1;
                let c1 = 1.0 - ADAM_B1.powi(self.t);
                let c2 = 1.0 - ADAM_B2.powi(self.t);
                for i in 0..params.len() {
                    if !self.mask[i] {
                        continue;
                    }
                    let g = grad[i];
                    self.m[i] = ADAM_B1 * self.m[i] + (1.0 - ADAM_B1) * g;
                    self.v[i] = ADAM_B2 * self.v[i] + (1.0 - ADAM_B2) * g * g;
                    params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + ADAM_EPS);
                }
            }
        }
    }
}

/// A training example with its negatives resolved to bundles.
#[derive(Debug, Clone)]
pub struct PreparedExample {
    /// Stable example index, used to key the dropout stream.
    pub key: u64,
    pub mention_id: String,
    pub pos: RepresentationBundle,
    pub negs: Vec<RepresentationBundle>,
    /// Correct language label for the classifier term.
    pub label: Option<[f64; 2]>,
}

pub fn prepare_example(
    model: &RankerModel,
    ex: &TrainExample,
    key: u64,
    epoch: usize,
    entities: &dyn EntitySource,
    label: Option<[f64; 2]>,
) -> Result<PreparedExample> {
    let cfg = model.config();
    let mut rng = keyed_rng(cfg.rng_seed, stream::NEGATIVES, &[epoch as u64, key]);
    let neg_ids = sample_negatives(&ex.candidates, &ex.gold, cfg.n_negatives, entities.entity_ids(), &mut rng)?;
    let pos = combine(&ex.mention, &entities.entity_reps(&ex.gold)?);
    let negs = neg_ids.iter().map(|id| Ok(combine(&ex.mention, &entities.entity_reps(id)?))).collect::<Result<Vec<_>>>()?;
    Ok(PreparedExample { key, mention_id: ex.mention_id.clone(), pos, negs, label })
}

/// Batch-mean loss components.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BatchLoss {
    pub total: f64,
    pub hinge: f64,
    /// λ-weighted classifier contribution.
    pub classifier: f64,
}

/// Mean loss and mean gradient over `batch`.
pub fn batch_gradient(
    model: &RankerModel,
    batch: &[PreparedExample],
    lambda: f64,
    epoch: usize,
    exec: ExecMode,
) -> Result<(BatchLoss, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::Invalid("empty training batch".into()));
    }
    let seed = model.config().rng_seed;
    let n = model.num_parameters();
    let chunks = parallel::map_chunks(exec, batch, GRAD_CHUNK, |_, chunk| -> Result<(Vec<LossParts>, Vec<f64>)> {
        let mut grad = vec![0.0; n];
        let mut losses = Vec::with_capacity(chunk.len());
        for ex in chunk {
            let mut rng = keyed_rng(seed, stream::DROPOUT, &[epoch as u64, ex.key]);
            let cls = ex.label.map(|label| ClassifierTerm { lambda, label });
            let parts = model.example_loss_grad(&ex.pos, &ex.negs, cls, Some(&mut rng), Some(&mut grad))?;
            if !parts.total().is_finite() {
                return Err(Error::NonFinite(format!("loss for mention `{}` at epoch {epoch}", ex.mention_id)));
            }
            losses.push(parts);
        }
        Ok((losses, grad))
    });
    let mut grad = vec![0.0; n];
    let mut loss = BatchLoss::default();
    for chunk in chunks {
        let (losses, g) = chunk?;
        for p in losses {
            loss.total += p.total();
            loss.hinge += p.hinge;
            loss.classifier += p.lambda * p.classifier;
        }
        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    let inv = 1.0 / batch.len() as f64;
    grad.iter_mut().for_each(|g| *g *= inv);
    loss.total *= inv;
    loss.hinge *= inv;
    loss.classifier *= inv;
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient component {i} at epoch {epoch}")));
    }
    Ok((loss, grad))
}

/// One update on a batch; every parameter except the language classifier
/// moves.
pub fn main_step(
    model: &mut RankerModel,
    batch: &[PreparedExample],
    lambda: f64,
    epoch: usize,
    opt: &mut Optimizer,
    exec: ExecMode,
) -> Result<BatchLoss> {
    let (loss, grad) = batch_gradient(model, batch, lambda, epoch, exec)?;
    opt.step(model.parameters_mut(), &grad);
    model.check_finite()?;
    Ok(loss)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean total loss per example.
    pub loss: f64,
    pub hinge: f64,
    pub classifier: f64,
}

/// Classifier label of a training example.
pub type LabelFn<'a> = dyn Fn(&TrainExample) -> Result<[f64; 2]> + Sync + 'a;

/// Shared state for a run of training epochs.
pub struct Trainer<'a> {
    pub examples: &'a [TrainExample],
    pub entities: &'a dyn EntitySource,
    pub exec: ExecMode,
    pub optimizer: Optimizer,
}

impl<'a> Trainer<'a> {
    pub fn new(model: &RankerModel, examples: &'a [TrainExample], entities: &'a dyn EntitySource, exec: ExecMode) -> Self {
        Trainer { examples, entities, exec, optimizer: Optimizer::for_main(model) }
    }

    /// One pass over the shuffled examples. `labels` supplies the classifier
    /// label per example when `lambda > 0`.
    pub fn epoch(
        &mut self,
        model: &mut RankerModel,
        epoch: usize,
        lambda: f64,
        labels: Option<&LabelFn<'_>>,
    ) -> Result<EpochStats> {
        if self.examples.is_empty() {
            return Err(Error::Invalid("no training examples".into()));
        }
        let cfg = model.config().clone();
        let mut order: Vec<usize> = (0..self.examples.len()).collect();
        order.shuffle(&mut keyed_rng(cfg.rng_seed, stream::SHUFFLE, &[epoch as u64]));
        let use_labels = if lambda != 0.0 { labels } else { None };
        let mut stats = EpochStats { epoch, ..Default::default() };
        for batch_idx in order.chunks(cfg.batch_size) {
            let m: &RankerModel = model;
            let prepared = parallel::try_map(self.exec, batch_idx, |&i| {
                let ex = &self.examples[i];
                let label = use_labels.map(|f| f(ex)).transpose()?;
                prepare_example(m, ex, i as u64, epoch, self.entities, label)
            })?;
            let loss = main_step(model, &prepared, lambda, epoch, &mut self.optimizer, self.exec)?;
            let w = prepared.len() as f64;
            stats.loss += loss.total * w;
            stats.hinge += loss.hinge * w;
            stats.classifier += loss.classifier * w;
        }
        let n = self.examples.len() as f64;
        stats.loss /= n;
        stats.hinge /= n;
        stats.classifier /= n;
        Ok(stats)
    }
}

/// One plain ranking epoch with a fresh optimizer (SGD is stateless).
pub fn train_epoch(
    model: &mut RankerModel,
    examples: &[TrainExample],
    entities: &dyn EntitySource,
    epoch: usize,
    exec: ExecMode,
) -> Result<EpochStats> {
    Trainer::new(model, examples, entities, exec).epoch(model, epoch, 0.0, None)
}

/// `config.epochs` plain ranking epochs, numbered from 1.
pub fn train_ranker(
    model: &mut RankerModel,
    examples: &[TrainExample],
    entities: &dyn EntitySource,
    exec: ExecMode,
) -> Result<Vec<EpochStats>> {
    let mut trainer = Trainer::new(model, examples, entities, exec);
    let epochs = model.config().epochs;
    let mut history = Vec::with_capacity(epochs);
    for epoch in 1..=epochs {
        let s = trainer.epoch(model, epoch, 0.0, None)?;
        log::info!("epoch {epoch}: loss {:.6}", s.loss);
        history.push(s);
    }
    Ok(history)
}

/// Builds training examples from precomputed parts, skipping NIL-gold mentions.
pub fn build_examples(
    items: impl IntoIterator<Item = (String, String, MentionReps, Option<String>, Vec<String>)>,
) -> Vec<TrainExample> {
    items
        .into_iter()
        .filter_map(|(mention_id, language, mention, gold, candidates)| {
            gold.map(|gold| TrainExample { mention_id, language, mention, gold, candidates })
        })
        .collect()
}
