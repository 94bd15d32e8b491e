//! Adversarial language-invariance training.
//!
//! Each epoch first trains the language classifier `h_adv` on a few pooled
//! texts per language, then runs the ranking pass with an extra λ-weighted
//! classifier term on `h_s0(m_s)` and `h_s0(e_s)`. By default the classifier
//! pass uses reversed language labels and the ranking pass the correct ones;
//! [`LabelAssignment::Classic`] swaps the two.

use std::path::Path;
use std::sync::Arc;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus::{read_jsonl, write_jsonl};
use crate::encoder::{cached_text_rep, EncoderAdapter, RepCache};
use crate::error::{Error, Result};
use crate::parallel::ExecMode;
use crate::ranker::{EntitySource, Optimizer, RankerModel, TrainExample, Trainer};
use crate::rng::{stream, stream_rng, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TextKind {
    #[default]
    Name,
    Description,
}

/// Which pass sees reversed language labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelAssignment {
    /// Classifier pass reversed, ranking pass correct.
    #[default]
    AsWritten,
    /// Classifier pass correct, ranking pass reversed.
    Classic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdversarialConfig {
    pub lambda: f64,
    /// Pool items drawn per language in each classifier pass.
    pub y: usize,
    /// Last epoch (1-based) that runs the classifier pass.
    pub adv_stop_epoch: Option<usize>,
    /// Extra ranking-only epochs with λ = 0 and no classifier pass.
    pub el_only_epochs: usize,
    pub classifier_width: usize,
    /// `[source, target]`.
    pub languages: [String; 2],
    pub adv_text_kind: TextKind,
    pub labels: LabelAssignment,
    /// Classifier learning rate; the ranker's when unset.
    pub classifier_lr: Option<f64>,
}

impl Default for AdversarialConfig {
    fn default() -> Self {
        AdversarialConfig {
            lambda: 0.25,
            y: 5,
            adv_stop_epoch: None,
            el_only_epochs: 0,
            classifier_width: 256,
            languages: ["en".into(), "zh".into()],
            adv_text_kind: TextKind::Name,
            labels: LabelAssignment::AsWritten,
            classifier_lr: None,
        }
    }
}

impl AdversarialConfig {
    /// λ = 0.25, classifier pass for the whole run, name text.
    pub fn tac_adv() -> Self {
        AdversarialConfig { lambda: 0.25, adv_stop_epoch: None, adv_text_kind: TextKind::Name, ..Default::default() }
    }

    /// λ = 0.01, classifier pass stops after epoch 50.
    pub fn wiki_adv() -> Self {
        AdversarialConfig { lambda: 0.01, adv_stop_epoch: Some(50), ..Default::default() }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "tac-adv" => Ok(Self::tac_adv()),
            "wiki-adv" => Ok(Self::wiki_adv()),
            other => Err(Error::Config(format!("unknown preset `{other}` (expected tac-adv or wiki-adv)"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::Config(format!("lambda {} must be non-negative", self.lambda)));
        }
        if self.y == 0 {
            return Err(Error::Config("y must be at least 1".into()));
        }
        if self.classifier_width == 0 {
            return Err(Error::Config("classifier width must be at least 1".into()));
        }
        if self.languages[0] == self.languages[1] {
            return Err(Error::Config("the two adversary languages must differ".into()));
        }
        if let Some(lr) = self.classifier_lr {
            if !(lr.is_finite() && lr >= 0.0) {
                return Err(Error::Config(format!("classifier_lr {lr} must be non-negative")));
            }
        }
        Ok(())
    }

    pub fn language_index(&self, language: &str) -> Result<usize> {
        self.languages
            .iter()
            .position(|l| l == language)
            .ok_or_else(|| Error::Config(format!("language `{language}` is not one of {:?}", self.languages)))
    }

    fn adversarial_label(&self, lang: usize) -> [f64; 2] {
        match self.labels {
            LabelAssignment::AsWritten => reversed(one_hot(lang)),
            LabelAssignment::Classic => one_hot(lang),
        }
    }

    pub fn main_label(&self, lang: usize) -> [f64; 2] {
        match self.labels {
            LabelAssignment::AsWritten => one_hot(lang),
            LabelAssignment::Classic => reversed(one_hot(lang)),
        }
    }

    fn adversary_active(&self, epoch: usize) -> bool {
        self.adv_stop_epoch.is_none_or(|stop| epoch <= stop)
    }
}

pub fn one_hot(i: usize) -> [f64; 2] {
    if i == 0 {
        [1.0, 0.0]
    } else {
        [0.0, 1.0]
    }
}

pub fn reversed(label: [f64; 2]) -> [f64; 2] {
    [label[1], label[0]]
}

/// Mean squared error between the classifier's 2-simplex output and a
/// one-hot label.
pub fn language_mse_loss(output: [f64; 2], label: [f64; 2]) -> Result<f64> {
    if output.iter().any(|p| !(0.0..=1.0).contains(p)) || (output[0] + output[1] - 1.0).abs() > 1e-6 {
        return Err(Error::Invalid(format!("classifier output {output:?} is not on the simplex")));
    }
    let hot = label.iter().filter(|&&x| x == 1.0).count() == 1 && label.iter().all(|&x| x == 0.0 || x == 1.0);
    if !hot {
        return Err(Error::Invalid(format!("label {label:?} is not one-hot")));
    }
    Ok(((output[0] - label[0]).powi(2) + (output[1] - label[1]).powi(2)) / 2.0)
}

/// One line of the unlabeled pool file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolItem {
    pub language: String,
    pub text: String,
}

pub fn load_pool(path: &Path) -> Result<Vec<PoolItem>> {
    read_jsonl(path)
}

pub fn save_pool(path: &Path, items: &[PoolItem]) -> Result<()> {
    write_jsonl(path, items)
}

/// Encoded pool texts per adversary language.
#[derive(Debug, Clone, Default)]
pub struct UnlabeledPool {
    pub reps: [Vec<Arc<[f32]>>; 2],
}

impl UnlabeledPool {
    pub fn new(source: Vec<Arc<[f32]>>, target: Vec<Arc<[f32]>>) -> Self {
        UnlabeledPool { reps: [source, target] }
    }

    /// Encodes items standalone (pooled over their first subword_limit
    /// subwords); items in other languages are ignored.
    pub fn encode<E: EncoderAdapter + ?Sized>(
        enc: &E,
        cache: &RepCache,
        items: &[PoolItem],
        cfg: &AdversarialConfig,
        exec: ExecMode,
    ) -> Result<Self> {
        let reps = crate::parallel::try_map(exec, items, |it| match cfg.language_index(&it.language) {
            Ok(i) => cached_text_rep(enc, cache, &it.text, &it.language).map(|r| Some((i, r))),
            Err(_) => Ok(None),
        })?;
        let mut pool = UnlabeledPool::default();
        for (i, r) in reps.into_iter().flatten() {
            pool.reps[i].push(r);
        }
        Ok(pool)
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps.iter().any(Vec::is_empty) {
            return Err(Error::Invalid("the unlabeled pool needs texts in both languages".into()));
        }
        Ok(())
    }
}

/// Classifier pass: `y` random texts per language scored against the
/// adversarial labels; the summed loss updates only `h_adv`.
pub fn adversarial_step(
    model: &mut RankerModel,
    cfg: &AdversarialConfig,
    pool: &UnlabeledPool,
    rng: &mut Rng,
    opt: &mut Optimizer,
) -> Result<f64> {
    pool.validate()?;
    let mut grad = vec![0.0; model.num_parameters()];
    let mut loss = 0.0;
    for _ in 0..cfg.y {
        for lang in 0..2 {
            let items = &pool.reps[lang];
            let t = &items[rng.random_range(0..items.len())];
            loss += model.classifier_loss_grad(t, &cfg.adversarial_label(lang), Some(&mut grad))?;
        }
    }
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("adversarial classifier loss".into()));
    }
    opt.step(model.parameters_mut(), &grad);
    model.check_finite()?;
    Ok(loss)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub epoch: usize,
    pub el_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub adv_loss: Option<f64>,
    /// λ-weighted classifier term of the ranking pass.
    pub cls_loss: f64,
}

pub fn save_history(path: &Path, history: &[HistoryEntry]) -> Result<()> {
    write_jsonl(path, history)
}

/// Adds the invariant-layer classifier to `model` if it lacks one.
pub fn ensure_classifier(model: RankerModel, cfg: &AdversarialConfig) -> Result<RankerModel> {
    if model.has_classifier() {
        if model.classifier_width() != Some(cfg.classifier_width) {
            return Err(Error::Config("model classifier width differs from the adversarial config".into()));
        }
        return Ok(model);
    }
    let seed = model.config().rng_seed;
    model.attach_language_classifier(cfg.classifier_width, seed)
}

/// Full schedule: `epochs` joint epochs (classifier pass while active), then
/// `el_only_epochs` ranking-only epochs.
pub fn train_with_adversary(
    model: &mut RankerModel,
    cfg: &AdversarialConfig,
    examples: &[TrainExample],
    entities: &dyn EntitySource,
    pool: &UnlabeledPool,
    exec: ExecMode,
) -> Result<Vec<HistoryEntry>> {
    cfg.validate()?;
    if !model.has_classifier() {
        return Err(Error::Config("adversarial training needs the invariant layer and language classifier".into()));
    }
    let epochs = model.config().epochs;
    let runs_adversary = (1..=epochs).any(|e| cfg.adversary_active(e));
    if runs_adversary {
        pool.validate()?;
    }
    for ex in examples {
        cfg.language_index(&ex.language)?;
    }
    let seed = model.config().rng_seed;
    let mut adv_rng = stream_rng(seed, stream::ADVERSARY);
    let mut adv_opt = Optimizer::for_classifier(model, cfg.classifier_lr.unwrap_or(model.config().learning_rate));
    let mut trainer = Trainer::new(model, examples, entities, exec);
    let labels = |ex: &TrainExample| -> Result<[f64; 2]> { Ok(cfg.main_label(cfg.language_index(&ex.language)?)) };

    let mut history = Vec::with_capacity(epochs + cfg.el_only_epochs);
    for epoch in 1..=epochs + cfg.el_only_epochs {
        let joint = epoch <= epochs;
        let adv_loss = if joint && cfg.adversary_active(epoch) {
            Some(adversarial_step(model, cfg, pool, &mut adv_rng, &mut adv_opt)?)
        } else {
            None
        };
        let lambda = if joint { cfg.lambda } else { 0.0 };
        let s = trainer.epoch(model, epoch, lambda, Some(&labels))?;
        log::info!("epoch {epoch}: el {:.6} cls {:.6} adv {:?}", s.hinge, s.classifier, adv_loss);
        history.push(HistoryEntry { epoch, el_loss: s.hinge, adv_loss, cls_loss: s.classifier });
    }
    Ok(history)
}
