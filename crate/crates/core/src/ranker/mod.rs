//! Pointwise neural ranker trained with a max-margin hinge loss.
//!
//! A mention–entity pair is scored as
//! `tanh(final([string(m_s ⊕ e_s) ⊕ context(m_c ⊕ e_c) (⊕ popularity)]))`,
//! where `⊕` is concatenation. With the invariant layer enabled, `m_s` and
//! `e_s` first pass through the shared layer `h_s0`.

mod checkpoint;
mod model;
pub mod nn;
mod train;

pub use checkpoint::{load_checkpoint, load_checkpoint_with, save_checkpoint, CHECKPOINT_FORMAT};
pub use model::{ClassifierTerm, LossParts, RankerModel};
pub use train::{
    batch_gradient, build_examples, main_step, prepare_example, sample_negatives, train_epoch, train_ranker, BatchLoss,
    EntitySource, EntityTable, EpochStats, LabelFn, Optimizer, PreparedExample, TrainExample, Trainer,
};

use serde::{Deserialize, Serialize};

use crate::encoder::RepresentationBundle;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RankerConfig {
    pub input_dim: usize,
    pub string_layers: Vec<usize>,
    pub context_layers: Vec<usize>,
    /// Hidden widths of the final network; a scalar output layer follows.
    pub final_layers: Vec<usize>,
    pub dropout: f64,
    pub learning_rate: f64,
    pub margin: f64,
    pub n_negatives: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub rng_seed: u64,
    pub use_popularity: bool,
    /// Insert the shared layer `h_s0` on the string inputs.
    pub invariant_layer: bool,
    pub optimizer: OptimizerKind,
}

impl Default for RankerConfig {
    fn default() -> Self {
        RankerConfig {
            input_dim: crate::encoder::DEFAULT_DIM,
            string_layers: vec![512],
            context_layers: vec![512],
            final_layers: vec![512, 256],
            dropout: 0.2,
            learning_rate: 1e-4,
            margin: 0.1,
            n_negatives: 4,
            batch_size: 32,
            epochs: 50,
            rng_seed: 0,
            use_popularity: false,
            invariant_layer: false,
            optimizer: OptimizerKind::Sgd,
        }
    }
}

impl RankerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.input_dim == 0 {
            return bad("input_dim must be at least 1".into());
        }
        if self.string_layers.is_empty() || self.context_layers.is_empty() {
            return bad("string and context networks need at least one layer".into());
        }
        for (what, ws) in [
            ("string_layers", &self.string_layers),
            ("context_layers", &self.context_layers),
            ("final_layers", &self.final_layers),
        ] {
            if ws.contains(&0) {
                return bad(format!("{what} widths must be at least 1"));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.margin.is_finite() && self.margin > 0.0) {
            return bad(format!("margin {} must be positive", self.margin));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad(format!("learning_rate {} must be non-negative", self.learning_rate));
        }
        if self.n_negatives == 0 {
            return bad("n_negatives must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        Ok(())
    }
}

/// `max(0, ε − (pos − max(negs)))`.
pub fn hinge_loss(pos: f64, negs: &[f64], margin: f64) -> Result<f64> {
    let max_neg =
        negs.iter().cloned().reduce(f64::max).ok_or_else(|| Error::Invalid("hinge loss needs at least one negative".into()))?;
    Ok((margin - (pos - max_neg)).max(0.0))
}

/// Anything that scores mention–entity bundles.
pub trait Scorer: Sync {
    fn score(&self, bundle: &RepresentationBundle) -> Result<f64>;
}

impl Scorer for RankerModel {
    fn score(&self, bundle: &RepresentationBundle) -> Result<f64> {
        self.forward_score(bundle, None)
    }
}

/// Cosine similarity between the mention and entity name representations.
pub fn nn_baseline_score(bundle: &RepresentationBundle) -> Result<f64> {
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&a, &b) in bundle.m_s.iter().zip(bundle.e_s.iter()) {
        let (a, b) = (f64::from(a), f64::from(b));
        dot += a * b;
        na += a * a;
        nb += b * b;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Invalid("cosine baseline needs nonzero m_s and e_s".into()));
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, Default)]
pub struct CosineBaseline;

impl Scorer for CosineBaseline {
    fn score(&self, bundle: &RepresentationBundle) -> Result<f64> {
        nn_baseline_score(bundle)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hinge_examples() {
        assert_eq!(hinge_loss(0.9, &[-0.5, 0.1], 0.1).unwrap(), 0.0);
        assert!((hinge_loss(0.3, &[0.5, -0.2], 0.1).unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(hinge_loss(0.4, &[0.4], 0.1).unwrap(), 0.1);
        assert!(hinge_loss(0.4, &[], 0.1).is_err());
    }

    fn bundle(m: &[f32], e: &[f32]) -> RepresentationBundle {
        RepresentationBundle::new(m.to_vec(), e.to_vec(), m.to_vec(), e.to_vec(), 0.0)
    }

    #[test]
    fn cosine_examples() {
        assert!((nn_baseline_score(&bundle(&[1.0, 2.0], &[1.0, 2.0])).unwrap() - 1.0).abs() < 1e-12);
        assert!((nn_baseline_score(&bundle(&[1.0, 2.0], &[-1.0, -2.0])).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(nn_baseline_score(&bundle(&[1.0, 0.0], &[0.0, 3.0])).unwrap(), 0.0);
        assert!(nn_baseline_score(&bundle(&[0.0, 0.0], &[0.0, 3.0])).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(RankerConfig::default().validate().is_ok());
        let bad = [
            RankerConfig { dropout: 1.0, ..Default::default() },
            RankerConfig { margin: 0.0, ..Default::default() },
            RankerConfig { n_negatives: 0, ..Default::default() },
            RankerConfig { string_layers: vec![0], ..Default::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err());
        }
    }

    proptest! {
        #[test]
        fn hinge_matches_pairwise_max(pos in -1.0f64..1.0, negs in prop::collection::vec(-1.0f64..1.0, 1..10), eps in 0.01f64..1.0) {
            let mut brute = 0.0f64;
            for &n in &negs {
                brute = brute.max((eps - (pos - n)).max(0.0));
            }
            prop_assert_eq!(hinge_loss(pos, &negs, eps).unwrap(), brute);
        }
    }
}
