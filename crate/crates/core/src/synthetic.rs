//! Synthetic two-language linking world for transfer experiments.
//!
//! Both languages share one set of latent concept tokens and mirror the same
//! KB structure; they differ only through the stub encoder's per-language
//! block rotations. Names are two concept tokens, descriptions add topic
//! tokens, and mention contexts mix topic tokens with noise.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::adversarial::{ensure_classifier, train_with_adversary, AdversarialConfig, PoolItem, TextKind, UnlabeledPool};
use crate::corpus::{Dataset, Document, Link, Mention, Split};
use crate::encoder::{EncoderAdapter, RepCache, StubEncoder};
use crate::error::Result;
use crate::eval::{evaluate, Metrics};
use crate::kb::InvertedIndex;
use crate::kb::{Entity, KnowledgeBase};
use crate::parallel::ExecMode;
use crate::pipeline::{candidate_map, entity_table, pool_from_kb, predict_dataset, training_examples, triage_dataset};
use crate::ranker::{train_ranker, OptimizerKind, RankerConfig, RankerModel};
use crate::rng::{keyed_rng, stream};
use crate::triage::TriageConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n_concepts: usize,
    pub n_entities: usize,
    pub n_mentions: usize,
    pub n_noise: usize,
    pub dim: usize,
    /// Leading encoder dimensions left unrotated by the language transforms.
    pub shared_dims: usize,
    pub description_topics: usize,
    pub context_topics: usize,
    pub context_noise: usize,
    /// Fraction of mentions whose surface is a single name token.
    pub partial_surface_rate: f64,
    /// Extra full-name anchor targets per entity, drawn among entities
    /// sharing a name token.
    pub confusers: usize,
    pub languages: [String; 2],
    pub encoder_seed: u64,
    /// Per-component scale of the stub encoder's subword vectors.
    pub token_scale: f64,
    pub token_mean: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_concepts: 200,
            n_entities: 2000,
            n_mentions: 1000,
            n_noise: 300,
            dim: 32,
            shared_dims: 16,
            description_topics: 6,
            context_topics: 2,
            context_noise: 6,
            partial_surface_rate: 0.4,
            confusers: 6,
            languages: ["A".into(), "B".into()],
            encoder_seed: 17,
            token_scale: 1.0,
            token_mean: 0.0,
        }
    }
}

pub struct SyntheticLanguage {
    pub kb: KnowledgeBase,
    pub index: InvertedIndex,
    pub dataset: Dataset,
}

pub struct SyntheticWorld {
    pub config: SyntheticConfig,
    pub encoder: StubEncoder,
    pub languages: [SyntheticLanguage; 2],
}

fn concept(c: usize) -> String {
    format!("c{c}")
}

fn noise(j: usize) -> String {
    format!("n{j}")
}

struct Blueprint {
    names: Vec<(usize, usize)>,
    topics: Vec<Vec<usize>>,
    outlinks: Vec<Vec<usize>>,
    /// (surface, entity, count) anchor records.
    anchors: Vec<(String, usize, u64)>,
}

struct MentionPlan {
    gold: usize,
    partial: Option<usize>,
    sentence: Vec<String>,
    position: usize,
    pre: Vec<String>,
}

fn name_of(names: &[(usize, usize)], i: usize) -> String {
    format!("{} {}", concept(names[i].0), concept(names[i].1))
}

fn blueprint(cfg: &SyntheticConfig, seed: u64) -> Blueprint {
    let mut rng = keyed_rng(seed, stream::SYNTHETIC, &[0]);
    let mut pairs = BTreeSet::new();
    let mut names = Vec::with_capacity(cfg.n_entities);
    while names.len() < cfg.n_entities {
        let a = rng.random_range(0..cfg.n_concepts);
        let b = rng.random_range(0..cfg.n_concepts);
        if a != b && pairs.insert((a, b)) {
            names.push((a, b));
        }
    }
    let topics: Vec<Vec<usize>> =
        (0..cfg.n_entities).map(|_| (0..cfg.description_topics).map(|_| rng.random_range(0..cfg.n_concepts)).collect()).collect();
    let outlinks: Vec<Vec<usize>> = (0..cfg.n_entities)
        .map(|_| {
            let n = rng.random_range(0..12usize);
            (0..n).map(|_| rng.random_range(0..cfg.n_entities)).collect()
        })
        .collect();
    let mut by_token: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &(a, b)) in names.iter().enumerate() {
        by_token.entry(a).or_default().push(i);
        by_token.entry(b).or_default().push(i);
    }
    let mut anchors = Vec::new();
    for (i, &(a, b)) in names.iter().enumerate() {
        let full = name_of(&names, i);
        anchors.push((full.clone(), i, rng.random_range(5..50u64)));
        // anchors with the full name that point at entities sharing a token
        let mut sharing: Vec<usize> = by_token[&a].iter().chain(&by_token[&b]).copied().filter(|&j| j != i).collect();
        sharing.sort_unstable();
        sharing.dedup();
        for &j in sharing.choose_multiple(&mut rng, cfg.confusers) {
            anchors.push((full.clone(), j, rng.random_range(1..40u64)));
        }
        anchors.push((concept(a), i, rng.random_range(1..10u64)));
        anchors.push((concept(b), i, rng.random_range(1..10u64)));
    }
    Blueprint { names, topics, outlinks, anchors }
}

fn plan_mentions(cfg: &SyntheticConfig, bp: &Blueprint, seed: u64, lang_index: usize) -> Vec<MentionPlan> {
    let mut rng = keyed_rng(seed, stream::SYNTHETIC, &[1 + lang_index as u64]);
    (0..cfg.n_mentions)
        .map(|_| {
            let gold = rng.random_range(0..cfg.n_entities);
            let partial = (rng.random::<f64>() < cfg.partial_surface_rate).then(|| rng.random_range(0..2usize));
            let mut sentence: Vec<String> =
                bp.topics[gold].choose_multiple(&mut rng, cfg.context_topics).map(|&c| concept(c)).collect();
            sentence.extend((0..cfg.context_noise).map(|_| noise(rng.random_range(0..cfg.n_noise))));
            sentence.shuffle(&mut rng);
            let position = rng.random_range(0..=sentence.len());
            let pre: Vec<String> = (0..rng.random_range(0..3usize)).map(|_| noise(rng.random_range(0..cfg.n_noise))).collect();
            MentionPlan { gold, partial, sentence, position, pre }
        })
        .collect()
}

fn entity_id(lang: &str, i: usize) -> String {
    format!("{lang}:e{i:05}")
}

fn build_language(cfg: &SyntheticConfig, bp: &Blueprint, plans: &[MentionPlan], lang: &str) -> Result<SyntheticLanguage> {
    let entities: Vec<Entity> = (0..cfg.n_entities)
        .map(|i| {
            let (a, b) = bp.names[i];
            let mut desc = vec![concept(a), concept(b)];
            desc.extend(bp.topics[i].iter().map(|&c| concept(c)));
            Entity {
                id: entity_id(lang, i),
                language: lang.to_string(),
                name: format!("{} {}", concept(a), concept(b)),
                description: desc.join(" "),
                wiki_title: None,
                outlinks: bp.outlinks[i].iter().filter(|&&j| j != i).map(|&j| entity_id(lang, j)).collect(),
            }
        })
        .collect();
    let mut kb = KnowledgeBase::from_entities(entities)?;
    for (surface, i, count) in &bp.anchors {
        kb.add_anchor(surface, &entity_id(lang, *i), *count);
    }
    let index = InvertedIndex::build(&kb);

    let mut docs = Vec::new();
    let mut mentions = Vec::new();
    for (j, m) in plans.iter().enumerate() {
        let (a, b) = bp.names[m.gold];
        let surface = match m.partial {
            None => format!("{} {}", concept(a), concept(b)),
            Some(0) => concept(a),
            Some(_) => concept(b),
        };
        let mut words = m.sentence.clone();
        words.insert(m.position, surface.clone());
        let before: usize = words[..m.position].iter().map(|w| w.chars().count() + 1).sum();
        let text = words.join(" ");
        let doc_id = format!("{lang}:d{j:05}");
        let mut sentences = Vec::new();
        if !m.pre.is_empty() {
            sentences.push(m.pre.join(" "));
        }
        let sentence_index = sentences.len();
        sentences.push(text);
        docs.push(Document { id: doc_id.clone(), language: lang.to_string(), sentences });
        mentions.push(Mention {
            id: format!("{lang}:m{j:05}"),
            doc_id,
            sentence_index,
            start: before,
            end: before + surface.chars().count(),
            surface,
            gold: Link::Entity(entity_id(lang, m.gold)),
            mention_type: None,
            language: lang.to_string(),
            original_gold: None,
        });
    }
    let dataset = Dataset::new(docs, mentions, Split::Train)?;
    Ok(SyntheticLanguage { kb, index, dataset })
}

impl SyntheticWorld {
    pub fn generate(cfg: &SyntheticConfig, seed: u64) -> Result<Self> {
        let bp = blueprint(cfg, seed);
        let langs: Vec<&str> = cfg.languages.iter().map(String::as_str).collect();
        let encoder = StubEncoder::new(cfg.dim, cfg.encoder_seed)
            .with_scale(cfg.token_scale)
            .with_token_mean(cfg.token_mean)
            .with_block_transforms(&langs, cfg.shared_dims, seed)?;
        let a = build_language(cfg, &bp, &plan_mentions(cfg, &bp, seed, 0), &cfg.languages[0])?;
        let b = build_language(cfg, &bp, &plan_mentions(cfg, &bp, seed, 1), &cfg.languages[1])?;
        Ok(SyntheticWorld { config: cfg.clone(), encoder, languages: [a, b] })
    }

    pub fn pool(&self, kind: TextKind) -> Vec<PoolItem> {
        self.languages.iter().flat_map(|l| pool_from_kb(&l.kb, kind)).collect()
    }
}

/// Outcome of training on the source language and evaluating on both.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransferResult {
    pub seed: u64,
    pub adversarial: bool,
    pub source: Metrics,
    pub target: Metrics,
    pub final_loss: f64,
}

pub fn transfer_ranker_config(dim: usize, seed: u64, epochs: usize) -> RankerConfig {
    RankerConfig {
        input_dim: dim,
        string_layers: vec![32],
        context_layers: vec![32],
        final_layers: vec![32],
        // with dropout the max over noisy negatives drives this small
        // ranker to a constant score
        dropout: 0.0,
        learning_rate: 1e-3,
        optimizer: OptimizerKind::Adam,
        margin: 0.1,
        n_negatives: 4,
        batch_size: 16,
        epochs,
        rng_seed: seed,
        use_popularity: false,
        invariant_layer: true,
    }
}

/// Trains on language 0 (with or without the adversary) and evaluates on
/// both languages with τ = −1.
pub fn run_transfer(
    world: &SyntheticWorld,
    ranker: &RankerConfig,
    adv: &AdversarialConfig,
    adversarial: bool,
    exec: ExecMode,
) -> Result<TransferResult> {
    let enc = &world.encoder;
    let cache = RepCache::in_memory(enc.fingerprint());
    let triage = TriageConfig::default();
    let mut eval_data = Vec::new();
    for lang in &world.languages {
        let sets = triage_dataset(&lang.kb, &lang.index, &lang.dataset, &triage, false, exec)?;
        let table = entity_table(enc, &cache, &lang.kb, exec)?;
        eval_data.push((candidate_map(&sets), table));
    }
    let src = &world.languages[0];
    let examples = training_examples(enc, &cache, &src.kb, &src.dataset, &eval_data[0].0, exec)?;

    let seed = ranker.rng_seed;
    let mut model = RankerModel::init(ranker.clone(), seed)?;
    let final_loss = if adversarial {
        let items = world.pool(adv.adv_text_kind);
        let pool = UnlabeledPool::encode(enc, &cache, &items, adv, exec)?;
        model = ensure_classifier(model, adv)?;
        let h = train_with_adversary(&mut model, adv, &examples, &eval_data[0].1, &pool, exec)?;
        h.last().map_or(0.0, |e| e.el_loss)
    } else {
        let h = train_ranker(&mut model, &examples, &eval_data[0].1, exec)?;
        h.last().map_or(0.0, |e| e.hinge)
    };
    let mut metrics = Vec::new();
    for (lang, (cands, table)) in world.languages.iter().zip(&eval_data) {
        let preds = predict_dataset(&model, enc, &cache, table, &lang.dataset, cands, -1.0, exec)?;
        metrics.push(evaluate(&lang.dataset.mentions, &preds)?.overall);
    }
    let target = metrics.pop().unwrap();
    let source = metrics.pop().unwrap();
    Ok(TransferResult { seed, adversarial, source, target, final_loss })
}

/// Per-language adversarial config for the synthetic languages.
pub fn transfer_adversarial_config(cfg: &SyntheticConfig, lambda: f64) -> AdversarialConfig {
    AdversarialConfig {
        lambda,
        y: 5,
        classifier_width: 32,
        languages: cfg.languages.clone(),
        adv_text_kind: TextKind::Name,
        ..AdversarialConfig::tac_adv()
    }
}

/// Gold-in-candidates rate per language, useful for reading recall numbers.
pub fn triage_coverage(world: &SyntheticWorld) -> Result<[f64; 2]> {
    let mut out = [0.0; 2];
    for (k, lang) in world.languages.iter().enumerate() {
        let sets = triage_dataset(&lang.kb, &lang.index, &lang.dataset, &TriageConfig::default(), false, ExecMode::Parallel)?;
        let map: BTreeMap<String, Vec<String>> = candidate_map(&sets);
        let hit =
            lang.dataset.mentions.iter().filter(|m| m.gold.entity().is_some_and(|g| map[&m.id].iter().any(|c| c == g))).count();
        out[k] = hit as f64 / lang.dataset.mentions.len() as f64;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticConfig {
        SyntheticConfig { n_concepts: 30, n_entities: 60, n_mentions: 40, dim: 8, shared_dims: 4, ..Default::default() }
    }

    #[test]
    fn worlds_are_mirrored_and_deterministic() {
        let w = SyntheticWorld::generate(&small(), 3).unwrap();
        let [a, b] = &w.languages;
        assert_eq!(a.kb.len(), 60);
        assert_eq!(a.dataset.len(), 40);
        for (ea, eb) in a.kb.entities().zip(b.kb.entities()) {
            assert_eq!(ea.name, eb.name);
            assert_eq!(ea.outlinks.len(), eb.outlinks.len());
        }
        assert_eq!(a.kb.median_outlinks(), b.kb.median_outlinks());
        let w2 = SyntheticWorld::generate(&small(), 3).unwrap();
        assert_eq!(w2.languages[0].dataset, w.languages[0].dataset);
    }

    #[test]
    fn languages_differ_only_by_rotation() {
        let w = SyntheticWorld::generate(&small(), 3).unwrap();
        let subs = w.encoder.tokenize("c1 c2", "A");
        let va = w.encoder.encode(&subs, "A");
        let vb = w.encoder.encode(&subs, "B");
        let norm = |v: &[f32]| v.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
        assert_ne!(va, vb);
        for (x, y) in va.iter().zip(&vb) {
            assert!((norm(x) - norm(y)).abs() < 1e-6);
            assert_eq!(x[..4], y[..4]);
        }
    }

    #[test]
    fn transfer_run_smoke() {
        let cfg = small();
        let w = SyntheticWorld::generate(&cfg, 1).unwrap();
        let r = transfer_ranker_config(cfg.dim, 1, 2);
        let adv = transfer_adversarial_config(&cfg, 0.25);
        let res = run_transfer(&w, &r, &adv, true, ExecMode::Parallel).unwrap();
        assert!((0.0..=1.0).contains(&res.target.recall));
        assert_eq!(res.target.counts.n_mentions, 40);
    }
}
