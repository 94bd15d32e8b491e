//! End-to-end runs over a small synthetic world: triage, training, prediction
//! and scoring through the public API.

use plink_core::adversarial::{ensure_classifier, train_with_adversary, UnlabeledPool};
use plink_core::encoder::{EncoderAdapter, RepCache};
use plink_core::eval::evaluate;
use plink_core::parallel::ExecMode;
use plink_core::pipeline::{candidate_map, entity_table, predict_dataset, training_examples, triage_dataset};
use plink_core::ranker::{load_checkpoint, save_checkpoint, train_ranker, CosineBaseline, RankerModel};
use plink_core::synthetic::{
    run_transfer, transfer_adversarial_config, transfer_ranker_config, triage_coverage, SyntheticConfig, SyntheticWorld,
};
use plink_core::triage::TriageConfig;

fn small() -> SyntheticConfig {
    SyntheticConfig { n_concepts: 40, n_entities: 200, n_mentions: 120, n_noise: 40, ..Default::default() }
}

#[test]
fn world_is_reproducible_and_covered_by_triage() {
    let a = SyntheticWorld::generate(&small(), 4).unwrap();
    let b = SyntheticWorld::generate(&small(), 4).unwrap();
    for (x, y) in a.languages.iter().zip(&b.languages) {
        assert_eq!(x.dataset.mentions, y.dataset.mentions);
        assert_eq!(x.kb.len(), 200);
        assert_eq!(x.dataset.len(), 120);
    }
    let cov = triage_coverage(&a).unwrap();
    assert!(cov.iter().all(|&c| c > 0.5), "{cov:?}");
}

#[test]
fn train_predict_evaluate_on_source_language() {
    let world = SyntheticWorld::generate(&small(), 2).unwrap();
    let enc = &world.encoder;
    let cache = RepCache::in_memory(enc.fingerprint());
    let lang = &world.languages[0];
    let sets = triage_dataset(&lang.kb, &lang.index, &lang.dataset, &TriageConfig::default(), false, ExecMode::Parallel).unwrap();
    let cands = candidate_map(&sets);
    let table = entity_table(enc, &cache, &lang.kb, ExecMode::Parallel).unwrap();
    let examples = training_examples(enc, &cache, &lang.kb, &lang.dataset, &cands, ExecMode::Parallel).unwrap();

    let mut model = RankerModel::init(transfer_ranker_config(small().dim, 2, 15), 2).unwrap();
    let history = train_ranker(&mut model, &examples, &table, ExecMode::Parallel).unwrap();
    assert_eq!(history.len(), 15);
    assert!(history.last().unwrap().hinge < history[0].hinge, "{history:?}");

    let predict = |exec| predict_dataset(&model, enc, &cache, &table, &lang.dataset, &cands, -1.0, exec).unwrap();
    let preds = predict(ExecMode::Parallel);
    assert_eq!(preds, predict(ExecMode::Sequential));
    let trained = evaluate(&lang.dataset.mentions, &preds).unwrap().overall;
    let base = predict_dataset(&CosineBaseline, enc, &cache, &table, &lang.dataset, &cands, -1.0, ExecMode::Parallel).unwrap();
    let baseline = evaluate(&lang.dataset.mentions, &base).unwrap().overall;
    assert!(trained.recall > baseline.recall, "trained {} vs cosine {}", trained.recall, baseline.recall);

    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(&model, dir.path()).unwrap();
    let loaded = load_checkpoint(dir.path()).unwrap();
    let again = predict_dataset(&loaded, enc, &cache, &table, &lang.dataset, &cands, -1.0, ExecMode::Parallel).unwrap();
    assert_eq!(preds, again);
}

#[test]
fn adversarial_training_runs_on_both_languages() {
    let cfg = small();
    let world = SyntheticWorld::generate(&cfg, 3).unwrap();
    let enc = &world.encoder;
    let cache = RepCache::in_memory(enc.fingerprint());
    let adv = transfer_adversarial_config(&cfg, 0.25);
    let lang = &world.languages[0];
    let sets = triage_dataset(&lang.kb, &lang.index, &lang.dataset, &TriageConfig::default(), false, ExecMode::Parallel).unwrap();
    let table = entity_table(enc, &cache, &lang.kb, ExecMode::Parallel).unwrap();
    let examples = training_examples(enc, &cache, &lang.kb, &lang.dataset, &candidate_map(&sets), ExecMode::Parallel).unwrap();
    let pool = UnlabeledPool::encode(enc, &cache, &world.pool(adv.adv_text_kind), &adv, ExecMode::Parallel).unwrap();
    assert!(pool.reps.iter().all(|r| !r.is_empty()));

    let model = RankerModel::init(transfer_ranker_config(cfg.dim, 3, 4), 3).unwrap();
    let mut model = ensure_classifier(model, &adv).unwrap();
    let history = train_with_adversary(&mut model, &adv, &examples, &table, &pool, ExecMode::Parallel).unwrap();
    assert_eq!(history.len(), 4);
    assert!(history.iter().all(|h| h.adv_loss.is_some() && h.el_loss.is_finite()));
}

#[test]
fn transfer_result_is_deterministic() {
    let cfg = small();
    let world = SyntheticWorld::generate(&cfg, 5).unwrap();
    let ranker = transfer_ranker_config(cfg.dim, 5, 3);
    let adv = transfer_adversarial_config(&cfg, 0.25);
    let a = run_transfer(&world, &ranker, &adv, true, ExecMode::Parallel).unwrap();
    let b = run_transfer(&world, &ranker, &adv, true, ExecMode::Sequential).unwrap();
    assert_eq!(a.target.recall.to_bits(), b.target.recall.to_bits());
    assert_eq!(a.final_loss.to_bits(), b.final_loss.to_bits());
}
