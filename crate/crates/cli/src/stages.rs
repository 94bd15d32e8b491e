use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use plink_core::adversarial::{
    ensure_classifier, load_pool, save_history, train_with_adversary, AdversarialConfig, UnlabeledPool,
};
use plink_core::corpus::{
    build_silver_dataset, dataset_stats, load_dataset, load_mentions, record_anchor_stats, write_jsonl, AnchoredDocument,
    Dataset, Mention, DOCUMENTS_FILE,
};
use plink_core::encoder::{EncoderAdapter, RepCache, StubEncoder};
use plink_core::eval::{evaluate as score, load_predictions, save_predictions};
use plink_core::kb::{load_kb, InvertedIndex, KnowledgeBase};
use plink_core::pipeline::{candidate_map, predict_dataset, training_examples, triage_dataset, LazyEntities};
use plink_core::ranker::{load_checkpoint, save_checkpoint, train_ranker, CosineBaseline, RankerModel, Scorer};
use plink_core::triage::{load_candidates, save_candidates};
use serde::Serialize;

use crate::config::{io_err, manifest_path, write_manifest, RunConfig};
use crate::{downsample_train, CliError};

const ENTITIES_FILE: &str = "entities.jsonl";
const ANCHORS_FILE: &str = "anchors.json";
const INDEX_FILE: &str = "index.plidx";
const HISTORY_FILE: &str = "history.jsonl";

type StageResult = Result<(), CliError>;

/// A configured input path that must exist.
fn input<'a>(path: &'a Option<PathBuf>, flag: &str, stage: &str) -> Result<&'a Path, CliError> {
    let p = path.as_deref().ok_or_else(|| CliError::Usage(format!("{stage} needs --{flag}")))?;
    if !p.exists() {
        return Err(CliError::Usage(format!("--{flag} path not found: {}", p.display())));
    }
    Ok(p)
}

fn output<'a>(path: &'a Option<PathBuf>, stage: &str) -> Result<&'a Path, CliError> {
    path.as_deref().ok_or_else(|| CliError::Usage(format!("{stage} needs --out")))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> plink_core::Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("serializable");
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

fn create_dir(dir: &Path) -> plink_core::Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn create_parent(file: &Path) -> plink_core::Result<()> {
    match file.parent().filter(|p| !p.as_os_str().is_empty()) {
        Some(p) => create_dir(p),
        None => Ok(()),
    }
}

/// Loads a KB from an entity file or a `build-kb` directory, with its index.
fn open_kb(path: &Path) -> plink_core::Result<(KnowledgeBase, InvertedIndex)> {
    if !path.is_dir() {
        let kb = load_kb(path)?;
        let index = InvertedIndex::build(&kb);
        return Ok((kb, index));
    }
    let mut kb = load_kb(&path.join(ENTITIES_FILE))?;
    let anchors = path.join(ANCHORS_FILE);
    if anchors.exists() {
        let dropped = kb.load_anchor_stats(&anchors)?;
        if dropped > 0 {
            log::warn!("{dropped} anchor targets are not in the KB");
        }
    }
    let index_path = path.join(INDEX_FILE);
    let index = if index_path.exists() { InvertedIndex::load(&index_path)? } else { InvertedIndex::build(&kb) };
    Ok((kb, index))
}

/// Gold mentions from a dataset directory or a bare mentions file.
fn open_gold(path: &Path) -> plink_core::Result<Vec<Mention>> {
    if path.is_dir() {
        Ok(load_dataset(path)?.mentions)
    } else {
        load_mentions(path)
    }
}

fn open_cache(cfg: &RunConfig, enc: &StubEncoder) -> plink_core::Result<RepCache> {
    match &cfg.paths.cache_dir {
        Some(dir) => RepCache::persistent(dir, enc.fingerprint()),
        None => Ok(RepCache::in_memory(enc.fingerprint())),
    }
}

fn candidates(
    cfg: &RunConfig,
    kb: &KnowledgeBase,
    index: &InvertedIndex,
    ds: &Dataset,
    stage: &str,
) -> Result<BTreeMap<String, Vec<String>>, CliError> {
    let sets = match &cfg.paths.candidates {
        Some(_) => load_candidates(input(&cfg.paths.candidates, "candidates", stage)?)?,
        None => triage_dataset(kb, index, ds, &cfg.triage, cfg.two_stage, cfg.exec)?,
    };
    Ok(candidate_map(&sets))
}

fn finish(
    cfg: &RunConfig,
    stage: &str,
    enc: Option<&dyn EncoderAdapter>,
    out: &Path,
    is_dir: bool,
    outputs: Vec<PathBuf>,
) -> StageResult {
    let m = cfg.manifest(stage, enc, outputs);
    write_manifest(&manifest_path(out, is_dir), &m)?;
    Ok(())
}

pub fn build_kb(cfg: &RunConfig) -> StageResult {
    cfg.validate()?;
    let src = input(&cfg.paths.kb, "kb", "build-kb")?;
    let out = output(&cfg.paths.out, "build-kb")?;
    let (mut kb, _) = open_kb(src)?;
    let mut skipped = 0;
    if cfg.paths.anchors.is_some() {
        let docs = AnchoredDocument::load_all(input(&cfg.paths.anchors, "anchors", "build-kb")?)?;
        skipped = record_anchor_stats(&mut kb, &docs)?;
    }
    let index = InvertedIndex::build(&kb);
    create_dir(out)?;
    let files = [out.join(ENTITIES_FILE), out.join(ANCHORS_FILE), out.join(INDEX_FILE)];
    kb.save_entities(&files[0])?;
    kb.save_anchor_stats(&files[1])?;
    index.save(&files[2])?;
    println!(
        "entities {}  median outlinks {}  dangling links dropped {}  anchors outside KB {skipped}",
        kb.len(),
        kb.median_outlinks(),
        kb.dangling_dropped()
    );
    finish(cfg, "build-kb", None, out, true, files.to_vec())
}

fn read_id_list(path: &Path) -> plink_core::Result<BTreeSet<String>> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
}

pub fn build_dataset(cfg: &RunConfig) -> StageResult {
    cfg.validate()?;
    let stage = "build-dataset";
    let out = output(&cfg.paths.out, stage)?;
    let mut outputs = vec![out.join(DOCUMENTS_FILE)];
    let mut ds = if cfg.paths.anchors.is_some() {
        let docs = AnchoredDocument::load_all(input(&cfg.paths.anchors, "anchors", stage)?)?;
        let (kb, _) = open_kb(input(&cfg.paths.kb, "kb", stage)?)?;
        let seeds = read_id_list(input(&cfg.paths.seed_entities, "seed-entities", stage)?)?;
        let (ds, report) = build_silver_dataset(&docs, &kb, &seeds, cfg.nil_fraction, cfg.seed)?;
        create_dir(out)?;
        let p = out.join("silver.json");
        write_json(&p, &report)?;
        outputs.push(p);
        println!(
            "pages {}  mentions {}  NIL {}  seeds skipped {}",
            report.pages_selected, report.mentions, report.nil_mentions, report.seeds_skipped
        );
        ds
    } else if cfg.paths.dataset.is_some() {
        load_dataset(input(&cfg.paths.dataset, "dataset", stage)?)?
    } else {
        return Err(CliError::Usage(format!("{stage} needs --anchors (silver data) or --dataset (downsampling)")));
    };
    if let Some(n) = cfg.downsample {
        ds = downsample_train(&ds, n, cfg.seed)?;
        println!("downsampled to {n} mentions");
    }
    ds.save(out)?;
    outputs.push(out.join(plink_core::corpus::MENTIONS_FILE));
    finish(cfg, stage, None, out, true, outputs)
}

pub fn triage(cfg: &RunConfig) -> StageResult {
    cfg.validate()?;
    let (kb, index) = open_kb(input(&cfg.paths.kb, "kb", "triage")?)?;
    let ds = load_dataset(input(&cfg.paths.dataset, "dataset", "triage")?)?;
    let out = output(&cfg.paths.out, "triage")?;
    let sets = triage_dataset(&kb, &index, &ds, &cfg.triage, cfg.two_stage, cfg.exec)?;
    create_parent(out)?;
    save_candidates(out, &sets)?;
    let empty = sets.iter().filter(|s| s.candidates.is_empty()).count();
    let covered = ds
        .mentions
        .iter()
        .zip(&sets)
        .filter(|(m, s)| m.gold.entity().is_some_and(|g| s.candidates.iter().any(|c| c.entity_id == g)))
        .count();
    let linked = ds.mentions.iter().filter(|m| !m.gold.is_nil()).count();
    println!("mentions {}  empty candidate sets {empty}  gold in candidates {covered}/{linked}", sets.len());
    finish(cfg, "triage", None, out, false, vec![out.to_path_buf()])
}

pub fn train(cfg: &RunConfig, adversarial: bool) -> StageResult {
    let stage = if adversarial { "train-adv" } else { "train" };
    let mut cfg = cfg.clone();
    if adversarial {
        cfg.ranker.invariant_layer = true;
        cfg.adversarial.get_or_insert_with(AdversarialConfig::tac_adv);
    }
    cfg.validate()?;
    let (kb, index) = open_kb(input(&cfg.paths.kb, "kb", stage)?)?;
    let ds = load_dataset(input(&cfg.paths.dataset, "dataset", stage)?)?;
    let pool_items = if adversarial { Some(load_pool(input(&cfg.paths.pool, "pool", stage)?)?) } else { None };
    let out = cfg
        .paths
        .out
        .clone()
        .or_else(|| cfg.paths.checkpoint.clone())
        .ok_or_else(|| CliError::Usage(format!("{stage} needs --out")))?;

    let enc = cfg.encoder.build()?;
    let cache = open_cache(&cfg, &enc)?;
    let cands = candidates(&cfg, &kb, &index, &ds, stage)?;
    let examples = training_examples(&enc, &cache, &kb, &ds, &cands, cfg.exec)?;
    let entities = LazyEntities::new(&enc, &cache, &kb);
    let mut model = RankerModel::init(cfg.ranker.clone(), cfg.seed)?;

    create_dir(&out)?;
    let history_path = out.join(HISTORY_FILE);
    let final_loss;
    if let Some(items) = pool_items {
        let adv = cfg.adversarial.as_ref().expect("set above");
        let pool = UnlabeledPool::encode(&enc, &cache, &items, adv, cfg.exec)?;
        model = ensure_classifier(model, adv)?;
        let history = train_with_adversary(&mut model, adv, &examples, &entities, &pool, cfg.exec)?;
        final_loss = history.last().map(|h| h.el_loss);
        save_history(&history_path, &history)?;
    } else {
        let history = train_ranker(&mut model, &examples, &entities, cfg.exec)?;
        final_loss = history.last().map(|h| h.hinge);
        write_jsonl(&history_path, &history)?;
    }
    save_checkpoint(&model, &out)?;
    cache.flush()?;
    println!(
        "trained on {} mentions for {} epochs; final ranking loss {:.6}",
        examples.len(),
        model.config().epochs,
        final_loss.unwrap_or(f64::NAN)
    );
    finish(&cfg, stage, Some(&enc), &out, true, vec![out.clone(), history_path])
}

pub fn predict(cfg: &RunConfig) -> StageResult {
    cfg.validate()?;
    let (kb, index) = open_kb(input(&cfg.paths.kb, "kb", "predict")?)?;
    let ds = load_dataset(input(&cfg.paths.dataset, "dataset", "predict")?)?;
    let out = output(&cfg.paths.out, "predict")?;
    let enc = cfg.encoder.build()?;
    let model;
    let scorer: &dyn Scorer = if cfg.baseline {
        &CosineBaseline
    } else {
        model = load_checkpoint(input(&cfg.paths.checkpoint, "checkpoint", "predict")?)?;
        if model.config().input_dim != enc.dim() {
            return Err(plink_core::Error::DimMismatch {
                what: "checkpoint input vs encoder",
                expected: enc.dim(),
                found: model.config().input_dim,
            }
            .into());
        }
        &model
    };
    let cache = open_cache(cfg, &enc)?;
    let cands = candidates(cfg, &kb, &index, &ds, "predict")?;
    let entities = LazyEntities::new(&enc, &cache, &kb);
    let preds = predict_dataset(scorer, &enc, &cache, &entities, &ds, &cands, cfg.threshold, cfg.exec)?;
    create_parent(out)?;
    save_predictions(out, &preds)?;
    cache.flush()?;
    let nil = preds.iter().filter(|p| p.predicted.is_nil()).count();
    println!("predicted {} mentions ({nil} NIL)", preds.len());
    finish(cfg, "predict", Some(&enc), out, false, vec![out.to_path_buf()])
}

pub fn evaluate(cfg: &RunConfig) -> StageResult {
    let gold_path = match cfg.paths.gold {
        Some(_) => input(&cfg.paths.gold, "gold", "evaluate")?,
        None => input(&cfg.paths.dataset, "gold", "evaluate")?,
    };
    let gold = open_gold(gold_path)?;
    let preds = load_predictions(input(&cfg.paths.pred, "pred", "evaluate")?)?;
    let report = score(&gold, &preds)?;
    print!("{}", report.to_table());
    if let Some(out) = &cfg.paths.out {
        create_parent(out)?;
        write_json(out, &report)?;
        finish(cfg, "evaluate", None, out, false, vec![out.clone()])?;
    }
    Ok(())
}

pub fn stats(cfg: &RunConfig) -> StageResult {
    let (kb, _) = open_kb(input(&cfg.paths.kb, "kb", "stats")?)?;
    let ds = load_dataset(input(&cfg.paths.dataset, "dataset", "stats")?)?;
    let s = dataset_stats(&ds, &kb)?;
    println!("{}", serde_json::to_string(&s).expect("serializable"));
    if let Some(out) = &cfg.paths.out {
        create_parent(out)?;
        write_json(out, &s)?;
        finish(cfg, "stats", None, out, false, vec![out.clone()])?;
    }
    Ok(())
}
