//! Acceptance checks, one pass/fail line each. Exits non-zero if any fails.
//!
//! `cargo test --release -p plink-core --test acceptance`

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use plink_core::adversarial::{adversarial_step, save_history, train_with_adversary, AdversarialConfig, UnlabeledPool};
use plink_core::corpus::{write_jsonl, Link, Mention};
use plink_core::encoder::{max_pool, EntityReps, MentionReps, RepresentationBundle};
use plink_core::eval::{decide, evaluate, Prediction};
use plink_core::kb::{Entity, InvertedIndex, KnowledgeBase};
use plink_core::parallel::ExecMode;
use plink_core::ranker::nn::Group;
use plink_core::ranker::{
    hinge_loss, load_checkpoint, main_step, save_checkpoint, train_ranker, ClassifierTerm, EntityTable, Optimizer,
    PreparedExample, RankerConfig, RankerModel, TrainExample,
};
use plink_core::rng::{stream_rng, Rng};
use plink_core::synthetic::{run_transfer, transfer_adversarial_config, transfer_ranker_config, SyntheticConfig, SyntheticWorld};
use plink_core::triage::{allocate, estimate_prior, two_stage_retrieve, TriageConfig};
use rand::Rng as _;

type Outcome = Result<String, String>;
type Files = BTreeMap<String, Vec<u8>>;
type Check = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn vec32(d: usize, rng: &mut Rng) -> Vec<f32> {
    (0..d).map(|_| rng.random_range(-1.0f32..1.0)).collect()
}

fn bundle(d: usize, rng: &mut Rng) -> RepresentationBundle {
    let (a, b, c, e) = (vec32(d, rng), vec32(d, rng), vec32(d, rng), vec32(d, rng));
    RepresentationBundle::new(a, b, c, e, rng.random_range(0.0..3.0))
}

fn widths(rng: &mut Rng, max_layers: usize) -> Vec<usize> {
    (0..rng.random_range(1..=max_layers)).map(|_| rng.random_range(1..=6)).collect()
}

fn random_config(rng: &mut Rng) -> RankerConfig {
    RankerConfig {
        input_dim: rng.random_range(1..=8),
        string_layers: widths(rng, 2),
        context_layers: widths(rng, 2),
        final_layers: widths(rng, 2),
        use_popularity: rng.random_bool(0.5),
        invariant_layer: true,
        // large enough that the hinge is active and its gradient non-zero
        margin: 5.0,
        ..Default::default()
    }
}

fn rel_err(fd: f64, an: f64) -> f64 {
    (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6)
}

/// Worst relative error of `grad` against central differences of `loss`.
fn fd_worst(model: &RankerModel, grad: &[f64], loss: impl Fn(&RankerModel) -> f64) -> f64 {
    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut probe = model.clone();
    for (i, &g) in grad.iter().enumerate() {
        let x = model.parameters()[i];
        probe.parameters_mut()[i] = x + h;
        let up = loss(&probe);
        probe.parameters_mut()[i] = x - h;
        let down = loss(&probe);
        probe.parameters_mut()[i] = x;
        worst = worst.max(rel_err((up - down) / (2.0 * h), g));
    }
    worst
}

fn gradients() -> Outcome {
    let t = Instant::now();
    let configs = 24;
    let (mut worst_hinge, mut worst_cls, mut worst_text) = (0.0f64, 0.0f64, 0.0f64);
    for seed in 0..configs {
        let mut rng = stream_rng(1000 + seed, 0);
        let cfg = random_config(&mut rng);
        let d = cfg.input_dim;
        let width = rng.random_range(1..=6);
        let model =
            RankerModel::init(cfg, seed).and_then(|m| m.attach_language_classifier(width, seed)).map_err(|e| e.to_string())?;
        let pos = bundle(d, &mut rng);
        let negs: Vec<_> = (0..rng.random_range(1..=4)).map(|_| bundle(d, &mut rng)).collect();
        let n = model.num_parameters();

        // (a) hinge ranking loss
        let mut g = vec![0.0; n];
        let parts = model.example_loss_grad(&pos, &negs, None, None, Some(&mut g)).map_err(|e| e.to_string())?;
        ensure(parts.hinge > 0.0, || format!("config {seed}: hinge inactive"))?;
        let loss = |m: &RankerModel| m.example_loss_grad(&pos, &negs, None, None, None).unwrap().total();
        worst_hinge = worst_hinge.max(fd_worst(&model, &g, loss));

        // (b) λ-weighted classifier term on top of the hinge
        let lang = rng.random_range(0..2);
        let term = ClassifierTerm { lambda: rng.random_range(0.05..1.0), label: if lang == 0 { [1.0, 0.0] } else { [0.0, 1.0] } };
        let mut g = vec![0.0; n];
        model.example_loss_grad(&pos, &negs, Some(term), None, Some(&mut g)).map_err(|e| e.to_string())?;
        let loss = |m: &RankerModel| m.example_loss_grad(&pos, &negs, Some(term), None, None).unwrap().total();
        worst_cls = worst_cls.max(fd_worst(&model, &g, loss));

        // the classifier loss alone on a pool text
        let text = vec32(d, &mut rng);
        let mut g = vec![0.0; n];
        model.classifier_loss_grad(&text, &term.label, Some(&mut g)).map_err(|e| e.to_string())?;
        let loss = |m: &RankerModel| m.classifier_loss_grad(&text, &term.label, None).unwrap();
        worst_text = worst_text.max(fd_worst(&model, &g, loss));
    }
    let secs = t.elapsed().as_secs_f64();
    let summary = format!(
        "{configs} configs, worst rel err hinge {worst_hinge:.2e}, λ-classifier {worst_cls:.2e}, pool classifier {worst_text:.2e}, {secs:.1}s"
    );
    ensure(worst_hinge < 1e-4 && worst_cls < 1e-4 && worst_text < 1e-4, || summary.clone())?;
    ensure(secs < 60.0, || format!("too slow: {summary}"))?;
    Ok(summary)
}

fn oracles() -> Outcome {
    let mut rng = stream_rng(2, 0);
    for case in 0..1000 {
        let pos = rng.random_range(-1.0..1.0);
        let margin = rng.random_range(0.01..2.0);
        let negs: Vec<f64> = (0..rng.random_range(1..10)).map(|_| rng.random_range(-1.0..1.0)).collect();
        // the largest per-negative hinge
        let brute = negs.iter().map(|&n| (margin - (pos - n)).max(0.0)).fold(0.0, f64::max);
        let got = hinge_loss(pos, &negs, margin).map_err(|e| e.to_string())?;
        ensure(got.to_bits() == brute.to_bits(), || format!("hinge case {case}: {got} vs {brute}"))?;
    }
    for case in 0..1000 {
        let d = rng.random_range(1..16);
        let vs: Vec<Vec<f32>> =
            (0..rng.random_range(1..12)).map(|_| (0..d).map(|_| rng.random_range(-5.0f32..5.0)).collect()).collect();
        let mut brute = vec![f32::NEG_INFINITY; d];
        for v in &vs {
            for j in 0..d {
                if v[j] > brute[j] {
                    brute[j] = v[j];
                }
            }
        }
        let got = max_pool(vs.iter().map(Vec::as_slice)).ok_or("max_pool returned None")?;
        ensure(got.iter().zip(&brute).all(|(a, b)| a.to_bits() == b.to_bits()), || {
            format!("max pool case {case}: {got:?} vs {brute:?}")
        })?;
    }
    Ok("1000 hinge and 1000 max-pool cases bit-exact".into())
}

fn group_diff(a: &RankerModel, before: &[f64]) -> BTreeMap<Group, usize> {
    let mut out = BTreeMap::new();
    for t in a.tensors() {
        let changed = t.range().filter(|&i| a.parameters()[i].to_bits() != before[i].to_bits()).count();
        *out.entry(t.group).or_insert(0) += changed;
    }
    out
}

fn update_scope() -> Outcome {
    let d = 6;
    let mut rng = stream_rng(3, 0);
    let cfg = RankerConfig {
        input_dim: d,
        string_layers: vec![5],
        context_layers: vec![5],
        final_layers: vec![4],
        invariant_layer: true,
        margin: 5.0,
        learning_rate: 0.05,
        ..Default::default()
    };
    let mut model = RankerModel::init(cfg, 3).and_then(|m| m.attach_language_classifier(4, 3)).map_err(|e| e.to_string())?;
    let adv = AdversarialConfig { classifier_width: 4, languages: ["a".into(), "b".into()], ..AdversarialConfig::tac_adv() };
    let texts = |rng: &mut Rng| (0..8).map(|_| Arc::<[f32]>::from(vec32(d, rng))).collect::<Vec<_>>();
    let pool = UnlabeledPool::new(texts(&mut rng), texts(&mut rng));

    let before = model.parameters().to_vec();
    let mut opt = Optimizer::for_classifier(&model, 0.05);
    adversarial_step(&mut model, &adv, &pool, &mut stream_rng(3, 4), &mut opt).map_err(|e| e.to_string())?;
    let diff = group_diff(&model, &before);
    ensure(diff[&Group::Classifier] > 0, || "adversarial step left h_adv unchanged".into())?;
    for (g, n) in &diff {
        ensure(*g == Group::Classifier || *n == 0, || format!("adversarial step changed {n} {g:?} parameters"))?;
    }
    let adv_changed = diff[&Group::Classifier];

    let batch: Vec<PreparedExample> = (0..4)
        .map(|i| PreparedExample {
            key: i,
            mention_id: format!("m{i}"),
            pos: bundle(d, &mut rng),
            negs: (0..3).map(|_| bundle(d, &mut rng)).collect(),
            label: Some(adv.main_label(i as usize % 2)),
        })
        .collect();
    let before = model.parameters().to_vec();
    let mut opt = Optimizer::for_main(&model);
    main_step(&mut model, &batch, 0.25, 1, &mut opt, ExecMode::Parallel).map_err(|e| e.to_string())?;
    let diff = group_diff(&model, &before);
    ensure(diff[&Group::Classifier] == 0, || format!("main step changed {} h_adv parameters", diff[&Group::Classifier]))?;
    for g in [Group::String, Group::Context, Group::Final, Group::Invariant] {
        ensure(diff[&g] > 0, || format!("main step left {g:?} unchanged"))?;
    }
    let main_changed: usize = diff.values().sum();
    Ok(format!(
        "adversarial step moved {adv_changed} h_adv params only; main step moved {main_changed} others, h_adv bit-identical"
    ))
}

fn transfer() -> Outcome {
    let t = Instant::now();
    let cfg = SyntheticConfig::default();
    let epochs = 50;
    let mut wins = 0;
    let mut lines = Vec::new();
    for seed in 1..=3 {
        let world = SyntheticWorld::generate(&cfg, seed).map_err(|e| e.to_string())?;
        let ranker = transfer_ranker_config(cfg.dim, seed, epochs);
        let run = |lambda: f64, adversarial: bool| {
            run_transfer(&world, &ranker, &transfer_adversarial_config(&cfg, lambda), adversarial, ExecMode::Parallel)
                .map_err(|e| e.to_string())
        };
        let base = run(0.0, false)?;
        let adv = run(0.25, true)?;
        let win = adv.target.recall >= base.target.recall;
        wins += usize::from(win);
        let line = format!(
            "seed {seed}: target recall base {:.3} adv {:.3} ({}), source recall base {:.3} adv {:.3}",
            base.target.recall,
            adv.target.recall,
            if win { "win" } else { "loss" },
            base.source.recall,
            adv.source.recall
        );
        println!("    {line}");
        lines.push(line);
    }
    let secs = t.elapsed().as_secs_f64();
    let summary = format!("adversarial target recall >= baseline in {wins}/3 seeds, {secs:.0}s");
    ensure(wins >= 2, || summary.clone())?;
    ensure(secs < 600.0, || format!("too slow: {summary}"))?;
    Ok(summary)
}

fn popularity() -> Outcome {
    let mut rng = stream_rng(5, 0);
    let mut changed_on = 0;
    let cases = 50;
    for seed in 0..cases {
        let mut cfg = random_config(&mut rng);
        cfg.invariant_layer = seed % 2 == 0;
        let d = cfg.input_dim;
        let bundles: Vec<_> = (0..5).map(|_| bundle(d, &mut rng)).collect();
        let perturbed: Vec<_> = bundles.iter().map(|b| b.with_popularity(rng.random_range(0.0..50.0))).collect();
        let scores = |m: &RankerModel, bs: &[RepresentationBundle]| -> Result<Vec<u64>, String> {
            bs.iter().map(|b| m.forward_score(b, None).map(f64::to_bits).map_err(|e| e.to_string())).collect()
        };

        cfg.use_popularity = false;
        let off = RankerModel::init(cfg.clone(), seed).map_err(|e| e.to_string())?;
        ensure(scores(&off, &bundles)? == scores(&off, &perturbed)?, || {
            format!("case {seed}: popularity leaked with the feature off")
        })?;

        cfg.use_popularity = true;
        let on = RankerModel::init(cfg, seed).map_err(|e| e.to_string())?;
        if scores(&on, &bundles)? != scores(&on, &perturbed)? {
            changed_on += 1;
        }
    }
    ensure(changed_on > 0, || "no score moved with the feature on".into())?;
    Ok(format!("off: {cases}/{cases} cases bit-identical; on: scores moved in {changed_on}/{cases} cases"))
}

fn mention(id: &str, gold: Link) -> Mention {
    Mention {
        id: id.into(),
        doc_id: "d".into(),
        sentence_index: 0,
        start: 0,
        end: 1,
        surface: "x".into(),
        gold,
        mention_type: None,
        language: "en".into(),
        original_gold: None,
    }
}

fn golden() -> Outcome {
    let e = |id: &str| Link::Entity(id.into());
    let gold = vec![mention("m1", e("e1")), mention("m2", e("e1")), mention("m3", e("e2")), mention("m4", Link::Nil)];
    let pred = |id: &str, p: Link| Prediction { mention_id: id.into(), predicted: p, score: None };
    let preds = vec![pred("m1", e("e1")), pred("m2", e("e2")), pred("m3", e("e2")), pred("m4", Link::Nil)];
    let m = evaluate(&gold, &preds).map_err(|e| e.to_string())?.overall;
    let got = (m.precision, m.recall, m.mention_accuracy, m.entity_avg_precision);
    let want = (2.0 / 3.0, 2.0 / 3.0, 0.75, 0.75);
    ensure(got == want, || format!("got {got:?}, want {want:?}"))?;
    Ok("P = R = 2/3, mention accuracy 3/4, entity average precision 0.75".into())
}

fn entity(id: &str, name: &str) -> Entity {
    Entity {
        id: id.into(),
        language: "en".into(),
        name: name.into(),
        description: String::new(),
        wiki_title: None,
        outlinks: Default::default(),
    }
}

fn triage() -> Outcome {
    // priors against brute-force normalization
    let mut rng = stream_rng(7, 0);
    let mut kb = KnowledgeBase::from_entities((0..40).map(|i| entity(&format!("e{i:02}"), &format!("thing {i}"))))
        .map_err(|e| e.to_string())?;
    let mut counts: BTreeMap<String, BTreeMap<String, u64>> = BTreeMap::new();
    for s in 0..100 {
        let surface = format!("surface {s}");
        for _ in 0..rng.random_range(1..8) {
            let id = format!("e{:02}", rng.random_range(0..40));
            let c = rng.random_range(1..1000u64);
            kb.add_anchor(&surface, &id, c);
            *counts.entry(surface.clone()).or_default().entry(id).or_insert(0) += c;
        }
    }
    for (surface, targets) in &counts {
        let total: u64 = targets.values().sum();
        let mut want: Vec<(String, f64)> = targets.iter().map(|(id, &c)| (id.clone(), c as f64 / total as f64)).collect();
        want.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let got: Vec<(String, f64)> = estimate_prior(&kb, surface).into_iter().map(|c| (c.entity_id, c.prior)).collect();
        ensure(got == want, || format!("`{surface}`: {got:?} vs {want:?}"))?;
    }

    // allocation, directly and through retrieval
    ensure(allocate(&[0.8, 0.2], 10) == vec![8, 2], || format!("allocate gave {:?}", allocate(&[0.8, 0.2], 10)))?;
    let mut entities = vec![entity("a", "alpha"), entity("b", "beta")];
    for i in 0..20 {
        entities.push(entity(&format!("a{i:02}"), &format!("alpha {i}")));
        entities.push(entity(&format!("b{i:02}"), &format!("beta {i}")));
    }
    let mut kb2 = KnowledgeBase::from_entities(entities).map_err(|e| e.to_string())?;
    kb2.add_anchor("ab", "a", 8);
    kb2.add_anchor("ab", "b", 2);
    let index = InvertedIndex::build(&kb2);
    let cands = two_stage_retrieve(&kb2, &index, "ab", &TriageConfig { k: 10, l: 10 });
    let from_a = cands.iter().filter(|c| c.entity_id.starts_with('a')).count();
    let from_b = cands.iter().filter(|c| c.entity_id.starts_with('b')).count();
    ensure((from_a, from_b) == (8, 2), || format!("retrieval split ({from_a}, {from_b})"))?;

    // NIL at τ = −1 iff there are no candidates
    for case in 0..1000 {
        let n = rng.random_range(0..5);
        let scored: Vec<(String, f64)> =
            (0..n).map(|i| (format!("e{i}"), if rng.random_bool(0.2) { -1.0 } else { rng.random_range(-1.0..=1.0) })).collect();
        let p = decide("m", &scored, -1.0);
        ensure(p.predicted.is_nil() == scored.is_empty(), || format!("case {case}: {scored:?} gave {:?}", p.predicted))?;
    }
    Ok(format!(
        "{} surfaces' priors exact; allocation (8, 2) directly and via retrieval; NIL iff empty on 1000 cases",
        counts.len()
    ))
}

fn toy_training(d: usize, rng: &mut Rng) -> (Vec<TrainExample>, EntityTable) {
    let reps: BTreeMap<String, EntityReps> = (0..12)
        .map(|i| {
            let r = EntityReps { e_s: vec32(d, rng).into(), e_c: vec32(d, rng).into(), popularity: rng.random_range(0.0..3.0) };
            (format!("e{i:02}"), r)
        })
        .collect();
    let examples = (0..24)
        .map(|i| TrainExample {
            mention_id: format!("m{i:02}"),
            language: if i % 2 == 0 { "a".into() } else { "b".into() },
            mention: MentionReps { m_s: vec32(d, rng).into(), m_c: vec32(d, rng).into() },
            gold: format!("e{:02}", i % 12),
            candidates: (0..4).map(|j| format!("e{:02}", (i + j) % 12)).collect(),
        })
        .collect();
    (examples, EntityTable::new(reps))
}

fn dir_bytes(dir: &Path) -> Result<Files, String> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(|e| e.to_string())? {
        let p = entry.map_err(|e| e.to_string())?.path();
        out.insert(p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).map_err(|e| e.to_string())?);
    }
    Ok(out)
}

/// Trains once and returns the checkpoint and history files' bytes.
fn train_run(adversarial: bool, seed: u64, exec: ExecMode, root: &Path) -> Result<(Files, Vec<u8>, RankerModel), String> {
    let d = 5;
    let (examples, table) = toy_training(d, &mut stream_rng(8, 0));
    let cfg = RankerConfig {
        input_dim: d,
        string_layers: vec![4],
        context_layers: vec![4],
        final_layers: vec![3],
        batch_size: 5,
        epochs: 3,
        rng_seed: seed,
        learning_rate: 0.05,
        use_popularity: true,
        invariant_layer: adversarial,
        ..Default::default()
    };
    let mut model = RankerModel::init(cfg, seed).map_err(|e| e.to_string())?;
    let name = format!("{}-{seed}-{exec:?}", if adversarial { "adv" } else { "plain" });
    let history = root.join(format!("{name}.jsonl"));
    if adversarial {
        let adv = AdversarialConfig { classifier_width: 3, languages: ["a".into(), "b".into()], ..AdversarialConfig::tac_adv() };
        model = model.attach_language_classifier(3, seed).map_err(|e| e.to_string())?;
        let mut prng = stream_rng(9, 0);
        let texts = |rng: &mut Rng| (0..6).map(|_| Arc::<[f32]>::from(vec32(d, rng))).collect::<Vec<_>>();
        let pool = UnlabeledPool::new(texts(&mut prng), texts(&mut prng));
        let h = train_with_adversary(&mut model, &adv, &examples, &table, &pool, exec).map_err(|e| e.to_string())?;
        save_history(&history, &h).map_err(|e| e.to_string())?;
    } else {
        let h = train_ranker(&mut model, &examples, &table, exec).map_err(|e| e.to_string())?;
        write_jsonl(&history, &h).map_err(|e| e.to_string())?;
    }
    let ckpt = root.join(&name);
    save_checkpoint(&model, &ckpt).map_err(|e| e.to_string())?;
    Ok((dir_bytes(&ckpt)?, std::fs::read(&history).map_err(|e| e.to_string())?, model))
}

fn determinism() -> Outcome {
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = root.path();
    for adversarial in [false, true] {
        let what = if adversarial { "adversarial" } else { "plain" };
        let (c1, h1, model) = train_run(adversarial, 11, ExecMode::Parallel, root)?;
        let sub = root.join("again");
        std::fs::create_dir_all(&sub).map_err(|e| e.to_string())?;
        let (c2, h2, _) = train_run(adversarial, 11, ExecMode::Parallel, &sub)?;
        ensure(c1 == c2, || format!("{what}: checkpoints differ between identical runs"))?;
        ensure(h1 == h2, || format!("{what}: histories differ between identical runs"))?;
        let seq = root.join("seq");
        std::fs::create_dir_all(&seq).map_err(|e| e.to_string())?;
        let (c3, h3, _) = train_run(adversarial, 11, ExecMode::Sequential, &seq)?;
        ensure(c1 == c3 && h1 == h3, || format!("{what}: sequential and parallel runs differ"))?;
        let (c4, _, _) = train_run(adversarial, 12, ExecMode::Parallel, root)?;
        ensure(c1 != c4, || format!("{what}: a different seed gave the same checkpoint"))?;

        let loaded = load_checkpoint(&root.join(format!("{}-11-Parallel", if adversarial { "adv" } else { "plain" })))
            .map_err(|e| e.to_string())?;
        let mut rng = stream_rng(13, 0);
        for _ in 0..200 {
            let b = bundle(5, &mut rng);
            let (x, y) = (
                model.forward_score(&b, None).map_err(|e| e.to_string())?,
                loaded.forward_score(&b, None).map_err(|e| e.to_string())?,
            );
            ensure(x.to_bits() == y.to_bits(), || format!("{what}: score {x} became {y} after reload"))?;
        }
    }
    Ok("byte-identical checkpoints and histories (parallel, sequential, plain, adversarial); reload keeps 200 scores bit-exact"
        .into())
}

fn main() {
    let checks: [Check; 8] = [
        ("1 gradient correctness", gradients),
        ("2 loss and pooling oracles", oracles),
        ("3 update-scope separation", update_scope),
        ("4 synthetic zero-shot transfer", transfer),
        ("5 popularity plumbing", popularity),
        ("6 scorer golden fixture", golden),
        ("7 triage exactness", triage),
        ("8 determinism and persistence", determinism),
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, check) in checks {
        if !only.is_empty() && !only.iter().any(|o| name.starts_with(o.as_str())) {
            continue;
        }
        match check() {
            Ok(detail) => println!("[PASS] {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("[FAIL] {name}: {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance check(s) failed");
        std::process::exit(1);
    }
}
