//! Synthetic zero-shot transfer: baseline vs adversarial, one line per seed.
//!
//! `cargo run --release --example transfer -- [epochs] [lambda] [seeds]`
//!
//! `WORLD`, `RANKER` and `ADV` take JSON objects merged over the defaults,
//! e.g. `ADV='{"labels":"classic"}'`.

use std::time::Instant;

use plink_core::parallel::ExecMode;
use plink_core::synthetic::{
    run_transfer, transfer_adversarial_config, transfer_ranker_config, triage_coverage, SyntheticConfig, SyntheticWorld,
};
use serde::{de::DeserializeOwned, Serialize};

fn merge<T: Serialize + DeserializeOwned>(base: T, var: &str) -> T {
    let Ok(raw) = std::env::var(var) else {
        return base;
    };
    let mut v = serde_json::to_value(&base).expect("serializable config");
    let patch: serde_json::Value = serde_json::from_str(&raw).unwrap_or_else(|e| panic!("{var}: {e}"));
    for (k, x) in patch.as_object().unwrap_or_else(|| panic!("{var} must be a JSON object")) {
        v[k] = x.clone();
    }
    serde_json::from_value(v).unwrap_or_else(|e| panic!("{var}: {e}"))
}

fn main() -> plink_core::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(50);
    let lambda: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.25);
    let seeds: u64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(3);
    let cfg = merge(SyntheticConfig::default(), "WORLD");
    let mut wins = 0;
    for seed in 1..=seeds {
        let t = Instant::now();
        let world = SyntheticWorld::generate(&cfg, seed)?;
        let coverage = triage_coverage(&world)?;
        let ranker = merge(transfer_ranker_config(cfg.dim, seed, epochs), "RANKER");
        let adv_cfg = merge(transfer_adversarial_config(&cfg, lambda), "ADV");
        let base = run_transfer(&world, &ranker, &transfer_adversarial_config(&cfg, 0.0), false, ExecMode::Parallel)?;
        let adv = run_transfer(&world, &ranker, &adv_cfg, true, ExecMode::Parallel)?;
        if adv.target.recall >= base.target.recall {
            wins += 1;
        }
        println!(
            "seed {seed}: coverage {:.3}  base A {:.3} B {:.3}  adv A {:.3} B {:.3}  ({:.1}s)",
            coverage[1],
            base.source.recall,
            base.target.recall,
            adv.source.recall,
            adv.target.recall,
            t.elapsed().as_secs_f64()
        );
    }
    println!("adversarial B recall >= baseline in {wins}/{seeds} seeds");
    Ok(())
}
