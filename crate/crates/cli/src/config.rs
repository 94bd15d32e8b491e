//! Run configuration: JSON file, flag overrides, and the manifest written by
//! every stage.

use std::fs;
use std::path::{Path, PathBuf};

use plink_core::adversarial::AdversarialConfig;
use plink_core::encoder::{EncoderAdapter, StubEncoder, DEFAULT_DIM, DEFAULT_SUBWORD_LIMIT};
use plink_core::eval::DEFAULT_THRESHOLD;
use plink_core::parallel::ExecMode;
use plink_core::ranker::RankerConfig;
use plink_core::triage::TriageConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{CliError, Flags};

pub const MANIFEST_FILE: &str = "run.json";
pub const CACHE_ENV: &str = "PLINK_CACHE_DIR";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub kb: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub pool: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub candidates: Option<PathBuf>,
    pub anchors: Option<PathBuf>,
    pub seed_entities: Option<PathBuf>,
    pub gold: Option<PathBuf>,
    pub pred: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformConfig {
    pub languages: Vec<String>,
    pub shared_dims: usize,
    pub seed: u64,
}

/// Settings of the built-in stub encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub dim: usize,
    pub hash_seed: u64,
    pub subword_limit: usize,
    /// Per-component scale; `1/sqrt(dim)` when unset.
    pub token_scale: Option<f64>,
    pub token_mean: f64,
    pub transforms: Option<TransformConfig>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            dim: DEFAULT_DIM,
            hash_seed: 0,
            subword_limit: DEFAULT_SUBWORD_LIMIT,
            token_scale: None,
            token_mean: 0.25,
            transforms: None,
        }
    }
}

impl EncoderConfig {
    pub fn build(&self) -> plink_core::Result<StubEncoder> {
        let mut enc =
            StubEncoder::new(self.dim, self.hash_seed).with_subword_limit(self.subword_limit).with_token_mean(self.token_mean);
        if let Some(scale) = self.token_scale {
            enc = enc.with_scale(scale);
        }
        if let Some(t) = &self.transforms {
            let langs: Vec<&str> = t.languages.iter().map(String::as_str).collect();
            enc = enc.with_block_transforms(&langs, t.shared_dims, t.seed)?;
        }
        Ok(enc)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: Paths,
    pub encoder: EncoderConfig,
    pub ranker: RankerConfig,
    pub adversarial: Option<AdversarialConfig>,
    pub triage: TriageConfig,
    pub two_stage: bool,
    pub threshold: f64,
    pub nil_fraction: f64,
    pub downsample: Option<usize>,
    /// Score with the cosine nearest-neighbour baseline instead of a checkpoint.
    pub baseline: bool,
    pub exec: ExecMode,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            paths: Paths::default(),
            encoder: EncoderConfig::default(),
            ranker: RankerConfig::default(),
            adversarial: None,
            triage: TriageConfig::default(),
            two_stage: false,
            threshold: DEFAULT_THRESHOLD,
            nil_fraction: 0.2,
            downsample: None,
            baseline: false,
            exec: ExecMode::default(),
        }
    }
}

/// What every stage writes next to its output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub stage: String,
    pub version: String,
    pub seed: u64,
    pub config_hash: String,
    pub encoder: String,
    pub outputs: Vec<PathBuf>,
    pub config: RunConfig,
}

impl RunConfig {
    /// Reads a config file, or the `config` of a previous run's manifest.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        if !path.is_file() {
            return Err(CliError::Usage(format!("config file not found: {}", path.display())));
        }
        let bytes = fs::read(path).map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut value: serde_json::Value = serde_json::from_slice(&bytes)
            .map_err(|e| CliError::Usage(format!("config {} is not valid JSON: {e}", path.display())))?;
        if value.get("stage").is_some() {
            if let Some(inner) = value.get_mut("config") {
                value = inner.take();
            }
        }
        serde_json::from_value(value).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }

    /// Applies command-line overrides, then stage-independent fix-ups.
    pub fn apply(&mut self, f: &Flags) -> Result<(), CliError> {
        let set = |slot: &mut Option<PathBuf>, v: &Option<PathBuf>| {
            if v.is_some() {
                slot.clone_from(v);
            }
        };
        let p = &mut self.paths;
        set(&mut p.kb, &f.kb);
        set(&mut p.dataset, &f.dataset);
        set(&mut p.pool, &f.pool);
        set(&mut p.checkpoint, &f.checkpoint);
        set(&mut p.candidates, &f.candidates);
        set(&mut p.anchors, &f.anchors);
        set(&mut p.seed_entities, &f.seed_entities);
        set(&mut p.gold, &f.gold);
        set(&mut p.pred, &f.pred);
        set(&mut p.out, &f.out);
        if let Ok(dir) = std::env::var(CACHE_ENV) {
            if !dir.is_empty() {
                p.cache_dir = Some(PathBuf::from(dir));
            }
        }

        if let Some(s) = f.seed {
            self.seed = s;
        }
        if let Some(t) = f.threshold {
            self.threshold = t;
        }
        if let Some(k) = f.k {
            self.triage.k = k;
        }
        if let Some(l) = f.l {
            self.triage.l = l;
        }
        if let Some(n) = f.negatives {
            self.ranker.n_negatives = n;
        }
        if let Some(e) = f.epochs {
            self.ranker.epochs = e;
        }
        if let Some(n) = f.nil_fraction {
            self.nil_fraction = n;
        }
        if f.downsample.is_some() {
            self.downsample = f.downsample;
        }
        self.two_stage |= f.two_stage;
        self.baseline |= f.baseline;
        if f.sequential {
            self.exec = ExecMode::Sequential;
        }

        let adv_flags =
            f.preset.is_some() || f.lambda.is_some() || f.adv_stop.is_some() || f.el_epochs.is_some() || f.languages.is_some();
        if adv_flags {
            let mut adv = match &f.preset {
                Some(name) => AdversarialConfig::preset(name)?,
                None => self.adversarial.clone().unwrap_or_default(),
            };
            if let Some(l) = f.lambda {
                adv.lambda = l;
            }
            if let Some(s) = f.adv_stop {
                adv.adv_stop_epoch = Some(s);
            }
            if let Some(e) = f.el_epochs {
                adv.el_only_epochs = e;
            }
            if let Some(langs) = &f.languages {
                let parts: Vec<&str> = langs.split(',').map(str::trim).collect();
                let [a, b] = parts.as_slice() else {
                    return Err(CliError::Usage(format!("--languages expects two comma-separated codes, got `{langs}`")));
                };
                adv.languages = [a.to_string(), b.to_string()];
            }
            self.adversarial = Some(adv);
        }

        self.ranker.rng_seed = self.seed;
        Ok(())
    }

    pub fn validate(&self) -> plink_core::Result<()> {
        if self.encoder.dim == 0 || self.encoder.subword_limit == 0 {
            return Err(plink_core::Error::Config("encoder dim and subword_limit must be positive".into()));
        }
        if self.ranker.input_dim != self.encoder.dim {
            return Err(plink_core::Error::Config(format!(
                "ranker input_dim {} differs from encoder dim {}",
                self.ranker.input_dim, self.encoder.dim
            )));
        }
        if !self.threshold.is_finite() {
            return Err(plink_core::Error::Config("threshold must be finite".into()));
        }
        self.triage.validate()?;
        self.ranker.validate()?;
        if let Some(a) = &self.adversarial {
            a.validate()?;
        }
        Ok(())
    }

    /// sha256 of the canonical JSON of the effective config.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex(&Sha256::digest(&bytes))
    }

    pub fn manifest(&self, stage: &str, encoder: Option<&dyn EncoderAdapter>, outputs: Vec<PathBuf>) -> RunManifest {
        RunManifest {
            stage: stage.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: self.seed,
            config_hash: self.hash(),
            encoder: encoder.map(|e| e.fingerprint()).unwrap_or_default(),
            outputs,
            config: self.clone(),
        }
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Manifest location for an output: `<dir>/run.json` for directories,
/// `<file>.run.json` otherwise.
pub fn manifest_path(out: &Path, is_dir: bool) -> PathBuf {
    if is_dir {
        out.join(MANIFEST_FILE)
    } else {
        let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        name.push(".");
        name.push(MANIFEST_FILE);
        out.with_file_name(name)
    }
}

pub fn write_manifest(path: &Path, m: &RunManifest) -> plink_core::Result<()> {
    let mut bytes = serde_json::to_vec_pretty(m).expect("manifest serializes");
    bytes.push(b'\n');
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

pub fn io_err(path: &Path, source: std::io::Error) -> plink_core::Error {
    plink_core::Error::Io { path: path.to_path_buf(), source }
}
