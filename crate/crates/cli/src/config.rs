use std::path::{Path, PathBuf};

use cwe_moe::ablate::VariantKind;
use cwe_moe::corpus::NegativeMode;
use cwe_moe::features::{EncoderConfig, DEFAULT_DIM, DEFAULT_HASH_SEED, DEFAULT_N_MAX, ENCODER_NAME};
use cwe_moe::learn::{LossSpec, ModelKind, TrainConfig, DEFAULT_HIDDEN_DIM};
use cwe_moe::moe::{
    CombineMode, InferenceSettings, MoeTrainConfig, DEFAULT_FOCAL_GAMMA, DEFAULT_K, DEFAULT_THRESHOLD,
};
use cwe_moe::taxonomy::UnknownPolicy;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const OUT_ENV: &str = "MOEVD_OUT";

/// Optimizer settings for one component. The seed comes from the run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainParams {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
}

impl Default for TrainParams {
    fn default() -> Self {
        let d = TrainConfig::default();
        TrainParams {
            epochs: d.epochs,
            batch_size: d.batch_size,
            learning_rate: d.learning_rate,
            weight_decay: d.weight_decay,
        }
    }
}

impl TrainParams {
    fn to_config(&self, seed: u64, loss: LossSpec) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            seed,
            loss,
        }
    }
}

/// Run configuration. Relative paths in a config file resolve against the
/// file's directory; after loading, every path is absolute.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub taxonomy: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub split_file: Option<PathBuf>,
    pub seed: u64,
    pub min_instances: u64,
    pub k: usize,
    pub threshold: f64,
    pub combine: CombineMode,
    pub unknown_policy: UnknownPolicy,
    pub mode: NegativeMode,
    pub workers: usize,
    pub dim: usize,
    pub n_max: usize,
    pub hash_seed: u64,
    pub expert_kind: ModelKind,
    pub router_kind: ModelKind,
    pub hidden_dim: usize,
    pub focal_gamma: f64,
    pub expert: TrainParams,
    pub router: TrainParams,
    pub variants: Vec<VariantKind>,
    pub ideal_routing: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: None,
            taxonomy: None,
            out: None,
            split_file: None,
            seed: 0,
            min_instances: 100,
            k: DEFAULT_K,
            threshold: DEFAULT_THRESHOLD,
            combine: CombineMode::default(),
            unknown_policy: UnknownPolicy::default(),
            mode: NegativeMode::default(),
            workers: 1,
            dim: DEFAULT_DIM,
            n_max: DEFAULT_N_MAX,
            hash_seed: DEFAULT_HASH_SEED,
            expert_kind: ModelKind::Linear,
            router_kind: ModelKind::Linear,
            hidden_dim: DEFAULT_HIDDEN_DIM,
            focal_gamma: DEFAULT_FOCAL_GAMMA,
            expert: TrainParams::default(),
            router: TrainParams::default(),
            variants: Vec::new(),
            ideal_routing: false,
        }
    }
}

fn absolute(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        let base = path
            .parent()
            .map(|p| absolute(&std::env::current_dir().unwrap_or_default(), p))
            .unwrap_or_default();
        cfg.rebase(&base);
        Ok(cfg)
    }

    /// Makes every relative path absolute against `base`.
    pub fn rebase(&mut self, base: &Path) {
        for p in [&mut self.dataset, &mut self.taxonomy, &mut self.out, &mut self.split_file]
            .into_iter()
            .flatten()
        {
            *p = absolute(base, p);
        }
    }

    pub fn encoder(&self) -> EncoderConfig {
        EncoderConfig {
            encoder: ENCODER_NAME.into(),
            dim: self.dim,
            n_max: self.n_max,
            hash_seed: self.hash_seed,
        }
    }

    pub fn inference(&self) -> InferenceSettings {
        InferenceSettings {
            k: self.k,
            threshold: self.threshold,
            combine: self.combine,
            unknown_policy: self.unknown_policy,
        }
    }

    pub fn train_config(&self) -> MoeTrainConfig {
        MoeTrainConfig {
            expert: self.expert.to_config(self.seed, LossSpec::binary_ce()),
            router: self.router.to_config(self.seed, LossSpec::focal(self.focal_gamma, Vec::new())),
            expert_kind: self.expert_kind,
            router_kind: self.router_kind,
            hidden_dim: self.hidden_dim,
            mode: self.mode,
            workers: self.workers,
            inference: self.inference(),
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.encoder().validate().map_err(CliError::from)?;
        let tc = self.train_config();
        tc.expert.validate().map_err(CliError::from)?;
        tc.router.validate().map_err(CliError::from)?;
        if self.workers == 0 {
            return Err(CliError::usage("workers must be at least 1"));
        }
        if self.k == 0 {
            return Err(CliError::usage("k must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(CliError::usage(format!("threshold must lie in [0, 1], got {}", self.threshold)));
        }
        if !(self.focal_gamma >= 0.0 && self.focal_gamma.is_finite()) {
            return Err(CliError::usage("focal_gamma must be non-negative"));
        }
        Ok(())
    }

    pub fn out_dir(&self) -> Result<&Path, CliError> {
        self.out
            .as_deref()
            .ok_or_else(|| CliError::usage(format!("no output directory: set `out` in the config, {OUT_ENV}, or --out")))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }
}

/// A path that must exist before the command starts.
pub fn require_file<'a>(path: Option<&'a Path>, what: &str) -> Result<&'a Path, CliError> {
    let p = path.ok_or_else(|| CliError::usage(format!("no {what} path configured")))?;
    if !p.is_file() {
        return Err(CliError::usage(format!("{what} not found: {}", p.display())));
    }
    Ok(p)
}
