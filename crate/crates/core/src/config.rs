//! Run configuration file (TOML).
//!
//! Every section is optional and falls back to the benchmark defaults;
//! unknown keys are rejected. `G = inf` is written as the string `"inf"`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::exact_filter::dataset::{DatasetSpec, DEFAULT_MAX_ATTEMPTS};
use crate::exact_filter::{DdBins, GridSpec};
use crate::inference::{GlobalInterval, GlobalPool};
use crate::metrics::EvalConfig;
use crate::scoring::{ScoreKind, DEFAULT_SIGMA_BG};
use crate::world_model::WorldModelParams;
use crate::{Error, Result};

/// Environment variable overriding `dataset.root_seed`.
pub const SEED_ENV: &str = "EVITRACK_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub per_bin: usize,
    pub tau: f64,
    pub root_seed: u64,
    pub max_attempts: u64,
    pub bins: DdBins,
    pub dir: PathBuf,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            per_bin: 100,
            tau: 0.8,
            root_seed: 0,
            max_attempts: DEFAULT_MAX_ATTEMPTS,
            bins: DdBins::default(),
            dir: PathBuf::from("data"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceSection {
    pub sigma_bg: f64,
    pub ess_threshold_fraction: f64,
    pub global_pool: GlobalPool,
}

impl Default for InferenceSection {
    fn default() -> Self {
        Self {
            sigma_bg: DEFAULT_SIGMA_BG,
            ess_threshold_fraction: 0.5,
            global_pool: GlobalPool::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MainSection {
    pub kind: String,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "C")]
    pub c: usize,
    #[serde(rename = "G")]
    pub g: GlobalInterval,
    /// Particle count of the SIS and BPF baselines.
    pub baseline_n: usize,
}

impl Default for MainSection {
    fn default() -> Self {
        Self {
            kind: "J".into(),
            k: 32,
            c: 2,
            g: GlobalInterval::Never,
            baseline_n: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    /// Score kind of the G, C and K sweeps.
    pub kind: String,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "C")]
    pub c: usize,
    /// Total budget `K * C` of the C sweep.
    pub budget: usize,
    pub kinds: Vec<String>,
    pub g_values: Vec<GlobalInterval>,
    pub c_values: Vec<usize>,
    pub k_values: Vec<usize>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            kind: "J".into(),
            k: 32,
            c: 2,
            budget: 64,
            kinds: vec!["J".into(), "E".into(), "TBD".into()],
            g_values: [1, 5, 10, 20]
                .into_iter()
                .map(GlobalInterval::Every)
                .chain([GlobalInterval::Never])
                .collect(),
            c_values: vec![2, 4, 8, 16, 32],
            k_values: vec![2, 4, 8, 16, 32, 64],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    pub horizons: Vec<usize>,
    #[serde(rename = "M")]
    pub m: usize,
    pub seeds: Vec<u64>,
    /// Half-width of the window aligned on `t_DD`.
    pub window: usize,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self {
            horizons: vec![1, 5, 10],
            m: 20,
            seeds: vec![0, 1, 2],
            window: 20,
        }
    }
}

impl EvaluationSection {
    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            horizons: self.horizons.clone(),
            m: self.m,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// Also write the per-record file that `summarize` re-aggregates.
    pub records: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("results"),
            records: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub world: WorldModelParams,
    pub grid: GridSpec,
    pub dataset: DatasetSection,
    pub inference: InferenceSection,
    pub main: MainSection,
    pub sweeps: SweepSection,
    pub evaluation: EvaluationSection,
    pub output: OutputSection,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Load, apply `EVITRACK_SEED` if set, and validate. Relative
    /// directories are resolved against the config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if let Some(base) = path.parent() {
            cfg.dataset.dir = base.join(&cfg.dataset.dir);
            cfg.output.dir = base.join(&cfg.output.dir);
        }
        cfg.apply_env()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.dataset.root_seed = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?;
        }
        Ok(())
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset_spec().validate()?;
        ScoreKind::Tbd {
            sigma_bg: self.inference.sigma_bg,
        }
        .validate()?;
        let frac = self.inference.ess_threshold_fraction;
        if !(frac > 0.0 && frac <= 1.0) {
            return Err(Error::Config(format!("ess_threshold_fraction must lie in (0, 1], got {frac}")));
        }
        self.score_kind(&self.main.kind)?;
        self.score_kind(&self.sweeps.kind)?;
        for k in &self.sweeps.kinds {
            self.score_kind(k)?;
        }
        if self.main.k == 0 || self.main.c == 0 || self.main.baseline_n == 0 {
            return Err(Error::Config("main: K, C and baseline_n must be >= 1".into()));
        }
        if self.sweeps.k == 0 || self.sweeps.c == 0 {
            return Err(Error::Config("sweeps: K and C must be >= 1".into()));
        }
        for &c in &self.sweeps.c_values {
            if c == 0 || !self.sweeps.budget.is_multiple_of(c) {
                return Err(Error::Config(format!(
                    "sweeps: C = {c} does not divide the budget {}",
                    self.sweeps.budget
                )));
            }
        }
        if self.sweeps.k_values.contains(&0) {
            return Err(Error::Config("sweeps: K values must be >= 1".into()));
        }
        self.evaluation.eval_config().validate()?;
        if self.evaluation.seeds.is_empty() {
            return Err(Error::Config("evaluation: need at least one seed".into()));
        }
        Ok(())
    }

    pub fn score_kind(&self, tag: &str) -> Result<ScoreKind> {
        ScoreKind::from_tag(tag, self.inference.sigma_bg)
    }

    pub fn dataset_spec(&self) -> DatasetSpec {
        DatasetSpec {
            params: self.world,
            grid: self.grid,
            bins: self.dataset.bins,
            tau: self.dataset.tau,
            per_bin: self.dataset.per_bin,
            root_seed: self.dataset.root_seed,
            max_attempts: self.dataset.max_attempts,
        }
    }
}
