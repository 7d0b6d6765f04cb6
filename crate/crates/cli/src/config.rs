//! The JSON run configuration shared by every subcommand.
//!
//! Every section is optional and falls back to the synthetic-study
//! defaults. Serializing a parsed config yields the canonical form: fields in
//! declaration order, defaults filled in, two-space indentation.

use std::fs;
use std::path::{Path, PathBuf};

use reactor_grid::domain::{make_default_layout, make_real_layout, ReactorParams, SensorLayout};
use reactor_grid::evaluation::Perturbation;
use reactor_grid::simulator::{Scenario, SolverOptions};
use reactor_grid::training::{LossConfig, Phase, TrainSchedule, Variant};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Environment variable that overrides `out_dir`.
pub const OUT_ENV: &str = "REACTOR_GRID_OUT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    /// Reactor constants file; the shipped canonical set when absent.
    #[serde(default)]
    pub params: Option<PathBuf>,
    #[serde(default)]
    pub simulate: SimulateConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub evaluate: EvaluateConfig,
    #[serde(default)]
    pub reconstruct: ReconstructConfig,
    #[serde(default)]
    pub sensitivity: SensitivityConfig,
}

fn default_out() -> PathBuf {
    PathBuf::from("runs")
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("every field has a default")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    #[serde(default = "default_train_seed")]
    pub train_seed: u64,
    #[serde(default = "default_test_seed")]
    pub test_seed: u64,
    /// Explicit scenario list; the training cycle plus the five tests when
    /// absent.
    #[serde(default)]
    pub scenarios: Option<Vec<Scenario>>,
    #[serde(default = "default_refinement")]
    pub refinement: usize,
}

fn default_train_seed() -> u64 {
    1
}
fn default_test_seed() -> u64 {
    2
}
fn default_refinement() -> usize {
    SolverOptions::default().refinement
}

impl Default for SimulateConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("every field has a default")
    }
}

impl SimulateConfig {
    pub fn scenarios(&self) -> Vec<Scenario> {
        self.scenarios
            .clone()
            .unwrap_or_else(|| Scenario::standard_set(self.train_seed, self.test_seed))
    }
}

/// A named layout (`default` or `real`) or explicit level lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LayoutConfig {
    Named(String),
    Explicit {
        train: Vec<usize>,
        val1: Vec<usize>,
        val2: Vec<usize>,
        #[serde(default)]
        shared: Vec<usize>,
    },
}

impl Default for LayoutConfig {
    fn default() -> Self {
        LayoutConfig::Named("default".into())
    }
}

impl LayoutConfig {
    pub fn resolve(&self, n_z: usize) -> Result<SensorLayout, CliError> {
        let layout = match self {
            LayoutConfig::Named(n) if n == "default" => make_default_layout(n_z)?,
            LayoutConfig::Named(n) if n == "real" => make_real_layout(),
            LayoutConfig::Named(n) => {
                return Err(CliError::Config(format!("layout: unknown name {n:?} (expected default or real)")))
            }
            LayoutConfig::Explicit { train, val1, val2, shared } => SensorLayout {
                name: "explicit".into(),
                train: train.clone(),
                val1: val1.clone(),
                val2: val2.clone(),
                split_names: ["Train".into(), "Valid. set 1".into(), "Valid. set 2".into()],
                shared: shared.clone(),
            },
        };
        layout.validate(n_z)?;
        Ok(layout)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_variant")]
    pub variant: Variant,
    /// Dataset directory name under `<out_dir>/datasets`.
    #[serde(default = "default_dataset")]
    pub dataset: String,
    #[serde(default)]
    pub layout: LayoutConfig,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Overrides of the variant defaults.
    #[serde(default)]
    pub phases: Option<Vec<Phase>>,
    #[serde(default)]
    pub loss: Option<LossConfig>,
    #[serde(default)]
    pub hidden: Option<usize>,
    #[serde(default)]
    pub sensor_shift: Option<[f64; 2]>,
    #[serde(default)]
    pub noise_factor: Option<f64>,
}

fn default_variant() -> Variant {
    Variant::PdeParam
}
fn default_dataset() -> String {
    "train".into()
}
fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3, 4, 5]
}

impl Default for TrainConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("every field has a default")
    }
}

impl TrainConfig {
    pub fn schedule(&self) -> TrainSchedule {
        let mut s = TrainSchedule::for_variant(self.variant, self.seeds.first().copied().unwrap_or(0));
        if let Some(p) = &self.phases {
            s.phases = p.clone();
        }
        if let Some(h) = self.hidden {
            s.hidden = h;
        }
        if self.sensor_shift.is_some() {
            s.sensor_shift = self.sensor_shift;
        }
        if let Some(f) = self.noise_factor {
            s.noise_factor = f;
        }
        s
    }

    pub fn loss(&self) -> LossConfig {
        self.loss.clone().unwrap_or_else(|| self.variant.default_loss())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateConfig {
    /// Variants whose selected checkpoints are scored.
    #[serde(default = "default_eval_variants")]
    pub variants: Vec<Variant>,
    /// Dataset providing the training and validation columns.
    #[serde(default = "default_dataset")]
    pub dataset: String,
    #[serde(default = "default_tests")]
    pub tests: Vec<String>,
    #[serde(default)]
    pub layout: LayoutConfig,
}

fn default_eval_variants() -> Vec<Variant> {
    vec![Variant::PdeParam]
}
fn default_tests() -> Vec<String> {
    (1..=5).map(|i| format!("test{i}")).collect()
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("every field has a default")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconstructConfig {
    #[serde(default = "default_variant")]
    pub variant: Variant,
    #[serde(default = "default_dataset")]
    pub dataset: String,
    #[serde(default)]
    pub layout: LayoutConfig,
}

impl Default for ReconstructConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("every field has a default")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensitivityConfig {
    #[serde(default = "default_variant")]
    pub variant: Variant,
    #[serde(default = "default_dataset")]
    pub dataset: String,
    #[serde(default = "Perturbation::defaults")]
    pub perturbations: Vec<Perturbation>,
    /// Levels whose successive ΔT series are exported; the training sensors
    /// of `layout` when absent.
    #[serde(default)]
    pub levels: Option<Vec<usize>>,
    #[serde(default)]
    pub layout: LayoutConfig,
}

impl Default for SensitivityConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("every field has a default")
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Missing(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Pretty JSON with every default filled in.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.train.seeds.is_empty() {
            return Err(CliError::Config("train.seeds: at least one seed is required".into()));
        }
        if self.simulate.refinement == 0 {
            return Err(CliError::Config("simulate.refinement: must be >= 1".into()));
        }
        if let Some(list) = &self.simulate.scenarios {
            if list.is_empty() {
                return Err(CliError::Config("simulate.scenarios: list is empty".into()));
            }
            for s in list {
                s.validate()
                    .map_err(|e| CliError::Config(format!("simulate.scenarios[{}]: {e}", s.name)))?;
            }
        }
        if self.evaluate.variants.is_empty() {
            return Err(CliError::Config("evaluate.variants: at least one variant is required".into()));
        }
        self.train
            .schedule()
            .validate(self.train.variant)
            .map_err(|e| CliError::Config(format!("train: {e}")))?;
        if let Some(p) = &self.params {
            if !p.exists() {
                return Err(CliError::Config(format!("params: file {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    pub fn reactor_params(&self) -> Result<ReactorParams, CliError> {
        let p = match &self.params {
            None => ReactorParams::canonical(),
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| CliError::Missing(format!("{}: {e}", path.display())))?;
                serde_json::from_str(&text).map_err(|e| CliError::Config(format!("params: {e}")))?
            }
        };
        p.validate().map_err(|e| CliError::Config(format!("params: {e}")))?;
        Ok(p)
    }

    /// Applies the command-line overrides; the environment variable wins
    /// over the config file, and `--out` wins over both.
    pub fn with_overrides(mut self, out: Option<PathBuf>, seed: Option<u64>) -> Self {
        if let Some(dir) = std::env::var_os(OUT_ENV).filter(|v| !v.is_empty()) {
            self.out_dir = dir.into();
        }
        if let Some(dir) = out {
            self.out_dir = dir;
        }
        if let Some(s) = seed {
            self.simulate.train_seed = s;
            self.train.seeds = vec![s];
        }
        self
    }
}
