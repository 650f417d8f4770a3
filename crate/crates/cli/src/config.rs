//! Run configuration: one TOML document per run, every field defaulted.

use std::path::{Path, PathBuf};

use ccnf::flow::{FlowConfig, TrainConfig};
use ccnf::regions::ClusterOptions;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Particle,
    Bimodal,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub source: DataSource,
    pub n: usize,
    pub context_len: usize,
    pub horizon: usize,
    pub dim: usize,
    /// Innovation noise of the particle generator.
    pub sigma: f64,
    /// Input file for `source = "csv"`.
    pub path: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Particle,
            n: 3500,
            context_len: 16,
            horizon: 4,
            dim: 2,
            sigma: 0.05,
            path: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub train: usize,
    pub calibration: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train: 2000,
            calibration: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConformalConfig {
    pub epsilons: Vec<f64>,
}

impl Default for ConformalConfig {
    fn default() -> Self {
        Self {
            epsilons: vec![0.1, 0.2],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionModeConfig {
    Grid,
    Samples,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegionConfig {
    pub mode: RegionModeConfig,
    pub epsilon: f64,
    /// Position of the series within the test split.
    pub series: usize,
    /// Cells per axis in grid mode.
    pub cells: usize,
    /// Flow samples in sample mode.
    pub n_samples: usize,
    pub cluster: ClusterOptions,
    /// Also build the per-step baseline box.
    pub bonferroni: bool,
    pub median_samples: usize,
}

impl Default for RegionConfig {
    fn default() -> Self {
        Self {
            mode: RegionModeConfig::Grid,
            epsilon: 0.1,
            series: 0,
            cells: 100,
            n_samples: 10_000,
            cluster: ClusterOptions::default(),
            bonferroni: true,
            median_samples: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoverageConfig {
    /// Number of test series (from the start of the test split) whose
    /// sample-mode region volume is averaged into the report; 0 disables.
    pub volume_series: usize,
    pub volume_samples: usize,
}

impl Default for CoverageConfig {
    fn default() -> Self {
        Self {
            volume_series: 0,
            volume_samples: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Output directory; the command line and `CCNF_OUT_DIR` take precedence.
    #[serde(skip_serializing)]
    pub out_dir: Option<PathBuf>,
    pub data: DataConfig,
    pub split: SplitConfig,
    pub model: FlowConfig,
    pub train: TrainConfig,
    pub conformal: ConformalConfig,
    pub region: RegionConfig,
    pub coverage: CoverageConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: None,
            data: DataConfig::default(),
            split: SplitConfig::default(),
            model: FlowConfig::default(),
            train: TrainConfig::default(),
            conformal: ConformalConfig::default(),
            region: RegionConfig::default(),
            coverage: CoverageConfig::default(),
        }
    }
}

/// Independent seed streams for each stochastic stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Data,
    Split,
    Init,
    Train,
    Region,
    Coverage,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn check_epsilon(field: &str, e: f64) -> Result<(), CliError> {
    if !(e > 0.0 && e < 1.0) {
        return Err(CliError::Config(format!("{field}: significance level must lie in (0, 1), got {e}")));
    }
    Ok(())
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        let d = &self.data;
        if d.n == 0 || d.context_len == 0 || d.horizon == 0 || d.dim == 0 {
            return bad("data: n, context_len, horizon and dim must be positive".into());
        }
        match d.source {
            DataSource::Particle | DataSource::Bimodal if d.dim != 2 => {
                return bad(format!("data.dim: generated data is two-dimensional, got {}", d.dim));
            }
            DataSource::Csv if d.path.is_none() => return bad("data.path: required for csv source".into()),
            _ => {}
        }
        if !(d.sigma.is_finite() && d.sigma > 0.0) {
            return bad(format!("data.sigma: must be positive, got {}", d.sigma));
        }
        let s = &self.split;
        if s.train == 0 || s.calibration == 0 {
            return bad("split: train and calibration sizes must be positive".into());
        }
        if s.train.saturating_add(s.calibration) >= d.n {
            return bad(format!(
                "split: train + calibration = {} leaves no test series out of {}",
                s.train.saturating_add(s.calibration),
                d.n
            ));
        }
        let m = &self.model;
        if m.layers < 2 || m.hidden_width == 0 || m.hidden_layers == 0 || m.gru_hidden == 0 {
            return bad("model: need layers >= 2 and positive widths".into());
        }
        if !(m.s_clamp.is_finite() && m.s_clamp > 0.0) {
            return bad(format!("model.s_clamp: must be positive, got {}", m.s_clamp));
        }
        self.train.validate().map_err(|e| CliError::Config(format!("train: {e}")))?;
        if self.conformal.epsilons.is_empty() {
            return bad("conformal.epsilons: need at least one level".into());
        }
        for &e in &self.conformal.epsilons {
            check_epsilon("conformal.epsilons", e)?;
        }
        let r = &self.region;
        check_epsilon("region.epsilon", r.epsilon)?;
        if r.cells < 2 {
            return bad("region.cells: need at least 2".into());
        }
        if r.n_samples == 0 || r.median_samples == 0 {
            return bad("region: sample counts must be positive".into());
        }
        r.cluster
            .linkage
            .validate()
            .map_err(|e| CliError::Config(format!("region.cluster: {e}")))?;
        if self.coverage.volume_series > 0 && self.coverage.volume_samples == 0 {
            return bad("coverage.volume_samples: must be positive".into());
        }
        Ok(())
    }

    pub fn stage_seed(&self, stage: Stage) -> u64 {
        splitmix64(self.seed ^ splitmix64(stage as u64 + 1))
    }

    /// Hash of the sections that determine the trained model and the split.
    pub fn config_hash(&self) -> String {
        let linked = serde_json::json!({
            "seed": self.seed,
            "data": self.data,
            "split": self.split,
            "model": self.model,
            "train": self.train,
        });
        hex::encode(Sha256::digest(serde_json::to_vec(&linked).expect("config serialises")))
    }

    /// The effective configuration as echoed into output files.
    pub fn echo(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serialises")
    }
}
