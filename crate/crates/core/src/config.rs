//! Experiment configuration: TOML or JSON, defaults, validation and derived values.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::{noise_var_from_snr_db, ChannelConfig, FadingModel, SyncConfig};
use crate::codec::BalancedConfig;
use crate::detector::DetectorOptions;
use crate::error::{Error, Result};
use crate::feel::data::BlobSpec;
use crate::feel::model::ModelSpec;
use crate::feel::partition::PartitionMode;
use crate::feel::train::{LearningConfig, VmaxPolicy};
use crate::link::{AggregationMode, LinkConfig};
use crate::resource::GridConfig;

/// Environment variable that overrides `run.output_dir`.
pub const OUTPUT_DIR_ENV: &str = "OAC_OUTPUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodecSection {
    pub base: u32,
    pub digits: u32,
    pub v_max: f64,
}

impl Default for CodecSection {
    fn default() -> Self {
        Self {
            base: 5,
            digits: 2,
            v_max: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub subcarriers: usize,
    pub subcarrier_spacing: f64,
    pub fft_size: usize,
    pub sample_rate: f64,
    /// Cap on OFDM symbols per round; unset sizes the grid to fit.
    pub max_symbols: Option<usize>,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            subcarriers: 1200,
            subcarrier_spacing: 15e3,
            fft_size: 2048,
            sample_rate: 30.72e6,
            max_symbols: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelSection {
    pub model: FadingModel,
    pub devices: usize,
    pub antennas: usize,
    pub snr_db: f64,
    pub n_err: f64,
    /// Seconds; unset means `1 / (M Δf)`.
    pub t_sync: Option<f64>,
    pub clamp_votes: bool,
    pub noise_var_bias: f64,
}

impl Default for ChannelSection {
    fn default() -> Self {
        Self {
            model: FadingModel::IidFlat,
            devices: 25,
            antennas: 1,
            snr_db: 20.0,
            n_err: 3.0,
            t_sync: None,
            clamp_votes: false,
            noise_var_bias: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    #[default]
    Synthetic,
    Mnist,
}

impl std::str::FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "synthetic" => Ok(Self::Synthetic),
            "mnist" => Ok(Self::Mnist),
            other => Err(Error::config(format!("unknown task `{other}` (mnist | synthetic)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningSection {
    pub task: Task,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub momentum: f64,
    pub rounds: usize,
    pub partition: PartitionMode,
    pub aggregation: AggregationMode,
    pub model: ModelSpec,
    pub vmax_policy: VmaxPolicy,
    pub eval_every: usize,
    pub final_window: usize,
    pub blobs: BlobSpec,
    pub mnist_dir: Option<PathBuf>,
    pub max_train: Option<usize>,
    pub max_test: Option<usize>,
}

impl Default for LearningSection {
    fn default() -> Self {
        let l = LearningConfig::default();
        Self {
            task: Task::Synthetic,
            learning_rate: l.learning_rate,
            batch_size: l.batch_size,
            momentum: l.momentum,
            rounds: l.rounds,
            partition: PartitionMode::Homogeneous,
            aggregation: AggregationMode::OverTheAir,
            model: l.model,
            vmax_policy: l.vmax,
            eval_every: l.eval_every,
            final_window: l.final_window,
            blobs: BlobSpec::default(),
            mnist_dir: None,
            max_train: None,
            max_test: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    pub trials: usize,
    pub output_dir: PathBuf,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: 0,
            trials: 100_000,
            output_dir: PathBuf::from("oac-out"),
        }
    }
}

/// One parameter set for `mse-verify`. Unset fields inherit from the main sections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MseCase {
    pub id: String,
    #[serde(default)]
    pub base: Option<u32>,
    #[serde(default)]
    pub digits: Option<u32>,
    #[serde(default)]
    pub v_max: Option<f64>,
    #[serde(default)]
    pub antennas: Option<usize>,
    #[serde(default)]
    pub devices: Option<usize>,
    #[serde(default)]
    pub snr_db: Option<f64>,
    /// One value per device; unset draws uniform values in `[-v_max, v_max]`.
    #[serde(default)]
    pub gradients: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MseSection {
    pub cases: Vec<MseCase>,
}

impl Default for MseSection {
    fn default() -> Self {
        let case = |id: &str, r| MseCase {
            id: id.into(),
            base: None,
            digits: None,
            v_max: None,
            antennas: Some(r),
            devices: None,
            snr_db: None,
            gradients: None,
        };
        Self {
            cases: vec![case("r1", 1), case("r25", 25)],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub codec: CodecSection,
    pub grid: GridSection,
    pub channel: ChannelSection,
    pub learning: LearningSection,
    pub run: RunSection,
    pub mse: MseSection,
}

/// Quantities implied by the configuration, echoed into every summary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Derived {
    pub xi: u64,
    pub step_size: f64,
    pub symbol_energy: f64,
    pub cells_per_gradient: usize,
    pub gradients_per_symbol: usize,
    pub noise_var: f64,
    pub t_sync: f64,
    pub max_delay_samples: f64,
}

impl ExperimentConfig {
    pub fn codec(&self) -> Result<BalancedConfig> {
        BalancedConfig::new(self.codec.base, self.codec.digits, self.codec.v_max)
    }

    pub fn sync(&self) -> SyncConfig {
        let g = &self.grid;
        SyncConfig {
            t_sync: self
                .channel
                .t_sync
                .unwrap_or(1.0 / (g.subcarriers as f64 * g.subcarrier_spacing)),
            n_err: self.channel.n_err,
            fft_size: g.fft_size,
            sample_rate: g.sample_rate,
        }
    }

    pub fn channel_config(&self) -> Result<ChannelConfig> {
        let c = &self.channel;
        if !c.snr_db.is_finite() {
            return Err(Error::config("SNR must be finite"));
        }
        let mut ch = ChannelConfig::new(c.devices, c.antennas, noise_var_from_snr_db(c.snr_db))?
            .with_fading(c.model)
            .with_sync(self.sync());
        ch.subcarrier_spacing = self.grid.subcarrier_spacing;
        ch.validate()?;
        Ok(ch)
    }

    pub fn link_config(&self) -> Result<LinkConfig> {
        let mut link = LinkConfig::new(self.codec()?, self.grid.subcarriers, self.channel_config()?)
            .with_mode(self.learning.aggregation);
        link.max_symbols = self.grid.max_symbols;
        link.detector = DetectorOptions {
            clamp_votes: self.channel.clamp_votes,
            noise_var_bias: self.channel.noise_var_bias,
        };
        Ok(link)
    }

    pub fn learning_config(&self) -> LearningConfig {
        let l = &self.learning;
        LearningConfig {
            learning_rate: l.learning_rate,
            batch_size: l.batch_size,
            momentum: l.momentum,
            rounds: l.rounds,
            model: l.model,
            vmax: l.vmax_policy,
            eval_every: l.eval_every,
            final_window: l.final_window,
        }
    }

    /// Re-check every cross-field invariant.
    pub fn validate(&self) -> Result<Derived> {
        let codec = self.codec()?;
        let grid = GridConfig::new(self.grid.subcarriers, 1, codec)?;
        if self.grid.max_symbols == Some(0) {
            return Err(Error::config("grid.max_symbols must be at least 1 when set"));
        }
        if !(self.channel.noise_var_bias > 0.0) {
            return Err(Error::config("channel.noise_var_bias must be positive"));
        }
        let ch = self.channel_config()?;
        self.learning_config().validate()?;
        if self.learning.task == Task::Mnist && self.learning.mnist_dir.is_none() {
            return Err(Error::config("task `mnist` needs learning.mnist_dir"));
        }
        if self.learning.partition == PartitionMode::HeterogeneousConcentric && self.channel.devices != 25 {
            return Err(Error::config(
                "heterogeneous partition needs K = 25 devices (5 areas × 5 devices)",
            ));
        }
        let mut ids = std::collections::BTreeSet::new();
        for case in &self.mse.cases {
            if !ids.insert(&case.id) {
                return Err(Error::config(format!("duplicate mse case id `{}`", case.id)));
            }
        }
        Ok(Derived {
            xi: codec.bias(),
            step_size: codec.step_size(),
            symbol_energy: codec.symbol_energy(),
            cells_per_gradient: codec.cells_per_value(),
            gradients_per_symbol: grid.gradients_per_symbol(),
            noise_var: ch.noise_var,
            t_sync: ch.sync.t_sync,
            max_delay_samples: ch.sync.max_delay_samples(),
        })
    }

    /// Output directory after applying the environment override.
    pub fn output_dir(&self) -> PathBuf {
        std::env::var_os(OUTPUT_DIR_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| self.run.output_dir.clone())
    }

    /// First 12 hex digits of the SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&json);
        hex::encode(&digest[..6])
    }

    /// Parse TOML or JSON text. A JSON document with a top-level `config`
    /// key (a run summary) yields that embedded config.
    pub fn parse(text: &str, source_name: &str, json: bool) -> Result<Self> {
        let parse_err = |message: String| Error::Parse {
            source_name: source_name.to_string(),
            message,
        };
        if json {
            let mut value: serde_json::Value = serde_json::from_str(text).map_err(|e| parse_err(e.to_string()))?;
            if let Some(inner) = value.get_mut("config") {
                value = inner.take();
            }
            serde_json::from_value(value).map_err(|e| parse_err(e.to_string()))
        } else {
            toml::from_str(text).map_err(|e| parse_err(e.to_string()))
        }
    }
}

/// Read, parse and validate a config file (`.json`, otherwise TOML).
pub fn load_config(path: &Path) -> Result<(ExperimentConfig, Derived)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Parse {
        source_name: path.display().to_string(),
        message: e.to_string(),
    })?;
    let json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let cfg = ExperimentConfig::parse(&text, &path.display().to_string(), json)?;
    let derived = cfg.validate()?;
    Ok((cfg, derived))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_profile() {
        let cfg = ExperimentConfig::parse("", "empty", false).unwrap();
        assert_eq!(cfg.grid.subcarriers, 1200);
        assert_eq!(cfg.channel.devices, 25);
        assert_eq!(cfg.channel.snr_db, 20.0);
        assert_eq!(cfg.channel.n_err, 3.0);
        assert_eq!(cfg.learning.momentum, 0.9);
        let d = cfg.validate().unwrap();
        assert_eq!(d.xi, 12);
        assert_eq!(d.symbol_energy, 4.0);
        assert_eq!(d.gradients_per_symbol, 150);
        assert!((d.noise_var - 0.01).abs() < 1e-15);
        assert!((d.max_delay_samples - 30.72e6 / 18e6).abs() < 1e-9);
    }

    #[test]
    fn even_base_rejected_with_named_invariant() {
        let cfg = ExperimentConfig::parse("[codec]\nbase = 4\n", "t", false).unwrap();
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("base must be odd"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn missing_momentum_defaults() {
        let cfg = ExperimentConfig::parse("[learning]\nlearning_rate = 0.01\n", "t", false).unwrap();
        assert_eq!(cfg.learning.momentum, 0.9);
        assert_eq!(cfg.learning.learning_rate, 0.01);
    }

    #[test]
    fn parse_errors_carry_location() {
        let err = ExperimentConfig::parse("[codec]\nbase = \"five\"\n", "bad.toml", false).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bad.toml") && msg.contains("line 2"), "{msg}");
        let err = ExperimentConfig::parse("[channel]\nantenas = 3\n", "typo.toml", false).unwrap_err();
        assert!(err.to_string().contains("antenas"));
    }

    #[test]
    fn summary_json_round_trips() {
        let mut cfg = ExperimentConfig::default();
        cfg.codec.digits = 3;
        cfg.learning.model = ModelSpec::Cnn {
            side: 28,
            kernel: 5,
            filters: 4,
        };
        let summary = serde_json::json!({ "config": cfg, "result": 1 });
        let back = ExperimentConfig::parse(&summary.to_string(), "summary.json", true).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        let toml_text = toml::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::parse(&toml_text, "t", false).unwrap(), cfg);
    }

    #[test]
    fn cross_field_invariants() {
        let mut cfg = ExperimentConfig::default();
        cfg.grid.subcarriers = 7;
        assert!(cfg.validate().unwrap_err().to_string().contains("(β-1)·D"));
        let mut cfg = ExperimentConfig::default();
        cfg.learning.partition = PartitionMode::HeterogeneousConcentric;
        cfg.channel.devices = 10;
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::default();
        cfg.learning.task = Task::Mnist;
        assert!(cfg.validate().is_err());
    }
}
