//! Experiment configuration file.

use std::path::{Path, PathBuf};

use fdia_core::akf::{FilterConfig, Variant, DEFAULT_FORGETTING};
use fdia_core::attack::AttackScenario;
use fdia_core::nn::{Architecture, TrainConfig};
use fdia_core::passive::CalibrationConfig;
use fdia_core::pipeline::PipelineConfig;
use fdia_core::signal::{SignalParams, SignalState};
use fdia_core::{Error, Result};
use serde::{Deserialize, Serialize};

/// Initial voltage phasor of the simulated bus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialState {
    pub amplitude: f64,
    pub phase_deg: f64,
}

impl Default for InitialState {
    fn default() -> Self {
        Self {
            amplitude: 1.0,
            phase_deg: 0.0,
        }
    }
}

impl InitialState {
    pub fn state(&self) -> SignalState {
        SignalState::from_amplitude_phase(self.amplitude, self.phase_deg.to_radians())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterSettings {
    /// Filter whose residual feeds the fused verdict.
    pub variant: Variant,
    pub forgetting: f64,
}

impl Default for FilterSettings {
    fn default() -> Self {
        Self {
            variant: Variant::Improved,
            forgetting: DEFAULT_FORGETTING,
        }
    }
}

/// Layer sizes of the classifier; the window length and input width come
/// from the pipeline and the dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkSettings {
    pub hidden: usize,
    pub conv1_kernels: usize,
    pub conv2_kernels: usize,
    pub kernel_size: usize,
    pub pool: usize,
    pub dropout_rate: f64,
    pub train: TrainConfig,
}

impl Default for NetworkSettings {
    fn default() -> Self {
        let a = Architecture::standard(1);
        Self {
            hidden: a.hidden,
            conv1_kernels: a.conv1_kernels,
            conv2_kernels: a.conv2_kernels,
            kernel_size: a.kernel_size,
            pool: a.pool,
            dropout_rate: a.dropout_rate,
            train: TrainConfig::default(),
        }
    }
}

impl NetworkSettings {
    pub fn architecture(&self, input_dim: usize, window_len: usize) -> Architecture {
        Architecture {
            input_dim,
            window_len,
            hidden: self.hidden,
            conv1_kernels: self.conv1_kernels,
            conv2_kernels: self.conv2_kernels,
            kernel_size: self.kernel_size,
            pool: self.pool,
            dropout_rate: self.dropout_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub signal: SignalParams,
    #[serde(default)]
    pub initial: InitialState,
    /// Number of simulated ticks.
    pub samples: usize,
    pub attack: AttackScenario,
    #[serde(default)]
    pub filter: FilterSettings,
    #[serde(default)]
    pub thresholds: CalibrationConfig,
    #[serde(default)]
    pub network: NetworkSettings,
    #[serde(default)]
    pub pipeline: PipelineConfig,
    /// Run directory receiving every artifact.
    pub output: PathBuf,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self =
            serde_json::from_str(text).map_err(|e| Error::config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.signal.validate()?;
        self.attack.validate()?;
        self.network.train.validate()?;
        if self.samples == 0 {
            return Err(Error::config("samples must be positive"));
        }
        if self.attack.selection.len() != 1 {
            return Err(Error::config(
                "the simulated bus has one sensor; attack.sensors needs exactly one entry",
            ));
        }
        if !(self.filter.forgetting > 0.0 && self.filter.forgetting < 1.0) {
            return Err(Error::config("filter.forgetting must lie in (0, 1)"));
        }
        if !(self.thresholds.k > 0.0) {
            return Err(Error::config("thresholds.k must be positive"));
        }
        Ok(())
    }

    /// Applies one seed to every stochastic stage.
    pub fn set_seed(&mut self, seed: u64) {
        self.signal.seed = seed;
        self.pipeline.seed = seed;
        self.network.train.seed = seed;
    }

    pub fn filter_config(&self, z0: f64) -> FilterConfig {
        let mut f = FilterConfig::for_signal(&self.signal, z0);
        f.forgetting = self.filter.forgetting;
        f
    }

    pub fn seeds(&self) -> Seeds {
        Seeds {
            signal: self.signal.seed,
            pipeline: self.pipeline.seed,
            train: self.network.train.seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub signal: u64,
    pub pipeline: u64,
    pub train: u64,
}
