//! The TOML run configuration.
//!
//! Every section is optional; missing keys fall back to the reference
//! experiment (4 kOhm / 50 mF circuit charged towards 2.5 V, 2.4 GHz link
//! over ten feet with 10 MHz of bandwidth and -174 dBm/Hz of noise).

use std::path::Path;

use rfeh_core::simulator::{
    ChannelLink, ExperimentConfig, RateModel, Strategy, REFERENCE_CAPACITANCES,
    REFERENCE_PACKET_SCALES,
};
use rfeh_core::strategies::PredictorPriors;
use rfeh_core::{ChargeCircuit, EnergyScenario};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default = "reference_circuit")]
    pub circuit: ChargeCircuit,
    #[serde(default)]
    pub link: ChannelLink,
    #[serde(default)]
    pub experiment: Experiment,
    /// Explicit scenario for `optimize` and `simulate`; without one they
    /// use run 0 of the generated experiment.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<EnergyScenario>,
    #[serde(default)]
    pub sweep: Sweep,
    #[serde(default)]
    pub oracle: OracleCheck,
}

fn reference_circuit() -> ChargeCircuit {
    ExperimentConfig::reference().circuit
}

impl Default for Config {
    fn default() -> Self {
        Config {
            circuit: reference_circuit(),
            link: ChannelLink::default(),
            experiment: Experiment::default(),
            scenario: None,
            sweep: Sweep::default(),
            oracle: OracleCheck::default(),
        }
    }
}

/// Scenario generation and Monte Carlo settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Experiment {
    pub seed: u64,
    pub rate_model: RateModel,
    /// Joules; a quarter of `e_max` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_energy: Option<f64>,
    pub packets: usize,
    /// Seconds.
    pub mean_epoch: f64,
    /// Joules.
    pub mean_harvest: f64,
    pub runs: usize,
    pub max_attempts: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub priors: Option<PredictorPriors>,
}

impl Default for Experiment {
    fn default() -> Self {
        let r = ExperimentConfig::reference();
        Experiment {
            seed: r.seed,
            rate_model: r.rate_model,
            initial_energy: None,
            packets: r.packets,
            mean_epoch: r.mean_epoch,
            mean_harvest: r.mean_harvest,
            runs: r.runs,
            max_attempts: r.max_attempts,
            priors: r.priors,
        }
    }
}

/// Axes of the figure sweeps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Sweep {
    /// Multipliers of both `mean_epoch` and `mean_harvest` (fig5, fig6, fig7).
    pub packet_scales: Vec<f64>,
    /// Farads (fig5).
    pub capacitances: Vec<f64>,
    /// Strategies compared in fig6 and fig7.
    pub strategies: Vec<Strategy>,
    pub probe: Probe,
}

impl Default for Sweep {
    fn default() -> Self {
        Sweep {
            packet_scales: REFERENCE_PACKET_SCALES.to_vec(),
            capacitances: REFERENCE_CAPACITANCES.to_vec(),
            strategies: vec![
                Strategy::Optimal,
                Strategy::MaxHarvest,
                Strategy::TightString,
                Strategy::Online,
            ],
            probe: Probe::default(),
        }
    }
}

/// Future-impact probe of fig8.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Probe {
    pub packet_scale: f64,
    pub runs: usize,
    /// 1-based epoch whose optimal power is watched.
    pub current: usize,
    pub distances: Vec<usize>,
    /// Epoch-length change, times the (scaled) mean epoch.
    pub delta_epoch: f64,
    /// Packet-length change, times the scenario's mean packet length.
    pub delta_packet: f64,
}

impl Default for Probe {
    fn default() -> Self {
        Probe {
            packet_scale: 100.0,
            runs: 10,
            current: 1,
            distances: vec![1, 2, 3, 4, 5],
            delta_epoch: 0.5,
            delta_packet: 0.5,
        }
    }
}

/// Solver-versus-oracle batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleCheck {
    pub instances: usize,
    /// Packets per instance, at most 3.
    pub packets: usize,
    /// Grid points per epoch.
    pub resolution: usize,
}

impl Default for OracleCheck {
    fn default() -> Self {
        OracleCheck {
            instances: 20,
            packets: 2,
            resolution: 60,
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        let config: Config = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical serialization, lower-case hex.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_toml().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn validate(&self) -> CliResult<()> {
        self.experiment_config()
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        if let Some(s) = &self.scenario {
            s.validate_for(&self.circuit)
                .map_err(|e| CliError::Config(format!("scenario: {e}")))?;
        }
        let p = &self.sweep.probe;
        if p.runs == 0 || p.current == 0 || p.distances.contains(&0) {
            return Err(CliError::Config(
                "sweep.probe needs runs, current and distances of at least 1".into(),
            ));
        }
        if self.oracle.instances == 0 {
            return Err(CliError::Config(
                "oracle.instances must be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn experiment_config(&self) -> ExperimentConfig {
        let e = &self.experiment;
        ExperimentConfig {
            circuit: self.circuit,
            link: self.link,
            rate_model: e.rate_model,
            initial_energy: e.initial_energy.unwrap_or(0.25 * self.circuit.e_max()),
            packets: e.packets,
            mean_epoch: e.mean_epoch,
            mean_harvest: e.mean_harvest,
            runs: e.runs,
            seed: e.seed,
            priors: e.priors,
            max_attempts: e.max_attempts,
        }
    }
}
