use crate::HarnessError;
use levelvote::locengine::SpmParams;
use levelvote::synthgen::{CityGenParams, PropagationParams};
use levelvote::tuner::DEFAULT_EPS_GRID;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// Voting at the training-optimal fixed ε.
    Fixed,
    /// Voting at the ε whose spread is closest to the training target.
    Adaptive,
    /// Level-set intersection with growing ε.
    Spm,
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Fixed => "fixed",
            Algorithm::Adaptive => "adaptive",
            Algorithm::Spm => "spm",
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fixed" => Ok(Algorithm::Fixed),
            "adaptive" => Ok(Algorithm::Adaptive),
            "spm" => Ok(Algorithm::Spm),
            other => Err(format!("unknown algorithm `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSource {
    pub height: usize,
    pub width: usize,
    pub cell_size: f64,
    /// Stations generated per scenario; sweeps use prefixes of this list.
    pub n_stations: usize,
    /// Building layout; the seed field is ignored and derived per scenario.
    pub city: CityGenParams,
    pub propagation: PropagationParams,
}

impl Default for SyntheticSource {
    fn default() -> Self {
        SyntheticSource {
            height: 128,
            width: 128,
            cell_size: 1.0,
            n_stations: 10,
            city: CityGenParams::default(),
            propagation: PropagationParams::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioSource {
    Synthetic(SyntheticSource),
    /// Directory whose sub-directories each hold a `manifest.json`.
    Manifests { dir: PathBuf },
}

impl Default for ScenarioSource {
    fn default() -> Self {
        ScenarioSource::Synthetic(SyntheticSource::default())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct MapNoise {
    pub target_rmse: f64,
    pub smoothness: f64,
}

impl Default for MapNoise {
    fn default() -> Self {
        MapNoise {
            target_rmse: 0.01,
            smoothness: 8.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub source: ScenarioSource,
    /// Scenarios to generate (synthetic) or to take from the directory
    /// (manifests; 0 = all).
    pub n_scenarios: usize,
    pub train_fraction: f64,
    pub bs_counts: Vec<usize>,
    pub eps_grid: Vec<f64>,
    /// Estimator error applied to synthetic ground truth.
    pub noise: MapNoise,
    pub report_noise_sd: f64,
    pub algorithms: Vec<Algorithm>,
    pub master_seed: u64,
    pub ues_per_scenario: usize,
    /// Worker threads; 0 uses all cores.
    pub workers: usize,
    pub allow_indoor: bool,
    pub spm: SpmParams,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            source: ScenarioSource::default(),
            n_scenarios: 80,
            train_fraction: 0.5,
            bs_counts: (2..=10).collect(),
            eps_grid: DEFAULT_EPS_GRID.to_vec(),
            noise: MapNoise::default(),
            report_noise_sd: 0.0,
            algorithms: vec![Algorithm::Fixed, Algorithm::Adaptive, Algorithm::Spm],
            master_seed: 0,
            ues_per_scenario: 1,
            workers: 1,
            allow_indoor: false,
            spm: SpmParams::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad(format!(
                "train_fraction must lie in (0, 1), got {}",
                self.train_fraction
            ));
        }
        if self.bs_counts.is_empty() || self.bs_counts.contains(&0) {
            return bad("bs_counts must be non-empty and positive".into());
        }
        if self.algorithms.is_empty() {
            return bad("no algorithms selected".into());
        }
        if self.ues_per_scenario == 0 {
            return bad("ues_per_scenario must be at least 1".into());
        }
        if self.eps_grid.is_empty()
            || self.eps_grid.iter().any(|e| !(*e > 0.0))
            || self.eps_grid.windows(2).any(|w| !(w[0] < w[1]))
        {
            return bad("eps_grid must be positive and strictly increasing".into());
        }
        if let ScenarioSource::Synthetic(s) = &self.source {
            if self.n_scenarios < 2 {
                return bad("at least 2 scenarios are needed for a train/test split".into());
            }
            let max_k = self.bs_counts.iter().copied().max().unwrap_or(0);
            if max_k > s.n_stations {
                return bad(format!(
                    "bs_count {max_k} exceeds the {} generated stations",
                    s.n_stations
                ));
            }
        }
        Ok(())
    }
}
