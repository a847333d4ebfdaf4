//! Pipeline configuration, stored as TOML.

use std::path::{Path, PathBuf};

use lyapinit_core::dataset::{SamplingScheme, SearchConfig};
use lyapinit_core::policy::TrainConfig;
use lyapinit_core::sim::{default_initial_states, SimConfig, SimState};
use lyapinit_core::verify::{GridSpec, Sweep};
use lyapinit_core::Roi;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// X-axis data and weights use `seed`, Y-axis use `seed + 1`.
    pub seed: u64,
    pub out_dir: PathBuf,
    pub roi: Roi,
    pub search: SearchConfig,
    pub sampling: SamplingScheme,
    pub train: TrainConfig,
    pub grid: GridSpec,
    pub sim: SimConfig,
    /// Second simulation batch with this constant distance fed to the policies.
    pub fabricated_cz: Option<f64>,
    pub initial_states: Vec<SimState>,
    pub gates: Gates,
    pub hit_check: HitCheck,
}

/// Quality gates; exceeding one makes the command exit with code 3.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Gates {
    pub max_infeasible_rate: f64,
    pub max_violation_fraction: f64,
}

/// Target radius and distance used to judge the static error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HitCheck {
    pub radius: f64,
    pub cz: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("out"),
            roi: Roi::default(),
            search: SearchConfig::default(),
            sampling: SamplingScheme::UniformRandom { n: 100_000 },
            train: TrainConfig::default(),
            grid: GridSpec::default(),
            sim: SimConfig::default(),
            fabricated_cz: Some(10.0),
            initial_states: default_initial_states(),
            gates: Gates {
                max_infeasible_rate: 0.01,
                max_violation_fraction: 0.1,
            },
            hit_check: HitCheck {
                radius: 0.3,
                cz: 1.0,
            },
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub eta: Option<f64>,
    pub epochs: Option<usize>,
    pub grid: Option<usize>,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Validation(format!("config: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Reads `path` if given, otherwise starts from the defaults.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
                Self::from_toml(&text)
            }
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(out) = &o.out {
            self.out_dir = out.clone();
        }
        if let Some(eta) = o.eta {
            self.search.eta = eta;
        }
        if let Some(epochs) = o.epochs {
            self.train.epochs = epochs;
        }
        if let Some(n) = o.grid {
            self.grid.coord.count = n;
            self.grid.cz.count = n;
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.roi.validate()?;
        self.search.validate()?;
        if self.sampling.count() == 0 {
            return Err(CliError::Validation("sample count must be positive".into()));
        }
        self.train.validate()?;
        self.grid.validate(&self.roi)?;
        self.sim.validate()?;
        if let Some(cz) = self.fabricated_cz {
            if !(cz.is_finite() && cz > 0.0) {
                return Err(CliError::Validation(
                    "fabricated_cz must be positive".into(),
                ));
            }
        }
        if self.initial_states.is_empty() {
            return Err(CliError::Validation("no initial states".into()));
        }
        for s in &self.initial_states {
            if !(s.cz > self.sim.cz_stop && s.px.is_finite() && s.py.is_finite()) {
                return Err(CliError::Validation(format!(
                    "initial state {s:?} must be finite and start beyond cz_stop"
                )));
            }
        }
        let g = self.gates;
        for (name, v) in [
            ("max_infeasible_rate", g.max_infeasible_rate),
            ("max_violation_fraction", g.max_violation_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(CliError::Validation(format!("{name} must lie in [0, 1]")));
            }
        }
        let h = self.hit_check;
        if !(h.radius > 0.0 && h.cz > 0.0) {
            return Err(CliError::Validation(
                "hit_check radius and cz must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn axis_seed(&self, axis: lyapinit_core::Axis) -> u64 {
        match axis {
            lyapinit_core::Axis::X => self.seed,
            lyapinit_core::Axis::Y => self.seed.wrapping_add(1),
        }
    }

    /// Verification grid for `axis`; the swept coordinate follows that axis's range.
    pub fn grid_for(&self, axis: lyapinit_core::Axis) -> GridSpec {
        let range = self.roi.coord(axis);
        GridSpec {
            coord: Sweep {
                min: range.lo.max(self.grid.coord.min),
                max: range.hi.min(self.grid.coord.max),
                ..self.grid.coord
            },
            ..self.grid
        }
    }
}
