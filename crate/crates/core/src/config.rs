//! JSON run configuration. Every field has a default; unknown keys are
//! rejected. Transmit power is given in dBm and converted here only.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ao::AoConfig;
use crate::error::{Result, SimError};
use crate::phase::{LineSearchConfig, PhaseOptions, UpdateMode};
use crate::scene::SceneParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    pub frequency_hz: f64,
    pub num_antennas: usize,
    pub num_users: usize,
    pub num_layers: usize,
    pub atoms_per_row: usize,
    pub atoms_per_col: usize,
    pub thickness_wavelengths: f64,
    pub bs_height_m: f64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        let p = SceneParams::default();
        Self {
            frequency_hz: p.frequency_hz,
            num_antennas: p.num_antennas,
            num_users: p.num_users,
            num_layers: p.num_layers,
            atoms_per_row: p.atoms_per_row,
            atoms_per_col: p.atoms_per_col,
            thickness_wavelengths: p.thickness_wavelengths,
            bs_height_m: p.bs_height_m,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    pub r_min_m: f64,
    pub r_max_m: f64,
    pub path_loss_exponent: f64,
    pub reference_distance_m: f64,
    pub rician_factor: f64,
    pub bandwidth_hz: f64,
    pub noise_figure_db: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        let p = SceneParams::default();
        Self {
            r_min_m: p.r_min_m,
            r_max_m: p.r_max_m,
            path_loss_exponent: p.path_loss_exponent,
            reference_distance_m: p.reference_distance_m,
            rician_factor: p.rician_factor,
            bandwidth_hz: p.bandwidth_hz,
            noise_figure_db: p.noise_figure_db,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpdateModeName {
    Joint,
    Cyclic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub tolerance: f64,
    pub max_outer_iters: usize,
    pub num_starts: usize,
    pub phase_tol: f64,
    pub phase_max_iters: usize,
    pub initial_step: f64,
    pub shrink: f64,
    pub max_backtracks: usize,
    pub warm_start: bool,
    pub update_mode: UpdateModeName,
    pub power_tol: f64,
    pub power_max_iters: usize,
    pub power_budget_dbm: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        let ao = AoConfig::default();
        Self {
            tolerance: ao.tolerance,
            max_outer_iters: ao.max_outer_iters,
            num_starts: ao.num_starts,
            phase_tol: ao.phase.tol,
            phase_max_iters: ao.phase.max_iters,
            initial_step: ao.phase.line_search.initial_step,
            shrink: ao.phase.line_search.shrink,
            max_backtracks: ao.phase.line_search.max_backtracks,
            warm_start: ao.phase.line_search.warm_start,
            update_mode: UpdateModeName::Joint,
            power_tol: ao.power_tol,
            power_max_iters: ao.power_max_iters,
            power_budget_dbm: 30.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub sweep_atoms: Vec<usize>,
    pub sweep_layers: Vec<usize>,
    pub drops: usize,
    pub mc_samples: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            sweep_atoms: vec![16, 36, 64],
            sweep_layers: vec![1, 2, 3, 4, 5, 6],
            drops: 20,
            mc_samples: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: String,
    /// Also write `W`, `W^1` and `R` as binary matrix files in `ao` mode.
    pub dump_operators: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: "out".to_string(),
            dump_operators: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub geometry: GeometryConfig,
    pub channel: ChannelConfig,
    pub optimizer: OptimizerConfig,
    pub experiment: ExperimentConfig,
    pub output: OutputConfig,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            geometry: GeometryConfig::default(),
            channel: ChannelConfig::default(),
            optimizer: OptimizerConfig::default(),
            experiment: ExperimentConfig::default(),
            output: OutputConfig::default(),
            seed: AoConfig::default().master_seed,
        }
    }
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watts_to_dbm(watts: f64) -> f64 {
    10.0 * watts.log10() + 30.0
}

impl RunConfig {
    /// Parses and validates. Parse errors name the line and column.
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text)
            .map_err(|e| SimError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.scene_params().geometry()?;
        self.ao_config().validate()?;
        let bad = |msg: &str| Err(SimError::Config(msg.to_string()));
        let c = &self.channel;
        if !(c.r_min_m > 0.0 && c.r_min_m <= c.r_max_m && c.r_max_m.is_finite()) {
            return bad("channel: need 0 < r_min_m <= r_max_m");
        }
        if !(c.rician_factor >= 0.0 && c.rician_factor.is_finite()) {
            return bad("channel: rician_factor must be finite and >= 0");
        }
        if !(c.path_loss_exponent > 0.0 && c.reference_distance_m > 0.0 && c.bandwidth_hz > 0.0) {
            return bad("channel: path_loss_exponent, reference_distance_m and bandwidth_hz must be positive");
        }
        if !c.noise_figure_db.is_finite() || !self.optimizer.power_budget_dbm.is_finite() {
            return bad("noise_figure_db and power_budget_dbm must be finite");
        }
        let e = &self.experiment;
        if e.drops == 0 || e.mc_samples == 0 {
            return bad("experiment: drops and mc_samples must be positive");
        }
        if e.sweep_atoms.is_empty() || e.sweep_atoms.contains(&0) {
            return bad("experiment: sweep_atoms must be non-empty and positive");
        }
        if e.sweep_layers.is_empty() || e.sweep_layers.contains(&0) {
            return bad("experiment: sweep_layers must be non-empty and positive");
        }
        Ok(())
    }

    pub fn scene_params(&self) -> SceneParams {
        let g = &self.geometry;
        let c = &self.channel;
        SceneParams {
            frequency_hz: g.frequency_hz,
            num_antennas: g.num_antennas,
            num_users: g.num_users,
            num_layers: g.num_layers,
            atoms_per_row: g.atoms_per_row,
            atoms_per_col: g.atoms_per_col,
            thickness_wavelengths: g.thickness_wavelengths,
            bs_height_m: g.bs_height_m,
            r_min_m: c.r_min_m,
            r_max_m: c.r_max_m,
            path_loss_exponent: c.path_loss_exponent,
            reference_distance_m: c.reference_distance_m,
            rician_factor: c.rician_factor,
            bandwidth_hz: c.bandwidth_hz,
            noise_figure_db: c.noise_figure_db,
        }
    }

    pub fn ao_config(&self) -> AoConfig {
        let o = &self.optimizer;
        AoConfig {
            tolerance: o.tolerance,
            max_outer_iters: o.max_outer_iters,
            num_starts: o.num_starts,
            phase: PhaseOptions {
                tol: o.phase_tol,
                max_iters: o.phase_max_iters,
                line_search: LineSearchConfig {
                    initial_step: o.initial_step,
                    shrink: o.shrink,
                    max_backtracks: o.max_backtracks,
                    warm_start: o.warm_start,
                },
                mode: match o.update_mode {
                    UpdateModeName::Joint => UpdateMode::Joint,
                    UpdateModeName::Cyclic => UpdateMode::Cyclic,
                },
            },
            power_tol: o.power_tol,
            power_max_iters: o.power_max_iters,
            power_budget: dbm_to_watts(o.power_budget_dbm),
            master_seed: self.seed,
        }
    }

    /// Single-line JSON with every field spelled out.
    pub fn resolved_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}
