//! Alternating optimization of phases and powers with multiple random
//! starts, and parameter sweeps over independent user drops.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use crate::cascade::{compose, PhaseState};
use crate::error::{invalid, Result};
use crate::metrics::wmmse_coefficients;
use crate::phase::{objective, optimize_phases, PhaseIterate, PhaseOptions};
use crate::power::{optimize_powers, PowerAllocation, PowerIterate};
use crate::propagation::{ChannelStatistics, PropagationOperators};
use crate::scene::{Scene, SceneParams};

#[derive(Debug, Clone, PartialEq)]
pub struct AoConfig {
    /// Outer-loop stopping threshold on the change in sum SE.
    pub tolerance: f64,
    pub max_outer_iters: usize,
    pub num_starts: usize,
    pub phase: PhaseOptions,
    pub power_tol: f64,
    pub power_max_iters: usize,
    /// `P_T` in watts.
    pub power_budget: f64,
    pub master_seed: u64,
}

impl Default for AoConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-5,
            max_outer_iters: 130,
            num_starts: 5,
            phase: PhaseOptions::default(),
            power_tol: 1e-6,
            power_max_iters: 50,
            power_budget: 1.0,
            master_seed: 1,
        }
    }
}

impl AoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return invalid("tolerance must be positive");
        }
        if self.num_starts == 0 {
            return invalid("num_starts must be at least 1");
        }
        if !(self.power_budget > 0.0 && self.power_budget.is_finite()) {
            return invalid("power budget must be positive");
        }
        self.phase.line_search.validate()
    }
}

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic seed for `(master, a, b)`.
pub fn derive_seed(master: u64, a: u64, b: u64) -> u64 {
    mix(mix(mix(master).wrapping_add(a)).wrapping_add(b))
}

/// RNG for start `start` of sweep point `point`.
pub fn start_rng(master: u64, point: u64, start: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(master);
    rng.set_stream(derive_seed(master, point, start));
    rng
}

/// User-drop seed for drop `drop` under `master`.
pub fn drop_seed(master: u64, drop: u64) -> u64 {
    derive_seed(master, u64::MAX, drop)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OuterIterate {
    pub iteration: usize,
    pub after_phases: f64,
    pub after_powers: f64,
}

#[derive(Debug, Clone)]
pub struct StartResult {
    pub phases: PhaseState,
    pub powers: PowerAllocation,
    /// Sum SE after each outer iteration; entry 0 is the initial point.
    pub trajectory: Vec<f64>,
    pub outer: Vec<OuterIterate>,
    /// Ascent iterates, one list per outer pass.
    pub phase_traces: Vec<Vec<PhaseIterate>>,
    /// Power iterates, one list per outer pass.
    pub power_traces: Vec<Vec<PowerIterate>>,
    pub iterations: usize,
    pub converged: bool,
}

impl StartResult {
    pub fn final_se(&self) -> f64 {
        *self.trajectory.last().expect("trajectory holds the initial point")
    }
}

#[derive(Debug, Clone)]
pub struct AoResult {
    pub best_start: usize,
    pub best_phases: PhaseState,
    pub best_powers: PowerAllocation,
    pub best_sum_se: f64,
    pub starts: Vec<StartResult>,
}

impl AoResult {
    pub fn iterations_to_converge(&self) -> Vec<usize> {
        self.starts.iter().map(|s| s.iterations).collect()
    }
}

/// One start: random phases, uniform powers, then alternate until the sum
/// SE changes by less than the tolerance.
pub fn run_start(
    ops: &PropagationOperators,
    stats: &ChannelStatistics,
    config: &AoConfig,
    mut rng: ChaCha20Rng,
) -> Result<StartResult> {
    let mut phases = PhaseState::random(ops.num_layers(), ops.num_atoms(), &mut rng);
    let mut powers = PowerAllocation::uniform(stats.num_users(), config.power_budget);
    let mut current = objective(&phases, ops, stats, &powers)?;
    let mut trajectory = vec![current];
    let mut outer = Vec::new();
    let mut phase_traces = Vec::new();
    let mut power_traces = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    for iteration in 1..=config.max_outer_iters {
        iterations = iteration;
        let phase_run = optimize_phases(&phases, ops, stats, &powers, &config.phase)?;
        phases = phase_run.phases;
        let after_phases = phase_run.trajectory.last().map_or(current, |t| t.objective);
        phase_traces.push(phase_run.trajectory);

        let coeffs = wmmse_coefficients(&compose(&phases, ops)?, ops, stats)?;
        let (new_powers, power_run) = optimize_powers(&coeffs, &powers, config.power_tol, config.power_max_iters)?;
        powers = new_powers;
        let after_powers = power_run.last().map_or(after_phases, |t| t.sum_se);
        power_traces.push(power_run);

        outer.push(OuterIterate {
            iteration,
            after_phases,
            after_powers,
        });
        trajectory.push(after_powers);
        let change = (after_powers - current).abs();
        current = after_powers;
        if change < config.tolerance {
            converged = true;
            break;
        }
    }

    Ok(StartResult {
        phases,
        powers,
        trajectory,
        outer,
        phase_traces,
        power_traces,
        iterations,
        converged,
    })
}

/// Multi-start alternating optimization for sweep point `point`; starts
/// run in parallel on independent streams and are merged by index.
pub fn run_ao_at(
    ops: &PropagationOperators,
    stats: &ChannelStatistics,
    config: &AoConfig,
    point: u64,
) -> Result<AoResult> {
    config.validate()?;
    let starts: Vec<StartResult> = (0..config.num_starts)
        .into_par_iter()
        .map(|s| run_start(ops, stats, config, start_rng(config.master_seed, point, s as u64)))
        .collect::<Result<_>>()?;
    let best_start = starts
        .iter()
        .enumerate()
        .fold(0, |best, (i, s)| if s.final_se() > starts[best].final_se() { i } else { best });
    Ok(AoResult {
        best_start,
        best_phases: starts[best_start].phases.clone(),
        best_powers: starts[best_start].powers.clone(),
        best_sum_se: starts[best_start].final_se(),
        starts,
    })
}

pub fn run_ao(ops: &PropagationOperators, stats: &ChannelStatistics, config: &AoConfig) -> Result<AoResult> {
    run_ao_at(ops, stats, config, 0)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SweepAxis {
    /// Atoms per layer.
    Atoms(Vec<usize>),
    Layers(Vec<usize>),
}

impl SweepAxis {
    pub fn values(&self) -> &[usize] {
        match self {
            SweepAxis::Atoms(v) | SweepAxis::Layers(v) => v,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::Atoms(_) => "N",
            SweepAxis::Layers(_) => "L",
        }
    }

    fn apply(&self, base: &SceneParams, value: usize) -> SceneParams {
        match self {
            SweepAxis::Atoms(_) => base.with_atoms(value),
            SweepAxis::Layers(_) => base.with_layers(value),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub value: usize,
    pub mean_sum_se: f64,
    /// Best sum SE of each drop.
    pub per_drop: Vec<f64>,
}

/// Mean best sum SE over `drops` user drops for every axis value. Drop `d`
/// uses the same user positions at every axis value.
pub fn sweep(base: &SceneParams, axis: &SweepAxis, drops: usize, config: &AoConfig) -> Result<Vec<SweepPoint>> {
    if drops == 0 {
        return invalid("need at least one drop per sweep point");
    }
    let values = axis.values();
    let jobs: Vec<(usize, usize)> = (0..values.len()).flat_map(|a| (0..drops).map(move |d| (a, d))).collect();
    let results: Vec<f64> = jobs
        .par_iter()
        .map(|&(a, d)| {
            let params = axis.apply(base, values[a]);
            let scene = Scene::build(&params, drop_seed(config.master_seed, d as u64))?;
            let point = (a * drops + d) as u64;
            Ok(run_ao_at(&scene.ops, &scene.stats, config, point)?.best_sum_se)
        })
        .collect::<Result<_>>()?;
    Ok(values
        .iter()
        .enumerate()
        .map(|(a, &value)| {
            let per_drop = results[a * drops..(a + 1) * drops].to_vec();
            SweepPoint {
                value,
                mean_sum_se: per_drop.iter().sum::<f64>() / drops as f64,
                per_drop,
            }
        })
        .collect())
}
