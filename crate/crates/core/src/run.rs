//! Batch modes behind the command-line tool. Each mode computes all of its
//! artifacts in memory; nothing touches the disk until the run succeeded.

use std::path::Path;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::ao::{derive_seed, drop_seed, run_ao_at, sweep, SweepAxis};
use crate::cascade::{compose, forward_beams, PhaseState};
use crate::config::RunConfig;
use crate::error::Result;
use crate::io::{self, Metadata, RateRow};
use crate::metrics::{rate_report_from_beams, sinr_closed_form, sinr_uatf_mc};
use crate::phase::grad_objective_propagated;
use crate::power::PowerAllocation;
use crate::propagation::{standard_complex_normal, ChannelStatistics, CVec, PropagationOperators};
use crate::scene::Scene;

pub const MC_TOLERANCE: f64 = 0.02;
pub const GRADIENT_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Validate,
    Ao,
    SweepN,
    SweepL,
    Converge,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Validate => "validate",
            Mode::Ao => "ao",
            Mode::SweepN => "sweep-n",
            Mode::SweepL => "sweep-l",
            Mode::Converge => "converge",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub artifacts: Vec<Artifact>,
    /// Human-readable summary lines.
    pub report: Vec<String>,
    pub passed: bool,
}

pub fn execute(mode: Mode, config: &RunConfig) -> Result<RunOutcome> {
    let meta = Metadata {
        seed: config.seed,
        resolved_config: config.resolved_json(),
    };
    match mode {
        Mode::Validate => validate(config),
        Mode::Ao => run_single(config, &meta),
        Mode::SweepN => run_sweep(config, &meta, SweepAxis::Atoms(config.experiment.sweep_atoms.clone()), "sweep_n.csv"),
        Mode::SweepL => run_sweep(config, &meta, SweepAxis::Layers(config.experiment.sweep_layers.clone()), "sweep_l.csv"),
        Mode::Converge => run_converge(config, &meta),
    }
}

pub fn write_artifacts(dir: &Path, artifacts: &[Artifact]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for a in artifacts {
        std::fs::write(dir.join(&a.name), &a.bytes)?;
    }
    Ok(())
}

fn plot_artifact() -> Artifact {
    Artifact {
        name: "plot.py".into(),
        bytes: io::PLOT_SCRIPT.as_bytes().to_vec(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheck {
    pub signal: f64,
    pub interference: f64,
    pub objective: f64,
}

impl GradientCheck {
    pub fn worst(&self) -> f64 {
        self.signal.max(self.interference).max(self.objective)
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

/// Relative error between `2 Re <∇, δ>` and a difference quotient along a
/// random unit direction `δ`, worst case over users. `central` selects
/// `(f(φ+εδ) - f(φ-εδ)) / 2ε` over the forward quotient.
pub fn directional_gradient_check(
    phases: &PhaseState,
    ops: &PropagationOperators,
    stats: &ChannelStatistics,
    powers: &PowerAllocation,
    eps: f64,
    central: bool,
    rng: &mut ChaCha20Rng,
) -> Result<GradientCheck> {
    let k_users = stats.num_users();
    let p = powers.powers();
    let bundle = grad_objective_propagated(phases, ops, stats, powers)?;
    let mut delta: Vec<CVec> = (0..phases.num_layers())
        .map(|_| CVec::from_fn(phases.num_atoms(), |_, _| standard_complex_normal(rng)))
        .collect();
    let norm = delta.iter().map(|d| d.norm_squared()).sum::<f64>().sqrt();
    delta.iter_mut().for_each(|d| *d /= Complex64::new(norm, 0.0));
    let shifted = |t: f64| {
        PhaseState::unconstrained(
            phases
                .layers()
                .iter()
                .zip(&delta)
                .map(|(v, d)| v + d * Complex64::new(t, 0.0))
                .collect(),
        )
    };
    let eval = |ph: &PhaseState| rate_report_from_beams(&forward_beams(ph, ops, k_users), stats, p);
    let base = eval(phases)?;
    let plus = eval(&shifted(eps))?;
    let (minus, span) = if central { (eval(&shifted(-eps))?, 2.0 * eps) } else { (base.clone(), eps) };
    let predict = |g: &[CVec]| -> f64 { g.iter().zip(&delta).map(|(gl, dl)| 2.0 * gl.dotc(dl).re).sum() };

    let mut check = GradientCheck {
        signal: 0.0,
        interference: 0.0,
        objective: 0.0,
    };
    for k in 0..k_users {
        let sig: Vec<CVec> = bundle.signal.iter().map(|l| l[k].clone()).collect();
        let int: Vec<CVec> = bundle.interference.iter().map(|l| l[k].clone()).collect();
        let fd_sig = (plus.numerators[k] - minus.numerators[k]) / span;
        let fd_int = (plus.denominators[k] - minus.denominators[k]) / span;
        check.signal = check.signal.max(rel(fd_sig, predict(&sig)));
        check.interference = check.interference.max(rel(fd_int, predict(&int)));
    }
    let fd_obj = (plus.sum_se - minus.sum_se) / span;
    check.objective = rel(fd_obj, predict(&bundle.objective));
    Ok(check)
}

fn validate(config: &RunConfig) -> Result<RunOutcome> {
    let params = config.scene_params();
    let scene = Scene::build(&params, drop_seed(config.seed, 0))?;
    let ao = config.ao_config();
    let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(config.seed, u64::MAX - 1, 0));
    let phases = PhaseState::random(params.num_layers, scene.ops.num_atoms(), &mut rng);
    let powers = PowerAllocation::uniform(params.num_users, ao.power_budget);

    let state = compose(&phases, &scene.ops)?;
    let closed = sinr_closed_form(&state, &scene.ops, &scene.stats, &powers)?;
    let mc = sinr_uatf_mc(
        &state,
        &scene.ops,
        &scene.stats,
        &powers,
        config.experiment.mc_samples,
        derive_seed(config.seed, u64::MAX - 1, 1),
    )?;
    let mc_err = closed
        .sinr
        .iter()
        .zip(&mc.sinr)
        .map(|(&c, &m)| rel(m, c))
        .fold(0.0, f64::max);

    let grad = directional_gradient_check(&phases, &scene.ops, &scene.stats, &powers, 1e-6, true, &mut rng)?;
    let grad_err = grad.worst();

    let mc_ok = mc_err < MC_TOLERANCE;
    let grad_ok = grad_err < GRADIENT_TOLERANCE;
    let verdict = |ok: bool| if ok { "PASS" } else { "FAIL" };
    Ok(RunOutcome {
        artifacts: Vec::new(),
        report: vec![
            format!("{} mc_rel_err = {mc_err:.3e} (< {MC_TOLERANCE})", verdict(mc_ok)),
            format!("{} grad_rel_err = {grad_err:.3e} (< {GRADIENT_TOLERANCE:e})", verdict(grad_ok)),
        ],
        passed: mc_ok && grad_ok,
    })
}

fn run_single(config: &RunConfig, meta: &Metadata) -> Result<RunOutcome> {
    let params = config.scene_params();
    let ao = config.ao_config();
    let scene = Scene::build(&params, drop_seed(config.seed, 0))?;
    let result = run_ao_at(&scene.ops, &scene.stats, &ao, 0)?;
    let state = compose(&result.best_phases, &scene.ops)?;
    let report = sinr_closed_form(&state, &scene.ops, &scene.stats, &result.best_powers)?;
    let row = RateRow {
        run_id: "ao-0".into(),
        num_atoms: scene.ops.num_atoms(),
        num_layers: params.num_layers,
        power_budget_dbm: config.optimizer.power_budget_dbm,
        seed: config.seed,
        sinr: report.sinr.clone(),
        sum_se: report.sum_se,
    };
    let best = &result.starts[result.best_start];
    // passes after the first repeat the previous pass's end point at index 0
    let phase_iterates: Vec<_> = best
        .phase_traces
        .iter()
        .enumerate()
        .flat_map(|(i, t)| t.iter().skip(usize::from(i > 0)).cloned())
        .collect();
    let power_iterates: Vec<_> = best
        .power_traces
        .iter()
        .enumerate()
        .flat_map(|(i, t)| t.iter().skip(usize::from(i > 0)).cloned())
        .collect();

    let mut artifacts = vec![
        Artifact {
            name: "rates.csv".into(),
            bytes: io::rates_csv(meta, &[row])?,
        },
        Artifact {
            name: "phase_trajectory.csv".into(),
            bytes: io::phase_trajectory_csv(meta, &phase_iterates)?,
        },
        Artifact {
            name: "power_trajectory.csv".into(),
            bytes: io::power_trajectory_csv(meta, &power_iterates)?,
        },
    ];
    if config.output.dump_operators {
        for (name, m) in [
            ("layer_transfer.bin", scene.ops.layer_transfer()),
            ("input_mapping.bin", scene.ops.input_mapping()),
            ("correlation.bin", scene.stats.correlation()),
        ] {
            artifacts.push(Artifact {
                name: name.into(),
                bytes: io::matrix_bytes(m),
            });
        }
    }
    Ok(RunOutcome {
        artifacts,
        report: vec![
            format!("best sum SE = {:.6} bit/s/Hz (start {})", result.best_sum_se, result.best_start + 1),
            format!("outer iterations per start = {:?}", result.iterations_to_converge()),
        ],
        passed: true,
    })
}

fn run_sweep(config: &RunConfig, meta: &Metadata, axis: SweepAxis, file: &str) -> Result<RunOutcome> {
    let points = sweep(&config.scene_params(), &axis, config.experiment.drops, &config.ao_config())?;
    let label = match axis {
        SweepAxis::Atoms(_) => "N",
        SweepAxis::Layers(_) => "L",
    };
    let report = points
        .iter()
        .map(|p| format!("{label} = {}: mean sum SE = {:.6}", p.value, p.mean_sum_se))
        .collect();
    Ok(RunOutcome {
        artifacts: vec![
            Artifact {
                name: file.into(),
                bytes: io::sweep_csv(meta, label, &points)?,
            },
            plot_artifact(),
        ],
        report,
        passed: true,
    })
}

fn run_converge(config: &RunConfig, meta: &Metadata) -> Result<RunOutcome> {
    let scene = Scene::build(&config.scene_params(), drop_seed(config.seed, 0))?;
    let result = run_ao_at(&scene.ops, &scene.stats, &config.ao_config(), 0)?;
    let trajectories: Vec<Vec<f64>> = result.starts.iter().map(|s| s.trajectory.clone()).collect();
    let finals: Vec<f64> = result.starts.iter().map(|s| s.final_se()).collect();
    Ok(RunOutcome {
        artifacts: vec![
            Artifact {
                name: "converge.csv".into(),
                bytes: io::convergence_csv(meta, &trajectories)?,
            },
            plot_artifact(),
        ],
        report: vec![
            format!("final sum SE per start = {finals:?}"),
            format!("relative spread = {:.4}", relative_spread(&finals)),
            format!(
                "converged = {:?}",
                result.starts.iter().map(|s| s.converged).collect::<Vec<_>>()
            ),
        ],
        passed: true,
    })
}

/// `(max - min) / max` over the values.
pub fn relative_spread(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    (max - min) / max
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desk() -> RunConfig {
        RunConfig::from_json(
            r#"{"geometry": {"num_antennas": 2, "num_users": 2, "num_layers": 2, "atoms_per_row": 4, "atoms_per_col": 4},
                "optimizer": {"num_starts": 2, "max_outer_iters": 5}}"#,
        )
        .unwrap()
    }

    #[test]
    fn validate_passes_on_desk_scale() {
        let out = execute(Mode::Validate, &desk()).unwrap();
        assert!(out.passed, "{:?}", out.report);
        assert!(out.artifacts.is_empty());
    }

    #[test]
    fn ao_emits_tables_and_optional_dumps() {
        let mut config = desk();
        config.output.dump_operators = true;
        let out = execute(Mode::Ao, &config).unwrap();
        let names: Vec<&str> = out.artifacts.iter().map(|a| a.name.as_str()).collect();
        assert_eq!(
            names,
            ["rates.csv", "phase_trajectory.csv", "power_trajectory.csv", "layer_transfer.bin", "input_mapping.bin", "correlation.bin"]
        );
        let w = io::read_matrix(&mut out.artifacts[3].bytes.as_slice()).unwrap();
        assert_eq!(w.shape(), (16, 16));
    }

    #[test]
    fn spread_of_equal_values_is_zero() {
        assert_eq!(relative_spread(&[2.0, 2.0]), 0.0);
        assert!((relative_spread(&[4.0, 3.0, 3.8]) - 0.25).abs() < 1e-15);
    }
}
