//! Projected gradient ascent over the unit-modulus phase vectors with
//! Armijo backtracking.
//!
//! Gradients are Wirtinger derivatives with respect to `conj(φ_l)`; for a
//! real objective `f`, `df = 2 Re <∇f, dφ>` with `<a, b> = Σ conj(a_n) b_n`.
//! Every gradient is assembled from matrix-vector products against the
//! cached factors `A_l` (suffix) and `C_l` (prefix):
//!
//! * `x_k = A_l^H h_{k,LoS}`, `y_i = C_l w^1_i`, `z_i = A_l^H R G w^1_i`
//! * `∇D_k = p_k κ_k s_kk (x_k ∘ conj(y_k))` with `s_ki = h_{k,LoS}^H G w^1_i`
//! * `∇I_k = Σ_i p_i conj(y_i) ∘ z_i + Σ_{i≠k} p_i κ_k s_ki (x_k ∘ conj(y_i))`
//!
//! The optimizer itself uses [`grad_objective_propagated`], which gets the
//! same vectors by sweeping `K`-column blocks through the layers.

use std::f64::consts::LOG2_E;

use num_complex::Complex64;

use crate::cascade::{forward_beams, project_entry, CascadeState, PhaseState};
use crate::error::{invalid, Result};
use crate::metrics::{effective_beams, rate_report_from_beams, BeamTerms};
use crate::power::PowerAllocation;
use crate::propagation::{CMat, CVec, ChannelStatistics, PropagationOperators};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSearchConfig {
    pub initial_step: f64,
    pub shrink: f64,
    pub max_backtracks: usize,
    /// Start the next search from twice the last accepted step instead of
    /// `initial_step`.
    pub warm_start: bool,
}

impl Default for LineSearchConfig {
    fn default() -> Self {
        Self {
            initial_step: 1.0,
            shrink: 0.5,
            max_backtracks: 30,
            warm_start: true,
        }
    }
}

impl LineSearchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return invalid(format!("shrink factor must lie in (0, 1), got {}", self.shrink));
        }
        if !(self.initial_step > 0.0 && self.initial_step.is_finite()) {
            return invalid("initial step must be positive");
        }
        if self.max_backtracks == 0 {
            return invalid("max_backtracks must be positive");
        }
        Ok(())
    }
}

/// Joint update moves every layer per step; cyclic moves one layer per step
/// in round-robin order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UpdateMode {
    #[default]
    Joint,
    Cyclic,
}

#[derive(Debug, Clone)]
pub struct GradientBundle {
    /// `signal[l][k] = ∇_{φ_l} D_k`.
    pub signal: Vec<Vec<CVec>>,
    /// `interference[l][k] = ∇_{φ_l} I_k`.
    pub interference: Vec<Vec<CVec>>,
    /// `objective[l] = ∇_{φ_l} f`.
    pub objective: Vec<CVec>,
    pub numerators: Vec<f64>,
    pub denominators: Vec<f64>,
}

impl GradientBundle {
    pub fn norm_squared(&self) -> f64 {
        self.objective.iter().map(|g| g.norm_squared()).sum()
    }
}

/// Per-layer vectors shared by all gradient terms of that layer.
struct LayerFactors {
    /// columns `x_k`
    back_los: CMat,
    /// columns `y_i`
    forward: CMat,
    /// columns `z_i`
    back_corr: CMat,
}

struct GradientContext {
    terms: BeamTerms,
    los: CMat,
    corr_beams: CMat,
    input: CMat,
}

impl GradientContext {
    fn new(state: &CascadeState, ops: &PropagationOperators, stats: &ChannelStatistics) -> Result<Self> {
        let k_users = stats.num_users();
        let beams = effective_beams(state, ops, k_users);
        let terms = BeamTerms::new(&beams, stats)?;
        let los = CMat::from_columns(&stats.users.iter().map(|u| u.los.clone()).collect::<Vec<_>>());
        let corr_beams = stats.correlation() * &beams;
        let input = ops.input_mapping().columns(0, k_users).into_owned();
        Ok(Self {
            terms,
            los,
            corr_beams,
            input,
        })
    }

    fn layer(&self, state: &CascadeState, l: usize) -> LayerFactors {
        let suffix_h = state.suffix[l].adjoint();
        LayerFactors {
            back_los: &suffix_h * &self.los,
            forward: &state.prefix[l] * &self.input,
            back_corr: &suffix_h * &self.corr_beams,
        }
    }
}

fn hadamard_conj(x: nalgebra::DVectorView<'_, Complex64>, y: nalgebra::DVectorView<'_, Complex64>) -> CVec {
    x.zip_map(&y, |a, b| a * b.conj())
}

fn signal_gradient(
    k: usize,
    f: &LayerFactors,
    ctx: &GradientContext,
    stats: &ChannelStatistics,
    powers: &[f64],
) -> CVec {
    let scale = ctx.terms.los[(k, k)] * (powers[k] * stats.users[k].rician_factor);
    hadamard_conj(f.back_los.column(k), f.forward.column(k)) * scale
}

fn interference_gradient(
    k: usize,
    f: &LayerFactors,
    ctx: &GradientContext,
    stats: &ChannelStatistics,
    powers: &[f64],
) -> CVec {
    let n = f.forward.nrows();
    let kappa = stats.users[k].rician_factor;
    let mut grad = CVec::zeros(n);
    for i in 0..powers.len() {
        let y = f.forward.column(i);
        let z = f.back_corr.column(i);
        grad += y.zip_map(&z, |a, b| a.conj() * b) * Complex64::new(powers[i], 0.0);
        if i != k {
            let scale = ctx.terms.los[(k, i)] * (powers[i] * kappa);
            grad += hadamard_conj(f.back_los.column(k), y) * scale;
        }
    }
    grad
}

fn check_powers(stats: &ChannelStatistics, powers: &PowerAllocation) -> Result<()> {
    if powers.powers().len() != stats.num_users() {
        return invalid(format!(
            "{} powers for {} users",
            powers.powers().len(),
            stats.num_users()
        ));
    }
    Ok(())
}

/// `∇_{φ_l} D_k`.
pub fn grad_signal(
    k: usize,
    l: usize,
    state: &CascadeState,
    ops: &PropagationOperators,
    stats: &ChannelStatistics,
    powers: &PowerAllocation,
) -> Result<CVec> {
    check_powers(stats, powers)?;
    let ctx = GradientContext::new(state, ops, stats)?;
    Ok(signal_gradient(k, &ctx.layer(state, l), &ctx, stats, powers.powers()))
}

/// `∇_{φ_l} I_k`.
pub fn grad_interference(
    k: usize,
    l: usize,
    state: &CascadeState,
    ops: &PropagationOperators,
    stats: &ChannelStatistics,
    powers: &PowerAllocation,
) -> Result<CVec> {
    check_powers(stats, powers)?;
    let ctx = GradientContext::new(state, ops, stats)?;
    Ok(interference_gradient(k, &ctx.layer(state, l), &ctx, stats, powers.powers()))
}

/// Gradient of the sum SE,
/// `log2(e) Σ_k (I_k ∇D_k - D_k ∇I_k) / (I_k² (1 + γ_k))`, for every layer.
pub fn grad_objective(
    state: &CascadeState,
    ops: &PropagationOperators,
    stats: &ChannelStatistics,
    powers: &PowerAllocation,
) -> Result<GradientBundle> {
    check_powers(stats, powers)?;
    let p = powers.powers();
    let ctx = GradientContext::new(state, ops, stats)?;
    let report = crate::metrics::rate_report_from_terms(&ctx.terms, stats, p)?;
    let k_users = stats.num_users();

    let mut signal = Vec::with_capacity(state.num_layers());
    let mut interference = Vec::with_capacity(state.num_layers());
    let mut objective = Vec::with_capacity(state.num_layers());
    for l in 0..state.num_layers() {
        let factors = ctx.layer(state, l);
        let sig: Vec<CVec> = (0..k_users).map(|k| signal_gradient(k, &factors, &ctx, stats, p)).collect();
        let int: Vec<CVec> = (0..k_users)
            .map(|k| interference_gradient(k, &factors, &ctx, stats, p))
            .collect();
        objective.push(combine(&sig, &int, &report));
        signal.push(sig);
        interference.push(int);
    }
    Ok(GradientBundle {
        signal,
        interference,
        objective,
        numerators: report.numerators,
        denominators: report.denominators,
    })
}

/// Same result as [`grad_objective`], but the per-layer vectors `x_k`,
/// `y_i` and `z_i` are obtained by pushing `K`-column blocks through the
/// layers (forward for `C_l w`, adjoint for `A_l^H v`) instead of forming
/// the `N x N` factors. Costs `O(L K N²)` rather than `O(L N³)`.
pub fn grad_objective_propagated(
    phases: &PhaseState,
    ops: &PropagationOperators,
    stats: &ChannelStatistics,
    powers: &PowerAllocation,
) -> Result<GradientBundle> {
    check_powers(stats, powers)?;
    let p = powers.powers();
    let k_users = stats.num_users();
    let num_layers = phases.num_layers();
    let w = ops.layer_transfer();
    let w_h = w.adjoint();
    let scale_rows = |m: &mut CMat, phi: &CVec, conjugate: bool| {
        for (mut row, z) in m.row_iter_mut().zip(phi.iter()) {
            row *= if conjugate { z.conj() } else { *z };
        }
    };

    // forward[l] = C_l W^1
    let mut forward = Vec::with_capacity(num_layers);
    forward.push(ops.input_mapping().columns(0, k_users).into_owned());
    for l in 1..num_layers {
        let mut m = forward[l - 1].clone();
        scale_rows(&mut m, phases.layer(l - 1), false);
        forward.push(w * m);
    }
    let mut beams = forward[num_layers - 1].clone();
    scale_rows(&mut beams, phases.layer(num_layers - 1), false);

    let terms = BeamTerms::new(&beams, stats)?;
    let report = crate::metrics::rate_report_from_terms(&terms, stats, p)?;
    let los = CMat::from_columns(&stats.users.iter().map(|u| u.los.clone()).collect::<Vec<_>>());
    let corr_beams = stats.correlation() * &beams;

    // backward[l] = A_l^H [H_LoS | R G W^1]
    let mut backward = vec![CMat::zeros(0, 0); num_layers];
    let mut stacked = CMat::zeros(ops.num_atoms(), 2 * k_users);
    stacked.columns_mut(0, k_users).copy_from(&los);
    stacked.columns_mut(k_users, k_users).copy_from(&corr_beams);
    backward[num_layers - 1] = stacked;
    for l in (0..num_layers - 1).rev() {
        let mut m = backward[l + 1].clone();
        scale_rows(&mut m, phases.layer(l + 1), true);
        backward[l] = &w_h * m;
    }

    let ctx = GradientContext {
        terms,
        los,
        corr_beams,
        input: CMat::zeros(0, 0),
    };
    let mut signal = Vec::with_capacity(num_layers);
    let mut interference = Vec::with_capacity(num_layers);
    let mut objective = Vec::with_capacity(num_layers);
    for l in 0..num_layers {
        let factors = LayerFactors {
            back_los: backward[l].columns(0, k_users).into_owned(),
            forward: forward[l].clone(),
            back_corr: backward[l].columns(k_users, k_users).into_owned(),
        };
        let sig: Vec<CVec> = (0..k_users).map(|k| signal_gradient(k, &factors, &ctx, stats, p)).collect();
        let int: Vec<CVec> = (0..k_users)
            .map(|k| interference_gradient(k, &factors, &ctx, stats, p))
            .collect();
        objective.push(combine(&sig, &int, &report));
        signal.push(sig);
        interference.push(int);
    }
    Ok(GradientBundle {
        signal,
        interference,
        objective,
        numerators: report.numerators,
        denominators: report.denominators,
    })
}

fn combine(sig: &[CVec], int: &[CVec], report: &crate::metrics::RateReport) -> CVec {
    let mut total = CVec::zeros(sig[0].len());
    for k in 0..sig.len() {
        let d = report.numerators[k];
        let i = report.denominators[k];
        let weight = LOG2_E / (i * i * (1.0 + report.sinr[k]));
        total += (&sig[k] * Complex64::new(i * weight, 0.0)) - (&int[k] * Complex64::new(d * weight, 0.0));
    }
    total
}

/// Entrywise projection onto the unit circle; zeros map to `1`.
pub fn project_unit_modulus(u: &CVec) -> CVec {
    u.map(project_entry)
}

/// Sum SE for the given phases, evaluated by forward propagation of the
/// user beams only.
pub fn objective(
    phases: &PhaseState,
    ops: &PropagationOperators,
    stats: &ChannelStatistics,
    powers: &PowerAllocation,
) -> Result<f64> {
    let beams = forward_beams(phases, ops, stats.num_users());
    Ok(rate_report_from_beams(&beams, stats, powers.powers())?.sum_se)
}

/// Everything a step needs besides the phases and the gradient.
#[derive(Clone, Copy)]
pub struct StepContext<'a> {
    pub ops: &'a PropagationOperators,
    pub stats: &'a ChannelStatistics,
    pub powers: &'a PowerAllocation,
    /// Only this layer moves when set.
    pub active_layer: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub phases: PhaseState,
    /// Accepted step, `0` when no step was accepted.
    pub step: f64,
    pub objective: f64,
    pub backtracks: usize,
}

/// One projected ascent step `φ ← P(φ + μ ∇f)` with `μ = step0 · shrink^m`
/// for the smallest `m` meeting
/// `f(x) >= f(φ) + 2 Re<∇f, x - φ> - ||x - φ||² / μ`.
pub fn pga_step(
    phases: &PhaseState,
    current_objective: f64,
    bundle: &GradientBundle,
    ls: &LineSearchConfig,
    step0: f64,
    ctx: StepContext<'_>,
) -> Result<StepOutcome> {
    ls.validate()?;
    let layers: Vec<usize> = match ctx.active_layer {
        Some(l) => vec![l],
        None => (0..phases.num_layers()).collect(),
    };
    let stalled = StepOutcome {
        phases: phases.clone(),
        step: 0.0,
        objective: current_objective,
        backtracks: 0,
    };
    let grad_norm: f64 = layers.iter().map(|&l| bundle.objective[l].norm_squared()).sum();
    if grad_norm == 0.0 || !grad_norm.is_finite() {
        return Ok(stalled);
    }

    let mut step = step0;
    for m in 0..=ls.max_backtracks {
        let mut candidate = phases.layers().to_vec();
        let mut linear = 0.0;
        let mut dist_sq = 0.0;
        for &l in &layers {
            let moved = phases.layer(l) + &bundle.objective[l] * Complex64::new(step, 0.0);
            let projected = project_unit_modulus(&moved);
            let delta = &projected - phases.layer(l);
            linear += 2.0 * bundle.objective[l].dotc(&delta).re;
            dist_sq += delta.norm_squared();
            candidate[l] = projected;
        }
        let candidate = PhaseState::unconstrained(candidate);
        let value = objective(&candidate, ctx.ops, ctx.stats, ctx.powers)?;
        let model = current_objective + linear - dist_sq / step;
        if value >= model && value >= current_objective {
            return Ok(StepOutcome {
                phases: candidate,
                step,
                objective: value,
                backtracks: m,
            });
        }
        step *= ls.shrink;
    }
    Ok(StepOutcome {
        backtracks: ls.max_backtracks,
        ..stalled
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseIterate {
    pub iteration: usize,
    pub objective: f64,
    pub step: f64,
    pub backtracks: usize,
}

#[derive(Debug, Clone)]
pub struct PhaseResult {
    pub phases: PhaseState,
    /// Entry 0 is the starting point.
    pub trajectory: Vec<PhaseIterate>,
}

impl PhaseResult {
    pub fn objective(&self) -> f64 {
        self.trajectory.last().map_or(f64::NAN, |t| t.objective)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseOptions {
    pub tol: f64,
    pub max_iters: usize,
    pub line_search: LineSearchConfig,
    pub mode: UpdateMode,
}

impl Default for PhaseOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iters: 50,
            line_search: LineSearchConfig::default(),
            mode: UpdateMode::Joint,
        }
    }
}

/// Runs ascent steps until the objective moves by less than `tol` (per
/// step, or per full sweep in cyclic mode), a step stalls, or the cap is
/// reached.
pub fn optimize_phases(
    initial: &PhaseState,
    ops: &PropagationOperators,
    stats: &ChannelStatistics,
    powers: &PowerAllocation,
    options: &PhaseOptions,
) -> Result<PhaseResult> {
    options.line_search.validate()?;
    let num_layers = initial.num_layers();
    let mut phases = initial.clone();
    let mut value = objective(&phases, ops, stats, powers)?;
    let mut trajectory = vec![PhaseIterate {
        iteration: 0,
        objective: value,
        step: 0.0,
        backtracks: 0,
    }];
    let mut step0 = options.line_search.initial_step;
    let mut sweep_start = value;
    let mut stalled_layers = 0;

    for iteration in 1..=options.max_iters {
        let active_layer = match options.mode {
            UpdateMode::Joint => None,
            UpdateMode::Cyclic => Some((iteration - 1) % num_layers),
        };
        let bundle = grad_objective_propagated(&phases, ops, stats, powers)?;
        let ctx = StepContext {
            ops,
            stats,
            powers,
            active_layer,
        };
        let outcome = pga_step(&phases, value, &bundle, &options.line_search, step0, ctx)?;
        let previous = value;

        if outcome.step == 0.0 {
            match options.mode {
                UpdateMode::Joint => break,
                UpdateMode::Cyclic => {
                    stalled_layers += 1;
                    if stalled_layers == num_layers {
                        break;
                    }
                    continue;
                }
            }
        }
        stalled_layers = 0;
        phases = outcome.phases;
        phases.renormalize();
        value = outcome.objective;
        trajectory.push(PhaseIterate {
            iteration,
            objective: value,
            step: outcome.step,
            backtracks: outcome.backtracks,
        });
        step0 = if options.line_search.warm_start {
            2.0 * outcome.step
        } else {
            options.line_search.initial_step
        };

        match options.mode {
            UpdateMode::Joint => {
                if (value - previous).abs() < options.tol {
                    break;
                }
            }
            UpdateMode::Cyclic => {
                if iteration % num_layers == 0 {
                    if (value - sweep_start).abs() < options.tol {
                        break;
                    }
                    sweep_start = value;
                }
            }
        }
    }
    Ok(PhaseResult { phases, trajectory })
}
