//! Closed-form statistical-CSI SINR, sum SE, WMMSE coefficient extraction
//! and the Monte-Carlo use-and-then-forget estimator that cross-checks them.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use crate::cascade::CascadeState;
use crate::error::{Result, SimError};
use crate::power::PowerAllocation;
use crate::propagation::{CMat, ChannelStatistics, PropagationOperators};

#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    pub sinr: Vec<f64>,
    pub per_user_se: Vec<f64>,
    pub sum_se: f64,
    /// `D_k`, normalized by `β_k/(1+κ_k)`.
    pub numerators: Vec<f64>,
    /// `I_k`, same normalization.
    pub denominators: Vec<f64>,
}

impl RateReport {
    fn from_parts(numerators: Vec<f64>, denominators: Vec<f64>) -> Self {
        let sinr: Vec<f64> = numerators.iter().zip(&denominators).map(|(d, i)| d / i).collect();
        let per_user_se: Vec<f64> = sinr.iter().map(|g| (1.0 + g).log2()).collect();
        let sum_se = per_user_se.iter().sum();
        Self {
            sinr,
            per_user_se,
            sum_se,
            numerators,
            denominators,
        }
    }
}

/// `Σ_k log2(1 + γ_k)`.
pub fn sum_se(report: &RateReport) -> f64 {
    sum_se_of(&report.sinr)
}

pub fn sum_se_of(sinr: &[f64]) -> f64 {
    sinr.iter().map(|g| (1.0 + g).log2()).sum()
}

/// Second-order statistics of the effective beams `g_i = G w^1_i` that every
/// closed-form quantity is built from.
#[derive(Debug, Clone)]
pub struct BeamTerms {
    /// `los[(k, i)] = h_{k,LoS}^H g_i`.
    pub los: DMatrix<Complex64>,
    /// `trace[i] = g_i^H R g_i = tr(G w_i w_i^H G^H R)`.
    pub trace: DVector<f64>,
}

impl BeamTerms {
    /// `beams` is `N x K` with column `i` equal to `g_i`.
    pub fn new(beams: &CMat, stats: &ChannelStatistics) -> Result<Self> {
        let k_users = stats.num_users();
        if beams.ncols() < k_users || beams.nrows() != stats.num_atoms() {
            return Err(SimError::DimensionMismatch(format!(
                "beams are {}x{}, need {}x{}",
                beams.nrows(),
                beams.ncols(),
                stats.num_atoms(),
                k_users
            )));
        }
        let r_beams = stats.correlation() * beams.columns(0, k_users);
        let mut trace = DVector::zeros(k_users);
        for i in 0..k_users {
            // quadratic form; real up to rounding for Hermitian R
            trace[i] = beams.column(i).dotc(&r_beams.column(i)).re.max(0.0);
        }
        let los = DMatrix::from_fn(k_users, k_users, |k, i| stats.users[k].los.dotc(&beams.column(i)));
        Ok(Self { los, trace })
    }
}

/// Closed-form SINR for effective beams `G W^1` (column per user).
pub fn rate_report_from_beams(beams: &CMat, stats: &ChannelStatistics, powers: &[f64]) -> Result<RateReport> {
    let terms = BeamTerms::new(beams, stats)?;
    rate_report_from_terms(&terms, stats, powers)
}

pub fn rate_report_from_terms(terms: &BeamTerms, stats: &ChannelStatistics, powers: &[f64]) -> Result<RateReport> {
    let k_users = stats.num_users();
    if powers.len() != k_users {
        return Err(SimError::DimensionMismatch(format!(
            "{} powers for {k_users} users",
            powers.len()
        )));
    }
    if powers.iter().any(|p| !p.is_finite()) {
        return Err(SimError::NonFinite("power allocation"));
    }
    let shared: f64 = (0..k_users).map(|i| powers[i] * terms.trace[i]).sum();
    let mut numerators = Vec::with_capacity(k_users);
    let mut denominators = Vec::with_capacity(k_users);
    for k in 0..k_users {
        let kappa = stats.users[k].rician_factor;
        numerators.push(powers[k] * kappa * terms.los[(k, k)].norm_sqr());
        let leakage: f64 = (0..k_users)
            .filter(|&i| i != k)
            .map(|i| powers[i] * kappa * terms.los[(k, i)].norm_sqr())
            .sum();
        denominators.push(shared + leakage + stats.effective_noise(k));
    }
    if numerators.iter().chain(&denominators).any(|v| !v.is_finite()) {
        return Err(SimError::NonFinite("SINR terms"));
    }
    Ok(RateReport::from_parts(numerators, denominators))
}

/// Closed-form achievable SINR of every user for a composed SIM.
pub fn sinr_closed_form(
    state: &CascadeState,
    ops: &PropagationOperators,
    stats: &ChannelStatistics,
    powers: &PowerAllocation,
) -> Result<RateReport> {
    let beams = effective_beams(state, ops, stats.num_users());
    rate_report_from_beams(&beams, stats, powers.powers())
}

pub(crate) fn effective_beams(state: &CascadeState, ops: &PropagationOperators, k_users: usize) -> CMat {
    &state.g * ops.input_mapping().columns(0, k_users)
}

/// SINR of each user as `p_k q_k / (Σ_i C[k][i] p_i + u_k²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WmmseCoefficients {
    pub signal: Vec<f64>,
    /// `interference[(k, i)]` multiplies `p_i` in user `k`'s denominator.
    pub interference: DMatrix<f64>,
    pub noise: Vec<f64>,
}

impl WmmseCoefficients {
    pub fn from_terms(terms: &BeamTerms, stats: &ChannelStatistics) -> Self {
        let k_users = stats.num_users();
        let signal = (0..k_users)
            .map(|k| stats.users[k].rician_factor * terms.los[(k, k)].norm_sqr())
            .collect();
        let interference = DMatrix::from_fn(k_users, k_users, |k, i| {
            if i == k {
                terms.trace[i]
            } else {
                terms.trace[i] + stats.users[k].rician_factor * terms.los[(k, i)].norm_sqr()
            }
        });
        let noise = (0..k_users).map(|k| stats.effective_noise(k)).collect();
        Self {
            signal,
            interference,
            noise,
        }
    }

    pub fn num_users(&self) -> usize {
        self.signal.len()
    }

    /// Interference-plus-noise seen by user `k`.
    pub fn interference_plus_noise(&self, k: usize, powers: &[f64]) -> f64 {
        self.interference.row(k).iter().zip(powers).map(|(c, p)| c * p).sum::<f64>() + self.noise[k]
    }

    pub fn sinr(&self, powers: &[f64]) -> Vec<f64> {
        (0..self.num_users())
            .map(|k| powers[k] * self.signal[k] / self.interference_plus_noise(k, powers))
            .collect()
    }

    pub fn sum_se(&self, powers: &[f64]) -> f64 {
        sum_se_of(&self.sinr(powers))
    }
}

pub fn wmmse_coefficients(
    state: &CascadeState,
    ops: &PropagationOperators,
    stats: &ChannelStatistics,
) -> Result<WmmseCoefficients> {
    let beams = effective_beams(state, ops, stats.num_users());
    let terms = BeamTerms::new(&beams, stats)?;
    Ok(WmmseCoefficients::from_terms(&terms, stats))
}

/// Monte-Carlo estimate of the use-and-then-forget SINR.
#[derive(Debug, Clone)]
pub struct McEstimate {
    pub sinr: Vec<f64>,
    /// Delta-method standard error of each SINR estimate.
    pub std_err: Vec<f64>,
    pub num_samples: usize,
}

const MC_BLOCK: usize = 2048;

/// Per-user running sums of `X = (Re z_kk, Im z_kk, |z_k1|², ..., |z_kK|²)`
/// and of `X X^T`, where `z_ki = h_k^H g_i`.
#[derive(Clone)]
struct MomentSums {
    count: usize,
    first: Vec<DVector<f64>>,
    second: Vec<DMatrix<f64>>,
}

impl MomentSums {
    fn new(k_users: usize) -> Self {
        Self {
            count: 0,
            first: vec![DVector::zeros(k_users + 2); k_users],
            second: vec![DMatrix::zeros(k_users + 2, k_users + 2); k_users],
        }
    }

    fn merge(mut self, other: &Self) -> Self {
        self.count += other.count;
        for k in 0..self.first.len() {
            self.first[k] += &other.first[k];
            self.second[k] += &other.second[k];
        }
        self
    }
}

/// Estimates `|E{h_k^H G w_k}|²` and `E{|h_k^H G w_i|²}` from `num_samples`
/// channel draws and assembles the UatF SINR. Sample blocks run in parallel
/// on independent RNG streams and are merged in block order, so the result
/// depends only on `seed`.
pub fn sinr_uatf_mc(
    state: &CascadeState,
    ops: &PropagationOperators,
    stats: &ChannelStatistics,
    powers: &PowerAllocation,
    num_samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    if num_samples == 0 {
        return Err(SimError::InvalidArgument("need at least one Monte-Carlo sample".into()));
    }
    let k_users = stats.num_users();
    let p = powers.powers();
    let beams = effective_beams(state, ops, k_users);
    let num_blocks = num_samples.div_ceil(MC_BLOCK);

    let blocks: Vec<MomentSums> = (0..num_blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            let len = MC_BLOCK.min(num_samples - b * MC_BLOCK);
            let mut acc = MomentSums::new(k_users);
            let mut x = DVector::<f64>::zeros(k_users + 2);
            for _ in 0..len {
                for k in 0..k_users {
                    let h = stats.sample_channel(k, &mut rng);
                    let own = h.dotc(&beams.column(k));
                    x[0] = own.re;
                    x[1] = own.im;
                    for i in 0..k_users {
                        x[2 + i] = if i == k { own.norm_sqr() } else { h.dotc(&beams.column(i)).norm_sqr() };
                    }
                    acc.first[k] += &x;
                    acc.second[k].ger(1.0, &x, &x, 1.0);
                }
                acc.count += 1;
            }
            acc
        })
        .collect();

    let total = blocks
        .iter()
        .fold(MomentSums::new(k_users), |acc, b| acc.merge(b));
    let n = total.count as f64;

    let mut sinr = Vec::with_capacity(k_users);
    let mut std_err = Vec::with_capacity(k_users);
    for k in 0..k_users {
        let mean = &total.first[k] / n;
        let mut cov = &total.second[k] / n - &mean * mean.transpose();
        if total.count > 1 {
            cov *= n / (n - 1.0);
        }
        let signal = mean[0] * mean[0] + mean[1] * mean[1];
        let received: f64 = (0..k_users).map(|i| p[i] * mean[2 + i]).sum();
        let den = received - p[k] * signal + stats.users[k].noise_variance;
        let gamma = p[k] * signal / den;

        let mut grad = DVector::<f64>::zeros(k_users + 2);
        let d_signal = p[k] * (den + p[k] * signal) / (den * den);
        grad[0] = d_signal * 2.0 * mean[0];
        grad[1] = d_signal * 2.0 * mean[1];
        for i in 0..k_users {
            grad[2 + i] = -p[k] * signal * p[i] / (den * den);
        }
        let var = (grad.transpose() * &cov * &grad)[(0, 0)] / n;
        sinr.push(gamma);
        std_err.push(var.max(0.0).sqrt());
    }
    Ok(McEstimate {
        sinr,
        std_err,
        num_samples,
    })
}
