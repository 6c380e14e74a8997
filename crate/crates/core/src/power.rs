//! Power allocation for fixed phases via the weighted-MMSE reformulation:
//! closed-form receiver, MSE weights and budget-constrained power update.

use crate::error::{invalid, Result, SimError};
use crate::metrics::WmmseCoefficients;

/// Relative slack allowed on the budget.
pub const BUDGET_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct PowerAllocation {
    powers: Vec<f64>,
    budget: f64,
}

impl PowerAllocation {
    pub fn new(powers: Vec<f64>, budget: f64) -> Result<Self> {
        if !(budget.is_finite() && budget > 0.0) {
            return invalid(format!("power budget must be positive, got {budget}"));
        }
        if powers.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return invalid("powers must be finite and non-negative");
        }
        let total: f64 = powers.iter().sum();
        if total > budget * (1.0 + BUDGET_SLACK) {
            return invalid(format!("total power {total} exceeds budget {budget}"));
        }
        Ok(Self { powers, budget })
    }

    /// `P_T / K` to every user.
    pub fn uniform(num_users: usize, budget: f64) -> Self {
        Self {
            powers: vec![budget / num_users as f64; num_users],
            budget,
        }
    }

    pub fn powers(&self) -> &[f64] {
        &self.powers
    }
    pub fn budget(&self) -> f64 {
        self.budget
    }
    pub fn total(&self) -> f64 {
        self.powers.iter().sum()
    }
    pub fn is_feasible(&self) -> bool {
        self.powers.iter().all(|p| *p >= 0.0) && self.total() <= self.budget * (1.0 + BUDGET_SLACK)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WmmseState {
    pub receivers: Vec<f64>,
    pub weights: Vec<f64>,
    pub mses: Vec<f64>,
}

/// `v_k = sqrt(p_k q_k) / (p_k q_k + Σ_i C[k][i] p_i + u_k²)`.
pub fn mmse_receiver(coeffs: &WmmseCoefficients, powers: &[f64]) -> Vec<f64> {
    (0..coeffs.num_users())
        .map(|k| {
            let signal = powers[k] * coeffs.signal[k];
            signal.sqrt() / (signal + coeffs.interference_plus_noise(k, powers))
        })
        .collect()
}

/// `e_k = v_k² (p_k q_k + Σ_i C[k][i] p_i + u_k²) - 2 v_k sqrt(q_k p_k) + 1`.
pub fn mse(coeffs: &WmmseCoefficients, powers: &[f64], receivers: &[f64]) -> Vec<f64> {
    (0..coeffs.num_users())
        .map(|k| {
            let signal = powers[k] * coeffs.signal[k];
            let v = receivers[k];
            v * v * (signal + coeffs.interference_plus_noise(k, powers)) - 2.0 * v * signal.sqrt() + 1.0
        })
        .collect()
}

/// `d_k = 1 / e_k`, the minimizer of `d e - ln d`.
pub fn update_weights(mses: &[f64]) -> Result<Vec<f64>> {
    mses.iter()
        .map(|&e| {
            if e > 0.0 && e.is_finite() {
                Ok(1.0 / e)
            } else {
                invalid(format!("MSE must be positive, got {e}"))
            }
        })
        .collect()
}

/// `Σ_k d_k e_k - ln d_k`.
pub fn wmmse_objective(coeffs: &WmmseCoefficients, powers: &[f64], receivers: &[f64], weights: &[f64]) -> f64 {
    mse(coeffs, powers, receivers)
        .iter()
        .zip(weights)
        .map(|(e, d)| d * e - d.ln())
        .sum()
}

/// Exact minimizer of the weighted MSE over `p >= 0, Σp <= P_T` for fixed
/// receivers and weights.
///
/// Stationarity in `sqrt(p_k)` gives
/// `p_k = q_k d_k² v_k² / (q_k d_k v_k² + Σ_j d_j v_j² C[j][k] + η)²`;
/// `η = 0` when that fits the budget, otherwise `η` is bisected until the
/// budget is met with equality.
pub fn update_powers(
    coeffs: &WmmseCoefficients,
    receivers: &[f64],
    weights: &[f64],
    budget: f64,
) -> Result<PowerAllocation> {
    let k_users = coeffs.num_users();
    if receivers.len() != k_users || weights.len() != k_users {
        return Err(SimError::DimensionMismatch("receiver/weight length".into()));
    }
    let numer: Vec<f64> = (0..k_users)
        .map(|k| weights[k] * receivers[k] * coeffs.signal[k].sqrt())
        .collect();
    let denom: Vec<f64> = (0..k_users)
        .map(|k| {
            let cross: f64 = (0..k_users)
                .map(|j| weights[j] * receivers[j] * receivers[j] * coeffs.interference[(j, k)])
                .sum();
            weights[k] * receivers[k] * receivers[k] * coeffs.signal[k] + cross
        })
        .collect();

    if denom.iter().all(|d| *d == 0.0) {
        return Ok(PowerAllocation::uniform(k_users, budget));
    }

    let powers_at = |eta: f64| -> Vec<f64> {
        numer
            .iter()
            .zip(&denom)
            .map(|(n, d)| {
                if *n == 0.0 {
                    0.0
                } else {
                    let s = n / (d + eta);
                    s * s
                }
            })
            .collect()
    };
    let total = |p: &[f64]| p.iter().sum::<f64>();

    let mut powers = powers_at(0.0);
    if !(total(&powers) <= budget) {
        // Σ (n_k/η)² <= P_T at this η
        let mut hi = (numer.iter().map(|n| n * n).sum::<f64>() / budget).sqrt();
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if total(&powers_at(mid)) > budget {
                lo = mid;
            } else {
                hi = mid;
            }
            if (total(&powers_at(hi)) - budget).abs() <= 1e-10 * budget {
                break;
            }
        }
        powers = powers_at(hi);
    }
    for p in &mut powers {
        *p = p.min(budget);
    }
    PowerAllocation::new(powers, budget)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerIterate {
    pub sum_se: f64,
    pub powers: Vec<f64>,
}

/// Cycles receiver, weight and power updates until the sum SE moves by
/// less than `tol`. An update that would lower the sum SE is discarded and
/// ends the loop. The first trajectory entry is the starting point.
pub fn optimize_powers(
    coeffs: &WmmseCoefficients,
    initial: &PowerAllocation,
    tol: f64,
    max_iters: usize,
) -> Result<(PowerAllocation, Vec<PowerIterate>)> {
    let budget = initial.budget();
    let mut current = initial.clone();
    let mut current_se = coeffs.sum_se(current.powers());
    let mut trajectory = vec![PowerIterate {
        sum_se: current_se,
        powers: current.powers().to_vec(),
    }];

    for _ in 0..max_iters {
        let v = mmse_receiver(coeffs, current.powers());
        let e = mse(coeffs, current.powers(), &v);
        let d = update_weights(&e)?;
        let candidate = update_powers(coeffs, &v, &d, budget)?;
        let candidate_se = coeffs.sum_se(candidate.powers());
        if !(candidate_se >= current_se) {
            break;
        }
        let gain = candidate_se - current_se;
        current = candidate;
        current_se = candidate_se;
        trajectory.push(PowerIterate {
            sum_se: current_se,
            powers: current.powers().to_vec(),
        });
        if gain < tol {
            break;
        }
    }
    Ok((current, trajectory))
}

/// Receivers, weights and MSEs that are MMSE-consistent with `powers`.
pub fn wmmse_state(coeffs: &WmmseCoefficients, powers: &[f64]) -> Result<WmmseState> {
    let receivers = mmse_receiver(coeffs, powers);
    let mses = mse(coeffs, powers, &receivers);
    let weights = update_weights(&mses)?;
    Ok(WmmseState {
        receivers,
        weights,
        mses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn coeffs(signal: Vec<f64>, interference: Vec<f64>, noise: Vec<f64>) -> WmmseCoefficients {
        let k = signal.len();
        WmmseCoefficients {
            signal,
            interference: DMatrix::from_row_slice(k, k, &interference),
            noise,
        }
    }

    fn random_coeffs(k: usize, rng: &mut ChaCha20Rng) -> WmmseCoefficients {
        coeffs(
            (0..k).map(|_| rng.random_range(0.5..5.0)).collect(),
            (0..k * k).map(|_| rng.random_range(0.0..1.0)).collect(),
            (0..k).map(|_| rng.random_range(0.01..1.0)).collect(),
        )
    }

    #[test]
    fn receiver_examples() {
        let c = coeffs(vec![1.0], vec![0.0], vec![1.0]);
        assert_eq!(mmse_receiver(&c, &[1.0]), vec![0.5]);
        assert_eq!(mmse_receiver(&c, &[0.0]), vec![0.0]);
    }

    #[test]
    fn mse_at_mmse_receiver() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        for _ in 0..20 {
            let c = random_coeffs(3, &mut rng);
            let p: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..1.0)).collect();
            let v = mmse_receiver(&c, &p);
            let e = mse(&c, &p, &v);
            for (ek, g) in e.iter().zip(c.sinr(&p)) {
                assert!((ek - 1.0 / (1.0 + g)).abs() < 1e-12);
            }
            assert_eq!(mse(&c, &p, &[0.0; 3]), vec![1.0; 3]);

            // v_k is the vertex of the parabola in v_k
            let mut best = (f64::INFINITY, 0.0);
            for step in 0..=4000 {
                let t = v[0] * 2.0 * step as f64 / 4000.0;
                let e0 = mse(&c, &p, &[t, v[1], v[2]])[0];
                if e0 < best.0 {
                    best = (e0, t);
                }
            }
            assert!((best.1 - v[0]).abs() <= v[0] * 1e-3 + 1e-12);
        }
    }

    #[test]
    fn weights() {
        assert_eq!(update_weights(&[1.0]).unwrap(), vec![1.0]);
        assert!((update_weights(&[1.0 / 4.0]).unwrap()[0] - 4.0).abs() < 1e-15);
        assert!(update_weights(&[0.0]).is_err());
        assert!(update_weights(&[-1.0]).is_err());
        // d/dd [d e - ln d] = e - 1/d vanishes at d = 1/e
        let e = 0.3;
        let d = update_weights(&[e]).unwrap()[0];
        assert!((e - 1.0 / d).abs() < 1e-15);
    }

    #[test]
    fn objective_equals_rate_at_consistent_state() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        for _ in 0..20 {
            let c = random_coeffs(4, &mut rng);
            let p: Vec<f64> = (0..4).map(|_| rng.random_range(0.01..1.0)).collect();
            let s = wmmse_state(&c, &p).unwrap();
            let obj = wmmse_objective(&c, &p, &s.receivers, &s.weights);
            let rate: f64 = c.sinr(&p).iter().map(|g| (1.0 + g).ln()).sum();
            assert!((obj - (4.0 - rate)).abs() < 1e-8);
        }
    }

    #[test]
    fn block_descent_is_monotone() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        for _ in 0..30 {
            let c = random_coeffs(3, &mut rng);
            let mut p = PowerAllocation::uniform(3, 1.0);
            let mut v = vec![0.1; 3];
            let mut d = vec![1.0; 3];
            let mut last = wmmse_objective(&c, p.powers(), &v, &d);
            for _ in 0..10 {
                v = mmse_receiver(&c, p.powers());
                let o1 = wmmse_objective(&c, p.powers(), &v, &d);
                d = update_weights(&mse(&c, p.powers(), &v)).unwrap();
                let o2 = wmmse_objective(&c, p.powers(), &v, &d);
                p = update_powers(&c, &v, &d, 1.0).unwrap();
                let o3 = wmmse_objective(&c, p.powers(), &v, &d);
                let eps = 1e-10 * last.abs().max(1.0);
                assert!(o1 <= last + eps && o2 <= o1 + eps && o3 <= o2 + eps);
                last = o3;
            }
        }
    }

    #[test]
    fn update_respects_budget() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        for _ in 0..200 {
            let c = random_coeffs(4, &mut rng);
            let p: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..0.25)).collect();
            let s = wmmse_state(&c, &p).unwrap();
            let budget = rng.random_range(0.01..10.0);
            let out = update_powers(&c, &s.receivers, &s.weights, budget).unwrap();
            assert!(out.is_feasible());
            assert!(out.powers().iter().all(|x| *x <= budget));
        }
    }

    #[test]
    fn degenerate_denominators_fall_back_to_uniform() {
        let c = coeffs(vec![0.0, 0.0], vec![0.0; 4], vec![1.0, 1.0]);
        let out = update_powers(&c, &[0.0, 0.0], &[1.0, 1.0], 2.0).unwrap();
        assert_eq!(out.powers(), &[1.0, 1.0]);
    }

    #[test]
    fn symmetric_users_get_equal_power() {
        let c = coeffs(vec![2.0, 2.0], vec![0.3, 0.1, 0.1, 0.3], vec![0.5, 0.5]);
        let (p, _) = optimize_powers(&c, &PowerAllocation::uniform(2, 1.0), 1e-12, 100).unwrap();
        assert!((p.powers()[0] - p.powers()[1]).abs() < 1e-12);
    }

    #[test]
    fn single_user_takes_full_power() {
        let c = coeffs(vec![3.0], vec![0.2], vec![0.7]);
        let (p, traj) = optimize_powers(&c, &PowerAllocation::uniform(1, 2.0), 1e-12, 10).unwrap();
        assert!((p.powers()[0] - 2.0).abs() < 1e-12);
        assert!(traj.len() <= 3);

        let (p, traj) = optimize_powers(&c, &PowerAllocation::new(vec![0.3], 2.0).unwrap(), 1e-12, 100).unwrap();
        assert!((p.powers()[0] - 2.0).abs() < 1e-9);
        // grid over [0, P_T]: the rate is maximal at the budget
        let best = (0..=1000)
            .map(|i| c.sum_se(&[2.0 * i as f64 / 1000.0]))
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(traj.last().unwrap().sum_se >= best - 1e-8);
    }

    #[test]
    fn trajectory_is_monotone() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        for _ in 0..50 {
            let c = random_coeffs(4, &mut rng);
            let (p, traj) = optimize_powers(&c, &PowerAllocation::uniform(4, 1.0), 1e-10, 100).unwrap();
            assert!(p.is_feasible());
            assert!(traj.windows(2).all(|w| w[1].sum_se >= w[0].sum_se));
            assert!(traj.last().unwrap().sum_se >= c.sum_se(&[0.25; 4]));
        }
    }

    #[test]
    fn rejects_infeasible_allocations() {
        assert!(PowerAllocation::new(vec![0.6, 0.6], 1.0).is_err());
        assert!(PowerAllocation::new(vec![-0.1, 0.6], 1.0).is_err());
        assert!(PowerAllocation::new(vec![0.1], 0.0).is_err());
    }
}
