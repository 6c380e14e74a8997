use nalgebra::DMatrix;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use simwave::cascade::PhaseState;
use simwave::geometry::{drop_users, path_loss, SimGeometry};
use simwave::metrics::WmmseCoefficients;
use simwave::phase::{grad_objective_propagated, objective, pga_step, project_unit_modulus, LineSearchConfig, StepContext};
use simwave::power::{optimize_powers, update_powers, wmmse_state, PowerAllocation, BUDGET_SLACK};
use simwave::propagation::{correlation_matrix, CVec, PropagationOperators};
use simwave::scene::{Scene, SceneParams};

fn small_scene(nx: usize, ny: usize, layers: usize, seed: u64) -> Scene {
    let params = SceneParams {
        num_antennas: 2,
        num_users: 2,
        num_layers: layers,
        atoms_per_row: nx,
        atoms_per_col: ny,
        ..SceneParams::default()
    };
    Scene::build(&params, seed).unwrap()
}

fn coefficients() -> impl Strategy<Value = WmmseCoefficients> {
    (2usize..5).prop_flat_map(|k| {
        (
            prop::collection::vec(1e-3f64..10.0, k),
            prop::collection::vec(0.0f64..5.0, k * k),
            prop::collection::vec(1e-4f64..1.0, k),
        )
            .prop_map(move |(signal, inter, noise)| WmmseCoefficients {
                signal,
                interference: DMatrix::from_vec(k, k, inter),
                noise,
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn projection_lands_on_unit_circle(re in prop::collection::vec(-5.0f64..5.0, 1..20), im_scale in -3.0f64..3.0) {
        let u = CVec::from_iterator(re.len(), re.iter().map(|&r| Complex64::new(r, r * im_scale + 0.1)));
        let p = project_unit_modulus(&u);
        for (a, b) in u.iter().zip(p.iter()) {
            prop_assert!((b.norm() - 1.0).abs() < 1e-14);
            prop_assert!((b.arg() - a.arg()).abs() < 1e-12 || a.norm() == 0.0);
        }
    }

    #[test]
    fn correlation_is_hermitian_psd_with_unit_diagonal(nx in 1usize..6, ny in 1usize..6) {
        let geo = SimGeometry::from_frequency(2e9, 1, 1, 2, nx, ny, 5.0, 10.0).unwrap();
        let r = correlation_matrix(&geo).unwrap();
        prop_assert!((&r - r.adjoint()).norm() < 1e-14);
        for i in 0..r.nrows() {
            prop_assert!((r[(i, i)] - Complex64::new(1.0, 0.0)).norm() < 1e-14);
        }
        let eig = nalgebra::SymmetricEigen::new(r.clone());
        prop_assert!(eig.eigenvalues.iter().all(|&e| e > -1e-10));
    }

    #[test]
    fn layer_transfer_is_symmetric(nx in 1usize..5, ny in 1usize..5, layers in 2usize..5) {
        let geo = SimGeometry::from_frequency(2e9, 2, 1, layers, nx, ny, 5.0, 10.0).unwrap();
        let ops = PropagationOperators::build(&geo).unwrap();
        let w = ops.layer_transfer();
        prop_assert!((w - w.transpose()).norm() <= 1e-12 * w.norm());
    }

    #[test]
    fn users_stay_in_the_distance_band(seed in any::<u64>(), r_min in 10.0f64..50.0, width in 0.0f64..40.0) {
        let geo = SimGeometry::from_frequency(2e9, 4, 4, 2, 3, 3, 5.0, 10.0).unwrap();
        let users = drop_users(&geo, r_min, r_min + width, seed).unwrap();
        let c = geo.sim_center();
        for p in &users.positions {
            let horizontal = (p[0] - c[0]).hypot(p[1] - c[1]);
            prop_assert!(horizontal >= r_min - 1e-9 && horizontal <= r_min + width + 1e-9);
            prop_assert!(p[0] >= c[0]);
        }
    }

    #[test]
    fn path_loss_decreases_with_distance(d in 1.0f64..500.0, extra in 0.1f64..100.0, alpha in 2.0f64..4.0) {
        let a = path_loss(d, 0.15, alpha, 1.0).unwrap();
        let b = path_loss(d + extra, 0.15, alpha, 1.0).unwrap();
        prop_assert!(b < a);
    }

    #[test]
    fn power_update_respects_budget(c in coefficients(), budget in 0.01f64..10.0) {
        let k = c.signal.len();
        let start = PowerAllocation::uniform(k, budget);
        let st = wmmse_state(&c, start.powers()).unwrap();
        let p = update_powers(&c, &st.receivers, &st.weights, budget).unwrap();
        prop_assert!(p.powers().iter().all(|&x| x >= 0.0));
        prop_assert!(p.total() <= budget * (1.0 + BUDGET_SLACK));
    }

    #[test]
    fn power_loop_never_loses_rate(c in coefficients(), budget in 0.01f64..10.0) {
        let k = c.signal.len();
        let start = PowerAllocation::uniform(k, budget);
        let (p, traj) = optimize_powers(&c, &start, 1e-8, 100).unwrap();
        prop_assert!(c.sum_se(p.powers()) >= c.sum_se(start.powers()));
        for w in traj.windows(2) {
            prop_assert!(w[1].sum_se >= w[0].sum_se);
        }
    }

    #[test]
    fn mse_matches_sinr_at_mmse_receiver(c in coefficients(), budget in 0.01f64..10.0) {
        let k = c.signal.len();
        let p = PowerAllocation::uniform(k, budget);
        let st = wmmse_state(&c, p.powers()).unwrap();
        for (e, g) in st.mses.iter().zip(c.sinr(p.powers())) {
            prop_assert!((e - 1.0 / (1.0 + g)).abs() < 1e-10);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn objective_ignores_a_global_phase_per_layer(seed in any::<u64>(), layer in 0usize..3, angle in 0.0f64..6.283) {
        let scene = small_scene(3, 2, 3, seed);
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let phases = PhaseState::random(3, 6, &mut rng);
        let p = PowerAllocation::new(vec![0.3, 0.7], 1.0).unwrap();
        let mut layers = phases.layers().to_vec();
        layers[layer] *= Complex64::from_polar(1.0, angle);
        let rotated = PhaseState::new(layers).unwrap();
        let a = objective(&phases, &scene.ops, &scene.stats, &p).unwrap();
        let b = objective(&rotated, &scene.ops, &scene.stats, &p).unwrap();
        prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
    }

    #[test]
    fn ascent_step_never_decreases(seed in any::<u64>(), step0 in 1e-3f64..1e3) {
        let scene = small_scene(3, 3, 2, seed);
        let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x5a5a);
        let phases = PhaseState::random(2, 9, &mut rng);
        let p = PowerAllocation::new(vec![0.5, 0.5], 1.0).unwrap();
        let f = objective(&phases, &scene.ops, &scene.stats, &p).unwrap();
        let bundle = grad_objective_propagated(&phases, &scene.ops, &scene.stats, &p).unwrap();
        let ctx = StepContext { ops: &scene.ops, stats: &scene.stats, powers: &p, active_layer: None };
        let out = pga_step(&phases, f, &bundle, &LineSearchConfig::default(), step0, ctx).unwrap();
        prop_assert!(out.objective >= f);
        prop_assert!(out.phases.max_modulus_error() < 1e-12);
    }
}
