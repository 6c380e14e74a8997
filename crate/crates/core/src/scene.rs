//! Assembles geometry, operators and channel statistics for one user drop.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::{drop_users, path_loss, SimGeometry, UserLayout};
use crate::propagation::{correlation_matrix, los_vector, thermal_noise_variance, ChannelStatistics, PropagationOperators, UserStatistics};

/// Physical parameters of a scenario, in SI units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneParams {
    pub frequency_hz: f64,
    pub num_antennas: usize,
    pub num_users: usize,
    pub num_layers: usize,
    pub atoms_per_row: usize,
    pub atoms_per_col: usize,
    pub thickness_wavelengths: f64,
    pub bs_height_m: f64,
    pub r_min_m: f64,
    pub r_max_m: f64,
    pub path_loss_exponent: f64,
    pub reference_distance_m: f64,
    pub rician_factor: f64,
    pub bandwidth_hz: f64,
    pub noise_figure_db: f64,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            frequency_hz: 2e9,
            num_antennas: 8,
            num_users: 8,
            num_layers: 4,
            atoms_per_row: 20,
            atoms_per_col: 10,
            thickness_wavelengths: 5.0,
            bs_height_m: 10.0,
            r_min_m: 60.0,
            r_max_m: 80.0,
            path_loss_exponent: 2.5,
            reference_distance_m: 1.0,
            rician_factor: 1.0,
            bandwidth_hz: 20e6,
            noise_figure_db: 0.0,
        }
    }
}

impl SceneParams {
    pub fn geometry(&self) -> Result<SimGeometry> {
        SimGeometry::from_frequency(
            self.frequency_hz,
            self.num_antennas,
            self.num_users,
            self.num_layers,
            self.atoms_per_row,
            self.atoms_per_col,
            self.thickness_wavelengths,
            self.bs_height_m,
        )
    }

    /// Square-ish grid with `n` atoms: `N_y` is the largest divisor of `n`
    /// not above `sqrt(n)`.
    pub fn with_atoms(&self, n: usize) -> Self {
        let mut rows = (n as f64).sqrt().floor() as usize;
        while rows > 1 && n % rows != 0 {
            rows -= 1;
        }
        let rows = rows.max(1);
        Self {
            atoms_per_row: n / rows,
            atoms_per_col: rows,
            ..self.clone()
        }
    }

    pub fn with_layers(&self, layers: usize) -> Self {
        Self {
            num_layers: layers,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub geometry: SimGeometry,
    pub users: UserLayout,
    pub ops: PropagationOperators,
    pub stats: ChannelStatistics,
}

impl Scene {
    pub fn build(params: &SceneParams, drop_seed: u64) -> Result<Self> {
        let geometry = params.geometry()?;
        let users = drop_users(&geometry, params.r_min_m, params.r_max_m, drop_seed)?;
        let ops = PropagationOperators::build(&geometry)?;
        let noise = thermal_noise_variance(params.bandwidth_hz, params.noise_figure_db);
        let user_stats = users
            .positions
            .iter()
            .zip(&users.distances)
            .map(|(pos, &d)| {
                Ok(UserStatistics {
                    rician_factor: params.rician_factor,
                    channel_gain: path_loss(d, geometry.wavelength(), params.path_loss_exponent, params.reference_distance_m)?,
                    noise_variance: noise,
                    los: los_vector(pos, &geometry)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let stats = ChannelStatistics::new(user_stats, correlation_matrix(&geometry)?)?;
        Ok(Self {
            geometry,
            users,
            ops,
            stats,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_factorization() {
        let p = SceneParams::default();
        for (n, nx, ny) in [(16, 4, 4), (36, 6, 6), (64, 8, 8), (200, 20, 10), (7, 7, 1), (12, 4, 3)] {
            let q = p.with_atoms(n);
            assert_eq!((q.atoms_per_row, q.atoms_per_col), (nx, ny));
        }
    }

    #[test]
    fn builds_consistent_scene() {
        let params = SceneParams {
            num_antennas: 2,
            num_users: 2,
            num_layers: 2,
            atoms_per_row: 4,
            atoms_per_col: 4,
            ..SceneParams::default()
        };
        let scene = Scene::build(&params, 3).unwrap();
        assert_eq!(scene.ops.num_atoms(), 16);
        assert_eq!(scene.stats.num_users(), 2);
        for u in &scene.stats.users {
            assert!(u.channel_gain > 0.0 && u.channel_gain < 1e-6);
            assert!((u.los.norm_squared() - 16.0).abs() < 1e-10);
        }
    }
}
