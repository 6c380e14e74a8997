//! Physical layout of the transmitter: antenna line, metasurface layers,
//! meta-atom grid, user drops and large-scale path loss.
//!
//! Coordinates: layers are parallel planes stacked along `+x`. The antenna
//! line sits at `x = 0`, layer `l` (1-based) at `x = l * d_SIM`. Each layer is
//! an `N_x x N_y` grid in the `y-z` plane centered at height `H_BS`. Users
//! stand on the ground (`z = 0`) in front of the last layer.
//!
//! Atom and antenna indices are 0-based throughout the crate.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{invalid, Result};

pub type Point3 = [f64; 3];

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SimGeometry {
    num_antennas: usize,
    num_users: usize,
    num_layers: usize,
    atoms_per_row: usize,
    atoms_per_col: usize,
    wavelength: f64,
    sim_thickness: f64,
    bs_height: f64,
}

impl SimGeometry {
    /// Build a layout with half-wavelength atom pitch and `(λ/2)²` atom area.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        num_antennas: usize,
        num_users: usize,
        num_layers: usize,
        atoms_per_row: usize,
        atoms_per_col: usize,
        wavelength: f64,
        sim_thickness: f64,
        bs_height: f64,
    ) -> Result<Self> {
        if num_antennas == 0 || num_users == 0 || num_layers == 0 {
            return invalid("antenna, user and layer counts must be positive");
        }
        if atoms_per_row == 0 || atoms_per_col == 0 {
            return invalid("atom grid dimensions must be positive");
        }
        if num_users > num_antennas {
            return invalid(format!(
                "each user is fed by its own antenna: need N_t >= K, got N_t={num_antennas}, K={num_users}"
            ));
        }
        for (name, v) in [
            ("wavelength", wavelength),
            ("sim_thickness", sim_thickness),
            ("bs_height", bs_height),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return invalid(format!("{name} must be finite and positive, got {v}"));
            }
        }
        Ok(Self {
            num_antennas,
            num_users,
            num_layers,
            atoms_per_row,
            atoms_per_col,
            wavelength,
            sim_thickness,
            bs_height,
        })
    }

    pub fn from_frequency(
        frequency_hz: f64,
        num_antennas: usize,
        num_users: usize,
        num_layers: usize,
        atoms_per_row: usize,
        atoms_per_col: usize,
        thickness_wavelengths: f64,
        bs_height: f64,
    ) -> Result<Self> {
        if !(frequency_hz.is_finite() && frequency_hz > 0.0) {
            return invalid(format!("frequency must be positive, got {frequency_hz}"));
        }
        let wavelength = SPEED_OF_LIGHT / frequency_hz;
        Self::new(
            num_antennas,
            num_users,
            num_layers,
            atoms_per_row,
            atoms_per_col,
            wavelength,
            thickness_wavelengths * wavelength,
            bs_height,
        )
    }

    pub fn num_antennas(&self) -> usize {
        self.num_antennas
    }
    pub fn num_users(&self) -> usize {
        self.num_users
    }
    pub fn num_layers(&self) -> usize {
        self.num_layers
    }
    pub fn atoms_per_row(&self) -> usize {
        self.atoms_per_row
    }
    pub fn atoms_per_col(&self) -> usize {
        self.atoms_per_col
    }
    /// `N = N_x * N_y`.
    pub fn atoms_per_layer(&self) -> usize {
        self.atoms_per_row * self.atoms_per_col
    }
    pub fn wavelength(&self) -> f64 {
        self.wavelength
    }
    /// Horizontal and vertical pitch, both `λ/2`.
    pub fn element_spacing(&self) -> f64 {
        self.wavelength / 2.0
    }
    pub fn atom_area(&self) -> f64 {
        self.element_spacing().powi(2)
    }
    pub fn sim_thickness(&self) -> f64 {
        self.sim_thickness
    }
    /// `d_SIM = T_SIM / L`.
    pub fn layer_spacing(&self) -> f64 {
        self.sim_thickness / self.num_layers as f64
    }
    pub fn bs_height(&self) -> f64 {
        self.bs_height
    }

    /// Same layout with a different layer count (thickness held fixed).
    pub fn with_layers(&self, num_layers: usize) -> Result<Self> {
        Self::new(
            self.num_antennas,
            self.num_users,
            num_layers,
            self.atoms_per_row,
            self.atoms_per_col,
            self.wavelength,
            self.sim_thickness,
            self.bs_height,
        )
    }

    fn check_atom(&self, n: usize) -> Result<()> {
        if n >= self.atoms_per_layer() {
            return invalid(format!(
                "atom index {n} out of range for N={}",
                self.atoms_per_layer()
            ));
        }
        Ok(())
    }

    /// Column index `i(n)` and row index `j(n)` of atom `n`.
    pub fn grid_indices(&self, n: usize) -> Result<(usize, usize)> {
        self.check_atom(n)?;
        Ok((n % self.atoms_per_row, n / self.atoms_per_row))
    }

    /// In-plane position `[0, i(n) d_H, j(n) d_V]` of atom `n`.
    pub fn element_position(&self, n: usize) -> Result<Point3> {
        let (i, j) = self.grid_indices(n)?;
        let d = self.element_spacing();
        Ok([0.0, i as f64 * d, j as f64 * d])
    }

    /// Lateral offset between atoms `n` and `m` of two adjacent layers.
    pub fn intra_layer_offset(&self, n: usize, m: usize) -> Result<f64> {
        self.check_atom(n)?;
        self.check_atom(m)?;
        let diff = n.abs_diff(m);
        let rows = (diff / self.atoms_per_row) as f64;
        let cols = (diff % self.atoms_per_row) as f64;
        Ok(self.element_spacing() * (rows * rows + cols * cols).sqrt())
    }

    /// 3-D distance between atom `m` on layer `l-1` and atom `n` on layer `l`.
    pub fn inter_layer_distance(&self, n: usize, m: usize) -> Result<f64> {
        let lateral = self.intra_layer_offset(n, m)?;
        Ok(self.layer_spacing().hypot(lateral))
    }

    /// Distance from antenna `m` to atom `n` of the first layer.
    pub fn antenna_to_layer_distance(&self, m: usize, n: usize) -> Result<f64> {
        if m >= self.num_antennas {
            return invalid(format!(
                "antenna index {m} out of range for N_t={}",
                self.num_antennas
            ));
        }
        let (i, j) = self.grid_indices(n)?;
        let half = self.wavelength / 2.0;
        let atom_y = (i as f64 - (self.atoms_per_row as f64 - 1.0) / 2.0) * half;
        let antenna_y = (m as f64 - (self.num_antennas as f64 - 1.0) / 2.0) * half;
        let row = j as f64 - (self.atoms_per_col as f64 - 1.0) / 2.0;
        let lateral_sq = (atom_y - antenna_y).powi(2) + row * row * self.wavelength.powi(2) / 4.0;
        Ok((self.layer_spacing().powi(2) + lateral_sq).sqrt())
    }

    /// `cos x = d_SIM / r` for a ray of length `r` between adjacent planes.
    pub fn obliquity_cosine(&self, distance: f64) -> Result<f64> {
        let d_sim = self.layer_spacing();
        // allow for rounding in hypot()
        if !(distance.is_finite() && distance >= d_sim * (1.0 - 1e-12)) {
            return invalid(format!(
                "distance {distance} is shorter than the layer spacing {d_sim}"
            ));
        }
        Ok((d_sim / distance).min(1.0))
    }

    /// Center of the last layer, the reference point for user distances.
    pub fn sim_center(&self) -> Point3 {
        [self.sim_thickness, 0.0, self.bs_height]
    }

    /// Absolute position of atom `n` on the last layer.
    pub fn last_layer_atom(&self, n: usize) -> Result<Point3> {
        let (i, j) = self.grid_indices(n)?;
        let d = self.element_spacing();
        let y = (i as f64 - (self.atoms_per_row as f64 - 1.0) / 2.0) * d;
        let z = self.bs_height + (j as f64 - (self.atoms_per_col as f64 - 1.0) / 2.0) * d;
        Ok([self.sim_thickness, y, z])
    }
}

pub fn distance(a: &Point3, b: &Point3) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserLayout {
    pub positions: Vec<Point3>,
    /// 3-D distance from the SIM center to each user.
    pub distances: Vec<f64>,
}

/// Drop `K` users on the ground with horizontal radius uniform in
/// `[r_min, r_max]` and azimuth uniform over the half-plane facing the SIM.
pub fn drop_users(geometry: &SimGeometry, r_min: f64, r_max: f64, seed: u64) -> Result<UserLayout> {
    if !(r_min > 0.0 && r_min <= r_max && r_max.is_finite()) {
        return invalid(format!("need 0 < r_min <= r_max, got [{r_min}, {r_max}]"));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let center = geometry.sim_center();
    let mut positions = Vec::with_capacity(geometry.num_users());
    let mut distances = Vec::with_capacity(geometry.num_users());
    for _ in 0..geometry.num_users() {
        let radius = if r_max > r_min {
            rng.random_range(r_min..=r_max)
        } else {
            r_min
        };
        let azimuth = rng.random_range(-PI / 2.0..PI / 2.0);
        let p = [
            center[0] + radius * azimuth.cos(),
            center[1] + radius * azimuth.sin(),
            0.0,
        ];
        distances.push(distance(&center, &p));
        positions.push(p);
    }
    Ok(UserLayout {
        positions,
        distances,
    })
}

/// Free-space reference gain `C_0 = (λ / (4π d̂))²`.
pub fn reference_gain(wavelength: f64, reference_distance: f64) -> f64 {
    (wavelength / (4.0 * PI * reference_distance)).powi(2)
}

/// Large-scale gain `β = C_0 (d / d̂)^(-α)`.
pub fn path_loss(distance: f64, wavelength: f64, exponent: f64, reference_distance: f64) -> Result<f64> {
    if !(distance.is_finite() && distance > 0.0) {
        return invalid(format!("distance must be positive, got {distance}"));
    }
    if !(reference_distance > 0.0) {
        return invalid("reference distance must be positive");
    }
    Ok(reference_gain(wavelength, reference_distance) * (distance / reference_distance).powf(-exponent))
}
