//! Diffraction operators between layers, spatial correlation of the last
//! layer, LoS steering vectors and correlated Rician channel draws.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Result, SimError};
use crate::geometry::{distance, Point3, SimGeometry};

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

/// Rayleigh-Sommerfeld coefficient between two atoms `r` meters apart:
/// `(A cos x / r) (1/(2πr) - j/λ) exp(j 2πr/λ)`.
pub fn diffraction_coefficient(atom_area: f64, cos_x: f64, r: f64, wavelength: f64) -> Result<Complex64> {
    if !(r.is_finite() && r > 0.0) {
        return invalid(format!("propagation distance must be positive, got {r}"));
    }
    if !(cos_x > 0.0 && cos_x <= 1.0) {
        return invalid(format!("obliquity cosine must lie in (0, 1], got {cos_x}"));
    }
    let envelope = Complex64::new(1.0 / (2.0 * PI * r), -1.0 / wavelength) * (atom_area * cos_x / r);
    Ok(envelope * Complex64::from_polar(1.0, 2.0 * PI * r / wavelength))
}

/// Fixed propagation matrices of the stack.
///
/// All inter-layer matrices `W^2..W^L` coincide for uniform spacing, so a
/// single `N x N` matrix is kept. `input_mapping` is `N x N_t`; its column
/// `k` feeds user `k`.
#[derive(Debug, Clone)]
pub struct PropagationOperators {
    layer_transfer: CMat,
    input_mapping: CMat,
    num_layers: usize,
}

impl PropagationOperators {
    pub fn from_parts(layer_transfer: CMat, input_mapping: CMat, num_layers: usize) -> Result<Self> {
        let n = layer_transfer.nrows();
        if layer_transfer.ncols() != n || input_mapping.nrows() != n {
            return Err(SimError::DimensionMismatch(format!(
                "layer transfer {}x{}, input mapping {}x{}",
                layer_transfer.nrows(),
                layer_transfer.ncols(),
                input_mapping.nrows(),
                input_mapping.ncols()
            )));
        }
        if num_layers == 0 {
            return invalid("need at least one layer");
        }
        Ok(Self {
            layer_transfer,
            input_mapping,
            num_layers,
        })
    }

    pub fn build(geometry: &SimGeometry) -> Result<Self> {
        let n = geometry.atoms_per_layer();
        let area = geometry.atom_area();
        let lambda = geometry.wavelength();

        let mut layer_transfer = CMat::zeros(n, n);
        for row in 0..n {
            for col in 0..n {
                let r = geometry.inter_layer_distance(row, col)?;
                let cos_x = geometry.obliquity_cosine(r)?;
                layer_transfer[(row, col)] = diffraction_coefficient(area, cos_x, r, lambda)?;
            }
        }

        let mut input_mapping = CMat::zeros(n, geometry.num_antennas());
        for atom in 0..n {
            for antenna in 0..geometry.num_antennas() {
                let r = geometry.antenna_to_layer_distance(antenna, atom)?;
                let cos_x = geometry.obliquity_cosine(r)?;
                input_mapping[(atom, antenna)] = diffraction_coefficient(area, cos_x, r, lambda)?;
            }
        }

        Self::from_parts(layer_transfer, input_mapping, geometry.num_layers())
    }

    pub fn num_atoms(&self) -> usize {
        self.layer_transfer.nrows()
    }
    pub fn num_antennas(&self) -> usize {
        self.input_mapping.ncols()
    }
    pub fn num_layers(&self) -> usize {
        self.num_layers
    }

    /// `W^l` for `l >= 2` (all identical).
    pub fn layer_transfer(&self) -> &CMat {
        &self.layer_transfer
    }

    /// `W^1`, antennas to first layer.
    pub fn input_mapping(&self) -> &CMat {
        &self.input_mapping
    }

    /// Column `w^1_k`.
    pub fn input_beam(&self, k: usize) -> CVec {
        self.input_mapping.column(k).into_owned()
    }
}

fn sinc(t: f64) -> f64 {
    if t == 0.0 {
        1.0
    } else {
        (PI * t).sin() / (PI * t)
    }
}

/// Sinc-kernel spatial correlation `R[m, n] = sinc(2 |u_n - u_m| / λ)`.
pub fn correlation_matrix(geometry: &SimGeometry) -> Result<CMat> {
    let n = geometry.atoms_per_layer();
    let positions: Vec<Point3> = (0..n)
        .map(|i| geometry.element_position(i))
        .collect::<Result<_>>()?;
    let lambda = geometry.wavelength();
    Ok(CMat::from_fn(n, n, |r, c| {
        Complex64::new(sinc(2.0 * distance(&positions[r], &positions[c]) / lambda), 0.0)
    }))
}

/// Factor `S` with `S S^H = R`, built from the eigendecomposition with
/// negative eigenvalues clipped to zero.
pub fn correlation_sqrt(correlation: &CMat) -> Result<CMat> {
    let n = correlation.nrows();
    if correlation.ncols() != n {
        return Err(SimError::DimensionMismatch("correlation matrix must be square".into()));
    }
    if correlation.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(SimError::NonFinite("correlation matrix"));
    }
    let hermitian = (correlation + correlation.adjoint()) * Complex64::new(0.5, 0.0);
    let eig = SymmetricEigen::new(hermitian);
    let mut factor = eig.eigenvectors;
    for (j, lambda) in eig.eigenvalues.iter().enumerate() {
        let s = lambda.max(0.0).sqrt();
        factor.column_mut(j).scale_mut(s);
    }
    Ok(factor)
}

/// Spherical-wavefront steering vector from the last layer to a user:
/// entry `n` is `exp(-j 2π r_n / λ)`.
pub fn los_vector(user: &Point3, geometry: &SimGeometry) -> Result<CVec> {
    let n = geometry.atoms_per_layer();
    let lambda = geometry.wavelength();
    let mut h = CVec::zeros(n);
    for atom in 0..n {
        let r = distance(&geometry.last_layer_atom(atom)?, user);
        h[atom] = Complex64::from_polar(1.0, -2.0 * PI * r / lambda);
    }
    Ok(h)
}

/// Thermal noise power in watts for a bandwidth and receiver noise figure.
pub fn thermal_noise_variance(bandwidth_hz: f64, noise_figure_db: f64) -> f64 {
    let dbm = -174.0 + 10.0 * bandwidth_hz.log10() + noise_figure_db;
    10f64.powf((dbm - 30.0) / 10.0)
}

#[derive(Debug, Clone)]
pub struct UserStatistics {
    pub rician_factor: f64,
    pub channel_gain: f64,
    pub noise_variance: f64,
    pub los: CVec,
}

/// Per-user large-scale statistics plus the shared correlation.
#[derive(Debug, Clone)]
pub struct ChannelStatistics {
    pub users: Vec<UserStatistics>,
    correlation: CMat,
    correlation_sqrt: CMat,
}

impl ChannelStatistics {
    pub fn new(users: Vec<UserStatistics>, correlation: CMat) -> Result<Self> {
        let n = correlation.nrows();
        for (k, u) in users.iter().enumerate() {
            if u.los.len() != n {
                return Err(SimError::DimensionMismatch(format!(
                    "LoS vector of user {k} has length {}, expected {n}",
                    u.los.len()
                )));
            }
            if !(u.rician_factor >= 0.0 && u.channel_gain > 0.0 && u.noise_variance > 0.0) {
                return invalid(format!(
                    "user {k}: need kappa >= 0, beta > 0, sigma^2 > 0 (got {}, {}, {})",
                    u.rician_factor, u.channel_gain, u.noise_variance
                ));
            }
        }
        let correlation_sqrt = correlation_sqrt(&correlation)?;
        Ok(Self {
            users,
            correlation,
            correlation_sqrt,
        })
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }
    pub fn num_atoms(&self) -> usize {
        self.correlation.nrows()
    }
    pub fn correlation(&self) -> &CMat {
        &self.correlation
    }
    pub fn correlation_sqrt(&self) -> &CMat {
        &self.correlation_sqrt
    }

    /// `σ²(1+κ)/β`, the noise term after normalizing by `β/(1+κ)`.
    pub fn effective_noise(&self, k: usize) -> f64 {
        let u = &self.users[k];
        u.noise_variance * (1.0 + u.rician_factor) / u.channel_gain
    }

    /// `E{h_k}`.
    pub fn channel_mean(&self, k: usize) -> CVec {
        let u = &self.users[k];
        let a = (u.channel_gain * u.rician_factor / (1.0 + u.rician_factor)).sqrt();
        &u.los * Complex64::new(a, 0.0)
    }

    /// `Cov{h_k} = β/(1+κ) R`.
    pub fn channel_covariance(&self, k: usize) -> CMat {
        let u = &self.users[k];
        &self.correlation * Complex64::new(u.channel_gain / (1.0 + u.rician_factor), 0.0)
    }

    /// One realization of every user channel.
    pub fn sample_channels<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<CVec> {
        (0..self.num_users()).map(|k| self.sample_channel(k, rng)).collect()
    }

    pub fn sample_channel<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> CVec {
        let u = &self.users[k];
        let n = self.num_atoms();
        let z = CVec::from_fn(n, |_, _| standard_complex_normal(rng));
        let nlos_scale = (u.channel_gain / (1.0 + u.rician_factor)).sqrt();
        let mut h = &self.correlation_sqrt * z;
        h *= Complex64::new(nlos_scale, 0.0);
        h + self.channel_mean(k)
    }
}

/// `CN(0, 1)` draw.
pub fn standard_complex_normal<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}
