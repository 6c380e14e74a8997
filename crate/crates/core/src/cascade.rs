//! Wave-domain response `G = Φ_L W^L ... Φ_2 W^2 Φ_1` and its prefix/suffix
//! factors.

use std::f64::consts::TAU;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;

use crate::error::{invalid, Result, SimError};
use crate::propagation::{CMat, CVec, PropagationOperators};

/// Unit-modulus phase shifts of every layer, `layers[l][n] = exp(j θ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseState {
    layers: Vec<CVec>,
}

impl PhaseState {
    /// Wraps the given vectors and projects every entry onto the unit circle.
    pub fn new(layers: Vec<CVec>) -> Result<Self> {
        if layers.is_empty() {
            return invalid("phase state needs at least one layer");
        }
        let n = layers[0].len();
        if layers.iter().any(|v| v.len() != n) {
            return Err(SimError::DimensionMismatch("layers differ in length".into()));
        }
        let mut s = Self { layers };
        s.renormalize();
        Ok(s)
    }

    pub fn from_angles(angles: &[Vec<f64>]) -> Result<Self> {
        Self::new(
            angles
                .iter()
                .map(|layer| CVec::from_iterator(layer.len(), layer.iter().map(|&t| Complex64::from_polar(1.0, t))))
                .collect(),
        )
    }

    pub fn zeros(num_layers: usize, num_atoms: usize) -> Self {
        Self {
            layers: vec![CVec::from_element(num_atoms, Complex64::new(1.0, 0.0)); num_layers],
        }
    }

    /// Angles drawn uniformly on `[0, 2π)`.
    pub fn random<R: Rng + ?Sized>(num_layers: usize, num_atoms: usize, rng: &mut R) -> Self {
        let layers = (0..num_layers)
            .map(|_| CVec::from_fn(num_atoms, |_, _| Complex64::from_polar(1.0, rng.random_range(0.0..TAU))))
            .collect();
        Self { layers }
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }
    pub fn num_atoms(&self) -> usize {
        self.layers[0].len()
    }
    pub fn layer(&self, l: usize) -> &CVec {
        &self.layers[l]
    }
    pub fn layers(&self) -> &[CVec] {
        &self.layers
    }

    /// Angles in `[0, 2π)`.
    pub fn angles(&self) -> Vec<Vec<f64>> {
        self.layers
            .iter()
            .map(|v| v.iter().map(|z| z.arg().rem_euclid(TAU)).collect())
            .collect()
    }

    /// Multiplies every entry of every layer by `scalar` (no projection).
    pub fn scaled(&self, scalar: Complex64) -> Self {
        Self {
            layers: self.layers.iter().map(|v| v * scalar).collect(),
        }
    }

    /// Raw, unprojected state. Used to probe the objective off the unit circle.
    pub fn unconstrained(layers: Vec<CVec>) -> Self {
        Self { layers }
    }

    pub fn renormalize(&mut self) {
        for v in &mut self.layers {
            for z in v.iter_mut() {
                *z = project_entry(*z);
            }
        }
    }

    pub fn max_modulus_error(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|v| v.iter())
            .map(|z| (z.norm() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// `u / |u|`, or `1` when `u = 0`.
pub(crate) fn project_entry(u: Complex64) -> Complex64 {
    let r = u.norm();
    if r == 0.0 || !r.is_finite() {
        Complex64::new(1.0, 0.0)
    } else {
        u / r
    }
}

/// `diag(phi) * m`.
fn scale_rows(m: &CMat, phi: &CVec) -> CMat {
    let mut out = m.clone();
    for (mut row, p) in out.row_iter_mut().zip(phi.iter()) {
        row *= *p;
    }
    out
}

/// `m * diag(phi)`.
fn scale_cols(m: &CMat, phi: &CVec) -> CMat {
    let mut out = m.clone();
    for (mut col, p) in out.column_iter_mut().zip(phi.iter()) {
        col *= *p;
    }
    out
}

/// Composed response with cached factors.
///
/// For every layer `l`: `suffix[l] Φ_l prefix[l] = G`, where
/// `suffix[l] = Φ_L W ... Φ_{l+1} W` and `prefix[l] = W Φ_{l-1} ... Φ_1`.
#[derive(Debug, Clone)]
pub struct CascadeState {
    pub g: CMat,
    pub suffix: Vec<CMat>,
    pub prefix: Vec<CMat>,
}

impl CascadeState {
    pub fn num_layers(&self) -> usize {
        self.suffix.len()
    }

    /// `G W^1`; column `k` is the end-to-end beam of user `k`.
    pub fn effective_input_response(&self, ops: &PropagationOperators) -> CMat {
        &self.g * ops.input_mapping()
    }
}

pub fn compose(phases: &PhaseState, ops: &PropagationOperators) -> Result<CascadeState> {
    let n = ops.num_atoms();
    let layers = ops.num_layers();
    if phases.num_layers() != layers || phases.num_atoms() != n {
        return Err(SimError::DimensionMismatch(format!(
            "phases are {}x{}, operators expect {}x{}",
            phases.num_layers(),
            phases.num_atoms(),
            layers,
            n
        )));
    }
    let w = ops.layer_transfer();
    let identity = DMatrix::<Complex64>::identity(n, n);

    let mut prefix = Vec::with_capacity(layers);
    prefix.push(identity.clone());
    for l in 1..layers {
        let next = w * scale_rows(&prefix[l - 1], phases.layer(l - 1));
        prefix.push(next);
    }

    let mut suffix = vec![identity; layers];
    for l in (0..layers - 1).rev() {
        suffix[l] = scale_cols(&suffix[l + 1], phases.layer(l + 1)) * w;
    }

    let g = scale_cols(&suffix[0], phases.layer(0));
    Ok(CascadeState { g, suffix, prefix })
}

/// `G w^1_k` for the first `num_beams` antennas, propagated layer by layer
/// without forming `G`.
pub fn forward_beams(phases: &PhaseState, ops: &PropagationOperators, num_beams: usize) -> CMat {
    let w = ops.layer_transfer();
    let mut beams = ops.input_mapping().columns(0, num_beams).into_owned();
    beams = scale_rows(&beams, phases.layer(0));
    for l in 1..ops.num_layers() {
        beams = scale_rows(&(w * beams), phases.layer(l));
    }
    beams
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::SimGeometry;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn random_ops(n: usize, nt: usize, layers: usize, seed: u64) -> PropagationOperators {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut c = || Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let w = CMat::from_fn(n, n, |_, _| c());
        let w1 = CMat::from_fn(n, nt, |_, _| c());
        PropagationOperators::from_parts(w, w1, layers).unwrap()
    }

    // G built by explicit dense products, left to right.
    fn naive_g(phases: &PhaseState, ops: &PropagationOperators) -> CMat {
        let diag = |v: &CVec| CMat::from_diagonal(v);
        let l = phases.num_layers();
        let mut g = diag(phases.layer(l - 1));
        for layer in (0..l - 1).rev() {
            g = g * ops.layer_transfer() * diag(phases.layer(layer));
        }
        g
    }

    fn rel(a: &CMat, b: &CMat) -> f64 {
        (a - b).norm() / b.norm()
    }

    #[test]
    fn single_layer() {
        let ops = random_ops(3, 2, 1, 0);
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let phases = PhaseState::random(1, 3, &mut rng);
        let s = compose(&phases, &ops).unwrap();
        assert_eq!(s.g, CMat::from_diagonal(phases.layer(0)));
        assert_eq!(s.suffix[0], CMat::identity(3, 3));
        assert_eq!(s.prefix[0], CMat::identity(3, 3));
    }

    #[test]
    fn identity_hook() {
        let n = 4;
        let ops = PropagationOperators::from_parts(CMat::identity(n, n), random_ops(n, 2, 3, 1).input_mapping().clone(), 3).unwrap();
        let s = compose(&PhaseState::zeros(3, n), &ops).unwrap();
        assert!((&s.g - CMat::identity(n, n)).norm() < 1e-15);
        assert!((s.effective_input_response(&ops) - ops.input_mapping()).norm() < 1e-15);
    }

    #[test]
    fn matches_naive_product_and_factorizes() {
        for seed in 0..5 {
            let ops = random_ops(4, 2, 3, seed);
            let mut rng = ChaCha20Rng::seed_from_u64(100 + seed);
            let phases = PhaseState::random(3, 4, &mut rng);
            let s = compose(&phases, &ops).unwrap();
            let g = naive_g(&phases, &ops);
            assert!(rel(&s.g, &g) < 1e-12);
            for l in 0..3 {
                let f = &s.suffix[l] * CMat::from_diagonal(phases.layer(l)) * &s.prefix[l];
                assert!(rel(&f, &g) < 1e-9);
            }
            let eff = s.effective_input_response(&ops);
            let fwd = forward_beams(&phases, &ops, 2);
            for k in 0..2 {
                let col = &g * ops.input_beam(k);
                assert!((eff.column(k) - &col).norm() < 1e-12 * col.norm());
                assert!((fwd.column(k) - &col).norm() < 1e-12 * col.norm());
            }
        }
    }

    #[test]
    fn dimension_mismatch() {
        let ops = random_ops(4, 2, 3, 0);
        assert!(compose(&PhaseState::zeros(2, 4), &ops).is_err());
        assert!(compose(&PhaseState::zeros(3, 5), &ops).is_err());
    }

    #[test]
    fn global_phase_rotates_g() {
        let g = SimGeometry::new(2, 2, 2, 3, 3, 0.15, 0.75, 10.0).unwrap();
        let ops = PropagationOperators::build(&g).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let phases = PhaseState::random(2, 9, &mut rng);
        let rot = Complex64::from_polar(1.0, 0.7);
        let mut layers = phases.layers().to_vec();
        layers[1] *= rot;
        let rotated = PhaseState::new(layers).unwrap();
        let a = compose(&phases, &ops).unwrap().g;
        let b = compose(&rotated, &ops).unwrap().g;
        assert!(rel(&(a * rot), &b) < 1e-12);
    }

    #[test]
    fn angles_roundtrip() {
        let angles = vec![vec![0.0, 1.0, 6.0], vec![3.0, 0.5, 2.0]];
        let p = PhaseState::from_angles(&angles).unwrap();
        for (a, b) in p.angles().iter().flatten().zip(angles.iter().flatten()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(p.max_modulus_error() < 1e-15);
    }
}
