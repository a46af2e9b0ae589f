//! Array responses and geometric multipath MIMO-OFDM channels.
//!
//! The channel on subcarrier `n` and symbol `k` is
//! `H[n,k] = Σ_l α_l a_rx(θ_l) a_txᵀ(φ_l) exp(−j2π nΔf τ_l) exp(j2π k Ts ν_l)`,
//! with one steering vector per path across the whole band (no beam squint).
//! The Tx response enters transposed, not conjugated.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Vector3};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::geometry::{Angles, GeoParams};
use crate::{Error, Result, SPEED_OF_LIGHT};

/// Per-element power gain pattern `G(θ)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum ElementPattern {
    #[default]
    Isotropic,
    /// `max(0, cos ψ)^exponent` with ψ the angle off local boresight.
    CosinePower { exponent: f64 },
}

impl ElementPattern {
    pub fn gain(&self, angles: &Angles) -> f64 {
        match self {
            ElementPattern::Isotropic => 1.0,
            ElementPattern::CosinePower { exponent } => angles.direction().x.max(0.0).powf(*exponent),
        }
    }
}

/// Antenna array: element positions in carrier wavelengths, local frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayGeometry {
    pub element_positions: Vec<Vector3<f64>>,
    pub pattern: ElementPattern,
}

impl ArrayGeometry {
    pub fn new(element_positions: Vec<Vector3<f64>>, pattern: ElementPattern) -> Result<Self> {
        if element_positions.is_empty() {
            return Err(Error::InvalidParameter("array needs at least one element".into()));
        }
        Ok(Self {
            element_positions,
            pattern,
        })
    }

    pub fn single() -> Self {
        Self {
            element_positions: vec![Vector3::zeros()],
            pattern: ElementPattern::Isotropic,
        }
    }

    /// Uniform linear array along local y with λ/2 spacing.
    pub fn ula(n: usize) -> Self {
        Self::ula_with_spacing(n, 0.5)
    }

    pub fn ula_with_spacing(n: usize, spacing: f64) -> Self {
        let n = n.max(1);
        Self {
            element_positions: (0..n).map(|m| Vector3::new(0.0, m as f64 * spacing, 0.0)).collect(),
            pattern: ElementPattern::Isotropic,
        }
    }

    /// Uniform planar array in the local y-z plane, λ/2 spacing, y index fastest.
    pub fn upa(ny: usize, nz: usize) -> Self {
        let mut element_positions = Vec::with_capacity(ny * nz);
        for iz in 0..nz.max(1) {
            for iy in 0..ny.max(1) {
                element_positions.push(Vector3::new(0.0, 0.5 * iy as f64, 0.5 * iz as f64));
            }
        }
        Self {
            element_positions,
            pattern: ElementPattern::Isotropic,
        }
    }

    pub fn n_elements(&self) -> usize {
        self.element_positions.len()
    }

    /// Whether the aperture has extent along local y (azimuth) / z (elevation).
    pub fn extent(&self) -> (bool, bool) {
        let first = self.element_positions[0];
        let y = self.element_positions.iter().any(|p| (p.y - first.y).abs() > 1e-12);
        let z = self.element_positions.iter().any(|p| (p.z - first.z).abs() > 1e-12);
        (y, z)
    }

    /// `a(θ)_m = exp(j2π p_mᵀ k(θ))`.
    pub fn steering_vector(&self, angles: &Angles) -> DVector<Complex64> {
        let k = angles.direction();
        DVector::from_iterator(
            self.n_elements(),
            self.element_positions
                .iter()
                .map(|p| Complex64::from_polar(1.0, 2.0 * PI * p.dot(&k))),
        )
    }

    /// Steering vector and its derivatives with respect to azimuth and elevation.
    pub fn steering_derivatives(
        &self,
        angles: &Angles,
    ) -> (DVector<Complex64>, DVector<Complex64>, DVector<Complex64>) {
        let a = self.steering_vector(angles);
        let (sa, ca) = angles.azimuth.sin_cos();
        let (se, ce) = angles.elevation.sin_cos();
        let dk_daz = Vector3::new(-ce * sa, ce * ca, 0.0);
        let dk_del = Vector3::new(-se * ca, -se * sa, ce);
        let j2pi = Complex64::new(0.0, 2.0 * PI);
        let d_az = DVector::from_iterator(
            a.len(),
            self.element_positions.iter().zip(a.iter()).map(|(p, v)| v * j2pi * p.dot(&dk_daz)),
        );
        let d_el = DVector::from_iterator(
            a.len(),
            self.element_positions.iter().zip(a.iter()).map(|(p, v)| v * j2pi * p.dot(&dk_del)),
        );
        (a, d_az, d_el)
    }
}

/// Free-function form of [`ArrayGeometry::steering_vector`].
pub fn steering_vector(array: &ArrayGeometry, angles: &Angles) -> DVector<Complex64> {
    array.steering_vector(angles)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PathTag {
    Los,
    Nlos,
    Object,
    Clutter,
}

/// One resolvable path: complex gain plus geometric parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathParams {
    pub gain: Complex64,
    pub geo: GeoParams,
    pub tag: PathTag,
}

/// OFDM sampling grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridConfig {
    pub n_subcarriers: usize,
    /// Hz.
    pub subcarrier_spacing: f64,
    pub n_symbols: usize,
    /// Seconds.
    pub symbol_duration: f64,
    /// Hz.
    pub carrier: f64,
}

impl GridConfig {
    pub fn new(
        n_subcarriers: usize,
        subcarrier_spacing: f64,
        n_symbols: usize,
        symbol_duration: f64,
        carrier: f64,
    ) -> Result<Self> {
        if n_subcarriers == 0 || n_symbols == 0 {
            return Err(Error::InvalidParameter("grid needs N ≥ 1 and K ≥ 1".into()));
        }
        if !(subcarrier_spacing > 0.0) || !(symbol_duration > 0.0) || !(carrier > 0.0) {
            return Err(Error::InvalidParameter(
                "subcarrier spacing, symbol duration and carrier must be positive".into(),
            ));
        }
        Ok(Self {
            n_subcarriers,
            subcarrier_spacing,
            n_symbols,
            symbol_duration,
            carrier,
        })
    }

    /// `W = NΔf`.
    pub fn bandwidth(&self) -> f64 {
        self.n_subcarriers as f64 * self.subcarrier_spacing
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier
    }

    /// Delays are only identifiable modulo `1/Δf`.
    pub fn unambiguous_delay(&self) -> f64 {
        1.0 / self.subcarrier_spacing
    }

    pub fn integration_time(&self) -> f64 {
        self.n_symbols as f64 * self.symbol_duration
    }

    /// `exp(−j2π nΔf τ)`.
    pub fn delay_phasor(&self, n: usize, delay: f64) -> Complex64 {
        let cycles = (n as f64 * self.subcarrier_spacing * delay).fract();
        Complex64::from_polar(1.0, -2.0 * PI * cycles)
    }

    /// `exp(j2π k Ts ν)`.
    pub fn doppler_phasor(&self, k: usize, doppler: f64) -> Complex64 {
        let cycles = (k as f64 * self.symbol_duration * doppler).fract();
        Complex64::from_polar(1.0, 2.0 * PI * cycles)
    }
}

/// Precomputed per-path outer products `α a_rx a_txᵀ`.
fn spatial_terms(paths: &[PathParams], rx: &ArrayGeometry, tx: &ArrayGeometry) -> Vec<DMatrix<Complex64>> {
    paths
        .iter()
        .map(|p| {
            let a_rx = rx.steering_vector(&p.geo.aoa);
            let a_tx = tx.steering_vector(&p.geo.aod);
            &a_rx * a_tx.transpose() * p.gain
        })
        .collect()
}

/// `H[n,k]` for one subcarrier/symbol pair.
pub fn channel_matrix(
    paths: &[PathParams],
    grid: &GridConfig,
    rx: &ArrayGeometry,
    tx: &ArrayGeometry,
    n: usize,
    k: usize,
) -> Result<DMatrix<Complex64>> {
    if n >= grid.n_subcarriers {
        return Err(Error::IndexOutOfRange {
            what: "subcarrier",
            index: n,
            limit: grid.n_subcarriers,
        });
    }
    if k >= grid.n_symbols {
        return Err(Error::IndexOutOfRange {
            what: "symbol",
            index: k,
            limit: grid.n_symbols,
        });
    }
    let mut h = DMatrix::zeros(rx.n_elements(), tx.n_elements());
    for (p, term) in paths.iter().zip(spatial_terms(paths, rx, tx)) {
        h += term * (grid.delay_phasor(n, p.geo.delay) * grid.doppler_phasor(k, p.geo.doppler));
    }
    Ok(h)
}

/// All `H[n,k]`, stored at index `n·K + k`.
pub fn channel_response(
    paths: &[PathParams],
    grid: &GridConfig,
    rx: &ArrayGeometry,
    tx: &ArrayGeometry,
) -> Vec<DMatrix<Complex64>> {
    let terms = spatial_terms(paths, rx, tx);
    let mut out = Vec::with_capacity(grid.n_subcarriers * grid.n_symbols);
    for n in 0..grid.n_subcarriers {
        for k in 0..grid.n_symbols {
            let mut h = DMatrix::zeros(rx.n_elements(), tx.n_elements());
            for (p, term) in paths.iter().zip(&terms) {
                h += term * (grid.delay_phasor(n, p.geo.delay) * grid.doppler_phasor(k, p.geo.doppler));
            }
            out.push(h);
        }
    }
    out
}

/// LoS power `|α|² = λ² G_rx G_tx / ((4π)² d²)`.
pub fn los_gain(distance: f64, carrier: f64, g_tx: f64, g_rx: f64) -> Result<f64> {
    if !(distance > 0.0) {
        return Err(Error::InvalidParameter(format!("distance must be positive, got {distance}")));
    }
    let lambda = SPEED_OF_LIGHT / carrier;
    Ok(lambda * lambda * g_rx * g_tx / ((4.0 * PI).powi(2) * distance * distance))
}

/// Monostatic radar power `|α|² = λ² σ G_rx G_tx / ((4π)³ r⁴)`.
pub fn radar_gain(range: f64, carrier: f64, rcs: f64, g_tx: f64, g_rx: f64) -> Result<f64> {
    if !(range > 0.0) {
        return Err(Error::InvalidParameter(format!("range must be positive, got {range}")));
    }
    if !(rcs > 0.0) {
        return Err(Error::InvalidParameter(format!("rcs must be positive, got {rcs}")));
    }
    let lambda = SPEED_OF_LIGHT / carrier;
    Ok(lambda * lambda * rcs * g_rx * g_tx / ((4.0 * PI).powi(3) * range.powi(4)))
}

/// (LoS, everything else).
pub fn split_localization(paths: &[PathParams]) -> (Vec<PathParams>, Vec<PathParams>) {
    paths.iter().partition(|p| p.tag == PathTag::Los)
}

/// (objects, everything else).
pub fn split_sensing(paths: &[PathParams]) -> (Vec<PathParams>, Vec<PathParams>) {
    paths.iter().partition(|p| p.tag == PathTag::Object)
}

/// Statistical clutter: delays uniform in `[0, 1/Δf)`, directions uniform in
/// azimuth and elevation, zero Doppler (static scatterers), and i.i.d.
/// `CN(0, budget/count)` gains so the expected total power is `power_budget`.
pub fn make_clutter(seed: u64, count: usize, power_budget: f64, grid: &GridConfig) -> Vec<PathParams> {
    if count == 0 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sigma = (power_budget / count as f64 / 2.0).sqrt();
    (0..count)
        .map(|_| {
            let delay = rng.random::<f64>() * grid.unambiguous_delay();
            let aoa = Angles::new(PI - rng.random::<f64>() * 2.0 * PI, (rng.random::<f64>() - 0.5) * PI);
            let aod = Angles::new(PI - rng.random::<f64>() * 2.0 * PI, (rng.random::<f64>() - 0.5) * PI);
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            PathParams {
                gain: Complex64::new(re, im) * sigma,
                geo: GeoParams {
                    aoa,
                    aod,
                    delay,
                    doppler: 0.0,
                },
                tag: PathTag::Clutter,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn siso_grid(n: usize) -> GridConfig {
        GridConfig::new(n, 120e3, 1, 1.0 / 120e3, 28e9).unwrap()
    }

    fn path(gain: Complex64, delay: f64, doppler: f64, tag: PathTag) -> PathParams {
        PathParams {
            gain,
            geo: GeoParams {
                delay,
                doppler,
                ..GeoParams::default()
            },
            tag,
        }
    }

    #[test]
    fn boresight_steering_is_all_ones() {
        for array in [ArrayGeometry::ula(8), ArrayGeometry::upa(3, 4)] {
            let a = array.steering_vector(&Angles::new(0.0, 0.0));
            for v in a.iter() {
                assert_relative_eq!(v.re, 1.0, epsilon = 1e-15);
                assert_relative_eq!(v.im, 0.0, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn half_wavelength_endfire_phases() {
        let a = ArrayGeometry::ula(2).steering_vector(&Angles::new(PI / 2.0, 0.0));
        assert_relative_eq!(a[0].arg(), 0.0, epsilon = 1e-15);
        assert_relative_eq!(a[1].arg().abs(), PI, epsilon = 1e-12);
    }

    #[test]
    fn steering_norm_equals_element_count() {
        let array = ArrayGeometry::ula(8);
        for az in [-2.0, -0.3, 0.0, 0.7, 1.4, 3.0] {
            let a = array.steering_vector(&Angles::new(az, 0.2));
            assert_relative_eq!(a.norm_squared(), 8.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn steering_derivative_matches_finite_difference() {
        let array = ArrayGeometry::upa(3, 2);
        let ang = Angles::new(0.4, -0.2);
        let (_, d_az, d_el) = array.steering_derivatives(&ang);
        let h = 1e-6;
        let fd_az = (array.steering_vector(&Angles::new(0.4 + h, -0.2)) - array.steering_vector(&Angles::new(0.4 - h, -0.2)))
            / Complex64::new(2.0 * h, 0.0);
        let fd_el = (array.steering_vector(&Angles::new(0.4, -0.2 + h)) - array.steering_vector(&Angles::new(0.4, -0.2 - h)))
            / Complex64::new(2.0 * h, 0.0);
        assert!((d_az - fd_az).norm() < 1e-7);
        assert!((d_el - fd_el).norm() < 1e-7);
    }

    #[test]
    fn zero_delay_siso_channel_is_the_gain() {
        let grid = GridConfig::new(16, 120e3, 4, 1e-5, 28e9).unwrap();
        let alpha = Complex64::new(0.3, -0.7);
        let paths = [path(alpha, 0.0, 0.0, PathTag::Los)];
        let single = ArrayGeometry::single();
        for h in channel_response(&paths, &grid, &single, &single) {
            assert_relative_eq!((h[(0, 0)] - alpha).norm(), 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn delay_ramp_reaches_expected_phase() {
        let n = 32;
        let grid = siso_grid(n);
        let paths = [path(Complex64::new(1.0, 0.0), 1.0 / grid.bandwidth(), 0.0, PathTag::Los)];
        let single = ArrayGeometry::single();
        let h = channel_matrix(&paths, &grid, &single, &single, n - 1, 0).unwrap();
        let expected = Complex64::from_polar(1.0, -2.0 * PI * (n - 1) as f64 / n as f64);
        assert_relative_eq!((h[(0, 0)] - expected).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn delays_one_over_spacing_apart_alias() {
        let grid = siso_grid(64);
        let alpha = Complex64::new(0.5, 0.2);
        let tau = 3.7e-7;
        let two = [
            path(alpha, tau, 0.0, PathTag::Nlos),
            path(alpha, tau + 1.0 / grid.subcarrier_spacing, 0.0, PathTag::Nlos),
        ];
        let one = [path(alpha * 2.0, tau, 0.0, PathTag::Nlos)];
        let single = ArrayGeometry::single();
        let a = channel_response(&two, &grid, &single, &single);
        let b = channel_response(&one, &grid, &single, &single);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).norm() < 1e-12);
        }
    }

    #[test]
    fn index_out_of_range() {
        let grid = siso_grid(4);
        let single = ArrayGeometry::single();
        assert!(channel_matrix(&[], &grid, &single, &single, 4, 0).is_err());
        assert!(channel_matrix(&[], &grid, &single, &single, 0, 1).is_err());
    }

    #[test]
    fn path_loss_examples() {
        let carrier = SPEED_OF_LIGHT / 0.01;
        let g = los_gain(1.0, carrier, 1.0, 1.0).unwrap();
        assert_relative_eq!(g, 1e-4 / (4.0 * PI).powi(2), max_relative = 1e-14);
        assert_relative_eq!(10.0 * g.log10(), -62.0, epsilon = 0.05);
        assert_relative_eq!(los_gain(2.0, carrier, 1.0, 1.0).unwrap(), g / 4.0, max_relative = 1e-14);
        assert_relative_eq!(
            los_gain(1.0, 4.0 * carrier, 1.0, 1.0).unwrap(),
            g / 16.0,
            max_relative = 1e-14
        );
        assert!(los_gain(0.0, carrier, 1.0, 1.0).is_err());
    }

    #[test]
    fn radar_gain_examples() {
        let carrier = SPEED_OF_LIGHT / 0.01;
        let person = radar_gain(50.0, carrier, 1.0, 1.0, 1.0).unwrap();
        let car = radar_gain(50.0, carrier, 100.0, 1.0, 1.0).unwrap();
        assert_relative_eq!(car / person, 100.0, max_relative = 1e-14);
        assert_relative_eq!(
            radar_gain(100.0, carrier, 1.0, 1.0, 1.0).unwrap(),
            person / 16.0,
            max_relative = 1e-14
        );
        let g = radar_gain(10.0, carrier, 1.0, 1.0, 1.0).unwrap();
        assert_relative_eq!(g, 5.04e-12, max_relative = 1e-3);
        assert_relative_eq!(10.0 * g.log10(), -113.0, epsilon = 0.05);
        assert!(radar_gain(0.0, carrier, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn split_is_a_partition() {
        let grid = GridConfig::new(8, 120e3, 2, 1e-5, 28e9).unwrap();
        let all_los = vec![path(Complex64::new(1.0, 0.0), 1e-7, 0.0, PathTag::Los)];
        let (los, nlos) = split_localization(&all_los);
        assert_eq!(los.len(), 1);
        assert!(nlos.is_empty());

        let mut scene: Vec<PathParams> = (0..5)
            .map(|i| path(Complex64::new(1.0, 0.1 * i as f64), 1e-7 * i as f64, 10.0, PathTag::Object))
            .collect();
        scene.extend(make_clutter(3, 2, 0.5, &grid));
        let (objects, clutter) = split_sensing(&scene);
        assert_eq!(objects.len(), 5);
        assert_eq!(clutter.len(), 2);

        let rx = ArrayGeometry::ula(3);
        let tx = ArrayGeometry::ula(2);
        let full = channel_response(&scene, &grid, &rx, &tx);
        let a = channel_response(&objects, &grid, &rx, &tx);
        let b = channel_response(&clutter, &grid, &rx, &tx);
        for i in 0..full.len() {
            assert!((&full[i] - &a[i] - &b[i]).norm() < 1e-12);
        }
    }

    #[test]
    fn clutter_contract() {
        let grid = siso_grid(16);
        assert!(make_clutter(1, 0, 1.0, &grid).is_empty());
        assert_eq!(make_clutter(9, 4, 1.0, &grid), make_clutter(9, 4, 1.0, &grid));
        for p in make_clutter(5, 50, 1.0, &grid) {
            assert!(p.geo.delay >= 0.0 && p.geo.delay < grid.unambiguous_delay());
            assert_eq!(p.tag, PathTag::Clutter);
        }
    }

    #[test]
    fn clutter_power_budget_in_expectation() {
        // Oracle: Monte-Carlo mean of the total |gain|² over 1e4 seeds.
        let grid = siso_grid(16);
        let budget = 2.5;
        let draws = 10_000;
        let mean: f64 = (0..draws)
            .map(|s| make_clutter(s as u64, 3, budget, &grid).iter().map(|p| p.gain.norm_sqr()).sum::<f64>())
            .sum::<f64>()
            / draws as f64;
        assert!((mean / budget - 1.0).abs() < 0.05, "mean clutter power {mean}");
    }
}
