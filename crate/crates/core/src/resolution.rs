//! Closed-form resolution limits and pairwise resolvability.
//!
//! Two paths are separable when they differ by more than the resolution in
//! at least one domain: `1/W` in delay, `1/(K·Ts)` in Doppler and roughly
//! `2/N` radians per angular axis of an `N`-element half-wavelength array.

use crate::channel::{ArrayGeometry, GridConfig};
use crate::geometry::{GeoParams, ParamKind};
use crate::SPEED_OF_LIGHT;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResolutionReport {
    /// s.
    pub delay_res: f64,
    /// Hz.
    pub doppler_res: f64,
    /// rad at boresight, azimuth axis (`∞` when the array has no azimuth extent).
    pub azimuth_res: f64,
    /// rad at boresight, elevation axis.
    pub elevation_res: f64,
    /// m/s per Hz of Doppler (the wavelength; Doppler is one-way, `v/λ`).
    pub wavelength: f64,
}

impl ResolutionReport {
    /// m.
    pub fn distance_res(&self) -> f64 {
        self.delay_res * SPEED_OF_LIGHT
    }

    /// m/s.
    pub fn velocity_res(&self) -> f64 {
        self.doppler_res * self.wavelength
    }

    /// Approximate azimuth resolution off boresight: the spatial frequency
    /// `π cos(el) sin(az)` has derivative `π cos(el) cos(az)`, so the
    /// boresight value is divided by `cos(az)`. Flagged approximate.
    pub fn azimuth_res_at(&self, azimuth: f64) -> (f64, bool) {
        let c = azimuth.cos().abs();
        if c < 1e-12 {
            return (f64::INFINITY, true);
        }
        (self.azimuth_res / c, azimuth != 0.0)
    }
}

/// Effective number of half-wavelength elements along an axis.
fn aperture_elements(array: &ArrayGeometry, axis: usize) -> f64 {
    let coords: Vec<f64> = array.element_positions.iter().map(|p| p[axis]).collect();
    let min = coords.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = coords.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    // Aperture in wavelengths; N half-wavelength elements span (N−1)/2.
    2.0 * (max - min) + 1.0
}

pub fn resolution_limits(grid: &GridConfig, array: &ArrayGeometry) -> ResolutionReport {
    let (has_y, has_z) = array.extent();
    let az = if has_y { 2.0 / aperture_elements(array, 1) } else { f64::INFINITY };
    let el = if has_z { 2.0 / aperture_elements(array, 2) } else { f64::INFINITY };
    ResolutionReport {
        delay_res: 1.0 / grid.bandwidth(),
        doppler_res: 1.0 / grid.integration_time(),
        azimuth_res: az,
        elevation_res: el,
        wavelength: grid.wavelength(),
    }
}

/// Domains in which two paths exceed the resolution limit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Resolvability {
    pub delay: bool,
    pub doppler: bool,
    pub angle: bool,
}

impl Resolvability {
    pub fn any(&self) -> bool {
        self.delay || self.doppler || self.angle
    }

    pub fn none(&self) -> bool {
        !self.any()
    }
}

/// Angles are compared on the receive side for both AoA components and on
/// the transmit side for both AoD components.
pub fn resolvable(p1: &GeoParams, p2: &GeoParams, report: &ResolutionReport) -> Resolvability {
    let d = |k: ParamKind| p1.difference(p2, k).abs();
    Resolvability {
        delay: d(ParamKind::Delay) > report.delay_res,
        doppler: d(ParamKind::Doppler) > report.doppler_res,
        angle: d(ParamKind::AoaAzimuth) > report.azimuth_res
            || d(ParamKind::AodAzimuth) > report.azimuth_res
            || d(ParamKind::AoaElevation) > report.elevation_res
            || d(ParamKind::AodElevation) > report.elevation_res,
    }
}
