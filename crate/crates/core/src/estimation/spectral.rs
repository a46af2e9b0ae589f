//! Spatial-frequency mapping and the periodogram baseline.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;

use super::ChannelEstimate;
use crate::channel::{ArrayGeometry, GridConfig};
use crate::geometry::{Angles, GeoParams};
use crate::{Error, Result};

/// Wraps into `[−π, π)`.
fn wrap_half_open(w: f64) -> f64 {
    let r = (w + PI).rem_euclid(2.0 * PI) - PI;
    if r >= PI {
        r - 2.0 * PI
    } else {
        r
    }
}

/// Uniform element spacing along y and z (wavelengths), `None` for an axis
/// without extent. Errors unless the elements form a full rectangular grid
/// in a plane of constant x.
fn uniform_spacing(array: &ArrayGeometry) -> Result<(Option<f64>, Option<f64>)> {
    let p = &array.element_positions;
    if p.iter().any(|e| (e.x - p[0].x).abs() > 1e-12) {
        return Err(Error::UnsupportedStructure("array elements are not coplanar in y-z".into()));
    }
    let axis = |i: usize| -> Result<(usize, Option<f64>)> {
        let mut c: Vec<f64> = p.iter().map(|e| e[i]).collect();
        c.sort_by(f64::total_cmp);
        c.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        if c.len() == 1 {
            return Ok((1, None));
        }
        let d = c[1] - c[0];
        if c.windows(2).any(|w| ((w[1] - w[0]) - d).abs() > 1e-9) {
            return Err(Error::UnsupportedStructure("non-uniform element spacing".into()));
        }
        Ok((c.len(), Some(d)))
    };
    let (ny, dy) = axis(1)?;
    let (nz, dz) = axis(2)?;
    if ny * nz != p.len() {
        return Err(Error::UnsupportedStructure("elements do not form a full rectangular grid".into()));
    }
    Ok((dy, dz))
}

/// Per-dimension frequencies `ω` of a path's harmonic along each uniformly
/// sampled axis. Absent axes are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SpatialFrequencies {
    /// `−2πΔfτ`, wrapped to `[−π, π)`.
    pub delay: f64,
    /// `2πTsν`, wrapped; present for `K > 1`.
    pub doppler: Option<f64>,
    pub aoa_y: Option<f64>,
    pub aoa_z: Option<f64>,
    pub aod_y: Option<f64>,
    pub aod_z: Option<f64>,
}

pub fn spatial_frequencies(
    geo: &GeoParams,
    grid: &GridConfig,
    rx: &ArrayGeometry,
    tx: &ArrayGeometry,
) -> Result<SpatialFrequencies> {
    let (ry, rz) = uniform_spacing(rx)?;
    let (ty, tz) = uniform_spacing(tx)?;
    let along_y = |d: Option<f64>, a: &Angles| d.map(|d| 2.0 * PI * d * a.elevation.cos() * a.azimuth.sin());
    let along_z = |d: Option<f64>, a: &Angles| d.map(|d| 2.0 * PI * d * a.elevation.sin());
    Ok(SpatialFrequencies {
        delay: wrap_half_open(-2.0 * PI * grid.subcarrier_spacing * geo.delay),
        doppler: (grid.n_symbols > 1).then(|| wrap_half_open(2.0 * PI * grid.symbol_duration * geo.doppler)),
        aoa_y: along_y(ry, &geo.aoa),
        aoa_z: along_z(rz, &geo.aoa),
        aod_y: along_y(ty, &geo.aod),
        aod_z: along_z(tz, &geo.aod),
    })
}

/// Inverse of [`spatial_frequencies`]. Delay maps into `[0, 1/Δf)`, Doppler
/// into `[−1/(2Ts), 1/(2Ts))`, azimuths into the front half-plane; parameters
/// without a frequency are 0.
pub fn geo_from_spatial(
    f: &SpatialFrequencies,
    grid: &GridConfig,
    rx: &ArrayGeometry,
    tx: &ArrayGeometry,
) -> Result<GeoParams> {
    let (ry, rz) = uniform_spacing(rx)?;
    let (ty, tz) = uniform_spacing(tx)?;
    let mut delay = -f.delay / (2.0 * PI * grid.subcarrier_spacing);
    if delay < 0.0 {
        delay += 1.0 / grid.subcarrier_spacing;
    }
    let angles = |wy: Option<f64>, dy: Option<f64>, wz: Option<f64>, dz: Option<f64>| -> Result<Angles> {
        let el = match (wz, dz) {
            (Some(w), Some(d)) => (w / (2.0 * PI * d)).clamp(-1.0, 1.0).asin(),
            _ => 0.0,
        };
        let az = match (wy, dy) {
            (Some(w), Some(d)) => {
                let s = w / (2.0 * PI * d * el.cos());
                if s.abs() > 1.0 + 1e-12 {
                    return Err(Error::InvalidParameter("spatial frequency outside the visible region".into()));
                }
                s.clamp(-1.0, 1.0).asin()
            }
            _ => 0.0,
        };
        Ok(Angles { azimuth: az, elevation: el })
    };
    Ok(GeoParams {
        aoa: angles(f.aoa_y, ry, f.aoa_z, rz)?,
        aod: angles(f.aod_y, ty, f.aod_z, tz)?,
        delay,
        doppler: f.doppler.map_or(0.0, |w| w / (2.0 * PI * grid.symbol_duration)),
    })
}

/// Dimensions transformed by [`periodogram`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PeriodogramDims {
    pub delay: bool,
    pub doppler: bool,
    pub oversampling: usize,
}

impl Default for PeriodogramDims {
    fn default() -> Self {
        Self {
            delay: true,
            doppler: false,
            oversampling: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralPeak {
    pub delay: f64,
    pub doppler: f64,
    pub power: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Periodogram {
    pub delays: Vec<f64>,
    pub dopplers: Vec<f64>,
    /// `power[i_τ][i_ν]`, averaged over antenna pairs, normalised by `(N·K)²`.
    pub power: Vec<Vec<f64>>,
    /// Local maxima at or above `threshold · max`, strongest first.
    pub peaks: Vec<SpectralPeak>,
}

/// Zero-padded DFT magnitude over delay (and optionally Doppler), summed
/// non-coherently over antenna pairs.
pub fn periodogram(est: &ChannelEstimate, grid: &GridConfig, dims: PeriodogramDims, threshold: f64) -> Periodogram {
    let (nn, kk) = (est.n_subcarriers, est.n_symbols);
    let o = dims.oversampling.max(1);
    let ld = if dims.delay { o * nn } else { 1 };
    let lv = if dims.doppler && kk > 1 { o * kk } else { 1 };
    let mut planner = FftPlanner::new();
    let ifft = planner.plan_fft_inverse(ld);
    let fft = planner.plan_fft_forward(lv);
    let mut power = vec![vec![0.0; lv]; ld];
    let pairs = (est.n_rx * est.n_tx) as f64;
    for r in 0..est.n_rx {
        for t in 0..est.n_tx {
            // Delay transform per symbol: Σ_n x e^{+j2πn i/L}.
            let mut cols = vec![vec![Complex64::new(0.0, 0.0); ld]; kk];
            for (k, col) in cols.iter_mut().enumerate() {
                if dims.delay {
                    for (n, c) in col.iter_mut().enumerate().take(nn) {
                        *c = est.get(n, k)[(r, t)];
                    }
                    ifft.process(col);
                } else {
                    col[0] = (0..nn).map(|n| est.get(n, k)[(r, t)]).sum();
                }
            }
            for (i, row) in power.iter_mut().enumerate() {
                let mut buf = vec![Complex64::new(0.0, 0.0); lv];
                if lv > 1 {
                    // Doppler bins centred on zero: shift by (−1)^k.
                    for k in 0..kk {
                        buf[k] = if k % 2 == 0 { cols[k][i] } else { -cols[k][i] };
                    }
                    // Σ_k x e^{−j2πk(j − L/2)/L}: bin j ↔ ν = (j − L/2)/(L·Ts).
                    fft.process(&mut buf);
                } else {
                    buf[0] = cols.iter().map(|c| c[i]).sum();
                }
                for (p, v) in row.iter_mut().zip(&buf) {
                    *p += v.norm_sqr() / ((nn * kk) as f64).powi(2) / pairs;
                }
            }
        }
    }
    let delays: Vec<f64> = (0..ld).map(|i| i as f64 / (ld as f64 * grid.subcarrier_spacing)).collect();
    let dopplers: Vec<f64> = if lv > 1 {
        (0..lv)
            .map(|j| (j as f64 - (lv / 2) as f64) / (lv as f64 * grid.symbol_duration))
            .collect()
    } else {
        vec![0.0]
    };
    let max = power.iter().flatten().cloned().fold(0.0, f64::max);
    let mut peaks = Vec::new();
    for i in 0..ld {
        for j in 0..lv {
            let v = power[i][j];
            if v < threshold * max || v <= 0.0 {
                continue;
            }
            let mut is_max = true;
            for di in [-1i64, 0, 1] {
                for dj in [-1i64, 0, 1] {
                    if di == 0 && dj == 0 {
                        continue;
                    }
                    let ii = (i as i64 + di).rem_euclid(ld as i64) as usize;
                    let jj = j as i64 + dj;
                    if jj < 0 || jj >= lv as i64 || (ld == 1 && di != 0) {
                        continue;
                    }
                    let w = power[ii][jj as usize];
                    // Plateaus: only the first (lowest index) cell counts.
                    if w > v || (w == v && (ii, jj as usize) < (i, j)) {
                        is_max = false;
                    }
                }
            }
            if is_max {
                peaks.push(SpectralPeak {
                    delay: delays[i],
                    doppler: dopplers[j],
                    power: v,
                });
            }
        }
    }
    peaks.sort_by(|a, b| b.power.total_cmp(&a.power));
    Periodogram {
        delays,
        dopplers,
        power,
        peaks,
    }
}
