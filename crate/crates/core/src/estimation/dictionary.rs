//! Oversampled Kronecker dictionary `a_d(τ) ⊗ a_D(ν) ⊗ a_rx(θ) ⊗ a_tx(φ)`.

use std::sync::Arc;

use nalgebra::DVector;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::channel::{ArrayGeometry, GridConfig};
use crate::geometry::{Angles, GeoParams, ParamKind, ParamSet};
use crate::resolution::{resolution_limits, ResolutionReport};
use crate::{Error, Result};

/// Atom `i` corresponds to `((i_τ·G_ν + i_ν)·G_rx + i_rx)·G_tx + i_tx`.
///
/// Delays sit on `i/(L·Δf)` with `L = oversampling·N`, so delay correlations
/// are one inverse FFT of length `L`.
#[derive(Clone)]
pub struct Dictionary {
    pub grid: GridConfig,
    pub rx: ArrayGeometry,
    pub tx: ArrayGeometry,
    /// Parameters that vary across atoms.
    pub domains: ParamSet,
    pub delays: Vec<f64>,
    pub dopplers: Vec<f64>,
    pub aoa: Vec<Angles>,
    pub aod: Vec<Angles>,
    fft_len: usize,
    fft: Arc<dyn Fft<f64>>,
    rx_res: ResolutionReport,
    tx_res: ResolutionReport,
}

impl std::fmt::Debug for Dictionary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Dictionary")
            .field("domains", &self.domains)
            .field("delays", &self.delays.len())
            .field("dopplers", &self.dopplers.len())
            .field("aoa", &self.aoa.len())
            .field("aod", &self.aod.len())
            .finish()
    }
}

/// Angles on a grid uniform in the direction sines, for the axes the array spans.
fn angle_grid(array: &ArrayGeometry, want_az: bool, want_el: bool, oversampling: usize) -> Vec<Angles> {
    let (has_y, has_z) = array.extent();
    let span = |axis: usize| {
        let c: Vec<f64> = array.element_positions.iter().map(|p| p[axis]).collect();
        let lo = c.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = c.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        2.0 * (hi - lo) + 1.0
    };
    let sines = |count: usize| -> Vec<f64> { (0..count).map(|i| -1.0 + (2.0 * i as f64 + 1.0) / count as f64).collect() };
    let el_sines = if want_el && has_z {
        sines((oversampling as f64 * span(2)).ceil() as usize)
    } else {
        vec![0.0]
    };
    let az_sines = if want_az && has_y {
        sines((oversampling as f64 * span(1)).ceil() as usize)
    } else {
        vec![0.0]
    };
    let mut out = Vec::new();
    for &se in &el_sines {
        let el = se.asin();
        for &sa in &az_sines {
            let s = sa / el.cos();
            if s.abs() <= 1.0 {
                out.push(Angles::new(s.asin(), el));
            }
        }
    }
    out
}

impl Dictionary {
    /// Grid steps are `1/oversampling` of the resolution in every active domain.
    /// Doppler is active only for `K > 1`, angles only for arrays with extent
    /// along the matching axis.
    pub fn new(
        grid: &GridConfig,
        rx: &ArrayGeometry,
        tx: &ArrayGeometry,
        domains: ParamSet,
        oversampling: usize,
    ) -> Result<Self> {
        if oversampling == 0 {
            return Err(Error::InvalidParameter("oversampling must be ≥ 1".into()));
        }
        if !domains.contains(ParamKind::Delay) {
            return Err(Error::InvalidParameter("dictionary needs the delay domain".into()));
        }
        let fft_len = oversampling * grid.n_subcarriers;
        let delays = (0..fft_len)
            .map(|i| i as f64 / (fft_len as f64 * grid.subcarrier_spacing))
            .collect();
        let dopplers = if domains.contains(ParamKind::Doppler) && grid.n_symbols > 1 {
            let g = oversampling * grid.n_symbols;
            (0..g)
                .map(|i| (i as f64 - (g / 2) as f64) / (g as f64 * grid.symbol_duration))
                .collect()
        } else {
            vec![0.0]
        };
        let aoa = angle_grid(
            rx,
            domains.contains(ParamKind::AoaAzimuth),
            domains.contains(ParamKind::AoaElevation),
            oversampling,
        );
        let aod = angle_grid(
            tx,
            domains.contains(ParamKind::AodAzimuth),
            domains.contains(ParamKind::AodElevation),
            oversampling,
        );
        let mut active = ParamSet::EMPTY.with(ParamKind::Delay);
        if dopplers.len() > 1 {
            active = active.with(ParamKind::Doppler);
        }
        let (ry, rz) = rx.extent();
        let (ty, tz) = tx.extent();
        for (kind, ok) in [
            (ParamKind::AoaAzimuth, ry),
            (ParamKind::AoaElevation, rz),
            (ParamKind::AodAzimuth, ty),
            (ParamKind::AodElevation, tz),
        ] {
            if ok && domains.contains(kind) {
                active = active.with(kind);
            }
        }
        let fft = FftPlanner::new().plan_fft_inverse(fft_len);
        Ok(Self {
            grid: *grid,
            rx: rx.clone(),
            tx: tx.clone(),
            domains: active,
            delays,
            dopplers,
            aoa,
            aod,
            fft_len,
            fft,
            rx_res: resolution_limits(grid, rx),
            tx_res: resolution_limits(grid, tx),
        })
    }

    /// Keeps only delays up to `max_delay`.
    pub fn with_max_delay(mut self, max_delay: f64) -> Self {
        let keep = self.delays.iter().take_while(|&&d| d <= max_delay).count().max(1);
        self.delays.truncate(keep);
        self
    }

    pub fn len(&self) -> usize {
        self.delays.len() * self.dopplers.len() * self.aoa.len() * self.aod.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Length of one atom.
    pub fn atom_len(&self) -> usize {
        self.grid.n_subcarriers * self.grid.n_symbols * self.rx.n_elements() * self.tx.n_elements()
    }

    fn split(&self, index: usize) -> (usize, usize, usize, usize) {
        let (gn, gr, gt) = (self.dopplers.len(), self.aoa.len(), self.aod.len());
        let it = index % gt;
        let ir = (index / gt) % gr;
        let iv = (index / (gt * gr)) % gn;
        let id = index / (gt * gr * gn);
        (id, iv, ir, it)
    }

    /// True when `a` and `b` are within `band` resolution cells of each other
    /// in every active domain.
    pub fn within_band(&self, a: &GeoParams, b: &GeoParams, band: f64) -> bool {
        let (rx, tx) = (&self.rx_res, &self.tx_res);
        let period = self.grid.unambiguous_delay();
        self.domains.iter().all(|k| {
            let d = a.difference(b, k).abs();
            let (d, res) = match k {
                ParamKind::Delay => (d.rem_euclid(period).min(period - d.rem_euclid(period)), rx.delay_res),
                ParamKind::Doppler => (d, rx.doppler_res),
                ParamKind::AoaAzimuth => (d, rx.azimuth_res),
                ParamKind::AoaElevation => (d, rx.elevation_res),
                ParamKind::AodAzimuth => (d, tx.azimuth_res),
                ParamKind::AodElevation => (d, tx.elevation_res),
            };
            d <= band * res
        })
    }

    pub fn params(&self, index: usize) -> GeoParams {
        let (id, iv, ir, it) = self.split(index);
        GeoParams {
            aoa: self.aoa[ir],
            aod: self.aod[it],
            delay: self.delays[id],
            doppler: self.dopplers[iv],
        }
    }

    /// Atom for arbitrary parameters (on or off the grid).
    pub fn atom_at(&self, geo: &GeoParams) -> DVector<Complex64> {
        let a_d = DVector::from_fn(self.grid.n_subcarriers, |n, _| self.grid.delay_phasor(n, geo.delay));
        let a_dd = DVector::from_fn(self.grid.n_symbols, |k, _| self.grid.doppler_phasor(k, geo.doppler));
        let a_rx = self.rx.steering_vector(&geo.aoa);
        let a_tx = self.tx.steering_vector(&geo.aod);
        a_d.kronecker(&a_dd).kronecker(&a_rx).kronecker(&a_tx)
    }

    pub fn atom(&self, index: usize) -> DVector<Complex64> {
        self.atom_at(&self.params(index))
    }

    /// `|aᴴ r|² / ‖a‖²` for every atom, in atom order.
    pub fn correlations(&self, r: &DVector<Complex64>) -> Vec<f64> {
        let (nn, kk) = (self.grid.n_subcarriers, self.grid.n_symbols);
        let (nr, nt) = (self.rx.n_elements(), self.tx.n_elements());
        let inner = kk * nr * nt;
        let norm2 = self.atom_len() as f64;
        let (gd, gn, gr, gt) = (self.delays.len(), self.dopplers.len(), self.aoa.len(), self.aod.len());
        let mut out = vec![0.0; self.len()];
        let mut buf = vec![Complex64::new(0.0, 0.0); self.fft_len];
        for (iv, &nu) in self.dopplers.iter().enumerate() {
            let a_dd = DVector::from_fn(kk, |k, _| self.grid.doppler_phasor(k, nu));
            for (ir, aoa) in self.aoa.iter().enumerate() {
                let a_rx = self.rx.steering_vector(aoa);
                let a_dr = a_dd.kronecker(&a_rx);
                for (it, aod) in self.aod.iter().enumerate() {
                    let w = a_dr.kronecker(&self.tx.steering_vector(aod)).map(|v| v.conj());
                    buf.iter_mut().for_each(|b| *b = Complex64::new(0.0, 0.0));
                    for (b, block) in buf.iter_mut().zip(r.as_slice().chunks(inner)).take(nn) {
                        *b = block.iter().zip(w.iter()).map(|(x, c)| x * c).sum();
                    }
                    // Σ_n z_n e^{+j2π n i/L}: an unnormalised inverse DFT.
                    self.fft.process(&mut buf);
                    for (id, v) in buf.iter().take(gd).enumerate() {
                        out[((id * gn + iv) * gr + ir) * gt + it] = v.norm_sqr() / norm2;
                    }
                }
            }
        }
        out
    }
}
