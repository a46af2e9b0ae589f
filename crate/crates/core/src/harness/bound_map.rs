//! PEB/OEB over a horizontal raster of UE positions.

use std::path::Path;

use nalgebra::Vector3;
use rayon::prelude::*;

use super::config::BoundMapConfig;
use crate::bounds::{peb_oeb_veb, LocalizationScene};
use crate::channel::{ArrayGeometry, GridConfig};
use crate::geometry::{AnchorState, Link, Rotation, StateParam, UEState};
use crate::signal::{CombinerKind, PilotKind, TxRxConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundMapCell {
    pub x: f64,
    pub y: f64,
    /// m; NaN when not identifiable.
    pub peb: f64,
    /// rad; NaN when orientation is not estimated or not identifiable.
    pub oeb: f64,
    pub identifiable: bool,
}

/// Cells in row-major order: `y` outer, `x` inner.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundMap {
    pub nx: usize,
    pub ny: usize,
    pub cells: Vec<BoundMapCell>,
}

impl BoundMap {
    pub fn at(&self, ix: usize, iy: usize) -> &BoundMapCell {
        &self.cells[iy * self.nx + ix]
    }
}

fn axis(range: [f64; 2], n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (range[0] + range[1])];
    }
    (0..n).map(|i| range[0] + (range[1] - range[0]) * i as f64 / (n - 1) as f64).collect()
}

fn scene(cfg: &BoundMapConfig) -> LocalizationScene {
    let anchors = cfg
        .anchors
        .iter()
        .enumerate()
        .map(|(i, a)| {
            AnchorState::new(i as u32, Vector3::from(a.position_m), Rotation::from_euler(0.0, 0.0, a.yaw_rad))
        })
        .collect();
    let array = |n: usize| if n == 1 { ArrayGeometry::single() } else { ArrayGeometry::ula(n) };
    let mut estimate = StateParam::POSITION.to_vec();
    if cfg.estimate_clock_bias {
        estimate.push(StateParam::ClockBias);
    }
    if cfg.estimate_orientation {
        estimate.extend(StateParam::ROTATION);
    }
    LocalizationScene {
        anchors,
        ue: UEState::at(Vector3::new(0.0, 0.0, cfg.z_m)),
        link: if cfg.uplink { Link::Uplink } else { Link::Downlink },
        anchor_array: array(cfg.anchor_elements),
        ue_array: array(cfg.ue_elements),
        estimate,
    }
}

/// Bounds at every raster point. A planar anchor layout leaves z
/// unobservable, so the height is treated as known.
pub fn run_bound_map(cfg: &BoundMapConfig, seed: u64) -> Result<BoundMap> {
    let mut base = scene(cfg);
    let planar = base.anchors.iter().all(|a| (a.position.z - cfg.z_m).abs() < 1e-9);
    if planar {
        base.estimate.retain(|p| *p != StateParam::PositionZ);
    }
    let grid = GridConfig::new(cfg.n_subcarriers, cfg.subcarrier_spacing_hz, 1, 1.0 / cfg.subcarrier_spacing_hz, cfg.carrier_hz)?;
    let (rx, tx) = base.arrays();
    let pilots = if tx.n_elements() > 1 { PilotKind::RandomPhase } else { PilotKind::Uniform };
    let txrx = TxRxConfig::with_pilots(
        &grid,
        tx.n_elements(),
        rx.n_elements(),
        cfg.tx_power_w,
        cfg.noise_psd_w_per_hz,
        pilots,
        CombinerKind::Full,
        seed,
    )?;
    let xs = axis(cfg.x_range_m, cfg.nx);
    let ys = axis(cfg.y_range_m, cfg.ny);
    let cells = (0..cfg.nx * cfg.ny)
        .into_par_iter()
        .map(|i| {
            let (x, y) = (xs[i % cfg.nx], ys[i / cfg.nx]);
            let mut s = base.clone();
            s.ue.position = Vector3::new(x, y, cfg.z_m);
            match peb_oeb_veb(&s, &grid, &txrx) {
                Ok(b) => Ok(BoundMapCell {
                    x,
                    y,
                    peb: b.peb.unwrap_or(f64::NAN),
                    oeb: b.oeb.unwrap_or(f64::NAN),
                    identifiable: b.identifiable,
                }),
                // A UE on top of an anchor has no defined geometry.
                Err(Error::DegenerateGeometry(_)) => Ok(BoundMapCell {
                    x,
                    y,
                    peb: f64::NAN,
                    oeb: f64::NAN,
                    identifiable: false,
                }),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;
    Ok(BoundMap {
        nx: cfg.nx,
        ny: cfg.ny,
        cells,
    })
}

pub fn emit_bound_map_csv(map: &BoundMap, path: &Path) -> Result<()> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["x_m", "y_m", "peb_m", "oeb_rad", "identifiable"]).map_err(csv_err)?;
    for c in &map.cells {
        w.write_record([
            format!("{:.16e}", c.x),
            format!("{:.16e}", c.y),
            format!("{:.16e}", c.peb),
            format!("{:.16e}", c.oeb),
            c.identifiable.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}
