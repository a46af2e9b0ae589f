#![allow(dead_code)]

use nalgebra::Vector3;
use radioloc::channel::{ArrayGeometry, GridConfig, PathParams};
use radioloc::estimation::{ls_channel_estimate, ml_refine, omp, vectorize, DetectedPath, Dictionary, LsMode};
use radioloc::estimation::{RefineData, RefineOptions, StopRule};
use radioloc::geometry::{AnchorState, ParamKind, ParamSet, Rotation};
use radioloc::signal::{integrated_snr, observe, TxRxConfig};

pub fn siso_grid(n: usize) -> GridConfig {
    GridConfig::new(n, 120e3, 1, 1.0 / 120e3, 28e9).unwrap()
}

/// Noise PSD that puts `path` at `snr_db` integrated SNR.
pub fn noise_for_snr(path: &PathParams, grid: &GridConfig, snr_db: f64) -> f64 {
    let s = ArrayGeometry::single();
    let probe = TxRxConfig::siso(grid, 1.0, 1.0).unwrap();
    let e = 10f64.powf(integrated_snr(path, grid, &s, &s, &probe).unwrap() / 10.0);
    e / 10f64.powf(snr_db / 10.0)
}

/// Single-path delay ML on a SISO observation: LS estimate, OMP's first
/// (strongest) atom as the start, refinement with model order one.
pub fn delay_chain(paths: &[PathParams], grid: &GridConfig, txrx: &TxRxConfig, seed: u64) -> Option<DetectedPath> {
    let s = ArrayGeometry::single();
    let obs = observe(paths, grid, &s, &s, txrx, seed).unwrap();
    let dict = Dictionary::new(grid, &s, &s, ParamSet::of(&[ParamKind::Delay]), 4).unwrap();
    let est = ls_channel_estimate(&obs, txrx, LsMode::PerSymbol).unwrap();
    let det = omp(&vectorize(&est), &dict, StopRule::default(), est.noise_level, 10).unwrap();
    if det.paths.is_empty() {
        return None;
    }
    let r = ml_refine(RefineData::Channel(&est), &det.paths[..1], grid, &s, &s, &RefineOptions::default()).unwrap();
    r.converged.then(|| r.paths[0].clone())
}

pub fn anchors(points: &[(f64, f64, f64)]) -> Vec<AnchorState> {
    points
        .iter()
        .enumerate()
        .map(|(i, &(x, y, z))| AnchorState::new(i as u32, Vector3::new(x, y, z), Rotation::identity()))
        .collect()
}
