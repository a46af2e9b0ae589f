//! Channel-parameter estimation.
//!
//! The chain is: LS channel estimate per (n,k) → vectorisation into the
//! sparse form `ĥ = Σ α_l a_d(τ_l) ⊗ a_D(ν_l) ⊗ a_rx(θ_l) ⊗ a_tx(φ_l) + n`
//! → OMP over an oversampled dictionary → local ML refinement.

mod dictionary;
mod ls;
mod matching;
mod omp;
mod refine;
mod spectral;

use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::geometry::{GeoParams, ParamKind, ParamSet};
use crate::{Error, Result};

pub use dictionary::Dictionary;
pub use ls::{devectorize, ls_channel_estimate, vectorize, ChannelEstimate, LsMode};
pub use matching::{match_detections, Gates, Matching};
pub use omp::{omp, omp_banded, OmpResult, StopRule, DEFAULT_MAX_PATHS};
pub use refine::{ml_refine, RefineData, RefineOptions, Refinement};
pub use spectral::{
    geo_from_spatial, periodogram, spatial_frequencies, Periodogram, PeriodogramDims, SpatialFrequencies, SpectralPeak,
};

/// One estimated path.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectedPath {
    pub geo: GeoParams,
    pub gain: Complex64,
    /// Which geometric parameters were estimated.
    pub domains: ParamSet,
    /// Covariance of the estimated parameters in `domains` order, when known.
    pub covariance: Option<DMatrix<f64>>,
}

impl DetectedPath {
    /// Variance of one estimated parameter.
    pub fn variance(&self, kind: ParamKind) -> Option<f64> {
        let i = self.domains.position(kind)?;
        self.covariance.as_ref().map(|c| c[(i, i)])
    }
}

const DETECTION_HEADER: [&str; 16] = [
    "trial",
    "domains",
    "aoa_azimuth_rad",
    "aoa_elevation_rad",
    "aod_azimuth_rad",
    "aod_elevation_rad",
    "delay_s",
    "doppler_Hz",
    "gain_abs",
    "gain_arg_rad",
    "var_aoa_azimuth_rad2",
    "var_aoa_elevation_rad2",
    "var_aod_azimuth_rad2",
    "var_aod_elevation_rad2",
    "var_delay_s2",
    "var_doppler_Hz2",
];

/// One row per path; variances of parameters that were not estimated are empty.
pub fn write_detections_csv(path: &Path, rows: &[(u64, DetectedPath)]) -> Result<()> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(DETECTION_HEADER).map_err(csv_err)?;
    for (trial, p) in rows {
        let mut rec = vec![
            trial.to_string(),
            p.domains.iter().map(|k| k.label()).collect::<Vec<_>>().join("+"),
        ];
        rec.extend(p.geo.to_array().iter().map(|v| format!("{v:.16e}")));
        rec.push(format!("{:.16e}", p.gain.norm()));
        rec.push(format!("{:.16e}", p.gain.arg()));
        for kind in ParamKind::ALL {
            rec.push(p.variance(kind).map(|v| format!("{v:.16e}")).unwrap_or_default());
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}
