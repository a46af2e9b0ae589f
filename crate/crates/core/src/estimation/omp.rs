//! Orthogonal matching pursuit with model-order detection.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::{DetectedPath, Dictionary};
use crate::geometry::GeoParams;
use crate::linalg::complex_lstsq;
use crate::{Error, Result};

pub const DEFAULT_MAX_PATHS: usize = 10;

/// When OMP stops adding atoms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StopRule {
    /// Stop once `‖r‖² < (1 + γ)·(expected noise energy)`.
    ResidualEnergy { gamma: f64 },
    /// Stop once the best normalised correlation `|aᴴr|²/‖a‖²` is below
    /// `σ²·(ln G − ln p_fa)`: the level pure noise exceeds with probability
    /// about `p_fa` over `G` atoms.
    Cfar { pfa: f64 },
}

impl Default for StopRule {
    fn default() -> Self {
        StopRule::Cfar { pfa: 1e-2 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OmpResult {
    pub paths: Vec<DetectedPath>,
    pub atoms: Vec<usize>,
    /// `‖r‖²` before the first and after every iteration.
    pub residual_norms: Vec<f64>,
}

impl OmpResult {
    pub fn n_paths(&self) -> usize {
        self.paths.len()
    }
}

/// Greedy atom selection with full LS re-projection after each pick.
/// `noise_var` is the per-entry noise variance of `h`. Ties in the
/// correlation argmax go to the lowest atom index.
pub fn omp(
    h: &DVector<Complex64>,
    dict: &Dictionary,
    stop: StopRule,
    noise_var: f64,
    max_paths: usize,
) -> Result<OmpResult> {
    omp_banded(h, dict, stop, noise_var, max_paths, 0.0)
}

/// Band-excluded OMP: an atom is not eligible while it lies within `band`
/// resolution cells of an already selected atom in every active domain
/// (delay distance taken modulo `1/Δf`). `band = 0` is plain OMP.
pub fn omp_banded(
    h: &DVector<Complex64>,
    dict: &Dictionary,
    stop: StopRule,
    noise_var: f64,
    max_paths: usize,
    band: f64,
) -> Result<OmpResult> {
    if !(band >= 0.0) {
        return Err(Error::InvalidParameter(format!("exclusion band must be ≥ 0, got {band}")));
    }
    if h.len() != dict.atom_len() {
        return Err(Error::DimensionMismatch(format!(
            "ĥ has {} entries, dictionary atoms have {}",
            h.len(),
            dict.atom_len()
        )));
    }
    let noise_energy = noise_var * h.len() as f64;
    let cfar_level = match stop {
        StopRule::Cfar { pfa } => {
            if !(pfa > 0.0 && pfa < 1.0) {
                return Err(Error::InvalidParameter(format!("false-alarm probability {pfa} outside (0, 1)")));
            }
            noise_var * ((dict.len() as f64).ln() - pfa.ln())
        }
        StopRule::ResidualEnergy { .. } => 0.0,
    };

    let mut r = h.clone();
    let mut atoms: Vec<usize> = Vec::new();
    let mut columns: Vec<DVector<Complex64>> = Vec::new();
    let mut gains = DVector::zeros(0);
    let mut residual_norms = vec![r.norm_squared()];

    while atoms.len() < max_paths {
        if let StopRule::ResidualEnergy { gamma } = stop {
            if r.norm_squared() < (1.0 + gamma) * noise_energy {
                break;
            }
        }
        let mut corr = dict.correlations(&r);
        if band > 0.0 && !atoms.is_empty() {
            let chosen: Vec<GeoParams> = atoms.iter().map(|&a| dict.params(a)).collect();
            for (i, c) in corr.iter_mut().enumerate() {
                let p = dict.params(i);
                if chosen.iter().any(|q| dict.within_band(&p, q, band)) {
                    *c = f64::NEG_INFINITY;
                }
            }
        }
        let (best, value) = corr
            .iter()
            .enumerate()
            .fold((0usize, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
        if matches!(stop, StopRule::Cfar { .. }) && value < cfar_level {
            break;
        }
        if atoms.contains(&best) || !(value > 0.0) || !value.is_finite() {
            break;
        }
        atoms.push(best);
        columns.push(dict.atom(best));
        let a = DMatrix::from_columns(&columns);
        gains = complex_lstsq(&a, h).ok_or_else(|| Error::InvalidParameter("OMP projection failed".into()))?;
        let next = h - &a * &gains;
        // Guard against round-off growth so the residual sequence stays monotone.
        r = if next.norm_squared() <= r.norm_squared() { next } else { r };
        residual_norms.push(r.norm_squared());
    }

    let paths = atoms
        .iter()
        .enumerate()
        .map(|(i, &a)| DetectedPath {
            geo: dict.params(a),
            gain: gains[i],
            domains: dict.domains,
            covariance: None,
        })
        .collect();
    Ok(OmpResult {
        paths,
        atoms,
        residual_norms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{ArrayGeometry, GridConfig};
    use crate::geometry::{ParamKind, ParamSet};

    fn setup() -> Dictionary {
        let grid = GridConfig::new(32, 120e3, 1, 1e-4, 28e9).unwrap();
        let s = ArrayGeometry::single();
        Dictionary::new(&grid, &s, &s, ParamSet::of(&[ParamKind::Delay]), 4).unwrap()
    }

    #[test]
    fn single_on_grid_path_noiseless() {
        let d = setup();
        let h = d.atom(37) * Complex64::new(0.5, 0.5);
        let res = omp(&h, &d, StopRule::Cfar { pfa: 1e-2 }, 1e-12, 10).unwrap();
        assert_eq!(res.atoms, vec![37]);
        assert!((res.paths[0].gain - Complex64::new(0.5, 0.5)).norm() < 1e-12);
        let res = omp(&h, &d, StopRule::ResidualEnergy { gamma: 0.5 }, 1e-12, 10).unwrap();
        assert_eq!(res.atoms, vec![37]);
    }

    #[test]
    fn pure_noise_usually_empty() {
        let d = setup();
        let mut h = DVector::zeros(d.atom_len());
        crate::signal::add_noise(h.as_mut_slice(), 1.0, 3);
        let res = omp(&h, &d, StopRule::Cfar { pfa: 1e-3 }, 1.0, 10).unwrap();
        assert!(res.paths.is_empty());
    }

    #[test]
    fn band_exclusion_merges_unresolved_pair() {
        let d = setup();
        let res = 1.0 / d.grid.bandwidth();
        let h = d.atom_at(&GeoParams::delay_only(1.0e-6)) + d.atom_at(&GeoParams::delay_only(1.0e-6 + 0.5 * res));
        let plain = omp(&h, &d, StopRule::Cfar { pfa: 1e-2 }, 1e-6, 10).unwrap();
        assert!(plain.n_paths() >= 2);
        let banded = omp_banded(&h, &d, StopRule::Cfar { pfa: 1e-2 }, 1e-6, 10, 1.0).unwrap();
        let delays: Vec<f64> = banded.paths.iter().map(|p| p.geo.delay).collect();
        for (i, a) in delays.iter().enumerate() {
            for b in &delays[i + 1..] {
                assert!((a - b).abs() > res);
            }
        }
        assert!(omp_banded(&h, &d, StopRule::default(), 1e-6, 10, -1.0).is_err());
    }

    #[test]
    fn residual_non_increasing_and_capped() {
        let d = setup();
        let mut h = d.atom_at(&GeoParams::delay_only(1.1e-6)) + d.atom_at(&GeoParams::delay_only(3.3e-6)) * Complex64::new(0.5, 0.0);
        crate::signal::add_noise(h.as_mut_slice(), 0.01, 9);
        let res = omp(&h, &d, StopRule::Cfar { pfa: 0.999 }, 1e-9, 4).unwrap();
        assert_eq!(res.n_paths(), 4);
        assert!(res.residual_norms.windows(2).all(|w| w[1] <= w[0]));
    }
}
