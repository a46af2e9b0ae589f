//! Local maximum-likelihood refinement by damped Gauss–Newton.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::{ChannelEstimate, DetectedPath};
use crate::bounds::{MeanModel, Observer, PathMeanModel, MAX_CONDITION};
use crate::channel::{ArrayGeometry, GridConfig, PathParams, PathTag};
use crate::geometry::{wrap_angle, ParamKind};
use crate::linalg::{equilibrated_inverse, real_lstsq};
use crate::signal::{Observation, TxRxConfig};
use crate::{Error, Result};

/// What the likelihood is evaluated on.
#[derive(Debug, Clone, Copy)]
pub enum RefineData<'a> {
    /// The vectorised LS estimate; its `noise_level` sets the variance.
    Channel(&'a ChannelEstimate),
    /// Raw observations with their pilot schedule.
    Observation(&'a Observation, &'a TxRxConfig),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineOptions {
    pub max_iterations: usize,
    /// Stop when the column-normalised gradient falls below this fraction of `‖y‖`.
    pub gradient_tol: f64,
    pub max_backtracks: usize,
}

impl Default for RefineOptions {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            gradient_tol: 1e-9,
            max_backtracks: 40,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Refinement {
    pub paths: Vec<DetectedPath>,
    pub converged: bool,
    pub iterations: usize,
    /// `‖y − μ‖²` at the start and at the returned estimate.
    pub cost_initial: f64,
    pub cost_final: f64,
    /// Noise variance used for the likelihood.
    pub noise_var: f64,
}

impl Refinement {
    /// `−‖y − μ‖²/σ²`, the log-likelihood up to a constant.
    pub fn log_likelihood(&self) -> f64 {
        -self.cost_final / self.noise_var
    }

    pub fn log_likelihood_initial(&self) -> f64 {
        -self.cost_initial / self.noise_var
    }
}

fn residual_cost(y: &[Complex64], mu: &[Complex64]) -> f64 {
    y.iter().zip(mu).map(|(a, b)| (a - b).norm_sqr()).sum()
}

/// Joint refinement of all paths' active parameters and gains.
/// The returned likelihood is never below that of `initial`.
pub fn ml_refine(
    data: RefineData<'_>,
    initial: &[DetectedPath],
    grid: &GridConfig,
    rx: &ArrayGeometry,
    tx: &ArrayGeometry,
    opts: &RefineOptions,
) -> Result<Refinement> {
    let (y, noise_var, model_grid, observer): (Vec<Complex64>, f64, GridConfig, Observer<'_>) = match data {
        RefineData::Channel(est) => {
            if est.n_rx != rx.n_elements() || est.n_tx != tx.n_elements() || est.n_subcarriers != grid.n_subcarriers {
                return Err(Error::DimensionMismatch("channel estimate does not match arrays/grid".into()));
            }
            let mut g = *grid;
            g.n_symbols = est.n_symbols;
            (super::vectorize(est).as_slice().to_vec(), est.noise_level, g, Observer::Channel)
        }
        RefineData::Observation(obs, txrx) => (obs.samples.clone(), txrx.noise_psd, *grid, Observer::Pilots(txrx)),
    };
    let template: Vec<PathParams> = initial
        .iter()
        .map(|p| PathParams {
            gain: p.gain,
            geo: p.geo,
            tag: PathTag::Object,
        })
        .collect();
    let domains = initial.iter().map(|p| p.domains).collect();
    let model = PathMeanModel::new(&model_grid, rx, tx, observer, template, domains)?;

    let mut kappa = model.kappa();
    let mut cost = residual_cost(&y, &model.mean(&kappa)?);
    let cost_initial = cost;
    let y_norm = y.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    let azimuth_idx: Vec<usize> = (0..initial.len())
        .flat_map(|l| [ParamKind::AoaAzimuth, ParamKind::AodAzimuth].map(|k| model.geo_index(l, k)))
        .flatten()
        .collect();

    let mut converged = initial.is_empty();
    let mut iterations = 0;
    while !converged && iterations < opts.max_iterations {
        let mu = model.mean(&kappa)?;
        let jac = match model.mean_jacobian(&kappa) {
            Some(j) => j?,
            None => unreachable!("path model has analytic derivatives"),
        };
        let (a, b, scales) = real_system(&jac, &y, &mu);
        let grad = a.transpose() * &b;
        if grad.norm() <= opts.gradient_tol * y_norm {
            converged = true;
            break;
        }
        iterations += 1;
        let Some(step) = real_lstsq(&a, &b) else { break };
        let step: Vec<f64> = step.iter().zip(&scales).map(|(s, c)| s / c).collect();
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..opts.max_backtracks {
            let mut trial: Vec<f64> = kappa.iter().zip(&step).map(|(k, s)| k + t * s).collect();
            for &i in &azimuth_idx {
                trial[i] = wrap_angle(trial[i]);
            }
            let c = residual_cost(&y, &model.mean(&trial)?);
            if c < cost {
                kappa = trial;
                cost = c;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // No descent along the Gauss–Newton direction: numerically stationary.
            converged = grad.norm() <= 1e-6 * y_norm;
            break;
        }
    }

    if !converged {
        return Ok(Refinement {
            paths: initial.to_vec(),
            converged: false,
            iterations,
            cost_initial,
            cost_final: cost_initial,
            noise_var,
        });
    }

    // Delay enters only through e^{−j2πnΔfτ}: report it in [0, 1/Δf).
    let period = grid.unambiguous_delay();
    let refined: Vec<PathParams> = model
        .paths_at(&kappa)
        .into_iter()
        .map(|mut p| {
            p.geo.delay = p.geo.delay.rem_euclid(period);
            p
        })
        .collect();
    let covariances = path_covariances(&model, &kappa, noise_var)?;
    let paths = refined
        .iter()
        .zip(initial)
        .zip(covariances)
        .map(|((p, init), cov)| DetectedPath {
            geo: p.geo,
            gain: p.gain,
            domains: init.domains,
            covariance: cov,
        })
        .collect();
    Ok(Refinement {
        paths,
        converged: true,
        iterations,
        cost_initial,
        cost_final: cost,
        noise_var,
    })
}

/// Real-valued least-squares system with unit-norm columns.
fn real_system(jac: &DMatrix<Complex64>, y: &[Complex64], mu: &[Complex64]) -> (DMatrix<f64>, DVector<f64>, Vec<f64>) {
    let m = jac.nrows();
    let p = jac.ncols();
    let mut a = DMatrix::zeros(2 * m, p);
    for c in 0..p {
        for r in 0..m {
            a[(r, c)] = jac[(r, c)].re;
            a[(m + r, c)] = jac[(r, c)].im;
        }
    }
    let scales: Vec<f64> = (0..p)
        .map(|c| {
            let s = a.column(c).norm();
            if s > 0.0 {
                s
            } else {
                1.0
            }
        })
        .collect();
    for (c, s) in scales.iter().enumerate() {
        a.column_mut(c).scale_mut(1.0 / s);
    }
    let mut b = DVector::zeros(2 * m);
    for (r, (yv, mv)) in y.iter().zip(mu).enumerate() {
        let d = yv - mv;
        b[r] = d.re;
        b[m + r] = d.im;
    }
    (a, b, scales)
}

/// Per-path covariance of the active parameters from the inverse FIM.
fn path_covariances(model: &PathMeanModel<'_>, kappa: &[f64], noise_var: f64) -> Result<Vec<Option<DMatrix<f64>>>> {
    let n = model.n_paths();
    if !(noise_var > 0.0) {
        return Ok(vec![None; n]);
    }
    let jac = model.mean_jacobian(kappa).expect("analytic")?;
    let fim = (jac.adjoint() * &jac).map(|v| 2.0 * v.re / noise_var);
    let fim = (&fim + fim.transpose()) * 0.5;
    let (inv, _) = equilibrated_inverse(&fim, MAX_CONDITION);
    let Some(inv) = inv else { return Ok(vec![None; n]) };
    Ok((0..n)
        .map(|l| {
            let idx: Vec<usize> = model.domains[l].iter().filter_map(|k| model.geo_index(l, k)).collect();
            Some(DMatrix::from_fn(idx.len(), idx.len(), |r, c| inv[(idx[r], idx[c])]))
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimation::{ls_channel_estimate, omp, Dictionary, LsMode, StopRule};
    use crate::geometry::{GeoParams, ParamSet};
    use crate::signal::observe;

    fn siso(n: usize, n0: f64) -> (GridConfig, TxRxConfig) {
        let grid = GridConfig::new(n, 120e3, 1, 1e-5, 28e9).unwrap();
        let txrx = TxRxConfig::siso(&grid, grid.bandwidth(), n0).unwrap();
        (grid, txrx)
    }

    fn truth(delay: f64) -> PathParams {
        PathParams {
            gain: Complex64::new(0.6, 0.8),
            geo: GeoParams::delay_only(delay),
            tag: PathTag::Object,
        }
    }

    #[test]
    fn on_grid_noiseless_start_does_not_move() {
        let (grid, txrx) = siso(32, 1e-3);
        let s = ArrayGeometry::single();
        let dict = Dictionary::new(&grid, &s, &s, ParamSet::of(&[ParamKind::Delay]), 4).unwrap();
        let geo = dict.params(21);
        let obs = observe(&[truth(geo.delay)], &grid, &s, &s, &TxRxConfig { noise_psd: 0.0, ..txrx.clone() }, 0).unwrap();
        let init = vec![DetectedPath {
            geo,
            gain: Complex64::new(0.6, 0.8),
            domains: dict.domains,
            covariance: None,
        }];
        let r = ml_refine(RefineData::Observation(&obs, &txrx), &init, &grid, &s, &s, &RefineOptions::default()).unwrap();
        assert!(r.converged);
        assert_eq!(r.iterations, 0);
        assert_eq!(r.paths[0].geo, geo);
        assert!(r.paths[0].variance(ParamKind::Delay).unwrap() > 0.0);
    }

    #[test]
    fn refinement_never_lowers_likelihood() {
        let (grid, txrx) = siso(64, 0.05);
        let s = ArrayGeometry::single();
        let dict = Dictionary::new(&grid, &s, &s, ParamSet::of(&[ParamKind::Delay]), 4).unwrap();
        for seed in 0..20 {
            let obs = observe(&[truth(1.2345e-6), truth(2.71e-6)], &grid, &s, &s, &txrx, seed).unwrap();
            let est = ls_channel_estimate(&obs, &txrx, LsMode::PerSymbol).unwrap();
            let h = crate::estimation::vectorize(&est);
            let det = omp(&h, &dict, StopRule::default(), est.noise_level, 10).unwrap();
            let r = ml_refine(RefineData::Channel(&est), &det.paths, &grid, &s, &s, &RefineOptions::default()).unwrap();
            assert!(r.log_likelihood() >= r.log_likelihood_initial());
            assert!(r.cost_final <= r.cost_initial);
        }
    }
}
