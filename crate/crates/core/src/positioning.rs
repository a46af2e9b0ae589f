//! Second-stage positioning: per-anchor LoS channel parameters → UE state.
//!
//! The cost is `Σ_i (η̂_i − h_i(s))ᵀ Σ_i⁻¹ (η̂_i − h_i(s))` with azimuth residuals
//! wrapped on the circle. A closed-form or grid initial guess is refined by
//! Levenberg–Marquardt; the covariance of the result is
//! `(Σ_i H_iᵀ Σ_i⁻¹ H_i)⁻¹` with `H_i = ∂h_i/∂s` at the estimate.

use std::path::Path;

use nalgebra::{DMatrix, DVector, Vector3};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::bounds::{LocalizationScene, MAX_CONDITION};
use crate::channel::GridConfig;
use crate::estimation::DetectedPath;
use crate::geometry::{
    state_jacobian, AnchorState, FdStep, GeoParams, Link, MappedState, Mapping, ParamKind, ParamSet, StateParam,
    UEState,
};
use crate::linalg::{equilibrated_inverse, real_lstsq, symmetric_pinv};
use crate::signal::{noiseless_observation, Observation, TxRxConfig};
use crate::{Error, Result, SPEED_OF_LIGHT};

/// Which position coordinates are estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PositionMode {
    Full3d,
    /// x and y only; z stays at the reference value.
    Planar,
}

/// Estimated state coordinates; everything else is taken from a reference state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateComponents {
    pub position: PositionMode,
    pub clock_bias: bool,
    pub orientation: bool,
    pub velocity: bool,
}

impl StateComponents {
    pub fn position(mode: PositionMode) -> Self {
        Self {
            position: mode,
            clock_bias: false,
            orientation: false,
            velocity: false,
        }
    }

    pub fn with_bias(mut self) -> Self {
        self.clock_bias = true;
        self
    }

    pub fn params(&self) -> Vec<StateParam> {
        let mut p = match self.position {
            PositionMode::Full3d => StateParam::POSITION.to_vec(),
            PositionMode::Planar => vec![StateParam::PositionX, StateParam::PositionY],
        };
        if self.clock_bias {
            p.push(StateParam::ClockBias);
        }
        if self.orientation {
            p.extend(StateParam::ROTATION);
        }
        if self.velocity {
            p.extend(StateParam::VELOCITY);
        }
        p
    }

    fn position_dims(&self) -> usize {
        match self.position {
            PositionMode::Full3d => 3,
            PositionMode::Planar => 2,
        }
    }
}

/// One anchor's LoS channel parameters with their covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub anchor: AnchorState,
    pub link: Link,
    pub carrier: f64,
    pub eta: GeoParams,
    /// Components present, in canonical order.
    pub domains: ParamSet,
    /// Covariance over `domains`.
    pub covariance: DMatrix<f64>,
}

impl Measurement {
    pub fn new(
        anchor: AnchorState,
        link: Link,
        carrier: f64,
        eta: GeoParams,
        domains: ParamSet,
        covariance: DMatrix<f64>,
    ) -> Result<Self> {
        let d = domains.len();
        if d == 0 || covariance.shape() != (d, d) {
            return Err(Error::DimensionMismatch(format!(
                "{d} measured components but covariance {:?}",
                covariance.shape()
            )));
        }
        let scale = covariance.diagonal().abs().max().max(f64::MIN_POSITIVE);
        if (&covariance - covariance.transpose()).abs().max() > 1e-10 * scale {
            return Err(Error::InvalidParameter("measurement covariance not symmetric".into()));
        }
        let eig = covariance.clone().symmetric_eigenvalues();
        if eig.min() < -1e-12 * scale {
            return Err(Error::InvalidParameter("measurement covariance not PSD".into()));
        }
        Ok(Self {
            anchor,
            link,
            carrier,
            eta,
            domains,
            covariance,
        })
    }

    /// Measurement from an estimated path, keeping the components in `keep`.
    pub fn from_detection(
        anchor: AnchorState,
        link: Link,
        carrier: f64,
        path: &DetectedPath,
        keep: ParamSet,
    ) -> Result<Self> {
        let cov = path
            .covariance
            .as_ref()
            .ok_or_else(|| Error::InvalidParameter("detected path has no covariance".into()))?;
        let kinds: Vec<ParamKind> = path.domains.iter().filter(|k| keep.contains(*k)).collect();
        let idx: Vec<usize> = kinds.iter().map(|k| path.domains.position(*k).unwrap()).collect();
        let sub = DMatrix::from_fn(idx.len(), idx.len(), |r, c| cov[(idx[r], idx[c])]);
        Self::new(anchor, link, carrier, path.geo, ParamSet::of(&kinds), sub)
    }

    fn mapping(&self) -> Mapping {
        Mapping::Los {
            anchor: self.anchor,
            link: self.link,
            carrier: self.carrier,
        }
    }

    /// `η̂ − h(s)` over the measured components.
    pub fn residual(&self, ue: &UEState) -> Result<DVector<f64>> {
        let h = self.mapping().evaluate(&MappedState::Ue(*ue))?;
        Ok(DVector::from_iterator(
            self.domains.len(),
            self.domains.iter().map(|k| self.eta.difference(&h, k)),
        ))
    }

    /// `(Σ⁻¹, pseudo-inverse used)`.
    fn weight(&self) -> (DMatrix<f64>, bool) {
        match equilibrated_inverse(&self.covariance, MAX_CONDITION) {
            (Some(w), _) => (w, false),
            (None, _) => (symmetric_pinv(&self.covariance, 1e-12), true),
        }
    }
}

/// WNLS cost and whether any covariance had to be pseudo-inverted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cost {
    pub value: f64,
    pub pseudo_inverse: bool,
}

pub fn wnls_cost(ue: &UEState, measurements: &[Measurement]) -> Result<Cost> {
    if measurements.is_empty() {
        return Err(Error::InvalidParameter("no measurements".into()));
    }
    let mut value = 0.0;
    let mut pseudo_inverse = false;
    for m in measurements {
        let r = m.residual(ue)?;
        let (w, p) = m.weight();
        pseudo_inverse |= p;
        value += (r.transpose() * &w * &r)[(0, 0)];
    }
    Ok(Cost { value, pseudo_inverse })
}

/// Axis-aligned search region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneBounds {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl SceneBounds {
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] - 1e-9 && p[i] <= self.max[i] + 1e-9)
    }
}

/// Global unit vector from the anchor toward the UE implied by an anchor-side angle.
fn anchor_bearing(m: &Measurement, planar: bool) -> Option<Vector3<f64>> {
    let angles = match m.link {
        Link::Downlink => m.eta.aod,
        Link::Uplink => m.eta.aoa,
    };
    let (az, el) = match m.link {
        Link::Downlink => (ParamKind::AodAzimuth, ParamKind::AodElevation),
        Link::Uplink => (ParamKind::AoaAzimuth, ParamKind::AoaElevation),
    };
    if !m.domains.contains(az) || (!planar && !m.domains.contains(el)) {
        return None;
    }
    Some(m.anchor.orientation.to_global(&angles.direction()))
}

/// Bancroft's closed form for `ρ_i = ‖x − a_i‖ + b` in `dim` dimensions,
/// with extra squared offsets `e_i` (out-of-plane distance in planar mode).
/// Returns up to two `(x, b)` candidates.
fn bancroft(anchors: &[DVector<f64>], ranges: &[f64], offsets: &[f64]) -> Vec<(DVector<f64>, f64)> {
    let dim = anchors[0].len();
    let n = anchors.len();
    let mut b = DMatrix::zeros(n, dim + 1);
    let mut alpha = DVector::zeros(n);
    for i in 0..n {
        for j in 0..dim {
            b[(i, j)] = anchors[i][j];
        }
        b[(i, dim)] = ranges[i];
        alpha[i] = 0.5 * (anchors[i].norm_squared() - ranges[i] * ranges[i] + offsets[i]);
    }
    let lorentz = |u: &DVector<f64>, v: &DVector<f64>| -> f64 {
        (0..dim).map(|j| u[j] * v[j]).sum::<f64>() - u[dim] * v[dim]
    };
    // B·M·y = α + λ·1 with y = (x, b), M = diag(1,…,1,−1), λ = ⟨y,y⟩/2.
    let Some(u) = real_lstsq(&b, &alpha) else { return vec![] };
    let Some(v) = real_lstsq(&b, &DVector::from_element(n, 1.0)) else { return vec![] };
    let qa = lorentz(&v, &v);
    let qb = 2.0 * lorentz(&u, &v) - 2.0;
    let qc = lorentz(&u, &u);
    let mut lambdas = Vec::new();
    if qa.abs() < 1e-14 * (qb.abs() + qc.abs()).max(1e-300) {
        if qb != 0.0 {
            lambdas.push(-qc / qb);
        }
    } else {
        let disc = qb * qb - 4.0 * qa * qc;
        let sq = disc.max(0.0).sqrt();
        lambdas.push((-qb + sq) / (2.0 * qa));
        lambdas.push((-qb - sq) / (2.0 * qa));
    }
    lambdas
        .into_iter()
        .map(|l| {
            let w = &u + &v * l;
            let x = DVector::from_iterator(dim, (0..dim).map(|j| w[j]));
            (x, -w[dim])
        })
        .collect()
}

fn embed(x: &DVector<f64>, reference: &Vector3<f64>) -> Vector3<f64> {
    if x.len() == 3 {
        Vector3::new(x[0], x[1], x[2])
    } else {
        Vector3::new(x[0], x[1], reference.z)
    }
}

/// Closed-form or linearised initial state; falls back to a coarse grid
/// search over `bounds`. Components not in `comps` are copied from `reference`.
pub fn coarse_init(
    measurements: &[Measurement],
    comps: &StateComponents,
    bounds: &SceneBounds,
    reference: &UEState,
) -> Result<UEState> {
    check_identifiable(measurements, comps)?;
    let planar = comps.position == PositionMode::Planar;
    let dim = comps.position_dims();
    let toa: Vec<&Measurement> = measurements.iter().filter(|m| m.domains.contains(ParamKind::Delay)).collect();
    let bearings: Vec<(Vector3<f64>, Vector3<f64>)> = measurements
        .iter()
        .filter_map(|m| anchor_bearing(m, planar).map(|u| (m.anchor.position, u)))
        .collect();

    let finish = |pos: Vector3<f64>, bias: f64| -> UEState {
        let mut s = *reference;
        s.position = pos;
        if comps.clock_bias {
            s.clock_bias = bias;
        }
        s
    };
    let mut candidates: Vec<UEState> = Vec::new();

    // ToA: Bancroft with unknown bias, or difference linearisation with known bias.
    if !toa.is_empty() {
        let anchors: Vec<DVector<f64>> =
            toa.iter().map(|m| DVector::from_iterator(dim, m.anchor.position.iter().take(dim).cloned())).collect();
        let offsets: Vec<f64> = toa
            .iter()
            .map(|m| if planar { (reference.position.z - m.anchor.position.z).powi(2) } else { 0.0 })
            .collect();
        if comps.clock_bias && toa.len() > dim {
            let ranges: Vec<f64> = toa.iter().map(|m| SPEED_OF_LIGHT * m.eta.delay).collect();
            for (x, b) in bancroft(&anchors, &ranges, &offsets) {
                candidates.push(finish(embed(&x, &reference.position), b / SPEED_OF_LIGHT));
            }
        } else if !comps.clock_bias && toa.len() > dim {
            let ranges: Vec<f64> =
                toa.iter().map(|m| SPEED_OF_LIGHT * (m.eta.delay - reference.clock_bias)).collect();
            let n = toa.len();
            let mut a = DMatrix::zeros(n - 1, dim);
            let mut rhs = DVector::zeros(n - 1);
            for i in 1..n {
                for j in 0..dim {
                    a[(i - 1, j)] = 2.0 * (anchors[i][j] - anchors[0][j]);
                }
                rhs[i - 1] = anchors[i].norm_squared() - anchors[0].norm_squared() - ranges[i].powi(2)
                    + ranges[0].powi(2)
                    + offsets[i]
                    - offsets[0];
            }
            if let Some(x) = real_lstsq(&a, &rhs) {
                candidates.push(finish(embed(&x, &reference.position), reference.clock_bias));
            }
        }
    }

    // Bearings: least-squares intersection of lines, or one bearing plus a known range.
    if !bearings.is_empty() {
        let project = |u: &Vector3<f64>| {
            let mut p = nalgebra::Matrix3::identity() - u * u.transpose();
            if planar {
                p[(2, 0)] = 0.0;
                p[(2, 1)] = 0.0;
                p[(0, 2)] = 0.0;
                p[(1, 2)] = 0.0;
                p[(2, 2)] = 0.0;
            }
            p
        };
        let mut pos = None;
        if bearings.len() >= 2 {
            let mut a = DMatrix::zeros(dim, dim);
            let mut rhs = DVector::zeros(dim);
            for (anchor, u) in &bearings {
                let mut uu = *u;
                if planar {
                    uu.z = 0.0;
                    uu = uu.normalize();
                }
                let p = project(&uu);
                let mut shifted = *anchor;
                if planar {
                    shifted.z = reference.position.z;
                }
                let pa = p * shifted;
                for r in 0..dim {
                    rhs[r] += pa[r];
                    for c in 0..dim {
                        a[(r, c)] += p[(r, c)];
                    }
                }
            }
            let eig = a.clone().symmetric_eigenvalues();
            if eig.min() > 1e-9 * eig.max() {
                pos = real_lstsq(&a, &rhs).map(|x| embed(&x, &reference.position));
            }
        } else if let Some(m) = toa.iter().find(|m| m.anchor.position == bearings[0].0) {
            if !comps.clock_bias {
                let r = SPEED_OF_LIGHT * (m.eta.delay - reference.clock_bias);
                pos = Some(bearings[0].0 + bearings[0].1 * r);
            }
        }
        if let Some(p) = pos {
            let bias = if comps.clock_bias && !toa.is_empty() {
                toa.iter()
                    .map(|m| m.eta.delay - (p - m.anchor.position).norm() / SPEED_OF_LIGHT)
                    .sum::<f64>()
                    / toa.len() as f64
            } else {
                reference.clock_bias
            };
            candidates.push(finish(p, bias));
        }
    }

    let scored = |s: &UEState| wnls_cost(s, measurements).map(|c| c.value).unwrap_or(f64::INFINITY);
    let best = candidates
        .iter()
        .filter(|s| s.position.iter().all(|v| v.is_finite()) && s.clock_bias.is_finite())
        .map(|s| (bounds.contains(&s.position), scored(s), *s))
        .filter(|(_, c, _)| c.is_finite())
        .min_by(|a, b| b.0.cmp(&a.0).then(a.1.total_cmp(&b.1)));
    if let Some((_, _, s)) = best {
        return Ok(s);
    }
    Ok(grid_search(measurements, comps, bounds, reference))
}

fn check_identifiable(measurements: &[Measurement], comps: &StateComponents) -> Result<()> {
    let planar = comps.position == PositionMode::Planar;
    let n_toa = measurements.iter().filter(|m| m.domains.contains(ParamKind::Delay)).count();
    let n_angle: usize = measurements
        .iter()
        .map(|m| {
            m.domains
                .iter()
                .filter(|k| !matches!(k, ParamKind::Delay | ParamKind::Doppler))
                .filter(|k| !(planar && matches!(k, ParamKind::AoaElevation | ParamKind::AodElevation)))
                .count()
        })
        .sum();
    let n_doppler = measurements.iter().filter(|m| m.domains.contains(ParamKind::Doppler)).count();
    let mut missing = Vec::new();
    let need_pos = comps.position_dims() + usize::from(comps.clock_bias);
    let pos_info = n_toa + n_angle;
    if pos_info < need_pos {
        missing.push(format!(
            "position{}: {pos_info} delay/angle measurements for {need_pos} unknowns",
            if comps.clock_bias { " and clock bias" } else { "" }
        ));
    }
    if comps.clock_bias && n_toa == 0 {
        missing.push("clock bias: no delay measurement".into());
    }
    if comps.orientation && n_angle == 0 {
        missing.push("orientation: no angle measurement".into());
    }
    if comps.velocity && n_doppler < 3 {
        missing.push(format!("velocity: {n_doppler} Doppler measurements for 3 unknowns"));
    }
    if missing.is_empty() {
        Ok(())
    } else {
        Err(Error::NonIdentifiable(missing))
    }
}

/// Exhaustive coarse search; the bias (if estimated) is fitted per candidate
/// as the mean delay excess.
fn grid_search(measurements: &[Measurement], comps: &StateComponents, bounds: &SceneBounds, reference: &UEState) -> UEState {
    let steps = if comps.position == PositionMode::Planar { [41, 41, 1] } else { [21, 21, 21] };
    let axis = |i: usize, k: usize| {
        if steps[i] == 1 {
            reference.position[i]
        } else {
            bounds.min[i] + (bounds.max[i] - bounds.min[i]) * k as f64 / (steps[i] - 1) as f64
        }
    };
    let mut best = (*reference, f64::INFINITY);
    for ix in 0..steps[0] {
        for iy in 0..steps[1] {
            for iz in 0..steps[2] {
                let mut s = *reference;
                s.position = Vector3::new(axis(0, ix), axis(1, iy), axis(2, iz));
                if comps.clock_bias {
                    let toa: Vec<f64> = measurements
                        .iter()
                        .filter(|m| m.domains.contains(ParamKind::Delay))
                        .map(|m| m.eta.delay - (s.position - m.anchor.position).norm() / SPEED_OF_LIGHT)
                        .collect();
                    if !toa.is_empty() {
                        s.clock_bias = toa.iter().sum::<f64>() / toa.len() as f64;
                    }
                }
                if let Ok(c) = wnls_cost(&s, measurements) {
                    if c.value < best.1 {
                        best = (s, c.value);
                    }
                }
            }
        }
    }
    best.0
}

/// Result of a state estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct StateEstimate {
    pub state: UEState,
    pub components: Vec<StateParam>,
    /// Covariance over `components` (clock bias in s, rotations in rad).
    pub covariance: DMatrix<f64>,
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
    pub pseudo_inverse: bool,
    /// Direct positioning only: the optimum sits on the edge of the grid.
    pub boundary: bool,
}

impl StateEstimate {
    pub fn variance(&self, p: StateParam) -> Option<f64> {
        self.components.iter().position(|q| *q == p).map(|i| self.covariance[(i, i)])
    }

    /// `√trace` of the position block.
    pub fn position_std(&self) -> f64 {
        StateParam::POSITION.iter().filter_map(|p| self.variance(*p)).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmOptions {
    pub max_iterations: usize,
    pub initial_damping: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            initial_damping: 1e-3,
        }
    }
}

/// Internal coordinate scale: the clock bias is handled as `c·B` (metres).
fn internal_scale(p: StateParam) -> f64 {
    if p == StateParam::ClockBias {
        SPEED_OF_LIGHT
    } else {
        1.0
    }
}

fn apply_step(state: &UEState, params: &[StateParam], step: &[f64]) -> Result<UEState> {
    let mut s = MappedState::Ue(*state);
    let mut rot = Vector3::zeros();
    for (p, d) in params.iter().zip(step) {
        match p {
            StateParam::RotationX => rot.x = *d,
            StateParam::RotationY => rot.y = *d,
            StateParam::RotationZ => rot.z = *d,
            _ => s = s.shifted(*p, d / internal_scale(*p))?,
        }
    }
    let MappedState::Ue(mut ue) = s else { unreachable!() };
    if rot != Vector3::zeros() {
        ue.orientation = ue.orientation.perturbed(&rot);
    }
    Ok(ue)
}

/// Normal equations `(Σ HᵀWH, Σ HᵀWr)` in internal coordinates.
fn normal_equations(
    ue: &UEState,
    params: &[StateParam],
    measurements: &[Measurement],
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let d = params.len();
    let mut info = DMatrix::zeros(d, d);
    let mut grad = DVector::zeros(d);
    for m in measurements {
        let jac = state_jacobian(&m.mapping(), &MappedState::Ue(*ue), params, &FdStep::default())?;
        let mut h = jac.rows(m.domains);
        for (j, p) in params.iter().enumerate() {
            h.column_mut(j).scale_mut(1.0 / internal_scale(*p));
        }
        let (w, _) = m.weight();
        let r = m.residual(ue)?;
        info += h.transpose() * &w * &h;
        grad += h.transpose() * &w * r;
    }
    Ok(((&info + info.transpose()) * 0.5, grad))
}

/// Levenberg–Marquardt on the WNLS cost with additive damping `λ·I` on the
/// Jacobi-equilibrated normal matrix: `λ` starts at 1e-3, ×10 after a
/// rejected step and ÷10 after an accepted one. The cost never increases.
pub fn gauss_newton_refine(
    init: &UEState,
    measurements: &[Measurement],
    comps: &StateComponents,
    opts: &LmOptions,
) -> Result<StateEstimate> {
    check_identifiable(measurements, comps)?;
    let params = comps.params();
    let d = params.len();
    let mut ue = *init;
    let mut cost = wnls_cost(&ue, measurements)?;
    let mut lambda = opts.initial_damping;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iterations {
        if cost.value == 0.0 {
            converged = true;
            break;
        }
        let (info, grad) = normal_equations(&ue, &params, measurements)?;
        let diag: Vec<f64> = (0..d).map(|i| info[(i, i)].max(f64::MIN_POSITIVE).sqrt()).collect();
        let scaled = DMatrix::from_fn(d, d, |r, c| info[(r, c)] / (diag[r] * diag[c]));
        let g = DVector::from_fn(d, |r, _| grad[r] / diag[r]);
        iterations += 1;
        let mut accepted = false;
        while lambda < 1e12 {
            let damped = &scaled + DMatrix::identity(d, d) * lambda;
            let Some(step) = damped.clone().cholesky().map(|c| c.solve(&g)) else {
                lambda *= 10.0;
                continue;
            };
            let step: Vec<f64> = step.iter().zip(&diag).map(|(s, dg)| s / dg).collect();
            let trial = apply_step(&ue, &params, &step)?;
            let c = wnls_cost(&trial, measurements)?;
            if c.value <= cost.value {
                let drop = cost.value - c.value;
                let small_step = step
                    .iter()
                    .zip(&diag)
                    .map(|(s, dg)| (s * dg).powi(2))
                    .sum::<f64>()
                    .sqrt()
                    < 1e-10;
                ue = trial;
                let prev = cost.value;
                cost = c;
                lambda = (lambda / 10.0).max(1e-15);
                accepted = true;
                if small_step || drop <= 1e-14 * prev {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // No decrease for any damping: stationary to working precision.
            converged = g.norm() <= 1e-6 * (1.0 + cost.value.sqrt());
            break;
        }
        if converged {
            break;
        }
    }
    let covariance = state_covariance(&ue, &params, measurements)?;
    Ok(StateEstimate {
        state: ue,
        components: params,
        covariance,
        cost: cost.value,
        iterations,
        converged,
        pseudo_inverse: cost.pseudo_inverse,
        boundary: false,
    })
}

/// `(Σ_i H_iᵀ Σ_i⁻¹ H_i)⁻¹` in state units.
pub fn state_covariance(ue: &UEState, params: &[StateParam], measurements: &[Measurement]) -> Result<DMatrix<f64>> {
    let (info, _) = normal_equations(ue, params, measurements)?;
    let (inv, _) = equilibrated_inverse(&info, MAX_CONDITION);
    let inv = inv.ok_or_else(|| {
        Error::NonIdentifiable(vec!["measurement information matrix is singular at the estimate".into()])
    })?;
    let s: Vec<f64> = params.iter().map(|p| 1.0 / internal_scale(*p)).collect();
    Ok(DMatrix::from_fn(params.len(), params.len(), |r, c| inv[(r, c)] * s[r] * s[c]))
}

/// Regular grid of candidate positions around a centre.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateGrid {
    pub center: Vector3<f64>,
    /// Cells on each side of the centre per axis (0 keeps the axis fixed).
    pub half_cells: [usize; 3],
    /// m.
    pub cell: f64,
}

impl StateGrid {
    pub fn planar(center: Vector3<f64>, half_cells: usize, cell: f64) -> Self {
        Self {
            center,
            half_cells: [half_cells, half_cells, 0],
            cell,
        }
    }

    fn dims(&self) -> [usize; 3] {
        self.half_cells.map(|h| 2 * h + 1)
    }

    pub fn len(&self) -> usize {
        self.dims().iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn point(&self, index: usize) -> (Vector3<f64>, bool) {
        let d = self.dims();
        let ix = [index / (d[1] * d[2]), (index / d[2]) % d[1], index % d[2]];
        let mut p = self.center;
        let mut edge = false;
        for a in 0..3 {
            let off = ix[a] as i64 - self.half_cells[a] as i64;
            p[a] += off as f64 * self.cell;
            edge |= self.half_cells[a] > 0 && (ix[a] == 0 || ix[a] == d[a] - 1);
        }
        (p, edge)
    }
}

/// Concentrated negative log-likelihood `Σ_i (‖y_i‖² − |μ_iᴴ y_i|²/‖μ_i‖²)/N0`,
/// with each anchor's gain profiled out by least squares.
pub fn profiled_cost(
    ue: &UEState,
    scene: &LocalizationScene,
    observations: &[Observation],
    grid: &GridConfig,
    txrx: &TxRxConfig,
) -> Result<f64> {
    let (rx, tx) = scene.arrays();
    let mut total = 0.0;
    for (i, obs) in observations.iter().enumerate() {
        let mut path = scene.los_path(i, ue, grid.carrier)?;
        path.gain = Complex64::new(1.0, 0.0);
        let mu = noiseless_observation(&[path], grid, rx, tx, txrx)?.samples;
        let proj: Complex64 = mu.iter().zip(&obs.samples).map(|(m, y)| m.conj() * y).sum();
        let mu2: f64 = mu.iter().map(|m| m.norm_sqr()).sum();
        let y2: f64 = obs.samples.iter().map(|y| y.norm_sqr()).sum();
        total += y2 - proj.norm_sqr() / mu2;
    }
    Ok(total / txrx.noise_psd.max(f64::MIN_POSITIVE))
}

/// Brute-force maximum-likelihood position over a grid (clock bias and other
/// components from `scene.ue`). Expensive; intended as a reference.
/// Ties go to the lowest grid index.
pub fn direct_position_grid(
    observations: &[Observation],
    scene: &LocalizationScene,
    grid: &GridConfig,
    txrx: &TxRxConfig,
    candidates: &StateGrid,
) -> Result<StateEstimate> {
    if observations.len() != scene.anchors.len() {
        return Err(Error::DimensionMismatch("one observation per anchor required".into()));
    }
    let costs: Vec<(usize, f64)> = (0..candidates.len())
        .into_par_iter()
        .map(|i| {
            let mut ue = scene.ue;
            ue.position = candidates.point(i).0;
            (i, profiled_cost(&ue, scene, observations, grid, txrx).unwrap_or(f64::INFINITY))
        })
        .collect();
    let (best, cost) = costs
        .iter()
        .fold((0usize, f64::INFINITY), |acc, &(i, c)| if c < acc.1 { (i, c) } else { acc });
    if !cost.is_finite() {
        return Err(Error::DegenerateGeometry("likelihood undefined on the whole grid".into()));
    }
    let (pos, boundary) = candidates.point(best);
    let mut state = scene.ue;
    state.position = pos;
    let params: Vec<StateParam> = (0..3)
        .filter(|&a| candidates.half_cells[a] > 0)
        .map(|a| StateParam::POSITION[a])
        .collect();
    let mut s = scene.clone();
    s.ue = state;
    s.estimate = params.clone();
    let fim = crate::bounds::state_fim(&s, grid, txrx)?;
    let (inv, _) = equilibrated_inverse(&fim.matrix, MAX_CONDITION);
    let d = params.len();
    let covariance = inv.map_or_else(
        || DMatrix::from_element(d, d, f64::INFINITY),
        |m| m.view((0, 0), (d, d)).into_owned(),
    );
    Ok(StateEstimate {
        state,
        components: params,
        covariance,
        cost,
        iterations: candidates.len(),
        converged: true,
        pseudo_inverse: false,
        boundary,
    })
}

/// One row per estimate: state, variances of the estimated components, cost,
/// iteration count and flags. All rows must share the same components.
pub fn write_state_estimates_csv(path: &Path, rows: &[(u64, StateEstimate)]) -> Result<()> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let components = rows.first().map(|r| r.1.components.clone()).unwrap_or_default();
    if rows.iter().any(|r| r.1.components != components) {
        return Err(Error::InvalidParameter("rows estimate different components".into()));
    }
    let mut header: Vec<String> = [
        "trial", "x_m", "y_m", "z_m", "clock_bias_s", "qw", "qx", "qy", "qz", "vx_m_per_s", "vy_m_per_s", "vz_m_per_s",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for p in &components {
        let unit = match p {
            StateParam::PositionX | StateParam::PositionY | StateParam::PositionZ => "m2",
            StateParam::ClockBias => "s2",
            StateParam::RotationX | StateParam::RotationY | StateParam::RotationZ => "rad2",
            _ => "m2_per_s2",
        };
        header.push(format!("var_{}_{unit}", p.label()));
    }
    header.extend(["cost", "iterations", "converged", "pseudo_inverse", "boundary"].map(String::from));
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(&header).map_err(csv_err)?;
    for (trial, e) in rows {
        let s = &e.state;
        let q = s.orientation.quaternion();
        let mut rec = vec![trial.to_string()];
        let nums = [
            s.position.x,
            s.position.y,
            s.position.z,
            s.clock_bias,
            q[0],
            q[1],
            q[2],
            q[3],
            s.velocity.x,
            s.velocity.y,
            s.velocity.z,
        ];
        rec.extend(nums.iter().map(|v| format!("{v:.16e}")));
        rec.extend((0..components.len()).map(|i| format!("{:.16e}", e.covariance[(i, i)])));
        rec.push(format!("{:.16e}", e.cost));
        rec.push(e.iterations.to_string());
        rec.push(e.converged.to_string());
        rec.push(e.pseudo_inverse.to_string());
        rec.push(e.boundary.to_string());
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{los_params, Rotation};
    use approx::assert_relative_eq;

    fn toa_measurement(anchor: AnchorState, ue: &UEState, sigma: f64) -> Measurement {
        let eta = los_params(&anchor, ue, Link::Downlink, 28e9).unwrap();
        Measurement::new(
            anchor,
            Link::Downlink,
            28e9,
            eta,
            ParamSet::of(&[ParamKind::Delay]),
            DMatrix::from_element(1, 1, sigma * sigma),
        )
        .unwrap()
    }

    fn tetrahedron() -> Vec<AnchorState> {
        [(0.0, 0.0, 0.0), (60.0, 0.0, 0.0), (0.0, 60.0, 0.0), (20.0, 20.0, 40.0)]
            .iter()
            .enumerate()
            .map(|(i, &(x, y, z))| AnchorState::new(i as u32, Vector3::new(x, y, z), Rotation::identity()))
            .collect()
    }

    fn bounds() -> SceneBounds {
        SceneBounds {
            min: Vector3::new(-10.0, -10.0, -10.0),
            max: Vector3::new(70.0, 70.0, 50.0),
        }
    }

    #[test]
    fn zero_cost_at_truth() {
        let mut ue = UEState::at(Vector3::new(12.0, 23.0, 5.0));
        ue.clock_bias = 3e-8;
        let ms: Vec<_> = tetrahedron().into_iter().map(|a| toa_measurement(a, &ue, 1e-9)).collect();
        assert_eq!(wnls_cost(&ue, &ms).unwrap().value, 0.0);
    }

    #[test]
    fn unit_bookkeeping() {
        let ue = UEState::at(Vector3::new(3.0, 4.0, 0.0));
        let a = AnchorState::new(0, Vector3::zeros(), Rotation::identity());
        let mut m = toa_measurement(a, &ue, 1.0);
        m.eta.delay += 1e-9;
        assert_relative_eq!(wnls_cost(&ue, &[m]).unwrap().value, 1e-18, max_relative = 1e-6);
    }

    #[test]
    fn tetrahedron_bancroft_recovers_state() {
        let mut ue = UEState::at(Vector3::new(12.0, 23.0, 5.0));
        ue.clock_bias = 3e-8;
        let ms: Vec<_> = tetrahedron().into_iter().map(|a| toa_measurement(a, &ue, 1e-9)).collect();
        let comps = StateComponents::position(PositionMode::Full3d).with_bias();
        let init = coarse_init(&ms, &comps, &bounds(), &UEState::at(Vector3::zeros())).unwrap();
        assert!((init.position - ue.position).norm() < 1e-9);
        assert!((init.clock_bias - ue.clock_bias).abs() * SPEED_OF_LIGHT < 1e-9);
        let est = gauss_newton_refine(&init, &ms, &comps, &LmOptions::default()).unwrap();
        assert!((est.state.position - ue.position).norm() < 1e-9);
        assert!(est.iterations <= 10);
    }

    #[test]
    fn single_toa_with_bias_is_not_identifiable() {
        let ue = UEState::at(Vector3::new(12.0, 23.0, 5.0));
        let ms = vec![toa_measurement(tetrahedron()[0], &ue, 1e-9)];
        let comps = StateComponents::position(PositionMode::Full3d).with_bias();
        match coarse_init(&ms, &comps, &bounds(), &UEState::at(Vector3::zeros())) {
            Err(Error::NonIdentifiable(missing)) => assert!(!missing.is_empty()),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn two_bearings_intersect() {
        let ue = UEState::at(Vector3::new(10.0, 30.0, 0.0));
        let anchors = [
            AnchorState::new(0, Vector3::new(0.0, 0.0, 0.0), Rotation::from_euler(0.0, 0.0, 0.7)),
            AnchorState::new(1, Vector3::new(50.0, 0.0, 0.0), Rotation::from_euler(0.0, 0.0, 2.0)),
        ];
        let ms: Vec<_> = anchors
            .iter()
            .map(|a| {
                let eta = los_params(a, &ue, Link::Downlink, 28e9).unwrap();
                Measurement::new(
                    *a,
                    Link::Downlink,
                    28e9,
                    eta,
                    ParamSet::of(&[ParamKind::AodAzimuth]),
                    DMatrix::from_element(1, 1, 1e-4),
                )
                .unwrap()
            })
            .collect();
        let comps = StateComponents::position(PositionMode::Planar);
        let init = coarse_init(&ms, &comps, &bounds(), &UEState::at(Vector3::zeros())).unwrap();
        assert!((init.position - ue.position).norm() < 1e-9);
    }

    #[test]
    fn azimuth_wrap_invariance() {
        let ue = UEState::at(Vector3::new(10.0, 30.0, 0.0));
        let a = AnchorState::new(0, Vector3::zeros(), Rotation::identity());
        let eta = los_params(&a, &ue, Link::Downlink, 28e9).unwrap();
        let mk = |mut e: GeoParams| {
            e.aod.azimuth += 0.01;
            Measurement::new(a, Link::Downlink, 28e9, e, ParamSet::of(&[ParamKind::AodAzimuth]), DMatrix::identity(1, 1))
                .unwrap()
        };
        let m1 = mk(eta);
        let mut m2 = mk(eta);
        m2.eta.aod.azimuth += 2.0 * std::f64::consts::PI;
        assert_relative_eq!(
            wnls_cost(&ue, &[m1]).unwrap().value,
            wnls_cost(&ue, &[m2]).unwrap().value,
            max_relative = 1e-9
        );
    }

    #[test]
    fn singular_covariance_uses_pseudo_inverse() {
        let ue = UEState::at(Vector3::new(10.0, 30.0, 0.0));
        let a = AnchorState::new(0, Vector3::zeros(), Rotation::identity());
        let eta = los_params(&a, &ue, Link::Downlink, 28e9).unwrap();
        let m = Measurement::new(
            a,
            Link::Downlink,
            28e9,
            eta,
            ParamSet::of(&[ParamKind::AodAzimuth, ParamKind::Delay]),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]),
        )
        .unwrap();
        assert!(wnls_cost(&ue, &[m]).unwrap().pseudo_inverse);
    }
}
