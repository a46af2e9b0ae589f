//! Fisher information and Cramér–Rao bounds.
//!
//! For observations `y = μ(κ) + n`, `n ~ CN(0, N0·I)`, the Fisher information
//! is `J = (2/N0) Σ Re{(∂μ/∂κ)ᴴ (∂μ/∂κ)}`. Parameters are ordered interest
//! first; the bound on the interest block is `√trace([J⁻¹]_{1:d,1:d})`.
//!
//! Complex gains enter as (Re, Im) nuisance pairs. The path-loss dependence of
//! the gain on distance is not used, so gains are free nuisance parameters.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::channel::{los_gain, ArrayGeometry, GridConfig, PathParams, PathTag};
use crate::geometry::{
    los_params, state_jacobian, AnchorState, FdStep, GeoParams, Link, MappedState, Mapping, ParamKind, ParamSet,
    StateParam, UEState,
};
use crate::linalg::equilibrated_inverse;
use crate::signal::{noiseless_observation, TxRxConfig};
use crate::{Error, Result};

/// Equilibrated condition number above which a FIM is declared singular.
pub const MAX_CONDITION: f64 = 1e12;

/// Noise-free observation as a function of a real parameter vector.
pub trait MeanModel: Sync {
    fn n_params(&self) -> usize;

    fn labels(&self) -> Vec<String>;

    fn mean(&self, kappa: &[f64]) -> Result<Vec<Complex64>>;

    /// Analytic `∂μ/∂κ` (rows: samples, columns: parameters), when available.
    fn mean_jacobian(&self, _kappa: &[f64]) -> Option<Result<DMatrix<Complex64>>> {
        None
    }
}

/// Labelled Fisher information; the first `n_interest` parameters are of interest.
#[derive(Debug, Clone, PartialEq)]
pub struct FisherInfo {
    pub matrix: DMatrix<f64>,
    pub labels: Vec<String>,
    pub n_interest: usize,
}

impl FisherInfo {
    pub fn new(matrix: DMatrix<f64>, labels: Vec<String>, n_interest: usize) -> Result<Self> {
        if !matrix.is_square() || matrix.nrows() != labels.len() || n_interest > labels.len() {
            return Err(Error::DimensionMismatch(format!(
                "FIM {:?} with {} labels and {} interest parameters",
                matrix.shape(),
                labels.len(),
                n_interest
            )));
        }
        let scale = matrix.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(f64::MIN_POSITIVE);
        let asym = (&matrix - matrix.transpose()).abs().max();
        if asym > 1e-10 * scale {
            return Err(Error::InvalidParameter(format!("FIM not symmetric (max asymmetry {asym:e})")));
        }
        Ok(Self {
            matrix: (&matrix + matrix.transpose()) * 0.5,
            labels,
            n_interest,
        })
    }

    pub fn dim(&self) -> usize {
        self.labels.len()
    }

    /// Same information with `interest` moved to the front (in the given order).
    pub fn with_interest(&self, interest: &[usize]) -> FisherInfo {
        let mut order: Vec<usize> = interest.to_vec();
        order.extend((0..self.dim()).filter(|i| !interest.contains(i)));
        let matrix = DMatrix::from_fn(self.dim(), self.dim(), |r, c| self.matrix[(order[r], order[c])]);
        FisherInfo {
            matrix,
            labels: order.iter().map(|&i| self.labels[i].clone()).collect(),
            n_interest: interest.len(),
        }
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Information from independent observations adds.
    pub fn add(&self, other: &FisherInfo) -> Result<FisherInfo> {
        if self.labels != other.labels {
            return Err(Error::DimensionMismatch("cannot add FIMs over different parameters".into()));
        }
        Ok(FisherInfo {
            matrix: &self.matrix + &other.matrix,
            labels: self.labels.clone(),
            n_interest: self.n_interest,
        })
    }

    /// PSD test: smallest eigenvalue ≥ −1e-8·trace.
    pub fn is_psd(&self) -> bool {
        let eig = self.matrix.clone().symmetric_eigenvalues();
        eig.min() >= -1e-8 * self.matrix.trace().abs()
    }
}

/// Cramér–Rao bound on the interest block.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub labels: Vec<String>,
    /// `[J⁻¹]_{1:d,1:d}`; absent when the FIM is singular.
    pub covariance: Option<DMatrix<f64>>,
    /// `√trace(Σ)`; absent when the FIM is singular.
    pub bound: Option<f64>,
    pub identifiable: bool,
    pub condition_number: f64,
}

impl BoundReport {
    /// The bound, or +∞ when the problem is not identifiable.
    pub fn bound_or_inf(&self) -> f64 {
        self.bound.unwrap_or(f64::INFINITY)
    }
}

/// Central-difference `∂μ/∂κ`.
pub fn finite_difference_jacobian(model: &dyn MeanModel, kappa: &[f64], step: &FdStep) -> Result<DMatrix<Complex64>> {
    let labels = model.labels();
    let mut columns = Vec::with_capacity(kappa.len());
    let mut work = kappa.to_vec();
    for i in 0..kappa.len() {
        let h = step.step_for(kappa[i]);
        work[i] = kappa[i] + h;
        let plus = model.mean(&work)?;
        work[i] = kappa[i] - h;
        let minus = model.mean(&work)?;
        work[i] = kappa[i];
        let col: Vec<Complex64> = plus.iter().zip(&minus).map(|(p, m)| (p - m) / (2.0 * h)).collect();
        if col.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::NonFiniteDerivative(labels[i].clone()));
        }
        columns.push(DVector::from_vec(col));
    }
    if columns.is_empty() {
        return Ok(DMatrix::zeros(model.mean(kappa)?.len(), 0));
    }
    Ok(DMatrix::from_columns(&columns))
}

/// `J = (2/N0) Re{Dᴴ D}` for a given mean Jacobian `D`.
pub fn fim_from_jacobian(d: &DMatrix<Complex64>, n0: f64, labels: Vec<String>, n_interest: usize) -> Result<FisherInfo> {
    if d.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        let col = (0..d.ncols())
            .find(|&c| d.column(c).iter().any(|v| !v.re.is_finite() || !v.im.is_finite()))
            .unwrap_or(0);
        return Err(Error::NonFiniteDerivative(labels.get(col).cloned().unwrap_or_default()));
    }
    let g = d.adjoint() * d;
    let m = g.map(|v| 2.0 * v.re / n0);
    FisherInfo::new((&m + m.transpose()) * 0.5, labels, n_interest)
}

/// Slepian–Bangs FIM, analytic derivatives when the model has them.
pub fn fim_slepian_bangs(
    model: &dyn MeanModel,
    kappa: &[f64],
    n0: f64,
    n_interest: usize,
    step: &FdStep,
) -> Result<FisherInfo> {
    if kappa.len() != model.n_params() {
        return Err(Error::DimensionMismatch(format!(
            "model has {} parameters, κ has {}",
            model.n_params(),
            kappa.len()
        )));
    }
    let d = match model.mean_jacobian(kappa) {
        Some(j) => j?,
        None => finite_difference_jacobian(model, kappa, step)?,
    };
    fim_from_jacobian(&d, n0, model.labels(), n_interest)
}

/// Inverts `J` and reports the interest block.
pub fn crb(fim: &FisherInfo) -> BoundReport {
    let (inv, condition_number) = equilibrated_inverse(&fim.matrix, MAX_CONDITION);
    let labels = fim.labels[..fim.n_interest].to_vec();
    match inv {
        Some(inv) => {
            let d = fim.n_interest;
            let cov = inv.view((0, 0), (d, d)).into_owned();
            let bound = cov.trace().max(0.0).sqrt();
            BoundReport {
                labels,
                covariance: Some(cov),
                bound: Some(bound),
                identifiable: true,
                condition_number,
            }
        }
        None => BoundReport {
            labels,
            covariance: None,
            bound: None,
            identifiable: false,
            condition_number,
        },
    }
}

/// Chain rule `J_s = Tᵀ J_η T`, `T = ∂η/∂s` (`dim(η) × dim(s)`).
pub fn transform_fim(
    channel_fim: &FisherInfo,
    jacobian: &DMatrix<f64>,
    labels: Vec<String>,
    n_interest: usize,
) -> Result<FisherInfo> {
    if jacobian.nrows() != channel_fim.dim() || jacobian.ncols() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "Jacobian {:?} incompatible with FIM of size {} and {} new labels",
            jacobian.shape(),
            channel_fim.dim(),
            labels.len()
        )));
    }
    let m = jacobian.transpose() * &channel_fim.matrix * jacobian;
    FisherInfo::new((&m + m.transpose()) * 0.5, labels, n_interest)
}

/// How the noise-free mean is observed.
#[derive(Debug, Clone, Copy)]
pub enum Observer<'a> {
    /// The vectorised channel itself, ordered (n, k, rx, tx).
    Channel,
    /// Through pilots and combiners, ordered (n, k, m).
    Pilots(&'a TxRxConfig),
}

/// Multipath mean with per-path active geometric parameters.
///
/// `κ = [η_1 (active, canonical order), …, η_L, Re α_1, Im α_1, …, Re α_L, Im α_L]`.
/// Derivatives are analytic.
#[derive(Debug, Clone)]
pub struct PathMeanModel<'a> {
    pub grid: &'a GridConfig,
    pub rx: &'a ArrayGeometry,
    pub tx: &'a ArrayGeometry,
    pub observer: Observer<'a>,
    /// Paths providing the values of inactive parameters and tags.
    pub template: Vec<PathParams>,
    pub domains: Vec<ParamSet>,
}

impl<'a> PathMeanModel<'a> {
    pub fn new(
        grid: &'a GridConfig,
        rx: &'a ArrayGeometry,
        tx: &'a ArrayGeometry,
        observer: Observer<'a>,
        template: Vec<PathParams>,
        domains: Vec<ParamSet>,
    ) -> Result<Self> {
        if template.len() != domains.len() {
            return Err(Error::DimensionMismatch("one domain set per path required".into()));
        }
        if let Observer::Pilots(t) = observer {
            t.validate(grid)?;
            if t.n_rx() != rx.n_elements() || t.n_tx() != tx.n_elements() {
                return Err(Error::DimensionMismatch("arrays do not match pilot schedule".into()));
            }
        }
        Ok(Self {
            grid,
            rx,
            tx,
            observer,
            template,
            domains,
        })
    }

    pub fn n_paths(&self) -> usize {
        self.template.len()
    }

    fn n_geo(&self) -> usize {
        self.domains.iter().map(|d| d.len()).sum()
    }

    /// Index of parameter `kind` of path `l` in κ.
    pub fn geo_index(&self, l: usize, kind: ParamKind) -> Option<usize> {
        let offset: usize = self.domains[..l].iter().map(|d| d.len()).sum();
        self.domains[l].position(kind).map(|p| offset + p)
    }

    /// Index of `Re α_l` (Im follows).
    pub fn gain_index(&self, l: usize) -> usize {
        self.n_geo() + 2 * l
    }

    pub fn kappa(&self) -> Vec<f64> {
        self.kappa_of(&self.template)
    }

    pub fn kappa_of(&self, paths: &[PathParams]) -> Vec<f64> {
        let mut k = Vec::with_capacity(self.n_params());
        for (p, d) in paths.iter().zip(&self.domains) {
            k.extend(d.iter().map(|kind| p.geo.get(kind)));
        }
        for p in paths {
            k.push(p.gain.re);
            k.push(p.gain.im);
        }
        k
    }

    pub fn paths_at(&self, kappa: &[f64]) -> Vec<PathParams> {
        let mut out = self.template.clone();
        let mut i = 0;
        for (p, d) in out.iter_mut().zip(&self.domains) {
            for kind in d.iter() {
                p.geo.set(kind, kappa[i]);
                i += 1;
            }
        }
        for p in out.iter_mut() {
            p.gain = Complex64::new(kappa[i], kappa[i + 1]);
            i += 2;
        }
        out
    }

    fn block_len(&self) -> usize {
        match self.observer {
            Observer::Channel => self.rx.n_elements() * self.tx.n_elements(),
            Observer::Pilots(t) => t.m_rx(),
        }
    }

    /// Bilinear spatial response for one (n,k) given Rx/Tx array vectors.
    fn spatial(&self, n: usize, k: usize, a_rx: &DVector<Complex64>, a_tx: &DVector<Complex64>) -> DVector<Complex64> {
        match self.observer {
            Observer::Channel => a_rx.kronecker(a_tx),
            Observer::Pilots(t) => {
                let s_tx = a_tx.transpose() * t.precoder(n, k);
                t.combiner(k).adjoint() * a_rx * s_tx[(0, 0)]
            }
        }
    }
}

impl MeanModel for PathMeanModel<'_> {
    fn n_params(&self) -> usize {
        self.n_geo() + 2 * self.n_paths()
    }

    fn labels(&self) -> Vec<String> {
        let mut labels = Vec::with_capacity(self.n_params());
        for (l, d) in self.domains.iter().enumerate() {
            labels.extend(d.iter().map(|k| format!("{}[{l}]", k.label())));
        }
        for l in 0..self.n_paths() {
            labels.push(format!("re_gain[{l}]"));
            labels.push(format!("im_gain[{l}]"));
        }
        labels
    }

    fn mean(&self, kappa: &[f64]) -> Result<Vec<Complex64>> {
        let paths = self.paths_at(kappa);
        match self.observer {
            Observer::Pilots(t) => Ok(noiseless_observation(&paths, self.grid, self.rx, self.tx, t)?.samples),
            Observer::Channel => {
                let b = self.block_len();
                let spatial: Vec<DVector<Complex64>> = paths
                    .iter()
                    .map(|p| self.rx.steering_vector(&p.geo.aoa).kronecker(&self.tx.steering_vector(&p.geo.aod)) * p.gain)
                    .collect();
                let (nn, kk) = (self.grid.n_subcarriers, self.grid.n_symbols);
                let mut out = vec![Complex64::new(0.0, 0.0); nn * kk * b];
                for n in 0..nn {
                    for k in 0..kk {
                        let base = (n * kk + k) * b;
                        for (p, s) in paths.iter().zip(&spatial) {
                            let ph = self.grid.delay_phasor(n, p.geo.delay) * self.grid.doppler_phasor(k, p.geo.doppler);
                            for (o, v) in out[base..base + b].iter_mut().zip(s.iter()) {
                                *o += v * ph;
                            }
                        }
                    }
                }
                Ok(out)
            }
        }
    }

    fn mean_jacobian(&self, kappa: &[f64]) -> Option<Result<DMatrix<Complex64>>> {
        let paths = self.paths_at(kappa);
        let (nn, kk) = (self.grid.n_subcarriers, self.grid.n_symbols);
        let b = self.block_len();
        let mut d = DMatrix::zeros(nn * kk * b, self.n_params());
        let j2pi = Complex64::new(0.0, 2.0 * PI);
        for (l, p) in paths.iter().enumerate() {
            let (a_rx, da_rx_az, da_rx_el) = self.rx.steering_derivatives(&p.geo.aoa);
            let (a_tx, da_tx_az, da_tx_el) = self.tx.steering_derivatives(&p.geo.aod);
            let dom = self.domains[l];
            let gi = self.gain_index(l);
            for n in 0..nn {
                for k in 0..kk {
                    let row = (n * kk + k) * b;
                    let ph = self.grid.delay_phasor(n, p.geo.delay) * self.grid.doppler_phasor(k, p.geo.doppler);
                    let base = self.spatial(n, k, &a_rx, &a_tx) * ph;
                    let term = &base * p.gain;
                    for i in 0..b {
                        d[(row + i, gi)] = base[i];
                        d[(row + i, gi + 1)] = base[i] * Complex64::new(0.0, 1.0);
                    }
                    for kind in dom.iter() {
                        let col = self.geo_index(l, kind).expect("active parameter");
                        let v: DVector<Complex64> = match kind {
                            ParamKind::Delay => &term * (-j2pi * n as f64 * self.grid.subcarrier_spacing),
                            ParamKind::Doppler => &term * (j2pi * k as f64 * self.grid.symbol_duration),
                            ParamKind::AoaAzimuth => self.spatial(n, k, &da_rx_az, &a_tx) * (ph * p.gain),
                            ParamKind::AoaElevation => self.spatial(n, k, &da_rx_el, &a_tx) * (ph * p.gain),
                            ParamKind::AodAzimuth => self.spatial(n, k, &a_rx, &da_tx_az) * (ph * p.gain),
                            ParamKind::AodElevation => self.spatial(n, k, &a_rx, &da_tx_el) * (ph * p.gain),
                        };
                        for i in 0..b {
                            d[(row + i, col)] = v[i];
                        }
                    }
                }
            }
        }
        Some(Ok(d))
    }
}

/// Geometric parameters an array pair and grid can observe for a LoS path.
pub fn observable_domains(grid: &GridConfig, rx: &ArrayGeometry, tx: &ArrayGeometry) -> ParamSet {
    let mut set = ParamSet::EMPTY.with(ParamKind::Delay);
    if grid.n_symbols > 1 {
        set = set.with(ParamKind::Doppler);
    }
    let (ry, rz) = rx.extent();
    let (ty, tz) = tx.extent();
    if ry {
        set = set.with(ParamKind::AoaAzimuth);
    }
    if rz {
        set = set.with(ParamKind::AoaElevation);
    }
    if ty {
        set = set.with(ParamKind::AodAzimuth);
    }
    if tz {
        set = set.with(ParamKind::AodElevation);
    }
    set
}

/// Localization scenario for end-to-end bounds: one LoS link per anchor,
/// each anchor observed on its own (orthogonal) resources.
#[derive(Debug, Clone)]
pub struct LocalizationScene {
    pub anchors: Vec<AnchorState>,
    pub ue: UEState,
    pub link: Link,
    pub anchor_array: ArrayGeometry,
    pub ue_array: ArrayGeometry,
    /// Estimated state coordinates; others are treated as known.
    pub estimate: Vec<StateParam>,
}

impl LocalizationScene {
    /// (rx, tx) arrays for the configured link direction.
    pub fn arrays(&self) -> (&ArrayGeometry, &ArrayGeometry) {
        match self.link {
            Link::Downlink => (&self.ue_array, &self.anchor_array),
            Link::Uplink => (&self.anchor_array, &self.ue_array),
        }
    }

    /// LoS path of anchor `i` at UE state `ue`, gain from free-space path loss.
    pub fn los_path(&self, i: usize, ue: &UEState, carrier: f64) -> Result<PathParams> {
        let anchor = &self.anchors[i];
        let geo = los_params(anchor, ue, self.link, carrier)?;
        let (rx, tx) = self.arrays();
        let d = (ue.position - anchor.position).norm();
        let power = los_gain(d, carrier, tx.pattern.gain(&geo.aod), rx.pattern.gain(&geo.aoa))?;
        Ok(PathParams {
            gain: Complex64::new(power.sqrt(), 0.0),
            geo,
            tag: PathTag::Los,
        })
    }

    pub fn state_labels(&self) -> Vec<String> {
        let mut labels: Vec<String> = self.estimate.iter().map(|p| p.label().to_string()).collect();
        for a in &self.anchors {
            labels.push(format!("re_gain[{}]", a.id));
            labels.push(format!("im_gain[{}]", a.id));
        }
        labels
    }
}

/// Position, orientation and velocity error bounds.
#[derive(Debug, Clone)]
pub struct PositionBounds {
    /// m.
    pub peb: Option<f64>,
    /// rad; only when orientation is estimated.
    pub oeb: Option<f64>,
    /// m/s; only when velocity is estimated.
    pub veb: Option<f64>,
    pub identifiable: bool,
    pub condition_number: f64,
    /// State-space FIM over `[state, gains]`.
    pub fim: FisherInfo,
}

/// Channel-domain FIM of one anchor's LoS path.
pub fn anchor_channel_fim(
    scene: &LocalizationScene,
    i: usize,
    grid: &GridConfig,
    txrx: &TxRxConfig,
) -> Result<(FisherInfo, ParamSet, PathParams)> {
    let (rx, tx) = scene.arrays();
    let path = scene.los_path(i, &scene.ue, grid.carrier)?;
    let domains = observable_domains(grid, rx, tx);
    let model = PathMeanModel::new(grid, rx, tx, Observer::Pilots(txrx), vec![path], vec![domains])?;
    let fim = fim_slepian_bangs(&model, &model.kappa(), txrx.noise_psd, domains.len(), &FdStep::default())?;
    Ok((fim, domains, path))
}

/// State-space FIM over `[state, gains]` via the chain rule, summed over anchors.
pub fn state_fim(scene: &LocalizationScene, grid: &GridConfig, txrx: &TxRxConfig) -> Result<FisherInfo> {
    let ds = scene.estimate.len();
    let total = ds + 2 * scene.anchors.len();
    let labels = scene.state_labels();
    let mut acc = FisherInfo::new(DMatrix::zeros(total, total), labels.clone(), ds)?;
    for (i, anchor) in scene.anchors.iter().enumerate() {
        let (fim, domains, _) = anchor_channel_fim(scene, i, grid, txrx)?;
        let mapping = Mapping::Los {
            anchor: *anchor,
            link: scene.link,
            carrier: grid.carrier,
        };
        let jac = state_jacobian(&mapping, &MappedState::Ue(scene.ue), &scene.estimate, &FdStep::default())?;
        let d = domains.len();
        let mut t = DMatrix::zeros(d + 2, total);
        t.view_mut((0, 0), (d, ds)).copy_from(&jac.rows(domains));
        t[(d, ds + 2 * i)] = 1.0;
        t[(d + 1, ds + 2 * i + 1)] = 1.0;
        acc = acc.add(&transform_fim(&fim, &t, labels.clone(), ds)?)?;
    }
    Ok(acc)
}

fn block_bound(fim: &FisherInfo, params: &[StateParam], estimate: &[StateParam]) -> Option<Option<f64>> {
    let idx: Vec<usize> = params.iter().filter_map(|p| estimate.iter().position(|q| q == p)).collect();
    if idx.is_empty() {
        return None;
    }
    Some(crb(&fim.with_interest(&idx)).bound)
}

/// End-to-end PEB/OEB/VEB for a localization scene.
pub fn peb_oeb_veb(scene: &LocalizationScene, grid: &GridConfig, txrx: &TxRxConfig) -> Result<PositionBounds> {
    let fim = state_fim(scene, grid, txrx)?;
    let report = crb(&fim);
    let peb = block_bound(&fim, &StateParam::POSITION, &scene.estimate).flatten();
    let oeb = block_bound(&fim, &StateParam::ROTATION, &scene.estimate).flatten();
    let veb = block_bound(&fim, &StateParam::VELOCITY, &scene.estimate).flatten();
    Ok(PositionBounds {
        peb: if report.identifiable { peb } else { None },
        oeb: if report.identifiable { oeb } else { None },
        veb: if report.identifiable { veb } else { None },
        identifiable: report.identifiable,
        condition_number: report.condition_number,
        fim,
    })
}

/// Direct state parameterisation `κ = [state, Re/Im gains per anchor]` of
/// the stacked per-anchor observations. Derivatives by finite differences;
/// serves as an independent route to the state FIM.
#[derive(Debug, Clone)]
pub struct StateMeanModel<'a> {
    pub scene: &'a LocalizationScene,
    pub grid: &'a GridConfig,
    pub txrx: &'a TxRxConfig,
}

impl StateMeanModel<'_> {
    pub fn kappa(&self) -> Result<Vec<f64>> {
        let state = MappedState::Ue(self.scene.ue);
        let mut k: Vec<f64> = self.scene.estimate.iter().map(|p| state.get(*p)).collect::<Result<_>>()?;
        for i in 0..self.scene.anchors.len() {
            let g = self.scene.los_path(i, &self.scene.ue, self.grid.carrier)?.gain;
            k.push(g.re);
            k.push(g.im);
        }
        Ok(k)
    }

    fn ue_at(&self, kappa: &[f64]) -> Result<UEState> {
        let mut state = MappedState::Ue(self.scene.ue);
        for (p, v) in self.scene.estimate.iter().zip(kappa) {
            let current = state.get(*p)?;
            state = state.shifted(*p, v - current)?;
        }
        match state {
            MappedState::Ue(ue) => Ok(ue),
            MappedState::Object { .. } => unreachable!(),
        }
    }
}

impl MeanModel for StateMeanModel<'_> {
    fn n_params(&self) -> usize {
        self.scene.estimate.len() + 2 * self.scene.anchors.len()
    }

    fn labels(&self) -> Vec<String> {
        self.scene.state_labels()
    }

    fn mean(&self, kappa: &[f64]) -> Result<Vec<Complex64>> {
        let ue = self.ue_at(kappa)?;
        let ds = self.scene.estimate.len();
        let (rx, tx) = self.scene.arrays();
        let mut out = Vec::new();
        for i in 0..self.scene.anchors.len() {
            let mut path = self.scene.los_path(i, &ue, self.grid.carrier)?;
            path.gain = Complex64::new(kappa[ds + 2 * i], kappa[ds + 2 * i + 1]);
            out.extend(noiseless_observation(&[path], self.grid, rx, tx, self.txrx)?.samples);
        }
        Ok(out)
    }
}

/// Delay-only single-antenna mean used by the case study: paths at the given
/// delays with the given gains, observed through `txrx`.
pub fn delay_crb(
    grid: &GridConfig,
    txrx: &TxRxConfig,
    delays: &[f64],
    gains: &[Complex64],
    interest: usize,
) -> Result<BoundReport> {
    let single = ArrayGeometry::single();
    let template: Vec<PathParams> = delays
        .iter()
        .zip(gains)
        .map(|(&d, &g)| PathParams {
            gain: g,
            geo: GeoParams::delay_only(d),
            tag: PathTag::Object,
        })
        .collect();
    let domains = vec![ParamSet::EMPTY.with(ParamKind::Delay); delays.len()];
    let model = PathMeanModel::new(grid, &single, &single, Observer::Pilots(txrx), template, domains)?;
    let fim = fim_slepian_bangs(&model, &model.kappa(), txrx.noise_psd, 0, &FdStep::default())?;
    Ok(crb(&fim.with_interest(&[interest])))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Vector3;

    struct LinearScalar {
        a: Complex64,
    }

    impl MeanModel for LinearScalar {
        fn n_params(&self) -> usize {
            1
        }
        fn labels(&self) -> Vec<String> {
            vec!["k".into()]
        }
        fn mean(&self, kappa: &[f64]) -> Result<Vec<Complex64>> {
            Ok(vec![self.a * kappa[0]])
        }
    }

    #[test]
    fn scalar_linear_fim() {
        let m = LinearScalar { a: Complex64::new(0.6, -0.8) * 3.0 };
        let fim = fim_slepian_bangs(&m, &[0.4], 0.5, 1, &FdStep::default()).unwrap();
        assert_relative_eq!(fim.matrix[(0, 0)], 2.0 * 9.0 / 0.5, max_relative = 1e-8);
    }

    #[test]
    fn diagonal_crb() {
        let fim = FisherInfo::new(DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 1.0]), vec!["a".into(), "b".into()], 1)
            .unwrap();
        let r = crb(&fim);
        assert!(r.identifiable);
        assert_relative_eq!(r.covariance.unwrap()[(0, 0)], 0.25, epsilon = 1e-15);
        assert_relative_eq!(r.bound.unwrap(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn nuisance_correlation_inflates_bound() {
        let mut last = 0.0;
        for c in [0.0, 0.5, 1.0, 1.5, 1.9] {
            let fim =
                FisherInfo::new(DMatrix::from_row_slice(2, 2, &[4.0, c, c, 1.0]), vec!["a".into(), "b".into()], 1).unwrap();
            let b = crb(&fim).bound.unwrap();
            assert!(b >= last);
            last = b;
        }
        let singular =
            FisherInfo::new(DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 1.0]), vec!["a".into(), "b".into()], 1).unwrap();
        let r = crb(&singular);
        assert!(!r.identifiable);
        assert!(r.bound.is_none());
    }

    #[test]
    fn asymmetric_fim_rejected() {
        assert!(FisherInfo::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]), vec!["a".into(), "b".into()], 1)
            .is_err());
    }

    #[test]
    fn transform_identity_and_scaling() {
        let fim = FisherInfo::new(
            DMatrix::from_row_slice(2, 2, &[5.0, 1.0, 1.0, 2.0]),
            vec!["a".into(), "b".into()],
            1,
        )
        .unwrap();
        let same = transform_fim(&fim, &DMatrix::identity(2, 2), fim.labels.clone(), 1).unwrap();
        assert_eq!(same.matrix, fim.matrix);

        // η = c·s: J_s = c² J_η, so the bound on s is the bound on η divided by |c|,
        // and the bound on η is |c| times the bound on s.
        let c = -3.0;
        let t = DMatrix::from_row_slice(2, 2, &[c, 0.0, 0.0, 1.0]);
        let js = transform_fim(&fim, &t, fim.labels.clone(), 1).unwrap();
        assert_relative_eq!(crb(&fim).bound.unwrap(), c.abs() * crb(&js).bound.unwrap(), max_relative = 1e-12);

        assert!(transform_fim(&fim, &DMatrix::identity(3, 2), fim.labels.clone(), 1).is_err());
    }

    #[test]
    fn fim_scales_with_symbols_and_noise() {
        let single = ArrayGeometry::single();
        let make = |k: usize, n0: f64| {
            let grid = GridConfig::new(32, 120e3, k, 1e-5, 28e9).unwrap();
            let txrx = TxRxConfig::siso(&grid, grid.bandwidth(), n0).unwrap();
            let path = PathParams {
                gain: Complex64::new(0.8, 0.3),
                geo: GeoParams::delay_only(2e-7),
                tag: PathTag::Los,
            };
            let model = PathMeanModel::new(
                &grid,
                &single,
                &single,
                Observer::Pilots(&txrx),
                vec![path],
                vec![ParamSet::of(&[ParamKind::Delay])],
            )
            .unwrap();
            fim_slepian_bangs(&model, &model.kappa(), n0, 1, &FdStep::default()).unwrap().matrix
        };
        let base = make(1, 1.0);
        assert!((make(3, 1.0) - &base * 3.0).abs().max() < 1e-9 * base.abs().max());
        assert!((make(1, 0.5) - &base * 2.0).abs().max() < 1e-9 * base.abs().max());
    }

    #[test]
    fn analytic_and_numeric_jacobians_agree() {
        let grid = GridConfig::new(6, 120e3, 3, 1e-4, 28e9).unwrap();
        let rx = ArrayGeometry::upa(3, 2);
        let tx = ArrayGeometry::ula(2);
        let txrx = TxRxConfig::with_pilots(
            &grid,
            2,
            6,
            grid.bandwidth(),
            1.0,
            crate::signal::PilotKind::RandomPhase,
            crate::signal::CombinerKind::RandomBeams { m_rx: 4 },
            4,
        )
        .unwrap();
        let path = PathParams {
            gain: Complex64::new(0.5, -1.1),
            geo: GeoParams {
                aoa: crate::geometry::Angles::new(0.3, 0.1),
                aod: crate::geometry::Angles::new(-0.4, 0.0),
                delay: 3.1e-7,
                doppler: 120.0,
            },
            tag: PathTag::Los,
        };
        for observer in [Observer::Channel, Observer::Pilots(&txrx)] {
            let model = PathMeanModel::new(&grid, &rx, &tx, observer, vec![path], vec![ParamSet::ALL]).unwrap();
            let k = model.kappa();
            let analytic = model.mean_jacobian(&k).unwrap().unwrap();
            let numeric = finite_difference_jacobian(&model, &k, &FdStep::default()).unwrap();
            for c in 0..analytic.ncols() {
                let scale = analytic.column(c).norm();
                let err = (analytic.column(c) - numeric.column(c)).norm();
                assert!(err <= 1e-5 * scale, "column {c}: {err} vs {scale}");
            }
        }
    }

    fn toa_scene(anchors: &[(f64, f64)], ue: (f64, f64), estimate: Vec<StateParam>) -> LocalizationScene {
        LocalizationScene {
            anchors: anchors
                .iter()
                .enumerate()
                .map(|(i, &(x, y))| AnchorState::new(i as u32, Vector3::new(x, y, 0.0), Default::default()))
                .collect(),
            ue: UEState::at(Vector3::new(ue.0, ue.1, 0.0)),
            link: Link::Downlink,
            anchor_array: ArrayGeometry::single(),
            ue_array: ArrayGeometry::single(),
            estimate,
        }
    }

    fn siso(n: usize) -> (GridConfig, TxRxConfig) {
        let grid = GridConfig::new(n, 120e3, 1, 1.0 / 120e3, 28e9).unwrap();
        let txrx = TxRxConfig::siso(&grid, 1.0, 1e-18).unwrap();
        (grid, txrx)
    }

    #[test]
    fn single_anchor_toa_with_bias_is_not_identifiable() {
        let (grid, txrx) = siso(64);
        let scene = toa_scene(
            &[(0.0, 0.0)],
            (10.0, 5.0),
            vec![StateParam::PositionX, StateParam::PositionY, StateParam::PositionZ, StateParam::ClockBias],
        );
        let b = peb_oeb_veb(&scene, &grid, &txrx).unwrap();
        assert!(!b.identifiable);
        assert!(b.peb.is_none());
    }

    #[test]
    fn fourth_anchor_never_hurts() {
        let (grid, txrx) = siso(64);
        let est = vec![StateParam::PositionX, StateParam::PositionY, StateParam::ClockBias];
        let three = toa_scene(&[(0.0, 0.0), (40.0, 0.0), (0.0, 40.0)], (12.0, 17.0), est.clone());
        let four = toa_scene(&[(0.0, 0.0), (40.0, 0.0), (0.0, 40.0), (40.0, 40.0)], (12.0, 17.0), est);
        let p3 = peb_oeb_veb(&three, &grid, &txrx).unwrap().peb.unwrap();
        let p4 = peb_oeb_veb(&four, &grid, &txrx).unwrap().peb.unwrap();
        assert!(p4 <= p3, "{p4} > {p3}");
    }
}
