//! Bandwidth sweep of the single-antenna bistatic scene: delay CRBs, resolution
//! and Monte-Carlo RMSE of the closest object's range.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::Vector3;
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::config::{PhasePolicy, ScenarioConfig, SnrMode};
use super::{trial_seed, Stream};
use crate::bounds::delay_crb;
use crate::channel::{ArrayGeometry, GridConfig, PathParams, PathTag};
use crate::estimation::{
    ls_channel_estimate, match_detections, ml_refine, omp_banded, vectorize, DetectedPath, Dictionary, Gates, LsMode,
    RefineData, RefineOptions,
};
use crate::geometry::{bistatic_params, AnchorState, GeoParams, ObjectState, ParamKind, ParamSet, Rotation};
use crate::resolution::resolution_limits;
use crate::signal::{observe, TxRxConfig};
use crate::{Error, Result, SPEED_OF_LIGHT};

/// Bistatic delays of the scene's objects, closest first.
pub fn object_delays(cfg: &ScenarioConfig) -> Result<Vec<f64>> {
    let cs = &cfg.case_study;
    let b = cs.half_baseline_m;
    let tx = AnchorState::new(0, Vector3::new(-b, 0.0, 0.0), Rotation::identity());
    let rx = AnchorState::new(1, Vector3::new(b, 0.0, 0.0), Rotation::identity());
    (0..cs.n_objects)
        .map(|l| {
            let range = cs.first_range_m + l as f64 * cs.range_spacing_m;
            let y = ((range / 2.0).powi(2) - b * b).sqrt();
            let obj = ObjectState::new(Vector3::new(0.0, y, 0.0), Vector3::zeros(), 1.0)?;
            Ok(bistatic_params(&tx, &rx, &obj, 0.0, cs.carrier_hz)?.delay)
        })
        .collect()
}

/// Delay-only grid for one sweep bandwidth.
pub fn sweep_grid(cfg: &ScenarioConfig, bandwidth: f64) -> Result<GridConfig> {
    let cs = &cfg.case_study;
    let n = (bandwidth / cs.subcarrier_spacing_hz).round() as usize;
    GridConfig::new(n, cs.subcarrier_spacing_hz, 1, 1.0 / cs.subcarrier_spacing_hz, cs.carrier_hz)
}

/// Unit transmit power and the noise PSD that gives a unit-gain path the
/// total integrated SNR `snr` (linear): `N0 = 1/(Δf·snr)`.
pub fn link_budget(grid: &GridConfig, snr: f64) -> Result<TxRxConfig> {
    TxRxConfig::siso(grid, 1.0, 1.0 / (grid.subcarrier_spacing * snr))
}

/// Single-path delay bound in metres of bistatic range.
fn single_path_crb_m(cfg: &ScenarioConfig, bandwidth: f64, snr: f64) -> Result<f64> {
    let grid = sweep_grid(cfg, bandwidth)?;
    let txrx = link_budget(&grid, snr)?;
    let delay = object_delays(cfg)?[0];
    let r = delay_crb(&grid, &txrx, &[delay], &[Complex64::new(1.0, 0.0)], 0)?;
    Ok(SPEED_OF_LIGHT * r.bound_or_inf())
}

/// Outcome of the one-point SNR calibration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Calibration {
    /// Total integrated SNR per object, linear.
    pub integrated_snr: f64,
    pub integrated_snr_db: f64,
    /// 1-path CRB at the calibration bandwidth after calibration, m.
    pub crb_at_reference_m: f64,
    /// SNR implied by `1/(8π²·SNR·β²)` with the mean-removed RMS bandwidth.
    pub closed_form_snr: f64,
    /// `|snr − closed_form_snr| / closed_form_snr`.
    pub closed_form_gap: f64,
    /// Whether the SNR came from calibration rather than a fixed setting.
    pub calibrated: bool,
}

/// `β² = Δf²(N² − 1)/12`: squared RMS bandwidth of N equispaced subcarriers
/// after mean removal.
pub fn rms_bandwidth_sq(grid: &GridConfig) -> f64 {
    let n = grid.n_subcarriers as f64;
    grid.subcarrier_spacing.powi(2) * (n * n - 1.0) / 12.0
}

/// Bisection (in log SNR) for the SNR putting the 1-path CRB at the target.
pub fn calibrate_snr(cfg: &ScenarioConfig) -> Result<Calibration> {
    let cs = &cfg.case_study;
    let grid = sweep_grid(cfg, cs.calibration_bandwidth_hz)?;
    let closed_form_snr = {
        let var = (cs.calibration_target_m / SPEED_OF_LIGHT).powi(2);
        1.0 / (8.0 * PI * PI * rms_bandwidth_sq(&grid) * var)
    };
    let target = cs.calibration_target_m;
    let f = |log_snr: f64| single_path_crb_m(cfg, cs.calibration_bandwidth_hz, log_snr.exp()).map(|c| c - target);
    let (mut lo, mut hi) = ((1e-6f64).ln(), (1e12f64).ln());
    let (f_lo, f_hi) = (f(lo)?, f(hi)?);
    if !(f_lo > 0.0 && f_hi < 0.0) {
        return Err(Error::Calibration(format!(
            "target {target} m outside the bracket [{:.3e}, {:.3e}] m",
            f_hi + target,
            f_lo + target
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid)? > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let snr = (0.5 * (lo + hi)).exp();
    Ok(Calibration {
        integrated_snr: snr,
        integrated_snr_db: 10.0 * snr.log10(),
        crb_at_reference_m: single_path_crb_m(cfg, cs.calibration_bandwidth_hz, snr)?,
        closed_form_snr,
        closed_form_gap: (snr - closed_form_snr).abs() / closed_form_snr,
        calibrated: true,
    })
}

/// Calibrated or fixed SNR, per the configuration.
pub fn resolve_snr(cfg: &ScenarioConfig) -> Result<Calibration> {
    match cfg.case_study.snr_mode {
        SnrMode::Calibrated => calibrate_snr(cfg),
        SnrMode::Fixed => {
            let snr = 10f64.powf(cfg.case_study.integrated_snr_db / 10.0);
            let grid = sweep_grid(cfg, cfg.case_study.calibration_bandwidth_hz)?;
            let crb = single_path_crb_m(cfg, cfg.case_study.calibration_bandwidth_hz, snr)?;
            let closed_form_snr = 1.0 / (8.0 * PI * PI * rms_bandwidth_sq(&grid) * (crb / SPEED_OF_LIGHT).powi(2));
            Ok(Calibration {
                integrated_snr: snr,
                integrated_snr_db: cfg.case_study.integrated_snr_db,
                crb_at_reference_m: crb,
                closed_form_snr,
                closed_form_gap: (snr - closed_form_snr).abs() / closed_form_snr,
                calibrated: false,
            })
        }
    }
}

/// Object gains for one trial under the phase policy.
fn object_gains(cfg: &ScenarioConfig, bw_idx: usize, trial: u64) -> Vec<Complex64> {
    let n = cfg.case_study.n_objects;
    match cfg.case_study.phase_policy {
        PhasePolicy::Zero => vec![Complex64::new(1.0, 0.0); n],
        PhasePolicy::Uniform => {
            let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(cfg.seed, Stream::Phases, bw_idx, trial));
            (0..n).map(|_| Complex64::from_polar(1.0, 2.0 * PI * rng.random::<f64>())).collect()
        }
    }
}

fn object_paths(delays: &[f64], gains: &[Complex64]) -> Vec<PathParams> {
    delays
        .iter()
        .zip(gains)
        .map(|(&d, &g)| PathParams {
            gain: g,
            geo: GeoParams::delay_only(d),
            tag: PathTag::Object,
        })
        .collect()
}

/// CRBs of the closest object's range with one path and with all objects, m.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrbPoint {
    pub bandwidth: f64,
    pub crb_single_m: f64,
    /// +∞ when the multi-path problem is not identifiable.
    pub crb_multi_m: f64,
    pub multi_identifiable: bool,
    pub multi_condition: f64,
}

/// Bounds at every sweep bandwidth. Under uniform phases the multi-path
/// bound is the RMS over the trials' phase draws.
pub fn crb_curves(cfg: &ScenarioConfig, calib: &Calibration) -> Result<Vec<CrbPoint>> {
    let delays = object_delays(cfg)?;
    let cs = &cfg.case_study;
    cs.bandwidths_hz
        .par_iter()
        .enumerate()
        .map(|(bw_idx, &w)| {
            let grid = sweep_grid(cfg, w)?;
            let txrx = link_budget(&grid, calib.integrated_snr)?;
            let single = delay_crb(&grid, &txrx, &delays[..1], &[Complex64::new(1.0, 0.0)], 0)?;
            let draws: Vec<Vec<Complex64>> = match cs.phase_policy {
                PhasePolicy::Zero => vec![object_gains(cfg, bw_idx, 0)],
                PhasePolicy::Uniform => (0..cfg.trials as u64).map(|t| object_gains(cfg, bw_idx, t)).collect(),
            };
            let mut var = 0.0;
            let mut identifiable = true;
            let mut condition: f64 = 0.0;
            for gains in &draws {
                let r = delay_crb(&grid, &txrx, &delays, gains, 0)?;
                identifiable &= r.identifiable;
                condition = condition.max(r.condition_number);
                var += r.bound_or_inf().powi(2);
            }
            let multi = (var / draws.len() as f64).sqrt();
            Ok(CrbPoint {
                bandwidth: w,
                crb_single_m: SPEED_OF_LIGHT * single.bound_or_inf(),
                crb_multi_m: if identifiable { SPEED_OF_LIGHT * multi } else { f64::INFINITY },
                multi_identifiable: identifiable,
                multi_condition: condition,
            })
        })
        .collect()
}

/// Dictionary, stopping rule and refinement settings for one bandwidth.
pub struct Estimator {
    grid: GridConfig,
    dict: Dictionary,
    cfg: super::config::EstimatorConfig,
}

impl Estimator {
    pub fn new(cfg: &ScenarioConfig, grid: &GridConfig) -> Result<Self> {
        let single = ArrayGeometry::single();
        let dict = Dictionary::new(grid, &single, &single, ParamSet::of(&[ParamKind::Delay]), cfg.estimator.oversampling)?;
        Ok(Self {
            grid: *grid,
            dict,
            cfg: cfg.estimator.clone(),
        })
    }

    /// LS → OMP → ML refinement on one noisy realisation.
    pub fn run(&self, paths: &[PathParams], txrx: &TxRxConfig, seed: u64) -> Result<Vec<DetectedPath>> {
        let single = ArrayGeometry::single();
        let obs = observe(paths, &self.grid, &single, &single, txrx, seed)?;
        let est = ls_channel_estimate(&obs, txrx, LsMode::PerSymbol)?;
        let h = vectorize(&est);
        let det = omp_banded(&h, &self.dict, self.cfg.stop(), est.noise_level, self.cfg.max_paths, self.cfg.exclusion_cells)?;
        if !self.cfg.refine || det.paths.is_empty() {
            return Ok(det.paths);
        }
        let r = ml_refine(
            RefineData::Channel(&est),
            &det.paths,
            &self.grid,
            &single,
            &single,
            &RefineOptions::default(),
        )?;
        Ok(r.paths)
    }
}

/// Per-trial summary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialOutcome {
    /// Range error of the earliest detection, the receiver's estimate of the
    /// closest object, m; `None` when nothing was detected.
    pub error_m: Option<f64>,
    /// Range error of the detection nearest the closest object (oracle
    /// association), m.
    pub nearest_error_m: Option<f64>,
    pub n_detected: usize,
    pub missed: usize,
    pub false_alarms: usize,
}

fn summarise(truth: &[f64], detected: &[DetectedPath], gate_m: f64) -> Result<TrialOutcome> {
    let errors = detected.iter().map(|p| p.geo.delay - truth[0]);
    let error_m = detected
        .iter()
        .map(|p| p.geo.delay)
        .min_by(f64::total_cmp)
        .map(|d| (d - truth[0]) * SPEED_OF_LIGHT);
    let nearest_error_m = errors.min_by(|a, b| a.abs().total_cmp(&b.abs())).map(|e| e * SPEED_OF_LIGHT);
    let t: Vec<GeoParams> = truth.iter().map(|&d| GeoParams::delay_only(d)).collect();
    let d: Vec<GeoParams> = detected.iter().map(|p| p.geo).collect();
    let m = match_detections(&t, &d, &Gates::delay(gate_m / SPEED_OF_LIGHT))?;
    Ok(TrialOutcome {
        error_m,
        nearest_error_m,
        n_detected: detected.len(),
        missed: m.missed.len(),
        false_alarms: m.false_alarms.len(),
    })
}

/// One sweep point.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub bandwidth_hz: f64,
    pub n_subcarriers: usize,
    pub resolution_m: f64,
    pub inter_path_distance_m: f64,
    pub crb_1path_m: f64,
    pub crb_all_paths_m: f64,
    pub crb_all_paths_identifiable: bool,
    pub rmse_1path_m: f64,
    pub rmse_all_paths_m: f64,
    /// Oracle-association RMSE (detection nearest the closest object).
    pub rmse_all_paths_nearest_m: f64,
    pub bias_1path_m: f64,
    pub bias_all_paths_m: f64,
    /// Trials in which nothing was detected (excluded from RMSE and bias).
    pub empty_1path: usize,
    pub empty_all_paths: usize,
    pub median_paths: f64,
    /// Fraction of multi-path trials with exactly `n_objects` detections.
    pub all_detected_fraction: f64,
    pub mean_missed: f64,
    pub mean_false_alarms: f64,
    /// Count of multi-path trials by number of detections, `0..=max_paths`.
    pub detected_histogram: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepMeta {
    pub seed: u64,
    pub trials: usize,
    pub calibration: Calibration,
    /// Only calibrated runs are labelled comparable to the reference figure.
    pub reference_comparable: bool,
    pub object_delays_s: Vec<f64>,
    pub config: ScenarioConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub meta: SweepMeta,
}

fn rmse_bias(errors: &[f64]) -> (f64, f64) {
    if errors.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = errors.len() as f64;
    (
        (errors.iter().map(|e| e * e).sum::<f64>() / n).sqrt(),
        errors.iter().sum::<f64>() / n,
    )
}

fn median(v: &mut [usize]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_unstable();
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m] as f64
    } else {
        0.5 * (v[m - 1] + v[m]) as f64
    }
}

/// Monte-Carlo trials of one bandwidth: `(single-path, multi-path)` outcomes.
pub fn run_trials(
    cfg: &ScenarioConfig,
    calib: &Calibration,
    bw_idx: usize,
) -> Result<(Vec<TrialOutcome>, Vec<TrialOutcome>)> {
    let w = cfg.case_study.bandwidths_hz[bw_idx];
    let grid = sweep_grid(cfg, w)?;
    let txrx = link_budget(&grid, calib.integrated_snr)?;
    let estimator = Estimator::new(cfg, &grid)?;
    let delays = object_delays(cfg)?;
    let gate = cfg.estimator.association_gate_m;
    let jobs: Vec<(bool, u64)> = (0..cfg.trials as u64)
        .map(|t| (true, t))
        .chain((0..cfg.trials as u64).map(|t| (false, t)))
        .collect();
    let outcomes: Vec<TrialOutcome> = jobs
        .par_iter()
        .map(|&(single, t)| {
            let gains = object_gains(cfg, bw_idx, t);
            let (stream, truth) = if single {
                (Stream::SinglePath, &delays[..1])
            } else {
                (Stream::MultiPath, &delays[..])
            };
            let paths = object_paths(truth, &gains[..truth.len()]);
            let det = estimator.run(&paths, &txrx, trial_seed(cfg.seed, stream, bw_idx, t))?;
            summarise(truth, &det, gate)
        })
        .collect::<Result<_>>()?;
    let (a, b) = outcomes.split_at(cfg.trials);
    Ok((a.to_vec(), b.to_vec()))
}

/// Full sweep. Trials run in parallel; results land in indexed slots so the
/// output does not depend on scheduling.
pub fn run_case_study(cfg: &ScenarioConfig) -> Result<SweepResult> {
    cfg.validate()?;
    let calib = resolve_snr(cfg)?;
    run_case_study_with(cfg, &calib)
}

pub fn run_case_study_with(cfg: &ScenarioConfig, calib: &Calibration) -> Result<SweepResult> {
    let crbs = crb_curves(cfg, calib)?;
    let n_obj = cfg.case_study.n_objects;
    let mut rows = Vec::with_capacity(crbs.len());
    for (bw_idx, c) in crbs.iter().enumerate() {
        let (single, multi) = run_trials(cfg, calib, bw_idx)?;
        let grid = sweep_grid(cfg, c.bandwidth)?;
        let res = resolution_limits(&grid, &ArrayGeometry::single());
        let errs = |o: &[TrialOutcome]| o.iter().filter_map(|t| t.error_m).collect::<Vec<_>>();
        let (rmse1, bias1) = rmse_bias(&errs(&single));
        let (rmse5, bias5) = rmse_bias(&errs(&multi));
        let mut counts: Vec<usize> = multi.iter().map(|t| t.n_detected).collect();
        let mut hist = vec![0usize; cfg.estimator.max_paths + 1];
        for &k in &counts {
            hist[k.min(cfg.estimator.max_paths)] += 1;
        }
        let n = multi.len() as f64;
        rows.push(SweepRow {
            bandwidth_hz: c.bandwidth,
            n_subcarriers: grid.n_subcarriers,
            resolution_m: res.distance_res(),
            inter_path_distance_m: cfg.case_study.range_spacing_m,
            crb_1path_m: c.crb_single_m,
            crb_all_paths_m: c.crb_multi_m,
            crb_all_paths_identifiable: c.multi_identifiable,
            rmse_1path_m: rmse1,
            rmse_all_paths_m: rmse5,
            rmse_all_paths_nearest_m: rmse_bias(&multi.iter().filter_map(|t| t.nearest_error_m).collect::<Vec<_>>()).0,
            bias_1path_m: bias1,
            bias_all_paths_m: bias5,
            empty_1path: single.iter().filter(|t| t.error_m.is_none()).count(),
            empty_all_paths: multi.iter().filter(|t| t.error_m.is_none()).count(),
            all_detected_fraction: counts.iter().filter(|&&k| k == n_obj).count() as f64 / n,
            median_paths: median(&mut counts),
            mean_missed: multi.iter().map(|t| t.missed as f64).sum::<f64>() / n,
            mean_false_alarms: multi.iter().map(|t| t.false_alarms as f64).sum::<f64>() / n,
            detected_histogram: hist,
        });
    }
    Ok(SweepResult {
        rows,
        meta: SweepMeta {
            seed: cfg.seed,
            trials: cfg.trials,
            calibration: *calib,
            reference_comparable: calib.calibrated,
            object_delays_s: object_delays(cfg)?,
            config: cfg.clone(),
        },
    })
}

/// Detections of every multi-path trial at one bandwidth.
pub fn simulate_detections(cfg: &ScenarioConfig, calib: &Calibration, bw_idx: usize) -> Result<Vec<(u64, DetectedPath)>> {
    let w = *cfg
        .case_study
        .bandwidths_hz
        .get(bw_idx)
        .ok_or_else(|| Error::Config(format!("no bandwidth with index {bw_idx}")))?;
    let grid = sweep_grid(cfg, w)?;
    let txrx = link_budget(&grid, calib.integrated_snr)?;
    let estimator = Estimator::new(cfg, &grid)?;
    let delays = object_delays(cfg)?;
    let per_trial: Vec<Vec<DetectedPath>> = (0..cfg.trials as u64)
        .into_par_iter()
        .map(|t| {
            let paths = object_paths(&delays, &object_gains(cfg, bw_idx, t));
            estimator.run(&paths, &txrx, trial_seed(cfg.seed, Stream::MultiPath, bw_idx, t))
        })
        .collect::<Result<_>>()?;
    Ok(per_trial
        .into_iter()
        .enumerate()
        .flat_map(|(t, ps)| ps.into_iter().map(move |p| (t as u64, p)))
        .collect())
}

const FIXED_COLUMNS: [&str; 18] = [
    "bandwidth_Hz",
    "n_subcarriers",
    "resolution_m",
    "inter_path_distance_m",
    "crb_1path_m",
    "crb_all_paths_m",
    "crb_all_paths_identifiable",
    "rmse_1path_m",
    "rmse_all_paths_m",
    "rmse_all_paths_nearest_m",
    "bias_1path_m",
    "bias_all_paths_m",
    "empty_trials_1path",
    "empty_trials_all_paths",
    "median_detected_paths",
    "all_detected_fraction",
    "mean_missed",
    "mean_false_alarms",
];

/// Column names of the sweep CSV; the histogram columns `detected_<k>`
/// count trials with `k` detections, `k = 0..=max_paths`.
pub fn sweep_header(max_paths: usize) -> Vec<String> {
    FIXED_COLUMNS
        .iter()
        .map(|s| s.to_string())
        .chain((0..=max_paths).map(|k| format!("detected_{k}")))
        .collect()
}

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes the sweep table; deterministic row order (sweep order).
pub fn emit_csv(result: &SweepResult, path: &Path) -> Result<()> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(sweep_header(result.meta.config.estimator.max_paths)).map_err(csv_err)?;
    for r in &result.rows {
        let mut rec = vec![
            num(r.bandwidth_hz),
            r.n_subcarriers.to_string(),
            num(r.resolution_m),
            num(r.inter_path_distance_m),
            num(r.crb_1path_m),
            num(r.crb_all_paths_m),
            r.crb_all_paths_identifiable.to_string(),
            num(r.rmse_1path_m),
            num(r.rmse_all_paths_m),
            num(r.rmse_all_paths_nearest_m),
            num(r.bias_1path_m),
            num(r.bias_all_paths_m),
            r.empty_1path.to_string(),
            r.empty_all_paths.to_string(),
            num(r.median_paths),
            num(r.all_detected_fraction),
            num(r.mean_missed),
            num(r.mean_false_alarms),
        ];
        rec.extend(r.detected_histogram.iter().map(|c| c.to_string()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads a table written by [`emit_csv`].
pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepRow>> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let bad = |m: String| Error::Config(format!("{}: {m}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let n_hist = r.headers().map_err(csv_err)?.len().saturating_sub(FIXED_COLUMNS.len());
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let f = |i: usize| rec[i].parse::<f64>().map_err(|e| bad(format!("column {i}: {e}")));
        let u = |i: usize| rec[i].parse::<usize>().map_err(|e| bad(format!("column {i}: {e}")));
        rows.push(SweepRow {
            bandwidth_hz: f(0)?,
            n_subcarriers: u(1)?,
            resolution_m: f(2)?,
            inter_path_distance_m: f(3)?,
            crb_1path_m: f(4)?,
            crb_all_paths_m: f(5)?,
            crb_all_paths_identifiable: rec[6].parse().map_err(|e| bad(format!("column 6: {e}")))?,
            rmse_1path_m: f(7)?,
            rmse_all_paths_m: f(8)?,
            rmse_all_paths_nearest_m: f(9)?,
            bias_1path_m: f(10)?,
            bias_all_paths_m: f(11)?,
            empty_1path: u(12)?,
            empty_all_paths: u(13)?,
            median_paths: f(14)?,
            all_detected_fraction: f(15)?,
            mean_missed: f(16)?,
            mean_false_alarms: f(17)?,
            detected_histogram: (0..n_hist).map(|k| u(FIXED_COLUMNS.len() + k)).collect::<Result<_>>()?,
        });
    }
    Ok(rows)
}

/// Long-format `curve,bandwidth_MHz,value_m` pairs for external plotting.
pub fn emit_plot_data(result: &SweepResult, path: &Path) -> Result<()> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["curve", "bandwidth_MHz", "value_m"]).map_err(csv_err)?;
    type Getter = fn(&SweepRow) -> f64;
    let curves: [(&str, Getter); 6] = [
        ("rmse_1path", |r| r.rmse_1path_m),
        ("rmse_all_paths", |r| r.rmse_all_paths_m),
        ("resolution", |r| r.resolution_m),
        ("inter_path_distance", |r| r.inter_path_distance_m),
        ("crb_1path", |r| r.crb_1path_m),
        ("crb_all_paths", |r| r.crb_all_paths_m),
    ];
    for (name, get) in curves {
        for r in &result.rows {
            w.write_record([name.to_string(), num(r.bandwidth_hz / 1e6), num(get(r))]).map_err(csv_err)?;
        }
    }
    w.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Run metadata (seed, calibration, full configuration) as TOML.
pub fn emit_meta(meta: &SweepMeta, path: &Path) -> Result<()> {
    let text = toml::to_string(meta).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn scene_delays_are_bistatic_ranges() {
        let cfg = ScenarioConfig::default();
        let d = object_delays(&cfg).unwrap();
        for (l, &t) in d.iter().enumerate() {
            assert_relative_eq!(t * SPEED_OF_LIGHT, 100.0 + 20.0 * l as f64, max_relative = 1e-12);
        }
    }

    #[test]
    fn calibration_matches_closed_form() {
        let cfg = ScenarioConfig::default();
        let c = calibrate_snr(&cfg).unwrap();
        assert_relative_eq!(c.crb_at_reference_m, 0.0851, max_relative = 1e-9);
        assert!(c.closed_form_gap < 1e-6, "gap {}", c.closed_form_gap);
        assert_eq!(c, calibrate_snr(&cfg).unwrap());
    }

    #[test]
    fn doubling_snr_scales_crb() {
        let cfg = ScenarioConfig::default();
        for w in [0.96e6, 15.36e6] {
            let a = single_path_crb_m(&cfg, w, 100.0).unwrap();
            let b = single_path_crb_m(&cfg, w, 200.0).unwrap();
            assert_relative_eq!(b / a, 1.0 / 2f64.sqrt(), max_relative = 1e-9);
        }
    }

    #[test]
    fn unreachable_target_is_an_error() {
        let mut cfg = ScenarioConfig::default();
        cfg.case_study.calibration_target_m = 1e9;
        assert!(matches!(calibrate_snr(&cfg), Err(Error::Calibration(_))));
    }

    #[test]
    fn csv_round_trip_and_empty() {
        let mut cfg = ScenarioConfig::default();
        cfg.case_study.bandwidths_hz = vec![];
        let calib = calibrate_snr(&cfg).unwrap();
        let empty = run_case_study_with(&cfg, &calib).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        emit_csv(&empty, &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.trim_end(), sweep_header(cfg.estimator.max_paths).join(","));

        let mut full = empty.clone();
        full.rows.push(SweepRow {
            bandwidth_hz: 0.96e6,
            n_subcarriers: 8,
            resolution_m: 312.5,
            inter_path_distance_m: 20.0,
            crb_1path_m: 0.1 + 0.2,
            crb_all_paths_m: f64::INFINITY,
            crb_all_paths_identifiable: false,
            rmse_1path_m: std::f64::consts::PI,
            rmse_all_paths_m: 1.0 / 3.0,
            rmse_all_paths_nearest_m: 0.1,
            bias_1path_m: -1e-300,
            bias_all_paths_m: 5e-324,
            empty_1path: 0,
            empty_all_paths: 3,
            median_paths: 2.5,
            all_detected_fraction: 0.1,
            mean_missed: 2.0,
            mean_false_alarms: 0.7,
            detected_histogram: (0..=cfg.estimator.max_paths).collect(),
        });
        emit_csv(&full, &p).unwrap();
        assert_eq!(read_sweep_csv(&p).unwrap(), full.rows);
    }
}
