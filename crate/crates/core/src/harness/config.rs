//! Scenario configuration (TOML). Every physical quantity carries its unit in
//! the key name; unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::estimation::StopRule;
use crate::{Error, Result};

/// Bandwidth grid of the case study, Hz.
pub const CASE_STUDY_BANDWIDTHS_HZ: [f64; 8] =
    [0.96e6, 1.92e6, 3.84e6, 7.68e6, 15.36e6, 30.72e6, 61.44e6, 122.88e6];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub trials: usize,
    pub case_study: CaseStudyConfig,
    pub estimator: EstimatorConfig,
    pub bound_map: BoundMapConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            trials: 200,
            case_study: CaseStudyConfig::default(),
            estimator: EstimatorConfig::default(),
            bound_map: BoundMapConfig::default(),
        }
    }
}

/// Gain phases of the object paths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhasePolicy {
    Zero,
    /// Independent uniform phases, redrawn per trial.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnrMode {
    /// Solve for the SNR that puts the 1-path CRB at the target.
    Calibrated,
    /// Use `integrated_snr_db` as given.
    Fixed,
}

/// Single-antenna bistatic scene: Tx at `(-b, 0, 0)`, Rx at `(b, 0, 0)`,
/// objects on the y axis with bistatic ranges `first + l·spacing`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CaseStudyConfig {
    pub bandwidths_hz: Vec<f64>,
    pub subcarrier_spacing_hz: f64,
    pub carrier_hz: f64,
    pub half_baseline_m: f64,
    pub n_objects: usize,
    pub first_range_m: f64,
    pub range_spacing_m: f64,
    pub phase_policy: PhasePolicy,
    pub snr_mode: SnrMode,
    /// Total integrated SNR per object.
    pub integrated_snr_db: f64,
    pub calibration_target_m: f64,
    pub calibration_bandwidth_hz: f64,
}

impl Default for CaseStudyConfig {
    fn default() -> Self {
        Self {
            bandwidths_hz: CASE_STUDY_BANDWIDTHS_HZ.to_vec(),
            subcarrier_spacing_hz: 120e3,
            carrier_hz: 28e9,
            half_baseline_m: 30.0,
            n_objects: 5,
            first_range_m: 100.0,
            range_spacing_m: 20.0,
            phase_policy: PhasePolicy::Zero,
            snr_mode: SnrMode::Calibrated,
            integrated_snr_db: 20.0,
            calibration_target_m: 0.0851,
            calibration_bandwidth_hz: 122.88e6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopKind {
    Cfar,
    ResidualEnergy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorConfig {
    pub oversampling: usize,
    pub stop_rule: StopKind,
    pub false_alarm_probability: f64,
    pub residual_gamma: f64,
    pub max_paths: usize,
    /// OMP exclusion band around selected atoms, in resolution cells (0 = off).
    pub exclusion_cells: f64,
    pub refine: bool,
    /// Association gate for detection statistics, in bistatic range.
    pub association_gate_m: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            oversampling: 4,
            stop_rule: StopKind::Cfar,
            false_alarm_probability: 1e-6,
            residual_gamma: 0.5,
            max_paths: crate::estimation::DEFAULT_MAX_PATHS,
            exclusion_cells: 0.0,
            refine: true,
            association_gate_m: 10.0,
        }
    }
}

impl EstimatorConfig {
    pub fn stop(&self) -> StopRule {
        match self.stop_rule {
            StopKind::Cfar => StopRule::Cfar {
                pfa: self.false_alarm_probability,
            },
            StopKind::ResidualEnergy => StopRule::ResidualEnergy {
                gamma: self.residual_gamma,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnchorConfig {
    pub position_m: [f64; 3],
    /// Yaw of the anchor frame about z.
    pub yaw_rad: f64,
}

impl Default for AnchorConfig {
    fn default() -> Self {
        Self {
            position_m: [0.0; 3],
            yaw_rad: 0.0,
        }
    }
}

/// PEB/OEB raster over a horizontal rectangle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundMapConfig {
    pub anchors: Vec<AnchorConfig>,
    /// Elements of the anchors' ULA (1 = single antenna).
    pub anchor_elements: usize,
    pub ue_elements: usize,
    pub uplink: bool,
    pub estimate_clock_bias: bool,
    pub estimate_orientation: bool,
    pub n_subcarriers: usize,
    pub subcarrier_spacing_hz: f64,
    pub carrier_hz: f64,
    pub tx_power_w: f64,
    pub noise_psd_w_per_hz: f64,
    pub x_range_m: [f64; 2],
    pub y_range_m: [f64; 2],
    pub z_m: f64,
    pub nx: usize,
    pub ny: usize,
}

impl Default for BoundMapConfig {
    fn default() -> Self {
        let corner = |x: f64, y: f64, yaw: f64| AnchorConfig {
            position_m: [x, y, 0.0],
            yaw_rad: yaw,
        };
        use std::f64::consts::FRAC_PI_4;
        Self {
            anchors: vec![
                corner(0.0, 0.0, FRAC_PI_4),
                corner(50.0, 0.0, 3.0 * FRAC_PI_4),
                corner(50.0, 50.0, -3.0 * FRAC_PI_4),
                corner(0.0, 50.0, -FRAC_PI_4),
            ],
            anchor_elements: 1,
            ue_elements: 1,
            uplink: false,
            estimate_clock_bias: false,
            estimate_orientation: false,
            n_subcarriers: 64,
            subcarrier_spacing_hz: 120e3,
            carrier_hz: 28e9,
            tx_power_w: 1.0,
            noise_psd_w_per_hz: 1e-20,
            x_range_m: [5.0, 45.0],
            y_range_m: [5.0, 45.0],
            z_m: 0.0,
            nx: 21,
            ny: 21,
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let cs = &self.case_study;
        if self.trials == 0 {
            return bad("trials must be positive".into());
        }
        if cs.n_objects == 0 {
            return bad("n_objects must be positive".into());
        }
        if !(cs.subcarrier_spacing_hz > 0.0 && cs.carrier_hz > 0.0) {
            return bad("subcarrier spacing and carrier must be positive".into());
        }
        for &w in &cs.bandwidths_hz {
            let n = w / cs.subcarrier_spacing_hz;
            if !(w > 0.0) || (n - n.round()).abs() > 1e-6 || n.round() < 2.0 {
                return bad(format!("bandwidth {w} Hz is not a multiple (≥ 2) of the subcarrier spacing"));
            }
        }
        if !(cs.half_baseline_m >= 0.0) || !(cs.range_spacing_m > 0.0) {
            return bad("geometry lengths must be non-negative, spacing positive".into());
        }
        if !(cs.first_range_m > 2.0 * cs.half_baseline_m) {
            return bad("first bistatic range must exceed the baseline".into());
        }
        if !(cs.calibration_target_m > 0.0 && cs.calibration_bandwidth_hz > 0.0) {
            return bad("calibration target and bandwidth must be positive".into());
        }
        let e = &self.estimator;
        if e.oversampling == 0 || e.max_paths == 0 {
            return bad("oversampling and max_paths must be positive".into());
        }
        if !(e.false_alarm_probability > 0.0 && e.false_alarm_probability < 1.0) {
            return bad("false_alarm_probability must lie in (0, 1)".into());
        }
        if !(e.exclusion_cells >= 0.0) {
            return bad("exclusion_cells must be ≥ 0".into());
        }
        if !(e.residual_gamma >= 0.0) || !(e.association_gate_m > 0.0) {
            return bad("residual_gamma must be ≥ 0 and association_gate_m > 0".into());
        }
        let b = &self.bound_map;
        if b.anchors.is_empty() || b.anchor_elements == 0 || b.ue_elements == 0 || b.n_subcarriers < 2 {
            return bad("bound map needs anchors, elements and ≥ 2 subcarriers".into());
        }
        if b.nx == 0 || b.ny == 0 || !(b.noise_psd_w_per_hz > 0.0) || !(b.tx_power_w > 0.0) {
            return bad("bound map raster and power settings must be positive".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = ScenarioConfig::default();
        let back = ScenarioConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(matches!(ScenarioConfig::from_toml_str("sede = 3"), Err(Error::Config(_))));
        assert!(ScenarioConfig::from_toml_str("[case_study]\nbandwidth = 1.0").is_err());
    }

    #[test]
    fn partial_file_uses_defaults() {
        let cfg = ScenarioConfig::from_toml_str("trials = 7\n[case_study]\nphase_policy = \"uniform\"").unwrap();
        assert_eq!(cfg.trials, 7);
        assert_eq!(cfg.case_study.phase_policy, PhasePolicy::Uniform);
        assert_eq!(cfg.case_study.bandwidths_hz.len(), 8);
    }

    #[test]
    fn bandwidth_must_fit_grid() {
        assert!(ScenarioConfig::from_toml_str("[case_study]\nbandwidths_hz = [1.0e6]").is_err());
    }
}
