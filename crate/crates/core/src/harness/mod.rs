//! Scenario configuration, seeded Monte-Carlo sweeps and CSV output.

mod bound_map;
mod case_study;
mod config;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use bound_map::{emit_bound_map_csv, run_bound_map, BoundMap, BoundMapCell};
pub use case_study::{
    calibrate_snr, crb_curves, emit_csv, emit_meta, emit_plot_data, link_budget, object_delays, read_sweep_csv,
    resolve_snr, rms_bandwidth_sq, run_case_study, run_case_study_with, run_trials, simulate_detections,
    sweep_grid, sweep_header, Calibration, CrbPoint, Estimator, SweepMeta, SweepResult, SweepRow, TrialOutcome,
};
pub use config::{
    AnchorConfig, BoundMapConfig, CaseStudyConfig, EstimatorConfig, PhasePolicy, ScenarioConfig, SnrMode, StopKind,
    CASE_STUDY_BANDWIDTHS_HZ,
};

/// Independent random-number streams of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    SinglePath = 0,
    MultiPath = 1,
    Phases = 2,
}

/// Seed of one trial, a function of (master seed, stream, bandwidth index,
/// trial index) only, so changing the loop order leaves every realisation
/// unchanged.
pub fn trial_seed(master: u64, stream: Stream, bw_idx: usize, trial: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(((stream as u64) << 48) | ((bw_idx as u64 & 0xffff) << 32) | (trial & 0xffff_ffff));
    rng.next_u64()
}
