//! Property tests for channel estimation and positioning.

mod common;

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Vector3};
use num_complex::Complex64;
use proptest::prelude::*;

use radioloc::channel::{ArrayGeometry, PathParams, PathTag};
use radioloc::estimation::{devectorize, omp, vectorize, ChannelEstimate, Dictionary, StopRule};
use radioloc::geometry::{los_params, AnchorState, GeoParams, Link, ParamKind, ParamSet, UEState};
use radioloc::positioning::{
    coarse_init, gauss_newton_refine, state_covariance, wnls_cost, LmOptions, Measurement, PositionMode,
    SceneBounds, StateComponents,
};
use radioloc::signal::{add_noise, noiseless_observation, TxRxConfig};
use radioloc::SPEED_OF_LIGHT;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn omp_residual_never_grows(
        delays in prop::collection::vec(0.0..8e-6f64, 1..5),
        mags in prop::collection::vec(0.2..2.0f64, 5),
        seed in any::<u64>(),
        n0 in 1e-3..1.0f64,
    ) {
        let grid = common::siso_grid(64);
        let s = ArrayGeometry::single();
        let paths: Vec<PathParams> = delays
            .iter()
            .zip(&mags)
            .map(|(&d, &m)| PathParams { gain: Complex64::new(m, 0.0), geo: GeoParams::delay_only(d), tag: PathTag::Object })
            .collect();
        let txrx = TxRxConfig::siso(&grid, 1.0, n0).unwrap();
        let mut y = noiseless_observation(&paths, &grid, &s, &s, &txrx).unwrap();
        add_noise(&mut y.samples, n0, seed);
        let est = radioloc::estimation::ls_channel_estimate(&y, &txrx, Default::default()).unwrap();
        let dict = Dictionary::new(&grid, &s, &s, ParamSet::of(&[ParamKind::Delay]), 4).unwrap();
        let r = omp(&vectorize(&est), &dict, StopRule::Cfar { pfa: 1e-3 }, est.noise_level, 10).unwrap();
        for w in r.residual_norms.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-12));
        }
    }

    #[test]
    fn devectorize_inverts_vectorize(n in 1usize..8, k in 1usize..4, nr in 1usize..4, nt in 1usize..4, seed in any::<u64>()) {
        let mut v = vec![Complex64::new(0.0, 0.0); n * k * nr * nt];
        add_noise(&mut v, 1.0, seed);
        let h = DVector::from_vec(v);
        let est: ChannelEstimate = devectorize(&h, n, k, nr, nt, 0.5).unwrap();
        prop_assert_eq!(&vectorize(&est), &h);
        let again = devectorize(&vectorize(&est), n, k, nr, nt, 0.5).unwrap();
        prop_assert_eq!(again, est);
    }
}

fn toa(anchor: AnchorState, ue: &UEState, sigma: f64, offset: f64) -> Measurement {
    let mut eta = los_params(&anchor, ue, Link::Downlink, 28e9).unwrap();
    eta.delay += offset;
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

fn box_around(c: Vector3<f64>) -> SceneBounds {
    SceneBounds {
        min: c - Vector3::repeat(100.0),
        max: c + Vector3::repeat(100.0),
    }
}

const TETRA: [(f64, f64, f64); 5] =
    [(0.0, 0.0, 0.0), (60.0, 0.0, 0.0), (0.0, 60.0, 0.0), (20.0, 20.0, 40.0), (55.0, 50.0, 10.0)];

fn solve(ms: &[Measurement], comps: &StateComponents, centre: Vector3<f64>) -> radioloc::positioning::StateEstimate {
    let init = coarse_init(ms, comps, &box_around(centre), &UEState::at(centre)).unwrap();
    gauss_newton_refine(&init, ms, comps, &LmOptions::default()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn estimate_is_translation_equivariant(
        x in 5.0..55.0f64, y in 5.0..55.0f64, z in 0.0..30.0f64,
        bias in -5e-8..5e-8f64,
        offsets in prop::collection::vec(-1e-9..1e-9f64, 5),
        shift in prop::array::uniform3(-500.0..500.0f64),
    ) {
        let shift = Vector3::from(shift);
        let comps = StateComponents::position(PositionMode::Full3d).with_bias();
        let run = |t: Vector3<f64>| {
            let anchors: Vec<AnchorState> = common::anchors(&TETRA).into_iter().map(|mut a| { a.position += t; a }).collect();
            let mut ue = UEState::at(Vector3::new(x, y, z) + t);
            ue.clock_bias = bias;
            let ms: Vec<Measurement> = anchors.iter().zip(&offsets).map(|(a, &o)| toa(*a, &ue, 1e-9, o)).collect();
            solve(&ms, &comps, Vector3::new(30.0, 30.0, 15.0) + t)
        };
        let (a, b) = (run(Vector3::zeros()), run(shift));
        prop_assert!((b.state.position - a.state.position - shift).norm() < 1e-6);
        prop_assert!((b.state.clock_bias - a.state.clock_bias).abs() * SPEED_OF_LIGHT < 1e-6);
    }

    #[test]
    fn extra_measurement_never_inflates_covariance(
        x in 5.0..55.0f64, y in 5.0..55.0f64, z in 0.0..30.0f64,
        sigmas in prop::collection::vec(1e-10..3e-9f64, 5),
    ) {
        let comps = StateComponents::position(PositionMode::Full3d).with_bias();
        let mut ue = UEState::at(Vector3::new(x, y, z));
        ue.clock_bias = 2e-8;
        let ms: Vec<Measurement> = common::anchors(&TETRA).iter().zip(&sigmas).map(|(a, &s)| toa(*a, &ue, s, 0.0)).collect();
        let four = solve(&ms[..4], &comps, Vector3::new(30.0, 30.0, 15.0));
        let five = solve(&ms, &comps, Vector3::new(30.0, 30.0, 15.0));
        prop_assert!(five.covariance.trace() <= four.covariance.trace() * (1.0 + 1e-9));
        // Matrix inequality Σ₅ ≼ Σ₄, bias expressed in metres.
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1.0, 1.0, SPEED_OF_LIGHT]));
        let params = comps.params();
        let c4 = &d * state_covariance(&ue, &params, &ms[..4]).unwrap() * &d;
        let c5 = &d * state_covariance(&ue, &params, &ms).unwrap() * &d;
        let gap = (&c4 - &c5).symmetric_eigenvalues();
        prop_assert!(gap.min() >= -1e-9 * c4.abs().max(), "{}", gap);
    }

    #[test]
    fn azimuth_plus_two_pi_changes_nothing(x in 5.0..45.0f64, y in 5.0..45.0f64, which in 0usize..3, noise in prop::collection::vec(-0.01..0.01f64, 3)) {
        let anchors = common::anchors(&[(0.0, 0.0, 0.0), (50.0, 0.0, 0.0), (0.0, 50.0, 0.0)]);
        let ue = UEState::at(Vector3::new(x, y, 0.0));
        let kinds = ParamSet::of(&[ParamKind::AodAzimuth, ParamKind::Delay]);
        let ms: Vec<Measurement> = anchors
            .iter()
            .zip(&noise)
            .map(|(a, &e)| {
                let mut eta = los_params(a, &ue, Link::Downlink, 28e9).unwrap();
                eta.aod.azimuth += e;
                Measurement::new(*a, Link::Downlink, 28e9, eta, kinds,
                    DMatrix::from_diagonal(&DVector::from_vec(vec![1e-4, 1e-18]))).unwrap()
            })
            .collect();
        let mut wrapped = ms.clone();
        wrapped[which].eta.aod.azimuth += 2.0 * PI;
        let comps = StateComponents::position(PositionMode::Planar);
        let centre = Vector3::new(25.0, 25.0, 0.0);
        let (a, b) = (solve(&ms, &comps, centre), solve(&wrapped, &comps, centre));
        // Equal up to the solver's stopping tolerance (σ here is ~0.3 m).
        prop_assert!((a.state.position - b.state.position).norm() < 1e-6);
        let (ca, cb) = (wnls_cost(&a.state, &ms).unwrap().value, wnls_cost(&a.state, &wrapped).unwrap().value);
        prop_assert!((ca - cb).abs() <= 1e-9 * ca.max(1e-12));
    }
}
