//! Cross-module integration: filters against simulated ground truth,
//! resonator-memory signatures in the records, and the joint-simulation
//! distinguishability used by the numerics correction.

use std::f64::consts::PI;

use traj_core::analysis::{self, fit, BinGrid};
use traj_core::bayes::{self, BayesCalibration, FilterVariant};
use traj_core::model::*;
use traj_core::sim::{self, DatasetSpec, JointConfig, SimRegime, TrajOptions};

fn desk_params() -> PhysicalParams {
    let mut p = PhysicalParams::device_defaults();
    p.gamma1 = 0.0;
    p.dt = 20e-9;
    p
}

#[test]
fn standard_filter_tracks_memoryless_slow_drive() {
    let p = desk_params().with_two_omega_over_kappa(0.2);
    let spec = DatasetSpec {
        params: p.clone(),
        regime: SimRegime::new(RegimeKind::Memoryless, 41, 2000),
        t_m_grid: vec![100.0 * p.dt],
        axes: vec![TomoAxis::Z],
        init_state: BlochState::plus_z(),
        options: TrajOptions::default(),
        retain_truth: true,
    };
    let ds = sim::generate_dataset(&spec).unwrap();
    let truths = ds.truths.unwrap();
    let calib = BayesCalibration::from_params(&p);
    let pairs: Vec<(Trajectory, &Trajectory)> = ds
        .records
        .iter()
        .zip(&truths)
        .map(|(rec, truth)| {
            (
                bayes::run_filter(rec, &p, &calib, &FilterVariant::Standard).unwrap(),
                truth,
            )
        })
        .collect();
    let refs: Vec<(&Trajectory, &Trajectory)> = pairs.iter().map(|(a, b)| (a, *b)).collect();
    let rms = analysis::mean_rms(&refs).unwrap();
    for (i, r) in rms.iter().enumerate() {
        assert!(
            *r < 0.05,
            "memoryless slow-drive rms coordinate {i} = {r:.4} (limit 0.05)"
        );
    }
}

#[test]
fn estimated_calibration_matches_exact_levels() {
    // the filter sees only what an experimenter can calibrate from data
    let mut p = desk_params();
    p.omega_rabi = DriveSpec::constant(0.0);
    let mut records = Vec::new();
    for (k, init) in [BlochState::plus_z(), BlochState::minus_z()].iter().enumerate() {
        let spec = DatasetSpec {
            params: p.clone(),
            regime: SimRegime::new(RegimeKind::Memoryless, 60 + k as u64, 4000),
            t_m_grid: vec![200.0 * p.dt],
            axes: vec![TomoAxis::Z],
            init_state: *init,
            options: TrajOptions::default(),
            retain_truth: false,
        };
        records.extend(sim::generate_dataset(&spec).unwrap().records);
    }
    let estimated = BayesCalibration::from_undriven_records(&records).unwrap();
    let exact = BayesCalibration::from_params(&p);
    // per-sample noise sigma ~ 10.7 over 8e5 samples: SE ~ 0.012
    assert!((estimated.i0 - exact.i0).abs() < 0.04, "i0 = {}", estimated.i0);
    assert!((estimated.i1 - exact.i1).abs() < 0.04, "i1 = {}", estimated.i1);
    assert!(estimated.q0.abs() < 0.04, "q0 = {}", estimated.q0);
    assert!(
        (estimated.sigma2 / exact.sigma2 - 1.0).abs() < 0.03,
        "sigma2 = {} vs {}",
        estimated.sigma2,
        exact.sigma2
    );
}

#[test]
fn analytics_filter_inverts_tilted_boost_generation() {
    let p = desk_params().with_two_omega_over_kappa(1.4);
    let calib = BayesCalibration::from_params(&p);
    let regime = SimRegime::new(RegimeKind::BoostUpdate, 71, 50);
    let opts = TrajOptions {
        substeps: 1,
        boost_tilt: true,
    };
    let mut worst: f64 = 0.0;
    for idx in 0..50 {
        let (truth, record) =
            sim::simulate_trajectory(&p, &regime, idx, 120.0 * p.dt, BlochState::plus_z(), &opts)
                .unwrap();
        let filtered =
            bayes::run_filter(&record, &p, &calib, &FilterVariant::Analytics).unwrap();
        for (a, b) in filtered.states.iter().zip(&truth.states) {
            worst = worst
                .max((a.x - b.x).abs())
                .max((a.y - b.y).abs())
                .max((a.z - b.z).abs());
        }
    }
    assert!(worst < 1e-8, "tilted inversion deviates by {worst:.3e}");
}

#[test]
fn record_oscillations_lag_the_state_by_the_tilt_phase() {
    // ensemble averages of record and trajectory show the resonator delay
    let x = 2.0;
    let p = desk_params().with_two_omega_over_kappa(x);
    let omega = p.omega_rabi.constant_part();
    let n_steps = 200usize;
    let spec = DatasetSpec {
        params: p.clone(),
        regime: SimRegime::new(RegimeKind::MemoryKernel, 83, 3000),
        t_m_grid: vec![n_steps as f64 * p.dt],
        axes: vec![TomoAxis::Z],
        init_state: BlochState::plus_z(),
        options: TrajOptions::default(),
        retain_truth: true,
    };
    let ds = sim::generate_dataset(&spec).unwrap();
    let truths = ds.truths.unwrap();
    let i_series: Vec<Vec<f64>> = ds.records.iter().map(|r| r.i_samples.clone()).collect();
    let z_series: Vec<Vec<f64>> = truths
        .iter()
        .map(|t| t.states[..n_steps].iter().map(|s| s.z).collect())
        .collect();
    let mean_i = analysis::ensemble_average(&i_series).unwrap();
    let mean_z = analysis::ensemble_average(&z_series).unwrap();
    // cross-correlate over whole drive periods
    let period = (2.0 * PI / (omega * p.dt)).round() as usize;
    let window = 4 * period;
    assert!(window + 40 < n_steps, "test window too long");
    let mut best = (0usize, f64::MIN);
    for lag in 0..40 {
        let mut acc = 0.0;
        for k in 0..window {
            acc += mean_z[k] * mean_i[k + lag];
        }
        if acc > best.1 {
            best = (lag, acc);
        }
    }
    let delay = best.0 as f64 * p.dt;
    let expected = (x as f64).atan() / omega;
    assert!(
        (delay - expected).abs() <= 2.5 * p.dt,
        "record lags state by {:.1} ns, expected theta/Omega = {:.1} ns",
        delay * 1e9,
        expected * 1e9
    );
}

#[test]
fn theory_map_directions_match_empirical_diffusion() {
    let p = desk_params().with_two_omega_over_kappa(0.6);
    let spec = DatasetSpec {
        params: p.clone(),
        regime: SimRegime::new(RegimeKind::MemoryKernel, 97, 6000),
        t_m_grid: vec![150.0 * p.dt],
        axes: vec![TomoAxis::Z],
        init_state: BlochState::plus_z(),
        options: TrajOptions::default(),
        retain_truth: true,
    };
    let truths = sim::generate_dataset(&spec).unwrap().truths.unwrap();
    let grid = BinGrid::default();
    let bins = analysis::bin_increments(&truths, &grid).unwrap();
    let maps = analysis::backaction_theory_maps(analysis::Plane::Yz, &p, grid.n_bins);
    let mut checked = 0;
    let mut cosine_sum = 0.0;
    // near the sphere edge the informational kick vanishes and the
    // empirical direction is noise-limited; compare the well-determined
    // interior
    for b in bins.iter().filter(|b| {
        b.count >= 800 && (b.center.0.powi(2) + b.center.1.powi(2)).sqrt() <= 0.85
    }) {
        let q = maps
            .iter()
            .min_by(|a, c| {
                let da = (a.center.0 - b.center.0).abs() + (a.center.1 - b.center.1).abs();
                let dc = (c.center.0 - b.center.0).abs() + (c.center.1 - b.center.1).abs();
                da.total_cmp(&dc)
            })
            .unwrap();
        let dot = b.v.0 * q.std_vec.0 + b.v.1 * q.std_vec.1;
        let norms = ((b.v.0.powi(2) + b.v.1.powi(2)) * (q.std_vec.0.powi(2) + q.std_vec.1.powi(2)))
            .sqrt();
        if norms < 1e-12 {
            continue;
        }
        let cosine = (dot / norms).abs();
        assert!(
            cosine > 0.95,
            "bin {:?}: cosine similarity {cosine:.3} vs theory",
            b.center
        );
        cosine_sum += cosine;
        checked += 1;
    }
    assert!(checked >= 20, "only {checked} bins compared");
    assert!(cosine_sum / checked as f64 > 0.98);
}

#[test]
fn distinguishability_is_monotone_and_small_at_fast_drive() {
    let p = {
        let mut p = PhysicalParams::device_defaults();
        p.dt = 20e-9;
        p
    };
    let joint = JointConfig::new(10, 12.0 / p.kappa, BlochState::plus_z());
    let xs = [0.0, 0.6, 1.2, 2.0, 3.2];
    let omegas: Vec<f64> = xs.iter().map(|x| x * p.kappa / 2.0).collect();
    let table = sim::distinguishability_table(&p, &omegas, &joint).unwrap();
    let mut last = f64::INFINITY;
    for (&x, &omega) in xs.iter().zip(&omegas) {
        let d = table.scale_at(omega);
        assert!(
            d <= last + 1e-6,
            "distinguishability not non-increasing at 2O/k = {x}: {d:.4} > {last:.4}"
        );
        last = d;
    }
    assert!(
        (table.scale_at(0.0) - 1.0).abs() < 1e-9,
        "self-ratio at zero drive"
    );
    let fast = table.scale_at(p.kappa);
    assert!(fast < 0.5, "D(2O/k = 2) = {fast:.3} (expected < 0.5)");
}

#[test]
fn windowed_gaps_are_flagged_when_trajectories_have_not_spread() {
    // trajectories pinned at the pole cover too few bins early on
    let p = desk_params().with_two_omega_over_kappa(0.1);
    let spec = DatasetSpec {
        params: p.clone(),
        regime: SimRegime::new(RegimeKind::MemoryKernel, 111, 400),
        t_m_grid: vec![100.0 * p.dt],
        axes: vec![TomoAxis::Z],
        init_state: BlochState::plus_z(),
        options: TrajOptions::default(),
        retain_truth: true,
    };
    let truths = sim::generate_dataset(&spec).unwrap().truths.unwrap();
    let grid = BinGrid::new(analysis::Plane::Yz, 20, 50).unwrap();
    let points = analysis::windowed_analysis(&truths, &grid, 0.2e-6).unwrap();
    assert!(
        points.first().is_some_and(|w| !w.ok),
        "first window should be reported as a gap"
    );
}

#[test]
fn sinusoid_fit_refines_grid_scan() {
    // regression guard on the shared fitting helper
    let ts: Vec<f64> = (0..80).map(|k| k as f64 * 0.05e-6).collect();
    let ys: Vec<f64> = ts
        .iter()
        .map(|&t| 2.0 + 0.4 * (2.0 * PI * t / 1.37e-6 + 1.1).sin())
        .collect();
    let ws = vec![1.0; ts.len()];
    let fit = fit::fit_sinusoid(&ts, &ys, &ws, (0.8e-6, 2.5e-6)).unwrap();
    assert!(((fit.period - 1.37e-6) / 1.37e-6).abs() < 5e-3);
}
