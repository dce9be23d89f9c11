//! End-to-end oracle suite: the cross-route equivalences, the halo identity,
//! uncertainty audits, the initial-time coincidence and innovation
//! statistics, reported as JSON with per-check values against their
//! tolerances. Battery tolerances scale with `dt / 1e-4` since the
//! equivalence gaps are first order in the step.

use serde::Serialize;

use lgq_core::classical::{
    kalman_filter, mfp_combine, retrofilter, rts_smooth, simulate_langevin, StateTrajectory,
};
use lgq_core::gaussian::{min_symmetric_eigenvalue, min_uncertainty_eigenvalue, GaussianState};
use lgq_core::model::{build_derived_model, two_channel_oscillator, DerivedModel, OscillatorPreset};
use lgq_core::quantum::{
    build_halo, quantum_filter, quantum_mfp_smooth, quantum_rts_smooth, simulate_true_state,
    TrueStateRun,
};
use lgq_core::synthetic::{random_classical_model, random_lgq_model};

use crate::CliError;

#[derive(Debug, Serialize)]
pub struct OracleCheck {
    pub name: String,
    pub pass: bool,
    /// Measured value, to be compared against `tolerance`.
    pub value: f64,
    pub tolerance: f64,
    pub detail: String,
}

#[derive(Debug, Serialize)]
pub struct OracleReport {
    pub seeds: u64,
    pub dt: f64,
    pub all_pass: bool,
    pub checks: Vec<OracleCheck>,
}

fn max_gaps(a: &StateTrajectory, b: &StateTrajectory) -> (f64, f64) {
    let mut mean_gap = 0.0_f64;
    let mut cov_gap = 0.0_f64;
    for k in 0..a.len() {
        mean_gap = mean_gap.max((&a.means[k] - &b.means[k]).amax());
        cov_gap = cov_gap.max((&a.covs[k] - &b.covs[k]).amax());
    }
    (mean_gap, cov_gap)
}

fn path_scale(traj: &StateTrajectory) -> f64 {
    traj.means.iter().map(|m| m.amax()).fold(1.0_f64, f64::max)
}

fn quantum_routes(
    model: &DerivedModel,
    init: &GaussianState,
    run: &TrueStateRun,
) -> Result<(StateTrajectory, StateTrajectory, StateTrajectory), CliError> {
    let filtered = quantum_filter(model, &run.record_observed, &init.mean, &init.cov)?;
    let (halo_model, halo_filter) = build_halo(model, &filtered, run)?;
    let rts = quantum_rts_smooth(model, &halo_model, &halo_filter, &filtered, run)?;
    let mfp = quantum_mfp_smooth(model, &halo_model, &halo_filter, &filtered, run)?;
    Ok((filtered, rts.trajectory, mfp.trajectory))
}

/// Run the oracle battery. `seeds` controls the random-model count per
/// battery; `dt` the shared grid step (tolerances scale accordingly).
pub fn oracle_suite(seeds: u64, dt: f64) -> Result<OracleReport, CliError> {
    if !(dt > 0.0) {
        return Err(CliError::Validation(format!("oracle: dt must be positive, got {dt}")));
    }
    let duration = 2.0;
    let tol_scale = (dt / 1e-4).max(1.0);
    let mut checks = Vec::new();

    // Classical RTS vs two-filter battery.
    {
        let mut worst = 0.0_f64;
        let mut detail = String::new();
        for seed in 0..seeds {
            let (model, x0, v0) = random_classical_model(1000 + seed);
            let (_, record) = simulate_langevin(&model, &x0, dt, duration, seed)?;
            let filtered = kalman_filter(&model, &record, &x0, &v0)?;
            let rts = rts_smooth(&model, &filtered, &record)?;
            let mfp = mfp_combine(&filtered, &retrofilter(&model, &record)?)?;
            let (mean_gap, cov_gap) = max_gaps(&rts, &mfp);
            let rel = (mean_gap / path_scale(&rts)).max(cov_gap);
            if rel > worst {
                worst = rel;
                detail = format!("worst at seed {seed}");
            }
        }
        let tolerance = 1e-3 * tol_scale;
        checks.push(OracleCheck {
            name: "classical_rts_mfp_equivalence".into(),
            pass: worst <= tolerance,
            value: worst,
            tolerance,
            detail,
        });
    }

    // Quantum RTS vs two-filter battery, random models plus both presets.
    {
        let mut cases: Vec<(String, DerivedModel, GaussianState)> = Vec::new();
        for seed in 0..seeds {
            let (model, init) = random_lgq_model(2000 + seed);
            cases.push((format!("random-{seed}"), model, init));
        }
        for (name, preset) in [
            ("fig1-top", OscillatorPreset::observe_gamma(1.0)),
            ("fig1-bottom", OscillatorPreset::observe_kappa(0.1)),
        ] {
            let (sys, unr) = two_channel_oscillator(&preset)?;
            cases.push((name.into(), build_derived_model(&sys, &unr)?, preset.initial_state()));
        }
        let mut worst = 0.0_f64;
        let mut detail = String::new();
        for (idx, (name, model, init)) in cases.iter().enumerate() {
            let run =
                simulate_true_state(model, &init.mean, &init.cov, dt, duration, idx as u64)?;
            let (_, rts, mfp) = quantum_routes(model, init, &run)?;
            let (mean_gap, cov_gap) = max_gaps(&rts, &mfp);
            let rel = (mean_gap / path_scale(&rts)).max(cov_gap);
            if rel > worst {
                worst = rel;
                detail = format!("worst on {name}");
            }
        }
        let tolerance = 1e-3 * tol_scale;
        checks.push(OracleCheck {
            name: "quantum_rts_mfp_equivalence".into(),
            pass: worst <= tolerance,
            value: worst,
            tolerance,
            detail,
        });
    }

    // Step-halving convergence of the quantum route gap on one preset.
    {
        let preset = OscillatorPreset::observe_gamma(1.0);
        let (sys, unr) = two_channel_oscillator(&preset)?;
        let model = build_derived_model(&sys, &unr)?;
        let init = preset.initial_state();
        let fine = simulate_true_state(&model, &init.mean, &init.cov, dt / 2.0, duration, 11)?;
        let coarse = fine.coarsen(&model)?;
        let (_, rts_f, mfp_f) = quantum_routes(&model, &init, &fine)?;
        let (_, rts_c, mfp_c) = quantum_routes(&model, &init, &coarse)?;
        let (gm_f, gv_f) = max_gaps(&rts_f, &mfp_f);
        let (gm_c, gv_c) = max_gaps(&rts_c, &mfp_c);
        let ratio = (gm_c / gm_f).min(gv_c / gv_f);
        checks.push(OracleCheck {
            name: "equivalence_gap_first_order_in_dt".into(),
            pass: ratio >= 1.8,
            value: ratio,
            tolerance: 1.8,
            detail: format!("gap ratios on halving: mean {:.2}, cov {:.2}", gm_c / gm_f, gv_c / gv_f),
        });
    }

    // Halo-filter identity on the gamma-observer preset.
    {
        let preset = OscillatorPreset::observe_gamma(1.0);
        let (sys, unr) = two_channel_oscillator(&preset)?;
        let model = build_derived_model(&sys, &unr)?;
        let init = preset.initial_state();
        let run = simulate_true_state(&model, &init.mean, &init.cov, dt, duration, 3)?;
        let filtered = quantum_filter(&model, &run.record_observed, &init.mean, &init.cov)?;
        let (halo_model, halo_filter) = build_halo(&model, &filtered, &run)?;
        let replay = kalman_filter(
            &halo_model.observed_grid_model(&model),
            &run.record_observed,
            &init.mean,
            &nalgebra::DMatrix::zeros(2, 2),
        )?;
        let mut defect = 0.0_f64;
        for k in 0..replay.len() {
            defect = defect.max((&replay.means[k] - &halo_filter.means[k]).amax());
            defect = defect.max((&replay.covs[k] - &halo_filter.covs[k]).amax());
        }
        checks.push(OracleCheck {
            name: "halo_filter_identity".into(),
            pass: defect <= 1e-6,
            value: defect,
            tolerance: 1e-6,
            detail: "classical filter on the halo system vs quantum filter".into(),
        });
    }

    // Uncertainty and PSD-order audits plus t0 coincidence on both presets.
    {
        let mut worst_violation = 0.0_f64;
        let mut worst_t0 = 0.0_f64;
        for preset in [OscillatorPreset::observe_gamma(1.0), OscillatorPreset::observe_kappa(0.1)] {
            let (sys, unr) = two_channel_oscillator(&preset)?;
            let model = build_derived_model(&sys, &unr)?;
            let init = preset.initial_state();
            let run = simulate_true_state(&model, &init.mean, &init.cov, dt, duration, 4)?;
            let (filtered, rts, _) = quantum_routes(&model, &init, &run)?;
            for traj in [&run.trajectory, &filtered, &rts] {
                for v in &traj.covs {
                    worst_violation =
                        worst_violation.max(-min_uncertainty_eigenvalue(v, model.hbar)?);
                }
            }
            for k in 0..filtered.len() {
                let fil = &filtered.covs[k] - &run.trajectory.covs[k];
                let smo = &rts.covs[k] - &run.trajectory.covs[k];
                worst_violation = worst_violation.max(-min_symmetric_eigenvalue(&fil));
                worst_violation = worst_violation.max(-min_symmetric_eigenvalue(&smo));
            }
            worst_t0 = worst_t0
                .max((&rts.means[0] - &init.mean).amax())
                .max((&rts.covs[0] - &init.cov).amax());
        }
        checks.push(OracleCheck {
            name: "uncertainty_and_order_audits".into(),
            pass: worst_violation <= 1e-10,
            value: worst_violation,
            tolerance: 1e-10,
            detail: "max violation over V_T/V_F/V_S and V_F - V_T, V_S - V_T".into(),
        });
        checks.push(OracleCheck {
            name: "t0_coincidence".into(),
            pass: worst_t0 <= 1e-4,
            value: worst_t0,
            tolerance: 1e-4,
            detail: "smoothed state at t0 vs shared initial conditions".into(),
        });
    }

    // Innovation statistics on one filter run.
    {
        let preset = OscillatorPreset::observe_gamma(1.0);
        let (sys, unr) = two_channel_oscillator(&preset)?;
        let model = build_derived_model(&sys, &unr)?;
        let init = preset.initial_state();
        let run = simulate_true_state(&model, &init.mean, &init.cov, dt, duration, 123)?;
        let filtered = quantum_filter(&model, &run.record_observed, &init.mean, &init.cov)?;
        let steps = run.trajectory.grid.steps;
        let n = steps as f64;
        let mut worst_sigma = 0.0_f64;
        for component in 0..model.channels() {
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            for k in 0..steps {
                let dw = &run.record_observed.increments[k]
                    - &model.measurement_observed * &filtered.means[k] * dt;
                sum += dw[component];
                sum_sq += dw[component] * dw[component];
            }
            let mean = sum / n;
            let var = sum_sq / n - mean * mean;
            worst_sigma = worst_sigma.max((var - dt).abs() / (dt * (2.0 / n).sqrt()));
            worst_sigma = worst_sigma.max(mean.abs() / (dt / n).sqrt());
        }
        checks.push(OracleCheck {
            name: "innovation_statistics".into(),
            pass: worst_sigma <= 3.0,
            value: worst_sigma,
            tolerance: 3.0,
            detail: "innovation mean and variance in standard errors".into(),
        });
    }

    let all_pass = checks.iter().all(|c| c.pass);
    Ok(OracleReport { seeds, dt, all_pass, checks })
}
