//! Cross-module invariant batteries over seeded random models.

use lgq_core::gaussian::{min_symmetric_eigenvalue, min_uncertainty_eigenvalue, PSD_MIN_EIG_TOL};
use lgq_core::model::Observer;
use lgq_core::quantum::{build_halo, quantum_filter, quantum_rts_smooth, simulate_true_state};
use lgq_core::steady_state::{check_differentiability, solve_steady_riccati, ChannelSet};
use lgq_core::synthetic::random_lgq_model;

/// Both differentiability routes (covariance gap vs observed-gain norm) must
/// agree across random valid models; `check_differentiability` errors out on
/// disagreement.
#[test]
fn differentiability_routes_agree_on_random_models() {
    let mut condition_counts = (0usize, 0usize);
    for seed in 0..100 {
        let (model, init) = random_lgq_model(3000 + seed);
        let report = check_differentiability(&model, &init.cov, 1e-6, 1e-3)
            .unwrap_or_else(|e| panic!("seed {seed}: {e}"));
        if report.condition_met {
            condition_counts.0 += 1;
        } else {
            condition_counts.1 += 1;
        }
    }
    // Generic models essentially never meet the condition; the point of the
    // battery is that the two routes never disagree.
    assert!(condition_counts.1 > 0);
}

/// The extra record never increases uncertainty: V_T_ss <= V_U_ss in PSD
/// order, and both fixed points really zero the Riccati right-hand side.
#[test]
fn true_fixed_point_is_dominated_by_partner_only_fixed_point() {
    for seed in 0..40 {
        let (model, init) = random_lgq_model(4000 + seed);
        let truth = solve_steady_riccati(&model, ChannelSet::BOTH, &init.cov, 1e-3).unwrap();
        let partner =
            solve_steady_riccati(&model, ChannelSet::UNOBSERVED_ONLY, &init.cov, 1e-3).unwrap();
        let diff = &partner.covariance - &truth.covariance;
        assert!(
            min_symmetric_eigenvalue(&diff) >= -1e-8,
            "seed {seed}: V_U_ss - V_T_ss has eigenvalue {}",
            min_symmetric_eigenvalue(&diff)
        );
    }
}

/// PSD and uncertainty audits across random valid models: the filtered and
/// smoothed covariances dominate the true one and all satisfy the
/// uncertainty relation at every grid point.
#[test]
fn estimator_covariances_dominate_the_true_state() {
    for seed in 0..100 {
        let (model, init) = random_lgq_model(5000 + seed);
        let run = simulate_true_state(&model, &init.mean, &init.cov, 1e-3, 1.0, seed).unwrap();
        let filtered =
            quantum_filter(&model, &run.record_observed, &init.mean, &init.cov).unwrap();
        let (halo_model, halo_filter) = build_halo(&model, &filtered, &run).unwrap();
        let smoothed =
            quantum_rts_smooth(&model, &halo_model, &halo_filter, &filtered, &run).unwrap();
        for k in 0..filtered.len() {
            let fil = &filtered.covs[k] - &run.trajectory.covs[k];
            let smo = &smoothed.trajectory.covs[k] - &run.trajectory.covs[k];
            assert!(
                min_symmetric_eigenvalue(&fil) >= -1e-8,
                "seed {seed}: V_F - V_T fails at step {k}"
            );
            assert!(
                min_symmetric_eigenvalue(&smo) >= -1e-8,
                "seed {seed}: V_S - V_T fails at step {k}"
            );
        }
        for v in run
            .trajectory
            .covs
            .iter()
            .chain(filtered.covs.iter())
            .chain(smoothed.trajectory.covs.iter())
            .step_by(50)
        {
            assert!(
                min_uncertainty_eigenvalue(v, model.hbar).unwrap() >= PSD_MIN_EIG_TOL,
                "seed {seed}: uncertainty violation"
            );
        }
    }
}

/// The observed gain at the true fixed point matches the covariance-gap
/// verdict quantitatively, not just through the boolean.
#[test]
fn gain_norm_tracks_the_covariance_gap() {
    for seed in 0..25 {
        let (model, init) = random_lgq_model(6000 + seed);
        let report = check_differentiability(&model, &init.cov, 1e-6, 1e-3).unwrap();
        let gain = model.gain_plus(Observer::Observed, &report.v_true_ss);
        assert!((gain.norm() - report.gain_norm).abs() < 1e-12);
        if report.covariance_gap > 1e-2 {
            assert!(report.gain_norm > 1e-4, "seed {seed}: large gap but tiny gain");
        }
    }
}
