//! Moment engines for linear Gaussian quantum systems under two records.
//!
//! The true state is conditioned on both Alice's (observed) and Bob's
//! (unobserved) records; its covariance `V_T` is deterministic. Alice's
//! estimate of the true mean is a classical inference problem for the `halo`
//! system
//!
//! ```text
//! d(halo x) = A (halo x) dt + Ebar dvbar_p,    EbarEbar^T = sum_r K_r+[V_T] K_r+[V_T]^T
//! y_o dt    = C_o (halo x) dt + dw_o,          Gbar^T = K_o+[V_T]
//! ```
//!
//! whose filtered moments satisfy `halo x_F = <x>_F` and
//! `halo V_F = V_F - V_T`. Smoothing that system and convolving back with
//! the true state gives the smoothed quantum state; the RTS route integrates
//!
//! ```text
//! d<x>_S  = A <x>_S dt + Dbar hVF^{-1} (<x>_S - <x>_F) dt + K_o+[V_T] dw_S
//! dV_S/dt = (Abar + Dbar hVF^{-1}) V_S + V_S (Abar + Dbar hVF^{-1})^T + Q
//! Q       = D - G_o^T G_o + V_T C_o^T C_o V_T
//!           - Dbar hVF^{-1} V_T - V_T hVF^{-1} Dbar - 2 Dbar
//! ```
//!
//! backward from `V_S(T) = V_F(T)`, with `Abar = A - K_o+[V_T] C_o` and
//! `Dbar = EbarEbar^T - K_o+[V_T] K_o+[V_T]^T`. When `halo V_F` is singular
//! the pseudo-inverse drops the null directions and their components of the
//! smoothed mean and covariance are pinned to the transformed true state;
//! with shared initial conditions this makes the smoother coincide with the
//! true state at `t0` exactly.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::classical::{
    kalman_filter, mfp_combine_structured, retrofilter, EigenRank, GridModel, MeasurementRecord,
    StateTrajectory, TimeGrid,
};
use crate::error::{Error, Result};
use crate::gaussian::{
    default_eig_tol, min_uncertainty_eigenvalue, pseudo_inverse_given_rank,
    symmetric_eigen_sorted, symmetrize, PSD_MIN_EIG_TOL,
};
use crate::model::{DerivedModel, Observer};

/// Hysteresis factor between rank-up and rank-down thresholds; prevents the
/// smoother's rank decisions from chattering near an eigenvalue crossing.
const RANK_HYSTERESIS: f64 = 10.0;

/// Stability safety factor for the smoother's rank decisions. A halo
/// eigendirection `p` with eigenvalue `lambda` only enters the pseudo-inverse
/// once `lambda > RANK_DT_SAFETY * dt * |Dbar p|`; below that the explicit
/// backward step `dt * Dbar (halo V)^{-1}` is not a contraction and inverting
/// the direction corrupts the flow, while its physical variance (at most
/// `lambda`) is still negligible, so it is pinned to the true state instead.
const RANK_DT_SAFETY: f64 = 4.0;

/// One simulated true-state trajectory with both measurement records.
#[derive(Debug, Clone)]
pub struct TrueStateRun {
    /// Grid-aligned `(<x>_T, V_T)`; the covariance is record-independent.
    pub trajectory: StateTrajectory,
    pub record_observed: MeasurementRecord,
    pub record_unobserved: MeasurementRecord,
    pub rng_seed: u64,
}

impl TrueStateRun {
    /// Rebuild the run on a grid with `dt` doubled: both records are
    /// coarsened (adjacent increments summed, preserving the underlying
    /// noise realisation) and the true moments are re-integrated at the
    /// coarse step, driven by the coarsened records. Step-halving
    /// comparisons built on this are strong-convergence tests.
    pub fn coarsen(&self, model: &DerivedModel) -> Result<TrueStateRun> {
        let record_observed = self.record_observed.coarsen()?;
        let record_unobserved = self.record_unobserved.coarsen()?;
        let grid = record_observed.grid;
        let dt = grid.dt;
        let mut means = Vec::with_capacity(grid.points());
        let mut covs = Vec::with_capacity(grid.points());
        means.push(self.trajectory.means[0].clone());
        covs.push(self.trajectory.covs[0].clone());
        for k in 0..grid.steps {
            let x = &means[k];
            let v = &covs[k];
            let gain_o = model.gain_plus(Observer::Observed, v);
            let gain_u = model.gain_plus(Observer::Unobserved, v);
            let dw_o = &record_observed.increments[k] - &model.measurement_observed * x * dt;
            let dw_u = &record_unobserved.increments[k] - &model.measurement_unobserved * x * dt;
            means.push(x + &model.drift * x * dt + &gain_o * dw_o + &gain_u * dw_u);
            let mut v_next = v
                + (&model.drift * v + v * model.drift.transpose() + &model.diffusion
                    - &gain_o * gain_o.transpose()
                    - &gain_u * gain_u.transpose())
                    * dt;
            symmetrize(&mut v_next);
            covs.push(v_next);
        }
        Ok(TrueStateRun {
            trajectory: StateTrajectory { grid, means, covs },
            record_observed,
            record_unobserved,
            rng_seed: self.rng_seed,
        })
    }
}

/// Time-indexed matrices of the halo system.
#[derive(Debug, Clone)]
pub struct HaloModel {
    /// `Abar(t) = A - K_o+[V_T] C_o`.
    pub drift_bar: Vec<DMatrix<f64>>,
    /// `Dbar(t) = EbarEbar^T - K_o+[V_T] K_o+[V_T]^T` (equals `K_u+ K_u+^T`).
    pub diffusion_bar: Vec<DMatrix<f64>>,
    /// `EbarEbar^T(t)`, the halo process-noise loading.
    pub noise_load: Vec<DMatrix<f64>>,
    /// `Gbar^T(t) = K_o+[V_T(t)]`, state-dim x channel-count.
    pub cross_bar: Vec<DMatrix<f64>>,
}

impl HaloModel {
    /// The halo system as a grid-indexed classical model
    /// `(A, EbarEbar^T, C_o, Gbar)` for the shared estimation engines.
    pub fn observed_grid_model(&self, model: &DerivedModel) -> GridModel {
        GridModel {
            drift: model.drift.clone(),
            diffusion: self.noise_load.clone(),
            measurement: model.measurement_observed.clone(),
            cross_correlation: self.cross_bar.iter().map(|g| g.transpose()).collect(),
        }
    }
}

/// Alice's estimate of the true mean: `halo x_F = <x>_F` with classical
/// covariance `halo V_F = V_F - V_T` (zero at `t0` under shared initial
/// conditions, and not bound by the uncertainty relation).
#[derive(Debug, Clone)]
pub struct HaloFilter {
    pub grid: TimeGrid,
    pub means: Vec<DVector<f64>>,
    pub covs: Vec<DMatrix<f64>>,
}

/// Smoothed quantum state with per-step diagnostics.
#[derive(Debug, Clone)]
pub struct SmoothedQuantumState {
    pub trajectory: StateTrajectory,
    /// `Q` evaluated at each grid point (RTS route only; empty for MFP).
    pub q_matrices: Vec<DMatrix<f64>>,
    /// Pseudo-inverse rank of `halo V_F` used at each grid point.
    pub ranks: Vec<usize>,
    /// Raw backward-integration defect `|x_S(t0) - <x>_T(t0)|_inf` measured
    /// before the degenerate projection pins the initial point.
    pub initial_mean_defect: f64,
    /// Same for the covariance, in the max norm.
    pub initial_cov_defect: f64,
}

/// Euler-Maruyama simulation of the true state:
///
/// ```text
/// d<x>_T  = A <x>_T dt + sum_r K_r+[V_T] dw_r
/// dV_T/dt = A V_T + V_T A^T + D - sum_r K_r+[V_T] K_r+[V_T]^T
/// y_r dt  = C_r <x>_T dt + dw_r
/// ```
///
/// with the two records driven by independent unit Wiener increments (the
/// observed one is drawn first at each step).
pub fn simulate_true_state(
    model: &DerivedModel,
    x0: &DVector<f64>,
    v0: &DMatrix<f64>,
    dt: f64,
    duration: f64,
    rng_seed: u64,
) -> Result<TrueStateRun> {
    let n = model.state_dim();
    let k_ch = model.channels();
    if x0.len() != n || v0.nrows() != n || v0.ncols() != n {
        return Err(Error::InvalidDimension(
            "initial state does not match the model dimension".into(),
        ));
    }
    let min_eig = min_uncertainty_eigenvalue(v0, model.hbar)?;
    if min_eig < PSD_MIN_EIG_TOL {
        return Err(Error::UncertaintyViolation { step: 0, min_eig });
    }
    let grid = TimeGrid::from_duration(0.0, dt, duration)?;

    let mut rng = ChaCha12Rng::seed_from_u64(rng_seed);
    let sqrt_dt = dt.sqrt();
    let draw = |rng: &mut ChaCha12Rng| {
        DVector::from_fn(k_ch, |_, _| rng.sample::<f64, _>(StandardNormal) * sqrt_dt)
    };

    let mut means = Vec::with_capacity(grid.points());
    let mut covs = Vec::with_capacity(grid.points());
    let mut inc_o = Vec::with_capacity(grid.steps);
    let mut inc_u = Vec::with_capacity(grid.steps);
    means.push(x0.clone());
    covs.push(v0.clone());

    for k in 0..grid.steps {
        let x = &means[k];
        let v = &covs[k];
        let gain_o = model.gain_plus(Observer::Observed, v);
        let gain_u = model.gain_plus(Observer::Unobserved, v);
        let dw_o = draw(&mut rng);
        let dw_u = draw(&mut rng);
        inc_o.push(&model.measurement_observed * x * dt + &dw_o);
        inc_u.push(&model.measurement_unobserved * x * dt + &dw_u);
        means.push(x + &model.drift * x * dt + &gain_o * dw_o + &gain_u * dw_u);
        let mut v_next = v
            + (&model.drift * v + v * model.drift.transpose() + &model.diffusion
                - &gain_o * gain_o.transpose()
                - &gain_u * gain_u.transpose())
                * dt;
        symmetrize(&mut v_next);
        covs.push(v_next);
    }

    Ok(TrueStateRun {
        trajectory: StateTrajectory { grid, means, covs },
        record_observed: MeasurementRecord { grid, increments: inc_o },
        record_unobserved: MeasurementRecord { grid, increments: inc_u },
        rng_seed,
    })
}

/// Quantum filter on the observed record: the Kalman-Bucy engine run on
/// `(A, D, C_o, Gamma_o)`, with the uncertainty relation asserted at every
/// grid point.
pub fn quantum_filter(
    model: &DerivedModel,
    record_observed: &MeasurementRecord,
    x0: &DVector<f64>,
    v0: &DMatrix<f64>,
) -> Result<StateTrajectory> {
    let classical = model.single_record_model(Observer::Observed);
    let filtered = kalman_filter(&classical, record_observed, x0, v0)?;
    for (step, v) in filtered.covs.iter().enumerate() {
        let min_eig = min_uncertainty_eigenvalue(v, model.hbar)?;
        if min_eig < PSD_MIN_EIG_TOL {
            return Err(Error::UncertaintyViolation { step, min_eig });
        }
    }
    Ok(filtered)
}

/// Assemble the halo system and halo filter from the stored forward passes.
pub fn build_halo(
    model: &DerivedModel,
    filtered: &StateTrajectory,
    true_run: &TrueStateRun,
) -> Result<(HaloModel, HaloFilter)> {
    let truth = &true_run.trajectory;
    if !filtered.grid.matches(&truth.grid) {
        return Err(Error::GridMismatch(
            "filtered trajectory and true-state run use different grids".into(),
        ));
    }
    let points = truth.len();
    let c_o = &model.measurement_observed;

    let mut drift_bar = Vec::with_capacity(points);
    let mut diffusion_bar = Vec::with_capacity(points);
    let mut noise_load = Vec::with_capacity(points);
    let mut cross_bar = Vec::with_capacity(points);
    let mut halo_covs = Vec::with_capacity(points);

    for k in 0..points {
        let v_t = &truth.covs[k];
        let gain_o = model.gain_plus(Observer::Observed, v_t);
        let gain_u = model.gain_plus(Observer::Unobserved, v_t);
        let load = &gain_o * gain_o.transpose() + &gain_u * gain_u.transpose();
        let mut d_bar = &load - &gain_o * gain_o.transpose();
        symmetrize(&mut d_bar);
        drift_bar.push(&model.drift - &gain_o * c_o);
        diffusion_bar.push(d_bar);
        noise_load.push(load);
        cross_bar.push(gain_o);
        let mut hv = &filtered.covs[k] - v_t;
        symmetrize(&mut hv);
        halo_covs.push(hv);
    }

    Ok((
        HaloModel { drift_bar, diffusion_bar, noise_load, cross_bar },
        HaloFilter { grid: filtered.grid, means: filtered.means.clone(), covs: halo_covs },
    ))
}

/// Backward sweep of rank decisions for the halo covariances.
///
/// Each eigendirection gets its own zero threshold: the scale-relative floor
/// of the pseudo-inverse, raised to the explicit-step stability floor
/// `RANK_DT_SAFETY * dt * |Dbar p|`. Hysteresis (factor ten between rank-up
/// and rank-down) keeps the decision from chattering while an eigenvalue
/// crosses its threshold.
fn rank_sweep(halo_covs: &[DMatrix<f64>], diffusion_bar: &[DMatrix<f64>], dt: f64) -> Vec<EigenRank> {
    let mut out: Vec<EigenRank> = Vec::with_capacity(halo_covs.len());
    let mut prev_rank: Option<usize> = None;
    for (cov, d_bar) in halo_covs.iter().zip(diffusion_bar.iter()).rev() {
        let (basis, eigenvalues) = symmetric_eigen_sorted(cov);
        let base_tol = default_eig_tol(&eigenvalues);
        let dim = eigenvalues.len();
        let count_above = |factor: f64| {
            let mut rank = 0;
            for j in 0..dim {
                let load = (d_bar * basis.row(j).transpose()).norm();
                let tol = base_tol.max(RANK_DT_SAFETY * dt * load);
                if eigenvalues[j].abs() > factor * tol {
                    rank += 1;
                } else {
                    break;
                }
            }
            rank
        };
        let liberal = count_above(1.0);
        let conservative = count_above(RANK_HYSTERESIS);
        let rank = match prev_rank {
            None => liberal,
            Some(r) => r.clamp(conservative, liberal),
        };
        prev_rank = Some(rank);
        out.push(EigenRank { basis, eigenvalues, rank });
    }
    out.reverse();
    out
}

/// Pin the null-direction components of a smoothed state to the true state,
/// in the eigenbasis of the halo covariance: the mean components take the
/// transformed true-mean values and the matching rows and columns of
/// `V_S - V_T` are zeroed.
fn project_null_to_true(
    x: &mut DVector<f64>,
    v: &mut DMatrix<f64>,
    structure: &EigenRank,
    x_true: &DVector<f64>,
    v_true: &DMatrix<f64>,
) {
    let n = x.len();
    if structure.rank >= n {
        return;
    }
    let p = &structure.basis;
    let mut z = p * &*x;
    let z_true = p * x_true;
    for j in structure.rank..n {
        z[j] = z_true[j];
    }
    *x = p.transpose() * z;

    let mut w = p * (&*v - v_true) * p.transpose();
    for j in structure.rank..n {
        for i in 0..n {
            w[(i, j)] = 0.0;
            w[(j, i)] = 0.0;
        }
    }
    *v = p.transpose() * w * p + v_true;
    symmetrize(v);
}

fn check_smoother_inputs(
    halo_model: &HaloModel,
    halo_filter: &HaloFilter,
    filtered: &StateTrajectory,
    true_run: &TrueStateRun,
) -> Result<()> {
    let points = filtered.len();
    if !filtered.grid.matches(&true_run.trajectory.grid)
        || !filtered.grid.matches(&halo_filter.grid)
        || !filtered.grid.matches(&true_run.record_observed.grid)
    {
        return Err(Error::GridMismatch(
            "smoother inputs do not share one grid".into(),
        ));
    }
    if halo_model.drift_bar.len() != points
        || halo_model.diffusion_bar.len() != points
        || halo_model.cross_bar.len() != points
    {
        return Err(Error::GridMismatch(
            "halo model is not aligned with the trajectory grid".into(),
        ));
    }
    Ok(())
}

/// `Q` at one grid point, from the current `V_T` and pseudo-inverted halo
/// covariance.
fn q_matrix(
    model: &DerivedModel,
    d_bar: &DMatrix<f64>,
    v_true: &DMatrix<f64>,
    halo_inv: &DMatrix<f64>,
) -> DMatrix<f64> {
    let c_o = &model.measurement_observed;
    let gamma_o = &model.cross_correlation_observed;
    let pull_true = d_bar * halo_inv * v_true;
    let mut q = &model.diffusion - gamma_o.transpose() * gamma_o
        + v_true * c_o.transpose() * c_o * v_true
        - &pull_true
        - pull_true.transpose()
        - 2.0 * d_bar;
    symmetrize(&mut q);
    q
}

/// Quantum RTS smoother: backward Euler integration of the smoothed-moment
/// equations, consuming the stored forward passes. Terminal conditions are
/// copied verbatim from the filter (`V_S(T) = V_F(T)`, `<x>_S(T) = <x>_F(T)`);
/// rank-deficient halo covariances are handled by pseudo-inversion plus the
/// null-direction projection onto the true state.
pub fn quantum_rts_smooth(
    model: &DerivedModel,
    halo_model: &HaloModel,
    halo_filter: &HaloFilter,
    filtered: &StateTrajectory,
    true_run: &TrueStateRun,
) -> Result<SmoothedQuantumState> {
    check_smoother_inputs(halo_model, halo_filter, filtered, true_run)?;
    let truth = &true_run.trajectory;
    let record = &true_run.record_observed;
    let grid = filtered.grid;
    let dt = grid.dt;
    let points = grid.points();

    let structures = rank_sweep(&halo_filter.covs, &halo_model.diffusion_bar, dt);
    let ranks: Vec<usize> = structures.iter().map(|s| s.rank).collect();

    // Per-point pulled drift and Q through the rank-decided pseudo-inverse,
    // plus the coefficients of the smoothing-correction flow below.
    let c_o = &model.measurement_observed;
    let mut closed = Vec::with_capacity(points);
    let mut pulls = Vec::with_capacity(points);
    let mut q_matrices = Vec::with_capacity(points);
    let mut leaks = Vec::with_capacity(points);
    let mut drives = Vec::with_capacity(points);
    for k in 0..points {
        let s = &structures[k];
        let halo_inv = pseudo_inverse_given_rank(&s.basis, &s.eigenvalues, s.rank);
        let d_bar = &halo_model.diffusion_bar[k];
        let pull = d_bar * &halo_inv;
        closed.push(&halo_model.drift_bar[k] + &pull);
        pulls.push(pull);
        q_matrices.push(q_matrix(model, d_bar, &truth.covs[k], &halo_inv));
        // Range projector of halo V_F and the part of Dbar outside it.
        let mut projector = DMatrix::zeros(d_bar.nrows(), d_bar.ncols());
        for j in 0..s.rank {
            let row = s.basis.row(j);
            projector += row.transpose() * row;
        }
        let d_out = d_bar - d_bar * &projector;
        leaks.push(&d_out + d_out.transpose());
        let hv = &halo_filter.covs[k];
        drives.push(hv * c_o.transpose() * c_o * hv);
    }

    let mut means = filtered.means.clone();
    let mut covs = filtered.covs.clone();
    let mut initial_mean_defect = 0.0;
    let mut initial_cov_defect = 0.0;

    // Both passes integrate deviations from the stored forward data, the
    // exact rearrangement of the smoothed-moment equations in which the
    // large shared terms cancel analytically. With m = <x>_S - <x>_F and
    // W = halo V_F - halo V_S (the smoothing correction),
    //
    //   dm/dt  = (Abar + pull) m - hVF C_o^T dw_F/dt
    //   dW/dt  = (Abar + pull) W + W (Abar + pull)^T
    //            + Dbar(I-P) + (I-P)Dbar - hVF C_o^T C_o hVF
    //
    // where pull = Dbar hVF^{-1}, P is the range projector of halo V_F and
    // dw_F = y_o dt - C_o <x>_F dt is the stored filter innovation; the
    // noise loadings recombine to K_o+[V_T] dw_S on x_S = x_F + m. The
    // outputs are recovered against the stored paths, V_S = V_T + hVF - W,
    // anchoring both smoother routes to the same forward quantities.
    let dim = model.state_dim();
    let mut w = DMatrix::zeros(dim, dim);
    let mut mdev = DVector::zeros(dim);
    for k in (0..grid.steps).rev() {
        let later = k + 1;
        let dw_f = &record.increments[k] - c_o * &filtered.means[k] * dt;
        mdev -= &closed[later] * &mdev * dt;
        mdev += &halo_filter.covs[k] * c_o.transpose() * dw_f;
        let mut x_new = &filtered.means[k] + &mdev;

        let closed_mid = 0.5 * (&closed[k] + &closed[later]);
        let leak_mid = 0.5 * (&leaks[k] + &leaks[later]);
        let drive_mid = 0.5 * (&drives[k] + &drives[later]);
        w -= (&closed_mid * &w + &w * closed_mid.transpose() + leak_mid - drive_mid) * dt;
        symmetrize(&mut w);
        let mut v_new = &truth.covs[k] + &halo_filter.covs[k] - &w;

        if k == 0 {
            initial_mean_defect = (&x_new - &truth.means[0]).amax();
            initial_cov_defect = (&v_new - &truth.covs[0]).amax();
        }
        project_null_to_true(&mut x_new, &mut v_new, &structures[k], &truth.means[k], &truth.covs[k]);
        // Keep the deviation state consistent with the projected output so
        // pinned directions track the true state across steps.
        mdev = &x_new - &filtered.means[k];
        w = &truth.covs[k] + &halo_filter.covs[k] - &v_new;
        means[k] = x_new;
        covs[k] = v_new;
    }

    Ok(SmoothedQuantumState {
        trajectory: StateTrajectory { grid, means, covs },
        q_matrices,
        ranks,
        initial_mean_defect,
        initial_cov_defect,
    })
}

/// Quantum smoother through the two-filter route: retrofilter the halo
/// system, fuse with the halo filter in information form, then add back the
/// true covariance (`V_S = halo V_S + V_T`, `<x>_S = halo x_S`). Rank
/// decisions are shared with the RTS route.
pub fn quantum_mfp_smooth(
    model: &DerivedModel,
    halo_model: &HaloModel,
    halo_filter: &HaloFilter,
    filtered: &StateTrajectory,
    true_run: &TrueStateRun,
) -> Result<SmoothedQuantumState> {
    check_smoother_inputs(halo_model, halo_filter, filtered, true_run)?;
    let truth = &true_run.trajectory;
    let grid = filtered.grid;

    let halo_grid_model = halo_model.observed_grid_model(model);
    let retro = retrofilter(&halo_grid_model, &true_run.record_observed)?;
    let halo_trajectory = StateTrajectory {
        grid,
        means: halo_filter.means.clone(),
        covs: halo_filter.covs.clone(),
    };
    let structures = rank_sweep(&halo_filter.covs, &halo_model.diffusion_bar, grid.dt);
    let ranks: Vec<usize> = structures.iter().map(|s| s.rank).collect();
    let halo_smoothed = mfp_combine_structured(&halo_trajectory, &retro, &structures)?;

    let mut means = Vec::with_capacity(grid.points());
    let mut covs = Vec::with_capacity(grid.points());
    let mut initial_mean_defect = 0.0;
    let mut initial_cov_defect = 0.0;
    for k in 0..grid.points() {
        let mut x = halo_smoothed.means[k].clone();
        let mut v = &halo_smoothed.covs[k] + &truth.covs[k];
        if k == 0 {
            initial_mean_defect = (&x - &truth.means[0]).amax();
            initial_cov_defect = (&v - &truth.covs[0]).amax();
        }
        project_null_to_true(&mut x, &mut v, &structures[k], &truth.means[k], &truth.covs[k]);
        means.push(x);
        covs.push(v);
    }

    Ok(SmoothedQuantumState {
        trajectory: StateTrajectory { grid, means, covs },
        q_matrices: Vec::new(),
        ranks,
        initial_mean_defect,
        initial_cov_defect,
    })
}

/// Audit helper: minimum uncertainty-relation eigenvalue over a whole
/// trajectory (negative values beyond `PSD_MIN_EIG_TOL` are violations).
pub fn uncertainty_margin(trajectory: &StateTrajectory, hbar: f64) -> Result<f64> {
    let mut worst = f64::INFINITY;
    for v in &trajectory.covs {
        worst = worst.min(min_uncertainty_eigenvalue(v, hbar)?);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::min_symmetric_eigenvalue;
    use crate::model::{
        build_derived_model, build_derived_model_unchecked, two_channel_oscillator,
        OscillatorPreset, UnravellingSpec,
    };
    use approx::assert_relative_eq;

    fn fig_top_model(g: f64) -> DerivedModel {
        let preset = OscillatorPreset::observe_gamma(g);
        let (sys, unr) = two_channel_oscillator(&preset).unwrap();
        build_derived_model(&sys, &unr).unwrap()
    }

    fn preset_run(g: f64, dt: f64, duration: f64, seed: u64) -> (DerivedModel, TrueStateRun) {
        let model = fig_top_model(g);
        let init = OscillatorPreset::observe_gamma(g).initial_state();
        let run = simulate_true_state(&model, &init.mean, &init.cov, dt, duration, seed).unwrap();
        (model, run)
    }

    #[test]
    fn true_covariance_is_record_independent() {
        let (_, run_a) = preset_run(1.0, 1e-3, 0.3, 1);
        let (_, run_b) = preset_run(1.0, 1e-3, 0.3, 2);
        for (va, vb) in run_a.trajectory.covs.iter().zip(run_b.trajectory.covs.iter()) {
            assert_eq!(va, vb);
        }
    }

    #[test]
    fn true_state_satisfies_uncertainty_throughout() {
        let (model, run) = preset_run(1.0, 1e-3, 1.0, 3);
        assert!(uncertainty_margin(&run.trajectory, model.hbar).unwrap() >= PSD_MIN_EIG_TOL);
    }

    #[test]
    fn perfect_joint_monitoring_purifies_the_true_state() {
        // eta sums are 1 per channel and g = 1: the steady true state is
        // pure, so its symplectic eigenvalue sqrt(det V) approaches hbar/2.
        let (_, run) = preset_run(1.0, 1e-4, 2.0, 5);
        let v = run.trajectory.covs.last().unwrap();
        let det = v[(0, 0)] * v[(1, 1)] - v[(0, 1)] * v[(1, 0)];
        assert_relative_eq!(det.sqrt(), 1.0, epsilon = 1e-3);
    }

    #[test]
    fn ensemble_mean_follows_the_unconditioned_flow() {
        // E[<x>_T(t)] = exp(At) x0 with A = diag(0, -2).
        let model = fig_top_model(1.0);
        let x0 = DVector::from_row_slice(&[1.0, 0.5]);
        let v0 = DMatrix::from_row_slice(2, 2, &[10.0, 0.0, 0.0, 1.0]);
        let n_seeds = 300;
        let dt = 1e-3_f64;
        let duration = 1.0_f64;
        let steps = (duration / dt).round() as usize;
        let mut sums = vec![DVector::<f64>::zeros(2); 3];
        let mut sq_sums = vec![DVector::<f64>::zeros(2); 3];
        let checkpoints = [steps / 4, steps / 2, steps];
        for seed in 0..n_seeds {
            let run = simulate_true_state(&model, &x0, &v0, dt, duration, seed).unwrap();
            for (slot, &cp) in checkpoints.iter().enumerate() {
                let x = &run.trajectory.means[cp];
                sums[slot] += x;
                sq_sums[slot] += x.component_mul(x);
            }
        }
        for (slot, &cp) in checkpoints.iter().enumerate() {
            let t = cp as f64 * dt;
            let expected = DVector::from_row_slice(&[x0[0], x0[1] * (-2.0 * t).exp()]);
            for i in 0..2 {
                let mean = sums[slot][i] / n_seeds as f64;
                let var = (sq_sums[slot][i] / n_seeds as f64 - mean * mean).max(0.0);
                let se = (var / n_seeds as f64).sqrt();
                assert!(
                    (mean - expected[i]).abs() <= 3.0 * se + 1e-3,
                    "component {i} at t={t}: mean {mean} vs {} (se {se})",
                    expected[i]
                );
            }
        }
    }

    #[test]
    fn single_record_filter_recovers_the_true_state() {
        // With Bob switched off entirely (validation relaxed), filtering on
        // the only record is the state of maximal knowledge.
        let preset = OscillatorPreset::observe_gamma(1.0);
        let (sys, mut unr) = two_channel_oscillator(&preset).unwrap();
        unr.unobserved = UnravellingSpec {
            observed: unr.observed.clone(),
            unobserved: unr.unobserved.clone(),
        }
        .unobserved
        .map(|_| nalgebra::Complex::new(0.0, 0.0));
        let model = build_derived_model_unchecked(&sys, &unr).unwrap();
        let init = preset.initial_state();
        let run = simulate_true_state(&model, &init.mean, &init.cov, 1e-3, 0.5, 11).unwrap();
        let filtered = quantum_filter(&model, &run.record_observed, &init.mean, &init.cov).unwrap();
        for k in 0..filtered.len() {
            assert_relative_eq!(filtered.means[k], run.trajectory.means[k], epsilon = 1e-10);
            assert_relative_eq!(filtered.covs[k], run.trajectory.covs[k], epsilon = 1e-10);
        }
    }

    #[test]
    fn momentum_means_stay_zero_in_the_pinned_scenario() {
        // For the gamma-observer preset at g = 1 the p-rows of every gain
        // vanish along the flow, so <p>_T = <p>_F = 0 exactly.
        let (model, run) = preset_run(1.0, 1e-3, 1.0, 13);
        let init = OscillatorPreset::observe_gamma(1.0).initial_state();
        let filtered =
            quantum_filter(&model, &run.record_observed, &init.mean, &init.cov).unwrap();
        for k in 0..filtered.len() {
            assert!(run.trajectory.means[k][1].abs() <= 1e-12);
            assert!(filtered.means[k][1].abs() <= 1e-12);
        }
    }

    #[test]
    fn halo_filter_starts_at_zero_with_shared_conditions() {
        let (model, run) = preset_run(1.0, 1e-3, 0.2, 17);
        let init = OscillatorPreset::observe_gamma(1.0).initial_state();
        let filtered =
            quantum_filter(&model, &run.record_observed, &init.mean, &init.cov).unwrap();
        let (_, halo_filter) = build_halo(&model, &filtered, &run).unwrap();
        assert_eq!(halo_filter.covs[0].amax(), 0.0);
    }

    #[test]
    fn halo_diffusion_equals_the_unobserved_gain_load() {
        // Dbar = EbarEbar^T - Gbar^T Gbar expands to K_u+[V_T] K_u+[V_T]^T.
        let (model, run) = preset_run(0.7, 1e-3, 0.2, 19);
        let init = OscillatorPreset::observe_gamma(0.7).initial_state();
        let filtered =
            quantum_filter(&model, &run.record_observed, &init.mean, &init.cov).unwrap();
        let (halo_model, _) = build_halo(&model, &filtered, &run).unwrap();
        for (k, d_bar) in halo_model.diffusion_bar.iter().enumerate() {
            let gain_u = model.gain_plus(Observer::Unobserved, &run.trajectory.covs[k]);
            assert_relative_eq!(*d_bar, &gain_u * gain_u.transpose(), epsilon = 1e-12);
        }
    }

    #[test]
    fn classical_filter_on_the_halo_system_reproduces_the_quantum_filter() {
        // The halo identity: Kalman-Bucy on (A, EbarEbar^T, C_o, Gbar) driven
        // by the same y_o, started from (x0, 0), returns <x>_F and V_F - V_T.
        let (model, run) = preset_run(1.0, 1e-4, 0.3, 23);
        let init = OscillatorPreset::observe_gamma(1.0).initial_state();
        let filtered =
            quantum_filter(&model, &run.record_observed, &init.mean, &init.cov).unwrap();
        let (halo_model, halo_filter) = build_halo(&model, &filtered, &run).unwrap();
        let grid_model = halo_model.observed_grid_model(&model);
        let replay = kalman_filter(
            &grid_model,
            &run.record_observed,
            &init.mean,
            &DMatrix::zeros(2, 2),
        )
        .unwrap();
        let mut worst_mean = 0.0_f64;
        let mut worst_cov = 0.0_f64;
        for k in 0..replay.len() {
            worst_mean = worst_mean.max((&replay.means[k] - &halo_filter.means[k]).amax());
            worst_cov = worst_cov.max((&replay.covs[k] - &halo_filter.covs[k]).amax());
        }
        assert!(worst_mean <= 1e-6, "halo mean identity defect {worst_mean}");
        assert!(worst_cov <= 1e-6, "halo covariance identity defect {worst_cov}");
    }

    fn smooth_both(
        model: &DerivedModel,
        run: &TrueStateRun,
        init: &crate::gaussian::GaussianState,
    ) -> (SmoothedQuantumState, SmoothedQuantumState, StateTrajectory) {
        let filtered = quantum_filter(model, &run.record_observed, &init.mean, &init.cov).unwrap();
        let (halo_model, halo_filter) = build_halo(model, &filtered, run).unwrap();
        let rts = quantum_rts_smooth(model, &halo_model, &halo_filter, &filtered, run).unwrap();
        let mfp = quantum_mfp_smooth(model, &halo_model, &halo_filter, &filtered, run).unwrap();
        (rts, mfp, filtered)
    }

    #[test]
    fn smoother_terminal_state_is_the_filter_state() {
        let (model, run) = preset_run(1.0, 1e-3, 0.4, 29);
        let init = OscillatorPreset::observe_gamma(1.0).initial_state();
        let (rts, mfp, filtered) = smooth_both(&model, &run, &init);
        assert_eq!(rts.trajectory.means.last(), filtered.means.last());
        assert_eq!(rts.trajectory.covs.last(), filtered.covs.last());
        // The MFP route reaches the same endpoint through the fusion formula.
        assert_relative_eq!(
            mfp.trajectory.covs.last().unwrap(),
            filtered.covs.last().unwrap(),
            epsilon = 1e-9
        );
    }

    #[test]
    fn smoother_coincides_with_the_true_state_at_t0() {
        let (model, run) = preset_run(1.0, 1e-3, 0.4, 31);
        let init = OscillatorPreset::observe_gamma(1.0).initial_state();
        let (rts, mfp, _) = smooth_both(&model, &run, &init);
        assert_relative_eq!(rts.trajectory.means[0], init.mean, epsilon = 1e-12);
        assert_relative_eq!(rts.trajectory.covs[0], init.cov, epsilon = 1e-12);
        assert_relative_eq!(mfp.trajectory.means[0], init.mean, epsilon = 1e-12);
        assert_relative_eq!(mfp.trajectory.covs[0], init.cov, epsilon = 1e-12);
        assert_eq!(rts.ranks[0], 0);
    }

    #[test]
    fn rts_and_mfp_quantum_smoothers_agree() {
        let (model, run) = preset_run(1.0, 1e-4, 0.5, 37);
        let init = OscillatorPreset::observe_gamma(1.0).initial_state();
        let (rts, mfp, _) = smooth_both(&model, &run, &init);
        let scale = rts
            .trajectory
            .means
            .iter()
            .map(|m| m.amax())
            .fold(1.0_f64, f64::max);
        let mut mean_gap = 0.0_f64;
        let mut cov_gap = 0.0_f64;
        for k in 0..rts.trajectory.len() {
            mean_gap = mean_gap.max((&rts.trajectory.means[k] - &mfp.trajectory.means[k]).amax());
            cov_gap = cov_gap.max((&rts.trajectory.covs[k] - &mfp.trajectory.covs[k]).amax());
        }
        assert!(mean_gap <= 1e-3 * scale, "mean gap {mean_gap}");
        assert!(cov_gap <= 1e-3, "covariance gap {cov_gap}");
    }

    #[test]
    fn smoothed_state_dominates_the_true_state() {
        // V_S - V_T and V_F - V_T stay PSD; V_S passes the uncertainty check.
        let (model, run) = preset_run(1.0, 1e-3, 0.6, 41);
        let init = OscillatorPreset::observe_gamma(1.0).initial_state();
        let (rts, _, filtered) = smooth_both(&model, &run, &init);
        for k in 0..filtered.len() {
            let fil = &filtered.covs[k] - &run.trajectory.covs[k];
            let smo = &rts.trajectory.covs[k] - &run.trajectory.covs[k];
            assert!(min_symmetric_eigenvalue(&fil) >= PSD_MIN_EIG_TOL, "V_F - V_T at {k}");
            assert!(min_symmetric_eigenvalue(&smo) >= PSD_MIN_EIG_TOL, "V_S - V_T at {k}");
        }
        assert!(uncertainty_margin(&rts.trajectory, model.hbar).unwrap() >= PSD_MIN_EIG_TOL);
    }

    #[test]
    fn rank_deficiency_is_tracked() {
        // For the gamma-observer preset at g = 1 the p-direction of the halo
        // covariance is exactly zero along the whole run, so the smoother
        // works at rank one after t0 and rank zero at t0 itself.
        let (model, run) = preset_run(1.0, 1e-4, 0.2, 43);
        let init = OscillatorPreset::observe_gamma(1.0).initial_state();
        let filtered =
            quantum_filter(&model, &run.record_observed, &init.mean, &init.cov).unwrap();
        let (halo_model, halo_filter) = build_halo(&model, &filtered, &run).unwrap();
        let rts = quantum_rts_smooth(&model, &halo_model, &halo_filter, &filtered, &run).unwrap();
        assert_eq!(rts.ranks[0], 0);
        assert!(rts.ranks[1] < 2, "rank at the first step: {}", rts.ranks[1]);
        assert_eq!(*rts.ranks.last().unwrap(), 1);

        // The reversed scenario has no such invariant: its second direction
        // unlocks once it clears the stability floor.
        let preset = OscillatorPreset::observe_kappa(0.1);
        let (sys, unr) = two_channel_oscillator(&preset).unwrap();
        let model = build_derived_model(&sys, &unr).unwrap();
        let init = preset.initial_state();
        let run = simulate_true_state(&model, &init.mean, &init.cov, 1e-4, 1.0, 43).unwrap();
        let filtered =
            quantum_filter(&model, &run.record_observed, &init.mean, &init.cov).unwrap();
        let (halo_model, halo_filter) = build_halo(&model, &filtered, &run).unwrap();
        let rts = quantum_rts_smooth(&model, &halo_model, &halo_filter, &filtered, &run).unwrap();
        assert_eq!(rts.ranks[0], 0);
        assert_eq!(*rts.ranks.last().unwrap(), 2);
        assert!(rts.ranks.iter().any(|&r| r == 1), "expected a rank-one stretch");
    }
}
