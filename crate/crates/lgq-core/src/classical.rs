//! Classical linear-Gaussian estimation engines.
//!
//! The system is the Langevin pair
//!
//! ```text
//! dx   = A x dt + E dv_p                 E E^T = D
//! y dt = C x dt + dv_m                   E dv_p dv_m^T = Gamma^T dt
//! ```
//!
//! with unit-variance white measurement noise. All integrators share a
//! uniform grid and use fixed-step explicit Euler: forward passes evaluate
//! right-hand sides at the earlier grid point (the Ito convention), backward
//! passes at the later one, so the RTS and two-filter smoothers agree to
//! first order in `dt` without interpolation.
//!
//! Models may be time-varying on the grid ([`GridModel`]); the quantum halo
//! system uses this to drive the same engines with per-step diffusion and
//! cross-correlation matrices.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::gaussian::{
    default_eig_tol, is_symmetric, min_symmetric_eigenvalue, pseudo_inverse_from_eigen, psd_sqrt,
    symmetric_eigen_sorted, symmetrize, GaussianState, PSD_MIN_EIG_TOL,
};

/// Uniform time grid: `steps` intervals of width `dt` starting at `t0`.
/// Records hold one increment per interval; trajectories hold `steps + 1`
/// grid-point states.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub t0: f64,
    pub dt: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn from_duration(t0: f64, dt: f64, duration: f64) -> Result<Self> {
        if !(dt > 0.0) || !(duration > 0.0) {
            return Err(Error::InvalidInput(format!(
                "grid requires dt > 0 and duration > 0, got dt={dt}, duration={duration}"
            )));
        }
        let steps = (duration / dt).round() as usize;
        if steps == 0 {
            return Err(Error::InvalidInput("grid has zero steps".into()));
        }
        Ok(Self { t0, dt, steps })
    }

    pub fn time(&self, index: usize) -> f64 {
        self.t0 + index as f64 * self.dt
    }

    pub fn t_final(&self) -> f64 {
        self.time(self.steps)
    }

    /// Number of grid points (`steps + 1`).
    pub fn points(&self) -> usize {
        self.steps + 1
    }

    pub fn matches(&self, other: &TimeGrid) -> bool {
        self.steps == other.steps
            && (self.t0 - other.t0).abs() <= 1e-12
            && (self.dt - other.dt).abs() <= 1e-15 * self.dt.max(other.dt)
    }
}

fn require_same_grid(a: &TimeGrid, b: &TimeGrid, what: &str) -> Result<()> {
    if a.matches(b) {
        Ok(())
    } else {
        Err(Error::GridMismatch(format!("{what}: {a:?} vs {b:?}")))
    }
}

/// Measurement record: per-interval increments `y dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementRecord {
    pub grid: TimeGrid,
    pub increments: Vec<DVector<f64>>,
}

impl MeasurementRecord {
    pub fn record_dim(&self) -> usize {
        self.increments.first().map_or(0, |v| v.len())
    }

    /// Merge adjacent increment pairs into a grid with `dt` doubled. The
    /// coarse record sees the same underlying noise realisation, which makes
    /// step-halving comparisons strong-convergence tests.
    pub fn coarsen(&self) -> Result<MeasurementRecord> {
        if self.grid.steps % 2 != 0 {
            return Err(Error::InvalidInput(
                "coarsening requires an even number of steps".into(),
            ));
        }
        let grid = TimeGrid {
            t0: self.grid.t0,
            dt: 2.0 * self.grid.dt,
            steps: self.grid.steps / 2,
        };
        let increments = self
            .increments
            .chunks_exact(2)
            .map(|pair| &pair[0] + &pair[1])
            .collect();
        Ok(MeasurementRecord { grid, increments })
    }
}

/// Grid-aligned sequence of Gaussian states.
#[derive(Debug, Clone, PartialEq)]
pub struct StateTrajectory {
    pub grid: TimeGrid,
    pub means: Vec<DVector<f64>>,
    pub covs: Vec<DMatrix<f64>>,
}

impl StateTrajectory {
    pub fn state(&self, index: usize) -> GaussianState {
        GaussianState::new_unchecked(self.means[index].clone(), self.covs[index].clone())
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }
}

/// Backward-filter state in information form: `Y = V^{-1}`, `z = Y x`.
///
/// The uninformative terminal condition `V^{-1}(T) = 0` is exactly
/// representable here, unlike in covariance form.
#[derive(Debug, Clone, PartialEq)]
pub struct InformationState {
    pub info_matrix: DMatrix<f64>,
    pub info_vector: DVector<f64>,
}

/// A linear Gaussian model whose matrices may vary over the grid.
pub trait LinearModel {
    fn state_dim(&self) -> usize;
    fn record_dim(&self) -> usize;
    fn drift(&self, index: usize) -> &DMatrix<f64>;
    fn diffusion(&self, index: usize) -> &DMatrix<f64>;
    fn measurement(&self, index: usize) -> &DMatrix<f64>;
    /// Cross-correlation `Gamma` (record dim x state dim); gains use the transpose.
    fn cross_correlation(&self, index: usize) -> &DMatrix<f64>;
}

/// Constant-coefficient model `(A, D, C, Gamma)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassicalModel {
    pub drift: DMatrix<f64>,
    pub diffusion: DMatrix<f64>,
    pub measurement: DMatrix<f64>,
    pub cross_correlation: DMatrix<f64>,
}

impl ClassicalModel {
    pub fn new(
        drift: DMatrix<f64>,
        diffusion: DMatrix<f64>,
        measurement: DMatrix<f64>,
        cross_correlation: DMatrix<f64>,
    ) -> Result<Self> {
        let n = drift.nrows();
        if drift.ncols() != n || n == 0 {
            return Err(Error::InvalidDimension("drift must be square and non-empty".into()));
        }
        if diffusion.nrows() != n || diffusion.ncols() != n {
            return Err(Error::InvalidDimension(
                "diffusion must match the state dimension".into(),
            ));
        }
        let m = measurement.nrows();
        if measurement.ncols() != n || m == 0 {
            return Err(Error::InvalidDimension(
                "measurement must have state-dimension columns and at least one row".into(),
            ));
        }
        if cross_correlation.nrows() != m || cross_correlation.ncols() != n {
            return Err(Error::InvalidDimension(
                "cross-correlation must have the measurement shape".into(),
            ));
        }
        if !is_symmetric(&diffusion, 1e-10) {
            return Err(Error::InvalidInput("diffusion is not symmetric".into()));
        }
        Ok(Self { drift, diffusion, measurement, cross_correlation })
    }

    /// Joint covariance of `(E dv_p, dv_m)` per unit time:
    /// `[[D, Gamma^T], [Gamma, I]]`.
    pub fn joint_noise_covariance(&self) -> DMatrix<f64> {
        let n = self.drift.nrows();
        let m = self.measurement.nrows();
        let mut joint = DMatrix::zeros(n + m, n + m);
        joint.view_mut((0, 0), (n, n)).copy_from(&self.diffusion);
        joint
            .view_mut((0, n), (n, m))
            .copy_from(&self.cross_correlation.transpose());
        joint.view_mut((n, 0), (m, n)).copy_from(&self.cross_correlation);
        joint.view_mut((n, n), (m, m)).copy_from(&DMatrix::identity(m, m));
        joint
    }
}

impl LinearModel for ClassicalModel {
    fn state_dim(&self) -> usize {
        self.drift.nrows()
    }
    fn record_dim(&self) -> usize {
        self.measurement.nrows()
    }
    fn drift(&self, _: usize) -> &DMatrix<f64> {
        &self.drift
    }
    fn diffusion(&self, _: usize) -> &DMatrix<f64> {
        &self.diffusion
    }
    fn measurement(&self, _: usize) -> &DMatrix<f64> {
        &self.measurement
    }
    fn cross_correlation(&self, _: usize) -> &DMatrix<f64> {
        &self.cross_correlation
    }
}

/// Model with constant drift and measurement but per-grid-point diffusion
/// and cross-correlation (`steps + 1` entries each).
#[derive(Debug, Clone, PartialEq)]
pub struct GridModel {
    pub drift: DMatrix<f64>,
    pub diffusion: Vec<DMatrix<f64>>,
    pub measurement: DMatrix<f64>,
    pub cross_correlation: Vec<DMatrix<f64>>,
}

impl LinearModel for GridModel {
    fn state_dim(&self) -> usize {
        self.drift.nrows()
    }
    fn record_dim(&self) -> usize {
        self.measurement.nrows()
    }
    fn drift(&self, _: usize) -> &DMatrix<f64> {
        &self.drift
    }
    fn diffusion(&self, index: usize) -> &DMatrix<f64> {
        &self.diffusion[index]
    }
    fn measurement(&self, _: usize) -> &DMatrix<f64> {
        &self.measurement
    }
    fn cross_correlation(&self, index: usize) -> &DMatrix<f64> {
        &self.cross_correlation[index]
    }
}

fn gain_plus(model: &impl LinearModel, index: usize, v: &DMatrix<f64>) -> DMatrix<f64> {
    v * model.measurement(index).transpose() + model.cross_correlation(index).transpose()
}

/// Euler-Maruyama simulation of the Langevin pair, returning the state path
/// and the measurement record. Process and measurement noises are drawn
/// jointly through a symmetric square root of `[[D, Gamma^T], [Gamma, I]]`,
/// which realises the cross-correlation exactly.
pub fn simulate_langevin(
    model: &ClassicalModel,
    x0: &DVector<f64>,
    dt: f64,
    duration: f64,
    rng_seed: u64,
) -> Result<(Vec<DVector<f64>>, MeasurementRecord)> {
    let n = model.state_dim();
    let m = model.record_dim();
    if x0.len() != n {
        return Err(Error::InvalidDimension(format!(
            "initial state has length {}, expected {n}",
            x0.len()
        )));
    }
    let grid = TimeGrid::from_duration(0.0, dt, duration)?;
    let joint = model.joint_noise_covariance();
    let scale = joint.iter().fold(1.0_f64, |s, &v| s.max(v.abs()));
    let root = psd_sqrt(&joint, 1e-8 * scale)
        .map_err(|_| Error::InvalidInput("joint noise covariance is not PSD".into()))?;

    let mut rng = ChaCha12Rng::seed_from_u64(rng_seed);
    let sqrt_dt = dt.sqrt();
    let mut path = Vec::with_capacity(grid.points());
    let mut increments = Vec::with_capacity(grid.steps);
    path.push(x0.clone());

    let mut xi = DVector::zeros(n + m);
    for k in 0..grid.steps {
        for v in xi.iter_mut() {
            *v = rng.sample::<f64, _>(StandardNormal) * sqrt_dt;
        }
        let noise = &root * &xi;
        let x = &path[k];
        let process_noise = noise.rows(0, n).into_owned();
        let measurement_noise = noise.rows(n, m).into_owned();
        increments.push(&model.measurement * x * dt + measurement_noise);
        path.push(x + &model.drift * x * dt + process_noise);
    }
    Ok((path, MeasurementRecord { grid, increments }))
}

fn check_record(model: &impl LinearModel, record: &MeasurementRecord) -> Result<()> {
    if record.increments.len() != record.grid.steps {
        return Err(Error::GridMismatch(format!(
            "record has {} increments for {} steps",
            record.increments.len(),
            record.grid.steps
        )));
    }
    if record.record_dim() != model.record_dim() {
        return Err(Error::InvalidDimension(format!(
            "record dimension {} does not match model dimension {}",
            record.record_dim(),
            model.record_dim()
        )));
    }
    Ok(())
}

/// Kalman-Bucy filter: forward Euler integration of
///
/// ```text
/// dx_F    = A x_F dt + K+[V_F] dw_F,    dw_F = y dt - C x_F dt
/// dV_F/dt = A V_F + V_F A^T + D - K+[V_F] K+[V_F]^T
/// ```
///
/// with `K+-[V] = V C^T +- Gamma^T`. The covariance pass is deterministic:
/// it never reads the record.
pub fn kalman_filter(
    model: &impl LinearModel,
    record: &MeasurementRecord,
    x0: &DVector<f64>,
    v0: &DMatrix<f64>,
) -> Result<StateTrajectory> {
    check_record(model, record)?;
    let n = model.state_dim();
    if x0.len() != n || v0.nrows() != n || v0.ncols() != n {
        return Err(Error::InvalidDimension(
            "initial state does not match the model dimension".into(),
        ));
    }
    if !is_symmetric(v0, 1e-10) || min_symmetric_eigenvalue(v0) < PSD_MIN_EIG_TOL {
        return Err(Error::InvalidInput("initial covariance must be symmetric PSD".into()));
    }

    let grid = record.grid;
    let dt = grid.dt;
    let mut means = Vec::with_capacity(grid.points());
    let mut covs = Vec::with_capacity(grid.points());
    means.push(x0.clone());
    covs.push(v0.clone());

    for k in 0..grid.steps {
        let x = &means[k];
        let v = &covs[k];
        let a = model.drift(k);
        let gain = gain_plus(model, k, v);
        let innovation = &record.increments[k] - model.measurement(k) * x * dt;
        means.push(x + a * x * dt + &gain * innovation);
        let mut v_next =
            v + (a * v + v * a.transpose() + model.diffusion(k) - &gain * gain.transpose()) * dt;
        symmetrize(&mut v_next);
        covs.push(v_next);
    }
    Ok(StateTrajectory { grid, means, covs })
}

/// Backward information filter conditioning on future data only.
///
/// Writing `Y = V_R^{-1}` and `z = Y x_R`, the retrofilter equations become,
/// in backward time,
///
/// ```text
/// Y' = At^T Y + Y At + C^T C - Y Dt Y
/// z' = (At^T - Y Dt) z + (C^T - Y Gamma^T) y
/// ```
///
/// with `At = A - Gamma^T C` and `Dt = D - Gamma^T Gamma`, started from the
/// uninformative state `Y(T) = 0`, `z(T) = 0`. Output is grid-aligned with
/// one information state per grid point.
pub fn retrofilter(
    model: &impl LinearModel,
    record: &MeasurementRecord,
) -> Result<Vec<InformationState>> {
    check_record(model, record)?;
    let n = model.state_dim();
    let grid = record.grid;
    let dt = grid.dt;

    let mut states = vec![
        InformationState {
            info_matrix: DMatrix::zeros(n, n),
            info_vector: DVector::zeros(n),
        };
        grid.points()
    ];

    for k in (0..grid.steps).rev() {
        let later = k + 1;
        let a = model.drift(later);
        let c = model.measurement(later);
        let gamma_t = model.cross_correlation(later).transpose();
        let a_tilde = a - &gamma_t * c;
        let d_tilde = model.diffusion(later) - &gamma_t * gamma_t.transpose();

        let y = &states[later].info_matrix;
        let z = &states[later].info_vector;
        let mut y_prev =
            y + (a_tilde.transpose() * y + y * &a_tilde + c.transpose() * c - y * &d_tilde * y)
                * dt;
        symmetrize(&mut y_prev);
        let z_prev = z
            + (a_tilde.transpose() - y * &d_tilde) * z * dt
            + (c.transpose() - y * &gamma_t) * &record.increments[k];
        states[k] = InformationState { info_matrix: y_prev, info_vector: z_prev };
    }
    Ok(states)
}

/// RTS smoother for
///
/// ```text
/// dx_S    = A x_S dt + Dt V_F^{-1} (x_S - x_F) dt + Gamma^T dw_S
/// dV_S/dt = (At + Dt V_F^{-1}) V_S + V_S (At + Dt V_F^{-1})^T - Dt
/// ```
///
/// with `dw_S = y dt - C x_S dt` and final conditions `x_S(T) = x_F(T)`,
/// `V_S(T) = V_F(T)` (copied verbatim). `V_F` is inverted through the
/// symmetric pseudo-inverse so singular filter covariances stay finite.
///
/// The backward Euler pass integrates the exact deviation-from-filter
/// rearrangement of these equations (`m = x_S - x_F`, `W = V_F - V_S`),
///
/// ```text
/// dm/dt = (At + Dt V_F^{-1}) m - V_F C^T dw_F/dt
/// dW/dt = (At + Dt V_F^{-1}) W + W (At + Dt V_F^{-1})^T
///         + Dt(I-P) + (I-P)Dt - V_F C^T C V_F
/// ```
///
/// (`P` the range projector of `V_F`, `dw_F` the stored filter innovation),
/// recovering `x_S = x_F + m` and `V_S = V_F - W` against the stored filter
/// pass, whose large terms then cancel identically instead of numerically;
/// the recombined innovation loading on `x_S` is exactly `Gamma^T dw_S`.
pub fn rts_smooth(
    model: &impl LinearModel,
    filtered: &StateTrajectory,
    record: &MeasurementRecord,
) -> Result<StateTrajectory> {
    check_record(model, record)?;
    require_same_grid(&filtered.grid, &record.grid, "filtered trajectory vs record")?;
    let grid = record.grid;
    let dt = grid.dt;
    let n = model.state_dim();

    let mut means = filtered.means.clone();
    let mut covs = filtered.covs.clone();
    let mut mdev = DVector::zeros(n);
    let mut w = DMatrix::zeros(n, n);

    for k in (0..grid.steps).rev() {
        let later = k + 1;
        let c = model.measurement(later);
        let gamma_t = model.cross_correlation(later).transpose();
        let a_tilde = model.drift(later) - &gamma_t * c;
        let d_tilde = model.diffusion(later) - &gamma_t * gamma_t.transpose();

        let structure = symmetric_eigen_sorted(&filtered.covs[later]);
        let tol = default_eig_tol(&structure.1);
        let vf_inv = pseudo_inverse_from_eigen(&structure, tol)?;
        let pull = &d_tilde * &vf_inv.matrix;
        let closed = &a_tilde + &pull;

        let dw_f = &record.increments[k] - model.measurement(k) * &filtered.means[k] * dt;
        mdev -= &closed * &mdev * dt;
        mdev += &filtered.covs[k] * model.measurement(k).transpose() * dw_f;
        means[k] = &filtered.means[k] + &mdev;

        let d_out = &d_tilde - &d_tilde * &vf_inv.matrix * &filtered.covs[later];
        let leak = &d_out + d_out.transpose();
        let vf_later = &filtered.covs[later];
        let drive = vf_later * c.transpose() * c * vf_later;
        w -= (&closed * &w + &w * closed.transpose() + leak - drive) * dt;
        symmetrize(&mut w);
        let mut v_prev = &filtered.covs[k] - &w;
        symmetrize(&mut v_prev);
        covs[k] = v_prev;
    }
    Ok(StateTrajectory { grid, means, covs })
}

/// Eigenstructure of a covariance with a settled rank decision; the first
/// `rank` (largest-magnitude) eigenvalues are treated as nonzero.
#[derive(Debug, Clone)]
pub(crate) struct EigenRank {
    pub basis: DMatrix<f64>,
    pub eigenvalues: DVector<f64>,
    pub rank: usize,
}

impl EigenRank {
    pub fn from_matrix(mat: &DMatrix<f64>) -> Self {
        let (basis, eigenvalues) = symmetric_eigen_sorted(mat);
        let tol = default_eig_tol(&eigenvalues);
        let rank = eigenvalues.iter().filter(|l| l.abs() > tol).count();
        Self { basis, eigenvalues, rank }
    }
}

/// Two-filter (MFP) combination: fuse the forward filter with the
/// retrofilter in information form,
///
/// ```text
/// V_S = (V_F^{-1} + Y)^{-1},    x_S = V_S (V_F^{-1} x_F + z).
/// ```
///
/// The fusion is evaluated in the eigenbasis of `V_F`: directions with a
/// zero eigenvalue carry a delta-function prior, so there the smoothed state
/// equals the filtered one regardless of `Y` (the exact limit of the formula
/// above), while the remaining block fuses normally.
pub fn mfp_combine(
    filtered: &StateTrajectory,
    retro: &[InformationState],
) -> Result<StateTrajectory> {
    let structures: Vec<EigenRank> =
        filtered.covs.iter().map(EigenRank::from_matrix).collect();
    mfp_combine_structured(filtered, retro, &structures)
}

pub(crate) fn mfp_combine_structured(
    filtered: &StateTrajectory,
    retro: &[InformationState],
    structures: &[EigenRank],
) -> Result<StateTrajectory> {
    if retro.len() != filtered.len() {
        return Err(Error::GridMismatch(format!(
            "retrofilter has {} states for {} grid points",
            retro.len(),
            filtered.len()
        )));
    }
    let n = filtered.means[0].len();
    let grid = filtered.grid;
    let mut means = Vec::with_capacity(filtered.len());
    let mut covs = Vec::with_capacity(filtered.len());

    for k in 0..filtered.len() {
        let EigenRank { basis, eigenvalues: eigs, rank } = &structures[k];
        let rank = *rank;

        let y_star = basis * &retro[k].info_matrix * basis.transpose();
        let z_star = basis * &retro[k].info_vector;
        let xf_star = basis * &filtered.means[k];

        let mut xs_star = xf_star.clone();
        let mut vs_star = DMatrix::zeros(n, n);
        if rank > 0 {
            // Information fusion restricted to the range of V_F; the pinned
            // null components enter the retrofilter linear term as knowns.
            let mut info = y_star.view((0, 0), (rank, rank)).into_owned();
            for i in 0..rank {
                info[(i, i)] += 1.0 / eigs[i];
            }
            let vs_block = info
                .try_inverse()
                .ok_or_else(|| Error::InvalidInput("information fusion block is singular".into()))?;
            let mut rhs = DVector::zeros(rank);
            for i in 0..rank {
                rhs[i] = xf_star[i] / eigs[i] + z_star[i];
                for j in rank..n {
                    rhs[i] -= y_star[(i, j)] * xf_star[j];
                }
            }
            let xs_block = &vs_block * rhs;
            for i in 0..rank {
                xs_star[i] = xs_block[i];
                for j in 0..rank {
                    vs_star[(i, j)] = vs_block[(i, j)];
                }
            }
        }
        means.push(basis.transpose() * xs_star);
        let mut v = basis.transpose() * vs_star * basis;
        symmetrize(&mut v);
        covs.push(v);
    }
    Ok(StateTrajectory { grid, means, covs })
}
