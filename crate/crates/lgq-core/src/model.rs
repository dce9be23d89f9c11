//! Physical model specification and the derived moment matrices.
//!
//! A system is given by a quadratic Hamiltonian `H = x^T G x / 2`, a linear
//! Lindblad coupling `c = B x`, and two unravelling matrices `M_o` (the
//! observer, Alice) and `M_u` (the partner record, Bob). From these the
//! module derives the real matrices entering every moment equation:
//!
//! ```text
//! A     = Sigma (G + Im[B'B])            drift
//! D     = hbar Sigma Re[B'B] Sigma^T     diffusion
//! C_r   = 2 sqrt(1/hbar) T_r^T Btilde    measurement, per record r in {o,u}
//! Gam_r = -sqrt(hbar) T_r^T S Btilde Sigma^T
//! ```
//!
//! with `T_r^T = [Re(M_r^T), Im(M_r^T)]`, `Btilde^T = [Re(B^T), Im(B^T)]` and
//! `S = [[0, I_K], [-I_K, 0]]`. `C_r` and `Gam_r` have one row per channel;
//! channels with zero efficiency keep their (zero) rows so dimensions stay
//! static.

use nalgebra::{Complex, DMatrix, DVector};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::gaussian::{is_symmetric, symplectic_form, GaussianState, SymplecticForm};

type CMatrix = DMatrix<Complex<f64>>;

/// Which measurement record a quantity belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Observer {
    /// Alice's record, the one conditioning the filter and smoother.
    Observed,
    /// Bob's record, unobserved by Alice.
    Unobserved,
}

/// Physical specification of a linear Gaussian quantum system.
#[derive(Debug, Clone, PartialEq)]
pub struct LgqSystemSpec {
    /// Number of bosonic modes `N`.
    pub n_modes: usize,
    /// Planck constant convention; the worked examples use `hbar = 2`.
    pub hbar: f64,
    /// Hamiltonian quadratic form `G`, real symmetric `2N x 2N`.
    pub hamiltonian: DMatrix<f64>,
    /// Lindblad coupling `B`, complex `K x 2N` with `K` channels.
    pub coupling: CMatrix,
}

impl LgqSystemSpec {
    pub fn new(n_modes: usize, hbar: f64, hamiltonian: DMatrix<f64>, coupling: CMatrix) -> Result<Self> {
        if n_modes == 0 {
            return Err(Error::InvalidDimension("mode count must be positive".into()));
        }
        let dim = n_modes
            .checked_mul(2)
            .ok_or_else(|| Error::InvalidDimension("mode count overflows".into()))?;
        if !(hbar > 0.0) {
            return Err(Error::InvalidInput(format!("hbar must be positive, got {hbar}")));
        }
        if hamiltonian.nrows() != dim || hamiltonian.ncols() != dim {
            return Err(Error::InvalidDimension(format!(
                "Hamiltonian form must be {dim}x{dim}, got {}x{}",
                hamiltonian.nrows(),
                hamiltonian.ncols()
            )));
        }
        if !is_symmetric(&hamiltonian, 1e-12) {
            return Err(Error::InvalidInput(
                "Hamiltonian form is not symmetric to 1e-12 relative".into(),
            ));
        }
        if coupling.ncols() != dim || coupling.nrows() == 0 {
            return Err(Error::InvalidDimension(format!(
                "coupling must be Kx{dim} with K >= 1, got {}x{}",
                coupling.nrows(),
                coupling.ncols()
            )));
        }
        Ok(Self { n_modes, hbar, hamiltonian, coupling })
    }

    /// Number of Lindblad channels `K`.
    pub fn channels(&self) -> usize {
        self.coupling.nrows()
    }
}

/// The pair of unravelling matrices describing how the two observers split
/// the measurement channels.
#[derive(Debug, Clone, PartialEq)]
pub struct UnravellingSpec {
    pub observed: CMatrix,
    pub unobserved: CMatrix,
}

impl UnravellingSpec {
    pub fn matrix(&self, observer: Observer) -> &CMatrix {
        match observer {
            Observer::Observed => &self.observed,
            Observer::Unobserved => &self.unobserved,
        }
    }
}

/// One violated unravelling constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintViolation {
    /// Description of the constraint that failed.
    pub constraint: String,
    /// Channel index, when the constraint is per-channel.
    pub channel: Option<usize>,
}

/// Outcome of [`validate_unravelling`]; an empty violation list means pass.
#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub violations: Vec<ConstraintViolation>,
    /// Per-channel observed efficiencies `eta_{o,k}` (diagonal of `M_o M_o^dag`).
    pub eta_observed: Vec<f64>,
    /// Per-channel unobserved efficiencies `eta_{u,k}`.
    pub eta_unobserved: Vec<f64>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, constraint: impl Into<String>, channel: Option<usize>) {
        self.violations.push(ConstraintViolation { constraint: constraint.into(), channel });
    }

    /// One-line summary of all violations.
    pub fn summary(&self) -> String {
        self.violations
            .iter()
            .map(|v| match v.channel {
                Some(k) => format!("{} (channel {k})", v.constraint),
                None => v.constraint.clone(),
            })
            .collect::<Vec<_>>()
            .join("; ")
    }
}

const DIAG_TOL: f64 = 1e-10;
const ETA_SLACK: f64 = 1e-12;

fn efficiencies(m: &CMatrix) -> (Vec<f64>, f64) {
    let mm = m * m.adjoint();
    let k = mm.nrows();
    let mut eta = Vec::with_capacity(k);
    let mut max_off_diag = 0.0_f64;
    for i in 0..k {
        eta.push(mm[(i, i)].re);
        for j in 0..k {
            if i != j {
                max_off_diag = max_off_diag.max(mm[(i, j)].norm());
            }
        }
    }
    (eta, max_off_diag)
}

/// Check the unravelling constraints: `M_r M_r^dag` diagonal, efficiencies in
/// `[0, 1]`, per-channel sums at most one, and both observers active.
///
/// Violations are collected in the report rather than returned as errors.
pub fn validate_unravelling(spec: &UnravellingSpec) -> ValidationReport {
    let mut report = ValidationReport::default();
    let k = spec.observed.nrows();
    if spec.observed.ncols() != k {
        report.push("M_o must be square", None);
        return report;
    }
    if spec.unobserved.nrows() != k || spec.unobserved.ncols() != k {
        report.push("M_u must be square with the same channel count as M_o", None);
        return report;
    }

    let (eta_o, off_o) = efficiencies(&spec.observed);
    let (eta_u, off_u) = efficiencies(&spec.unobserved);
    if off_o > DIAG_TOL {
        report.push(format!("M_o M_o^dag is not diagonal to 1e-10 (max off-diagonal {off_o:.3e})"), None);
    }
    if off_u > DIAG_TOL {
        report.push(format!("M_u M_u^dag is not diagonal to 1e-10 (max off-diagonal {off_u:.3e})"), None);
    }
    for (ch, &e) in eta_o.iter().enumerate() {
        if !(-ETA_SLACK..=1.0 + ETA_SLACK).contains(&e) {
            report.push(format!("eta_o = {e} outside [0, 1]"), Some(ch));
        }
    }
    for (ch, &e) in eta_u.iter().enumerate() {
        if !(-ETA_SLACK..=1.0 + ETA_SLACK).contains(&e) {
            report.push(format!("eta_u = {e} outside [0, 1]"), Some(ch));
        }
    }
    for ch in 0..k {
        let sum = eta_o[ch] + eta_u[ch];
        if sum > 1.0 + ETA_SLACK {
            report.push(format!("eta_o + eta_u = {sum} exceeds 1"), Some(ch));
        }
    }
    if !eta_o.iter().any(|&e| e > 0.0) {
        report.push("at least one eta_o,k > 0 is required", None);
    }
    if !eta_u.iter().any(|&e| e > 0.0) {
        report.push("at least one eta_u,k > 0 is required", None);
    }
    report.eta_observed = eta_o;
    report.eta_unobserved = eta_u;
    report
}

/// Real matrices driving all moment equations.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivedModel {
    /// Drift matrix `A` (1/time), `2N x 2N`.
    pub drift: DMatrix<f64>,
    /// Diffusion matrix `D` (units^2/time), symmetric PSD `2N x 2N`.
    pub diffusion: DMatrix<f64>,
    /// Measurement matrices `C_r`, `K x 2N`, one row per channel.
    pub measurement_observed: DMatrix<f64>,
    pub measurement_unobserved: DMatrix<f64>,
    /// Cross-correlation matrices `Gamma_r`, `K x 2N`; gains use the transpose.
    pub cross_correlation_observed: DMatrix<f64>,
    pub cross_correlation_unobserved: DMatrix<f64>,
    /// Symplectic form for the mode ordering.
    pub sigma: SymplecticForm,
    pub hbar: f64,
}

impl DerivedModel {
    /// Phase-space dimension `2N`.
    pub fn state_dim(&self) -> usize {
        self.drift.nrows()
    }

    /// Channel count `K`.
    pub fn channels(&self) -> usize {
        self.measurement_observed.nrows()
    }

    pub fn measurement(&self, observer: Observer) -> &DMatrix<f64> {
        match observer {
            Observer::Observed => &self.measurement_observed,
            Observer::Unobserved => &self.measurement_unobserved,
        }
    }

    pub fn cross_correlation(&self, observer: Observer) -> &DMatrix<f64> {
        match observer {
            Observer::Observed => &self.cross_correlation_observed,
            Observer::Unobserved => &self.cross_correlation_unobserved,
        }
    }

    /// Kalman gain `K+[V] = V C_r^T + Gamma_r^T` for the given record.
    pub fn gain_plus(&self, observer: Observer, v: &DMatrix<f64>) -> DMatrix<f64> {
        v * self.measurement(observer).transpose() + self.cross_correlation(observer).transpose()
    }

    /// The single-record classical view `(A, D, C_r, Gamma_r)`; this is the
    /// model the quantum filter runs on.
    pub fn single_record_model(&self, observer: Observer) -> crate::classical::ClassicalModel {
        crate::classical::ClassicalModel {
            drift: self.drift.clone(),
            diffusion: self.diffusion.clone(),
            measurement: self.measurement(observer).clone(),
            cross_correlation: self.cross_correlation(observer).clone(),
        }
    }
}

fn stacked_real_coupling(b: &CMatrix) -> DMatrix<f64> {
    let (k, dim) = (b.nrows(), b.ncols());
    let mut out = DMatrix::zeros(2 * k, dim);
    for i in 0..k {
        for j in 0..dim {
            out[(i, j)] = b[(i, j)].re;
            out[(k + i, j)] = b[(i, j)].im;
        }
    }
    out
}

fn record_projection(m: &CMatrix) -> DMatrix<f64> {
    // T_r^T = [Re(M_r^T), Im(M_r^T)], one row per channel.
    let k = m.nrows();
    let mut out = DMatrix::zeros(k, 2 * k);
    for i in 0..k {
        for j in 0..k {
            out[(i, j)] = m[(j, i)].re;
            out[(i, k + j)] = m[(j, i)].im;
        }
    }
    out
}

fn derive_unvalidated(sys: &LgqSystemSpec, unr: &UnravellingSpec) -> Result<DerivedModel> {
    let k = sys.channels();
    if unr.observed.nrows() != k || unr.observed.ncols() != k
        || unr.unobserved.nrows() != k || unr.unobserved.ncols() != k
    {
        return Err(Error::InvalidDimension(format!(
            "unravelling matrices must be {k}x{k} to match the coupling"
        )));
    }
    let sigma = symplectic_form(sys.n_modes)?;
    let sig = sigma.matrix();

    let bdag_b = sys.coupling.adjoint() * &sys.coupling;
    let re_part = bdag_b.map(|z| z.re);
    let im_part = bdag_b.map(|z| z.im);

    let drift = sig * (&sys.hamiltonian + im_part);
    let diffusion = sig * re_part * sig.transpose() * sys.hbar;

    let btilde = stacked_real_coupling(&sys.coupling);
    let mut s_block = DMatrix::zeros(2 * k, 2 * k);
    for i in 0..k {
        s_block[(i, k + i)] = 1.0;
        s_block[(k + i, i)] = -1.0;
    }

    let c_scale = 2.0 / sys.hbar.sqrt();
    let g_scale = -sys.hbar.sqrt();
    let build = |m: &CMatrix| {
        let t_r = record_projection(m);
        let c = &t_r * &btilde * c_scale;
        let gamma = &t_r * &s_block * &btilde * sig.transpose() * g_scale;
        (c, gamma)
    };
    let (c_o, gamma_o) = build(&unr.observed);
    let (c_u, gamma_u) = build(&unr.unobserved);

    Ok(DerivedModel {
        drift,
        diffusion,
        measurement_observed: c_o,
        measurement_unobserved: c_u,
        cross_correlation_observed: gamma_o,
        cross_correlation_unobserved: gamma_u,
        sigma,
        hbar: sys.hbar,
    })
}

/// Derive the moment matrices, rejecting specifications whose unravelling
/// fails validation.
pub fn build_derived_model(sys: &LgqSystemSpec, unr: &UnravellingSpec) -> Result<DerivedModel> {
    let report = validate_unravelling(unr);
    if !report.is_valid() {
        return Err(Error::RejectedModel(report.summary()));
    }
    derive_unvalidated(sys, unr)
}

/// Derive the moment matrices without validating the unravelling; dimension
/// checks still apply. Intended for diagnostics such as single-record limits.
pub fn build_derived_model_unchecked(sys: &LgqSystemSpec, unr: &UnravellingSpec) -> Result<DerivedModel> {
    derive_unvalidated(sys, unr)
}

/// Homodyne settings for one observer of the two-channel oscillator:
/// efficiency and local-oscillator phase for each channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HomodyneSetup {
    pub eta_gamma: f64,
    pub theta_gamma: f64,
    pub eta_kappa: f64,
    pub theta_kappa: f64,
}

impl HomodyneSetup {
    /// Full-efficiency homodyne on the gamma channel only.
    pub fn gamma_only(theta: f64) -> Self {
        Self { eta_gamma: 1.0, theta_gamma: theta, eta_kappa: 0.0, theta_kappa: 0.0 }
    }

    /// Full-efficiency homodyne on the kappa channel only.
    pub fn kappa_only(theta: f64) -> Self {
        Self { eta_gamma: 0.0, theta_gamma: 0.0, eta_kappa: 1.0, theta_kappa: theta }
    }

    fn matrix(&self) -> CMatrix {
        let mut m = CMatrix::zeros(2, 2);
        m[(0, 0)] = Complex::from_polar(self.eta_gamma.sqrt(), self.theta_gamma);
        m[(1, 1)] = Complex::from_polar(self.eta_kappa.sqrt(), self.theta_kappa);
        m
    }
}

/// The bundled single-mode example: a squeezing Hamiltonian
/// `H = chi (qp + pq) / 2` with a decay channel `c_1 = q + ip` (rate `gamma`)
/// and a position coupling `c_2 = sqrt(g) q` (rate `kappa = g chi`), in units
/// where `chi = gamma = 1` and `hbar = 2`. The coupling normalisation is
/// pinned so the derived matrices are exactly `A = diag(0, -2)` and
/// `D = hbar diag(1, 1 + g)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OscillatorPreset {
    /// Rate ratio `g = kappa / chi`.
    pub g: f64,
    pub observed: HomodyneSetup,
    pub unobserved: HomodyneSetup,
}

impl OscillatorPreset {
    /// Alice on the gamma channel (phase pi/8), Bob on the kappa channel.
    pub fn observe_gamma(g: f64) -> Self {
        Self {
            g,
            observed: HomodyneSetup::gamma_only(PI / 8.0),
            unobserved: HomodyneSetup::kappa_only(0.0),
        }
    }

    /// The reversed scenario: Alice on the kappa channel, Bob on gamma.
    pub fn observe_kappa(g: f64) -> Self {
        Self {
            g,
            observed: HomodyneSetup::kappa_only(0.0),
            unobserved: HomodyneSetup::gamma_only(PI / 8.0),
        }
    }

    /// Default initial state: zero mean, `V_0 = diag(10, (1+g)/2)`, a finite
    /// stand-in for the unconditioned steady state.
    pub fn initial_state(&self) -> GaussianState {
        GaussianState::new_unchecked(
            DVector::zeros(2),
            DMatrix::from_diagonal(&DVector::from_row_slice(&[10.0, (1.0 + self.g) / 2.0])),
        )
    }

    pub fn hbar(&self) -> f64 {
        2.0
    }
}

/// Build the system and unravelling specs for [`OscillatorPreset`].
pub fn two_channel_oscillator(preset: &OscillatorPreset) -> Result<(LgqSystemSpec, UnravellingSpec)> {
    if !(preset.g > 0.0) {
        return Err(Error::InvalidInput(format!(
            "coupling ratio g must be positive, got {}",
            preset.g
        )));
    }
    let hamiltonian = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
    let mut coupling = CMatrix::zeros(2, 2);
    coupling[(0, 0)] = Complex::new(1.0, 0.0);
    coupling[(0, 1)] = Complex::new(0.0, 1.0);
    coupling[(1, 0)] = Complex::new(preset.g.sqrt(), 0.0);
    let sys = LgqSystemSpec::new(1, preset.hbar(), hamiltonian, coupling)?;
    let unr = UnravellingSpec {
        observed: preset.observed.matrix(),
        unobserved: preset.unobserved.matrix(),
    };
    Ok((sys, unr))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn diag2(a: f64, b: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[a, 0.0, 0.0, b])
    }

    #[test]
    fn homodyne_pair_validates() {
        // M_o = diag(e^{i pi/8}, 0), M_u = diag(0, 1)
        let preset = OscillatorPreset::observe_gamma(1.0);
        let (_, unr) = two_channel_oscillator(&preset).unwrap();
        let report = validate_unravelling(&unr);
        assert!(report.is_valid(), "violations: {}", report.summary());
        assert_relative_eq!(report.eta_observed[0], 1.0, epsilon = 1e-15);
        assert_relative_eq!(report.eta_observed[1], 0.0, epsilon = 1e-15);
        assert_relative_eq!(report.eta_unobserved[1], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn oversubscribed_channel_is_flagged() {
        let mut o = HomodyneSetup::gamma_only(0.0);
        o.eta_gamma = 0.7;
        let mut u = HomodyneSetup::gamma_only(0.0);
        u.eta_gamma = 0.5;
        u.eta_kappa = 0.3;
        let unr = UnravellingSpec { observed: o.matrix(), unobserved: u.matrix() };
        let report = validate_unravelling(&unr);
        assert!(!report.is_valid());
        assert!(report
            .violations
            .iter()
            .any(|v| v.channel == Some(0) && v.constraint.contains("exceeds 1")));
    }

    #[test]
    fn silent_observer_is_flagged() {
        let unr = UnravellingSpec {
            observed: CMatrix::zeros(2, 2),
            unobserved: HomodyneSetup::kappa_only(0.0).matrix(),
        };
        let report = validate_unravelling(&unr);
        assert!(!report.is_valid());
        assert!(report.violations.iter().any(|v| v.constraint.contains("eta_o")));
    }

    #[test]
    fn non_diagonal_mm_dagger_is_flagged() {
        let mut m = CMatrix::zeros(2, 2);
        m[(0, 0)] = Complex::new(0.6, 0.0);
        m[(0, 1)] = Complex::new(0.3, 0.0); // couples rows: MM^dag off-diagonal
        m[(1, 1)] = Complex::new(0.6, 0.0);
        let unr = UnravellingSpec { observed: m, unobserved: HomodyneSetup::kappa_only(0.0).matrix() };
        let report = validate_unravelling(&unr);
        assert!(report.violations.iter().any(|v| v.constraint.contains("not diagonal")));
    }

    #[test]
    fn oscillator_drift_and_diffusion_are_pinned() {
        for g in [1.0, 0.1, 2.7] {
            let preset = OscillatorPreset::observe_gamma(g);
            let (sys, unr) = two_channel_oscillator(&preset).unwrap();
            let model = build_derived_model(&sys, &unr).unwrap();
            assert_relative_eq!(model.drift, diag2(0.0, -2.0), epsilon = 1e-14);
            assert_relative_eq!(model.diffusion, diag2(2.0, 2.0 * (1.0 + g)), epsilon = 1e-14);
        }
    }

    #[test]
    fn oscillator_measurement_matrices_match_closed_form() {
        // Homodyne on both channels gives
        //   C_r   = 2/sqrt(hbar) [[ se cos, se sin], [ sk cos', 0       ]]
        //   Gam_r = -sqrt(hbar)  [[ se cos, se sin], [ 0,       sk sin' ]]
        // with se = sqrt(eta_gamma), sk = sqrt(g eta_kappa).
        let g: f64 = 1.0;
        let theta = PI / 8.0;
        let preset = OscillatorPreset::observe_gamma(g);
        let (sys, unr) = two_channel_oscillator(&preset).unwrap();
        let model = build_derived_model(&sys, &unr).unwrap();

        let root2 = 2.0_f64.sqrt();
        let c_o = DMatrix::from_row_slice(2, 2, &[
            root2 * theta.cos(), root2 * theta.sin(),
            0.0, 0.0,
        ]);
        assert_relative_eq!(model.measurement_observed, c_o, epsilon = 1e-14);
        assert_relative_eq!(model.measurement_observed[(0, 0)], 1.3066, epsilon = 1e-4);
        assert_relative_eq!(model.measurement_observed[(0, 1)], 0.5412, epsilon = 1e-4);

        let gamma_o = DMatrix::from_row_slice(2, 2, &[
            -root2 * theta.cos(), -root2 * theta.sin(),
            0.0, 0.0,
        ]);
        assert_relative_eq!(model.cross_correlation_observed, gamma_o, epsilon = 1e-14);

        // Bob: kappa channel at theta = 0.
        let c_u = DMatrix::from_row_slice(2, 2, &[
            0.0, 0.0,
            root2 * g.sqrt(), 0.0,
        ]);
        assert_relative_eq!(model.measurement_unobserved, c_u, epsilon = 1e-14);
        assert_relative_eq!(model.cross_correlation_unobserved, DMatrix::zeros(2, 2), epsilon = 1e-14);
    }

    #[test]
    fn reversed_scenario_has_zero_observed_cross_correlation() {
        let preset = OscillatorPreset::observe_kappa(0.1);
        let (sys, unr) = two_channel_oscillator(&preset).unwrap();
        let model = build_derived_model(&sys, &unr).unwrap();
        assert_relative_eq!(model.cross_correlation_observed, DMatrix::zeros(2, 2), epsilon = 1e-14);
        // Bob's gamma-channel homodyne at pi/8 is the mirrored block.
        let root2 = 2.0_f64.sqrt();
        let theta = PI / 8.0;
        assert_relative_eq!(
            model.measurement_unobserved,
            DMatrix::from_row_slice(2, 2, &[root2 * theta.cos(), root2 * theta.sin(), 0.0, 0.0]),
            epsilon = 1e-14
        );
    }

    #[test]
    fn zero_system_derives_zero_matrices() {
        let sys = LgqSystemSpec::new(1, 2.0, DMatrix::zeros(2, 2), CMatrix::zeros(2, 2)).unwrap();
        let unr = UnravellingSpec {
            observed: HomodyneSetup::gamma_only(0.0).matrix(),
            unobserved: HomodyneSetup::kappa_only(0.0).matrix(),
        };
        let model = build_derived_model(&sys, &unr).unwrap();
        assert_relative_eq!(model.drift, DMatrix::zeros(2, 2), epsilon = 0.0);
        assert_relative_eq!(model.diffusion, DMatrix::zeros(2, 2), epsilon = 0.0);
    }

    #[test]
    fn zero_efficiency_channels_have_zero_rows() {
        let preset = OscillatorPreset::observe_gamma(0.7);
        let (sys, unr) = two_channel_oscillator(&preset).unwrap();
        let model = build_derived_model(&sys, &unr).unwrap();
        // Alice never touches channel 2, Bob never touches channel 1.
        assert_eq!(model.measurement_observed.row(1).norm(), 0.0);
        assert_eq!(model.cross_correlation_observed.row(1).norm(), 0.0);
        assert_eq!(model.measurement_unobserved.row(0).norm(), 0.0);
        assert_eq!(model.cross_correlation_unobserved.row(0).norm(), 0.0);
    }

    #[test]
    fn rejected_model_reports_violations() {
        let (sys, mut unr) = two_channel_oscillator(&OscillatorPreset::observe_gamma(1.0)).unwrap();
        unr.unobserved = CMatrix::zeros(2, 2);
        let err = build_derived_model(&sys, &unr).unwrap_err();
        assert!(matches!(err, Error::RejectedModel(_)));
        // The unchecked constructor still accepts it for single-record studies.
        assert!(build_derived_model_unchecked(&sys, &unr).is_ok());
    }

    #[test]
    fn drift_non_hamiltonian_part_comes_from_antisymmetric_im() {
        let preset = OscillatorPreset::observe_gamma(1.3);
        let (sys, _) = two_channel_oscillator(&preset).unwrap();
        let bdag_b = sys.coupling.adjoint() * &sys.coupling;
        let im_part = bdag_b.map(|z| z.im);
        assert_relative_eq!(&im_part + im_part.transpose(), DMatrix::zeros(2, 2), epsilon = 1e-15);
    }

    #[test]
    fn diffusion_is_symmetric_psd() {
        let preset = OscillatorPreset::observe_kappa(0.4);
        let (sys, unr) = two_channel_oscillator(&preset).unwrap();
        let model = build_derived_model(&sys, &unr).unwrap();
        assert!(is_symmetric(&model.diffusion, 1e-12));
        assert!(crate::gaussian::min_symmetric_eigenvalue(&model.diffusion) >= 0.0);
    }

    #[test]
    fn gain_uses_transposed_cross_correlation() {
        let preset = OscillatorPreset::observe_gamma(1.0);
        let (sys, unr) = two_channel_oscillator(&preset).unwrap();
        let model = build_derived_model(&sys, &unr).unwrap();
        // At V = (hbar/2) I the observed gain vanishes for this preset:
        // V C_o^T exactly cancels Gamma_o^T.
        let v = DMatrix::identity(2, 2);
        let gain = model.gain_plus(Observer::Observed, &v);
        assert_relative_eq!(gain, DMatrix::zeros(2, 2), epsilon = 1e-14);
    }
}
