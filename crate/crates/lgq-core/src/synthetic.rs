//! Seeded random model generators for equivalence batteries and the oracle
//! suite.
//!
//! Classical models are 2D, Hurwitz-stable with a positive-definite
//! diffusion and a cross-correlation scaled to keep the joint noise
//! covariance PSD. Quantum models are single-mode, two-channel systems with
//! one damping-type coupling (keeping the drift dissipative) plus a random
//! second channel, random homodyne-type unravellings mixed by a random
//! unitary, and a valid squeezed initial state. Generation is rejection
//! sampled so the true covariance stays bounded on the default grid.

use nalgebra::{Complex, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::classical::ClassicalModel;
use crate::gaussian::{psd_sqrt, GaussianState};
use crate::model::{build_derived_model, DerivedModel, LgqSystemSpec, UnravellingSpec};

fn uniform(rng: &mut ChaCha12Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

fn random_matrix(rng: &mut ChaCha12Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| uniform(rng, -scale, scale))
}

/// Random stable 2D classical model with correlated noises, plus an initial
/// state and positive-definite initial covariance.
pub fn random_classical_model(seed: u64) -> (ClassicalModel, DVector<f64>, DMatrix<f64>) {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);

    let raw = random_matrix(&mut rng, 2, 2, 1.0);
    let max_re = raw
        .complex_eigenvalues()
        .iter()
        .fold(f64::NEG_INFINITY, |m, l| m.max(l.re));
    let drift = &raw - DMatrix::identity(2, 2) * (max_re + uniform(&mut rng, 0.4, 1.2));

    // Keep steady covariances O(1): moderate diffusion against the damping.
    let loading = random_matrix(&mut rng, 2, 2, 0.7) + DMatrix::identity(2, 2) * 0.4;
    let diffusion = &loading * loading.transpose();

    let measurement = random_matrix(&mut rng, 2, 2, 1.0);

    // Gamma^T = D^{1/2} Omega with |Omega| < 1 keeps [[D, G^T],[G, I]] PSD.
    let omega_raw = random_matrix(&mut rng, 2, 2, 1.0);
    let spectral = omega_raw.clone().svd(false, false).singular_values[0];
    let omega = omega_raw * (uniform(&mut rng, 0.2, 0.8) / spectral.max(1e-12));
    let cross_t = psd_sqrt(&diffusion, 1e-12).expect("diffusion is PD") * omega;
    let cross = cross_t.transpose();

    let model = ClassicalModel::new(drift, diffusion, measurement, cross)
        .expect("generated model has consistent dimensions");
    let x0 = DVector::from_fn(2, |_, _| uniform(&mut rng, -1.0, 1.0));
    let w = DVector::from_fn(2, |_, _| uniform(&mut rng, -0.5, 0.5));
    let v0 = DMatrix::identity(2, 2) * uniform(&mut rng, 0.5, 1.2) + &w * w.transpose();
    (model, x0, v0)
}

fn random_unitary(rng: &mut ChaCha12Rng) -> DMatrix<Complex<f64>> {
    // Givens rotation with a random relative phase.
    let phi = uniform(rng, 0.0, std::f64::consts::TAU);
    let psi = uniform(rng, 0.0, std::f64::consts::TAU);
    let (c, s) = (phi.cos(), phi.sin());
    let mut u = DMatrix::zeros(2, 2);
    u[(0, 0)] = Complex::new(c, 0.0);
    u[(0, 1)] = Complex::from_polar(s, psi);
    u[(1, 0)] = Complex::from_polar(-s, -psi);
    u[(1, 1)] = Complex::new(c, 0.0);
    u
}

fn try_lgq_model(rng: &mut ChaCha12Rng) -> Option<(DerivedModel, GaussianState)> {
    let hbar = 2.0;
    let g_mat = {
        let raw = random_matrix(rng, 2, 2, 1.0);
        (&raw + raw.transpose()) * 0.5
    };
    let gamma_rate = uniform(rng, 0.5, 1.5).sqrt();
    let mut coupling = DMatrix::zeros(2, 2);
    coupling[(0, 0)] = Complex::new(gamma_rate, 0.0);
    coupling[(0, 1)] = Complex::new(0.0, gamma_rate);
    coupling[(1, 0)] = Complex::new(uniform(rng, -1.0, 1.0), uniform(rng, -1.0, 1.0));
    coupling[(1, 1)] = Complex::new(uniform(rng, -1.0, 1.0), uniform(rng, -1.0, 1.0));
    let sys = LgqSystemSpec::new(1, hbar, g_mat, coupling).ok()?;

    let homodyne = |rng: &mut ChaCha12Rng, eta: [f64; 2]| {
        let mut m = DMatrix::zeros(2, 2);
        for (k, &e) in eta.iter().enumerate() {
            m[(k, k)] = Complex::from_polar(e.sqrt(), uniform(rng, 0.0, std::f64::consts::TAU));
        }
        let u = random_unitary(rng);
        m * u
    };
    let eta_o = [uniform(rng, 0.2, 0.6), uniform(rng, 0.2, 0.6)];
    let eta_u = [
        uniform(rng, 0.1, 0.95 - eta_o[0]),
        uniform(rng, 0.1, 0.95 - eta_o[1]),
    ];
    let unr = UnravellingSpec {
        observed: homodyne(rng, eta_o),
        unobserved: homodyne(rng, eta_u),
    };
    let model = build_derived_model(&sys, &unr).ok()?;

    let squeeze = uniform(rng, 0.6, 2.0);
    let excess = uniform(rng, 0.0, 2.0);
    let v0 = DMatrix::from_diagonal(&DVector::from_row_slice(&[
        squeeze,
        (1.0 + excess) / squeeze,
    ]));
    let x0 = DVector::from_fn(2, |_, _| uniform(rng, -1.0, 1.0));

    // Keep only models whose true covariance stays bounded on a coarse probe
    // and whose Riccati flows settle within the steady-state time budget.
    let probe = crate::quantum::simulate_true_state(&model, &x0, &v0, 1e-3, 2.0, 0).ok()?;
    let bounded = probe.trajectory.covs.iter().all(|v| v.amax() < 50.0);
    if !bounded {
        return None;
    }
    use crate::steady_state::{solve_steady_riccati, ChannelSet};
    solve_steady_riccati(&model, ChannelSet::BOTH, &v0, 1e-3).ok()?;
    solve_steady_riccati(&model, ChannelSet::UNOBSERVED_ONLY, &v0, 1e-3).ok()?;
    Some((model, GaussianState::new_unchecked(x0, v0)))
}

/// Random valid single-mode LGQ model (derived matrices plus initial state).
/// Rejection-sampled deterministically from the seed.
pub fn random_lgq_model(seed: u64) -> (DerivedModel, GaussianState) {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    for _ in 0..64 {
        if let Some(found) = try_lgq_model(&mut rng) {
            return found;
        }
    }
    unreachable!("rejection sampling failed for seed {seed}")
}
