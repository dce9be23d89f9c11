//! Gaussian-state and symplectic linear algebra.
//!
//! Everything downstream represents states by a mean vector and a symmetric
//! covariance matrix in phase-space ordering `(q_1, p_1, ..., q_N, p_N)`.
//! This module owns the validity checks (symmetry, positivity, the
//! uncertainty bound `V + i(hbar/2) Sigma >= 0`), Gaussian convolution, and
//! the eigendecomposition-based pseudo-inverse used by the smoothers when a
//! covariance becomes singular.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative symmetry tolerance for covariance matrices.
pub const SYMMETRY_REL_TOL: f64 = 1e-12;

/// Lower bound accepted for the minimum eigenvalue of a PSD matrix; forward
/// Euler Riccati steps can transiently undershoot zero by round-off.
pub const PSD_MIN_EIG_TOL: f64 = -1e-10;

/// Factor for the scale-relative eigenvalue zero-threshold (floor 1.0 on the
/// scale), keeping rank decisions stable across unit choices.
pub const EIG_TOL_FACTOR: f64 = 1e-9;

/// Gaussian state: mean and symmetric covariance in phase-space units.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianState {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianState {
    /// Build a state, validating symmetry (1e-12 relative) and positive
    /// semidefiniteness (minimum eigenvalue above `PSD_MIN_EIG_TOL`).
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != cov.ncols() || mean.len() != cov.nrows() {
            return Err(Error::InvalidDimension(format!(
                "mean length {} does not match covariance {}x{}",
                mean.len(),
                cov.nrows(),
                cov.ncols()
            )));
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("state entries must be finite".into()));
        }
        if !is_symmetric(&cov, SYMMETRY_REL_TOL) {
            return Err(Error::InvalidInput(
                "covariance is not symmetric to 1e-12 relative".into(),
            ));
        }
        let min_eig = min_symmetric_eigenvalue(&cov);
        if min_eig < PSD_MIN_EIG_TOL {
            return Err(Error::InvalidInput(format!(
                "covariance is not PSD: min eigenvalue {min_eig:.3e}"
            )));
        }
        Ok(Self { mean, cov })
    }

    /// Build a state without validity checks (integration hot paths).
    pub fn new_unchecked(mean: DVector<f64>, cov: DMatrix<f64>) -> Self {
        Self { mean, cov }
    }

    /// Phase-space dimension `2N`.
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// The block-diagonal symplectic form for `(q_1, p_1, ..., q_N, p_N)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymplecticForm {
    sigma: DMatrix<f64>,
}

impl SymplecticForm {
    /// The `2N x 2N` matrix itself.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    /// Number of modes `N`.
    pub fn modes(&self) -> usize {
        self.sigma.nrows() / 2
    }
}

/// Build the `2N x 2N` symplectic form, block-diagonal with `[[0,1],[-1,0]]`.
pub fn symplectic_form(n_modes: usize) -> Result<SymplecticForm> {
    if n_modes == 0 {
        return Err(Error::InvalidDimension(
            "symplectic form requires at least one mode".into(),
        ));
    }
    let dim = 2 * n_modes;
    let mut sigma = DMatrix::zeros(dim, dim);
    for k in 0..n_modes {
        sigma[(2 * k, 2 * k + 1)] = 1.0;
        sigma[(2 * k + 1, 2 * k)] = -1.0;
    }
    Ok(SymplecticForm { sigma })
}

/// Minimum eigenvalue of the Hermitian form `cov + i (hbar/2) Sigma`.
///
/// Computed through the real symmetric embedding
/// `[[cov, -(hbar/2) Sigma], [(hbar/2) Sigma, cov]]`, whose spectrum equals
/// the Hermitian spectrum with doubled multiplicity.
pub fn min_uncertainty_eigenvalue(cov: &DMatrix<f64>, hbar: f64) -> Result<f64> {
    let dim = cov.nrows();
    if cov.ncols() != dim || dim % 2 != 0 || dim == 0 {
        return Err(Error::InvalidDimension(format!(
            "covariance must be square with even dimension, got {}x{}",
            dim,
            cov.ncols()
        )));
    }
    if !is_symmetric(cov, 1e-10) {
        return Err(Error::InvalidInput(
            "covariance is not symmetric to 1e-10 relative".into(),
        ));
    }
    let sigma = symplectic_form(dim / 2)?;
    let y = sigma.matrix() * (hbar / 2.0);
    let mut embed = DMatrix::zeros(2 * dim, 2 * dim);
    embed.view_mut((0, 0), (dim, dim)).copy_from(cov);
    embed.view_mut((0, dim), (dim, dim)).copy_from(&(-&y));
    embed.view_mut((dim, 0), (dim, dim)).copy_from(&y);
    embed.view_mut((dim, dim), (dim, dim)).copy_from(cov);
    Ok(min_symmetric_eigenvalue(&embed))
}

/// True iff `cov` satisfies the uncertainty relation `cov + i(hbar/2)Sigma >= 0`
/// to within `PSD_MIN_EIG_TOL` on the minimum eigenvalue.
pub fn check_uncertainty(cov: &DMatrix<f64>, hbar: f64) -> Result<bool> {
    Ok(min_uncertainty_eigenvalue(cov, hbar)? >= PSD_MIN_EIG_TOL)
}

/// Convolve a mixing distribution `a` with a kernel `b` centred on `a`'s
/// variable: the covariances add, the mean is the mixing mean.
pub fn gaussian_convolve(a: &GaussianState, b: &GaussianState) -> Result<GaussianState> {
    if a.dim() != b.dim() {
        return Err(Error::InvalidDimension(format!(
            "cannot convolve states of dimension {} and {}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(GaussianState {
        mean: a.mean.clone(),
        cov: &a.cov + &b.cov,
    })
}

/// Eigendecomposition-backed pseudo-inverse of a symmetric matrix.
///
/// `basis` holds the orthonormal eigenvectors as rows, so `mat = basis^T
/// diag(eigenvalues) basis`; eigenvalues are sorted by decreasing magnitude
/// and the first `rank` of them are above the zero-threshold.
#[derive(Debug, Clone)]
pub struct PseudoInverse {
    pub matrix: DMatrix<f64>,
    pub rank: usize,
    pub basis: DMatrix<f64>,
    pub eigenvalues: DVector<f64>,
}

/// Scale-relative eigenvalue zero-threshold: `1e-9 * max(|lambda|_max, 1.0)`.
pub fn default_eig_tol(eigenvalues: &DVector<f64>) -> f64 {
    let scale = eigenvalues.iter().fold(1.0_f64, |m, &l| m.max(l.abs()));
    EIG_TOL_FACTOR * scale
}

/// Moore-Penrose pseudo-inverse of a symmetric matrix: eigenvalues with
/// `|lambda| <= eig_tol` are treated as exactly zero, the rest are inverted.
pub fn symmetric_pseudo_inverse(mat: &DMatrix<f64>, eig_tol: f64) -> Result<PseudoInverse> {
    if mat.nrows() != mat.ncols() {
        return Err(Error::InvalidDimension(format!(
            "pseudo-inverse input must be square, got {}x{}",
            mat.nrows(),
            mat.ncols()
        )));
    }
    if !is_symmetric(mat, 1e-10) {
        return Err(Error::InvalidInput(
            "pseudo-inverse input is not symmetric to 1e-10 relative".into(),
        ));
    }
    if !(eig_tol > 0.0) {
        return Err(Error::InvalidInput(format!(
            "eigenvalue tolerance must be positive, got {eig_tol}"
        )));
    }
    let structure = symmetric_eigen_sorted(mat);
    pseudo_inverse_from_eigen(&structure, eig_tol)
}

/// Eigendecomposition `mat = basis^T diag(eigenvalues) basis` with the rows
/// of `basis` orthonormal and eigenvalues sorted by decreasing magnitude.
pub(crate) fn symmetric_eigen_sorted(mat: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let dim = mat.nrows();
    let eigen = nalgebra::SymmetricEigen::new(mat.clone());
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&i, &j| {
        eigen.eigenvalues[j]
            .abs()
            .partial_cmp(&eigen.eigenvalues[i].abs())
            .unwrap()
    });
    let mut basis = DMatrix::zeros(dim, dim);
    let mut eigenvalues = DVector::zeros(dim);
    for (row, &idx) in order.iter().enumerate() {
        eigenvalues[row] = eigen.eigenvalues[idx];
        basis
            .row_mut(row)
            .copy_from(&eigen.eigenvectors.column(idx).transpose());
    }
    (basis, eigenvalues)
}

pub(crate) fn pseudo_inverse_from_eigen(
    structure: &(DMatrix<f64>, DVector<f64>),
    eig_tol: f64,
) -> Result<PseudoInverse> {
    let (basis, eigenvalues) = structure;
    let dim = eigenvalues.len();
    let rank = eigenvalues.iter().filter(|l| l.abs() > eig_tol).count();
    let mut inv_diag = DMatrix::zeros(dim, dim);
    for i in 0..rank {
        inv_diag[(i, i)] = 1.0 / eigenvalues[i];
    }
    let matrix = basis.transpose() * inv_diag * basis;
    Ok(PseudoInverse {
        matrix,
        rank,
        basis: basis.clone(),
        eigenvalues: eigenvalues.clone(),
    })
}

/// Pseudo-inverse from an eigendecomposition with an externally decided
/// rank: the first `rank` (largest-magnitude) eigenvalues are inverted.
pub(crate) fn pseudo_inverse_given_rank(
    basis: &DMatrix<f64>,
    eigenvalues: &DVector<f64>,
    rank: usize,
) -> DMatrix<f64> {
    let dim = eigenvalues.len();
    let mut inv_diag = DMatrix::zeros(dim, dim);
    for i in 0..rank.min(dim) {
        inv_diag[(i, i)] = 1.0 / eigenvalues[i];
    }
    basis.transpose() * inv_diag * basis
}

/// Symmetric PSD square root; eigenvalues in `[-tol, 0)` are clipped to zero.
pub fn psd_sqrt(mat: &DMatrix<f64>, tol: f64) -> Result<DMatrix<f64>> {
    if !is_symmetric(mat, 1e-10) {
        return Err(Error::InvalidInput(
            "square-root input is not symmetric to 1e-10 relative".into(),
        ));
    }
    let (basis, eigenvalues) = symmetric_eigen_sorted(mat);
    let dim = eigenvalues.len();
    let mut sqrt_diag = DMatrix::zeros(dim, dim);
    for i in 0..dim {
        let l = eigenvalues[i];
        if l < -tol {
            return Err(Error::InvalidInput(format!(
                "square-root input is not PSD: eigenvalue {l:.3e}"
            )));
        }
        sqrt_diag[(i, i)] = l.max(0.0).sqrt();
    }
    Ok(basis.transpose() * sqrt_diag * basis)
}

/// Minimum eigenvalue of a symmetric matrix.
pub fn min_symmetric_eigenvalue(mat: &DMatrix<f64>) -> f64 {
    nalgebra::SymmetricEigen::new(mat.clone())
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |m, &l| m.min(l))
}

/// Max-norm relative symmetry test.
pub fn is_symmetric(mat: &DMatrix<f64>, rel_tol: f64) -> bool {
    if mat.nrows() != mat.ncols() {
        return false;
    }
    let scale = mat.iter().fold(1.0_f64, |m, &v| m.max(v.abs()));
    for i in 0..mat.nrows() {
        for j in (i + 1)..mat.ncols() {
            if (mat[(i, j)] - mat[(j, i)]).abs() > rel_tol * scale {
                return false;
            }
        }
    }
    true
}

/// Replace `mat` by `(mat + mat^T) / 2`, suppressing asymmetric round-off
/// drift after integration steps.
pub fn symmetrize(mat: &mut DMatrix<f64>) {
    for i in 0..mat.nrows() {
        for j in (i + 1)..mat.ncols() {
            let avg = 0.5 * (mat[(i, j)] + mat[(j, i)]);
            mat[(i, j)] = avg;
            mat[(j, i)] = avg;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "a={a} b={b} |diff|={}", (a - b).abs());
    }

    #[test]
    fn symplectic_form_single_mode() {
        let s = symplectic_form(1).unwrap();
        assert_eq!(s.matrix(), &DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]));
    }

    #[test]
    fn symplectic_form_two_modes_is_block_diagonal() {
        let s = symplectic_form(2).unwrap();
        let expected = DMatrix::from_row_slice(
            4,
            4,
            &[
                0.0, 1.0, 0.0, 0.0, //
                -1.0, 0.0, 0.0, 0.0, //
                0.0, 0.0, 0.0, 1.0, //
                0.0, 0.0, -1.0, 0.0,
            ],
        );
        assert_eq!(s.matrix(), &expected);
    }

    #[test]
    fn symplectic_form_properties() {
        for n in 1..5 {
            let s = symplectic_form(n).unwrap();
            let m = s.matrix();
            assert_eq!((m + m.transpose()).norm(), 0.0);
            let id = DMatrix::identity(2 * n, 2 * n);
            assert_relative_eq!(m * m, -id, epsilon = 0.0);
        }
    }

    #[test]
    fn symplectic_form_rejects_zero_modes() {
        assert!(matches!(symplectic_form(0), Err(Error::InvalidDimension(_))));
    }

    /// Closed-form eigenvalues of a 2x2 Hermitian matrix `[[a, z],[conj(z), b]]`
    /// with `z = x + iy`; independent oracle for the embedding route.
    fn hermitian_2x2_min_eig(a: f64, b: f64, x: f64, y: f64) -> f64 {
        let mid = 0.5 * (a + b);
        let rad = (0.25 * (a - b).powi(2) + x * x + y * y).sqrt();
        mid - rad
    }

    #[test]
    fn vacuum_saturates_uncertainty_bound() {
        let hbar = 2.0;
        let cov = DMatrix::identity(2, 2); // (hbar/2) I with hbar = 2
        assert!(check_uncertainty(&cov, hbar).unwrap());
        close(min_uncertainty_eigenvalue(&cov, hbar).unwrap(), 0.0, 1e-12);
    }

    #[test]
    fn squeezed_diagonal_covariance_passes() {
        // V = diag(10, 1), hbar = 2: V + i Sigma has min eigenvalue
        // (11 - sqrt(85)) / 2 by the 2x2 Hermitian closed form.
        let cov = DMatrix::from_row_slice(2, 2, &[10.0, 0.0, 0.0, 1.0]);
        let oracle = hermitian_2x2_min_eig(10.0, 1.0, 0.0, 1.0);
        close(oracle, (11.0 - 85.0_f64.sqrt()) / 2.0, 1e-14);
        let got = min_uncertainty_eigenvalue(&cov, 2.0).unwrap();
        close(got, oracle, 1e-12);
        assert!(check_uncertainty(&cov, 2.0).unwrap());
    }

    #[test]
    fn zero_covariance_violates_bound() {
        let cov = DMatrix::zeros(2, 2);
        assert!(!check_uncertainty(&cov, 2.0).unwrap());
    }

    #[test]
    fn uncertainty_rejects_odd_dimensions() {
        let cov = DMatrix::identity(3, 3);
        assert!(matches!(
            check_uncertainty(&cov, 2.0),
            Err(Error::InvalidDimension(_))
        ));
    }

    #[test]
    fn convolve_adds_covariances_keeps_mixing_mean() {
        let a = GaussianState::new(
            DVector::from_row_slice(&[1.0, -2.0]),
            DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]),
        )
        .unwrap();
        let b = GaussianState::new(
            DVector::from_row_slice(&[0.0, 0.0]),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 3.0]),
        )
        .unwrap();
        let c = gaussian_convolve(&a, &b).unwrap();
        assert_eq!(c.mean, a.mean);
        assert_relative_eq!(c.cov, &a.cov + &b.cov, epsilon = 0.0);
    }

    #[test]
    fn convolve_with_delta_mixing() {
        let a = GaussianState::new_unchecked(DVector::zeros(2), DMatrix::zeros(2, 2));
        let b = GaussianState::new(
            DVector::zeros(2),
            DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 9.0]),
        )
        .unwrap();
        let c = gaussian_convolve(&a, &b).unwrap();
        assert_eq!(c.mean, DVector::zeros(2));
        assert_relative_eq!(c.cov, b.cov, epsilon = 0.0);
    }

    #[test]
    fn convolve_rejects_dimension_mismatch() {
        let a = GaussianState::new_unchecked(DVector::zeros(2), DMatrix::zeros(2, 2));
        let b = GaussianState::new_unchecked(DVector::zeros(4), DMatrix::zeros(4, 4));
        assert!(matches!(
            gaussian_convolve(&a, &b),
            Err(Error::InvalidDimension(_))
        ));
    }

    #[test]
    fn pseudo_inverse_of_identity() {
        let id = DMatrix::identity(4, 4);
        let p = symmetric_pseudo_inverse(&id, 1e-10).unwrap();
        assert_eq!(p.rank, 4);
        assert_relative_eq!(p.matrix, id, epsilon = 1e-12);
    }

    #[test]
    fn pseudo_inverse_of_singular_diagonal() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.0]);
        let p = symmetric_pseudo_inverse(&m, 1e-10).unwrap();
        assert_eq!(p.rank, 1);
        assert_relative_eq!(
            p.matrix,
            DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.0]),
            epsilon = 1e-14
        );
    }

    #[test]
    fn pseudo_inverse_of_rank_one_outer_product() {
        // v v^T has pseudo-inverse v v^T / |v|^4; cross-checked against the
        // analytic least-squares solution x = v (v.b) / |v|^4 for b in range.
        let v = DVector::from_row_slice(&[1.0, -2.0, 0.5, 3.0]);
        let m = &v * v.transpose();
        let p = symmetric_pseudo_inverse(&m, 1e-10).unwrap();
        assert_eq!(p.rank, 1);
        let norm4 = v.norm_squared().powi(2);
        assert_relative_eq!(p.matrix, &v * v.transpose() / norm4, epsilon = 1e-12);

        let b = &v * 2.5; // b in the range of m
        let x = &p.matrix * &b;
        let x_oracle = &v * (v.dot(&b) / norm4);
        assert_relative_eq!(x, x_oracle, epsilon = 1e-12);
    }

    #[test]
    fn pseudo_inverse_rejects_asymmetric_input() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(
            symmetric_pseudo_inverse(&m, 1e-10),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn eigen_sorted_reconstructs_input() {
        let m = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 1.0, 3.0, -1.0, 0.0, -1.0, 1.0]);
        let (basis, eigenvalues) = symmetric_eigen_sorted(&m);
        let rebuilt =
            basis.transpose() * DMatrix::from_diagonal(&eigenvalues) * &basis;
        assert_relative_eq!(rebuilt, m, epsilon = 1e-12);
        for i in 1..3 {
            assert!(eigenvalues[i - 1].abs() >= eigenvalues[i].abs());
        }
    }

    #[test]
    fn default_tolerance_has_unit_floor() {
        let eigs = DVector::from_row_slice(&[0.5, -0.1]);
        close(default_eig_tol(&eigs), 1e-9, 0.0);
        let eigs = DVector::from_row_slice(&[200.0, -0.1]);
        close(default_eig_tol(&eigs), 2e-7, 1e-20);
    }

    #[test]
    fn psd_sqrt_squares_back() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 2.0]);
        let r = psd_sqrt(&m, 1e-12).unwrap();
        assert_relative_eq!(&r * &r, m, epsilon = 1e-12);
    }

    #[test]
    fn psd_sqrt_rejects_indefinite_input() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(psd_sqrt(&m, 1e-12).is_err());
    }
}
