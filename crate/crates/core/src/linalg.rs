//! Dense linear algebra for the OU drift/noise pair: matrix exponentials,
//! the Kalman controllability matrix, controllability Gramians and the
//! surjectivity check for `(y_1..y_m) -> sum_j e^{s_j A} B y_j`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::GaussLegendre;

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Default relative threshold for numerical rank decisions.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;
/// Default Gauss-Legendre node count for Gramians.
pub const DEFAULT_GRAMIAN_NODES: usize = 64;

/// The pair (A, B) of `dX = AX dt + B dZ`. `A` is n x n, `B` is n x d.
#[derive(Clone, Debug, PartialEq)]
pub struct OuSystem {
    a: Matrix,
    b: Matrix,
}

impl OuSystem {
    pub fn new(a: Matrix, b: Matrix) -> Result<Self> {
        if a.nrows() == 0 || a.nrows() != a.ncols() {
            return Err(Error::dim(format!(
                "drift matrix must be square and non-empty, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.nrows() != a.nrows() || b.ncols() == 0 {
            return Err(Error::dim(format!(
                "noise matrix must be {}xd with d >= 1, got {}x{}",
                a.nrows(),
                b.nrows(),
                b.ncols()
            )));
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::param("system matrices must be finite"));
        }
        Ok(Self { a, b })
    }

    /// Builds a system from row-major nested arrays.
    pub fn from_rows(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<Self> {
        Self::new(matrix_from_rows(a)?, matrix_from_rows(b)?)
    }

    /// The degenerate two-dimensional system driven through its first
    /// coordinate only: `dX1 = dZ`, `dX2 = X1 dt`.
    pub fn kolmogorov() -> Self {
        Self::new(
            Matrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0]),
            Matrix::from_row_slice(2, 1, &[1.0, 0.0]),
        )
        .expect("valid system")
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    /// State dimension n.
    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    /// Noise dimension d.
    pub fn noise_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn drift_rows(&self) -> Vec<Vec<f64>> {
        rows_of(&self.a)
    }

    pub fn noise_rows(&self) -> Vec<Vec<f64>> {
        rows_of(&self.b)
    }
}

pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<Matrix> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 {
        return Err(Error::dim("matrix must have at least one row and column"));
    }
    if rows.iter().any(|row| row.len() != c) {
        return Err(Error::dim("ragged matrix rows"));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    if flat.iter().any(|v| !v.is_finite()) {
        return Err(Error::param("matrix entries must be finite"));
    }
    Ok(Matrix::from_row_slice(r, c, &flat))
}

pub fn rows_of(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

/// `e^{sM}` by scaling and squaring around a truncated Taylor series.
///
/// The matrix is scaled by `2^-k` until its 1-norm is at most 1/2, where
/// 20 Taylor terms leave a remainder far below double precision; the result
/// is then squared `k` times. No eigendecomposition is used, so defective
/// matrices are handled like any other.
pub fn mat_exp(m: &Matrix, s: f64) -> Result<Matrix> {
    if m.nrows() != m.ncols() {
        return Err(Error::dim(format!(
            "matrix exponential needs a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if !s.is_finite() {
        return Err(Error::param("exponent scale must be finite"));
    }
    Ok(expm_unchecked(m, s))
}

pub(crate) fn expm_unchecked(m: &Matrix, s: f64) -> Matrix {
    let n = m.nrows();
    let mut scaled = m * s;
    let norm = one_norm(&scaled);
    let mut squarings = 0u32;
    if norm > 0.5 {
        squarings = (norm / 0.5).log2().ceil() as u32;
        scaled /= 2f64.powi(squarings as i32);
    }
    let mut result = Matrix::identity(n, n);
    let mut term = Matrix::identity(n, n);
    for k in 1..=20 {
        term = &term * &scaled / k as f64;
        result += &term;
        if one_norm(&term) <= f64::EPSILON * 1e-3 * one_norm(&result) {
            break;
        }
    }
    for _ in 0..squarings {
        result = &result * &result;
    }
    result
}

fn one_norm(m: &Matrix) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `[B, AB, ..., A^{n-1}B]`, an n x (n d) matrix.
pub fn kalman_matrix(sys: &OuSystem) -> Matrix {
    let n = sys.state_dim();
    let d = sys.noise_dim();
    let mut out = Matrix::zeros(n, n * d);
    let mut block = sys.b.clone();
    for k in 0..n {
        out.view_mut((0, k * d), (n, d)).copy_from(&block);
        block = &sys.a * &block;
    }
    out
}

/// Numerical rank: singular values above `tol * sigma_max`.
pub fn numerical_rank(m: &Matrix, tol: f64) -> usize {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&v| v > tol * max).count()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankReport {
    pub rank: usize,
    pub satisfied: bool,
}

/// Controllability rank condition `Rank[B, AB, ..., A^{n-1}B] = n`.
pub fn rank_condition(sys: &OuSystem, tol: f64) -> Result<RankReport> {
    if !(tol > 0.0) {
        return Err(Error::param(format!("rank tolerance must be positive, got {tol}")));
    }
    let rank = numerical_rank(&kalman_matrix(sys), tol);
    Ok(RankReport {
        rank,
        satisfied: rank == sys.state_dim(),
    })
}

/// Controllability Gramian `int_0^t e^{sA} B B* e^{sA*} ds` by Gauss-Legendre.
pub fn gramian(sys: &OuSystem, t: f64, quad_nodes: usize) -> Result<Matrix> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::param(format!("Gramian horizon must be positive, got {t}")));
    }
    if quad_nodes < 2 {
        return Err(Error::param("Gramian quadrature needs at least 2 nodes"));
    }
    let n = sys.state_dim();
    let rule = GaussLegendre::new(quad_nodes);
    let bbt = &sys.b * sys.b.transpose();
    let mut g = Matrix::zeros(n, n);
    for (s, w) in rule.mapped(0.0, t) {
        let e = expm_unchecked(&sys.a, s);
        g += (&e * &bbt * e.transpose()) * w;
    }
    // symmetrize away rounding
    let gt = g.transpose();
    Ok((g + gt) * 0.5)
}

/// Smallest eigenvalue of the Gramian: the constant `C_t` in
/// `int_0^t |B* e^{sA*} u|^2 ds >= C_t |u|^2`.
pub fn gramian_floor(sys: &OuSystem, t: f64) -> Result<f64> {
    let g = gramian(sys, t, DEFAULT_GRAMIAN_NODES)?;
    Ok(min_eigenvalue(&g))
}

pub fn min_eigenvalue(sym: &Matrix) -> f64 {
    SymmetricEigen::new(sym.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Symmetric PSD square root; tiny negative eigenvalues are clipped.
pub fn psd_sqrt(sym: &Matrix) -> Matrix {
    let eig = SymmetricEigen::new(sym.clone());
    let vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * Matrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

/// Whether `(y_1..y_m) -> sum_j e^{s_j A} B y_j` maps onto R^n.
pub fn onto_check(sys: &OuSystem, times: &[f64], tol: f64) -> Result<bool> {
    if times.is_empty() {
        return Err(Error::param("onto check needs at least one time"));
    }
    if times.iter().any(|&s| !(s >= 0.0) || !s.is_finite()) {
        return Err(Error::param("times must be finite and nonnegative"));
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::param("times must be strictly increasing"));
    }
    if !(tol > 0.0) {
        return Err(Error::param("rank tolerance must be positive"));
    }
    let n = sys.state_dim();
    let d = sys.noise_dim();
    let mut stacked = Matrix::zeros(n, d * times.len());
    for (j, &s) in times.iter().enumerate() {
        let block = expm_unchecked(&sys.a, s) * &sys.b;
        stacked.view_mut((0, j * d), (n, d)).copy_from(&block);
    }
    Ok(numerical_rank(&stacked, tol) == n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn sys(a: &[f64], b: &[f64], n: usize, d: usize) -> OuSystem {
        OuSystem::new(
            Matrix::from_row_slice(n, n, a),
            Matrix::from_row_slice(n, d, b),
        )
        .unwrap()
    }

    #[test]
    fn exp_of_zero_scale_is_identity() {
        let m = Matrix::from_row_slice(3, 3, &[1.0, 2.0, 3.0, -4.0, 5.0, 6.0, 7.0, 8.0, -9.0]);
        assert_eq!(mat_exp(&m, 0.0).unwrap(), Matrix::identity(3, 3));
    }

    #[test]
    fn exp_of_nilpotent_is_affine() {
        let a = OuSystem::kolmogorov().a().clone();
        for s in [0.3, 1.0, 7.5] {
            let e = mat_exp(&a, s).unwrap();
            let expect = Matrix::from_row_slice(2, 2, &[1.0, 0.0, s, 1.0]);
            assert_relative_eq!(e, expect, epsilon = 1e-15);
        }
    }

    #[test]
    fn exp_of_scalar() {
        let e = mat_exp(&Matrix::from_element(1, 1, -1.0), 1.0).unwrap();
        assert_relative_eq!(e[(0, 0)], 0.367_879_441_171_442_3, max_relative = 1e-14);
    }

    #[test]
    fn exp_of_rotation_generator() {
        let m = Matrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        let e = mat_exp(&m, 10.0).unwrap();
        assert_relative_eq!(e[(0, 0)], 10f64.cos(), epsilon = 1e-12);
        assert_relative_eq!(e[(1, 0)], 10f64.sin(), epsilon = 1e-12);
    }

    #[test]
    fn exp_rejects_non_square() {
        assert!(matches!(mat_exp(&Matrix::zeros(2, 3), 1.0), Err(Error::Dimension(_))));
    }

    #[test]
    fn kalman_matrix_examples() {
        assert_eq!(kalman_matrix(&OuSystem::kolmogorov()), Matrix::identity(2, 2));
        let zero_drift = sys(&[0.0; 4], &[1.0, 2.0], 2, 1);
        assert_eq!(
            kalman_matrix(&zero_drift),
            Matrix::from_row_slice(2, 2, &[1.0, 0.0, 2.0, 0.0])
        );
        let scalar = sys(&[-1.0], &[2.0], 1, 1);
        assert_eq!(kalman_matrix(&scalar), Matrix::from_element(1, 1, 2.0));
    }

    #[test]
    fn rank_condition_examples() {
        let r = rank_condition(&OuSystem::kolmogorov(), DEFAULT_RANK_TOL).unwrap();
        assert_eq!(r, RankReport { rank: 2, satisfied: true });
        let deficient = sys(&[0.0; 4], &[1.0, 0.0], 2, 1);
        let r = rank_condition(&deficient, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(r, RankReport { rank: 1, satisfied: false });
        let full = sys(&[1.0, 0.0, 0.0, 1.0], &[1.0, 0.0, 0.0, 1.0], 2, 2);
        assert!(rank_condition(&full, DEFAULT_RANK_TOL).unwrap().satisfied);
        assert!(matches!(rank_condition(&full, 0.0), Err(Error::Parameter(_))));
        let zero_noise = sys(&[0.0, 0.0, 1.0, 0.0], &[0.0, 0.0], 2, 1);
        assert_eq!(rank_condition(&zero_noise, DEFAULT_RANK_TOL).unwrap().rank, 0);
    }

    #[test]
    fn gramian_examples() {
        let g = gramian(&sys(&[0.0; 4], &[1.0, 0.0, 0.0, 1.0], 2, 2), 2.0, 64).unwrap();
        assert_relative_eq!(g, Matrix::identity(2, 2) * 2.0, epsilon = 1e-13);

        // integrand [[1, s], [s, s^2]] integrates to [[1, 1/2], [1/2, 1/3]]
        let g = gramian(&OuSystem::kolmogorov(), 1.0, 64).unwrap();
        let expect = Matrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0 / 3.0]);
        assert_relative_eq!(g, expect, epsilon = 1e-13);

        let g = gramian(&sys(&[-1.0], &[1.0], 1, 1), 1.0, 64).unwrap();
        assert_relative_eq!(g[(0, 0)], (1.0 - (-2f64).exp()) / 2.0, max_relative = 1e-13);

        assert!(gramian(&OuSystem::kolmogorov(), 0.0, 64).is_err());
    }

    #[test]
    fn gramian_floor_examples() {
        let f = gramian_floor(&sys(&[0.0; 4], &[1.0, 0.0, 0.0, 1.0], 2, 2), 2.0).unwrap();
        assert_relative_eq!(f, 2.0, epsilon = 1e-12);
        let f = gramian_floor(&sys(&[0.0; 4], &[1.0, 0.0], 2, 1), 1.0).unwrap();
        assert!(f.abs() < 1e-12);
        // eigenvalue of [[1, 1/2], [1/2, 1/3]]: (tr - sqrt(tr^2 - 4 det)) / 2
        let (tr, det): (f64, f64) = (4.0 / 3.0, 1.0 / 3.0 - 0.25);
        let oracle = (tr - (tr * tr - 4.0 * det).sqrt()) / 2.0;
        let f = gramian_floor(&OuSystem::kolmogorov(), 1.0).unwrap();
        assert_relative_eq!(f, oracle, max_relative = 1e-12);
        assert!((f - 0.0657).abs() < 1e-4);
    }

    #[test]
    fn onto_examples() {
        let k = OuSystem::kolmogorov();
        assert!(onto_check(&k, &[0.0, 0.5, 0.7], DEFAULT_RANK_TOL).unwrap());
        assert!(!onto_check(&k, &[0.0], DEFAULT_RANK_TOL).unwrap());
        let id = sys(&[1.0, 0.0, 0.0, 1.0], &[1.0, 0.0, 0.0, 1.0], 2, 2);
        assert!(onto_check(&id, &[0.1, 0.2], DEFAULT_RANK_TOL).unwrap());
        assert!(matches!(
            onto_check(&k, &[0.5, 0.1], DEFAULT_RANK_TOL),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn system_validation() {
        assert!(OuSystem::new(Matrix::zeros(2, 3), Matrix::zeros(2, 1)).is_err());
        assert!(OuSystem::new(Matrix::zeros(2, 2), Matrix::zeros(3, 1)).is_err());
        let mut a = Matrix::zeros(1, 1);
        a[(0, 0)] = f64::NAN;
        assert!(OuSystem::new(a, Matrix::zeros(1, 1)).is_err());
    }
}
