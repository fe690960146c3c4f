//! Dense linear-algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

/// Relative threshold below which a singular value counts as zero.
pub const RANK_TOL: f64 = 1e-9;

/// Singular values of `m` in descending order.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.is_empty() {
        return Vec::new();
    }
    let mut s: Vec<f64> = m.clone().singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Numerical rank: singular values below `rel_tol * sigma_max` count as zero.
pub fn numerical_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    let s = singular_values(m);
    match s.first() {
        None => 0,
        Some(0.0) => 0,
        Some(&smax) => s.iter().filter(|&&x| x > rel_tol * smax).count(),
    }
}

/// Numerical rank after diagonal row/column equilibration.
///
/// Rank is invariant under nonsingular diagonal scaling, so balancing the
/// rows and columns first removes unit-induced spread in the singular values.
pub fn equilibrated_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    numerical_rank(&equilibrate(m), rel_tol)
}

/// Alternately scales rows and columns to unit infinity norm (powers of two, so exact).
pub fn equilibrate(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    let pow2 = |x: f64| 2f64.powi(-(x.log2().round() as i32));
    for _ in 0..8 {
        for i in 0..out.nrows() {
            let n = out.row(i).amax();
            if n > 0.0 {
                let s = pow2(n);
                out.row_mut(i).scale_mut(s);
            }
        }
        for j in 0..out.ncols() {
            let n = out.column(j).amax();
            if n > 0.0 {
                let s = pow2(n);
                out.column_mut(j).scale_mut(s);
            }
        }
    }
    out
}

/// Spectral norm (largest singular value).
pub fn norm2(m: &DMatrix<f64>) -> f64 {
    singular_values(m).first().copied().unwrap_or(0.0)
}

/// Eigenvalues of a symmetric matrix in ascending order.
///
/// Only the lower triangle is read; the matrix is symmetrized first.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let sym = symmetrize(m);
    let mut e: Vec<f64> = sym.symmetric_eigenvalues().iter().copied().collect();
    e.sort_by(|a, b| a.total_cmp(b));
    e
}

/// Largest eigenvalue of a symmetric matrix.
pub fn sym_max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m)
        .last()
        .copied()
        .unwrap_or(f64::NEG_INFINITY)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn sym_min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).first().copied().unwrap_or(f64::INFINITY)
}

/// `(m + mᵀ) / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Eigenvalues of a general square matrix, sorted by real part then imaginary part.
pub fn eigenvalues(m: &DMatrix<f64>) -> Vec<Complex64> {
    if m.is_empty() {
        return Vec::new();
    }
    let mut e: Vec<Complex64> = m.clone().complex_eigenvalues().iter().copied().collect();
    sort_complex(&mut e);
    e
}

/// Sorts complex numbers by real part, then imaginary part.
pub fn sort_complex(v: &mut [Complex64]) {
    v.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
}

/// Smallest singular value of `m - lambda I`: the eigenpair residual `min ‖(A − λI)v‖` over unit `v`.
pub fn eigen_residual(m: &DMatrix<f64>, lambda: Complex64) -> f64 {
    let n = m.nrows();
    let shifted = DMatrix::<Complex64>::from_fn(n, n, |i, j| {
        let d = if i == j {
            lambda
        } else {
            Complex64::new(0.0, 0.0)
        };
        Complex64::new(m[(i, j)], 0.0) - d
    });
    shifted
        .singular_values()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Block-diagonal concatenation.
pub fn block_diag(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(*b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// Dense matrix from row slices.
pub fn from_rows(rows: &[&[f64]]) -> DMatrix<f64> {
    let nr = rows.len();
    let nc = rows.first().map_or(0, |r| r.len());
    DMatrix::from_fn(nr, nc, |i, j| rows[i][j])
}

/// Largest absolute entry.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |a, &x| a.max(x.abs()))
}

/// Column vector from a slice.
pub fn col(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_of_rank_deficient_matrix() {
        let m = from_rows(&[&[1.0, 2.0], &[2.0, 4.0]]);
        assert_eq!(numerical_rank(&m, RANK_TOL), 1);
        assert_eq!(numerical_rank(&DMatrix::identity(3, 3), RANK_TOL), 3);
        assert_eq!(numerical_rank(&DMatrix::zeros(2, 2), RANK_TOL), 0);
    }

    #[test]
    fn equilibration_preserves_rank() {
        let m = from_rows(&[&[1e9, 1e-3], &[2e9, 2e-3]]);
        assert_eq!(equilibrated_rank(&m, RANK_TOL), 1);
        let m = from_rows(&[&[1e9, 0.0], &[0.0, 1e-3]]);
        assert_eq!(numerical_rank(&m, RANK_TOL), 1);
        assert_eq!(equilibrated_rank(&m, RANK_TOL), 2);
    }

    #[test]
    fn eigenvalues_of_diagonal_and_rotation() {
        let d = from_rows(&[&[-1.0, 0.0], &[0.0, -2.0]]);
        let e = eigenvalues(&d);
        assert!((e[0].re + 2.0).abs() < 1e-14 && (e[1].re + 1.0).abs() < 1e-14);
        let r = from_rows(&[&[0.0, 1.0], &[-1.0, 0.0]]);
        let e = eigenvalues(&r);
        assert!(e[0].re.abs() < 1e-14 && (e[0].im + 1.0).abs() < 1e-14);
        assert!((e[1].im - 1.0).abs() < 1e-14);
        for l in e {
            assert!(eigen_residual(&r, l) < 1e-12);
        }
    }

    #[test]
    fn block_diag_places_blocks() {
        let a = DMatrix::from_element(1, 1, 2.0);
        let b = from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let m = block_diag(&[&a, &b]);
        assert_eq!(m.shape(), (3, 3));
        assert_eq!(m[(0, 0)], 2.0);
        assert_eq!(m[(2, 1)], 3.0);
        assert_eq!(m[(0, 2)], 0.0);
    }

    #[test]
    fn symmetric_extremes() {
        let m = from_rows(&[&[2.0, 1.0], &[1.0, 2.0]]);
        assert!((sym_min_eigenvalue(&m) - 1.0).abs() < 1e-14);
        assert!((sym_max_eigenvalue(&m) - 3.0).abs() < 1e-14);
        assert!((norm2(&m) - 3.0).abs() < 1e-14);
    }
}
