//! Small dense linear-algebra helpers shared across the crate.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Eigenvalues below this fraction of the largest one are clamped when
/// taking matrix powers.
pub const EIGEN_CLAMP: f64 = 1e-14;

pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut dev = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            dev = dev.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    dev
}

/// Relative symmetry check: `|m - mᵀ| <= tol * max(1, |m|_max)`.
pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    m.is_square() && max_asymmetry(m) <= tol * m.amax().max(1.0)
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted
/// descending (columns of the returned matrix follow the same order).
pub fn sym_eigen_sorted(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(symmetrize(m));
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (k, &i) in order.iter().enumerate() {
        vectors.set_column(k, &eig.eigenvectors.column(i));
    }
    (values, vectors)
}

/// `V diag(g(λ)) Vᵀ` for symmetric `m`, with eigenvalues clamped from below
/// at `EIGEN_CLAMP` times the largest.
fn sym_apply(m: &DMatrix<f64>, g: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let top = eig.eigenvalues.amax();
    let floor = EIGEN_CLAMP * top;
    let vals = eig.eigenvalues.map(|l| g(l.max(floor)));
    let v = &eig.eigenvectors;
    v * DMatrix::from_diagonal(&vals) * v.transpose()
}

pub fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    sym_apply(m, f64::sqrt)
}

pub fn sym_inv_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    sym_apply(m, |l| 1.0 / l.sqrt())
}

/// Factor `L` with `L Lᵀ = cov` for a PSD covariance; negative eigenvalues
/// (roundoff) are treated as zero so degenerate covariances are allowed.
pub fn psd_factor(cov: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(cov));
    let scale = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&scale)
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(symmetrize(m)).eigenvalues.min()
}

/// Ratio of extreme absolute eigenvalues of a symmetric matrix.
pub fn sym_condition(m: &DMatrix<f64>) -> f64 {
    let ev = SymmetricEigen::new(symmetrize(m)).eigenvalues.map(f64::abs);
    let lo = ev.min();
    if lo == 0.0 {
        f64::INFINITY
    } else {
        ev.max() / lo
    }
}

/// 2-norm condition number via singular values (general matrices).
pub fn condition(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().singular_values();
    let lo = sv.min();
    if lo == 0.0 {
        f64::INFINITY
    } else {
        sv.max() / lo
    }
}

/// Rotation matrix of a unit quaternion given as `[w, x, y, z]`.
/// The quaternion is normalized; a zero quaternion is rejected.
pub fn quaternion_rotation(q: [f64; 4]) -> Result<DMatrix<f64>> {
    let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::InvalidConfig("quaternion has zero norm".into()));
    }
    let [w, x, y, z] = q.map(|v| v / norm);
    Ok(DMatrix::from_row_slice(
        3,
        3,
        &[
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ],
    ))
}

pub fn planar_rotation(angle: f64) -> DMatrix<f64> {
    let (s, c) = angle.sin_cos();
    DMatrix::from_row_slice(2, 2, &[c, -s, s, c])
}

/// `xᵀ M x`.
pub fn quad(m: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    let mut acc = 0.0;
    for j in 0..x.len() {
        acc += x[j] * m.column(j).dot(x);
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sqrt_squares_back() {
        let m = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let r = sym_sqrt(&m);
        assert!((&r * &r - &m).amax() < 1e-12);
        let ir = sym_inv_sqrt(&m);
        assert!((&ir * &r - DMatrix::identity(3, 3)).amax() < 1e-12);
    }

    #[test]
    fn quaternion_identity_and_quarter_turn() {
        let r = quaternion_rotation([1.0, 0.0, 0.0, 0.0]).unwrap();
        assert!((r - DMatrix::identity(3, 3)).amax() < 1e-15);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let r = quaternion_rotation([h, 0.0, 0.0, h]).unwrap();
        let x = r * DVector::from_vec(vec![1.0, 0.0, 0.0]);
        assert!((x - DVector::from_vec(vec![0.0, 1.0, 0.0])).amax() < 1e-12);
    }

    #[test]
    fn psd_factor_handles_zero() {
        let l = psd_factor(&DMatrix::zeros(2, 2));
        assert_eq!(l.amax(), 0.0);
    }

    #[test]
    fn sorted_eigen_descending() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 5.0, 3.0]));
        let (v, _) = sym_eigen_sorted(&m);
        assert_eq!(v.as_slice(), &[5.0, 3.0, 1.0]);
    }
}
