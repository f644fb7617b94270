//! Two cheap comparison methods: an n-σ bounding-volume check and the
//! center-point density approximation.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geometry::{intersects, make_ellipsoid, Ellipsoid};
use crate::linalg::{self, quad};

pub const DEFAULT_N_SIGMA: f64 = 3.0;

/// Robot ellipsoid grown by the `n_sigma` confidence region of `sigma`.
///
/// The Minkowski sum of two ellipsoids is not an ellipsoid. Each robot
/// semi-axis `aᵢ` is extended by `n_sigma` times the standard deviation of
/// `sigma` along that axis, which equals `n_sigma sqrt(λᵢ(Σ))` when the two
/// frames are aligned.
pub fn inflate(robot: &Ellipsoid, sigma: &DMatrix<f64>, n_sigma: f64) -> Result<Ellipsoid> {
    let (axes, rot) = robot.principal_axes();
    let n = axes.len();
    if sigma.nrows() != n || sigma.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: sigma.nrows(),
        });
    }
    let grown = DVector::from_iterator(
        n,
        (0..n).map(|i| {
            let dir = rot.column(i).into_owned();
            axes[i] + n_sigma * quad(sigma, &dir).max(0.0).sqrt()
        }),
    );
    make_ellipsoid(&grown, &rot, robot.center())
}

/// 1 if the inflated robot intersects the obstacle, else 0.
pub fn bounding_volume_check(
    robot: &Ellipsoid,
    obstacle: &Ellipsoid,
    sigma: &DMatrix<f64>,
    n_sigma: f64,
) -> Result<f64> {
    if !(n_sigma > 0.0) {
        return Err(Error::InvalidConfig(format!("n_sigma must be positive, got {n_sigma}")));
    }
    let grown = inflate(robot, sigma, n_sigma)?;
    Ok(if intersects(obstacle, &grown)? { 1.0 } else { 0.0 })
}

/// Robot volume times the density of the relative position at zero offset.
pub fn center_point_probability(robot: &Ellipsoid, obstacle: &Ellipsoid, sigma: &DMatrix<f64>) -> Result<f64> {
    let n = robot.dim();
    if sigma.nrows() != n || sigma.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: sigma.nrows(),
        });
    }
    let (sv, _) = linalg::sym_eigen_sorted(sigma);
    if !(sv[n - 1] > 1e-12 * sv[0]) {
        return Err(Error::SingularSigma);
    }
    let inv = sigma.clone().try_inverse().ok_or(Error::SingularSigma)?;
    let mu = obstacle.center() - robot.center();
    let norm = ((2.0 * std::f64::consts::PI).powi(n as i32) * sigma.determinant()).sqrt();
    let density = (-0.5 * quad(&inv, &mu)).exp() / norm;
    Ok((robot.volume() * density).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(gap: f64) -> (Ellipsoid, Ellipsoid) {
        (
            Ellipsoid::axis_aligned(&[0.2, 0.2, 0.1], &[0.0, 0.0, 0.0]).unwrap(),
            Ellipsoid::sphere(1.0, &[1.2 + gap, 0.0, 0.0]).unwrap(),
        )
    }

    #[test]
    fn zero_covariance_matches_intersects() {
        let z = DMatrix::zeros(3, 3);
        for gap in [-0.3, -0.01, 0.01, 0.5] {
            let (r, o) = setup(gap);
            let expect = if intersects(&o, &r).unwrap() { 1.0 } else { 0.0 };
            assert_eq!(bounding_volume_check(&r, &o, &z, 3.0).unwrap(), expect);
        }
        let (r, o) = setup(0.5);
        assert_eq!(bounding_volume_check(&r, &o, &z, 3.0).unwrap(), 0.0);
    }

    #[test]
    fn inflation_reaches_across_gap() {
        let (r, o) = setup(0.5);
        let s = DMatrix::identity(3, 3) * 0.04; // σ = 0.2, 3σ = 0.6
        assert_eq!(bounding_volume_check(&r, &o, &s, 3.0).unwrap(), 1.0);
        assert_eq!(bounding_volume_check(&r, &o, &s, 2.0).unwrap(), 0.0);
    }

    #[test]
    fn inflation_along_aligned_axes() {
        let r = Ellipsoid::axis_aligned(&[0.2, 0.3, 0.1], &[0.0; 3]).unwrap();
        let s = DMatrix::from_diagonal(&DVector::from_vec(vec![0.01, 0.04, 0.09]));
        let g = inflate(&r, &s, 3.0).unwrap();
        let (axes, _) = g.principal_axes();
        let mut got: Vec<f64> = axes.iter().copied().collect();
        got.sort_by(f64::total_cmp);
        let expect = [0.2 + 0.3, 0.3 + 0.6, 0.1 + 0.9];
        let mut expect = expect.to_vec();
        expect.sort_by(f64::total_cmp);
        for (a, b) in got.iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn center_point_vanishes_far_and_wide() {
        let (r, o) = setup(10.0);
        let small = DMatrix::identity(3, 3) * 0.01;
        assert!(center_point_probability(&r, &o, &small).unwrap() < 1e-100);
        let (r, o) = setup(0.2);
        let p1 = center_point_probability(&r, &o, &(DMatrix::identity(3, 3) * 1e2)).unwrap();
        let p2 = center_point_probability(&r, &o, &(DMatrix::identity(3, 3) * 1e6)).unwrap();
        assert!(p2 < p1 && p2 < 1e-9);
    }

    #[test]
    fn center_point_singular() {
        let (r, o) = setup(0.2);
        assert_eq!(
            center_point_probability(&r, &o, &DMatrix::zeros(3, 3)),
            Err(Error::SingularSigma)
        );
    }
}
