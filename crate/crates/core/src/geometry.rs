//! Ellipsoids, the contact point between two ellipsoids, and the
//! deterministic collision condition derived from it.
//!
//! An ellipsoid is the set `{x : (x - a)ᵀ A (x - a) <= 1}` with `A` symmetric
//! positive definite. For two ellipsoids `E1 = (B, b)` and `E2 = (C, c)`,
//! [`contact_point`] finds the point of `E2` where the level surfaces of `E1`
//! first touch it, and packs the result into a quadratic collision test on the
//! center offset `y = c - b`:
//!
//! ```text
//! yᵀ A y <= 1 / λ₀²,   A = Dᵀ B D,   D = B^{-1/2} (λ₀ I - C̃)^{-1} B^{1/2}
//! ```
//!
//! where `λ₀` is the smallest real eigenvalue of the `2n x 2n` matrix
//! `M' = [[C̃, -I], [-c̃ c̃ᵀ, C̃]]`. For a fixed configuration this test is
//! exact. When `y` is random, `A` and `λ₀` are frozen at the mean configuration
//! and the test becomes a Gaussian quadratic form (see [`crate::quadform`]).
//! The frozen form is a good approximation when the configuration is near
//! contact and degrades for configurations deep in collision, where `E1`'s
//! center lies well inside `E2`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::linalg::{self, quad, sym_inv_sqrt, sym_sqrt};

const SYMMETRY_TOL: f64 = 1e-12;
const ROTATION_TOL: f64 = 1e-10;
const COINCIDENT_TOL: f64 = 1e-12;
const IMAG_TOL: f64 = 1e-9;
const MAX_SHIFT_CONDITION: f64 = 1e12;

/// `{x : (x - center)ᵀ shape (x - center) <= 1}`, in two or three dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Ellipsoid {
    shape: DMatrix<f64>,
    center: DVector<f64>,
}

impl Ellipsoid {
    pub fn new(shape: DMatrix<f64>, center: DVector<f64>) -> Result<Self> {
        let n = center.len();
        check_dimension(n)?;
        if shape.nrows() != n || shape.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: shape.nrows(),
            });
        }
        if !linalg::is_symmetric(&shape, SYMMETRY_TOL) {
            return Err(Error::NonSymmetric {
                deviation: linalg::max_asymmetry(&shape),
            });
        }
        let shape = linalg::symmetrize(&shape);
        let min_eig = linalg::min_eigenvalue(&shape);
        if !(min_eig > 0.0) {
            return Err(Error::NotPositiveDefinite {
                min_eigenvalue: min_eig,
            });
        }
        Ok(Self { shape, center })
    }

    /// Axis-aligned ellipsoid with the given semi-axes.
    pub fn axis_aligned(semi_axes: &[f64], center: &[f64]) -> Result<Self> {
        let n = semi_axes.len();
        make_ellipsoid(
            &DVector::from_column_slice(semi_axes),
            &DMatrix::identity(n, n),
            &DVector::from_column_slice(center),
        )
    }

    pub fn sphere(radius: f64, center: &[f64]) -> Result<Self> {
        Self::axis_aligned(&vec![radius; center.len()], center)
    }

    pub fn shape(&self) -> &DMatrix<f64> {
        &self.shape
    }

    pub fn center(&self) -> &DVector<f64> {
        &self.center
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    /// Same shape, moved to `center`.
    pub fn translated_to(&self, center: DVector<f64>) -> Self {
        assert_eq!(center.len(), self.dim());
        Self {
            shape: self.shape.clone(),
            center,
        }
    }

    pub fn contains(&self, p: &DVector<f64>) -> bool {
        quad(&self.shape, &(p - &self.center)) <= 1.0
    }

    /// Semi-axis lengths (descending) and the rotation whose columns are the
    /// corresponding principal directions.
    pub fn principal_axes(&self) -> (DVector<f64>, DMatrix<f64>) {
        let (vals, vecs) = linalg::sym_eigen_sorted(&self.shape);
        // largest eigenvalue of the shape is the shortest axis; reverse so the
        // axes come out descending
        let n = vals.len();
        let axes = DVector::from_iterator(n, (0..n).rev().map(|i| 1.0 / vals[i].sqrt()));
        let mut rot = DMatrix::zeros(n, n);
        for (k, i) in (0..n).rev().enumerate() {
            rot.set_column(k, &vecs.column(i));
        }
        (axes, rot)
    }

    /// Area (2D) or volume (3D).
    pub fn volume(&self) -> f64 {
        let unit = match self.dim() {
            2 => std::f64::consts::PI,
            _ => 4.0 / 3.0 * std::f64::consts::PI,
        };
        unit / self.shape.determinant().sqrt()
    }
}

fn check_dimension(n: usize) -> Result<()> {
    if n == 2 || n == 3 {
        Ok(())
    } else {
        Err(Error::UnsupportedDimension(n))
    }
}

/// Builds `R diag(1/aᵢ²) Rᵀ` centered at `center`.
pub fn make_ellipsoid(semi_axes: &DVector<f64>, rotation: &DMatrix<f64>, center: &DVector<f64>) -> Result<Ellipsoid> {
    let n = semi_axes.len();
    check_dimension(n)?;
    if center.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: center.len(),
        });
    }
    if rotation.nrows() != n || rotation.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: rotation.nrows(),
        });
    }
    for (index, &value) in semi_axes.iter().enumerate() {
        if !(value > 0.0) || !value.is_finite() {
            return Err(Error::NonPositiveAxis { index, value });
        }
    }
    let deviation = (rotation.transpose() * rotation - DMatrix::identity(n, n)).amax();
    if !(deviation <= ROTATION_TOL) {
        return Err(Error::NonOrthonormalRotation { deviation });
    }
    let inv_sq = semi_axes.map(|a| 1.0 / (a * a));
    let shape = rotation * DMatrix::from_diagonal(&inv_sq) * rotation.transpose();
    Ellipsoid::new(linalg::symmetrize(&shape), center.clone())
}

/// Output of [`contact_point`].
#[derive(Debug, Clone, PartialEq)]
pub struct ContactResult {
    /// Point of `E2` where the level surfaces of `E1` first touch it.
    pub x_star: DVector<f64>,
    /// Smallest real eigenvalue of `M'`.
    pub lambda0: f64,
    /// `1 / λ₀²`.
    pub threshold: f64,
    /// `A = Dᵀ B D`.
    pub collision_matrix: DMatrix<f64>,
}

impl ContactResult {
    /// `yᵀ A y - 1/λ₀²`; non-positive means collision.
    pub fn margin(&self, offset: &DVector<f64>) -> f64 {
        quad(&self.collision_matrix, offset) - self.threshold
    }
}

fn coincident(b: &DVector<f64>, c: &DVector<f64>) -> bool {
    let scale = 1.0f64.max(b.amax()).max(c.amax());
    (c - b).amax() <= COINCIDENT_TOL * scale
}

/// Shape-dependent part of the contact computation for `E1 = (B, ·)` and
/// `E2 = (C, ·)`, reusable for any pair of centers.
///
/// With `C̄ = B^{-1/2} C B^{-1/2}` fixed, only `c̃ = C̄^{-1/2} B^{1/2} (c - b)`
/// depends on the centers. In the eigenbasis `C̃ = C̄⁻¹ = V diag(γ) Vᵀ`, the
/// real eigenvalues of `M'` below `min γ` are the roots of
/// `Σ tᵢ² / (γᵢ - λ)² = 1` with `t = Vᵀ c̃`, and there is exactly one. It is
/// found by safeguarded Newton iteration on `s(λ)^{-1/2} - 1`.
///
/// With `Q = Vᵀ B^{1/2}`, `P = B^{-1/2} V` and `gᵢ = 1 / (λ₀ - γᵢ)`, the
/// outputs reduce to `A = Qᵀ diag(g²) Q` and `x* = b + λ₀ P (g ∘ Q (c - b))`.
#[derive(Debug, Clone)]
pub struct ContactSolver {
    b_shape: DMatrix<f64>,
    c_shape: DMatrix<f64>,
    q: DMatrix<f64>,
    p: DMatrix<f64>,
    /// Eigenvalues of `C̃`, ascending.
    gammas: DVector<f64>,
    root_gammas: DVector<f64>,
}

/// `λ₀`, the rotated offset `s = Q (c - b)` and `g`. In the hard case `g`
/// is empty and `t` is kept instead.
struct Shift {
    lambda0: f64,
    s: DVector<f64>,
    g: DVector<f64>,
    hard: Option<DVector<f64>>,
}

enum Root {
    Regular(f64),
    Hard,
}

impl ContactSolver {
    pub fn new(e1: &Ellipsoid, e2: &Ellipsoid) -> Result<Self> {
        let n = e1.dim();
        if e2.dim() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: e2.dim(),
            });
        }
        let b_half = sym_sqrt(&e1.shape);
        let b_neg_half = sym_inv_sqrt(&e1.shape);
        let c_bar = linalg::symmetrize(&(&b_neg_half * &e2.shape * &b_neg_half));
        let (values, vectors) = linalg::sym_eigen_sorted(&c_bar);
        if !(values[n - 1] > 0.0) {
            return Err(Error::NotPositiveDefinite {
                min_eigenvalue: values[n - 1],
            });
        }
        // descending eigenvalues of C̄ are ascending eigenvalues of C̃
        let gammas = values.map(|v| 1.0 / v);
        Ok(Self {
            b_shape: e1.shape.clone(),
            c_shape: e2.shape.clone(),
            q: vectors.tr_mul(&b_half),
            p: b_neg_half * &vectors,
            root_gammas: gammas.map(f64::sqrt),
            gammas,
        })
    }

    /// Root of the secular equation. Components of `t` along the smallest
    /// `γ` that are negligible are treated as zero; if the remaining terms
    /// stay below 1 up to `γ_min` there is no root below it and
    /// `λ₀ = γ_min` ([`Root::Hard`]).
    fn secular_root(&self, t: &DVector<f64>) -> Root {
        let g = &self.gammas;
        let g_min = g[0];
        let norm = t.norm();
        let cluster: Vec<bool> = g.iter().map(|&x| x - g_min <= 1e-12 * g_min.abs().max(1.0)).collect();
        let near_min: f64 = (0..g.len()).filter(|&i| cluster[i]).map(|i| t[i] * t[i]).sum();
        let degenerate = !(near_min > 1e-24 * norm * norm);
        let s = |lam: f64| -> (f64, f64) {
            let mut s = 0.0;
            let mut ds = 0.0;
            for i in 0..g.len() {
                if degenerate && cluster[i] {
                    continue;
                }
                let r = 1.0 / (g[i] - lam);
                let w = t[i] * t[i] * r * r;
                s += w;
                ds += 2.0 * w * r;
            }
            (s, ds)
        };
        let mut hi = if degenerate {
            if s(g_min).0 <= 1.0 {
                return Root::Hard;
            }
            g_min
        } else {
            g_min - near_min.sqrt()
        };
        // φ(λ) = s^{-1/2} - 1 decreases from +∞ to below 0 on (-∞, hi]
        let mut lo = g_min - norm;
        let mut lam = if degenerate { 0.5 * (lo + hi) } else { hi };
        for _ in 0..200 {
            let (sv, ds) = s(lam);
            let phi = 1.0 / sv.sqrt() - 1.0;
            if phi > 0.0 {
                lo = lam;
            } else {
                hi = lam;
            }
            let dphi = -0.5 * ds / (sv * sv.sqrt());
            let mut next = lam - phi / dphi;
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            let done = (next - lam).abs() <= 4.0 * f64::EPSILON * lam.abs().max(1.0);
            lam = next;
            if done || hi - lo <= 4.0 * f64::EPSILON * lam.abs().max(1.0) {
                break;
            }
        }
        Root::Regular(lam)
    }

    fn shift(&self, b: &DVector<f64>, c: &DVector<f64>) -> Result<Shift> {
        if coincident(b, c) {
            return Err(Error::CoincidentCenters);
        }
        let s = &self.q * (c - b);
        let t = s.component_mul(&self.root_gammas);
        let lambda0 = match self.secular_root(&t) {
            Root::Regular(l) => l,
            Root::Hard => {
                return Ok(Shift {
                    lambda0: self.gammas[0],
                    s,
                    g: DVector::zeros(0),
                    hard: Some(t),
                })
            }
        };
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for gamma in self.gammas.iter() {
            let gap = (lambda0 - gamma).abs();
            lo = lo.min(gap);
            hi = hi.max(gap);
        }
        let condition = hi / lo;
        if !(condition <= MAX_SHIFT_CONDITION) {
            return Err(Error::SingularShift { condition });
        }
        let g = self.gammas.map(|gamma| 1.0 / (lambda0 - gamma));
        Ok(Shift {
            lambda0,
            s,
            g,
            hard: None,
        })
    }

    /// Contact result for centers `b` (of `E1`) and `c` (of `E2`).
    ///
    /// In the hard case the collision matrix is unbounded and
    /// [`Error::SingularShift`] is returned; [`ContactSolver::margin`] still
    /// has a finite limit there.
    pub fn solve(&self, b: &DVector<f64>, c: &DVector<f64>) -> Result<ContactResult> {
        let Shift { lambda0, s, g, hard } = self.shift(b, c)?;
        if hard.is_some() {
            return Err(Error::SingularShift {
                condition: f64::INFINITY,
            });
        }
        let x_star = b + &self.p * g.component_mul(&s) * lambda0;
        let scaled = DMatrix::from_fn(self.q.nrows(), self.q.ncols(), |i, j| g[i] * self.q[(i, j)]);
        Ok(ContactResult {
            x_star,
            lambda0,
            threshold: 1.0 / (lambda0 * lambda0),
            collision_matrix: scaled.tr_mul(&scaled),
        })
    }

    /// [`ContactResult::margin`] at the offset `c - b`, without forming
    /// the collision matrix.
    pub fn margin(&self, b: &DVector<f64>, c: &DVector<f64>) -> Result<f64> {
        let Shift { lambda0, s, g, hard } = self.shift(b, c)?;
        let threshold = 1.0 / (lambda0 * lambda0);
        let Some(t) = hard else {
            let q: f64 = s.iter().zip(g.iter()).map(|(s, g)| (s * g) * (s * g)).sum();
            return Ok(q - threshold);
        };
        // limit of the regular formula as the components along γ_min vanish,
        // using the secular equation for their share of yᵀ A y
        let gammas = &self.gammas;
        let mut q = 0.0;
        let mut used = 0.0;
        for i in 0..gammas.len() {
            let gap = lambda0 - gammas[i];
            if gap.abs() <= 1e-12 * lambda0.abs().max(1.0) {
                continue;
            }
            q += (s[i] / gap).powi(2);
            used += (t[i] / gap).powi(2);
        }
        Ok(q + (1.0 - used) / lambda0 - threshold)
    }

    /// Whether the ellipsoids centered at `b` and `c` share a point.
    ///
    /// The margin test only holds while neither center lies inside the
    /// other ellipsoid; deep overlaps can have a positive margin, so those
    /// are caught first.
    pub fn collides(&self, b: &DVector<f64>, c: &DVector<f64>) -> Result<bool> {
        let d = c - b;
        if quad(&self.b_shape, &d) <= 1.0 || quad(&self.c_shape, &d) <= 1.0 {
            return Ok(true);
        }
        Ok(self.margin(b, c)? <= 0.0)
    }
}

/// Contact point and collision matrix for `E1 = (B, b)`, `E2 = (C, c)`.
pub fn contact_point(e1: &Ellipsoid, e2: &Ellipsoid) -> Result<ContactResult> {
    ContactSolver::new(e1, e2)?.solve(&e1.center, &e2.center)
}

/// Reference computation of [`contact_point`] that takes λ₀ directly from
/// the real Schur form of the `2n x 2n` matrix `M'`.
pub fn contact_point_schur(e1: &Ellipsoid, e2: &Ellipsoid) -> Result<ContactResult> {
    let n = e1.dim();
    if e2.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: e2.dim(),
        });
    }
    let (b_mat, b) = (&e1.shape, &e1.center);
    let (c_mat, c) = (&e2.shape, &e2.center);
    if coincident(b, c) {
        return Err(Error::CoincidentCenters);
    }

    let b_half = sym_sqrt(b_mat);
    let b_neg_half = sym_inv_sqrt(b_mat);
    let c_bar = linalg::symmetrize(&(&b_neg_half * c_mat * &b_neg_half));
    let cvec_bar = &b_half * (c - b);
    let c_tilde = c_bar
        .clone()
        .try_inverse()
        .ok_or(Error::NotPositiveDefinite { min_eigenvalue: 0.0 })?;
    let c_tilde = linalg::symmetrize(&c_tilde);
    let cvec_tilde = sym_inv_sqrt(&c_bar) * &cvec_bar;

    let mut m = DMatrix::zeros(2 * n, 2 * n);
    m.view_mut((0, 0), (n, n)).copy_from(&c_tilde);
    m.view_mut((n, n), (n, n)).copy_from(&c_tilde);
    m.view_mut((0, n), (n, n)).copy_from(&(-DMatrix::<f64>::identity(n, n)));
    m.view_mut((n, 0), (n, n))
        .copy_from(&(-(&cvec_tilde * cvec_tilde.transpose())));

    let lambda0 = m
        .complex_eigenvalues()
        .iter()
        .filter(|z| z.im.abs() <= IMAG_TOL * z.re.abs().max(1.0))
        .map(|z| z.re)
        .min_by(f64::total_cmp)
        .ok_or(Error::ComplexMinimalEigenvalue)?;

    let shift = DMatrix::<f64>::identity(n, n) * lambda0 - &c_tilde;
    let condition = linalg::sym_condition(&shift);
    if !(condition <= MAX_SHIFT_CONDITION) {
        return Err(Error::SingularShift { condition });
    }
    let shift_inv = shift.try_inverse().ok_or(Error::SingularShift { condition })?;

    let x_star = b + (&b_neg_half * &shift_inv * &cvec_bar) * lambda0;
    let d = &b_neg_half * &shift_inv * &b_half;
    let a = linalg::symmetrize(&(d.transpose() * b_mat * &d));
    Ok(ContactResult {
        x_star,
        lambda0,
        threshold: 1.0 / (lambda0 * lambda0),
        collision_matrix: a,
    })
}

/// Deterministic collision test: a center inside the other ellipsoid, or
/// `yᵀ A y <= 1/λ₀²` with `y = c - b`.
pub fn intersects(e1: &Ellipsoid, e2: &Ellipsoid) -> Result<bool> {
    ContactSolver::new(e1, e2)?.collides(&e1.center, &e2.center)
}

/// Euclidean projection onto an ellipsoid, with the shape eigen-decomposition
/// cached so repeated projections are cheap.
#[derive(Debug, Clone)]
pub struct Projector {
    center: DVector<f64>,
    values: DVector<f64>,
    vectors: DMatrix<f64>,
}

impl Projector {
    pub fn new(e: &Ellipsoid) -> Self {
        let eig = SymmetricEigen::new(e.shape.clone());
        Self {
            center: e.center.clone(),
            values: eig.eigenvalues,
            vectors: eig.eigenvectors,
        }
    }

    /// Closest point of the ellipsoid to `p`.
    pub fn project(&self, p: &DVector<f64>) -> DVector<f64> {
        let q = self.vectors.tr_mul(&(p - &self.center));
        let level: f64 = q.iter().zip(self.values.iter()).map(|(qi, k)| k * qi * qi).sum();
        if level <= 1.0 {
            return p.clone();
        }
        // x_i = q_i / (1 + t k_i); solve g(t) = Σ k_i x_i² = 1 for t > 0.
        // g is convex and decreasing, so Newton from t = 0 approaches the
        // root monotonically from the left.
        let mut t = 0.0f64;
        for _ in 0..200 {
            let mut g = 0.0;
            let mut dg = 0.0;
            for (qi, k) in q.iter().zip(self.values.iter()) {
                let den = 1.0 + t * k;
                g += k * qi * qi / (den * den);
                dg += -2.0 * k * k * qi * qi / (den * den * den);
            }
            let step = (g - 1.0) / dg;
            t -= step;
            if step.abs() <= 1e-15 * t.abs().max(1e-300) || (g - 1.0).abs() < 1e-15 {
                break;
            }
        }
        let x = DVector::from_iterator(
            q.len(),
            q.iter().zip(self.values.iter()).map(|(qi, k)| qi / (1.0 + t * k)),
        );
        &self.center + &self.vectors * x
    }
}

/// Euclidean distance between the two ellipsoid surfaces; zero when they
/// intersect. Computed by alternating projections.
pub fn surface_distance(e1: &Ellipsoid, e2: &Ellipsoid) -> Result<f64> {
    if e1.dim() != e2.dim() {
        return Err(Error::DimensionMismatch {
            expected: e1.dim(),
            got: e2.dim(),
        });
    }
    if intersects(e1, e2)? {
        return Ok(0.0);
    }
    let p1 = Projector::new(e1);
    let p2 = Projector::new(e2);
    let mut x = e1.center.clone();
    let mut y = p2.project(&x);
    x = p1.project(&y);
    let mut dist = (&x - &y).norm();
    for _ in 0..20_000 {
        y = p2.project(&x);
        x = p1.project(&y);
        let next = (&x - &y).norm();
        let done = (dist - next).abs() <= 1e-13 * dist.max(1e-12);
        dist = next;
        if done {
            break;
        }
    }
    Ok(dist)
}
