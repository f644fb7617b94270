//! Random problem generators and independent oracles shared by the
//! integration tests. Nothing here calls into the library's numerics.

#![allow(dead_code)]

use ellipsoid_risk::geometry::Ellipsoid;
use ellipsoid_risk::query::CollisionQuery;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

pub fn scenario_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

pub fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// Haar-ish orthogonal matrix from the QR factor of a Gaussian matrix.
pub fn random_orthogonal(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let g = DMatrix::<f64>::from_fn(n, n, |_, _| rng.sample(StandardNormal));
    let qr = g.qr();
    let (q, r) = (qr.q(), qr.r());
    let signs = DMatrix::from_diagonal(&r.diagonal().map(|d| if d < 0.0 { -1.0 } else { 1.0 }));
    q * signs
}

pub fn spd(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    let q = random_orthogonal(rng, n);
    let d = DVector::from_fn(n, |_, _| rng.random_range(lo..hi));
    let m = &q * DMatrix::from_diagonal(&d) * q.transpose();
    (&m + m.transpose()) * 0.5
}

pub fn ellipsoid(rng: &mut ChaCha8Rng, lo: f64, hi: f64, center: DVector<f64>) -> Ellipsoid {
    let n = center.len();
    let axes = DVector::from_fn(n, |_, _| rng.random_range(lo..hi));
    let q = random_orthogonal(rng, n);
    let shape = &q * DMatrix::from_diagonal(&axes.map(|a| 1.0 / (a * a))) * q.transpose();
    Ellipsoid::new((&shape + shape.transpose()) * 0.5, center).expect("valid ellipsoid")
}

pub fn unit(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    loop {
        let v = gaussian_vec(rng, n);
        let norm = v.norm();
        if norm > 1e-3 {
            return v / norm;
        }
    }
}

/// A robot near the surface of an obstacle at the origin, with robot and
/// obstacle position uncertainty of random size and orientation.
pub fn random_query(rng: &mut ChaCha8Rng) -> CollisionQuery {
    let obstacle = ellipsoid(rng, 0.3, 1.5, DVector::zeros(3));
    let dir = unit(rng, 3);
    let reach = 1.0 / (dir.transpose() * obstacle.shape() * &dir)[0].sqrt();
    let center = dir * reach * rng.random_range(0.8..1.6);
    let robot = ellipsoid(rng, 0.1, 0.5, center);
    let robot_scale = rng.random_range(0.005..0.1);
    let s_robot = spd(rng, 3, 0.2 * robot_scale, robot_scale);
    let obstacle_scale = rng.random_range(0.0..0.05);
    let s_obstacle = if obstacle_scale > 0.0 {
        spd(rng, 3, 0.2 * obstacle_scale, obstacle_scale)
    } else {
        DMatrix::zeros(3, 3)
    };
    CollisionQuery::new(robot, obstacle, s_robot, s_obstacle).expect("consistent dimensions")
}

fn quad(m: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    (x.transpose() * m * x)[0]
}

/// Monte Carlo estimate of `P(yᵀAy <= v)` for `y ~ N(μ, Σ)` with a Cholesky
/// factor and plain Gaussian draws. Returns the estimate and its standard
/// error.
pub fn mc_quadform(
    a: &DMatrix<f64>,
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
    v: f64,
    samples: usize,
    rng: &mut ChaCha8Rng,
) -> (f64, f64) {
    let n = mu.len();
    let jitter = 1e-14 * sigma.amax().max(1e-300);
    let l = (sigma + DMatrix::identity(n, n) * jitter)
        .cholesky()
        .expect("covariance is positive definite")
        .l();
    let mut hits = 0usize;
    for _ in 0..samples {
        let y = mu + &l * gaussian_vec(rng, n);
        if quad(a, &y) <= v {
            hits += 1;
        }
    }
    let p = hits as f64 / samples as f64;
    (p, (p * (1.0 - p) / samples as f64).sqrt())
}

/// Euclidean projection onto `{x : (x - c)ᵀ C (x - c) <= 1}` by Newton's
/// method on the multiplier in the eigenbasis of `C`.
pub struct EllipsoidProjection {
    center: DVector<f64>,
    basis: DMatrix<f64>,
    d: DVector<f64>,
}

impl EllipsoidProjection {
    pub fn new(e: &Ellipsoid) -> Self {
        let eig = e.shape().clone().symmetric_eigen();
        Self {
            center: e.center().clone(),
            basis: eig.eigenvectors,
            d: eig.eigenvalues,
        }
    }

    pub fn project(&self, p: &DVector<f64>) -> DVector<f64> {
        let z = self.basis.transpose() * (p - &self.center);
        let level: f64 = z.iter().zip(self.d.iter()).map(|(z, d)| d * z * z).sum();
        if level <= 1.0 {
            return p.clone();
        }
        let mut mu = 0.0f64;
        for _ in 0..200 {
            let mut phi = -1.0;
            let mut dphi = 0.0;
            for (z, d) in z.iter().zip(self.d.iter()) {
                let w = 1.0 + mu * d;
                phi += d * z * z / (w * w);
                dphi -= 2.0 * d * d * z * z / (w * w * w);
            }
            let step = phi / dphi;
            mu -= step;
            if step.abs() <= 1e-16 * mu.abs().max(1e-300) {
                break;
            }
        }
        let scaled = DVector::from_fn(z.len(), |i, _| z[i] / (1.0 + mu * self.d[i]));
        &self.center + &self.basis * scaled
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Feasibility {
    Intersecting,
    Disjoint,
    Undecided,
}

fn support(shape_inv: &DMatrix<f64>, center: &DVector<f64>, n: &DVector<f64>) -> f64 {
    n.dot(center) + quad(shape_inv, n).sqrt()
}

/// Decides whether two ellipsoids share a point by minimizing
/// `(x - a)ᵀ A (x - a)` over `E2` with accelerated projected gradient.
/// Stops at the first certificate: a point of `E2` strictly inside `E1`, or
/// a hyperplane separating the two.
pub fn feasibility(e1: &Ellipsoid, e2: &Ellipsoid, max_iter: usize) -> Feasibility {
    let proj = EllipsoidProjection::new(e2);
    let a = e1.shape();
    let b = e1.center();
    let a_inv = a.clone().try_inverse().expect("positive definite");
    let c_inv = e2.shape().clone().try_inverse().expect("positive definite");
    let lipschitz = 2.0 * a.clone().symmetric_eigen().eigenvalues.max();
    let mut x = proj.project(b);
    let mut y = x.clone();
    let mut t = 1.0f64;
    for _ in 0..max_iter {
        let grad = a * (&y - b) * 2.0;
        let next = proj.project(&(&y - grad / lipschitz));
        let inside_e2 = quad(e2.shape(), &(&next - e2.center())) <= 1.0 + 1e-12;
        if inside_e2 && quad(a, &(&next - b)) < 1.0 {
            return Feasibility::Intersecting;
        }
        let normal = a * (&next - b);
        if normal.norm() > 0.0 {
            let top_e1 = support(&a_inv, b, &normal);
            let bottom_e2 = -support(&c_inv, e2.center(), &(-&normal));
            if bottom_e2 > top_e1 {
                return Feasibility::Disjoint;
            }
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        y = &next + (&next - &x) * ((t - 1.0) / t_next);
        x = next;
        t = t_next;
    }
    Feasibility::Undecided
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
