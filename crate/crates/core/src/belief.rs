//! Gaussian beliefs and their EKF propagation.
//!
//! The measurement update uses the Joseph form
//! `(I - KH) Σ̄ (I - KH)ᵀ + K Q Kᵀ`, which equals `(I - KH) Σ̄` for the
//! optimal gain and stays positive semidefinite under roundoff.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{is_symmetric, min_eigenvalue, psd_factor, sym_condition, symmetrize};
use crate::oracle::draw_gaussian;

/// Largest innovation covariance condition number accepted by the update.
pub const MAX_INNOVATION_CONDITION: f64 = 1e12;
/// Control period of the default point-mass model, seconds.
pub const DEFAULT_DT: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianBelief {
    /// Validates symmetry and clamps tiny negative eigenvalues to zero.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        if cov.nrows() != n || cov.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: cov.nrows(),
            });
        }
        if !is_symmetric(&cov, 1e-12) {
            return Err(Error::NonSymmetric {
                deviation: crate::linalg::max_asymmetry(&cov),
            });
        }
        let low = min_eigenvalue(&cov);
        if low < -1e-12 {
            return Err(Error::NotPositiveDefinite { min_eigenvalue: low });
        }
        let cov = if low < 0.0 {
            let f = psd_factor(&cov);
            symmetrize(&(&f * f.transpose()))
        } else {
            symmetrize(&cov)
        };
        Ok(Self { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Column-stacked covariance.
    pub fn vec_cov(&self) -> DVector<f64> {
        DVector::from_column_slice(self.cov.as_slice())
    }

    /// Mean and covariance of the leading `n` state components.
    pub fn marginal(&self, n: usize) -> (DVector<f64>, DMatrix<f64>) {
        (
            self.mean.rows(0, n).into_owned(),
            self.cov.view((0, 0), (n, n)).into_owned(),
        )
    }
}

/// Motion model `x' = f(x, u) + N(0, R)` paired with observation model
/// `z = h(x) + N(0, Q)`.
pub trait ModelPair: Send + Sync {
    fn state_dim(&self) -> usize;
    fn f(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64>;
    /// [`ModelPair::f`] written into `out`.
    fn f_into(&self, x: &DVector<f64>, u: &DVector<f64>, out: &mut DVector<f64>) {
        *out = self.f(x, u);
    }
    fn jac_f(&self, x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64>;
    fn r(&self) -> &DMatrix<f64>;
    fn h(&self, x: &DVector<f64>) -> DVector<f64>;
    fn jac_h(&self, x: &DVector<f64>) -> DMatrix<f64>;
    fn q(&self) -> &DMatrix<f64>;

    /// True when the Jacobians and noises do not depend on state, control
    /// or time, so the covariance rollout is independent of the controls.
    fn is_lti(&self) -> bool {
        false
    }
}

/// `f = A x + B u`, `h = C x`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    r: DMatrix<f64>,
    q: DMatrix<f64>,
}

fn check_noise(m: &DMatrix<f64>, rows: usize) -> Result<()> {
    if m.nrows() != rows || m.ncols() != rows {
        return Err(Error::DimensionMismatch {
            expected: rows,
            got: m.nrows(),
        });
    }
    if !is_symmetric(m, 1e-12) {
        return Err(Error::NonSymmetric {
            deviation: crate::linalg::max_asymmetry(m),
        });
    }
    let low = min_eigenvalue(m);
    if low < -1e-12 * m.amax().max(1.0) {
        return Err(Error::NotPositiveDefinite { min_eigenvalue: low });
    }
    Ok(())
}

impl LinearModel {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, r: DMatrix<f64>, q: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n || b.nrows() != n || c.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: if a.ncols() != n {
                    a.ncols()
                } else if b.nrows() != n {
                    b.nrows()
                } else {
                    c.ncols()
                },
            });
        }
        check_noise(&r, n)?;
        check_noise(&q, c.nrows())?;
        if [&a, &b, &c].iter().any(|m| m.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFiniteDynamics);
        }
        Ok(Self {
            a,
            b,
            c,
            r: symmetrize(&r),
            q: symmetrize(&q),
        })
    }

    /// Velocity-controlled point mass observed directly:
    /// `x' = x + u dt + N(0, R)`, `z = x + N(0, Q)`.
    pub fn point_mass(dim: usize, dt: f64, r: DMatrix<f64>, q: DMatrix<f64>) -> Result<Self> {
        let id = DMatrix::identity(dim, dim);
        Self::new(id.clone(), &id * dt, id, r, q)
    }
}

impl ModelPair for LinearModel {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }
    fn f(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b * u
    }
    fn f_into(&self, x: &DVector<f64>, u: &DVector<f64>, out: &mut DVector<f64>) {
        out.gemv(1.0, &self.a, x, 0.0);
        out.gemv(1.0, &self.b, u, 1.0);
    }
    fn jac_f(&self, _x: &DVector<f64>, _u: &DVector<f64>) -> DMatrix<f64> {
        self.a.clone()
    }
    fn r(&self) -> &DMatrix<f64> {
        &self.r
    }
    fn h(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.c * x
    }
    fn jac_h(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        self.c.clone()
    }
    fn q(&self) -> &DMatrix<f64> {
        &self.q
    }
    fn is_lti(&self) -> bool {
        true
    }
}

/// `μ̄ = f(μ, u)`, `Σ̄ = F Σ Fᵀ + R`.
pub fn ekf_predict<M: ModelPair + ?Sized>(
    belief: &GaussianBelief,
    u: &DVector<f64>,
    model: &M,
) -> Result<GaussianBelief> {
    let mean = model.f(&belief.mean, u);
    let jac = model.jac_f(&belief.mean, u);
    let cov = symmetrize(&(&jac * &belief.cov * jac.transpose() + model.r()));
    if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteDynamics);
    }
    Ok(GaussianBelief { mean, cov })
}

/// `H Σ̄ Hᵀ + Q`.
pub fn innovation_covariance<M: ModelPair + ?Sized>(predicted: &GaussianBelief, model: &M) -> DMatrix<f64> {
    let h = model.jac_h(&predicted.mean);
    symmetrize(&(&h * &predicted.cov * h.transpose() + model.q()))
}

/// Kalman gain, innovation covariance and observation Jacobian at `predicted`.
pub struct Gain {
    pub k: DMatrix<f64>,
    pub s: DMatrix<f64>,
    pub h: DMatrix<f64>,
}

pub fn kalman_gain<M: ModelPair + ?Sized>(predicted: &GaussianBelief, model: &M) -> Result<Gain> {
    let h = model.jac_h(&predicted.mean);
    let s = innovation_covariance(predicted, model);
    if s.amax() == 0.0 {
        // Nothing is observed: zero gain.
        let k = DMatrix::zeros(predicted.dim(), s.nrows());
        return Ok(Gain { k, s, h });
    }
    let condition = sym_condition(&s);
    if !(condition <= MAX_INNOVATION_CONDITION) {
        return Err(Error::SingularInnovationCovariance { condition });
    }
    let chol = s
        .clone()
        .cholesky()
        .ok_or(Error::SingularInnovationCovariance { condition })?;
    // K = Σ̄ Hᵀ S⁻¹, solved as S Kᵀ = H Σ̄.
    let k = chol.solve(&(&h * &predicted.cov)).transpose();
    Ok(Gain { k, s, h })
}

fn joseph(predicted: &GaussianBelief, g: &Gain, q: &DMatrix<f64>) -> DMatrix<f64> {
    let n = predicted.dim();
    let ikh = DMatrix::identity(n, n) - &g.k * &g.h;
    symmetrize(&(&ikh * &predicted.cov * ikh.transpose() + &g.k * q * g.k.transpose()))
}

/// `μ = μ̄ + K (z - h(μ̄))`, `Σ = (I - KH) Σ̄`.
pub fn ekf_update<M: ModelPair + ?Sized>(
    predicted: &GaussianBelief,
    z: &DVector<f64>,
    model: &M,
) -> Result<GaussianBelief> {
    let g = kalman_gain(predicted, model)?;
    let innovation = z - model.h(&predicted.mean);
    Ok(GaussianBelief {
        mean: &predicted.mean + &g.k * innovation,
        cov: joseph(predicted, &g, model.q()),
    })
}

/// Predict then update with the most likely observation `z = h(μ̄)`.
pub fn propagate_ml<M: ModelPair + ?Sized>(
    belief: &GaussianBelief,
    u: &DVector<f64>,
    model: &M,
) -> Result<GaussianBelief> {
    let predicted = ekf_predict(belief, u, model)?;
    let g = kalman_gain(&predicted, model)?;
    let cov = joseph(&predicted, &g, model.q());
    Ok(GaussianBelief {
        mean: predicted.mean,
        cov,
    })
}

/// One draw of the stochastic belief transition: the innovation
/// `w ~ N(0, H Σ̄ Hᵀ + Q)` moves the mean by `K w`.
pub fn sample_belief_transition<M: ModelPair + ?Sized>(
    belief: &GaussianBelief,
    u: &DVector<f64>,
    model: &M,
    seed: u64,
) -> Result<GaussianBelief> {
    let predicted = ekf_predict(belief, u, model)?;
    let g = kalman_gain(&predicted, model)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = draw_gaussian(&mut rng, &DVector::zeros(g.s.nrows()), &psd_factor(&g.s));
    let cov = joseph(&predicted, &g, model.q());
    Ok(GaussianBelief {
        mean: &predicted.mean + &g.k * w,
        cov,
    })
}
