//! A robot/obstacle pair with Gaussian center uncertainty, and dispatch to
//! every probability method.
//!
//! The obstacle is taken as the first ellipsoid of the contact computation
//! and the robot as the second, so the random quantity is the robot-minus-
//! obstacle offset. The frozen quadratic collision region tracks the true
//! one more closely when the first ellipsoid is the larger body, which for
//! robot/obstacle pairs is usually the obstacle.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::baselines::{bounding_volume_check, center_point_probability, DEFAULT_N_SIGMA};
use crate::error::{Error, Result};
use crate::geometry::{contact_point, ContactResult, Ellipsoid};
use crate::linalg::quad;
use crate::oracle::{mc_collision_probability, mc_quadform_cdf, McEstimate};
use crate::quadform::{
    cdf_series, chi_square_case, noncentral_chi2_cdf, standardize_factored, Expansion, SeriesResult, SigmaFactors,
    DEFAULT_K_MAX, DEFAULT_TOL,
};
use crate::riskbounds::{eps_safe_residual, upper_bound, RiskAssessment, RiskMethod};

/// Covariances whose largest entry is below this are treated as exactly zero.
const ZERO_COV: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub tol: f64,
    pub k_max: usize,
    pub mc_samples: u64,
    pub seed: u64,
    pub n_sigma: f64,
    /// Replace a non-convergent series by a quadratic-form Monte Carlo
    /// estimate instead of failing.
    pub mc_fallback: bool,
    pub fallback_samples: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            k_max: DEFAULT_K_MAX,
            mc_samples: 1_000_000,
            seed: 0,
            n_sigma: DEFAULT_N_SIGMA,
            mc_fallback: false,
            fallback_samples: 20_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollisionQuery {
    pub robot: Ellipsoid,
    pub obstacle: Ellipsoid,
    pub sigma_robot: DMatrix<f64>,
    pub sigma_obstacle: DMatrix<f64>,
}

/// Collision matrix, threshold and relative Gaussian of a query.
#[derive(Debug, Clone, PartialEq)]
pub struct Linearized {
    pub contact: ContactResult,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl Linearized {
    pub fn is_deterministic(&self) -> bool {
        self.cov.amax() <= ZERO_COV
    }

    /// Indicator of collision at the mean offset.
    pub fn deterministic_collision(&self) -> bool {
        quad(&self.contact.collision_matrix, &self.mean) <= self.contact.threshold
    }

    /// Series evaluation of `P(yᵀAy <= 1/λ₀²)`. Deterministic queries give
    /// the exact indicator.
    pub fn exact(&self, tol: f64, k_max: usize) -> Result<SeriesResult> {
        let factors = if self.is_deterministic() {
            None
        } else {
            Some(SigmaFactors::new(&self.cov)?)
        };
        self.exact_factored(factors.as_ref(), tol, k_max)
    }

    /// [`Linearized::exact`] with precomputed factors of the covariance,
    /// which may be omitted only for deterministic queries.
    pub fn exact_factored(&self, factors: Option<&SigmaFactors>, tol: f64, k_max: usize) -> Result<SeriesResult> {
        if self.is_deterministic() {
            return Ok(SeriesResult {
                value: if self.deterministic_collision() { 1.0 } else { 0.0 },
                terms_used: 0,
                converged: true,
                last_term_magnitude: 0.0,
                expansion: Expansion::Power,
            });
        }
        let factors = factors.ok_or(Error::SingularSigma)?;
        let spec = standardize_factored(&self.contact.collision_matrix, &self.mean, factors)?;
        cdf_series(&spec, self.contact.threshold, tol, k_max)
    }

    /// Exact probability, replaced by a quadratic-form Monte Carlo estimate
    /// when the series does not converge and `opts.mc_fallback` is set.
    pub fn exact_probability(&self, factors: Option<&SigmaFactors>, opts: &EvalOptions) -> Result<f64> {
        let r = self.exact_factored(factors, opts.tol, opts.k_max)?;
        if r.converged {
            Ok(r.value)
        } else if opts.mc_fallback {
            Ok(self.mc_quadform(opts.fallback_samples, opts.seed).probability)
        } else {
            r.into_result()
        }
    }

    pub fn upper_bound(&self) -> f64 {
        upper_bound(
            &self.contact.collision_matrix,
            &self.mean,
            &self.cov,
            self.contact.threshold,
        )
    }

    pub fn eps_safe_residual(&self, eps: f64) -> f64 {
        eps_safe_residual(
            &self.contact.collision_matrix,
            &self.mean,
            &self.cov,
            self.contact.threshold,
            eps,
        )
    }

    /// Monte Carlo of the frozen quadratic form (not of the true geometry).
    pub fn mc_quadform(&self, samples: u64, seed: u64) -> McEstimate {
        mc_quadform_cdf(
            &self.contact.collision_matrix,
            &self.mean,
            &self.cov,
            self.contact.threshold,
            samples,
            seed,
        )
    }

    /// Noncentral chi-square evaluation when the form qualifies.
    pub fn chi2(&self, tol: f64) -> Option<f64> {
        let (r, d2) = chi_square_case(&self.contact.collision_matrix, &self.mean, &self.cov, tol)?;
        Some(noncentral_chi2_cdf(r, d2, self.contact.threshold))
    }
}

impl CollisionQuery {
    pub fn new(
        robot: Ellipsoid,
        obstacle: Ellipsoid,
        sigma_robot: DMatrix<f64>,
        sigma_obstacle: DMatrix<f64>,
    ) -> Result<Self> {
        let n = robot.dim();
        if obstacle.dim() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: obstacle.dim(),
            });
        }
        for s in [&sigma_robot, &sigma_obstacle] {
            if s.nrows() != n || s.ncols() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: s.nrows(),
                });
            }
        }
        Ok(Self {
            robot,
            obstacle,
            sigma_robot,
            sigma_obstacle,
        })
    }

    /// Offset of the robot center from the obstacle center.
    pub fn relative_mean(&self) -> DVector<f64> {
        self.robot.center() - self.obstacle.center()
    }

    pub fn relative_cov(&self) -> DMatrix<f64> {
        &self.sigma_robot + &self.sigma_obstacle
    }

    pub fn linearize(&self) -> Result<Linearized> {
        Ok(Linearized {
            contact: contact_point(&self.obstacle, &self.robot)?,
            mean: self.relative_mean(),
            cov: self.relative_cov(),
        })
    }

    /// Collision probability by `method`, with timing and the ε verdict.
    pub fn evaluate(&self, method: RiskMethod, eps: f64, opts: &EvalOptions) -> Result<RiskAssessment> {
        let start = Instant::now();
        let p = self.probability(method, opts)?;
        Ok(RiskAssessment::new(method, p, eps, start.elapsed().as_secs_f64()))
    }

    pub fn probability(&self, method: RiskMethod, opts: &EvalOptions) -> Result<f64> {
        match method {
            RiskMethod::Exact => {
                let lin = self.linearize()?;
                let factors = if lin.is_deterministic() {
                    None
                } else {
                    Some(SigmaFactors::new(&lin.cov)?)
                };
                lin.exact_probability(factors.as_ref(), opts)
            }
            RiskMethod::UpperBound => Ok(self.linearize()?.upper_bound()),
            RiskMethod::Mc => Ok(self.monte_carlo(opts.mc_samples, opts.seed)?.probability),
            RiskMethod::Chi2 => self
                .linearize()?
                .chi2(1e-9)
                .ok_or_else(|| Error::InvalidConfig("quadratic form is not noncentral chi-square".into())),
            RiskMethod::BoundingVolume => {
                bounding_volume_check(&self.robot, &self.obstacle, &self.relative_cov(), opts.n_sigma)
            }
            RiskMethod::CenterPoint => center_point_probability(&self.robot, &self.obstacle, &self.relative_cov()),
        }
    }

    pub fn monte_carlo(&self, samples: u64, seed: u64) -> Result<McEstimate> {
        mc_collision_probability(
            &self.robot,
            &self.obstacle,
            &self.sigma_robot,
            &self.sigma_obstacle,
            samples,
            seed,
        )
    }
}
