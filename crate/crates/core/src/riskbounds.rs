//! Moments of Gaussian quadratic forms and the reverse-Markov upper bound
//! on the collision probability.
//!
//! For `v = yᵀAy` with `y ~ N(μ, Σ)`:
//!
//! ```text
//! E[v]   = tr(AΣ) + μᵀAμ
//! Var[v] = 2 tr((AΣ)²) + 4 μᵀAΣAμ
//! ```
//!
//! If `v` never exceeds `β`, then `P(v <= t) <= (β - E[v]) / (β - t)` for
//! `t < β`. We take `β = E[v] + sqrt(Var[v])`. A workspace-radius bound
//! `β = λ_max(A) κ²` would make the premise hold literally but is far too
//! loose to plan with, so it is not offered.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::linalg::quad;

pub fn quadform_mean(a: &DMatrix<f64>, mu: &DVector<f64>, sigma: &DMatrix<f64>) -> f64 {
    (a * sigma).trace() + quad(a, mu)
}

pub fn quadform_variance(a: &DMatrix<f64>, mu: &DVector<f64>, sigma: &DMatrix<f64>) -> f64 {
    let a_sigma = a * sigma;
    let tr_sq = (&a_sigma * &a_sigma).trace();
    let cross = quad(&(&a_sigma * a), mu);
    (2.0 * tr_sq + 4.0 * cross).max(0.0)
}

/// `β = E[v] + sqrt(Var[v])`.
pub fn compute_beta(a: &DMatrix<f64>, mu: &DVector<f64>, sigma: &DMatrix<f64>) -> f64 {
    quadform_mean(a, mu, sigma) + quadform_variance(a, mu, sigma).sqrt()
}

/// Upper bound on `P(yᵀAy <= threshold)`, clamped to `[0, 1]`. Returns 1
/// when `β <= threshold` since the bound says nothing there.
pub fn upper_bound(a: &DMatrix<f64>, mu: &DVector<f64>, sigma: &DMatrix<f64>, threshold: f64) -> f64 {
    let mean = quadform_mean(a, mu, sigma);
    let beta = mean + quadform_variance(a, mu, sigma).sqrt();
    bound_from_moments(mean, beta, threshold)
}

pub(crate) fn bound_from_moments(mean: f64, beta: f64, threshold: f64) -> f64 {
    if beta <= threshold {
        return 1.0;
    }
    ((beta - mean) / (beta - threshold)).clamp(0.0, 1.0)
}

/// `(β - E[v]) - ε (β - threshold)`; non-positive iff the bound certifies
/// the configuration as ε-safe.
pub fn eps_safe_residual(a: &DMatrix<f64>, mu: &DVector<f64>, sigma: &DMatrix<f64>, threshold: f64, eps: f64) -> f64 {
    let mean = quadform_mean(a, mu, sigma);
    let beta = mean + quadform_variance(a, mu, sigma).sqrt();
    (beta - mean) - eps * (beta - threshold)
}

/// Ways of turning a collision query into a probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskMethod {
    Exact,
    UpperBound,
    Mc,
    Chi2,
    BoundingVolume,
    CenterPoint,
}

impl RiskMethod {
    pub const ALL: [RiskMethod; 6] = [
        RiskMethod::Exact,
        RiskMethod::UpperBound,
        RiskMethod::Mc,
        RiskMethod::Chi2,
        RiskMethod::BoundingVolume,
        RiskMethod::CenterPoint,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RiskMethod::Exact => "exact",
            RiskMethod::UpperBound => "upper_bound",
            RiskMethod::Mc => "mc",
            RiskMethod::Chi2 => "chi2",
            RiskMethod::BoundingVolume => "bounding_volume",
            RiskMethod::CenterPoint => "center_point",
        }
    }
}

impl fmt::Display for RiskMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RiskMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exact" => Ok(RiskMethod::Exact),
            "upper" | "upper_bound" => Ok(RiskMethod::UpperBound),
            "mc" => Ok(RiskMethod::Mc),
            "chi2" => Ok(RiskMethod::Chi2),
            "bounding" | "bounding_volume" => Ok(RiskMethod::BoundingVolume),
            "center" | "center_point" => Ok(RiskMethod::CenterPoint),
            other => Err(format!("unknown method '{other}'")),
        }
    }
}

/// One method's verdict on a collision query.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskAssessment {
    pub method: RiskMethod,
    pub probability: f64,
    /// `probability <= eps`.
    pub feasible: bool,
    /// Wall time in seconds.
    pub compute_time: f64,
}

impl RiskAssessment {
    pub fn new(method: RiskMethod, probability: f64, eps: f64, compute_time: f64) -> Self {
        Self {
            method,
            probability,
            feasible: probability <= eps,
            compute_time,
        }
    }
}
