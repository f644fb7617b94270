//! JSON descriptions of ellipsoids, covariances and collision scenes.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{make_ellipsoid, Ellipsoid};
use crate::linalg::{planar_rotation, quaternion_rotation};
use crate::planner::Obstacle;
use crate::query::CollisionQuery;

pub const DEFAULT_EPSILON: f64 = 0.05;

/// Unit quaternion `[w, x, y, z]` in 3D or an angle in radians in 2D.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Rotation {
    Quaternion([f64; 4]),
    Angle(f64),
}

impl Rotation {
    pub fn matrix(&self, dim: usize) -> Result<DMatrix<f64>> {
        match (self, dim) {
            (Rotation::Quaternion(q), 3) => quaternion_rotation(*q),
            (Rotation::Angle(a), 2) => Ok(planar_rotation(*a)),
            (Rotation::Quaternion(_), d) => Err(Error::InvalidConfig(format!(
                "quaternion rotation given for a {d}-dimensional ellipsoid"
            ))),
            (Rotation::Angle(_), d) => Err(Error::InvalidConfig(format!(
                "angle rotation given for a {d}-dimensional ellipsoid"
            ))),
        }
    }
}

/// Full matrix (rows) or its diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CovSpec {
    Matrix(Vec<Vec<f64>>),
    Diagonal(Vec<f64>),
}

impl CovSpec {
    pub fn matrix(&self, dim: usize) -> Result<DMatrix<f64>> {
        let m = match self {
            CovSpec::Diagonal(d) => {
                if d.len() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        got: d.len(),
                    });
                }
                DMatrix::from_diagonal(&DVector::from_column_slice(d))
            }
            CovSpec::Matrix(rows) => {
                if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        got: rows.len(),
                    });
                }
                DMatrix::from_fn(dim, dim, |i, j| rows[i][j])
            }
        };
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("covariance has non-finite entries".into()));
        }
        if !crate::linalg::is_symmetric(&m, 1e-12) {
            return Err(Error::NonSymmetric {
                deviation: crate::linalg::max_asymmetry(&m),
            });
        }
        let low = crate::linalg::min_eigenvalue(&m);
        if low < -1e-12 {
            return Err(Error::NotPositiveDefinite { min_eigenvalue: low });
        }
        Ok(m)
    }

    pub fn zero(dim: usize) -> Self {
        CovSpec::Diagonal(vec![0.0; dim])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BodySpec {
    pub center: Vec<f64>,
    pub semi_axes: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rotation: Option<Rotation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariance: Option<CovSpec>,
}

impl BodySpec {
    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn ellipsoid(&self) -> Result<Ellipsoid> {
        let n = self.dim();
        if self.semi_axes.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: self.semi_axes.len(),
            });
        }
        if n != 2 && n != 3 {
            return Err(Error::UnsupportedDimension(n));
        }
        let rot = match &self.rotation {
            Some(r) => r.matrix(n)?,
            None => DMatrix::identity(n, n),
        };
        make_ellipsoid(
            &DVector::from_column_slice(&self.semi_axes),
            &rot,
            &DVector::from_column_slice(&self.center),
        )
    }

    /// Center covariance, zero when absent.
    pub fn cov(&self) -> Result<DMatrix<f64>> {
        let n = self.dim();
        match &self.covariance {
            Some(c) => c.matrix(n),
            None => Ok(DMatrix::zeros(n, n)),
        }
    }

    pub fn obstacle(&self) -> Result<Obstacle> {
        Obstacle::new(self.ellipsoid()?, self.cov()?)
    }
}

/// A robot and the obstacles it is checked against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub robot: BodySpec,
    #[serde(default)]
    pub obstacles: Vec<BodySpec>,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

impl SceneFile {
    pub fn from_json(text: &str) -> Result<Self> {
        let scene: SceneFile = serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        scene.validate()?;
        Ok(scene)
    }

    /// Checks the geometry, the covariances and ε.
    pub fn validate(&self) -> Result<()> {
        self.queries()?;
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "epsilon must lie in (0, 1), got {}",
                self.epsilon
            )));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// One query per obstacle, in file order.
    pub fn queries(&self) -> Result<Vec<CollisionQuery>> {
        let robot = self.robot.ellipsoid()?;
        let sigma_robot = self.robot.cov()?;
        self.obstacles
            .iter()
            .enumerate()
            .map(|(i, o)| {
                let e = o
                    .ellipsoid()
                    .map_err(|e| Error::InvalidConfig(format!("obstacles[{i}]: {e}")))?;
                let c = o
                    .cov()
                    .map_err(|e| Error::InvalidConfig(format!("obstacles[{i}].covariance: {e}")))?;
                CollisionQuery::new(robot.clone(), e, sigma_robot.clone(), c)
            })
            .collect()
    }
}
