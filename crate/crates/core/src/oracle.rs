//! Monte Carlo estimates of collision probabilities.
//!
//! Robot and obstacle centers are independent Gaussians, so the indicator
//! of collision integrated over their joint density equals the same
//! indicator integrated over the relative offset
//! `y ~ N(μ_obstacle - μ_robot, Σ_robot + Σ_obstacle)`. We sample the offset
//! directly and move the robot.
//!
//! Samples are drawn in fixed-size chunks. Chunk `i` uses its own ChaCha
//! stream (`seed`, stream `i`), so results do not depend on how chunks are
//! spread over threads, and tallies of disjoint chunk ranges add up to the
//! tally of the whole range.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{intersects, Ellipsoid};
use crate::linalg::{psd_factor, quad};

pub const CHUNK_SIZE: u64 = 1 << 14;
pub const MIN_SAMPLES: u64 = 10_000;
/// Largest tolerated fraction of samples where the geometry test failed.
pub const MAX_INDETERMINATE_FRACTION: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub probability: f64,
    pub stderr: f64,
    pub samples: u64,
    pub hits: u64,
    pub seed: u64,
}

impl McEstimate {
    pub fn from_counts(hits: u64, samples: u64, seed: u64) -> Self {
        let p = hits as f64 / samples as f64;
        Self {
            probability: p,
            stderr: (p * (1.0 - p) / samples as f64).sqrt(),
            samples,
            hits,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Tally {
    pub hits: u64,
    pub indeterminate: u64,
    pub samples: u64,
}

impl std::ops::Add for Tally {
    type Output = Tally;
    fn add(self, o: Tally) -> Tally {
        Tally {
            hits: self.hits + o.hits,
            indeterminate: self.indeterminate + o.indeterminate,
            samples: self.samples + o.samples,
        }
    }
}

pub(crate) fn chunk_rng(seed: u64, chunk: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chunk);
    rng
}

pub(crate) fn draw_gaussian<R: Rng>(rng: &mut R, mean: &DVector<f64>, factor: &DMatrix<f64>) -> DVector<f64> {
    let z = DVector::from_iterator(
        mean.len(),
        (0..mean.len()).map(|_| rng.sample::<f64, _>(StandardNormal)),
    );
    mean + factor * z
}

/// Geometric collision sampler for one robot/obstacle pair.
#[derive(Debug, Clone)]
pub struct CollisionSampler {
    robot: Ellipsoid,
    obstacle: Ellipsoid,
    factor: DMatrix<f64>,
}

impl CollisionSampler {
    pub fn new(
        robot: &Ellipsoid,
        obstacle: &Ellipsoid,
        sigma_robot: &DMatrix<f64>,
        sigma_obstacle: &DMatrix<f64>,
    ) -> Result<Self> {
        let n = robot.dim();
        if obstacle.dim() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: obstacle.dim(),
            });
        }
        for s in [sigma_robot, sigma_obstacle] {
            if s.nrows() != n || s.ncols() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: s.nrows(),
                });
            }
        }
        Ok(Self {
            robot: robot.clone(),
            obstacle: obstacle.clone(),
            factor: psd_factor(&(sigma_robot + sigma_obstacle)),
        })
    }

    /// Tally of chunk `index`; the last chunk of a run may be partial.
    pub fn chunk(&self, seed: u64, index: u64, count: u64) -> Tally {
        let mut rng = chunk_rng(seed, index);
        let mut t = Tally {
            samples: count,
            ..Tally::default()
        };
        for _ in 0..count {
            let center = draw_gaussian(&mut rng, self.robot.center(), &self.factor);
            let moved = self.robot.translated_to(center);
            match intersects(&self.obstacle, &moved) {
                Ok(true) => t.hits += 1,
                Ok(false) => {}
                Err(_) => t.indeterminate += 1,
            }
        }
        t
    }

    /// Sums chunks `0..ceil(samples / CHUNK_SIZE)` in index order, fanning
    /// chunks out over the available threads.
    pub fn run(&self, samples: u64, seed: u64) -> Tally {
        let chunks = samples.div_ceil(CHUNK_SIZE);
        let size = |i: u64| CHUNK_SIZE.min(samples - i * CHUNK_SIZE);
        let threads = std::thread::available_parallelism()
            .map(|n| n.get() as u64)
            .unwrap_or(1)
            .min(chunks.max(1));
        if threads <= 1 {
            return (0..chunks)
                .map(|i| self.chunk(seed, i, size(i)))
                .fold(Tally::default(), |a, b| a + b);
        }
        let mut tallies = vec![Tally::default(); chunks as usize];
        std::thread::scope(|scope| {
            let per = chunks.div_ceil(threads) as usize;
            for (t, slot) in tallies.chunks_mut(per).enumerate() {
                scope.spawn(move || {
                    for (k, out) in slot.iter_mut().enumerate() {
                        let i = (t * per + k) as u64;
                        *out = self.chunk(seed, i, size(i));
                    }
                });
            }
        });
        tallies.into_iter().fold(Tally::default(), |a, b| a + b)
    }
}

/// Monte Carlo collision probability with true ellipsoid intersection as
/// the indicator.
pub fn mc_collision_probability(
    robot: &Ellipsoid,
    obstacle: &Ellipsoid,
    sigma_robot: &DMatrix<f64>,
    sigma_obstacle: &DMatrix<f64>,
    samples: u64,
    seed: u64,
) -> Result<McEstimate> {
    if samples < MIN_SAMPLES {
        return Err(Error::InvalidConfig(format!(
            "monte carlo needs at least {MIN_SAMPLES} samples, got {samples}"
        )));
    }
    let sampler = CollisionSampler::new(robot, obstacle, sigma_robot, sigma_obstacle)?;
    let t = sampler.run(samples, seed);
    if t.indeterminate as f64 > MAX_INDETERMINATE_FRACTION * samples as f64 {
        return Err(Error::OracleDegenerate {
            indeterminate: t.indeterminate,
            samples,
        });
    }
    Ok(McEstimate::from_counts(t.hits, samples, seed))
}

/// Monte Carlo estimate of `P(yᵀAy <= v)` for `y ~ N(μ, Σ)`.
pub fn mc_quadform_cdf(
    a: &DMatrix<f64>,
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
    v: f64,
    samples: u64,
    seed: u64,
) -> McEstimate {
    let factor = psd_factor(sigma);
    let chunks = samples.div_ceil(CHUNK_SIZE);
    let mut hits = 0;
    for i in 0..chunks {
        let mut rng = chunk_rng(seed, i);
        for _ in 0..CHUNK_SIZE.min(samples - i * CHUNK_SIZE) {
            let y = draw_gaussian(&mut rng, mu, &factor);
            if quad(a, &y) <= v {
                hits += 1;
            }
        }
    }
    McEstimate::from_counts(hits, samples, seed)
}
