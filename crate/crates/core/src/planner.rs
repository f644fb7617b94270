//! Receding-horizon chance-constrained planning over Gaussian beliefs.
//!
//! The decision variables are the `L` controls of the horizon. Beliefs are
//! rolled forward with the most-likely-observation EKF, so they are a
//! deterministic function of the controls. The objective is
//!
//! ```text
//! J = Σ uₗᵀ M_u uₗ + ‖μ̄_L - x_g‖²_{M_g} + tr(K S Kᵀ M_g)
//! ```
//!
//! and every step/obstacle pair must satisfy its collision constraint. The
//! solver is a seeded cross-entropy method. Candidates are ranked by
//! objective and checked for feasibility lazily, best first, until enough
//! feasible elites are found.

use std::cell::Cell;
use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma_ur;

use crate::baselines::{bounding_volume_check, center_point_probability, inflate};
use crate::belief::{ekf_predict, kalman_gain, propagate_ml, GaussianBelief, ModelPair};
use crate::error::{Error, Result};
use crate::geometry::{ContactSolver, Ellipsoid};
use crate::linalg::{self, is_symmetric, quad, sym_eigen_sorted};
use crate::oracle::chunk_rng;
use crate::quadform::SigmaFactors;
use crate::query::{EvalOptions, Linearized};
use crate::riskbounds::{quadform_mean, quadform_variance, RiskMethod};

/// Steps whose bounding spheres are separated by a distance with Gaussian
/// tail probability below this are certified collision-free without
/// evaluating the method.
pub const SCREEN_TAIL: f64 = 1e-9;

/// Obstacle shape plus the covariance of its center.
#[derive(Debug, Clone, PartialEq)]
pub struct Obstacle {
    pub ellipsoid: Ellipsoid,
    pub cov: DMatrix<f64>,
}

impl Obstacle {
    pub fn new(ellipsoid: Ellipsoid, cov: DMatrix<f64>) -> Result<Self> {
        let n = ellipsoid.dim();
        if cov.nrows() != n || cov.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: cov.nrows(),
            });
        }
        if !is_symmetric(&cov, 1e-12) {
            return Err(Error::NonSymmetric {
                deviation: linalg::max_asymmetry(&cov),
            });
        }
        let low = linalg::min_eigenvalue(&cov);
        if low < -1e-12 {
            return Err(Error::NotPositiveDefinite { min_eigenvalue: low });
        }
        Ok(Self { ellipsoid, cov })
    }

    /// Obstacle with an exactly known position.
    pub fn fixed(ellipsoid: Ellipsoid) -> Self {
        let n = ellipsoid.dim();
        Self {
            ellipsoid,
            cov: DMatrix::zeros(n, n),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CemConfig {
    pub population: usize,
    pub elites: usize,
    pub iterations: usize,
    /// Initial sampling std as a fraction of the box half-width.
    pub init_std: f64,
    /// Same, when a warm start is given.
    pub warm_std: f64,
    /// Weight of the new elite statistics in the distribution update.
    pub smoothing: f64,
    /// Converged once every std is below this fraction of the half-width.
    pub min_std: f64,
    /// Stop after this many iterations without improving the best cost.
    pub stall_iterations: usize,
}

impl Default for CemConfig {
    fn default() -> Self {
        Self {
            population: 256,
            elites: 32,
            iterations: 60,
            init_std: 0.5,
            warm_std: 0.5,
            smoothing: 0.8,
            min_std: 1e-3,
            stall_iterations: 8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlanProblem<M: ModelPair> {
    pub initial: GaussianBelief,
    pub goal: DVector<f64>,
    pub horizon: usize,
    pub m_u: DMatrix<f64>,
    pub m_g: DMatrix<f64>,
    pub u_min: DVector<f64>,
    pub u_max: DVector<f64>,
    pub epsilon: f64,
    pub obstacles: Vec<Obstacle>,
    /// Robot shape; its center is replaced by the belief mean.
    pub robot: Ellipsoid,
    pub method: RiskMethod,
    pub model: M,
    pub eval: EvalOptions,
    pub cem: CemConfig,
    /// Initial CEM mean, typically the previous plan shifted by one step.
    pub warm_start: Option<Vec<DVector<f64>>>,
}

impl<M: ModelPair> PlanProblem<M> {
    /// Problem with horizon 20, `ε = 0.05`, `M_u = 0.1 I`, `M_g = I`,
    /// controls in `[-1.5, 1.5]` per axis and the exact method.
    pub fn new(initial: GaussianBelief, goal: DVector<f64>, robot: Ellipsoid, model: M) -> Self {
        let n = goal.len();
        Self {
            initial,
            goal,
            horizon: 20,
            m_u: DMatrix::identity(n, n) * 0.1,
            m_g: DMatrix::identity(n, n),
            u_min: DVector::from_element(n, -1.5),
            u_max: DVector::from_element(n, 1.5),
            epsilon: 0.05,
            obstacles: Vec::new(),
            robot,
            method: RiskMethod::Exact,
            model,
            eval: EvalOptions {
                mc_fallback: true,
                ..EvalOptions::default()
            },
            cem: CemConfig::default(),
            warm_start: None,
        }
    }

    pub fn control_dim(&self) -> usize {
        self.u_min.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.robot.dim();
        let m = self.control_dim();
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.horizon < 1 {
            return bad("horizon must be at least 1".into());
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return bad(format!("epsilon must lie in (0, 1), got {}", self.epsilon));
        }
        if self.goal.len() != n || self.model.state_dim() < n || self.initial.dim() != self.model.state_dim() {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: self.goal.len(),
            });
        }
        if self.u_max.len() != m || self.m_u.shape() != (m, m) || self.m_g.shape() != (n, n) {
            return Err(Error::DimensionMismatch {
                expected: m,
                got: self.u_max.len(),
            });
        }
        for i in 0..m {
            if !(self.u_min[i].is_finite() && self.u_max[i].is_finite() && self.u_min[i] <= self.u_max[i]) {
                return bad(format!("control bounds on axis {i} are invalid"));
            }
        }
        if let Some(w) = &self.warm_start {
            if w.len() != self.horizon || w.iter().any(|u| u.len() != m) {
                return bad("warm start does not match horizon and control size".into());
            }
        }
        if self.obstacles.iter().any(|o| o.ellipsoid.dim() != n) {
            return bad("obstacle dimension differs from robot dimension".into());
        }
        match self.method {
            RiskMethod::Exact | RiskMethod::UpperBound | RiskMethod::BoundingVolume | RiskMethod::CenterPoint => {}
            other => return bad(format!("method {other} cannot be used for planning")),
        }
        let c = &self.cem;
        if c.population == 0 || c.elites == 0 || c.elites > c.population || c.iterations == 0 {
            return bad("invalid cross-entropy settings".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanStatus {
    /// The sampling distribution collapsed onto a feasible solution.
    Optimal,
    /// The best feasible cost stopped improving.
    Feasible,
    /// No constraint-satisfying control sequence was found.
    Infeasible,
    /// The iteration budget ran out; the best feasible solution is returned.
    MaxIter,
}

#[derive(Debug, Clone)]
pub struct PlanResult {
    pub controls: Vec<DVector<f64>>,
    /// Most-likely-observation beliefs after each control.
    pub beliefs: Vec<GaussianBelief>,
    pub objective: f64,
    /// `residuals[step][obstacle]`, non-positive when satisfied.
    pub residuals: Vec<Vec<f64>>,
    pub status: PlanStatus,
    pub iterations: usize,
}

impl PlanResult {
    pub fn is_feasible(&self) -> bool {
        matches!(
            self.status,
            PlanStatus::Optimal | PlanStatus::Feasible | PlanStatus::MaxIter
        )
    }

    pub fn max_residual(&self) -> f64 {
        self.residuals
            .iter()
            .flatten()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// `uᵀ M_u u`.
pub fn stage_cost(u: &DVector<f64>, m_u: &DMatrix<f64>) -> f64 {
    quad(m_u, u)
}

/// Expected terminal cost under the innovation law at the terminal
/// predicted belief: `‖μ̄ - x_g‖²_{M_g} + tr(K S Kᵀ M_g)`, with `K` restricted
/// to the goal coordinates.
pub fn expected_terminal_cost<M: ModelPair + ?Sized>(
    predicted: &GaussianBelief,
    goal: &DVector<f64>,
    m_g: &DMatrix<f64>,
    model: &M,
) -> Result<f64> {
    let n = goal.len();
    let diff = predicted.mean.rows(0, n) - goal;
    let g = kalman_gain(predicted, model)?;
    let k = g.k.rows(0, n);
    let spread = (k * &g.s * k.transpose() * m_g).trace();
    Ok(quad(m_g, &diff) + spread)
}

/// Precomputed inputs of the far-field screen: the sum of the two largest
/// semi-axes and the largest eigenvalue of the relative covariance.
#[derive(Debug, Clone, Copy)]
struct Screen {
    reach: f64,
    top: f64,
}

impl Screen {
    fn new(robot: &Ellipsoid, obstacle: &Ellipsoid, sigma: &DMatrix<f64>) -> Self {
        Self {
            reach: robot.principal_axes().0[0] + obstacle.principal_axes().0[0],
            top: sym_eigen_sorted(sigma).0[0],
        }
    }

    /// True when the bounding spheres are so far apart relative to the
    /// spread that a collision has probability at most `SCREEN_TAIL`.
    fn clears(&self, mean: &DVector<f64>, obstacle: &Ellipsoid) -> bool {
        let gap = (mean - obstacle.center()).norm() - self.reach;
        if gap <= 0.0 {
            return false;
        }
        if self.top <= 0.0 {
            return true;
        }
        gamma_ur(0.5 * mean.len() as f64, 0.5 * gap * gap / self.top) <= SCREEN_TAIL
    }
}

/// Quantities of one (step, obstacle) pair that depend on the position
/// covariance but not on the mean.
#[derive(Debug, Clone)]
struct PairCache {
    screen: Screen,
    sigma: DMatrix<f64>,
    factors: Option<SigmaFactors>,
    /// Contact solver against the inflated robot, for bounding volumes.
    inflated: Option<ContactSolver>,
}

impl PairCache {
    fn new(
        robot: &Ellipsoid,
        obstacle: &Obstacle,
        pos_cov: &DMatrix<f64>,
        method: RiskMethod,
        opts: &EvalOptions,
    ) -> Self {
        let sigma = pos_cov + &obstacle.cov;
        let inflated = if method == RiskMethod::BoundingVolume && opts.n_sigma > 0.0 {
            inflate(robot, &sigma, opts.n_sigma)
                .and_then(|g| ContactSolver::new(&obstacle.ellipsoid, &g))
                .ok()
        } else {
            None
        };
        Self {
            screen: Screen::new(robot, &obstacle.ellipsoid, &sigma),
            factors: SigmaFactors::new(&sigma).ok(),
            sigma,
            inflated,
        }
    }

    fn linearize(&self, solver: &ContactSolver, mean: &DVector<f64>, obstacle: &Ellipsoid) -> Result<Linearized> {
        Ok(Linearized {
            contact: solver.solve(obstacle.center(), mean)?,
            mean: mean - obstacle.center(),
            cov: self.sigma.clone(),
        })
    }
}

#[allow(clippy::too_many_arguments)]
fn residual_core(
    mean: &DVector<f64>,
    robot: &Ellipsoid,
    obstacle: &Obstacle,
    solver: &ContactSolver,
    cache: &PairCache,
    eps: f64,
    method: RiskMethod,
    opts: &EvalOptions,
) -> Result<f64> {
    let screened = matches!(method, RiskMethod::Exact | RiskMethod::BoundingVolume);
    if screened && cache.screen.clears(mean, &obstacle.ellipsoid) {
        return Ok(-eps);
    }
    match method {
        RiskMethod::UpperBound => Ok(cache
            .linearize(solver, mean, &obstacle.ellipsoid)?
            .eps_safe_residual(eps)),
        RiskMethod::Exact => {
            let lin = cache.linearize(solver, mean, &obstacle.ellipsoid)?;
            Ok(lin.exact_probability(cache.factors.as_ref(), opts)? - eps)
        }
        RiskMethod::BoundingVolume => {
            let hit = match &cache.inflated {
                Some(solver) => solver.collides(obstacle.ellipsoid.center(), mean)?,
                None => {
                    let placed = robot.translated_to(mean.clone());
                    bounding_volume_check(&placed, &obstacle.ellipsoid, &cache.sigma, opts.n_sigma)? > 0.0
                }
            };
            Ok(if hit { 1.0 } else { 0.0 } - eps)
        }
        RiskMethod::CenterPoint => {
            let placed = robot.translated_to(mean.clone());
            Ok(center_point_probability(&placed, &obstacle.ellipsoid, &cache.sigma)? - eps)
        }
        other => Err(Error::InvalidConfig(format!(
            "method {other} cannot be used for planning"
        ))),
    }
}

/// Residual of one robot/obstacle constraint at a belief over the robot
/// position; non-positive iff the method deems the step ε-safe.
///
/// Method `upper_bound` returns the reverse-Markov residual; the others
/// return `probability - ε`. For `exact` and `bounding_volume`, pairs whose
/// bounding spheres are far apart relative to the position spread are
/// reported as probability 0 without evaluation.
pub fn collision_constraint(
    position: &GaussianBelief,
    robot: &Ellipsoid,
    obstacle: &Ellipsoid,
    obstacle_cov: &DMatrix<f64>,
    eps: f64,
    method: RiskMethod,
    opts: &EvalOptions,
) -> Result<f64> {
    let o = Obstacle::new(obstacle.clone(), obstacle_cov.clone())?;
    if position.dim() != robot.dim() {
        return Err(Error::DimensionMismatch {
            expected: robot.dim(),
            got: position.dim(),
        });
    }
    let solver = ContactSolver::new(obstacle, robot)?;
    let cache = PairCache::new(robot, &o, &position.cov, method, opts);
    residual_core(&position.mean, robot, &o, &solver, &cache, eps, method, opts)
}

/// `P(v <= thr) <= Var / (Var + (E - thr)²)` for `thr < E`, else 1.
fn cantelli_bound(lin: &Linearized) -> f64 {
    let a = &lin.contact.collision_matrix;
    let mean = quadform_mean(a, &lin.mean, &lin.cov);
    let gap = mean - lin.contact.threshold;
    if gap <= 0.0 {
        return 1.0;
    }
    let var = quadform_variance(a, &lin.mean, &lin.cov);
    var / (var + gap * gap)
}

/// Covariance rollout shared by all candidates of an LTI model.
struct CovRollout {
    caches: Vec<Vec<PairCache>>,
    terminal_spread: f64,
}

/// States after each control, plus their covariances when they depend on
/// the controls.
struct Rolled {
    /// One column per step.
    states: DMatrix<f64>,
    covs: Vec<DMatrix<f64>>,
    cost: f64,
}

struct Evaluator<'a, M: ModelPair> {
    p: &'a PlanProblem<M>,
    n: usize,
    shared: Option<CovRollout>,
    solvers: Vec<ContactSolver>,
    /// (step, obstacle) of the most recent violation, checked first.
    hot: Cell<Option<(usize, usize)>>,
}

impl<'a, M: ModelPair> Evaluator<'a, M> {
    fn new(p: &'a PlanProblem<M>) -> Result<Self> {
        let n = p.robot.dim();
        let shared = if p.model.is_lti() {
            let zero = DVector::zeros(p.control_dim());
            let mut b = p.initial.clone();
            let mut caches = Vec::with_capacity(p.horizon);
            let mut terminal_spread = 0.0;
            for step in 0..p.horizon {
                if step + 1 == p.horizon {
                    let pred = ekf_predict(&b, &zero, &p.model)?;
                    let zero_goal = pred.mean.rows(0, n).into_owned();
                    terminal_spread = expected_terminal_cost(&pred, &zero_goal, &p.m_g, &p.model)?;
                }
                b = propagate_ml(&b, &zero, &p.model)?;
                let pc = b.marginal(n).1;
                caches.push(
                    p.obstacles
                        .iter()
                        .map(|o| PairCache::new(&p.robot, o, &pc, p.method, &p.eval))
                        .collect(),
                );
            }
            Some(CovRollout {
                caches,
                terminal_spread,
            })
        } else {
            None
        };
        let solvers = p
            .obstacles
            .iter()
            .map(|o| ContactSolver::new(&o.ellipsoid, &p.robot))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            p,
            n,
            shared,
            solvers,
            hot: Cell::new(None),
        })
    }

    fn rollout(&self, u: &[DVector<f64>]) -> Result<Rolled> {
        let p = self.p;
        let mut cost: f64 = u.iter().map(|ui| stage_cost(ui, &p.m_u)).sum();
        let mut states = DMatrix::zeros(p.initial.dim(), u.len());
        let mut covs = Vec::new();
        match &self.shared {
            Some(shared) => {
                let mut x = p.initial.mean.clone();
                let mut next = x.clone();
                for (step, ui) in u.iter().enumerate() {
                    p.model.f_into(&x, ui, &mut next);
                    std::mem::swap(&mut x, &mut next);
                    if x.iter().any(|v| !v.is_finite()) {
                        return Err(Error::NonFiniteDynamics);
                    }
                    states.set_column(step, &x);
                }
                let diff = x.rows(0, self.n) - &p.goal;
                cost += quad(&p.m_g, &diff) + shared.terminal_spread;
            }
            None => {
                let mut b = p.initial.clone();
                for (step, ui) in u.iter().enumerate() {
                    if step + 1 == u.len() {
                        let pred = ekf_predict(&b, ui, &p.model)?;
                        cost += expected_terminal_cost(&pred, &p.goal, &p.m_g, &p.model)?;
                    }
                    b = propagate_ml(&b, ui, &p.model)?;
                    states.set_column(step, &b.mean);
                    covs.push(b.marginal(self.n).1);
                }
            }
        }
        Ok(Rolled { states, covs, cost })
    }

    fn cache<'c>(&'c self, r: &Rolled, step: usize, obs: usize) -> std::borrow::Cow<'c, PairCache> {
        match &self.shared {
            Some(s) => std::borrow::Cow::Borrowed(&s.caches[step][obs]),
            None => std::borrow::Cow::Owned(PairCache::new(
                &self.p.robot,
                &self.p.obstacles[obs],
                &r.covs[step],
                self.p.method,
                &self.p.eval,
            )),
        }
    }

    fn residual(&self, r: &Rolled, step: usize, obs: usize) -> f64 {
        let p = self.p;
        let mean = r.states.view((0, step), (self.n, 1)).column(0).into_owned();
        let cache = self.cache(r, step, obs);
        residual_core(
            &mean,
            &p.robot,
            &p.obstacles[obs],
            &self.solvers[obs],
            &cache,
            p.epsilon,
            p.method,
            &p.eval,
        )
        .unwrap_or(f64::INFINITY)
    }

    /// Same verdict as `residual(..) <= 0`. For the exact method a
    /// one-sided Chebyshev bound on the quadratic form settles most
    /// satisfied steps before the series is needed.
    fn satisfied(&self, r: &Rolled, step: usize, obs: usize) -> bool {
        let p = self.p;
        if p.method != RiskMethod::Exact {
            return self.residual(r, step, obs) <= 0.0;
        }
        let o = &p.obstacles[obs];
        let mean = r.states.view((0, step), (self.n, 1)).column(0).into_owned();
        let cache = self.cache(r, step, obs);
        if cache.screen.clears(&mean, &o.ellipsoid) {
            return true;
        }
        let Ok(lin) = cache.linearize(&self.solvers[obs], &mean, &o.ellipsoid) else {
            return false;
        };
        if cantelli_bound(&lin) <= p.epsilon {
            return true;
        }
        match lin.exact_probability(cache.factors.as_ref(), &p.eval) {
            Ok(v) => v <= p.epsilon,
            Err(_) => false,
        }
    }

    /// True iff every constraint holds; stops at the first violation.
    fn feasible(&self, r: &Rolled) -> bool {
        let steps = r.states.ncols();
        let k = self.p.obstacles.len();
        if let Some((step, obs)) = self.hot.get() {
            if step < steps && !self.satisfied(r, step, obs) {
                return false;
            }
        }
        for step in 0..steps {
            for obs in 0..k {
                if !self.satisfied(r, step, obs) {
                    self.hot.set(Some((step, obs)));
                    return false;
                }
            }
        }
        true
    }

    fn residuals(&self, r: &Rolled) -> Vec<Vec<f64>> {
        (0..r.states.ncols())
            .map(|step| {
                (0..self.p.obstacles.len())
                    .map(|obs| self.residual(r, step, obs))
                    .collect()
            })
            .collect()
    }

    fn violation(&self, r: &Rolled) -> f64 {
        self.residuals(r).iter().flatten().map(|v| v.max(0.0)).sum()
    }
}

fn clip(x: &mut DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>) {
    for i in 0..x.len() {
        x[i] = x[i].clamp(lo[i], hi[i]);
    }
}

struct Candidate {
    controls: Vec<DVector<f64>>,
    cost: f64,
}

fn by_cost(a: &(usize, f64), b: &(usize, f64)) -> Ordering {
    a.1.total_cmp(&b.1).then(a.0.cmp(&b.0))
}

/// Runs the cross-entropy search and returns the best sequence found,
/// including an infeasible one when nothing satisfies the constraints.
pub fn solve<M: ModelPair>(problem: &PlanProblem<M>, seed: u64) -> Result<PlanResult> {
    problem.validate()?;
    let ev = Evaluator::new(problem)?;
    let l = problem.horizon;
    let m = problem.control_dim();
    let cfg = problem.cem;
    let half = (&problem.u_max - &problem.u_min) * 0.5;
    let mid = (&problem.u_max + &problem.u_min) * 0.5;

    let mut mean: Vec<DVector<f64>> = match &problem.warm_start {
        Some(w) => w.clone(),
        None => vec![mid.clone(); l],
    };
    let spread = if problem.warm_start.is_some() {
        cfg.warm_std
    } else {
        cfg.init_std
    };
    let mut std: Vec<DVector<f64>> = vec![&half * spread; l];

    // a constant full-speed heading toward the goal seeds the first round
    let heading = if m == problem.goal.len() {
        let d = &problem.goal - problem.initial.mean.rows(0, m);
        let norm = d.norm();
        (norm > 0.0).then(|| {
            let mut u = d.component_mul(&half) / norm;
            clip(&mut u, &problem.u_min, &problem.u_max);
            u
        })
    } else {
        None
    };

    let mut best: Option<Candidate> = None;
    let mut least_bad: Option<(f64, Candidate)> = None;
    let mut stall = 0;
    let mut status = PlanStatus::MaxIter;
    let mut iterations = 0;

    for iter in 0..cfg.iterations {
        iterations = iter + 1;
        let mut rng = chunk_rng(seed, iter as u64);
        let mut pop: Vec<Vec<DVector<f64>>> = Vec::with_capacity(cfg.population);
        let mut centre = mean.clone();
        centre.iter_mut().for_each(|u| clip(u, &problem.u_min, &problem.u_max));
        pop.push(centre);
        if iter == 0 {
            if let Some(h) = &heading {
                pop.push(vec![h.clone(); l]);
            }
        }
        if let Some(b) = &best {
            pop.push(b.controls.clone());
        }
        while pop.len() < cfg.population {
            let seq = (0..l)
                .map(|k| {
                    let mut u = DVector::from_iterator(
                        m,
                        (0..m).map(|i| mean[k][i] + std[k][i] * rng.sample::<f64, _>(StandardNormal)),
                    );
                    clip(&mut u, &problem.u_min, &problem.u_max);
                    u
                })
                .collect();
            pop.push(seq);
        }

        let rolled: Vec<Option<Rolled>> = pop.iter().map(|c| ev.rollout(c).ok()).collect();
        let mut order: Vec<(usize, f64)> = rolled
            .iter()
            .enumerate()
            .map(|(i, r)| (i, r.as_ref().map_or(f64::INFINITY, |r| r.cost)))
            .collect();
        order.sort_by(by_cost);

        let mut elites: Vec<usize> = Vec::with_capacity(cfg.elites);
        for &(i, cost) in &order {
            if elites.len() == cfg.elites || !cost.is_finite() {
                break;
            }
            if ev.feasible(rolled[i].as_ref().expect("finite cost implies rollout")) {
                elites.push(i);
            }
        }

        if elites.is_empty() {
            // steer toward the least-violating region
            let mut scored: Vec<(usize, f64)> = order
                .iter()
                .filter(|(_, c)| c.is_finite())
                .map(|&(i, _)| (i, ev.violation(rolled[i].as_ref().expect("rolled"))))
                .collect();
            scored.sort_by(by_cost);
            elites = scored.iter().take(cfg.elites).map(|&(i, _)| i).collect();
            if let Some(&(i, v)) = scored.first() {
                if least_bad.as_ref().is_none_or(|(bv, _)| v < *bv) {
                    let cost = rolled[i].as_ref().expect("rolled").cost;
                    least_bad = Some((
                        v,
                        Candidate {
                            controls: pop[i].clone(),
                            cost,
                        },
                    ));
                }
            }
            if elites.is_empty() {
                return Err(Error::NonFiniteDynamics);
            }
        } else {
            let top = elites[0];
            let top_cost = rolled[top].as_ref().expect("rolled").cost;
            let improved = best
                .as_ref()
                .is_none_or(|b| top_cost < b.cost - 1e-12 * b.cost.abs().max(1.0));
            if improved {
                best = Some(Candidate {
                    controls: pop[top].clone(),
                    cost: top_cost,
                });
                stall = 0;
            } else {
                stall += 1;
            }
        }

        let k = elites.len() as f64;
        let a = cfg.smoothing;
        let mut widest = 0.0f64;
        for step in 0..l {
            for i in 0..m {
                let vals = elites.iter().map(|&e| pop[e][step][i]);
                let mu = vals.clone().sum::<f64>() / k;
                let var = vals.map(|v| (v - mu) * (v - mu)).sum::<f64>() / k;
                mean[step][i] = a * mu + (1.0 - a) * mean[step][i];
                std[step][i] = a * var.sqrt() + (1.0 - a) * std[step][i];
                if half[i] > 0.0 {
                    widest = widest.max(std[step][i] / half[i]);
                }
            }
        }

        if best.is_some() {
            if widest < cfg.min_std {
                status = PlanStatus::Optimal;
                break;
            }
            if stall >= cfg.stall_iterations {
                status = PlanStatus::Feasible;
                break;
            }
        }
    }

    let (chosen, status) = match best {
        Some(b) => (b, status),
        None => match least_bad {
            Some((_, c)) => (c, PlanStatus::Infeasible),
            None => return Err(Error::Infeasible),
        },
    };
    // final certificate from a full, uncached rollout
    let mut b = problem.initial.clone();
    let mut beliefs = Vec::with_capacity(l);
    for u in &chosen.controls {
        b = propagate_ml(&b, u, &problem.model)?;
        beliefs.push(b.clone());
    }
    let n = problem.robot.dim();
    let residuals = beliefs
        .iter()
        .map(|b| {
            let (mean, cov) = b.marginal(n);
            let pos = GaussianBelief { mean, cov };
            problem
                .obstacles
                .iter()
                .map(|o| {
                    collision_constraint(
                        &pos,
                        &problem.robot,
                        &o.ellipsoid,
                        &o.cov,
                        problem.epsilon,
                        problem.method,
                        &problem.eval,
                    )
                    .unwrap_or(f64::INFINITY)
                })
                .collect()
        })
        .collect();
    let objective = objective(problem, &chosen.controls)?;
    debug_assert!((objective - chosen.cost).abs() <= 1e-6 * objective.abs().max(1.0));
    Ok(PlanResult {
        controls: chosen.controls,
        beliefs,
        objective,
        residuals,
        status,
        iterations,
    })
}

/// Plans a control sequence; fails with `Infeasible` when no sequence
/// satisfies every constraint.
pub fn plan<M: ModelPair>(problem: &PlanProblem<M>, seed: u64) -> Result<PlanResult> {
    let r = solve(problem, seed)?;
    if r.status == PlanStatus::Infeasible {
        return Err(Error::Infeasible);
    }
    Ok(r)
}

/// Objective of a control sequence, evaluated with a full EKF rollout.
pub fn objective<M: ModelPair>(problem: &PlanProblem<M>, controls: &[DVector<f64>]) -> Result<f64> {
    let mut cost: f64 = controls.iter().map(|u| stage_cost(u, &problem.m_u)).sum();
    let mut b = problem.initial.clone();
    for (step, u) in controls.iter().enumerate() {
        if step + 1 == controls.len() {
            let pred = ekf_predict(&b, u, &problem.model)?;
            cost += expected_terminal_cost(&pred, &problem.goal, &problem.m_g, &problem.model)?;
        }
        b = propagate_ml(&b, u, &problem.model)?;
    }
    Ok(cost)
}

/// Residuals of a control sequence, recomputed from scratch.
pub fn constraint_residuals<M: ModelPair>(
    problem: &PlanProblem<M>,
    controls: &[DVector<f64>],
) -> Result<Vec<Vec<f64>>> {
    let n = problem.robot.dim();
    let mut b = problem.initial.clone();
    let mut out = Vec::with_capacity(controls.len());
    for u in controls {
        b = propagate_ml(&b, u, &problem.model)?;
        let (mean, cov) = b.marginal(n);
        let pos = GaussianBelief { mean, cov };
        let row = problem
            .obstacles
            .iter()
            .map(|o| {
                collision_constraint(
                    &pos,
                    &problem.robot,
                    &o.ellipsoid,
                    &o.cov,
                    problem.epsilon,
                    problem.method,
                    &problem.eval,
                )
            })
            .collect::<Result<Vec<f64>>>()?;
        out.push(row);
    }
    Ok(out)
}
