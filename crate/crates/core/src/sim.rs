//! Closed-loop scenario runs: plan, execute the first control on the true
//! state, observe, filter, repeat.
//!
//! The true state follows the motion model with process noise and is
//! observed through the measurement model with noise `scale * Σ_base`.
//! Obstacles stay at their nominal centers; the covariance attached to an
//! obstacle is what the planner believes about its position, and it is
//! scaled by the same noise multiplier as the measurements.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::belief::{ekf_predict, ekf_update, GaussianBelief, LinearModel, ModelPair};
use crate::error::{Error, Result};
use crate::geometry::{intersects, surface_distance, Ellipsoid};
use crate::linalg::psd_factor;
use crate::oracle::{chunk_rng, draw_gaussian};
use crate::planner::{solve, CemConfig, Obstacle, PlanProblem, PlanStatus};
use crate::query::EvalOptions;
use crate::riskbounds::RiskMethod;
use crate::scene::{BodySpec, CovSpec, Rotation};

/// Schema comment written as the first line of every CSV file.
pub const CSV_SCHEMA: &str = "# schema=1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotSpec {
    pub semi_axes: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rotation: Option<Rotation>,
}

fn d_base_measurement() -> CovSpec {
    CovSpec::Diagonal(vec![0.05; 3])
}
fn d_process() -> CovSpec {
    CovSpec::Diagonal(vec![1e-4; 3])
}
fn d_initial() -> CovSpec {
    CovSpec::Diagonal(vec![0.01; 3])
}
fn d_one() -> f64 {
    1.0
}
fn d_true() -> bool {
    true
}
fn d_eps() -> f64 {
    0.05
}
fn d_horizon() -> usize {
    20
}
fn d_runs() -> usize {
    10
}
fn d_dt() -> f64 {
    0.1
}
fn d_tol() -> f64 {
    0.2
}
fn d_cap() -> usize {
    600
}
fn d_limit() -> f64 {
    1.5
}
fn d_mu() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    /// Free-form description, e.g. the provenance of a layout.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub start: Vec<f64>,
    #[serde(default = "d_initial")]
    pub initial_cov: CovSpec,
    pub robot: RobotSpec,
    pub goal: Vec<f64>,
    #[serde(default)]
    pub obstacles: Vec<BodySpec>,
    /// Multiplier on `base_measurement_cov`.
    #[serde(default = "d_one")]
    pub noise_scale: f64,
    #[serde(default = "d_base_measurement")]
    pub base_measurement_cov: CovSpec,
    #[serde(default = "d_process")]
    pub process_cov: CovSpec,
    /// Scale obstacle covariances by `noise_scale` as well.
    #[serde(default = "d_true")]
    pub scale_obstacle_cov: bool,
    #[serde(default = "d_eps")]
    pub epsilon: f64,
    #[serde(default = "d_horizon")]
    pub horizon: usize,
    #[serde(default = "d_runs")]
    pub runs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_dt")]
    pub dt: f64,
    #[serde(default = "d_tol")]
    pub goal_tolerance: f64,
    #[serde(default = "d_cap")]
    pub step_cap: usize,
    /// Per-axis speed limit, m/s.
    #[serde(default = "d_limit")]
    pub control_limit: f64,
    /// Stage weight `M_u = m_u I`.
    #[serde(default = "d_mu")]
    pub m_u: f64,
    /// Terminal weight `M_g = m_g I`.
    #[serde(default = "d_one")]
    pub m_g: f64,
}

/// Everything a run needs, validated and in matrix form.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub robot: Ellipsoid,
    pub obstacles: Vec<Obstacle>,
    pub model: LinearModel,
    pub start: GaussianBelief,
    pub goal: DVector<f64>,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: ScenarioConfig = serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        c.build()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn with_noise_scale(&self, scale: f64) -> Self {
        Self {
            noise_scale: scale,
            ..self.clone()
        }
    }

    pub fn build(&self) -> Result<Scenario> {
        let n = self.start.len();
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if n != 2 && n != 3 {
            return Err(Error::UnsupportedDimension(n));
        }
        if self.goal.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: self.goal.len(),
            });
        }
        if !(self.noise_scale > 0.0 && self.noise_scale.is_finite()) {
            return bad(format!("noise_scale must be positive, got {}", self.noise_scale));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return bad(format!("epsilon must lie in (0, 1), got {}", self.epsilon));
        }
        if self.horizon == 0 || self.runs == 0 || self.step_cap == 0 {
            return bad("horizon, runs and step_cap must be positive".into());
        }
        for (name, v) in [
            ("dt", self.dt),
            ("goal_tolerance", self.goal_tolerance),
            ("control_limit", self.control_limit),
            ("m_g", self.m_g),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.m_u >= 0.0 && self.m_u.is_finite()) {
            return bad(format!("m_u must be non-negative, got {}", self.m_u));
        }
        let robot = BodySpec {
            center: self.start.clone(),
            semi_axes: self.robot.semi_axes.clone(),
            rotation: self.robot.rotation,
            covariance: None,
        }
        .ellipsoid()
        .map_err(|e| Error::InvalidConfig(format!("robot: {e}")))?;
        let scale = if self.scale_obstacle_cov { self.noise_scale } else { 1.0 };
        let obstacles = self
            .obstacles
            .iter()
            .enumerate()
            .map(|(i, o)| {
                if o.dim() != n {
                    return Err(Error::InvalidConfig(format!(
                        "obstacles[{i}]: dimension {} differs from {n}",
                        o.dim()
                    )));
                }
                let e = o
                    .ellipsoid()
                    .map_err(|e| Error::InvalidConfig(format!("obstacles[{i}]: {e}")))?;
                let c = o
                    .cov()
                    .map_err(|e| Error::InvalidConfig(format!("obstacles[{i}].covariance: {e}")))?;
                Obstacle::new(e, c * scale)
            })
            .collect::<Result<Vec<_>>>()?;
        let q = self.base_measurement_cov.matrix(n)? * self.noise_scale;
        let r = self.process_cov.matrix(n)?;
        let model = LinearModel::point_mass(n, self.dt, r, q)?;
        let start = GaussianBelief::new(DVector::from_column_slice(&self.start), self.initial_cov.matrix(n)?)?;
        Ok(Scenario {
            config: self.clone(),
            robot,
            obstacles,
            model,
            start,
            goal: DVector::from_column_slice(&self.goal),
        })
    }
}

/// One executed step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub t: f64,
    pub truth: DVector<f64>,
    pub estimate: GaussianBelief,
    /// Planned belief after the executed control.
    pub planned: GaussianBelief,
    pub control: DVector<f64>,
    pub residuals: Vec<f64>,
    pub status: PlanStatus,
    pub plan_iterations: usize,
    pub collided: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub start_truth: DVector<f64>,
    pub steps: Vec<StepRecord>,
}

/// Outcome of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Minimum true robot/obstacle surface distance, m.
    pub d: Option<f64>,
    /// Length of the true path, m.
    pub l: f64,
    /// Duration, s.
    pub t: f64,
    pub reached: bool,
    pub collided: bool,
    pub infeasible_plans: usize,
}

impl Metrics {
    pub fn success(&self) -> bool {
        self.reached && !self.collided
    }
}

/// Statistics over several runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub runs: usize,
    pub successes: usize,
    pub collisions: usize,
    /// Mean of `d` over successful runs.
    pub d_mean: Option<f64>,
    /// Sample standard deviation of `d` over successful runs.
    pub d_std: Option<f64>,
    pub l: f64,
    pub t: f64,
    pub sp: f64,
}

/// `d` and its spread over successful runs; `l` and `T` are means over all
/// runs.
pub fn aggregate(runs: &[Metrics]) -> Aggregate {
    assert!(!runs.is_empty(), "aggregate needs at least one run");
    let k = runs.len() as f64;
    let ds: Vec<f64> = runs.iter().filter(|m| m.success()).filter_map(|m| m.d).collect();
    let (d_mean, d_std) = if ds.is_empty() {
        (None, None)
    } else {
        let mean = ds.iter().sum::<f64>() / ds.len() as f64;
        let std = if ds.len() > 1 {
            (ds.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (ds.len() - 1) as f64).sqrt()
        } else {
            0.0
        };
        (Some(mean), Some(std))
    };
    let successes = runs.iter().filter(|m| m.success()).count();
    Aggregate {
        runs: runs.len(),
        successes,
        collisions: runs.iter().filter(|m| m.collided).count(),
        d_mean,
        d_std,
        l: runs.iter().map(|m| m.l).sum::<f64>() / k,
        t: runs.iter().map(|m| m.t).sum::<f64>() / k,
        sp: 100.0 * successes as f64 / k,
    }
}

fn min_distance(robot: &Ellipsoid, obstacles: &[Obstacle], best: &mut Option<f64>) -> Result<()> {
    let r_robot = robot.principal_axes().0[0];
    for o in obstacles {
        let lower = (robot.center() - o.ellipsoid.center()).norm() - r_robot - o.ellipsoid.principal_axes().0[0];
        if best.is_some_and(|b| lower >= b) {
            continue;
        }
        let d = surface_distance(&o.ellipsoid, robot)?;
        if best.is_none_or(|b| d < b) {
            *best = Some(d);
        }
    }
    Ok(())
}

fn shifted(controls: &[DVector<f64>]) -> Vec<DVector<f64>> {
    let mut w: Vec<DVector<f64>> = controls[1..].to_vec();
    w.push(controls[controls.len() - 1].clone());
    w
}

/// Runs one closed-loop episode. Randomness comes from three ChaCha streams
/// of `seed`: truth noise, measurement noise and planner seeds.
pub fn run_scenario(sc: &Scenario, method: RiskMethod, seed: u64) -> Result<(Trajectory, Metrics)> {
    let cfg = &sc.config;
    let n = sc.goal.len();
    let mut process_rng = chunk_rng(seed, 0);
    let mut sensor_rng = chunk_rng(seed, 1);
    let mut planner_rng = chunk_rng(seed, 2);
    let r_factor = psd_factor(sc.model.r());
    let q_factor = psd_factor(sc.model.q());

    let mut truth = draw_gaussian(&mut process_rng, &sc.start.mean, &psd_factor(&sc.start.cov));
    let start_truth = truth.clone();
    let mut belief = sc.start.clone();
    let mut warm: Option<Vec<DVector<f64>>> = None;
    let mut steps = Vec::new();
    let mut d: Option<f64> = None;
    let mut length = 0.0;
    let mut collided = false;
    let mut reached = false;
    let mut infeasible = 0;

    let limit = DVector::from_element(n, cfg.control_limit);
    min_distance(&sc.robot.translated_to(truth.clone()), &sc.obstacles, &mut d)?;

    for step in 0..cfg.step_cap {
        if (belief.mean.rows(0, n) - &sc.goal).norm() <= cfg.goal_tolerance {
            reached = true;
            break;
        }
        let mut problem = PlanProblem::new(belief.clone(), sc.goal.clone(), sc.robot.clone(), sc.model.clone());
        problem.horizon = cfg.horizon;
        problem.m_u = DMatrix::identity(n, n) * cfg.m_u;
        problem.m_g = DMatrix::identity(n, n) * cfg.m_g;
        problem.u_min = -&limit;
        problem.u_max = limit.clone();
        problem.epsilon = cfg.epsilon;
        problem.obstacles = sc.obstacles.clone();
        problem.method = method;
        problem.eval = EvalOptions {
            mc_fallback: true,
            seed,
            ..EvalOptions::default()
        };
        problem.cem = CemConfig::default();
        problem.warm_start = warm.take();
        let plan = solve(&problem, planner_rng.random())?;
        if plan.status == PlanStatus::Infeasible {
            infeasible += 1;
        }
        let u = plan.controls[0].clone();
        warm = Some(shifted(&plan.controls));

        let next = draw_gaussian(&mut process_rng, &sc.model.f(&truth, &u), &r_factor);
        length += (&next - &truth).norm();
        truth = next;
        let z = draw_gaussian(&mut sensor_rng, &sc.model.h(&truth), &q_factor);
        belief = ekf_update(&ekf_predict(&belief, &u, &sc.model)?, &z, &sc.model)?;

        let placed = sc.robot.translated_to(truth.clone());
        let mut hit = false;
        for o in &sc.obstacles {
            hit |= intersects(&o.ellipsoid, &placed)?;
        }
        collided |= hit;
        min_distance(&placed, &sc.obstacles, &mut d)?;

        steps.push(StepRecord {
            step: step + 1,
            t: (step + 1) as f64 * cfg.dt,
            truth: truth.clone(),
            estimate: belief.clone(),
            planned: plan.beliefs[0].clone(),
            control: u,
            residuals: plan.residuals[0].clone(),
            status: plan.status,
            plan_iterations: plan.iterations,
            collided: hit,
        });
    }
    if !reached && (belief.mean.rows(0, n) - &sc.goal).norm() <= cfg.goal_tolerance {
        reached = true;
    }
    let metrics = Metrics {
        d,
        l: length,
        t: steps.len() as f64 * cfg.dt,
        reached,
        collided,
        infeasible_plans: infeasible,
    };
    Ok((Trajectory { start_truth, steps }, metrics))
}

/// Seed of run `i` of a batch with master seed `master`.
pub fn run_seed(master: u64, i: usize) -> u64 {
    master.wrapping_add(i as u64)
}

/// Runs `runs` episodes, spread over the available threads; results are in
/// run order.
pub fn run_batch(sc: &Scenario, method: RiskMethod, runs: usize, master: u64) -> Result<Vec<(Trajectory, Metrics)>> {
    let threads = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(runs.max(1));
    if threads <= 1 {
        return (0..runs)
            .map(|i| run_scenario(sc, method, run_seed(master, i)))
            .collect();
    }
    let mut slots: Vec<Option<Result<(Trajectory, Metrics)>>> = (0..runs).map(|_| None).collect();
    std::thread::scope(|scope| {
        let per = runs.div_ceil(threads);
        for (t, chunk) in slots.chunks_mut(per).enumerate() {
            scope.spawn(move || {
                for (k, slot) in chunk.iter_mut().enumerate() {
                    *slot = Some(run_scenario(sc, method, run_seed(master, t * per + k)));
                }
            });
        }
    });
    slots.into_iter().map(|s| s.expect("every run filled")).collect()
}

fn with_schema(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let body = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    Ok(format!(
        "{CSV_SCHEMA}\n{}",
        String::from_utf8(body).map_err(|e| Error::Io(e.to_string()))?
    ))
}

const AXES: [&str; 3] = ["x", "y", "z"];

/// Trajectory CSV: one row per state, starting with the initial one.
pub fn trajectory_csv(traj: &Trajectory, start: &GaussianBelief, obstacles: usize) -> Result<String> {
    let n = start.mean.len();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["step".to_string(), "t".to_string()];
    header.extend(AXES[..n].iter().map(|a| format!("true_{a}")));
    header.extend(AXES[..n].iter().map(|a| format!("est_{a}")));
    header.push("cov_trace".into());
    header.extend((0..obstacles).map(|i| format!("residual_{i}")));
    header.push("collided".into());
    w.write_record(&header)?;
    let mut row = |step: usize, t: f64, truth: &DVector<f64>, est: &GaussianBelief, res: &[f64], hit: bool| {
        let mut r = vec![step.to_string(), t.to_string()];
        r.extend(truth.iter().map(|v| v.to_string()));
        r.extend(est.mean.iter().take(n).map(|v| v.to_string()));
        r.push(est.cov.trace().to_string());
        r.extend(res.iter().map(|v| v.to_string()));
        if res.is_empty() {
            r.extend((0..obstacles).map(|_| String::new()));
        }
        r.push(u8::from(hit).to_string());
        w.write_record(&r)
    };
    row(0, 0.0, &traj.start_truth, start, &[], false)?;
    for s in &traj.steps {
        row(s.step, s.t, &s.truth, &s.estimate, &s.residuals, s.collided)?;
    }
    with_schema(w)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: RiskMethod,
    pub noise_scale: f64,
    pub runs: usize,
    pub d_mean: Option<f64>,
    pub d_std: Option<f64>,
    pub l: f64,
    #[serde(rename = "T")]
    pub t: f64,
    pub sp: f64,
}

pub fn metrics_csv(rows: &[AggregateRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    if rows.is_empty() {
        w.write_record(["method", "noise_scale", "runs", "d_mean", "d_std", "l", "T", "sp"])?;
    }
    with_schema(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn metric(d: Option<f64>, reached: bool, collided: bool) -> Metrics {
        Metrics {
            d,
            l: 10.0,
            t: 5.0,
            reached,
            collided,
            infeasible_plans: 0,
        }
    }

    #[test]
    fn aggregate_single_run_is_identity() {
        let a = aggregate(&[metric(Some(0.4), true, false)]);
        assert_eq!(
            (a.d_mean, a.d_std, a.l, a.t, a.sp),
            (Some(0.4), Some(0.0), 10.0, 5.0, 100.0)
        );
    }

    #[test]
    fn aggregate_all_failed() {
        let a = aggregate(&[metric(Some(0.0), true, true), metric(Some(0.3), false, false)]);
        assert_eq!((a.d_mean, a.d_std, a.sp, a.collisions), (None, None, 0.0, 1));
    }

    #[test]
    fn metrics_csv_has_schema_line() {
        let row = AggregateRow {
            method: RiskMethod::Exact,
            noise_scale: 1.0,
            runs: 1,
            d_mean: None,
            d_std: None,
            l: 1.0,
            t: 2.0,
            sp: 0.0,
        };
        let text = metrics_csv(&[row]).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(CSV_SCHEMA));
        assert_eq!(lines.next(), Some("method,noise_scale,runs,d_mean,d_std,l,T,sp"));
        assert_eq!(lines.next(), Some("exact,1.0,1,,,1.0,2.0,0.0"));
    }

    fn open_field() -> ScenarioConfig {
        ScenarioConfig::from_json(
            r#"{"name": "open", "start": [0, 0, 1], "robot": {"semi_axes": [0.18, 0.18, 0.06]},
                "goal": [0, 3, 1], "initial_cov": [0, 0, 0], "process_cov": [0, 0, 0],
                "base_measurement_cov": [1e-9, 1e-9, 1e-9], "runs": 1}"#,
        )
        .unwrap()
    }

    #[test]
    fn open_field_is_straight() {
        let sc = open_field().build().unwrap();
        let (traj, m) = run_scenario(&sc, RiskMethod::Exact, 0).unwrap();
        assert!(m.reached && !m.collided && m.d.is_none());
        let direct = (traj.steps.last().unwrap().truth.clone() - &traj.start_truth).norm();
        assert!(m.l <= direct * 1.02, "l = {}, direct = {direct}", m.l);
    }

    #[test]
    fn reproducible_per_seed() {
        let sc = open_field().build().unwrap();
        let a = run_scenario(&sc, RiskMethod::Exact, 5).unwrap();
        let b = run_scenario(&sc, RiskMethod::Exact, 5).unwrap();
        assert_eq!(a, b);
    }
}
