//! `ellrisk`: collision probabilities for Gaussian-uncertain ellipsoids,
//! the comparison benchmark, the closed-loop simulator and an oracle
//! cross-check.
//!
//! Exit codes: 0 on success, 1 on bad input, 2 when a series evaluation
//! does not converge and no fallback was requested.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use ellipsoid_risk::geometry::{make_ellipsoid, Ellipsoid};
use ellipsoid_risk::linalg::quaternion_rotation;
use ellipsoid_risk::query::{CollisionQuery, EvalOptions};
use ellipsoid_risk::riskbounds::RiskMethod;
use ellipsoid_risk::scene::SceneFile;
use ellipsoid_risk::sim::{self, AggregateRow, ScenarioConfig, CSV_SCHEMA};
use ellipsoid_risk::Error;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{de::DeserializeOwned, Serialize};

#[derive(Parser)]
#[command(
    name = "ellrisk",
    version,
    about = "Collision probability between Gaussian-uncertain ellipsoids"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Copy)]
struct EvalFlags {
    /// Monte Carlo sample count.
    #[arg(long, default_value_t = 1_000_000)]
    mc_samples: u64,
    /// Seed of every random stream.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Relative truncation tolerance of the series.
    #[arg(long, default_value_t = ellipsoid_risk::quadform::DEFAULT_TOL)]
    tol: f64,
    /// Fall back to Monte Carlo on the quadratic form when the series does
    /// not converge.
    #[arg(long)]
    mc_fallback: bool,
}

impl EvalFlags {
    fn options(&self) -> EvalOptions {
        EvalOptions {
            tol: self.tol,
            mc_samples: self.mc_samples,
            seed: self.seed,
            mc_fallback: self.mc_fallback,
            ..EvalOptions::default()
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Collision probability of the robot against every obstacle of a scene.
    Prob {
        scene: PathBuf,
        #[arg(long, default_value = "exact")]
        method: RiskMethod,
        /// Feasibility threshold; defaults to the scene's epsilon.
        #[arg(long)]
        eps: Option<f64>,
        #[command(flatten)]
        flags: EvalFlags,
        /// Write the report here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Every method on the first obstacle of a scene, with timings.
    BenchTable1 {
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        eps: Option<f64>,
        /// Timing repetitions per method.
        #[arg(long, default_value_t = 20)]
        reps: usize,
        #[command(flatten)]
        flags: EvalFlags,
    },
    /// Closed-loop runs of a scenario.
    Simulate {
        scenario: PathBuf,
        #[arg(long, default_value = "exact")]
        method: RiskMethod,
        /// Number of runs; defaults to the scenario's `runs`.
        #[arg(long)]
        runs: Option<usize>,
        /// Master seed; defaults to the scenario's `seed`, which defaults to 0.
        #[arg(long)]
        seed: Option<u64>,
        /// Comma-separated measurement noise multipliers.
        #[arg(long, value_delimiter = ',')]
        noise_scale: Vec<f64>,
        #[arg(long)]
        eps: Option<f64>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Series against Monte Carlo on random three-dimensional queries.
    Crosscheck {
        #[arg(long, default_value_t = 100)]
        queries: usize,
        #[arg(long, default_value_t = 100_000)]
        mc_samples: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = ellipsoid_risk::quadform::DEFAULT_TOL)]
        tol: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

/// A failure and the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::NotConverged { .. } => 2,
            _ => 1,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn input_error(message: String) -> Failure {
    Failure { code: 1, message }
}

type CliResult<T> = Result<T, Failure>;

/// Parses a JSON file, reporting the failing field path and position.
fn parse_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| input_error(format!("{}: {e}", path.display())))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        let inner = e.into_inner();
        input_error(format!(
            "{}:{}:{}: field `{field}`: {inner}",
            path.display(),
            inner.line(),
            inner.column()
        ))
    })
}

fn load_scene(path: &Path) -> CliResult<SceneFile> {
    let scene: SceneFile = parse_json(path)?;
    scene
        .validate()
        .map_err(|e| input_error(format!("{}: {e}", path.display())))?;
    Ok(scene)
}

fn load_scenario(path: &Path) -> CliResult<ScenarioConfig> {
    let config: ScenarioConfig = parse_json(path)?;
    config
        .build()
        .map_err(|e| input_error(format!("{}: {e}", path.display())))?;
    Ok(config)
}

fn check_eps(eps: f64) -> CliResult<f64> {
    if eps > 0.0 && eps < 1.0 {
        Ok(eps)
    } else {
        Err(input_error(format!("--eps must lie in (0, 1), got {eps}")))
    }
}

fn write_output(out: Option<&Path>, text: &str) -> CliResult<()> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| input_error(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn csv_text<T: Serialize>(rows: &[T], empty_header: &[&str]) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| input_error(e.to_string()))?;
    }
    if rows.is_empty() {
        w.write_record(empty_header).map_err(|e| input_error(e.to_string()))?;
    }
    let body = w.into_inner().map_err(|e| input_error(e.to_string()))?;
    Ok(format!("{CSV_SCHEMA}\n{}", String::from_utf8_lossy(&body)))
}

#[derive(Serialize)]
struct ProbRow {
    obstacle: usize,
    method: RiskMethod,
    probability: f64,
    time_s: f64,
    feasible: bool,
}

fn cmd_prob(scene: &Path, method: RiskMethod, eps: Option<f64>, flags: EvalFlags, out: Option<&Path>) -> CliResult<()> {
    let scene = load_scene(scene)?;
    let eps = check_eps(eps.unwrap_or(scene.epsilon))?;
    let opts = flags.options();
    if method == RiskMethod::Mc || flags.mc_fallback {
        eprintln!("seed {}", flags.seed);
    }
    let mut rows = Vec::new();
    for (i, q) in scene.queries()?.iter().enumerate() {
        let r = q.evaluate(method, eps, &opts)?;
        rows.push(ProbRow {
            obstacle: i,
            method,
            probability: r.probability,
            time_s: r.compute_time,
            feasible: r.feasible,
        });
    }
    write_output(
        out,
        &csv_text(&rows, &["obstacle", "method", "probability", "time_s", "feasible"])?,
    )
}

#[derive(Serialize)]
struct BenchRow {
    method: RiskMethod,
    probability: f64,
    time_s_mean: f64,
    time_s_std: f64,
    feasible: bool,
}

const BENCH_METHODS: [RiskMethod; 5] = [
    RiskMethod::Exact,
    RiskMethod::UpperBound,
    RiskMethod::Mc,
    RiskMethod::BoundingVolume,
    RiskMethod::CenterPoint,
];

fn cmd_bench(scene: &Path, out: &Path, eps: Option<f64>, reps: usize, flags: EvalFlags) -> CliResult<()> {
    let scene = load_scene(scene)?;
    let eps = check_eps(eps.unwrap_or(scene.epsilon))?;
    if reps == 0 {
        return Err(input_error("--reps must be positive".into()));
    }
    let queries = scene.queries()?;
    let Some(q) = queries.first() else {
        return Err(input_error("scene has no obstacle".into()));
    };
    let opts = flags.options();
    eprintln!("seed {}", flags.seed);
    let mut rows = Vec::new();
    for method in BENCH_METHODS {
        let mut times = Vec::with_capacity(reps);
        let mut probability = 0.0;
        for _ in 0..reps {
            let start = Instant::now();
            probability = q.probability(method, &opts)?;
            times.push(start.elapsed().as_secs_f64());
        }
        let mean = times.iter().sum::<f64>() / reps as f64;
        let var = if reps > 1 {
            times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (reps - 1) as f64
        } else {
            0.0
        };
        rows.push(BenchRow {
            method,
            probability,
            time_s_mean: mean,
            time_s_std: var.sqrt(),
            feasible: probability <= eps,
        });
    }
    write_output(Some(out), &csv_text(&rows, &[])?)
}

#[derive(Serialize)]
struct RunSummary {
    seed: u64,
    reached: bool,
    collided: bool,
    d: Option<f64>,
    l: f64,
    #[serde(rename = "T")]
    t: f64,
    infeasible_plans: usize,
}

#[derive(Serialize)]
struct ScaleSummary {
    noise_scale: f64,
    aggregate: AggregateRow,
    runs: Vec<RunSummary>,
}

#[derive(Serialize)]
struct SimulationSummary {
    scenario: String,
    method: RiskMethod,
    master_seed: u64,
    epsilon: f64,
    scales: Vec<ScaleSummary>,
}

#[allow(clippy::too_many_arguments)]
fn cmd_simulate(
    path: &Path,
    method: RiskMethod,
    runs: Option<usize>,
    seed: Option<u64>,
    scales: &[f64],
    eps: Option<f64>,
    out: &Path,
) -> CliResult<()> {
    let mut config = load_scenario(path)?;
    if let Some(e) = eps {
        config.epsilon = check_eps(e)?;
    }
    let runs = runs.unwrap_or(config.runs);
    if runs == 0 {
        return Err(input_error("--runs must be positive".into()));
    }
    let master = seed.unwrap_or(config.seed);
    eprintln!("seed {master}");
    let scales = if scales.is_empty() {
        vec![config.noise_scale]
    } else {
        scales.to_vec()
    };
    fs::create_dir_all(out).map_err(|e| input_error(format!("{}: {e}", out.display())))?;

    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for &scale in &scales {
        let sc = config
            .with_noise_scale(scale)
            .build()
            .map_err(|e| input_error(format!("{}: {e}", path.display())))?;
        let results = sim::run_batch(&sc, method, runs, master)?;
        let mut run_summaries = Vec::new();
        for (i, (traj, m)) in results.iter().enumerate() {
            let csv = sim::trajectory_csv(traj, &sc.start, sc.obstacles.len())?;
            let name = format!("trajectory_{}_x{}_run{:03}.csv", method, scale, i);
            fs::write(out.join(name), csv).map_err(|e| input_error(e.to_string()))?;
            run_summaries.push(RunSummary {
                seed: sim::run_seed(master, i),
                reached: m.reached,
                collided: m.collided,
                d: m.d,
                l: m.l,
                t: m.t,
                infeasible_plans: m.infeasible_plans,
            });
        }
        let metrics: Vec<_> = results.into_iter().map(|(_, m)| m).collect();
        let agg = sim::aggregate(&metrics);
        let row = AggregateRow {
            method,
            noise_scale: scale,
            runs: agg.runs,
            d_mean: agg.d_mean,
            d_std: agg.d_std,
            l: agg.l,
            t: agg.t,
            sp: agg.sp,
        };
        eprintln!(
            "{} x{scale}: sp = {:.0}, d = {}, l = {:.3}, T = {:.2}",
            method,
            row.sp,
            row.d_mean.map_or("-".into(), |d| format!("{d:.3}")),
            row.l,
            row.t
        );
        summaries.push(ScaleSummary {
            noise_scale: scale,
            aggregate: row.clone(),
            runs: run_summaries,
        });
        rows.push(row);
    }
    fs::write(out.join("metrics.csv"), sim::metrics_csv(&rows)?).map_err(|e| input_error(e.to_string()))?;
    let summary = SimulationSummary {
        scenario: config.name.clone(),
        method,
        master_seed: master,
        epsilon: config.epsilon,
        scales: summaries,
    };
    let json = serde_json::to_string_pretty(&summary).map_err(|e| input_error(e.to_string()))?;
    fs::write(out.join("summary.json"), json + "\n").map_err(|e| input_error(e.to_string()))?;
    Ok(())
}

fn random_rotation(rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    loop {
        let q: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.1 && norm <= 1.0 {
            return quaternion_rotation(q.map(|v| v / norm)).expect("unit quaternion");
        }
    }
}

fn random_ellipsoid(rng: &mut ChaCha8Rng, lo: f64, hi: f64, center: DVector<f64>) -> Ellipsoid {
    let axes = DVector::from_fn(3, |_, _| rng.random_range(lo..hi));
    make_ellipsoid(&axes, &random_rotation(rng), &center).expect("valid ellipsoid")
}

fn random_cov(rng: &mut ChaCha8Rng, scale: f64) -> DMatrix<f64> {
    let d = DVector::from_fn(3, |_, _| scale * rng.random_range(0.2..1.0));
    let r = random_rotation(rng);
    &r * DMatrix::from_diagonal(&d) * r.transpose()
}

/// A robot placed near the surface of an obstacle at the origin.
fn random_query(rng: &mut ChaCha8Rng) -> CollisionQuery {
    let obstacle = random_ellipsoid(rng, 0.3, 1.5, DVector::zeros(3));
    let dir = random_rotation(rng).column(0).into_owned();
    let reach = 1.0 / (dir.transpose() * obstacle.shape() * &dir)[0].sqrt();
    let center = dir * reach * rng.random_range(0.8..1.6);
    let robot = random_ellipsoid(rng, 0.1, 0.5, center);
    let robot_scale = rng.random_range(0.005..0.1);
    let s_robot = random_cov(rng, robot_scale);
    let obstacle_scale = rng.random_range(0.0..0.05);
    let s_obstacle = random_cov(rng, obstacle_scale);
    CollisionQuery::new(robot, obstacle, s_robot, s_obstacle).expect("consistent dimensions")
}

#[derive(Serialize)]
struct CrossRow {
    query: usize,
    series: Option<f64>,
    converged: bool,
    terms: usize,
    mc: f64,
    stderr: f64,
    agree: Option<bool>,
}

fn cmd_crosscheck(queries: usize, samples: u64, seed: u64, tol: f64, out: &Path) -> CliResult<()> {
    eprintln!("seed {seed}");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(queries);
    for i in 0..queries {
        let q = random_query(&mut rng);
        let lin = q.linearize()?;
        let series = lin.exact(tol, ellipsoid_risk::quadform::DEFAULT_K_MAX)?;
        let mc = lin.mc_quadform(samples, seed.wrapping_add(i as u64));
        let value = series.converged.then_some(series.value);
        rows.push(CrossRow {
            query: i,
            series: value,
            converged: series.converged,
            terms: series.terms_used,
            mc: mc.probability,
            stderr: mc.stderr,
            agree: value.map(|v| (v - mc.probability).abs() <= 4.0 * mc.stderr + 1e-3),
        });
    }
    let converged = rows.iter().filter(|r| r.converged).count();
    let agree = rows.iter().filter(|r| r.agree == Some(true)).count();
    let mut report = String::new();
    let _ = writeln!(
        report,
        "{converged} of {queries} series converged; {agree} of {converged} agree with Monte Carlo"
    );
    eprint!("{report}");
    write_output(Some(out), &csv_text(&rows, &[])?)
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Prob {
            scene,
            method,
            eps,
            flags,
            out,
        } => cmd_prob(&scene, method, eps, flags, out.as_deref()),
        Command::BenchTable1 {
            scene,
            out,
            eps,
            reps,
            flags,
        } => cmd_bench(&scene, &out, eps, reps, flags),
        Command::Simulate {
            scenario,
            method,
            runs,
            seed,
            noise_scale,
            eps,
            out,
        } => cmd_simulate(&scenario, method, runs, seed, &noise_scale, eps, &out),
        Command::Crosscheck {
            queries,
            mc_samples,
            seed,
            tol,
            out,
        } => cmd_crosscheck(queries, mc_samples, seed, tol, &out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
