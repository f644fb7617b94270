//! Closed-loop runs of one scenario with per-run metrics and timings.
//!
//! `cargo run --release --example scenario_probe -- <scenario.json> [seeds]`,
//! with `SCALES` and `METHODS` as comma-separated overrides.

use std::time::Instant;

use ellipsoid_risk::riskbounds::RiskMethod;
use ellipsoid_risk::sim::{run_scenario, ScenarioConfig};

fn main() {
    let path = std::env::args().nth(1).expect("scenario path");
    let seeds: u64 = std::env::args().nth(2).map_or(1, |s| s.parse().unwrap());
    let cfg = ScenarioConfig::load(path.as_ref()).unwrap();
    let scales: Vec<f64> = std::env::var("SCALES").map_or(vec![1.0, 2.0, 3.0, 4.0], |s| {
        s.split(',').map(|x| x.parse().unwrap()).collect()
    });
    let methods: Vec<RiskMethod> = std::env::var("METHODS")
        .map_or(vec![RiskMethod::Exact, RiskMethod::BoundingVolume], |s| {
            s.split(',').map(|x| x.parse().unwrap()).collect()
        });
    for &scale in &scales {
        for &method in &methods {
            let sc = cfg.with_noise_scale(scale).build().unwrap();
            for seed in 0..seeds {
                let t = Instant::now();
                let (traj, m) = run_scenario(&sc, method, seed).unwrap();
                let iters: usize = traj.steps.iter().map(|s| s.plan_iterations).sum();
                let statuses = traj
                    .steps
                    .iter()
                    .filter(|s| s.status != ellipsoid_risk::planner::PlanStatus::Optimal)
                    .count();
                println!(
                    "scale {scale} {method:>16} seed {seed}: d={:.3?} l={:.2} T={:.1} reached={} collided={} infeasible={} nonopt={} steps={} iters/plan={:.1} wall={:.1}s",
                    m.d, m.l, m.t, m.reached, m.collided, m.infeasible_plans, statuses, traj.steps.len(), iters as f64 / traj.steps.len() as f64, t.elapsed().as_secs_f64()
                );
            }
        }
    }
}
