//! Per-call cost of the collision constraint by method, and of each of its
//! stages, at a few robot positions.

use std::time::Instant;

use ellipsoid_risk::belief::GaussianBelief;
use ellipsoid_risk::geometry::{contact_point, Ellipsoid};
use ellipsoid_risk::planner::collision_constraint;
use ellipsoid_risk::quadform::{cdf_series, standardize};
use ellipsoid_risk::query::{CollisionQuery, EvalOptions};
use ellipsoid_risk::riskbounds::RiskMethod;
use nalgebra::{DMatrix, DVector};

fn main() {
    let robot = Ellipsoid::axis_aligned(&[0.18, 0.18, 0.06], &[0.0; 3]).unwrap();
    let obs = Ellipsoid::sphere(1.0, &[0.0, 3.0, 3.0]).unwrap();
    let oc = DMatrix::identity(3, 3) * 0.05;
    let opts = EvalOptions {
        mc_fallback: true,
        ..EvalOptions::default()
    };
    let n = 20000;
    for y in [0.0, 1.5, 2.5, 3.0] {
        let pos = GaussianBelief::new(DVector::from_vec(vec![0.05, y, 1.4]), DMatrix::identity(3, 3) * 0.0022).unwrap();
        for m in [RiskMethod::Exact, RiskMethod::BoundingVolume, RiskMethod::UpperBound] {
            let t = Instant::now();
            let mut s = 0.0;
            for _ in 0..n {
                s += collision_constraint(&pos, &robot, &obs, &oc, 0.05, m, &opts).unwrap();
            }
            println!(
                "y={y} {m}: {:.2} us  (r={:.4})",
                t.elapsed().as_secs_f64() / n as f64 * 1e6,
                s / n as f64
            );
        }
        let placed = robot.translated_to(pos.mean.clone());
        let t = Instant::now();
        for _ in 0..n {
            std::hint::black_box(contact_point(&obs, &placed).unwrap());
        }
        println!("   contact {:.2} us", t.elapsed().as_secs_f64() / n as f64 * 1e6);
        let q = CollisionQuery::new(placed, obs.clone(), pos.cov.clone(), oc.clone()).unwrap();
        let lin = q.linearize().unwrap();
        let t = Instant::now();
        for _ in 0..n {
            std::hint::black_box(standardize(&lin.contact.collision_matrix, &lin.mean, &lin.cov).unwrap());
        }
        println!("   standardize {:.2} us", t.elapsed().as_secs_f64() / n as f64 * 1e6);
        let spec = standardize(&lin.contact.collision_matrix, &lin.mean, &lin.cov).unwrap();
        let t = Instant::now();
        let mut r = None;
        for _ in 0..n {
            r = Some(cdf_series(&spec, lin.contact.threshold, 1e-10, 5000).unwrap());
        }
        println!(
            "   series {:.2} us {:?}",
            t.elapsed().as_secs_f64() / n as f64 * 1e6,
            r.unwrap()
        );
    }
}
