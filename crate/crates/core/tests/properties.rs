//! Randomized invariants of the geometry, the series, the bounds, the
//! baselines, the filter and the planner.

mod common;

use common::{ellipsoid, random_orthogonal, random_query, spd, unit};
use ellipsoid_risk::baselines::{bounding_volume_check, center_point_probability};
use ellipsoid_risk::belief::{ekf_predict, ekf_update, GaussianBelief, LinearModel};
use ellipsoid_risk::geometry::{contact_point, intersects, ContactSolver, Ellipsoid};
use ellipsoid_risk::oracle::{CollisionSampler, Tally, CHUNK_SIZE};
use ellipsoid_risk::planner::{constraint_residuals, objective, solve, Obstacle, PlanProblem, PlanStatus};
use ellipsoid_risk::quadform::{cdf_series, standardize, DEFAULT_K_MAX, DEFAULT_TOL};
use ellipsoid_risk::riskbounds::{quadform_mean, RiskMethod};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Obstacle at the origin and a robot placed along a random ray at a random
/// fraction of the obstacle's reach.
fn pair(r: &mut ChaCha8Rng, n: usize) -> (Ellipsoid, Ellipsoid) {
    let obstacle = ellipsoid(r, 0.2, 2.0, DVector::zeros(n));
    let dir = unit(r, n);
    let reach = 1.0 / (dir.transpose() * obstacle.shape() * &dir)[0].sqrt();
    let center = dir * reach * r.random_range(0.3..2.5);
    (obstacle, ellipsoid(r, 0.1, 1.0, center))
}

fn margin(obstacle: &Ellipsoid, robot: &Ellipsoid) -> f64 {
    ContactSolver::new(obstacle, robot)
        .and_then(|s| s.margin(obstacle.center(), robot.center()))
        .unwrap()
}

fn transformed(e: &Ellipsoid, rot: &DMatrix<f64>, shift: &DVector<f64>) -> Ellipsoid {
    let shape = rot * e.shape() * rot.transpose();
    Ellipsoid::new((&shape + shape.transpose()) * 0.5, rot * e.center() + shift).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn contact_point_is_a_tangency(seed in any::<u64>(), planar in any::<bool>()) {
        let (obstacle, robot) = pair(&mut rng(seed), if planar { 2 } else { 3 });
        if let Ok(c) = contact_point(&obstacle, &robot) {
            let g1 = obstacle.shape() * (&c.x_star - obstacle.center());
            let g2 = robot.shape() * (&c.x_star - robot.center());
            let cos = (g1.dot(&g2) / (g1.norm() * g2.norm())).abs();
            prop_assert!(cos >= 1.0 - 1e-6, "|cos| = {cos}");
        }
    }

    #[test]
    fn intersection_is_scale_free(seed in any::<u64>(), s in 0.01f64..100.0) {
        let (obstacle, robot) = pair(&mut rng(seed), 3);
        prop_assume!(margin(&obstacle, &robot).abs() > 1e-6);
        let scale = |e: &Ellipsoid| Ellipsoid::new(e.shape() / (s * s), e.center() * s).unwrap();
        prop_assert_eq!(
            intersects(&obstacle, &robot).unwrap(),
            intersects(&scale(&obstacle), &scale(&robot)).unwrap()
        );
    }

    #[test]
    fn spheres_touch_at_twice_the_radius(seed in any::<u64>(), radius in 0.05f64..5.0, gap in 0.0f64..4.0) {
        let mut r = rng(seed);
        let dir = unit(&mut r, 3);
        let b = unit(&mut r, 3) * r.random_range(0.0..10.0);
        let c = &b + dir * (gap * radius);
        let e1 = Ellipsoid::sphere(radius, b.as_slice()).unwrap();
        let e2 = Ellipsoid::sphere(radius, c.as_slice()).unwrap();
        let distance = (&c - &b).norm();
        prop_assume!((distance - 2.0 * radius).abs() > 1e-9 * radius.max(1.0));
        prop_assume!(distance > 1e-9);
        prop_assert_eq!(intersects(&e1, &e2).unwrap(), distance <= 2.0 * radius);
    }

    #[test]
    fn contact_is_rigid_motion_invariant(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (obstacle, robot) = pair(&mut r, 3);
        let rot = random_orthogonal(&mut r, 3);
        let shift = common::gaussian_vec(&mut r, 3) * 5.0;
        let (Ok(before), Ok(after)) = (
            contact_point(&obstacle, &robot),
            contact_point(&transformed(&obstacle, &rot, &shift), &transformed(&robot, &rot, &shift)),
        ) else {
            return Ok(());
        };
        let y = robot.center() - obstacle.center();
        let ry = &rot * &y;
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0);
        prop_assert!(close(before.lambda0, after.lambda0), "{} vs {}", before.lambda0, after.lambda0);
        let q0 = (y.transpose() * &before.collision_matrix * &y)[0];
        let q1 = (ry.transpose() * &after.collision_matrix * &ry)[0];
        prop_assert!(close(q0, q1), "{q0} vs {q1}");
    }

    #[test]
    fn series_cdf_is_monotone(seed in any::<u64>()) {
        let lin = random_query(&mut rng(seed)).linearize();
        prop_assume!(lin.is_ok());
        let lin = lin.unwrap();
        let spec = standardize(&lin.contact.collision_matrix, &lin.mean, &lin.cov).unwrap();
        let mut last = 0.0;
        for k in 1..=12 {
            let v = lin.contact.threshold * k as f64 / 6.0;
            let s = cdf_series(&spec, v, DEFAULT_TOL, DEFAULT_K_MAX).unwrap();
            if s.converged {
                prop_assert!(s.value >= last - 1e-12, "cdf({v}) = {} < {last}", s.value);
                last = s.value;
            }
        }
    }

    #[test]
    fn standardized_mean_matches_moments(seed in any::<u64>(), n in 2usize..=3) {
        let mut r = rng(seed);
        let a = spd(&mut r, n, 0.05, 5.0);
        let sigma = spd(&mut r, n, 0.01, 2.0);
        let mu = common::gaussian_vec(&mut r, n);
        let spec = standardize(&a, &mu, &sigma).unwrap();
        let direct = (&a * &sigma).trace() + (mu.transpose() * &a * &mu)[0];
        prop_assert!((spec.mean() - direct).abs() <= 1e-9 * direct.abs());
        prop_assert!((quadform_mean(&a, &mu, &sigma) - direct).abs() <= 1e-9 * direct.abs());
    }

    #[test]
    fn bound_dominates_and_agrees_with_residual(seed in any::<u64>(), eps in 0.001f64..0.5) {
        let lin = random_query(&mut rng(seed)).linearize();
        prop_assume!(lin.is_ok());
        let lin = lin.unwrap();
        let ub = lin.upper_bound();
        prop_assert!((0.0..=1.0).contains(&ub));
        let exact = lin.exact(DEFAULT_TOL, DEFAULT_K_MAX).unwrap();
        if exact.converged {
            prop_assert!(ub >= exact.value, "bound {ub} < exact {}", exact.value);
        }
        let residual = lin.eps_safe_residual(eps);
        if (ub - eps).abs() > 1e-12 {
            prop_assert_eq!(residual <= 0.0, ub <= eps, "residual {} bound {}", residual, ub);
        }
    }

    #[test]
    fn chunks_add_up_to_a_run(seed in any::<u64>()) {
        let q = random_query(&mut rng(seed));
        let sampler = CollisionSampler::new(&q.robot, &q.obstacle, &q.sigma_robot, &q.sigma_obstacle).unwrap();
        let samples = 2 * CHUNK_SIZE + 1000;
        let whole = sampler.run(samples, seed);
        let parts = sampler.chunk(seed, 0, CHUNK_SIZE) + sampler.chunk(seed, 1, CHUNK_SIZE) + sampler.chunk(seed, 2, 1000);
        prop_assert_eq!(whole, parts);
        prop_assert_eq!(whole, sampler.run(samples, seed));
        let Tally { samples: counted, .. } = whole;
        prop_assert_eq!(counted, samples);
    }

    #[test]
    fn bounding_volume_is_monotone_in_n_sigma(seed in any::<u64>(), n_sigma in 0.1f64..5.0) {
        let q = random_query(&mut rng(seed));
        let sigma = q.relative_cov();
        let small = bounding_volume_check(&q.robot, &q.obstacle, &sigma, n_sigma);
        let large = bounding_volume_check(&q.robot, &q.obstacle, &sigma, n_sigma * 1.5);
        if let (Ok(small), Ok(large)) = (small, large) {
            prop_assert!(large >= small);
        }
    }

    #[test]
    fn center_point_is_rigid_motion_invariant(seed in any::<u64>()) {
        let mut r = rng(seed);
        let q = random_query(&mut r);
        let rot = random_orthogonal(&mut r, 3);
        let shift = common::gaussian_vec(&mut r, 3);
        let sigma = q.relative_cov();
        let before = center_point_probability(&q.robot, &q.obstacle, &sigma).unwrap();
        let after = center_point_probability(
            &transformed(&q.robot, &rot, &shift),
            &transformed(&q.obstacle, &rot, &shift),
            &(&rot * &sigma * rot.transpose()),
        )
        .unwrap();
        prop_assert!((before - after).abs() <= 1e-9 * before.max(1e-300));
    }

    #[test]
    fn update_shrinks_covariance(seed in any::<u64>(), n in 2usize..=4) {
        let mut r = rng(seed);
        let m = r.random_range(1..=n);
        let a = random_orthogonal(&mut r, n);
        let b = DMatrix::identity(n, n);
        let c = DMatrix::from_fn(m, n, |_, _| r.random_range(-1.0..1.0));
        let model = LinearModel::new(a, b, c, spd(&mut r, n, 0.01, 0.5), spd(&mut r, m, 0.01, 0.5)).unwrap();
        let prior = GaussianBelief::new(common::gaussian_vec(&mut r, n), spd(&mut r, n, 0.1, 2.0)).unwrap();
        let predicted = ekf_predict(&prior, &common::gaussian_vec(&mut r, n), &model).unwrap();
        let posterior = ekf_update(&predicted, &common::gaussian_vec(&mut r, m), &model).unwrap();
        let drop = (&predicted.cov - &posterior.cov).symmetric_eigen().eigenvalues.min();
        prop_assert!(drop >= -1e-10, "smallest eigenvalue of the decrease {drop}");
        for cov in [&predicted.cov, &posterior.cov] {
            prop_assert!((cov - cov.transpose()).amax() <= 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn plans_revalidate_from_scratch(seed in any::<u64>(), method in prop_oneof![Just(RiskMethod::Exact), Just(RiskMethod::UpperBound)]) {
        let mut r = rng(seed);
        let model = LinearModel::point_mass(3, 0.1, DMatrix::identity(3, 3) * 1e-4, DMatrix::identity(3, 3) * 0.05).unwrap();
        let start = GaussianBelief::new(DVector::zeros(3), DMatrix::identity(3, 3) * 0.01).unwrap();
        let goal = DVector::from_vec(vec![0.0, 3.0, 0.0]);
        let robot = Ellipsoid::axis_aligned(&[0.18, 0.18, 0.06], &[0.0, 0.0, 0.0]).unwrap();
        let mut problem = PlanProblem::new(start, goal, robot, model);
        problem.method = method;
        problem.horizon = 10;
        let center = [r.random_range(-0.6..0.6), r.random_range(1.0..2.0), r.random_range(-0.3..0.3)];
        let body = Ellipsoid::axis_aligned(&[0.4, 0.4, 0.4], &center).unwrap();
        problem.obstacles = vec![Obstacle::new(body, DMatrix::identity(3, 3) * 0.02).unwrap()];
        let plan = solve(&problem, seed).unwrap();
        if matches!(plan.status, PlanStatus::Optimal | PlanStatus::Feasible) {
            let again = constraint_residuals(&problem, &plan.controls).unwrap();
            for row in &again {
                for &v in row {
                    prop_assert!(v <= 1e-9, "residual {v}");
                }
            }
        }
        let j = objective(&problem, &plan.controls).unwrap();
        prop_assert!((j - plan.objective).abs() <= 1e-9 * j.abs().max(1.0), "{j} vs {}", plan.objective);
    }
}
