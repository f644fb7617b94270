//! Contact point of the `table1` scene pair, and its per-call cost.

use std::time::Instant;

use ellipsoid_risk::geometry::{contact_point, Ellipsoid};

fn main() {
    let o = Ellipsoid::axis_aligned(&[0.6, 0.6, 1.2], &[0.0; 3]).unwrap();
    let r = Ellipsoid::axis_aligned(&[0.18, 0.18, 0.22], &[0.95, 0.95, 0.0]).unwrap();
    let res = contact_point(&o, &r).unwrap();
    println!("{:?}", res);
    let t = Instant::now();
    let mut acc = 0.0;
    for i in 0..100000 {
        let rr = r.translated_to(nalgebra::DVector::from_vec(vec![0.95 + 1e-6 * i as f64, 0.95, 0.0]));
        acc += contact_point(&o, &rr).unwrap().lambda0;
    }
    println!("{acc} {:?}/call", t.elapsed() / 100000);
}
