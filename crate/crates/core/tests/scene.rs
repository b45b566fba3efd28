//! Generator statistics, geometry oracles and labeling invariances.

use cdt_core::scene::geometry::Frame;
use cdt_core::scene::label::net_heading_change;
use cdt_core::scene::{
    generate_dataset, generate_scenario, label_behavior, point_in_drivable, point_in_polygon, Behavior, DatasetConfig,
    DrivableArea, Point, FUTURE_LEN, HISTORY_LEN,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Plain crossing-number test written independently of the library; points
/// exactly on an edge are reported separately.
fn ray_cast(p: Point, poly: &[Point]) -> bool {
    let mut inside = false;
    let n = poly.len();
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) / (b[1] - a[1]) * (b[0] - a[0]);
            if p[0] < x {
                inside = !inside;
            }
        }
    }
    inside
}

fn on_edge(p: Point, poly: &[Point], tol: f64) -> bool {
    let n = poly.len();
    (0..n).any(|i| {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
        let len2 = dx * dx + dy * dy;
        let t = (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0);
        let q = [a[0] + t * dx, a[1] + t * dy];
        (p[0] - q[0]).hypot(p[1] - q[1]) < tol
    })
}

/// Star-shaped polygon around the origin with random radii.
fn star_polygon(rng: &mut ChaCha8Rng, n: usize) -> Vec<Point> {
    (0..n)
        .map(|i| {
            let a = 2.0 * std::f64::consts::PI * (i as f64 + rng.random_range(0.1..0.9)) / n as f64;
            let r = rng.random_range(1.0..10.0);
            [r * a.cos(), r * a.sin()]
        })
        .collect()
}

#[test]
fn square_examples() {
    let sq = vec![[0.0, 0.0], [10.0, 0.0], [10.0, 10.0], [0.0, 10.0]];
    let area = DrivableArea { polygons: vec![sq.clone()] };
    assert!(point_in_drivable([5.0, 5.0], &area));
    assert!(!point_in_drivable([11.0, 5.0], &area));
    assert!(point_in_drivable([10.0, 5.0], &area));
    assert!(!ray_cast([10.0, 5.0], &sq) || on_edge([10.0, 5.0], &sq, 1e-12));
    assert!(on_edge([10.0, 5.0], &sq, 1e-12));
}

#[test]
fn point_in_polygon_matches_ray_casting_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut checked = 0;
    for _ in 0..200 {
        let n = rng.random_range(3..12);
        let poly = star_polygon(&mut rng, n);
        for _ in 0..200 {
            let p = [rng.random_range(-11.0..11.0), rng.random_range(-11.0..11.0)];
            if on_edge(p, &poly, 1e-7) {
                continue;
            }
            assert_eq!(point_in_polygon(p, &poly), ray_cast(p, &poly), "{p:?} in {poly:?}");
            checked += 1;
        }
        // points on edges count as inside
        for i in 0..n {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            let t: f64 = rng.random();
            let p = [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
            assert!(point_in_polygon(p, &poly), "edge point {p:?}");
            assert!(point_in_polygon(a, &poly), "vertex {a:?}");
        }
    }
    assert!(checked > 30_000);
}

#[test]
fn quarter_circle_is_left_by_summed_deltas() {
    let pts: Vec<Point> = (0..FUTURE_LEN)
        .map(|i| {
            let a = std::f64::consts::FRAC_PI_2 * i as f64 / (FUTURE_LEN - 1) as f64;
            [10.0 * a.sin(), 10.0 * (1.0 - a.cos())]
        })
        .collect();
    // independent oracle: chord headings of a circle advance by equal steps
    let mut oracle = 0.0;
    for w in pts.windows(3) {
        let h0 = (w[1][1] - w[0][1]).atan2(w[1][0] - w[0][0]);
        let h1 = (w[2][1] - w[1][1]).atan2(w[2][0] - w[1][0]);
        oracle += h1 - h0;
    }
    assert!((net_heading_change(&pts) - oracle).abs() < 1e-12);
    assert!((oracle.to_degrees() - 90.0 * (FUTURE_LEN - 2) as f64 / (FUTURE_LEN - 1) as f64).abs() < 1e-9);
    assert_eq!(label_behavior(&pts), Behavior::Left);
    assert_eq!(label_behavior(&[[0.0, 0.0]; FUTURE_LEN]), Behavior::Straight);
}

#[test]
fn label_frequencies_follow_class_mix() {
    let cfg = DatasetConfig { n_scenarios: 10_000, rng_seed: 3, ..Default::default() };
    let data = generate_dataset(&cfg).unwrap();
    let mut counts = [0usize; 3];
    for s in &data {
        counts[s.label.index()] += 1;
    }
    let n = data.len() as f64;
    let chi2: f64 = counts.iter().zip(cfg.class_mix).map(|(&c, p)| (c as f64 - n * p).powi(2) / (n * p)).sum();
    // 99th percentile of chi-square with two degrees of freedom
    assert!(chi2 < 9.2103, "chi2 {chi2}, counts {counts:?}");
}

#[test]
fn datasets_are_reproducible() {
    let cfg = DatasetConfig { n_scenarios: 40, rng_seed: 9, ..Default::default() };
    assert_eq!(generate_dataset(&cfg).unwrap(), generate_dataset(&cfg).unwrap());
    let other = DatasetConfig { rng_seed: 10, ..cfg.clone() };
    assert_ne!(generate_dataset(&cfg).unwrap(), generate_dataset(&other).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn generated_scenes_hold_invariants(seed in 0u64..1000, index in 0u64..100_000) {
        let cfg = DatasetConfig { rng_seed: seed, class_mix: [0.4, 0.3, 0.3], ..Default::default() };
        let s = generate_scenario(&cfg, index).unwrap();
        s.validate().unwrap();
        prop_assert_eq!(s.future.len(), FUTURE_LEN);
        prop_assert_eq!(s.focal().positions.len(), HISTORY_LEN);
        prop_assert_eq!(s.focal().positions[HISTORY_LEN - 1], [0.0, 0.0]);
        prop_assert_eq!(label_behavior(&s.future), s.label);
        prop_assert!(s.future.iter().all(|&p| point_in_drivable(p, &s.drivable)));
        if s.label != Behavior::Straight {
            prop_assert!(s.is_intersection);
        }
    }

    #[test]
    fn label_is_rigid_invariant(
        radius in 5.0..40.0f64,
        sweep_deg in -150.0..150.0f64,
        angle in -3.2..3.2f64,
        ox in -500.0..500.0f64,
        oy in -500.0..500.0f64,
    ) {
        prop_assume!((sweep_deg.abs() - 15.0).abs() > 1.0);
        let sweep = sweep_deg.to_radians();
        let path: Vec<Point> = (0..FUTURE_LEN)
            .map(|i| {
                let a = sweep * i as f64 / (FUTURE_LEN - 1) as f64;
                [radius * a.sin(), sweep.signum() * radius * (1.0 - a.cos())]
            })
            .collect();
        let label = label_behavior(&path);
        let world = Frame::new(angle, [ox, oy]);
        let moved: Vec<Point> = path.iter().map(|&p| world.apply(p)).collect();
        let back = Frame::to_local(moved[0], angle);
        let renorm: Vec<Point> = moved.iter().map(|&p| back.apply(p)).collect();
        prop_assert_eq!(label_behavior(&moved), label);
        prop_assert_eq!(label_behavior(&renorm), label);
    }

    #[test]
    fn drivable_membership_is_rigid_invariant(seed in 0u64..500, angle in -3.2..3.2f64, ox in -50.0..50.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let poly = star_polygon(&mut rng, 7);
        let f = Frame::new(angle, [ox, -ox]);
        let moved: Vec<Point> = poly.iter().map(|&p| f.apply(p)).collect();
        for _ in 0..50 {
            let p = [rng.random_range(-11.0..11.0), rng.random_range(-11.0..11.0)];
            if on_edge(p, &poly, 1e-6) {
                continue;
            }
            prop_assert_eq!(point_in_polygon(p, &poly), point_in_polygon(f.apply(p), &moved));
        }
    }
}
