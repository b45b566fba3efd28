//! Hand-derived metric values and metric properties.

use cdt_core::metrics::{ade, aggregate, asd, ecfl, fde, fsd, is_miss, min_ade, min_fde, score, ScenarioMetrics, MISS_THRESHOLD};
use cdt_core::scene::geometry::Frame;
use cdt_core::scene::{DrivableArea, Point};
use cdt_core::Error;
use proptest::prelude::*;

const TOL: f64 = 1e-9;

fn line(n: usize, offset: Point) -> Vec<Point> {
    (0..n).map(|i| [i as f64 + offset[0], offset[1]]).collect()
}

fn square(side: f64) -> DrivableArea {
    DrivableArea { polygons: vec![vec![[-side, -side], [side, -side], [side, side], [-side, side]]] }
}

#[test]
fn exact_sample_scores_zero() {
    let gt = line(60, [0.0, 0.0]);
    assert_eq!(min_ade(&[gt.clone()], &gt).unwrap(), 0.0);
    assert_eq!(min_fde(&[gt.clone()], &gt).unwrap(), 0.0);
}

#[test]
fn min_fde_picks_the_closer_endpoint() {
    let gt = line(60, [0.0, 0.0]);
    let mut a = gt.clone();
    let mut b = gt.clone();
    a[59] = [gt[59][0], 5.0];
    b[59] = [gt[59][0] + 1.0, 0.0];
    let v = min_fde(&[a.clone(), b.clone()], &gt).unwrap();
    assert!((v - 1.0).abs() < TOL);
    assert!(!is_miss(&[a.clone(), b.clone()], &gt, MISS_THRESHOLD).unwrap());
}

#[test]
fn constant_offset_gives_equal_ade_and_fde() {
    let gt = line(60, [0.0, 0.0]);
    let s = line(60, [0.0, 3.0]);
    assert!((ade(&s, &gt).unwrap() - 3.0).abs() < TOL);
    assert!((fde(&s, &gt).unwrap() - 3.0).abs() < TOL);
}

#[test]
fn miss_boundary_is_strict() {
    let gt = line(60, [0.0, 0.0]);
    let at = line(60, [0.0, 2.0]);
    assert!(!is_miss(&[at], &gt, 2.0).unwrap());
    let beyond = line(60, [0.0, 2.0 + 1e-9]);
    assert!(is_miss(&[beyond], &gt, 2.0).unwrap());
    let far = [line(60, [0.0, 3.0]), line(60, [0.0, -4.0])];
    assert!(is_miss(&far, &gt, 2.0).unwrap());
}

#[test]
fn diversity_examples() {
    let a = line(60, [0.0, 0.0]);
    assert_eq!(asd(&[a.clone(), a.clone(), a.clone()]).unwrap(), 0.0);
    assert_eq!(fsd(&[a.clone(), a.clone()]).unwrap(), 0.0);
    let b = line(60, [0.0, 2.0]);
    assert!((asd(&[a.clone(), b.clone()]).unwrap() - 2.0).abs() < TOL);
    assert!((fsd(&[a.clone(), b.clone()]).unwrap() - 2.0).abs() < TOL);
    // endpoints at 0, 2 and 4 m on one line: pair gaps 2, 2, 4
    let mut s = vec![a.clone(), a.clone(), a.clone()];
    s[1][59][1] = 2.0;
    s[2][59][1] = 4.0;
    assert!((fsd(&s).unwrap() - 8.0 / 3.0).abs() < TOL);
    assert!(matches!(asd(&[a]), Err(Error::Input(_))));
}

#[test]
fn ecfl_counts_fully_inside_samples() {
    let area = square(100.0);
    let inside = line(60, [0.0, 0.0]);
    let mut one_out = inside.clone();
    one_out[30] = [0.0, 150.0];
    assert_eq!(ecfl(&[inside.clone(), inside.clone()], &area).unwrap(), 1.0);
    assert!((ecfl(&[inside.clone(), one_out], &area).unwrap() - 0.5).abs() < TOL);
    assert!(matches!(ecfl(&[inside], &DrivableArea { polygons: vec![] }), Err(Error::Config(_))));
}

#[test]
fn shape_mismatch_is_an_input_error() {
    assert!(matches!(ade(&line(60, [0.0, 0.0]), &line(59, [0.0, 0.0])), Err(Error::Input(_))));
    let none: [Vec<Point>; 0] = [];
    assert!(matches!(min_fde(&none, &line(60, [0.0, 0.0])), Err(Error::Input(_))));
}

#[test]
fn aggregate_examples() {
    let m = |min_ade, min_fde, miss, asd, fsd, ecfl| ScenarioMetrics { min_ade, min_fde, miss, asd, fsd, ecfl };
    let single = m(1.5, 2.5, 1.0, 3.0, 4.0, 0.5);
    let r = aggregate(&[single], 6).unwrap();
    assert_eq!((r.min_ade, r.min_fde, r.miss_rate, r.asd, r.fsd, r.ecfl, r.n), (1.5, 2.5, 1.0, 3.0, 4.0, 0.5, 1));
    let r = aggregate(&[m(0.0, 0.0, 0.0, 0.0, 0.0, 1.0), m(0.0, 0.0, 1.0, 0.0, 0.0, 1.0)], 6).unwrap();
    assert_eq!(r.miss_rate, 0.5);
    // column means worked out by hand
    let table = [
        m(0.5, 1.0, 0.0, 2.0, 4.0, 1.0),
        m(1.0, 2.5, 1.0, 3.0, 6.0, 5.0 / 6.0),
        m(0.25, 0.5, 0.0, 1.0, 1.5, 1.0),
        m(2.0, 4.0, 1.0, 0.5, 0.75, 0.5),
        m(0.75, 1.5, 0.0, 1.5, 2.25, 2.0 / 3.0),
    ];
    let r = aggregate(&table, 6).unwrap();
    let expect = [0.9, 1.9, 0.4, 1.6, 2.9, 0.8];
    let got = [r.min_ade, r.min_fde, r.miss_rate, r.asd, r.fsd, r.ecfl];
    for (g, e) in got.iter().zip(expect) {
        assert!((g - e).abs() < TOL, "{got:?} vs {expect:?}");
    }
    assert!(aggregate(&[], 6).is_err());
}

fn samples_strategy() -> impl Strategy<Value = (Vec<Vec<Point>>, Vec<Point>)> {
    let traj = || prop::collection::vec(prop::array::uniform2(-50.0..50.0f64), 12);
    (prop::collection::vec(traj(), 2..7), traj())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn metrics_are_rigid_invariant((samples, gt) in samples_strategy(), angle in -3.2..3.2f64, ox in -100.0..100.0f64, oy in -100.0..100.0f64) {
        let area = square(40.0);
        let f = Frame::new(angle, [ox, oy]);
        let mv = |t: &Vec<Point>| t.iter().map(|&p| f.apply(p)).collect::<Vec<Point>>();
        let moved_area = DrivableArea { polygons: area.polygons.iter().map(mv).collect() };
        let a = score(&samples, &gt, &area).unwrap();
        let b = score(&samples.iter().map(mv).collect::<Vec<_>>(), &mv(&gt), &moved_area).unwrap();
        for (x, y) in [(a.min_ade, b.min_ade), (a.min_fde, b.min_fde), (a.asd, b.asd), (a.fsd, b.fsd)] {
            prop_assert!((x - y).abs() < 1e-9 * (1.0 + x.abs()));
        }
        prop_assert_eq!(a.ecfl, b.ecfl);
        prop_assert_eq!(a.miss, b.miss);
    }

    #[test]
    fn min_is_a_lower_bound_and_monotone((samples, gt) in samples_strategy(), extra in prop::collection::vec(prop::array::uniform2(-50.0..50.0f64), 12)) {
        let m = min_ade(&samples, &gt).unwrap();
        for s in &samples {
            prop_assert!(m <= ade(s, &gt).unwrap());
        }
        let mut more = samples.clone();
        more.push(extra);
        prop_assert!(min_ade(&more, &gt).unwrap() <= m);
        prop_assert!(min_fde(&more, &gt).unwrap() <= min_fde(&samples, &gt).unwrap());
    }

    #[test]
    fn ecfl_is_quantized((samples, _) in samples_strategy()) {
        let k = samples.len() as f64;
        let v = ecfl(&samples, &square(40.0)).unwrap();
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert!((v * k - (v * k).round()).abs() < 1e-12);
    }

    #[test]
    fn diversity_vanishes_only_for_identical_samples((samples, _) in samples_strategy(), k in 2usize..6) {
        let same = vec![samples[0].clone(); k];
        prop_assert_eq!(asd(&same).unwrap(), 0.0);
        prop_assert_eq!(fsd(&same).unwrap(), 0.0);
        let distinct = samples.windows(2).all(|w| w[0] != w[1]);
        if distinct {
            prop_assert!(asd(&samples).unwrap() > 0.0);
        }
        let ends_differ = samples.windows(2).any(|w| w[0][11] != w[1][11]);
        prop_assert_eq!(fsd(&samples).unwrap() > 0.0, ends_differ);
    }
}
