mod common;

use common::{dot, norm, sub, tubes};
use proptest::prelude::*;
use rbsde::geometry::ConvexTube;
use rbsde::TimeGrid;

const CASES: u32 = 10_000;

fn scaled(tube: &ConvexTube, raw: &[f64]) -> Vec<f64> {
    let r = 2.0 * tube.bounding_radius(0.0);
    raw[..tube.dim()].iter().map(|v| r * v).collect()
}

fn coords() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0..1.0f64, 3)
}

#[test]
fn registered_tubes_are_valid() {
    for (name, tube, _) in tubes() {
        let grid = TimeGrid::new(tube.horizon(), 64).unwrap();
        assert!(tube.validate(&grid, 256).is_ok(), "{name}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig {
        cases: CASES,
        failure_persistence: None,
        ..ProptestConfig::default()
    })]

    #[test]
    fn projection_is_idempotent_and_realizes_the_distance(which in 0..4usize, s in 0.0..1.0f64, raw in coords()) {
        let (_, tube, tol) = &tubes()[which];
        let t = s * tube.horizon();
        let y = scaled(tube, &raw);
        let p = tube.project(t, &y).unwrap();
        let pp = tube.project(t, &p).unwrap();
        let idem = if *tol < 1e-6 { 1e-12 } else { 1e-8 };
        prop_assert!(norm(&sub(&p, &pp)) <= idem);
        prop_assert!((norm(&sub(&y, &p)) - tube.distance(t, &y).unwrap()).abs() <= *tol);
        prop_assert!(tube.distance(t, &p).unwrap() <= *tol);
    }

    #[test]
    fn obtuse_angle(which in 0..4usize, s in 0.0..1.0f64, raw in coords(), raw2 in coords()) {
        let (_, tube, tol) = &tubes()[which];
        let t = s * tube.horizon();
        let y = scaled(tube, &raw);
        let inside = tube.project(t, &scaled(tube, &raw2)).unwrap();
        let p = tube.project(t, &y).unwrap();
        prop_assert!(dot(&sub(&inside, &p), &sub(&y, &p)) <= *tol);
        prop_assert!(dot(&sub(&inside, &y), &sub(&y, &p)) <= *tol);
    }

    #[test]
    fn monotonicity(which in 0..4usize, s in 0.0..1.0f64, raw in coords(), raw2 in coords()) {
        let (_, tube, tol) = &tubes()[which];
        let t = s * tube.horizon();
        let y = scaled(tube, &raw);
        let y2 = scaled(tube, &raw2);
        let p = tube.project(t, &y).unwrap();
        let p2 = tube.project(t, &y2).unwrap();
        let out = sub(&y, &p);
        prop_assert!(dot(&sub(&y2, &y), &out) <= dot(&sub(&y2, &p2), &out) + *tol);
    }

    #[test]
    fn projection_is_one_lipschitz(which in 0..4usize, s in 0.0..1.0f64, raw in coords(), raw2 in coords()) {
        let (_, tube, _) = &tubes()[which];
        let t = s * tube.horizon();
        let y = scaled(tube, &raw);
        let y2 = scaled(tube, &raw2);
        let p = tube.project(t, &y).unwrap();
        let p2 = tube.project(t, &y2).unwrap();
        prop_assert!(norm(&sub(&p, &p2)) <= norm(&sub(&y, &y2)) + 1e-8);
    }

    #[test]
    fn anchor_inequality(which in 0..4usize, s in 0.0..1.0f64, raw in coords()) {
        let (_, tube, tol) = &tubes()[which];
        let anchor = tube.interior_anchor().unwrap();
        prop_assert!(anchor.gamma >= 1.0 && anchor.margin > 0.0);
        prop_assert!(tube.contains(tube.horizon(), &anchor.point).unwrap());
        let t = s * tube.horizon();
        let y = scaled(tube, &raw);
        prop_assert!(anchor.slack(tube, t, &y).unwrap() >= -*tol);
    }

    #[test]
    fn distance_grows_in_time(which in 0..4usize, s in 0.0..1.0f64, s2 in 0.0..1.0f64, raw in coords()) {
        let (_, tube, _) = &tubes()[which];
        let (a, b) = if s <= s2 { (s, s2) } else { (s2, s) };
        let y = scaled(tube, &raw);
        let early = tube.distance(a * tube.horizon(), &y).unwrap();
        let late = tube.distance(b * tube.horizon(), &y).unwrap();
        prop_assert!(late >= early - 1e-9);
    }

    #[test]
    fn squared_distance_is_convex(which in 0..4usize, s in 0.0..1.0f64, theta in 0.0..=1.0f64, raw in coords(), raw2 in coords()) {
        let (_, tube, _) = &tubes()[which];
        let t = s * tube.horizon();
        let y = scaled(tube, &raw);
        let z = scaled(tube, &raw2);
        let mix: Vec<f64> = y.iter().zip(&z).map(|(a, b)| theta * a + (1.0 - theta) * b).collect();
        let d2 = |p: &[f64]| tube.distance(t, p).unwrap().powi(2);
        prop_assert!(d2(&mix) <= theta * d2(&y) + (1.0 - theta) * d2(&z) + 1e-8);
    }

    #[test]
    fn later_slices_nest_in_earlier_ones(which in 0..4usize, s in 0.0..1.0f64, s2 in 0.0..1.0f64, raw in coords()) {
        let (_, tube, _) = &tubes()[which];
        let (a, b) = if s <= s2 { (s, s2) } else { (s2, s) };
        let (early, late) = (a * tube.horizon(), b * tube.horizon());
        let y = tube.project(late, &scaled(tube, &raw)).unwrap();
        prop_assert!(tube.distance(early, &y).unwrap() <= 1e-9);
    }

    #[test]
    fn inward_unit_is_a_cone_element(which in 0..4usize, s in 0.0..1.0f64, raw in coords()) {
        let (_, tube, tol) = &tubes()[which];
        let t = s * tube.horizon();
        let y = scaled(tube, &raw);
        if tube.distance(t, &y).unwrap() <= 1e-6 {
            return Ok(());
        }
        let v = tube.inward_unit_from_outside(t, &y).unwrap();
        let p = tube.project(t, &y).unwrap();
        prop_assert!((norm(&v) - 1.0).abs() <= 1e-12);
        // a small ball tangent at p on the outer side misses the slice
        let rho = 1e-3;
        let center: Vec<f64> = p.iter().zip(&v).map(|(pi, vi)| pi - rho * vi).collect();
        prop_assert!(tube.distance(t, &center).unwrap() >= rho - *tol);
    }
}

#[test]
fn normal_cone_generators_exclude_a_ball() {
    for (name, tube, tol) in tubes() {
        let t = 0.3 * tube.horizon();
        let r = 2.0 * tube.bounding_radius(0.0);
        let probes: Vec<Vec<f64>> = [[1.0, 0.9, -0.7], [-1.0, -1.0, 1.0], [0.0, 1.0, 0.2]]
            .iter()
            .map(|p| p[..tube.dim()].iter().map(|v| r * v).collect())
            .collect();
        for y in probes {
            if tube.distance(t, &y).unwrap() == 0.0 {
                continue;
            }
            let x = tube.project(t, &y).unwrap();
            let cone = tube.normal_cone(t, &x).unwrap();
            assert!(!cone.generators.is_empty(), "{name}");
            for g in &cone.generators {
                let rho = 1e-2;
                let c: Vec<f64> = x.iter().zip(g).map(|(a, b)| a - rho * b).collect();
                assert!(tube.distance(t, &c).unwrap() >= rho - tol, "{name}");
            }
        }
    }
}
