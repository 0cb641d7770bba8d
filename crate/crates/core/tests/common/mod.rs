#![allow(dead_code)]

use rbsde::bsde::{RegressionBasis, Scenario};
use rbsde::config::{builtin_source, ScenarioFile};
use rbsde::geometry::{ConvexTube, Poly};

/// Built-in scenario on its own grid, or on `steps` steps when given.
pub fn builtin(name: &str, steps: Option<usize>) -> Scenario {
    let file = ScenarioFile::parse(builtin_source(name).expect("known scenario"))
        .expect("scenario parses");
    let steps = steps.or(file.steps).unwrap_or(256);
    file.scenario(name, steps).expect("scenario builds")
}

/// Regression basis a built-in scenario asks for.
pub fn builtin_basis(name: &str) -> RegressionBasis {
    ScenarioFile::parse(builtin_source(name).unwrap())
        .unwrap()
        .basis
        .unwrap_or_default()
}

/// The four tubes used by the geometry suites, with their projection tolerance.
pub fn tubes() -> Vec<(&'static str, ConvexTube, f64)> {
    let shrinking_ball = ConvexTube::ball(vec![0.0, 0.0], Poly::linear(2.0, -0.5), 2.0).unwrap();
    let interval =
        ConvexTube::interval(Poly::linear(-1.0, 0.25), Poly::linear(1.0, -0.25), 2.0).unwrap();
    let square = ConvexTube::constant_box(&[-1.0, -1.0], &[1.0, 1.0], 2.0).unwrap();
    // skewed tetrahedron-like polytope in 3d whose faces move inward
    let polytope = ConvexTube::halfspaces(
        vec![
            (vec![1.0, 1.0, 1.0], Poly::linear(1.5, -0.2)),
            (vec![-1.0, 0.2, 0.0], Poly::linear(1.0, -0.1)),
            (vec![0.0, -1.0, 0.3], Poly::constant(1.0)),
            (vec![0.1, 0.0, -1.0], Poly::linear(1.2, -0.3)),
            (vec![1.0, -1.0, 0.0], Poly::constant(1.4)),
        ],
        2.0,
    )
    .unwrap();
    vec![
        ("shrinking-ball", shrinking_ball, 1e-9),
        ("interval", interval, 1e-6),
        ("square", square, 1e-6),
        ("polytope-3d", polytope, 1e-6),
    ]
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
