mod common;

use common::builtin;
use rbsde::bsde::{backward_solve_unconstrained, backward_step, RegressionBasis};
use rbsde::penalty::penalty_metrics;
use rbsde::stats::{mean, std_dev};

const BASIS: RegressionBasis = RegressionBasis::Polynomial { degree: 2 };

#[test]
fn constant_terminal_gives_constant_solution() {
    let s = builtin("constant", Some(32));
    let b = s.simulate(2000, 3).unwrap();
    let sol = backward_solve_unconstrained(&s, &b, BASIS).unwrap();
    let c = [0.3, -0.2];
    for k in 0..=32 {
        for i in 0..2000 {
            for r in 0..2 {
                assert!((sol.y(k, i)[r] - c[r]).abs() <= 1e-10);
            }
            if k < 32 {
                assert!(sol.z(k, i).iter().all(|v| v.abs() <= 1e-10));
                assert!(sol.u(k, i).iter().all(|v| v.abs() <= 1e-10));
                assert!(sol.dlambda(k, i).iter().all(|v| *v == 0.0));
            }
        }
    }
}

#[test]
fn terminal_condition_is_exact() {
    let s = builtin("martingale", Some(16));
    let b = s.simulate(1000, 4).unwrap();
    let g = s.terminal_values(&b, true).unwrap();
    let sol = backward_solve_unconstrained(&s, &b, BASIS).unwrap();
    assert_eq!(sol.y_step(16), &g[..]);
}

#[test]
fn martingale_start_matches_monte_carlo_mean() {
    let m = 20_000;
    let s = builtin("martingale", Some(32));
    let b = s.simulate(m, 5).unwrap();
    let g = s.terminal_values(&b, true).unwrap();
    let sol = backward_solve_unconstrained(&s, &b, BASIS).unwrap();
    let y0 = sol.y0_mean();
    for r in 0..2 {
        let col: Vec<f64> = g.chunks(2).map(|v| v[r]).collect();
        let tol = 5.0 * std_dev(&col) / (m as f64).sqrt();
        assert!(
            (y0[r] - mean(&col)).abs() <= tol,
            "r={r}: {} vs {}",
            y0[r],
            mean(&col)
        );
    }
}

#[test]
fn martingale_residual_is_centered_at_every_step() {
    let m = 20_000;
    let n = 32;
    let s = builtin("martingale", Some(n));
    let b = s.simulate(m, 6).unwrap();
    let sol = backward_solve_unconstrained(&s, &b, BASIS).unwrap();
    for k in 0..n {
        for r in 0..2 {
            let res: Vec<f64> = (0..m)
                .map(|i| {
                    let jumps: f64 = (0..s.noise.jump_count())
                        .map(|j| sol.u(k, i)[r * s.noise.jump_count() + j] * b.dmu(k, i, j))
                        .sum();
                    sol.y(k, i)[r] - sol.y(k + 1, i)[r] + sol.z(k, i)[r] * b.dw(k, i)[0] + jumps
                })
                .collect();
            let tol = 5.0 * std_dev(&res) / (m as f64).sqrt();
            assert!(mean(&res).abs() <= tol.max(1e-14), "k={k} r={r}");
        }
    }
}

#[test]
fn start_value_error_shrinks_like_root_m() {
    let s = builtin("martingale", Some(8));
    let spread = |m: usize| {
        let y0: Vec<f64> = (0..30)
            .map(|seed| {
                let b = s.simulate(m, 100 + seed).unwrap();
                backward_solve_unconstrained(&s, &b, BASIS)
                    .unwrap()
                    .y0_mean()[1]
            })
            .collect();
        std_dev(&y0)
    };
    let ratio = spread(4000) / spread(2000);
    assert!((0.6..=0.85).contains(&ratio), "ratio {ratio}");
}

#[test]
fn integrands_are_identified_from_synthetic_targets() {
    let m = 4000;
    let s = builtin("constant", Some(8));
    let b = s.simulate(m, 7).unwrap();
    let (a, c) = ([0.7, -1.3], [0.25, 2.0]);
    let k = 3;
    let mut y_next = vec![0.0; 2 * m];
    for i in 0..m {
        for r in 0..2 {
            y_next[2 * i + r] = a[r] * b.dw(k, i)[0] + c[r] * b.dmu(k, i, 0);
        }
    }
    let out = backward_step(&s, &b, BASIS, k, &y_next).unwrap();
    for i in 0..m {
        for r in 0..2 {
            assert!((out.z[2 * i + r] - a[r]).abs() <= 1e-6);
            assert!((out.u[2 * i + r] - c[r]).abs() <= 1e-6);
        }
    }
}

#[test]
fn sup_y_sq_is_stable_under_path_doubling() {
    let s = builtin("martingale", Some(16));
    let metric = |m: usize| {
        let b = s.simulate(m, 8).unwrap();
        let sol = backward_solve_unconstrained(&s, &b, BASIS).unwrap();
        penalty_metrics(&sol, &s.tube).unwrap().sup_y_sq
    };
    let (a, b) = (metric(5000), metric(10_000));
    assert!(a.estimate.is_finite() && a.estimate > 0.0);
    let tol = 5.0 * (a.stderr.powi(2) + b.stderr.powi(2)).sqrt();
    assert!((a.estimate - b.estimate).abs() <= tol, "{a:?} vs {b:?}");
}

#[test]
fn linear_driver_matches_exponential_decay() {
    let s = builtin("linear-driver", None);
    let m = 20_000;
    let b = s.simulate(m, 9).unwrap();
    let sol = backward_solve_unconstrained(&s, &b, BASIS).unwrap();
    let (c, rho, t) = (1.0, 0.5, s.grid.horizon());
    let exact = c * (-rho * t).exp();
    let tol = c * (rho * rho * t * s.grid.dt() + 5.0 / (m as f64).sqrt());
    assert!((sol.y0_mean()[0] - exact).abs() <= tol);
}

#[test]
fn constant_driver_integrates_exactly() {
    let s = builtin("constant-driver", Some(64));
    let b = s.simulate(3000, 10).unwrap();
    let sol = backward_solve_unconstrained(&s, &b, BASIS).unwrap();
    let y0 = sol.y0_mean();
    assert!((y0[0] - (0.5 + 0.25)).abs() <= 1e-10);
    assert!((y0[1] - (-0.5 + 1.0)).abs() <= 1e-10);
}

#[test]
fn unknown_bundle_is_rejected() {
    let s = builtin("martingale", Some(16));
    let other = builtin("martingale", Some(8));
    let b = other.simulate(100, 1).unwrap();
    assert!(backward_solve_unconstrained(&s, &b, BASIS).is_err());
}
