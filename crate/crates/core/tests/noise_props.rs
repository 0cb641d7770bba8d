use proptest::prelude::*;
use rbsde::noise::{sample_paths, sample_single_path, LevyNoiseSpec};
use rbsde::TimeGrid;

const M: usize = 20_000;

fn spec() -> LevyNoiseSpec {
    LevyNoiseSpec::new(2, vec![vec![0.3, 0.0], vec![0.0, -0.3]], vec![1.0, 2.0]).unwrap()
}

#[test]
fn compensated_increments_have_zero_mean() {
    let grid = TimeGrid::new(1.0, 16).unwrap();
    let spec = spec();
    let b = sample_paths(&grid, &spec, M, 11).unwrap();
    let dt = grid.dt();
    for (j, lam) in spec.intensities().iter().enumerate() {
        let bound = 5.0 * (lam * dt / M as f64).sqrt();
        let mut totals = vec![0.0; M];
        for k in 0..grid.steps() {
            let mut sum = 0.0;
            for (i, total) in totals.iter_mut().enumerate() {
                let v = b.dmu(k, i, j);
                sum += v;
                *total += v;
            }
            assert!((sum / M as f64).abs() <= bound, "k={k} j={j}");
        }
        // compensated count over the horizon
        let mean = totals.iter().sum::<f64>() / M as f64;
        let sd = (lam * grid.horizon()).sqrt();
        assert!(
            mean.abs() <= 5.0 * sd / (M as f64).sqrt(),
            "j={j} mean={mean}"
        );
    }
}

#[test]
fn brownian_increments_have_mean_zero_and_variance_dt() {
    let grid = TimeGrid::new(1.0, 8).unwrap();
    let b = sample_paths(&grid, &spec(), M, 12).unwrap();
    let dt = grid.dt();
    for k in 0..grid.steps() {
        for w in 0..2 {
            let xs: Vec<f64> = (0..M).map(|i| b.dw(k, i)[w]).collect();
            let mean = xs.iter().sum::<f64>() / M as f64;
            assert!(mean.abs() <= 5.0 * (dt / M as f64).sqrt());
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (M - 1) as f64;
            // sd of the sample variance is dt·sqrt(2/M)
            assert!((var - dt).abs() <= 5.0 * dt * (2.0 / M as f64).sqrt());
        }
    }
}

#[test]
fn brownian_and_jump_increments_are_uncorrelated() {
    let grid = TimeGrid::new(1.0, 4).unwrap();
    let b = sample_paths(&grid, &spec(), M, 13).unwrap();
    let corr = |a: &[f64], c: &[f64]| {
        let n = a.len() as f64;
        let (ma, mc) = (a.iter().sum::<f64>() / n, c.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(c).map(|(x, y)| (x - ma) * (y - mc)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vc: f64 = c.iter().map(|y| (y - mc).powi(2)).sum();
        cov / (va * vc).sqrt()
    };
    for k in 0..grid.steps() {
        for w in 0..2 {
            let dw: Vec<f64> = (0..M).map(|i| b.dw(k, i)[w]).collect();
            for j in 0..2 {
                let dmu: Vec<f64> = (0..M).map(|i| b.dmu(k, i, j)).collect();
                assert!(corr(&dw, &dmu).abs() <= 5.0 / (M as f64).sqrt());
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig {
        cases: 64,
        failure_persistence: None,
        ..ProptestConfig::default()
    })]

    #[test]
    fn bundles_are_reproducible_path_by_path(seed in any::<u64>(), paths in 1..40usize, steps in 1..12usize) {
        let grid = TimeGrid::new(0.5, steps).unwrap();
        let spec = spec();
        let a = sample_paths(&grid, &spec, paths, seed).unwrap();
        let b = sample_paths(&grid, &spec, paths, seed).unwrap();
        prop_assert_eq!(&a, &b);
        let i = paths / 2;
        let (w, p) = sample_single_path(&grid, &spec, seed, i).unwrap();
        for k in 0..steps {
            prop_assert_eq!(&w[2 * k..2 * k + 2], a.dw(k, i));
            prop_assert_eq!(&p[2 * k..2 * k + 2], a.dp(k, i));
        }
    }
}
