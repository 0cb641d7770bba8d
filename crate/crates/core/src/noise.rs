//! Wiener–Poisson driving noise on a uniform grid.
//!
//! The Lévy measure is finite with finitely many marks, `λ = Σ_j λ_j δ_{e_j}`,
//! so the compensated measure over one step is the vector
//! `Δμ_{k,j} = Δp_{k,j} - λ_j Δt`.
//!
//! Every path owns a ChaCha stream keyed by `(seed, path index)`, so a bundle
//! is a pure function of its inputs no matter how generation is scheduled.
//! Arrays are stored step-major (`[step][path][component]`) because the
//! backward solver consumes one time slice at a time.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::TimeGrid;

/// Finite-activity Wiener–Poisson specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevyNoiseSpec {
    brownian_dim: usize,
    marks: Vec<Vec<f64>>,
    intensities: Vec<f64>,
}

impl LevyNoiseSpec {
    pub fn new(brownian_dim: usize, marks: Vec<Vec<f64>>, intensities: Vec<f64>) -> Result<Self> {
        if marks.len() != intensities.len() {
            return Err(Error::Input(format!(
                "{} marks but {} intensities",
                marks.len(),
                intensities.len()
            )));
        }
        if let Some(i) = intensities
            .iter()
            .position(|l| !(l.is_finite() && *l > 0.0))
        {
            return Err(Error::Input(format!(
                "intensity {i} must be positive and finite"
            )));
        }
        if let Some(first) = marks.first() {
            if first.is_empty() || marks.iter().any(|m| m.len() != first.len()) {
                return Err(Error::Input("marks must share a positive dimension".into()));
            }
        }
        Ok(Self {
            brownian_dim,
            marks,
            intensities,
        })
    }

    pub fn brownian(brownian_dim: usize) -> Self {
        Self {
            brownian_dim,
            marks: Vec::new(),
            intensities: Vec::new(),
        }
    }

    pub fn brownian_dim(&self) -> usize {
        self.brownian_dim
    }

    pub fn jump_count(&self) -> usize {
        self.intensities.len()
    }

    pub fn mark_dim(&self) -> usize {
        self.marks.first().map_or(0, Vec::len)
    }

    pub fn marks(&self) -> &[Vec<f64>] {
        &self.marks
    }

    pub fn intensities(&self) -> &[f64] {
        &self.intensities
    }

    /// λ-weighted norm `(Σ_j λ_j |u_j|^2)^{1/2}` of a `d x J` row-major matrix.
    pub fn jump_norm(&self, u: &[f64], d: usize) -> f64 {
        let j_count = self.jump_count();
        let mut s = 0.0;
        for row in 0..d {
            for (j, l) in self.intensities.iter().enumerate() {
                let v = u[row * j_count + j];
                s += l * v * v;
            }
        }
        s.sqrt()
    }

    fn fingerprint(&self, grid: &TimeGrid) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&(grid, self)).expect("noise spec serializes"));
        h.finalize().into()
    }
}

/// Markovian forward state
/// `X_{k+1} = X_k + (b + B X_k) Δt + σ ΔW_k + Σ_j (C e_j) Δp_{k,j}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardSpec {
    pub x0: Vec<f64>,
    /// Constant drift `b`.
    pub drift: Vec<f64>,
    /// Optional linear drift `B` (`d_X x d_X`, row-major rows).
    pub drift_matrix: Option<Vec<Vec<f64>>>,
    /// Diffusion `σ`, `d_X x n_W`.
    pub sigma: Vec<Vec<f64>>,
    /// Jump map `C`, `d_X x m`; mark `e_j` moves the state by `C e_j`.
    pub jump_map: Vec<Vec<f64>>,
}

impl ForwardSpec {
    /// Constant state (no forward dynamics).
    pub fn frozen(x0: Vec<f64>, noise: &LevyNoiseSpec) -> Self {
        let d = x0.len();
        ForwardSpec {
            drift: vec![0.0; d],
            drift_matrix: None,
            sigma: vec![vec![0.0; noise.brownian_dim()]; d],
            jump_map: vec![vec![0.0; noise.mark_dim()]; d],
            x0,
        }
    }

    /// `X = X_0 + W` (requires `d_X == n_W`).
    pub fn brownian(x0: Vec<f64>, scale: f64, noise: &LevyNoiseSpec) -> Self {
        let d = x0.len();
        let mut f = Self::frozen(x0, noise);
        for i in 0..d.min(noise.brownian_dim()) {
            f.sigma[i][i] = scale;
        }
        f
    }

    pub fn state_dim(&self) -> usize {
        self.x0.len()
    }

    pub fn validate(&self, noise: &LevyNoiseSpec) -> Result<()> {
        let d = self.state_dim();
        let bad = |what: &str| Err(Error::Config(format!("forward: {what}")));
        if self.drift.len() != d {
            return bad("drift has the wrong length");
        }
        if let Some(m) = &self.drift_matrix {
            if m.len() != d || m.iter().any(|r| r.len() != d) {
                return bad("drift_matrix must be d_X x d_X");
            }
        }
        if self.sigma.len() != d || self.sigma.iter().any(|r| r.len() != noise.brownian_dim()) {
            return bad("sigma must be d_X x brownian_dim");
        }
        if self.jump_map.len() != d || self.jump_map.iter().any(|r| r.len() != noise.mark_dim()) {
            return bad("jump_map must be d_X x mark_dim");
        }
        let all = self
            .x0
            .iter()
            .chain(&self.drift)
            .chain(self.drift_matrix.iter().flatten().flatten())
            .chain(self.sigma.iter().flatten())
            .chain(self.jump_map.iter().flatten());
        if all.into_iter().any(|v| !v.is_finite()) {
            return bad("coefficients must be finite");
        }
        Ok(())
    }
}

/// A batch of simulated driving paths plus the forward state along them.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBundle {
    grid: TimeGrid,
    spec: LevyNoiseSpec,
    paths: usize,
    seed: u64,
    dw: Vec<f64>,
    dp: Vec<u32>,
    state_dim: usize,
    x: Vec<f64>,
}

const CHUNK: usize = 256;

fn path_rng(seed: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64);
    rng
}

/// Simulates `paths` independent Wiener–Poisson paths on `grid`.
pub fn sample_paths(
    grid: &TimeGrid,
    spec: &LevyNoiseSpec,
    paths: usize,
    seed: u64,
) -> Result<PathBundle> {
    if paths == 0 {
        return Err(Error::Input("path count must be at least 1".into()));
    }
    let n = grid.steps();
    let nw = spec.brownian_dim();
    let nj = spec.jump_count();
    let dt = grid.dt();
    let sqrt_dt = dt.sqrt();
    let poisson: Vec<Poisson<f64>> = spec
        .intensities()
        .iter()
        .map(|l| Poisson::new(l * dt).map_err(|e| Error::Input(format!("poisson rate: {e}"))))
        .collect::<Result<_>>()?;

    let mut dw = vec![0.0; n * paths * nw];
    let mut dp = vec![0u32; n * paths * nj];

    let chunk_starts: Vec<usize> = (0..paths).step_by(CHUNK).collect();
    let batch = rayon::current_num_threads().max(1) * 2;
    for starts in chunk_starts.chunks(batch) {
        let generated: Vec<(usize, Vec<f64>, Vec<u32>)> = starts
            .par_iter()
            .map(|&start| {
                let end = (start + CHUNK).min(paths);
                let mut w = Vec::with_capacity((end - start) * n * nw);
                let mut p = Vec::with_capacity((end - start) * n * nj);
                for i in start..end {
                    let mut rng = path_rng(seed, i);
                    for _ in 0..n {
                        for _ in 0..nw {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            w.push(z * sqrt_dt);
                        }
                        for dist in &poisson {
                            p.push(dist.sample(&mut rng) as u32);
                        }
                    }
                }
                (start, w, p)
            })
            .collect();
        for (start, w, p) in generated {
            let count = (start + CHUNK).min(paths) - start;
            for local in 0..count {
                let i = start + local;
                for k in 0..n {
                    if nw > 0 {
                        let src = (local * n + k) * nw;
                        let dst = (k * paths + i) * nw;
                        dw[dst..dst + nw].copy_from_slice(&w[src..src + nw]);
                    }
                    if nj > 0 {
                        let src = (local * n + k) * nj;
                        let dst = (k * paths + i) * nj;
                        dp[dst..dst + nj].copy_from_slice(&p[src..src + nj]);
                    }
                }
            }
        }
    }

    Ok(PathBundle {
        grid: *grid,
        spec: spec.clone(),
        paths,
        seed,
        dw,
        dp,
        state_dim: 0,
        x: Vec::new(),
    })
}

/// Re-simulates a single path in isolation: `(ΔW, Δp)` per step, path-major.
pub fn sample_single_path(
    grid: &TimeGrid,
    spec: &LevyNoiseSpec,
    seed: u64,
    path: usize,
) -> Result<(Vec<f64>, Vec<u32>)> {
    let dt = grid.dt();
    let mut rng = path_rng(seed, path);
    let poisson: Vec<Poisson<f64>> = spec
        .intensities()
        .iter()
        .map(|l| Poisson::new(l * dt).map_err(|e| Error::Input(format!("poisson rate: {e}"))))
        .collect::<Result<_>>()?;
    let mut w = Vec::new();
    let mut p = Vec::new();
    for _ in 0..grid.steps() {
        for _ in 0..spec.brownian_dim() {
            let z: f64 = StandardNormal.sample(&mut rng);
            w.push(z * dt.sqrt());
        }
        for d in &poisson {
            p.push(d.sample(&mut rng) as u32);
        }
    }
    Ok((w, p))
}

/// Fills the forward state along every path of `bundle` by Euler stepping.
pub fn forward_euler(dynamics: &ForwardSpec, bundle: &mut PathBundle) -> Result<()> {
    dynamics.validate(&bundle.spec)?;
    let d = dynamics.state_dim();
    let m = bundle.paths;
    let n = bundle.grid.steps();
    let nw = bundle.spec.brownian_dim();
    let nj = bundle.spec.jump_count();
    let dt = bundle.grid.dt();
    // jump displacement C e_j for every mark
    let jumps: Vec<Vec<f64>> = bundle
        .spec
        .marks()
        .iter()
        .map(|e| {
            dynamics
                .jump_map
                .iter()
                .map(|row| row.iter().zip(e).map(|(c, ek)| c * ek).sum())
                .collect()
        })
        .collect();

    let mut x = vec![0.0; (n + 1) * m * d];
    for i in 0..m {
        x[i * d..(i + 1) * d].copy_from_slice(&dynamics.x0);
    }
    for k in 0..n {
        let (head, tail) = x.split_at_mut((k + 1) * m * d);
        let cur = &head[k * m * d..];
        let next = &mut tail[..m * d];
        let dw = &bundle.dw[k * m * nw..(k + 1) * m * nw];
        let dp = &bundle.dp[k * m * nj..(k + 1) * m * nj];
        next.par_chunks_mut(d.max(1))
            .enumerate()
            .try_for_each(|(i, out)| {
                if d == 0 {
                    return Ok(());
                }
                let xi = &cur[i * d..(i + 1) * d];
                let wi = &dw[i * nw..(i + 1) * nw];
                let pi = &dp[i * nj..(i + 1) * nj];
                for r in 0..d {
                    let mut drift = dynamics.drift[r];
                    if let Some(b) = &dynamics.drift_matrix {
                        drift += b[r].iter().zip(xi).map(|(a, v)| a * v).sum::<f64>();
                    }
                    let diff: f64 = dynamics.sigma[r].iter().zip(wi).map(|(s, w)| s * w).sum();
                    let jump: f64 = jumps
                        .iter()
                        .zip(pi)
                        .map(|(c, &cnt)| c[r] * cnt as f64)
                        .sum();
                    let v = xi[r] + drift * dt + diff + jump;
                    if !v.is_finite() {
                        return Err(Error::NonFinite {
                            step: k + 1,
                            path: i,
                            what: "forward state",
                        });
                    }
                    out[r] = v;
                }
                Ok(())
            })?;
    }
    bundle.state_dim = d;
    bundle.x = x;
    Ok(())
}

impl PathBundle {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn spec(&self) -> &LevyNoiseSpec {
        &self.spec
    }

    pub fn paths(&self) -> usize {
        self.paths
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    /// Brownian increments of step `k` for all paths (`M x n_W`).
    pub fn dw_step(&self, k: usize) -> &[f64] {
        let w = self.paths * self.spec.brownian_dim();
        &self.dw[k * w..(k + 1) * w]
    }

    /// Jump counts of step `k` for all paths (`M x J`).
    pub fn dp_step(&self, k: usize) -> &[u32] {
        let w = self.paths * self.spec.jump_count();
        &self.dp[k * w..(k + 1) * w]
    }

    /// Compensated jump increments `Δp - λ Δt` of step `k` (`M x J`).
    pub fn dmu_step(&self, k: usize) -> Vec<f64> {
        let nj = self.spec.jump_count();
        let dt = self.grid.dt();
        self.dp_step(k)
            .iter()
            .enumerate()
            .map(|(idx, &c)| c as f64 - self.spec.intensities()[idx % nj] * dt)
            .collect()
    }

    pub fn dw(&self, k: usize, path: usize) -> &[f64] {
        let nw = self.spec.brownian_dim();
        &self.dw_step(k)[path * nw..(path + 1) * nw]
    }

    pub fn dp(&self, k: usize, path: usize) -> &[u32] {
        let nj = self.spec.jump_count();
        &self.dp_step(k)[path * nj..(path + 1) * nj]
    }

    pub fn dmu(&self, k: usize, path: usize, j: usize) -> f64 {
        self.dp(k, path)[j] as f64 - self.spec.intensities()[j] * self.grid.dt()
    }

    /// Forward states at node `k` for all paths (`M x d_X`); empty before
    /// [`forward_euler`] has run.
    pub fn x_step(&self, k: usize) -> &[f64] {
        let w = self.paths * self.state_dim;
        if self.x.is_empty() {
            return &[];
        }
        &self.x[k * w..(k + 1) * w]
    }

    pub fn x(&self, k: usize, path: usize) -> &[f64] {
        let d = self.state_dim;
        &self.x_step(k)[path * d..(path + 1) * d]
    }

    const MAGIC: &'static [u8; 8] = b"RBSDEPB\0";
    const VERSION: u32 = 1;

    /// Writes the bundle to a versioned little-endian binary cache file.
    pub fn write_cache(&self, path: &Path) -> Result<()> {
        let io = |e| Error::io(path, e);
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        {
            let mut put = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));
            put(Self::MAGIC)?;
            put(&Self::VERSION.to_le_bytes())?;
            put(&self.grid.horizon().to_le_bytes())?;
            put(&(self.grid.steps() as u64).to_le_bytes())?;
            put(&self.spec.fingerprint(&self.grid))?;
            put(&(self.paths as u64).to_le_bytes())?;
            put(&self.seed.to_le_bytes())?;
            put(&(self.state_dim as u64).to_le_bytes())?;
            put(&(self.x.len() as u64).to_le_bytes())?;
            for v in &self.dw {
                put(&v.to_le_bytes())?;
            }
            for v in &self.dp {
                put(&v.to_le_bytes())?;
            }
            for v in &self.x {
                put(&v.to_le_bytes())?;
            }
        }
        w.flush().map_err(io)
    }

    /// Reads a cache written by [`write_cache`](Self::write_cache). The noise
    /// specification is not stored; it must match the one that produced the file.
    pub fn read_cache(path: &Path, spec: &LevyNoiseSpec) -> Result<Self> {
        let mut r = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
        let mut take = |n: usize| -> Result<Vec<u8>> {
            let mut buf = vec![0u8; n];
            r.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
            Ok(buf)
        };
        let u64_of = |b: Vec<u8>| u64::from_le_bytes(b.try_into().expect("8 bytes"));
        if take(8)?.as_slice() != Self::MAGIC {
            return Err(Error::Input(format!(
                "{}: not a path bundle cache",
                path.display()
            )));
        }
        let version = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes"));
        if version != Self::VERSION {
            return Err(Error::Input(format!(
                "{}: unsupported cache version {version}",
                path.display()
            )));
        }
        let horizon = f64::from_le_bytes(take(8)?.try_into().expect("8 bytes"));
        let steps = u64_of(take(8)?) as usize;
        let grid = TimeGrid::new(horizon, steps)?;
        let hash = take(32)?;
        if hash.as_slice() != spec.fingerprint(&grid) {
            return Err(Error::Input(format!(
                "{}: cache was produced by a different grid or noise specification",
                path.display()
            )));
        }
        let paths = u64_of(take(8)?) as usize;
        let seed = u64_of(take(8)?);
        let state_dim = u64_of(take(8)?) as usize;
        let x_len = u64_of(take(8)?) as usize;
        let f64s = |b: Vec<u8>| -> Vec<f64> {
            b.chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect()
        };
        let dw = f64s(take(steps * paths * spec.brownian_dim() * 8)?);
        let dp = take(steps * paths * spec.jump_count() * 4)?
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let x = f64s(take(x_len * 8)?);
        Ok(PathBundle {
            grid,
            spec: spec.clone(),
            paths,
            seed,
            dw,
            dp,
            state_dim,
            x,
        })
    }
}

/// Seeded stream for probes and tests that need their own randomness.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{mean, sample_variance};

    #[test]
    fn brownian_variance_matches_dt() {
        let grid = TimeGrid::new(1.0, 1).unwrap();
        let spec = LevyNoiseSpec::brownian(1);
        let m = 100_000;
        let b = sample_paths(&grid, &spec, m, 11).unwrap();
        let w = b.dw_step(0);
        let mu = mean(w);
        let var = sample_variance(w, mu);
        assert!((var - 1.0).abs() < 0.05, "variance {var}");
        assert!(mu.abs() < 5.0 / (m as f64).sqrt());
    }

    #[test]
    fn poisson_total_count_has_mean_lambda_t() {
        let grid = TimeGrid::new(1.0, 8).unwrap();
        let spec = LevyNoiseSpec::new(0, vec![vec![1.0]], vec![2.0]).unwrap();
        let m = 100_000;
        let b = sample_paths(&grid, &spec, m, 3).unwrap();
        let totals: Vec<f64> = (0..m)
            .map(|i| (0..8).map(|k| b.dp(k, i)[0] as f64).sum())
            .collect();
        let mu = mean(&totals);
        assert!((mu - 2.0).abs() < 0.05, "mean jump count {mu}");
    }

    #[test]
    fn same_seed_same_bundle() {
        let grid = TimeGrid::new(1.0, 16).unwrap();
        let spec = LevyNoiseSpec::new(2, vec![vec![0.5], vec![-0.5]], vec![1.0, 3.0]).unwrap();
        let a = sample_paths(&grid, &spec, 700, 42).unwrap();
        let b = sample_paths(&grid, &spec, 700, 42).unwrap();
        assert_eq!(a, b);
        let c = sample_paths(&grid, &spec, 700, 43).unwrap();
        assert_ne!(a.dw_step(0), c.dw_step(0));
    }

    #[test]
    fn single_path_matches_bundle() {
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let spec = LevyNoiseSpec::new(2, vec![vec![1.0]], vec![4.0]).unwrap();
        let b = sample_paths(&grid, &spec, 600, 9).unwrap();
        let (w, p) = sample_single_path(&grid, &spec, 9, 517).unwrap();
        for k in 0..10 {
            assert_eq!(b.dw(k, 517), &w[k * 2..k * 2 + 2]);
            assert_eq!(b.dp(k, 517), &p[k..k + 1]);
        }
    }

    #[test]
    fn euler_examples() {
        let grid = TimeGrid::new(1.0, 32).unwrap();
        let spec = LevyNoiseSpec::brownian(1);
        let mut b = sample_paths(&grid, &spec, 50, 1).unwrap();
        forward_euler(&ForwardSpec::frozen(vec![0.7], &spec), &mut b).unwrap();
        assert!((0..=32).all(|k| b.x(k, 13) == [0.7]));

        let mut drift = ForwardSpec::frozen(vec![0.0], &spec);
        drift.drift = vec![1.0];
        forward_euler(&drift, &mut b).unwrap();
        assert!((b.x(32, 4)[0] - 1.0).abs() < 1e-14);

        let m = 40_000;
        let mut b = sample_paths(&grid, &spec, m, 5).unwrap();
        forward_euler(&ForwardSpec::brownian(vec![0.0], 1.0, &spec), &mut b).unwrap();
        let sq: Vec<f64> = (0..m).map(|i| b.x(32, i)[0].powi(2)).collect();
        assert!((mean(&sq) - 1.0).abs() < 5.0 / (m as f64).sqrt() * 2f64.sqrt());
    }

    #[test]
    fn non_finite_state_is_reported() {
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let spec = LevyNoiseSpec::brownian(1);
        let mut b = sample_paths(&grid, &spec, 4, 1).unwrap();
        let mut f = ForwardSpec::frozen(vec![0.0], &spec);
        f.drift = vec![f64::MAX];
        f.drift_matrix = Some(vec![vec![f64::MAX]]);
        let err = forward_euler(&f, &mut b).unwrap_err();
        assert!(matches!(err, Error::NonFinite { step: 2, .. }), "{err}");
    }

    #[test]
    fn cache_round_trip() {
        let grid = TimeGrid::new(0.5, 6).unwrap();
        let spec = LevyNoiseSpec::new(1, vec![vec![1.0, 0.0]], vec![2.0]).unwrap();
        let mut b = sample_paths(&grid, &spec, 33, 8).unwrap();
        let mut f = ForwardSpec::brownian(vec![0.0, 1.0], 1.0, &spec);
        f.jump_map = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        forward_euler(&f, &mut b).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bundle.bin");
        b.write_cache(&path).unwrap();
        assert_eq!(PathBundle::read_cache(&path, &spec).unwrap(), b);
        let other = LevyNoiseSpec::new(1, vec![vec![1.0, 0.0]], vec![3.0]).unwrap();
        assert!(PathBundle::read_cache(&path, &other).is_err());
    }
}
