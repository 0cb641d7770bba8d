use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;

use super::regression::{Design, RegressionBasis, RegressionDiagnostics};
use super::scenario::Scenario;
use crate::error::{Error, Result};
use crate::geometry::ConvexTube;
use crate::grid::TimeGrid;
use crate::noise::PathBundle;
use crate::stats::Summary;

/// One backward step for every path: `(Y_k, Z_k, U_k)` plus the reflection
/// increment `ΔΛ_k` (zero without penalty).
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub u: Vec<f64>,
    pub dlambda: Vec<f64>,
}

/// Read-only view of one level at node `k`, handed to pass observers.
#[derive(Debug, Clone, Copy)]
pub struct StepView<'a> {
    pub k: usize,
    pub t: f64,
    /// `Y_k`, `M x d`.
    pub y: &'a [f64],
    /// `Z_k`, `M x d x n_W`; empty at `k = N`.
    pub z: &'a [f64],
    /// `U_k`, `M x d x J`; empty at `k = N`.
    pub u: &'a [f64],
    /// `ΔΛ_k = Λ_{k+1} - Λ_k`, `M x d`; empty at `k = N`.
    pub dlambda: &'a [f64],
    pub regression: Option<&'a RegressionDiagnostics>,
}

/// Implicit penalty resolvent: solves `y + nΔt (y - π(t,y)) = ŷ` in place and
/// writes `ΔΛ = -nΔt (y - π(t,y))`.
pub(crate) fn resolvent_in_place(
    tube: &ConvexTube,
    t: f64,
    ndt: f64,
    y: &mut [f64],
    dlambda: &mut [f64],
    scratch: &mut [f64],
) -> Result<()> {
    tube.project_into(t, y, scratch)?;
    let shrink = 1.0 / (1.0 + ndt);
    for r in 0..y.len() {
        let yh = y[r];
        let p = scratch[r];
        if yh == p {
            dlambda[r] = 0.0;
            continue;
        }
        y[r] = p + (yh - p) * shrink;
        dlambda[r] = ndt * (p - yh) * shrink;
    }
    Ok(())
}

/// Joint backward step for several right-hand sides sharing one design.
///
/// `y_next[l]` is `Y_{k+1}` of level `l` and `penalties[l]` its penalty
/// strength (`None` for the unconstrained equation).
pub(crate) fn step_levels(
    scenario: &Scenario,
    bundle: &PathBundle,
    basis: RegressionBasis,
    k: usize,
    y_next: &[&[f64]],
    penalties: &[Option<f64>],
) -> Result<(Vec<StepOutput>, RegressionDiagnostics)> {
    let d = scenario.dim();
    let m = bundle.paths();
    let (nw, nj) = (bundle.spec().brownian_dim(), bundle.spec().jump_count());
    let levels = y_next.len();
    let width = levels * d;
    let dt = scenario.grid.dt();
    let t = scenario.grid.time(k);

    let sources = nw + nj;
    let mut noise = vec![0.0; m * sources];
    let dw = bundle.dw_step(k);
    let dmu = bundle.dmu_step(k);
    for i in 0..m {
        let row = &mut noise[i * sources..(i + 1) * sources];
        row[..nw].copy_from_slice(&dw[i * nw..(i + 1) * nw]);
        row[nw..].copy_from_slice(&dmu[i * nj..(i + 1) * nj]);
    }
    let x = bundle.x_step(k);
    let design = Design::build(basis, x, bundle.state_dim(), m, &noise, sources)?;

    let mut targets = vec![0.0; m * width];
    for (l, yl) in y_next.iter().enumerate() {
        for i in 0..m {
            targets[i * width + l * d..i * width + (l + 1) * d]
                .copy_from_slice(&yl[i * d..(i + 1) * d]);
        }
    }
    let fit = design.solve(&targets, width)?;
    let cont = design.continuation(&fit);
    let integrands: Vec<Vec<f64>> = (0..sources).map(|s| design.integrand(&fit, s)).collect();

    let dx = bundle.state_dim();
    let mut outputs = Vec::with_capacity(levels);
    for (l, pen) in penalties.iter().enumerate() {
        let mut z = vec![0.0; m * d * nw];
        let mut u = vec![0.0; m * d * nj];
        for i in 0..m {
            for r in 0..d {
                let src = i * width + l * d + r;
                for w in 0..nw {
                    z[(i * d + r) * nw + w] = integrands[w][src];
                }
                for j in 0..nj {
                    u[(i * d + r) * nj + j] = integrands[nw + j][src];
                }
            }
        }
        let mut y = vec![0.0; m * d];
        let mut dlambda = vec![0.0; m * d];
        y.par_chunks_mut(d)
            .zip(dlambda.par_chunks_mut(d))
            .enumerate()
            .try_for_each_init(
                || (vec![0.0; d], vec![0.0; d]),
                |(a, f), (i, (yi, dli))| {
                    a.copy_from_slice(&cont[i * width + l * d..i * width + (l + 1) * d]);
                    let xi = if dx > 0 {
                        &x[i * dx..(i + 1) * dx]
                    } else {
                        &[][..]
                    };
                    scenario.driver.eval(
                        t,
                        xi,
                        a,
                        &z[i * d * nw..(i + 1) * d * nw],
                        &u[i * d * nj..(i + 1) * d * nj],
                        f,
                    );
                    for r in 0..d {
                        yi[r] = a[r] + f[r] * dt;
                    }
                    if let Some(n) = pen {
                        resolvent_in_place(&scenario.tube, t, n * dt, yi, dli, a)?;
                    }
                    if yi.iter().chain(dli.iter()).any(|v| !v.is_finite()) {
                        return Err(Error::NonFinite {
                            step: k,
                            path: i,
                            what: "Y",
                        });
                    }
                    Ok(())
                },
            )?;
        outputs.push(StepOutput { y, z, u, dlambda });
    }
    Ok((outputs, design.diagnostics().clone()))
}

/// One explicit regression step of the unconstrained equation.
pub fn backward_step(
    scenario: &Scenario,
    bundle: &PathBundle,
    basis: RegressionBasis,
    k: usize,
    y_next: &[f64],
) -> Result<StepOutput> {
    if k >= scenario.grid.steps() {
        return Err(Error::Input(format!(
            "step {k} is not below N = {}",
            scenario.grid.steps()
        )));
    }
    check_bundle(scenario, bundle)?;
    if y_next.len() != bundle.paths() * scenario.dim() {
        return Err(Error::Input("Y_{k+1} has the wrong size".into()));
    }
    let (mut out, _) = step_levels(scenario, bundle, basis, k, &[y_next], &[None])?;
    Ok(out.remove(0))
}

fn check_bundle(scenario: &Scenario, bundle: &PathBundle) -> Result<()> {
    if bundle.grid() != &scenario.grid || bundle.spec() != &scenario.noise {
        return Err(Error::Input(
            "path bundle was generated for a different grid or noise".into(),
        ));
    }
    if bundle.state_dim() != scenario.forward.state_dim()
        || bundle.x_step(0).len() != bundle.paths() * bundle.state_dim()
    {
        return Err(Error::Input(
            "path bundle has no forward state for this scenario".into(),
        ));
    }
    Ok(())
}

/// Backward pass over several penalty levels on one bundle.
///
/// Every level shares the per-step design; `observe(level, view)` sees
/// `k = N` first and `k = 0` last.
pub fn backward_pass<F>(
    scenario: &Scenario,
    bundle: &PathBundle,
    basis: RegressionBasis,
    penalties: &[Option<f64>],
    mut observe: F,
) -> Result<()>
where
    F: FnMut(usize, &StepView<'_>) -> Result<()>,
{
    check_bundle(scenario, bundle)?;
    let n = scenario.grid.steps();
    let penalized = penalties.iter().any(Option::is_some);
    let terminal = scenario.terminal_values(bundle, penalized)?;
    let mut ys: Vec<Vec<f64>> = vec![terminal; penalties.len()];
    for (l, y) in ys.iter().enumerate() {
        observe(
            l,
            &StepView {
                k: n,
                t: scenario.grid.horizon(),
                y,
                z: &[],
                u: &[],
                dlambda: &[],
                regression: None,
            },
        )?;
    }
    for k in (0..n).rev() {
        let refs: Vec<&[f64]> = ys.iter().map(Vec::as_slice).collect();
        let (outs, diag) = step_levels(scenario, bundle, basis, k, &refs, penalties)?;
        for (l, out) in outs.into_iter().enumerate() {
            observe(
                l,
                &StepView {
                    k,
                    t: scenario.grid.time(k),
                    y: &out.y,
                    z: &out.z,
                    u: &out.u,
                    dlambda: &out.dlambda,
                    regression: Some(&diag),
                },
            )?;
            ys[l] = out.y;
        }
    }
    Ok(())
}

/// Full discrete quadruple `(Y, Z, U, Λ)` on every path.
#[derive(Debug, Clone)]
pub struct BackwardSolution {
    grid: TimeGrid,
    paths: usize,
    dim: usize,
    brownian_dim: usize,
    jump_count: usize,
    penalty: Option<f64>,
    y: Vec<f64>,
    z: Vec<f64>,
    u: Vec<f64>,
    dlambda: Vec<f64>,
    /// Regression diagnostics of steps `0..N`.
    pub regression: Vec<RegressionDiagnostics>,
}

impl BackwardSolution {
    pub(crate) fn solve(
        scenario: &Scenario,
        bundle: &PathBundle,
        basis: RegressionBasis,
        penalty: Option<f64>,
    ) -> Result<Self> {
        let n = scenario.grid.steps();
        let (m, d) = (bundle.paths(), scenario.dim());
        let (nw, nj) = (scenario.noise.brownian_dim(), scenario.noise.jump_count());
        let mut sol = BackwardSolution {
            grid: scenario.grid,
            paths: m,
            dim: d,
            brownian_dim: nw,
            jump_count: nj,
            penalty,
            y: vec![0.0; (n + 1) * m * d],
            z: vec![0.0; n * m * d * nw],
            u: vec![0.0; n * m * d * nj],
            dlambda: vec![0.0; n * m * d],
            regression: vec![
                RegressionDiagnostics {
                    columns: 0,
                    effective_rank: 0,
                    condition: 1.0
                };
                n
            ],
        };
        backward_pass(scenario, bundle, basis, &[penalty], |_, v| {
            let k = v.k;
            sol.y[k * m * d..(k + 1) * m * d].copy_from_slice(v.y);
            if k < n {
                sol.z[k * m * d * nw..(k + 1) * m * d * nw].copy_from_slice(v.z);
                sol.u[k * m * d * nj..(k + 1) * m * d * nj].copy_from_slice(v.u);
                sol.dlambda[k * m * d..(k + 1) * m * d].copy_from_slice(v.dlambda);
                if let Some(r) = v.regression {
                    sol.regression[k] = r.clone();
                }
            }
            Ok(())
        })?;
        Ok(sol)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn paths(&self) -> usize {
        self.paths
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn brownian_dim(&self) -> usize {
        self.brownian_dim
    }

    pub fn jump_count(&self) -> usize {
        self.jump_count
    }

    pub fn penalty(&self) -> Option<f64> {
        self.penalty
    }

    pub fn steps(&self) -> usize {
        self.grid.steps()
    }

    /// `Y_k` for all paths (`M x d`).
    pub fn y_step(&self, k: usize) -> &[f64] {
        let w = self.paths * self.dim;
        &self.y[k * w..(k + 1) * w]
    }

    pub fn y(&self, k: usize, path: usize) -> &[f64] {
        &self.y_step(k)[path * self.dim..(path + 1) * self.dim]
    }

    /// `Z_k` of one path (`d x n_W`, row-major), `k < N`.
    pub fn z(&self, k: usize, path: usize) -> &[f64] {
        let w = self.dim * self.brownian_dim;
        let base = (k * self.paths + path) * w;
        &self.z[base..base + w]
    }

    /// `U_k` of one path (`d x J`, row-major), `k < N`.
    pub fn u(&self, k: usize, path: usize) -> &[f64] {
        let w = self.dim * self.jump_count;
        let base = (k * self.paths + path) * w;
        &self.u[base..base + w]
    }

    /// `ΔΛ_k = Λ_{k+1} - Λ_k` of one path, `k < N`.
    pub fn dlambda(&self, k: usize, path: usize) -> &[f64] {
        let base = (k * self.paths + path) * self.dim;
        &self.dlambda[base..base + self.dim]
    }

    pub fn dlambda_step(&self, k: usize) -> &[f64] {
        let w = self.paths * self.dim;
        &self.dlambda[k * w..(k + 1) * w]
    }

    /// `Λ_k = Σ_{k' < k} ΔΛ_{k'}` of one path.
    pub fn lambda(&self, k: usize, path: usize) -> Vec<f64> {
        let mut acc = vec![0.0; self.dim];
        for kk in 0..k {
            for (a, v) in acc.iter_mut().zip(self.dlambda(kk, path)) {
                *a += v;
            }
        }
        acc
    }

    /// Path mean of `Y_0`.
    pub fn y0_mean(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.dim];
        for i in 0..self.paths {
            for (a, v) in mean.iter_mut().zip(self.y(0, i)) {
                *a += v;
            }
        }
        mean.iter_mut().for_each(|v| *v /= self.paths as f64);
        mean
    }

    /// Per-step summaries over paths of every component of `Y` and `Λ`:
    /// columns `k,t,quantity,component,mean,sd,q05,q50,q95`.
    pub fn write_summary_csv(&self, path: &Path) -> Result<()> {
        let io = |e| Error::io(path, e);
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        writeln!(w, "k,t,quantity,component,mean,sd,q05,q50,q95").map_err(io)?;
        let n = self.steps();
        let mut lambda = vec![0.0; self.paths * self.dim];
        let mut col = vec![0.0; self.paths];
        for k in 0..=n {
            let t = self.grid.time(k);
            for (name, data) in [("Y", self.y_step(k)), ("Lambda", &lambda[..])] {
                for r in 0..self.dim {
                    for (i, c) in col.iter_mut().enumerate() {
                        *c = data[i * self.dim + r];
                    }
                    let s = Summary::of(&col);
                    writeln!(
                        w,
                        "{k},{t},{name},{r},{},{},{},{},{}",
                        s.mean, s.sd, s.q05, s.q50, s.q95
                    )
                    .map_err(io)?;
                }
            }
            if k < n {
                for (a, v) in lambda.iter_mut().zip(self.dlambda_step(k)) {
                    *a += v;
                }
            }
        }
        w.flush().map_err(io)
    }

    const MAGIC: &'static [u8; 8] = b"RBSDESOL";
    const VERSION: u32 = 1;

    /// Full little-endian dump: header, then `Y`, `Z`, `U`, `ΔΛ` arrays in
    /// step-major order.
    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let io = |e| Error::io(path, e);
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        w.write_all(Self::MAGIC).map_err(io)?;
        w.write_all(&Self::VERSION.to_le_bytes()).map_err(io)?;
        for v in [
            self.grid.steps() as u64,
            self.paths as u64,
            self.dim as u64,
            self.brownian_dim as u64,
            self.jump_count as u64,
        ] {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
        w.write_all(&self.grid.horizon().to_le_bytes())
            .map_err(io)?;
        w.write_all(&self.penalty.unwrap_or(0.0).to_le_bytes())
            .map_err(io)?;
        for arr in [&self.y, &self.z, &self.u, &self.dlambda] {
            for v in arr.iter() {
                w.write_all(&v.to_le_bytes()).map_err(io)?;
            }
        }
        w.flush().map_err(io)
    }
}

/// Regression solution of the unconstrained equation (`Λ ≡ 0`).
pub fn backward_solve_unconstrained(
    scenario: &Scenario,
    bundle: &PathBundle,
    basis: RegressionBasis,
) -> Result<BackwardSolution> {
    BackwardSolution::solve(scenario, bundle, basis, None)
}
