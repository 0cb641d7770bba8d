//! Least-squares conditional expectations on the forward state.
//!
//! A [`Design`] regresses per-path targets on
//!
//! ```text
//! [ φ_1(X) .. φ_{p-1}(X) | φ(X)·ξ_1 | ... | φ(X)·ξ_S ]  (+ unpenalized intercept)
//! ```
//!
//! where the `ξ_s` are zero-mean noise increments of the step (Brownian and
//! compensated jump increments). The φ-part of the fit is the conditional
//! expectation, the coefficient functions of the `ξ_s` blocks are the
//! martingale integrands. With no noise sources this is plain regression on
//! the basis.
//!
//! Columns are centered and scaled before the solve, the ridge term is
//! `RIDGE` times the (unit) mean diagonal, and columns that are constant or
//! numerically dependent on earlier ones are pruned during the Cholesky
//! factorization. All cross-path sums run over fixed chunks in index order,
//! so results do not depend on the worker count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const RIDGE: f64 = 1e-10;
const PIVOT_TOL: f64 = 1e-9;
const CHUNK: usize = 512;
/// Minimum paths per regression column.
pub const PATHS_PER_COLUMN: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum RegressionBasis {
    /// Monomials of total degree `<= degree` in the standardized state.
    Polynomial { degree: usize },
    /// Indicators of `count` equal-mass bins of the first state coordinate.
    Bins { count: usize },
}

impl Default for RegressionBasis {
    fn default() -> Self {
        RegressionBasis::Polynomial { degree: 2 }
    }
}

impl RegressionBasis {
    /// Number of basis functions (constant included) for a `state_dim`-dimensional state.
    pub fn size(&self, state_dim: usize) -> usize {
        match *self {
            RegressionBasis::Polynomial { degree } => binomial(state_dim + degree, degree),
            RegressionBasis::Bins { count } => {
                if state_dim == 0 {
                    1
                } else {
                    count.max(1)
                }
            }
        }
    }
}

fn binomial(n: usize, k: usize) -> usize {
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

/// Basis evaluation with the standardization fitted on one time slice.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    basis: RegressionBasis,
    state_dim: usize,
    shift: Vec<f64>,
    scale: Vec<f64>,
    exponents: Vec<Vec<u32>>,
    edges: Vec<f64>,
}

impl FeatureMap {
    pub fn fit(basis: RegressionBasis, x: &[f64], state_dim: usize) -> Self {
        let m = x.len().checked_div(state_dim).unwrap_or(0);
        let mut shift = vec![0.0; state_dim];
        let mut scale = vec![1.0; state_dim];
        if m > 0 {
            for c in 0..state_dim {
                let col = (0..m).map(|i| x[i * state_dim + c]);
                let mean = col.clone().sum::<f64>() / m as f64;
                let var = col.map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
                shift[c] = mean;
                // a constant coordinate maps to 0 and its monomials are pruned later
                scale[c] = if var.sqrt() > 1e-300 { var.sqrt() } else { 0.0 };
            }
        }
        let mut exponents = Vec::new();
        let mut edges = Vec::new();
        match basis {
            RegressionBasis::Polynomial { degree } => {
                monomials(state_dim, degree as u32, &mut Vec::new(), &mut exponents);
                exponents.sort_by_key(|e| e.iter().sum::<u32>());
            }
            RegressionBasis::Bins { count } => {
                if state_dim > 0 && m > 0 && count > 1 {
                    let mut first: Vec<f64> = (0..m).map(|i| x[i * state_dim]).collect();
                    first.sort_by(f64::total_cmp);
                    edges = (1..count)
                        .map(|b| first[(b * m / count).min(m - 1)])
                        .collect();
                }
            }
        }
        FeatureMap {
            basis,
            state_dim,
            shift,
            scale,
            exponents,
            edges,
        }
    }

    pub fn len(&self) -> usize {
        self.basis.size(self.state_dim)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Writes the basis values at `x` into `out`; `out[0]` is the constant 1.
    pub fn eval(&self, x: &[f64], out: &mut [f64]) {
        match self.basis {
            RegressionBasis::Polynomial { .. } => {
                let mut u = [0.0f64; 16];
                let u = &mut u[..self.state_dim.min(16)];
                for (c, uc) in u.iter_mut().enumerate() {
                    *uc = if self.scale[c] > 0.0 {
                        (x[c] - self.shift[c]) / self.scale[c]
                    } else {
                        0.0
                    };
                }
                for (o, e) in out.iter_mut().zip(&self.exponents) {
                    *o = e
                        .iter()
                        .zip(u.iter())
                        .map(|(&p, &v)| v.powi(p as i32))
                        .product();
                }
            }
            RegressionBasis::Bins { .. } => {
                out.iter_mut().for_each(|o| *o = 0.0);
                out[0] = 1.0;
                if self.state_dim > 0 && !self.edges.is_empty() {
                    let bin = self.edges.partition_point(|&e| e <= x[0]);
                    if bin > 0 {
                        out[bin] = 1.0;
                    }
                }
            }
        }
    }
}

fn monomials(dim: usize, degree: u32, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    if prefix.len() == dim {
        out.push(prefix.clone());
        return;
    }
    let used: u32 = prefix.iter().sum();
    for p in 0..=degree - used {
        prefix.push(p);
        monomials(dim, degree, prefix, out);
        prefix.pop();
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionDiagnostics {
    pub columns: usize,
    pub effective_rank: usize,
    /// Squared ratio of the largest to smallest retained Cholesky pivot.
    pub condition: f64,
}

/// Factorized regression problem for one time slice.
#[derive(Debug)]
pub struct Design {
    map: FeatureMap,
    paths: usize,
    p: usize,
    sources: usize,
    phi: Vec<f64>,
    cols: Vec<f64>,
    q: usize,
    mean: Vec<f64>,
    scale: Vec<f64>,
    chol: Vec<f64>,
    kept: Vec<bool>,
    diagnostics: RegressionDiagnostics,
}

/// Raw-unit coefficients for a batch of target columns.
#[derive(Debug, Clone)]
pub struct Fit {
    width: usize,
    intercept: Vec<f64>,
    beta: Vec<f64>,
}

impl Design {
    /// `x`: `M x state_dim` states; `noise`: `M x sources` zero-mean increments.
    pub fn build(
        basis: RegressionBasis,
        x: &[f64],
        state_dim: usize,
        paths: usize,
        noise: &[f64],
        sources: usize,
    ) -> Result<Self> {
        if x.len() != paths * state_dim || noise.len() != paths * sources {
            return Err(Error::Input(
                "regression inputs have inconsistent sizes".into(),
            ));
        }
        let map = FeatureMap::fit(basis, x, state_dim);
        let p = map.len();
        let q = (p - 1) + p * sources;
        if paths < PATHS_PER_COLUMN * (q + 1) {
            return Err(Error::Input(format!(
                "regression needs at least {} paths for {} columns, got {paths}",
                PATHS_PER_COLUMN * (q + 1),
                q + 1
            )));
        }

        let mut phi = vec![0.0; paths * p];
        phi.par_chunks_mut(p).enumerate().for_each(|(i, out)| {
            map.eval(&x[i * state_dim..(i + 1) * state_dim], out);
        });
        let mut cols = vec![0.0; paths * q];
        if q > 0 {
            cols.par_chunks_mut(q).enumerate().for_each(|(i, row)| {
                let f = &phi[i * p..(i + 1) * p];
                row[..p - 1].copy_from_slice(&f[1..]);
                for s in 0..sources {
                    let xi = noise[i * sources + s];
                    let block = &mut row[p - 1 + s * p..p - 1 + (s + 1) * p];
                    for (b, fb) in block.iter_mut().zip(f) {
                        *b = fb * xi;
                    }
                }
            });
        }

        let mean = chunked_sum(&cols, q, paths, |row, acc| {
            for (a, v) in acc.iter_mut().zip(row) {
                *a += v;
            }
        })
        .into_iter()
        .map(|s| s / paths as f64)
        .collect::<Vec<_>>();

        // centered second moments (upper triangle, row-major q x q)
        let gram = chunked_sum(&cols, q * q, paths, |row, acc| {
            for a in 0..q {
                let ra = row[a] - mean[a];
                if ra == 0.0 {
                    continue;
                }
                let acc_row = &mut acc[a * q..(a + 1) * q];
                for b in a..q {
                    acc_row[b] += ra * (row[b] - mean[b]);
                }
            }
        });
        let mut scale = vec![0.0; q];
        let mut kept = vec![true; q];
        for a in 0..q {
            let var = gram[a * q + a] / paths as f64;
            let tiny = 1e-13 * (1.0 + mean[a].abs());
            if !(var.is_finite()) {
                return Err(Error::Regression(format!(
                    "column {a} has a non-finite variance"
                )));
            }
            if var.sqrt() <= tiny {
                kept[a] = false;
            } else {
                scale[a] = var.sqrt();
            }
        }

        // Cholesky of corr + RIDGE * I, pruning dependent columns
        let mut chol = vec![0.0; q * q];
        let corr = |a: usize, b: usize| {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            gram[lo * q + hi] / (paths as f64 * scale[a] * scale[b])
        };
        let (mut pmax, mut pmin) = (0.0f64, f64::INFINITY);
        for j in 0..q {
            if !kept[j] {
                continue;
            }
            let mut s = corr(j, j) + RIDGE;
            for k in 0..j {
                s -= chol[j * q + k] * chol[j * q + k];
            }
            if !s.is_finite() {
                return Err(Error::Regression("design matrix is not finite".into()));
            }
            if s <= PIVOT_TOL {
                kept[j] = false;
                continue;
            }
            let d = s.sqrt();
            chol[j * q + j] = d;
            pmax = pmax.max(d);
            pmin = pmin.min(d);
            for i in j + 1..q {
                if !kept[i] {
                    continue;
                }
                let mut v = corr(i, j);
                for k in 0..j {
                    v -= chol[i * q + k] * chol[j * q + k];
                }
                chol[i * q + j] = v / d;
            }
        }
        let effective_rank = kept.iter().filter(|&&k| k).count();
        let condition = if effective_rank > 0 {
            (pmax / pmin).powi(2)
        } else {
            1.0
        };
        Ok(Design {
            map,
            paths,
            p,
            sources,
            phi,
            cols,
            q,
            mean,
            scale,
            chol,
            kept,
            diagnostics: RegressionDiagnostics {
                columns: q + 1,
                effective_rank: effective_rank + 1,
                condition,
            },
        })
    }

    pub fn diagnostics(&self) -> &RegressionDiagnostics {
        &self.diagnostics
    }

    pub fn basis_len(&self) -> usize {
        self.p
    }

    pub fn feature_map(&self) -> &FeatureMap {
        &self.map
    }

    /// Fits `targets` (`M x width`, row-major) on the design.
    pub fn solve(&self, targets: &[f64], width: usize) -> Result<Fit> {
        let (m, q) = (self.paths, self.q);
        if targets.len() != m * width {
            return Err(Error::Input("target matrix has the wrong size".into()));
        }
        let tmean: Vec<f64> = chunked_sum(targets, width, m, |row, acc| {
            for (a, v) in acc.iter_mut().zip(row) {
                *a += v;
            }
        })
        .into_iter()
        .map(|s| s / m as f64)
        .collect();
        if tmean.iter().any(|v| !v.is_finite()) {
            return Err(Error::Regression("targets are not finite".into()));
        }
        let mut beta = vec![0.0; width * q];
        if q > 0 {
            // cross products, laid out [column][target]
            let idx: Vec<usize> = (0..m).collect();
            let cross = chunked_sum(&idx, q * width, m, |row, acc| {
                let i = row[0];
                let c = &self.cols[i * q..(i + 1) * q];
                let t = &targets[i * width..(i + 1) * width];
                for a in 0..q {
                    let ca = c[a] - self.mean[a];
                    if ca == 0.0 {
                        continue;
                    }
                    let acc_row = &mut acc[a * width..(a + 1) * width];
                    for (r, ar) in acc_row.iter_mut().enumerate() {
                        *ar += ca * (t[r] - tmean[r]);
                    }
                }
            });
            let mut rhs = vec![0.0; q];
            for r in 0..width {
                for a in 0..q {
                    rhs[a] = if self.kept[a] {
                        cross[a * width + r] / (m as f64 * self.scale[a])
                    } else {
                        0.0
                    };
                }
                let sol = self.cholesky_solve(&rhs);
                for a in 0..q {
                    if self.kept[a] {
                        beta[r * q + a] = sol[a] / self.scale[a];
                    }
                }
            }
        }
        let mut intercept = tmean;
        for (r, ic) in intercept.iter_mut().enumerate() {
            for a in 0..q {
                *ic -= beta[r * q + a] * self.mean[a];
            }
        }
        if beta.iter().chain(&intercept).any(|v| !v.is_finite()) {
            return Err(Error::Regression(
                "least-squares solution is not finite".into(),
            ));
        }
        Ok(Fit {
            width,
            intercept,
            beta,
        })
    }

    fn cholesky_solve(&self, rhs: &[f64]) -> Vec<f64> {
        let q = self.q;
        let l = &self.chol;
        let mut y = vec![0.0; q];
        for i in 0..q {
            if !self.kept[i] {
                continue;
            }
            let mut s = rhs[i];
            for k in 0..i {
                s -= l[i * q + k] * y[k];
            }
            y[i] = s / l[i * q + i];
        }
        let mut x = vec![0.0; q];
        for i in (0..q).rev() {
            if !self.kept[i] {
                continue;
            }
            let mut s = y[i];
            for k in i + 1..q {
                s -= l[k * q + i] * x[k];
            }
            x[i] = s / l[i * q + i];
        }
        x
    }

    /// Conditional-expectation part of the fit at every path (`M x width`).
    pub fn continuation(&self, fit: &Fit) -> Vec<f64> {
        let (p, q, w) = (self.p, self.q, fit.width);
        let mut out = vec![0.0; self.paths * w];
        out.par_chunks_mut(w.max(1)).enumerate().for_each(|(i, o)| {
            let f = &self.phi[i * p..(i + 1) * p];
            for (r, or) in o.iter_mut().enumerate() {
                let b = &fit.beta[r * q..r * q + p - 1];
                *or = fit.intercept[r] + b.iter().zip(&f[1..]).map(|(x, y)| x * y).sum::<f64>();
            }
        });
        out
    }

    /// Integrand of noise source `s` at every path (`M x width`).
    pub fn integrand(&self, fit: &Fit, s: usize) -> Vec<f64> {
        assert!(s < self.sources);
        let (p, q, w) = (self.p, self.q, fit.width);
        let off = p - 1 + s * p;
        let mut out = vec![0.0; self.paths * w];
        out.par_chunks_mut(w.max(1)).enumerate().for_each(|(i, o)| {
            let f = &self.phi[i * p..(i + 1) * p];
            for (r, or) in o.iter_mut().enumerate() {
                let b = &fit.beta[r * q + off..r * q + off + p];
                *or = b.iter().zip(f).map(|(x, y)| x * y).sum();
            }
        });
        out
    }

    /// Root-mean-square residual of each target column.
    pub fn residual_rms(&self, fit: &Fit, targets: &[f64]) -> Vec<f64> {
        let (q, w) = (self.q, fit.width);
        let idx: Vec<usize> = (0..self.paths).collect();
        let ss = chunked_sum(&idx, w, self.paths, |row, acc| {
            let i = row[0];
            let c = &self.cols[i * q..(i + 1) * q];
            for (r, a) in acc.iter_mut().enumerate() {
                let b = &fit.beta[r * q..(r + 1) * q];
                let fitted = fit.intercept[r] + b.iter().zip(c).map(|(x, y)| x * y).sum::<f64>();
                let e = targets[i * w + r] - fitted;
                *a += e * e;
            }
        });
        ss.into_iter()
            .map(|s| (s / self.paths as f64).sqrt())
            .collect()
    }
}

/// Sums `f(row)` over `rows` rows of `data` in fixed chunks, merged in index order.
fn chunked_sum<T: Sync>(
    data: &[T],
    width: usize,
    rows: usize,
    f: impl Fn(&[T], &mut [f64]) + Sync,
) -> Vec<f64> {
    let stride = data.len() / rows.max(1);
    let partials: Vec<Vec<f64>> = (0..rows.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![0.0; width];
            for i in c * CHUNK..((c + 1) * CHUNK).min(rows) {
                f(&data[i * stride..(i + 1) * stride], &mut acc);
            }
            acc
        })
        .collect();
    let mut total = vec![0.0; width];
    for part in partials {
        for (t, v) in total.iter_mut().zip(part) {
            *t += v;
        }
    }
    total
}

/// Fitted conditional expectation `x -> E[target | X = x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalExpectation {
    map: FeatureMap,
    width: usize,
    intercept: Vec<f64>,
    beta: Vec<f64>,
    pub residual_rms: Vec<f64>,
    pub diagnostics: RegressionDiagnostics,
}

impl ConditionalExpectation {
    pub fn evaluate(&self, x: &[f64]) -> Vec<f64> {
        let p = self.map.len();
        let mut f = vec![0.0; p];
        self.map.eval(x, &mut f);
        (0..self.width)
            .map(|r| {
                self.intercept[r]
                    + self.beta[r * (p - 1)..(r + 1) * (p - 1)]
                        .iter()
                        .zip(&f[1..])
                        .map(|(b, v)| b * v)
                        .sum::<f64>()
            })
            .collect()
    }

    pub fn intercept(&self) -> &[f64] {
        &self.intercept
    }

    /// Coefficients of the non-constant basis functions for target `r`.
    pub fn coefficients(&self, r: usize) -> &[f64] {
        let p = self.map.len();
        &self.beta[r * (p - 1)..(r + 1) * (p - 1)]
    }
}

/// Least-squares regression of `targets` (`M x width`) on the basis of
/// `features` (`M x state_dim`).
pub fn regress(
    basis: RegressionBasis,
    features: &[f64],
    state_dim: usize,
    targets: &[f64],
    width: usize,
) -> Result<ConditionalExpectation> {
    if width == 0 {
        return Err(Error::Input(
            "regression needs at least one target column".into(),
        ));
    }
    let paths = targets.len() / width;
    let design = Design::build(basis, features, state_dim, paths, &[], 0)?;
    let fit = design.solve(targets, width)?;
    let residual_rms = design.residual_rms(&fit, targets);
    Ok(ConditionalExpectation {
        map: design.map.clone(),
        width,
        intercept: fit.intercept.clone(),
        beta: fit.beta.clone(),
        residual_rms,
        diagnostics: design.diagnostics.clone(),
    })
}
