//! Penalized approximation of the reflected equation.
//!
//! Level `n` replaces the constraint by the drift `-n (y - π(t,y))`. The
//! penalty term is integrated implicitly: the resolvent has a closed form
//! because every point of the segment `[π(t,ŷ), ŷ]` projects to `π(t,ŷ)`.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bsde::{resolvent_in_place, BackwardSolution, RegressionBasis, Scenario, StepView};
use crate::error::{Error, Result};
use crate::geometry::ConvexTube;
use crate::linalg::{dot, norm};
use crate::noise::PathBundle;
use crate::stats::{mean, std_dev, Estimate};

/// Penalty strength `n >= 1` (per unit time).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u64", into = "u64")]
pub struct PenaltyLevel(u64);

impl PenaltyLevel {
    pub fn new(n: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::Input("penalty level must be at least 1".into()));
        }
        Ok(PenaltyLevel(n))
    }

    pub fn get(self) -> u64 {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64
    }
}

impl TryFrom<u64> for PenaltyLevel {
    type Error = Error;
    fn try_from(n: u64) -> Result<Self> {
        PenaltyLevel::new(n)
    }
}

impl From<PenaltyLevel> for u64 {
    fn from(n: PenaltyLevel) -> u64 {
        n.0
    }
}

/// Closed-form resolvent step: returns `(y, ΔΛ)` with
/// `y + nΔt (y - π(t,y)) = ŷ` and `ΔΛ = -nΔt (y - π(t,y))`.
pub fn penalized_step(
    y_hat: &[f64],
    t: f64,
    n: PenaltyLevel,
    dt: f64,
    tube: &ConvexTube,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if y_hat.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("penalized step needs a finite point".into()));
    }
    let mut y = y_hat.to_vec();
    let mut dl = vec![0.0; y.len()];
    let mut scratch = vec![0.0; y.len()];
    resolvent_in_place(tube, t, n.as_f64() * dt, &mut y, &mut dl, &mut scratch)?;
    Ok((y, dl))
}

/// Penalized regression solution at level `n`, with `Λ` reconstructed from
/// the penalty increments.
pub fn backward_solve_penalized(
    scenario: &Scenario,
    bundle: &PathBundle,
    basis: RegressionBasis,
    n: PenaltyLevel,
) -> Result<BackwardSolution> {
    BackwardSolution::solve(scenario, bundle, basis, Some(n.as_f64()))
}

/// Monte Carlo estimates of the penalization error functionals.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PenaltyMetrics {
    /// `E[sup_k d(Y_k, D_{t_k})^2]`.
    pub sup_dist_sq: Estimate,
    /// `E[Σ_k d(Y_k, D_{t_k})^2 Δt]`.
    pub int_dist_sq: Estimate,
    /// `E[|Λ|_T] = E[Σ_k |ΔΛ_k|]`.
    pub tv_lambda: Estimate,
    /// `E[sup_k |Y_k|^2]`.
    pub sup_y_sq: Estimate,
}

/// Streaming per-path accumulation of [`PenaltyMetrics`] over a backward pass.
#[derive(Debug, Clone)]
pub struct MetricsAccumulator {
    dim: usize,
    dt: f64,
    sup_d2: Vec<f64>,
    int_d2: Vec<f64>,
    tv: Vec<f64>,
    sup_y2: Vec<f64>,
}

impl MetricsAccumulator {
    pub fn new(paths: usize, dim: usize, dt: f64) -> Self {
        MetricsAccumulator {
            dim,
            dt,
            sup_d2: vec![0.0; paths],
            int_d2: vec![0.0; paths],
            tv: vec![0.0; paths],
            sup_y2: vec![0.0; paths],
        }
    }

    pub fn observe(&mut self, tube: &ConvexTube, view: &StepView<'_>) -> Result<()> {
        let d = self.dim;
        let dt = self.dt;
        let last = view.dlambda.is_empty();
        self.sup_d2
            .par_iter_mut()
            .zip(self.int_d2.par_iter_mut())
            .zip(self.tv.par_iter_mut())
            .zip(self.sup_y2.par_iter_mut())
            .enumerate()
            .try_for_each(|(i, (((sd, id), tv), sy))| {
                let y = &view.y[i * d..(i + 1) * d];
                let dist = tube.distance(view.t, y)?;
                let d2 = dist * dist;
                *sd = sd.max(d2);
                *sy = sy.max(dot(y, y));
                if !last {
                    *id += d2 * dt;
                    *tv += norm(&view.dlambda[i * d..(i + 1) * d]);
                }
                Ok(())
            })
    }

    pub fn finish(&self) -> PenaltyMetrics {
        PenaltyMetrics {
            sup_dist_sq: Estimate::from_samples(&self.sup_d2),
            int_dist_sq: Estimate::from_samples(&self.int_d2),
            tv_lambda: Estimate::from_samples(&self.tv),
            sup_y_sq: Estimate::from_samples(&self.sup_y2),
        }
    }
}

/// Pathwise `sup_k |Y^a_k - Y^b_k|^2` between two levels on one bundle.
#[derive(Debug, Clone)]
pub struct CauchyAccumulator {
    dim: usize,
    sup: Vec<f64>,
}

impl CauchyAccumulator {
    pub fn new(paths: usize, dim: usize) -> Self {
        CauchyAccumulator {
            dim,
            sup: vec![0.0; paths],
        }
    }

    pub fn observe(&mut self, ya: &[f64], yb: &[f64]) {
        let d = self.dim;
        self.sup.par_iter_mut().enumerate().for_each(|(i, s)| {
            let gap: f64 = (0..d)
                .map(|r| (ya[i * d + r] - yb[i * d + r]).powi(2))
                .sum();
            *s = s.max(gap);
        });
    }

    pub fn finish(&self) -> Estimate {
        Estimate::from_samples(&self.sup)
    }
}

/// Error functionals of a stored solution.
pub fn penalty_metrics(sol: &BackwardSolution, tube: &ConvexTube) -> Result<PenaltyMetrics> {
    let (m, d, n) = (sol.paths(), sol.dim(), sol.steps());
    let mut acc = MetricsAccumulator::new(m, d, sol.grid().dt());
    for k in 0..=n {
        let dl = if k < n { sol.dlambda_step(k) } else { &[][..] };
        acc.observe(
            tube,
            &StepView {
                k,
                t: sol.grid().time(k),
                y: sol.y_step(k),
                z: &[],
                u: &[],
                dlambda: dl,
                regression: None,
            },
        )?;
    }
    Ok(acc.finish())
}

/// Discrete `D̄`-valued test path for the variational inequality.
#[derive(Debug, Clone, PartialEq)]
pub enum TestProcess {
    /// `z_k ≡ point`.
    Constant(Vec<f64>),
    /// `z_k = π(t_k, Y_k + η_k)` with `η_k ~ N(0, scale^2 I)`.
    ProjectedPerturbation { scale: f64, seed: u64 },
    /// Explicit values, `(N + 1) x M x d` step-major.
    Explicit(Vec<f64>),
}

/// The anchor point of the terminal slice and a projected perturbation of `Y`.
pub fn default_test_processes(tube: &ConvexTube) -> Result<Vec<TestProcess>> {
    let anchor = tube.interior_anchor()?;
    let scale = 0.1 * tube.bounding_radius(tube.horizon()).max(anchor.margin);
    Ok(vec![
        TestProcess::Constant(anchor.point),
        TestProcess::ProjectedPerturbation { scale, seed: 0x7a },
    ])
}

/// `max(2 · max_{i,k} d(Y_{i,k}, D_{t_k}), 1e-6)`.
pub fn default_band(sol: &BackwardSolution, tube: &ConvexTube) -> Result<f64> {
    let mut worst = 0.0f64;
    for k in 0..=sol.steps() {
        let t = sol.grid().time(k);
        for i in 0..sol.paths() {
            worst = worst.max(tube.distance(t, sol.y(k, i))?);
        }
    }
    Ok((2.0 * worst).max(1e-6))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkorokhodReport {
    /// Share of `|Λ|` accumulated while `d(Y_k, ∂D_{t_k}) > band`.
    pub interior_mass_fraction: f64,
    /// Minimum cosine between `ΔΛ_k` and the inward normal at `π(t_k, Y_k)`;
    /// `None` when `Λ` never moves.
    pub alignment_min: Option<f64>,
    pub tv_total: f64,
    /// Largest path mean of `Σ_k <Y_k - z_k, ΔΛ_k>` over the test processes.
    pub variational_gap: f64,
    /// Standard error of that path mean.
    pub variational_gap_stderr: f64,
    pub band: f64,
    pub active_steps: u64,
}

/// Checks the discrete Skorokhod conditions on a penalized solution.
pub fn skorokhod_diagnostics(
    sol: &BackwardSolution,
    tube: &ConvexTube,
    band: f64,
    test_processes: &[TestProcess],
) -> Result<SkorokhodReport> {
    if !(band > 0.0) {
        return Err(Error::Input(format!("band must be positive, got {band}")));
    }
    let (m, d, n) = (sol.paths(), sol.dim(), sol.steps());
    if m == 0 || d == 0 {
        return Err(Error::Input("empty solution".into()));
    }
    if tube.dim() != d {
        return Err(Error::Input("tube and solution dimensions differ".into()));
    }
    for tp in test_processes {
        match tp {
            TestProcess::Constant(p) if p.len() != d => {
                return Err(Error::Input(
                    "constant test process has the wrong dimension".into(),
                ))
            }
            TestProcess::Explicit(v) if v.len() != (n + 1) * m * d => {
                return Err(Error::Input(
                    "explicit test process has the wrong size".into(),
                ))
            }
            _ => {}
        }
    }

    struct PathStats {
        total: f64,
        interior: f64,
        align: f64,
        active: u64,
        gaps: Vec<f64>,
    }
    let per_path: Vec<PathStats> = (0..m)
        .into_par_iter()
        .map(|i| -> Result<PathStats> {
            let mut s = PathStats {
                total: 0.0,
                interior: 0.0,
                align: f64::INFINITY,
                active: 0,
                gaps: vec![0.0; test_processes.len()],
            };
            let mut rngs: Vec<Option<ChaCha8Rng>> = test_processes
                .iter()
                .map(|tp| match tp {
                    TestProcess::ProjectedPerturbation { seed, .. } => {
                        let mut r = ChaCha8Rng::seed_from_u64(*seed);
                        r.set_stream(i as u64);
                        Some(r)
                    }
                    _ => None,
                })
                .collect();
            let mut z = vec![0.0; d];
            for k in 0..n {
                let t = sol.grid().time(k);
                let y = sol.y(k, i);
                let dl = sol.dlambda(k, i);
                let mag = norm(dl);
                for (g, (tp, rng)) in s
                    .gaps
                    .iter_mut()
                    .zip(test_processes.iter().zip(rngs.iter_mut()))
                {
                    match tp {
                        TestProcess::Constant(p) => z.copy_from_slice(p),
                        TestProcess::ProjectedPerturbation { scale, .. } => {
                            let rng = rng.as_mut().expect("perturbation stream");
                            let shifted: Vec<f64> = y
                                .iter()
                                .map(|v| {
                                    let e: f64 = StandardNormal.sample(rng);
                                    v + scale * e
                                })
                                .collect();
                            tube.project_into(t, &shifted, &mut z)?;
                        }
                        TestProcess::Explicit(v) => {
                            z.copy_from_slice(&v[(k * m + i) * d..(k * m + i + 1) * d])
                        }
                    }
                    if mag > 0.0 {
                        *g += y
                            .iter()
                            .zip(&z)
                            .zip(dl)
                            .map(|((a, b), l)| (a - b) * l)
                            .sum::<f64>();
                    }
                }
                if mag == 0.0 {
                    continue;
                }
                s.active += 1;
                s.total += mag;
                if tube.boundary_distance(t, y)? > band && tube.contains_closure(t, y)? {
                    s.interior += mag;
                }
                let p = tube.project(t, y)?;
                let inward: Vec<f64> = p.iter().zip(y).map(|(a, b)| a - b).collect();
                let len = norm(&inward);
                let cos = if len > 0.0 {
                    dot(&inward, dl) / (len * mag)
                } else {
                    // on the closure: best match among the cone generators
                    match tube.normal_cone(t, y) {
                        Ok(cone) => cone
                            .generators
                            .iter()
                            .map(|g| dot(g, dl) / mag)
                            .fold(-1.0, f64::max),
                        Err(_) => -1.0,
                    }
                };
                s.align = s.align.min(cos);
            }
            Ok(s)
        })
        .collect::<Result<_>>()?;

    let total: f64 = per_path.iter().map(|s| s.total).sum();
    let interior: f64 = per_path.iter().map(|s| s.interior).sum();
    let active: u64 = per_path.iter().map(|s| s.active).sum();
    let align = per_path
        .iter()
        .map(|s| s.align)
        .fold(f64::INFINITY, f64::min);
    let (mut gap, mut gap_se) = (
        if test_processes.is_empty() {
            0.0
        } else {
            f64::NEG_INFINITY
        },
        0.0,
    );
    for j in 0..test_processes.len() {
        let g: Vec<f64> = per_path.iter().map(|s| s.gaps[j]).collect();
        let mu = mean(&g);
        if mu > gap {
            gap = mu;
            gap_se = std_dev(&g) / (m as f64).sqrt();
        }
    }
    Ok(SkorokhodReport {
        interior_mass_fraction: if total > 0.0 { interior / total } else { 0.0 },
        alignment_min: if active > 0 {
            Some(align.clamp(-1.0, 1.0))
        } else {
            None
        },
        tv_total: total / m as f64,
        variational_gap: gap,
        variational_gap_stderr: gap_se,
        band,
        active_steps: active,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Poly;

    fn interval() -> ConvexTube {
        ConvexTube::interval(Poly::constant(-1.0), Poly::constant(1.0), 1.0).unwrap()
    }

    /// Bisection on `y + c (y - clamp(y)) = ŷ`, monotone in `y`.
    fn bisect(y_hat: f64, c: f64) -> f64 {
        let h = |y: f64| y + c * (y - y.clamp(-1.0, 1.0)) - y_hat;
        let (mut lo, mut hi) = (-10.0, 10.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if h(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn interval_resolvent_matches_bisection() {
        let n = PenaltyLevel::new(4).unwrap();
        let (y, dl) = penalized_step(&[2.0], 0.5, n, 0.25, &interval()).unwrap();
        assert!((y[0] - bisect(2.0, 1.0)).abs() < 1e-12);
        assert!((y[0] - 1.5).abs() < 1e-15);
        assert!((dl[0] + 0.5).abs() < 1e-15);
        for (yh, c) in [(-3.0, 0.1), (1.0001, 50.0), (7.5, 3.0)] {
            let n = PenaltyLevel::new(100).unwrap();
            let (y, _) = penalized_step(&[yh], 0.0, n, c / 100.0, &interval()).unwrap();
            assert!((y[0] - bisect(yh, c)).abs() < 1e-10);
        }
    }

    #[test]
    fn inside_points_are_untouched() {
        let n = PenaltyLevel::new(1000).unwrap();
        let (y, dl) = penalized_step(&[0.3], 0.0, n, 0.1, &interval()).unwrap();
        assert_eq!(y, vec![0.3]);
        assert_eq!(dl, vec![0.0]);
    }

    #[test]
    fn ball_resolvent_matches_radial_bisection() {
        let ball = ConvexTube::ball(vec![0.0, 0.0], Poly::constant(1.0), 1.0).unwrap();
        let n = PenaltyLevel::new(3).unwrap();
        let (y, dl) = penalized_step(&[2.0, 0.0], 0.0, n, 1.0, &ball).unwrap();
        // radial coordinate solves the same scalar equation as the interval case
        assert!((y[0] - bisect(2.0, 3.0)).abs() < 1e-12);
        assert!((y[0] - 1.25).abs() < 1e-15 && y[1] == 0.0);
        assert!((dl[0] + 0.75).abs() < 1e-15 && dl[1] == 0.0);
    }

    #[test]
    fn zero_penalty_level_is_rejected() {
        assert!(PenaltyLevel::new(0).is_err());
        assert!(serde_json::from_str::<PenaltyLevel>("0").is_err());
        assert_eq!(serde_json::from_str::<PenaltyLevel>("8").unwrap().get(), 8);
    }
}
