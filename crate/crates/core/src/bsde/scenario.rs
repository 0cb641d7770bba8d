use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ConvexTube;
use crate::grid::TimeGrid;
use crate::linalg::norm;
use crate::noise::{forward_euler, sample_paths, ForwardSpec, LevyNoiseSpec, PathBundle};

/// Driver `f(t, x, y, z, u)`, evaluated row by row on `y ∈ R^d`,
/// `z ∈ R^{d x n_W}` and `u ∈ R^{d x J}` (row-major).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Driver {
    Zero,
    Constant {
        value: Vec<f64>,
    },
    /// `f_r = a y_r + b_r + c Σ_w z_{r,w} + Σ_j w_j u_{r,j}`.
    Linear {
        y_coeff: f64,
        offset: Vec<f64>,
        #[serde(default)]
        z_coeff: f64,
        #[serde(default)]
        u_weights: Vec<f64>,
    },
    /// `f_r = p(clamp(y_r, -bound, bound))` for a polynomial `p` (ascending coefficients).
    ClampedPolynomial {
        coeffs: Vec<f64>,
        bound: f64,
    },
}

impl Driver {
    pub fn eval(&self, _t: f64, _x: &[f64], y: &[f64], z: &[f64], u: &[f64], out: &mut [f64]) {
        let d = y.len();
        match self {
            Driver::Zero => out.iter_mut().for_each(|o| *o = 0.0),
            Driver::Constant { value } => out.copy_from_slice(value),
            Driver::Linear {
                y_coeff,
                offset,
                z_coeff,
                u_weights,
            } => {
                let nw = z.len().checked_div(d).unwrap_or(0);
                let nj = u.len().checked_div(d).unwrap_or(0);
                for r in 0..d {
                    let mut v = y_coeff * y[r] + offset[r];
                    if *z_coeff != 0.0 {
                        v += z_coeff * z[r * nw..(r + 1) * nw].iter().sum::<f64>();
                    }
                    for (j, w) in u_weights.iter().enumerate().take(nj) {
                        v += w * u[r * nj + j];
                    }
                    out[r] = v;
                }
            }
            Driver::ClampedPolynomial { coeffs, bound } => {
                for r in 0..d {
                    let s = y[r].clamp(-bound, *bound);
                    out[r] = coeffs.iter().rev().fold(0.0, |acc, c| acc * s + c);
                }
            }
        }
    }

    /// Lipschitz constant with respect to `|y| + |z| + |u|_λ`.
    pub fn lipschitz_bound(&self, noise: &LevyNoiseSpec) -> f64 {
        match self {
            Driver::Zero | Driver::Constant { .. } => 0.0,
            Driver::Linear {
                y_coeff,
                z_coeff,
                u_weights,
                ..
            } => {
                let cz = z_coeff.abs() * (noise.brownian_dim() as f64).sqrt();
                let cu = u_weights
                    .iter()
                    .zip(noise.intensities())
                    .map(|(w, l)| w * w / l)
                    .sum::<f64>()
                    .sqrt();
                y_coeff.abs().max(cz).max(cu)
            }
            Driver::ClampedPolynomial { coeffs, bound } => coeffs
                .iter()
                .enumerate()
                .skip(1)
                .map(|(k, c)| k as f64 * c.abs() * bound.powi(k as i32 - 1))
                .sum(),
        }
    }

    fn check(&self, d: usize, noise: &LevyNoiseSpec) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("driver: {m}")));
        match self {
            Driver::Zero => Ok(()),
            Driver::Constant { value } if value.len() != d => bad(format!(
                "value has length {}, tube dimension is {d}",
                value.len()
            )),
            Driver::Linear {
                offset, u_weights, ..
            } if offset.len() != d || u_weights.len() > noise.jump_count() => {
                bad("offset must match the tube dimension and u_weights the mark count".into())
            }
            Driver::ClampedPolynomial { coeffs, bound } if coeffs.is_empty() || !(*bound > 0.0) => {
                bad("clamped polynomial needs coefficients and a positive bound".into())
            }
            _ => Ok(()),
        }
    }
}

/// Terminal map `g(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Terminal {
    Constant {
        value: Vec<f64>,
    },
    /// `A x + b` with `A` given as `d` rows of length `d_X`.
    Affine {
        matrix: Vec<Vec<f64>>,
        offset: Vec<f64>,
    },
    /// Affine image projected onto the closed ball `B(center, radius)`.
    BallClampedAffine {
        matrix: Vec<Vec<f64>>,
        offset: Vec<f64>,
        center: Vec<f64>,
        radius: f64,
    },
    /// `center + radius (cos x_1, sin x_1)`.
    Circle {
        center: Vec<f64>,
        radius: f64,
    },
}

impl Terminal {
    pub fn dim(&self) -> usize {
        match self {
            Terminal::Constant { value } => value.len(),
            Terminal::Affine { offset, .. } | Terminal::BallClampedAffine { offset, .. } => {
                offset.len()
            }
            Terminal::Circle { center, .. } => center.len(),
        }
    }

    pub fn eval(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Terminal::Constant { value } => out.copy_from_slice(value),
            Terminal::Affine { matrix, offset } => affine(matrix, offset, x, out),
            Terminal::BallClampedAffine {
                matrix,
                offset,
                center,
                radius,
            } => {
                affine(matrix, offset, x, out);
                let dist = out
                    .iter()
                    .zip(center)
                    .map(|(a, c)| (a - c) * (a - c))
                    .sum::<f64>()
                    .sqrt();
                if dist > *radius {
                    for (o, c) in out.iter_mut().zip(center) {
                        *o = c + (*o - c) * radius / dist;
                    }
                }
            }
            Terminal::Circle { center, radius } => {
                let s = x.first().copied().unwrap_or(0.0);
                out[0] = center[0] + radius * s.cos();
                out[1] = center[1] + radius * s.sin();
            }
        }
    }

    fn check(&self, d: usize, state_dim: usize) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("terminal: {m}")));
        if self.dim() != d {
            return bad("output dimension differs from the tube dimension");
        }
        match self {
            Terminal::Affine { matrix, .. } | Terminal::BallClampedAffine { matrix, .. }
                if matrix.len() != d || matrix.iter().any(|r| r.len() != state_dim) =>
            {
                bad("matrix must have one row per output and one column per state coordinate")
            }
            Terminal::BallClampedAffine { center, radius, .. }
                if center.len() != d || !(*radius >= 0.0) =>
            {
                bad("clamp ball must match the dimension and have a non-negative radius")
            }
            Terminal::Circle { center, radius } if center.len() != 2 || !radius.is_finite() => {
                bad("circle terminal is two-dimensional")
            }
            _ => Ok(()),
        }
    }
}

fn affine(matrix: &[Vec<f64>], offset: &[f64], x: &[f64], out: &mut [f64]) {
    for (r, o) in out.iter_mut().enumerate() {
        *o = offset[r] + matrix[r].iter().zip(x).map(|(a, v)| a * v).sum::<f64>();
    }
}

/// Fully specified reflected BSDE problem.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub tube: ConvexTube,
    pub grid: TimeGrid,
    pub noise: LevyNoiseSpec,
    pub forward: ForwardSpec,
    pub terminal: Terminal,
    pub driver: Driver,
    /// Declared Lipschitz constant of the driver.
    pub lipschitz: f64,
}

const LIPSCHITZ_PROBES: usize = 1000;
const LIPSCHITZ_SLACK: f64 = 1.1;
const TUBE_SAMPLES: usize = 64;

impl Scenario {
    /// Assembles and validates a scenario; `lipschitz = None` uses the driver's own bound.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        tube: ConvexTube,
        grid: TimeGrid,
        noise: LevyNoiseSpec,
        forward: ForwardSpec,
        terminal: Terminal,
        driver: Driver,
        lipschitz: Option<f64>,
    ) -> Result<Self> {
        let lipschitz = lipschitz.unwrap_or_else(|| driver.lipschitz_bound(&noise));
        let s = Scenario {
            name: name.into(),
            tube,
            grid,
            noise,
            forward,
            terminal,
            driver,
            lipschitz,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn dim(&self) -> usize {
        self.tube.dim()
    }

    /// Same problem on a grid with `steps` steps.
    pub fn with_steps(&self, steps: usize) -> Result<Self> {
        let mut s = self.clone();
        s.grid = TimeGrid::new(self.grid.horizon(), steps)?;
        s.tube.validate(&s.grid, TUBE_SAMPLES).into_result()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if (self.tube.horizon() - self.grid.horizon()).abs() > 1e-12 * self.grid.horizon() {
            return Err(Error::Config(format!(
                "tube horizon {} differs from the grid horizon {}",
                self.tube.horizon(),
                self.grid.horizon()
            )));
        }
        self.forward.validate(&self.noise)?;
        self.terminal.check(d, self.forward.state_dim())?;
        self.driver.check(d, &self.noise)?;
        if !(self.lipschitz.is_finite() && self.lipschitz >= 0.0) {
            return Err(Error::Config(
                "driver Lipschitz constant must be finite and non-negative".into(),
            ));
        }
        self.tube.validate(&self.grid, TUBE_SAMPLES).into_result()?;
        self.check_lipschitz()
    }

    /// Finite-difference probes of the declared Lipschitz constant.
    fn check_lipschitz(&self) -> Result<()> {
        let d = self.dim();
        let (nw, nj) = (self.noise.brownian_dim(), self.noise.jump_count());
        let mut rng = ChaCha8Rng::seed_from_u64(0x6c6970);
        let mut draw = |n: usize, scale: f64| -> Vec<f64> {
            (0..n)
                .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                .collect()
        };
        let (mut f1, mut f2) = (vec![0.0; d], vec![0.0; d]);
        for probe in 0..LIPSCHITZ_PROBES {
            let scale = [0.01, 0.3, 3.0][probe % 3];
            let t = self.grid.horizon() * (probe as f64 / LIPSCHITZ_PROBES as f64);
            let x = &self.forward.x0;
            let (y1, z1, u1) = (draw(d, scale), draw(d * nw, scale), draw(d * nj, scale));
            let (y2, z2, u2) = (draw(d, scale), draw(d * nw, scale), draw(d * nj, scale));
            self.driver.eval(t, x, &y1, &z1, &u1, &mut f1);
            self.driver.eval(t, x, &y2, &z2, &u2, &mut f2);
            let lhs = norm(&f1.iter().zip(&f2).map(|(a, b)| a - b).collect::<Vec<_>>());
            let dy = norm(&y1.iter().zip(&y2).map(|(a, b)| a - b).collect::<Vec<_>>());
            let dz = norm(&z1.iter().zip(&z2).map(|(a, b)| a - b).collect::<Vec<_>>());
            let du: Vec<f64> = u1.iter().zip(&u2).map(|(a, b)| a - b).collect();
            let rhs = LIPSCHITZ_SLACK * self.lipschitz * (dy + dz + self.noise.jump_norm(&du, d));
            if !lhs.is_finite() || lhs > rhs + 1e-12 {
                return Err(Error::Config(format!(
                    "driver violates the declared Lipschitz constant {} (probe {probe}: {lhs:.4e} > {rhs:.4e})",
                    self.lipschitz
                )));
            }
        }
        Ok(())
    }

    /// Simulates `paths` driving paths and the forward state.
    pub fn simulate(&self, paths: usize, seed: u64) -> Result<PathBundle> {
        let mut bundle = sample_paths(&self.grid, &self.noise, paths, seed)?;
        forward_euler(&self.forward, &mut bundle)?;
        Ok(bundle)
    }

    /// `g(X_N)` on every path (`M x d`); with `require_inside`, each value must
    /// lie in the closed terminal slice.
    pub fn terminal_values(&self, bundle: &PathBundle, require_inside: bool) -> Result<Vec<f64>> {
        let d = self.dim();
        let n = self.grid.steps();
        let m = bundle.paths();
        let mut out = vec![0.0; m * d];
        for i in 0..m {
            let x = if bundle.state_dim() > 0 {
                bundle.x(n, i)
            } else {
                &[][..]
            };
            let y = &mut out[i * d..(i + 1) * d];
            self.terminal.eval(x, y);
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    step: n,
                    path: i,
                    what: "terminal value",
                });
            }
            if require_inside && !self.tube.contains_closure(self.grid.horizon(), y)? {
                return Err(Error::Config(format!(
                    "terminal value {y:?} on path {i} lies outside the terminal slice"
                )));
            }
        }
        Ok(out)
    }
}
