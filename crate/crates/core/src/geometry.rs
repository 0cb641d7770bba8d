//! Time-dependent convex domains.
//!
//! A [`ConvexTube`] is a family of open convex slices `D_t`, `t in [0, T]`,
//! that never grows: `D_s ⊇ D_t` whenever `s <= t`. Two concrete families are
//! supported, a ball with a shrinking radius and an intersection of
//! half-spaces with non-increasing offsets. All queries are pure.
//!
//! Projection onto a ball is radial. Projection onto a polytope uses
//! Dykstra's alternating projections, with exact shortcuts for the
//! one-dimensional case and for points that violate a single face.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::linalg::{dist, dot, for_each_combination, norm, solve_square};

/// Tolerance used for closure membership.
pub const CLOSURE_TOL: f64 = 1e-12;
pub const DYKSTRA_MAX_ITER: usize = 10_000;
/// Dykstra stops once a full sweep moves the iterate by less than this.
pub const DYKSTRA_TOL: f64 = 1e-10;
/// Slices with a smaller inradius count as degenerate.
pub const MIN_INRADIUS: f64 = 1e-9;

const TIME_SLACK: f64 = 1e-12;
const VERTEX_TOL: f64 = 1e-9;
const BOUNDING_BOX: f64 = 1e6;

/// Polynomial in time, `c0 + c1 t + c2 t^2 + ...`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Poly(Vec<f64>);

impl Poly {
    pub fn new(coeffs: Vec<f64>) -> Self {
        Poly(coeffs)
    }

    pub fn constant(c: f64) -> Self {
        Poly(vec![c])
    }

    /// `a + b t`
    pub fn linear(a: f64, b: f64) -> Self {
        Poly(vec![a, b])
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.0
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.0.iter().rev().fold(0.0, |acc, c| acc * t + c)
    }

    fn scaled(&self, s: f64) -> Self {
        Poly(self.0.iter().map(|c| c * s).collect())
    }
}

/// One face `<normal, y> < offset(t)` of a half-space tube; `normal` has unit length.
#[derive(Debug, Clone, PartialEq)]
pub struct Face {
    normal: Vec<f64>,
    offset: Poly,
}

impl Face {
    pub fn normal(&self) -> &[f64] {
        &self.normal
    }

    pub fn offset(&self) -> &Poly {
        &self.offset
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BallTube {
    center: Vec<f64>,
    radius: Poly,
    horizon: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HalfspaceTube {
    faces: Vec<Face>,
    dim: usize,
    horizon: f64,
}

/// Time-dependent convex domain with non-expanding slices.
#[derive(Debug, Clone, PartialEq)]
pub enum ConvexTube {
    Ball(BallTube),
    Halfspace(HalfspaceTube),
}

/// Finite generator set of the inward normal cone at a boundary point.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalConeSample {
    pub base: Vec<f64>,
    /// Unit inward normals; one at smooth points, one per active face at corners.
    pub generators: Vec<Vec<f64>>,
}

/// Deep point of the terminal slice together with the constant that makes
/// `<y - P, y - π(t,y)> >= |y - π(t,y)| / gamma` hold for every `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteriorAnchor {
    pub point: Vec<f64>,
    pub margin: f64,
    pub gamma: f64,
}

impl InteriorAnchor {
    /// `<y - P, y - π> - |y - π| / gamma`; non-negative when the anchor inequality holds.
    pub fn slack(&self, tube: &ConvexTube, t: f64, y: &[f64]) -> Result<f64> {
        let p = tube.project(t, y)?;
        let out: Vec<f64> = y.iter().zip(&p).map(|(a, b)| a - b).collect();
        let lhs: f64 = y
            .iter()
            .zip(&self.point)
            .zip(&out)
            .map(|((yi, pi), oi)| (yi - pi) * oi)
            .sum();
        Ok(lhs - norm(&out) / self.gamma)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TubeViolation {
    Empty {
        t: f64,
    },
    Unbounded {
        t: f64,
    },
    NonExpansion {
        t: f64,
        t_later: f64,
        point: Vec<f64>,
    },
}

impl std::fmt::Display for TubeViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TubeViolation::Empty { t } => write!(f, "slice at t={t} is empty or degenerate"),
            TubeViolation::Unbounded { t } => write!(f, "slice at t={t} is unbounded"),
            TubeViolation::NonExpansion { t, t_later, point } => write!(
                f,
                "non-expansion violated: y={point:?} lies in D(t'={t_later}) but not in D(t={t})"
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub checked_times: usize,
    pub violations: Vec<TubeViolation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        match self.violations.first() {
            None => Ok(()),
            Some(v) => Err(Error::Config(format!(
                "tube validation failed ({} violations); first: {v}",
                self.violations.len()
            ))),
        }
    }
}

impl ConvexTube {
    pub fn ball(center: Vec<f64>, radius: Poly, horizon: f64) -> Result<Self> {
        if center.is_empty() {
            return Err(Error::Input(
                "ball center must have at least one coordinate".into(),
            ));
        }
        check_horizon(horizon)?;
        Ok(ConvexTube::Ball(BallTube {
            center,
            radius,
            horizon,
        }))
    }

    /// Builds `{y : <a_i, y> < b_i(t)}`. Normals are rescaled to unit length
    /// (offsets scale with them).
    pub fn halfspaces(faces: Vec<(Vec<f64>, Poly)>, horizon: f64) -> Result<Self> {
        check_horizon(horizon)?;
        let dim = faces
            .first()
            .map(|(a, _)| a.len())
            .ok_or_else(|| Error::Input("half-space tube needs at least one face".into()))?;
        if dim == 0 {
            return Err(Error::Input("face normals must be non-empty".into()));
        }
        let mut out = Vec::with_capacity(faces.len());
        for (i, (a, b)) in faces.into_iter().enumerate() {
            if a.len() != dim {
                return Err(Error::Input(format!(
                    "face {i} has dimension {}, expected {dim}",
                    a.len()
                )));
            }
            let len = norm(&a);
            if !(len.is_finite() && len > 0.0) {
                return Err(Error::Input(format!("face {i} has a zero normal")));
            }
            out.push(Face {
                normal: a.iter().map(|v| v / len).collect(),
                offset: b.scaled(1.0 / len),
            });
        }
        Ok(ConvexTube::Halfspace(HalfspaceTube {
            faces: out,
            dim,
            horizon,
        }))
    }

    /// One-dimensional tube `(lo(t), hi(t))`.
    pub fn interval(lo: Poly, hi: Poly, horizon: f64) -> Result<Self> {
        Self::halfspaces(
            vec![(vec![1.0], hi), (vec![-1.0], lo.scaled(-1.0))],
            horizon,
        )
    }

    /// Constant axis-aligned box `(lo_1, hi_1) x ... x (lo_d, hi_d)`.
    pub fn constant_box(lo: &[f64], hi: &[f64], horizon: f64) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::Input("box bounds differ in dimension".into()));
        }
        let d = lo.len();
        let mut faces = Vec::with_capacity(2 * d);
        for k in 0..d {
            let mut e = vec![0.0; d];
            e[k] = 1.0;
            faces.push((e.clone(), Poly::constant(hi[k])));
            e[k] = -1.0;
            faces.push((e, Poly::constant(-lo[k])));
        }
        Self::halfspaces(faces, horizon)
    }

    pub fn dim(&self) -> usize {
        match self {
            ConvexTube::Ball(b) => b.center.len(),
            ConvexTube::Halfspace(h) => h.dim,
        }
    }

    pub fn horizon(&self) -> f64 {
        match self {
            ConvexTube::Ball(b) => b.horizon,
            ConvexTube::Halfspace(h) => h.horizon,
        }
    }

    fn check(&self, t: f64, y: &[f64]) -> Result<()> {
        let horizon = self.horizon();
        if !(t >= -TIME_SLACK && t <= horizon + TIME_SLACK) {
            return Err(Error::Input(format!("time {t} outside [0, {horizon}]")));
        }
        if y.len() != self.dim() {
            return Err(Error::Input(format!(
                "point has dimension {}, tube has dimension {}",
                y.len(),
                self.dim()
            )));
        }
        Ok(())
    }

    /// Strict membership in the open slice `D_t`.
    pub fn contains(&self, t: f64, y: &[f64]) -> Result<bool> {
        self.check(t, y)?;
        Ok(match self {
            ConvexTube::Ball(b) => dist(y, &b.center) < b.radius.eval(t),
            ConvexTube::Halfspace(h) => {
                h.faces.iter().all(|f| dot(&f.normal, y) < f.offset.eval(t))
            }
        })
    }

    /// Membership in the closed slice, with tolerance [`CLOSURE_TOL`].
    pub fn contains_closure(&self, t: f64, y: &[f64]) -> Result<bool> {
        self.check(t, y)?;
        Ok(self.in_closure_unchecked(t, y))
    }

    fn in_closure_unchecked(&self, t: f64, y: &[f64]) -> bool {
        match self {
            ConvexTube::Ball(b) => dist(y, &b.center) <= b.radius.eval(t) + CLOSURE_TOL,
            ConvexTube::Halfspace(h) => h
                .faces
                .iter()
                .all(|f| dot(&f.normal, y) <= f.offset.eval(t) + CLOSURE_TOL),
        }
    }

    /// Euclidean distance from `y` to `D_t`; zero on the closure.
    pub fn distance(&self, t: f64, y: &[f64]) -> Result<f64> {
        self.check(t, y)?;
        match self {
            ConvexTube::Ball(b) => Ok((dist(y, &b.center) - b.radius.eval(t)).max(0.0)),
            ConvexTube::Halfspace(_) => {
                let mut small = [0.0; 8];
                let mut big = Vec::new();
                let p = if y.len() <= small.len() {
                    &mut small[..y.len()]
                } else {
                    big.resize(y.len(), 0.0);
                    &mut big[..]
                };
                self.project_unchecked(t, y, p)?;
                Ok(dist(y, p))
            }
        }
    }

    /// Distance from `y` to the boundary `∂D_t` (depth for interior points).
    pub fn boundary_distance(&self, t: f64, y: &[f64]) -> Result<f64> {
        self.check(t, y)?;
        match self {
            ConvexTube::Ball(b) => Ok((dist(y, &b.center) - b.radius.eval(t)).abs()),
            ConvexTube::Halfspace(h) => {
                if self.in_closure_unchecked(t, y) {
                    Ok(h.faces
                        .iter()
                        .map(|f| f.offset.eval(t) - dot(&f.normal, y))
                        .fold(f64::INFINITY, f64::min)
                        .max(0.0))
                } else {
                    self.distance(t, y)
                }
            }
        }
    }

    /// Euclidean projection onto the closure of `D_t`; identity on the closure.
    pub fn project(&self, t: f64, y: &[f64]) -> Result<Vec<f64>> {
        self.check(t, y)?;
        let mut out = vec![0.0; y.len()];
        self.project_unchecked(t, y, &mut out)?;
        Ok(out)
    }

    /// Allocation-free [`project`](Self::project).
    pub fn project_into(&self, t: f64, y: &[f64], out: &mut [f64]) -> Result<()> {
        self.check(t, y)?;
        if out.len() != y.len() {
            return Err(Error::Input("output buffer has the wrong dimension".into()));
        }
        self.project_unchecked(t, y, out)
    }

    fn project_unchecked(&self, t: f64, y: &[f64], out: &mut [f64]) -> Result<()> {
        match self {
            ConvexTube::Ball(b) => {
                let r = b.radius.eval(t);
                let d = dist(y, &b.center);
                if d <= r {
                    out.copy_from_slice(y);
                } else {
                    let s = r / d;
                    for ((o, yi), ci) in out.iter_mut().zip(y).zip(&b.center) {
                        *o = ci + s * (yi - ci);
                    }
                }
                Ok(())
            }
            ConvexTube::Halfspace(h) => h.project(t, y, out),
        }
    }

    /// Unit vector `-(y - π(t,y)) / |y - π(t,y)|`, an inward normal at `π(t,y)`.
    pub fn inward_unit_from_outside(&self, t: f64, y: &[f64]) -> Result<Vec<f64>> {
        let p = self.project(t, y)?;
        let gap = dist(y, &p);
        if gap <= CLOSURE_TOL || self.in_closure_unchecked(t, y) {
            return Err(Error::Input(format!(
                "point {y:?} lies in the closure of D({t}); no outside normal"
            )));
        }
        Ok(p.iter().zip(y).map(|(pi, yi)| (pi - yi) / gap).collect())
    }

    /// Inward normal cone generators at a boundary point `x`.
    pub fn normal_cone(&self, t: f64, x: &[f64]) -> Result<NormalConeSample> {
        self.check(t, x)?;
        const ACTIVE_TOL: f64 = 1e-9;
        let generators = match self {
            ConvexTube::Ball(b) => {
                let r = b.radius.eval(t);
                let d = dist(x, &b.center);
                if (d - r).abs() > ACTIVE_TOL * r.max(1.0) || d == 0.0 {
                    return Err(Error::Input(format!(
                        "{x:?} is not on the boundary of D({t})"
                    )));
                }
                vec![b.center.iter().zip(x).map(|(c, xi)| (c - xi) / d).collect()]
            }
            ConvexTube::Halfspace(h) => {
                // projections from Dykstra may sit a hair outside a face
                if h.faces
                    .iter()
                    .any(|f| dot(&f.normal, x) - f.offset.eval(t) > ACTIVE_TOL)
                {
                    return Err(Error::Input(format!("{x:?} lies outside D({t})")));
                }
                let gens: Vec<Vec<f64>> = h
                    .faces
                    .iter()
                    .filter(|f| (f.offset.eval(t) - dot(&f.normal, x)).abs() <= ACTIVE_TOL)
                    .map(|f| f.normal.iter().map(|a| -a).collect())
                    .collect();
                if gens.is_empty() {
                    return Err(Error::Input(format!(
                        "{x:?} is not on the boundary of D({t})"
                    )));
                }
                gens
            }
        };
        Ok(NormalConeSample {
            base: x.to_vec(),
            generators,
        })
    }

    /// Chebyshev center and inradius of `D_t`.
    pub fn chebyshev(&self, t: f64) -> Result<(Vec<f64>, f64)> {
        self.check(t, &vec![0.0; self.dim()])?;
        match self {
            ConvexTube::Ball(b) => Ok((b.center.clone(), b.radius.eval(t))),
            ConvexTube::Halfspace(h) => h.chebyshev(t),
        }
    }

    /// Vertices of the closed slice (empty for balls).
    pub fn vertices(&self, t: f64) -> Vec<Vec<f64>> {
        match self {
            ConvexTube::Ball(_) => Vec::new(),
            ConvexTube::Halfspace(h) => h.vertices(t, false),
        }
    }

    pub fn diameter(&self, t: f64) -> f64 {
        match self {
            ConvexTube::Ball(b) => 2.0 * b.radius.eval(t).max(0.0),
            ConvexTube::Halfspace(h) => {
                let v = h.vertices(t, false);
                let mut best = 0.0f64;
                for i in 0..v.len() {
                    for j in i + 1..v.len() {
                        best = best.max(dist(&v[i], &v[j]));
                    }
                }
                best
            }
        }
    }

    /// Radius of a ball around the origin containing the closed slice.
    pub fn bounding_radius(&self, t: f64) -> f64 {
        match self {
            ConvexTube::Ball(b) => norm(&b.center) + b.radius.eval(t).max(0.0),
            ConvexTube::Halfspace(h) => h
                .vertices(t, false)
                .iter()
                .map(|v| norm(v))
                .fold(0.0, f64::max),
        }
    }

    /// Deepest point of `D_T` and a valid constant for the anchor inequality.
    ///
    /// For `y` outside `D_t`, with unit outer normal `ν` at `π(t,y)`,
    /// `<y - P, ν> >= <π - P, ν> >= m` because the ball `B(P, m)` sits inside
    /// `D_T ⊆ D_t`. Hence `gamma = max(1, 1/m, diam(D_0)/m)` suffices.
    pub fn interior_anchor(&self) -> Result<InteriorAnchor> {
        let horizon = self.horizon();
        let (point, margin) = self.chebyshev(horizon)?;
        if !(margin > MIN_INRADIUS) {
            return Err(Error::Domain(format!(
                "terminal slice is degenerate (inradius {margin:.3e})"
            )));
        }
        let diam = self.diameter(0.0);
        let gamma = 1f64.max(1.0 / margin).max(diam / margin);
        Ok(InteriorAnchor {
            point,
            margin,
            gamma,
        })
    }

    /// Sampled estimate of the time modulus
    /// `l(r) = sup_t sup_{z ∈ cl D_{t-r}} d(z, D_{t+r})`.
    pub fn modulus(&self, r: f64, samples: usize) -> Result<f64> {
        let horizon = self.horizon();
        if !(r > 0.0 && r <= horizon) {
            return Err(Error::Input(format!("gap {r} outside (0, {horizon}]")));
        }
        let samples = samples.max(1);
        let pairs: Vec<(f64, f64)> = if 2.0 * r <= horizon {
            let n_t = samples.max(2);
            (0..n_t)
                .map(|i| {
                    let mid = r + (horizon - 2.0 * r) * i as f64 / (n_t - 1) as f64;
                    (mid - r, mid + r)
                })
                .collect()
        } else {
            vec![(0.0, horizon)]
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0x6d6f64);
        let mut best = 0.0f64;
        for (early, late) in pairs {
            let candidates = match self {
                ConvexTube::Ball(b) => {
                    let radius = b.radius.eval(early).max(0.0);
                    (0..samples)
                        .map(|_| {
                            let u = random_unit(b.center.len(), &mut rng);
                            b.center
                                .iter()
                                .zip(&u)
                                .map(|(c, ui)| c + radius * ui)
                                .collect::<Vec<f64>>()
                        })
                        .collect::<Vec<_>>()
                }
                // a convex function attains its max over a polytope at a vertex
                ConvexTube::Halfspace(h) => h.vertices(early, false),
            };
            for z in candidates {
                best = best.max(self.distance(late, &z)?);
            }
        }
        Ok(best)
    }

    /// Checks non-emptiness, boundedness and non-expansion on a time grid.
    pub fn validate(&self, grid: &TimeGrid, samples: usize) -> ValidationReport {
        let mut violations = Vec::new();
        let times: Vec<f64> = grid.times().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0x76616c);
        for &t in &times {
            match self {
                ConvexTube::Ball(b) => {
                    if !(b.radius.eval(t) > MIN_INRADIUS) {
                        violations.push(TubeViolation::Empty { t });
                    }
                }
                ConvexTube::Halfspace(h) => {
                    if h.is_unbounded(t) {
                        violations.push(TubeViolation::Unbounded { t });
                    } else if !matches!(h.chebyshev(t), Ok((_, m)) if m > MIN_INRADIUS) {
                        violations.push(TubeViolation::Empty { t });
                    }
                }
            }
        }
        if !violations.is_empty() {
            return ValidationReport {
                checked_times: times.len(),
                violations,
            };
        }
        for w in times.windows(2) {
            let (t, t_later) = (w[0], w[1]);
            for y in self.probe_points(t_later, samples, &mut rng) {
                if !self.in_closure_unchecked(t, &y) {
                    violations.push(TubeViolation::NonExpansion {
                        t,
                        t_later,
                        point: y,
                    });
                    break;
                }
            }
        }
        ValidationReport {
            checked_times: times.len(),
            violations,
        }
    }

    /// Points of `D_t` concentrated near the boundary, used to probe inclusions.
    fn probe_points(&self, t: f64, samples: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        const PULL: f64 = 1e-9;
        match self {
            ConvexTube::Ball(b) => {
                let r = b.radius.eval(t) * (1.0 - PULL);
                (0..samples.max(1))
                    .map(|_| {
                        let u = random_unit(b.center.len(), rng);
                        b.center.iter().zip(&u).map(|(c, ui)| c + r * ui).collect()
                    })
                    .collect()
            }
            ConvexTube::Halfspace(h) => {
                let Ok((center, _)) = h.chebyshev(t) else {
                    return Vec::new();
                };
                let mut pts: Vec<Vec<f64>> = h
                    .vertices(t, false)
                    .into_iter()
                    .map(|v| {
                        v.iter()
                            .zip(&center)
                            .map(|(vi, ci)| vi + PULL * (ci - vi))
                            .collect()
                    })
                    .collect();
                for _ in 0..samples {
                    pts.push(self.sample_closure_point(t, rng));
                }
                pts
            }
        }
    }

    /// Random point of the closed slice (uniform for balls, Dirichlet mixture
    /// of vertices for polytopes).
    pub fn sample_closure_point<R: Rng + ?Sized>(&self, t: f64, rng: &mut R) -> Vec<f64> {
        match self {
            ConvexTube::Ball(b) => {
                let d = b.center.len();
                let u = random_unit(d, rng);
                let rho = b.radius.eval(t).max(0.0) * rng.random::<f64>().powf(1.0 / d as f64);
                b.center
                    .iter()
                    .zip(&u)
                    .map(|(c, ui)| c + rho * ui)
                    .collect()
            }
            ConvexTube::Halfspace(h) => {
                let verts = h.vertices(t, false);
                if verts.is_empty() {
                    return vec![0.0; h.dim];
                }
                let w: Vec<f64> = (0..verts.len()).map(|_| Exp1.sample(rng)).collect();
                let total: f64 = w.iter().sum();
                let mut p = vec![0.0; h.dim];
                for (v, wi) in verts.iter().zip(&w) {
                    for (pk, vk) in p.iter_mut().zip(v) {
                        *pk += wi / total * vk;
                    }
                }
                p
            }
        }
    }
}

impl HalfspaceTube {
    pub fn faces(&self) -> &[Face] {
        &self.faces
    }

    fn offsets(&self, t: f64) -> Vec<f64> {
        self.faces.iter().map(|f| f.offset.eval(t)).collect()
    }

    fn project(&self, t: f64, y: &[f64], out: &mut [f64]) -> Result<()> {
        if self.dim == 1 {
            let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
            for f in &self.faces {
                let (a, bi) = (f.normal[0], f.offset.eval(t));
                if a > 0.0 {
                    hi = hi.min(bi / a);
                } else {
                    lo = lo.max(bi / a);
                }
            }
            out[0] = y[0].max(lo).min(hi);
            return Ok(());
        }
        let (mut violated, mut first) = (0usize, 0usize);
        for (i, f) in self.faces.iter().enumerate() {
            if dot(&f.normal, y) > f.offset.eval(t) {
                if violated == 0 {
                    first = i;
                }
                violated += 1;
            }
        }
        if violated == 0 {
            out.copy_from_slice(y);
            return Ok(());
        }
        if violated == 1 {
            // the projection onto a single face is exact when it lands inside
            let face = &self.faces[first];
            let excess = dot(&face.normal, y) - face.offset.eval(t);
            for ((o, yk), ak) in out.iter_mut().zip(y).zip(&face.normal) {
                *o = yk - excess * ak;
            }
            if self
                .faces
                .iter()
                .all(|f| dot(&f.normal, out) <= f.offset.eval(t) + CLOSURE_TOL)
            {
                return Ok(());
            }
        }
        self.dykstra(&self.offsets(t), y, out)
    }

    fn dykstra(&self, b: &[f64], y: &[f64], out: &mut [f64]) -> Result<()> {
        let d = self.dim;
        let k = self.faces.len();
        let mut x = y.to_vec();
        let mut corrections = vec![0.0; k * d];
        let mut z = vec![0.0; d];
        let mut start = vec![0.0; d];
        let mut change = f64::INFINITY;
        for _ in 0..DYKSTRA_MAX_ITER {
            start.copy_from_slice(&x);
            for (i, face) in self.faces.iter().enumerate() {
                let p = &mut corrections[i * d..(i + 1) * d];
                for ((zk, xk), pk) in z.iter_mut().zip(&x).zip(p.iter()) {
                    *zk = xk + pk;
                }
                let excess = (dot(&face.normal, &z) - b[i]).max(0.0);
                for (((xk, zk), pk), ak) in x.iter_mut().zip(&z).zip(p.iter_mut()).zip(&face.normal)
                {
                    *xk = zk - excess * ak;
                    *pk = zk - *xk;
                }
            }
            change = dist(&x, &start);
            if change < DYKSTRA_TOL {
                out.copy_from_slice(&x);
                return Ok(());
            }
        }
        Err(Error::ProjectionNotConverged {
            iterations: DYKSTRA_MAX_ITER,
            residual: change,
        })
    }

    fn vertices(&self, t: f64, with_box: bool) -> Vec<Vec<f64>> {
        let d = self.dim;
        let mut rows: Vec<(Vec<f64>, f64)> = self
            .faces
            .iter()
            .map(|f| (f.normal.clone(), f.offset.eval(t)))
            .collect();
        if with_box {
            for k in 0..d {
                let mut e = vec![0.0; d];
                e[k] = 1.0;
                rows.push((e.clone(), BOUNDING_BOX));
                e[k] = -1.0;
                rows.push((e, BOUNDING_BOX));
            }
        }
        let mut verts: Vec<Vec<f64>> = Vec::new();
        let mut m = vec![0.0; d * d];
        let mut rhs = vec![0.0; d];
        for_each_combination(rows.len(), d, |idx| {
            for (r, &i) in idx.iter().enumerate() {
                m[r * d..(r + 1) * d].copy_from_slice(&rows[i].0);
                rhs[r] = rows[i].1;
            }
            let Some(v) = solve_square(&m, &rhs) else {
                return;
            };
            let feasible = rows.iter().all(|(a, bi)| dot(a, &v) <= bi + VERTEX_TOL);
            if feasible && !verts.iter().any(|w| dist(w, &v) < VERTEX_TOL) {
                verts.push(v);
            }
        });
        verts
    }

    fn is_unbounded(&self, t: f64) -> bool {
        let limit = BOUNDING_BOX * (1.0 - 1e-9);
        self.vertices(t, true)
            .iter()
            .any(|v| v.iter().any(|c| c.abs() >= limit))
    }

    /// Inradius LP `max s : <a_i, p> + s <= b_i`, solved by vertex enumeration.
    /// Ties are broken by averaging the optimal vertices.
    fn chebyshev(&self, t: f64) -> Result<(Vec<f64>, f64)> {
        let d = self.dim;
        let n = d + 1;
        let rows: Vec<(Vec<f64>, f64)> = self
            .faces
            .iter()
            .map(|f| {
                let mut a = f.normal.clone();
                a.push(1.0);
                (a, f.offset.eval(t))
            })
            .collect();
        let mut best: Vec<Vec<f64>> = Vec::new();
        let mut best_s = f64::NEG_INFINITY;
        let mut m = vec![0.0; n * n];
        let mut rhs = vec![0.0; n];
        for_each_combination(rows.len(), n, |idx| {
            for (r, &i) in idx.iter().enumerate() {
                m[r * n..(r + 1) * n].copy_from_slice(&rows[i].0);
                rhs[r] = rows[i].1;
            }
            let Some(v) = solve_square(&m, &rhs) else {
                return;
            };
            if !rows.iter().all(|(a, bi)| dot(a, &v) <= bi + VERTEX_TOL) {
                return;
            }
            let s = v[d];
            if s > best_s + 1e-12 {
                best_s = s;
                best.clear();
                best.push(v);
            } else if (s - best_s).abs() <= 1e-12 {
                best.push(v);
            }
        });
        if best.is_empty() {
            return Err(Error::Domain(format!(
                "slice at t={t} is empty or unbounded (inradius program has no vertex)"
            )));
        }
        let mut center = vec![0.0; d];
        for v in &best {
            for (c, vk) in center.iter_mut().zip(v) {
                *c += vk / best.len() as f64;
            }
        }
        Ok((center, best_s))
    }
}

fn check_horizon(horizon: f64) -> Result<()> {
    if horizon.is_finite() && horizon > 0.0 {
        Ok(())
    } else {
        Err(Error::Input(format!(
            "horizon must be positive, got {horizon}"
        )))
    }
}

pub(crate) fn random_unit<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let n = norm(&v);
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}
