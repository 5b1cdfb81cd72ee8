//! Auxiliary norms, bump perturbations, zero enumeration, the signed degree,
//! its invariance checks and integration of forms over solution sets.
//!
//! Properness is a contract of the model: zeros of every admissible
//! perturbation must stay inside the declared window, and Newton runs that
//! leave it while converging raise [`DegreeError::WindowEscape`].

use std::num::NonZeroUsize;
use std::sync::Arc;

use gauss_quad::GaussLegendre;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

use crate::graded_space::GradedSpace;
use crate::linalg::{self, hcat, RANK_CUTOFF};
use crate::orientation::{kernel_orientation, sign_of_zero, OrientationError, Reference};
use crate::rng::{self, Stream, HALTON_BASES};
use crate::section::{DynSection, Section};
use crate::solution::{ChartDomain, GoodParametrization, SolutionAtlas, SolutionError};

/// Zeros closer than this are identified.
pub const DEDUPE_RADIUS: f64 = 1e-6;
/// Residual `|f + s|` required of an accepted zero.
pub const ZERO_TOL: f64 = 1e-10;
/// A zero is regular when `σ_min > REGULARITY_RATIO · max(σ_max, 1)`.
pub const REGULARITY_RATIO: f64 = 1e-6;
pub const MAX_RETRIES: usize = 100;
const NEWTON_ITERS: usize = 100;
/// Fraction of a bump's radius on which it is identically one.
pub const PLATEAU: f64 = 0.5;
/// Points at which the sup of `N(s)` is sampled.
const NORM_SAMPLES: usize = 256;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DegreeError {
    #[error("N(s) reaches {norm} against the bound {budget}")]
    BudgetExceeded { norm: f64, budget: f64 },
    #[error("h₀ is not in the fiber ρ(x₀)F (defect {defect:e})")]
    IncompatibleFiber { defect: f64 },
    #[error("Newton run from {start:?} left the window at {exit:?} with residual {residual:e} still falling")]
    WindowEscape { start: Vec<f64>, exit: Vec<f64>, residual: f64 },
    #[error("no regular perturbation after {attempts} attempts; zero {zero:?} has gap {gap:e}")]
    RetryExhausted { zero: Vec<f64>, gap: f64, attempts: usize },
    #[error("degree needs index 0 but the section maps R^{domain} to R^{fiber}")]
    IndexMismatch { domain: usize, fiber: usize },
    #[error("degree changed: {}", .0.violations.join("; "))]
    InvarianceViolation(Box<InvarianceReport>),
    #[error("forms of degree {degree} are not supported")]
    DimensionUnsupported { degree: usize },
    #[error("point {point:?} of the solution set lies in no chart")]
    AtlasIncomplete { point: Vec<f64> },
    #[error("window is malformed or misses the seed {seed:?}")]
    InvalidWindow { seed: Vec<f64> },
    #[error("boundary charts are not integrated")]
    UnsupportedDomain,
    #[error(transparent)]
    Orientation(#[from] OrientationError),
    #[error(transparent)]
    Solution(#[from] SolutionError),
}

/// `6s⁵ − 15s⁴ + 10s³` clamped to `[0, 1]`.
pub fn smootherstep(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    s * s * s * (s * (6.0 * s - 15.0) + 10.0)
}

fn smootherstep_deriv(s: f64) -> f64 {
    if !(0.0..=1.0).contains(&s) {
        return 0.0;
    }
    30.0 * s * s * (s - 1.0) * (s - 1.0)
}

/// `1` on `[0, PLATEAU]`, `0` on `[1, ∞)`, polynomial in between.
pub fn plateau(r: f64) -> f64 {
    smootherstep((1.0 - r) / (1.0 - PLATEAU))
}

fn plateau_deriv(r: f64) -> f64 {
    -smootherstep_deriv((1.0 - r) / (1.0 - PLATEAU)) / (1.0 - PLATEAU)
}

/// `C^∞` step from `0` at `s ≤ 0` to `1` at `s ≥ 1`.
pub fn smooth_step(s: f64) -> f64 {
    if s <= 0.0 {
        return 0.0;
    }
    if s >= 1.0 {
        return 1.0;
    }
    let a = (-1.0 / s).exp();
    let b = (-1.0 / (1.0 - s)).exp();
    a / (a + b)
}

/// Axis-aligned box in chart coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub lo: DVector<f64>,
    pub hi: DVector<f64>,
}

impl Window {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        Self { lo: DVector::from_vec(lo), hi: DVector::from_vec(hi) }
    }

    pub fn interval(a: f64, b: f64) -> Self {
        Self::new(vec![a], vec![b])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn is_valid(&self) -> bool {
        self.lo.len() == self.hi.len() && self.lo.iter().zip(self.hi.iter()).all(|(a, b)| a < b)
    }

    pub fn min_side(&self) -> f64 {
        (&self.hi - &self.lo).min()
    }

    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        x.len() == self.dim() && (0..self.dim()).all(|i| x[i] >= self.lo[i] - tol && x[i] <= self.hi[i] + tol)
    }

    /// `lo + u ⊙ (hi − lo)` for `u ∈ [0,1]^d`.
    pub fn point(&self, unit: &[f64]) -> DVector<f64> {
        DVector::from_fn(self.dim(), |i, _| self.lo[i] + unit[i] * (self.hi[i] - self.lo[i]))
    }

    /// Halton points `offset + 1 ..= offset + count`.
    pub fn halton(&self, count: usize, offset: u64) -> Vec<DVector<f64>> {
        let d = self.dim();
        let mut extra = rng::stream(offset, 0xd1);
        (0..count as u64)
            .map(|i| {
                let unit: Vec<f64> = (0..d)
                    .map(|j| {
                        if j < HALTON_BASES.len() {
                            rng::halton(offset + i + 1, HALTON_BASES[j])
                        } else {
                            rng::uniform(&mut extra, 0.0, 1.0)
                        }
                    })
                    .collect();
                self.point(&unit)
            })
            .collect()
    }
}

pub type Modulation = Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;

/// `N_x(y) = m(x) · |y|_1`, the level-1 weighted norm of the fiber vector
/// times an optional positive modulation of the base point.
#[derive(Clone)]
pub struct AuxiliaryNorm {
    pub fiber: Arc<GradedSpace>,
    pub level: usize,
    modulation: Option<Modulation>,
}

impl std::fmt::Debug for AuxiliaryNorm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AuxiliaryNorm").field("fiber", &self.fiber).field("level", &self.level).finish()
    }
}

impl AuxiliaryNorm {
    pub fn new(fiber: Arc<GradedSpace>) -> Self {
        let level = 1.min(fiber.levels().saturating_sub(1));
        Self { fiber, level, modulation: None }
    }

    /// Unit weights on `R^k`.
    pub fn flat(k: usize) -> Self {
        let space = GradedSpace::with_weights(vec![1.0; k], 2, 0).expect("valid space");
        Self::new(Arc::new(space))
    }

    pub fn with_modulation<M>(mut self, m: M) -> Self
    where
        M: Fn(&DVector<f64>) -> f64 + Send + Sync + 'static,
    {
        self.modulation = Some(Arc::new(m));
        self
    }

    /// Modulation `Σ_i w_i(x)·scale_i` for a partition of unity subordinate to
    /// the balls `(center, radius)`; scale `1` away from every ball.
    pub fn partitioned(self, table: Vec<(DVector<f64>, f64, f64)>) -> Self {
        self.with_modulation(move |x| {
            let mut total = 0.0;
            let mut weighted = 0.0;
            for (c, r, scale) in &table {
                let w = 1.0 - smooth_step(((x - c).norm() / r - PLATEAU) / (1.0 - PLATEAU));
                total += w;
                weighted += w * scale;
            }
            if total >= 1.0 {
                weighted / total
            } else {
                weighted + (1.0 - total)
            }
        })
    }

    pub fn eval(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        let m = self.modulation.as_ref().map_or(1.0, |m| m(x));
        m * self.fiber.norm_unchecked(y.as_slice(), self.level)
    }
}

pub type FiberProjection = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;

#[derive(Debug, Clone, PartialEq)]
pub struct Ball {
    pub center: DVector<f64>,
    pub radius: f64,
}

/// `s(x) = c · plateau(|x − center| / radius) · ρ_x h`, normalized so that
/// `s(x₀) = h₀`.
#[derive(Clone)]
pub struct BumpSection {
    pub region: Ball,
    pub h: DVector<f64>,
    scale: f64,
    projection: Option<FiberProjection>,
}

impl std::fmt::Debug for BumpSection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BumpSection").field("region", &self.region).field("h", &self.h).field("scale", &self.scale).finish()
    }
}

impl BumpSection {
    fn unit(region: Ball, h: DVector<f64>, projection: Option<FiberProjection>) -> Self {
        Self { region, h, scale: 1.0, projection }
    }

    fn profile(&self, x: &DVector<f64>) -> f64 {
        plateau((x - &self.region.center).norm() / self.region.radius)
    }

    fn fiber_value(&self, x: &DVector<f64>) -> DVector<f64> {
        match &self.projection {
            Some(p) => p(x) * &self.h,
            None => self.h.clone(),
        }
    }
}

impl Section for BumpSection {
    fn domain_dim(&self) -> usize {
        self.region.center.len()
    }

    fn fiber_dim(&self) -> usize {
        self.h.len()
    }

    fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        let b = self.profile(x);
        if b == 0.0 {
            return DVector::zeros(self.h.len());
        }
        self.fiber_value(x) * (self.scale * b)
    }

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        if self.projection.is_some() {
            return linalg::jacobian_fd(|y| self.eval(y), x);
        }
        let d = x - &self.region.center;
        let r = d.norm();
        if r == 0.0 || r >= self.region.radius {
            return DMatrix::zeros(self.h.len(), x.len());
        }
        let grad = &d * (self.scale * plateau_deriv(r / self.region.radius) / (r * self.region.radius));
        &self.h * grad.transpose()
    }
}

/// Deterministic samples of a ball: its center and scaled Halton points.
fn ball_samples(region: &Ball, count: usize) -> Vec<DVector<f64>> {
    let d = region.center.len();
    let cube = Window::new(vec![-1.0; d], vec![1.0; d]);
    let mut out = vec![region.center.clone()];
    out.extend(
        cube.halton(count, 0)
            .into_iter()
            .filter(|u| u.norm() < 1.0)
            .map(|u| &region.center + u * region.radius),
    );
    out
}

/// Bump section with `s(x₀) = h₀`, support in `region` and `N(s) < eps` on
/// samples of the region.
pub fn make_bump_section(
    x0: &DVector<f64>,
    h0: &DVector<f64>,
    region: Ball,
    eps: f64,
    norm: &AuxiliaryNorm,
    projection: Option<FiberProjection>,
) -> Result<BumpSection, DegreeError> {
    let n0 = norm.eval(x0, h0);
    if !(n0 < eps) {
        return Err(DegreeError::BudgetExceeded { norm: n0, budget: eps });
    }
    let mut bump = BumpSection::unit(region, h0.clone(), projection);
    let defect = (bump.fiber_value(x0) - h0).amax();
    if defect > 1e-12 * (1.0 + h0.amax()) {
        return Err(DegreeError::IncompatibleFiber { defect });
    }
    let b0 = bump.profile(x0);
    if b0 <= 0.0 {
        return Err(DegreeError::InvalidWindow { seed: x0.as_slice().to_vec() });
    }
    bump.scale = 1.0 / b0;
    let sup = ball_samples(&bump.region, NORM_SAMPLES)
        .iter()
        .map(|y| norm.eval(y, &bump.eval(y)))
        .fold(0.0, f64::max);
    if !(sup < eps) {
        return Err(DegreeError::BudgetExceeded { norm: sup, budget: eps });
    }
    Ok(bump)
}

/// Finite combination `Σ λ_j s_j` of bump sections.
#[derive(Debug, Clone)]
pub struct ScPlusSection {
    pub domain: usize,
    pub fiber: usize,
    pub terms: Vec<(f64, Arc<BumpSection>)>,
}

impl ScPlusSection {
    pub fn zero(domain: usize, fiber: usize) -> Self {
        Self { domain, fiber, terms: Vec::new() }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.iter().all(|(l, _)| *l == 0.0)
    }

    pub fn coefficients(&self) -> Vec<f64> {
        self.terms.iter().map(|(l, _)| *l).collect()
    }

    /// `(1 − t)·a + t·b`.
    pub fn interpolate(a: &Self, b: &Self, t: f64) -> Self {
        let mut terms: Vec<(f64, Arc<BumpSection>)> = a.terms.iter().map(|(l, s)| ((1.0 - t) * l, s.clone())).collect();
        terms.extend(b.terms.iter().map(|(l, s)| (t * l, s.clone())));
        Self { domain: a.domain, fiber: a.fiber, terms }
    }

    pub fn sup_norm(&self, norm: &AuxiliaryNorm, points: &[DVector<f64>]) -> f64 {
        points.iter().map(|y| norm.eval(y, &self.eval(y))).fold(0.0, f64::max)
    }
}

impl Section for ScPlusSection {
    fn domain_dim(&self) -> usize {
        self.domain
    }

    fn fiber_dim(&self) -> usize {
        self.fiber
    }

    fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        self.terms.iter().fold(DVector::zeros(self.fiber), |acc, (l, s)| if *l == 0.0 { acc } else { acc + s.eval(x) * *l })
    }

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        self.terms
            .iter()
            .fold(DMatrix::zeros(self.fiber, self.domain), |acc, (l, s)| if *l == 0.0 { acc } else { acc + s.jacobian(x) * *l })
    }
}

/// `f + s`.
#[derive(Clone)]
pub struct Perturbed {
    pub f: DynSection,
    pub s: ScPlusSection,
}

impl Section for Perturbed {
    fn domain_dim(&self) -> usize {
        self.f.domain_dim()
    }

    fn fiber_dim(&self) -> usize {
        self.f.fiber_dim()
    }

    fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        if self.s.terms.is_empty() {
            self.f.eval(x)
        } else {
            self.f.eval(x) + self.s.eval(x)
        }
    }

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        if self.s.terms.is_empty() {
            self.f.jacobian(x)
        } else {
            self.f.jacobian(x) + self.s.jacobian(x)
        }
    }

    fn quadrant_rank(&self) -> usize {
        self.f.quadrant_rank()
    }
}

/// A section with the data needed to perturb it and count its zeros.
#[derive(Clone)]
pub struct PerturbationProblem {
    pub section: DynSection,
    pub window: Window,
    pub norm: AuxiliaryNorm,
    /// Bound on `N(s)`.
    pub budget: f64,
    pub seeds: Vec<DVector<f64>>,
    /// Quasi-random Newton starts in addition to the seeds.
    pub grid: usize,
    pub bump_radius: f64,
    /// Bump centers spread over the window in addition to the zeros of `f`.
    pub bump_centers: usize,
    pub projection: Option<FiberProjection>,
    pub rng_seed: u64,
}

impl PerturbationProblem {
    pub fn new(section: DynSection, window: Window) -> Self {
        let norm = AuxiliaryNorm::flat(section.fiber_dim());
        let bump_radius = 0.5 * window.min_side();
        Self {
            section,
            window,
            norm,
            budget: 1.0,
            seeds: Vec::new(),
            grid: 48,
            bump_radius,
            bump_centers: 4,
            projection: None,
            rng_seed: rng::DEFAULT_SEED,
        }
    }

    pub fn with_budget(mut self, budget: f64) -> Self {
        self.budget = budget;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng_seed = seed;
        self
    }

    pub fn with_seeds(mut self, seeds: Vec<DVector<f64>>) -> Self {
        self.seeds = seeds;
        self
    }

    pub fn with_norm(mut self, norm: AuxiliaryNorm) -> Self {
        self.norm = norm;
        self
    }

    pub fn with_grid(mut self, grid: usize) -> Self {
        self.grid = grid;
        self
    }

    pub fn with_bump_radius(mut self, r: f64) -> Self {
        self.bump_radius = r;
        self
    }

    pub fn with_projection(mut self, p: FiberProjection) -> Self {
        self.projection = Some(p);
        self
    }

    pub fn with_section(&self, section: DynSection) -> Self {
        Self { section, ..self.clone() }
    }

    fn validate(&self) -> Result<(), DegreeError> {
        if !self.window.is_valid() || self.window.dim() != self.section.domain_dim() {
            return Err(DegreeError::InvalidWindow { seed: Vec::new() });
        }
        if let Some(s) = self.seeds.iter().find(|s| !self.window.contains(s, 0.0)) {
            return Err(DegreeError::InvalidWindow { seed: s.as_slice().to_vec() });
        }
        Ok(())
    }

    fn starts(&self) -> Vec<DVector<f64>> {
        let mut out = self.seeds.clone();
        out.extend(self.window.halton(self.grid, 0));
        out
    }

    fn margin(&self, x: &DVector<f64>) -> f64 {
        1e-9 * (1.0 + x.amax())
    }
}

/// A polished zero and its linearization.
#[derive(Debug, Clone)]
pub struct Zero {
    pub x: DVector<f64>,
    pub residual: f64,
    pub jacobian: DMatrix<f64>,
    pub singular_values: Vec<f64>,
}

impl Zero {
    fn new<S: Section + ?Sized>(g: &S, x: DVector<f64>) -> Self {
        let residual = g.eval(&x).amax();
        let jacobian = g.jacobian(&x);
        let singular_values = linalg::singular_values(&jacobian);
        Self { x, residual, jacobian, singular_values }
    }

    /// `σ_min / max(σ_max, 1)`, or `0` when the linearization is not onto.
    pub fn gap(&self) -> f64 {
        let m = self.jacobian.nrows();
        if m == 0 {
            return f64::INFINITY;
        }
        if self.singular_values.len() < m {
            return 0.0;
        }
        self.singular_values[m - 1] / self.singular_values[0].max(1.0)
    }

    pub fn is_regular(&self) -> bool {
        self.gap() > REGULARITY_RATIO
    }
}

/// The system `(g, x_face)` whose zeros are zeros of `g` on a face.
struct FaceSystem<'a, S: Section + ?Sized> {
    g: &'a S,
    face: Vec<usize>,
}

impl<S: Section + ?Sized> Section for FaceSystem<'_, S> {
    fn domain_dim(&self) -> usize {
        self.g.domain_dim()
    }

    fn fiber_dim(&self) -> usize {
        self.g.fiber_dim() + self.face.len()
    }

    fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        let v = self.g.eval(x);
        DVector::from_iterator(self.fiber_dim(), v.iter().copied().chain(self.face.iter().map(|&i| x[i])))
    }

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let j = self.g.jacobian(x);
        let mut rows = DMatrix::zeros(self.face.len(), x.len());
        for (r, &i) in self.face.iter().enumerate() {
            rows[(r, i)] = 1.0;
        }
        linalg::vcat(&j, &rows)
    }
}

enum NewtonOutcome {
    Converged(DVector<f64>),
    Failed,
}

/// Damped Gauss–Newton with backtracking, clipped to the quadrant, run until
/// the residual stops decreasing.
fn newton<S: Section + ?Sized>(
    g: &S,
    start: &DVector<f64>,
    pp: &PerturbationProblem,
    quadrant_rank: usize,
) -> Result<NewtonOutcome, DegreeError> {
    let clip = |x: &mut DVector<f64>| {
        for i in 0..quadrant_rank.min(x.len()) {
            x[i] = x[i].max(0.0);
        }
    };
    let mut x = start.clone();
    clip(&mut x);
    let mut r = g.eval(&x).norm();
    let r0 = r;
    let mut accepted = 0;
    for _ in 0..NEWTON_ITERS {
        if r == 0.0 {
            break;
        }
        let step = linalg::lstsq(&g.jacobian(&x), &g.eval(&x));
        let mut lam = 1.0;
        let mut next = None;
        for _ in 0..40 {
            let mut xn = &x - &step * lam;
            clip(&mut xn);
            let rn = g.eval(&xn).norm();
            if rn < r {
                next = Some((xn, rn));
                break;
            }
            lam *= 0.5;
        }
        let Some((xn, rn)) = next else { break };
        x = xn;
        r = rn;
        accepted += 1;
        if !pp.window.contains(&x, pp.margin(&x)) {
            if accepted >= 3 && r < 0.5 * r0 {
                return Err(DegreeError::WindowEscape {
                    start: start.as_slice().to_vec(),
                    exit: x.as_slice().to_vec(),
                    residual: r,
                });
            }
            return Ok(NewtonOutcome::Failed);
        }
    }
    if g.eval(&x).amax() <= ZERO_TOL && pp.window.contains(&x, pp.margin(&x)) {
        Ok(NewtonOutcome::Converged(x))
    } else {
        Ok(NewtonOutcome::Failed)
    }
}

fn find_zeros<S: Section + ?Sized>(
    g: &S,
    starts: &[DVector<f64>],
    pp: &PerturbationProblem,
    quadrant_rank: usize,
) -> Result<Vec<DVector<f64>>, DegreeError> {
    let runs: Vec<Result<NewtonOutcome, DegreeError>> =
        starts.par_iter().map(|x0| newton(g, x0, pp, quadrant_rank)).collect();
    let mut found: Vec<DVector<f64>> = Vec::new();
    for run in runs {
        if let NewtonOutcome::Converged(x) = run? {
            if found.iter().all(|y| (y - &x).norm() > DEDUPE_RADIUS) {
                found.push(x);
            }
        }
    }
    found.sort_by(|a, b| a.as_slice().partial_cmp(b.as_slice()).expect("finite zeros"));
    Ok(found)
}

/// Zeros of `f + s` in the window from multi-start Newton, deduplicated and
/// sorted lexicographically.
pub fn enumerate_zeros(pp: &PerturbationProblem, s: &ScPlusSection) -> Result<Vec<Zero>, DegreeError> {
    pp.validate()?;
    let g = Perturbed { f: pp.section.clone(), s: s.clone() };
    let qr = pp.section.quadrant_rank();
    let zeros = find_zeros(&g, &pp.starts(), pp, qr)?;
    Ok(zeros.into_iter().map(|x| Zero::new(&g, x)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PerturbationMode {
    InteriorOnly,
    FullBoundary,
}

/// A boundary zero and its rank certificates.
#[derive(Debug, Clone)]
pub struct BoundaryCheck {
    pub face: Vec<usize>,
    pub x: DVector<f64>,
    /// `rank [ker g' | T^∂]` against the ambient dimension.
    pub transversal_rank: usize,
    pub ambient: usize,
    /// Gap of `g'` restricted to `T^∂`.
    pub face_gap: f64,
    pub gap: f64,
}

impl BoundaryCheck {
    pub fn passed(&self) -> bool {
        self.transversal_rank == self.ambient && self.face_gap > REGULARITY_RATIO && self.gap > REGULARITY_RATIO
    }
}

#[derive(Debug, Clone)]
pub struct GenericPerturbation {
    pub s: ScPlusSection,
    pub attempts: usize,
    pub zeros: Vec<Zero>,
    pub boundary: Vec<BoundaryCheck>,
    pub sup_norm: f64,
    pub seed: u64,
}

impl GenericPerturbation {
    pub fn lambda(&self) -> Vec<f64> {
        self.s.coefficients()
    }
}

fn subsets(n: usize) -> Vec<Vec<usize>> {
    (1u32..(1 << n)).map(|mask| (0..n).filter(|i| mask & (1 << i) != 0).collect()).collect()
}

fn boundary_checks(pp: &PerturbationProblem, g: &Perturbed) -> Result<Vec<BoundaryCheck>, DegreeError> {
    let qr = g.quadrant_rank();
    let d = g.domain_dim();
    let mut out = Vec::new();
    for face in subsets(qr) {
        let system = FaceSystem { g, face: face.clone() };
        let starts: Vec<DVector<f64>> = pp
            .starts()
            .into_iter()
            .map(|mut x| {
                for &i in &face {
                    x[i] = 0.0;
                }
                x
            })
            .collect();
        for x in find_zeros(&system, &starts, pp, qr)? {
            let j = g.jacobian(&x);
            let z = Zero::new(g, x.clone());
            let kernel = linalg::kernel_basis(&j, RANK_CUTOFF);
            let tangent: Vec<usize> = (0..d).filter(|i| !face.contains(i)).collect();
            let t = DMatrix::from_fn(d, tangent.len(), |r, c| if r == tangent[c] { 1.0 } else { 0.0 });
            let restricted = Zero { x: x.clone(), residual: z.residual, singular_values: linalg::singular_values(&(&j * &t)), jacobian: &j * &t };
            out.push(BoundaryCheck {
                face: face.clone(),
                x,
                transversal_rank: linalg::rank(&hcat(&kernel, &t), RANK_CUTOFF),
                ambient: d,
                face_gap: restricted.gap(),
                gap: z.gap(),
            });
        }
    }
    Ok(out)
}

/// Unit bumps centered at `centers`, one per fiber direction.
fn bump_family(pp: &PerturbationProblem, centers: &[DVector<f64>]) -> Vec<Arc<BumpSection>> {
    let k = pp.section.fiber_dim();
    let mut family = Vec::new();
    for c in centers {
        for j in 0..k {
            let mut h = DVector::zeros(k);
            h[j] = 1.0;
            if let Some(p) = &pp.projection {
                h = p(c) * h;
                if h.amax() < 1e-12 {
                    continue;
                }
            }
            family.push(Arc::new(BumpSection::unit(
                Ball { center: c.clone(), radius: pp.bump_radius },
                h,
                pp.projection.clone(),
            )));
        }
    }
    family
}

fn family_centers(pp: &PerturbationProblem, zeros: &[Zero]) -> Vec<DVector<f64>> {
    let mut centers: Vec<DVector<f64>> = zeros.iter().map(|z| z.x.clone()).collect();
    centers.extend(pp.window.halton(pp.bump_centers, 1000));
    centers
}

fn norm_points(pp: &PerturbationProblem, centers: &[DVector<f64>]) -> Vec<DVector<f64>> {
    let mut pts = pp.window.halton(NORM_SAMPLES, 5000);
    pts.extend(centers.iter().cloned());
    pts
}

/// Random coefficients scaled so that the sampled sup of `N(s)` is a random
/// fraction in `[0.25, 0.9]` of the budget.
fn random_combination(
    pp: &PerturbationProblem,
    family: &[Arc<BumpSection>],
    points: &[DVector<f64>],
    rng: &mut Stream,
) -> (ScPlusSection, f64) {
    let (d, k) = (pp.section.domain_dim(), pp.section.fiber_dim());
    let raw: Vec<f64> = family.iter().map(|_| rng::uniform(rng, -1.0, 1.0)).collect();
    let fraction = rng::uniform(rng, 0.25, 0.9);
    let unscaled = ScPlusSection { domain: d, fiber: k, terms: raw.iter().copied().zip(family.iter().cloned()).collect() };
    let sup = unscaled.sup_norm(&pp.norm, points);
    if sup == 0.0 {
        return (ScPlusSection::zero(d, k), 0.0);
    }
    let c = fraction * pp.budget / sup;
    let s = ScPlusSection { terms: unscaled.terms.into_iter().map(|(l, b)| (l * c, b)).collect(), ..unscaled };
    let sup = s.sup_norm(&pp.norm, points);
    (s, sup)
}

struct Certified {
    zeros: Vec<Zero>,
    boundary: Vec<BoundaryCheck>,
}

/// Zeros of `f + s` with every rank certificate, or the worst offender.
fn certify(pp: &PerturbationProblem, s: &ScPlusSection, mode: PerturbationMode) -> Result<Result<Certified, (Vec<f64>, f64)>, DegreeError> {
    let zeros = enumerate_zeros(pp, s)?;
    if let Some(bad) = zeros.iter().filter(|z| !z.is_regular()).min_by(|a, b| a.gap().total_cmp(&b.gap())) {
        return Ok(Err((bad.x.as_slice().to_vec(), bad.gap())));
    }
    let boundary = if mode == PerturbationMode::FullBoundary {
        let g = Perturbed { f: pp.section.clone(), s: s.clone() };
        boundary_checks(pp, &g)?
    } else {
        Vec::new()
    };
    if let Some(bad) = boundary.iter().find(|b| !b.passed()) {
        return Ok(Err((bad.x.as_slice().to_vec(), bad.face_gap.min(bad.gap))));
    }
    Ok(Ok(Certified { zeros, boundary }))
}

/// Stream id for attempt `attempt` of trial `trial`; trial `0` is the
/// generic perturbation itself.
fn stream_id(trial: u64, attempt: usize) -> u64 {
    (trial << 16) | attempt as u64
}

fn perturb_until_regular(
    pp: &PerturbationProblem,
    family: &[Arc<BumpSection>],
    points: &[DVector<f64>],
    trial: u64,
    mode: PerturbationMode,
) -> Result<GenericPerturbation, DegreeError> {
    let mut worst = (Vec::new(), 0.0);
    for attempt in 0..MAX_RETRIES {
        let mut rng = rng::stream(pp.rng_seed, stream_id(trial, attempt));
        let (s, sup) = random_combination(pp, family, points, &mut rng);
        match certify(pp, &s, mode)? {
            Ok(c) => {
                return Ok(GenericPerturbation {
                    s,
                    attempts: attempt + 1,
                    zeros: c.zeros,
                    boundary: c.boundary,
                    sup_norm: sup,
                    seed: pp.rng_seed,
                })
            }
            Err(bad) => worst = bad,
        }
    }
    Err(DegreeError::RetryExhausted { zero: worst.0, gap: worst.1, attempts: MAX_RETRIES })
}

/// A perturbation `s` with `N(s) < budget` after which every zero in the
/// window is regular (and, in full-boundary mode, transversal to every face
/// it lies on). `s = 0` is returned when `f` already qualifies.
pub fn generic_perturbation(pp: &PerturbationProblem, mode: PerturbationMode) -> Result<GenericPerturbation, DegreeError> {
    let (d, k) = (pp.section.domain_dim(), pp.section.fiber_dim());
    let zero = ScPlusSection::zero(d, k);
    match certify(pp, &zero, mode)? {
        Ok(c) => Ok(GenericPerturbation { s: zero, attempts: 0, zeros: c.zeros, boundary: c.boundary, sup_norm: 0.0, seed: pp.rng_seed }),
        Err(_) => {
            let zeros = enumerate_zeros(pp, &zero)?;
            let centers = family_centers(pp, &zeros);
            let family = bump_family(pp, &centers);
            perturb_until_regular(pp, &family, &norm_points(pp, &centers), 0, mode)
        }
    }
}

#[derive(Debug, Clone)]
pub struct DegreeReport {
    pub degree: i64,
    pub zeros: Vec<(DVector<f64>, i8)>,
    pub perturbation: GenericPerturbation,
}

fn signed_count(pp: &PerturbationProblem, s: &ScPlusSection, zeros: &[Zero], reference: &Reference) -> Result<(i64, Vec<(DVector<f64>, i8)>), DegreeError> {
    let g = Perturbed { f: pp.section.clone(), s: s.clone() };
    let mut signed = Vec::with_capacity(zeros.len());
    for z in zeros {
        signed.push((z.x.clone(), sign_of_zero(&g, &z.x, reference)?));
    }
    Ok((signed.iter().map(|(_, s)| *s as i64).sum(), signed))
}

fn check_index(pp: &PerturbationProblem) -> Result<(), DegreeError> {
    let (d, k) = (pp.section.domain_dim(), pp.section.fiber_dim());
    if d != k {
        return Err(DegreeError::IndexMismatch { domain: d, fiber: k });
    }
    Ok(())
}

/// Signed count of zeros of a generic perturbation.
pub fn compute_degree(pp: &PerturbationProblem, reference: &Reference) -> Result<DegreeReport, DegreeError> {
    check_index(pp)?;
    let perturbation = generic_perturbation(pp, PerturbationMode::InteriorOnly)?;
    let (degree, zeros) = signed_count(pp, &perturbation.s, &perturbation.zeros, reference)?;
    Ok(DegreeReport { degree, zeros, perturbation })
}

/// A family `t ↦ f_t` on `[0, 1]` sampled at `steps + 1` points.
#[derive(Clone)]
pub struct Homotopy {
    pub name: String,
    family: Arc<dyn Fn(f64) -> DynSection + Send + Sync>,
    pub steps: usize,
}

impl Homotopy {
    pub fn new<F>(name: &str, steps: usize, family: F) -> Self
    where
        F: Fn(f64) -> DynSection + Send + Sync + 'static,
    {
        Self { name: name.to_string(), family: Arc::new(family), steps }
    }

    pub fn at(&self, t: f64) -> DynSection {
        (self.family)(t)
    }
}

impl std::fmt::Debug for Homotopy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Homotopy").field("name", &self.name).field("steps", &self.steps).finish()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HomotopySample {
    pub t: f64,
    /// `None` where no transversal parameter was found near `t`.
    pub degree: Option<i64>,
    pub zeros: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvarianceReport {
    pub seed: u64,
    pub base_degree: i64,
    pub trial_degrees: Vec<i64>,
    pub trial_zero_counts: Vec<usize>,
    pub trial_sup_norms: Vec<f64>,
    pub linear_homotopy: Vec<HomotopySample>,
    pub registered: Vec<HomotopySample>,
    pub violations: Vec<String>,
}

impl InvarianceReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

fn trial_family(pp: &PerturbationProblem) -> Result<(Vec<Arc<BumpSection>>, Vec<DVector<f64>>), DegreeError> {
    let (d, k) = (pp.section.domain_dim(), pp.section.fiber_dim());
    let zeros0 = enumerate_zeros(pp, &ScPlusSection::zero(d, k))?;
    let centers = family_centers(pp, &zeros0);
    Ok((bump_family(pp, &centers), norm_points(pp, &centers)))
}

/// The perturbation drawn by trial `trial` of [`invariance_suite`]; always
/// nonzero, regular and within budget.
pub fn trial_perturbation(pp: &PerturbationProblem, trial: usize) -> Result<GenericPerturbation, DegreeError> {
    let (family, points) = trial_family(pp)?;
    perturb_until_regular(pp, &family, &points, trial as u64 + 1, PerturbationMode::InteriorOnly)
}

/// Nudges tried around a non-transversal homotopy parameter.
const T_NUDGES: [f64; 6] = [1e-3, -1e-3, 2e-3, -2e-3, 4e-3, -4e-3];

/// Degree across `trials` independent perturbations within budget, along the
/// linear homotopy between the first two of them, and along `homotopy`.
pub fn invariance_suite(
    pp: &PerturbationProblem,
    trials: usize,
    homotopy: Option<&Homotopy>,
    reference: &Reference,
) -> Result<InvarianceReport, DegreeError> {
    check_index(pp)?;
    let base = compute_degree(pp, reference)?;
    let (family, points) = trial_family(pp)?;

    let runs: Vec<Result<(GenericPerturbation, i64), DegreeError>> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let gp = perturb_until_regular(pp, &family, &points, i as u64 + 1, PerturbationMode::InteriorOnly)?;
            let (deg, _) = signed_count(pp, &gp.s, &gp.zeros, reference)?;
            Ok((gp, deg))
        })
        .collect();
    let mut perturbations = Vec::with_capacity(trials);
    let mut report = InvarianceReport {
        seed: pp.rng_seed,
        base_degree: base.degree,
        trial_degrees: Vec::new(),
        trial_zero_counts: Vec::new(),
        trial_sup_norms: Vec::new(),
        linear_homotopy: Vec::new(),
        registered: Vec::new(),
        violations: Vec::new(),
    };
    for (i, run) in runs.into_iter().enumerate() {
        let (gp, deg) = run?;
        if deg != base.degree {
            report.violations.push(format!("trial {i}: degree {deg} with zeros {:?}", gp.zeros.iter().map(|z| z.x[0]).collect::<Vec<_>>()));
        }
        if !(gp.sup_norm < pp.budget) {
            report.violations.push(format!("trial {i}: N(s) = {} exceeds budget", gp.sup_norm));
        }
        report.trial_degrees.push(deg);
        report.trial_zero_counts.push(gp.zeros.len());
        report.trial_sup_norms.push(gp.sup_norm);
        perturbations.push(gp);
    }

    if perturbations.len() >= 2 {
        let (s0, s1) = (&perturbations[0].s, &perturbations[1].s);
        let steps = homotopy.map_or(20, |h| h.steps).max(1);
        for i in 0..=steps {
            let t = i as f64 / steps as f64;
            let sample = homotopy_sample(t, |t| {
                let s = ScPlusSection::interpolate(s0, s1, t);
                match certify(pp, &s, PerturbationMode::InteriorOnly)? {
                    Ok(c) => Ok(Some((signed_count(pp, &s, &c.zeros, reference)?.0, c.zeros.len()))),
                    Err(_) => Ok(None),
                }
            })?;
            if let Some(deg) = sample.degree {
                if deg != base.degree {
                    report.violations.push(format!("linear homotopy t = {}: degree {deg}", sample.t));
                }
            }
            report.linear_homotopy.push(sample);
        }
    }

    if let Some(h) = homotopy {
        let steps = h.steps.max(1);
        for i in 0..=steps {
            let t = i as f64 / steps as f64;
            let sample = homotopy_sample(t, |t| {
                let pt = pp.with_section(h.at(t));
                match compute_degree(&pt, reference) {
                    Ok(r) => Ok(Some((r.degree, r.zeros.len()))),
                    Err(DegreeError::RetryExhausted { .. }) => Ok(None),
                    Err(e) => Err(e),
                }
            })?;
            if let Some(deg) = sample.degree {
                if deg != base.degree {
                    report.violations.push(format!("{} t = {}: degree {deg}", h.name, sample.t));
                }
            }
            report.registered.push(sample);
        }
    }

    if report.passed() {
        Ok(report)
    } else {
        Err(DegreeError::InvarianceViolation(Box::new(report)))
    }
}

fn homotopy_sample<F>(t: f64, eval: F) -> Result<HomotopySample, DegreeError>
where
    F: Fn(f64) -> Result<Option<(i64, usize)>, DegreeError>,
{
    let candidates = std::iter::once(t).chain(T_NUDGES.iter().map(|d| t + d).filter(|s| (0.0..=1.0).contains(s)));
    for s in candidates {
        if let Some((degree, zeros)) = eval(s)? {
            return Ok(HomotopySample { t: s, degree: Some(degree), zeros });
        }
    }
    Ok(HomotopySample { t, degree: None, zeros: 0 })
}

pub type FormFn = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// A differential form on `R^D`: a function (`1 × 1`), a covector field
/// (`1 × D`), or a 2-form `ω(u, v) = uᵀ M v` with `M` antisymmetric.
#[derive(Clone)]
pub struct Form {
    pub degree: usize,
    eval: FormFn,
}

impl Form {
    pub fn function<F>(f: F) -> Self
    where
        F: Fn(&DVector<f64>) -> f64 + Send + Sync + 'static,
    {
        Self { degree: 0, eval: Arc::new(move |x| DMatrix::from_element(1, 1, f(x))) }
    }

    pub fn one_form<F>(f: F) -> Self
    where
        F: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        Self { degree: 1, eval: Arc::new(move |x| {
            let v = f(x);
            DMatrix::from_row_slice(1, v.len(), v.as_slice())
        }) }
    }

    pub fn two_form<F>(f: F) -> Self
    where
        F: Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    {
        Self { degree: 2, eval: Arc::new(f) }
    }

    /// A form of degree above two; rejected by integration.
    pub fn higher(degree: usize) -> Self {
        Self { degree, eval: Arc::new(|_| DMatrix::zeros(0, 0)) }
    }

    /// `ω_x(t_1, …, t_k)` for the columns of `tangent`.
    pub fn apply(&self, x: &DVector<f64>, tangent: &DMatrix<f64>) -> f64 {
        let m = (self.eval)(x);
        match self.degree {
            0 => m[(0, 0)],
            1 => (m * tangent.column(0))[0],
            _ => (tangent.column(0).transpose() * m * tangent.column(1))[0],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AtlasOrientation {
    /// Kernel orientation induced by the linearization at each base point.
    Induced,
    Explicit(Vec<i8>),
}

#[derive(Debug, Clone)]
pub struct IntegrationOptions {
    /// Gauss–Legendre panels per radial or axial direction.
    pub panels: usize,
    /// Nodes per panel.
    pub nodes: usize,
    /// Uniform angular nodes for 2-dimensional charts.
    pub angular: usize,
    /// Points of the solution set that must lie in some chart.
    pub coverage: Vec<DVector<f64>>,
}

impl Default for IntegrationOptions {
    fn default() -> Self {
        Self { panels: 8, nodes: 12, angular: 96, coverage: Vec::new() }
    }
}

impl IntegrationOptions {
    /// Twice as many panels and angular nodes.
    pub fn refined(&self) -> Self {
        Self { panels: 2 * self.panels, angular: 2 * self.angular, ..self.clone() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FormIntegral {
    pub value: f64,
    pub charts_used: usize,
    pub orientations: Vec<i8>,
    /// Largest `|Σ_j w_j − 1|` over quadrature nodes.
    pub partition_defect: f64,
    pub nodes: usize,
}

/// Tolerance for a point to lie on a chart image.
const CHART_MEMBERSHIP: f64 = 1e-7;

/// `ln` of the unnormalized partition weight of chart `gp` at `x`, or `None`
/// off the chart. The weight `smooth_step((1 − s)/(1 − PLATEAU))` is kept in
/// log form so that normalization survives underflow near the rim.
fn log_chart_weight(gp: &GoodParametrization, x: &DVector<f64>) -> Result<Option<f64>, DegreeError> {
    let nu = gp.coordinates(x);
    let s = nu.norm() / gp.radius;
    if s >= 1.0 {
        return Ok(None);
    }
    if (gp.gamma(&nu)? - x).amax() > CHART_MEMBERSHIP {
        return Ok(None);
    }
    let t = (1.0 - s) / (1.0 - PLATEAU);
    if t >= 1.0 {
        return Ok(Some(0.0));
    }
    // smooth_step(t) = 1 / (1 + e^z)
    let z = 1.0 / t - 1.0 / (1.0 - t);
    let softplus = if z > 30.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
    Ok(Some(-softplus))
}

/// Normalized partition weights at `x`; all zero when no chart covers `x`.
fn partition(atlas: &SolutionAtlas, x: &DVector<f64>) -> Result<Vec<f64>, DegreeError> {
    let logs: Vec<Option<f64>> = atlas.charts.iter().map(|gp| log_chart_weight(gp, x)).collect::<Result<_, _>>()?;
    let Some(top) = logs.iter().flatten().copied().reduce(f64::max) else {
        return Ok(vec![0.0; logs.len()]);
    };
    let raw: Vec<f64> = logs.iter().map(|l| l.map_or(0.0, |l| (l - top).exp())).collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|w| w / total).collect())
}

fn panel_rule(a: f64, b: f64, opts: &IntegrationOptions) -> Vec<(f64, f64)> {
    let gl = GaussLegendre::new(NonZeroUsize::new(opts.nodes.max(1)).expect("positive"));
    let h = (b - a) / opts.panels.max(1) as f64;
    let mut out = Vec::with_capacity(opts.panels * opts.nodes);
    for p in 0..opts.panels.max(1) {
        let (lo, hi) = (a + p as f64 * h, a + (p + 1) as f64 * h);
        for &(x, w) in gl.as_node_weight_pairs() {
            out.push((0.5 * (hi - lo) * x + 0.5 * (hi + lo), 0.5 * (hi - lo) * w));
        }
    }
    out
}

/// Chart domain nodes and weights.
fn chart_nodes(dim: usize, radius: f64, opts: &IntegrationOptions) -> Vec<(DVector<f64>, f64)> {
    match dim {
        0 => vec![(DVector::zeros(0), 1.0)],
        1 => panel_rule(-radius, radius, opts).into_iter().map(|(x, w)| (DVector::from_element(1, x), w)).collect(),
        _ => {
            let radial = panel_rule(0.0, radius, opts);
            let m = opts.angular.max(3);
            let dt = std::f64::consts::TAU / m as f64;
            let mut out = Vec::with_capacity(radial.len() * m);
            for (r, w) in radial {
                for j in 0..m {
                    let th = j as f64 * dt;
                    out.push((DVector::from_vec(vec![r * th.cos(), r * th.sin()]), w * r * dt));
                }
            }
            out
        }
    }
}

/// `∫ ω` over the solution set covered by `atlas`: a smooth partition of
/// unity subordinate to the chart domains, tensor-grid quadrature of the
/// pulled-back form on each chart, and a signed sum. Charts whose dimension
/// differs from the form degree contribute zero.
pub fn integrate_form(
    atlas: &SolutionAtlas,
    omega: &Form,
    orientation: &AtlasOrientation,
    opts: &IntegrationOptions,
) -> Result<FormIntegral, DegreeError> {
    if omega.degree > 2 {
        return Err(DegreeError::DimensionUnsupported { degree: omega.degree });
    }
    if atlas.charts.is_empty() {
        return Err(DegreeError::AtlasIncomplete { point: Vec::new() });
    }
    if atlas.charts.iter().any(|c| !matches!(c.domain, ChartDomain::Ball)) {
        return Err(DegreeError::UnsupportedDomain);
    }
    for p in &opts.coverage {
        if partition(atlas, p)?.iter().all(|&w| w == 0.0) {
            return Err(DegreeError::AtlasIncomplete { point: p.as_slice().to_vec() });
        }
    }
    let orientations: Vec<i8> = match orientation {
        AtlasOrientation::Induced => atlas
            .charts
            .iter()
            .map(|c| kernel_orientation(&c.section().jacobian(&c.base), &c.kernel))
            .collect(),
        AtlasOrientation::Explicit(v) => {
            if v.len() != atlas.charts.len() {
                return Err(DegreeError::AtlasIncomplete { point: Vec::new() });
            }
            v.clone()
        }
    };

    let per_chart: Vec<Result<(f64, f64, usize), DegreeError>> = atlas
        .charts
        .par_iter()
        .enumerate()
        .map(|(i, gp)| {
            if gp.dim() != omega.degree {
                return Ok((0.0, 0.0, 0));
            }
            if gp.dim() == 0 {
                return Ok((orientations[i] as f64 * omega.apply(&gp.base, &DMatrix::zeros(gp.ambient_dim(), 0)), 0.0, 1));
            }
            let mut sum = 0.0;
            let mut defect: f64 = 0.0;
            let nodes = chart_nodes(gp.dim(), gp.radius, opts);
            let count = nodes.len();
            for (nu, w) in nodes {
                if nu.norm() >= gp.radius {
                    continue;
                }
                let x = gp.gamma(&nu)?;
                let weights = partition(atlas, &x)?;
                let total: f64 = weights.iter().sum();
                if total == 0.0 {
                    continue;
                }
                defect = defect.max((total - 1.0).abs());
                let own = weights[i];
                if own == 0.0 {
                    continue;
                }
                let tangent = &gp.kernel + gp.da(&nu)?;
                sum += w * own * omega.apply(&x, &tangent);
            }
            Ok((orientations[i] as f64 * sum, defect, count))
        })
        .collect();

    let mut value = 0.0;
    let mut defect: f64 = 0.0;
    let mut nodes = 0;
    let mut used = 0;
    for r in per_chart {
        let (v, d, n) = r?;
        value += v;
        defect = defect.max(d);
        nodes += n;
        used += usize::from(n > 0);
    }
    Ok(FormIntegral { value, charts_used: used, orientations, partition_defect: defect, nodes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::section::FnSection;

    fn scalar<F: Fn(f64) -> f64 + Send + Sync + 'static, G: Fn(f64) -> f64 + Send + Sync + 'static>(f: F, df: G) -> DynSection {
        FnSection::new(1, 1, move |x: &DVector<f64>| DVector::from_element(1, f(x[0])))
            .with_jacobian(move |x: &DVector<f64>| DMatrix::from_element(1, 1, df(x[0])))
            .into_dyn()
    }

    #[test]
    fn plateau_profile() {
        assert_eq!(plateau(0.0), 1.0);
        assert_eq!(plateau(0.5), 1.0);
        assert_eq!(plateau(1.0), 0.0);
        assert!((plateau(0.75) - 0.5).abs() < 1e-15);
        assert_eq!(smooth_step(0.5), 0.5);
    }

    #[test]
    fn bump_jacobian_matches_differences() {
        let norm = AuxiliaryNorm::flat(2);
        let x0 = DVector::from_vec(vec![0.1, 0.2]);
        let h0 = DVector::from_vec(vec![0.3, -0.1]);
        let b = make_bump_section(&x0, &h0, Ball { center: DVector::zeros(2), radius: 1.0 }, 1.0, &norm, None).unwrap();
        let x = DVector::from_vec(vec![0.5, 0.4]);
        let fd = linalg::jacobian_fd(|y| b.eval(y), &x);
        assert!((b.jacobian(&x) - fd).amax() < 1e-8);
    }

    #[test]
    fn identity_has_one_zero() {
        let pp = PerturbationProblem::new(scalar(|x| x, |_| 1.0), Window::interval(-2.0, 2.0));
        let z = enumerate_zeros(&pp, &ScPlusSection::zero(1, 1)).unwrap();
        assert_eq!(z.len(), 1);
        assert!(z[0].x[0].abs() < 1e-12);
    }

    #[test]
    fn escaping_newton_is_reported() {
        let pp = PerturbationProblem::new(scalar(|x| (-x).exp(), |x| -(-x).exp()), Window::interval(-2.0, 2.0));
        assert!(matches!(enumerate_zeros(&pp, &ScPlusSection::zero(1, 1)), Err(DegreeError::WindowEscape { .. })));
    }
}
