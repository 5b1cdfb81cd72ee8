//! Contraction germs `f(v,u) = u − B(v,u)` and their solution germs.
//!
//! The fixed point `δ(v)` is found by Picard iteration from `u₀ = 0`, measured
//! in the requested level's norm only. Derivatives of `δ` follow from
//! `δ'(v) = (I − D₂B)⁻¹ D₁B` evaluated at `(v, δ(v))`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use parking_lot::Mutex;
use thiserror::Error;

use crate::graded_space::{GradedError, GradedSpace};
use crate::linalg::{self, concat};
use crate::rng;

pub const DEFAULT_MAX_ITER: usize = 10_000;

pub type GermMap = Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type GermJacobian = Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GermError {
    #[error("no convergence after {iterations} iterations, last residual {residual:e}, last ratio {ratio}")]
    NonConvergence { iterations: usize, residual: f64, ratio: f64 },
    #[error("parameter norm {norm} exceeds neighborhood radius {radius} at level {level}")]
    OutsideNeighborhood { norm: f64, radius: f64, level: usize },
    #[error("I - D2B is numerically singular (smallest singular value {sigma_min:e})")]
    SingularLinearization { sigma_min: f64 },
    #[error("contraction schedule must list one (rho, r) pair per level 0..={levels}, got {got}")]
    Schedule { levels: usize, got: usize },
    #[error(transparent)]
    Graded(#[from] GradedError),
}

/// Per-level contraction constant and neighborhood radius.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelCertificate {
    pub rho: f64,
    pub radius: f64,
}

#[derive(Clone)]
pub struct ContractionGerm {
    parameter_space: Arc<GradedSpace>,
    solution_space: Arc<GradedSpace>,
    b: GermMap,
    d1: Option<GermJacobian>,
    d2: Option<GermJacobian>,
    schedule: Vec<LevelCertificate>,
}

impl std::fmt::Debug for ContractionGerm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ContractionGerm")
            .field("parameter_dim", &self.parameter_space.dim())
            .field("solution_dim", &self.solution_space.dim())
            .field("schedule", &self.schedule)
            .finish()
    }
}

/// Result of a Picard solve.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedPoint {
    pub solution: DVector<f64>,
    pub iterations: usize,
    /// `‖u − B(v,u)‖_m` at the returned point.
    pub residual: f64,
    /// Largest observed ratio of consecutive residuals above the rounding floor.
    pub observed_ratio: f64,
    pub level: usize,
}

impl ContractionGerm {
    /// `schedule` must hold one certificate per level `0..=M` of the solution space.
    pub fn new<F>(
        parameter_space: Arc<GradedSpace>,
        solution_space: Arc<GradedSpace>,
        b: F,
        schedule: Vec<LevelCertificate>,
    ) -> Result<Self, GermError>
    where
        F: Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        Self::from_arc(parameter_space, solution_space, Arc::new(b), schedule)
    }

    fn from_arc(
        parameter_space: Arc<GradedSpace>,
        solution_space: Arc<GradedSpace>,
        b: GermMap,
        schedule: Vec<LevelCertificate>,
    ) -> Result<Self, GermError> {
        let levels = solution_space.levels();
        if schedule.len() != levels + 1 {
            return Err(GermError::Schedule { levels, got: schedule.len() });
        }
        Ok(Self { parameter_space, solution_space, b, d1: None, d2: None, schedule })
    }

    /// Same certificate at every level.
    pub fn uniform_schedule(levels: usize, rho: f64, radius: f64) -> Vec<LevelCertificate> {
        vec![LevelCertificate { rho, radius }; levels + 1]
    }

    pub fn with_jacobians<J1, J2>(mut self, d1: J1, d2: J2) -> Self
    where
        J1: Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
        J2: Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    {
        self.d1 = Some(Arc::new(d1));
        self.d2 = Some(Arc::new(d2));
        self
    }

    pub fn parameter_space(&self) -> &Arc<GradedSpace> {
        &self.parameter_space
    }

    pub fn solution_space(&self) -> &Arc<GradedSpace> {
        &self.solution_space
    }

    pub fn schedule(&self) -> &[LevelCertificate] {
        &self.schedule
    }

    pub fn parameter_dim(&self) -> usize {
        self.parameter_space.dim()
    }

    pub fn solution_dim(&self) -> usize {
        self.solution_space.dim()
    }

    pub fn eval(&self, v: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        (self.b)(v, u)
    }

    pub fn map(&self) -> GermMap {
        Arc::clone(&self.b)
    }

    /// `D₁B(v,u)`, shape `solution_dim × parameter_dim`.
    pub fn d1(&self, v: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64> {
        match &self.d1 {
            Some(j) => j(v, u),
            None => {
                let h = 1e-6 * (1.0 + linalg::l1_norm(v) + linalg::l1_norm(u));
                linalg::jacobian_fd_step(|x| (self.b)(x, u), v, h)
            }
        }
    }

    /// `D₂B(v,u)`, shape `solution_dim × solution_dim`.
    pub fn d2(&self, v: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64> {
        match &self.d2 {
            Some(j) => j(v, u),
            None => {
                let h = 1e-6 * (1.0 + linalg::l1_norm(v) + linalg::l1_norm(u));
                linalg::jacobian_fd_step(|x| (self.b)(v, x), u, h)
            }
        }
    }

    fn check_neighborhood(&self, v: &DVector<f64>, m: usize) -> Result<(), GermError> {
        self.solution_space.check_level(m)?;
        let radius = self.schedule[m].radius;
        let norm = self.parameter_space.norm_unchecked(v.as_slice(), m.min(self.parameter_space.levels()));
        if norm > radius {
            return Err(GermError::OutsideNeighborhood { norm, radius, level: m });
        }
        Ok(())
    }

    /// Picard iteration from `u₀ = 0`.
    pub fn solve(&self, v: &DVector<f64>, m: usize, tol: f64, max_iter: usize) -> Result<FixedPoint, GermError> {
        self.solve_from(v, &DVector::zeros(self.solution_dim()), m, tol, max_iter)
    }

    pub fn solve_from(
        &self,
        v: &DVector<f64>,
        u0: &DVector<f64>,
        m: usize,
        tol: f64,
        max_iter: usize,
    ) -> Result<FixedPoint, GermError> {
        self.check_neighborhood(v, m)?;
        let space = &self.solution_space;
        let mut u = u0.clone();
        let mut prev: Option<f64> = None;
        let mut observed_ratio: f64 = 0.0;
        let mut ratio = 0.0;
        let mut residual = f64::INFINITY;
        for k in 0..=max_iter {
            let bu = (self.b)(v, &u);
            residual = space.norm_unchecked((&u - &bu).as_slice(), m);
            if !residual.is_finite() {
                break;
            }
            if residual <= tol {
                return Ok(FixedPoint { solution: u, iterations: k, residual, observed_ratio, level: m });
            }
            let floor = 1e3 * f64::EPSILON * (1.0 + space.norm_unchecked(u.as_slice(), m));
            if let Some(p) = prev {
                if p > floor {
                    ratio = residual / p;
                    observed_ratio = observed_ratio.max(ratio);
                    if ratio >= 1.0 && residual > floor {
                        return Err(GermError::NonConvergence { iterations: k, residual, ratio });
                    }
                }
            }
            prev = Some(residual);
            u = bu;
        }
        Err(GermError::NonConvergence { iterations: max_iter, residual, ratio })
    }

    /// `δ'(v) = (I − D₂B(v,δ(v)))⁻¹ D₁B(v,δ(v))`, shape `solution_dim × parameter_dim`.
    pub fn derivative(&self, v: &DVector<f64>, tol: f64) -> Result<DMatrix<f64>, GermError> {
        let fp = self.solve(v, 0, tol, DEFAULT_MAX_ITER)?;
        self.derivative_at(v, &fp.solution)
    }

    /// Derivative formula at a known fixed point `u = δ(v)`.
    pub fn derivative_at(&self, v: &DVector<f64>, u: &DVector<f64>) -> Result<DMatrix<f64>, GermError> {
        let k = self.solution_dim();
        let l = DMatrix::identity(k, k) - self.d2(v, u);
        let d1 = self.d1(v, u);
        if k == 0 {
            return Ok(DMatrix::zeros(0, self.parameter_dim()));
        }
        let sv = linalg::singular_values(&l);
        let smin = *sv.last().unwrap();
        if smin < 1e-12 * sv[0].max(1.0) {
            return Err(GermError::SingularLinearization { sigma_min: smin });
        }
        let lu = l.lu();
        lu.solve(&d1).ok_or(GermError::SingularLinearization { sigma_min: smin })
    }
}

/// The map `v ↦ δ(v)` of a germ, evaluated on demand.
#[derive(Debug, Clone)]
pub struct SolutionGerm {
    pub germ: ContractionGerm,
    pub level: usize,
    pub tol: f64,
    pub max_iter: usize,
}

impl SolutionGerm {
    pub fn new(germ: ContractionGerm, level: usize, tol: f64) -> Self {
        Self { germ, level, tol, max_iter: DEFAULT_MAX_ITER }
    }

    pub fn eval(&self, v: &DVector<f64>) -> Result<DVector<f64>, GermError> {
        Ok(self.germ.solve(v, self.level, self.tol, self.max_iter)?.solution)
    }

    pub fn derivative(&self, v: &DVector<f64>) -> Result<DMatrix<f64>, GermError> {
        let u = self.eval(v)?;
        self.germ.derivative_at(v, &u)
    }
}

pub fn solve_germ(
    germ: &ContractionGerm,
    v: &DVector<f64>,
    m: usize,
    tol: f64,
    max_iter: usize,
) -> Result<DVector<f64>, GermError> {
    Ok(germ.solve(v, m, tol, max_iter)?.solution)
}

pub fn germ_derivative(germ: &ContractionGerm, v: &DVector<f64>, tol: f64) -> Result<DMatrix<f64>, GermError> {
    germ.derivative(v, tol)
}

/// Data cached per parameter point for the tangent lift.
struct LiftPoint {
    v: DVector<f64>,
    d1: DMatrix<f64>,
    d2: DMatrix<f64>,
}

/// The tangent germ `B⁽¹⁾(v,b,u,w) = (B(v,u), D₁B(v,δ(v))b + D₂B(v,δ(v))w)`
/// on the doubled spaces. Its solution germ is `(δ(v), δ'(v)b)`.
///
/// Doubled spaces carry concatenated weights at the same level.
pub fn tangent_germ(germ: &ContractionGerm, solution: &SolutionGerm) -> ContractionGerm {
    let p = germ.parameter_dim();
    let k = germ.solution_dim();
    let base = germ.clone();
    let sol = solution.clone();
    let cache: Arc<Mutex<Option<Arc<LiftPoint>>>> = Arc::new(Mutex::new(None));

    // Jacobians at (v, δ(v)); a failed inner solve yields NaN, which the
    // outer iteration reports as non-convergence.
    let lift = move |v: &DVector<f64>| -> Arc<LiftPoint> {
        if let Some(hit) = cache.lock().as_ref() {
            if hit.v == *v {
                return Arc::clone(hit);
            }
        }
        let point = match sol.eval(v) {
            Ok(d) => LiftPoint { v: v.clone(), d1: base.d1(v, &d), d2: base.d2(v, &d) },
            Err(_) => LiftPoint {
                v: v.clone(),
                d1: DMatrix::from_element(k, p, f64::NAN),
                d2: DMatrix::from_element(k, k, f64::NAN),
            },
        };
        let point = Arc::new(point);
        *cache.lock() = Some(Arc::clone(&point));
        point
    };

    let inner = germ.clone();
    let b1 = move |vb: &DVector<f64>, uw: &DVector<f64>| -> DVector<f64> {
        let v = vb.rows(0, p).into_owned();
        let b = vb.rows(p, p).into_owned();
        let u = uw.rows(0, k).into_owned();
        let w = uw.rows(k, k).into_owned();
        let lp = lift(&v);
        let top = inner.eval(&v, &u);
        let bottom = &lp.d1 * b + &lp.d2 * w;
        concat(&top, &bottom)
    };

    let schedule = germ
        .schedule
        .iter()
        .map(|c| LevelCertificate { rho: c.rho, radius: f64::INFINITY })
        .collect();
    ContractionGerm::from_arc(
        Arc::new(germ.parameter_space.direct_sum(&germ.parameter_space)),
        Arc::new(germ.solution_space.direct_sum(&germ.solution_space)),
        Arc::new(b1),
        schedule,
    )
    .expect("schedule length is inherited")
}

/// `j`-fold tangent lift; `j = 0` returns the germ itself.
///
/// Lifts beyond the user-supplied Jacobian order use finite differences of
/// the previous lift, so accuracy is only documented for `j ≤ 2`.
pub fn iterate_tangent(germ: &ContractionGerm, solution: &SolutionGerm, j: usize) -> ContractionGerm {
    let mut g = germ.clone();
    let mut s = solution.clone();
    for _ in 0..j {
        g = tangent_germ(&g, &s);
        s = SolutionGerm { germ: g.clone(), ..s };
    }
    g
}

/// Sampling plan for the empirical contraction estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingPlan {
    pub samples: usize,
    /// Half-width of the coordinate box for `v`.
    pub v_radius: f64,
    /// Half-width of the coordinate box for `u` and `u'`.
    pub u_radius: f64,
    pub seed: u64,
}

impl Default for SamplingPlan {
    fn default() -> Self {
        Self { samples: 1000, v_radius: 0.1, u_radius: 1.0, seed: rng::DEFAULT_SEED }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContractionReport {
    pub level: usize,
    pub max_ratio: f64,
    pub samples: usize,
    pub passed: bool,
}

/// Largest sampled `‖B(v,u) − B(v,u')‖_m / ‖u − u'‖_m`; passes iff `< 1`.
pub fn verify_contraction(germ: &ContractionGerm, m: usize, plan: &SamplingPlan) -> ContractionReport {
    let mut r = rng::stream(plan.seed, m as u64);
    let p = germ.parameter_dim();
    let k = germ.solution_dim();
    let space = germ.solution_space();
    let mut max_ratio: f64 = 0.0;
    let mut used = 0;
    for _ in 0..plan.samples {
        let v = DVector::from_vec(rng::uniform_vec(&mut r, p, -plan.v_radius, plan.v_radius));
        let u = DVector::from_vec(rng::uniform_vec(&mut r, k, -plan.u_radius, plan.u_radius));
        let u2 = DVector::from_vec(rng::uniform_vec(&mut r, k, -plan.u_radius, plan.u_radius));
        let den = space.norm_unchecked((&u - &u2).as_slice(), m);
        if den <= 1e-14 {
            continue;
        }
        let num = space.norm_unchecked((germ.eval(&v, &u) - germ.eval(&v, &u2)).as_slice(), m);
        let ratio = num / den;
        max_ratio = if ratio.is_nan() { f64::INFINITY } else { max_ratio.max(ratio) };
        used += 1;
    }
    ContractionReport { level: m, max_ratio, samples: used, passed: max_ratio < 1.0 }
}

/// Central finite-difference derivative of `v ↦ δ(v)` with step `h`; test oracle.
pub fn fd_solution_derivative(solution: &SolutionGerm, v: &DVector<f64>, h: f64) -> Result<DMatrix<f64>, GermError> {
    let err = std::cell::RefCell::new(None);
    let j = linalg::jacobian_fd_step(
        |x| match solution.eval(x) {
            Ok(d) => d,
            Err(e) => {
                *err.borrow_mut() = Some(e);
                DVector::from_element(solution.germ.solution_dim(), f64::NAN)
            }
        },
        v,
        h,
    );
    match err.into_inner() {
        Some(e) => Err(e),
        None => Ok(j),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models;

    fn scalar(x: f64) -> DVector<f64> {
        DVector::from_element(1, x)
    }

    fn linear(alpha: f64, beta: f64) -> ContractionGerm {
        let s = Arc::new(GradedSpace::flat(1));
        ContractionGerm::new(
            s.clone(),
            s,
            move |v, u| u * alpha + v * beta,
            ContractionGerm::uniform_schedule(1, alpha.abs(), 10.0),
        )
        .unwrap()
    }

    #[test]
    fn zero_germ_has_zero_solution() {
        let g = linear(0.0, 0.0);
        assert_eq!(solve_germ(&g, &scalar(0.7), 0, 1e-12, 100).unwrap()[0], 0.0);
        assert_eq!(germ_derivative(&g, &scalar(0.7), 1e-12).unwrap()[(0, 0)], 0.0);
    }

    #[test]
    fn linear_fixed_point_and_derivative() {
        let g = linear(0.5, 1.0);
        let u = solve_germ(&g, &scalar(2.0), 0, 1e-12, DEFAULT_MAX_ITER).unwrap();
        assert!((u[0] - 4.0).abs() < 1e-11);
        let d = germ_derivative(&g, &scalar(2.0), 1e-12).unwrap();
        assert!((d[(0, 0)] - 2.0).abs() < 1e-8);
    }

    #[test]
    fn expanding_map_is_rejected() {
        let g = linear(1.5, 1.0);
        assert!(matches!(g.solve(&scalar(1.0), 0, 1e-12, 100), Err(GermError::NonConvergence { .. })));
    }

    #[test]
    fn outside_neighborhood_is_reported() {
        let g = linear(0.5, 1.0);
        assert!(matches!(g.solve(&scalar(20.0), 0, 1e-12, 100), Err(GermError::OutsideNeighborhood { .. })));
    }

    #[test]
    fn lifted_zero_germ() {
        let g = linear(0.0, 0.0);
        let s = SolutionGerm::new(g.clone(), 0, 1e-13);
        let t = tangent_germ(&g, &s);
        let sol = t.solve(&DVector::from_vec(vec![0.3, 1.0]), 0, 1e-12, 100).unwrap();
        assert_eq!(sol.solution, DVector::zeros(2));
    }

    #[test]
    fn lift_without_parameter_dependence() {
        let g = linear(0.5, 0.0);
        let s = SolutionGerm::new(g.clone(), 0, 1e-13);
        let t = tangent_germ(&g, &s);
        let sol = t.solve(&DVector::from_vec(vec![0.4, -2.0]), 0, 1e-12, DEFAULT_MAX_ITER).unwrap();
        assert!(sol.solution.norm() < 1e-11);
    }

    #[test]
    fn iterate_zero_is_identity() {
        let g = models::cosine_germ();
        let s = SolutionGerm::new(g.clone(), 0, 1e-13);
        let g0 = iterate_tangent(&g, &s, 0);
        assert_eq!(g0.parameter_dim(), 1);
        let v = scalar(0.05);
        assert_eq!(g0.eval(&v, &scalar(0.3)), g.eval(&v, &scalar(0.3)));
        let g1 = iterate_tangent(&g, &s, 1);
        let t1 = tangent_germ(&g, &s);
        let vb = DVector::from_vec(vec![0.05, 1.0]);
        let uw = DVector::from_vec(vec![0.2, 0.7]);
        assert_eq!(g1.eval(&vb, &uw), t1.eval(&vb, &uw));
    }

    #[test]
    fn verify_contraction_examples() {
        let plan = SamplingPlan { samples: 200, ..Default::default() };
        assert_eq!(verify_contraction(&linear(0.0, 0.0), 0, &plan).max_ratio, 0.0);
        let half = verify_contraction(&linear(0.5, 0.0), 0, &plan).max_ratio;
        assert!((half - 0.5).abs() < 1e-12);
        let cos = verify_contraction(&models::cosine_germ(), 0, &plan);
        assert!(cos.passed && cos.max_ratio <= 0.25);
    }

    #[test]
    fn uniqueness_from_other_starts() {
        let g = models::cosine_germ();
        let v = scalar(0.1);
        let a = g.solve(&v, 1, 1e-12, DEFAULT_MAX_ITER).unwrap().solution;
        let b = g.solve_from(&v, &scalar(0.9), 1, 1e-12, DEFAULT_MAX_ITER).unwrap().solution;
        assert!((a - b).amax() <= 2e-12);
    }
}
