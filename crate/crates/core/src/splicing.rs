//! Splicings, strong bundle splicings, fillers and filled sections, plus the
//! corner bookkeeping (degeneracy index and local faces) of partial quadrants.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::graded_space::{GradedSpace, DEFAULT_TOL};
use crate::linalg::{self, concat, hcat, split_coefficients, svd_split, RANK_CUTOFF};
use crate::rng;
use crate::section::Section;

pub type ProjectionFamily = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;
pub type BundleProjection = Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync>;
pub type CoreMap = Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SplicingError {
    #[error("parameter {v:?} lies outside the parameter region")]
    OutsideParameterRegion { v: Vec<f64> },
    #[error("point is not a zero of the filled section (residual {residual:e})")]
    NotAZero { residual: f64 },
    #[error("filler check failed: {0}")]
    InvalidFiller(String),
    #[error("Newton solve on the fiber did not converge (residual {residual:e})")]
    FiberSolve { residual: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SmoothnessGrade {
    Exact,
    /// Rank-jumping family; exempt from the continuity check.
    TruncationApproximate,
}

/// A family `v ↦ π_v` of linear idempotents on `E`, parameterized by an open
/// set `V` in a partial quadrant (`|v|_0 < v_radius`, quadrant constraints).
#[derive(Clone)]
pub struct SplicingModel {
    pub parameter_space: Arc<GradedSpace>,
    pub e_space: Arc<GradedSpace>,
    pub v_radius: f64,
    pi: ProjectionFamily,
    pub grade: SmoothnessGrade,
}

impl SplicingModel {
    pub fn new<P>(
        parameter_space: Arc<GradedSpace>,
        e_space: Arc<GradedSpace>,
        v_radius: f64,
        pi: P,
        grade: SmoothnessGrade,
    ) -> Self
    where
        P: Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    {
        Self { parameter_space, e_space, v_radius, pi: Arc::new(pi), grade }
    }

    /// `π_v ≡ I` on `E`.
    pub fn trivial(parameter_space: Arc<GradedSpace>, e_space: Arc<GradedSpace>, v_radius: f64) -> Self {
        let d = e_space.dim();
        Self::new(parameter_space, e_space, v_radius, move |_| DMatrix::identity(d, d), SmoothnessGrade::Exact)
    }

    pub fn parameter_dim(&self) -> usize {
        self.parameter_space.dim()
    }

    pub fn e_dim(&self) -> usize {
        self.e_space.dim()
    }

    pub fn contains_parameter(&self, v: &DVector<f64>) -> bool {
        let inside = self.parameter_space.membership(v.as_slice(), DEFAULT_TOL).inside;
        inside && self.parameter_space.norm_unchecked(v.as_slice(), 0) < self.v_radius
    }

    pub fn pi(&self, v: &DVector<f64>) -> Result<DMatrix<f64>, SplicingError> {
        if !self.contains_parameter(v) {
            return Err(SplicingError::OutsideParameterRegion { v: v.iter().copied().collect() });
        }
        Ok((self.pi)(v))
    }

    /// `π_v` without the region check, for internal use on validated points.
    pub fn pi_unchecked(&self, v: &DVector<f64>) -> DMatrix<f64> {
        (self.pi)(v)
    }

    fn sample_parameter(&self, r: &mut rng::Stream) -> DVector<f64> {
        let p = self.parameter_dim();
        let n = self.parameter_space.quadrant_rank();
        loop {
            let scale = self.v_radius / (p.max(1) as f64);
            let v = DVector::from_iterator(
                p,
                (0..p).map(|i| if i < n { rng::uniform(r, 0.0, scale) } else { rng::uniform(r, -scale, scale) }),
            );
            if self.contains_parameter(&v) {
                return v;
            }
        }
    }

    /// Largest sampled `‖π_v π_v e − π_v e‖_0`.
    pub fn idempotency_defect(&self, samples: usize, seed: u64) -> f64 {
        let mut r = rng::stream(seed, 0);
        let mut worst: f64 = 0.0;
        for _ in 0..samples {
            let v = self.sample_parameter(&mut r);
            let e = DVector::from_vec(rng::uniform_vec(&mut r, self.e_dim(), -1.0, 1.0));
            let p = self.pi_unchecked(&v);
            let pe = &p * &e;
            worst = worst.max(self.e_space.norm_unchecked((&p * &pe - &pe).as_slice(), 0));
        }
        worst
    }

    /// Sampled modulus of continuity of `v ↦ π_v e` at every level: the
    /// largest `‖π_{v+dv} e − π_v e‖_m` for `|dv| ≤ step`. For truncation
    /// approximate families this is the reported discontinuity magnitude.
    pub fn continuity_modulus(&self, step: f64, samples: usize, seed: u64) -> f64 {
        let mut r = rng::stream(seed, 1);
        let mut worst: f64 = 0.0;
        for _ in 0..samples {
            let v = self.sample_parameter(&mut r);
            let dv = DVector::from_vec(rng::uniform_vec(&mut r, self.parameter_dim(), -step, step));
            let w = &v + dv;
            if !self.contains_parameter(&w) {
                continue;
            }
            let e = DVector::from_vec(rng::uniform_vec(&mut r, self.e_dim(), -1.0, 1.0));
            let diff = (self.pi_unchecked(&w) - self.pi_unchecked(&v)) * e;
            for m in 0..=self.e_space.levels() {
                worst = worst.max(self.e_space.norm_unchecked(diff.as_slice(), m));
            }
        }
        worst
    }
}

/// The core `{(v,e) : π_v e = e}`.
#[derive(Clone)]
pub struct SplicingCore {
    pub model: SplicingModel,
    pub tol: f64,
}

impl SplicingCore {
    pub fn contains(&self, v: &DVector<f64>, e: &DVector<f64>) -> bool {
        match self.model.pi(v) {
            Ok(p) => self.model.e_space.norm_unchecked((&p * e - e).as_slice(), 0) <= self.tol,
            Err(_) => false,
        }
    }
}

/// `r(v,e) = (v, π_v e)`.
pub fn core_retraction(
    model: &SplicingModel,
    v: &DVector<f64>,
    e: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>), SplicingError> {
    Ok((v.clone(), model.pi(v)? * e))
}

/// Idempotents `ρ_{(v,e)}` on `F` over the core of `base`.
#[derive(Clone)]
pub struct StrongBundleSplicing {
    pub base: SplicingModel,
    pub f_space: Arc<GradedSpace>,
    rho: BundleProjection,
    /// The (m, m+1) bi-filtration has no finite-dimensional content; this
    /// flag records that the model declares it.
    pub level_shift_ok: bool,
}

impl StrongBundleSplicing {
    pub fn new<R>(base: SplicingModel, f_space: Arc<GradedSpace>, rho: R) -> Self
    where
        R: Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    {
        Self { base, f_space, rho: Arc::new(rho), level_shift_ok: true }
    }

    pub fn rho(&self, v: &DVector<f64>, e: &DVector<f64>) -> DMatrix<f64> {
        (self.rho)(v, e)
    }

    pub fn f_dim(&self) -> usize {
        self.f_space.dim()
    }
}

/// A map `f^c` on `Ô` with `ρ_{r(v,e)} f^c(v,e) = 0`, fiberwise a linear
/// isomorphism `ker π_v → ker ρ_{r(v,e)}`.
#[derive(Clone)]
pub struct Filler {
    fc: CoreMap,
}

/// Sampled filler diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct FillerReport {
    /// Largest `‖ρ f^c‖_0`.
    pub rho_defect: f64,
    /// Largest deviation from linearity in the `ker π_v` component.
    pub linearity_defect: f64,
    /// Smallest singular value of the fiber map `ker π_v → F`, relative to its largest.
    pub min_relative_sigma: f64,
    /// Dimension mismatches between `ker π_v` and `ker ρ` encountered.
    pub dimension_mismatches: usize,
    pub passed: bool,
}

impl Filler {
    pub fn new<F>(fc: F) -> Self
    where
        F: Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        Self { fc: Arc::new(fc) }
    }

    /// Filler `ε ↦ λ(I − π_v)e`, valid when `ρ_{(v,e)} = π_v`.
    pub fn scalar(model: &SplicingModel, lambda: f64) -> Self {
        let m = model.clone();
        Self::new(move |v, e| {
            let p = m.pi_unchecked(v);
            (e - &p * e) * lambda
        })
    }

    pub fn eval(&self, v: &DVector<f64>, e: &DVector<f64>) -> DVector<f64> {
        (self.fc)(v, e)
    }

    pub fn validate(&self, bundle: &StrongBundleSplicing, samples: usize, seed: u64, tol: f64) -> FillerReport {
        let model = &bundle.base;
        let mut r = rng::stream(seed, 2);
        let mut rho_defect: f64 = 0.0;
        let mut linearity_defect: f64 = 0.0;
        let mut min_relative_sigma = f64::INFINITY;
        let mut dimension_mismatches = 0;
        for _ in 0..samples {
            let v = model.sample_parameter(&mut r);
            let e = DVector::from_vec(rng::uniform_vec(&mut r, model.e_dim(), -1.0, 1.0));
            let p = model.pi_unchecked(&v);
            let core_e = &p * &e;
            let rho = bundle.rho(&v, &core_e);
            let out = self.eval(&v, &e);
            rho_defect = rho_defect.max(bundle.f_space.norm_unchecked((&rho * &out).as_slice(), 0));

            let split = svd_split(&p, RANK_CUTOFF);
            let ker_pi = split.kernel;
            let ker_rho = svd_split(&rho, RANK_CUTOFF).kernel;
            if ker_pi.ncols() != ker_rho.ncols() {
                dimension_mismatches += 1;
                continue;
            }
            if ker_pi.ncols() == 0 {
                min_relative_sigma = min_relative_sigma.min(1.0);
                continue;
            }
            let base = self.eval(&v, &core_e);
            let a = DVector::from_vec(rng::uniform_vec(&mut r, ker_pi.ncols(), -1.0, 1.0));
            let b = DVector::from_vec(rng::uniform_vec(&mut r, ker_pi.ncols(), -1.0, 1.0));
            let ea = &ker_pi * &a;
            let eb = &ker_pi * &b;
            let lhs = self.eval(&v, &(&core_e + &ea * 2.0 - &eb)) - &base;
            let rhs = (self.eval(&v, &(&core_e + &ea)) - &base) * 2.0 - (self.eval(&v, &(&core_e + &eb)) - &base);
            linearity_defect = linearity_defect.max(bundle.f_space.norm_unchecked((lhs - rhs).as_slice(), 0));
            let cols: Vec<DVector<f64>> = (0..ker_pi.ncols())
                .map(|j| self.eval(&v, &(&core_e + ker_pi.column(j))) - &base)
                .collect();
            let fiber = DMatrix::from_columns(&cols);
            let sv = linalg::singular_values(&fiber);
            let rel = if sv[0] > 0.0 { sv[sv.len() - 1] / sv[0] } else { 0.0 };
            min_relative_sigma = min_relative_sigma.min(rel);
        }
        let passed = rho_defect <= tol
            && linearity_defect <= tol * 10.0
            && dimension_mismatches == 0
            && min_relative_sigma > RANK_CUTOFF;
        FillerReport { rho_defect, linearity_defect, min_relative_sigma, dimension_mismatches, passed }
    }
}

/// `f̄(v,e) = f(r(v,e)) + f^c(v,e)` on `Ô`, as a section of `Ô ⊲ F`.
#[derive(Clone)]
pub struct FilledSection {
    pub bundle: StrongBundleSplicing,
    f: CoreMap,
    pub filler: Filler,
}

impl FilledSection {
    pub fn parameter_dim(&self) -> usize {
        self.bundle.base.parameter_dim()
    }

    pub fn e_dim(&self) -> usize {
        self.bundle.base.e_dim()
    }

    /// The section `f` on the core.
    pub fn core_section(&self, v: &DVector<f64>, e: &DVector<f64>) -> DVector<f64> {
        (self.f)(v, e)
    }

    pub fn eval_split(&self, v: &DVector<f64>, e: &DVector<f64>) -> DVector<f64> {
        let pe = self.bundle.base.pi_unchecked(v) * e;
        (self.f)(v, &pe) + self.filler.eval(v, e)
    }

    pub fn split_point(&self, x: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let p = self.parameter_dim();
        (x.rows(0, p).into_owned(), x.rows(p, self.e_dim()).into_owned())
    }

    /// Gauss–Newton on `e ↦ f̄(v,e)` with `v` fixed.
    pub fn solve_fiber(&self, v: &DVector<f64>, e0: &DVector<f64>, tol: f64) -> Result<DVector<f64>, SplicingError> {
        let mut e = e0.clone();
        let mut res = f64::INFINITY;
        for _ in 0..100 {
            let val = self.eval_split(v, &e);
            res = val.amax();
            if res <= tol {
                return Ok(e);
            }
            let j = linalg::jacobian_fd(|x| self.eval_split(v, x), &e);
            e -= linalg::lstsq(&j, &val);
        }
        Err(SplicingError::FiberSolve { residual: res })
    }
}

impl Section for FilledSection {
    fn domain_dim(&self) -> usize {
        self.parameter_dim() + self.e_dim()
    }

    fn fiber_dim(&self) -> usize {
        self.bundle.f_dim()
    }

    fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        let (v, e) = self.split_point(x);
        self.eval_split(&v, &e)
    }

    fn quadrant_rank(&self) -> usize {
        self.bundle.base.parameter_space.quadrant_rank()
    }
}

pub fn fill_section<F>(bundle: StrongBundleSplicing, f: F, filler: Filler) -> FilledSection
where
    F: Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
{
    FilledSection { bundle, f: Arc::new(f), filler }
}

/// Block form of `Df̄(q)` in the splitting `(T_qO ⊕ E⁻) → (F⁺ ⊕ F⁻)`.
#[derive(Debug, Clone)]
pub struct BlockReport {
    /// Full Jacobian of `f̄` at `q` in ambient coordinates.
    pub d_fbar: DMatrix<f64>,
    /// `f'(q)` in the basis of `T_qO` and `F⁺`.
    pub f_prime: DMatrix<f64>,
    /// `C = f^c(q)|E⁻ → F⁻`.
    pub c: DMatrix<f64>,
    /// Frobenius norm of the two off-diagonal blocks.
    pub off_diagonal: f64,
    /// Basis of `T_qO` in ambient `V ⊕ E` coordinates.
    pub tangent_basis: DMatrix<f64>,
    pub kernel_fbar: DMatrix<f64>,
    pub kernel_fprime: DMatrix<f64>,
    pub index_fbar: i64,
    pub index_fprime: i64,
    pub surjective_fbar: bool,
    pub surjective_fprime: bool,
    /// Principal-angle defect between `ker Df̄` and the embedded `ker f' ⊕ 0`.
    pub kernel_defect: f64,
}

fn range_basis(m: &DMatrix<f64>) -> DMatrix<f64> {
    svd_split(m, RANK_CUTOFF).range
}

fn kernel(m: &DMatrix<f64>) -> DMatrix<f64> {
    svd_split(m, RANK_CUTOFF).kernel
}

pub fn linearize_filled(fs: &FilledSection, v: &DVector<f64>, e: &DVector<f64>, tol: f64) -> Result<BlockReport, SplicingError> {
    let residual = fs.eval_split(v, e).amax();
    if residual > tol {
        return Err(SplicingError::NotAZero { residual });
    }
    let model = &fs.bundle.base;
    let p = fs.parameter_dim();
    let d = fs.e_dim();
    let x = concat(v, e);
    let j = fs.jacobian(&x);

    let pi = model.pi_unchecked(v);
    let e_plus = range_basis(&pi);
    let e_minus = kernel(&pi);
    let rho = fs.bundle.rho(v, e);
    let f_plus = range_basis(&rho);
    let f_minus = kernel(&rho);

    // T_qO: (δv, D_v(π_v e)δv) for coordinate δv, and (0, a) for a ∈ E⁺.
    let dpi = linalg::jacobian_fd(|w| model.pi_unchecked(w) * e, v);
    let mut tangent = DMatrix::zeros(p + d, p + e_plus.ncols());
    for i in 0..p {
        tangent[(i, i)] = 1.0;
        for r in 0..d {
            tangent[(p + r, i)] = dpi[(r, i)];
        }
    }
    for jcol in 0..e_plus.ncols() {
        for r in 0..d {
            tangent[(p + r, p + jcol)] = e_plus[(r, jcol)];
        }
    }
    let mut minus_embedded = DMatrix::zeros(p + d, e_minus.ncols());
    if e_minus.ncols() > 0 {
        minus_embedded.view_mut((p, 0), (d, e_minus.ncols())).copy_from(&e_minus);
    }
    let domain = hcat(&tangent, &minus_embedded);
    let coeff = split_coefficients(&f_plus, &f_minus)
        .ok_or_else(|| SplicingError::InvalidFiller("F⁺ and F⁻ do not split F".into()))?;
    let coeff_minus = split_coefficients(&f_minus, &f_plus)
        .ok_or_else(|| SplicingError::InvalidFiller("F⁺ and F⁻ do not split F".into()))?;
    let jd = &j * &domain;
    let top = &coeff * &jd;
    let bottom = &coeff_minus * &jd;
    let nt = tangent.ncols();
    let nm = e_minus.ncols();
    let f_prime = top.columns(0, nt).into_owned();
    let upper_right = top.columns(nt, nm).into_owned();
    let lower_left = bottom.columns(0, nt).into_owned();
    let c = bottom.columns(nt, nm).into_owned();
    let off_diagonal = (upper_right.norm_squared() + lower_left.norm_squared()).sqrt();

    let s_fbar = svd_split(&j, RANK_CUTOFF);
    let s_fprime = svd_split(&f_prime, RANK_CUTOFF);
    let kernel_fprime = s_fprime.kernel.clone();
    let embedded = linalg::orthonormalize_oriented(&(&tangent * &kernel_fprime));
    let kernel_defect = if embedded.ncols() == s_fbar.kernel.ncols() && embedded.ncols() > 0 {
        let proj = &s_fbar.kernel * s_fbar.kernel.transpose();
        (&embedded - &proj * &embedded).norm()
    } else if embedded.ncols() == s_fbar.kernel.ncols() {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(BlockReport {
        index_fbar: s_fbar.kernel_dim() as i64 - s_fbar.cokernel_dim() as i64,
        index_fprime: s_fprime.kernel_dim() as i64 - s_fprime.cokernel_dim() as i64,
        surjective_fbar: s_fbar.cokernel_dim() == 0,
        surjective_fprime: s_fprime.cokernel_dim() == 0,
        kernel_fbar: s_fbar.kernel,
        kernel_fprime,
        d_fbar: j,
        f_prime,
        c,
        off_diagonal,
        tangent_basis: tangent,
        kernel_defect,
    })
}

/// `d(x) = #{i < n : |x_i| ≤ tol}`.
pub fn degeneracy_index(x: &DVector<f64>, n: usize, tol: f64) -> usize {
    (0..n.min(x.len())).filter(|&i| x[i].abs() <= tol).count()
}

/// A local face `{y : y_index = 0}` through the point, within `radius`.
#[derive(Debug, Clone, PartialEq)]
pub struct Face {
    pub index: usize,
    /// Outward-pointing constraint normal; the face is `{⟨normal, y⟩ = 0}`.
    pub normal: DVector<f64>,
    pub radius: f64,
}

/// The `d(x)` faces through `x`.
pub fn local_faces(x: &DVector<f64>, n: usize, radius: f64, tol: f64) -> Vec<Face> {
    (0..n.min(x.len()))
        .filter(|&i| x[i].abs() <= tol)
        .map(|i| {
            let mut normal = DVector::zeros(x.len());
            normal[i] = 1.0;
            Face { index: i, normal, radius }
        })
        .collect()
}

/// Orthonormal basis of `T^∂_x = ⋂_j T_x F^j`, the coordinate subspace with
/// every active coordinate frozen.
pub fn boundary_tangent(faces: &[Face], dim: usize) -> DMatrix<f64> {
    let frozen: Vec<usize> = faces.iter().map(|f| f.index).collect();
    let free: Vec<usize> = (0..dim).filter(|i| !frozen.contains(i)).collect();
    let mut basis = DMatrix::zeros(dim, free.len());
    for (j, &i) in free.iter().enumerate() {
        basis[(i, j)] = 1.0;
    }
    basis
}
