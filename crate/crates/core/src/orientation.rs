//! Determinant lines `det T = ∧ker T ⊗ (∧coker T)*` of matrices, their
//! stabilization through a projection, continuation along operator paths and
//! signs of transversal zeros.
//!
//! Sign convention for the exact sequence
//! `0 → ker T → ker PT → (I−P)F → F/R(T) → 0`: with `x` extending a kernel
//! basis `k` to `ker PT`, `y` completing `Tx` to a basis of `(I−P)F` and `z`
//! the fixed basis of `(I−P)F`, the class `k ⊗ c*` maps to
//! `sign det(zᵀ[y | Tx]) · sign det(c-coefficients of y) · [k | x] ⊗ z*`.
//! Placing `y` before `Tx` makes successive stabilizations compose exactly.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::linalg::{self, hcat, svd_split, vcat, RANK_CUTOFF};
use crate::section::Section;

/// Width of the ambiguity band above the rank cutoff.
pub const RANK_BAND: f64 = 10.0;
/// Largest admissible frame jump between grid points.
pub const MAX_FRAME_JUMP: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OrientationError {
    #[error("operator is singular (σ_min = {sigma_min:e})")]
    Singular { sigma_min: f64 },
    #[error("rank ambiguous: a singular value lies within {band}× the cutoff {cutoff:e}")]
    AmbiguousRank { cutoff: f64, band: f64 },
    #[error("P·T is not onto the range of P (σ_min = {sigma_min:e})")]
    NotSurjectiveAfterProjection { sigma_min: f64 },
    #[error("frame jump {jump} at t = {t} exceeds the bound; refine the grid")]
    GridTooCoarse { t: f64, jump: f64 },
    #[error("determinant lines belong to different operators or subspaces")]
    Incomparable,
    #[error("matrix is not a projection (‖P² − P‖ = {defect:e})")]
    NotAProjection { defect: f64 },
}

/// An orientation `sign · ∧kernel ⊗ (∧cokernel)*` of `det T`.
#[derive(Debug, Clone, PartialEq)]
pub struct DeterminantLine {
    /// `T : R^n → R^m` as an `m × n` matrix.
    pub t: DMatrix<f64>,
    pub kernel: DMatrix<f64>,
    /// Columns spanning a complement of the range.
    pub cokernel: DMatrix<f64>,
    pub sign: i8,
    pub cutoff: f64,
}

impl DeterminantLine {
    /// SVD bases with sign `+1`; the natural orientation when `T` is invertible.
    pub fn canonical(t: &DMatrix<f64>) -> Result<Self, OrientationError> {
        let split = svd_split(t, RANK_CUTOFF);
        if split.ambiguous(RANK_BAND) {
            return Err(OrientationError::AmbiguousRank { cutoff: split.cutoff, band: RANK_BAND });
        }
        Ok(Self { t: t.clone(), kernel: split.kernel, cokernel: split.cokernel, sign: 1, cutoff: split.cutoff })
    }

    /// Explicit bases; the kernel is re-orthonormalized keeping its orientation.
    pub fn with_bases(t: DMatrix<f64>, kernel: DMatrix<f64>, cokernel: DMatrix<f64>, sign: i8) -> Self {
        let cutoff = RANK_CUTOFF * linalg::singular_values(&t).first().copied().unwrap_or(0.0);
        Self { t, kernel: linalg::orthonormalize_oriented(&kernel), cokernel, sign, cutoff }
    }

    pub fn is_isomorphism(&self) -> bool {
        self.kernel.ncols() == 0 && self.cokernel.ncols() == 0
    }

    pub fn index(&self) -> i64 {
        self.kernel.ncols() as i64 - self.cokernel.ncols() as i64
    }

    pub fn negated(&self) -> Self {
        Self { sign: -self.sign, ..self.clone() }
    }

    /// Largest `|T k|` over kernel columns.
    pub fn kernel_residual(&self) -> f64 {
        if self.kernel.ncols() == 0 {
            0.0
        } else {
            (&self.t * &self.kernel).amax()
        }
    }

    /// Sign `s` with `other = s · self` as orientations of the same line.
    pub fn relative_sign(&self, other: &DeterminantLine) -> Result<i8, OrientationError> {
        let scale = self.t.amax().max(1.0);
        if self.t.shape() != other.t.shape()
            || (&self.t - &other.t).amax() > 1e-9 * scale
            || self.kernel.ncols() != other.kernel.ncols()
            || self.cokernel.ncols() != other.cokernel.ncols()
        {
            return Err(OrientationError::Incomparable);
        }
        let gk = linalg::lstsq_matrix(&self.kernel, &other.kernel);
        if (&self.kernel * &gk - &other.kernel).amax() > 1e-6 {
            return Err(OrientationError::Incomparable);
        }
        let range = svd_split(&self.t, RANK_CUTOFF).range;
        let coeff = linalg::split_coefficients(&self.cokernel, &range).ok_or(OrientationError::Incomparable)?;
        let gc = coeff * &other.cokernel;
        let (dk, dc) = (linalg::det(&gk), linalg::det(&gc));
        if dk.abs() < 1e-10 || dc.abs() < 1e-10 {
            return Err(OrientationError::Incomparable);
        }
        Ok(self.sign * other.sign * linalg::sign(dk) * linalg::sign(dc))
    }
}

/// Natural orientation of an isomorphism.
pub fn natural_orientation(t: &DMatrix<f64>) -> Result<DeterminantLine, OrientationError> {
    let sv = linalg::singular_values(t);
    let smax = sv.first().copied().unwrap_or(0.0);
    let smin = sv.last().copied().unwrap_or(0.0);
    if t.nrows() != t.ncols() || (t.nrows() > 0 && !(smin > RANK_CUTOFF * smax.max(1.0))) {
        return Err(OrientationError::Singular { sigma_min: smin });
    }
    let n = t.nrows();
    Ok(DeterminantLine {
        t: t.clone(),
        kernel: DMatrix::zeros(n, 0),
        cokernel: DMatrix::zeros(n, 0),
        sign: 1,
        cutoff: RANK_CUTOFF * smax,
    })
}

/// Orthonormal basis of `range(P)` and of `range(I − P)`.
fn projection_bases(p: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>), OrientationError> {
    let defect = (p * p - p).amax();
    if defect > 1e-9 * p.amax().max(1.0) {
        return Err(OrientationError::NotAProjection { defect });
    }
    let m = p.nrows();
    let range = svd_split(p, RANK_CUTOFF).range;
    let comp = svd_split(&(DMatrix::identity(m, m) - p), RANK_CUTOFF).range;
    Ok((range, comp))
}

/// `PT` as a map onto `range(P)` in the basis `u`.
fn projected(u: &DMatrix<f64>, p: &DMatrix<f64>, t: &DMatrix<f64>) -> DMatrix<f64> {
    u.transpose() * p * t
}

fn sigma_min_onto(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    if m.ncols() < m.nrows() {
        return 0.0;
    }
    linalg::singular_values(m).get(m.nrows() - 1).copied().unwrap_or(0.0)
}

/// The natural isomorphism `det T → det PT`, returned as an orientation of
/// `PT : R^n → R^m` with cokernel basis the canonical basis of `(I−P)F`.
pub fn stabilize(dl: &DeterminantLine, p: &DMatrix<f64>) -> Result<DeterminantLine, OrientationError> {
    let t = &dl.t;
    let (u, z) = projection_bases(p)?;
    let pt = projected(&u, p, t);
    let smin = sigma_min_onto(&pt);
    let smax = linalg::singular_values(&pt).first().copied().unwrap_or(0.0);
    if pt.nrows() > 0 && !(smin > RANK_CUTOFF * smax.max(1e-300)) {
        return Err(OrientationError::NotSurjectiveAfterProjection { sigma_min: smin });
    }
    let n = t.ncols();
    let k = linalg::orthonormalize_oriented(&dl.kernel);
    // x: orthonormal complement of k inside ker PT.
    let ker_pt = svd_split(&pt, RANK_CUTOFF).kernel;
    let x = if k.ncols() == 0 {
        ker_pt.clone()
    } else if ker_pt.ncols() == k.ncols() {
        DMatrix::zeros(n, 0)
    } else {
        &ker_pt * linalg::kernel_basis(&(k.transpose() * &ker_pt), RANK_CUTOFF)
    };
    if x.ncols() + k.ncols() != ker_pt.ncols() {
        return Err(OrientationError::Incomparable);
    }
    // y: completes z-coordinates of Tx to a basis of (I−P)F.
    let tx_z = z.transpose() * t * &x;
    let y_z = linalg::orthogonal_complement(&tx_z, z.ncols());
    let y = &z * &y_z;
    let eps = linalg::sign(linalg::det(&hcat(&y_z, &tx_z)));
    // Coefficients of the classes of y in the cokernel basis.
    let range = svd_split(t, RANK_CUTOFF).range;
    if y.ncols() != dl.cokernel.ncols() {
        return Err(OrientationError::Incomparable);
    }
    let coeff = linalg::split_coefficients(&dl.cokernel, &range).ok_or(OrientationError::Incomparable)?;
    let d = linalg::sign(linalg::det(&(coeff * &y)));
    Ok(DeterminantLine {
        t: p * t,
        kernel: hcat(&k, &x),
        cokernel: z,
        sign: dl.sign * eps * d,
        cutoff: dl.cutoff,
    })
}

/// A continuous family `t ↦ T_t` on `[0, 1]`.
#[derive(Clone)]
pub struct OperatorPath {
    f: Arc<dyn Fn(f64) -> DMatrix<f64> + Send + Sync>,
}

impl OperatorPath {
    pub fn new<F>(f: F) -> Self
    where
        F: Fn(f64) -> DMatrix<f64> + Send + Sync + 'static,
    {
        Self { f: Arc::new(f) }
    }

    pub fn at(&self, t: f64) -> DMatrix<f64> {
        (self.f)(t)
    }

    pub fn reversed(&self) -> Self {
        let f = self.f.clone();
        Self::new(move |t| f(1.0 - t))
    }

    /// `(1 − t)A + tB`.
    pub fn segment(a: DMatrix<f64>, b: DMatrix<f64>) -> Self {
        Self::new(move |t| &a * (1.0 - t) + &b * t)
    }
}

/// A certified common projection and the kernel frame field along a grid.
#[derive(Debug, Clone)]
pub struct OrientationTransport {
    pub grid: Vec<f64>,
    pub projection: DMatrix<f64>,
    /// Orthonormal basis of the accumulated cokernel span `C = ker P`.
    pub cokernel_span: DMatrix<f64>,
    pub frames: Vec<DMatrix<f64>>,
    pub min_sigma: f64,
    pub max_jump: f64,
    /// Cokernels added beyond the one at `t = 0`.
    pub refinements: usize,
}

enum Attempt {
    Done(OrientationTransport),
    /// Direction in `F` to add to the cokernel span.
    AddCokernel(DMatrix<f64>),
}

fn cokernel_at(path: &OperatorPath, t: f64) -> DMatrix<f64> {
    svd_split(&path.at(t), RANK_CUTOFF).cokernel
}

/// Left singular direction of the smallest singular value of `PT`, in `F`.
fn weakest_direction(u: &DMatrix<f64>, pt: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = pt.clone().svd(true, false);
    let left = svd.u.expect("left singular vectors");
    let (i, _) = svd.singular_values.iter().enumerate().fold((0, f64::INFINITY), |acc, (i, &s)| {
        if s < acc.1 { (i, s) } else { acc }
    });
    let col = if svd.singular_values.len() < pt.nrows() {
        // Rows exceed columns: any left vector orthogonal to the range works.
        svd_split(pt, RANK_CUTOFF).cokernel.columns(0, 1).into_owned()
    } else {
        left.columns(i, 1).into_owned()
    };
    u * col
}

fn projector_off(c: &DMatrix<f64>, m: usize) -> DMatrix<f64> {
    DMatrix::identity(m, m) - linalg::projector(c, m)
}

fn augmented_det(u: &DMatrix<f64>, p: &DMatrix<f64>, t: &DMatrix<f64>, frame: &DMatrix<f64>) -> f64 {
    linalg::det(&vcat(&projected(u, p, t), &frame.transpose()))
}

fn attempt(
    path: &OperatorPath,
    grid: &[f64],
    c: &DMatrix<f64>,
    start_frame: &dyn Fn(&DMatrix<f64>) -> DMatrix<f64>,
) -> Result<Attempt, OrientationError> {
    let m = path.at(grid[0]).nrows();
    let p = projector_off(c, m);
    let (u, _) = projection_bases(&p)?;
    let mut min_sigma = f64::INFINITY;
    let mut frames = Vec::with_capacity(grid.len());
    let mut max_jump: f64 = 0.0;
    for (i, &t) in grid.iter().enumerate() {
        let tt = path.at(t);
        let pt = projected(&u, &p, &tt);
        let smin = sigma_min_onto(&pt);
        let scale = linalg::singular_values(&tt).first().copied().unwrap_or(0.0).max(1.0);
        if pt.nrows() > 0 && smin <= RANK_CUTOFF * scale {
            return Ok(Attempt::AddCokernel(weakest_direction(&u, &pt)));
        }
        min_sigma = min_sigma.min(smin);
        let basis = svd_split(&pt, RANK_CUTOFF).kernel;
        if i == 0 {
            frames.push(start_frame(&p));
            continue;
        }
        let prev: &DMatrix<f64> = frames.last().expect("frame");
        // A sign change of the augmented determinant inside the step means PT
        // degenerates there.
        let t0 = grid[i - 1];
        let d0 = augmented_det(&u, &p, &path.at(t0), prev);
        let d1 = augmented_det(&u, &p, &tt, prev);
        if d0.signum() != d1.signum() || d1 == 0.0 {
            let (mut lo, mut hi) = (t0, t);
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                if augmented_det(&u, &p, &path.at(mid), prev).signum() == d0.signum() {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let star = 0.5 * (lo + hi);
            let pt_star = projected(&u, &p, &path.at(star));
            if sigma_min_onto(&pt_star) <= 1e-6 * scale {
                return Ok(Attempt::AddCokernel(weakest_direction(&u, &pt_star)));
            }
            return Err(OrientationError::GridTooCoarse { t, jump: f64::INFINITY });
        }
        let g = basis.transpose() * prev;
        let align = linalg::singular_values(&g).last().copied().unwrap_or(1.0);
        if align < MAX_FRAME_JUMP {
            return Err(OrientationError::GridTooCoarse { t, jump: f64::INFINITY });
        }
        let next = linalg::orthonormalize_oriented(&(&basis * g));
        let jump = if next.ncols() == 0 { 0.0 } else { (&next - prev).norm() };
        if jump >= MAX_FRAME_JUMP {
            return Err(OrientationError::GridTooCoarse { t, jump });
        }
        max_jump = max_jump.max(jump);
        frames.push(next);
    }
    Ok(Attempt::Done(OrientationTransport {
        grid: grid.to_vec(),
        projection: p,
        cokernel_span: c.clone(),
        frames,
        min_sigma,
        max_jump,
        refinements: 0,
    }))
}

/// Builds the common projection (starting from the cokernel at `t = 0` and
/// adding cokernels where `PT_t` degenerates) and transports `start` along a
/// uniform grid with `steps` intervals. Returns the transport and the
/// stabilized start.
pub fn transport(
    path: &OperatorPath,
    steps: usize,
    start: &DeterminantLine,
) -> Result<(OrientationTransport, DeterminantLine), OrientationError> {
    let steps = steps.max(1);
    let grid: Vec<f64> = (0..=steps).map(|i| i as f64 / steps as f64).collect();
    let m = start.t.nrows();
    let mut c = cokernel_at(path, 0.0);
    let mut refinements = 0;
    loop {
        let p = projector_off(&c, m);
        let stab = stabilize(start, &p)?;
        let frame0 = stab.kernel.clone();
        match attempt(path, &grid, &c, &|_| frame0.clone())? {
            Attempt::Done(mut tr) => {
                tr.refinements = refinements;
                return Ok((tr, stab));
            }
            Attempt::AddCokernel(extra) => {
                let merged = hcat(&c, &extra);
                let next = svd_split(&merged, RANK_CUTOFF).range;
                if next.ncols() <= c.ncols() {
                    return Err(OrientationError::NotSurjectiveAfterProjection { sigma_min: 0.0 });
                }
                c = next;
                refinements += 1;
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Continuation {
    /// Sign of the transported orientation relative to `end`.
    pub sign: i8,
    pub transport: OrientationTransport,
}

/// Transports the orientation `start` of `det T_0` to `det T_1` and compares
/// it with `end`: end sign = start sign × frame-transport sign × the
/// stabilization signs at both ends.
pub fn continue_orientation_between(
    path: &OperatorPath,
    steps: usize,
    start: &DeterminantLine,
    end: &DeterminantLine,
) -> Result<Continuation, OrientationError> {
    let (tr, stab0) = transport(path, steps, start)?;
    let stab1 = stabilize(end, &tr.projection)?;
    let carried = DeterminantLine {
        t: stab1.t.clone(),
        kernel: tr.frames.last().expect("frame").clone(),
        cokernel: stab1.cokernel.clone(),
        sign: stab0.sign,
        cutoff: stab1.cutoff,
    };
    Ok(Continuation { sign: stab1.relative_sign(&carried)?, transport: tr })
}

/// `start_sign` relative to the canonical line of `T_0`, transported to a sign
/// relative to the canonical line of `T_1`.
pub fn continue_orientation(path: &OperatorPath, steps: usize, start_sign: i8) -> Result<i8, OrientationError> {
    let mut start = DeterminantLine::canonical(&path.at(0.0))?;
    start.sign = start_sign;
    let end = DeterminantLine::canonical(&path.at(1.0))?;
    Ok(continue_orientation_between(path, steps, &start, &end)?.sign)
}

/// Orientation of `ker J` induced by a surjection `J : R^n → R^m` and the
/// standard orientations: `K` is positive iff `[Jᵀ | K]` is a positive basis.
/// For an isomorphism this is `sign det J`.
pub fn kernel_orientation(jacobian: &DMatrix<f64>, kernel: &DMatrix<f64>) -> i8 {
    linalg::sign(linalg::det(&hcat(&jacobian.transpose(), kernel)))
}

/// Orientation reference for zero signs.
#[derive(Debug, Clone, PartialEq)]
pub enum Reference {
    /// Natural orientation of the identity, continued along `(1−t)I + t f'(x)`;
    /// for a trivial bundle over `R^n` this is the standard orientation.
    Canonical,
    /// Natural orientation of `f'(base)`, continued along the segment of
    /// linearizations from `base` to `x`.
    NaturalAt(DVector<f64>),
}

/// Grid used by [`sign_of_zero`].
pub const SIGN_STEPS: usize = 64;

/// `+1` iff the reference orientation continued to `x` agrees with the
/// natural orientation of the isomorphism `f'(x)`.
pub fn sign_of_zero<S: Section + ?Sized>(f: &S, x: &DVector<f64>, reference: &Reference) -> Result<i8, OrientationError> {
    let jx = f.jacobian(x);
    let end = natural_orientation(&jx)?;
    let (path, start) = match reference {
        Reference::Canonical => {
            let n = jx.nrows();
            (OperatorPath::segment(DMatrix::identity(n, n), jx.clone()), natural_orientation(&DMatrix::identity(n, n))?)
        }
        Reference::NaturalAt(base) => {
            let jb = f.jacobian(base);
            let start = natural_orientation(&jb)?;
            (OperatorPath::segment(jb, jx.clone()), start)
        }
    };
    let mut steps = SIGN_STEPS;
    loop {
        match continue_orientation_between(&path, steps, &start, &end) {
            Err(OrientationError::GridTooCoarse { .. }) if steps < 1 << 14 => steps *= 4,
            other => return other.map(|c| c.sign),
        }
    }
}
