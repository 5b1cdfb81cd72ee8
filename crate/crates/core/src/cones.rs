//! Finite-dimensional subspaces `N ⊂ R^n ⊕ W` relative to the partial
//! quadrant `C = [0,∞)^n ⊕ W`: neatness, good position, extreme rays of
//! `C ∩ N` and its recognition as a partial quadrant.
//!
//! `N` is stored by a basis `B` (columns). Writing `x = B y`, membership of
//! `x` in `C` reads `G y ≥ 0` with `G` the first `n` rows of `B`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::graded_space::GradedSpace;
use crate::linalg::{self, hcat, svd_split, RANK_CUTOFF};
use crate::lp;
use crate::rng;

/// Zero test for coordinates of unit-scale vectors.
pub const CONE_TOL: f64 = 1e-9;

/// Powers `2^0 … 2^-10` tried for the good-position constant.
pub const C_LADDER: usize = 11;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConeError {
    #[error("basis of N has rank {rank} < {cols} columns")]
    DependentBasis { rank: usize, cols: usize },
    #[error("basis has {rows} rows but the ambient space has dimension {dim}")]
    AmbientMismatch { rows: usize, dim: usize },
    #[error("C ∩ N is not pointed; lineality space has dimension {}", lineality.ncols())]
    NotPointed { lineality: DMatrix<f64> },
    #[error("C ∩ N has empty interior in N")]
    EmptyInterior,
    #[error("inconclusive: {0}")]
    Inconclusive(String),
}

/// A subspace `N` of a graded space carrying the quadrant `[0,∞)^n ⊕ W`.
#[derive(Debug, Clone)]
pub struct SubspaceInQuadrant {
    pub ambient: Arc<GradedSpace>,
    pub basis: DMatrix<f64>,
}

impl SubspaceInQuadrant {
    pub fn new(ambient: Arc<GradedSpace>, basis: DMatrix<f64>) -> Result<Self, ConeError> {
        if basis.nrows() != ambient.dim() {
            return Err(ConeError::AmbientMismatch { rows: basis.nrows(), dim: ambient.dim() });
        }
        let rank = linalg::rank(&basis, RANK_CUTOFF);
        if rank < basis.ncols() || basis.iter().any(|x| !x.is_finite()) {
            return Err(ConeError::DependentBasis { rank, cols: basis.ncols() });
        }
        Ok(Self { ambient, basis })
    }

    /// Subspace of `R^n ⊕ R^w` with unit weights and quadrant rank `n`.
    pub fn flat(n: usize, w: usize, basis: DMatrix<f64>) -> Result<Self, ConeError> {
        let space = GradedSpace::with_weights(vec![1.0; n + w], 1, n).expect("valid space");
        Self::new(Arc::new(space), basis)
    }

    pub fn n(&self) -> usize {
        self.ambient.quadrant_rank()
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient.dim()
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    /// `G`: the constrained rows of the basis.
    pub fn constraint_block(&self) -> DMatrix<f64> {
        self.basis.rows(0, self.n()).into_owned()
    }

    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        let scale = linalg::l1_norm(x).max(1.0);
        (0..self.n()).all(|i| x[i] >= -tol * scale)
    }

    /// Basis of `N ∩ ({0}^n ⊕ W)`, the lineality space of `C ∩ N`.
    pub fn lineality(&self) -> DMatrix<f64> {
        let k = svd_split(&self.constraint_block(), RANK_CUTOFF).kernel;
        linalg::orthonormalize_oriented(&(&self.basis * k))
    }

    /// Coefficient basis `Ṽ` of the complement `Ñ = B·Ṽ` of `N ∩ W` in `N`
    /// (orthogonal in coefficient space).
    fn tilde_coefficients(&self) -> DMatrix<f64> {
        svd_split(&self.constraint_block(), RANK_CUTOFF).coimage
    }

    /// Basis of `Ñ` in ambient coordinates.
    pub fn tilde_basis(&self) -> DMatrix<f64> {
        &self.basis * self.tilde_coefficients()
    }

    /// Least-squares coefficients of `x` in the basis (exact for `x ∈ N`).
    pub fn coefficients(&self, x: &DVector<f64>) -> DVector<f64> {
        linalg::lstsq(&self.basis, x)
    }
}

/// `σ_a = {i < n : |a_i| ≤ tol}`.
pub fn sigma_set(a: &DVector<f64>, n: usize, tol: f64) -> Vec<usize> {
    (0..n.min(a.len())).filter(|&i| a[i].abs() <= tol).collect()
}

/// Whether `N ∩ C` has nonempty interior in `N`: LP `G_i y ≥ 1` over the
/// rows of `G` that do not vanish identically.
pub fn interior_point(sub: &SubspaceInQuadrant) -> Option<DVector<f64>> {
    let g = sub.constraint_block();
    let rows: Vec<usize> = (0..g.nrows()).filter(|&i| g.row(i).amax() > CONE_TOL).collect();
    if rows.is_empty() {
        return Some(DVector::zeros(sub.dim()));
    }
    let a = DMatrix::from_fn(rows.len(), g.ncols(), |i, j| g[(rows[i], j)]);
    let y = lp::feasible_inequalities(&a, &DVector::from_element(rows.len(), 1.0))?;
    Some(&sub.basis * y)
}

#[derive(Debug, Clone)]
pub struct NeatReport {
    pub neat: bool,
    /// Basis of a complement `{0}^n ⊕ Q` of `N` when neat.
    pub complement: Option<DMatrix<f64>>,
}

/// Neat iff `p : N → R^n` is onto; the complement is `{0}^n ⊕ Q` with `Q`
/// the orthogonal complement of `N ∩ W` inside `W`.
pub fn is_neat(sub: &SubspaceInQuadrant) -> NeatReport {
    let n = sub.n();
    let d = sub.ambient_dim();
    if linalg::rank(&sub.constraint_block(), RANK_CUTOFF) < n || (n > 0 && sub.constraint_block().amax() == 0.0) {
        return NeatReport { neat: false, complement: None };
    }
    let lin = sub.lineality();
    let w = d - n;
    let lin_w = lin.rows(n, w).into_owned();
    let q = linalg::orthogonal_complement(&lin_w, w);
    let mut comp = DMatrix::zeros(d, q.ncols());
    if q.ncols() > 0 {
        comp.view_mut((n, 0), (w, q.ncols())).copy_from(&q);
    }
    NeatReport { neat: true, complement: Some(comp) }
}

/// Generators of `C ∩ N` as a pointed cone, or its lineality when not pointed.
#[derive(Debug, Clone)]
pub struct PolyhedralCone {
    pub carrier: DMatrix<f64>,
    /// Unit extreme-ray generators as columns (ambient coordinates).
    pub rays: DMatrix<f64>,
    pub pointed: bool,
    pub lineality: DMatrix<f64>,
}

/// Extreme rays of `{z : H z ≥ 0}` for `H` of full column rank, as columns
/// in `z`-coordinates, unit length in the metric `‖M z‖₂`.
fn rays_of_injective(h: &DMatrix<f64>, metric: &DMatrix<f64>) -> Vec<DVector<f64>> {
    let k = h.ncols();
    let rows = h.nrows();
    if k == 0 {
        return Vec::new();
    }
    let mut found: Vec<DVector<f64>> = Vec::new();
    let push = |z: DVector<f64>, found: &mut Vec<DVector<f64>>| {
        let scale = (metric * &z).norm();
        if scale <= 1e-14 {
            return;
        }
        let z = z / scale;
        if !found.iter().any(|f| (f - &z).amax() < 1e-7) {
            found.push(z);
        }
    };
    let hz_ok = |z: &DVector<f64>| {
        let hz = h * z;
        let s = hz.amax().max(1e-300);
        hz.iter().all(|&v| v >= -1e-9 * s)
    };
    let mut subset: Vec<usize> = (0..k.saturating_sub(1)).collect();
    if k - 1 > rows {
        return Vec::new();
    }
    loop {
        let sub = DMatrix::from_fn(subset.len(), k, |i, j| h[(subset[i], j)]);
        let split = svd_split(&sub, RANK_CUTOFF);
        // The empty subset (k = 1) has the whole line as kernel.
        let kernel = if subset.is_empty() { DMatrix::identity(k, k) } else { split.kernel };
        if kernel.ncols() == 1 {
            let z = kernel.column(0).into_owned();
            if hz_ok(&z) {
                push(z.clone(), &mut found);
            }
            let neg = -z;
            if hz_ok(&neg) {
                push(neg, &mut found);
            }
        }
        // Next (k−1)-subset in lexicographic order.
        let m = subset.len();
        let mut i = m;
        loop {
            if i == 0 {
                return found;
            }
            i -= 1;
            if subset[i] < rows - (m - i) {
                subset[i] += 1;
                for j in i + 1..m {
                    subset[j] = subset[j - 1] + 1;
                }
                break;
            }
        }
        if m == 0 {
            return found;
        }
    }
}

/// Extreme rays of the pointed cone `C ∩ N`.
pub fn extreme_rays(sub: &SubspaceInQuadrant) -> Result<PolyhedralCone, ConeError> {
    let lin = sub.lineality();
    if lin.ncols() > 0 {
        return Err(ConeError::NotPointed { lineality: lin });
    }
    let g = sub.constraint_block();
    let rays = rays_of_injective(&g, &sub.basis);
    let mut cols: Vec<DVector<f64>> = rays.iter().map(|z| &sub.basis * z).collect();
    // Extremality by LP: a generator must not be a nonnegative combination of the others.
    let all = cols.clone();
    cols.retain(|r| {
        let others: Vec<DVector<f64>> = all.iter().filter(|o| (*o - r).amax() > 1e-12).cloned().collect();
        if others.is_empty() {
            return true;
        }
        lp::nonneg_combination(&DMatrix::from_columns(&others), r).is_err()
    });
    let d = sub.ambient_dim();
    let rays = if cols.is_empty() { DMatrix::zeros(d, 0) } else { DMatrix::from_columns(&cols) };
    Ok(PolyhedralCone { carrier: sub.basis.clone(), rays, pointed: true, lineality: DMatrix::zeros(d, 0) })
}

#[derive(Debug, Clone)]
pub struct QuadrantRecognition {
    pub is_quadrant: bool,
    pub rays: DMatrix<f64>,
    /// Coefficient map `N → R^{dim N}` sending the rays to the standard basis,
    /// acting on ambient vectors of `N`; present when `is_quadrant`.
    pub iso: Option<DMatrix<f64>>,
}

pub fn is_quadrant(sub: &SubspaceInQuadrant) -> Result<QuadrantRecognition, ConeError> {
    if interior_point(sub).is_none() {
        return Err(ConeError::EmptyInterior);
    }
    let cone = extreme_rays(sub)?;
    let d = sub.dim();
    let independent = cone.rays.ncols() == d && linalg::rank(&cone.rays, RANK_CUTOFF) == d;
    let iso = if independent {
        let coeffs = linalg::lstsq_matrix(&sub.basis, &cone.rays);
        coeffs.try_inverse().map(|inv| inv * linalg::pinv(&sub.basis))
    } else {
        None
    };
    Ok(QuadrantRecognition { is_quadrant: independent && iso.is_some(), rays: cone.rays, iso })
}

/// Deterministic sample of points of `C ∩ N`: Gaussian rejection plus
/// perturbations of an interior point.
pub fn sample_cone_points(sub: &SubspaceInQuadrant, count: usize, seed: u64) -> Vec<DVector<f64>> {
    let Some(center) = interior_point(sub) else { return Vec::new() };
    let center_c = sub.coefficients(&center);
    let k = sub.dim();
    let mut r = rng::stream(seed, 31);
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0usize;
    while out.len() < count && attempts < 1000 * count.max(1) {
        attempts += 1;
        let g = DVector::from_iterator(k, (0..k).map(|_| rng::normal(&mut r)));
        let y = if attempts % 2 == 0 {
            g
        } else {
            let scale = rng::uniform(&mut r, 0.0, 2.0) * center_c.norm().max(1e-3);
            &center_c * rng::uniform(&mut r, 0.1, 2.0) + g * scale
        };
        let x = &sub.basis * y;
        if sub.contains(&x, 0.0) {
            out.push(x);
        }
    }
    out
}

/// Largest residual of representing sampled cone points as nonnegative
/// combinations of the rays (Krein–Milman reconstruction).
pub fn reconstruction_residual(rays: &DMatrix<f64>, points: &[DVector<f64>]) -> f64 {
    points
        .iter()
        .map(|x| match lp::nonneg_combination(rays, x) {
            Ok(lambda) => (rays * lambda - x).amax() / linalg::l1_norm(x).max(1.0),
            Err(res) => res.max(f64::MIN_POSITIVE) + 1.0,
        })
        .fold(0.0, f64::max)
}

/// Sampling plan for the good-position equivalence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositionGrid {
    pub samples: usize,
    pub seed: u64,
}

impl Default for PositionGrid {
    fn default() -> Self {
        Self { samples: 10_000, seed: rng::DEFAULT_SEED }
    }
}

#[derive(Debug, Clone)]
pub struct GoodPosition {
    pub ok: bool,
    pub c: f64,
    pub complement: Option<DMatrix<f64>>,
    pub neat: bool,
    pub samples_checked: usize,
    pub reason: String,
}

impl GoodPosition {
    fn fail(reason: &str) -> Self {
        Self { ok: false, c: 0.0, complement: None, neat: false, samples_checked: 0, reason: reason.into() }
    }
}

/// Points of `N` concentrated near the faces of `C ∩ N`, plus generic points.
fn position_samples(sub: &SubspaceInQuadrant, count: usize, r: &mut rng::Stream) -> Vec<DVector<f64>> {
    let k = sub.dim();
    let tilde = sub.tilde_coefficients();
    let lin = svd_split(&sub.constraint_block(), RANK_CUTOFF).kernel;
    let h = sub.constraint_block() * &tilde;
    let rays: Vec<DVector<f64>> = rays_of_injective(&h, &(&sub.basis * &tilde)).iter().map(|z| &tilde * z).collect();
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let mut y = DVector::zeros(k);
        if i % 3 == 0 || rays.is_empty() {
            for j in 0..k {
                y[j] = rng::normal(r);
            }
        } else {
            // Random face: nonnegative combination of a random subset of rays.
            for ray in &rays {
                if rng::uniform(r, 0.0, 1.0) < 0.5 {
                    y += ray * rng::uniform(r, 0.0, 2.0);
                }
            }
            if i % 3 == 2 {
                y = -y;
            }
        }
        for j in 0..lin.ncols() {
            y += lin.column(j) * rng::normal(r);
        }
        out.push(&sub.basis * y);
    }
    out
}

/// Sampled check of `‖m‖ ≤ c‖n‖ ⇒ (n + m ∈ C ⇔ n ∈ C)` for `m` in the span
/// of `complement`; returns the first counterexample index.
fn equivalence_holds(
    sub: &SubspaceInQuadrant,
    complement: &DMatrix<f64>,
    c: f64,
    grid: &PositionGrid,
) -> Result<usize, usize> {
    let mut r = rng::stream(grid.seed, 41);
    let points = position_samples(sub, grid.samples, &mut r);
    let tol = 1e-10;
    for (i, n) in points.iter().enumerate() {
        let nn = sub.ambient.norm_unchecked(n.as_slice(), 0);
        if nn == 0.0 || complement.ncols() == 0 {
            continue;
        }
        let dir = complement * DVector::from_iterator(complement.ncols(), (0..complement.ncols()).map(|_| rng::normal(&mut r)));
        let dn = sub.ambient.norm_unchecked(dir.as_slice(), 0);
        if dn == 0.0 {
            continue;
        }
        let u = if i % 7 == 0 { 1.0 } else { rng::uniform(&mut r, 0.0, 1.0) };
        let m = dir * (u * c * nn / dn);
        if sub.contains(&(n + &m), tol) != sub.contains(n, tol) {
            return Err(i);
        }
    }
    Ok(points.len())
}

/// Searches a good complement and constant. Neat subspaces short-circuit to
/// `c = 1` with the neat complement (still grid-checked).
pub fn is_good_position(
    sub: &SubspaceInQuadrant,
    candidates: &[DMatrix<f64>],
    grid: &PositionGrid,
) -> Result<GoodPosition, ConeError> {
    if interior_point(sub).is_none() {
        return Ok(GoodPosition::fail("C ∩ N has empty interior in N"));
    }
    let neat = is_neat(sub);
    if let Some(comp) = neat.complement {
        return match equivalence_holds(sub, &comp, 1.0, grid) {
            Ok(count) => Ok(GoodPosition {
                ok: true,
                c: 1.0,
                complement: Some(comp),
                neat: true,
                samples_checked: count,
                reason: "neat".into(),
            }),
            Err(i) => Ok(GoodPosition {
                ok: false,
                c: 1.0,
                complement: Some(comp),
                neat: true,
                samples_checked: i,
                reason: format!("neat complement failed at sample {i}"),
            }),
        };
    }
    let d = sub.ambient_dim();
    let mut all = vec![linalg::orthogonal_complement(&sub.basis, d)];
    all.extend(candidates.iter().cloned());
    for comp in &all {
        if comp.ncols() + sub.dim() != d || linalg::rank(&hcat(&sub.basis, comp), RANK_CUTOFF) != d {
            continue;
        }
        for j in 0..C_LADDER {
            let c = 0.5f64.powi(j as i32);
            if let Ok(count) = equivalence_holds(sub, comp, c, grid) {
                return Ok(GoodPosition {
                    ok: true,
                    c,
                    complement: Some(comp.clone()),
                    neat: false,
                    samples_checked: count,
                    reason: "grid certified".into(),
                });
            }
        }
    }
    Err(ConeError::Inconclusive(format!("{} complement candidates exhausted", all.len())))
}

/// `(N, C ∩ N) ≅ (R^{dim N}, [0,∞)^{q} ⊕ R^{dim N − q})`.
#[derive(Debug, Clone)]
pub struct QuadrantStructure {
    /// `Σ`, the union of `σ_a` over extreme-ray generators of `C ∩ Ñ`.
    pub sigma: Vec<usize>,
    /// Basis of `Ñ` (ambient coordinates).
    pub ntilde: DMatrix<f64>,
    /// Basis of `N ∩ W`.
    pub lineality: DMatrix<f64>,
    /// Extreme-ray generators of `C ∩ Ñ`.
    pub rays: DMatrix<f64>,
    /// Number of constrained standard coordinates: `#Σ`, or 1 when `Σ = ∅`
    /// and `Ñ` is a single ray.
    pub quadrant_rank: usize,
    /// Maps ambient vectors of `N` to standard coordinates.
    pub to_standard: DMatrix<f64>,
    /// Maps standard coordinates to ambient vectors of `N`.
    pub from_standard: DMatrix<f64>,
    /// Whether the second case (`Ñ ⊂ R^{Σᶜ} ⊕ W`) occurred.
    pub single_ray_case: bool,
}

impl QuadrantStructure {
    pub fn dim(&self) -> usize {
        self.from_standard.ncols()
    }

    pub fn to_standard(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.to_standard * x
    }

    pub fn from_standard(&self, s: &DVector<f64>) -> DVector<f64> {
        &self.from_standard * s
    }

    pub fn in_standard_quadrant(&self, s: &DVector<f64>, tol: f64) -> bool {
        (0..self.quadrant_rank).all(|i| s[i] >= -tol)
    }

    /// Active constraints of a standard-coordinate point.
    pub fn active(&self, s: &DVector<f64>, tol: f64) -> usize {
        (0..self.quadrant_rank).filter(|&i| s[i].abs() <= tol).count()
    }
}

/// Builds `Σ`, `Ñ` and the isomorphism onto a standard partial quadrant.
pub fn quadrant_structure(sub: &SubspaceInQuadrant, position: &GoodPosition) -> Result<QuadrantStructure, ConeError> {
    if !position.ok {
        return Err(ConeError::Inconclusive(format!("good position not certified: {}", position.reason)));
    }
    let n = sub.n();
    let tilde_c = sub.tilde_coefficients();
    let ntilde = &sub.basis * &tilde_c;
    let lineality = sub.lineality();
    let h = sub.constraint_block() * &tilde_c;
    let rays_z = rays_of_injective(&h, &ntilde);
    let rays: Vec<DVector<f64>> = rays_z.iter().map(|z| &ntilde * z).collect();
    let mut sigma: Vec<usize> = rays.iter().flat_map(|a| sigma_set(a, n, CONE_TOL)).collect();
    sigma.sort_unstable();
    sigma.dedup();
    let kt = ntilde.ncols();
    let d = sub.ambient_dim();
    let ray_mat = if rays.is_empty() { DMatrix::zeros(d, 0) } else { DMatrix::from_columns(&rays) };

    // p : Ñ → R^Σ in z-coordinates.
    let h_sigma = DMatrix::from_fn(sigma.len(), kt, |i, j| h[(sigma[i], j)]);
    let case_one = sigma.len() == kt && linalg::rank(&h_sigma, RANK_CUTOFF) == kt;
    let (quadrant_cols, quadrant_rank, single_ray_case) = if case_one {
        let inv = h_sigma
            .clone()
            .try_inverse()
            .ok_or_else(|| ConeError::Inconclusive("p : Ñ → R^Σ not invertible".into()))?;
        (&ntilde * inv, sigma.len(), false)
    } else if sigma.is_empty() && kt == 1 && rays.len() == 1 {
        (ray_mat.clone(), 1, true)
    } else {
        return Err(ConeError::Inconclusive(format!(
            "#Σ = {} but dim Ñ = {}; C ∩ N is not a partial quadrant on this certificate",
            sigma.len(),
            kt
        )));
    };
    let from_standard = hcat(&quadrant_cols, &lineality);
    let to_standard = linalg::pinv(&from_standard);
    Ok(QuadrantStructure {
        sigma,
        ntilde,
        lineality,
        rays: ray_mat,
        quadrant_rank,
        to_standard,
        from_standard,
        single_ray_case,
    })
}

/// Largest violation when mapping samples of `C ∩ N` to the standard
/// quadrant and standard samples back into `C ∩ N`, and the round-trip error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StructureCheck {
    pub forward_violation: f64,
    pub backward_violation: f64,
    pub round_trip: f64,
}

pub fn check_structure(sub: &SubspaceInQuadrant, qs: &QuadrantStructure, samples: usize, seed: u64) -> StructureCheck {
    let pts = sample_cone_points(sub, samples, seed);
    let mut forward: f64 = 0.0;
    let mut round: f64 = 0.0;
    for x in &pts {
        let s = qs.to_standard(x);
        for i in 0..qs.quadrant_rank {
            forward = forward.max(-s[i] / linalg::l1_norm(x).max(1.0));
        }
        round = round.max((qs.from_standard(&s) - x).amax() / linalg::l1_norm(x).max(1.0));
    }
    let mut r = rng::stream(seed, 43);
    let mut backward: f64 = 0.0;
    for _ in 0..samples {
        let s = DVector::from_iterator(
            qs.dim(),
            (0..qs.dim()).map(|i| if i < qs.quadrant_rank { rng::uniform(&mut r, 0.0, 2.0) } else { rng::uniform(&mut r, -2.0, 2.0) }),
        );
        let x = qs.from_standard(&s);
        for i in 0..sub.n() {
            backward = backward.max(-x[i] / linalg::l1_norm(&x).max(1.0));
        }
        round = round.max((qs.to_standard(&x) - &s).amax() / linalg::l1_norm(&s).max(1.0));
    }
    StructureCheck { forward_violation: forward.max(0.0), backward_violation: backward.max(0.0), round_trip: round }
}
