//! Good parametrizations `Γ(n) = q + n + A(n)` of zero sets near interior
//! and boundary points, with recentring, pushforward, transition maps and
//! atlases.
//!
//! A chart stores a kernel basis `K` of `f'(q)` and a complement basis `C`;
//! `n = Kν` with coordinates `ν`, and `A(ν) ∈ span C`. All realizations are
//! evaluated lazily.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use parking_lot::Mutex;
use thiserror::Error;

use crate::cones::{self, ConeError, PositionGrid, QuadrantStructure, SubspaceInQuadrant};
use crate::linalg::{self, hcat, jacobian_fd, jacobian_fd_step, svd_split, RANK_CUTOFF};
use crate::rng;
use crate::section::{DynSection, MatFn, Section, VecFn};
use crate::splicing::degeneracy_index;
use crate::DEFAULT_TOL;

/// Quantization of cache keys.
pub const CACHE_QUANTUM: f64 = 1e-12;
/// Accepted Newton residual for `A(ν)`.
pub const NEWTON_ACCEPT: f64 = 1e-11;
/// Central-difference step for `DA`.
pub const DA_STEP: f64 = 1e-5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolutionError {
    #[error("base point is not a zero: residual {residual:e}")]
    NotAZero { residual: f64 },
    #[error("linearization not surjective: σ_min = {sigma_min:e}, σ_max = {sigma_max:e}")]
    NotSurjective { sigma_min: f64, sigma_max: f64 },
    #[error("Newton solve for A failed: residual {residual:e} after {iterations} iterations")]
    NonConvergence { residual: f64, iterations: usize },
    #[error("kernel not certified in good position: {0}")]
    PositionNotCertified(String),
    #[error("section not defined outside the quadrant along coordinate {index}")]
    NotExtendable { index: usize },
    #[error("no radius down to {radius:e} passes the chart checks")]
    DomainExhausted { radius: f64 },
    #[error("point outside the chart domain")]
    OutsideDomain,
    #[error("shared zero not in both chart images (mismatch {mismatch:e})")]
    NoOverlap { mismatch: f64 },
    #[error("base map has singular Jacobian: σ_min = {sigma_min:e}")]
    SingularMap { sigma_min: f64 },
    #[error(transparent)]
    Cones(#[from] ConeError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChartConfig {
    pub radius: f64,
    pub samples: usize,
    pub seed: u64,
    pub max_halvings: usize,
    pub zero_tol: f64,
}

impl Default for ChartConfig {
    fn default() -> Self {
        Self { radius: 0.5, samples: 64, seed: rng::DEFAULT_SEED, max_halvings: 20, zero_tol: 1e-9 }
    }
}

/// Thresholds of [`GoodParametrization::verify`].
pub const A0_TOL: f64 = 1e-9;
pub const DA0_TOL: f64 = 1e-6;
pub const RESIDUAL_TOL: f64 = 1e-8;
pub const SURJECTIVITY_RATIO: f64 = 1e-8;
pub const TRANSPORT_TOL: f64 = 1e-6;

#[derive(Debug, Clone)]
pub enum ChartDomain {
    /// Euclidean ball of coordinates.
    Ball,
    /// Ball intersected with `ν_i ≥ 0` for `i < structure.quadrant_rank`.
    Quadrant { structure: QuadrantStructure, active: Vec<usize> },
}

impl ChartDomain {
    pub fn quadrant_rank(&self) -> usize {
        match self {
            ChartDomain::Ball => 0,
            ChartDomain::Quadrant { structure, .. } => structure.quadrant_rank,
        }
    }
}

/// A bundle isomorphism over `φ`; `fiber(x)` acts on the fiber over `x`.
#[derive(Clone)]
pub struct BundleIso {
    pub phi: VecFn,
    pub phi_inv: VecFn,
    pub fiber: Option<MatFn>,
}

impl BundleIso {
    pub fn base_map<F, G>(phi: F, phi_inv: G) -> Self
    where
        F: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        G: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        Self { phi: Arc::new(phi), phi_inv: Arc::new(phi_inv), fiber: None }
    }

    /// Linear base map `x ↦ Mx`.
    pub fn linear(m: DMatrix<f64>) -> Option<Self> {
        let inv = m.clone().try_inverse()?;
        Some(Self::base_map(move |x| &m * x, move |y| &inv * y))
    }
}

/// `g(x') = Φ(φ⁻¹x')·f(φ⁻¹x')`.
struct Pushforward {
    f: DynSection,
    iso: BundleIso,
}

impl Section for Pushforward {
    fn domain_dim(&self) -> usize {
        self.f.domain_dim()
    }

    fn fiber_dim(&self) -> usize {
        self.f.fiber_dim()
    }

    fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        let y = (self.iso.phi_inv)(x);
        let v = self.f.eval(&y);
        match &self.iso.fiber {
            Some(m) => m(&y) * v,
            None => v,
        }
    }

    fn quadrant_rank(&self) -> usize {
        self.f.quadrant_rank()
    }
}

#[derive(Clone)]
enum Realization {
    /// Damped Newton for `f(q + Kν + Cy) = 0` in `y`.
    Direct,
    /// `A'(k) = A(ν₀ + k) − A(ν₀) − DA(ν₀)k`.
    Shifted { base: Arc<GoodParametrization>, nu0: DVector<f64>, da0: DMatrix<f64> },
    /// `A'(n') = φ(Γ(τ⁻¹ n')) − q' − K'n'` with `τ(ν) = P'(φ(Γ(ν)) − q')`.
    Pushforward { base: Arc<GoodParametrization>, phi: VecFn },
}

type Cache = Arc<Mutex<HashMap<Vec<i64>, DVector<f64>>>>;

/// Graph chart of a zero set.
#[derive(Clone)]
pub struct GoodParametrization {
    pub base: DVector<f64>,
    pub kernel: DMatrix<f64>,
    pub complement: DMatrix<f64>,
    pub domain: ChartDomain,
    pub radius: f64,
    section: DynSection,
    /// `[K | C]⁻¹`.
    coeffs: DMatrix<f64>,
    realization: Realization,
    cache: Cache,
}

impl std::fmt::Debug for GoodParametrization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GoodParametrization")
            .field("base", &self.base)
            .field("kernel", &self.kernel)
            .field("complement", &self.complement)
            .field("domain", &self.domain)
            .field("radius", &self.radius)
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChartReport {
    pub radius: f64,
    pub a0: f64,
    pub da0: f64,
    pub max_residual: f64,
    pub min_surjectivity: f64,
    pub max_transport: f64,
    pub corner_mismatches: usize,
    pub samples: usize,
    pub passed: bool,
}

impl GoodParametrization {
    fn assemble(
        section: DynSection,
        base: DVector<f64>,
        kernel: DMatrix<f64>,
        complement: DMatrix<f64>,
        domain: ChartDomain,
        radius: f64,
        realization: Realization,
    ) -> Result<Self, SolutionError> {
        let full = hcat(&kernel, &complement);
        let coeffs = full.clone().try_inverse().ok_or(SolutionError::SingularMap {
            sigma_min: linalg::singular_values(&full).last().copied().unwrap_or(0.0),
        })?;
        Ok(Self {
            base,
            kernel,
            complement,
            domain,
            radius,
            section,
            coeffs,
            realization,
            cache: Arc::new(Mutex::new(HashMap::new())),
        })
    }

    pub fn dim(&self) -> usize {
        self.kernel.ncols()
    }

    pub fn ambient_dim(&self) -> usize {
        self.base.len()
    }

    pub fn section(&self) -> &DynSection {
        &self.section
    }

    pub fn with_radius(&self, radius: f64) -> Self {
        let mut out = self.clone();
        out.radius = radius;
        out
    }

    pub fn contains(&self, nu: &DVector<f64>) -> bool {
        nu.len() == self.dim()
            && nu.norm() <= self.radius * (1.0 + 1e-12)
            && (0..self.domain.quadrant_rank()).all(|i| nu[i] >= 0.0)
    }

    /// `ν` with `x − q = Kν + Cy`.
    pub fn coordinates(&self, x: &DVector<f64>) -> DVector<f64> {
        (&self.coeffs * (x - &self.base)).rows(0, self.dim()).into_owned()
    }

    fn key(nu: &DVector<f64>) -> Vec<i64> {
        nu.iter().map(|v| (v / CACHE_QUANTUM).round() as i64).collect()
    }

    /// `A(ν)` in ambient coordinates; defined on a neighbourhood of the domain.
    pub fn a(&self, nu: &DVector<f64>) -> Result<DVector<f64>, SolutionError> {
        let key = Self::key(nu);
        if let Some(v) = self.cache.lock().get(&key) {
            return Ok(v.clone());
        }
        let value = self.compute_a(nu)?;
        // Racing writers computed the same deterministic value; the first one wins.
        Ok(self.cache.lock().entry(key).or_insert(value).clone())
    }

    pub fn gamma(&self, nu: &DVector<f64>) -> Result<DVector<f64>, SolutionError> {
        Ok(&self.base + &self.kernel * nu + self.a(nu)?)
    }

    /// Central-difference `DA(ν)` as a `D × k` matrix.
    pub fn da(&self, nu: &DVector<f64>) -> Result<DMatrix<f64>, SolutionError> {
        let k = self.dim();
        let mut cols = Vec::with_capacity(k);
        for j in 0..k {
            let mut p = nu.clone();
            let mut m = nu.clone();
            p[j] += DA_STEP;
            m[j] -= DA_STEP;
            cols.push((self.compute_a(&p)? - self.compute_a(&m)?) / (2.0 * DA_STEP));
        }
        Ok(if k == 0 { DMatrix::zeros(self.ambient_dim(), 0) } else { DMatrix::from_columns(&cols) })
    }

    fn compute_a(&self, nu: &DVector<f64>) -> Result<DVector<f64>, SolutionError> {
        match &self.realization {
            Realization::Direct => {
                let y = self.solve_complement(nu)?;
                Ok(&self.complement * y)
            }
            Realization::Shifted { base, nu0, da0 } => {
                let shifted = nu0 + nu;
                Ok(base.compute_a(&shifted)? - base.compute_a(nu0)? - da0 * nu)
            }
            Realization::Pushforward { base, phi } => {
                let x = self.pushforward_point(base, phi, nu)?;
                Ok(x - &self.base - &self.kernel * nu)
            }
        }
    }

    /// `φ(Γ(ν))` for the `ν` with `τ(ν) = n'`, by Newton in `k` dimensions.
    fn pushforward_point(
        &self,
        base: &GoodParametrization,
        phi: &VecFn,
        target: &DVector<f64>,
    ) -> Result<DVector<f64>, SolutionError> {
        let tau = |nu: &DVector<f64>| -> Result<DVector<f64>, SolutionError> {
            Ok(self.coordinates(&phi(&base.gamma_uncached(nu)?)))
        };
        let mut nu = target.clone();
        let mut res = f64::INFINITY;
        for it in 0..50 {
            let r = tau(&nu)? - target;
            res = r.amax();
            if res <= 1e-14 * (1.0 + target.amax()) {
                break;
            }
            let jac = jacobian_fd_step(|x| tau(x).unwrap_or_else(|_| DVector::from_element(x.len(), f64::NAN)), &nu, 1e-7);
            let step = linalg::lstsq(&jac, &(-r));
            if !step.iter().all(|v| v.is_finite()) {
                return Err(SolutionError::NonConvergence { residual: res, iterations: it });
            }
            nu += step;
        }
        if res > NEWTON_ACCEPT {
            return Err(SolutionError::NonConvergence { residual: res, iterations: 50 });
        }
        Ok(phi(&base.gamma_uncached(&nu)?))
    }

    fn gamma_uncached(&self, nu: &DVector<f64>) -> Result<DVector<f64>, SolutionError> {
        Ok(&self.base + &self.kernel * nu + self.compute_a(nu)?)
    }

    fn newton_from(&self, x0: &DVector<f64>, y0: DVector<f64>) -> Result<DVector<f64>, (DVector<f64>, f64, usize)> {
        let mut y = y0;
        let eval = |y: &DVector<f64>| self.section.eval(&(x0 + &self.complement * y));
        let mut val = eval(&y);
        let mut res = val.amax();
        let max_iter = 60;
        for it in 0..max_iter {
            if !res.is_finite() {
                return Err((y, res, it));
            }
            if res <= 1e-15 * (1.0 + x0.amax()) {
                return Ok(y);
            }
            let jac = self.section.jacobian(&(x0 + &self.complement * &y)) * &self.complement;
            let step = linalg::lstsq(&jac, &(-&val));
            let mut t = 1.0;
            let mut accepted = false;
            while t >= 1.0 / 1024.0 {
                let trial = &y + &step * t;
                let tv = eval(&trial);
                let tr = tv.amax();
                if tr.is_finite() && tr < res {
                    y = trial;
                    val = tv;
                    res = tr;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        if res <= NEWTON_ACCEPT {
            Ok(y)
        } else {
            Err((y, res, max_iter))
        }
    }

    fn solve_complement(&self, nu: &DVector<f64>) -> Result<DVector<f64>, SolutionError> {
        let x0 = &self.base + &self.kernel * nu;
        let zero = DVector::zeros(self.complement.ncols());
        match self.newton_from(&x0, zero.clone()) {
            Ok(y) => Ok(y),
            Err(_) => {
                // Continuation along sν from the base point.
                let steps = 16;
                let mut y = zero;
                for s in 1..=steps {
                    let xs = &self.base + &self.kernel * (nu * (s as f64 / steps as f64));
                    y = self.newton_from(&xs, y).map_err(|(_, residual, iterations)| SolutionError::NonConvergence { residual, iterations })?;
                }
                Ok(y)
            }
        }
    }

    /// Deterministic sample of the domain; quadrant domains include points
    /// on every kind of face.
    pub fn sample_domain(&self, count: usize, seed: u64) -> Vec<DVector<f64>> {
        let k = self.dim();
        let qr = self.domain.quadrant_rank();
        let mut r = rng::stream(seed, 53);
        let mut out = Vec::with_capacity(count);
        for i in 0..count {
            if k == 0 {
                out.push(DVector::zeros(0));
                continue;
            }
            let mut g = DVector::from_iterator(k, (0..k).map(|_| rng::normal(&mut r)));
            for j in 0..qr {
                g[j] = g[j].abs();
                if i % 3 == 1 && rng::uniform(&mut r, 0.0, 1.0) < 0.5 {
                    g[j] = 0.0;
                }
            }
            let norm = g.norm();
            let scale = 0.95 * self.radius * rng::uniform(&mut r, 0.0, 1.0).powf(1.0 / k as f64);
            out.push(if norm > 0.0 { g * (scale / norm) } else { g });
        }
        out
    }

    /// Samples the chart invariants.
    pub fn verify(&self, samples: usize, seed: u64) -> Result<ChartReport, SolutionError> {
        let k = self.dim();
        let zero = DVector::zeros(k);
        let a0 = linalg::l1_norm(&self.a(&zero)?);
        let da0 = self.da(&zero)?.amax();
        let mut max_residual: f64 = 0.0;
        let mut min_surj = f64::INFINITY;
        let mut max_transport: f64 = 0.0;
        let mut corner_mismatches = 0;
        let nq = self.section.quadrant_rank();
        let pts = self.sample_domain(samples, seed);
        for (i, nu) in pts.iter().enumerate() {
            let x = self.gamma(nu)?;
            max_residual = max_residual.max(linalg::l1_norm(&self.section.eval(&x)));
            let jac = self.section.jacobian(&x);
            let sv = linalg::singular_values(&jac);
            let smax = sv.first().copied().unwrap_or(0.0);
            let smin = if jac.nrows() == 0 { f64::INFINITY } else { sv.get(jac.nrows() - 1).copied().unwrap_or(0.0) };
            min_surj = min_surj.min(if smax > 0.0 { smin / smax } else { 0.0 });
            // Kernel transport on a subset of samples.
            if i % 4 == 0 && k > 0 {
                let t = &self.kernel + self.da(nu)?;
                let jt = &jac * &t;
                let scale = jac.norm().max(1e-300) * t.norm().max(1e-300);
                let kdim = svd_split(&jac, RANK_CUTOFF).kernel_dim();
                let rank_ok = linalg::rank(&t, RANK_CUTOFF) == k && kdim == k;
                max_transport = max_transport.max(if rank_ok { jt.norm() / scale } else { f64::INFINITY });
            }
            if let ChartDomain::Quadrant { .. } = &self.domain {
                let active_nu = (0..self.domain.quadrant_rank()).filter(|&j| nu[j] == 0.0).count();
                let constrained_ok = (0..nq).all(|j| x[j] >= -DEFAULT_TOL);
                if !constrained_ok || degeneracy_index(&x, nq, DEFAULT_TOL) != active_nu {
                    corner_mismatches += 1;
                }
            }
        }
        let passed = a0 <= A0_TOL
            && da0 <= DA0_TOL
            && max_residual <= RESIDUAL_TOL
            && min_surj > SURJECTIVITY_RATIO
            && max_transport <= TRANSPORT_TOL
            && corner_mismatches == 0;
        Ok(ChartReport {
            radius: self.radius,
            a0,
            da0,
            max_residual,
            min_surjectivity: min_surj,
            max_transport,
            corner_mismatches,
            samples: pts.len(),
            passed,
        })
    }

    /// Halves the radius until [`Self::verify`] passes.
    fn shrink_until_valid(mut self, config: &ChartConfig) -> Result<Self, SolutionError> {
        for _ in 0..=config.max_halvings {
            self.cache.lock().clear();
            match self.verify(config.samples, config.seed) {
                Ok(rep) if rep.passed => return Ok(self),
                _ => self.radius *= 0.5,
            }
        }
        Err(SolutionError::DomainExhausted { radius: self.radius })
    }
}

fn check_zero(section: &DynSection, q: &DVector<f64>, tol: f64) -> Result<DMatrix<f64>, SolutionError> {
    let residual = section.eval(q).amax();
    if !(residual <= tol) {
        return Err(SolutionError::NotAZero { residual });
    }
    let jac = section.jacobian(q);
    let sv = linalg::singular_values(&jac);
    let smax = sv.first().copied().unwrap_or(0.0);
    let smin = if jac.nrows() == 0 { f64::INFINITY } else { sv.get(jac.nrows() - 1).copied().unwrap_or(0.0) };
    if jac.nrows() > 0 && !(smin > SURJECTIVITY_RATIO * smax) {
        return Err(SolutionError::NotSurjective { sigma_min: smin, sigma_max: smax });
    }
    Ok(jac)
}

/// Interior chart at a zero `q` with surjective linearization; kernel and
/// complement are orthonormal.
pub fn build_parametrization(
    section: DynSection,
    q: &DVector<f64>,
    config: &ChartConfig,
) -> Result<GoodParametrization, SolutionError> {
    let jac = check_zero(&section, q, config.zero_tol)?;
    let split = svd_split(&jac, RANK_CUTOFF);
    let gp = GoodParametrization::assemble(
        section,
        q.clone(),
        split.kernel,
        split.coimage,
        ChartDomain::Ball,
        config.radius,
        Realization::Direct,
    )?;
    gp.shrink_until_valid(config)
}

fn permutation(active: &[usize], d: usize) -> Vec<usize> {
    let mut perm: Vec<usize> = active.to_vec();
    perm.extend((0..d).filter(|i| !active.contains(i)));
    perm
}

fn permute_rows(m: &DMatrix<f64>, perm: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(perm[i], j)])
}

fn unpermute_rows(m: &DMatrix<f64>, perm: &[usize]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(m.nrows(), m.ncols());
    for (i, &p) in perm.iter().enumerate() {
        out.row_mut(p).copy_from(&m.row(i));
    }
    out
}

/// Chart at a zero on the boundary of `[0,∞)^{n} ⊕ R^{D−n}`. The domain is
/// `N ∩ C_q` in the coordinates of its quadrant structure; `C_q` is the
/// quadrant cut out by the constraints active at `q`.
pub fn build_boundary_parametrization(
    section: DynSection,
    q: &DVector<f64>,
    config: &ChartConfig,
    candidates: &[DMatrix<f64>],
    grid: &PositionGrid,
) -> Result<GoodParametrization, SolutionError> {
    let d = section.domain_dim();
    let nq = section.quadrant_rank();
    let active: Vec<usize> = (0..nq).filter(|&i| q[i].abs() <= 1e-12).collect();
    if (0..nq).any(|i| q[i] < -1e-12) {
        return Err(SolutionError::OutsideDomain);
    }
    // The defining formula must extend across each active face.
    for &i in &active {
        let mut x = q.clone();
        x[i] -= 1e-3;
        if !section.eval(&x).iter().all(|v| v.is_finite()) {
            return Err(SolutionError::NotExtendable { index: i });
        }
    }
    let jac = check_zero(&section, q, config.zero_tol)?;
    let kernel = svd_split(&jac, RANK_CUTOFF).kernel;
    let perm = permutation(&active, d);
    let space = crate::graded_space::GradedSpace::with_weights(vec![1.0; d], 1, active.len()).expect("valid space");
    let sub = SubspaceInQuadrant::new(Arc::new(space), permute_rows(&kernel, &perm))?;
    let permuted: Vec<DMatrix<f64>> = candidates.iter().map(|c| permute_rows(c, &perm)).collect();
    let cert = match cones::is_good_position(&sub, &permuted, grid) {
        Ok(c) if c.ok => c,
        Ok(c) => return Err(SolutionError::PositionNotCertified(c.reason)),
        Err(e) => return Err(SolutionError::PositionNotCertified(e.to_string())),
    };
    let structure = cones::quadrant_structure(&sub, &cert)?;
    let k = unpermute_rows(&structure.from_standard, &perm);
    let c = unpermute_rows(cert.complement.as_ref().expect("certified complement"), &perm);
    let gp = GoodParametrization::assemble(
        section,
        q.clone(),
        k,
        c,
        ChartDomain::Quadrant { structure, active },
        config.radius,
        Realization::Direct,
    )?;
    gp.shrink_until_valid(config)
}

/// Chart at `Γ(ν₀)` with kernel `{δn + DA(ν₀)δn}` and the same complement.
/// The new domain is the ball of radius `r − |ν₀|`, so its image lies in
/// the old chart's image.
pub fn recentre(gp: &Arc<GoodParametrization>, nu0: &DVector<f64>) -> Result<GoodParametrization, SolutionError> {
    let on_face = (0..gp.domain.quadrant_rank()).any(|i| nu0[i] <= 0.0);
    if !gp.contains(nu0) || on_face {
        return Err(SolutionError::OutsideDomain);
    }
    let radius = gp.radius - nu0.norm();
    if radius <= 0.0 {
        return Err(SolutionError::DomainExhausted { radius });
    }
    let q0 = gp.gamma(nu0)?;
    let da0 = gp.da(nu0)?;
    let kernel = &gp.kernel + &da0;
    GoodParametrization::assemble(
        gp.section.clone(),
        q0,
        kernel,
        gp.complement.clone(),
        ChartDomain::Ball,
        radius,
        Realization::Shifted { base: gp.clone(), nu0: nu0.clone(), da0 },
    )
}

/// Chart for the pushforward section `Φ∘f∘φ⁻¹` at `φ(q)` with kernel
/// `Tφ(q)K` and complement `Tφ(q)C`.
pub fn transform(
    gp: &Arc<GoodParametrization>,
    iso: &BundleIso,
    config: &ChartConfig,
) -> Result<GoodParametrization, SolutionError> {
    let phi = iso.phi.clone();
    let tphi = jacobian_fd(|x| phi(x), &gp.base);
    let sv = linalg::singular_values(&tphi);
    let smin = sv.last().copied().unwrap_or(0.0);
    if !(smin > 1e-10 * sv.first().copied().unwrap_or(0.0)) {
        return Err(SolutionError::SingularMap { sigma_min: smin });
    }
    let section: DynSection = Arc::new(Pushforward { f: gp.section.clone(), iso: iso.clone() });
    let domain = gp.domain.clone();
    let out = GoodParametrization::assemble(
        section,
        phi(&gp.base),
        &tphi * &gp.kernel,
        &tphi * &gp.complement,
        domain,
        gp.radius,
        Realization::Pushforward { base: gp.clone(), phi },
    )?;
    // Shrink until τ⁻¹ of the domain stays inside the input chart.
    let mut out = out;
    for _ in 0..=config.max_halvings {
        out.cache.lock().clear();
        let inside = out.sample_domain(config.samples, config.seed).iter().all(|n| {
            out.gamma(n)
                .map(|x| gp.contains(&gp.coordinates(&(iso.phi_inv)(&x))))
                .unwrap_or(false)
        });
        if inside && out.verify(config.samples, config.seed).map(|r| r.passed).unwrap_or(false) {
            return Ok(out);
        }
        out.radius *= 0.5;
    }
    Err(SolutionError::DomainExhausted { radius: out.radius })
}

/// `σ : Q₂ → Q₁` with `Γ₁∘σ = Γ₂`, i.e. `σ(n) = P₁(Γ₂(n) − q₁)`.
#[derive(Clone)]
pub struct TransitionMap {
    pub to: Arc<GoodParametrization>,
    pub from: Arc<GoodParametrization>,
    /// Coordinates of the shared zero in `from`.
    pub anchor: DVector<f64>,
}

impl TransitionMap {
    pub fn eval(&self, n: &DVector<f64>) -> Result<DVector<f64>, SolutionError> {
        Ok(self.to.coordinates(&self.from.gamma(n)?))
    }

    pub fn derivative(&self, n: &DVector<f64>) -> Result<DMatrix<f64>, SolutionError> {
        let k = self.from.dim();
        let mut cols = Vec::with_capacity(k);
        for j in 0..k {
            let mut p = n.clone();
            let mut m = n.clone();
            p[j] += DA_STEP;
            m[j] -= DA_STEP;
            cols.push((self.eval(&p)? - self.eval(&m)?) / (2.0 * DA_STEP));
        }
        Ok(if k == 0 { DMatrix::zeros(self.to.dim(), 0) } else { DMatrix::from_columns(&cols) })
    }
}

fn locate(gp: &GoodParametrization, x: &DVector<f64>) -> Result<DVector<f64>, SolutionError> {
    let nu = gp.coordinates(x);
    if !gp.contains(&nu) {
        return Err(SolutionError::NoOverlap { mismatch: f64::INFINITY });
    }
    let mismatch = (gp.gamma(&nu)? - x).amax();
    if mismatch > RESIDUAL_TOL {
        return Err(SolutionError::NoOverlap { mismatch });
    }
    Ok(nu)
}

pub fn transition_map(
    to: &Arc<GoodParametrization>,
    from: &Arc<GoodParametrization>,
    shared: &DVector<f64>,
) -> Result<TransitionMap, SolutionError> {
    locate(to, shared)?;
    let anchor = locate(from, shared)?;
    Ok(TransitionMap { to: to.clone(), from: from.clone(), anchor })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionReport {
    pub samples: usize,
    pub max_mismatch: f64,
    pub max_second_difference: f64,
}

/// Samples `n` near the anchor with `n ∈ Q_from` and `σ(n) ∈ Q_to`.
pub fn verify_transition(tm: &TransitionMap, samples: usize, seed: u64) -> Result<TransitionReport, SolutionError> {
    let k = tm.from.dim();
    let mut r = rng::stream(seed, 59);
    let spread = 0.5 * tm.from.radius.min(tm.to.radius);
    let mut count = 0;
    let mut mismatch: f64 = 0.0;
    let mut second: f64 = 0.0;
    let h = 1e-3 * spread.max(1e-6);
    for _ in 0..samples {
        let n = &tm.anchor + DVector::from_iterator(k, (0..k).map(|_| rng::uniform(&mut r, -spread, spread)));
        if !tm.from.contains(&n) {
            continue;
        }
        let s = tm.eval(&n)?;
        if !tm.to.contains(&s) {
            continue;
        }
        count += 1;
        mismatch = mismatch.max((tm.to.gamma(&s)? - tm.from.gamma(&n)?).amax());
        for j in 0..k {
            let mut p = n.clone();
            let mut m = n.clone();
            p[j] += h;
            m[j] -= h;
            let dd = (tm.eval(&p)? - &s * 2.0 + tm.eval(&m)?) / (h * h);
            second = second.max(dd.amax());
        }
    }
    Ok(TransitionReport { samples: count, max_mismatch: mismatch, max_second_difference: second })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Overlap {
    pub to: usize,
    pub from: usize,
    pub shared: DVector<f64>,
    pub report: TransitionReport,
}

/// Charts of one zero set with their pairwise overlaps.
#[derive(Clone)]
pub struct SolutionAtlas {
    pub charts: Vec<Arc<GoodParametrization>>,
    pub overlaps: Vec<Overlap>,
}

impl SolutionAtlas {
    /// Records an overlap for every ordered pair whose `from` base point lies in
    /// the `to` chart image.
    pub fn build(charts: Vec<Arc<GoodParametrization>>, samples: usize, seed: u64) -> Result<Self, SolutionError> {
        let mut overlaps = Vec::new();
        for i in 0..charts.len() {
            for j in 0..charts.len() {
                if i == j {
                    continue;
                }
                let shared = charts[j].base.clone();
                let Ok(tm) = transition_map(&charts[i], &charts[j], &shared) else { continue };
                let report = verify_transition(&tm, samples, seed)?;
                overlaps.push(Overlap { to: i, from: j, shared, report });
            }
        }
        Ok(Self { charts, overlaps })
    }

    pub fn consistent(&self, tol: f64) -> bool {
        let dims_match = self.charts.windows(2).all(|w| w[0].dim() == w[1].dim());
        dims_match && self.overlaps.iter().all(|o| o.report.max_mismatch <= tol)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::section::FnSection;

    fn line() -> DynSection {
        FnSection::new(2, 1, |x| DVector::from_element(1, x[0] + 2.0 * x[1] - 1.0))
            .with_jacobian(|_| DMatrix::from_row_slice(1, 2, &[1.0, 2.0]))
            .into_dyn()
    }

    #[test]
    fn affine_zero_set_has_vanishing_a() {
        let gp = build_parametrization(line(), &DVector::from_vec(vec![1.0, 0.0]), &ChartConfig::default()).unwrap();
        assert_eq!(gp.dim(), 1);
        assert_eq!(gp.radius, 0.5);
        for nu in gp.sample_domain(20, 1) {
            let a = gp.a(&nu).unwrap();
            assert!(a.amax() < 1e-12, "{nu} {a}");
        }
    }

    #[test]
    fn non_zero_base_is_rejected() {
        let err = build_parametrization(line(), &DVector::from_vec(vec![0.0, 0.0]), &ChartConfig::default()).unwrap_err();
        assert!(matches!(err, SolutionError::NotAZero { .. }));
    }

    #[test]
    fn degenerate_linearization_is_rejected() {
        let f = FnSection::new(2, 1, |x| DVector::from_element(1, x[0] * x[0] + x[1] * x[1])).into_dyn();
        let err = build_parametrization(f, &DVector::zeros(2), &ChartConfig::default()).unwrap_err();
        assert!(matches!(err, SolutionError::NotSurjective { .. }));
    }

    #[test]
    fn quadrant_only_models_are_rejected() {
        let f = FnSection::new(2, 1, |x| DVector::from_element(1, x[1] - x[0].sqrt()))
            .with_quadrant_rank(1)
            .into_dyn();
        let err = build_boundary_parametrization(f, &DVector::from_vec(vec![0.0, 0.0]), &ChartConfig::default(), &[], &PositionGrid::default())
            .unwrap_err();
        assert_eq!(err, SolutionError::NotExtendable { index: 0 });
    }

    #[test]
    fn cache_returns_stored_values() {
        let gp = build_parametrization(line(), &DVector::from_vec(vec![1.0, 0.0]), &ChartConfig::default()).unwrap();
        let nu = DVector::from_element(1, 0.1);
        let a = gp.a(&nu).unwrap();
        let b = gp.a(&(&nu + DVector::from_element(1, 1e-14))).unwrap();
        assert_eq!(a, b);
    }
}
