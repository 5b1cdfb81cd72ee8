//! Basic germs `g : ([0,∞)^k ⊕ R^{n−k}) ⊕ W → R^N ⊕ W`, Fredholm indices,
//! linearizations relative to sc⁺-sections and the normal form of `g + s`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::graded_space::GradedSpace;
use crate::linalg::{self, concat, svd_split, svd_split_scaled, RANK_CUTOFF};
use crate::rng;
use crate::section::{DynSection, Section};

pub type SplitMap = Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FredholmError {
    #[error("s(q) differs from f(q) by {gap:e}")]
    MismatchAtPoint { gap: f64 },
    #[error("rank of 1+A is ambiguous: singular value {sigma:e} inside [{cutoff:e}, {band:e}]")]
    DegenerateSplitting { sigma: f64, cutoff: f64, band: f64 },
    #[error("no radius with sampled contraction ratio < {target} found (best ratio {best})")]
    NotCertified { target: f64, best: f64 },
    #[error("shape mismatch: {0}")]
    Shape(String),
}

/// A basic germ in normal form. The `W` block is measured in the level norms
/// of `w_space` after mapping coordinates through `w_frame`.
#[derive(Clone)]
pub struct BasicGerm {
    pub n: usize,
    pub k: usize,
    pub big_n: usize,
    pub w_space: Arc<GradedSpace>,
    /// Columns embed the germ's `W` coordinates into `w_space` (identity for
    /// germs given directly).
    pub w_frame: DMatrix<f64>,
    g: SplitMap,
    /// Neighborhood radius on which the inner contraction is certified.
    pub radius: f64,
}

impl std::fmt::Debug for BasicGerm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BasicGerm")
            .field("n", &self.n)
            .field("k", &self.k)
            .field("N", &self.big_n)
            .field("w_dim", &self.w_dim())
            .field("radius", &self.radius)
            .finish()
    }
}

impl BasicGerm {
    pub fn new<G>(n: usize, k: usize, big_n: usize, w_space: Arc<GradedSpace>, g: G, radius: f64) -> Self
    where
        G: Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        let d = w_space.dim();
        Self { n, k, big_n, w_space, w_frame: DMatrix::identity(d, d), g: Arc::new(g), radius }
    }

    pub fn w_dim(&self) -> usize {
        self.w_frame.ncols()
    }

    pub fn eval(&self, a: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        (self.g)(a, w)
    }

    pub fn eval_flat(&self, x: &DVector<f64>) -> DVector<f64> {
        let a = x.rows(0, self.n).into_owned();
        let w = x.rows(self.n, self.w_dim()).into_owned();
        (self.g)(&a, &w)
    }

    pub fn w_norm(&self, w: &DVector<f64>, m: usize) -> f64 {
        self.w_space.norm_unchecked((&self.w_frame * w).as_slice(), m)
    }

    /// `B(a,w) = w − P[g(a,w) − g(0,0)]`.
    pub fn contraction(&self, a: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        let g0 = self.eval(&DVector::zeros(self.n), &DVector::zeros(self.w_dim()));
        let diff = self.eval(a, w) - g0;
        w - diff.rows(self.big_n, self.w_dim())
    }

    /// Jacobian of `g` at the origin, `(N + dim W) × (n + dim W)`.
    pub fn linearization(&self) -> DMatrix<f64> {
        linalg::jacobian_fd(|x| self.eval_flat(x), &DVector::zeros(self.n + self.w_dim()))
    }

    /// Largest sampled ratio `‖B(a,w) − B(a,w')‖_m / ‖w − w'‖_m` over the
    /// box of half-width `radius`, for each level `0..=M`.
    pub fn contraction_ratios(&self, radius: f64, samples: usize, seed: u64) -> Vec<f64> {
        let d = self.w_dim();
        let levels = self.w_space.levels();
        let mut worst = vec![0.0f64; levels + 1];
        if d == 0 {
            return worst;
        }
        let mut r = rng::stream(seed, 17);
        for _ in 0..samples {
            let a = DVector::from_iterator(
                self.n,
                (0..self.n).map(|i| if i < self.k { rng::uniform(&mut r, 0.0, radius) } else { rng::uniform(&mut r, -radius, radius) }),
            );
            let w1 = DVector::from_vec(rng::uniform_vec(&mut r, d, -radius, radius));
            let w2 = DVector::from_vec(rng::uniform_vec(&mut r, d, -radius, radius));
            let db = self.contraction(&a, &w1) - self.contraction(&a, &w2);
            let dw = &w1 - &w2;
            for (m, slot) in worst.iter_mut().enumerate() {
                let den = self.w_norm(&dw, m);
                if den > 1e-14 {
                    let ratio = self.w_norm(&db, m) / den;
                    *slot = if ratio.is_nan() { f64::INFINITY } else { slot.max(ratio) };
                }
            }
        }
        worst
    }

    /// Halves the radius from `self.radius` until every level's sampled
    /// ratio is below `target`; returns the radius and ratios.
    pub fn certify(&self, target: f64, samples: usize, seed: u64) -> Result<(f64, Vec<f64>), FredholmError> {
        let mut radius = self.radius;
        let mut best = f64::INFINITY;
        for _ in 0..40 {
            let ratios = self.contraction_ratios(radius, samples, seed);
            let max = ratios.iter().copied().fold(0.0, f64::max);
            if max < target {
                return Ok((radius, ratios));
            }
            best = best.min(max);
            radius *= 0.5;
        }
        Err(FredholmError::NotCertified { target, best })
    }
}

/// `Ind(g,0) = n − N`.
pub fn fredholm_index(bg: &BasicGerm) -> i64 {
    bg.n as i64 - bg.big_n as i64
}

/// `dim ker − dim coker` of a matrix.
pub fn index_from_matrix(m: &DMatrix<f64>) -> i64 {
    let s = svd_split(m, RANK_CUTOFF);
    s.kernel_dim() as i64 - s.cokernel_dim() as i64
}

/// An sc⁺-section in chart coordinates with level bookkeeping.
#[derive(Clone)]
pub struct ScPlusSection {
    pub section: DynSection,
    /// Support ball `(center, radius)` in the level-0 norm; `None` for global support.
    pub support: Option<(DVector<f64>, f64)>,
    /// Marked points with their prescribed smooth values.
    pub marked: Vec<(DVector<f64>, DVector<f64>)>,
}

impl ScPlusSection {
    pub fn new(section: DynSection) -> Self {
        Self { section, support: None, marked: Vec::new() }
    }

    /// Outputs sit one level above the input, capped at `M`.
    pub fn output_level(input_level: usize, max_level: usize) -> usize {
        (input_level + 1).min(max_level)
    }

    pub fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        self.section.eval(x)
    }

    pub fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        self.section.jacobian(x)
    }

    /// Largest value norm found outside the declared support on samples.
    pub fn support_leak(&self, points: &[DVector<f64>]) -> f64 {
        let Some((c, r)) = &self.support else { return 0.0 };
        points
            .iter()
            .filter(|p| linalg::l1_norm(&(*p - c)) >= *r)
            .map(|p| self.eval(p).amax())
            .fold(0.0, f64::max)
    }
}

/// `f'_[s](q) = D(f − s)(q)` for `s(q) = f(q)`.
pub fn linearize_relative(
    f: &dyn Section,
    s: &ScPlusSection,
    q: &DVector<f64>,
    tol: f64,
) -> Result<DMatrix<f64>, FredholmError> {
    let gap = (f.eval(q) - s.eval(q)).amax();
    if gap > tol {
        return Err(FredholmError::MismatchAtPoint { gap });
    }
    Ok(f.jacobian(q) - s.jacobian(q))
}

/// The normal form of `g + s` together with the splitting data used to build it.
#[derive(Clone)]
pub struct NormalForm {
    pub germ: BasicGerm,
    /// Orthonormal basis of `C = ker(1+A)`.
    pub c_basis: DMatrix<f64>,
    /// Orthonormal basis of the complement `X`.
    pub x_basis: DMatrix<f64>,
    /// Orthonormal basis of `R = range(1+A)`.
    pub r_basis: DMatrix<f64>,
    /// Orthonormal basis of the complement `Z`.
    pub z_basis: DMatrix<f64>,
    pub singular_values: Vec<f64>,
    /// `A = P D₂s(0)`.
    pub a: DMatrix<f64>,
    pub certified_radius: f64,
    pub ratios: Vec<f64>,
}

impl NormalForm {
    /// `ψ(a,w) = (a, (1−P₁)w, P₁w)` in coordinates `(a, c, ξ)`.
    pub fn psi(&self, a: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        let c = self.c_basis.transpose() * w;
        let xi = self.x_basis.transpose() * w;
        concat(&concat(a, &c), &xi)
    }

    /// `Ψ(δa ⊕ δw) = δa ⊕ τ(1−P₂)δw ⊕ L⁻¹P₂δw` in coordinates.
    pub fn fiber_map(&self, y: &DVector<f64>, big_n: usize) -> DVector<f64> {
        fiber_transform(y, big_n, &self.r_basis, &self.z_basis, &self.singular_values)
    }
}

fn fiber_transform(y: &DVector<f64>, big_n: usize, r_basis: &DMatrix<f64>, z_basis: &DMatrix<f64>, sigma: &[f64]) -> DVector<f64> {
    let d = r_basis.nrows();
    let head = y.rows(0, big_n).into_owned();
    let dw = y.rows(big_n, d).into_owned();
    let tau = z_basis.transpose() * &dw;
    let mut xi = r_basis.transpose() * &dw;
    for (i, s) in sigma.iter().take(xi.len()).enumerate() {
        xi[i] /= s;
    }
    concat(&concat(&head, &tau), &xi)
}

/// Normal form of `g + s` at the origin.
///
/// `1 + A` splits as `W = C ⊕ X → R ⊕ Z` via its SVD; `τ : Z → C` pairs the
/// left and right singular vectors of the zero singular values. The new
/// parameter is `(a, (1−P₁)w)`, the new contraction variable `P₁w`, and the
/// result has `n' = n + dim C`, `N' = N + dim C`.
pub fn perturb_normal_form(
    bg: &BasicGerm,
    s: &ScPlusSection,
    samples: usize,
    seed: u64,
) -> Result<NormalForm, FredholmError> {
    let n = bg.n;
    let d = bg.w_dim();
    let big_n = bg.big_n;
    if s.section.domain_dim() != n + d || s.section.fiber_dim() != big_n + d {
        return Err(FredholmError::Shape(format!(
            "sc+ section is {} -> {}, expected {} -> {}",
            s.section.domain_dim(),
            s.section.fiber_dim(),
            n + d,
            big_n + d
        )));
    }
    let origin = DVector::zeros(n + d);
    let ds = s.jacobian(&origin);
    let a_mat = ds.view((big_n, n), (d, d)).into_owned();
    let one_plus_a = DMatrix::identity(d, d) + &a_mat;
    // 1 + A is a perturbation of the identity, so its scale is at least 1.
    let split = svd_split_scaled(&one_plus_a, RANK_CUTOFF, 1.0);
    if let Some(&sigma) = split
        .singular_values
        .iter()
        .find(|&&x| split.cutoff > 0.0 && x >= split.cutoff && x <= 10.0 * split.cutoff)
    {
        return Err(FredholmError::DegenerateSplitting { sigma, cutoff: split.cutoff, band: 10.0 * split.cutoff });
    }
    let r = split.rank;
    let c_dim = d - r;
    // Right/left singular pairs: coimage ↔ range share ordering, kernel ↔ cokernel
    // are paired column by column, which fixes τ.
    let x_basis = split.coimage.clone();
    let c_basis = split.kernel.clone();
    let r_basis = &one_plus_a * &x_basis;
    let sigma: Vec<f64> = split.singular_values[..r].to_vec();
    let mut r_unit = r_basis.clone();
    for (j, s) in sigma.iter().enumerate() {
        r_unit.column_mut(j).scale_mut(1.0 / s);
    }
    let z_basis = split.cokernel.clone();

    let g = Arc::clone(&bg.g);
    let s_sec = s.section.clone();
    let (xb, cb, rb, zb, sg) = (x_basis.clone(), c_basis.clone(), r_unit.clone(), z_basis.clone(), sigma.clone());
    let g_new = move |ac: &DVector<f64>, xi: &DVector<f64>| -> DVector<f64> {
        let a = ac.rows(0, n).into_owned();
        let c = ac.rows(n, c_dim).into_owned();
        let w = &cb * c + &xb * xi;
        let value = g(&a, &w) + s_sec.eval(&concat(&a, &w));
        fiber_transform(&value, big_n, &rb, &zb, &sg)
    };
    let mut germ = BasicGerm {
        n: n + c_dim,
        k: bg.k,
        big_n: big_n + c_dim,
        w_space: Arc::clone(&bg.w_space),
        w_frame: &bg.w_frame * &x_basis,
        g: Arc::new(g_new),
        radius: bg.radius,
    };
    let (certified_radius, ratios) = germ.certify(0.9, samples, seed)?;
    germ.radius = certified_radius;
    Ok(NormalForm {
        germ,
        c_basis,
        x_basis,
        r_basis: r_unit,
        z_basis,
        singular_values: sigma,
        a: a_mat,
        certified_radius,
        ratios,
    })
}

/// Random linear-plus-quadratic basic germ with `D₂B(0) = 0`.
pub fn random_basic_germ(seed: u64, trial: u64) -> BasicGerm {
    let mut r = rng::stream(seed, trial);
    let n = 1 + (rng::uniform(&mut r, 0.0, 3.0) as usize).min(2);
    let big_n = (rng::uniform(&mut r, 0.0, 3.0) as usize).min(2);
    let d = 1 + (rng::uniform(&mut r, 0.0, 3.0) as usize).min(2);
    let k = (rng::uniform(&mut r, 0.0, (n + 1) as f64) as usize).min(n);
    let mat = |rows: usize, cols: usize, scale: f64, r: &mut rng::Stream| {
        DMatrix::from_iterator(rows, cols, (0..rows * cols).map(|_| scale * rng::normal(r)))
    };
    let top_a = mat(big_n, n, 1.0, &mut r);
    let top_w = mat(big_n, d, 1.0, &mut r);
    let b_a = mat(d, n, 0.5, &mut r);
    let quad = mat(d, d, 0.2, &mut r);
    let offset = DVector::from_vec(rng::uniform_vec(&mut r, big_n + d, -0.1, 0.1));
    let space = Arc::new(GradedSpace::new(d, 2, 0).expect("valid space"));
    BasicGerm::new(
        n,
        k,
        big_n,
        space,
        move |a, w| {
            let b = &b_a * a + (&quad * w).component_mul(w);
            let top = &top_a * a + &top_w * w;
            concat(&top, &(w - b)) + &offset
        },
        0.5,
    )
}

/// Random sc⁺-perturbation for `bg`: constant, linear and quadratic terms.
/// Odd trials make `1 + A` singular along a random unit vector.
pub fn random_sc_plus(bg: &BasicGerm, seed: u64, trial: u64) -> ScPlusSection {
    let mut r = rng::stream(seed ^ 0x5c, trial);
    let (n, d, big_n) = (bg.n, bg.w_dim(), bg.big_n);
    let gaussian = |rows: usize, cols: usize, scale: f64, r: &mut rng::Stream| {
        DMatrix::from_iterator(rows, cols, (0..rows * cols).map(|_| scale * rng::normal(r)))
    };
    let a_mat = if trial % 2 == 1 {
        let u = DVector::from_iterator(d, (0..d).map(|_| rng::normal(&mut r))).normalize();
        -(&u * u.transpose())
    } else {
        gaussian(d, d, 0.3, &mut r)
    };
    let top = gaussian(big_n, n + d, 0.5, &mut r);
    let w_from_a = gaussian(d, n, 0.3, &mut r);
    let quad = gaussian(d, d, 0.1, &mut r);
    let offset = DVector::from_vec(rng::uniform_vec(&mut r, big_n + d, -0.05, 0.05));
    let section = crate::section::FnSection::new(n + d, big_n + d, move |x| {
        let a = x.rows(0, n).into_owned();
        let w = x.rows(n, d).into_owned();
        let head = &top * x;
        let tail = &a_mat * &w + &w_from_a * &a + (&quad * &w).component_mul(&w);
        concat(&head, &tail) + &offset
    });
    ScPlusSection::new(section.into_dyn())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::section::FnSection;

    fn linear_germ(n: usize, big_n: usize, d: usize) -> BasicGerm {
        let space = Arc::new(GradedSpace::new(d, 2, 0).unwrap());
        BasicGerm::new(n, 0, big_n, space, move |_, w| concat(&DVector::zeros(big_n), w), 1.0)
    }

    fn w_linear(n: usize, big_n: usize, d: usize, alpha: f64) -> ScPlusSection {
        ScPlusSection::new(
            FnSection::new(n + d, big_n + d, move |x| concat(&DVector::zeros(big_n), &(x.rows(n, d) * alpha))).into_dyn(),
        )
    }

    #[test]
    fn index_examples() {
        assert_eq!(fredholm_index(&linear_germ(3, 1, 2)), 2);
        assert_eq!(fredholm_index(&linear_germ(2, 2, 1)), 0);
    }

    #[test]
    fn zero_perturbation_keeps_germ() {
        let bg = random_basic_germ(1, 0);
        let s = ScPlusSection::new(crate::section::zero_section(bg.n + bg.w_dim(), bg.big_n + bg.w_dim()));
        let nf = perturb_normal_form(&bg, &s, 200, 3).unwrap();
        assert_eq!(nf.c_basis.ncols(), 0);
        assert_eq!(fredholm_index(&nf.germ), fredholm_index(&bg));
        let a = DVector::from_element(bg.n, 0.05);
        let w = DVector::from_element(bg.w_dim(), -0.03);
        let xi = nf.x_basis.transpose() * &w;
        // Relabeling by the SVD frame: B̂(a, ξ) = Σ⁻¹U_Rᵀ B(a, V_X ξ).
        let lhs = nf.germ.contraction(&a, &xi);
        let rhs = nf.fiber_map(&concat(&DVector::zeros(bg.big_n), &bg.contraction(&a, &w)), bg.big_n);
        assert!((lhs - rhs.rows(bg.big_n, bg.w_dim())).amax() < 1e-12);
    }

    #[test]
    fn kernel_free_linear_perturbation() {
        let bg = linear_germ(1, 0, 1);
        let nf = perturb_normal_form(&bg, &w_linear(1, 0, 1, 0.5), 100, 3).unwrap();
        assert_eq!(nf.c_basis.ncols(), 0);
        assert!((nf.singular_values[0] - 1.5).abs() < 1e-9);
        assert!(nf.ratios.iter().all(|&x| x < 1e-9));
        let out = nf.germ.eval(&DVector::from_element(1, 0.3), &DVector::from_element(1, 0.2));
        assert!((out[0].abs() - 0.2).abs() < 1e-9);
    }

    #[test]
    fn full_kernel_moves_w_into_parameters() {
        let bg = linear_germ(1, 0, 1);
        let nf = perturb_normal_form(&bg, &w_linear(1, 0, 1, -1.0), 100, 3).unwrap();
        assert_eq!(nf.c_basis.ncols(), 1);
        assert_eq!(nf.germ.n, 2);
        assert_eq!(nf.germ.big_n, 1);
        assert_eq!(nf.germ.w_dim(), 0);
        assert_eq!(fredholm_index(&nf.germ), fredholm_index(&bg));
        assert_eq!(index_from_matrix(&nf.germ.linearization()), fredholm_index(&bg));
    }

    #[test]
    fn ambiguous_rank_is_an_error() {
        let bg = linear_germ(1, 0, 2);
        let s = ScPlusSection::new(
            FnSection::new(3, 2, |x| DVector::from_vec(vec![0.0, -x[2] * (1.0 - 5e-8)])).into_dyn(),
        );
        assert!(matches!(perturb_normal_form(&bg, &s, 10, 1), Err(FredholmError::DegenerateSplitting { .. })));
    }

    #[test]
    fn relative_linearization() {
        let f = FnSection::new(1, 1, |x| DVector::from_element(1, 3.0 * x[0] + 1.0));
        let q = DVector::from_element(1, 0.0);
        let s = ScPlusSection::new(FnSection::new(1, 1, |_| DVector::from_element(1, 1.0)).into_dyn());
        let l = linearize_relative(&f, &s, &q, 1e-12).unwrap();
        assert!((l[(0, 0)] - 3.0).abs() < 1e-8);
        let bad = ScPlusSection::new(FnSection::new(1, 1, |_| DVector::from_element(1, 0.0)).into_dyn());
        assert!(matches!(linearize_relative(&f, &bad, &q, 1e-12), Err(FredholmError::MismatchAtPoint { .. })));
    }
}
