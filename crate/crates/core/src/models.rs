//! Closed-form models shared by tests, the acceptance suite and the CLI registry.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::cones::SubspaceInQuadrant;
use crate::germ::ContractionGerm;
use crate::graded_space::GradedSpace;
use crate::degree::{Homotopy, Window};
use crate::orientation::OperatorPath;
use crate::rng;
use crate::section::{DynSection, FnSection};
use crate::splicing::{fill_section, FilledSection, Filler, SmoothnessGrade, SplicingModel, StrongBundleSplicing};

/// Levels carried by the registry germs.
pub const GERM_LEVELS: usize = 3;

/// `B(v,u) = 0.25·cos(u) + v` on `R ⊕ R`, with exact Jacobians.
pub fn cosine_germ() -> ContractionGerm {
    cosine_germ_with(0.25, &[1.0], GERM_LEVELS)
}

/// `B(v,u) = a·cos(u) + v` with solution-space `weights` over `levels` levels;
/// `|a| < 1` is the contraction constant at every level.
pub fn cosine_germ_with(a: f64, weights: &[f64], levels: usize) -> ContractionGerm {
    let dim = weights.len();
    let s = Arc::new(GradedSpace::with_weights(vec![1.0; dim], levels, dim).expect("valid space"));
    let w = Arc::new(GradedSpace::with_weights(weights.to_vec(), levels, 0).expect("valid space"));
    ContractionGerm::new(
        s,
        w,
        move |v, u| u.map(|x| a * x.cos()) + v,
        ContractionGerm::uniform_schedule(levels, a.abs(), 1.0),
    )
    .expect("schedule matches levels")
    .with_jacobians(
        move |_, _| DMatrix::identity(dim, dim),
        move |_, u| DMatrix::from_diagonal(&u.map(|x| -a * x.sin())),
    )
}

/// Offset of the rotating-line section along the line: `c₀(v) = 0.5 + 0.3·sin 2v`.
pub fn rotating_line_offset(v: f64) -> f64 {
    0.5 + 0.3 * (2.0 * v).sin()
}

/// Unit vector `(cos v, sin v)`.
pub fn rotating_line_direction(v: f64) -> DVector<f64> {
    DVector::from_vec(vec![v.cos(), v.sin()])
}

/// Splicing `π_v = u uᵀ` on `E = R²` with `u = (cos v, sin v)`, `|v| < 1`.
pub fn rotating_line_splicing() -> SplicingModel {
    SplicingModel::new(
        Arc::new(GradedSpace::flat(1)),
        Arc::new(GradedSpace::new(2, 2, 0).expect("valid space")),
        1.0,
        |v| {
            let u = rotating_line_direction(v[0]);
            &u * u.transpose()
        },
        SmoothnessGrade::Exact,
    )
}

/// Filled section over the rotating line: `ρ_{(v,e)} = π_v` on `F = R²`,
/// `f(v,e) = π_v e − c₀(v)·u(v)` and filler `λ(I − π_v)e` with `λ = 2`.
pub fn rotating_line_filled() -> FilledSection {
    rotating_line_filled_with(2.0)
}

/// The rotating-line filled section with filler `λ(I − π_v)e`.
pub fn rotating_line_filled_with(lambda: f64) -> FilledSection {
    let model = rotating_line_splicing();
    let m = model.clone();
    let bundle = StrongBundleSplicing::new(model.clone(), Arc::new(GradedSpace::new(2, 2, 0).expect("valid space")), move |v, _| m.pi_unchecked(v));
    let m2 = model.clone();
    fill_section(
        bundle,
        move |v, e| m2.pi_unchecked(v) * e - rotating_line_direction(v[0]) * rotating_line_offset(v[0]),
        Filler::scalar(&model, lambda),
    )
}

/// Rank-jumping family `π_v = [v > 0]·e₁e₁ᵀ` on `R²`; only truncation-approximate.
pub fn rank_jump_splicing() -> SplicingModel {
    SplicingModel::new(
        Arc::new(GradedSpace::flat(1)),
        Arc::new(GradedSpace::flat(2)),
        1.0,
        |v| {
            let mut p = DMatrix::zeros(2, 2);
            if v[0] > 0.0 {
                p[(0, 0)] = 1.0;
            }
            p
        },
        SmoothnessGrade::TruncationApproximate,
    )
}

/// A registry subspace with the extra complement candidates its good-position
/// search needs.
#[derive(Debug, Clone)]
pub struct ConeInstance {
    pub name: String,
    pub subspace: SubspaceInQuadrant,
    pub candidates: Vec<DMatrix<f64>>,
}

fn cone(name: &str, n: usize, w: usize, rows: usize, cols: usize, data: &[f64]) -> ConeInstance {
    let basis = DMatrix::from_row_slice(rows, cols, data);
    ConeInstance {
        name: name.into(),
        subspace: SubspaceInQuadrant::flat(n, w, basis).expect("independent basis"),
        candidates: Vec::new(),
    }
}

/// Facet normals `(cos θ_j, sin θ_j, 1)`, `θ_j = 2πj/8`, as an `8 × 3` carrier
/// in `R^8`: `C ∩ N` is a polyhedral ice-cream cone with eight rays.
pub fn ice_cream_cone() -> ConeInstance {
    let data: Vec<f64> = (0..8)
        .flat_map(|j| {
            let t = std::f64::consts::TAU * j as f64 / 8.0;
            [t.cos(), t.sin(), 1.0]
        })
        .collect();
    cone("ice-cream-8", 8, 0, 8, 3, &data)
}

/// Carrier `{(T^{-1}y, y)}` in `R^3 ⊕ R^3`, so that `C ∩ N ≅ T[0,∞)^3`.
/// Returns the instance and `T`.
pub fn random_quadrant_image(seed: u64, trial: u64) -> (ConeInstance, DMatrix<f64>) {
    let mut r = rng::stream(seed, trial);
    loop {
        let t = DMatrix::from_fn(3, 3, |_, _| rng::uniform(&mut r, -1.0, 1.0));
        let Some(inv) = t.clone().try_inverse() else { continue };
        if t.determinant().abs() < 0.1 {
            continue;
        }
        let basis = crate::linalg::vcat(&inv, &DMatrix::identity(3, 3));
        let inst = ConeInstance {
            name: format!("quadrant-image-{trial}"),
            subspace: SubspaceInQuadrant::flat(3, 3, basis).expect("independent basis"),
            candidates: Vec::new(),
        };
        return (inst, t);
    }
}

/// Registry of subspaces in partial quadrants.
pub fn cone_instances() -> Vec<ConeInstance> {
    let mut corner = cone("diag-corner", 3, 0, 3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
    corner.candidates.push(DMatrix::from_column_slice(3, 1, &[0.0, 0.0, 1.0]));
    vec![
        cone("standard", 3, 2, 5, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]),
        cone("diag-plane", 2, 1, 3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]),
        corner,
        cone("ray-diagonal", 2, 0, 2, 1, &[1.0, 1.0]),
        cone("full-lineality", 2, 1, 3, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]),
        ice_cream_cone(),
        random_quadrant_image(rng::DEFAULT_SEED, 0).0,
    ]
}

pub fn cone_instance(name: &str) -> Option<ConeInstance> {
    cone_instances().into_iter().find(|c| c.name == name)
}

/// `x² + y² − 1` on `R²`.
pub fn circle_section() -> DynSection {
    FnSection::new(2, 1, |x| DVector::from_element(1, x[0] * x[0] + x[1] * x[1] - 1.0))
        .with_jacobian(|x| DMatrix::from_row_slice(1, 2, &[2.0 * x[0], 2.0 * x[1]]))
        .into_dyn()
}

/// Affine `Lx − b` on `R³` with `L = [[1,2,−1],[0,1,1]]`, vanishing at `(1,0,0)`.
pub fn linear_section() -> DynSection {
    let l = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, -1.0, 0.0, 1.0, 1.0]);
    let b = DVector::from_vec(vec![1.0, 0.0]);
    let lj = l.clone();
    FnSection::new(3, 2, move |x| &l * x - &b).with_jacobian(move |_| lj.clone()).into_dyn()
}

/// `y − x²` on `[0,∞) ⊕ R`.
pub fn parabola_corner() -> DynSection {
    FnSection::new(2, 1, |x| DVector::from_element(1, x[1] - x[0] * x[0]))
        .with_jacobian(|x| DMatrix::from_row_slice(1, 2, &[-2.0 * x[0], 1.0]))
        .with_quadrant_rank(1)
        .into_dyn()
}

/// `y − x` on `[0,∞) ⊕ R`.
pub fn linear_corner() -> DynSection {
    FnSection::new(2, 1, |x| DVector::from_element(1, x[1] - x[0]))
        .with_jacobian(|_| DMatrix::from_row_slice(1, 2, &[-1.0, 1.0]))
        .with_quadrant_rank(1)
        .into_dyn()
}

/// `z − x − y` on `[0,∞)² ⊕ R`.
pub fn quadrant_plane() -> DynSection {
    FnSection::new(3, 1, |x| DVector::from_element(1, x[2] - x[0] - x[1]))
        .with_jacobian(|_| DMatrix::from_row_slice(1, 3, &[-1.0, -1.0, 1.0]))
        .with_quadrant_rank(2)
        .into_dyn()
}

/// The zero `(0, c₀(0)·u(0))` of the rotating-line filled section.
pub fn rotating_line_zero() -> DVector<f64> {
    DVector::from_vec(vec![0.0, rotating_line_offset(0.0), 0.0])
}

/// Named operator paths on `[0, 1]`.
pub fn operator_paths() -> Vec<(&'static str, OperatorPath)> {
    vec![
        ("constant", OperatorPath::new(|_| DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, -1.0]))),
        ("rotation", OperatorPath::new(|t| {
            let (s, c) = (std::f64::consts::PI * t).sin_cos();
            DMatrix::from_row_slice(2, 2, &[c, -s, s, c])
        })),
        ("diag-crossing", OperatorPath::new(|t| DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0 * t - 1.0])))),
        ("scalar-flip", OperatorPath::new(|t| DMatrix::from_element(1, 1, 1.0 - 2.0 * t))),
        ("double-crossing", OperatorPath::new(|t| {
            DMatrix::from_diagonal(&DVector::from_vec(vec![4.0 * t - 1.0, 3.0 - 4.0 * t, 1.0]))
        })),
        ("index-one", OperatorPath::new(|t| DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 2.0 * t - 1.0, t]))),
        ("kernel-at-start", OperatorPath::new(|t| DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, t]))),
    ]
}

pub fn operator_path(name: &str) -> Option<OperatorPath> {
    operator_paths().into_iter().find(|(n, _)| *n == name).map(|(_, p)| p)
}

fn scalar_section<F, G>(f: F, df: G) -> DynSection
where
    F: Fn(f64) -> f64 + Send + Sync + 'static,
    G: Fn(f64) -> f64 + Send + Sync + 'static,
{
    FnSection::new(1, 1, move |x: &DVector<f64>| DVector::from_element(1, f(x[0])))
        .with_jacobian(move |x: &DVector<f64>| DMatrix::from_element(1, 1, df(x[0])))
        .into_dyn()
}

/// An index-0 section with the window that localizes its zeros.
#[derive(Clone)]
pub struct DegreeModel {
    pub name: &'static str,
    pub section: DynSection,
    pub window: Window,
}

pub fn cubic_shift(t: f64) -> DynSection {
    scalar_section(move |x| x * x * x - x + 0.05 * t, |x| 3.0 * x * x - 1.0)
}

pub fn degree_models() -> Vec<DegreeModel> {
    let w = || Window::interval(-2.0, 2.0);
    vec![
        DegreeModel { name: "identity", section: scalar_section(|x| x, |_| 1.0), window: w() },
        DegreeModel { name: "negation", section: scalar_section(|x| -x, |_| -1.0), window: w() },
        DegreeModel { name: "cubic", section: cubic_shift(0.0), window: w() },
        DegreeModel { name: "square-minus-one", section: scalar_section(|x| x * x - 1.0, |x| 2.0 * x), window: w() },
        DegreeModel { name: "square", section: scalar_section(|x| x * x, |x| 2.0 * x), window: Window::interval(-1.0, 1.0) },
        DegreeModel { name: "no-zeros", section: scalar_section(|x| x * x + 1.0, |x| 2.0 * x), window: w() },
        DegreeModel {
            name: "planar-cubic",
            section: FnSection::new(2, 2, |x: &DVector<f64>| DVector::from_vec(vec![x[0].powi(3) - x[0], x[1] + 0.5 * x[0]]))
                .with_jacobian(|x: &DVector<f64>| DMatrix::from_row_slice(2, 2, &[3.0 * x[0] * x[0] - 1.0, 0.0, 0.5, 1.0]))
                .into_dyn(),
            window: Window::new(vec![-2.0, -2.0], vec![2.0, 2.0]),
        },
    ]
}

pub fn degree_model(name: &str) -> Option<DegreeModel> {
    degree_models().into_iter().find(|m| m.name == name)
}

/// `x³ − x + 0.05·t` over `t ∈ [0, 1]`.
pub fn cubic_homotopy() -> Homotopy {
    Homotopy::new("cubic-shift", 20, cubic_shift)
}

/// The plane `z = 0` in `R³`.
pub fn plane_section() -> DynSection {
    FnSection::new(3, 1, |x: &DVector<f64>| DVector::from_element(1, x[2]))
        .with_jacobian(|_: &DVector<f64>| DMatrix::from_row_slice(1, 3, &[0.0, 0.0, 1.0]))
        .into_dyn()
}
