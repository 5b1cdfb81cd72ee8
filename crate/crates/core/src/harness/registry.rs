//! Named closed-form models with parameter slots.

use std::f64::consts::TAU;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::config::{ConfigError, ModelSpec, SplicingChoice};
use crate::degree::{Homotopy, PerturbationProblem, Window};
use crate::germ::ContractionGerm;
use crate::graded_space::GradedSpace;
use crate::models::{self, ConeInstance};
use crate::section::{DynSection, FnSection};
use crate::splicing::FilledSection;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Germ,
    Chart,
    Cone,
    Degree,
}

impl Kind {
    pub fn command(self) -> &'static str {
        match self {
            Kind::Germ => "solve-germ",
            Kind::Chart => "parametrize",
            Kind::Cone => "cones",
            Kind::Degree => "degree",
        }
    }
}

pub struct Entry {
    pub name: &'static str,
    pub kind: Kind,
    /// Parameter slots with their defaults.
    pub params: &'static [(&'static str, f64)],
    pub about: &'static str,
}

const ENTRIES: &[Entry] = &[
    Entry { name: "cosine", kind: Kind::Germ, params: &[("amplitude", 0.25)], about: "B(v,u) = a·cos u + v" },
    Entry { name: "affine-germ", kind: Kind::Germ, params: &[("alpha", 0.5), ("beta", 1.0)], about: "B(v,u) = αu + βv" },
    Entry { name: "linear", kind: Kind::Chart, params: &[], about: "Lx − b on R³, index 1" },
    Entry { name: "circle", kind: Kind::Chart, params: &[("radius", 1.0)], about: "x² + y² − r²" },
    Entry { name: "parabola-corner", kind: Kind::Chart, params: &[("curvature", 1.0)], about: "y − a·x² on [0,∞) ⊕ R" },
    Entry { name: "linear-corner", kind: Kind::Chart, params: &[], about: "y − x on [0,∞) ⊕ R" },
    Entry { name: "quadrant-plane", kind: Kind::Chart, params: &[], about: "z − x − y on [0,∞)² ⊕ R" },
    Entry { name: "rotating-line", kind: Kind::Chart, params: &[], about: "filled section over the rotating-line splicing" },
    Entry { name: "standard", kind: Kind::Cone, params: &[], about: "R³ ⊕ 0 in [0,∞)³ ⊕ R²" },
    Entry { name: "diag-plane", kind: Kind::Cone, params: &[], about: "span{(1,0,1),(0,1,1)} in [0,∞)² ⊕ R" },
    Entry { name: "diag-corner", kind: Kind::Cone, params: &[], about: "span{(1,0,1),(0,1,1)} in [0,∞)³" },
    Entry { name: "ray-diagonal", kind: Kind::Cone, params: &[], about: "the diagonal line in [0,∞)²" },
    Entry { name: "full-lineality", kind: Kind::Cone, params: &[], about: "all of [0,∞)² ⊕ R" },
    Entry { name: "ice-cream-8", kind: Kind::Cone, params: &[], about: "eight-ray polyhedral circular cone" },
    Entry { name: "quadrant-image", kind: Kind::Cone, params: &[("trial", 0.0)], about: "random linear image of [0,∞)³" },
    Entry { name: "identity", kind: Kind::Degree, params: &[], about: "x on [−2,2]" },
    Entry { name: "negation", kind: Kind::Degree, params: &[], about: "−x on [−2,2]" },
    Entry { name: "cubic", kind: Kind::Degree, params: &[("shift", 0.0)], about: "x³ − x + c on [−2,2]" },
    Entry { name: "square-minus-one", kind: Kind::Degree, params: &[], about: "x² − 1 on [−2,2]" },
    Entry { name: "square", kind: Kind::Degree, params: &[], about: "x² on [−1,1]" },
    Entry { name: "no-zeros", kind: Kind::Degree, params: &[], about: "x² + 1 on [−2,2]" },
    Entry { name: "planar-cubic", kind: Kind::Degree, params: &[], about: "(x³ − x, y + x/2) on [−2,2]²" },
];

pub fn entries() -> &'static [Entry] {
    ENTRIES
}

pub fn lookup(name: &str) -> Option<&'static Entry> {
    ENTRIES.iter().find(|e| e.name == name)
}

/// Closed-form chart images used as independent oracles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ChartOracle {
    /// `Γ(ν) = q·√(r² − |ν|²)/r + Kν` for a chart at `q` with orthonormal `K`.
    Circle { radius: f64 },
    /// `Γ(t) = (t, a·t²)` at the corner.
    Parabola { curvature: f64 },
}

#[derive(Clone)]
pub struct ChartModel {
    pub section: DynSection,
    pub seeds: Vec<DVector<f64>>,
    pub radius: f64,
    pub splicing: SplicingChoice,
    pub filled: Option<FilledSection>,
    pub oracle: Option<ChartOracle>,
    /// Radius of a compact zero set that the atlas covers, for form integration.
    pub compact_circle: Option<f64>,
}

#[derive(Clone)]
pub struct DegreeSetup {
    pub problem: PerturbationProblem,
    pub homotopy: Option<Homotopy>,
}

pub struct GermModel {
    pub germ: ContractionGerm,
    /// `(α, β)` of an affine germ: `δ(v) = βv/(1−α)`.
    pub affine: Option<(f64, f64)>,
    pub points: Vec<DVector<f64>>,
}

pub enum Model {
    Germ(GermModel),
    Chart(ChartModel),
    Cone(ConeInstance),
    Degree(DegreeSetup),
}

impl Model {
    pub fn kind(&self) -> Kind {
        match self {
            Model::Germ(_) => Kind::Germ,
            Model::Chart(_) => Kind::Chart,
            Model::Cone(_) => Kind::Cone,
            Model::Degree(_) => Kind::Degree,
        }
    }
}

fn params(spec: &ModelSpec, entry: &Entry) -> Result<Vec<f64>, ConfigError> {
    if spec.params.len() > entry.params.len() {
        let names: Vec<&str> = entry.params.iter().map(|p| p.0).collect();
        return Err(spec.error(format!(
            "registry `{}` takes {} parameter(s) [{}], got {}",
            entry.name,
            entry.params.len(),
            names.join(", "),
            spec.params.len()
        )));
    }
    Ok(entry.params.iter().enumerate().map(|(i, p)| spec.params.get(i).copied().unwrap_or(p.1)).collect())
}

fn scalar(f: impl Fn(f64) -> f64 + Send + Sync + 'static, df: impl Fn(f64) -> f64 + Send + Sync + 'static) -> DynSection {
    FnSection::new(1, 1, move |x: &DVector<f64>| DVector::from_element(1, f(x[0])))
        .with_jacobian(move |x: &DVector<f64>| DMatrix::from_element(1, 1, df(x[0])))
        .into_dyn()
}

fn circle(r: f64) -> DynSection {
    FnSection::new(2, 1, move |x| DVector::from_element(1, x[0] * x[0] + x[1] * x[1] - r * r))
        .with_jacobian(|x| DMatrix::from_row_slice(1, 2, &[2.0 * x[0], 2.0 * x[1]]))
        .into_dyn()
}

fn parabola(a: f64) -> DynSection {
    FnSection::new(2, 1, move |x| DVector::from_element(1, x[1] - a * x[0] * x[0]))
        .with_jacobian(move |x| DMatrix::from_row_slice(1, 2, &[-2.0 * a * x[0], 1.0]))
        .with_quadrant_rank(1)
        .into_dyn()
}

fn cubic(c: f64) -> DynSection {
    scalar(move |x| x * x * x - x + c, |x| 3.0 * x * x - 1.0)
}

fn check_dims(spec: &ModelSpec, actual: &[usize], quadrant_rank: usize) -> Result<(), ConfigError> {
    if let Some(d) = &spec.dims {
        if d.as_slice() != actual {
            return Err(spec.error(format!("dims {d:?} do not match the registry model {actual:?}")));
        }
    }
    if let Some(q) = spec.quadrant_rank {
        if q != quadrant_rank {
            return Err(spec.error(format!("quadrant_rank {q} does not match the registry model ({quadrant_rank})")));
        }
    }
    Ok(())
}

fn seeds(spec: &ModelSpec, dim: usize, default: Vec<DVector<f64>>) -> Result<Vec<DVector<f64>>, ConfigError> {
    if spec.seeds.is_empty() {
        return Ok(default);
    }
    if spec.seeds[0].len() != dim {
        return Err(spec.error(format!("seed points must have dimension {dim}")));
    }
    Ok(spec.seeds.iter().map(|s| DVector::from_column_slice(s)).collect())
}

fn no_chart_keys(spec: &ModelSpec) -> Result<(), ConfigError> {
    if spec.splicing.is_some() || spec.filler.is_some() {
        return Err(spec.error("splicing and filler only apply to parametrize models"));
    }
    Ok(())
}

fn germ_model(spec: &ModelSpec, entry: &Entry, p: &[f64]) -> Result<GermModel, ConfigError> {
    no_chart_keys(spec)?;
    if spec.window.is_some() || spec.budget.is_some() {
        return Err(spec.error("window and budget only apply to degree models"));
    }
    let weights = spec.weights.clone().unwrap_or_else(|| vec![1.0]);
    let k = weights.len();
    let levels = spec.levels.unwrap_or(models::GERM_LEVELS);
    check_dims(spec, &[k, k], k)?;
    let points = seeds(spec, k, vec![DVector::zeros(k)])?;
    let (germ, affine) = match entry.name {
        "cosine" => {
            if !(p[0].abs() < 1.0) {
                return Err(spec.error("amplitude must satisfy |a| < 1 for a contraction"));
            }
            (models::cosine_germ_with(p[0], &weights, levels), None)
        }
        _ => {
            let (alpha, beta) = (p[0], p[1]);
            if !(alpha.abs() < 1.0) {
                return Err(spec.error("alpha must satisfy |α| < 1 for a contraction"));
            }
            let s = Arc::new(GradedSpace::with_weights(vec![1.0; k], levels, k).map_err(|e| spec.error(e.to_string()))?);
            let w = Arc::new(GradedSpace::with_weights(weights, levels, 0).map_err(|e| spec.error(e.to_string()))?);
            let germ = ContractionGerm::new(s, w, move |v, u| u * alpha + v * beta, ContractionGerm::uniform_schedule(levels, alpha.abs(), 1.0))
                .map_err(|e| spec.error(e.to_string()))?
                .with_jacobians(move |_, _| DMatrix::identity(k, k) * beta, move |_, _| DMatrix::identity(k, k) * alpha);
            (germ, Some((alpha, beta)))
        }
    };
    for v in &points {
        if v.amax() >= germ.schedule()[0].radius {
            return Err(spec.error("parameter points must lie inside the contraction neighborhood |v| < 1"));
        }
    }
    Ok(GermModel { germ, affine, points })
}

fn chart_model(spec: &ModelSpec, entry: &Entry, p: &[f64]) -> Result<ChartModel, ConfigError> {
    if spec.window.is_some() || spec.budget.is_some() {
        return Err(spec.error("window and budget only apply to degree models"));
    }
    let mut oracle = None;
    let mut compact_circle = None;
    let mut filled = None;
    let mut radius = 0.5;
    let rotating = entry.name == "rotating-line";
    let splicing = spec.splicing.unwrap_or(if rotating { SplicingChoice::RotatingLine } else { SplicingChoice::Trivial });
    if rotating != (splicing == SplicingChoice::RotatingLine) {
        return Err(spec.error("splicing = rotating-line goes with registry = rotating-line and nothing else"));
    }
    if spec.filler.is_some() && !rotating {
        return Err(spec.error("a filler needs the rotating-line splicing"));
    }
    let (section, default_seeds) = match entry.name {
        "linear" => (models::linear_section(), vec![DVector::from_vec(vec![1.0, 0.0, 0.0]), DVector::from_vec(vec![1.3, -0.1, 0.1])]),
        "circle" => {
            let r = p[0];
            if !(r > 0.0) {
                return Err(spec.error("radius must be positive"));
            }
            oracle = Some(ChartOracle::Circle { radius: r });
            compact_circle = Some(r);
            radius = 0.9 * r;
            let pts = (0..8).map(|j| {
                let a = TAU * j as f64 / 8.0;
                DVector::from_vec(vec![r * a.cos(), r * a.sin()])
            });
            (circle(r), pts.collect())
        }
        "parabola-corner" => {
            oracle = Some(ChartOracle::Parabola { curvature: p[0] });
            (parabola(p[0]), vec![DVector::zeros(2)])
        }
        "linear-corner" => (models::linear_corner(), vec![DVector::zeros(2)]),
        "quadrant-plane" => (models::quadrant_plane(), vec![DVector::zeros(3)]),
        _ => {
            let lambda = spec.filler.unwrap_or(2.0);
            if !(lambda.is_finite() && lambda != 0.0) {
                return Err(spec.error("the filler coefficient must be finite and nonzero"));
            }
            let fs = models::rotating_line_filled_with(lambda);
            filled = Some(fs.clone());
            (Arc::new(fs) as DynSection, vec![models::rotating_line_zero()])
        }
    };
    check_dims(spec, &[section.domain_dim(), section.fiber_dim()], section.quadrant_rank())?;
    let seeds = seeds(spec, section.domain_dim(), default_seeds)?;
    Ok(ChartModel { section, seeds, radius, splicing, filled, oracle, compact_circle })
}

fn degree_setup(spec: &ModelSpec, entry: &Entry, p: &[f64]) -> Result<DegreeSetup, ConfigError> {
    no_chart_keys(spec)?;
    let base = models::degree_model(entry.name).expect("registry and degree models agree");
    let (section, homotopy) = if entry.name == "cubic" {
        let c = p[0];
        (cubic(c), Some(Homotopy::new("cubic-shift", 20, move |t| cubic(c + 0.05 * t))))
    } else {
        (base.section, None)
    };
    let d = section.domain_dim();
    check_dims(spec, &[d, section.fiber_dim()], section.quadrant_rank())?;
    let window = match &spec.window {
        Some((lo, hi)) if lo.len() == d => Window::new(lo.clone(), hi.clone()),
        Some(_) => return Err(spec.error(format!("the window must have dimension {d}"))),
        None => base.window,
    };
    let mut problem = PerturbationProblem::new(section, window);
    if !spec.seeds.is_empty() {
        problem = problem.with_seeds(seeds(spec, d, Vec::new())?);
    }
    Ok(DegreeSetup { problem, homotopy })
}

/// Builds the model a spec refers to. Seeds, budget and the RNG seed of a
/// degree problem are applied by the command.
pub fn resolve(spec: &ModelSpec) -> Result<Model, ConfigError> {
    let entry = lookup(&spec.registry).ok_or_else(|| {
        let known: Vec<&str> = ENTRIES.iter().map(|e| e.name).collect();
        spec.error(format!("unknown registry model `{}`; known: {}", spec.registry, known.join(", ")))
    })?;
    let p = params(spec, entry)?;
    if entry.kind != Kind::Germ && (spec.weights.is_some() || spec.levels.is_some()) {
        return Err(spec.error("weights and levels only apply to germ models"));
    }
    Ok(match entry.kind {
        Kind::Germ => Model::Germ(germ_model(spec, entry, &p)?),
        Kind::Chart => Model::Chart(chart_model(spec, entry, &p)?),
        Kind::Cone => {
            no_chart_keys(spec)?;
            if entry.name == "quadrant-image" {
                let trial = p[0];
                if !(trial >= 0.0 && trial.fract() == 0.0) {
                    return Err(spec.error("trial must be a nonnegative integer"));
                }
                let seed = spec.seed.unwrap_or(crate::rng::DEFAULT_SEED);
                Model::Cone(models::random_quadrant_image(seed, trial as u64).0)
            } else {
                Model::Cone(models::cone_instance(entry.name).expect("registry and cone instances agree"))
            }
        }
        Kind::Degree => Model::Degree(degree_setup(spec, entry, &p)?),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_entry_resolves_with_defaults() {
        for e in entries() {
            let m = resolve(&ModelSpec::named(e.name)).unwrap_or_else(|err| panic!("{}: {err}", e.name));
            assert_eq!(m.kind(), e.kind, "{}", e.name);
        }
    }

    #[test]
    fn default_parameters_reproduce_the_shared_models() {
        let Model::Degree(d) = resolve(&ModelSpec::named("cubic")).unwrap() else { panic!() };
        let x = DVector::from_element(1, 0.7);
        assert_eq!(d.problem.section.eval(&x), models::cubic_shift(0.0).eval(&x));
        let Model::Chart(c) = resolve(&ModelSpec::named("circle")).unwrap() else { panic!() };
        let y = DVector::from_vec(vec![0.3, -1.2]);
        assert_eq!(c.section.eval(&y), models::circle_section().eval(&y));
    }

    #[test]
    fn bad_references_are_rejected() {
        let mut s = ModelSpec::named("cosine");
        s.params = vec![1.5];
        assert!(resolve(&s).is_err());
        let mut s = ModelSpec::named("circle");
        s.seeds = vec![vec![1.0, 0.0, 0.0]];
        assert!(resolve(&s).is_err());
        let mut s = ModelSpec::named("circle");
        s.splicing = Some(SplicingChoice::RotatingLine);
        assert!(resolve(&s).is_err());
        let mut s = ModelSpec::named("cubic");
        s.dims = Some(vec![2, 2]);
        assert!(resolve(&s).is_err());
        let mut s = ModelSpec::named("identity");
        s.params = vec![1.0];
        assert!(resolve(&s).is_err());
    }
}
