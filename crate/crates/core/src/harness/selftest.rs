//! The acceptance gate: one report per criterion, then a determinism rerun.

use std::f64::consts::TAU;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use super::report::{Report, Value};
use crate::cones::{
    check_structure, extreme_rays, is_good_position, is_neat, is_quadrant, quadrant_structure, reconstruction_residual,
    sample_cone_points, sigma_set, ConeError, PositionGrid, CONE_TOL,
};
use crate::degree::{
    compute_degree, integrate_form, invariance_suite, AtlasOrientation, DegreeError, Form, IntegrationOptions,
    PerturbationProblem,
};
use crate::fredholm::{fredholm_index, index_from_matrix, perturb_normal_form, random_basic_germ, random_sc_plus};
use crate::germ::{fd_solution_derivative, solve_germ, tangent_germ, SolutionGerm, DEFAULT_MAX_ITER};
use crate::linalg;
use crate::models;
use crate::orientation::{continue_orientation, stabilize, DeterminantLine};
use crate::rng;
use crate::section::DynSection;
use crate::solution::{build_boundary_parametrization, build_parametrization, ChartConfig, GoodParametrization, SolutionAtlas};
use crate::splicing::{degeneracy_index, linearize_filled, SplicingCore};
use crate::DEFAULT_TOL;

/// `δ(0)` for `B(v,u) = 0.25·cos u + v`, frozen from a high-precision root solve.
const COSINE_DELTA_0: f64 = 0.242_674_680_640_890_2;

struct Criterion {
    rep: Report,
}

impl Criterion {
    fn new(id: &str, seed: u64, tol: f64) -> Self {
        Self { rep: Report::new("selftest", id, &["metric", "value", "threshold", "pass"], seed, tol) }
    }

    /// `value ≤ threshold`; NaN fails.
    fn at_most(&mut self, metric: &str, value: f64, threshold: f64) {
        let pass = value <= threshold;
        self.rep.row(vec![metric.into(), value.into(), threshold.into(), pass.into()]);
        self.rep.check(metric, pass, format!("{value} ≤ {threshold}"));
    }

    fn exact(&mut self, metric: &str, value: i64, expected: i64) {
        let pass = value == expected;
        self.rep.row(vec![metric.into(), value.into(), expected.into(), pass.into()]);
        self.rep.check(metric, pass, format!("{value} = {expected}"));
    }

    fn holds(&mut self, metric: &str, pass: bool, detail: impl Into<String>) {
        self.rep.row(vec![metric.into(), pass.into(), Value::Empty, pass.into()]);
        self.rep.check(metric, pass, detail);
    }

    fn failed(&mut self, metric: &str, err: impl std::fmt::Display) {
        self.holds(metric, false, format!("error: {err}"));
    }
}

fn scalar(x: f64) -> DVector<f64> {
    DVector::from_element(1, x)
}

fn picard(v: f64) -> f64 {
    let mut u = 0.0f64;
    for _ in 0..200 {
        u = 0.25 * u.cos() + v;
    }
    u
}

fn c1_germ(seed: u64) -> Report {
    let mut c = Criterion::new("c1-germ-solver", seed, 1e-10);
    let g = models::cosine_germ();
    let (mut res, mut ratio, mut gap) = (0.0f64, 0.0f64, 0.0f64);
    for m in 0..=models::GERM_LEVELS {
        match g.solve(&scalar(0.0), m, 1e-12, DEFAULT_MAX_ITER) {
            Ok(fp) => {
                res = res.max(fp.residual);
                ratio = ratio.max(fp.observed_ratio);
                gap = gap.max((fp.solution[0] - picard(0.0)).abs()).max((fp.solution[0] - COSINE_DELTA_0).abs());
            }
            Err(e) => return fail_with(c, "solve", e),
        }
    }
    c.at_most("residual", res, 1e-10);
    c.at_most("convergence_ratio", ratio, 0.3);
    c.at_most("picard_oracle_gap", gap, 1e-9);
    let sol = SolutionGerm::new(g.clone(), 0, 1e-15);
    match (g.derivative(&scalar(0.0), 1e-14), fd_solution_derivative(&sol, &scalar(0.0), 1e-6)) {
        (Ok(d), Ok(fd)) => c.at_most("derivative_fd_relative", (d[(0, 0)] - fd[(0, 0)]).abs() / d[(0, 0)].abs(), 1e-6),
        (Err(e), _) | (_, Err(e)) => c.failed("derivative_fd_relative", e),
    }
    c.rep
}

fn fail_with(mut c: Criterion, metric: &str, err: impl std::fmt::Display) -> Report {
    c.failed(metric, err);
    c.rep
}

fn c2_tangent(seed: u64) -> Report {
    let mut c = Criterion::new("c2-tangent-coherence", seed, 1e-8);
    let g = models::cosine_germ();
    let sol = SolutionGerm::new(g.clone(), 0, 1e-14);
    let t = tangent_germ(&g, &sol);
    let mut r = rng::stream(seed, 2);
    let mut gap: f64 = 0.0;
    for _ in 0..100 {
        let v = rng::uniform(&mut r, -0.5, 0.5);
        let b = rng::uniform(&mut r, -2.0, 2.0);
        gap = gap.max(match (solve_germ(&t, &DVector::from_vec(vec![v, b]), 0, 1e-13, DEFAULT_MAX_ITER), sol.eval(&scalar(v)), sol.derivative(&scalar(v))) {
            (Ok(l), Ok(d), Ok(dp)) => (l[0] - d[0]).abs().max((l[1] - dp[(0, 0)] * b).abs()),
            _ => f64::INFINITY,
        });
    }
    c.at_most("lifted_solution_gap", gap, 1e-8);
    c.rep
}

fn c3_filler(seed: u64) -> Report {
    let mut c = Criterion::new("c3-filler-equivalence", seed, 1e-9);
    let fs = models::rotating_line_filled();
    let core = SplicingCore { model: models::rotating_line_splicing(), tol: 1e-9 };
    let mut r = rng::stream(seed, 3);
    let mut gap: f64 = 0.0;
    for _ in 0..1000 {
        let v = rng::uniform(&mut r, -0.9, 0.9);
        let start = DVector::from_vec(rng::uniform_vec(&mut r, 2, -3.0, 3.0));
        let expected = models::rotating_line_direction(v) * models::rotating_line_offset(v);
        gap = gap.max(match fs.solve_fiber(&scalar(v), &start, 1e-13) {
            Ok(z) if core.contains(&scalar(v), &z) => (&z - &expected).amax().max(fs.core_section(&scalar(v), &z).amax()),
            _ => f64::INFINITY,
        });
    }
    c.at_most("zero_set_gap", gap, 1e-9);
    let (mut off, mut idx_ok) = (0.0f64, true);
    let mut r = rng::stream(seed, 4);
    for _ in 0..20 {
        let v = rng::uniform(&mut r, -0.9, 0.9);
        let e = models::rotating_line_direction(v) * models::rotating_line_offset(v);
        match linearize_filled(&fs, &scalar(v), &e, 1e-12) {
            Ok(b) => {
                off = off.max(b.off_diagonal);
                idx_ok &= b.index_fbar == b.index_fprime;
            }
            Err(_) => idx_ok = false,
        }
    }
    c.at_most("off_diagonal", off, 1e-9);
    c.holds("index_equal", idx_ok, "index Df̄ = index f' at 20 zeros");
    c.rep
}

fn c4_fredholm(seed: u64) -> Report {
    let mut c = Criterion::new("c4-index-stability", seed, 0.9);
    let (mut formula, mut preserved, mut worst) = (0, 0, 0.0f64);
    for trial in 0..20 {
        let bg = random_basic_germ(seed, trial);
        let expected = bg.n as i64 - bg.big_n as i64;
        if fredholm_index(&bg) == expected && index_from_matrix(&bg.linearization()) == expected {
            formula += 1;
        }
        let s = random_sc_plus(&bg, seed, trial);
        match perturb_normal_form(&bg, &s, 400, seed) {
            Ok(nf) => {
                if fredholm_index(&nf.germ) == fredholm_index(&bg) {
                    preserved += 1;
                }
                worst = worst.max(nf.ratios.iter().copied().fold(0.0, f64::max));
            }
            Err(_) => worst = f64::INFINITY,
        }
    }
    c.exact("index_formula_hits", formula, 20);
    c.exact("index_preserved", preserved, 20);
    c.holds("contraction_ratio", worst < 0.9, format!("max ratio {worst} < 0.9"));
    c.rep
}

fn c5_cones(seed: u64) -> Report {
    let mut c = Criterion::new("c5-cones", seed, 1e-8);
    let grid = PositionGrid { samples: 10_000, seed };
    let (mut neat_ok, mut neat_seen) = (true, 0);
    let mut km: f64 = 0.0;
    let (mut roxy_ok, mut roxy_rays) = (true, 0);
    let mut round: f64 = 0.0;
    for inst in models::cone_instances() {
        let sub = &inst.subspace;
        let gp = is_good_position(sub, &inst.candidates, &grid);
        if is_neat(sub).neat {
            neat_seen += 1;
            neat_ok &= matches!(&gp, Ok(g) if g.ok && g.c == 1.0);
        }
        // Only a lineality space excuses a cone from reconstruction.
        km = km.max(match extreme_rays(sub) {
            Ok(cone) => reconstruction_residual(&cone.rays, &sample_cone_points(sub, 1000, seed)),
            Err(ConeError::NotPointed { .. }) => 0.0,
            Err(_) => f64::INFINITY,
        });
        let Ok(gp) = gp else { continue };
        if !gp.ok {
            continue;
        }
        match quadrant_structure(sub, &gp) {
            Ok(qs) => {
                for j in 0..qs.rays.ncols() {
                    roxy_ok &= sigma_set(&qs.rays.column(j).into_owned(), sub.n(), CONE_TOL).len() + 1 == qs.ntilde.ncols();
                    roxy_rays += 1;
                }
                round = round.max(check_structure(sub, &qs, 1000, seed).round_trip);
            }
            Err(_) => round = f64::INFINITY,
        }
    }
    c.holds("neat_good_position", neat_ok && neat_seen > 0, format!("{neat_seen} neat instances, c = 1"));
    c.at_most("krein_milman_residual", km, 1e-8);
    let images = (0..20)
        .filter(|&t| matches!(is_quadrant(&models::random_quadrant_image(seed, t).0.subspace), Ok(q) if q.is_quadrant))
        .count();
    c.exact("quadrant_images_recognized", images as i64, 20);
    let ice = is_quadrant(&models::ice_cream_cone().subspace);
    c.holds("ice_cream_not_quadrant", matches!(ice, Ok(q) if !q.is_quadrant && q.rays.ncols() == 8), "8-ray cone");
    c.holds("sigma_count", roxy_ok && roxy_rays > 0, format!("#σ = dim Ñ − 1 on {roxy_rays} rays"));
    c.at_most("structure_round_trip", round, 1e-10);
    c.rep
}

fn chart_max(gp: &GoodParametrization, seed: u64, c: &mut (f64, f64)) -> bool {
    match gp.verify(200, seed) {
        Ok(r) => {
            c.0 = c.0.max(r.max_residual);
            c.1 = c.1.max(r.da0);
            r.corner_mismatches == 0
        }
        Err(_) => {
            *c = (f64::INFINITY, f64::INFINITY);
            false
        }
    }
}

fn c6_parametrization(seed: u64) -> Report {
    let mut c = Criterion::new("c6-parametrization", seed, 1e-8);
    let wide = ChartConfig { radius: 0.9, seed, ..ChartConfig::default() };
    let base = ChartConfig { seed, ..ChartConfig::default() };
    let circle = |a: f64| build_parametrization(models::circle_section(), &DVector::from_vec(vec![a.cos(), a.sin()]), &wide);
    let gp = match circle(0.0) {
        Ok(g) => g,
        Err(e) => return fail_with(c, "circle_chart", e),
    };
    match gp.a(&scalar(0.6)) {
        Ok(a) => c.at_most("circle_a_gap", (a - DVector::from_vec(vec![-0.2, 0.0])).amax(), 1e-9),
        Err(e) => c.failed("circle_a_gap", e),
    }
    let mut maxima = (0.0, 0.0);
    let mut corners = true;
    let mut circle_charts = Vec::new();
    for j in 0..8 {
        match circle(TAU * j as f64 / 8.0) {
            Ok(g) => {
                corners &= chart_max(&g, seed, &mut maxima);
                circle_charts.push(Arc::new(g));
            }
            Err(_) => maxima = (f64::INFINITY, f64::INFINITY),
        }
    }
    let interior: [(DynSection, DVector<f64>); 2] = [
        (models::linear_section(), DVector::from_vec(vec![1.0, 0.0, 0.0])),
        (Arc::new(models::rotating_line_filled()), models::rotating_line_zero()),
    ];
    for (section, q) in interior {
        match build_parametrization(section, &q, &base) {
            Ok(g) => corners &= chart_max(&g, seed, &mut maxima),
            Err(_) => maxima = (f64::INFINITY, f64::INFINITY),
        }
    }
    let mut parabola_gap: f64 = 0.0;
    let mut active_ok = true;
    for (name, section) in [("parabola", models::parabola_corner()), ("linear", models::linear_corner()), ("plane", models::quadrant_plane())] {
        let q = DVector::zeros(section.domain_dim());
        match build_boundary_parametrization(section.clone(), &q, &base, &[], &PositionGrid::default()) {
            Ok(g) => {
                corners &= chart_max(&g, seed, &mut maxima);
                let qr = g.domain.quadrant_rank();
                for nu in g.sample_domain(200, seed) {
                    let Ok(x) = g.gamma(&nu) else {
                        active_ok = false;
                        continue;
                    };
                    let active = (0..qr).filter(|&i| nu[i] == 0.0).count();
                    active_ok &= degeneracy_index(&x, section.quadrant_rank(), DEFAULT_TOL) == active;
                    if name == "parabola" {
                        parabola_gap = parabola_gap.max((x - DVector::from_vec(vec![nu[0], nu[0] * nu[0]])).amax());
                    }
                }
            }
            Err(_) => {
                active_ok = false;
                parabola_gap = f64::INFINITY;
            }
        }
    }
    c.at_most("max_residual", maxima.0, 1e-8);
    c.at_most("max_da0", maxima.1, 1e-6);
    match SolutionAtlas::build(circle_charts, 100, seed) {
        Ok(atlas) => {
            let worst = atlas.overlaps.iter().map(|o| o.report.max_mismatch).fold(0.0, f64::max);
            c.holds("transitions_present", !atlas.overlaps.is_empty(), format!("{} overlaps", atlas.overlaps.len()));
            c.at_most("transition_mismatch", worst, 1e-8);
        }
        Err(e) => c.failed("transition_mismatch", e),
    }
    c.at_most("parabola_closed_form_gap", parabola_gap, 1e-8);
    c.holds("degeneracy_matches_active", active_ok && corners, "d(Γ(ν)) equals the active constraints");
    c.rep
}

fn e(n: usize, i: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, 1);
    m[(i, 0)] = 1.0;
    m
}

fn projection_off(c: &DMatrix<f64>) -> DMatrix<f64> {
    let m = c.nrows();
    DMatrix::identity(m, m) - linalg::projector(&linalg::orthonormalize_oriented(c), m)
}

/// Stabilizing through two intermediate projections agrees with going direct.
fn triangle(seed: u64, trial: u64) -> bool {
    let mut s = rng::stream(seed, 700 + trial);
    let (m, n) = (5, 4);
    let t = DMatrix::from_fn(m, 3, |_, _| rng::normal(&mut s)) * DMatrix::from_fn(3, n, |_, _| rng::normal(&mut s));
    let run = || -> Result<bool, crate::orientation::OrientationError> {
        let dl = DeterminantLine::canonical(&t)?;
        let mut s = rng::stream(seed, 800 + trial);
        let base = DMatrix::from_fn(m, 2, |_, _| rng::normal(&mut s));
        let v1 = DMatrix::from_fn(m, 1, |_, _| rng::normal(&mut s));
        let v2 = DMatrix::from_fn(m, 1, |_, _| rng::normal(&mut s));
        let cp = linalg::hcat(&base, &v1);
        let cq = linalg::hcat(&base, &v2);
        let (p, q, r) = (projection_off(&cp), projection_off(&cq), projection_off(&linalg::hcat(&cp, &v2)));
        let direct = stabilize(&dl, &r)?;
        let via_p = stabilize(&stabilize(&dl, &p)?, &r)?;
        let via_q = stabilize(&stabilize(&dl, &q)?, &r)?;
        Ok(direct.relative_sign(&via_p)? == 1 && direct.relative_sign(&via_q)? == 1)
    };
    run().unwrap_or(false)
}

fn c7_orientation(seed: u64) -> Report {
    let mut c = Criterion::new("c7-orientation", seed, 0.0);
    let t = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]));
    let p = &e(2, 0) * e(2, 0).transpose();
    let line = |m: &DMatrix<f64>, k: DMatrix<f64>, z: DMatrix<f64>| DeterminantLine::with_bases(m.clone(), k, z, 1);
    let target = line(&(&p * &t), e(2, 1), e(2, 1));
    let sign = stabilize(&line(&t, e(2, 1), e(2, 1)), &p).and_then(|st| target.relative_sign(&st));
    match sign {
        Ok(s) => c.exact("diag_one_zero_sign", s as i64, 1),
        Err(err) => c.failed("diag_one_zero_sign", err),
    }
    let closed = (0..20).filter(|&k| triangle(seed, k)).count();
    c.exact("triangles_closed", closed as i64, 20);
    let path = models::operator_path("diag-crossing").expect("registry path");
    match continue_orientation(&path, 32, 1) {
        Ok(s) => c.exact("spectral_flow_sign", s as i64, -1),
        Err(err) => c.failed("spectral_flow_sign", err),
    }
    let mut stable = true;
    for (_, path) in models::operator_paths() {
        let signs: Vec<_> = [16usize, 32, 64, 128].iter().map(|&k| continue_orientation(&path, k, 1).ok()).collect();
        stable &= signs[0].is_some() && signs.windows(2).all(|w| w[0] == w[1]);
    }
    c.holds("refinement_stable", stable, "signs agree on grids of 16, 32, 64 and 128 steps");
    c.rep
}

fn degree_of(name: &str, seed: u64) -> Result<i64, DegreeError> {
    let m = models::degree_model(name).expect("registry model");
    compute_degree(&PerturbationProblem::new(m.section, m.window).with_budget(0.1).with_seed(seed), &crate::orientation::Reference::Canonical)
        .map(|r| r.degree)
}

fn c8_degree(seed: u64) -> Report {
    let mut c = Criterion::new("c8-degree", seed, 0.1);
    for (name, expected) in [("cubic", 1), ("square-minus-one", 0)] {
        match degree_of(name, seed) {
            Ok(d) => c.exact(&format!("degree_{name}"), d, expected),
            Err(err) => c.failed(&format!("degree_{name}"), err),
        }
    }
    let m = models::degree_model("cubic").expect("registry model");
    let pp = PerturbationProblem::new(m.section, m.window).with_budget(0.1).with_seed(seed);
    let report = match invariance_suite(&pp, 50, Some(&models::cubic_homotopy()), &crate::orientation::Reference::Canonical) {
        Ok(r) => r,
        Err(DegreeError::InvarianceViolation(r)) => *r,
        Err(err) => return fail_with(c, "violations", err),
    };
    c.exact("trials", report.trial_degrees.len() as i64, 50);
    c.exact("violations", report.violations.len() as i64, 0);
    c.exact("homotopy_samples", report.registered.len() as i64, 21);
    c.rep
}

fn c9_forms(seed: u64) -> Report {
    let mut c = Criterion::new("c9-form-integration", seed, 1e-6);
    let config = ChartConfig { radius: 0.9, seed, ..ChartConfig::default() };
    let charts: Result<Vec<_>, _> = (0..4)
        .map(|j| {
            let a = TAU * j as f64 / 4.0;
            build_parametrization(models::circle_section(), &DVector::from_vec(vec![a.cos(), a.sin()]), &config).map(Arc::new)
        })
        .collect();
    let atlas = match charts.and_then(|cs| SolutionAtlas::build(cs, 20, seed)) {
        Ok(a) => a,
        Err(err) => return fail_with(c, "atlas", err),
    };
    let coverage = (0..16).map(|j| {
        let a = TAU * j as f64 / 16.0;
        DVector::from_vec(vec![a.cos(), a.sin()])
    });
    let opts = IntegrationOptions { coverage: coverage.collect(), ..IntegrationOptions::default() };
    let circumference = Form::one_form(|x| DVector::from_vec(vec![-x[1], x[0]]));
    let exact = Form::one_form(|x| DVector::from_vec(vec![x[1], x[0]]));
    match integrate_form(&atlas, &circumference, &AtlasOrientation::Induced, &opts) {
        Ok(r) => c.at_most("circumference_error", (r.value - TAU).abs(), 1e-6),
        Err(err) => c.failed("circumference_error", err),
    }
    match integrate_form(&atlas, &exact, &AtlasOrientation::Induced, &opts) {
        Ok(r) => c.at_most("exact_form_value", r.value.abs(), 1e-8),
        Err(err) => c.failed("exact_form_value", err),
    }
    c.rep
}

/// Criteria 1 to 9, in order.
pub fn run_criteria(seed: u64) -> Vec<Report> {
    let criteria: [fn(u64) -> Report; 9] =
        [c1_germ, c2_tangent, c3_filler, c4_fredholm, c5_cones, c6_parametrization, c7_orientation, c8_degree, c9_forms];
    criteria
        .iter()
        .map(|f| {
            let start = Instant::now();
            let mut r = f(seed);
            r.provenance.wall_time_s = start.elapsed().as_secs_f64();
            r
        })
        .collect()
}

/// Criteria 1 to 9, then criterion 10: a second run must reproduce every
/// metric table byte for byte.
pub fn cmd_selftest(seed: u64) -> Vec<Report> {
    let start = Instant::now();
    let mut first = run_criteria(seed);
    let second = run_criteria(seed);
    let mut c = Criterion::new("c10-determinism", seed, 0.0);
    let identical = first.iter().zip(&second).filter(|(a, b)| a.csv_bytes() == b.csv_bytes()).count();
    c.exact("identical_tables", identical as i64, first.len() as i64);
    c.rep.provenance.wall_time_s = start.elapsed().as_secs_f64();
    first.push(c.rep);
    first
}
