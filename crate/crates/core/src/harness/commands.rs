//! Batch commands: one [`Report`] per model.

use std::f64::consts::TAU;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;

use super::config::{Config, ConfigError, ModelSpec, SplicingChoice};
use super::registry::{self, ChartModel, ChartOracle, DegreeSetup, GermModel, Kind, Model};
use super::report::{coords, Report, Value};
use crate::cones::{
    check_structure, extreme_rays, is_good_position, is_neat, is_quadrant, quadrant_structure, reconstruction_residual,
    sample_cone_points, sigma_set, ConeError, PositionGrid, CONE_TOL,
};
use crate::degree::{
    compute_degree, integrate_form, invariance_suite, AtlasOrientation, DegreeError, Form, IntegrationOptions,
};
use crate::germ::{fd_solution_derivative, solve_germ, tangent_germ, verify_contraction, SamplingPlan, SolutionGerm, DEFAULT_MAX_ITER};
use crate::linalg;
use crate::models::{self, ConeInstance};
use crate::orientation::Reference;
use crate::rng;
use crate::section::Section;
use crate::solution::{
    build_boundary_parametrization, build_parametrization, ChartConfig, ChartDomain, GoodParametrization, SolutionAtlas,
    A0_TOL, DA0_TOL, RESIDUAL_TOL,
};
use crate::splicing::{degeneracy_index, linearize_filled, FilledSection, SplicingCore};
use crate::DEFAULT_TOL;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandName {
    SolveGerm,
    Parametrize,
    Cones,
    Degree,
    Selftest,
}

impl CommandName {
    pub fn as_str(self) -> &'static str {
        match self {
            CommandName::SolveGerm => "solve-germ",
            CommandName::Parametrize => "parametrize",
            CommandName::Cones => "cones",
            CommandName::Degree => "degree",
            CommandName::Selftest => "selftest",
        }
    }

    /// The registry model run when no configuration file is given.
    pub fn default_model(self) -> Option<&'static str> {
        match self {
            CommandName::SolveGerm => Some("cosine"),
            CommandName::Parametrize => Some("circle"),
            CommandName::Cones => Some("diag-plane"),
            CommandName::Degree => Some("cubic"),
            CommandName::Selftest => None,
        }
    }

    pub fn default_config(self) -> Config {
        Config { run: Default::default(), models: self.default_model().map(ModelSpec::named).into_iter().collect() }
    }
}

fn seed_of(spec: &ModelSpec) -> u64 {
    spec.seed.unwrap_or(rng::DEFAULT_SEED)
}

fn max_of(it: impl IntoIterator<Item = f64>) -> f64 {
    it.into_iter().fold(0.0, |a, b| if b.is_nan() { f64::INFINITY } else { a.max(b) })
}

fn wrong_kind(spec: &ModelSpec, command: &str, kind: Kind) -> ConfigError {
    spec.error(format!("`{}` is a {} model, not usable by `{command}`", spec.registry, kind.command()))
}

/// Runs a command over every model of the configuration that it accepts.
pub fn run(command: CommandName, config: &Config) -> Result<Vec<Report>, ConfigError> {
    if command == CommandName::Selftest {
        return Ok(super::selftest::cmd_selftest(config.run.seed.unwrap_or(rng::DEFAULT_SEED)));
    }
    let mut specs = Vec::new();
    for spec in config.effective_models() {
        let model = registry::resolve(&spec)?;
        let accepted = match (command, &model) {
            (CommandName::SolveGerm, Model::Germ(_)) => true,
            (CommandName::Parametrize, Model::Chart(_)) => true,
            (CommandName::Cones, Model::Cone(_)) => true,
            (CommandName::Degree, Model::Degree(_)) => true,
            (CommandName::Degree, Model::Chart(c)) => c.compact_circle.is_some(),
            _ => false,
        };
        if accepted {
            specs.push(spec);
        }
    }
    if specs.is_empty() {
        return Err(ConfigError::NoModels { command: command.as_str().into() });
    }
    specs
        .par_iter()
        .map(|spec| match command {
            CommandName::SolveGerm => cmd_solve_germ(spec),
            CommandName::Parametrize => cmd_parametrize(spec),
            CommandName::Cones => cmd_cones(spec),
            CommandName::Degree => cmd_degree(spec),
            CommandName::Selftest => unreachable!(),
        })
        .collect()
}

fn finish(mut report: Report, start: Instant) -> Report {
    report.provenance.wall_time_s = start.elapsed().as_secs_f64();
    report
}

/// Fixed point of `u = a·cos u + v` componentwise by plain iteration.
fn cosine_oracle(a: f64, v: &DVector<f64>) -> DVector<f64> {
    v.map(|vi| {
        let mut u = 0.0f64;
        for _ in 0..100_000 {
            let next = a * u.cos() + vi;
            if next == u {
                break;
            }
            u = next;
        }
        u
    })
}

/// Solver residuals, derivative against finite differences, tangent
/// coherence, uniqueness and level coherence.
pub fn cmd_solve_germ(spec: &ModelSpec) -> Result<Report, ConfigError> {
    let start = Instant::now();
    let Model::Germ(GermModel { germ, affine, points }) = registry::resolve(spec)? else {
        return Err(wrong_kind(spec, "solve-germ", registry::resolve(spec)?.kind()));
    };
    let tol = spec.tol.unwrap_or(1e-12);
    let seed = seed_of(spec);
    let mut rep = Report::new(
        "solve-germ",
        &spec.name,
        &["level", "v", "delta", "residual", "observed_ratio", "rho", "fd_rel_error", "contraction_ratio"],
        seed,
        tol,
    );
    let levels = germ.solution_space().levels();
    let k = germ.solution_dim();
    let mut residuals = Vec::new();
    let mut rate_ok = true;
    let mut fd_errors = Vec::new();
    let mut certificate_ok = true;
    let mut level_gap: f64 = 0.0;
    let mut oracle_gap: f64 = 0.0;
    let mut failures = Vec::new();
    for m in 0..=levels {
        let rho = germ.schedule()[m].rho;
        let cert = verify_contraction(&germ, m, &SamplingPlan { seed, ..SamplingPlan::default() });
        certificate_ok &= cert.passed && cert.max_ratio <= rho + 1e-12;
        for v in &points {
            let fp = match germ.solve(v, m, tol, DEFAULT_MAX_ITER) {
                Ok(fp) => fp,
                Err(e) => {
                    failures.push(format!("level {m}: {e}"));
                    continue;
                }
            };
            let sol = SolutionGerm::new(germ.clone(), m, 1e-15);
            let fd_rel = match (germ.derivative(v, tol.min(1e-14)), fd_solution_derivative(&sol, v, 1e-6)) {
                (Ok(d), Ok(fd)) => (&d - &fd).amax() / d.amax().max(f64::MIN_POSITIVE),
                (Err(e), _) | (_, Err(e)) => {
                    failures.push(format!("derivative at level {m}: {e}"));
                    f64::INFINITY
                }
            };
            if let Ok(base) = germ.solve(v, 0, tol, DEFAULT_MAX_ITER) {
                level_gap = level_gap.max((&fp.solution - &base.solution).amax());
            }
            if let Some((alpha, beta)) = affine {
                oracle_gap = oracle_gap.max((&fp.solution - v * (beta / (1.0 - alpha))).amax());
            } else if spec.registry == "cosine" {
                let a = spec.params.first().copied().unwrap_or(0.25);
                oracle_gap = oracle_gap.max((&fp.solution - cosine_oracle(a, v)).amax());
            }
            rate_ok &= fp.observed_ratio <= rho + 0.05;
            residuals.push(fp.residual);
            fd_errors.push(fd_rel);
            rep.row(vec![
                m.into(),
                coords(v.as_slice()),
                coords(fp.solution.as_slice()),
                fp.residual.into(),
                fp.observed_ratio.into(),
                rho.into(),
                fd_rel.into(),
                cert.max_ratio.into(),
            ]);
        }
    }
    let solved = failures.is_empty();
    rep.check("solver_converges", solved, failures.join("; "));
    let max_res = max_of(residuals.iter().copied());
    rep.check("residual", solved && max_res <= tol, format!("max residual {max_res} against tol {tol}"));
    rep.check("convergence_rate", solved && rate_ok, "observed ratio within rho + 0.05");
    let max_fd = max_of(fd_errors.iter().copied());
    rep.check("derivative_fd", solved && max_fd <= 1e-6, format!("max relative error {max_fd}"));
    rep.check("contraction_certificate", certificate_ok, "sampled Lipschitz ratio below the certified rho");
    rep.check("level_coherence", level_gap <= 2.0 * tol, format!("max gap across levels {level_gap}"));
    rep.check("closed_form_oracle", oracle_gap <= 1e-9, format!("max deviation {oracle_gap}"));

    // Uniqueness: other starting points inside the ball give the same solution.
    let mut unique_gap: f64 = 0.0;
    for v in &points {
        for u0 in [0.5, -0.5] {
            let u0 = DVector::from_element(k, u0);
            match (germ.solve(v, 0, tol, DEFAULT_MAX_ITER), germ.solve_from(v, &u0, 0, tol, DEFAULT_MAX_ITER)) {
                (Ok(a), Ok(b)) => unique_gap = unique_gap.max((a.solution - b.solution).amax()),
                _ => unique_gap = f64::INFINITY,
            }
        }
    }
    rep.check("uniqueness", unique_gap <= 2.0 * tol, format!("max gap between starts {unique_gap}"));

    // Tangent coherence on sampled (v, b).
    let sol = SolutionGerm::new(germ.clone(), 0, 1e-14);
    let lifted = tangent_germ(&germ, &sol);
    let samples = spec.samples.unwrap_or(100);
    let mut r = rng::stream(seed, 1);
    let mut tangent_gap: f64 = 0.0;
    for _ in 0..samples {
        let v = DVector::from_vec(rng::uniform_vec(&mut r, k, -0.5, 0.5));
        let b = DVector::from_vec(rng::uniform_vec(&mut r, k, -2.0, 2.0));
        let vb = linalg::concat(&v, &b);
        let gap = match (solve_germ(&lifted, &vb, 0, 1e-13, DEFAULT_MAX_ITER), sol.eval(&v), sol.derivative(&v)) {
            (Ok(l), Ok(d), Ok(dp)) => {
                let expected = linalg::concat(&d, &(dp * &b));
                (l - expected).amax()
            }
            _ => f64::INFINITY,
        };
        tangent_gap = tangent_gap.max(gap);
    }
    rep.check("tangent_coherence", tangent_gap <= 1e-8, format!("max deviation {tangent_gap} over {samples} samples"));
    Ok(finish(rep, start))
}

fn build_chart(model: &ChartModel, q: &DVector<f64>, config: &ChartConfig) -> Result<GoodParametrization, String> {
    let res = if model.section.quadrant_rank() > 0 {
        build_boundary_parametrization(model.section.clone(), q, config, &[], &PositionGrid::default())
    } else {
        build_parametrization(model.section.clone(), q, config)
    };
    res.map_err(|e| e.to_string())
}

fn oracle_deviation(oracle: ChartOracle, gp: &GoodParametrization, nu: &DVector<f64>) -> Result<f64, String> {
    let x = gp.gamma(nu).map_err(|e| e.to_string())?;
    let expected = match oracle {
        ChartOracle::Circle { radius } => {
            let s = (radius * radius - nu.norm_squared()).sqrt() / radius;
            &gp.base * s + &gp.kernel * nu
        }
        ChartOracle::Parabola { curvature } => DVector::from_vec(vec![nu[0], curvature * nu[0] * nu[0]]),
    };
    Ok((x - expected).amax())
}

fn splicing_checks(rep: &mut Report, fs: &FilledSection, seed: u64) {
    let model = &fs.bundle.base;
    let idem = model.idempotency_defect(1000, seed);
    rep.check("splicing_idempotent", idem <= 1e-12, format!("max |π∘π − π| = {idem}"));
    let modulus = model.continuity_modulus(1e-6, 200, seed);
    rep.check("splicing_continuous", modulus < 1e-5, format!("modulus at step 1e-6: {modulus}"));
    let filler = fs.filler.validate(&fs.bundle, 200, seed, 1e-12);
    rep.check("filler_valid", filler.passed, format!("{filler:?}"));

    let core = SplicingCore { model: model.clone(), tol: 1e-9 };
    let mut r = rng::stream(seed, 3);
    let mut gap: f64 = 0.0;
    for _ in 0..1000 {
        let v = DVector::from_element(1, rng::uniform(&mut r, -0.9, 0.9));
        let start = DVector::from_vec(rng::uniform_vec(&mut r, 2, -3.0, 3.0));
        let expected = models::rotating_line_direction(v[0]) * models::rotating_line_offset(v[0]);
        gap = gap.max(match fs.solve_fiber(&v, &start, 1e-13) {
            Ok(zero) if core.contains(&v, &zero) => (&zero - &expected).amax().max(fs.core_section(&v, &zero).amax()),
            _ => f64::INFINITY,
        });
    }
    rep.check("zero_sets_match", gap <= 1e-9, format!("max deviation of f̄ zeros from f zeros {gap}"));

    let mut off: f64 = 0.0;
    let mut index_ok = true;
    for v in [-0.7, -0.2, 0.0, 0.3, 0.8] {
        let e = models::rotating_line_direction(v) * models::rotating_line_offset(v);
        match linearize_filled(fs, &DVector::from_element(1, v), &e, 1e-12) {
            Ok(b) => {
                off = off.max(b.off_diagonal);
                index_ok &= b.index_fbar == b.index_fprime;
            }
            Err(_) => index_ok = false,
        }
    }
    rep.check("block_form", off <= 1e-9, format!("max off-diagonal norm {off}"));
    rep.check("filled_index", index_ok, "index of the filled linearization equals that of f'");
}

/// Interior and boundary charts at each seed, atlas invariants and chart samples.
pub fn cmd_parametrize(spec: &ModelSpec) -> Result<Report, ConfigError> {
    let start = Instant::now();
    let model = match registry::resolve(spec)? {
        Model::Chart(c) => c,
        other => return Err(wrong_kind(spec, "parametrize", other.kind())),
    };
    let tol = spec.tol.unwrap_or(RESIDUAL_TOL);
    let seed = seed_of(spec);
    let samples = spec.samples.unwrap_or(64);
    let k = model.section.domain_dim() - model.section.fiber_dim();
    let d = model.section.domain_dim();
    let mut columns = vec!["chart".to_string(), "sample".to_string()];
    columns.extend((0..k).map(|i| format!("nu_{i}")));
    columns.extend((0..d).map(|i| format!("x_{i}")));
    columns.push("residual".into());
    let cols: Vec<&str> = columns.iter().map(String::as_str).collect();
    let mut rep = Report::new("parametrize", &spec.name, &cols, seed, tol);

    let config = ChartConfig { radius: model.radius, seed, ..ChartConfig::default() };
    let mut charts = Vec::new();
    let mut failures = Vec::new();
    for (i, q) in model.seeds.iter().enumerate() {
        match build_chart(&model, q, &config) {
            Ok(gp) => charts.push(Arc::new(gp)),
            Err(e) => failures.push(format!("chart {i}: {e}")),
        }
    }
    rep.check("charts_built", failures.is_empty(), failures.join("; "));

    let (mut a0, mut da0, mut res, mut surj) = (0.0f64, 0.0f64, 0.0f64, f64::INFINITY);
    let mut verified = true;
    let mut corner_mismatch = 0usize;
    let mut oracle_gap: f64 = 0.0;
    for (i, gp) in charts.iter().enumerate() {
        match gp.verify(200, seed) {
            Ok(cr) => {
                a0 = a0.max(cr.a0);
                da0 = da0.max(cr.da0);
                res = res.max(cr.max_residual);
                surj = surj.min(cr.min_surjectivity);
                corner_mismatch += cr.corner_mismatches;
                verified &= cr.passed;
            }
            Err(_) => verified = false,
        }
        let qr = gp.domain.quadrant_rank();
        for (j, nu) in gp.sample_domain(samples, seed).iter().enumerate() {
            let Ok(x) = gp.gamma(nu) else {
                verified = false;
                continue;
            };
            let r = model.section.eval(&x).amax();
            if let ChartDomain::Quadrant { .. } = gp.domain {
                let active = (0..qr).filter(|&c| nu[c] == 0.0).count();
                if degeneracy_index(&x, model.section.quadrant_rank(), DEFAULT_TOL) != active {
                    corner_mismatch += 1;
                }
            }
            if let Some(o) = model.oracle {
                oracle_gap = oracle_gap.max(oracle_deviation(o, gp, nu).unwrap_or(f64::INFINITY));
            }
            let mut row: Vec<Value> = vec![i.into(), j.into()];
            row.extend(nu.iter().map(|&v| Value::Real(v)));
            row.extend(x.iter().map(|&v| Value::Real(v)));
            row.push(r.into());
            rep.row(row);
        }
    }
    let built = !charts.is_empty();
    rep.check("chart_verify", built && verified, "every chart passes its own verification");
    rep.check("a_at_zero", built && a0 <= A0_TOL, format!("max |A(0)| = {a0}"));
    rep.check("da_at_zero", built && da0 <= DA0_TOL, format!("max |DA(0)| = {da0}"));
    rep.check("residual", built && res <= tol, format!("max |f∘Γ| = {res}"));
    rep.check("surjectivity", built && surj > 0.0, format!("min relative σ of f' = {surj}"));
    rep.check("corner_index", corner_mismatch == 0, format!("{corner_mismatch} samples where d(Γ(ν)) differs from the active constraints"));
    if model.oracle.is_some() {
        rep.check("closed_form_oracle", oracle_gap <= 1e-8, format!("max deviation {oracle_gap}"));
    }
    if charts.len() > 1 {
        match SolutionAtlas::build(charts.clone(), 100, seed) {
            Ok(atlas) => {
                let worst = max_of(atlas.overlaps.iter().map(|o| o.report.max_mismatch));
                rep.check(
                    "transitions",
                    atlas.consistent(1e-8),
                    format!("{} overlaps, max mismatch {worst}", atlas.overlaps.len()),
                );
            }
            Err(e) => rep.error("transitions", e),
        }
    }
    match model.splicing {
        SplicingChoice::Trivial => {}
        SplicingChoice::RotatingLine => splicing_checks(&mut rep, model.filled.as_ref().expect("rotating line carries its filled section"), seed),
        SplicingChoice::TruncationApproximate => {
            let m = models::rank_jump_splicing();
            let idem = m.idempotency_defect(500, seed);
            rep.check("splicing_idempotent", idem <= 1e-12, format!("max |π∘π − π| = {idem}"));
            let modulus = m.continuity_modulus(0.05, 2000, seed);
            rep.check("truncation_flagged", modulus > 0.1, format!("modulus at step 0.05: {modulus}"));
        }
    }
    Ok(finish(rep, start))
}

/// Neatness, good position, extreme rays, quadrant recognition and the
/// quadrant structure of one subspace.
pub fn cmd_cones(spec: &ModelSpec) -> Result<Report, ConfigError> {
    let start = Instant::now();
    let inst: ConeInstance = match registry::resolve(spec)? {
        Model::Cone(c) => c,
        other => return Err(wrong_kind(spec, "cones", other.kind())),
    };
    let tol = spec.tol.unwrap_or(1e-8);
    let seed = seed_of(spec);
    let samples = spec.samples.unwrap_or(10_000);
    let sub = &inst.subspace;
    let mut rep = Report::new(
        "cones",
        &spec.name,
        &["dim", "neat", "good_position", "c", "rays", "pointed", "quadrant", "quadrant_rank", "sigma", "reconstruction", "round_trip"],
        seed,
        tol,
    );
    let neat = is_neat(sub).neat;
    let gp = is_good_position(sub, &inst.candidates, &PositionGrid { samples, seed });
    let (good, c) = match &gp {
        Ok(g) => (Value::Bool(g.ok), Value::Real(g.c)),
        Err(ConeError::Inconclusive(_)) => (Value::from("inconclusive"), Value::Empty),
        Err(e) => (Value::Text(format!("error: {e}")), Value::Empty),
    };
    let good_ok = matches!(&gp, Ok(g) if g.ok);
    let unit_constant = matches!(&gp, Ok(g) if g.ok && g.c == 1.0);
    rep.check("neat_good_position", !neat || unit_constant, format!("neat = {neat}, good position = {good}, c = {c}"));
    rep.check(
        "analysis_completes",
        matches!(gp, Ok(_) | Err(ConeError::Inconclusive(_)) | Err(ConeError::EmptyInterior)),
        "good-position analysis ends in a verdict",
    );

    let cone = extreme_rays(sub);
    let (rays, pointed, recon) = match &cone {
        Ok(cone) => {
            let pts = sample_cone_points(sub, 1000, seed);
            let resid = reconstruction_residual(&cone.rays, &pts);
            let inside = (0..cone.rays.ncols()).all(|j| sub.contains(&cone.rays.column(j).into_owned(), 1e-12));
            rep.check("krein_milman", resid <= tol && inside, format!("max LP residual {resid} over {} points", pts.len()));
            (Value::from(cone.rays.ncols()), true, Value::Real(resid))
        }
        Err(ConeError::NotPointed { lineality }) => {
            rep.check("krein_milman", true, format!("not pointed, lineality dimension {}", lineality.ncols()));
            (Value::Empty, false, Value::Empty)
        }
        Err(e) => {
            rep.error("krein_milman", e);
            (Value::Empty, false, Value::Empty)
        }
    };
    let quadrant = match is_quadrant(sub) {
        Ok(q) => {
            let count = q.rays.ncols();
            rep.check("quadrant_ray_count", !q.is_quadrant || count == sub.dim(), format!("{count} rays, dim N = {}", sub.dim()));
            Value::Bool(q.is_quadrant)
        }
        Err(ConeError::NotPointed { lineality }) => {
            rep.check("quadrant_ray_count", true, format!("not pointed, lineality dimension {}", lineality.ncols()));
            Value::Empty
        }
        Err(e) => {
            rep.error("quadrant_ray_count", &e);
            Value::Text(format!("error: {e}"))
        }
    };

    let (mut qrank, mut sigma, mut round) = (Value::Empty, Value::Empty, Value::Empty);
    if good_ok {
        match quadrant_structure(sub, gp.as_ref().expect("checked above")) {
            Ok(qs) => {
                let dim_tilde = qs.ntilde.ncols();
                let bad = (0..qs.rays.ncols())
                    .filter(|&j| sigma_set(&qs.rays.column(j).into_owned(), sub.n(), CONE_TOL).len() + 1 != dim_tilde)
                    .count();
                rep.check("sigma_count", bad == 0, format!("{bad} rays with #σ ≠ dim Ñ − 1"));
                let chk = check_structure(sub, &qs, 1000, seed);
                rep.check(
                    "structure_round_trip",
                    chk.round_trip <= 1e-10 && chk.forward_violation <= tol && chk.backward_violation <= tol,
                    format!("{chk:?}"),
                );
                qrank = qs.quadrant_rank.into();
                sigma = qs.sigma.len().into();
                round = chk.round_trip.into();
            }
            Err(e) => rep.error("structure_round_trip", e),
        }
    }
    rep.row(vec![sub.dim().into(), neat.into(), good, c, rays, pointed.into(), quadrant, qrank, sigma, recon, round]);
    Ok(finish(rep, start))
}

fn degree_count(rep: &mut Report, spec: &ModelSpec, setup: DegreeSetup) {
    let seed = seed_of(spec);
    let budget = spec.budget.unwrap_or(0.1);
    let trials = spec.trials.unwrap_or(20);
    let pp = setup.problem.with_budget(budget).with_seed(seed);
    let reference = Reference::Canonical;

    match compute_degree(&pp, &reference) {
        Ok(base) => {
            let g = base.perturbation.s.clone();
            let mismatched = base
                .zeros
                .iter()
                .filter(|(x, s)| {
                    let j = pp.section.jacobian(x) + g.jacobian(x);
                    linalg::det(&j).signum() as i8 != *s
                })
                .count();
            rep.check("zero_signs", mismatched == 0, format!("{mismatched} zeros whose sign differs from sign det f'"));
            if pp.section.domain_dim() == 1 {
                let (fa, fb) = (pp.section.eval(&pp.window.lo)[0], pp.section.eval(&pp.window.hi)[0]);
                let oracle = ((fb.signum() - fa.signum()) / 2.0) as i64;
                rep.check(
                    "sign_count_oracle",
                    fa != 0.0 && fb != 0.0 && base.degree == oracle,
                    format!("degree {} against endpoint signs {oracle}", base.degree),
                );
            }
        }
        Err(e) => rep.error("zero_signs", e),
    }

    let outcome = invariance_suite(&pp, trials, setup.homotopy.as_ref(), &reference);
    let report = match outcome {
        Ok(r) => r,
        Err(DegreeError::InvarianceViolation(r)) => *r,
        Err(e) => {
            rep.error("invariance", e);
            return;
        }
    };
    rep.check("invariance", report.passed(), report.violations.join("; "));
    let over = report.trial_sup_norms.iter().filter(|&&n| !(n < budget)).count();
    rep.check("budget", over == 0, format!("{over} perturbations at or above the budget {budget}"));
    rep.row(vec!["base".into(), 0usize.into(), Value::Empty, report.base_degree.into(), Value::Empty, Value::Empty]);
    for (i, ((d, z), n)) in report.trial_degrees.iter().zip(&report.trial_zero_counts).zip(&report.trial_sup_norms).enumerate() {
        rep.row(vec!["trial".into(), i.into(), Value::Empty, (*d).into(), (*z).into(), (*n).into()]);
    }
    for (stage, samples) in [("linear-homotopy", &report.linear_homotopy), ("homotopy", &report.registered)] {
        for (i, s) in samples.iter().enumerate() {
            rep.row(vec![stage.into(), i.into(), s.t.into(), s.degree.into(), s.zeros.into(), Value::Empty]);
        }
    }
}

fn form_integration(rep: &mut Report, spec: &ModelSpec, model: ChartModel, radius: f64) {
    let seed = seed_of(spec);
    let config = ChartConfig { radius: model.radius, seed, ..ChartConfig::default() };
    let charts: Result<Vec<_>, _> = model.seeds.iter().map(|q| build_chart(&model, q, &config).map(Arc::new)).collect();
    let atlas = match charts.map(|c| SolutionAtlas::build(c, 20, seed).map_err(|e| e.to_string())) {
        Ok(Ok(a)) => a,
        Ok(Err(e)) | Err(e) => {
            rep.error("atlas", e);
            return;
        }
    };
    let coverage = (0..16)
        .map(|j| {
            let a = TAU * j as f64 / 16.0;
            DVector::from_vec(vec![radius * a.cos(), radius * a.sin()])
        })
        .collect();
    let opts = IntegrationOptions { coverage, ..IntegrationOptions::default() };
    let forms = [
        ("x_dy_minus_y_dx", Form::one_form(|x| DVector::from_vec(vec![-x[1], x[0]])), TAU * radius * radius, 1e-6),
        ("d_xy", Form::one_form(|x| DVector::from_vec(vec![x[1], x[0]])), 0.0, 1e-8),
    ];
    for (name, form, expected, bound) in forms {
        match integrate_form(&atlas, &form, &AtlasOrientation::Induced, &opts) {
            Ok(fi) => {
                let err = (fi.value - expected).abs();
                rep.check(name, err <= bound, format!("value {} against {expected}", fi.value));
                rep.check(&format!("{name}_partition"), fi.partition_defect <= 1e-12, format!("defect {}", fi.partition_defect));
                let flipped = AtlasOrientation::Explicit(fi.orientations.iter().map(|s| -s).collect());
                match integrate_form(&atlas, &form, &flipped, &opts) {
                    Ok(back) => rep.check(
                        &format!("{name}_reversal"),
                        (back.value + fi.value).abs() <= 1e-12,
                        format!("reversed value {}", back.value),
                    ),
                    Err(e) => rep.error(&format!("{name}_reversal"), e),
                }
                rep.row(vec![
                    name.into(),
                    fi.value.into(),
                    expected.into(),
                    err.into(),
                    fi.charts_used.into(),
                    fi.partition_defect.into(),
                    fi.nodes.into(),
                ]);
            }
            Err(e) => rep.error(name, e),
        }
    }
}

/// Degree with invariance suite for degree models; form integration over an
/// atlas for compact chart models.
pub fn cmd_degree(spec: &ModelSpec) -> Result<Report, ConfigError> {
    let start = Instant::now();
    let seed = seed_of(spec);
    let tol = spec.tol.unwrap_or(1e-10);
    let rep = match registry::resolve(spec)? {
        Model::Degree(setup) => {
            let mut rep = Report::new("degree", &spec.name, &["stage", "index", "t", "degree", "zeros", "sup_norm"], seed, tol);
            degree_count(&mut rep, spec, setup);
            rep
        }
        Model::Chart(model) => {
            let Some(radius) = model.compact_circle else {
                return Err(spec.error("form integration needs a compact zero set (registry circle)"));
            };
            let mut rep = Report::new(
                "degree",
                &spec.name,
                &["form", "value", "expected", "error", "charts", "partition_defect", "nodes"],
                seed,
                tol,
            );
            form_integration(&mut rep, spec, model, radius);
            rep
        }
        other => return Err(wrong_kind(spec, "degree", other.kind())),
    };
    Ok(finish(rep, start))
}
