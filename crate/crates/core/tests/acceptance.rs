//! Acceptance gate. Runs every criterion at its stated tolerance against
//! oracles computed here, prints one `[PASS]`/`[FAIL] Cn` line each, and
//! exits nonzero if any fails.

use std::f64::consts::TAU;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use germforge::cones::{
    check_structure, extreme_rays, is_good_position, is_neat, is_quadrant, quadrant_structure, reconstruction_residual,
    sample_cone_points, sigma_set, ConeError, PositionGrid, CONE_TOL,
};
use germforge::degree::{
    compute_degree, integrate_form, invariance_suite, AtlasOrientation, DegreeError, Form, IntegrationOptions,
    PerturbationProblem,
};
use germforge::fredholm::{fredholm_index, index_from_matrix, perturb_normal_form, random_basic_germ, random_sc_plus};
use germforge::germ::{solve_germ, tangent_germ, SolutionGerm, DEFAULT_MAX_ITER};
use germforge::harness::{run_criteria, write_reports};
use germforge::models;
use germforge::orientation::{continue_orientation, stabilize, DeterminantLine, Reference};
use germforge::rng;
use germforge::solution::{build_boundary_parametrization, build_parametrization, ChartConfig, GoodParametrization, SolutionAtlas};
use germforge::splicing::{degeneracy_index, linearize_filled, SplicingCore};
use germforge::DEFAULT_TOL;
use nalgebra::{DMatrix, DVector};

/// Seed distinct from the library default so the gate does not replay the selftest.
const SEED: u64 = 20_261_015;

/// Root of `u = 0.25·cos u` and `1/(1 + 0.25·sin u)` there, from a 40-digit solve.
const DELTA_0: f64 = 0.242_674_680_640_890_2;
const DELTA_PRIME_0: f64 = 0.943_329_527_687_964_6;

struct Gate {
    id: &'static str,
    failures: Vec<String>,
    notes: Vec<String>,
}

impl Gate {
    fn new(id: &'static str) -> Self {
        Self { id, failures: Vec::new(), notes: Vec::new() }
    }

    fn at_most(&mut self, what: &str, value: f64, bound: f64) {
        let line = format!("{what} {value:.3e} <= {bound:.0e}");
        if value <= bound {
            self.notes.push(line);
        } else {
            self.failures.push(line);
        }
    }

    fn equal<T: PartialEq + std::fmt::Debug>(&mut self, what: &str, got: T, want: T) {
        let line = format!("{what} {got:?} (want {want:?})");
        if got == want {
            self.notes.push(line);
        } else {
            self.failures.push(line);
        }
    }

    fn finish(self, start: Instant) -> bool {
        let secs = start.elapsed().as_secs_f64();
        let ok = self.failures.is_empty();
        let detail = if ok { self.notes.join("; ") } else { self.failures.join("; ") };
        println!("[{}] {} ({secs:.1}s): {detail}", if ok { "PASS" } else { "FAIL" }, self.id);
        ok
    }
}

fn scalar(x: f64) -> DVector<f64> {
    DVector::from_element(1, x)
}

/// `u = 0.25·cos u + v` by Newton's method in plain floating point.
fn delta_oracle(v: f64) -> f64 {
    let mut u = v;
    for _ in 0..50 {
        u -= (u - 0.25 * u.cos() - v) / (1.0 + 0.25 * u.sin());
    }
    u
}

fn c1() -> Gate {
    let mut g = Gate::new("C1");
    let germ = models::cosine_germ();
    let (mut res, mut ratio) = (0.0f64, 0.0f64);
    for m in 0..=models::GERM_LEVELS {
        for v in [-0.3, 0.0, 0.2] {
            match germ.solve(&scalar(v), m, 1e-12, DEFAULT_MAX_ITER) {
                Ok(fp) => {
                    res = res.max(fp.residual);
                    ratio = ratio.max(fp.observed_ratio);
                }
                Err(_) => res = f64::INFINITY,
            }
        }
    }
    g.at_most("residual", res, 1e-10);
    g.at_most("ratio", ratio, 0.3);
    // Plain Picard iteration, independent of the solver's stopping rule.
    let mut picard = 0.0f64;
    for _ in 0..200 {
        picard = 0.25 * picard.cos();
    }
    let d0 = germ.solve(&scalar(0.0), 0, 1e-13, DEFAULT_MAX_ITER).map(|f| f.solution[0]).unwrap_or(f64::NAN);
    g.at_most("|δ(0)−picard|", (d0 - picard).abs(), 1e-9);
    g.at_most("|δ(0)−frozen|", (d0 - DELTA_0).abs(), 1e-9);
    let sol = SolutionGerm::new(germ.clone(), 0, 1e-15);
    let h = 1e-5;
    let fd = match (sol.eval(&scalar(h)), sol.eval(&scalar(-h))) {
        (Ok(a), Ok(b)) => (a[0] - b[0]) / (2.0 * h),
        _ => f64::NAN,
    };
    let d = germ.derivative(&scalar(0.0), 1e-14).map(|m| m[(0, 0)]).unwrap_or(f64::NAN);
    g.at_most("δ'(0) vs central FD (rel)", ((d - fd) / d).abs(), 1e-6);
    g.at_most("δ'(0) vs closed form (rel)", ((d - DELTA_PRIME_0) / DELTA_PRIME_0).abs(), 1e-9);
    g
}

fn c2() -> Gate {
    let mut g = Gate::new("C2");
    let germ = models::cosine_germ();
    let sol = SolutionGerm::new(germ.clone(), 0, 1e-14);
    let lifted = tangent_germ(&germ, &sol);
    let mut r = rng::stream(SEED, 2);
    let mut gap = 0.0f64;
    for _ in 0..100 {
        let v = rng::uniform(&mut r, -0.5, 0.5);
        let b = rng::uniform(&mut r, -2.0, 2.0);
        let d = delta_oracle(v);
        let dp = 1.0 / (1.0 + 0.25 * d.sin());
        gap = gap.max(match solve_germ(&lifted, &DVector::from_vec(vec![v, b]), 0, 1e-13, DEFAULT_MAX_ITER) {
            Ok(l) => (l[0] - d).abs().max((l[1] - dp * b).abs()),
            Err(_) => f64::INFINITY,
        });
    }
    g.at_most("lifted gap over 100 samples", gap, 1e-8);
    g
}

fn c3() -> Gate {
    let mut g = Gate::new("C3");
    let fs = models::rotating_line_filled();
    let core = SplicingCore { model: models::rotating_line_splicing(), tol: 1e-9 };
    // The core section vanishes exactly at c₀(v)·(cos v, sin v).
    let zero = |v: f64| DVector::from_vec(vec![v.cos(), v.sin()]) * (0.5 + 0.3 * (2.0 * v).sin());
    let mut r = rng::stream(SEED, 3);
    let mut gap = 0.0f64;
    for _ in 0..1000 {
        let v = rng::uniform(&mut r, -0.9, 0.9);
        let start = DVector::from_vec(rng::uniform_vec(&mut r, 2, -3.0, 3.0));
        gap = gap.max(match fs.solve_fiber(&scalar(v), &start, 1e-13) {
            Ok(z) if core.contains(&scalar(v), &z) => (&z - zero(v)).amax().max(fs.core_section(&scalar(v), &z).amax()),
            _ => f64::INFINITY,
        });
    }
    g.at_most("zero-set gap over 1000 samples", gap, 1e-9);
    let (mut off, mut mismatched) = (0.0f64, 0);
    for k in 0..20 {
        let v = -0.9 + 1.8 * k as f64 / 19.0;
        match linearize_filled(&fs, &scalar(v), &zero(v), 1e-12) {
            Ok(b) => {
                off = off.max(b.off_diagonal);
                mismatched += usize::from(b.index_fbar != b.index_fprime);
            }
            Err(_) => mismatched += 1,
        }
    }
    g.at_most("off-diagonal", off, 1e-9);
    g.equal("index mismatches", mismatched, 0);
    g
}

fn c4() -> Gate {
    let mut g = Gate::new("C4");
    let (mut formula, mut preserved, mut worst) = (0, 0, 0.0f64);
    for trial in 0..20 {
        let bg = random_basic_germ(SEED, trial);
        let expected = bg.n as i64 - bg.big_n as i64;
        let lin = bg.linearization();
        formula += usize::from(fredholm_index(&bg) == expected && index_from_matrix(&lin) == expected);
        let s = random_sc_plus(&bg, SEED, trial);
        match perturb_normal_form(&bg, &s, 400, SEED) {
            Ok(nf) => {
                preserved += usize::from(fredholm_index(&nf.germ) == expected);
                let resampled = nf.germ.contraction_ratios(nf.certified_radius, 400, SEED ^ trial);
                worst = nf.ratios.iter().chain(&resampled).copied().fold(worst, f64::max);
            }
            Err(_) => worst = f64::INFINITY,
        }
    }
    g.equal("index = n−N", formula, 20);
    g.equal("index preserved", preserved, 20);
    if worst < 0.9 {
        g.notes.push(format!("contraction ratio {worst:.3} < 0.9"));
    } else {
        g.failures.push(format!("contraction ratio {worst:.3} not < 0.9"));
    }
    g
}

fn c5() -> Gate {
    let mut g = Gate::new("C5");
    let grid = PositionGrid { samples: 10_000, seed: SEED };
    let (mut neat_bad, mut neat_seen) = (0, 0);
    let (mut km, mut pointed) = (0.0f64, 0);
    let (mut sigma_bad, mut sigma_seen) = (0, 0);
    let mut round = 0.0f64;
    for inst in models::cone_instances() {
        let sub = &inst.subspace;
        let gp = is_good_position(sub, &inst.candidates, &grid);
        if is_neat(sub).neat {
            neat_seen += 1;
            neat_bad += usize::from(!matches!(&gp, Ok(p) if p.ok && p.c == 1.0));
        }
        // Krein–Milman needs a pointed cone; only a nonzero lineality may excuse one.
        km = km.max(match extreme_rays(sub) {
            Ok(cone) => {
                pointed += 1;
                reconstruction_residual(&cone.rays, &sample_cone_points(sub, 1000, SEED))
            }
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
                    sigma_seen += 1;
                    let sigma = sigma_set(&qs.rays.column(j).into_owned(), sub.n(), CONE_TOL);
                    sigma_bad += usize::from(sigma.len() + 1 != qs.ntilde.ncols());
                }
                round = round.max(check_structure(sub, &qs, 1000, SEED).round_trip);
            }
            Err(_) => round = f64::INFINITY,
        }
    }
    g.equal("neat instances not in good position with c=1", (neat_bad, neat_seen > 0), (0, true));
    g.at_most(&format!("Krein–Milman residual on {pointed} pointed cones"), km, 1e-8);
    let images = (0..20)
        .filter(|&t| matches!(is_quadrant(&models::random_quadrant_image(SEED, t).0.subspace), Ok(q) if q.is_quadrant))
        .count();
    g.equal("quadrant images recognized", images, 20);
    let ice = is_quadrant(&models::ice_cream_cone().subspace).map(|q| (q.is_quadrant, q.rays.ncols()));
    g.equal("8-ray cone (quadrant, rays)", ice.ok(), Some((false, 8)));
    g.equal("#σ ≠ dim N − 1", (sigma_bad, sigma_seen > 0), (0, true));
    g.at_most("round trip", round, 1e-10);
    g
}

fn track(gp: &GoodParametrization, stats: &mut (f64, f64, usize)) {
    match gp.verify(200, SEED) {
        Ok(r) => {
            stats.0 = stats.0.max(r.max_residual);
            stats.1 = stats.1.max(r.da0);
            stats.2 += r.corner_mismatches;
        }
        Err(_) => stats.0 = f64::INFINITY,
    }
}

fn c6() -> Gate {
    let mut g = Gate::new("C6");
    let wide = ChartConfig { radius: 0.9, seed: SEED, ..ChartConfig::default() };
    let base = ChartConfig { seed: SEED, ..ChartConfig::default() };
    let circle = |a: f64| build_parametrization(models::circle_section(), &DVector::from_vec(vec![a.cos(), a.sin()]), &wide);
    // On the unit circle through (1,0) with tangent coordinate ν, A(ν) = (√(1−ν²) − 1, 0).
    let oracle = DVector::from_vec(vec![(1.0f64 - 0.36).sqrt() - 1.0, 0.0]);
    let a_gap = circle(0.0).ok().and_then(|gp| gp.a(&scalar(0.6)).ok()).map_or(f64::INFINITY, |a| (a - oracle).amax());
    g.at_most("|A(0.6) − (−0.2, 0)|", a_gap, 1e-9);
    // (max residual, max DA(0), corner mismatches plus failed builds)
    let mut stats = (0.0f64, 0.0f64, 0usize);
    let mut charts = Vec::new();
    for j in 0..8 {
        match circle(TAU * j as f64 / 8.0) {
            Ok(gp) => {
                track(&gp, &mut stats);
                charts.push(Arc::new(gp));
            }
            Err(_) => stats.2 += 1,
        }
    }
    for (section, q) in [
        (models::linear_section(), DVector::from_vec(vec![1.0, 0.0, 0.0])),
        (Arc::new(models::rotating_line_filled()) as germforge::DynSection, models::rotating_line_zero()),
    ] {
        match build_parametrization(section, &q, &base) {
            Ok(gp) => track(&gp, &mut stats),
            Err(_) => stats.2 += 1,
        }
    }
    let (mut parabola, mut active_bad) = (0.0f64, 0);
    for (name, section) in [("parabola", models::parabola_corner()), ("linear", models::linear_corner()), ("plane", models::quadrant_plane())] {
        let q = DVector::zeros(section.domain_dim());
        let Ok(gp) = build_boundary_parametrization(section.clone(), &q, &base, &[], &PositionGrid::default()) else {
            active_bad += 1;
            continue;
        };
        track(&gp, &mut stats);
        for nu in gp.sample_domain(200, SEED) {
            let Ok(x) = gp.gamma(&nu) else {
                active_bad += 1;
                continue;
            };
            let active = (0..gp.domain.quadrant_rank()).filter(|&i| nu[i] == 0.0).count();
            active_bad += usize::from(degeneracy_index(&x, section.quadrant_rank(), DEFAULT_TOL) != active);
            if name == "parabola" {
                // y = x² through the corner.
                parabola = parabola.max((x[0] - nu[0]).abs().max((x[1] - nu[0] * nu[0]).abs()));
            }
        }
    }
    g.at_most("max residual", stats.0, 1e-8);
    g.at_most("max DA(0)", stats.1, 1e-6);
    let transitions = SolutionAtlas::build(charts, 100, SEED)
        .map(|atlas| (atlas.overlaps.len(), atlas.overlaps.iter().map(|o| o.report.max_mismatch).fold(0.0, f64::max)));
    match transitions {
        Ok((count, worst)) => {
            g.equal("overlaps present", count > 0, true);
            g.at_most("transition mismatch", worst, 1e-8);
        }
        Err(e) => g.failures.push(format!("atlas: {e}")),
    }
    g.at_most("parabola closed form gap", parabola, 1e-8);
    g.equal("degeneracy/active and corner mismatches", (active_bad, stats.2), (0, 0));
    g
}

fn column(n: usize, i: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, 1, |r, _| if r == i { 1.0 } else { 0.0 })
}

/// `1 − projection onto span(c)`.
fn complement(c: &DMatrix<f64>) -> DMatrix<f64> {
    let q = c.clone().qr().q();
    DMatrix::identity(c.nrows(), c.nrows()) - &q * q.transpose()
}

fn triangle_closes(trial: u64) -> bool {
    let mut s = rng::stream(SEED, 7_000 + trial);
    let mut gauss = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| rng::normal(&mut s));
    // Rank 3 map R⁴ → R⁵: kernel 1, cokernel 2.
    let t = gauss(5, 3) * gauss(3, 4);
    let (base, v1, v2) = (gauss(5, 2), gauss(5, 1), gauss(5, 1));
    let stack = |a: &DMatrix<f64>, b: &DMatrix<f64>| {
        let mut m = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
        m.columns_mut(0, a.ncols()).copy_from(a);
        m.columns_mut(a.ncols(), b.ncols()).copy_from(b);
        m
    };
    let (cp, cq) = (stack(&base, &v1), stack(&base, &v2));
    let (p, q, r) = (complement(&cp), complement(&cq), complement(&stack(&cp, &v2)));
    let check = || -> Result<bool, germforge::orientation::OrientationError> {
        let dl = DeterminantLine::canonical(&t)?;
        let direct = stabilize(&dl, &r)?;
        let via_p = stabilize(&stabilize(&dl, &p)?, &r)?;
        let via_q = stabilize(&stabilize(&dl, &q)?, &r)?;
        Ok(direct.relative_sign(&via_p)? == 1 && direct.relative_sign(&via_q)? == 1)
    };
    check().unwrap_or(false)
}

fn c7() -> Gate {
    let mut g = Gate::new("C7");
    // T = diag(1,0) with kernel and cokernel both spanned by e₂. Projecting out
    // e₂ leaves P T = T, so the stabilized line carries the same bases and the
    // hand-computed sign is +1.
    let t = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]));
    let p = &column(2, 0) * column(2, 0).transpose();
    let line = |m: DMatrix<f64>| DeterminantLine::with_bases(m, column(2, 1), column(2, 1), 1);
    let sign = stabilize(&line(t.clone()), &p).and_then(|st| line(&p * &t).relative_sign(&st));
    g.equal("diag(1,0) sign", sign.ok(), Some(1));
    g.equal("triangles closed", (0..20).filter(|&k| triangle_closes(k)).count(), 20);
    let path = models::operator_path("diag-crossing").expect("registered path");
    g.equal("diag(1,2t−1) transport", continue_orientation(&path, 40, 1).ok(), Some(-1));
    let mut flips = 0;
    for (_, path) in models::operator_paths() {
        let signs: Vec<_> = [10usize, 20, 40, 80, 160].iter().map(|&k| continue_orientation(&path, k, 1).ok()).collect();
        flips += usize::from(signs[0].is_none() || signs.windows(2).any(|w| w[0] != w[1]));
    }
    g.equal("paths whose sign changes under refinement", flips, 0);
    g
}

/// Σ sign f'(x) over the real roots: the degree of a scalar map with simple zeros.
fn sign_count(roots: &[f64], df: impl Fn(f64) -> f64) -> i64 {
    roots.iter().map(|&x| df(x).signum() as i64).sum()
}

fn c8() -> Gate {
    let mut g = Gate::new("C8");
    let oracles = [
        ("cubic", sign_count(&[-1.0, 0.0, 1.0], |x| 3.0 * x * x - 1.0)),
        ("square-minus-one", sign_count(&[-1.0, 1.0], |x| 2.0 * x)),
    ];
    g.equal("oracles", oracles.map(|o| o.1), [1, 0]);
    for (name, want) in oracles {
        let m = models::degree_model(name).expect("registry model");
        let pp = PerturbationProblem::new(m.section, m.window).with_budget(0.1).with_seed(SEED);
        g.equal(&format!("deg {name}"), compute_degree(&pp, &Reference::Canonical).map(|r| r.degree).ok(), Some(want));
    }
    let m = models::degree_model("cubic").expect("registry model");
    let pp = PerturbationProblem::new(m.section, m.window).with_budget(0.1).with_seed(SEED);
    let suite = match invariance_suite(&pp, 50, Some(&models::cubic_homotopy()), &Reference::Canonical) {
        Ok(r) => Ok(r),
        Err(DegreeError::InvarianceViolation(r)) => Ok(*r),
        Err(e) => Err(e),
    };
    match suite {
        Ok(r) => {
            g.equal("trials", r.trial_degrees.len(), 50);
            g.equal("trial degrees all 1", r.trial_degrees.iter().all(|&d| d == 1), true);
            g.equal("homotopy degrees all 1", r.registered.iter().all(|s| s.degree == Some(1)), true);
            g.equal("violations", r.violations.len(), 0);
        }
        Err(e) => g.failures.push(format!("invariance suite: {e}")),
    }
    g
}

fn c9() -> Gate {
    let mut g = Gate::new("C9");
    let config = ChartConfig { radius: 0.9, seed: SEED, ..ChartConfig::default() };
    let charts: Result<Vec<_>, _> = (0..4)
        .map(|j| {
            let a = TAU * j as f64 / 4.0 + 0.3;
            build_parametrization(models::circle_section(), &DVector::from_vec(vec![a.cos(), a.sin()]), &config).map(Arc::new)
        })
        .collect();
    let atlas = match charts.and_then(|c| SolutionAtlas::build(c, 20, SEED)) {
        Ok(a) => a,
        Err(e) => {
            g.failures.push(format!("atlas: {e}"));
            return g;
        }
    };
    let coverage = (0..24).map(|j| DVector::from_vec(vec![(TAU * j as f64 / 24.0).cos(), (TAU * j as f64 / 24.0).sin()]));
    let opts = IntegrationOptions { coverage: coverage.collect(), ..IntegrationOptions::default() };
    // x dy − y dx restricts to arc length on the unit circle; d(xy) is exact.
    let arc = Form::one_form(|x| DVector::from_vec(vec![-x[1], x[0]]));
    let exact = Form::one_form(|x| DVector::from_vec(vec![x[1], x[0]]));
    let value = |f: &Form| integrate_form(&atlas, f, &AtlasOrientation::Induced, &opts).map_or(f64::NAN, |r| r.value);
    g.at_most("|∫ arc − 2π|", (value(&arc) - TAU).abs(), 1e-6);
    g.at_most("|∫ d(xy)|", value(&exact).abs(), 1e-8);
    g
}

fn c10() -> Gate {
    let mut g = Gate::new("C10");
    let dirs = [tempfile::tempdir().expect("tempdir"), tempfile::tempdir().expect("tempdir")];
    let mut files = Vec::new();
    for d in &dirs {
        let reports = run_criteria(SEED);
        files.push(write_reports(d.path(), &reports).expect("reports written"));
    }
    let csv: Vec<_> = files[0].iter().filter(|p| p.extension().is_some_and(|e| e == "csv")).collect();
    let differing = csv
        .iter()
        .filter(|p| {
            let other = dirs[1].path().join(p.file_name().expect("file name"));
            std::fs::read(p).ok() != std::fs::read(other).ok()
        })
        .count();
    g.equal("criterion tables", csv.len(), 9);
    g.equal("tables differing between runs", differing, 0);
    g
}

fn main() -> ExitCode {
    let criteria: [fn() -> Gate; 10] = [c1, c2, c3, c4, c5, c6, c7, c8, c9, c10];
    let mut failed = 0;
    for c in criteria {
        let start = Instant::now();
        failed += usize::from(!c().finish(start));
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
