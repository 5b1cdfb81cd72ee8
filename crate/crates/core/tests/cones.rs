use germforge::cones::{
    check_structure, extreme_rays, interior_point, is_good_position, is_neat, is_quadrant, quadrant_structure,
    reconstruction_residual, sample_cone_points, sigma_set, ConeError, PositionGrid, SubspaceInQuadrant, CONE_TOL,
};
use germforge::models::{cone_instance, cone_instances, ice_cream_cone, random_quadrant_image};
use nalgebra::{DMatrix, DVector, Vector3};
use proptest::prelude::*;

const SEED: u64 = 77;

fn grid() -> PositionGrid {
    PositionGrid { samples: 10_000, seed: SEED }
}

fn unit(v: &[f64]) -> DVector<f64> {
    let x = DVector::from_column_slice(v);
    let n = x.norm();
    x / n
}

fn has_column(m: &DMatrix<f64>, v: &DVector<f64>, tol: f64) -> bool {
    (0..m.ncols()).any(|j| (m.column(j) - v).amax() <= tol)
}

/// Angular sweep over unit coefficient vectors of a 2-dimensional carrier:
/// rays are the endpoints of the feasible arc.
fn sweep_rays(sub: &SubspaceInQuadrant) -> Vec<DVector<f64>> {
    let steps = 200_000;
    let feasible = |k: usize| {
        let t = std::f64::consts::TAU * k as f64 / steps as f64;
        let x = &sub.basis * DVector::from_vec(vec![t.cos(), t.sin()]);
        (0..sub.n()).all(|i| x[i] >= 0.0)
    };
    let mut out = Vec::new();
    for k in 0..steps {
        let (a, b) = (feasible(k), feasible((k + 1) % steps));
        if a != b {
            let j = if a { k } else { k + 1 };
            let t = std::f64::consts::TAU * j as f64 / steps as f64;
            out.push((&sub.basis * DVector::from_vec(vec![t.cos(), t.sin()])).normalize());
        }
    }
    out
}

#[test]
fn neat_examples() {
    let standard = cone_instance("standard").unwrap().subspace;
    let r = is_neat(&standard);
    assert!(r.neat);
    let comp = r.complement.unwrap();
    assert_eq!(comp.ncols(), 2);
    assert!(comp.rows(0, 3).amax() == 0.0);

    assert!(!is_neat(&cone_instance("ray-diagonal").unwrap().subspace).neat);

    // Rank oracle: p(N) is spanned by the first two rows of the basis.
    let diag = cone_instance("diag-plane").unwrap().subspace;
    let g = diag.constraint_block();
    let det = g[(0, 0)] * g[(1, 1)] - g[(0, 1)] * g[(1, 0)];
    let r = is_neat(&diag);
    assert_eq!(r.neat, det.abs() > 1e-12);
    let comp = r.complement.unwrap();
    assert_eq!(comp.ncols(), 1);
    assert!((comp.column(0).abs() - DVector::from_vec(vec![0.0, 0.0, 1.0])).amax() < 1e-12);

    assert!(!is_neat(&cone_instance("diag-corner").unwrap().subspace).neat);
}

#[test]
fn neat_instances_are_in_good_position_with_unit_constant() {
    let mut seen = 0;
    for inst in cone_instances() {
        if !is_neat(&inst.subspace).neat {
            continue;
        }
        seen += 1;
        let gp = is_good_position(&inst.subspace, &inst.candidates, &grid()).unwrap();
        assert!(gp.ok, "{}", inst.name);
        assert_eq!(gp.c, 1.0);
        assert!(gp.samples_checked >= 10_000);
    }
    assert!(seen >= 4);
}

#[test]
fn diagonal_line_grid_oracle() {
    // n = t(1,1), m = s(1,−1): ‖m‖₁ ≤ ‖n‖₁ ⇔ |s| ≤ |t|, and n + m ∈ C ⇔ t ≥ |s|.
    let k = 100;
    for i in 0..k {
        for j in 0..k {
            let t = -1.0 + 2.0 * i as f64 / (k - 1) as f64;
            let s = -1.0 + 2.0 * j as f64 / (k - 1) as f64;
            if s.abs() > t.abs() {
                continue;
            }
            let sum_in = t + s >= 0.0 && t - s >= 0.0;
            assert_eq!(sum_in, t >= 0.0, "t={t} s={s}");
        }
    }
    let sub = cone_instance("ray-diagonal").unwrap().subspace;
    let gp = is_good_position(&sub, &[], &grid()).unwrap();
    assert!(gp.ok);
    assert_eq!(gp.c, 1.0);
    let comp = gp.complement.unwrap();
    assert!((comp[(0, 0)] + comp[(1, 0)]).abs() < 1e-12);
}

#[test]
fn empty_interior_is_not_good() {
    let sub = SubspaceInQuadrant::flat(2, 0, DMatrix::from_column_slice(2, 1, &[1.0, -1.0])).unwrap();
    assert!(interior_point(&sub).is_none());
    let gp = is_good_position(&sub, &[], &grid()).unwrap();
    assert!(!gp.ok);
}

#[test]
fn corner_plane_needs_supplied_complement() {
    let inst = cone_instance("diag-corner").unwrap();
    let gp = is_good_position(&inst.subspace, &inst.candidates, &grid()).unwrap();
    assert!(gp.ok);
    // m = s·e₃ with n = (a, b, a+b): a + b − s ≥ 0 needs |s| ≤ 2c(a+b) ≤ a+b, so c ≤ 1/2.
    assert_eq!(gp.c, 0.5);
    assert!(matches!(
        is_good_position(&inst.subspace, &[], &PositionGrid { samples: 2000, seed: SEED }),
        Err(ConeError::Inconclusive(_))
    ));
}

#[test]
fn ice_cream_cone_is_not_good_position() {
    let inst = ice_cream_cone();
    assert!(matches!(
        is_good_position(&inst.subspace, &[], &PositionGrid { samples: 2000, seed: SEED }),
        Err(ConeError::Inconclusive(_))
    ));
}

#[test]
fn planar_rays_match_sweep() {
    for name in ["diag-plane", "diag-corner"] {
        let sub = cone_instance(name).unwrap().subspace;
        let rays = extreme_rays(&sub).unwrap().rays;
        let oracle = sweep_rays(&sub);
        assert_eq!(rays.ncols(), oracle.len(), "{name}");
        for r in &oracle {
            assert!(has_column(&rays, r, 1e-4), "{name}");
        }
        for r in [unit(&[1.0, 0.0, 1.0]), unit(&[0.0, 1.0, 1.0])] {
            assert!(has_column(&rays, &r, 1e-12), "{name}");
        }
    }
    let rays = extreme_rays(&SubspaceInQuadrant::flat(2, 0, DMatrix::identity(2, 2)).unwrap()).unwrap().rays;
    assert!(has_column(&rays, &unit(&[1.0, 0.0]), 1e-15) && has_column(&rays, &unit(&[0.0, 1.0]), 1e-15));
}

#[test]
fn ice_cream_rays_are_adjacent_facet_intersections() {
    let inst = ice_cream_cone();
    let sub = &inst.subspace;
    let rays = extreme_rays(sub).unwrap().rays;
    assert_eq!(rays.ncols(), 8);
    let q = is_quadrant(sub).unwrap();
    assert!(!q.is_quadrant);
    let f = |j: usize| Vector3::new(sub.basis[(j % 8, 0)], sub.basis[(j % 8, 1)], sub.basis[(j % 8, 2)]);
    for j in 0..8 {
        let mut y = f(j).cross(&f(j + 1));
        if (sub.basis.clone() * DVector::from_column_slice(y.as_slice())).sum() < 0.0 {
            y = -y;
        }
        let x = (&sub.basis * DVector::from_column_slice(y.as_slice())).normalize();
        assert!(has_column(&rays, &x, 1e-10), "facet pair {j}");
    }
}

#[test]
fn random_quadrant_images_are_recognized() {
    for trial in 0..20 {
        let (inst, t) = random_quadrant_image(SEED, trial);
        let q = is_quadrant(&inst.subspace).unwrap();
        assert!(q.is_quadrant, "trial {trial}");
        let iso = q.iso.unwrap();
        for j in 0..3 {
            // The ray T e_j in y-coordinates is (e_j, T e_j) in the ambient space.
            let mut x = DVector::zeros(6);
            x[j] = 1.0;
            for i in 0..3 {
                x[3 + i] = t[(i, j)];
            }
            let x = x.normalize();
            assert!(has_column(&q.rays, &x, 1e-10), "trial {trial}");
            let image = &iso * &x;
            assert_eq!(image.iter().filter(|v| v.abs() > 1e-9).count(), 1);
            assert!(image.iter().all(|&v| v >= -1e-9));
        }
    }
}

#[test]
fn krein_milman_reconstruction() {
    for inst in cone_instances() {
        let Ok(cone) = extreme_rays(&inst.subspace) else { continue };
        let pts = sample_cone_points(&inst.subspace, 1000, SEED);
        assert_eq!(pts.len(), 1000, "{}", inst.name);
        assert!(reconstruction_residual(&cone.rays, &pts) <= 1e-8, "{}", inst.name);
        for j in 0..cone.rays.ncols() {
            assert!(inst.subspace.contains(&cone.rays.column(j).into_owned(), 1e-12));
        }
    }
}

#[test]
fn lineality_is_carried_to_structure() {
    let inst = cone_instance("full-lineality").unwrap();
    let err = extreme_rays(&inst.subspace).unwrap_err();
    let ConeError::NotPointed { lineality } = err else { panic!("expected NotPointed") };
    assert_eq!(lineality.ncols(), 1);
    let gp = is_good_position(&inst.subspace, &inst.candidates, &grid()).unwrap();
    let qs = quadrant_structure(&inst.subspace, &gp).unwrap();
    assert_eq!(qs.sigma, vec![0, 1]);
    assert_eq!(qs.quadrant_rank, 2);
    assert_eq!(qs.dim(), 3);
}

#[test]
fn roxy_holds_on_good_position_instances() {
    let mut checked = 0;
    for inst in cone_instances() {
        let Ok(gp) = is_good_position(&inst.subspace, &inst.candidates, &grid()) else { continue };
        if !gp.ok {
            continue;
        }
        let qs = quadrant_structure(&inst.subspace, &gp).unwrap();
        let dim_tilde = qs.ntilde.ncols();
        for j in 0..qs.rays.ncols() {
            let a = qs.rays.column(j).into_owned();
            assert_eq!(sigma_set(&a, inst.subspace.n(), CONE_TOL).len(), dim_tilde - 1, "{}", inst.name);
            checked += 1;
        }
    }
    assert!(checked >= 10);
}

#[test]
fn structure_examples() {
    let standard = cone_instance("standard").unwrap();
    let gp = is_good_position(&standard.subspace, &[], &grid()).unwrap();
    let qs = quadrant_structure(&standard.subspace, &gp).unwrap();
    assert_eq!(qs.sigma, vec![0, 1, 2]);
    assert!(!qs.single_ray_case);
    let perm = qs.to_standard.columns(0, 3).abs();
    assert!((perm.row_sum() - DMatrix::from_element(1, 3, 1.0)).amax() < 1e-12);

    let line = cone_instance("ray-diagonal").unwrap();
    let gp = is_good_position(&line.subspace, &[], &grid()).unwrap();
    let qs = quadrant_structure(&line.subspace, &gp).unwrap();
    assert!(qs.sigma.is_empty());
    assert!(qs.single_ray_case);
    assert_eq!((qs.quadrant_rank, qs.dim()), (1, 1));
    let s = qs.to_standard(&DVector::from_vec(vec![2.0, 2.0]));
    assert!((s[0] - 8f64.sqrt()).abs() < 1e-12);

    let corner = cone_instance("diag-corner").unwrap();
    let gp = is_good_position(&corner.subspace, &corner.candidates, &grid()).unwrap();
    let qs = quadrant_structure(&corner.subspace, &gp).unwrap();
    let mut oracle: Vec<usize> = [unit(&[1.0, 0.0, 1.0]), unit(&[0.0, 1.0, 1.0])]
        .iter()
        .flat_map(|a| (0..3).filter(move |&i| a[i] == 0.0))
        .collect();
    oracle.sort_unstable();
    assert_eq!(qs.sigma, oracle);
    assert_eq!(qs.quadrant_rank, 2);
}

#[test]
fn structure_round_trip_and_quadrant_maps() {
    for inst in cone_instances() {
        let Ok(gp) = is_good_position(&inst.subspace, &inst.candidates, &grid()) else { continue };
        let Ok(qs) = quadrant_structure(&inst.subspace, &gp) else { continue };
        let chk = check_structure(&inst.subspace, &qs, 1000, SEED);
        assert!(chk.forward_violation <= 1e-8, "{}", inst.name);
        assert!(chk.backward_violation <= 1e-8, "{}", inst.name);
        assert!(chk.round_trip <= 1e-10, "{}: {}", inst.name, chk.round_trip);
    }
}

#[test]
fn uncertified_position_is_inconclusive() {
    let inst = ice_cream_cone();
    let gp = is_good_position(&cone_instance("standard").unwrap().subspace, &[], &grid()).unwrap();
    let bad = germforge::cones::GoodPosition { ok: false, ..gp };
    assert!(matches!(quadrant_structure(&inst.subspace, &bad), Err(ConeError::Inconclusive(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn recognition_is_invariant_under_quadrant_maps(
        idx in 0usize..7,
        scales in proptest::collection::vec(0.1f64..10.0, 8),
        shift in 0usize..8,
        wmix in proptest::collection::vec(-1.0f64..1.0, 9),
    ) {
        let inst = &cone_instances()[idx];
        let sub = &inst.subspace;
        let (n, d) = (sub.n(), sub.ambient_dim());
        // Cyclic permutation and positive scaling of the constrained block,
        // unit-diagonal triangular mixing of W.
        let mut t = DMatrix::zeros(d, d);
        for i in 0..n {
            t[((i + shift) % n, i)] = scales[i];
        }
        for i in n..d {
            t[(i, i)] = 1.0;
            for j in n..i {
                t[(i, j)] = wmix[(i * 3 + j) % 9];
            }
        }
        let moved = SubspaceInQuadrant::new(sub.ambient.clone(), &t * &sub.basis).unwrap();
        let a = is_quadrant(sub).map(|q| q.is_quadrant).map_err(|e| std::mem::discriminant(&e));
        let b = is_quadrant(&moved).map(|q| q.is_quadrant).map_err(|e| std::mem::discriminant(&e));
        prop_assert_eq!(a, b);
    }
}
