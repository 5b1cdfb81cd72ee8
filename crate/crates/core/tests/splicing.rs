use germforge::models::{rank_jump_splicing, rotating_line_direction, rotating_line_filled, rotating_line_offset, rotating_line_splicing};
use germforge::rng;
use germforge::splicing::{core_retraction, degeneracy_index, linearize_filled, SplicingCore};
use germforge::DEFAULT_TOL;
use nalgebra::DVector;
use proptest::prelude::*;

fn scalar(x: f64) -> DVector<f64> {
    DVector::from_element(1, x)
}

#[test]
fn rotating_line_zero_sets_match() {
    let fs = rotating_line_filled();
    let core = SplicingCore { model: rotating_line_splicing(), tol: 1e-9 };
    let mut r = rng::stream(3, 0);
    for _ in 0..1000 {
        let v = rng::uniform(&mut r, -0.9, 0.9);
        let start = DVector::from_vec(rng::uniform_vec(&mut r, 2, -3.0, 3.0));
        let zero = fs.solve_fiber(&scalar(v), &start, 1e-13).unwrap();
        let expected = rotating_line_direction(v) * rotating_line_offset(v);
        assert!((&zero - &expected).amax() <= 1e-9);
        assert!(core.contains(&scalar(v), &zero));
        assert!(fs.core_section(&scalar(v), &zero).amax() <= 1e-9);
        assert!(fs.eval_split(&scalar(v), &expected).amax() <= 1e-12);
    }
}

#[test]
fn rotating_line_block_form() {
    let fs = rotating_line_filled();
    for v in [-0.7, 0.0, 0.3, 0.8] {
        let e = rotating_line_direction(v) * rotating_line_offset(v);
        let rep = linearize_filled(&fs, &scalar(v), &e, 1e-12).unwrap();
        assert!(rep.off_diagonal <= 1e-9, "off-diagonal {}", rep.off_diagonal);
        assert_eq!(rep.index_fbar, rep.index_fprime);
        assert_eq!(rep.index_fbar, 1);
        assert_eq!(rep.kernel_fbar.ncols(), rep.kernel_fprime.ncols());
        assert_eq!(rep.surjective_fbar, rep.surjective_fprime);
        assert!(rep.kernel_defect < 1e-6);
        assert!((rep.c[(0, 0)].abs() - 2.0).abs() < 1e-6);
    }
}

#[test]
fn not_a_zero_is_rejected() {
    let fs = rotating_line_filled();
    assert!(linearize_filled(&fs, &scalar(0.0), &DVector::from_vec(vec![3.0, 0.0]), 1e-9).is_err());
}

#[test]
fn filler_and_splicing_certify() {
    let fs = rotating_line_filled();
    let model = rotating_line_splicing();
    assert!(model.idempotency_defect(1000, 5) <= 1e-12);
    assert!(model.continuity_modulus(1e-6, 200, 5) < 1e-5);
    assert!(fs.filler.validate(&fs.bundle, 200, 5, 1e-12).passed);
}

#[test]
fn rank_jump_discontinuity_is_reported() {
    let model = rank_jump_splicing();
    assert!(model.idempotency_defect(500, 9) <= 1e-12);
    assert!(model.continuity_modulus(0.05, 2000, 9) > 0.1);
}

/// Corner-preserving chart change `y_i = x_i·g_i(x)` with `g_i > 0` on the
/// constrained coordinates, and a shear on the free coordinate.
fn other_chart(x: &DVector<f64>) -> DVector<f64> {
    let g0 = 1.0 + 0.5 * (x[1] + x[2]).sin().powi(2);
    let g1 = (0.3 * x[0] - 0.2 * x[2]).exp();
    DVector::from_vec(vec![x[0] * g0, x[1] * g1, x[2] + x[0] * x[1] + 0.1 * x[0]])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn retraction_is_idempotent(v in -0.95f64..0.95, e0 in -5.0f64..5.0, e1 in -5.0f64..5.0) {
        let m = rotating_line_splicing();
        let e = DVector::from_vec(vec![e0, e1]);
        let (v1, r1) = core_retraction(&m, &scalar(v), &e).unwrap();
        let (_, r2) = core_retraction(&m, &v1, &r1).unwrap();
        prop_assert!((r2 - r1).amax() <= 1e-12);
    }

    #[test]
    fn degeneracy_index_is_chart_independent(
        a in prop_oneof![Just(0.0f64), 0.01f64..2.0],
        b in prop_oneof![Just(0.0f64), 0.01f64..2.0],
        c in -2.0f64..2.0,
    ) {
        let x = DVector::from_vec(vec![a, b, c]);
        prop_assert_eq!(degeneracy_index(&x, 2, DEFAULT_TOL), degeneracy_index(&other_chart(&x), 2, DEFAULT_TOL));
    }
}
