use germforge::fredholm::{
    fredholm_index, index_from_matrix, perturb_normal_form, random_basic_germ, random_sc_plus,
};
use germforge::linalg::{concat, singular_values, svd_split, RANK_CUTOFF};
use nalgebra::{DMatrix, DVector};

const SEED: u64 = 2024;

#[test]
fn index_is_n_minus_big_n() {
    for trial in 0..20 {
        let bg = random_basic_germ(SEED, trial);
        let dg = bg.linearization();
        assert_eq!(index_from_matrix(&dg), fredholm_index(&bg), "trial {trial}");
    }
}

#[test]
fn normal_form_preserves_index_and_contracts() {
    for trial in 0..20 {
        let bg = random_basic_germ(SEED, trial);
        let s = random_sc_plus(&bg, SEED, trial);
        let nf = perturb_normal_form(&bg, &s, 400, SEED).unwrap();
        assert_eq!(fredholm_index(&nf.germ), fredholm_index(&bg), "trial {trial}");
        assert!(nf.ratios.iter().all(|&r| r < 0.9), "trial {trial}: {:?}", nf.ratios);
        if trial % 2 == 1 {
            assert!(nf.c_basis.ncols() >= 1, "trial {trial}");
        }
        // Rank oracle on 1+A: the constructed kernels are exact, so a wide gap suffices.
        let d = bg.w_dim();
        let small = singular_values(&(DMatrix::identity(d, d) + &nf.a)).iter().filter(|&&x| x < 1e-6).count();
        assert_eq!(small, nf.c_basis.ncols());
    }
}

#[test]
fn kernel_dimension_survives_normal_form() {
    for trial in 0..20 {
        let bg = random_basic_germ(SEED, trial);
        let s = random_sc_plus(&bg, SEED, trial);
        let nf = perturb_normal_form(&bg, &s, 200, SEED).unwrap();
        let origin = DVector::zeros(bg.n + bg.w_dim());
        let direct = bg.linearization() + s.jacobian(&origin);
        let transformed = nf.germ.linearization();
        let k1 = svd_split(&direct, RANK_CUTOFF).kernel_dim();
        let k2 = svd_split(&transformed, RANK_CUTOFF).kernel_dim();
        assert_eq!(k1, k2, "trial {trial}");
    }
}

#[test]
fn normal_form_is_conjugate_to_perturbed_germ() {
    // Ψ[(g+s)(ψ⁻¹(y))] equals the new germ at y.
    let bg = random_basic_germ(SEED, 3);
    let s = random_sc_plus(&bg, SEED, 3);
    let nf = perturb_normal_form(&bg, &s, 200, SEED).unwrap();
    let a = DVector::from_element(bg.n, 0.01);
    let w = DVector::from_iterator(bg.w_dim(), (0..bg.w_dim()).map(|i| 0.02 * (i as f64 + 1.0)));
    let y = nf.psi(&a, &w);
    let direct = bg.eval(&a, &w) + s.eval(&concat(&a, &w));
    let lhs = nf.fiber_map(&direct, bg.big_n);
    let split = nf.germ.n;
    let rhs = nf.germ.eval(&y.rows(0, split).into_owned(), &y.rows(split, nf.germ.w_dim()).into_owned());
    assert!((lhs - rhs).amax() < 1e-12);
}
