//! Small dense linear algebra used throughout the crate: rank-revealing
//! splits, kernel/cokernel bases, finite-difference Jacobians and
//! orientation-preserving orthonormalization.

use nalgebra::{DMatrix, DVector};

/// Relative singular-value cutoff used when a discrete rank is needed.
pub const RANK_CUTOFF: f64 = 1e-8;

/// Rank-revealing decomposition of a matrix into kernel, range and cokernel.
#[derive(Debug, Clone)]
pub struct SvdSplit {
    /// Singular values in decreasing order (length `min(rows, cols)`).
    pub singular_values: Vec<f64>,
    pub rank: usize,
    /// Absolute cutoff actually used (`rel_cutoff * sigma_max`).
    pub cutoff: f64,
    /// Orthonormal columns spanning the kernel.
    pub kernel: DMatrix<f64>,
    /// Orthonormal columns spanning the orthogonal complement of the kernel.
    pub coimage: DMatrix<f64>,
    /// Orthonormal columns spanning the range.
    pub range: DMatrix<f64>,
    /// Orthonormal columns spanning the orthogonal complement of the range.
    pub cokernel: DMatrix<f64>,
}

impl SvdSplit {
    pub fn sigma_max(&self) -> f64 {
        self.singular_values.first().copied().unwrap_or(0.0)
    }

    /// Smallest singular value that was counted as nonzero, or 0 for rank 0.
    pub fn sigma_min_nonzero(&self) -> f64 {
        if self.rank == 0 {
            0.0
        } else {
            self.singular_values[self.rank - 1]
        }
    }

    /// Whether a singular value sits inside the band `[cutoff, band * cutoff]`,
    /// where the discrete rank is not trustworthy.
    pub fn ambiguous(&self, band: f64) -> bool {
        self.singular_values
            .iter()
            .any(|&s| s >= self.cutoff && s <= band * self.cutoff && self.cutoff > 0.0)
    }

    pub fn kernel_dim(&self) -> usize {
        self.kernel.ncols()
    }

    pub fn cokernel_dim(&self) -> usize {
        self.cokernel.ncols()
    }
}

/// Singular values of `m` in decreasing order.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Full right-singular basis of `m` ordered by decreasing singular value,
/// padded so that every column of the domain is represented.
fn right_basis(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let (rows, cols) = m.shape();
    if cols == 0 {
        return (Vec::new(), DMatrix::zeros(0, 0));
    }
    if rows == 0 {
        return (vec![0.0; cols], DMatrix::identity(cols, cols));
    }
    let k = rows.max(cols);
    let mut padded = DMatrix::zeros(k, cols);
    padded.view_mut((0, 0), (rows, cols)).copy_from(m);
    let svd = padded.svd(false, true);
    let vt = svd.v_t.expect("requested v_t");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let sv: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let mut v = DMatrix::zeros(cols, order.len());
    for (j, &i) in order.iter().enumerate() {
        v.set_column(j, &vt.row(i).transpose());
    }
    (sv, v)
}

/// Flip each column so that its largest-magnitude entry is positive.
pub fn canonical_signs(mut m: DMatrix<f64>) -> DMatrix<f64> {
    for j in 0..m.ncols() {
        let mut best = 0usize;
        let mut best_abs = -1.0;
        for i in 0..m.nrows() {
            let a = m[(i, j)].abs();
            if a > best_abs + 1e-12 {
                best = i;
                best_abs = a;
            }
        }
        if m.nrows() > 0 && m[(best, j)] < 0.0 {
            m.column_mut(j).neg_mut();
        }
    }
    m
}

/// Rank-revealing split with cutoff `rel_cutoff * sigma_max`.
pub fn svd_split(m: &DMatrix<f64>, rel_cutoff: f64) -> SvdSplit {
    svd_split_scaled(m, rel_cutoff, 0.0)
}

/// Rank-revealing split with cutoff `rel_cutoff * max(sigma_max, scale_floor)`.
/// A positive floor keeps round-off from counting as rank when the whole
/// matrix is numerically zero.
pub fn svd_split_scaled(m: &DMatrix<f64>, rel_cutoff: f64, scale_floor: f64) -> SvdSplit {
    let (rows, cols) = m.shape();
    let singular = singular_values(m);
    let sigma_max = singular.first().copied().unwrap_or(0.0);
    let cutoff = rel_cutoff * sigma_max.max(scale_floor);
    let rank = singular.iter().filter(|&&s| s > cutoff && s > 0.0).count();

    let (_, v) = right_basis(m);
    let (_, u) = right_basis(&m.transpose());

    let take = |basis: &DMatrix<f64>, dim: usize, from: usize, count: usize| {
        if count == 0 {
            DMatrix::zeros(dim, 0)
        } else {
            canonical_signs(basis.columns(from, count).into_owned())
        }
    };
    SvdSplit {
        singular_values: singular,
        rank,
        cutoff,
        kernel: take(&v, cols, rank, cols - rank),
        coimage: take(&v, cols, 0, rank),
        range: take(&u, rows, 0, rank),
        cokernel: take(&u, rows, rank, rows - rank),
    }
}

pub fn rank(m: &DMatrix<f64>, rel_cutoff: f64) -> usize {
    let s = singular_values(m);
    let smax = s.first().copied().unwrap_or(0.0);
    s.iter().filter(|&&x| x > rel_cutoff * smax && x > 0.0).count()
}

/// Orthonormal basis of the kernel.
pub fn kernel_basis(m: &DMatrix<f64>, rel_cutoff: f64) -> DMatrix<f64> {
    svd_split(m, rel_cutoff).kernel
}

/// Orthonormal basis of the orthogonal complement of the column span of `b`
/// inside `R^ambient`.
pub fn orthogonal_complement(b: &DMatrix<f64>, ambient: usize) -> DMatrix<f64> {
    if b.ncols() == 0 {
        return DMatrix::identity(ambient, ambient);
    }
    kernel_basis(&b.transpose(), RANK_CUTOFF)
}

/// Horizontal concatenation `[a | b]`.
pub fn hcat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let rows = if a.ncols() > 0 { a.nrows() } else { b.nrows().max(a.nrows()) };
    let mut out = DMatrix::zeros(rows, a.ncols() + b.ncols());
    if a.ncols() > 0 {
        out.columns_mut(0, a.ncols()).copy_from(a);
    }
    if b.ncols() > 0 {
        out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    }
    out
}

/// Vertical concatenation of two matrices with the same column count.
pub fn vcat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let cols = a.ncols().max(b.ncols());
    let mut out = DMatrix::zeros(a.nrows() + b.nrows(), cols);
    if a.nrows() > 0 {
        out.rows_mut(0, a.nrows()).copy_from(a);
    }
    if b.nrows() > 0 {
        out.rows_mut(a.nrows(), b.nrows()).copy_from(b);
    }
    out
}

pub fn concat(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(a.len() + b.len(), a.iter().chain(b.iter()).copied())
}

/// Gram–Schmidt via QR, keeping the orientation of the column frame
/// (the triangular factor has positive diagonal).
pub fn orthonormalize_oriented(m: &DMatrix<f64>) -> DMatrix<f64> {
    if m.ncols() == 0 {
        return m.clone();
    }
    let qr = m.clone().qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..m.ncols() {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Determinant that treats the empty matrix as 1.
pub fn det(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        1.0
    } else {
        m.clone().determinant()
    }
}

pub fn sign(x: f64) -> i8 {
    if x < 0.0 {
        -1
    } else {
        1
    }
}

/// Least-squares / minimum-norm solve of `m x = b` via SVD.
pub fn lstsq(m: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    if m.ncols() == 0 {
        return DVector::zeros(0);
    }
    if m.nrows() == 0 {
        return DVector::zeros(m.ncols());
    }
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.max();
    svd.solve(b, 1e-13 * smax.max(f64::MIN_POSITIVE))
        .unwrap_or_else(|_| DVector::zeros(m.ncols()))
}

/// Moore–Penrose pseudoinverse with cutoff `1e-13·σ_max`.
pub fn pinv(m: &DMatrix<f64>) -> DMatrix<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return DMatrix::zeros(m.ncols(), m.nrows());
    }
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.max();
    svd.pseudo_inverse(1e-13 * smax.max(f64::MIN_POSITIVE))
        .unwrap_or_else(|_| DMatrix::zeros(m.ncols(), m.nrows()))
}

/// Column-wise [`lstsq`].
pub fn lstsq_matrix(m: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    pinv(m) * b
}

pub fn l1_norm(x: &DVector<f64>) -> f64 {
    x.iter().map(|v| v.abs()).sum()
}

/// Central finite-difference Jacobian with step `1e-6 * (1 + |x|_1)`.
pub fn jacobian_fd<F>(f: F, x: &DVector<f64>) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let h = 1e-6 * (1.0 + l1_norm(x));
    jacobian_fd_step(f, x, h)
}

pub fn jacobian_fd_step<F>(f: F, x: &DVector<f64>, h: f64) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let n = x.len();
    let mut cols: Vec<DVector<f64>> = Vec::with_capacity(n);
    let mut xp = x.clone();
    for j in 0..n {
        let orig = xp[j];
        xp[j] = orig + h;
        let fp = f(&xp);
        xp[j] = orig - h;
        let fm = f(&xp);
        xp[j] = orig;
        cols.push((fp - fm) / (2.0 * h));
    }
    if n == 0 {
        let m = f(x).len();
        return DMatrix::zeros(m, 0);
    }
    DMatrix::from_columns(&cols)
}

/// Orthogonal projector onto the column span of an orthonormal `basis`.
pub fn projector(basis: &DMatrix<f64>, ambient: usize) -> DMatrix<f64> {
    if basis.ncols() == 0 {
        DMatrix::zeros(ambient, ambient)
    } else {
        basis * basis.transpose()
    }
}

/// Oblique projection onto `span(n_basis)` along `span(c_basis)`, returning
/// the coefficient map `R^ambient -> R^{dim N}` for the first block.
/// Both bases together must span the ambient space.
pub fn split_coefficients(
    n_basis: &DMatrix<f64>,
    c_basis: &DMatrix<f64>,
) -> Option<DMatrix<f64>> {
    let full = hcat(n_basis, c_basis);
    if full.nrows() != full.ncols() {
        return None;
    }
    if full.nrows() == 0 {
        return Some(DMatrix::zeros(0, 0));
    }
    let inv = full.try_inverse()?;
    Some(inv.rows(0, n_basis.ncols()).into_owned())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_of_rank_deficient_matrix() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let s = svd_split(&m, RANK_CUTOFF);
        assert_eq!(s.rank, 1);
        assert_eq!(s.kernel_dim(), 2);
        assert_eq!(s.cokernel_dim(), 1);
        assert!((&m * &s.kernel).norm() < 1e-12);
        assert!((m.transpose() * &s.cokernel).norm() < 1e-12);
    }

    #[test]
    fn empty_shapes_do_not_panic() {
        let m = DMatrix::<f64>::zeros(0, 3);
        let s = svd_split(&m, RANK_CUTOFF);
        assert_eq!(s.kernel_dim(), 3);
        assert_eq!(s.cokernel_dim(), 0);
        let m = DMatrix::<f64>::zeros(2, 0);
        let s = svd_split(&m, RANK_CUTOFF);
        assert_eq!(s.kernel_dim(), 0);
        assert_eq!(s.cokernel_dim(), 2);
    }

    #[test]
    fn oriented_orthonormalization_keeps_sign() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, -3.0]);
        let q = orthonormalize_oriented(&m);
        assert!(det(&m).signum() == det(&q).signum());
        assert!((q.transpose() * &q - DMatrix::identity(2, 2)).norm() < 1e-12);
    }

    #[test]
    fn fd_jacobian_of_quadratic() {
        let f = |x: &DVector<f64>| DVector::from_vec(vec![x[0] * x[0] + x[1], x[0] * x[1]]);
        let x = DVector::from_vec(vec![1.5, -2.0]);
        let j = jacobian_fd(f, &x);
        let exact = DMatrix::from_row_slice(2, 2, &[3.0, 1.0, -2.0, 1.5]);
        assert!((j - exact).norm() < 1e-8);
    }
}
