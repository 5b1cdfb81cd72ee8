//! Dense two-phase simplex with Bland's rule.
//!
//! Problems are in standard form `min cᵀx, Ax = b, x ≥ 0`. Sizes here are
//! tiny (tens of variables), so a full tableau is the simplest correct choice.

use nalgebra::{DMatrix, DVector};

/// Feasibility tolerance for phase one and pivot tolerance.
pub const LP_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { x: DVector<f64>, value: f64 },
    Infeasible { residual: f64 },
    Unbounded,
}

struct Tableau {
    t: DMatrix<f64>,
    basis: Vec<usize>,
}

impl Tableau {
    fn rows(&self) -> usize {
        self.t.nrows() - 1
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let p = self.t[(row, col)];
        let cols = self.t.ncols();
        for j in 0..cols {
            self.t[(row, j)] /= p;
        }
        for i in 0..self.t.nrows() {
            if i != row {
                let factor = self.t[(i, col)];
                if factor != 0.0 {
                    for j in 0..cols {
                        let v = self.t[(row, j)];
                        self.t[(i, j)] -= factor * v;
                    }
                }
            }
        }
        self.basis[row] = col;
    }

    /// Runs the simplex on the objective row (last row) over columns `0..allowed`.
    /// Returns false on unboundedness.
    fn optimize(&mut self, allowed: usize) -> bool {
        let rhs = self.t.ncols() - 1;
        let obj = self.rows();
        loop {
            let entering = (0..allowed).find(|&j| self.t[(obj, j)] < -LP_TOL);
            let Some(col) = entering else { return true };
            let mut best: Option<(f64, usize)> = None;
            for i in 0..self.rows() {
                let a = self.t[(i, col)];
                if a > LP_TOL {
                    let ratio = self.t[(i, rhs)] / a;
                    best = match best {
                        None => Some((ratio, i)),
                        Some((r, bi)) => {
                            if ratio < r - 1e-14
                                || ((ratio - r).abs() <= 1e-14 && self.basis[i] < self.basis[bi])
                            {
                                Some((ratio, i))
                            } else {
                                Some((r, bi))
                            }
                        }
                    };
                }
            }
            match best {
                None => return false,
                Some((_, row)) => self.pivot(row, col),
            }
        }
    }
}

/// Solves `min cᵀx` subject to `Ax = b`, `x ≥ 0`.
pub fn minimize(c: &DVector<f64>, a: &DMatrix<f64>, b: &DVector<f64>) -> LpOutcome {
    let (m, n) = a.shape();
    assert_eq!(b.len(), m);
    assert_eq!(c.len(), n);
    // Columns: n structural, m artificial, rhs.
    let mut t = DMatrix::zeros(m + 1, n + m + 1);
    for i in 0..m {
        let flip = if b[i] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            t[(i, j)] = flip * a[(i, j)];
        }
        t[(i, n + i)] = 1.0;
        t[(i, n + m)] = flip * b[i];
    }
    // Phase one objective: minimize the sum of artificials, expressed in
    // reduced form relative to the artificial basis.
    for i in 0..m {
        for j in 0..n {
            t[(m, j)] -= t[(i, j)];
        }
        t[(m, n + m)] -= t[(i, n + m)];
    }
    let mut tab = Tableau { t, basis: (n..n + m).collect() };
    tab.optimize(n + m);
    let residual = -tab.t[(m, n + m)];
    if residual > LP_TOL * (1.0 + b.amax()) {
        return LpOutcome::Infeasible { residual };
    }
    // Drive artificials out of the basis where possible.
    for i in 0..m {
        if tab.basis[i] >= n {
            if let Some(col) = (0..n).find(|&j| tab.t[(i, j)].abs() > LP_TOL) {
                tab.pivot(i, col);
            }
        }
    }
    // Phase two objective in reduced form.
    for j in 0..tab.t.ncols() {
        tab.t[(m, j)] = 0.0;
    }
    for j in 0..n {
        tab.t[(m, j)] = c[j];
    }
    for i in 0..m {
        let bj = tab.basis[i];
        if bj < n && c[bj] != 0.0 {
            let cb = c[bj];
            for j in 0..tab.t.ncols() {
                let v = tab.t[(i, j)];
                tab.t[(m, j)] -= cb * v;
            }
        }
    }
    // Artificial columns stay excluded; rows whose artificial could not be
    // removed are redundant and keep a zero right-hand side.
    if !tab.optimize(n) {
        return LpOutcome::Unbounded;
    }
    let mut x = DVector::zeros(n);
    for i in 0..m {
        if tab.basis[i] < n {
            x[tab.basis[i]] = tab.t[(i, n + m)];
        }
    }
    let value = c.dot(&x);
    LpOutcome::Optimal { x, value }
}

/// Finds `x ≥ 0` with `Ax = b`, or reports the phase-one residual.
pub fn feasible_nonneg(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>, f64> {
    match minimize(&DVector::zeros(a.ncols()), a, b) {
        LpOutcome::Optimal { x, .. } => Ok(x),
        LpOutcome::Infeasible { residual } => Err(residual),
        LpOutcome::Unbounded => unreachable!("zero objective is bounded"),
    }
}

/// Finds a free `y` with `Ay ≥ b`.
pub fn feasible_inequalities(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let (m, n) = a.shape();
    // y = y⁺ − y⁻ and slack s: [A, −A, −I] (y⁺, y⁻, s) = b.
    let mut std = DMatrix::zeros(m, 2 * n + m);
    for i in 0..m {
        for j in 0..n {
            std[(i, j)] = a[(i, j)];
            std[(i, n + j)] = -a[(i, j)];
        }
        std[(i, 2 * n + i)] = -1.0;
    }
    let x = feasible_nonneg(&std, b).ok()?;
    Some(DVector::from_iterator(n, (0..n).map(|j| x[j] - x[n + j])))
}

/// Nonnegative coefficients expressing `x` in the columns of `rays`, with the
/// best achievable residual when none exist.
pub fn nonneg_combination(rays: &DMatrix<f64>, x: &DVector<f64>) -> Result<DVector<f64>, f64> {
    if rays.ncols() == 0 {
        let r = x.amax();
        return if r <= LP_TOL { Ok(DVector::zeros(0)) } else { Err(r) };
    }
    feasible_nonneg(rays, x)
}
