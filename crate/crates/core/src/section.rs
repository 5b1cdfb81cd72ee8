//! Sections of trivial bundles `R^d → R^k` in chart coordinates.
//!
//! Implementations must be pure: evaluation may happen concurrently and in
//! any order.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::linalg::jacobian_fd;

pub type VecFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type MatFn = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;

pub trait Section: Send + Sync {
    fn domain_dim(&self) -> usize;
    fn fiber_dim(&self) -> usize;
    fn eval(&self, x: &DVector<f64>) -> DVector<f64>;

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        jacobian_fd(|y| self.eval(y), x)
    }

    /// Number of leading domain coordinates constrained to be nonnegative.
    fn quadrant_rank(&self) -> usize {
        0
    }
}

pub type DynSection = Arc<dyn Section>;

/// Section given by closures.
#[derive(Clone)]
pub struct FnSection {
    domain: usize,
    fiber: usize,
    quadrant_rank: usize,
    f: VecFn,
    jac: Option<MatFn>,
}

impl FnSection {
    pub fn new<F>(domain: usize, fiber: usize, f: F) -> Self
    where
        F: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        Self { domain, fiber, quadrant_rank: 0, f: Arc::new(f), jac: None }
    }

    pub fn with_jacobian<J>(mut self, j: J) -> Self
    where
        J: Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    {
        self.jac = Some(Arc::new(j));
        self
    }

    pub fn with_quadrant_rank(mut self, n: usize) -> Self {
        self.quadrant_rank = n;
        self
    }

    pub fn into_dyn(self) -> DynSection {
        Arc::new(self)
    }
}

impl Section for FnSection {
    fn domain_dim(&self) -> usize {
        self.domain
    }

    fn fiber_dim(&self) -> usize {
        self.fiber
    }

    fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.f)(x)
    }

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        match &self.jac {
            Some(j) => j(x),
            None => jacobian_fd(|y| (self.f)(y), x),
        }
    }

    fn quadrant_rank(&self) -> usize {
        self.quadrant_rank
    }
}

/// Pointwise sum `f + s`.
#[derive(Clone)]
pub struct SumSection {
    pub f: DynSection,
    pub s: DynSection,
}

impl Section for SumSection {
    fn domain_dim(&self) -> usize {
        self.f.domain_dim()
    }

    fn fiber_dim(&self) -> usize {
        self.f.fiber_dim()
    }

    fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        self.f.eval(x) + self.s.eval(x)
    }

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        self.f.jacobian(x) + self.s.jacobian(x)
    }

    fn quadrant_rank(&self) -> usize {
        self.f.quadrant_rank()
    }
}

/// The zero section of a given shape.
pub fn zero_section(domain: usize, fiber: usize) -> DynSection {
    FnSection::new(domain, fiber, move |_| DVector::zeros(fiber))
        .with_jacobian(move |_| DMatrix::zeros(fiber, domain))
        .into_dyn()
}
