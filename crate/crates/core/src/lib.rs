//! Desk-scale numerics for Fredholm sections in polyfold-style local models.
//!
//! Every space is finite dimensional. Levels of regularity are emulated by
//! weighted norms ([`graded_space`]), the implicit-function engine is a
//! parameter-dependent Picard solver ([`germ`]), and the global theory is a
//! signed count of zeros of generic perturbations ([`degree`]).

pub mod cones;
pub mod degree;
pub mod fredholm;
pub mod germ;
pub mod graded_space;
pub mod harness;
pub mod linalg;
pub mod lp;
pub mod models;
pub mod orientation;
pub mod rng;
pub mod section;
pub mod solution;
pub mod splicing;

pub use graded_space::{GradedSpace, GradedVector, DEFAULT_TOL};
pub use section::{DynSection, FnSection, Section};
