//! Finite-dimensional graded spaces: one coordinate space carrying a family
//! of nested weighted norms and an optional partial-quadrant marking.
//!
//! Coordinates are 0-based; the constrained coordinates are `0..quadrant_rank`.

use std::sync::Arc;

use nalgebra::DVector;
use thiserror::Error;

/// Absolute tolerance shared by membership and zero-coordinate tests.
pub const DEFAULT_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GradedError {
    #[error("level {level} out of range 0..={max}")]
    LevelOutOfRange { level: usize, max: usize },
    #[error("weight {index} is {value}, weights must be finite and >= 1")]
    BadWeight { index: usize, value: f64 },
    #[error("quadrant rank {rank} exceeds dimension {dim}")]
    QuadrantRank { rank: usize, dim: usize },
    #[error("expected {expected} coordinates, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("at least one level is required")]
    NoLevels,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradedSpace {
    dim: usize,
    levels: usize,
    weights: Vec<f64>,
    quadrant_rank: usize,
}

impl GradedSpace {
    /// Space with the default weights `w_i = 2^{i/dim}`.
    pub fn new(dim: usize, levels: usize, quadrant_rank: usize) -> Result<Self, GradedError> {
        let weights = default_weights(dim);
        Self::with_weights(weights, levels, quadrant_rank)
    }

    pub fn with_weights(
        weights: Vec<f64>,
        levels: usize,
        quadrant_rank: usize,
    ) -> Result<Self, GradedError> {
        if levels == 0 {
            return Err(GradedError::NoLevels);
        }
        for (index, &value) in weights.iter().enumerate() {
            if !(value.is_finite() && value >= 1.0) {
                return Err(GradedError::BadWeight { index, value });
            }
        }
        let dim = weights.len();
        if quadrant_rank > dim {
            return Err(GradedError::QuadrantRank { rank: quadrant_rank, dim });
        }
        Ok(Self { dim, levels, weights, quadrant_rank })
    }

    /// Plain space with unit weights and no quadrant.
    pub fn flat(dim: usize) -> Self {
        Self { dim, levels: 1, weights: vec![1.0; dim], quadrant_rank: 0 }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Highest level `M`; valid levels are `0..=M`.
    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn quadrant_rank(&self) -> usize {
        self.quadrant_rank
    }

    pub fn with_quadrant_rank(&self, rank: usize) -> Result<Self, GradedError> {
        Self::with_weights(self.weights.clone(), self.levels, rank)
    }

    /// Direct sum `self ⊕ other`; quadrant marks are dropped unless `self`
    /// carries the whole quadrant.
    pub fn direct_sum(&self, other: &GradedSpace) -> GradedSpace {
        let mut weights = self.weights.clone();
        weights.extend_from_slice(&other.weights);
        let quadrant_rank =
            if self.quadrant_rank == self.dim { self.dim + other.quadrant_rank } else { self.quadrant_rank };
        GradedSpace { dim: weights.len(), levels: self.levels.min(other.levels), weights, quadrant_rank }
    }

    pub fn check_level(&self, m: usize) -> Result<(), GradedError> {
        if m > self.levels {
            Err(GradedError::LevelOutOfRange { level: m, max: self.levels })
        } else {
            Ok(())
        }
    }

    /// `Σ_i w_i^m |x_i|` on raw coordinates.
    pub fn norm(&self, x: &[f64], m: usize) -> Result<f64, GradedError> {
        self.check_level(m)?;
        if x.len() != self.dim {
            return Err(GradedError::DimensionMismatch { expected: self.dim, got: x.len() });
        }
        Ok(self.norm_unchecked(x, m))
    }

    pub fn norm_unchecked(&self, x: &[f64], m: usize) -> f64 {
        x.iter()
            .zip(&self.weights)
            .map(|(xi, wi)| wi.powi(m as i32) * xi.abs())
            .sum()
    }

    pub fn vector(self: &Arc<Self>, coords: Vec<f64>, declared_level: usize) -> Result<GradedVector, GradedError> {
        GradedVector::new(coords, Arc::clone(self), declared_level)
    }

    pub fn membership(&self, x: &[f64], tol: f64) -> PartialQuadrantMembership {
        let n = self.quadrant_rank;
        let inside = x[..n].iter().all(|&xi| xi >= -tol);
        let active_constraints = (0..n).filter(|&i| x[i].abs() <= tol).collect();
        PartialQuadrantMembership { inside, active_constraints }
    }
}

/// `w_i = 2^{i/dim}` for 0-based `i`.
pub fn default_weights(dim: usize) -> Vec<f64> {
    (0..dim).map(|i| 2f64.powf(i as f64 / dim as f64)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradedVector {
    coords: Vec<f64>,
    space: Arc<GradedSpace>,
    declared_level: usize,
}

impl GradedVector {
    pub fn new(coords: Vec<f64>, space: Arc<GradedSpace>, declared_level: usize) -> Result<Self, GradedError> {
        if coords.len() != space.dim {
            return Err(GradedError::DimensionMismatch { expected: space.dim, got: coords.len() });
        }
        space.check_level(declared_level)?;
        Ok(Self { coords, space, declared_level })
    }

    /// Vector tagged with the top level, i.e. a smooth point.
    pub fn smooth(coords: Vec<f64>, space: Arc<GradedSpace>) -> Result<Self, GradedError> {
        let m = space.levels;
        Self::new(coords, space, m)
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn to_dvector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.coords)
    }

    pub fn space(&self) -> &Arc<GradedSpace> {
        &self.space
    }

    pub fn declared_level(&self) -> usize {
        self.declared_level
    }

    pub fn is_smooth(&self) -> bool {
        self.declared_level == self.space.levels
    }

    /// Bookkeeping for a regularity gain: the tag moves up one level, capped at `M`.
    pub fn raised(&self) -> Self {
        Self {
            coords: self.coords.clone(),
            space: Arc::clone(&self.space),
            declared_level: (self.declared_level + 1).min(self.space.levels),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartialQuadrantMembership {
    pub inside: bool,
    /// 0-based indices `i < n` with `|x_i| ≤ tol`.
    pub active_constraints: Vec<usize>,
}

pub fn level_norm(x: &GradedVector, m: usize) -> Result<f64, GradedError> {
    x.space.norm(&x.coords, m)
}

pub fn quadrant_membership(x: &GradedVector, tol: f64) -> PartialQuadrantMembership {
    x.space.membership(&x.coords, tol)
}
