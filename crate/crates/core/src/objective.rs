//! Objective functions `ψ` on the embedded group.

use std::fmt::Debug;

use nalgebra::DVector;

use crate::geometry::{se3_parts, GroupElement};

/// A configuration-dependent objective, evaluated on embedded coordinates.
pub trait Objective: Send + Sync + Debug {
    fn value(&self, g: &GroupElement) -> f64;

    /// Euclidean gradient in ambient coordinates, when known in closed form.
    fn ambient_gradient(&self, _g: &GroupElement) -> Option<DVector<f64>> {
        None
    }
}

/// `ψ(g) = offset + Σ_i weight_i (g^i)²` on `ℝⁿ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Paraboloid {
    pub offset: f64,
    pub weights: Vec<f64>,
}

impl Paraboloid {
    /// `−1 + (g¹)² + (g²)²/2`.
    pub fn planar_source() -> Self {
        Self {
            offset: -1.0,
            weights: vec![1.0, 0.5],
        }
    }
}

impl Objective for Paraboloid {
    fn value(&self, g: &GroupElement) -> f64 {
        self.offset
            + self
                .weights
                .iter()
                .zip(g.coords().iter())
                .map(|(w, x)| w * x * x)
                .sum::<f64>()
    }

    fn ambient_gradient(&self, g: &GroupElement) -> Option<DVector<f64>> {
        Some(DVector::from_iterator(
            g.coords().len(),
            g.coords()
                .iter()
                .enumerate()
                .map(|(i, x)| 2.0 * self.weights.get(i).copied().unwrap_or(0.0) * x),
        ))
    }
}

/// `ψ(R, r) = c_R |R − I₃|² + c_r |r|²` on SE(3), Frobenius norm on the rotation.
#[derive(Debug, Clone, PartialEq)]
pub struct Se3Distance {
    pub rotation_weight: f64,
    pub position_weight: f64,
}

impl Default for Se3Distance {
    fn default() -> Self {
        Self {
            rotation_weight: 0.25,
            position_weight: 0.5,
        }
    }
}

impl Objective for Se3Distance {
    fn value(&self, g: &GroupElement) -> f64 {
        let (rot, pos) = se3_parts(g);
        let dr = rot - nalgebra::Matrix3::identity();
        self.rotation_weight * dr.norm_squared() + self.position_weight * pos.norm_squared()
    }

    fn ambient_gradient(&self, g: &GroupElement) -> Option<DVector<f64>> {
        let c = g.coords();
        let mut grad = DVector::zeros(12);
        for i in 0..3 {
            for j in 0..3 {
                let idx = 3 * i + j;
                let delta = if i == j { 1.0 } else { 0.0 };
                grad[idx] = 2.0 * self.rotation_weight * (c[idx] - delta);
            }
        }
        for k in 9..12 {
            grad[k] = 2.0 * self.position_weight * c[k];
        }
        Some(grad)
    }
}

/// `ψ ≡ value`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Constant(pub f64);

impl Objective for Constant {
    fn value(&self, _g: &GroupElement) -> f64 {
        self.0
    }

    fn ambient_gradient(&self, g: &GroupElement) -> Option<DVector<f64>> {
        Some(DVector::zeros(g.coords().len()))
    }
}

/// Wraps an objective and hides its analytic gradient, forcing finite differences.
#[derive(Debug)]
pub struct ValueOnly<O>(pub O);

impl<O: Objective> Objective for ValueOnly<O> {
    fn value(&self, g: &GroupElement) -> f64 {
        self.0.value(g)
    }
}
