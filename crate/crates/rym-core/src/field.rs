//! Per-vertex fields on a mesh.

use crate::mesh::MeshSurface;

/// One real value per vertex of the owning mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(n: usize) -> Self {
        ScalarField { values: vec![0.0; n] }
    }

    pub fn constant(mesh: &MeshSurface, c: f64) -> Self {
        ScalarField { values: vec![c; mesh.vertex_count()] }
    }

    /// Field from a function of the vertex position. Torus vertices live in
    /// the z = 0 plane with coordinates in [0, 2pi)^2.
    pub fn from_positions(mesh: &MeshSurface, f: impl Fn([f64; 3]) -> f64) -> Self {
        ScalarField { values: mesh.vertices.iter().map(|&p| f(p)).collect() }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// self += s * other
    pub fn axpy(&mut self, s: f64, other: &ScalarField) {
        debug_assert_eq!(self.len(), other.len());
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += s * b;
        }
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// k stacked scalar fields, one per Lie-algebra basis direction of t^k.
#[derive(Debug, Clone, PartialEq)]
pub struct TkField {
    pub components: Vec<ScalarField>,
}

impl TkField {
    pub fn zeros(k: usize, n: usize) -> Self {
        TkField { components: (0..k).map(|_| ScalarField::zeros(n)).collect() }
    }

    pub fn constant(mesh: &MeshSurface, k: usize, c: f64) -> Self {
        TkField { components: (0..k).map(|_| ScalarField::constant(mesh, c)).collect() }
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn is_finite(&self) -> bool {
        self.components.iter().all(|c| c.is_finite())
    }

    pub fn axpy(&mut self, s: f64, other: &TkField) {
        debug_assert_eq!(self.k(), other.k());
        for (a, b) in self.components.iter_mut().zip(&other.components) {
            a.axpy(s, b);
        }
    }
}
