//! Bundle data (rank, Chern vector, fiber inner product, normalization) and
//! the reduced curvature quantities of the flow state.
//!
//! The background connection is fixed in the harmonic gauge, so its curvature
//! is `omega_Sigma (x) zeta` with the constant vector `zeta = 2 pi c1 / A`.
//! The curvature of `mu_f = mu_bar + d^c f` then has density
//! `phi = zeta + Lap f` per component, and `F` integrates to `2 pi c1`
//! independently of `f`.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::field::{ScalarField, TkField};
use crate::mesh::MeshSurface;

/// Dense symmetric k x k matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMat {
    pub k: usize,
    vals: Vec<f64>,
}

impl SymMat {
    pub fn identity(k: usize) -> Self {
        let mut vals = vec![0.0; k * k];
        for i in 0..k {
            vals[i * k + i] = 1.0;
        }
        SymMat { k, vals }
    }

    /// Builds from a row-major buffer, symmetrizing tiny asymmetries and
    /// rejecting large ones.
    pub fn from_row_major(k: usize, vals: &[f64]) -> Result<Self> {
        if vals.len() != k * k {
            return Err(Error::InvalidBundle(format!(
                "fiber metric must have {} entries, got {}",
                k * k,
                vals.len()
            )));
        }
        let mut v = vals.to_vec();
        for i in 0..k {
            for j in (i + 1)..k {
                let a = v[i * k + j];
                let b = v[j * k + i];
                if (a - b).abs() > 1e-9 * (a.abs() + b.abs()).max(1.0) {
                    return Err(Error::InvalidBundle(format!(
                        "fiber metric not symmetric: h[{i}][{j}]={a} vs h[{j}][{i}]={b}"
                    )));
                }
                let m = 0.5 * (a + b);
                v[i * k + j] = m;
                v[j * k + i] = m;
            }
        }
        Ok(SymMat { k, vals: v })
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.vals[i * self.k + j]
    }

    pub fn scale(&self, s: f64) -> SymMat {
        SymMat { k: self.k, vals: self.vals.iter().map(|v| v * s).collect() }
    }

    pub fn quadratic(&self, x: &[f64], y: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.k);
        debug_assert_eq!(y.len(), self.k);
        let mut acc = 0.0;
        for i in 0..self.k {
            for j in 0..self.k {
                acc += x[i] * self.get(i, j) * y[j];
            }
        }
        acc
    }

    /// Eigenvalues via cyclic Jacobi; adequate for the small ranks used here.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let k = self.k;
        if k == 1 {
            return vec![self.vals[0]];
        }
        let mut a = self.vals.clone();
        for _sweep in 0..100 {
            let mut off = 0.0;
            for i in 0..k {
                for j in (i + 1)..k {
                    off += a[i * k + j].abs();
                }
            }
            if off < 1e-14 {
                break;
            }
            for p in 0..k {
                for q in (p + 1)..k {
                    let apq = a[p * k + q];
                    if apq.abs() < 1e-300 {
                        continue;
                    }
                    let app = a[p * k + p];
                    let aqq = a[q * k + q];
                    let theta = 0.5 * (aqq - app) / apq;
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for r in 0..k {
                        let arp = a[r * k + p];
                        let arq = a[r * k + q];
                        a[r * k + p] = c * arp - s * arq;
                        a[r * k + q] = s * arp + c * arq;
                    }
                    for r in 0..k {
                        let apr = a[p * k + r];
                        let aqr = a[q * k + r];
                        a[p * k + r] = c * apr - s * aqr;
                        a[q * k + r] = s * apr + c * aqr;
                    }
                }
            }
        }
        let mut ev: Vec<f64> = (0..k).map(|i| a[i * k + i]).collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    pub fn lambda_max(&self) -> f64 {
        *self.eigenvalues().last().unwrap()
    }

    pub fn det(&self) -> f64 {
        self.eigenvalues().iter().product()
    }
}

/// Principal T^k bundle data: rank, Chern vector, fiber inner product at
/// t = 0, and the normalization lambda in {-1, 0, 1}.
#[derive(Debug, Clone, PartialEq)]
pub struct BundleSpec {
    pub k: usize,
    pub c1: Vec<i64>,
    pub h0: SymMat,
    pub lambda: i8,
}

impl BundleSpec {
    pub fn new(k: usize, c1: Vec<i64>, h0: SymMat, lambda: i8) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidBundle("bundle rank k must be at least 1".into()));
        }
        if c1.len() != k {
            return Err(Error::InvalidBundle(format!(
                "Chern vector has {} entries, expected k = {k}",
                c1.len()
            )));
        }
        if h0.k != k {
            return Err(Error::InvalidBundle(format!(
                "fiber metric is {}x{}, expected {k}x{k}",
                h0.k, h0.k
            )));
        }
        let ev = h0.eigenvalues();
        if ev.iter().any(|&e| e <= 0.0) {
            return Err(Error::InvalidBundle(format!(
                "fiber metric h0 is not positive definite; eigenvalues {ev:?}"
            )));
        }
        if !matches!(lambda, -1 | 0 | 1) {
            return Err(Error::InvalidBundle(format!(
                "lambda must be one of -1, 0, 1, got {lambda}"
            )));
        }
        Ok(BundleSpec { k, c1, h0, lambda })
    }

    pub fn trivial(k: usize) -> Self {
        BundleSpec { k, c1: vec![0; k], h0: SymMat::identity(k), lambda: 0 }
    }

    pub fn is_trivial(&self) -> bool {
        self.c1.iter().all(|&c| c == 0)
    }
}

/// Harmonic curvature representative: zeta_I = 2 pi c1_I / A. The integral
/// normalization is `integral F^I = 2 pi c1^I`.
pub fn zeta(spec: &BundleSpec, mesh: &MeshSurface) -> Vec<f64> {
    zeta_for_area(spec, mesh.area)
}

pub fn zeta_for_area(spec: &BundleSpec, area: f64) -> Vec<f64> {
    spec.c1.iter().map(|&c| 2.0 * std::f64::consts::PI * c as f64 / area).collect()
}

/// Exact fiber metric h_t = e^{-lambda t} h0.
pub fn fiber_metric_at(spec: &BundleSpec, t: f64) -> SymMat {
    spec.h0.scale((-(spec.lambda as f64) * t).exp())
}

/// Flow state: time plus the conformal factor and connection potential.
/// Snapshots are value types; the mesh is shared immutably.
#[derive(Debug, Clone)]
pub struct FlowState {
    pub t: f64,
    pub u: ScalarField,
    pub f: TkField,
    pub spec: BundleSpec,
    pub mesh: Arc<MeshSurface>,
}

impl FlowState {
    pub fn new(mesh: Arc<MeshSurface>, spec: BundleSpec, u: ScalarField, f: TkField) -> Result<Self> {
        if u.len() != mesh.vertex_count() {
            return Err(Error::Domain("conformal factor length does not match mesh".into()));
        }
        if f.k() != spec.k || f.components.iter().any(|c| c.len() != mesh.vertex_count()) {
            return Err(Error::Domain("potential shape does not match mesh/bundle".into()));
        }
        Ok(FlowState { t: 0.0, u, f, spec, mesh })
    }

    pub fn fiber_metric(&self) -> SymMat {
        fiber_metric_at(&self.spec, self.t)
    }

    pub fn validate_finite(&self) -> Result<()> {
        if !self.u.is_finite() {
            return Err(Error::NonFinite { what: "conformal factor u", t: self.t });
        }
        if !self.f.is_finite() {
            return Err(Error::NonFinite { what: "potential f", t: self.t });
        }
        Ok(())
    }
}

/// The t^k-valued density phi with F = phi (x) omega_Sigma.
#[derive(Debug, Clone)]
pub struct CurvatureDensity {
    pub phi: TkField,
}

/// phi^I = zeta^I + Lap f^I per vertex.
pub fn curvature_density(state: &FlowState) -> CurvatureDensity {
    let z = zeta(&state.spec, &state.mesh);
    let mut comps = Vec::with_capacity(state.spec.k);
    for (i, f) in state.f.components.iter().enumerate() {
        let mut lap = state.mesh.laplacian_apply(f);
        for v in lap.values.iter_mut() {
            *v += z[i];
        }
        comps.push(lap);
    }
    CurvatureDensity { phi: TkField { components: comps } }
}

/// Pointwise |F|^2 with respect to (g_t = e^u g_Sigma, h_t):
/// 2 e^{-2u} phi^T h_t phi.
pub fn f_norm_sq(state: &FlowState) -> ScalarField {
    let phi = curvature_density(state).phi;
    let ht = state.fiber_metric();
    let n = state.mesh.vertex_count();
    let mut out = ScalarField::zeros(n);
    let mut buf = vec![0.0; state.spec.k];
    for i in 0..n {
        for (c, b) in phi.components.iter().zip(buf.iter_mut()) {
            *b = c.values[i];
        }
        out.values[i] = 2.0 * (-2.0 * state.u.values[i]).exp() * ht.quadratic(&buf, &buf);
    }
    out
}

/// Pointwise phi^T m phi for a supplied symmetric matrix m (the raw |F|^2
/// carries an extra 2 e^{-2u}).
pub(crate) fn phi_quadratic(phi: &TkField, m: &SymMat, n: usize) -> ScalarField {
    let mut out = ScalarField::zeros(n);
    let k = phi.k();
    let mut buf = vec![0.0; k];
    for i in 0..n {
        for (c, b) in phi.components.iter().zip(buf.iter_mut()) {
            *b = c.values[i];
        }
        out.values[i] = m.quadratic(&buf, &buf);
    }
    out
}
