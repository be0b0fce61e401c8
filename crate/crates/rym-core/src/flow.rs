//! Time stepping for the reduced system
//!
//! ```text
//! du/dt = e^{-u} (Lap u - R_Sigma) + e^{-2u} phi^T h_t phi - lambda,
//! df/dt = e^{-u} (Lap f + zeta) = e^{-u} phi,
//! ```
//!
//! with classical explicit RK4 under a CFL bound, plus the spatially
//! homogeneous scalar ODE and the backward conjugate heat solve along stored
//! trajectories.
//!
//! Two step-size regimes. The runner normally limits dt by the parabolic
//! bound e^{min u} / Lambda_max scaled by cfl_factor times the integrator's
//! stable real-axis radius (2.5 with margin for RK4; [`stability_dt`] keeps
//! the conservative unit-radius bound). Once every field is spatially
//! constant the discrete Laplacians vanish identically and the stepper
//! coincides with the homogeneous ODE, so the spatial restriction is vacuous:
//! the runner snaps states that are constant to 1e-13 relative onto the
//! homogeneous subspace and steps them with a reaction-limited dt instead.
//! Without that, normalized chi = 0 runs to t_end cost O(e^{t_end}) steps,
//! the diffusion coefficient e^{-u} growing like e^t with nothing left to
//! diffuse.

use std::f64::consts::PI;

use crate::bundle::{fiber_metric_at, zeta, zeta_for_area, BundleSpec, FlowState};
use crate::diagnostics::DiagnosticsRecord;
use crate::error::{Error, Result};
use crate::field::{ScalarField, TkField};

/// Step-size and termination thresholds.
#[derive(Debug, Clone, Copy)]
pub struct StepControl {
    pub cfl_factor: f64,
    pub dt_max: f64,
    pub dt_min: f64,
    /// Singularity threshold on sup |u|.
    pub u_max: f64,
    /// Stable real-axis radius assumed for the RK4 stepper (absolute bound
    /// 2.785); multiplies the CFL bound inside the runner only.
    pub rk_stability: f64,
    /// Diagnostics cadence in steps. Long equilibration runs may coarsen
    /// this; audits read whatever cadence was recorded.
    pub record_every: usize,
}

impl Default for StepControl {
    fn default() -> Self {
        StepControl {
            cfl_factor: 0.5,
            dt_max: 1e-2,
            dt_min: 1e-12,
            u_max: 20.0,
            rk_stability: 2.5,
            record_every: 1,
        }
    }
}

impl StepControl {
    pub fn validate(&self) -> Result<()> {
        if !(self.cfl_factor > 0.0 && self.cfl_factor <= 1.0) {
            return Err(Error::Domain(format!(
                "cfl_factor must lie in (0, 1], got {}",
                self.cfl_factor
            )));
        }
        if !(self.dt_min > 0.0 && self.dt_min < self.dt_max) {
            return Err(Error::Domain(format!(
                "need 0 < dt_min < dt_max, got {} and {}",
                self.dt_min, self.dt_max
            )));
        }
        if !(self.rk_stability > 0.0 && self.rk_stability <= 2.785) {
            return Err(Error::Domain(format!(
                "rk_stability must lie in (0, 2.785], got {}",
                self.rk_stability
            )));
        }
        if self.record_every == 0 {
            return Err(Error::Domain("record_every must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Termination {
    ReachedTEnd,
    Singularity { t: f64 },
    NumericalFailure { t: f64 },
}

/// Stored flow history: state snapshots every `stride` steps plus
/// diagnostics at the configured cadence.
pub struct Trajectory {
    pub snapshots: Vec<FlowState>,
    pub records: Vec<DiagnosticsRecord>,
    pub termination: Termination,
    pub steps: usize,
    pub stride: usize,
    pub failure_reason: Option<String>,
}

impl Trajectory {
    pub fn initial(&self) -> &FlowState {
        &self.snapshots[0]
    }

    pub fn last_state(&self) -> &FlowState {
        self.snapshots.last().unwrap()
    }
}

/// Buffers for one right-side evaluation.
struct RhsScratch {
    exp_neg_u: Vec<f64>,
    lap_u: ScalarField,
    k_u: ScalarField,
    k_f: TkField,
    zeta: Vec<f64>,
    qbuf: Vec<f64>,
}

impl RhsScratch {
    fn new(state: &FlowState) -> Self {
        let n = state.mesh.vertex_count();
        RhsScratch {
            exp_neg_u: vec![0.0; n],
            lap_u: ScalarField::zeros(n),
            k_u: ScalarField::zeros(n),
            k_f: TkField::zeros(state.spec.k, n),
            zeta: zeta(&state.spec, &state.mesh),
            qbuf: vec![0.0; state.spec.k],
        }
    }

    /// Fills k_u, k_f with the right side at `state`.
    fn eval(&mut self, state: &FlowState) {
        let mesh = &state.mesh;
        let n = mesh.vertex_count();
        let ht = state.fiber_metric();
        let lambda = state.spec.lambda as f64;

        if state.spec.k == 1 {
            // single sweep for both Laplacians, then one arithmetic pass
            mesh.laplacian_apply2_into(
                &state.u,
                &state.f.components[0],
                &mut self.lap_u,
                &mut self.k_f.components[0],
            );
            let h00 = ht.get(0, 0);
            let z0 = self.zeta[0];
            let kf = &mut self.k_f.components[0].values;
            for i in 0..n {
                let e = (-state.u.values[i]).exp();
                let p = z0 + kf[i];
                self.k_u.values[i] =
                    e * (self.lap_u.values[i] - mesh.r_sigma) + e * e * h00 * p * p - lambda;
                kf[i] = e * p;
            }
            return;
        }

        for (e, &u) in self.exp_neg_u.iter_mut().zip(&state.u.values) {
            *e = (-u).exp();
        }
        mesh.laplacian_apply_into(&state.u, &mut self.lap_u);
        for (c, f) in state.f.components.iter().enumerate() {
            mesh.laplacian_apply_into(f, &mut self.k_f.components[c]);
            let z = self.zeta[c];
            for v in self.k_f.components[c].values.iter_mut() {
                *v += z;
            }
        }
        for i in 0..n {
            for (c, b) in self.k_f.components.iter().zip(self.qbuf.iter_mut()) {
                *b = c.values[i];
            }
            let q = ht.quadratic(&self.qbuf, &self.qbuf);
            let e = self.exp_neg_u[i];
            self.k_u.values[i] = e * (self.lap_u.values[i] - mesh.r_sigma) + e * e * q - lambda;
        }
        for c in self.k_f.components.iter_mut() {
            for (v, &e) in c.values.iter_mut().zip(&self.exp_neg_u) {
                *v *= e;
            }
        }
    }
}

fn copy_state(dst: &mut FlowState, src: &FlowState) {
    dst.t = src.t;
    dst.u.values.copy_from_slice(&src.u.values);
    for (d, s) in dst.f.components.iter_mut().zip(&src.f.components) {
        d.values.copy_from_slice(&s.values);
    }
}

/// Scratch buffers so the stepper does not allocate per stage.
struct Scratch {
    rhs: RhsScratch,
    stage: FlowState,
    out: FlowState,
}

impl Scratch {
    fn new(state: &FlowState) -> Self {
        Scratch { rhs: RhsScratch::new(state), stage: state.clone(), out: state.clone() }
    }

    /// One RK4 step from `state`; the result lands in `self.out`.
    fn step_into(&mut self, state: &FlowState, dt: f64) {
        copy_state(&mut self.out, state);
        self.out.t = state.t + dt;

        // stage 1
        self.rhs.eval(state);
        self.out.u.axpy(dt / 6.0, &self.rhs.k_u);
        self.out.f.axpy(dt / 6.0, &self.rhs.k_f);
        copy_state(&mut self.stage, state);
        self.stage.t = state.t + dt / 2.0;
        self.stage.u.axpy(dt / 2.0, &self.rhs.k_u);
        self.stage.f.axpy(dt / 2.0, &self.rhs.k_f);
        // stage 2
        self.rhs.eval(&self.stage);
        self.out.u.axpy(dt / 3.0, &self.rhs.k_u);
        self.out.f.axpy(dt / 3.0, &self.rhs.k_f);
        copy_state(&mut self.stage, state);
        self.stage.t = state.t + dt / 2.0;
        self.stage.u.axpy(dt / 2.0, &self.rhs.k_u);
        self.stage.f.axpy(dt / 2.0, &self.rhs.k_f);
        // stage 3
        self.rhs.eval(&self.stage);
        self.out.u.axpy(dt / 3.0, &self.rhs.k_u);
        self.out.f.axpy(dt / 3.0, &self.rhs.k_f);
        copy_state(&mut self.stage, state);
        self.stage.t = state.t + dt;
        self.stage.u.axpy(dt, &self.rhs.k_u);
        self.stage.f.axpy(dt, &self.rhs.k_f);
        // stage 4
        self.rhs.eval(&self.stage);
        self.out.u.axpy(dt / 6.0, &self.rhs.k_u);
        self.out.f.axpy(dt / 6.0, &self.rhs.k_f);
    }
}

/// Right side of the reduced system at the given state.
pub fn rhs(state: &FlowState) -> Result<(ScalarField, TkField)> {
    state.validate_finite()?;
    let mut scratch = RhsScratch::new(state);
    scratch.eval(state);
    Ok((scratch.k_u, scratch.k_f))
}

fn stability_dt_raw(state: &FlowState, ctl: &StepControl) -> f64 {
    ctl.cfl_factor * state.u.min().exp() / state.mesh.gershgorin_lambda_max()
}

/// CFL step size dt = cfl * e^{min u} / Lambda_max, with Lambda_max the
/// Gershgorin bound on the Laplacian spectral radius; clamped to
/// [dt_min, dt_max].
pub fn stability_dt(state: &FlowState, ctl: &StepControl) -> f64 {
    stability_dt_raw(state, ctl).clamp(ctl.dt_min, ctl.dt_max)
}

/// One classical 4-stage explicit RK step of (u, f); the fiber metric is
/// evaluated exactly at the stage times through `state.t`.
pub fn step_rk(state: &FlowState, dt: f64) -> Result<FlowState> {
    if dt == 0.0 {
        return Err(Error::Domain("step size must be nonzero".into()));
    }
    state.validate_finite()?;
    let mut scratch = Scratch::new(state);
    scratch.step_into(state, dt);
    Ok(scratch.out)
}

/// Relative spatial-constancy threshold for the homogeneous lock-in.
const LOCK_TOL: f64 = 1e-13;

fn field_deviation(mesh: &crate::mesh::MeshSurface, field: &ScalarField) -> (f64, f64) {
    let mean = mesh.integrate(field) / mesh.area;
    let dev = field.values.iter().map(|v| (v - mean).abs()).fold(0.0f64, f64::max);
    (mean, dev)
}

/// Snaps a state that is constant to LOCK_TOL relative onto the homogeneous
/// subspace; constancy is then preserved by the stepper exactly.
fn try_lock(state: &mut FlowState) -> bool {
    let mesh = state.mesh.clone();
    let (mu, du) = field_deviation(&mesh, &state.u);
    if du > LOCK_TOL * (1.0 + mu.abs()) {
        return false;
    }
    let mut means = Vec::with_capacity(state.spec.k);
    for c in &state.f.components {
        let (m, d) = field_deviation(&mesh, c);
        if d > LOCK_TOL * (1.0 + m.abs()) {
            return false;
        }
        means.push(m);
    }
    state.u.values.iter_mut().for_each(|v| *v = mu);
    for (c, m) in state.f.components.iter_mut().zip(means) {
        c.values.iter_mut().for_each(|v| *v = m);
    }
    true
}

/// Reaction-limited step size on the homogeneous subspace, where the spatial
/// operator is exactly inert.
fn locked_dt(state: &FlowState, ctl: &StepControl) -> f64 {
    let u0 = state.u.values[0];
    let z = zeta(&state.spec, &state.mesh);
    let q = state.fiber_metric().quadratic(&z, &z);
    let jac = (-u0).exp() * state.mesh.r_sigma.abs() + 2.0 * (-2.0 * u0).exp() * q;
    ctl.cfl_factor / jac.max(1e-12)
}

/// Runs the flow to `t_end`, or until a singularity (dt below dt_min or
/// sup |u| above u_max) or a numerical failure. Snapshots are stored every
/// `stride` steps; the conformal diameter is sampled at up to 65 evenly
/// spaced times. On numerical failure the trajectory retains the last valid
/// state.
pub fn run_flow(initial: &FlowState, ctl: &StepControl, t_end: f64, stride: usize) -> Result<Trajectory> {
    ctl.validate()?;
    if stride == 0 {
        return Err(Error::Domain("snapshot stride must be positive".into()));
    }
    if !(t_end > initial.t) {
        return Err(Error::Domain(format!(
            "t_end {t_end} must exceed the initial time {}",
            initial.t
        )));
    }
    let mut state = initial.clone();
    state.validate_finite()?;

    let mut locked = try_lock(&mut state);
    let mut records = vec![DiagnosticsRecord::measure(&state, true)];
    let mut snapshots = vec![state.clone()];
    let mut steps = 0usize;
    let mut failure_reason = None;
    let eps = 1e-12 * t_end.max(1.0);
    let diam_interval = (t_end - state.t) / 64.0;
    let mut next_diam_t = state.t + diam_interval;
    let mut scratch = Scratch::new(&state);

    let termination = loop {
        if state.t >= t_end - eps {
            break Termination::ReachedTEnd;
        }
        let dt_raw = if locked {
            locked_dt(&state, ctl)
        } else {
            stability_dt_raw(&state, ctl) * ctl.rk_stability
        };
        if dt_raw < ctl.dt_min {
            break Termination::Singularity { t: state.t };
        }
        let dt = dt_raw.min(ctl.dt_max).min(t_end - state.t);
        scratch.step_into(&state, dt);
        std::mem::swap(&mut state, &mut scratch.out);
        if state.validate_finite().is_err() {
            // the previous state still lives in scratch.out
            std::mem::swap(&mut state, &mut scratch.out);
            failure_reason = Some("non-finite state after step".into());
            break Termination::NumericalFailure { t: state.t };
        }
        steps += 1;
        if !locked && steps % 8 == 0 {
            locked = try_lock(&mut state);
        }
        let at_stride = steps % stride == 0;
        if at_stride || steps % ctl.record_every == 0 {
            let with_diam = state.t >= next_diam_t;
            if with_diam {
                next_diam_t = state.t + diam_interval;
            }
            records.push(DiagnosticsRecord::measure(&state, with_diam));
        }
        if at_stride {
            snapshots.push(state.clone());
        }
        let sup_abs_u = state.u.values.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        if sup_abs_u > ctl.u_max {
            break Termination::Singularity { t: state.t };
        }
    };

    if records.last().map(|r| r.t) != Some(state.t) {
        records.push(DiagnosticsRecord::measure(&state, false));
    }
    if snapshots.last().map(|s| s.t) != Some(state.t) {
        snapshots.push(state.clone());
    }
    Ok(Trajectory { snapshots, records, termination, steps, stride, failure_reason })
}

/// Spatially homogeneous run: RK4 on
/// `u' = -R_Sigma e^{-u} + e^{-lambda t} (zeta^T h0 zeta) e^{-2u} - lambda`.
#[derive(Debug, Clone)]
pub struct HomogeneousRun {
    pub samples: Vec<(f64, f64)>,
    pub singular_time: Option<f64>,
    pub r_sigma: f64,
    pub area: f64,
    pub spec: BundleSpec,
}

impl HomogeneousRun {
    pub fn final_u(&self) -> f64 {
        self.samples.last().map(|&(_, u)| u).unwrap_or(f64::NAN)
    }

    /// Diagnostics records synthesized from the scalar samples, for the
    /// shared auditors.
    pub fn records(&self) -> Vec<DiagnosticsRecord> {
        let z = zeta_for_area(&self.spec, self.area);
        let chern: Vec<f64> = self.spec.c1.iter().map(|&c| 2.0 * PI * c as f64).collect();
        self.samples
            .iter()
            .map(|&(t, u)| {
                let ht = fiber_metric_at(&self.spec, t);
                let q = ht.quadratic(&z, &z);
                DiagnosticsRecord::homogeneous(
                    t,
                    u,
                    self.r_sigma,
                    self.area,
                    q,
                    self.spec.lambda as f64,
                    chern.clone(),
                )
            })
            .collect()
    }
}

pub fn run_homogeneous(
    spec: &BundleSpec,
    r_sigma: f64,
    area: f64,
    u0: f64,
    t_end: f64,
    dt: f64,
) -> HomogeneousRun {
    let z = zeta_for_area(spec, area);
    let q0 = spec.h0.quadratic(&z, &z);
    let lambda = spec.lambda as f64;
    let deriv = |t: f64, u: f64| -> f64 {
        -r_sigma * (-u).exp() + (-lambda * t).exp() * q0 * (-2.0 * u).exp() - lambda
    };
    let mut samples = vec![(0.0, u0)];
    let mut u = u0;
    let mut t = 0.0;
    let mut singular_time = None;
    let guard = |v: f64| !v.is_finite() || v < -200.0;
    while t < t_end - 1e-12 * t_end.max(1.0) {
        let h = dt.min(t_end - t);
        let k1 = deriv(t, u);
        let k2 = deriv(t + h / 2.0, u + h / 2.0 * k1);
        let k3 = deriv(t + h / 2.0, u + h / 2.0 * k2);
        let k4 = deriv(t + h, u + h * k3);
        let next = u + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if guard(next) || !k4.is_finite() {
            singular_time = Some(t);
            break;
        }
        u = next;
        t += h;
        samples.push((t, u));
    }
    HomogeneousRun { samples, singular_time, r_sigma, area, spec: spec.clone() }
}

/// Integrates the conjugate heat density backward along a stored trajectory.
///
/// The per-vertex mass m_i = w_i a_i e^{u_i} obeys dm_i/dt = -(Lap w)_i a_i
/// (the e^{-u} of the evolving Laplacian cancels against the measure), so the
/// total mass is conserved exactly. Running from the terminal time toward
/// t = 0 integrates a backward heat equation backward, hence stably; the
/// conformal factor is interpolated linearly between snapshots and substeps
/// obey the heat CFL bound.
///
/// Returns the density at every stored snapshot time up to `t_index`,
/// ascending in t, including the terminal pair.
pub fn conjugate_heat_backward(
    traj: &Trajectory,
    t_index: usize,
    w_terminal: &ScalarField,
) -> Result<Vec<(f64, ScalarField)>> {
    let snaps = &traj.snapshots;
    if t_index >= snaps.len() {
        return Err(Error::Domain(format!(
            "terminal index {t_index} out of range ({} snapshots)",
            snaps.len()
        )));
    }
    let terminal = &snaps[t_index];
    if terminal.spec.lambda != 0 {
        return Err(Error::Unsupported(
            "conjugate heat requires the unnormalized flow (lambda = 0)".into(),
        ));
    }
    let mesh = terminal.mesh.clone();
    let n = mesh.vertex_count();
    if w_terminal.len() != n {
        return Err(Error::Domain("terminal density length does not match mesh".into()));
    }
    if w_terminal.values.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::Domain("terminal density must be strictly positive".into()));
    }
    let mass: f64 = (0..n)
        .map(|i| w_terminal.values[i] * mesh.vertex_areas[i] * terminal.u.values[i].exp())
        .sum();
    if (mass - 1.0).abs() > 1e-8 {
        return Err(Error::Domain(format!("terminal density not normalized: mass = {mass}")));
    }

    let mut m: Vec<f64> = (0..n)
        .map(|i| w_terminal.values[i] * mesh.vertex_areas[i] * terminal.u.values[i].exp())
        .collect();
    let mut out: Vec<(f64, ScalarField)> = vec![(terminal.t, w_terminal.clone())];

    // dm/ds with s running from t_b backward to t_a; u linear in t.
    let mut w_buf = ScalarField::zeros(n);
    let mut lap_buf = ScalarField::zeros(n);
    let mut deriv = |mv: &[f64], u_a: &ScalarField, u_b: &ScalarField, theta: f64, out_d: &mut [f64]| {
        for i in 0..n {
            let u = theta * u_b.values[i] + (1.0 - theta) * u_a.values[i];
            w_buf.values[i] = mv[i] / (mesh.vertex_areas[i] * u.exp());
        }
        mesh.laplacian_apply_into(&w_buf, &mut lap_buf);
        for i in 0..n {
            out_d[i] = lap_buf.values[i] * mesh.vertex_areas[i];
        }
    };

    for seg in (0..t_index).rev() {
        let (sa, sb) = (&snaps[seg], &snaps[seg + 1]);
        let len = sb.t - sa.t;
        if !(len > 0.0) {
            return Err(Error::Domain("snapshot times must be strictly increasing".into()));
        }
        let emin = sa.u.min().min(sb.u.min()).exp();
        let dt_stab = 0.4 * emin / mesh.gershgorin_lambda_max();
        let nsub = ((len / dt_stab).ceil() as usize).max(1);
        let h = len / nsub as f64;
        let mut k1 = vec![0.0; n];
        let mut k2 = vec![0.0; n];
        let mut k3 = vec![0.0; n];
        let mut k4 = vec![0.0; n];
        let mut tmp = vec![0.0; n];
        for sub in 0..nsub {
            // s measured from sb.t; theta is the interpolation weight toward sb
            let s0 = sub as f64 * h;
            let th = |s: f64| 1.0 - s / len;
            deriv(&m, &sa.u, &sb.u, th(s0), &mut k1);
            for i in 0..n {
                tmp[i] = m[i] + h / 2.0 * k1[i];
            }
            deriv(&tmp, &sa.u, &sb.u, th(s0 + h / 2.0), &mut k2);
            for i in 0..n {
                tmp[i] = m[i] + h / 2.0 * k2[i];
            }
            deriv(&tmp, &sa.u, &sb.u, th(s0 + h / 2.0), &mut k3);
            for i in 0..n {
                tmp[i] = m[i] + h * k3[i];
            }
            deriv(&tmp, &sa.u, &sb.u, th(s0 + h), &mut k4);
            for i in 0..n {
                m[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        let w = ScalarField {
            values: (0..n)
                .map(|i| m[i] / (mesh.vertex_areas[i] * sa.u.values[i].exp()))
                .collect(),
        };
        let w_scale = w.values.iter().fold(1.0f64, |acc, &v| acc.max(v.abs()));
        let min = w.min();
        if min < -1e-8 * w_scale.max(1.0) {
            return Err(Error::Numerical {
                t: sa.t,
                reason: format!("conjugate heat density went negative: {min}"),
            });
        }
        out.push((sa.t, w));
    }
    out.reverse();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::{BundleSpec, SymMat};
    use crate::mesh::{build_sphere_mesh, build_torus_mesh, MeshSurface};
    use std::sync::Arc;

    fn trivial_state(mesh: &Arc<MeshSurface>, lambda: i8, u: ScalarField) -> FlowState {
        let spec = BundleSpec::new(1, vec![0], SymMat::identity(1), lambda).unwrap();
        let f = TkField::zeros(1, mesh.vertex_count());
        FlowState::new(mesh.clone(), spec, u, f).unwrap()
    }

    #[test]
    fn rhs_homogeneous_balance_point() {
        let sphere = Arc::new(build_sphere_mesh(4).unwrap());
        let spec = BundleSpec::new(1, vec![1], SymMat::identity(1), 0).unwrap();
        let z = zeta(&spec, &sphere);
        let ustar = (z[0] * z[0]).ln();
        let st = FlowState::new(
            sphere.clone(),
            spec,
            ScalarField::constant(&sphere, ustar),
            TkField::zeros(1, sphere.vertex_count()),
        )
        .unwrap();
        let (du, df) = rhs(&st).unwrap();
        for v in &du.values {
            assert!(v.abs() <= 1e-12, "du/dt {v}");
        }
        // f drifts homogeneously at e^{-u} zeta, which is gauge content only
        let d0 = df.components[0].values[0];
        for v in &df.components[0].values {
            assert!((v - d0).abs() <= 1e-12);
        }
    }

    #[test]
    fn rhs_static_flat_torus() {
        let torus = Arc::new(build_torus_mesh(16).unwrap());
        let st = trivial_state(&torus, 0, ScalarField::zeros(torus.vertex_count()));
        let (du, df) = rhs(&st).unwrap();
        assert!(du.values.iter().all(|&v| v == 0.0));
        assert!(df.components[0].values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rhs_round_shrinking() {
        let sphere = Arc::new(build_sphere_mesh(3).unwrap());
        let c = 0.6;
        let st = trivial_state(&sphere, 0, ScalarField::constant(&sphere, c));
        let (du, _) = rhs(&st).unwrap();
        for v in &du.values {
            assert!((v + (-c).exp()).abs() <= 1e-14);
        }
    }

    #[test]
    fn rhs_rejects_non_finite() {
        let torus = Arc::new(build_torus_mesh(8).unwrap());
        let mut u = ScalarField::zeros(torus.vertex_count());
        u.values[3] = f64::NAN;
        let st = trivial_state(&torus, 0, u);
        assert!(rhs(&st).is_err());
    }

    #[test]
    fn stability_dt_formula_and_shift() {
        let torus = Arc::new(build_torus_mesh(64).unwrap());
        let ctl = StepControl::default();
        let st = trivial_state(&torus, 0, ScalarField::zeros(torus.vertex_count()));
        let dt0 = stability_dt(&st, &ctl);
        // 5-point stencil: Lambda_max = 8 / h^2 exactly
        let h = 2.0 * PI / 64.0;
        assert!((torus.gershgorin_lambda_max() - 8.0 / (h * h)).abs() < 1e-9);
        assert!((dt0 - 0.5 / torus.gershgorin_lambda_max()).abs() < 1e-18);

        let c = 1.3;
        let stc = trivial_state(&torus, 0, ScalarField::constant(&torus, c));
        let dtc = stability_dt(&stc, &ctl);
        assert!((dtc - (dt0 * c.exp()).min(ctl.dt_max)).abs() <= 1e-16 * dtc);

        // refining the mesh divides the step by about 4
        let torus2 = Arc::new(build_torus_mesh(128).unwrap());
        let st2 = trivial_state(&torus2, 0, ScalarField::zeros(torus2.vertex_count()));
        let ratio = stability_dt(&st, &ctl) / stability_dt(&st2, &ctl);
        assert!((ratio - 4.0).abs() < 0.05, "ratio {ratio}");
    }

    #[test]
    fn step_preserves_balance_point() {
        let sphere = Arc::new(build_sphere_mesh(3).unwrap());
        let spec = BundleSpec::new(1, vec![1], SymMat::identity(1), 0).unwrap();
        let z = zeta(&spec, &sphere);
        let ustar = (z[0] * z[0]).ln();
        let st = FlowState::new(
            sphere.clone(),
            spec,
            ScalarField::constant(&sphere, ustar),
            TkField::zeros(1, sphere.vertex_count()),
        )
        .unwrap();
        let next = step_rk(&st, 1e-3).unwrap();
        for (a, b) in next.u.values.iter().zip(&st.u.values) {
            assert!((a - b).abs() <= 1e-13);
        }
    }

    #[test]
    fn step_tracks_exact_collapse_solution() {
        // trivial bundle, homogeneous: (e^u)' = -R_Sigma exactly, e^u = 1 - t
        let sphere = Arc::new(build_sphere_mesh(3).unwrap());
        let mut st = trivial_state(&sphere, 0, ScalarField::zeros(sphere.vertex_count()));
        let dt = 1e-4;
        for _ in 0..1000 {
            st = step_rk(&st, dt).unwrap();
        }
        let expect = 0.9f64;
        for v in &st.u.values {
            assert!((v.exp() - expect).abs() <= 1e-9, "e^u {}", v.exp());
        }
    }

    #[test]
    fn forward_backward_step_is_high_order() {
        let torus = Arc::new(build_torus_mesh(16).unwrap());
        let u = ScalarField::from_positions(&torus, |p| 0.3 * p[0].cos() + 0.2 * p[1].sin());
        let spec = BundleSpec::new(1, vec![1], SymMat::identity(1), 1).unwrap();
        let f = TkField::zeros(1, torus.vertex_count());
        let st = FlowState::new(torus.clone(), spec, u, f).unwrap();
        let err_at = |dt: f64| -> f64 {
            let fwd = step_rk(&st, dt).unwrap();
            let back = step_rk(&fwd, -dt).unwrap();
            st.u
                .values
                .iter()
                .zip(&back.u.values)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max)
        };
        let e1 = err_at(2e-2);
        let e2 = err_at(1e-2);
        assert!(e1 <= 1e-7, "reverse error {e1}");
        // local error scales like dt^5
        let ratio = e1 / e2.max(1e-300);
        assert!(ratio > 16.0 || e2 < 1e-14, "order ratio {ratio}, e2 {e2}");
    }

    #[test]
    fn homogeneous_ode_is_fourth_order() {
        let spec = BundleSpec::trivial(1);
        let exact = |t: f64| (1.0f64 - t).ln();
        let err = |dt: f64| {
            let run = run_homogeneous(&spec, 1.0, 8.0 * PI, 0.0, 0.5, dt);
            (run.final_u() - exact(0.5)).abs()
        };
        let ratio = err(1e-2) / err(5e-3);
        assert!(ratio >= 14.0, "dt-halving error ratio {ratio}");
    }

    #[test]
    fn homogeneous_restoring_fixed_point() {
        let spec = BundleSpec::new(1, vec![1], SymMat::identity(1), 0).unwrap();
        let area = 8.0 * PI;
        for u0 in [-1.0, 0.0, 1.0] {
            let run = run_homogeneous(&spec, 1.0, area, u0, 50.0, 1e-3);
            assert!(run.singular_time.is_none());
            let target = 1.0 / 16.0;
            assert!(
                (run.final_u().exp() - target).abs() <= 1e-6,
                "u0 {u0}: e^u(50) = {}",
                run.final_u().exp()
            );
        }
    }

    #[test]
    fn homogeneous_linear_decay_flat_case() {
        let spec = BundleSpec::new(1, vec![0], SymMat::identity(1), 1).unwrap();
        let run = run_homogeneous(&spec, 0.0, 4.0 * PI * PI, 0.25, 10.0, 1e-3);
        for &(t, u) in &run.samples {
            assert!((u - (0.25 - t)).abs() <= 1e-10);
        }
    }

    #[test]
    fn homogeneous_trace_envelope_chi_neg() {
        // with R_Sigma = -1 and lambda = 1, e^{-u} - 1 contracts under e^{-t}
        let area = 4.0 * PI;
        for (c1, u0) in [(0i64, -1.0), (2, -1.0), (0, 0.5), (2, 0.5)] {
            let spec = BundleSpec::new(1, vec![c1], SymMat::identity(1), 1).unwrap();
            let run = run_homogeneous(&spec, -1.0, area, u0, 20.0, 1e-3);
            let v0 = (-u0 as f64).exp() - 1.0;
            for &(t, u) in &run.samples {
                let v = (-u).exp() - 1.0;
                assert!(v <= (-t).exp() * v0 + 1e-9, "c1 {c1} u0 {u0} t {t}");
            }
            assert!((run.final_u().exp() - 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn run_flow_exact_linear_decay() {
        let torus = Arc::new(build_torus_mesh(16).unwrap());
        let st = trivial_state(&torus, 1, ScalarField::zeros(torus.vertex_count()));
        let traj = run_flow(&st, &StepControl::default(), 10.0, 50).unwrap();
        assert!(matches!(traj.termination, Termination::ReachedTEnd));
        let last = traj.last_state();
        for v in &last.u.values {
            assert!((v + last.t).abs() <= 1e-8, "u {} at t {}", v, last.t);
        }
    }

    #[test]
    fn run_flow_collapse_terminates_with_singularity() {
        let sphere = Arc::new(build_sphere_mesh(3).unwrap());
        let st = trivial_state(&sphere, 0, ScalarField::zeros(sphere.vertex_count()));
        let traj = run_flow(&st, &StepControl::default(), 2.0, 32).unwrap();
        match traj.termination {
            Termination::Singularity { t } => {
                assert!((t - 1.0).abs() <= 1e-3, "collapse at {t}");
            }
            other => panic!("expected singularity, got {other:?}"),
        }
        let probe = crate::diagnostics::singularity_probe(&traj).unwrap();
        let slope_rel = ((probe.area_slope + 8.0 * PI) / (8.0 * PI)).abs();
        assert!(slope_rel <= 0.01, "area slope {}", probe.area_slope);
        assert!((probe.singular_time_estimate - 1.0).abs() <= 1e-3);
    }

    #[test]
    fn run_flow_global_existence_with_restoring_force() {
        let sphere = Arc::new(build_sphere_mesh(3).unwrap());
        let spec = BundleSpec::new(1, vec![1], SymMat::identity(1), 0).unwrap();
        let u = ScalarField::from_positions(&sphere, |p| 0.3 * p[2]);
        let st = FlowState::new(sphere.clone(), spec, u, TkField::zeros(1, sphere.vertex_count()))
            .unwrap();
        let traj = run_flow(&st, &StepControl::default(), 20.0, 400).unwrap();
        assert!(matches!(traj.termination, Termination::ReachedTEnd));
    }

    #[test]
    fn constant_fields_stay_constant() {
        let torus = Arc::new(build_torus_mesh(16).unwrap());
        let spec = BundleSpec::new(1, vec![1], SymMat::identity(1), 1).unwrap();
        let st = FlowState::new(
            torus.clone(),
            spec,
            ScalarField::constant(&torus, 0.2),
            TkField::constant(&torus, 1, -0.4),
        )
        .unwrap();
        let traj = run_flow(&st, &StepControl::default(), 2.0, 100).unwrap();
        for snap in &traj.snapshots {
            let du = snap.u.max() - snap.u.min();
            assert!(du <= 1e-12, "spread {du}");
            let f = &snap.f.components[0];
            assert!(f.max() - f.min() <= 1e-12);
        }
    }

    #[test]
    fn trajectory_times_strictly_increase() {
        let torus = Arc::new(build_torus_mesh(8).unwrap());
        let u = ScalarField::from_positions(&torus, |p| 0.1 * p[0].cos());
        let st = trivial_state(&torus, 0, u);
        let traj = run_flow(&st, &StepControl::default(), 0.05, 4).unwrap();
        for w in traj.records.windows(2) {
            assert!(w[1].t > w[0].t);
        }
        for w in traj.snapshots.windows(2) {
            assert!(w[1].t > w[0].t);
        }
    }

    #[test]
    fn conjugate_heat_uniform_density_is_stationary() {
        let torus = Arc::new(build_torus_mesh(16).unwrap());
        let st = trivial_state(&torus, 0, ScalarField::zeros(torus.vertex_count()));
        let traj = run_flow(&st, &StepControl::default(), 1.0, 10).unwrap();
        let t_index = traj.snapshots.len() - 1;
        let w = ScalarField::constant(&torus, 1.0 / torus.area);
        let sol = conjugate_heat_backward(&traj, t_index, &w).unwrap();
        for (_, wt) in &sol {
            for v in &wt.values {
                assert!((v - 1.0 / torus.area).abs() <= 1e-13);
            }
        }
    }

    #[test]
    fn conjugate_heat_conserves_mass() {
        let torus = Arc::new(build_torus_mesh(16).unwrap());
        let u = ScalarField::from_positions(&torus, |p| 0.2 * p[0].cos());
        let st = trivial_state(&torus, 0, u);
        let traj = run_flow(&st, &StepControl::default(), 1.0, 25).unwrap();
        let t_index = traj.snapshots.len() - 1;
        let term = &traj.snapshots[t_index];
        let raw = ScalarField::from_positions(&torus, |p| 1.0 + 0.4 * p[1].sin());
        let mass: f64 = (0..torus.vertex_count())
            .map(|i| raw.values[i] * torus.vertex_areas[i] * term.u.values[i].exp())
            .sum();
        let w = ScalarField { values: raw.values.iter().map(|v| v / mass).collect() };
        let sol = conjugate_heat_backward(&traj, t_index, &w).unwrap();
        for (idx, (t, wt)) in sol.iter().enumerate() {
            let snap = &traj.snapshots[idx];
            assert_eq!(*t, snap.t);
            let m: f64 = (0..torus.vertex_count())
                .map(|i| wt.values[i] * torus.vertex_areas[i] * snap.u.values[i].exp())
                .sum();
            assert!((m - 1.0).abs() <= 1e-8, "mass {m} at t {t}");
        }
    }

    #[test]
    fn conjugate_heat_single_mode_closed_form() {
        // static flat trajectory; the cos x mode of the terminal density
        // shrinks by e^{-(T-t)} going backward (discrete eigenvalue refines
        // this to 2(1 - cos h)/h^2)
        let torus = Arc::new(build_torus_mesh(64).unwrap());
        let st = trivial_state(&torus, 0, ScalarField::zeros(torus.vertex_count()));
        let traj = run_flow(&st, &StepControl::default(), 1.0, 10).unwrap();
        let t_index = traj.snapshots.len() - 1;
        let t_end = traj.snapshots[t_index].t;
        let area = torus.area;
        let w = ScalarField::from_positions(&torus, |p| (1.0 + 0.5 * p[0].cos()) / area);
        let sol = conjugate_heat_backward(&traj, t_index, &w).unwrap();
        let h = 2.0 * PI / 64.0;
        let mu_h = 2.0 * (1.0 - h.cos()) / (h * h);
        for (t, wt) in &sol {
            if t_end - t > 1.0 + 1e-9 {
                continue;
            }
            let s = t_end - t;
            for i in 0..torus.vertex_count() {
                let x = torus.vertices[i][0];
                let cont = (1.0 + 0.5 * (-s).exp() * x.cos()) / area;
                let disc = (1.0 + 0.5 * (-mu_h * s).exp() * x.cos()) / area;
                let rel_c = (wt.values[i] - cont).abs() / cont;
                let rel_d = (wt.values[i] - disc).abs() / disc;
                assert!(rel_c <= 1e-3, "continuum mode mismatch {rel_c} at s {s}");
                assert!(rel_d <= 1e-5, "discrete mode mismatch {rel_d} at s {s}");
            }
        }
    }

    #[test]
    fn conjugate_heat_rejects_bad_terminal_density() {
        let torus = Arc::new(build_torus_mesh(8).unwrap());
        let st = trivial_state(&torus, 0, ScalarField::zeros(torus.vertex_count()));
        let traj = run_flow(&st, &StepControl::default(), 0.1, 4).unwrap();
        let idx = traj.snapshots.len() - 1;
        let w = ScalarField::constant(&torus, 2.0 / torus.area);
        assert!(conjugate_heat_backward(&traj, idx, &w).is_err());
        let mut w = ScalarField::constant(&torus, 1.0 / torus.area);
        w.values[0] = -w.values[0];
        assert!(conjugate_heat_backward(&traj, idx, &w).is_err());
    }
}
