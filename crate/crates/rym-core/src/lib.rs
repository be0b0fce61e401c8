//! Ricci-Yang-Mills flow on principal T^k bundles over compact surfaces.
//!
//! On a surface the flow reduces to a scalar system for a conformal factor
//! `u` (the base metric is `e^u g_Sigma`) and a t^k-valued potential `f`
//! (the connection is `mu = mu_bar + d^c f`). This crate provides:
//!
//! * triangulated constant-curvature backgrounds (flat torus, round sphere)
//!   with cotangent Laplacians, gradients, integration and geodesic
//!   distances ([`mesh`]),
//! * the bundle data and reduced curvature quantities ([`bundle`]),
//! * an explicit RK4 time stepper for the reduced system, a spatially
//!   homogeneous ODE mode, and a backward conjugate heat solver ([`flow`]),
//! * the Liouville energy, shrinker entropy and companion functionals with
//!   their exact dissipation/variation identities ([`functionals`]),
//! * auditors that check the maximum-principle estimates and convergence
//!   regimes against running trajectories ([`diagnostics`]).

pub mod bundle;
pub mod diagnostics;
mod error;
pub mod field;
pub mod flow;
pub mod functionals;
pub mod mesh;
pub mod rng;

pub use bundle::{curvature_density, f_norm_sq, fiber_metric_at, zeta, BundleSpec, CurvatureDensity, FlowState, SymMat};
pub use diagnostics::{
    audit_homogeneous, audit_records, audit_trajectory, center_of_mass, chern_constancy,
    convergence_probe, convergence_probe_homogeneous, liouville_monotone, singularity_probe,
    volume_rate_consistency, AuditTolerance, CaseId, CaseVerdict, CheckResult, ConvergenceReport,
    DiagnosticsRecord, SingularityReport,
};
pub use error::{Error, Result};
pub use field::{ScalarField, TkField};
pub use flow::{
    conjugate_heat_backward, rhs, run_flow, run_homogeneous, stability_dt, step_rk,
    HomogeneousRun, StepControl, Termination, Trajectory,
};
pub use functionals::{
    calabi_energy, entropy_variation, entropy_w, liouville_dissipation, liouville_energy,
    modified_entropy, total_space_invariants, volume, volume_rate, EnergyReport, EntropyInput,
    TotalSpaceInvariants, Variation,
};
pub use mesh::{build_sphere_mesh, build_torus_mesh, MeshSurface, SurfaceKind};
