//! Experiment configuration: a fail-closed JSON schema with every default
//! made explicit in the echoed provenance record.

use serde::{Deserialize, Serialize};

use rym_core::{BundleSpec, SymMat};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub surface: SurfaceCfg,
    pub bundle: BundleCfg,
    #[serde(default)]
    pub initial: InitialCfg,
    #[serde(default)]
    pub control: ControlCfg,
    #[serde(default)]
    pub outputs: OutputCfg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurfaceKindCfg {
    Torus,
    Sphere,
    Homogeneous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfaceCfg {
    pub kind: SurfaceKindCfg,
    /// Grid resolution (torus) or subdivision level (sphere).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution: Option<usize>,
    /// Homogeneous mode only: background curvature in {-1, 0, 1}.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_sigma: Option<f64>,
    /// Homogeneous mode only: background area.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a_sigma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleCfg {
    pub k: usize,
    pub c1: Vec<i64>,
    /// Row-major k x k fiber inner product; identity when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h0: Option<Vec<f64>>,
    pub lambda: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldInit {
    /// Constant field.
    Constant {
        #[serde(default)]
        value: f64,
    },
    /// amplitude * cos(x) (torus).
    CosMode { amplitude: f64 },
    /// amplitude * z (sphere).
    ZMode { amplitude: f64 },
    /// Per-vertex values, one row per vertex, comma-separated components.
    File { path: String },
}

impl Default for FieldInit {
    fn default() -> Self {
        FieldInit::Constant { value: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct InitialCfg {
    #[serde(default)]
    pub u: FieldInit,
    #[serde(default)]
    pub f: FieldInit,
}

fn d_cfl() -> f64 {
    0.5
}
fn d_dt_max() -> f64 {
    1e-2
}
fn d_dt_min() -> f64 {
    1e-12
}
fn d_u_max() -> f64 {
    20.0
}
fn d_t_end() -> f64 {
    1.0
}
fn d_stride() -> usize {
    10
}
fn d_record_every() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlCfg {
    #[serde(default = "d_cfl")]
    pub cfl: f64,
    #[serde(default = "d_dt_max")]
    pub dt_max: f64,
    #[serde(default = "d_dt_min")]
    pub dt_min: f64,
    #[serde(default = "d_u_max")]
    pub u_max: f64,
    #[serde(default = "d_t_end")]
    pub t_end: f64,
    #[serde(default = "d_stride")]
    pub stride: usize,
    #[serde(default)]
    pub seed: u64,
    /// Homogeneous-mode ODE step; default 1e-3.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default = "d_record_every")]
    pub record_every: usize,
}

impl Default for ControlCfg {
    fn default() -> Self {
        ControlCfg {
            cfl: d_cfl(),
            dt_max: d_dt_max(),
            dt_min: d_dt_min(),
            u_max: d_u_max(),
            t_end: d_t_end(),
            stride: d_stride(),
            seed: 0,
            dt: None,
            record_every: d_record_every(),
        }
    }
}

fn d_dir() -> String {
    "out".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputCfg {
    #[serde(default = "d_dir")]
    pub dir: String,
    /// Write every n-th stored snapshot as a CSV; only the final one when
    /// omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot_stride: Option<usize>,
}

impl Default for OutputCfg {
    fn default() -> Self {
        OutputCfg { dir: d_dir(), snapshot_stride: None }
    }
}

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

/// Parses and validates a config. Unknown keys are rejected with the parser's
/// line/column diagnostics; semantic violations name the offending key.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let cfg: RunConfig = serde_json::from_str(text)
        .map_err(|e| ConfigError(format!("{e} (line {}, column {})", e.line(), e.column())))?;
    validate(&cfg)?;
    Ok(cfg)
}

pub fn validate(cfg: &RunConfig) -> Result<(), ConfigError> {
    match cfg.surface.kind {
        SurfaceKindCfg::Torus => {
            let n = cfg
                .surface
                .resolution
                .ok_or_else(|| ConfigError("surface.resolution is required for the torus".into()))?;
            if n < 8 || n % 2 != 0 {
                return Err(ConfigError(format!(
                    "surface.resolution must be even and at least 8, got {n}"
                )));
            }
            if cfg.surface.r_sigma.is_some() || cfg.surface.a_sigma.is_some() {
                return Err(ConfigError(
                    "surface.r_sigma / surface.a_sigma apply only to the homogeneous mode".into(),
                ));
            }
        }
        SurfaceKindCfg::Sphere => {
            let s = cfg.surface.resolution.ok_or_else(|| {
                ConfigError("surface.resolution (subdivision level) is required for the sphere".into())
            })?;
            if s < 3 {
                return Err(ConfigError(format!(
                    "surface.resolution must be at least 3 for the sphere, got {s}"
                )));
            }
            if cfg.surface.r_sigma.is_some() || cfg.surface.a_sigma.is_some() {
                return Err(ConfigError(
                    "surface.r_sigma / surface.a_sigma apply only to the homogeneous mode".into(),
                ));
            }
        }
        SurfaceKindCfg::Homogeneous => {
            let r = cfg
                .surface
                .r_sigma
                .ok_or_else(|| ConfigError("surface.r_sigma is required in homogeneous mode".into()))?;
            if ![-1.0, 0.0, 1.0].contains(&r) {
                return Err(ConfigError(format!("surface.r_sigma must be -1, 0 or 1, got {r}")));
            }
            let a = cfg
                .surface
                .a_sigma
                .ok_or_else(|| ConfigError("surface.a_sigma is required in homogeneous mode".into()))?;
            if !(a > 0.0) {
                return Err(ConfigError(format!("surface.a_sigma must be positive, got {a}")));
            }
            if !matches!(cfg.initial.u, FieldInit::Constant { .. }) {
                return Err(ConfigError("homogeneous mode supports only constant initial u".into()));
            }
        }
    }

    if !matches!(cfg.bundle.lambda, -1 | 0 | 1) {
        return Err(ConfigError(format!(
            "bundle.lambda must lie in {{-1, 0, 1}}, got {}",
            cfg.bundle.lambda
        )));
    }
    // SPD and shape checks (with eigenvalue report) via the core constructor
    bundle_spec(&cfg.bundle).map_err(|e| ConfigError(e.to_string()))?;

    match (&cfg.initial.u, cfg.surface.kind) {
        (FieldInit::CosMode { .. }, SurfaceKindCfg::Sphere) => {
            return Err(ConfigError("initial.u cos_mode applies to the torus".into()))
        }
        (FieldInit::ZMode { .. }, SurfaceKindCfg::Torus) => {
            return Err(ConfigError("initial.u z_mode applies to the sphere".into()))
        }
        _ => {}
    }
    match (&cfg.initial.f, cfg.surface.kind) {
        (FieldInit::CosMode { .. }, SurfaceKindCfg::Sphere) => {
            return Err(ConfigError("initial.f cos_mode applies to the torus".into()))
        }
        (FieldInit::ZMode { .. }, SurfaceKindCfg::Torus) => {
            return Err(ConfigError("initial.f z_mode applies to the sphere".into()))
        }
        _ => {}
    }

    if !(cfg.control.cfl > 0.0 && cfg.control.cfl <= 1.0) {
        return Err(ConfigError(format!("control.cfl must lie in (0, 1], got {}", cfg.control.cfl)));
    }
    if !(cfg.control.t_end > 0.0) {
        return Err(ConfigError(format!("control.t_end must be positive, got {}", cfg.control.t_end)));
    }
    if cfg.control.stride == 0 || cfg.control.record_every == 0 {
        return Err(ConfigError("control.stride and control.record_every must be positive".into()));
    }
    if let Some(dt) = cfg.control.dt {
        if !(dt > 0.0) {
            return Err(ConfigError(format!("control.dt must be positive, got {dt}")));
        }
    }
    Ok(())
}

pub fn bundle_spec(b: &BundleCfg) -> rym_core::Result<BundleSpec> {
    let h0 = match &b.h0 {
        Some(vals) => SymMat::from_row_major(b.k, vals)?,
        None => SymMat::identity(b.k),
    };
    BundleSpec::new(b.k, b.c1.clone(), h0, b.lambda as i8)
}
