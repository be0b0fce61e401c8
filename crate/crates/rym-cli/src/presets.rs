//! Canned experiment configurations, one per convergence regime. `verify`
//! runs all four and checks the expected outcome of each.

use crate::config::*;

fn base(surface: SurfaceCfg, bundle: BundleCfg, dir: &str) -> RunConfig {
    RunConfig {
        surface,
        bundle,
        initial: InitialCfg::default(),
        control: ControlCfg::default(),
        outputs: OutputCfg { dir: dir.into(), snapshot_stride: None },
    }
}

/// Homogeneous background of curvature -1 with a nontrivial bundle: the
/// metric relaxes to the background under the normalized flow.
pub fn case1() -> RunConfig {
    let mut cfg = base(
        SurfaceCfg {
            kind: SurfaceKindCfg::Homogeneous,
            resolution: None,
            r_sigma: Some(-1.0),
            a_sigma: Some(4.0 * std::f64::consts::PI),
        },
        BundleCfg { k: 1, c1: vec![2], h0: None, lambda: 1 },
        "case1",
    );
    cfg.initial.u = FieldInit::Constant { value: -1.0 };
    cfg.control.t_end = 20.0;
    cfg.control.dt = Some(1e-3);
    cfg
}

/// Flat torus with the normalized flow: total space shrinks to a point.
pub fn case2() -> RunConfig {
    let mut cfg = base(
        SurfaceCfg { kind: SurfaceKindCfg::Torus, resolution: Some(64), r_sigma: None, a_sigma: None },
        BundleCfg { k: 1, c1: vec![0], h0: None, lambda: 1 },
        "case2",
    );
    cfg.initial.u = FieldInit::CosMode { amplitude: 0.5 };
    cfg.control.t_end = 10.0;
    cfg.control.cfl = 1.0;
    cfg.control.stride = 2000;
    cfg
}

/// Trivial bundle over the sphere: finite-time collapse at Area/(8 pi).
pub fn case3() -> RunConfig {
    let mut cfg = base(
        SurfaceCfg { kind: SurfaceKindCfg::Sphere, resolution: Some(4), r_sigma: None, a_sigma: None },
        BundleCfg { k: 1, c1: vec![0], h0: None, lambda: 0 },
        "case3",
    );
    cfg.initial.u = FieldInit::ZMode { amplitude: 0.2 };
    cfg.control.t_end = 2.0;
    cfg.control.cfl = 1.0;
    cfg.control.stride = 2000;
    cfg
}

/// Nontrivial bundle over the sphere: the curvature term acts as a restoring
/// force and the flow equilibrates instead of collapsing.
pub fn case4() -> RunConfig {
    let mut cfg = base(
        SurfaceCfg { kind: SurfaceKindCfg::Sphere, resolution: Some(4), r_sigma: None, a_sigma: None },
        BundleCfg { k: 1, c1: vec![1], h0: None, lambda: 0 },
        "case4",
    );
    cfg.initial.u = FieldInit::ZMode { amplitude: 0.3 };
    cfg.initial.f = FieldInit::ZMode { amplitude: 0.1 };
    cfg.control.t_end = 200.0;
    cfg.control.cfl = 1.0;
    cfg.control.stride = 20000;
    cfg.control.record_every = 8;
    cfg
}

pub fn by_name(name: &str) -> Option<RunConfig> {
    match name {
        "case1" => Some(case1()),
        "case2" => Some(case2()),
        "case3" => Some(case3()),
        "case4" => Some(case4()),
        _ => None,
    }
}
