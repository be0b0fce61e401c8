//! Trajectory and verdict serialization: CSV timeseries/snapshots plus a
//! meta.json provenance record. Floats carry 17 significant digits so the
//! files round-trip 64-bit values exactly; identical configs produce
//! byte-identical outputs.

use std::fs;
use std::io::Write;
use std::path::Path;

use rym_core::{CaseVerdict, CheckResult, DiagnosticsRecord, FlowState, MeshSurface};

use crate::config::RunConfig;

pub const TIMESERIES_HEADER: &str =
    "t,sup_u,inf_u,volume,F_liouville,F_energy,calabi,sup_grad_f_sq,diameter,com_x,com_y,com_z";

/// 17 significant digits: exact round-trip for f64.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt17).unwrap_or_default()
}

pub fn write_timeseries(path: &Path, records: &[DiagnosticsRecord]) -> std::io::Result<()> {
    let mut out = String::with_capacity(records.len() * 220 + 64);
    out.push_str(TIMESERIES_HEADER);
    out.push('\n');
    for r in records {
        let com = r.center_of_mass;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            fmt17(r.t),
            fmt17(r.sup_u),
            fmt17(r.inf_u),
            fmt17(r.volume),
            fmt17(r.f_liouville),
            fmt17(r.f_energy),
            fmt17(r.calabi),
            fmt17(r.sup_grad_f_sq),
            fmt_opt(r.diameter),
            fmt_opt(com.map(|c| c[0])),
            fmt_opt(com.map(|c| c[1])),
            fmt_opt(com.map(|c| c[2])),
        ));
    }
    fs::write(path, out)
}

pub fn write_snapshot(path: &Path, state: &FlowState) -> std::io::Result<()> {
    let k = state.spec.k;
    let mut header = String::from("vertex,x,y,z,u");
    for c in 1..=k {
        header.push_str(&format!(",f_{c}"));
    }
    let mut out = String::with_capacity(state.mesh.vertex_count() * 100 + 64);
    out.push_str(&header);
    out.push('\n');
    for i in 0..state.mesh.vertex_count() {
        let p = state.mesh.vertices[i];
        out.push_str(&format!(
            "{i},{},{},{},{}",
            fmt17(p[0]),
            fmt17(p[1]),
            fmt17(p[2]),
            fmt17(state.u.values[i])
        ));
        for c in 0..k {
            out.push(',');
            out.push_str(&fmt17(state.f.components[c].values[i]));
        }
        out.push('\n');
    }
    fs::write(path, out)
}

/// FNV-1a over the mesh connectivity and vertex coordinates; stable across
/// runs and platforms for identical builds.
pub fn mesh_hash(mesh: &MeshSurface) -> String {
    let mut h: u64 = 0xcbf29ce484222325;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    };
    for v in &mesh.vertices {
        for d in 0..3 {
            eat(&v[d].to_le_bits());
        }
    }
    for t in &mesh.triangles {
        for &i in t {
            eat(&(i as u64).to_le_bytes());
        }
    }
    format!("{h:016x}")
}

fn check_json(c: &CheckResult) -> serde_json::Value {
    serde_json::json!({
        "name": c.name,
        "margin": c.margin,
        "pass": c.pass,
        "gating": c.gating,
    })
}

pub fn verdict_json(v: &CaseVerdict) -> serde_json::Value {
    serde_json::json!({
        "case": v.case.to_string(),
        "pass": v.pass,
        "tolerance": {"abs": v.tol.abs, "rel": v.tol.rel, "per_step": v.tol.per_step},
        "checks": v.checks.iter().map(check_json).collect::<Vec<_>>(),
    })
}

pub struct MetaRecord<'a> {
    pub config: &'a RunConfig,
    pub mesh_hash: Option<String>,
    pub termination: String,
    pub singular_time: Option<f64>,
    pub steps: usize,
    pub verdicts: Vec<serde_json::Value>,
    pub checks: Vec<serde_json::Value>,
    pub exit_code: i32,
}

pub fn write_meta(path: &Path, meta: &MetaRecord) -> std::io::Result<()> {
    let value = serde_json::json!({
        "config": meta.config,
        "mesh_hash": meta.mesh_hash,
        "termination": meta.termination,
        "singular_time": meta.singular_time,
        "steps": meta.steps,
        "verdicts": meta.verdicts,
        "checks": meta.checks,
        "exit_code": meta.exit_code,
    });
    let mut f = fs::File::create(path)?;
    writeln!(f, "{}", serde_json::to_string_pretty(&value)?)?;
    Ok(())
}

trait ToLeBits {
    fn to_le_bits(&self) -> [u8; 8];
}

impl ToLeBits for f64 {
    fn to_le_bits(&self) -> [u8; 8] {
        self.to_bits().to_le_bytes()
    }
}
