//! Experiment orchestration: build the configured state, run the flow or the
//! homogeneous ODE, audit the case estimates, and serialize results.
//!
//! Exit codes: 0 completed with all gated audits passing; 2 singularity
//! reached (the expected outcome for the trivial-bundle sphere preset);
//! 3 audit violation or numerical failure; 4 configuration or I/O error.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rym_core::{
    audit_homogeneous, audit_trajectory, build_sphere_mesh, build_torus_mesh, chern_constancy,
    liouville_monotone, run_flow, run_homogeneous, volume_rate_consistency, AuditTolerance,
    BundleSpec, CaseId, CheckResult, FlowState, HomogeneousRun, MeshSurface, ScalarField,
    StepControl, Termination, TkField, Trajectory,
};

use crate::config::{FieldInit, RunConfig, SurfaceKindCfg};
use crate::output;

pub struct ExperimentOutcome {
    pub exit_code: i32,
    pub trajectory: Option<Trajectory>,
    pub homogeneous: Option<HomogeneousRun>,
    pub case: Option<CaseId>,
    pub verdicts: Vec<rym_core::CaseVerdict>,
    pub checks: Vec<CheckResult>,
    pub out_dir: PathBuf,
}

fn scalar_from_init(
    init: &FieldInit,
    mesh: &MeshSurface,
    column: usize,
) -> Result<ScalarField, String> {
    match init {
        FieldInit::Constant { value } => Ok(ScalarField::constant(mesh, *value)),
        FieldInit::CosMode { amplitude } => {
            let a = *amplitude;
            Ok(ScalarField::from_positions(mesh, move |p| a * p[0].cos()))
        }
        FieldInit::ZMode { amplitude } => {
            let a = *amplitude;
            Ok(ScalarField::from_positions(mesh, move |p| a * p[2]))
        }
        FieldInit::File { path } => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| format!("cannot read field file {path}: {e}"))?;
            let mut values = Vec::with_capacity(mesh.vertex_count());
            for (ln, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let cell = line
                    .split(',')
                    .nth(column)
                    .ok_or_else(|| format!("{path}:{}: missing column {column}", ln + 1))?;
                let v: f64 = cell
                    .trim()
                    .parse()
                    .map_err(|e| format!("{path}:{}: {e}", ln + 1))?;
                values.push(v);
            }
            if values.len() != mesh.vertex_count() {
                return Err(format!(
                    "{path}: {} rows for {} vertices",
                    values.len(),
                    mesh.vertex_count()
                ));
            }
            Ok(ScalarField { values })
        }
    }
}

fn out_root(cfg: &RunConfig) -> PathBuf {
    let base = std::env::var_os("RYM_OUT_DIR").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."));
    base.join(&cfg.outputs.dir)
}

/// Infers the convergence regime the run exercises, when one applies.
fn infer_case(cfg: &RunConfig, spec: &BundleSpec) -> Option<CaseId> {
    match cfg.surface.kind {
        SurfaceKindCfg::Homogeneous => {
            let r = cfg.surface.r_sigma.unwrap_or(0.0);
            if r < 0.0 && spec.lambda == 1 {
                Some(CaseId::ChiNeg)
            } else {
                None
            }
        }
        SurfaceKindCfg::Torus => (spec.lambda == 1).then_some(CaseId::ChiZero),
        SurfaceKindCfg::Sphere => {
            if spec.lambda != 0 {
                None
            } else if spec.is_trivial() {
                Some(CaseId::ChiPosTrivial)
            } else {
                Some(CaseId::ChiPosNontrivial)
            }
        }
    }
}

pub fn execute(cfg: &RunConfig) -> Result<ExperimentOutcome, String> {
    crate::config::validate(cfg).map_err(|e| e.to_string())?;
    let spec = crate::config::bundle_spec(&cfg.bundle).map_err(|e| e.to_string())?;
    let out_dir = out_root(cfg);
    std::fs::create_dir_all(&out_dir).map_err(|e| format!("cannot create {out_dir:?}: {e}"))?;

    if cfg.surface.kind == SurfaceKindCfg::Homogeneous {
        return execute_homogeneous(cfg, spec, out_dir);
    }

    let mesh: Arc<MeshSurface> = Arc::new(
        match cfg.surface.kind {
            SurfaceKindCfg::Torus => build_torus_mesh(cfg.surface.resolution.unwrap()),
            SurfaceKindCfg::Sphere => build_sphere_mesh(cfg.surface.resolution.unwrap()),
            SurfaceKindCfg::Homogeneous => unreachable!(),
        }
        .map_err(|e| e.to_string())?,
    );

    let u = scalar_from_init(&cfg.initial.u, &mesh, 0).map_err(|e| e.to_string())?;
    let mut comps = Vec::with_capacity(spec.k);
    for c in 0..spec.k {
        comps.push(scalar_from_init(&cfg.initial.f, &mesh, c).map_err(|e| e.to_string())?);
    }
    let state =
        FlowState::new(mesh.clone(), spec, u, TkField { components: comps }).map_err(|e| e.to_string())?;

    let ctl = StepControl {
        cfl_factor: cfg.control.cfl,
        dt_max: cfg.control.dt_max,
        dt_min: cfg.control.dt_min,
        u_max: cfg.control.u_max,
        record_every: cfg.control.record_every,
        ..Default::default()
    };
    let traj =
        run_flow(&state, &ctl, cfg.control.t_end, cfg.control.stride).map_err(|e| e.to_string())?;

    let case = infer_case(cfg, &state.spec);
    let mut verdicts = Vec::new();
    if let Some(case) = case {
        match audit_trajectory(&traj, case, AuditTolerance::pde()) {
            Ok(v) => verdicts.push(v),
            Err(e) => return Err(e.to_string()),
        }
    }
    let mut checks = vec![chern_constancy(&traj.records, &state.spec.c1)];
    if matches!(state.spec.lambda, 0 | 1) {
        checks.push(liouville_monotone(&traj.records));
    }
    checks.push(volume_rate_consistency(&traj.records));

    let audits_pass =
        verdicts.iter().all(|v| v.pass) && checks.iter().filter(|c| c.gating).all(|c| c.pass);
    let (termination, singular_time) = match traj.termination {
        Termination::ReachedTEnd => ("reached_t_end", None),
        Termination::Singularity { t } => ("singularity", Some(t)),
        Termination::NumericalFailure { t } => ("numerical_failure", Some(t)),
    };
    let exit_code = if !audits_pass {
        3
    } else {
        match traj.termination {
            Termination::ReachedTEnd => 0,
            Termination::Singularity { .. } => 2,
            Termination::NumericalFailure { .. } => 3,
        }
    };

    write_outputs(cfg, &out_dir, Some(&traj), None, termination, singular_time, exit_code, &verdicts, &checks)?;
    Ok(ExperimentOutcome {
        exit_code,
        trajectory: Some(traj),
        homogeneous: None,
        case,
        verdicts,
        checks,
        out_dir,
    })
}

fn execute_homogeneous(
    cfg: &RunConfig,
    spec: BundleSpec,
    out_dir: PathBuf,
) -> Result<ExperimentOutcome, String> {
    let r_sigma = cfg.surface.r_sigma.unwrap();
    let area = cfg.surface.a_sigma.unwrap();
    let u0 = match cfg.initial.u {
        FieldInit::Constant { value } => value,
        _ => unreachable!("validated"),
    };
    let dt = cfg.control.dt.unwrap_or(1e-3);
    let run = run_homogeneous(&spec, r_sigma, area, u0, cfg.control.t_end, dt);

    let case = infer_case(cfg, &spec);
    let mut verdicts = Vec::new();
    if let Some(case) = case {
        verdicts.push(audit_homogeneous(&run, case, AuditTolerance::ode()).map_err(|e| e.to_string())?);
    }
    let audits_pass = verdicts.iter().all(|v| v.pass);
    let (termination, singular_time, exit_code) = match run.singular_time {
        Some(t) => ("singularity", Some(t), if audits_pass { 2 } else { 3 }),
        None => ("reached_t_end", None, if audits_pass { 0 } else { 3 }),
    };

    write_outputs(cfg, &out_dir, None, Some(&run), termination, singular_time, exit_code, &verdicts, &[])?;
    Ok(ExperimentOutcome {
        exit_code,
        trajectory: None,
        homogeneous: Some(run),
        case,
        verdicts,
        checks: Vec::new(),
        out_dir,
    })
}

#[allow(clippy::too_many_arguments)]
fn write_outputs(
    cfg: &RunConfig,
    out_dir: &Path,
    traj: Option<&Trajectory>,
    homog: Option<&HomogeneousRun>,
    termination: &str,
    singular_time: Option<f64>,
    exit_code: i32,
    verdicts: &[rym_core::CaseVerdict],
    checks: &[CheckResult],
) -> Result<(), String> {
    let io = |e: std::io::Error| format!("output error in {out_dir:?}: {e}");

    let records;
    let (recs, steps, mesh_hash) = match (traj, homog) {
        (Some(t), _) => (&t.records, t.steps, Some(output::mesh_hash(&t.initial().mesh))),
        (None, Some(h)) => {
            records = h.records();
            (&records, h.samples.len(), None)
        }
        _ => unreachable!(),
    };
    output::write_timeseries(&out_dir.join("timeseries.csv"), recs).map_err(io)?;

    if let Some(t) = traj {
        output::write_snapshot(&out_dir.join("snapshot_final.csv"), t.last_state()).map_err(io)?;
        if let Some(every) = cfg.outputs.snapshot_stride {
            for (i, snap) in t.snapshots.iter().enumerate().step_by(every.max(1)) {
                output::write_snapshot(&out_dir.join(format!("snapshot_{i:06}.csv")), snap)
                    .map_err(io)?;
            }
        }
    }

    let meta = output::MetaRecord {
        config: cfg,
        mesh_hash,
        termination: termination.to_string(),
        singular_time,
        steps,
        verdicts: verdicts.iter().map(output::verdict_json).collect(),
        checks: checks
            .iter()
            .map(|c| {
                serde_json::json!({
                    "name": c.name, "margin": c.margin, "pass": c.pass, "gating": c.gating,
                })
            })
            .collect(),
        exit_code,
    };
    output::write_meta(&out_dir.join("meta.json"), &meta).map_err(io)?;
    Ok(())
}

/// `run` subcommand: parse, execute, report.
pub fn run_command(config_path: &str) -> i32 {
    let text = match std::fs::read_to_string(config_path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("cannot read {config_path}: {e}");
            return 4;
        }
    };
    let cfg = match crate::config::parse_config(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return 4;
        }
    };
    match execute(&cfg) {
        Ok(outcome) => {
            println!(
                "run finished: exit {} (outputs in {})",
                outcome.exit_code,
                outcome.out_dir.display()
            );
            outcome.exit_code
        }
        Err(e) => {
            eprintln!("{e}");
            4
        }
    }
}

/// `sweep` subcommand: run every *.json in a directory concurrently.
pub fn sweep_command(dir: &str) -> i32 {
    let entries = match std::fs::read_dir(dir) {
        Ok(e) => e,
        Err(e) => {
            eprintln!("cannot read sweep directory {dir}: {e}");
            return 4;
        }
    };
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().map(|x| x == "json").unwrap_or(false))
        .collect();
    paths.sort();
    if paths.is_empty() {
        eprintln!("no *.json configs in {dir}");
        return 4;
    }

    let workers = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let queue = std::sync::Mutex::new(paths.into_iter());
    let worst = std::sync::atomic::AtomicI32::new(0);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let path = match queue.lock().unwrap().next() {
                    Some(p) => p,
                    None => break,
                };
                let code = run_command(path.to_str().unwrap_or_default());
                println!("{}: exit {code}", path.display());
                worst.fetch_max(code, std::sync::atomic::Ordering::SeqCst);
            });
        }
    });
    worst.load(std::sync::atomic::Ordering::SeqCst)
}

/// `verify` subcommand: run the four presets and check each regime's
/// expected outcome.
pub fn verify_command() -> i32 {
    let mut all_pass = true;
    let mut report = |name: &str, pass: bool, detail: String| {
        println!("{name}: {} ({detail})", if pass { "PASS" } else { "FAIL" });
        all_pass &= pass;
    };

    // negative-curvature background relaxes to the background metric
    match execute(&crate::presets::case1()) {
        Ok(o) => {
            let run = o.homogeneous.as_ref().unwrap();
            let eu = run.final_u().exp();
            let pass = o.exit_code == 0 && (eu - 1.0).abs() <= 1e-6;
            report("case1", pass, format!("exit {}, e^u(20) = {eu:.8}", o.exit_code));
        }
        Err(e) => report("case1", false, e),
    }

    // flat torus under the normalized flow: bound satisfied, sizes collapse
    match execute(&crate::presets::case2()) {
        Ok(o) => {
            let pass = o.exit_code == 0;
            report("case2", pass, format!("exit {}", o.exit_code));
        }
        Err(e) => report("case2", false, e),
    }

    // trivial sphere bundle collapses at Area/(8 pi)
    match execute(&crate::presets::case3()) {
        Ok(o) => {
            let traj = o.trajectory.as_ref().unwrap();
            let area0 = traj.records[0].volume;
            let predicted = area0 / (8.0 * std::f64::consts::PI);
            let t_sing = match traj.termination {
                Termination::Singularity { t } => t,
                _ => f64::NAN,
            };
            let pass = o.exit_code == 2 && ((t_sing - predicted) / predicted).abs() <= 0.03;
            report(
                "case3",
                pass,
                format!("exit {}, singular at {t_sing:.4} vs {predicted:.4}", o.exit_code),
            );
        }
        Err(e) => report("case3", false, e),
    }

    // nontrivial sphere bundle equilibrates near e^u = |zeta|^2
    match execute(&crate::presets::case4()) {
        Ok(o) => {
            let traj = o.trajectory.as_ref().unwrap();
            let vol = traj.records.last().unwrap().volume;
            let lambda1 = vol / traj.last_state().mesh.area;
            let pass = o.exit_code == 0 && (lambda1 - 1.0 / 16.0).abs() <= 0.02 / 16.0;
            report("case4", pass, format!("exit {}, lambda1 = {lambda1:.6}", o.exit_code));
        }
        Err(e) => report("case4", false, e),
    }

    if all_pass {
        0
    } else {
        3
    }
}
