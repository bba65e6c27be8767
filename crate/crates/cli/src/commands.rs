//! Subcommand implementations. Each returns an exit code and a JSON report.

use crate::config::RunConfig;
use crate::output::{write_json, write_snapshot, TraceWriter};
use junctionflow::checks::linearization_check;
use junctionflow::eigen::solve_eigen;
use junctionflow::flow::{ContinuationStatus, Flow};
use junctionflow::shape::{check_compatibility, HeightState};
use junctionflow::symbol::check_grid;
use junctionflow::{FlowError, ReferenceCluster};
use serde_json::{json, Value};
use std::path::Path;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_STOPPED: i32 = 3;
pub const EXIT_SOLVER: i32 = 4;

/// Largest compatibility residual treated as satisfied.
const COMPAT_TOL: f64 = 1e-9;

pub struct Outcome {
    pub code: i32,
    pub report: Value,
}

pub fn error_kind(e: &FlowError) -> &'static str {
    match e {
        FlowError::DegenerateTensions(_) => "DegenerateTensions",
        FlowError::InvalidWeights(_) => "InvalidWeights",
        FlowError::OrientationFailure(_) => "OrientationFailure",
        FlowError::BadMesh(_) => "BadMesh",
        FlowError::SupportOverlap { .. } => "SupportOverlap",
        FlowError::FoldOver(_) => "FoldOver",
        FlowError::SingularCoupling(_) => "SingularCoupling",
        FlowError::ShapeMismatch(_) => "ShapeMismatch",
        FlowError::SingularSystem(_) => "SingularSystem",
        FlowError::PicardDiverged(_) => "PicardDiverged",
        FlowError::DomainError(_) => "DomainError",
        FlowError::Violation(_) => "Violation",
        FlowError::Unsupported(_) => "Unsupported",
        FlowError::Io(_) => "Io",
    }
}

pub fn failure(kind: &str, message: impl std::fmt::Display) -> Value {
    json!({ "kind": kind, "message": message.to_string() })
}

fn flow_failure(e: &FlowError) -> Value {
    failure(error_kind(e), e)
}

pub fn invalid(failures: Vec<Value>) -> Outcome {
    Outcome {
        code: EXIT_INVALID,
        report: json!({ "status": "fail", "failures": failures }),
    }
}

fn io_failure(e: std::io::Error) -> Outcome {
    Outcome {
        code: EXIT_SOLVER,
        report: json!({ "status": "fail", "failures": [failure("Io", e)] }),
    }
}

fn cluster_or_fail(cfg: &RunConfig) -> Result<ReferenceCluster, Outcome> {
    cfg.cluster().map_err(|e| invalid(vec![flow_failure(&e)]))
}

pub struct Validated {
    pub outcome: Outcome,
    pub warned: bool,
    pub setup: Option<(ReferenceCluster, HeightState)>,
}

/// Checks weights, reference geometry and the initial data. Incompatible
/// initial data is a warning; everything else that fails is an error.
pub fn validate(cfg: &RunConfig) -> Validated {
    let mut failures = Vec::new();
    let mut warnings = Vec::new();
    let mut report = serde_json::Map::new();

    let fail = |failures: Vec<Value>, report: serde_json::Map<String, Value>| {
        let mut report = report;
        report.insert("status".into(), json!("fail"));
        report.insert("failures".into(), Value::Array(failures));
        Validated {
            outcome: Outcome {
                code: EXIT_INVALID,
                report: Value::Object(report),
            },
            warned: false,
            setup: None,
        }
    };

    let weights = match cfg.angle_weights() {
        Ok(w) => w,
        Err(e) => return fail(vec![flow_failure(&e)], report),
    };
    report.insert(
        "weights".into(),
        json!({ "gamma": weights.gamma, "theta": weights.theta, "beta": weights.beta }),
    );
    let cl = match cfg.cluster() {
        Ok(c) => c,
        Err(e) => return fail(vec![flow_failure(&e)], report),
    };
    let inv = cl.invariants();
    if !inv.passes() {
        failures.push(failure("Invariants", "reference invariants exceed their tolerances"));
    }
    report.insert("invariants".into(), json!(inv));
    report.insert(
        "mesh".into(),
        json!({ "charts": cl.charts.len(), "nodes": cl.node_count(), "min_spacing": cl.min_spacing(), "r0": cl.r0 }),
    );

    let state = match cfg.initial_state(&cl) {
        Ok(s) => s,
        Err(e) => {
            failures.push(flow_failure(&e));
            return fail(failures, report);
        }
    };
    let attach = state.attachment_defect(&cl);
    report.insert("attachment_defect".into(), json!(attach));
    if attach > 1e-12 * cl.charts.len() as f64 {
        failures.push(failure("Attachment", format!("attachment defect {attach:e}")));
    }

    match check_compatibility(&cl, &state) {
        Ok(comp) => {
            let h = cl.min_spacing();
            let bound = 1e-6 + 10.0 * h * h;
            let compatible = comp.angle <= COMPAT_TOL && comp.sum_gamma_k <= COMPAT_TOL;
            if !compatible {
                warnings.push(failure(
                    "IncompatibleInitialData",
                    format!("angle residual {:e}, weighted curvature sum {:e}", comp.angle, comp.sum_gamma_k),
                ));
            } else if comp.sum_gamma_beta_h > bound {
                failures.push(failure(
                    "WeightedVelocity",
                    format!("weighted velocity sum {:e} exceeds {bound:e}", comp.sum_gamma_beta_h),
                ));
            }
            report.insert("compatibility".into(), json!(comp));
            report.insert(
                "weighted_velocity_check".into(),
                json!({ "applies": compatible, "sum_gamma_beta_h": comp.sum_gamma_beta_h, "bound": bound }),
            );
        }
        Err(e) => failures.push(flow_failure(&e)),
    }

    if !failures.is_empty() {
        return fail(failures, report);
    }
    let warned = !warnings.is_empty();
    report.insert("status".into(), json!(if warned { "warn" } else { "pass" }));
    report.insert("failures".into(), json!([]));
    report.insert("warnings".into(), Value::Array(warnings));
    Validated {
        outcome: Outcome {
            code: EXIT_OK,
            report: Value::Object(report),
        },
        warned,
        setup: Some((cl, state)),
    }
}

fn status_code(status: ContinuationStatus) -> i32 {
    match status {
        ContinuationStatus::Running => EXIT_OK,
        ContinuationStatus::PicardDiverged => EXIT_SOLVER,
        _ => EXIT_STOPPED,
    }
}

fn dt_rule(cfg: &RunConfig) -> String {
    match cfg.flow.dt {
        Some(dt) => format!("fixed dt = {dt:e}"),
        None => format!(
            "dt = {} * h^2 / max(beta), h the smallest node spacing of the current reference",
            cfg.flow.dt_factor
        ),
    }
}

pub fn simulate(cfg: &RunConfig, out: &Path, allow_warnings: bool) -> Outcome {
    let v = validate(cfg);
    if v.outcome.code != EXIT_OK {
        return v.outcome;
    }
    if v.warned && !allow_warnings {
        let mut report = v.outcome.report;
        report["status"] = json!("fail");
        report["failures"] = json!([failure("Warnings", "validation produced warnings; pass --allow-warnings to run anyway")]);
        return Outcome {
            code: EXIT_INVALID,
            report,
        };
    }
    let (cl, state) = v.setup.expect("validated setup");
    let validation = v.outcome.report;
    match run_flow(cfg, out, cl, state, validation) {
        Ok(o) => o,
        Err(e) => io_failure(e),
    }
}

fn run_flow(
    cfg: &RunConfig,
    out: &Path,
    cl: ReferenceCluster,
    state: HeightState,
    validation: Value,
) -> std::io::Result<Outcome> {
    let snaps = out.join("snapshots");
    std::fs::create_dir_all(&snaps)?;
    let (areas, charts) = (cl.regions.len(), cl.charts.len());
    let mut flow = match Flow::new(cl, state, cfg.flow.clone()) {
        Ok(f) => f,
        Err(e) => return Ok(invalid(vec![flow_failure(&e)])),
    };
    let initial_dt = flow.dt;
    let mut trace = TraceWriter::create(&out.join("trace.csv"), areas, charts)?;
    write_snapshot(&snaps, &flow)?;

    let every = cfg.flow.output_every;
    let snap_every = cfg.outputs.snapshot_every;
    let mut io_err = None;
    let mut last = None;
    let result = flow.run(|f, rec| {
        if io_err.is_some() {
            return;
        }
        let written = rec.step % every == 0;
        let res = (|| {
            if written {
                trace.push(rec)?;
            }
            if rec.step % snap_every == 0 {
                write_snapshot(&snaps, f)?;
            }
            Ok(())
        })();
        io_err = res.err();
        last = Some((rec.clone(), written));
    });
    if let Some(e) = io_err {
        return Err(e);
    }
    if let Some((rec, false)) = &last {
        trace.push(rec)?;
    }
    trace.finish()?;
    if flow.step % snap_every != 0 {
        write_snapshot(&snaps, &flow)?;
    }

    let (code, error) = match &result {
        Ok(status) => (status_code(*status), None),
        Err(e) => {
            let code = match flow.status {
                ContinuationStatus::Running => EXIT_SOLVER,
                s => status_code(s),
            };
            (code, Some(flow_failure(e)))
        }
    };
    let meta = json!({
        "config": cfg,
        "code_version": env!("CARGO_PKG_VERSION"),
        "dt_rule": dt_rule(cfg),
        "dt": initial_dt,
        "final_dt": flow.dt,
        "seed": cfg.seed,
        "h0": flow.h0,
        "r0": flow.r0,
        "steps": flow.step,
        "t_final": flow.time(),
        "initial_energy": flow.initial_energy,
        "final_energy": flow.energy,
        "reref_events": flow.reref_events,
        "final_status": flow.status,
        "reached_t_end": code == EXIT_OK,
        "error": error,
        "exit_code": code,
        "validation": validation,
    });
    write_json(&out.join("meta.json"), &meta)?;
    let summary = json!({
        "status": if code == EXIT_OK { "pass" } else { "stopped" },
        "final_status": flow.status,
        "steps": flow.step,
        "t_final": flow.time(),
        "error": meta["error"],
        "directory": out,
    });
    Ok(Outcome { code, report: summary })
}

fn finish(out: &Path, file: &str, code: i32, report: Value) -> Outcome {
    let written = std::fs::create_dir_all(out).and_then(|_| write_json(&out.join(file), &report));
    match written {
        Ok(()) => Outcome { code, report },
        Err(e) => io_failure(e),
    }
}

pub fn eigs(cfg: &RunConfig, out: &Path) -> Outcome {
    let cl = match cluster_or_fail(cfg) {
        Ok(c) => c,
        Err(o) => return o,
    };
    match solve_eigen(&cl, cfg.eigs.count) {
        Ok(sys) => {
            let report = json!({
                "status": "pass",
                "eigenvalues": sys.eigenvalues,
                "iterations": sys.iterations,
                "mass_weights": sys.mass_weights,
                "nodes": cl.node_count(),
            });
            finish(out, "eigs.json", EXIT_OK, report)
        }
        Err(e) => invalid(vec![flow_failure(&e)]),
    }
}

pub fn ls_check(cfg: &RunConfig, out: &Path) -> Outcome {
    let rep = match check_grid(&cfg.ls_check) {
        Ok(r) => r,
        Err(e) => return invalid(vec![flow_failure(&e)]),
    };
    let mut failures = Vec::new();
    if let Err(e) = rep.ensure_clean() {
        failures.push(flow_failure(&e));
    }
    if let Some(d) = rep.energy_defect_max.filter(|d| !(*d <= 1e-10)) {
        failures.push(failure("EnergyIdentity", format!("energy identity defect {d:e}")));
    }
    if let Some(s) = rep.sigma_over_floor.filter(|s| !(s.min > 10.0)) {
        failures.push(failure("SigmaFloor", format!("smallest sigma only {:e} times its rounding floor", s.min)));
    }
    let code = if failures.is_empty() { EXIT_OK } else { EXIT_INVALID };
    let mut report = json!(rep);
    report["status"] = json!(if failures.is_empty() { "pass" } else { "fail" });
    report["failures"] = Value::Array(failures);
    finish(out, "report.json", code, report)
}

pub fn lincheck(cfg: &RunConfig, out: &Path) -> Outcome {
    let cl = match cluster_or_fail(cfg) {
        Ok(c) => c,
        Err(o) => return o,
    };
    let lc = &cfg.lincheck;
    let rep = match linearization_check(&cl, &lc.core()) {
        Ok(r) => r,
        Err(e) => return invalid(vec![flow_failure(&e)]),
    };
    let pass = rep.passes(lc.tolerance, lc.slope_tolerance);
    let mut report = json!(rep);
    report["status"] = json!(if pass { "pass" } else { "fail" });
    report["tolerance"] = json!(lc.tolerance);
    report["slope_tolerance"] = json!(lc.slope_tolerance);
    finish(out, "lincheck.json", if pass { EXIT_OK } else { EXIT_INVALID }, report)
}
