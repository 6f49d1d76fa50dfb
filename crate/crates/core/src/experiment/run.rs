use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use super::config::{DataKind, ExperimentConfig, ExperimentKind};
use super::data::manufacture;
use super::validate::run_suite;
use crate::error::{Error, Result};
use crate::grid::{moment_violation, write_csv, DbarOperator, WeightedMeasure};
use crate::procedures::{
    approximation_procedure, compact_support_experiment, support_avoidance, ApproxParams,
    AvoidanceParams,
};
use crate::solver::{estimate_constant, solve_min_norm, ConstantCase};
use crate::weights::{BumpedWeight, ConvexCutoff};

pub const SCHEMA_VERSION: u32 = 1;

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;
pub const EXIT_INVARIANT: i32 = 4;

/// Growth allowed for the norm ratio across the `k` family.
const K_UNIFORM_SLACK: f64 = 1.10;

/// Process exit code for an error that stopped an experiment.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_config_error() || matches!(e, Error::Shape(_)) {
        EXIT_CONFIG
    } else if e.is_solver_failure() {
        EXIT_SOLVER
    } else if matches!(e, Error::Io(_)) {
        EXIT_IO
    } else {
        EXIT_INVARIANT
    }
}

/// What a finished (or failed) run left behind.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub experiment: ExperimentKind,
    pub passed: bool,
    pub exit_code: i32,
    /// One line for the terminal.
    pub summary: String,
    pub files: Vec<PathBuf>,
}

struct Produced {
    report: Value,
    violations: Vec<String>,
    summary: String,
    files: Vec<(&'static str, String)>,
}

fn to_value(v: &impl Serialize) -> Result<Value> {
    serde_json::to_value(v).map_err(|e| Error::NumericalConsistency(format!("report serialization: {e}")))
}

fn csv_text<T: Serialize>(rows: impl IntoIterator<Item = T>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

/// Writes `name` under `dir` through a temporary file and a rename.
pub fn write_atomic(dir: &Path, name: &str, contents: &[u8]) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let target = dir.join(name);
    let tmp = dir.join(format!(".{name}.tmp"));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, &target)?;
    Ok(target)
}

fn solve(cfg: &ExperimentConfig) -> Result<Produced> {
    let g = cfg.grid()?;
    let phi = cfg.weight()?;
    let omega = manufacture(g, &cfg.data, &cfg.data_center()?, cfg.seed)?;
    let op = DbarOperator::new(g, omega.degree() - 1)?;
    let w_u = WeightedMeasure::c_exp_weight(g, &phi)?;
    let w_d = WeightedMeasure::exp_weight(g, &phi)?;
    let s = solve_min_norm(&omega, &op, &w_u, &w_d, &cfg.solver)?;
    let moments = if omega.degree() == g.dim() {
        Some(moment_violation(&omega, cfg.solver.moment_degree)?)
    } else {
        None
    };
    let mut violations = Vec::new();
    let limit = 10.0 * cfg.solver.tolerance;
    if !(s.report.residual <= limit) {
        violations.push(format!("residual {:.3e} exceeds {limit:e}", s.report.residual));
    }
    let mut csv = Vec::new();
    write_csv(&s.u, &mut csv)?;
    Ok(Produced {
        report: json!({ "solve": to_value(&s.report)?, "moment_violation": moments }),
        violations,
        summary: format!(
            "ratio {:.6e}, residual {:.3e}, {} iterations",
            s.report.ratio, s.report.residual, s.report.iterations
        ),
        files: vec![("solution.csv", String::from_utf8(csv).expect("csv output is UTF-8"))],
    })
}

#[derive(Serialize)]
struct DecayCsv {
    k: f64,
    tail: f64,
    ratio: f64,
    bound_prediction: f64,
}

fn decay(cfg: &ExperimentConfig) -> Result<Produced> {
    let g = cfg.grid()?;
    let omega = manufacture(g, &cfg.data, &cfg.data_center()?, cfg.seed)?;
    let rep = compact_support_experiment(
        &omega,
        &cfg.defining_ball()?,
        cfg.geometry.epsilon,
        &cfg.geometry.ks,
        &cfg.weight()?,
        &cfg.cutoff()?,
        &cfg.solver,
    )?;
    let rows = rep.rows.iter().map(|r| DecayCsv {
        k: r.k,
        tail: r.tail,
        ratio: r.ratio,
        bound_prediction: r.bound_prediction,
    });
    let summary = match rep.fitted_slope {
        Some(s) => format!(
            "fitted slope {s:.4} (target {:.4}), support fraction {:.3e}",
            rep.slope_target, rep.support_fraction
        ),
        None => "trivial data".into(),
    };
    Ok(Produced {
        violations: rep.violations(),
        files: vec![("decay.csv", csv_text(rows)?)],
        report: to_value(&rep)?,
        summary,
    })
}

fn avoid(cfg: &ExperimentConfig) -> Result<Produced> {
    let g = cfg.grid()?;
    let omega = manufacture(g, &cfg.data, &cfg.data_center()?, cfg.seed)?;
    let (outer, inner, bump) = cfg.avoidance_balls()?;
    let geo = &cfg.geometry;
    let params = AvoidanceParams {
        outer,
        inner,
        bump,
        epsilon: geo.epsilon,
        k: geo.bump_k,
        cutoff: cfg.cutoff()?,
        inner_tolerance: geo.inner_tolerance,
        margin_cells: geo.margin_cells,
    };
    let (_, rep) = support_avoidance(&omega, &params, &cfg.weight()?, &cfg.solver)?;
    Ok(Produced {
        violations: rep.violations(),
        summary: format!(
            "max |u| on U {:.3e} (max |v| {:.3e}), residual {:.3e}",
            rep.max_u_on_u, rep.max_v, rep.residual
        ),
        report: to_value(&rep)?,
        files: Vec::new(),
    })
}

#[derive(Serialize)]
struct ApproxCsv {
    k: usize,
    r_k: f64,
    tail_omega: f64,
    dbar_omega_k_norm: f64,
    u_k_norm: f64,
    mu_gap: f64,
    v_k_norm: f64,
}

fn approx(cfg: &ExperimentConfig) -> Result<Produced> {
    let g = cfg.grid()?;
    let omega = manufacture(g, &cfg.data, &cfg.data_center()?, cfg.seed)?;
    let geo = &cfg.geometry;
    let params = ApproxParams {
        r0: geo.r0,
        stages: geo.stages,
        test_forms: geo.test_forms,
        seed: cfg.seed,
        correction_epsilon: geo.correction_epsilon,
        correction_k: geo.correction_k,
        correction_cutoff: ConvexCutoff::new(geo.correction_cutoff_scale)?,
    };
    let (_, rep) = approximation_procedure(&omega, &cfg.weight()?, &params, &cfg.solver)?;
    let rows = rep.stages.iter().map(|s| ApproxCsv {
        k: s.k,
        r_k: s.r_k,
        tail_omega: s.tail_omega,
        dbar_omega_k_norm: s.dbar_omega_k_norm,
        u_k_norm: s.u_k_norm,
        mu_gap: s.mu_gap,
        v_k_norm: s.v_k_norm,
    });
    let last = rep.stages.last().expect("at least one stage");
    Ok(Produced {
        violations: rep.violations(),
        files: vec![("approx.csv", csv_text(rows)?)],
        summary: format!(
            "|omega - mu_K| {:.3e} at K = {}, C_hat {:.3e}, duality residual {:.3e}",
            last.mu_gap, last.k, rep.c_hat, rep.duality_residual
        ),
        report: to_value(&rep)?,
    })
}

#[derive(Serialize)]
struct ConstantsReport {
    ks: Vec<f64>,
    samples: usize,
    /// Largest ratio over the samples, one entry per `k`.
    constants: Vec<f64>,
    c_hat: f64,
}

fn constants(cfg: &ExperimentConfig) -> Result<Produced> {
    let g = cfg.grid()?;
    let phi = cfg.weight()?;
    let center = cfg.data_center()?;
    // only random data differs between seeds
    let samples = if cfg.data.kind == DataKind::Random { cfg.geometry.samples } else { 1 };
    let omegas = (0..samples as u64)
        .map(|i| manufacture(g, &cfg.data, &center, cfg.seed.wrapping_add(i)))
        .collect::<Result<Vec<_>>>()?;
    let defining = cfg.defining_ball()?;
    let cutoff = cfg.cutoff()?;
    let mut values = Vec::with_capacity(cfg.geometry.ks.len());
    for &k in &cfg.geometry.ks {
        let psi = BumpedWeight::new(phi.clone(), defining, cutoff, k)?;
        let w_u = WeightedMeasure::bumped_c_exp_weight(g, &psi)?;
        let w_d = WeightedMeasure::bumped_exp_weight(g, &psi)?;
        let cases: Vec<ConstantCase> = omegas
            .iter()
            .map(|o| ConstantCase {
                omega: o.clone(),
                w_u: w_u.clone(),
                w_d: w_d.clone(),
            })
            .collect();
        let c = estimate_constant(&cases, &cfg.solver).map_err(|e| Error::Family { k, source: Box::new(e) })?;
        values.push(c);
    }
    let c_hat = values.iter().copied().fold(0.0, f64::max);
    let mut violations = Vec::new();
    if !(c_hat <= K_UNIFORM_SLACK * values[0]) {
        violations.push(format!(
            "constant grows from {:.6} at k = {} to {c_hat:.6}",
            values[0], cfg.geometry.ks[0]
        ));
    }
    let rep = ConstantsReport {
        ks: cfg.geometry.ks.clone(),
        samples,
        constants: values,
        c_hat,
    };
    Ok(Produced {
        summary: format!("C_hat {c_hat:.6} over {} values of k", rep.ks.len()),
        report: to_value(&rep)?,
        violations,
        files: Vec::new(),
    })
}

fn validate(cfg: &ExperimentConfig) -> Result<Produced> {
    let checks = run_suite(cfg.seed)?;
    let violations: Vec<String> = checks
        .iter()
        .filter(|c| !c.passed)
        .map(|c| {
            let rel = if c.lower_bound { ">=" } else { "<=" };
            format!("{}: {:.3e} is not {rel} {:e}", c.name, c.value, c.limit)
        })
        .collect();
    Ok(Produced {
        summary: format!("{} of {} checks passed", checks.len() - violations.len(), checks.len()),
        report: json!({ "checks": to_value(&checks)? }),
        violations,
        files: Vec::new(),
    })
}

fn execute(cfg: &ExperimentConfig) -> Result<Produced> {
    match cfg.experiment {
        ExperimentKind::Solve => solve(cfg),
        ExperimentKind::Decay => decay(cfg),
        ExperimentKind::Avoid => avoid(cfg),
        ExperimentKind::Approx => approx(cfg),
        ExperimentKind::Constants => constants(cfg),
        ExperimentKind::Validate => validate(cfg),
    }
}

/// Runs one experiment and writes `report.json` plus its CSV files to `out_dir`.
///
/// Configuration and I/O problems come back as `Err`; solver failures and
/// failed invariants produce a report and a non-zero exit code in the outcome.
pub fn run(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Outcome> {
    cfg.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cfg.threads {
        builder = builder.num_threads(t);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("cannot start {} threads: {e}", cfg.threads.unwrap_or(0))))?;
    let result = pool.install(|| execute(cfg));

    // the output directory is where the report goes, not part of the experiment
    let mut echoed = cfg.clone();
    echoed.out_dir = None;
    let kind = cfg.experiment;
    let (report, violations, summary, files, error, code) = match result {
        Ok(p) => {
            let code = if p.violations.is_empty() { EXIT_OK } else { EXIT_INVARIANT };
            (p.report, p.violations, p.summary, p.files, None, code)
        }
        Err(e) => {
            let code = exit_code(&e);
            if code == EXIT_CONFIG || code == EXIT_IO {
                return Err(e);
            }
            (Value::Null, Vec::new(), format!("failed: {e}"), Vec::new(), Some(e.to_string()), code)
        }
    };
    let passed = code == EXIT_OK;
    let mut doc = json!({
        "schema_version": SCHEMA_VERSION,
        "experiment": kind.name(),
        "theorem": kind.theorem(),
        "config": to_value(&echoed)?,
        "report": report,
        "violations": violations,
        "passed": passed,
    });
    if let Some(e) = error {
        doc["error"] = Value::String(e);
    }
    let mut written = Vec::new();
    for (name, text) in &files {
        written.push(write_atomic(out_dir, name, text.as_bytes())?);
    }
    let mut text = serde_json::to_string_pretty(&doc).expect("JSON values serialize");
    text.push('\n');
    written.push(write_atomic(out_dir, "report.json", text.as_bytes())?);
    let verdict = match code {
        EXIT_OK => "passed".to_string(),
        _ if !violations.is_empty() => format!("{} invariant(s) violated", violations.len()),
        _ => "error".to_string(),
    };
    Ok(Outcome {
        experiment: kind,
        passed,
        exit_code: code,
        summary: format!("{}: {verdict}; {summary}", kind.name()),
        files: written,
    })
}
