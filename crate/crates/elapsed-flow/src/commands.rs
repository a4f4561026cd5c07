//! Implementations of the CLI commands (`simulate`, `equilibrium`,
//! `certify`, `sweep`). Each takes a validated [`RunConfig`] and an output
//! directory, writes its artifacts there, prints a short summary, and
//! returns the overall outcome.
//!
//! Every command writes a `manifest.json` echoing the configuration, the
//! derived model constants, and the list of files produced, so a run's
//! outputs are self-describing. All JSON is written with sorted keys and
//! all CSV floats in full (`{:.16e}`) precision: two runs of the same
//! configuration produce byte-identical artifacts.

use std::fmt::Write as _;
use std::path::Path;

use crate::analysis::{
    contraction_check, doeblin_check, relaxation_experiment, DoeblinReport, RelaxationOptions,
    RelaxationReport,
};
use crate::config::{build_measure, InitSpec, KernelSpec, RateSpec, RunConfig};
use crate::equilibrium::{
    stationary_fatigue, stationary_renewal, stationary_threshold_fatigue,
    stationary_threshold_renewal, theory_constants, Equilibrium, TheoryConstants,
};
use crate::error::{Error, Result};
use crate::kernel::KernelModel;
use crate::measure::{Grid, GridMeasure};
use crate::rate::RateModel;
use crate::semigroup::{simulate, FrozenRate, ModelKind, Sample, SimOptions};

fn ensure_out_dir(out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    Ok(())
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Numerical(format!("cannot serialize {}: {e}", path.display())))?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn pass_str(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

/// Solve the model's stationary state (dispatching on the model kind).
pub fn solve_equilibrium(
    model: ModelKind,
    rate: &RateModel,
    kernel: Option<&KernelModel>,
    grid: Grid,
    tol: f64,
) -> Result<Equilibrium> {
    match model {
        ModelKind::Renewal => stationary_renewal(rate, grid, tol),
        ModelKind::Fatigue => {
            let k = kernel.ok_or_else(|| {
                Error::Config("the fatigue model requires a reinjection kernel".to_string())
            })?;
            stationary_fatigue(rate, k, tol)
        }
    }
}

/// The feedback threshold under which the stationary construction is
/// certified for this model.
fn stationary_threshold(model: ModelKind, rate: &RateModel, constants: &TheoryConstants) -> f64 {
    match model {
        ModelKind::Renewal => stationary_threshold_renewal(rate),
        ModelKind::Fatigue => stationary_threshold_fatigue(rate, constants.alpha),
    }
}

fn rate_summary(spec: &RateSpec, rate: &RateModel) -> serde_json::Value {
    serde_json::json!({
        "spec": spec,
        "l": rate.l,
        "p_min": rate.p_min,
        "p_max": rate.p_max,
        "s_star": rate.s_star,
    })
}

fn kernel_summary(spec: Option<&KernelSpec>, kernel: Option<&KernelModel>) -> serde_json::Value {
    match (spec, kernel) {
        (Some(s), Some(k)) => serde_json::json!({
            "spec": s,
            "eps": k.eps,
            "delta": k.delta,
        }),
        _ => serde_json::Value::Null,
    }
}

#[allow(clippy::too_many_arguments)]
fn write_manifest(
    out_dir: &Path,
    command: &str,
    cfg: &RunConfig,
    grid: Grid,
    rate: &RateModel,
    kernel: Option<&KernelModel>,
    constants: Option<&TheoryConstants>,
    outputs: &[String],
    detail: serde_json::Value,
) -> Result<()> {
    let manifest = serde_json::json!({
        "command": command,
        "model": cfg.model_kind()?,
        "grid": grid,
        "rate": rate_summary(&cfg.rate, rate),
        "kernel": kernel_summary(cfg.kernel.as_ref(), kernel),
        "theory": constants,
        "tolerances": cfg.tolerances,
        "seed": cfg.seed,
        "outputs": outputs,
        "detail": detail,
        "config": cfg,
    });
    write_json(&out_dir.join("manifest.json"), &manifest)
}

fn trajectory_csv(samples: &[Sample]) -> String {
    let mut out = String::with_capacity(80 * samples.len() + 32);
    out.push_str("t,mass,N,tv_to_ref\n");
    for s in samples {
        match s.tv_to_ref {
            Some(d) => writeln!(
                out,
                "{:.16e},{:.16e},{:.16e},{:.16e}",
                s.t, s.mass, s.activity, d
            )
            .expect("writing to a String cannot fail"),
            None => writeln!(out, "{:.16e},{:.16e},{:.16e},", s.t, s.mass, s.activity)
                .expect("writing to a String cannot fail"),
        }
    }
    out
}

/// Resolve the reference measure for a simulation, if any. The
/// `equilibrium` kind solves the model's stationary state at the
/// equilibrium tolerance.
fn resolve_reference(
    spec: Option<&InitSpec>,
    model: ModelKind,
    rate: &RateModel,
    kernel: Option<&KernelModel>,
    grid: Grid,
    equilibrium_tol: f64,
) -> Result<Option<GridMeasure>> {
    match spec {
        None => Ok(None),
        Some(InitSpec::Equilibrium) => {
            let eq = solve_equilibrium(model, rate, kernel, grid, equilibrium_tol)?;
            Ok(Some(eq.n_star))
        }
        Some(other) => Ok(Some(build_measure(other, grid)?)),
    }
}

/// Run the model forward and write `trajectory.csv`, the requested
/// snapshots, `final_state.csv`, and `manifest.json`.
pub fn cmd_simulate(cfg: &RunConfig, out_dir: &Path) -> Result<()> {
    let model = cfg.model_kind()?;
    let grid = cfg.build_grid()?;
    let rate = cfg.build_rate()?;
    let kernel = cfg.build_kernel(grid)?;
    let horizon = cfg
        .horizon
        .ok_or_else(|| Error::Config("simulate needs a horizon".to_string()))?;

    let init_spec = cfg.init.clone().unwrap_or(InitSpec::Dirac { s0: 0.0 });
    let init = build_measure(&init_spec, grid)?;
    let reference = resolve_reference(
        cfg.reference.as_ref(),
        model,
        &rate,
        kernel.as_ref(),
        grid,
        cfg.tolerances.equilibrium,
    )?;

    let opts = SimOptions {
        activity_tol: cfg.tolerances.activity,
        sample_stride: cfg.sample_stride,
        snapshot_times: cfg.snapshot_times.clone(),
        reference,
    };
    let traj = simulate(model, &rate, kernel.as_ref(), init, horizon, &opts)?;

    ensure_out_dir(out_dir)?;
    let mut outputs = Vec::new();

    std::fs::write(out_dir.join("trajectory.csv"), trajectory_csv(&traj.samples))?;
    outputs.push("trajectory.csv".to_string());

    let mut snapshot_index = Vec::new();
    for (i, snap) in traj.snapshots.iter().enumerate() {
        let name = format!("snapshot_{i:03}.csv");
        snap.measure.write_csv(&out_dir.join(&name))?;
        snapshot_index.push(serde_json::json!({
            "t": snap.t,
            "activity": snap.activity,
            "file": name,
        }));
        outputs.push(name);
    }

    traj.final_state.n.write_csv(&out_dir.join("final_state.csv"))?;
    outputs.push("final_state.csv".to_string());

    let constants = theory_constants(model, &rate, kernel.as_ref()).ok();
    let detail = serde_json::json!({
        "horizon": horizon,
        "steps": grid.steps_for(horizon),
        "final_t": traj.final_state.t,
        "final_mass": traj.final_state.n.mass(),
        "final_activity": traj.final_state.activity,
        "min_cell": traj.min_cell,
        "snapshots": snapshot_index,
    });
    write_manifest(
        out_dir,
        "simulate",
        cfg,
        grid,
        &rate,
        kernel.as_ref(),
        constants.as_ref(),
        &outputs,
        detail,
    )?;

    println!(
        "simulate: {} steps to t = {:.6}; final mass {:.12e}, final activity {:.12e}, min cell {:.3e}",
        grid.steps_for(horizon),
        traj.final_state.t,
        traj.final_state.n.mass(),
        traj.final_state.activity,
        traj.min_cell,
    );
    Ok(())
}

/// Compute the stationary state and write `equilibrium.csv`,
/// `equilibrium.json`, and `manifest.json`.
pub fn cmd_equilibrium(cfg: &RunConfig, out_dir: &Path) -> Result<()> {
    let model = cfg.model_kind()?;
    let grid = cfg.build_grid()?;
    let rate = cfg.build_rate()?;
    let kernel = cfg.build_kernel(grid)?;

    let constants = theory_constants(model, &rate, kernel.as_ref())?;
    let eq = solve_equilibrium(model, &rate, kernel.as_ref(), grid, cfg.tolerances.equilibrium)?;
    let threshold = stationary_threshold(model, &rate, &constants);

    ensure_out_dir(out_dir)?;
    eq.n_star.write_csv(&out_dir.join("equilibrium.csv"))?;

    let summary = serde_json::json!({
        "activity": eq.activity,
        "residual": eq.residual,
        "iterations": eq.iterations,
        "mass": eq.n_star.mass(),
        "l": rate.l,
        "stationary_threshold": threshold,
        "theory": constants,
    });
    write_json(&out_dir.join("equilibrium.json"), &summary)?;

    let outputs = vec!["equilibrium.csv".to_string(), "equilibrium.json".to_string()];
    let detail = serde_json::json!({
        "activity": eq.activity,
        "residual": eq.residual,
        "iterations": eq.iterations,
        "stationary_threshold": threshold,
    });
    write_manifest(
        out_dir,
        "equilibrium",
        cfg,
        grid,
        &rate,
        kernel.as_ref(),
        Some(&constants),
        &outputs,
        detail,
    )?;

    println!(
        "equilibrium: activity {:.12e}, one-step residual {:.3e}, {} iterations (L = {:.3e} < threshold {:.3e})",
        eq.activity, eq.residual, eq.iterations, rate.l, threshold,
    );
    Ok(())
}

fn init_label(spec: &InitSpec) -> String {
    match spec {
        InitSpec::Dirac { s0 } => format!("dirac@{s0}"),
        InitSpec::Density { name, .. } => format!("density:{name}"),
        InitSpec::Snapshot { path } => format!("snapshot:{path}"),
        InitSpec::Equilibrium => "equilibrium".to_string(),
    }
}

/// Materialize the initial data of a relaxation experiment (defaulting to
/// a single point mass at zero).
fn build_relax_inits(specs: &[InitSpec], grid: Grid) -> Result<Vec<(String, GridMeasure)>> {
    if specs.is_empty() {
        return Ok(vec![(
            "dirac@0".to_string(),
            GridMeasure::dirac(grid, 0.0)?,
        )]);
    }
    specs
        .iter()
        .map(|spec| Ok((init_label(spec), build_measure(spec, grid)?)))
        .collect()
}

fn print_doeblin_line(report: &DoeblinReport) {
    println!(
        "minorization: min density {:.6e} on ({:.4}, {:.4}) vs bound {:.6e} (allowance {:.2e}, worst start s0 = {:.4}, {} trials) — {}",
        report.min_density,
        report.window.0,
        report.window.1,
        report.bound,
        report.tol_scheme,
        report.worst_initial,
        report.n_trials,
        pass_str(report.pass),
    );
}

fn print_relaxation_lines(report: &RelaxationReport) {
    for init in &report.per_init {
        let ratio = init
            .max_h_ratio
            .map_or("n/a".to_string(), |r| format!("{r:.6e}"));
        println!(
            "relaxation[{}]: lambda_fit {:.6e} (needs >= {:.6e}), r2 {:.6}, defect ratio {} (allowed {:.6e}) — {}",
            init.label,
            init.fit.lambda,
            report.lambda_required,
            init.fit.r2,
            ratio,
            report.h_ratio_allowed,
            pass_str(init.rate_ok && init.r2_ok && init.h_ok),
        );
    }
}

/// Certify the full quantitative chain: minorization, TV contraction, and
/// (optionally) nonlinear relaxation. Writes `certify.json` and
/// `manifest.json` regardless of outcome; a completed-but-failed
/// certification returns [`Error::Certificate`].
pub fn cmd_certify(cfg: &RunConfig, out_dir: &Path) -> Result<()> {
    let model = cfg.model_kind()?;
    let grid = cfg.build_grid()?;
    let rate = cfg.build_rate()?;
    let kernel = cfg.build_kernel(grid)?;
    let spec = cfg.certify.clone().unwrap_or_default();

    if !(spec.debug_bound_scale.is_finite() && spec.debug_bound_scale > 0.0) {
        return Err(Error::Config(format!(
            "debug_bound_scale must be finite and positive, got {}",
            spec.debug_bound_scale
        )));
    }

    let constants = theory_constants(model, &rate, kernel.as_ref())?;

    // The linear checks freeze the rate at one activity: the requested one,
    // or the stationary state's.
    let (n_bar, equilibrium) = match spec.freeze_activity {
        Some(n) => {
            if !(n.is_finite() && n >= 0.0) {
                return Err(Error::Config(format!(
                    "freeze_activity must be finite and nonnegative, got {n}"
                )));
            }
            (n, None)
        }
        None => {
            let eq =
                solve_equilibrium(model, &rate, kernel.as_ref(), grid, cfg.tolerances.equilibrium)?;
            (eq.activity, Some(eq))
        }
    };
    let frozen = FrozenRate::new(&rate, grid, n_bar);

    let mut doeblin = doeblin_check(model, &frozen, kernel.as_ref(), spec.n_doeblin_trials)?;
    if spec.debug_bound_scale != 1.0 {
        doeblin.bound *= spec.debug_bound_scale;
        doeblin.pass = doeblin.min_density >= doeblin.bound * (1.0 - doeblin.tol_scheme);
    }

    let contraction = contraction_check(model, &frozen, kernel.as_ref(), spec.n_pairs, cfg.seed)?;

    let relaxation = match &spec.relaxation {
        None => None,
        Some(r) => {
            let inits = build_relax_inits(&r.inits, grid)?;
            let opts = RelaxationOptions {
                horizon: r.horizon,
                fit_window: (r.fit_lo, r.fit_hi),
                equilibrium_tol: cfg.tolerances.equilibrium,
                activity_tol: cfg.tolerances.activity,
                rate_margin: r.rate_margin,
                r2_min: r.r2_min,
                h_margin: r.h_margin,
                ..RelaxationOptions::default()
            };
            Some(relaxation_experiment(
                model,
                &rate,
                kernel.as_ref(),
                grid,
                &inits,
                &opts,
            )?)
        }
    };

    let pass =
        doeblin.pass && contraction.pass && relaxation.as_ref().is_none_or(|r| r.pass);

    // The certificate is written before the exit status is decided, so a
    // failed certification still leaves its evidence on disk.
    ensure_out_dir(out_dir)?;
    let certificate = serde_json::json!({
        "model": model,
        "constants": constants,
        "frozen_activity": n_bar,
        "equilibrium": equilibrium.as_ref().map(|eq| serde_json::json!({
            "activity": eq.activity,
            "residual": eq.residual,
            "iterations": eq.iterations,
        })),
        "doeblin": doeblin,
        "contraction": contraction,
        "relaxation": relaxation,
        "debug_bound_scale": spec.debug_bound_scale,
        "pass": pass,
    });
    write_json(&out_dir.join("certify.json"), &certificate)?;

    let outputs = vec!["certify.json".to_string()];
    let detail = serde_json::json!({
        "frozen_activity": n_bar,
        "pass": pass,
    });
    write_manifest(
        out_dir,
        "certify",
        cfg,
        grid,
        &rate,
        kernel.as_ref(),
        Some(&constants),
        &outputs,
        detail,
    )?;

    print_doeblin_line(&doeblin);
    println!(
        "contraction: worst TV ratio {:.6e} over t0 = {:.4} vs bound {:.6e} ({} pairs, {} skipped, seed {}) — {}",
        contraction.worst_ratio,
        contraction.t0,
        contraction.factor_bound,
        contraction.n_pairs,
        contraction.n_skipped,
        contraction.seed,
        pass_str(contraction.pass),
    );
    if let Some(r) = &relaxation {
        print_relaxation_lines(r);
    }

    if pass {
        println!("certificate: PASS");
        Ok(())
    } else {
        println!("certificate: FAIL");
        let mut failed = Vec::new();
        if !doeblin.pass {
            failed.push("minorization");
        }
        if !contraction.pass {
            failed.push("contraction");
        }
        if relaxation.as_ref().is_some_and(|r| !r.pass) {
            failed.push("relaxation");
        }
        Err(Error::Certificate(format!(
            "checks failed: {} (see certify.json)",
            failed.join(", ")
        )))
    }
}

/// CSV-quote a free-text field (wrap in quotes, double internal quotes).
fn csv_quote(text: &str) -> String {
    format!("\"{}\"", text.replace('"', "\"\""))
}

/// One row of a sweep: the feedback strength, what the theory predicts
/// there, and what the measured relaxation produced.
struct SweepRow {
    l: f64,
    j: f64,
    lambda_theory: Option<f64>,
    report: std::result::Result<RelaxationReport, Error>,
}

/// Sweep the feedback strength across a family of smoothed-step rates and
/// measure relaxation at every point. Points past the certified threshold
/// are recorded as inconclusive rather than aborting the sweep.
pub fn cmd_sweep(cfg: &RunConfig, out_dir: &Path) -> Result<()> {
    let model = cfg.model_kind()?;
    let grid = cfg.build_grid()?;
    let kernel = cfg.build_kernel(grid)?;
    let spec = cfg
        .sweep
        .clone()
        .ok_or_else(|| Error::Config("sweep needs a \"sweep\" section".to_string()))?;

    let RateSpec::SmoothedStep {
        p_min,
        p_max,
        s_star,
        w,
        ..
    } = cfg.rate
    else {
        return Err(Error::Config(
            "sweeps vary the smoothed-step family's feedback; set rate.family = \"smoothed_step\""
                .to_string(),
        ));
    };
    let dp = p_max - p_min;

    // Axis: explicit feedback amplitudes J, or Lipschitz targets L mapped
    // through L = |J|·(p_max − p_min)/(4w).
    let j_values: Vec<f64> = if !spec.j_values.is_empty() {
        spec.j_values.clone()
    } else {
        if !(dp > 0.0) {
            return Err(Error::Config(
                "l_values need p_max > p_min (with a flat rate, L = 0 for every J)".to_string(),
            ));
        }
        spec.l_values.iter().map(|l| 4.0 * w * l / dp).collect()
    };

    let fit_hi = spec.fit_hi.unwrap_or(spec.horizon);
    let inits_spec = spec.inits.clone();

    let rows: Vec<SweepRow> = j_values
        .iter()
        .map(|&j| {
            let run = || -> Result<(RateModel, RelaxationReport)> {
                let rate = RateModel::smoothed_step(p_min, p_max, s_star, j, w)?;
                let inits = build_relax_inits(&inits_spec, grid)?;
                let opts = RelaxationOptions {
                    horizon: spec.horizon,
                    fit_window: (spec.fit_lo, fit_hi),
                    equilibrium_tol: cfg.tolerances.equilibrium,
                    activity_tol: cfg.tolerances.activity,
                    ..RelaxationOptions::default()
                };
                let report =
                    relaxation_experiment(model, &rate, kernel.as_ref(), grid, &inits, &opts)?;
                Ok((rate, report))
            };
            // The analytic L of the smoothed-step family, available even
            // when the experiment itself refuses to run.
            let l = j.abs() * dp / (4.0 * w);
            let lambda_theory = RateModel::smoothed_step(p_min, p_max, s_star, j, w)
                .ok()
                .and_then(|r| theory_constants(model, &r, kernel.as_ref()).ok())
                .map(|c| c.lambda_nl);
            match run() {
                Ok((rate, report)) => SweepRow {
                    l: rate.l,
                    j,
                    lambda_theory,
                    report: Ok(report),
                },
                Err(e) => SweepRow {
                    l,
                    j,
                    lambda_theory,
                    report: Err(e),
                },
            }
        })
        .collect();

    ensure_out_dir(out_dir)?;

    let mut csv = String::from("L,J,N_star,lambda_theory,lambda_fit,r2,pass,note\n");
    let mut points = Vec::new();
    for row in &rows {
        let theory = row
            .lambda_theory
            .map_or(String::new(), |v| format!("{v:.16e}"));
        match &row.report {
            Ok(report) => {
                let lambda_fit = report
                    .per_init
                    .iter()
                    .map(|i| i.fit.lambda)
                    .fold(f64::INFINITY, f64::min);
                let r2 = report
                    .per_init
                    .iter()
                    .map(|i| i.fit.r2)
                    .fold(f64::INFINITY, f64::min);
                writeln!(
                    csv,
                    "{:.16e},{:.16e},{:.16e},{},{:.16e},{:.16e},{},",
                    row.l, row.j, report.equilibrium_activity, theory, lambda_fit, r2, report.pass,
                )
                .expect("writing to a String cannot fail");
                points.push(serde_json::json!({
                    "l": row.l,
                    "j": row.j,
                    "lambda_theory": row.lambda_theory,
                    "report": report,
                }));
                println!(
                    "sweep L = {:.6e}: lambda_fit {:.6e} vs certified {:.6e} — {}",
                    row.l,
                    lambda_fit,
                    row.lambda_theory.unwrap_or(f64::NAN),
                    pass_str(report.pass),
                );
            }
            Err(e) => {
                let note = e.to_string();
                writeln!(
                    csv,
                    "{:.16e},{:.16e},,{},,,,{}",
                    row.l,
                    row.j,
                    theory,
                    csv_quote(&note),
                )
                .expect("writing to a String cannot fail");
                points.push(serde_json::json!({
                    "l": row.l,
                    "j": row.j,
                    "lambda_theory": row.lambda_theory,
                    "error": note,
                }));
                println!("sweep L = {:.6e}: inconclusive — {note}", row.l);
            }
        }
    }

    std::fs::write(out_dir.join("sweep.csv"), csv)?;
    write_json(
        &out_dir.join("sweep.json"),
        &serde_json::json!({ "points": points }),
    )?;

    let rate = cfg.build_rate()?;
    let outputs = vec!["sweep.csv".to_string(), "sweep.json".to_string()];
    let detail = serde_json::json!({
        "n_points": rows.len(),
        "axis": if spec.j_values.is_empty() { "l_values" } else { "j_values" },
        "horizon": spec.horizon,
        "fit_window": [spec.fit_lo, fit_hi],
    });
    write_manifest(
        out_dir,
        "sweep",
        cfg,
        grid,
        &rate,
        kernel.as_ref(),
        None,
        &outputs,
        detail,
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;

    fn run_dir() -> tempfile::TempDir {
        tempfile::tempdir().expect("create temp dir")
    }

    #[test]
    fn simulate_writes_expected_files_and_row_counts() {
        let cfg = RunConfig::from_json_str(
            r#"{
                "model": 1,
                "grid": {"s_max": 4.0, "n_cells": 400},
                "rate": {"family": "constant", "p0": 1.0, "s_star": 1.0},
                "horizon": 1.0,
                "sample_stride": 10,
                "snapshot_times": [0.5, 1.0]
            }"#,
        )
        .unwrap();
        let dir = run_dir();
        cmd_simulate(&cfg, dir.path()).unwrap();

        let traj = std::fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
        let lines: Vec<&str> = traj.lines().collect();
        assert_eq!(lines[0], "t,mass,N,tv_to_ref");
        // 100 steps sampled every 10, plus the initial row.
        assert_eq!(lines.len(), 1 + 11);
        // No reference: the tv column is empty.
        assert!(lines[1].ends_with(','));

        assert!(dir.path().join("snapshot_000.csv").exists());
        assert!(dir.path().join("snapshot_001.csv").exists());
        assert!(dir.path().join("final_state.csv").exists());
        let manifest = std::fs::read_to_string(dir.path().join("manifest.json")).unwrap();
        assert!(manifest.contains("\"command\": \"simulate\""));

        // The final state written equals the snapshot at the horizon.
        let final_state =
            GridMeasure::read_csv(&dir.path().join("final_state.csv")).unwrap();
        let last_snap = GridMeasure::read_csv(&dir.path().join("snapshot_001.csv")).unwrap();
        assert_eq!(final_state.masses(), last_snap.masses());
        assert_eq!(final_state.tail(), last_snap.tail());
    }

    #[test]
    fn simulate_without_horizon_is_a_config_error() {
        let cfg = RunConfig::from_json_str(
            r#"{
                "model": 1,
                "grid": {"s_max": 4.0, "n_cells": 400},
                "rate": {"family": "constant", "p0": 1.0, "s_star": 1.0}
            }"#,
        )
        .unwrap();
        let dir = run_dir();
        let err = cmd_simulate(&cfg, dir.path()).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn equilibrium_command_reports_unit_activity_for_unit_rate() {
        let cfg = RunConfig::from_json_str(
            r#"{
                "model": 1,
                "grid": {"s_max": 8.0, "n_cells": 800},
                "rate": {"family": "constant", "p0": 1.0, "s_star": 1.0}
            }"#,
        )
        .unwrap();
        let dir = run_dir();
        cmd_equilibrium(&cfg, dir.path()).unwrap();

        let summary: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(dir.path().join("equilibrium.json")).unwrap(),
        )
        .unwrap();
        let activity = summary["activity"].as_f64().unwrap();
        assert!((activity - 1.0).abs() < 1e-10);
        assert!((summary["mass"].as_f64().unwrap() - 1.0).abs() < 1e-10);

        let m = GridMeasure::read_csv(&dir.path().join("equilibrium.csv")).unwrap();
        assert!((m.mass() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn certify_passes_for_the_unit_rate_renewal_model() {
        let cfg = RunConfig::from_json_str(
            r#"{
                "model": 1,
                "grid": {"s_max": 6.0, "n_cells": 600},
                "rate": {"family": "constant", "p0": 1.0, "s_star": 1.0},
                "certify": {"n_doeblin_trials": 8, "n_pairs": 8}
            }"#,
        )
        .unwrap();
        let dir = run_dir();
        cmd_certify(&cfg, dir.path()).unwrap();

        let cert: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(dir.path().join("certify.json")).unwrap(),
        )
        .unwrap();
        assert_eq!(cert["pass"], serde_json::Value::Bool(true));
        assert_eq!(cert["doeblin"]["pass"], serde_json::Value::Bool(true));
        assert_eq!(cert["contraction"]["pass"], serde_json::Value::Bool(true));
    }

    #[test]
    fn tampered_bound_fails_certification_but_still_writes_evidence() {
        // For p ≡ 1 the measured floor sits a factor ≈ e above the bound
        // (density N(2−s)·e^{−s} = e^{−s} bottoms out at e^{−1} vs the
        // certified e^{−2}), so the tampering scale must exceed that
        // margin to force a failure.
        let cfg = RunConfig::from_json_str(
            r#"{
                "model": 1,
                "grid": {"s_max": 6.0, "n_cells": 600},
                "rate": {"family": "constant", "p0": 1.0, "s_star": 1.0},
                "certify": {"n_doeblin_trials": 8, "n_pairs": 8, "debug_bound_scale": 4.0}
            }"#,
        )
        .unwrap();
        let dir = run_dir();
        let err = cmd_certify(&cfg, dir.path()).unwrap_err();
        assert_eq!(err.exit_code(), 5);

        let cert: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(dir.path().join("certify.json")).unwrap(),
        )
        .unwrap();
        assert_eq!(cert["pass"], serde_json::Value::Bool(false));
        assert_eq!(cert["debug_bound_scale"].as_f64().unwrap(), 4.0);
    }

    #[test]
    fn certify_artifacts_are_byte_deterministic() {
        let text = r#"{
            "model": 1,
            "grid": {"s_max": 6.0, "n_cells": 600},
            "rate": {"family": "constant", "p0": 1.0, "s_star": 1.0},
            "seed": 7,
            "certify": {"n_doeblin_trials": 6, "n_pairs": 6}
        }"#;
        let cfg = RunConfig::from_json_str(text).unwrap();
        let (a, b) = (run_dir(), run_dir());
        cmd_certify(&cfg, a.path()).unwrap();
        cmd_certify(&cfg, b.path()).unwrap();
        for name in ["certify.json", "manifest.json"] {
            let left = std::fs::read(a.path().join(name)).unwrap();
            let right = std::fs::read(b.path().join(name)).unwrap();
            assert_eq!(left, right, "{name} differs between identical runs");
        }
    }

    #[test]
    fn sweep_records_conclusive_and_inconclusive_points() {
        // L = 0.02 relaxes; L = 0.5 is far past every threshold. The axis
        // outlasts the horizon so the default point-mass initial datum
        // never collapses into the tail cell during the fit window.
        let cfg = RunConfig::from_json_str(
            r#"{
                "model": 1,
                "grid": {"s_max": 16.0, "n_cells": 1600},
                "rate": {"family": "smoothed_step", "p_min": 1.0, "p_max": 1.1, "s_star": 1.0, "j": 0.2, "w": 0.25},
                "sweep": {"l_values": [0.02, 0.5], "horizon": 12.0, "fit_lo": 2.0, "fit_hi": 12.0}
            }"#,
        )
        .unwrap();
        let dir = run_dir();
        cmd_sweep(&cfg, dir.path()).unwrap();

        let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "L,J,N_star,lambda_theory,lambda_fit,r2,pass,note");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].contains("true"));
        // The second point aborts on the threshold; its note names the
        // violation and the measured columns stay empty.
        assert!(lines[2].contains("threshold") || lines[2].contains("feedback"));
    }
}
