//! Configuration-driven experiment runner: dispatches one command per
//! config, writes CSV artifacts plus a manifest JSON into the output
//! directory. CSV bodies are deterministic for a fixed config and seed;
//! wall-clock information lives only in the manifest.

use std::path::{Path, PathBuf};

use serde_json::json;

use crate::analysis::{
    coefficient_gradient, eigen_trace_table, l2_rate, observability_ratios, rate_sweep,
    rellich_residual, Mode, RateTable, SweepParams,
};
use crate::cell::{flux_corrector, flux_field, homogenize, solve_correctors};
use crate::coeff::{build_field, PeriodicCoefficientField};
use crate::config::{Command, ExperimentConfig};
use crate::elliptic::dirichlet_correctors;
use crate::fem::{Grid, TensorField};
use crate::hum::{solve_control, ControlProblem, SolveMethod};
use crate::io::{fmt_f64, write_array, write_manifest};
use crate::spectral::{eigenpairs, frequency_threshold};
use crate::wave::{integrate, stable_dt, WaveState};
use crate::{Error, Result};

/// A CSV cell: text label or formatted float.
enum Cell {
    Text(&'static str),
    Num(f64),
    Int(usize),
}

fn write_table(path: &Path, header: &[&str], rows: &[Vec<Cell>]) -> Result<()> {
    let mut s = String::new();
    s.push_str(&header.join(","));
    s.push('\n');
    for row in rows {
        let mut first = true;
        for c in row {
            if !first {
                s.push(',');
            }
            first = false;
            match c {
                Cell::Text(t) => s.push_str(t),
                Cell::Num(v) => s.push_str(&fmt_f64(*v)),
                Cell::Int(v) => s.push_str(&v.to_string()),
            }
        }
        s.push('\n');
    }
    std::fs::write(path, s)?;
    Ok(())
}

fn sweep_params(cfg: &ExperimentConfig) -> SweepParams {
    SweepParams {
        nodes_per_eps: cfg.nodes_per_eps,
        min_nodes: cfg.min_nodes,
        cell_resolution: cfg.cell_resolution,
        t_end: cfg.time_horizon.unwrap_or(0.5),
        cfl: cfg.cfl,
        tol: cfg.tol,
        ..SweepParams::default()
    }
}

/// Fixed reference data for the rate sweeps: two low modes with mixed
/// displacement and velocity content.
fn default_modes(d: usize) -> Vec<Mode> {
    if d == 1 {
        vec![Mode { k: [1, 0], a: 1.0, b: 0.0 }, Mode { k: [2, 0], a: 0.3, b: 0.5 }]
    } else {
        vec![Mode { k: [1, 1], a: 1.0, b: 0.0 }, Mode { k: [2, 1], a: 0.3, b: 0.5 }]
    }
}

fn scenario_field(cfg: &ExperimentConfig) -> Result<PeriodicCoefficientField> {
    build_field(&cfg.scenario.field, cfg.scenario.mu, cfg.scenario.lipschitz)
}

fn domain_grid(cfg: &ExperimentConfig, eps: f64) -> Grid {
    let n = cfg.grid_elements(eps);
    let mut arr = [0usize; 2];
    for (i, &v) in n.iter().enumerate() {
        arr[i] = v;
    }
    Grid::domain(&cfg.domain(), arr)
}

fn require_epsilons(cfg: &ExperimentConfig) -> Result<()> {
    if cfg.epsilons.is_empty() {
        return Err(Error::Config("this command needs a non-empty epsilon list".into()));
    }
    Ok(())
}

fn rate_csv(path: &Path, table: &RateTable) -> Result<()> {
    let mut rows = Vec::new();
    for r in &table.rows {
        rows.push(vec![
            Cell::Num(r.eps),
            Cell::Num(r.h),
            Cell::Num(r.dt),
            Cell::Text("energy"),
            Cell::Num(r.energy_err),
        ]);
        rows.push(vec![
            Cell::Num(r.eps),
            Cell::Num(r.h),
            Cell::Num(r.dt),
            Cell::Text("l2"),
            Cell::Num(r.l2_err),
        ]);
        rows.push(vec![
            Cell::Num(r.eps),
            Cell::Num(r.h),
            Cell::Num(r.dt),
            Cell::Text("ratio"),
            Cell::Num(r.ratio_main),
        ]);
    }
    write_table(path, &["epsilon", "h", "dt", "metric", "value"], &rows)
}

fn fit_json(fit: &Option<(f64, f64, f64)>) -> serde_json::Value {
    match fit {
        Some((s, i, r2)) => json!({ "slope": s, "intercept": i, "r2": r2 }),
        None => serde_json::Value::Null,
    }
}

fn run_cell(cfg: &ExperimentConfig, out: &Path) -> Result<(Vec<String>, serde_json::Value)> {
    let field = scenario_field(cfg)?;
    let cset = solve_correctors(&field, cfg.cell_resolution, cfg.tol)?;
    let hat = homogenize(&field, &cset)?;
    let d = field.d;
    let flat: Vec<f64> =
        (0..d).flat_map(|i| (0..d).map(move |j| (i, j))).map(|(i, j)| hat.a[i][j]).collect();
    write_array(&out.join("a_hat.txt"), 1, [d * d, 1], &[&flat])?;
    let mut rows = Vec::new();
    for i in 0..d {
        for j in 0..d {
            rows.push(vec![Cell::Int(i), Cell::Int(j), Cell::Num(hat.a[i][j])]);
        }
    }
    write_table(&out.join("cell.csv"), &["i", "j", "a_hat"], &rows)?;
    let summary = json!({
        "eig_min": hat.eig_min,
        "eig_max": hat.eig_max,
        "chi_sup_norms": cset.sup_norms,
        "solver_residuals": cset.residuals,
    });
    Ok((vec!["a_hat.txt".into(), "cell.csv".into()], summary))
}

fn run_correctors(cfg: &ExperimentConfig, out: &Path) -> Result<(Vec<String>, serde_json::Value)> {
    require_epsilons(cfg)?;
    let field = scenario_field(cfg)?;
    let cset = solve_correctors(&field, cfg.cell_resolution, cfg.tol)?;
    let hat = homogenize(&field, &cset)?;
    let b = flux_field(&cset, &hat);
    let phi = flux_corrector(&b, cfg.tol)?;
    let chi_max = cset.sup_norms.iter().fold(0.0f64, |m, &v| m.max(v));
    let mut rows = Vec::new();
    for &eps in &cfg.epsilons {
        let grid = domain_grid(cfg, eps);
        let corr = dirichlet_correctors(&field, eps, &grid, cfg.tol)?;
        for (j, &sup) in corr.sup_norms.iter().enumerate() {
            rows.push(vec![
                Cell::Num(eps),
                Cell::Int(j),
                Cell::Num(sup),
                Cell::Num(2.0 * eps * chi_max),
                Cell::Num(corr.min_boundary_det),
            ]);
        }
    }
    write_table(
        &out.join("correctors.csv"),
        &["epsilon", "direction", "sup_deviation", "bound", "min_boundary_det"],
        &rows,
    )?;
    let summary = json!({
        "chi_sup_norms": cset.sup_norms,
        "flux_divergence_residual": b.divergence_residual,
        "flux_corrector_sup": phi.sup_norm,
        "flux_reconstruction_residual": phi.reconstruction_residual,
    });
    Ok((vec!["correctors.csv".into()], summary))
}

fn run_rate(
    cfg: &ExperimentConfig,
    out: &Path,
    l2: bool,
) -> Result<(Vec<String>, serde_json::Value)> {
    require_epsilons(cfg)?;
    let field = scenario_field(cfg)?;
    let p = sweep_params(cfg);
    let modes = default_modes(field.d);
    let table = if l2 {
        l2_rate(&field, &cfg.domain(), &cfg.epsilons, modes, &p)?
    } else {
        rate_sweep(&field, &cfg.domain(), &cfg.epsilons, modes, &p)?
    };
    let name = if l2 { "l2rate.csv" } else { "rate.csv" };
    rate_csv(&out.join(name), &table)?;
    let summary = json!({
        "floor": table.floor,
        "fit_energy": fit_json(&table.slope_energy),
        "fit_l2": fit_json(&table.slope_l2),
    });
    Ok((vec![name.into()], summary))
}

fn run_observe(cfg: &ExperimentConfig, out: &Path) -> Result<(Vec<String>, serde_json::Value)> {
    require_epsilons(cfg)?;
    let field = scenario_field(cfg)?;
    let p = sweep_params(cfg);
    let report = observability_ratios(
        &field,
        &cfg.domain(),
        &cfg.epsilons,
        cfg.c0,
        cfg.time_horizon,
        cfg.trials,
        cfg.seed,
        &p,
    )?;
    let rows: Vec<Vec<Cell>> = report
        .rows
        .iter()
        .map(|r| {
            vec![
                Cell::Num(r.eps),
                Cell::Num(r.n_threshold),
                Cell::Int(r.trial),
                Cell::Num(r.energy),
                Cell::Num(r.ratio),
                Cell::Int(r.unfiltered as usize),
            ]
        })
        .collect();
    write_table(
        &out.join("observability.csv"),
        &["epsilon", "N", "trial", "energy", "ratio", "unfiltered"],
        &rows,
    )?;
    let per_eps: Vec<Vec<Cell>> = report
        .per_eps
        .iter()
        .map(|&(eps, hi, lo)| vec![Cell::Num(eps), Cell::Num(hi), Cell::Num(lo)])
        .collect();
    write_table(
        &out.join("observability_per_eps.csv"),
        &["epsilon", "max_ratio", "min_ratio"],
        &per_eps,
    )?;
    let summary = json!({
        "t_end": report.t_end,
        "r0": report.r0,
        "upper_spread": report.upper_spread,
        "lower_spread": report.lower_spread,
    });
    Ok((vec!["observability.csv".into(), "observability_per_eps.csv".into()], summary))
}

fn run_traces(cfg: &ExperimentConfig, out: &Path) -> Result<(Vec<String>, serde_json::Value)> {
    require_epsilons(cfg)?;
    let field = scenario_field(cfg)?;
    let mut rows = Vec::new();
    let mut spreads = Vec::new();
    for &eps in &cfg.epsilons {
        let grid = domain_grid(cfg, eps);
        let a_eps = crate::coeff::sample_epsilon(&field, eps, &grid)?;
        let basis = eigenpairs(&grid, &a_eps, cfg.modes, cfg.tol)?;
        let table = eigen_trace_table(&basis, eps);
        let in_range: Vec<f64> =
            table.iter().filter(|r| r.in_range).map(|r| r.ratio).collect();
        if !in_range.is_empty() {
            let hi = in_range.iter().fold(f64::MIN, |m, &v| m.max(v));
            let lo = in_range.iter().fold(f64::MAX, |m, &v| m.min(v));
            spreads.push(json!({ "epsilon": eps, "ratio_spread": hi / lo }));
        }
        for r in table {
            rows.push(vec![
                Cell::Num(eps),
                Cell::Int(r.k),
                Cell::Num(r.lambda),
                Cell::Num(r.trace),
                Cell::Num(r.ratio),
                Cell::Int(r.in_range as usize),
            ]);
        }
    }
    write_table(
        &out.join("traces.csv"),
        &["epsilon", "k", "lambda", "trace", "ratio", "in_range"],
        &rows,
    )?;
    Ok((vec!["traces.csv".into()], json!({ "per_epsilon": spreads })))
}

fn control_for_eps(
    cfg: &ExperimentConfig,
    field: &PeriodicCoefficientField,
    eps: Option<f64>,
) -> Result<(ControlProblem, crate::hum::ControlResult)> {
    let domain = cfg.domain();
    let t_end = cfg.time_horizon.unwrap_or(4.0 * domain.r0());
    let (grid, a) = match eps {
        Some(eps) => {
            let grid = domain_grid(cfg, eps);
            let a = crate::coeff::sample_epsilon(field, eps, &grid)?;
            (grid, a)
        }
        None => {
            // homogenized scenario: constant effective tensor on the
            // minimum-resolution grid
            let cset = solve_correctors(field, cfg.cell_resolution, cfg.tol)?;
            let hat = homogenize(field, &cset)?;
            let mut n = [cfg.min_nodes; 2];
            if domain.d == 1 {
                n[1] = 0;
            }
            let grid = Grid::domain(&domain, n);
            let a = TensorField::constant(domain.d, hat.a, &grid);
            (grid, a)
        }
    };
    let count = cfg.modes.max(4);
    let basis = eigenpairs(&grid, &a, count, cfg.tol)?;
    let threshold = match eps {
        Some(eps) => frequency_threshold(eps, t_end, cfg.c0),
        None => basis.lambdas[count.min(basis.lambdas.len()) - 1] * (1.0 + 1e-12),
    };
    let keep = basis.dim_below(threshold.min(*basis.lambdas.last().unwrap()));
    if keep == 0 {
        return Err(Error::invalid(format!(
            "threshold {threshold:.3} retains no modes (lambda_1 = {:.3})",
            basis.lambdas[0]
        )));
    }
    let regime_flag = match eps {
        Some(eps) => threshold > frequency_threshold(eps, t_end, cfg.c0) + 1e-12,
        None => false,
    };
    // deterministic target data: the two lowest retained modes
    let n = grid.num_nodes();
    let mut theta0 = vec![0.0; n];
    let mut theta1 = vec![0.0; n];
    for i in 0..n {
        theta0[i] = basis.psi[0][i];
        if keep > 1 {
            theta0[i] += 0.5 * basis.psi[1][i];
            theta1[i] = 0.3 * basis.psi[1][i];
        }
    }
    let dt = stable_dt(&grid, field.mu, cfg.cfl);
    let threshold = threshold.min(*basis.lambdas.last().unwrap());
    let problem = ControlProblem::new(
        &grid, &a, basis, threshold, t_end, dt, theta0, theta1, regime_flag,
    )?;
    let method = if problem.keep <= 64 { SolveMethod::Dense } else { SolveMethod::Cg };
    let result = solve_control(&problem, method, cfg.tol)?;
    Ok((problem, result))
}

fn run_control(cfg: &ExperimentConfig, out: &Path) -> Result<(Vec<String>, serde_json::Value)> {
    let field = scenario_field(cfg)?;
    let eps_cases: Vec<Option<f64>> = if cfg.epsilons.is_empty() {
        vec![None]
    } else {
        cfg.epsilons.iter().map(|&e| Some(e)).collect()
    };
    let mut artifacts = Vec::new();
    let mut summaries = Vec::new();
    for (ci, eps) in eps_cases.iter().enumerate() {
        let (problem, result) = control_for_eps(cfg, &field, *eps)?;
        let name = if eps_cases.len() == 1 {
            "control.csv".to_string()
        } else {
            format!("control_{ci}.csv")
        };
        let mut rows = Vec::new();
        for (step, g_row) in result.g.iter().enumerate() {
            let t = step as f64 * result.dt;
            for (bi, &gval) in g_row.iter().enumerate() {
                rows.push(vec![
                    Cell::Num(t),
                    Cell::Int(result.boundary_nodes[bi]),
                    Cell::Num(gval),
                ]);
            }
        }
        write_table(&out.join(&name), &["t", "node", "g"], &rows)?;
        artifacts.push(name);
        summaries.push(json!({
            "epsilon": eps,
            "threshold": result.threshold,
            "retained_modes": problem.keep,
            "regime_flag": problem.regime_flag,
            "condition": result.condition,
            "normal_residual": result.normal_residual,
            "residual_l2": result.residual_l2,
            "residual_h1neg": result.residual_h1neg,
            "control_norm": result.control_norm,
            "data_norm": result.data_norm,
        }));
    }
    Ok((artifacts, json!({ "cases": summaries })))
}

fn run_rellich(cfg: &ExperimentConfig, out: &Path) -> Result<(Vec<String>, serde_json::Value)> {
    require_epsilons(cfg)?;
    let field = scenario_field(cfg)?;
    let domain = cfg.domain();
    let t_end = cfg.time_horizon.unwrap_or(1.0);
    let x0 = {
        let mut c = [0.0; 2];
        for i in 0..domain.d {
            c[i] = 0.5 * domain.lengths[i];
        }
        c
    };
    let mut rows = Vec::new();
    for &eps in &cfg.epsilons {
        // two resolutions per epsilon so the refinement trend is visible
        for refine in 0..2 {
            let base = cfg.grid_elements(eps);
            let mut n = [0usize; 2];
            for (i, &v) in base.iter().enumerate() {
                n[i] = v << refine;
            }
            let grid = Grid::domain(&domain, n);
            let a_eps = crate::coeff::sample_epsilon(&field, eps, &grid)?;
            let basis = eigenpairs(&grid, &a_eps, 4, cfg.tol)?;
            let dt = stable_dt(&grid, field.mu, cfg.cfl) / (1 << refine) as f64;
            let init = WaveState { t: 0.0, u: basis.psi[0].clone(), v: vec![0.0; grid.num_nodes()] };
            let steps = (t_end / dt).ceil() as usize;
            let stride = (steps / 32).max(1);
            let traj = integrate(&grid, &a_eps, &init, None, None, t_end, dt, stride)?;
            let dadx = if field.smooth {
                Some(coefficient_gradient(&field, eps, &grid)?)
            } else {
                None
            };
            let res = rellich_residual(&traj, &a_eps, dadx.as_deref(), x0)?;
            rows.push(vec![
                Cell::Num(eps),
                Cell::Int(n[0]),
                Cell::Num(traj.dt),
                Cell::Num(res),
            ]);
        }
    }
    write_table(&out.join("rellich.csv"), &["epsilon", "n", "dt", "residual"], &rows)?;
    Ok((vec!["rellich.csv".into()], json!({ "t_end": t_end })))
}

/// Execute one experiment. Artifacts and a manifest are written into
/// `cfg.out_dir` (default `out`). On failure the manifest still records
/// the error alongside whatever artifacts were completed.
pub fn run(cfg: &ExperimentConfig) -> Result<PathBuf> {
    cfg.validate()?;
    let out = PathBuf::from(cfg.out_dir.clone().unwrap_or_else(|| "out".into()));
    std::fs::create_dir_all(&out)?;
    let started = std::time::Instant::now();
    let outcome = match cfg.command {
        Command::Cell => run_cell(cfg, &out),
        Command::Correctors => run_correctors(cfg, &out),
        Command::Rate => run_rate(cfg, &out, false),
        Command::L2rate => run_rate(cfg, &out, true),
        Command::Observe => run_observe(cfg, &out),
        Command::Traces => run_traces(cfg, &out),
        Command::Control => run_control(cfg, &out),
        Command::Rellich => run_rellich(cfg, &out),
    };
    let elapsed = started.elapsed().as_secs_f64();
    let (artifacts, summary, status, err) = match &outcome {
        Ok((a, s)) => (a.clone(), s.clone(), "ok", None),
        Err(e) => (Vec::new(), serde_json::Value::Null, "failed", Some(e.to_string())),
    };
    let manifest = json!({
        "config": cfg,
        "version": env!("CARGO_PKG_VERSION"),
        "elapsed_seconds": elapsed,
        "artifacts": artifacts,
        "status": status,
        "error": err,
        "summary": summary,
    });
    write_manifest(&out.join("manifest.json"), &manifest)?;
    outcome?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(json: &str) -> ExperimentConfig {
        serde_json::from_str(json).unwrap()
    }

    fn tmp_out(tag: &str) -> String {
        let dir = std::env::temp_dir().join(format!("hw_runner_{tag}"));
        let _ = std::fs::remove_dir_all(&dir);
        dir.to_str().unwrap().to_string()
    }

    #[test]
    fn cell_command_writes_a_hat() {
        let out = tmp_out("cell");
        let cfg = config(&format!(
            r#"{{
                "command": "cell",
                "scenario": {{ "field": {{ "kind": "preset", "name": "cosine-1d" }} }},
                "cell_resolution": 256,
                "out_dir": "{out}"
            }}"#
        ));
        let dir = run(&cfg).unwrap();
        let (_, _, fields) = crate::io::read_array(&dir.join("a_hat.txt")).unwrap();
        assert!((fields[0][0] - 0.5).abs() <= 1e-4, "a_hat = {}", fields[0][0]);
        assert!(dir.join("manifest.json").exists());
        assert!(dir.join("cell.csv").exists());
    }

    #[test]
    fn control_zero_modes_is_rejected_cleanly() {
        let out = tmp_out("badcontrol");
        let cfg = config(&format!(
            r#"{{
                "command": "control",
                "scenario": {{ "field": {{ "kind": "preset", "name": "constant" }} }},
                "epsilons": [0.125],
                "nodes_per_eps": 8,
                "min_nodes": 32,
                "time_horizon": 1000.0,
                "modes": 6,
                "out_dir": "{out}"
            }}"#
        ));
        // enormous T makes the threshold tiny: no retained modes
        let err = run(&cfg);
        assert!(err.is_err());
        // the manifest still records the failure
        let manifest = std::fs::read_to_string(Path::new(&out).join("manifest.json")).unwrap();
        assert!(manifest.contains("\"status\": \"failed\""));
    }

    #[test]
    fn rate_command_reruns_byte_identical() {
        let out1 = tmp_out("rate1");
        let out2 = tmp_out("rate2");
        let mk = |out: &str| {
            config(&format!(
                r#"{{
                    "command": "rate",
                    "scenario": {{ "field": {{ "kind": "preset", "name": "cosine-1d" }} }},
                    "epsilons": [0.125, 0.0625],
                    "min_nodes": 32,
                    "cell_resolution": 64,
                    "time_horizon": 0.25,
                    "out_dir": "{out}"
                }}"#
            ))
        };
        let d1 = run(&mk(&out1)).unwrap();
        let d2 = run(&mk(&out2)).unwrap();
        let b1 = std::fs::read(d1.join("rate.csv")).unwrap();
        let b2 = std::fs::read(d2.join("rate.csv")).unwrap();
        assert_eq!(b1, b2);
    }
}
