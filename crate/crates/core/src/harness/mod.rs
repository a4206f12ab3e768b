//! Experiment harness: scenario runs, grid oracle and CSV artifacts.

pub mod config;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use nalgebra::Vector2;
use rayon::prelude::*;

use crate::bo::{outer_cost, tune, TuneHistory};
use crate::error::{Error, Result};
use crate::footstep::nominal_footsteps;
use crate::gait_qp::{build_qp, extract_plan, solve_qp, GaitPlan, QpStatus, Weights};
use crate::plant::{initial_state, rollout, RolloutResult, ScenarioLabel};

pub use config::{parse_config, parse_config_str, serialize_config, ExperimentConfig};

/// Outcome of one closed-loop evaluation.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub j: f64,
    pub fell: bool,
    pub rollout: RolloutResult,
}

pub fn evaluate(label: ScenarioLabel, cfg: &ExperimentConfig, beta: f64, gamma: f64) -> Result<Evaluation> {
    let scenario = cfg.scenario(label)?;
    let weights = Weights::tuned(beta, gamma)?;
    let r = rollout(&weights, scenario, &cfg.sim)?;
    let j = outer_cost(&r, &cfg.sim.v_des_series()?, &cfg.cost)?;
    Ok(Evaluation {
        j,
        fell: r.fell,
        rollout: r,
    })
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub label: ScenarioLabel,
    pub config: ExperimentConfig,
    pub history: TuneHistory,
    pub best_delta: Vector2<f64>,
    pub best_j: f64,
    /// Cost from re-running the best weights once more.
    pub reproduced_j: f64,
    pub elapsed: Duration,
    pub files: Vec<PathBuf>,
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn history_csv(history: &TuneHistory) -> String {
    let mut out = String::from("call_index,beta,gamma,J,fell,min_so_far\n");
    for (s, m) in history.samples.iter().zip(&history.min_so_far) {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            s.eval_index + 1,
            s.beta,
            s.gamma,
            s.j,
            u8::from(s.fell),
            m
        );
    }
    out
}

pub fn trajectory_csv(r: &RolloutResult) -> String {
    let mut out = String::from("t,cx,cy,vx,vy,zx,zy,rcof,slip,fell\n");
    let last = r.samples.len().saturating_sub(1);
    for (k, s) in r.samples.iter().enumerate() {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            s.t,
            s.com[0],
            s.com[1],
            s.vel[0],
            s.vel[1],
            s.zmp[0],
            s.zmp[1],
            s.rcof,
            s.slip,
            u8::from(r.fell && k == last)
        );
    }
    out
}

/// Plot data for the cost history: `call_index,J,min_so_far`.
pub fn plot_data_csv(history: &TuneHistory) -> String {
    let mut out = String::from("call_index,J,min_so_far\n");
    for (s, m) in history.samples.iter().zip(&history.min_so_far) {
        let _ = writeln!(out, "{},{},{}", s.eval_index + 1, s.j, m);
    }
    out
}

pub fn emit_plot_data(history: &TuneHistory, path: &Path) -> Result<()> {
    if history.samples.is_empty() {
        return Err(Error::InvalidInput("empty history".into()));
    }
    write_file(path, &plot_data_csv(history))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlotRow {
    pub call_index: usize,
    pub j: f64,
    pub min_so_far: f64,
}

pub fn parse_plot_data(text: &str) -> Result<Vec<PlotRow>> {
    let mut lines = text.lines();
    if lines.next() != Some("call_index,J,min_so_far") {
        return Err(Error::InvalidInput("missing plot data header".into()));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let bad = || Error::InvalidInput(format!("bad plot data row '{l}'"));
            if f.len() != 3 {
                return Err(bad());
            }
            Ok(PlotRow {
                call_index: f[0].parse().map_err(|_| bad())?,
                j: f[1].parse().map_err(|_| bad())?,
                min_so_far: f[2].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

fn report_text(r: &RunReport) -> String {
    let mut out = String::new();
    let best = r.history.best();
    let falls = r.history.samples.iter().filter(|s| s.fell).count();
    let _ = writeln!(out, "# scenario {}", r.label);
    let _ = writeln!(out, "calls={}", r.history.samples.len());
    let _ = writeln!(out, "falls={falls}");
    let _ = writeln!(out, "best_call={}", best.eval_index + 1);
    let _ = writeln!(out, "best_beta={}", r.best_delta[0]);
    let _ = writeln!(out, "best_gamma={}", r.best_delta[1]);
    let _ = writeln!(out, "best_J={}", r.best_j);
    let _ = writeln!(out, "reproduced_J={}", r.reproduced_j);
    for f in &r.files {
        let _ = writeln!(out, "file={}", f.file_name().map(|n| n.to_string_lossy()).unwrap_or_default());
    }
    let _ = writeln!(out, "# config");
    out.push_str(&serialize_config(&r.config));
    out
}

/// Tunes the weights for one scenario and writes history, best trajectory,
/// plot data and a report under `config.output_dir`.
pub fn run_scenario(label: ScenarioLabel, cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    cfg.scenario(label)?;
    let started = Instant::now();
    let history = tune(
        |b, g| {
            let e = evaluate(label, cfg, b, g)?;
            Ok((e.j, e.fell))
        },
        &cfg.tuner,
    )?;
    let best = *history.best();
    let replay = evaluate(label, cfg, best.beta, best.gamma)?;

    let dir = &cfg.output_dir;
    let history_path = dir.join(format!("history_{label}.csv"));
    let traj_path = dir.join(format!("trajectory_{label}.csv"));
    let plot_path = dir.join(format!("plot_{label}.csv"));
    let report_path = dir.join(format!("report_{label}.txt"));
    write_file(&history_path, &history_csv(&history))?;
    write_file(&traj_path, &trajectory_csv(&replay.rollout))?;
    emit_plot_data(&history, &plot_path)?;

    let mut report = RunReport {
        label,
        config: cfg.clone(),
        best_delta: history.best_delta,
        best_j: best.j,
        reproduced_j: replay.j,
        history,
        elapsed: Duration::ZERO,
        files: vec![history_path, traj_path, plot_path, report_path.clone()],
    };
    write_file(&report_path, &report_text(&report))?;
    report.elapsed = started.elapsed();
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub beta: f64,
    pub gamma: f64,
    pub j: f64,
    pub fell: bool,
}

#[derive(Debug, Clone)]
pub struct GridResult {
    pub best: GridPoint,
    /// Row-major over beta then gamma.
    pub table: Vec<GridPoint>,
}

fn linspace(lo: f64, hi: f64, n: usize, i: usize) -> f64 {
    if i + 1 == n {
        hi
    } else {
        lo + (hi - lo) * i as f64 / (n - 1) as f64
    }
}

/// Exhaustive evaluation on a `grid_n` x `grid_n` grid over the bounds.
pub fn grid_search(label: ScenarioLabel, cfg: &ExperimentConfig, grid_n: usize) -> Result<GridResult> {
    if grid_n < 2 {
        return Err(Error::InvalidParameter("grid_n must be >= 2".into()));
    }
    cfg.validate()?;
    let b = cfg.tuner.bounds;
    let table = (0..grid_n * grid_n)
        .into_par_iter()
        .map(|k| {
            let beta = linspace(b.beta.0, b.beta.1, grid_n, k / grid_n);
            let gamma = linspace(b.gamma.0, b.gamma.1, grid_n, k % grid_n);
            let e = evaluate(label, cfg, beta, gamma)?;
            Ok(GridPoint {
                beta,
                gamma,
                j: e.j,
                fell: e.fell,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let best = *table
        .iter()
        .reduce(|a, p| if p.j < a.j { p } else { a })
        .expect("non-empty grid");
    Ok(GridResult { best, table })
}

pub fn grid_csv(grid: &GridResult) -> String {
    let mut out = String::from("beta,gamma,J,fell\n");
    for p in &grid.table {
        let _ = writeln!(out, "{},{},{},{}", p.beta, p.gamma, p.j, u8::from(p.fell));
    }
    out
}

pub fn write_grid(label: ScenarioLabel, grid: &GridResult, dir: &Path) -> Result<PathBuf> {
    let path = dir.join(format!("grid_{label}.csv"));
    write_file(&path, &grid_csv(grid))?;
    Ok(path)
}

/// Single plan from the initial standing state.
pub fn plan_once(cfg: &ExperimentConfig, beta: f64, gamma: f64) -> Result<GaitPlan> {
    cfg.validate()?;
    let sim = &cfg.sim;
    let (init, support) = initial_state(sim)?;
    let template = nominal_footsteps(&sim.v_des, &sim.geom, &support, sim.n_footsteps, sim.horizon, sim.params.dt_plan)?;
    let v_ref = vec![sim.v_des; sim.horizon];
    let weights = sim.planner_weights(&Weights::tuned(beta, gamma)?);
    let problem = build_qp(&weights, &init, &v_ref, &template, &sim.geom, &sim.params, sim.mu_design)?;
    let solution = solve_qp(&problem)?;
    if solution.status == QpStatus::Infeasible {
        return Err(Error::Infeasible);
    }
    extract_plan(&solution, &problem, &init, &sim.params)
}

pub fn plan_csv(plan: &GaitPlan, dt_plan: f64) -> String {
    let mut out = String::from("t,jx,jy,cx,cy,vx,vy,ax,ay,zx,zy,rcof\n");
    for (i, ((j, s), (z, r))) in plan
        .jerks
        .iter()
        .zip(&plan.predicted_com)
        .zip(plan.predicted_zmp.iter().zip(&plan.predicted_rcof))
        .enumerate()
    {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            (i + 1) as f64 * dt_plan,
            j[0],
            j[1],
            s.pos[0],
            s.pos[1],
            s.vel[0],
            s.vel[1],
            s.acc[0],
            s.acc[1],
            z[0],
            z[1],
            r
        );
    }
    out
}

pub fn footsteps_csv(plan: &GaitPlan) -> String {
    let mut out = String::from("k,x,y\n");
    for (k, f) in plan.footsteps.iter().enumerate() {
        let _ = writeln!(out, "{},{},{}", k + 1, f[0], f[1]);
    }
    out
}

pub fn write_text(path: &Path, contents: &str) -> Result<()> {
    write_file(path, contents)
}
