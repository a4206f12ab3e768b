//! Flat `section.key=value` experiment configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown or repeated
//! keys are errors. Vectors are comma separated, push lists are
//! `t_start,duration,fx,fy` groups separated by `;`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::Vector2;

use crate::bo::{CostParams, TuneSettings};
use crate::error::{Error, Result};
use crate::gait_qp::WEIGHT_MAX;
use crate::plant::{DisturbanceScenario, Push, ScenarioLabel, SimConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub sim: SimConfig,
    pub scenarios: BTreeMap<ScenarioLabel, DisturbanceScenario>,
    pub cost: CostParams,
    pub tuner: TuneSettings,
    pub grid_n: usize,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let sim = SimConfig::default();
        ExperimentConfig {
            cost: CostParams {
                h_des: sim.params.com_height,
                ..CostParams::default()
            },
            sim,
            scenarios: ScenarioLabel::ALL
                .iter()
                .map(|&l| (l, DisturbanceScenario::default_for(l)))
                .collect(),
            tuner: TuneSettings::default(),
            grid_n: 21,
            output_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.cost.validate()?;
        self.tuner.validate()?;
        if self.grid_n < 2 {
            return Err(Error::Config("grid.n must be >= 2".into()));
        }
        for (label, sc) in &self.scenarios {
            if sc.label != *label {
                return Err(Error::Config(format!("scenario {label} has label {}", sc.label)));
            }
            sc.validate()?;
        }
        Ok(())
    }

    pub fn scenario(&self, label: ScenarioLabel) -> Result<&DisturbanceScenario> {
        self.scenarios
            .get(&label)
            .ok_or_else(|| Error::Config(format!("scenario {label} is not defined")))
    }
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.trim()
        .parse::<f64>()
        .ok()
        .filter(|x| x.is_finite())
        .ok_or_else(|| Error::Config(format!("{key}: expected a number, got '{v}'")))
}

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: expected a non-negative integer, got '{v}'")))
}

fn parse_u64(key: &str, v: &str) -> Result<u64> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: expected a non-negative integer, got '{v}'")))
}

fn parse_list(key: &str, v: &str, n: usize) -> Result<Vec<f64>> {
    let parts: Vec<&str> = v.split(',').collect();
    if parts.len() != n {
        return Err(Error::Config(format!("{key}: expected {n} comma-separated numbers, got '{v}'")));
    }
    parts.iter().map(|p| parse_f64(key, p)).collect()
}

fn parse_vec2(key: &str, v: &str) -> Result<Vector2<f64>> {
    let p = parse_list(key, v, 2)?;
    Ok(Vector2::new(p[0], p[1]))
}

fn parse_range(key: &str, v: &str) -> Result<(f64, f64)> {
    let p = parse_list(key, v, 2)?;
    Ok((p[0], p[1]))
}

fn parse_pushes(key: &str, v: &str) -> Result<Vec<Push>> {
    v.split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|group| {
            let p = parse_list(key, group, 4)?;
            Ok(Push {
                t_start: p[0],
                duration: p[1],
                force: Vector2::new(p[2], p[3]),
            })
        })
        .collect()
}

fn set(cfg: &mut ExperimentConfig, key: &str, v: &str, h_des_given: &mut bool) -> Result<()> {
    let sim = &mut cfg.sim;
    match key {
        "sim.total_time" => sim.total_time = parse_f64(key, v)?,
        "sim.replan_period" => sim.replan_period = parse_f64(key, v)?,
        "sim.mass" => sim.mass = parse_f64(key, v)?,
        "sim.fall_distance" => sim.fall_distance = parse_f64(key, v)?,
        "sim.com_height" => sim.params.com_height = parse_f64(key, v)?,
        "sim.gravity" => sim.params.gravity = parse_f64(key, v)?,
        "sim.dt_plan" => sim.params.dt_plan = parse_f64(key, v)?,
        "sim.dt_plant" => sim.params.dt_plant = parse_f64(key, v)?,
        "sim.v_des" => sim.v_des = parse_vec2(key, v)?,
        "sim.horizon" => sim.horizon = parse_usize(key, v)?,
        "sim.n_footsteps" => sim.n_footsteps = parse_usize(key, v)?,
        "sim.mu_design" => sim.mu_design = parse_f64(key, v)?,
        "sim.slip_gain" => sim.slip_gain = parse_f64(key, v)?,
        "sim.weight_scale" => sim.weight_scale = parse_f64(key, v)?,
        "geom.half_length" => sim.geom.half_length = parse_f64(key, v)?,
        "geom.half_width" => sim.geom.half_width = parse_f64(key, v)?,
        "geom.step_width" => sim.geom.step_width = parse_f64(key, v)?,
        "geom.step_time" => sim.geom.step_time = parse_f64(key, v)?,
        "geom.side0" => sim.geom.side0 = v.trim().parse().map_err(|e: Error| Error::Config(format!("{key}: {e}")))?,
        "geom.reach_half_extent" => sim.geom.reach_half_extent = parse_vec2(key, v)?,
        "tuner.lambda" => cfg.cost.lambda = parse_f64(key, v)?,
        "tuner.h_des" => {
            cfg.cost.h_des = parse_f64(key, v)?;
            *h_des_given = true;
        }
        "tuner.threshold" => cfg.cost.threshold = parse_f64(key, v)?,
        "tuner.budget" => cfg.tuner.budget = parse_usize(key, v)?,
        "tuner.init_points" => cfg.tuner.init_points = parse_usize(key, v)?,
        "tuner.seed" => cfg.tuner.seed = parse_u64(key, v)?,
        "bounds.beta" => cfg.tuner.bounds.beta = parse_range(key, v)?,
        "bounds.gamma" => cfg.tuner.bounds.gamma = parse_range(key, v)?,
        "grid.n" => cfg.grid_n = parse_usize(key, v)?,
        "output.dir" => cfg.output_dir = PathBuf::from(v.trim()),
        _ => {
            let rest = key
                .strip_prefix("scenario.")
                .ok_or_else(|| Error::Config(format!("unknown key '{key}'")))?;
            let (label, field) = rest
                .split_once('.')
                .ok_or_else(|| Error::Config(format!("unknown key '{key}'")))?;
            let label: ScenarioLabel = label
                .parse()
                .map_err(|e: Error| Error::Config(format!("{key}: {e}")))?;
            let sc = cfg.scenarios.get_mut(&label).expect("all labels present");
            match field {
                "pushes" => sc.pushes = parse_pushes(key, v)?,
                "mu_actual" => sc.mu_actual = parse_f64(key, v)?,
                "sensor_noise_std" => sc.sensor_noise_std = parse_f64(key, v)?,
                "seed" => sc.seed = parse_u64(key, v)?,
                _ => return Err(Error::Config(format!("unknown key '{key}'"))),
            }
        }
    }
    Ok(())
}

/// Parses config text over the defaults and validates the result.
pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    let mut seen = std::collections::BTreeSet::new();
    let mut h_des_given = false;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got '{line}'", lineno + 1)))?;
        let key = key.trim();
        if !seen.insert(key.to_string()) {
            return Err(Error::Config(format!("line {}: duplicate key '{key}'", lineno + 1)));
        }
        set(&mut cfg, key, value, &mut h_des_given)
            .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
    }
    if !h_des_given {
        cfg.cost.h_des = cfg.sim.params.com_height;
    }
    for (lo, hi, name) in [
        (cfg.tuner.bounds.beta.0, cfg.tuner.bounds.beta.1, "bounds.beta"),
        (cfg.tuner.bounds.gamma.0, cfg.tuner.bounds.gamma.1, "bounds.gamma"),
    ] {
        if !(0.0 <= lo && lo <= hi && hi <= WEIGHT_MAX) {
            return Err(Error::Config(format!(
                "{name} = {lo},{hi}: weight ranges must satisfy 0 <= lo <= hi <= {WEIGHT_MAX}"
            )));
        }
    }
    cfg.validate().map_err(|e| match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    })?;
    Ok(cfg)
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_str(&text)
}

fn pushes_str(pushes: &[Push]) -> String {
    pushes
        .iter()
        .map(|p| format!("{},{},{},{}", p.t_start, p.duration, p.force[0], p.force[1]))
        .collect::<Vec<_>>()
        .join(";")
}

/// Writes every key with its current value; parsing the output gives back
/// the same config.
pub fn serialize_config(cfg: &ExperimentConfig) -> String {
    let s = &cfg.sim;
    let mut out = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(out, "{k}={v}");
    };
    kv("sim.total_time", s.total_time.to_string());
    kv("sim.replan_period", s.replan_period.to_string());
    kv("sim.mass", s.mass.to_string());
    kv("sim.fall_distance", s.fall_distance.to_string());
    kv("sim.com_height", s.params.com_height.to_string());
    kv("sim.gravity", s.params.gravity.to_string());
    kv("sim.dt_plan", s.params.dt_plan.to_string());
    kv("sim.dt_plant", s.params.dt_plant.to_string());
    kv("sim.v_des", format!("{},{}", s.v_des[0], s.v_des[1]));
    kv("sim.horizon", s.horizon.to_string());
    kv("sim.n_footsteps", s.n_footsteps.to_string());
    kv("sim.mu_design", s.mu_design.to_string());
    kv("sim.slip_gain", s.slip_gain.to_string());
    kv("sim.weight_scale", s.weight_scale.to_string());
    kv("geom.half_length", s.geom.half_length.to_string());
    kv("geom.half_width", s.geom.half_width.to_string());
    kv("geom.step_width", s.geom.step_width.to_string());
    kv("geom.step_time", s.geom.step_time.to_string());
    kv("geom.side0", s.geom.side0.as_str().to_string());
    kv(
        "geom.reach_half_extent",
        format!("{},{}", s.geom.reach_half_extent[0], s.geom.reach_half_extent[1]),
    );
    for (label, sc) in &cfg.scenarios {
        kv(&format!("scenario.{label}.pushes"), pushes_str(&sc.pushes));
        kv(&format!("scenario.{label}.mu_actual"), sc.mu_actual.to_string());
        kv(&format!("scenario.{label}.sensor_noise_std"), sc.sensor_noise_std.to_string());
        kv(&format!("scenario.{label}.seed"), sc.seed.to_string());
    }
    kv("tuner.lambda", cfg.cost.lambda.to_string());
    kv("tuner.h_des", cfg.cost.h_des.to_string());
    kv("tuner.threshold", cfg.cost.threshold.to_string());
    kv("tuner.budget", cfg.tuner.budget.to_string());
    kv("tuner.init_points", cfg.tuner.init_points.to_string());
    kv("tuner.seed", cfg.tuner.seed.to_string());
    let b = cfg.tuner.bounds;
    kv("bounds.beta", format!("{},{}", b.beta.0, b.beta.1));
    kv("bounds.gamma", format!("{},{}", b.gamma.0, b.gamma.1));
    kv("grid.n", cfg.grid_n.to_string());
    kv("output.dir", cfg.output_dir.display().to_string());
    out
}
