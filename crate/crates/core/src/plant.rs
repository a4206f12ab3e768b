//! Disturbed LIP plant driven by the replanning gait MPC.
//!
//! Every `replan_period` the gait QP is rebuilt from the measured plant state
//! and the first planned jerks are applied at the plant rate. The plant adds
//! push accelerations, limits the contact acceleration by the true friction
//! coefficient (the deficit makes the stance foot slide) and stops when the
//! CoM or its capture point leaves the fall region around the stance foot.

use nalgebra::Vector2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::footstep::{nominal_footsteps, FootGeometry, SupportState};
use crate::gait_qp::{build_qp, extract_plan, solve_qp, GaitPlan, QpStatus, Weights};
use crate::lipm::{discretize, integer_ratio, rcof_of, step_state, LipParams, LipState};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Push {
    pub t_start: f64,
    pub duration: f64,
    /// Force on the CoM (N).
    pub force: Vector2<f64>,
}

impl Push {
    pub fn is_active(&self, t: f64) -> bool {
        t >= self.t_start && t < self.t_start + self.duration
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ScenarioLabel {
    /// No disturbance.
    A,
    /// Pushes.
    B,
    /// Reduced ground friction.
    C,
    /// Pushes and reduced friction.
    D,
}

impl ScenarioLabel {
    pub const ALL: [ScenarioLabel; 4] = [ScenarioLabel::A, ScenarioLabel::B, ScenarioLabel::C, ScenarioLabel::D];

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioLabel::A => "a",
            ScenarioLabel::B => "b",
            ScenarioLabel::C => "c",
            ScenarioLabel::D => "d",
        }
    }
}

impl std::fmt::Display for ScenarioLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ScenarioLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "a" => Ok(ScenarioLabel::A),
            "b" => Ok(ScenarioLabel::B),
            "c" => Ok(ScenarioLabel::C),
            "d" => Ok(ScenarioLabel::D),
            _ => Err(Error::InvalidInput(format!("unknown scenario '{s}' (expected a, b, c or d)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DisturbanceScenario {
    pub label: ScenarioLabel,
    /// Sorted by start time.
    pub pushes: Vec<Push>,
    /// True ground friction coefficient, unknown to the planner.
    pub mu_actual: f64,
    /// Standard deviation of the velocity measurement noise (m/s).
    pub sensor_noise_std: f64,
    pub seed: u64,
}

pub const DEFAULT_PUSH_FORCE: f64 = 250.0;
pub const DEFAULT_PUSH_DURATION: f64 = 0.1;
pub const DEFAULT_LOW_FRICTION: f64 = 0.1;

impl DisturbanceScenario {
    pub fn default_for(label: ScenarioLabel) -> Self {
        let pushes = vec![
            Push {
                t_start: 2.0,
                duration: DEFAULT_PUSH_DURATION,
                force: Vector2::new(0.0, -DEFAULT_PUSH_FORCE),
            },
            Push {
                t_start: 4.0,
                duration: DEFAULT_PUSH_DURATION,
                force: Vector2::new(DEFAULT_PUSH_FORCE, 0.0),
            },
        ];
        let (pushes, mu_actual) = match label {
            ScenarioLabel::A => (Vec::new(), 1.0),
            ScenarioLabel::B => (pushes, 1.0),
            ScenarioLabel::C => (Vec::new(), DEFAULT_LOW_FRICTION),
            ScenarioLabel::D => (pushes, DEFAULT_LOW_FRICTION),
        };
        DisturbanceScenario {
            label,
            pushes,
            mu_actual,
            sensor_noise_std: 0.01,
            seed: label as u64 + 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu_actual >= 0.0 && self.mu_actual.is_finite()) {
            return Err(Error::InvalidParameter("mu_actual must be >= 0".into()));
        }
        if !(self.sensor_noise_std >= 0.0 && self.sensor_noise_std.is_finite()) {
            return Err(Error::InvalidParameter("sensor_noise_std must be >= 0".into()));
        }
        for p in &self.pushes {
            if !(p.duration > 0.0) || !p.t_start.is_finite() || p.t_start < 0.0 {
                return Err(Error::InvalidParameter("push needs t_start >= 0 and duration > 0".into()));
            }
            if !(p.force[0].is_finite() && p.force[1].is_finite()) {
                return Err(Error::InvalidParameter("push force must be finite".into()));
            }
        }
        if self.pushes.windows(2).any(|w| w[0].t_start > w[1].t_start) {
            return Err(Error::InvalidParameter("pushes must be sorted by t_start".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub total_time: f64,
    pub replan_period: f64,
    /// Robot mass (kg).
    pub mass: f64,
    pub fall_distance: f64,
    pub params: LipParams,
    pub geom: FootGeometry,
    pub v_des: Vector2<f64>,
    /// Planner horizon in samples.
    pub horizon: usize,
    /// Free footsteps in the planner horizon.
    pub n_footsteps: usize,
    /// Friction coefficient assumed by the planner.
    pub mu_design: f64,
    /// Ratio of body mass to foot mass. The unmet contact force accelerates
    /// the stance foot by `slip_gain * deficit`.
    pub slip_gain: f64,
    /// Factor applied to beta and gamma before they reach the planner.
    pub weight_scale: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            total_time: 8.0,
            replan_period: 0.1,
            mass: 80.0,
            fall_distance: 0.5,
            params: LipParams::default(),
            geom: FootGeometry::default(),
            v_des: Vector2::new(0.3, 0.0),
            horizon: 16,
            n_footsteps: 2,
            mu_design: 1.0,
            slip_gain: 10.0,
            weight_scale: 0.05,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.geom.validate(self.params.dt_plan)?;
        if !(self.total_time > 0.0 && self.total_time.is_finite()) {
            return Err(Error::InvalidParameter("total_time must be > 0".into()));
        }
        if !(self.mass > 0.0) || !(self.fall_distance > 0.0) || !(self.mu_design > 0.0) {
            return Err(Error::InvalidParameter(
                "mass, fall_distance and mu_design must be > 0".into(),
            ));
        }
        if !(self.slip_gain >= 0.0 && self.slip_gain.is_finite()) {
            return Err(Error::InvalidParameter("slip_gain must be >= 0".into()));
        }
        if !(self.weight_scale > 0.0 && self.weight_scale <= 1.0) {
            return Err(Error::InvalidParameter("weight_scale must be in (0, 1]".into()));
        }
        if self.horizon == 0 || self.n_footsteps == 0 {
            return Err(Error::InvalidParameter("horizon and n_footsteps must be >= 1".into()));
        }
        let replan = self.replan_steps()?;
        if replan > self.horizon * self.params.plant_steps_per_sample()? {
            return Err(Error::InvalidParameter("replan_period exceeds the planner horizon".into()));
        }
        self.n_plant_steps()?;
        self.n_control_samples()?;
        Ok(())
    }

    /// Planner weights for tuned weights.
    pub fn planner_weights(&self, weights: &Weights) -> Weights {
        Weights {
            alpha: weights.alpha,
            beta: weights.beta * self.weight_scale,
            gamma: weights.gamma * self.weight_scale,
        }
    }

    pub fn replan_steps(&self) -> Result<usize> {
        integer_ratio(self.replan_period, self.params.dt_plant).ok_or_else(|| {
            Error::InvalidParameter("replan_period must be a multiple of dt_plant".into())
        })
    }

    /// Number of plant steps over `total_time`.
    pub fn n_plant_steps(&self) -> Result<usize> {
        integer_ratio(self.total_time, self.params.dt_plant).ok_or_else(|| {
            Error::InvalidParameter("total_time must be a multiple of dt_plant".into())
        })
    }

    /// Number of control periods (replans) over `total_time`.
    pub fn n_control_samples(&self) -> Result<usize> {
        integer_ratio(self.total_time, self.replan_period).ok_or_else(|| {
            Error::InvalidParameter("total_time must be a multiple of replan_period".into())
        })
    }

    /// Desired velocity at every control sample.
    pub fn v_des_series(&self) -> Result<Vec<Vector2<f64>>> {
        Ok(vec![self.v_des; self.n_control_samples()?])
    }
}

/// One recorded plant sample, taken at the end of a plant step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectorySample {
    pub t: f64,
    pub com: Vector2<f64>,
    pub vel: Vector2<f64>,
    pub zmp: Vector2<f64>,
    pub rcof: f64,
    pub slip: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutResult {
    /// Noisy CoM velocity at the end of each control period.
    pub measured_vel: Vec<Vector2<f64>>,
    /// CoM position per plant step.
    pub com_traj: Vec<Vector2<f64>>,
    /// Contact ZMP per plant step.
    pub zmp_traj: Vec<Vector2<f64>>,
    pub samples: Vec<TrajectorySample>,
    /// Total stance-foot slide distance (m).
    pub slip_accum: f64,
    pub fell: bool,
    pub fall_time: Option<f64>,
    pub h_terminal: f64,
    /// Number of control samples a full rollout records.
    pub n_samples_total: usize,
    pub n_replans: usize,
}

/// Push acceleration at time `t`.
pub fn apply_disturbance(t: f64, scenario: &DisturbanceScenario, mass: f64) -> Vector2<f64> {
    scenario
        .pushes
        .iter()
        .filter(|p| p.is_active(t))
        .map(|p| p.force / mass)
        .sum()
}

/// Limits the contact acceleration to the friction disk of radius `mu g`.
///
/// Returns the achieved acceleration and the deficit `acc_cmd - achieved`.
pub fn friction_clamp(acc_cmd: &Vector2<f64>, mu_actual: f64, g: f64) -> (Vector2<f64>, Vector2<f64>) {
    let limit = mu_actual * g;
    let norm = acc_cmd.norm();
    if norm <= limit {
        return (*acc_cmd, Vector2::zeros());
    }
    let achieved = if limit > 0.0 { acc_cmd * (limit / norm) } else { Vector2::zeros() };
    (achieved, acc_cmd - achieved)
}

/// Strict test: the CoM or its capture point is farther than `fall_distance`
/// (infinity norm) from the stance foot.
pub fn detect_fall(state: &LipState, support_pos: &Vector2<f64>, config: &SimConfig) -> bool {
    let p = &config.params;
    let capture = state.pos + state.vel * (p.com_height / p.gravity).sqrt();
    (state.pos - support_pos).amax() > config.fall_distance
        || (capture - support_pos).amax() > config.fall_distance
}

struct Support {
    state: SupportState,
    /// Plant steps spent on the current stance foot.
    elapsed: usize,
    slide_vel: Vector2<f64>,
}

/// CoM at rest above the first stance foot, at the start of its support phase.
pub fn initial_state(config: &SimConfig) -> Result<(LipState, SupportState)> {
    let geom = &config.geom;
    let stance = Vector2::new(0.0, geom.side0.sign() * geom.step_width / 2.0);
    let support = SupportState {
        pos: stance,
        side: geom.side0,
        remaining_samples: geom.samples_per_step(config.params.dt_plan)?,
    };
    Ok((LipState::at_rest(stance), support))
}

pub fn rollout(weights: &Weights, scenario: &DisturbanceScenario, config: &SimConfig) -> Result<RolloutResult> {
    weights.validate()?;
    scenario.validate()?;
    config.validate()?;
    let params = &config.params;
    let geom = &config.geom;
    let dt = params.dt_plant;
    let per_sample = params.plant_steps_per_sample()?;
    let per_support = geom.samples_per_step(params.dt_plan)? * per_sample;
    let replan_steps = config.replan_steps()?;
    let n_total = config.n_plant_steps()?;
    let n_control = config.n_control_samples()?;
    let tr = discretize(params, dt)?;
    let v_ref = vec![config.v_des; config.horizon];
    let planner = config.planner_weights(weights);

    let noise = (scenario.sensor_noise_std > 0.0)
        .then(|| Normal::new(0.0, scenario.sensor_noise_std).expect("valid std"));
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);

    let (mut state, first) = initial_state(config)?;
    let mut support = Support {
        state: first,
        elapsed: 0,
        slide_vel: Vector2::zeros(),
    };
    let mut plan: Option<(GaitPlan, usize)> = None;
    let mut exchanges_since_plan = 0;

    let mut out = RolloutResult {
        measured_vel: Vec::with_capacity(n_control),
        com_traj: Vec::with_capacity(n_total),
        zmp_traj: Vec::with_capacity(n_total),
        samples: Vec::with_capacity(n_total),
        slip_accum: 0.0,
        fell: false,
        fall_time: None,
        h_terminal: params.com_height,
        n_samples_total: n_control,
        n_replans: 0,
    };

    for k in 0..n_total {
        let t = k as f64 * dt;

        if support.elapsed == per_support {
            let Some((p, _)) = &plan else {
                unreachable!("a plan exists before the first exchange")
            };
            let next = p
                .footsteps
                .get(exchanges_since_plan)
                .copied()
                .ok_or_else(|| Error::Numerical("plan has no footstep for the support exchange".into()))?;
            support = Support {
                state: SupportState {
                    pos: next,
                    side: support.state.side.opposite(),
                    remaining_samples: 0,
                },
                elapsed: 0,
                slide_vel: Vector2::zeros(),
            };
            exchanges_since_plan += 1;
        }

        if k % replan_steps == 0 {
            let remaining_steps = per_support - support.elapsed;
            support.state.remaining_samples = remaining_steps.div_ceil(per_sample);
            let template = nominal_footsteps(
                &config.v_des,
                geom,
                &support.state,
                config.n_footsteps,
                config.horizon,
                params.dt_plan,
            )?;
            let problem = build_qp(&planner, &state, &v_ref, &template, geom, params, config.mu_design)?;
            let solution = solve_qp(&problem)?;
            out.n_replans += 1;
            if solution.status == QpStatus::Infeasible {
                out.fell = true;
                out.fall_time = Some(t);
                break;
            }
            plan = Some((extract_plan(&solution, &problem, &state, params)?, k));
            exchanges_since_plan = 0;
        }

        let (current, start) = plan.as_ref().expect("planned at k = 0");
        let jerk = current.jerks[((k - start) / per_sample).min(current.jerks.len() - 1)];

        let push = apply_disturbance(t, scenario, config.mass);
        let (contact, deficit) = friction_clamp(&state.acc, scenario.mu_actual, params.gravity);
        let offset = contact - state.acc + push;
        let mut next = step_state(&state, &jerk, &tr);
        next.pos += offset * (0.5 * dt * dt);
        next.vel += offset * dt;

        // The stance foot slides against the unmet contact force; the slide
        // velocity is kept until the foot is lifted.
        let foot_acc = -deficit * config.slip_gain;
        let slide = support.slide_vel * dt + foot_acc * (0.5 * dt * dt);
        support.slide_vel += foot_acc * dt;
        if slide != Vector2::zeros() {
            support.state.pos += slide;
            out.slip_accum += slide.norm();
        }
        support.elapsed += 1;

        let zmp = state.pos - contact * params.omega_inv_sq();
        let rcof = rcof_of(&state, params);
        state = next;

        if (k + 1) % replan_steps == 0 {
            let mut vel = state.vel;
            if let Some(n) = &noise {
                vel += Vector2::new(n.sample(&mut rng), n.sample(&mut rng));
            }
            out.measured_vel.push(vel);
        }
        out.com_traj.push(state.pos);
        out.zmp_traj.push(zmp);
        out.samples.push(TrajectorySample {
            t: (k + 1) as f64 * dt,
            com: state.pos,
            vel: state.vel,
            zmp,
            rcof,
            slip: out.slip_accum,
        });

        if detect_fall(&state, &support.state.pos, config) {
            out.fell = true;
            out.fall_time = Some((k + 1) as f64 * dt);
            break;
        }
    }

    if out.fell {
        out.h_terminal = 0.0;
    }
    Ok(out)
}
