use robust_gait::gait_qp::Weights;
use robust_gait::harness::{evaluate, plan_once, ExperimentConfig};
use robust_gait::plant::{
    apply_disturbance, detect_fall, friction_clamp, initial_state, rollout, DisturbanceScenario, Push, ScenarioLabel,
    SimConfig,
};
use robust_gait::Vector2;

fn quiet(label: ScenarioLabel) -> DisturbanceScenario {
    DisturbanceScenario {
        label,
        pushes: Vec::new(),
        mu_actual: 1.0,
        sensor_noise_std: 0.0,
        seed: 1,
    }
}

#[test]
fn first_window_follows_the_plan() {
    let cfg = ExperimentConfig::default();
    let sim = &cfg.sim;
    for (beta, gamma) in [(1000.0, 1000.0), (100.0, 10.0), (0.0, 500.0)] {
        let plan = plan_once(&cfg, beta, gamma).unwrap();
        let r = rollout(&Weights::tuned(beta, gamma).unwrap(), &quiet(ScenarioLabel::A), sim).unwrap();
        let per_sample = sim.params.plant_steps_per_sample().unwrap();
        let replan = sim.replan_steps().unwrap() / per_sample;
        for i in 0..replan {
            let plant = r.samples[(i + 1) * per_sample - 1];
            let predicted = plan.predicted_com[i];
            assert!((plant.com - predicted.pos).amax() <= 1e-9, "sample {i}");
            assert!((plant.vel - predicted.vel).amax() <= 1e-9, "sample {i}");
        }
    }
}

#[test]
fn huge_impulse_is_a_fall() {
    let sim = SimConfig::default();
    let push = Push {
        t_start: 1.0,
        duration: 0.05,
        force: Vector2::new(1e4, 0.0),
    };
    // velocity jump and capture point offset of this impulse
    let dv = push.force.x * push.duration / sim.mass;
    assert!((dv - 6.25).abs() < 1e-12);
    let offset = dv * (sim.params.com_height / sim.params.gravity).sqrt();
    assert!(offset > sim.fall_distance);

    let scenario = DisturbanceScenario {
        pushes: vec![push],
        ..quiet(ScenarioLabel::B)
    };
    let r = rollout(&Weights::tuned(1000.0, 1000.0).unwrap(), &scenario, &sim).unwrap();
    assert!(r.fell);
    let t = r.fall_time.unwrap();
    assert!((1.0..1.5).contains(&t), "fell at {t}");
}

#[test]
fn rollouts_are_deterministic() {
    let cfg = ExperimentConfig::default();
    for label in ScenarioLabel::ALL {
        let s = cfg.scenario(label).unwrap();
        let w = Weights::tuned(300.0, 70.0).unwrap();
        let a = rollout(&w, s, &cfg.sim).unwrap();
        let b = rollout(&w, s, &cfg.sim).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn nominal_walk_stands_at_start_weights() {
    let cfg = ExperimentConfig::default();
    let e = evaluate(ScenarioLabel::A, &cfg, 1000.0, 1000.0).unwrap();
    assert!(!e.fell);
    assert!(e.j.is_finite());
    assert_eq!(e.rollout.measured_vel.len(), e.rollout.n_samples_total);
}

#[test]
fn no_slip_below_friction_limit() {
    let cfg = ExperimentConfig::default();
    for (beta, gamma) in [(1000.0, 1000.0), (50.0, 50.0), (0.0, 0.0)] {
        let r = rollout(&Weights::tuned(beta, gamma).unwrap(), &quiet(ScenarioLabel::A), &cfg.sim).unwrap();
        let peak = r.samples.iter().map(|s| s.rcof).fold(0.0, f64::max);
        assert!(peak <= 1.0);
        assert_eq!(r.slip_accum, 0.0);
        assert!(r.samples.iter().all(|s| s.slip == 0.0));
    }
}

#[test]
fn disturbances_never_help() {
    let cfg = ExperimentConfig::default();
    for (beta, gamma) in [(1000.0, 1000.0), (100.0, 300.0), (20.0, 20.0)] {
        let a = evaluate(ScenarioLabel::A, &cfg, beta, gamma).unwrap().j;
        let d = evaluate(ScenarioLabel::D, &cfg, beta, gamma).unwrap().j;
        assert!(d >= a, "({beta}, {gamma}): {d} < {a}");
    }
}

#[test]
fn friction_clamp_cases() {
    let g = 9.81;
    let acc = Vector2::new(3.0, 4.0);
    let (ok, deficit) = friction_clamp(&acc, 1.0, g);
    assert_eq!(ok, acc);
    assert_eq!(deficit, Vector2::zeros());
    let (ok, deficit) = friction_clamp(&acc, 0.1, g);
    assert!((ok.norm() - 0.981).abs() < 1e-12);
    assert!((ok + deficit - acc).amax() < 1e-15);
    assert!((ok.x / ok.y - 0.75).abs() < 1e-12);
    let (ok, deficit) = friction_clamp(&acc, 0.0, g);
    assert_eq!(ok, Vector2::zeros());
    assert_eq!(deficit, acc);
}

#[test]
fn push_windows_are_half_open() {
    let s = DisturbanceScenario::default_for(ScenarioLabel::B);
    let mass = 80.0;
    let first = s.pushes[0];
    assert_eq!(apply_disturbance(first.t_start - 1e-9, &s, mass), Vector2::zeros());
    assert_eq!(apply_disturbance(first.t_start, &s, mass), first.force / mass);
    assert_eq!(apply_disturbance(first.t_start + first.duration, &s, mass), Vector2::zeros());
    assert!(DisturbanceScenario::default_for(ScenarioLabel::A).pushes.is_empty());
}

#[test]
fn fall_detection_uses_capture_point() {
    let sim = SimConfig::default();
    let (mut state, support) = initial_state(&sim).unwrap();
    assert!(!detect_fall(&state, &support.pos, &sim));
    state.vel.x = 1.0;
    assert!(!detect_fall(&state, &support.pos, &sim));
    state.vel.x = 2.0;
    assert!(detect_fall(&state, &support.pos, &sim));
    state.vel.x = 0.0;
    state.pos.y += 0.51;
    assert!(detect_fall(&state, &support.pos, &sim));
}

#[test]
fn rejects_bad_inputs() {
    let sim = SimConfig::default();
    let w = Weights::tuned(1.0, 1.0).unwrap();
    let mut s = quiet(ScenarioLabel::A);
    s.mu_actual = -1.0;
    assert!(rollout(&w, &s, &sim).is_err());
    let mut bad = sim.clone();
    bad.weight_scale = 0.0;
    assert!(rollout(&w, &quiet(ScenarioLabel::A), &bad).is_err());
    let mut bad = sim;
    bad.total_time = -1.0;
    assert!(rollout(&w, &quiet(ScenarioLabel::A), &bad).is_err());
}
