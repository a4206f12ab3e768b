use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use robust_gait::harness::{
    evaluate, footsteps_csv, grid_search, parse_config, plan_csv, plot_data_csv, run_scenario, trajectory_csv,
    write_grid, write_text, ExperimentConfig,
};
use robust_gait::plant::ScenarioLabel;
use robust_gait::Error;

#[derive(Parser)]
#[command(name = "robust-gait", version, about = "Walking pattern generation with Bayesian tuning of cost weights")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Config file (flat key=value); defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, overrides output.dir.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Delta {
    #[arg(long, default_value_t = 1000.0)]
    beta: f64,
    #[arg(long, default_value_t = 1000.0)]
    gamma: f64,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one QP from the standing start and write the plan.
    Plan {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        delta: Delta,
    },
    /// Run one closed-loop rollout and write its trajectory.
    Rollout {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_label)]
        scenario: ScenarioLabel,
        #[command(flatten)]
        delta: Delta,
    },
    /// Tune (beta, gamma) with Bayesian optimization.
    Tune {
        #[command(flatten)]
        common: Common,
        /// Scenario to tune; all four when omitted.
        #[arg(long, value_parser = parse_label)]
        scenario: Option<ScenarioLabel>,
        #[arg(long)]
        budget: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Exhaustive grid evaluation.
    Grid {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_label)]
        scenario: ScenarioLabel,
        /// Points per axis, overrides grid.n.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Rewrite plot data from a history CSV.
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_label)]
        scenario: ScenarioLabel,
    },
}

fn parse_label(s: &str) -> Result<ScenarioLabel, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn load(common: &Common) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &common.config {
        Some(p) => parse_config(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn history_from_csv(text: &str) -> Result<robust_gait::bo::TuneHistory, Error> {
    let bad = |l: &str| Error::InvalidInput(format!("bad history row '{l}'"));
    let mut lines = text.lines();
    if lines.next() != Some("call_index,beta,gamma,J,fell,min_so_far") {
        return Err(Error::InvalidInput("missing history header".into()));
    }
    let mut samples = Vec::new();
    for l in lines.filter(|l| !l.is_empty()) {
        let f: Vec<&str> = l.split(',').collect();
        if f.len() != 6 {
            return Err(bad(l));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(l));
        let j = num(f[3])?;
        samples.push(robust_gait::bo::ObjectiveSample {
            beta: num(f[1])?,
            gamma: num(f[2])?,
            j,
            fell: f[4] == "1",
            capped: j == robust_gait::bo::PENALTY_CAP,
            eval_index: samples.len(),
        });
    }
    robust_gait::bo::TuneHistory::from_samples(samples)
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Plan { common, delta } => {
            let cfg = load(&common)?;
            let plan = robust_gait::harness::plan_once(&cfg, delta.beta, delta.gamma)?;
            let p = cfg.output_dir.join("plan.csv");
            write_text(&p, &plan_csv(&plan, cfg.sim.params.dt_plan))?;
            let f = cfg.output_dir.join("footsteps.csv");
            write_text(&f, &footsteps_csv(&plan))?;
            println!("wrote {} and {}", p.display(), f.display());
        }
        Command::Rollout { common, scenario, delta } => {
            let cfg = load(&common)?;
            cfg.validate()?;
            let e = evaluate(scenario, &cfg, delta.beta, delta.gamma)?;
            let p = cfg.output_dir.join(format!("rollout_{scenario}.csv"));
            write_text(&p, &trajectory_csv(&e.rollout))?;
            println!("scenario {scenario}: J={} fell={} slip={}", e.j, e.fell, e.rollout.slip_accum);
            println!("wrote {}", p.display());
        }
        Command::Tune {
            common,
            scenario,
            budget,
            seed,
        } => {
            let mut cfg = load(&common)?;
            if let Some(b) = budget {
                cfg.tuner.budget = b;
            }
            if let Some(s) = seed {
                cfg.tuner.seed = s;
            }
            let labels = scenario.map_or(ScenarioLabel::ALL.to_vec(), |l| vec![l]);
            for label in labels {
                let r = run_scenario(label, &cfg)?;
                println!(
                    "scenario {label}: best beta={} gamma={} J={} ({} calls, {:.1}s)",
                    r.best_delta[0],
                    r.best_delta[1],
                    r.best_j,
                    r.history.samples.len(),
                    r.elapsed.as_secs_f64()
                );
            }
        }
        Command::Grid { common, scenario, n } => {
            let cfg = load(&common)?;
            let n = n.unwrap_or(cfg.grid_n);
            let g = grid_search(scenario, &cfg, n)?;
            let p = write_grid(scenario, &g, &cfg.output_dir)?;
            println!(
                "scenario {scenario}: grid best beta={} gamma={} J={}",
                g.best.beta, g.best.gamma, g.best.j
            );
            println!("wrote {}", p.display());
        }
        Command::Report { common, scenario } => {
            let cfg = load(&common)?;
            let src = cfg.output_dir.join(format!("history_{scenario}.csv"));
            let text = std::fs::read_to_string(&src).map_err(|e| Error::Io { path: src.clone(), source: e })?;
            let h = history_from_csv(&text)?;
            let p = cfg.output_dir.join(format!("plot_{scenario}.csv"));
            write_text(&p, &plot_data_csv(&h))?;
            println!("wrote {}", p.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::InvalidInput(_) | Error::InvalidParameter(_) | Error::Io { .. } => {
                    ExitCode::from(2)
                }
                Error::Infeasible | Error::Numerical(_) => ExitCode::from(3),
            }
        }
    }
}
