//! Command-line entry points: batch runs, trace metrics, gradient checks and
//! the live WebSocket server.

pub mod serve;

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use clap::{Parser, Subcommand};
use wmpc::gradcheck::{check_gradients_with, Family};
use wmpc::harness::{
    compute_metrics, export_trace, load_scenario, load_trace, replay, Failure, Metrics, Scenario, ScenarioError, Session,
    SessionError, TraceRecord,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_SCHEMA: i32 = 2;
pub const EXIT_IK: i32 = 3;
pub const EXIT_DIVERGENCE: i32 = 4;
pub const EXIT_SOLVER: i32 = 5;

#[derive(Debug, Parser)]
#[command(name = "wmpc", version, about = "Waypoint trajectory planner for planar arms")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scenario in closed loop and report metrics.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Write the JSON-lines trace here.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long, default_value_t = 2000)]
        max_steps: usize,
        /// Pace iterations to the sampling time.
        #[arg(long)]
        realtime: bool,
    },
    /// Stream a live closed loop over WebSocket and accept edits.
    Serve {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 8765, value_parser = clap::value_parser!(u16).range(1024..))]
        port: u16,
        /// Upper bound on frames per second sent to each client.
        #[arg(long, default_value_t = 30.0)]
        max_fps: f64,
    },
    /// Compare analytic gradients against finite differences.
    CheckGrad {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        count: usize,
        /// Flip the sign of one family's gradient (self-test of the check).
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
    /// Recompute metrics and replay checks for a trace file.
    Metrics { trace: PathBuf },
}

pub fn scenario_exit_code(e: &ScenarioError) -> i32 {
    match e {
        ScenarioError::Ik { .. } => EXIT_IK,
        _ => EXIT_SCHEMA,
    }
}

pub fn failure_exit_code(failure: Option<Failure>) -> i32 {
    match failure {
        None => EXIT_OK,
        Some(Failure::Divergence) => EXIT_DIVERGENCE,
        Some(Failure::SolverFailure) => EXIT_SOLVER,
    }
}

fn open_scenario(path: &Path) -> Result<Scenario, i32> {
    load_scenario(path).map_err(|e| {
        eprintln!("error: {e}");
        scenario_exit_code(&e)
    })
}

pub fn print_metrics(m: &Metrics) {
    println!("steps               {}", m.steps);
    println!("reached goal        {}", m.reached_goal);
    println!("path length         {:.6} rad", m.path_length);
    println!("duration            {:.3} s", m.trajectory_duration);
    println!("planning time max   {:.3} ms", m.planning_time_max * 1e3);
    println!("planning time avg   {:.3} ms", m.planning_time_avg * 1e3);
    for (i, e) in m.waypoint_pass_errors.iter().enumerate() {
        println!("waypoint {i} error    {e:.3e} rad");
    }
    if let Some(c) = m.min_clearance {
        println!("min clearance       {c:.6} m");
    }
    if let Some(f) = m.failure {
        println!("failure             {f:?}");
    }
    println!("{}", serde_json::json!({ "metrics": m }));
}

pub fn cmd_run(scenario: &Path, trace: Option<&Path>, max_steps: usize, realtime: bool) -> i32 {
    let scenario = match open_scenario(scenario) {
        Ok(s) => s,
        Err(code) => return code,
    };
    if max_steps == 0 {
        eprintln!("error: --max-steps must be positive");
        return EXIT_SCHEMA;
    }
    let h = scenario.params.model.h;
    let mut session = match Session::new(scenario) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_SCHEMA;
        }
    };
    let mut records: Vec<TraceRecord> = Vec::new();
    while records.len() < max_steps {
        let start = Instant::now();
        let r = match session.step() {
            Ok(r) => r,
            Err(SessionError::Planner(e)) => {
                eprintln!("error: planner failed: {e}");
                return EXIT_SOLVER;
            }
            Err(e) => {
                eprintln!("error: {e}");
                return EXIT_OTHER;
            }
        };
        let done = session.finished(&r);
        records.push(r);
        if done {
            break;
        }
        if realtime {
            if let Some(rest) = Duration::from_secs_f64(h).checked_sub(start.elapsed()) {
                std::thread::sleep(rest);
            }
        }
    }
    if let Some(path) = trace {
        if let Err(e) = export_trace(&records, path) {
            eprintln!("error: cannot write trace {}: {e}", path.display());
            return EXIT_OTHER;
        }
    }
    let metrics = compute_metrics(&records).expect("non-empty trace");
    print_metrics(&metrics);
    failure_exit_code(metrics.failure)
}

pub fn cmd_check_grad(seed: u64, count: usize, inject_fault: Option<&str>) -> i32 {
    let fault = match inject_fault {
        None => None,
        Some(name) => match Family::from_name(name) {
            Some(f) => Some(f),
            None => {
                eprintln!("error: unknown gradient family `{name}`");
                return EXIT_SCHEMA;
            }
        },
    };
    let report = check_gradients_with(seed, count, fault);
    let tol = 1e-5;
    for f in &report.families {
        let verdict = if f.max_rel_error <= tol { "ok" } else { "FAIL" };
        println!("{:<10} {:>4} points  max rel error {:.3e}  {verdict}", f.family.name(), f.points, f.max_rel_error);
    }
    if report.passes(tol) {
        EXIT_OK
    } else {
        EXIT_OTHER
    }
}

pub fn cmd_metrics(trace: &Path) -> i32 {
    let records = match load_trace(trace) {
        Ok(r) if !r.is_empty() => r,
        Ok(_) => {
            eprintln!("error: {} is empty", trace.display());
            return EXIT_SCHEMA;
        }
        Err(e) => {
            eprintln!("error: {}: {e}", trace.display());
            return EXIT_SCHEMA;
        }
    };
    let metrics = compute_metrics(&records).expect("non-empty trace");
    let report = replay(&records).expect("non-empty trace");
    println!(
        "replay              defect {:.2e}, bounds {:.2e}, terminal boxes {:.2e}, terminal rate {:.2e}: {}",
        report.max_defect,
        report.max_bound_violation,
        report.max_terminal_violation,
        report.max_terminal_rate,
        if report.passes() { "ok" } else { "FAIL" }
    );
    print_metrics(&metrics);
    if report.passes() {
        EXIT_OK
    } else {
        EXIT_OTHER
    }
}

pub fn run(cli: Cli) -> i32 {
    match cli.command {
        Command::Run {
            scenario,
            trace,
            max_steps,
            realtime,
        } => cmd_run(&scenario, trace.as_deref(), max_steps, realtime),
        Command::Serve {
            scenario,
            port,
            max_fps,
        } => {
            let scenario = match open_scenario(&scenario) {
                Ok(s) => s,
                Err(code) => return code,
            };
            match serve::serve_forever(scenario, port, max_fps) {
                Ok(()) => EXIT_OK,
                Err(e) => {
                    eprintln!("error: {e}");
                    EXIT_OTHER
                }
            }
        }
        Command::CheckGrad {
            seed,
            count,
            inject_fault,
        } => cmd_check_grad(seed, count, inject_fault.as_deref()),
        Command::Metrics { trace } => cmd_metrics(&trace),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn failures_map_to_distinct_codes() {
        assert_eq!(failure_exit_code(None), 0);
        assert_eq!(failure_exit_code(Some(Failure::Divergence)), 4);
        assert_eq!(failure_exit_code(Some(Failure::SolverFailure)), 5);
    }

    #[test]
    fn ik_failures_have_their_own_code() {
        let ik = wmpc::harness::parse_scenario(
            r#"{"robot": {"link_lengths": [1.0, 1.0], "spheres": [{"link": 1, "fraction": 1.0, "radius": 0.05}]},
                "start": [0.0, 0.0], "waypoints": [{"cartesian": [3.0, 0.0]}]}"#,
        )
        .unwrap_err();
        assert_eq!(scenario_exit_code(&ik), EXIT_IK);
        let schema = wmpc::harness::parse_scenario("{}").unwrap_err();
        assert_eq!(scenario_exit_code(&schema), EXIT_SCHEMA);
    }

    #[test]
    fn port_below_1024_rejected() {
        assert!(Cli::try_parse_from(["wmpc", "serve", "--scenario", "s.json", "--port", "80"]).is_err());
        assert!(Cli::try_parse_from(["wmpc", "serve", "--scenario", "s.json", "--port", "9000"]).is_ok());
    }
}
