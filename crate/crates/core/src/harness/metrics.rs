use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::trace::TraceRecord;

/// Joint speed below which the arm counts as stopped when measuring duration.
pub const REST_SPEED: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("empty trace")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Failure {
    /// The goal was not reached within the step budget.
    Divergence,
    /// A plan had to fall back to the previous trajectory.
    SolverFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Sum of joint-space 2-norms of the executed steps (rad).
    pub path_length: f64,
    /// Time until the arm first rests at the final goal (s).
    pub trajectory_duration: f64,
    pub planning_time_max: f64,
    pub planning_time_avg: f64,
    /// Per passed waypoint, the largest joint error (rad).
    pub waypoint_pass_errors: Vec<f64>,
    /// Smallest signed distance over the run (m); absent without obstacles.
    pub min_clearance: Option<f64>,
    pub steps: usize,
    pub reached_goal: bool,
    pub failure: Option<Failure>,
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// True when the record's measured state rests at the final goal.
pub fn at_goal(r: &TraceRecord) -> bool {
    r.final_mode
        && r.x0.q.iter().zip(&r.q_g).all(|(q, g)| (q - g).abs() <= r.eps)
        && r.x0.qdot.iter().all(|v| v.abs() <= REST_SPEED)
}

pub fn compute_metrics(trace: &[TraceRecord]) -> Result<Metrics, MetricsError> {
    if trace.is_empty() {
        return Err(MetricsError::Empty);
    }
    let path_length = trace
        .iter()
        .filter(|r| r.states.len() >= 2)
        .map(|r| euclidean(&r.states[1].q, &r.states[0].q))
        .sum();
    let h = trace[0].h;
    let reached = trace.iter().position(at_goal);
    let times: Vec<f64> = trace.iter().map(|r| r.solve_time).collect();
    let min_clearance = trace.iter().filter_map(|r| r.min_distance).reduce(f64::min);
    let failure = if trace.iter().any(|r| r.degraded) {
        Some(Failure::SolverFailure)
    } else if reached.is_none() {
        Some(Failure::Divergence)
    } else {
        None
    };
    Ok(Metrics {
        path_length,
        trajectory_duration: reached.unwrap_or(trace.len()) as f64 * h,
        planning_time_max: times.iter().copied().fold(0.0, f64::max),
        planning_time_avg: times.iter().sum::<f64>() / times.len() as f64,
        waypoint_pass_errors: trace
            .iter()
            .filter_map(|r| r.waypoint_passed.as_ref().map(|w| w.error))
            .collect(),
        min_clearance,
        steps: trace.len(),
        reached_goal: reached.is_some(),
        failure,
    })
}
