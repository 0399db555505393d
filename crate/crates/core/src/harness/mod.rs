//! Scenario files, closed-loop simulation, traces and metrics.

pub mod metrics;
pub mod scenario;
pub mod sim;
pub mod trace;

pub use metrics::{compute_metrics, Failure, Metrics, MetricsError};
pub use scenario::{load_scenario, parse_scenario, EventAction, Scenario, ScenarioError, TimedEvent, WaypointSpec};
pub use sim::{run_closed_loop, ClosedLoop, Session, SessionError};
pub use trace::{export_trace, load_trace, read_trace, replay, write_trace, ReplayReport, TraceError, TraceRecord};
