//! Scenario documents: robot, obstacles, start, waypoints, parameter
//! overrides and timed events.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::collision::{CollisionWorld, Obstacle, PlanarArm, Point2, SphereSpec};
use crate::nlp::JointBox;
use crate::wmpc::{
    default_limit, inverse_kinematics_planar, IkError, PlannerError, PlannerParams, DEFAULT_JOINT_LIMITS_DEG,
};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("schema violation: {0}")]
    Schema(String),
    #[error("waypoint {index}: {source}")]
    Ik {
        index: usize,
        #[source]
        source: IkError,
    },
    #[error("start configuration is outside the joint limits")]
    StartOutsideLimits,
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

impl ScenarioError {
    /// Stable identifier of the failure class.
    pub fn code(&self) -> &'static str {
        match self {
            ScenarioError::Io { .. } => "io",
            ScenarioError::Schema(_) => "schema",
            ScenarioError::Ik { .. } => "ik",
            ScenarioError::StartOutsideLimits => "start_limits",
            ScenarioError::Invalid(_) => "invalid",
        }
    }
}

impl From<PlannerError> for ScenarioError {
    fn from(e: PlannerError) -> Self {
        ScenarioError::Invalid(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum WaypointSpec {
    Joint(Vec<f64>),
    /// `[x, y]` or `[x, y, phi]`.
    Cartesian(Vec<f64>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RobotDoc {
    link_lengths: Vec<f64>,
    #[serde(default)]
    joint_limits: Option<Vec<[f64; 2]>>,
    spheres: Vec<SphereSpec>,
    #[serde(default)]
    base: Option<Point2>,
}

#[derive(Debug, Default, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamOverrides {
    pub h: Option<f64>,
    #[serde(rename = "N_max")]
    pub n_max: Option<usize>,
    pub eps: Option<f64>,
    pub gamma: Option<f64>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub sigma: Option<f64>,
    pub d_min: Option<f64>,
    pub w3: Option<f64>,
    pub input_weight: Option<f64>,
    pub min_horizon_first: Option<usize>,
    pub min_horizon_final: Option<usize>,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    /// Seconds; zero or negative disables the budget.
    pub time_budget: Option<f64>,
    /// Symmetric limits in rad/s, one per joint.
    pub velocity_limits: Option<Vec<f64>>,
    /// Symmetric limits in rad/s^2, one per joint.
    pub acceleration_limits: Option<Vec<f64>>,
    /// Symmetric jerk limits in rad/s^3, one per joint.
    pub input_bounds: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EventDoc {
    t: f64,
    action: String,
    #[serde(default)]
    payload: Value,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioDoc {
    robot: RobotDoc,
    #[serde(default)]
    world: Vec<Obstacle>,
    start: Vec<f64>,
    waypoints: Vec<WaypointSpec>,
    #[serde(default)]
    params: ParamOverrides,
    #[serde(default)]
    events: Vec<EventDoc>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct IndexedTarget {
    index: usize,
    #[serde(default)]
    joint: Option<Vec<f64>>,
    #[serde(default)]
    cartesian: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Target {
    #[serde(default)]
    joint: Option<Vec<f64>>,
    #[serde(default)]
    cartesian: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MoveObstaclePayload {
    index: usize,
    position: Point2,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct IndexPayload {
    index: usize,
}

/// An edit to the scenario. Waypoint indices address the full point list,
/// whose last element is the goal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum EventAction {
    MoveObstacle { index: usize, position: Point2 },
    MoveWaypoint { index: usize, target: WaypointSpec },
    MoveGoal { target: WaypointSpec },
    InsertWaypoint { index: usize, target: WaypointSpec },
    RemoveWaypoint { index: usize },
}

impl EventAction {
    pub fn name(&self) -> &'static str {
        match self {
            EventAction::MoveObstacle { .. } => "move_obstacle",
            EventAction::MoveWaypoint { .. } => "move_waypoint",
            EventAction::MoveGoal { .. } => "move_goal",
            EventAction::InsertWaypoint { .. } => "insert_waypoint",
            EventAction::RemoveWaypoint { .. } => "remove_waypoint",
        }
    }

    /// Parses an action name and its JSON payload.
    pub fn parse(action: &str, payload: &Value) -> Result<Self, ScenarioError> {
        fn de<T: for<'a> Deserialize<'a>>(v: &Value) -> Result<T, ScenarioError> {
            T::deserialize(v).map_err(|e| ScenarioError::Schema(e.to_string()))
        }
        fn target(joint: Option<Vec<f64>>, cartesian: Option<Vec<f64>>) -> Result<WaypointSpec, ScenarioError> {
            match (joint, cartesian) {
                (Some(j), None) => Ok(WaypointSpec::Joint(j)),
                (None, Some(c)) => Ok(WaypointSpec::Cartesian(c)),
                _ => Err(ScenarioError::Schema("target needs exactly one of `joint` or `cartesian`".into())),
            }
        }
        Ok(match action {
            "move_obstacle" => {
                let p: MoveObstaclePayload = de(payload)?;
                EventAction::MoveObstacle {
                    index: p.index,
                    position: p.position,
                }
            }
            "move_waypoint" => {
                let p: IndexedTarget = de(payload)?;
                EventAction::MoveWaypoint {
                    index: p.index,
                    target: target(p.joint, p.cartesian)?,
                }
            }
            "move_goal" => {
                let p: Target = de(payload)?;
                EventAction::MoveGoal {
                    target: target(p.joint, p.cartesian)?,
                }
            }
            "insert_waypoint" => {
                let p: IndexedTarget = de(payload)?;
                EventAction::InsertWaypoint {
                    index: p.index,
                    target: target(p.joint, p.cartesian)?,
                }
            }
            "remove_waypoint" => {
                let p: IndexPayload = de(payload)?;
                EventAction::RemoveWaypoint { index: p.index }
            }
            other => return Err(ScenarioError::Schema(format!("unknown event action `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedEvent {
    pub t: f64,
    pub action: EventAction,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub robot: PlanarArm,
    pub world: Vec<Obstacle>,
    pub start: Vec<f64>,
    pub waypoint_specs: Vec<WaypointSpec>,
    /// Joint-space targets, final goal last.
    pub waypoints: Vec<Vec<f64>>,
    pub params: PlannerParams,
    pub overrides: ParamOverrides,
    /// Sorted by time.
    pub events: Vec<TimedEvent>,
}

impl Scenario {
    pub fn collision_world(&self) -> CollisionWorld {
        CollisionWorld {
            obstacles: self.world.clone(),
            robot: self.robot.clone(),
        }
    }
}

/// Resolves one target; Cartesian ones by inverse kinematics from `q_prev`.
pub fn resolve_target(spec: &WaypointSpec, arm: &PlanarArm, q_prev: &[f64], index: usize) -> Result<Vec<f64>, ScenarioError> {
    match spec {
        WaypointSpec::Joint(q) => {
            if q.len() != arm.dof() {
                return Err(ScenarioError::Schema(format!(
                    "waypoint {index} has {} joints, robot has {}",
                    q.len(),
                    arm.dof()
                )));
            }
            if !arm.within_limits(q, 0.0) {
                return Err(ScenarioError::Invalid(format!("waypoint {index} is outside the joint limits")));
            }
            Ok(q.clone())
        }
        WaypointSpec::Cartesian(p) => {
            inverse_kinematics_planar(p, arm, q_prev).map_err(|source| ScenarioError::Ik { index, source })
        }
    }
}

/// Resolves `specs[from..]` in order, each Cartesian target seeded with
/// the previous point (or `q_ref` for the first).
pub fn resolve_waypoints(
    specs: &[WaypointSpec],
    arm: &PlanarArm,
    q_ref: &[f64],
    from: usize,
    existing: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>, ScenarioError> {
    let mut out: Vec<Vec<f64>> = existing[..from.min(existing.len())].to_vec();
    let mut prev = q_ref.to_vec();
    for (i, spec) in specs.iter().enumerate().skip(from) {
        let q = resolve_target(spec, arm, &prev, i)?;
        prev = q.clone();
        out.push(q);
    }
    Ok(out)
}

fn check_per_joint(name: &str, v: &Option<Vec<f64>>, m: usize) -> Result<(), ScenarioError> {
    if let Some(v) = v {
        if v.len() != m {
            return Err(ScenarioError::Schema(format!("{name} needs {m} entries, got {}", v.len())));
        }
        if v.iter().any(|x| !(*x > 0.0)) {
            return Err(ScenarioError::Invalid(format!("{name} must be positive")));
        }
    }
    Ok(())
}

fn planner_params(arm: &PlanarArm, o: &ParamOverrides) -> Result<PlannerParams, ScenarioError> {
    let m = arm.dof();
    let mut p = PlannerParams::for_arm(arm, o.h.unwrap_or(0.1))?;
    macro_rules! set {
        ($($field:ident => $target:expr),* $(,)?) => {
            $(if let Some(v) = o.$field { $target = v; })*
        };
    }
    set! {
        n_max => p.n_max,
        eps => p.eps,
        gamma => p.cost.gamma,
        alpha => p.cost.alpha,
        beta => p.cost.beta,
        sigma => p.cost.sigma,
        d_min => p.cost.d_min,
        w3 => p.cost.w3,
        input_weight => p.cost.input_weight,
        min_horizon_first => p.min_horizon_first,
        min_horizon_final => p.min_horizon_final,
        tol => p.solver.tol,
        max_iter => p.solver.max_iter,
    }
    if let Some(b) = o.time_budget {
        p.solver.time_budget = if b > 0.0 { Some(b) } else { None };
    }
    check_per_joint("velocity_limits", &o.velocity_limits, m)?;
    check_per_joint("acceleration_limits", &o.acceleration_limits, m)?;
    check_per_joint("input_bounds", &o.input_bounds, m)?;
    if let Some(v) = &o.velocity_limits {
        p.bounds.qdot = JointBox::symmetric(v);
    }
    if let Some(v) = &o.acceleration_limits {
        p.bounds.qddot = JointBox::symmetric(v);
    }
    if let Some(v) = &o.input_bounds {
        p.bounds.u = Some(JointBox::symmetric(v));
    }
    for (name, v) in [("gamma", p.cost.gamma), ("alpha", p.cost.alpha), ("sigma", p.cost.sigma), ("d_min", p.cost.d_min)] {
        if !(v > 0.0) {
            return Err(ScenarioError::Invalid(format!("{name} must be positive")));
        }
    }
    if !(p.cost.w3 >= 0.0) || !(p.cost.input_weight > 0.0) || !(p.solver.tol > 0.0) || p.solver.max_iter == 0 {
        return Err(ScenarioError::Invalid("weights and solver settings must be positive".into()));
    }
    p.validate()?;
    Ok(p)
}

pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let doc: ScenarioDoc = serde_json::from_str(text).map_err(|e| ScenarioError::Schema(e.to_string()))?;
    let m = doc.robot.link_lengths.len();
    let joint_limits = match doc.robot.joint_limits {
        Some(l) => l.into_iter().map(|[lo, hi]| (lo, hi)).collect(),
        None => (0..m)
            .map(|i| {
                let l = default_limit(&DEFAULT_JOINT_LIMITS_DEG, i).to_radians();
                (-l, l)
            })
            .collect(),
    };
    let robot = PlanarArm {
        link_lengths: doc.robot.link_lengths,
        joint_limits,
        spheres: doc.robot.spheres,
        base: doc.robot.base.unwrap_or([0.0, 0.0]),
    };
    let world = CollisionWorld { obstacles: doc.world, robot };
    world.validate().map_err(|e| ScenarioError::Invalid(e.to_string()))?;
    let CollisionWorld { obstacles, robot } = world;
    if doc.start.len() != m {
        return Err(ScenarioError::Schema(format!("start has {} joints, robot has {m}", doc.start.len())));
    }
    if !robot.within_limits(&doc.start, 0.0) {
        return Err(ScenarioError::StartOutsideLimits);
    }
    if doc.waypoints.is_empty() {
        return Err(ScenarioError::Schema("at least one waypoint (the goal) is required".into()));
    }
    let params = planner_params(&robot, &doc.params)?;
    let waypoints = resolve_waypoints(&doc.waypoints, &robot, &doc.start, 0, &[])?;
    let mut events = doc
        .events
        .iter()
        .map(|e| {
            if !(e.t >= 0.0) {
                return Err(ScenarioError::Invalid("event times must be non-negative".into()));
            }
            Ok(TimedEvent {
                t: e.t,
                action: EventAction::parse(&e.action, &e.payload)?,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    events.sort_by(|a, b| a.t.total_cmp(&b.t));
    Ok(Scenario {
        robot,
        world: obstacles,
        start: doc.start,
        waypoint_specs: doc.waypoints,
        waypoints,
        params,
        overrides: doc.params,
        events,
    })
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_scenario(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "robot": {"link_lengths": [1.0, 1.0], "spheres": [{"link": 1, "fraction": 1.0, "radius": 0.05}]},
        "start": [0.0, 0.0],
        "waypoints": [{"joint": [0.5, 0.5]}]
    }"#;

    #[test]
    fn minimal_document_uses_defaults() {
        let s = parse_scenario(MINIMAL).unwrap();
        assert!(s.events.is_empty());
        assert_eq!(s.params.model.h, 0.1);
        assert_eq!(s.params.n_max, 20);
        assert_eq!(s.params.eps, 0.0005);
        assert_eq!(s.params.cost.gamma, 0.1);
        assert_eq!(s.params.cost.alpha, 1000.0);
        assert_eq!(s.params.cost.beta, 0.001);
        assert_eq!(s.params.cost.sigma, 20.0);
        assert_eq!(s.params.cost.d_min, 0.01);
        assert_eq!(s.params.cost.w3, 100.0);
        assert!((s.robot.joint_limits[1].1 - 120f64.to_radians()).abs() < 1e-15);
        assert!((s.params.bounds.qdot.upper[0] - 85f64.to_radians()).abs() < 1e-15);
        assert_eq!(s.params.bounds.qddot.upper, vec![5.0, 5.0]);
        assert_eq!(s.waypoints, vec![vec![0.5, 0.5]]);
    }

    #[test]
    fn unknown_keys_rejected() {
        let doc = MINIMAL.replace("\"start\"", "\"colour\": 1, \"start\"");
        assert_eq!(parse_scenario(&doc).unwrap_err().code(), "schema");
        let doc = MINIMAL.replace("\"waypoints\": [", "\"params\": {\"horizon\": 3}, \"waypoints\": [");
        assert_eq!(parse_scenario(&doc).unwrap_err().code(), "schema");
    }

    #[test]
    fn unreachable_cartesian_names_index() {
        let doc = MINIMAL.replace(
            "[{\"joint\": [0.5, 0.5]}]",
            "[{\"cartesian\": [1.0, 1.0]}, {\"cartesian\": [3.0, 0.0]}]",
        );
        match parse_scenario(&doc).unwrap_err() {
            ScenarioError::Ik { index, .. } => assert_eq!(index, 1),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn start_outside_limits() {
        let doc = MINIMAL.replace("\"start\": [0.0, 0.0]", "\"start\": [0.0, 3.0]");
        assert_eq!(parse_scenario(&doc).unwrap_err().code(), "start_limits");
    }

    #[test]
    fn events_parse_and_sort() {
        let doc = MINIMAL.replace(
            "\"start\"",
            r#""world": [{"kind": "sphere", "center": [1.5, 1.0], "radius": 0.2}],
               "events": [
                 {"t": 2.0, "action": "move_goal", "payload": {"joint": [0.1, 0.2]}},
                 {"t": 1.0, "action": "move_obstacle", "payload": {"index": 0, "position": [1.0, 1.5]}},
                 {"t": 3.0, "action": "insert_waypoint", "payload": {"index": 0, "cartesian": [1.0, 1.0]}},
                 {"t": 4.0, "action": "remove_waypoint", "payload": {"index": 0}}
               ],
               "start""#,
        );
        let s = parse_scenario(&doc).unwrap();
        assert_eq!(s.events.len(), 4);
        assert_eq!(s.events[0].action.name(), "move_obstacle");
        assert_eq!(
            s.events[1].action,
            EventAction::MoveGoal {
                target: WaypointSpec::Joint(vec![0.1, 0.2])
            }
        );
    }

    #[test]
    fn bad_event_payload() {
        let bad = [
            r#"{"t": 1.0, "action": "teleport", "payload": {}}"#,
            r#"{"t": 1.0, "action": "move_goal", "payload": {"joint": [0.1, 0.2], "cartesian": [1.0, 1.0]}}"#,
            r#"{"t": 1.0, "action": "move_obstacle", "payload": {"index": 0}}"#,
        ];
        for e in bad {
            let doc = MINIMAL.replace("\"start\"", &format!("\"events\": [{e}], \"start\""));
            assert_eq!(parse_scenario(&doc).unwrap_err().code(), "schema", "{e}");
        }
    }

    #[test]
    fn cartesian_waypoints_chain_branches() {
        let doc = MINIMAL.replace(
            "[{\"joint\": [0.5, 0.5]}]",
            "[{\"cartesian\": [1.2, 0.5]}, {\"cartesian\": [1.3, 0.4]}]",
        );
        let s = parse_scenario(&doc).unwrap();
        // the second point stays on the branch of the first
        assert_eq!(s.waypoints[0][1].signum(), s.waypoints[1][1].signum());
        for (q, p) in s.waypoints.iter().zip([[1.2, 0.5], [1.3, 0.4]]) {
            let e = s.robot.end_effector(q);
            assert!((e[0] - p[0]).abs() < 1e-12 && (e[1] - p[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn param_overrides_apply() {
        let doc = MINIMAL.replace(
            "\"start\"",
            r#""params": {"h": 0.05, "N_max": 30, "eps": 0.001, "input_bounds": [10.0, 10.0], "time_budget": 0},
               "start""#,
        );
        let s = parse_scenario(&doc).unwrap();
        assert_eq!(s.params.model.h, 0.05);
        assert_eq!(s.params.n_max, 30);
        assert_eq!(s.params.solver.time_budget, None);
        assert_eq!(s.params.bounds.u.as_ref().unwrap().upper, vec![10.0, 10.0]);
    }
}
