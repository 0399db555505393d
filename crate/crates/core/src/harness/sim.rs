//! Closed loop: the planner's first step is executed on the model, and
//! scenario edits are applied between iterations.

use thiserror::Error;

use super::metrics::{at_goal, compute_metrics, Metrics};
use super::scenario::{resolve_waypoints, EventAction, Scenario, ScenarioError, TimedEvent};
use super::trace::TraceRecord;
use crate::collision::CollisionWorld;
use crate::model::State;
use crate::wmpc::{EnvironmentChange, Planner, PlannerError, WaypointSequence};

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("obstacle index {0} out of range")]
    ObstacleIndex(usize),
    #[error("waypoint index {index} not editable (cursor {cursor}, {len} points)")]
    WaypointIndex { index: usize, cursor: usize, len: usize },
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error("step budget must be positive")]
    NoSteps,
}

/// A running closed loop over one scenario.
pub struct Session {
    scenario: Scenario,
    planner: Planner,
    specs: Vec<super::scenario::WaypointSpec>,
    x: State,
    u: Vec<f64>,
    n: usize,
    next_event: usize,
}

impl Session {
    pub fn new(scenario: Scenario) -> Result<Self, SessionError> {
        let planner = Planner::new(
            scenario.params.clone(),
            scenario.collision_world(),
            WaypointSequence::new(scenario.waypoints.clone()),
            &scenario.start,
        )?;
        Ok(Self {
            x: State::at_rest(&scenario.start),
            u: vec![0.0; scenario.start.len()],
            specs: scenario.waypoint_specs.clone(),
            planner,
            scenario,
            n: 0,
            next_event: 0,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn planner(&self) -> &Planner {
        &self.planner
    }

    pub fn world(&self) -> &CollisionWorld {
        self.planner.world()
    }

    pub fn state(&self) -> &State {
        &self.x
    }

    /// Index of the next iteration.
    pub fn iteration(&self) -> usize {
        self.n
    }

    pub fn time(&self) -> f64 {
        self.n as f64 * self.scenario.params.model.h
    }

    pub fn pending_events(&self) -> &[TimedEvent] {
        &self.scenario.events[self.next_event..]
    }

    /// Applies an edit now. Returns whether the planner reset its horizons.
    pub fn apply(&mut self, action: &EventAction) -> Result<bool, SessionError> {
        let q = self.x.q.clone();
        match action {
            EventAction::MoveObstacle { index, position } => {
                let mut world = self.planner.world().clone();
                let o = world.obstacles.get_mut(*index).ok_or(SessionError::ObstacleIndex(*index))?;
                *o = o.moved_to(*position);
                Ok(self.planner.handle_environment_change(EnvironmentChange::World(world), &q))
            }
            _ => {
                let seq = &self.planner.state().sequence;
                let (cursor, len) = (seq.cursor, seq.len());
                let bad = |index: usize| SessionError::WaypointIndex { index, cursor, len };
                let mut specs = self.specs.clone();
                match action {
                    EventAction::MoveWaypoint { index, target } => {
                        if *index < cursor || *index >= len {
                            return Err(bad(*index));
                        }
                        specs[*index] = target.clone();
                    }
                    EventAction::MoveGoal { target } => specs[len - 1] = target.clone(),
                    EventAction::InsertWaypoint { index, target } => {
                        if *index < cursor || *index >= len {
                            return Err(bad(*index));
                        }
                        specs.insert(*index, target.clone());
                    }
                    EventAction::RemoveWaypoint { index } => {
                        if *index < cursor || *index + 1 >= len {
                            return Err(bad(*index));
                        }
                        specs.remove(*index);
                    }
                    EventAction::MoveObstacle { .. } => unreachable!(),
                }
                let points = resolve_waypoints(&specs, &self.scenario.robot, &q, cursor, &seq.points)?;
                self.specs = specs;
                let seq = WaypointSequence { points, cursor };
                Ok(self.planner.handle_environment_change(EnvironmentChange::Waypoints(seq), &q))
            }
        }
    }

    fn apply_due_events(&mut self) -> Vec<String> {
        let t = self.time();
        let mut applied = Vec::new();
        while let Some(e) = self.scenario.events.get(self.next_event) {
            if e.t > t + 1e-9 {
                break;
            }
            let (action, te) = (e.action.clone(), e.t);
            self.next_event += 1;
            match self.apply(&action) {
                Ok(_) => applied.push(action.name().to_string()),
                Err(err) => {
                    log::warn!("event {} at t={te} rejected: {err}", action.name());
                    applied.push(format!("{} (rejected)", action.name()));
                }
            }
        }
        applied
    }

    /// Applies due events, plans once and executes the first step.
    pub fn step(&mut self) -> Result<TraceRecord, SessionError> {
        let events = self.apply_due_events();
        let t = self.time();
        let out = self.planner.plan_step(&self.x, &self.u)?;
        let p = self.planner.params();
        let d = self.planner.world().min_distance(&self.x.q);
        let traj = &out.trajectory;
        let finite = |v: f64| v.is_finite().then_some(v);
        let record = TraceRecord {
            n: self.n,
            t,
            h: p.model.h,
            eps: p.eps,
            n_s: out.horizon.n_s,
            n_horizon: out.horizon.n,
            n_max: out.horizon.n_max,
            cursor: out.cursor,
            final_mode: out.final_mode,
            q_w: out.q_w.clone(),
            q_g: out.q_g.clone(),
            w1: out.w1,
            w2: out.w2,
            states: traj.states.clone(),
            inputs: traj.inputs.clone(),
            x0: traj.states[0].clone(),
            u0: traj.inputs[0].clone(),
            terminal: out.terminal.clone(),
            bounds: p.bounds.clone(),
            status: out.status,
            iterations: out.iterations,
            kkt_residual: finite(out.kkt_residual),
            solve_time: out.solve_time,
            objective: finite(out.objective),
            fallback: out.fallback,
            degraded: out.degraded,
            min_distance: finite(d),
            waypoint_passed: out.waypoint_passed.clone(),
            events,
        };
        self.x = traj.states[1].clone();
        self.u = traj.inputs[1].clone();
        self.n += 1;
        Ok(record)
    }

    /// The record shows the arm resting at the final goal and no events remain.
    pub fn finished(&self, last: &TraceRecord) -> bool {
        self.pending_events().is_empty() && at_goal(last)
    }
}

pub struct ClosedLoop {
    pub trace: Vec<TraceRecord>,
    pub metrics: Metrics,
}

/// Runs until the goal is held or `max_steps` iterations have been planned.
pub fn run_closed_loop(scenario: &Scenario, max_steps: usize) -> Result<ClosedLoop, SessionError> {
    if max_steps == 0 {
        return Err(SessionError::NoSteps);
    }
    let mut session = Session::new(scenario.clone())?;
    let mut trace = Vec::new();
    while trace.len() < max_steps {
        let r = session.step()?;
        let done = session.finished(&r);
        trace.push(r);
        if done {
            break;
        }
    }
    let metrics = compute_metrics(&trace).expect("at least one record");
    Ok(ClosedLoop { trace, metrics })
}
