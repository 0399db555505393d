//! Receding-horizon planner through a sequence of waypoints.
//!
//! The horizon of length `N` is split at `N_s`: samples before the split are
//! pulled towards the current waypoint, the rest towards the goal. Both
//! indices shrink by one per iteration once the respective target is known to
//! be reachable, and every plan ends at rest.

mod ik;
mod reachability;
mod sequence;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::collision::{CollisionWorld, Obstacle, PlanarArm};
use crate::costs::{segment_weights, CostParams};
use crate::model::{foh_matrices, FohMatrices, ModelError, ModelParams, State};
use crate::nlp::{self, CostContext, JointBox, Layout, NlpError, SolveStatus, SolverSettings, StateBounds};

pub use ik::{inverse_kinematics_planar, IkError};
pub use reachability::{check_goal_reachability, ReachabilityError};
pub use sequence::WaypointSequence;

/// Velocity limits per joint in deg/s, for up to seven joints.
pub const DEFAULT_VELOCITY_LIMITS_DEG: [f64; 7] = [85.0, 85.0, 100.0, 75.0, 130.0, 135.0, 135.0];
/// Position limits per joint in degrees, for up to seven joints.
pub const DEFAULT_JOINT_LIMITS_DEG: [f64; 7] = [170.0, 120.0, 170.0, 120.0, 170.0, 120.0, 175.0];
/// Acceleration limit in rad/s^2, all joints.
pub const DEFAULT_ACCELERATION_LIMIT: f64 = 5.0;

/// Change below which moved targets (rad) and obstacles (m) are ignored.
pub const CHANGE_TOLERANCE: f64 = 1e-3;

/// `i`-th default limit, repeating the last entry beyond the table.
pub fn default_limit(table: &[f64; 7], i: usize) -> f64 {
    table[i.min(6)]
}

#[derive(Debug, Error, PartialEq)]
pub enum PlannerError {
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Nlp(#[from] NlpError),
    #[error(transparent)]
    Reachability(#[from] ReachabilityError),
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannerParams {
    pub model: ModelParams,
    pub n_max: usize,
    /// Waypoint and goal tolerance (rad).
    pub eps: f64,
    pub min_horizon_first: usize,
    pub min_horizon_final: usize,
    /// `w1` and `w2` are overwritten by the planner.
    pub cost: CostParams,
    pub bounds: StateBounds,
    pub solver: SolverSettings,
}

impl PlannerParams {
    /// Defaults for the given arm: its joint limits, the default velocity
    /// and acceleration limits, no input bounds.
    pub fn for_arm(arm: &PlanarArm, h: f64) -> Result<Self, PlannerError> {
        let m = arm.dof();
        let params = Self {
            model: ModelParams::new(m, h)?,
            n_max: 20,
            eps: 0.0005,
            min_horizon_first: 5,
            min_horizon_final: 2,
            cost: CostParams::default(),
            bounds: StateBounds {
                q: JointBox {
                    lower: arm.joint_limits.iter().map(|l| l.0).collect(),
                    upper: arm.joint_limits.iter().map(|l| l.1).collect(),
                },
                qdot: JointBox::symmetric(
                    &(0..m)
                        .map(|i| default_limit(&DEFAULT_VELOCITY_LIMITS_DEG, i).to_radians())
                        .collect::<Vec<_>>(),
                ),
                qddot: JointBox::symmetric(&vec![DEFAULT_ACCELERATION_LIMIT; m]),
                u: None,
            },
            solver: SolverSettings::default(),
        };
        Ok(params)
    }

    pub fn validate(&self) -> Result<(), PlannerError> {
        self.model.validate()?;
        let bad = |s: &str| Err(PlannerError::Params(s.to_string()));
        if !(self.eps > 0.0) {
            return bad("eps must be positive");
        }
        if self.min_horizon_first < 3 {
            return bad("min_horizon_first must be at least 3");
        }
        if self.n_max < self.min_horizon_first {
            return bad("N_max must be at least min_horizon_first");
        }
        if self.min_horizon_final < 2 || self.min_horizon_final > self.n_max {
            return bad("min_horizon_final must lie in 2..=N_max");
        }
        if self.bounds.dim() != self.model.m {
            return Err(PlannerError::Dimension {
                what: "state bounds",
                expected: self.model.m,
                got: self.bounds.dim(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HorizonState {
    #[serde(rename = "N_s")]
    pub n_s: usize,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "N_max")]
    pub n_max: usize,
    pub waypoint_split: bool,
    pub goal_found: bool,
}

impl HorizonState {
    pub fn reset(n_max: usize, final_mode: bool) -> Self {
        Self {
            n_s: if final_mode { 0 } else { n_max },
            n: n_max,
            n_max,
            waypoint_split: false,
            goal_found: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerminalSets {
    pub q_w: JointBox,
    pub q_g: JointBox,
}

/// Waypoint band iff `N_s < N - 1`, goal band iff `N < N_max`; joint limits otherwise.
pub fn terminal_sets(horizon: &HorizonState, q_w: &[f64], q_g: &[f64], eps: f64, joint_limits: &JointBox) -> TerminalSets {
    TerminalSets {
        q_w: if horizon.n_s + 1 < horizon.n {
            JointBox::band(q_w, eps)
        } else {
            joint_limits.clone()
        },
        q_g: if horizon.n < horizon.n_max {
            JointBox::band(q_g, eps)
        } else {
            joint_limits.clone()
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<State>,
    pub inputs: Vec<Vec<f64>>,
}

impl Trajectory {
    /// Holds `x` with zero inputs.
    pub fn hold(x: &State, n: usize) -> Self {
        let rest = State::at_rest(&x.q);
        let mut states = vec![rest; n];
        states[0] = x.clone();
        Self {
            states,
            inputs: vec![vec![0.0; x.dim()]; n],
        }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Drops the first sample and repeats the last one.
    pub fn shifted(&self) -> Self {
        let mut states = self.states[1..].to_vec();
        let mut inputs = self.inputs[1..].to_vec();
        states.push(self.states.last().unwrap().clone());
        inputs.push(self.inputs.last().unwrap().clone());
        Self { states, inputs }
    }

    /// Truncates, or pads with the last state and zero inputs.
    pub fn resized(mut self, n: usize) -> Self {
        let m = self.states[0].dim();
        if n <= self.len() {
            self.states.truncate(n);
            self.inputs.truncate(n);
        } else {
            let last = self.states.last().unwrap().clone();
            self.states.resize(n, last);
            self.inputs.resize(n, vec![0.0; m]);
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerState {
    pub horizon: HorizonState,
    pub sequence: WaypointSequence,
    /// Start of the current segment, used for the weights.
    pub q_init: Vec<f64>,
    pub previous: Option<Trajectory>,
    pub w1: f64,
    pub w2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaypointPass {
    /// Index of the passed point in the sequence.
    pub index: usize,
    /// Largest joint deviation from the waypoint at the constrained sample (rad).
    pub error: f64,
}

/// Result of one planning iteration.
#[derive(Debug, Clone)]
pub struct PlanOutput {
    pub trajectory: Trajectory,
    pub horizon: HorizonState,
    pub cursor: usize,
    pub final_mode: bool,
    pub q_w: Vec<f64>,
    pub q_g: Vec<f64>,
    pub w1: f64,
    pub w2: f64,
    pub terminal: TerminalSets,
    pub status: SolveStatus,
    pub iterations: usize,
    pub kkt_residual: f64,
    pub solve_time: f64,
    pub objective: f64,
    /// The first solve failed and the relaxed problem was used.
    pub fallback: bool,
    /// Both solves failed; the trajectory is the remainder of the previous plan.
    pub degraded: bool,
    pub waypoint_passed: Option<WaypointPass>,
}

/// What moved in the environment.
#[derive(Debug, Clone)]
pub enum EnvironmentChange {
    World(CollisionWorld),
    Waypoints(WaypointSequence),
}

pub struct Planner {
    params: PlannerParams,
    mats: FohMatrices,
    world: CollisionWorld,
    state: PlannerState,
    new_goal: bool,
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn obstacle_params(o: &Obstacle) -> Vec<f64> {
    match o {
        Obstacle::Sphere { center, radius } => vec![center[0], center[1], *radius],
        Obstacle::Capsule { start, end, radius } => vec![start[0], start[1], end[0], end[1], *radius],
        Obstacle::HalfSpace { point, normal } => vec![point[0], point[1], normal[0], normal[1]],
    }
}

fn world_moved(a: &CollisionWorld, b: &CollisionWorld) -> bool {
    if a.obstacles.len() != b.obstacles.len() || a.robot != b.robot {
        return true;
    }
    a.obstacles.iter().zip(&b.obstacles).any(|(oa, ob)| {
        std::mem::discriminant(oa) != std::mem::discriminant(ob)
            || max_abs_diff(&obstacle_params(oa), &obstacle_params(ob)) > CHANGE_TOLERANCE
    })
}

fn sequence_moved(a: &WaypointSequence, b: &WaypointSequence) -> bool {
    a.cursor != b.cursor
        || a.points.len() != b.points.len()
        || a.points.iter().zip(&b.points).any(|(p, q)| max_abs_diff(p, q) > CHANGE_TOLERANCE)
}

impl Planner {
    pub fn new(params: PlannerParams, world: CollisionWorld, sequence: WaypointSequence, q_start: &[f64]) -> Result<Self, PlannerError> {
        params.validate()?;
        let m = params.model.m;
        let dim = |what, got: usize| {
            if got != m {
                Err(PlannerError::Dimension { what, expected: m, got })
            } else {
                Ok(())
            }
        };
        dim("robot", world.robot.dof())?;
        dim("start", q_start.len())?;
        for p in &sequence.points {
            dim("waypoint", p.len())?;
        }
        let mats = foh_matrices(params.model)?;
        let horizon = HorizonState::reset(params.n_max, sequence.is_final());
        Ok(Self {
            mats,
            world,
            state: PlannerState {
                horizon,
                sequence,
                q_init: q_start.to_vec(),
                previous: None,
                w1: params.cost.w1,
                w2: params.cost.w2,
            },
            params,
            new_goal: true,
        })
    }

    pub fn params(&self) -> &PlannerParams {
        &self.params
    }

    pub fn world(&self) -> &CollisionWorld {
        &self.world
    }

    pub fn state(&self) -> &PlannerState {
        &self.state
    }

    pub fn matrices(&self) -> &FohMatrices {
        &self.mats
    }

    /// Replaces the targets; the next iteration starts from full horizons.
    pub fn set_goal(&mut self, sequence: WaypointSequence) {
        self.state.sequence = sequence;
        self.new_goal = true;
    }

    fn recompute_weights(&mut self) {
        let seq = &self.state.sequence;
        let (sigma, d_min) = (self.params.cost.sigma, self.params.cost.d_min);
        if seq.is_final() {
            let d = euclidean(seq.goal(), &self.state.q_init);
            self.state.w1 = sigma / d.max(d_min);
            self.state.w2 = self.state.w1;
        } else {
            let (w1, w2) = segment_weights(&self.state.q_init, seq.waypoint(), seq.goal(), sigma, d_min)
                .expect("dimensions checked on construction");
            self.state.w1 = w1;
            self.state.w2 = w2;
        }
        let w3 = self.params.cost.w3;
        if !self.world.obstacles.is_empty() && w3 < self.state.w1.max(self.state.w2) {
            log::warn!(
                "collision weight {w3} is below the target weights ({:.3}, {:.3})",
                self.state.w1,
                self.state.w2
            );
        }
    }

    /// Applies a moved obstacle, waypoint or goal. Changes below
    /// [`CHANGE_TOLERANCE`] are ignored. Returns whether the horizons were reset.
    pub fn handle_environment_change(&mut self, change: EnvironmentChange, q_current: &[f64]) -> bool {
        let changed = match change {
            EnvironmentChange::World(world) => {
                let moved = world_moved(&self.world, &world);
                if moved {
                    self.world = world;
                }
                moved
            }
            EnvironmentChange::Waypoints(seq) => {
                let moved = sequence_moved(&self.state.sequence, &seq);
                if moved {
                    self.state.sequence = seq;
                }
                moved
            }
        };
        if changed {
            self.state.horizon = HorizonState::reset(self.params.n_max, self.state.sequence.is_final());
            self.state.q_init = q_current.to_vec();
            self.recompute_weights();
        }
        changed
    }

    /// Previous plan as seen from the current iteration's scan: unshifted,
    /// padded to `N_max` with its last sample.
    fn scan_trajectory(&self, x: &State) -> Vec<Vec<f64>> {
        let n_max = self.params.n_max;
        let mut qs: Vec<Vec<f64>> = match &self.state.previous {
            Some(prev) => prev.states.iter().map(|s| s.q.clone()).collect(),
            None => vec![x.q.clone(); n_max],
        };
        let last = qs.last().unwrap().clone();
        qs.resize(n_max.max(qs.len()), last);
        qs.truncate(n_max);
        qs
    }

    fn advance(&mut self, x: &State) -> WaypointPass {
        let seq = &self.state.sequence;
        let reference = self.state.previous.as_ref().map(|p| &p.states[0].q).unwrap_or(&x.q);
        let pass = WaypointPass {
            index: seq.cursor,
            error: max_abs_diff(reference, seq.waypoint()),
        };
        self.state.sequence.advance();
        let h = &mut self.state.horizon;
        if self.state.sequence.is_final() {
            h.n_s = 0;
        } else {
            h.n_s = h.n;
            h.n = h.n_max;
            h.goal_found = false;
            h.waypoint_split = true;
            self.state.q_init = x.q.clone();
            self.recompute_weights();
        }
        pass
    }

    fn update_horizon(&mut self, x: &State) -> Result<Option<WaypointPass>, PlannerError> {
        let p = &self.params;
        let scan = self.scan_trajectory(x);
        let seq = &self.state.sequence;
        let final_mode = seq.is_final();
        let h = &mut self.state.horizon;
        if h.n_s == p.n_max && !final_mode {
            h.n_s = check_goal_reachability(&scan, 0, p.n_max, seq.waypoint(), p.eps)?;
            h.waypoint_split = h.n_s < p.n_max;
        } else {
            h.n_s = h.n_s.saturating_sub(1);
            if h.n == p.n_max {
                let found = check_goal_reachability(&scan, h.n_s, p.n_max, seq.goal(), p.eps)?;
                if found < p.n_max {
                    h.goal_found = true;
                    h.n = found.max(p.min_horizon_first);
                }
            } else {
                h.n = h.n.saturating_sub(1).max(p.min_horizon_final);
            }
        }
        if self.state.horizon.n_s == 0 && !final_mode {
            return Ok(Some(self.advance(x)));
        }
        Ok(None)
    }

    fn warm_start(&self, x: &State, u: &[f64], n: usize) -> Trajectory {
        let mut ws = match &self.state.previous {
            Some(prev) => prev.shifted().resized(n),
            None => Trajectory::hold(x, n),
        };
        ws.states[0] = x.clone();
        ws.inputs[0] = u.to_vec();
        ws
    }

    fn solve(&self, x: &State, u: &[f64], horizon: &HorizonState, sets: &TerminalSets) -> Result<(Trajectory, nlp::SolveResult), PlannerError> {
        let seq = &self.state.sequence;
        let mut cost = self.params.cost;
        cost.w1 = self.state.w1;
        cost.w2 = self.state.w2;
        let problem = nlp::assemble(
            &self.mats,
            x,
            u,
            horizon.n_s,
            horizon.n,
            sets,
            &self.params.bounds,
            CostContext {
                params: cost,
                world: self.world.clone(),
                q_w: seq.waypoint().to_vec(),
                q_g: seq.goal().to_vec(),
            },
        )?;
        let layout = Layout::new(self.params.model.m, horizon.n);
        let ws = self.warm_start(x, u, horizon.n);
        let z_ws = layout.pack(&ws.states, &ws.inputs);
        let result = nlp::solve(&problem, &z_ws, &self.params.solver);
        let (mut states, mut inputs) = layout.unpack(&result.z_star);
        if result.status != nlp::SolveStatus::Infeasible {
            // Sample 0 is fixed by equality; elimination reproduces it only to rounding.
            states[0] = x.clone();
            inputs[0] = u.to_vec();
        }
        Ok((Trajectory { states, inputs }, result))
    }

    /// One planning iteration from the measured state `x` with the input
    /// `u` already committed for it.
    pub fn plan_step(&mut self, x: &State, u: &[f64]) -> Result<PlanOutput, PlannerError> {
        let m = self.params.model.m;
        for (what, got) in [("state", x.q.len()), ("state", x.qdot.len()), ("state", x.qddot.len()), ("input", u.len())] {
            if got != m {
                return Err(PlannerError::Dimension { what, expected: m, got });
            }
        }
        if self.new_goal {
            self.new_goal = false;
            self.state.horizon = HorizonState::reset(self.params.n_max, self.state.sequence.is_final());
            self.state.q_init = x.q.clone();
            self.recompute_weights();
        }
        let waypoint_passed = self.update_horizon(x)?;

        let limits = &self.params.bounds.q;
        let seq = &self.state.sequence;
        let mut horizon = self.state.horizon;
        let mut sets = terminal_sets(&horizon, seq.waypoint(), seq.goal(), self.params.eps, limits);
        let (mut traj, mut result) = self.solve(x, u, &horizon, &sets)?;
        let mut fallback = false;
        let mut degraded = false;
        if result.status == SolveStatus::Infeasible {
            fallback = true;
            log::debug!("solve infeasible at N_s={} N={}, relaxing", horizon.n_s, horizon.n);
            horizon = HorizonState::reset(self.params.n_max, seq.is_final());
            sets = TerminalSets {
                q_w: limits.clone(),
                q_g: limits.clone(),
            };
            self.state.horizon = horizon;
            (traj, result) = self.solve(x, u, &horizon, &sets)?;
            if result.status == SolveStatus::Infeasible {
                log::warn!("relaxed solve failed, continuing the previous plan");
                degraded = true;
                traj = match &self.state.previous {
                    Some(prev) if prev.len() >= 2 => prev.shifted(),
                    _ => Trajectory::hold(x, self.params.min_horizon_final),
                };
            }
        }
        let seq = &self.state.sequence;
        let out = PlanOutput {
            trajectory: traj.clone(),
            horizon,
            cursor: seq.cursor,
            final_mode: seq.is_final(),
            q_w: seq.waypoint().to_vec(),
            q_g: seq.goal().to_vec(),
            w1: self.state.w1,
            w2: self.state.w2,
            terminal: sets,
            status: result.status,
            iterations: result.iterations,
            kkt_residual: result.kkt_residual,
            solve_time: result.solve_time,
            objective: result.objective,
            fallback,
            degraded,
            waypoint_passed,
        };
        self.state.previous = Some(traj);
        Ok(out)
    }
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}
