//! The horizon optimization problem as a linearly constrained smooth program,
//! and its solver.
//!
//! Decision vector layout, per sample `k`: `[q_k, qdot_k, qddot_k, u_k]`,
//! i.e. `4m` entries per sample, `N * 4m` in total.

mod elimination;
pub mod qp;
mod solver;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::collision::CollisionWorld;
use crate::costs::{smooth_l1_cost, smooth_l1_grad, smooth_l1_hess_diag, CostParams};
use crate::model::{FohMatrices, State};
use crate::wmpc::TerminalSets;

pub use elimination::{eliminate, AffineParametrization, Inconsistent};
pub use solver::{solve, SolverSettings};

#[derive(Debug, Error, PartialEq)]
pub enum NlpError {
    #[error("horizon must have at least 2 samples, got {0}")]
    HorizonTooShort(usize),
    #[error("split index {n_s} exceeds horizon {n}")]
    SplitIndex { n_s: usize, n: usize },
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
}

/// Index arithmetic for the stacked decision vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub m: usize,
    pub n: usize,
}

impl Layout {
    pub fn new(m: usize, n: usize) -> Self {
        Self { m, n }
    }

    pub fn per_sample(&self) -> usize {
        4 * self.m
    }

    pub fn dim(&self) -> usize {
        self.n * self.per_sample()
    }

    pub fn x(&self, k: usize) -> usize {
        k * self.per_sample()
    }

    pub fn q(&self, k: usize) -> usize {
        self.x(k)
    }

    pub fn qdot(&self, k: usize) -> usize {
        self.x(k) + self.m
    }

    pub fn qddot(&self, k: usize) -> usize {
        self.x(k) + 2 * self.m
    }

    pub fn u(&self, k: usize) -> usize {
        self.x(k) + 3 * self.m
    }

    pub fn pack(&self, states: &[State], inputs: &[Vec<f64>]) -> Vec<f64> {
        let mut z = Vec::with_capacity(self.dim());
        for (x, u) in states.iter().zip(inputs) {
            z.extend_from_slice(&x.q);
            z.extend_from_slice(&x.qdot);
            z.extend_from_slice(&x.qddot);
            z.extend_from_slice(u);
        }
        z
    }

    pub fn unpack(&self, z: &[f64]) -> (Vec<State>, Vec<Vec<f64>>) {
        let m = self.m;
        (0..self.n)
            .map(|k| {
                let s = &z[self.x(k)..self.x(k) + 4 * m];
                (State::from_slice(&s[..3 * m]), s[3 * m..].to_vec())
            })
            .unzip()
    }
}

/// Symmetric block-diagonal matrix given as `(offset, block)` pairs.
#[derive(Debug, Clone, Default)]
pub struct BlockDiagonal {
    pub blocks: Vec<(usize, DMatrix<f64>)>,
}

impl BlockDiagonal {
    pub fn to_dense(&self, n: usize) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(n, n);
        for (off, b) in &self.blocks {
            let s = b.nrows();
            let mut view = out.view_mut((*off, *off), (s, s));
            view += b;
        }
        out
    }
}

/// Smooth objective with exact gradient and a positive semidefinite curvature model.
pub trait Objective {
    fn dim(&self) -> usize;
    fn value(&self, z: &[f64]) -> f64;
    /// Writes the gradient and returns the value.
    fn gradient(&self, z: &[f64], grad: &mut [f64]) -> f64;
    fn curvature(&self, z: &[f64]) -> BlockDiagonal;
}

/// `min f(z)  s.t.  A z = b,  lower <= z <= upper`.
pub struct NlpProblem<O> {
    pub objective: O,
    pub eq_matrix: DMatrix<f64>,
    pub eq_rhs: DVector<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl<O: Objective> NlpProblem<O> {
    pub fn n_dec(&self) -> usize {
        self.objective.dim()
    }

    pub fn eq_residual(&self, z: &[f64]) -> f64 {
        if self.eq_matrix.nrows() == 0 {
            return 0.0;
        }
        (&self.eq_matrix * DVector::from_column_slice(z) - &self.eq_rhs).amax()
    }

    pub fn bound_violation(&self, z: &[f64]) -> f64 {
        z.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (lo, hi))| (lo - v).max(v - hi).max(0.0))
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    MaxIter,
    Infeasible,
}

/// Lagrange multipliers: `grad f + A' lambda - mu_lower + mu_upper = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Multipliers {
    pub equality: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResidual {
    pub stationarity: f64,
    pub primal: f64,
    pub complementarity: f64,
}

impl KktResidual {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.primal).max(self.complementarity)
    }
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub z_star: Vec<f64>,
    pub status: SolveStatus,
    pub kkt_residual: f64,
    pub kkt: KktResidual,
    pub multipliers: Multipliers,
    pub iterations: usize,
    pub solve_time: f64,
    pub objective: f64,
    /// Objective after each accepted step, starting at the first feasible iterate.
    pub objective_history: Vec<f64>,
}

/// Stationarity, primal feasibility and complementarity of `(z, multipliers)`.
pub fn kkt_residual<O: Objective>(problem: &NlpProblem<O>, z: &[f64], multipliers: &Multipliers) -> KktResidual {
    let n = problem.n_dec();
    let mut grad = vec![0.0; n];
    problem.objective.gradient(z, &mut grad);
    let mut r = DVector::from_vec(grad);
    if problem.eq_matrix.nrows() > 0 && multipliers.equality.len() == problem.eq_matrix.nrows() {
        r += problem.eq_matrix.transpose() * DVector::from_column_slice(&multipliers.equality);
    }
    let mut comp = 0.0_f64;
    for i in 0..n {
        let (ml, mu) = (multipliers.lower[i], multipliers.upper[i]);
        r[i] += mu - ml;
        // dual feasibility counts as complementarity error
        comp = comp.max((-ml).max(-mu));
        if problem.lower[i].is_finite() {
            comp = comp.max((ml * (z[i] - problem.lower[i])).abs());
        } else {
            comp = comp.max(ml.abs());
        }
        if problem.upper[i].is_finite() {
            comp = comp.max((mu * (problem.upper[i] - z[i])).abs());
        } else {
            comp = comp.max(mu.abs());
        }
    }
    KktResidual {
        stationarity: r.amax(),
        primal: problem.eq_residual(z).max(problem.bound_violation(z)),
        complementarity: comp,
    }
}

/// Per-joint interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl JointBox {
    pub fn symmetric(limits: &[f64]) -> Self {
        Self {
            lower: limits.iter().map(|v| -v).collect(),
            upper: limits.to_vec(),
        }
    }

    /// `center ± eps`, with the bounds rounded inward so that every point of
    /// the box has a computed distance `|q - c|` of at most `eps`.
    pub fn band(center: &[f64], eps: f64) -> Self {
        let inward = |c: f64, mut b: f64, step: fn(f64) -> f64| {
            while (b - c).abs() > eps {
                b = step(b);
            }
            b
        };
        Self {
            lower: center.iter().map(|&c| inward(c, c - eps, f64::next_up)).collect(),
            upper: center.iter().map(|&c| inward(c, c + eps, f64::next_down)).collect(),
        }
    }

    pub fn unbounded(m: usize) -> Self {
        Self {
            lower: vec![f64::NEG_INFINITY; m],
            upper: vec![f64::INFINITY; m],
        }
    }

    pub fn contains(&self, q: &[f64], tol: f64) -> bool {
        q.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (lo, hi))| *v >= lo - tol && *v <= hi + tol)
    }

    pub fn violation(&self, q: &[f64]) -> f64 {
        q.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (lo, hi))| (lo - v).max(v - hi).max(0.0))
            .fold(0.0, f64::max)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }
}

/// Box constraints on states and (optionally) inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateBounds {
    pub q: JointBox,
    pub qdot: JointBox,
    pub qddot: JointBox,
    pub u: Option<JointBox>,
}

impl StateBounds {
    pub fn dim(&self) -> usize {
        self.q.dim()
    }

    pub fn contains(&self, x: &State, tol: f64) -> bool {
        self.q.contains(&x.q, tol) && self.qdot.contains(&x.qdot, tol) && self.qddot.contains(&x.qddot, tol)
    }

    pub fn violation(&self, x: &State) -> f64 {
        self.q
            .violation(&x.q)
            .max(self.qdot.violation(&x.qdot))
            .max(self.qddot.violation(&x.qddot))
    }
}

/// Objective of the horizon problem in decision-vector form.
#[derive(Debug, Clone)]
pub struct TrajectoryObjective {
    pub layout: Layout,
    pub n_s: usize,
    pub params: CostParams,
    pub world: CollisionWorld,
    pub q_w: Vec<f64>,
    pub q_g: Vec<f64>,
}

impl TrajectoryObjective {
    fn collision_active(&self) -> bool {
        self.params.w3 != 0.0 && !self.world.obstacles.is_empty()
    }

    fn target(&self, k: usize) -> (&[f64], f64) {
        if k < self.n_s {
            (&self.q_w, self.params.w1)
        } else {
            (&self.q_g, self.params.w2)
        }
    }
}

impl Objective for TrajectoryObjective {
    fn dim(&self) -> usize {
        self.layout.dim()
    }

    fn value(&self, z: &[f64]) -> f64 {
        let (m, p) = (self.layout.m, &self.params);
        let mut total = 0.0;
        for k in 0..self.layout.n {
            let q = &z[self.layout.q(k)..self.layout.q(k) + m];
            let u = &z[self.layout.u(k)..self.layout.u(k) + m];
            let (target, w) = self.target(k);
            total += w * smooth_l1_cost(q, target, p.gamma).expect("layout");
            total += p.input_weight * u.iter().map(|v| v * v).sum::<f64>();
            if self.collision_active() {
                total += p.w3 * self.world.l_col(q, p).0;
            }
        }
        total
    }

    fn gradient(&self, z: &[f64], grad: &mut [f64]) -> f64 {
        let (m, p) = (self.layout.m, &self.params);
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut total = 0.0;
        for k in 0..self.layout.n {
            let (iq, iu) = (self.layout.q(k), self.layout.u(k));
            let q = &z[iq..iq + m];
            let (target, w) = self.target(k);
            total += w * smooth_l1_cost(q, target, p.gamma).expect("layout");
            for (g, d) in grad[iq..iq + m]
                .iter_mut()
                .zip(smooth_l1_grad(q, target, p.gamma).expect("layout"))
            {
                *g += w * d;
            }
            if self.collision_active() {
                let (v, dg) = self.world.l_col(q, p);
                total += p.w3 * v;
                for (g, d) in grad[iq..iq + m].iter_mut().zip(dg) {
                    *g += p.w3 * d;
                }
            }
            for j in 0..m {
                let u = z[iu + j];
                total += p.input_weight * u * u;
                grad[iu + j] += 2.0 * p.input_weight * u;
            }
        }
        total
    }

    fn curvature(&self, z: &[f64]) -> BlockDiagonal {
        let (m, p) = (self.layout.m, &self.params);
        let mut blocks = Vec::with_capacity(2 * self.layout.n);
        for k in 0..self.layout.n {
            let iq = self.layout.q(k);
            let q = &z[iq..iq + m];
            let (target, w) = self.target(k);
            let mut hq = if self.collision_active() {
                self.world.collision_terms(q, p, true).curvature * p.w3
            } else {
                DMatrix::zeros(m, m)
            };
            for (j, d) in smooth_l1_hess_diag(q, target, p.gamma).expect("layout").into_iter().enumerate() {
                hq[(j, j)] += w * d;
            }
            blocks.push((iq, hq));
            blocks.push((self.layout.u(k), DMatrix::identity(m, m) * (2.0 * p.input_weight)));
        }
        BlockDiagonal { blocks }
    }
}

/// Everything the objective needs besides the dynamics.
#[derive(Debug, Clone)]
pub struct CostContext {
    pub params: CostParams,
    pub world: CollisionWorld,
    pub q_w: Vec<f64>,
    pub q_g: Vec<f64>,
}

/// Builds the horizon problem: dynamics, initial fixing, steady terminal
/// state, state bounds and the terminal boxes folded into the bounds of
/// `q[n_s - 1]` and `q[n - 1]`.
#[allow(clippy::too_many_arguments)]
pub fn assemble(
    mats: &FohMatrices,
    x_init: &State,
    u_init: &[f64],
    n_s: usize,
    n: usize,
    sets: &TerminalSets,
    bounds: &StateBounds,
    cost: CostContext,
) -> Result<NlpProblem<TrajectoryObjective>, NlpError> {
    let m = mats.params.m;
    if n < 2 {
        return Err(NlpError::HorizonTooShort(n));
    }
    if n_s > n {
        return Err(NlpError::SplitIndex { n_s, n });
    }
    let check = |what, got| {
        if got != m {
            Err(NlpError::Dimension { what, expected: m, got })
        } else {
            Ok(())
        }
    };
    check("initial state", x_init.q.len())?;
    check("initial state", x_init.qdot.len())?;
    check("initial state", x_init.qddot.len())?;
    check("initial input", u_init.len())?;
    check("bounds", bounds.dim())?;
    check("waypoint box", sets.q_w.dim())?;
    check("goal box", sets.q_g.dim())?;
    check("waypoint", cost.q_w.len())?;
    check("goal", cost.q_g.len())?;
    check("robot", cost.world.robot.dof())?;

    let layout = Layout::new(m, n);
    let dim = layout.dim();
    let rows = (n - 1) * 3 * m + 4 * m + 3 * m;
    let mut a = DMatrix::zeros(rows, dim);
    let mut b = DVector::zeros(rows);
    let mut r = 0;
    for k in 0..n - 1 {
        for i in 0..3 * m {
            a[(r + i, layout.x(k + 1) + i)] = 1.0;
            for j in 0..3 * m {
                let v = mats.phi[(i, j)];
                if v != 0.0 {
                    a[(r + i, layout.x(k) + j)] = -v;
                }
            }
            for j in 0..m {
                let (g1, g2) = (mats.gamma1[(i, j)], mats.gamma2[(i, j)]);
                if g1 != 0.0 {
                    a[(r + i, layout.u(k) + j)] = -g1;
                }
                if g2 != 0.0 {
                    a[(r + i, layout.u(k + 1) + j)] = -g2;
                }
            }
        }
        r += 3 * m;
    }
    let x0 = x_init.to_vector();
    for i in 0..3 * m {
        a[(r, layout.x(0) + i)] = 1.0;
        b[r] = x0[i];
        r += 1;
    }
    for j in 0..m {
        a[(r, layout.u(0) + j)] = 1.0;
        b[r] = u_init[j];
        r += 1;
    }
    // steady terminal state: qdot = qddot = 0 and zero final jerk
    for i in 0..2 * m {
        a[(r, layout.qdot(n - 1) + i)] = 1.0;
        r += 1;
    }
    for j in 0..m {
        a[(r, layout.u(n - 1) + j)] = 1.0;
        r += 1;
    }
    debug_assert_eq!(r, rows);

    let mut lower = vec![f64::NEG_INFINITY; dim];
    let mut upper = vec![f64::INFINITY; dim];
    let set = |lower: &mut [f64], upper: &mut [f64], off: usize, bx: &JointBox| {
        for j in 0..m {
            lower[off + j] = lower[off + j].max(bx.lower[j]);
            upper[off + j] = upper[off + j].min(bx.upper[j]);
        }
    };
    for k in 0..n {
        set(&mut lower, &mut upper, layout.q(k), &bounds.q);
        set(&mut lower, &mut upper, layout.qdot(k), &bounds.qdot);
        set(&mut lower, &mut upper, layout.qddot(k), &bounds.qddot);
        if let Some(ub) = &bounds.u {
            set(&mut lower, &mut upper, layout.u(k), ub);
        }
    }
    // at n_s == 1 the constrained sample is the fixed initial state
    if n_s >= 2 {
        set(&mut lower, &mut upper, layout.q(n_s - 1), &sets.q_w);
    }
    set(&mut lower, &mut upper, layout.q(n - 1), &sets.q_g);

    Ok(NlpProblem {
        objective: TrajectoryObjective {
            layout,
            n_s,
            params: cost.params,
            world: cost.world,
            q_w: cost.q_w,
            q_g: cost.q_g,
        },
        eq_matrix: a,
        eq_rhs: b,
        lower,
        upper,
    })
}
