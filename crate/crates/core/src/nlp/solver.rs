//! Sequential quadratic programming in the null space of the equality
//! constraints.
//!
//! The equalities are eliminated once, so every iterate satisfies them up to
//! rounding. Each iteration solves a strictly convex QP in the reduced
//! coordinates with the variable bounds as linear inequalities; the first
//! step is taken in full, which makes an infeasible warm start feasible, and
//! later steps are backtracked on the objective.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use super::elimination::{eliminate, AffineParametrization};
use super::qp::{solve_qp, QpError};
use super::{KktResidual, Multipliers, NlpProblem, Objective, SolveResult, SolveStatus};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    /// Bound on the KKT residual for convergence.
    pub tol: f64,
    pub max_iter: usize,
    /// Wall-clock budget in seconds; `None` disables it.
    pub time_budget: Option<f64>,
    /// Accepted bound violation of a returned iterate.
    pub feasibility_tol: f64,
    /// Also recover the equality multipliers (one dense LU solve).
    pub equality_multipliers: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 100,
            time_budget: Some(0.1),
            feasibility_tol: 1e-9,
            equality_multipliers: false,
        }
    }
}

const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 40;

/// One row `c' y >= d - c' y_current` of the reduced bound system.
struct BoundRow {
    var: usize,
    upper: bool,
}

struct Reduced {
    param: AffineParametrization,
    rows: Vec<BoundRow>,
    c: DMatrix<f64>,
}

impl Reduced {
    /// Right-hand side of the step constraints `C s >= d` at `z`.
    fn rhs<O: Objective>(&self, problem: &NlpProblem<O>, z: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.rows.len(),
            self.rows.iter().map(|r| {
                if r.upper {
                    z[r.var] - problem.upper[r.var]
                } else {
                    problem.lower[r.var] - z[r.var]
                }
            }),
        )
    }
}

fn failure(z: Vec<f64>, status: SolveStatus, n: usize, start: Instant) -> SolveResult {
    SolveResult {
        z_star: z,
        status,
        kkt_residual: f64::INFINITY,
        kkt: KktResidual {
            stationarity: f64::INFINITY,
            primal: f64::INFINITY,
            complementarity: f64::INFINITY,
        },
        multipliers: Multipliers {
            equality: Vec::new(),
            lower: vec![0.0; n],
            upper: vec![0.0; n],
        },
        iterations: 0,
        solve_time: start.elapsed().as_secs_f64(),
        objective: f64::NAN,
        objective_history: Vec::new(),
    }
}

fn reduce<O: Objective>(problem: &NlpProblem<O>, feas_tol: f64) -> Option<Reduced> {
    let n = problem.n_dec();
    let param = if problem.eq_matrix.nrows() == 0 {
        AffineParametrization {
            particular: DVector::zeros(n),
            basis: DMatrix::identity(n, n),
            free: (0..n).collect(),
            pivots: Vec::new(),
            independent_rows: Vec::new(),
        }
    } else {
        eliminate(&problem.eq_matrix, &problem.eq_rhs, 1e-12, 1e-8).ok()?
    };
    let nf = param.dim();
    let mut rows = Vec::new();
    for i in 0..n {
        let has_lower = problem.lower[i].is_finite();
        let has_upper = problem.upper[i].is_finite();
        if !has_lower && !has_upper {
            continue;
        }
        if problem.lower[i] > problem.upper[i] {
            return None;
        }
        let zi = param.basis.row(i);
        if nf == 0 || zi.amax() <= 1e-12 {
            // fixed by the equalities
            let p = param.particular[i];
            if p < problem.lower[i] - feas_tol || p > problem.upper[i] + feas_tol {
                return None;
            }
            continue;
        }
        if has_lower {
            rows.push(BoundRow { var: i, upper: false });
        }
        if has_upper {
            rows.push(BoundRow { var: i, upper: true });
        }
    }
    let mut c = DMatrix::zeros(rows.len(), nf);
    for (r, row) in rows.iter().enumerate() {
        let sign = if row.upper { -1.0 } else { 1.0 };
        for j in 0..nf {
            c[(r, j)] = sign * param.basis[(row.var, j)];
        }
    }
    Some(Reduced { param, rows, c })
}

fn reduced_hessian<O: Objective>(problem: &NlpProblem<O>, basis: &DMatrix<f64>, z: &[f64]) -> DMatrix<f64> {
    let nf = basis.ncols();
    let mut b = DMatrix::zeros(nf, nf);
    for (off, block) in problem.objective.curvature(z).blocks {
        let s = block.nrows();
        let zb = basis.rows(off, s);
        if zb.amax() == 0.0 {
            continue;
        }
        let t = &block * zb;
        b.gemm_tr(1.0, &zb, &t, 1.0);
    }
    b = (&b + b.transpose()) * 0.5;
    let scale = (0..nf).map(|i| b[(i, i)].abs()).fold(0.0, f64::max).max(1.0);
    for i in 0..nf {
        b[(i, i)] += 1e-10 * scale;
    }
    b
}

/// Bound multipliers expanded to the full variable vector.
fn expand(rows: &[BoundRow], mu: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut lower = vec![0.0; n];
    let mut upper = vec![0.0; n];
    for (r, &m) in rows.iter().zip(mu) {
        if r.upper {
            upper[r.var] = m;
        } else {
            lower[r.var] = m;
        }
    }
    (lower, upper)
}

/// Solves `A' lambda = -(grad f - mu_l + mu_u)` on the independent rows,
/// using the pivot columns of the elimination.
fn equality_multipliers<O: Objective>(
    problem: &NlpProblem<O>,
    param: &AffineParametrization,
    residual: &DVector<f64>,
) -> Vec<f64> {
    let rows = &param.independent_rows;
    let k = rows.len();
    let mut lambda = vec![0.0; problem.eq_matrix.nrows()];
    if k == 0 {
        return lambda;
    }
    let mut at = DMatrix::zeros(k, k);
    let mut rhs = DVector::zeros(k);
    for (a, &p) in param.pivots.iter().enumerate() {
        rhs[a] = -residual[p];
        for (b, &r) in rows.iter().enumerate() {
            at[(a, b)] = problem.eq_matrix[(r, p)];
        }
    }
    if let Some(sol) = at.lu().solve(&rhs) {
        for (b, &r) in rows.iter().enumerate() {
            lambda[r] = sol[b];
        }
    }
    lambda
}

pub fn solve<O: Objective>(problem: &NlpProblem<O>, z_ws: &[f64], settings: &SolverSettings) -> SolveResult {
    let start = Instant::now();
    let n = problem.n_dec();
    assert_eq!(z_ws.len(), n, "warm start length");
    let Some(red) = reduce(problem, settings.feasibility_tol) else {
        return failure(z_ws.to_vec(), SolveStatus::Infeasible, n, start);
    };
    let param = &red.param;
    let mut y = param.coordinates(z_ws);
    let mut z = param.point(&y);
    let mut grad = vec![0.0; n];
    let mut f = problem.objective.gradient(z.as_slice(), &mut grad);
    let mut feasible = problem.bound_violation(z.as_slice()) <= settings.feasibility_tol;
    let mut history = Vec::new();
    if feasible {
        history.push(f);
    }
    let mut iterations = 0;
    let mut last_kkt = KktResidual {
        stationarity: f64::INFINITY,
        primal: f64::INFINITY,
        complementarity: f64::INFINITY,
    };
    let mut last_mu = vec![0.0; red.rows.len()];
    let mut status = SolveStatus::MaxIter;

    loop {
        let g = DVector::from_column_slice(&grad);
        let gr = param.basis.tr_mul(&g);
        let hess = reduced_hessian(problem, &param.basis, z.as_slice());
        let d = red.rhs(problem, &z);
        let qp = match solve_qp(&hess, &gr, &red.c, &d, 1e-11 * (1.0 + d.amax().min(1e3))) {
            Ok(sol) => sol,
            Err(QpError::Infeasible) => return failure(z_ws.to_vec(), SolveStatus::Infeasible, n, start),
            Err(_) if !feasible => return failure(z_ws.to_vec(), SolveStatus::Infeasible, n, start),
            Err(_) => break,
        };
        iterations += 1;
        let step = qp.x;

        if feasible {
            let stat = &gr - red.c.tr_mul(&DVector::from_column_slice(&qp.multipliers));
            let comp = red
                .rows
                .iter()
                .zip(&qp.multipliers)
                .map(|(r, m)| {
                    let slack = if r.upper {
                        problem.upper[r.var] - z[r.var]
                    } else {
                        z[r.var] - problem.lower[r.var]
                    };
                    (m * slack).abs()
                })
                .fold(0.0, f64::max);
            last_kkt = KktResidual {
                stationarity: stat.amax(),
                primal: problem.bound_violation(z.as_slice()).max(problem.eq_residual(z.as_slice())),
                complementarity: comp,
            };
            last_mu = qp.multipliers.clone();
            if last_kkt.max() <= settings.tol {
                status = SolveStatus::Converged;
                break;
            }
        }

        let z_step = &param.basis * &step;
        if !feasible {
            // full step onto the linearized (exact) feasible set
            y += &step;
            z = param.point(&y);
            f = problem.objective.gradient(z.as_slice(), &mut grad);
            feasible = problem.bound_violation(z.as_slice()) <= settings.feasibility_tol;
            if !feasible {
                return failure(z_ws.to_vec(), SolveStatus::Infeasible, n, start);
            }
            history.push(f);
        } else {
            let slope = gr.dot(&step);
            let mut t = 1.0;
            let mut accepted = None;
            for _ in 0..MAX_BACKTRACKS {
                let trial = &z + &z_step * t;
                let ft = problem.objective.value(trial.as_slice());
                if ft.is_finite() && ft <= f + ARMIJO * t * slope {
                    accepted = Some(t);
                    break;
                }
                t *= 0.5;
            }
            let Some(t) = accepted else {
                // no descent left at working precision
                break;
            };
            y.axpy(t, &step, 1.0);
            z = param.point(&y);
            f = problem.objective.gradient(z.as_slice(), &mut grad);
            history.push(f);
        }

        if iterations >= settings.max_iter {
            break;
        }
        if let Some(budget) = settings.time_budget {
            if start.elapsed().as_secs_f64() >= budget {
                break;
            }
        }
    }

    if status != SolveStatus::Converged {
        status = SolveStatus::MaxIter;
    }
    let (lower, upper) = expand(&red.rows, &last_mu, n);
    let equality = if settings.equality_multipliers {
        let mut r = DVector::from_column_slice(&grad);
        for i in 0..n {
            r[i] += upper[i] - lower[i];
        }
        equality_multipliers(problem, param, &r)
    } else {
        Vec::new()
    };
    // Removes round-off excursions past active bounds; equality residuals move by ulps.
    let z_star = z
        .iter()
        .zip(problem.lower.iter().zip(&problem.upper))
        .map(|(v, (lo, hi))| v.max(*lo).min(*hi))
        .collect();
    SolveResult {
        z_star,
        status,
        kkt_residual: last_kkt.max(),
        kkt: last_kkt,
        multipliers: Multipliers { equality, lower, upper },
        iterations,
        solve_time: start.elapsed().as_secs_f64(),
        objective: f,
        objective_history: history,
    }
}
