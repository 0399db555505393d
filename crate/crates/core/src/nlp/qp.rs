//! Dense strictly convex QP with inequality constraints, solved by the dual
//! active-set method of Goldfarb and Idnani.
//!
//! ```text
//!     minimize    1/2 x' H x + g' x
//!     subject to  C x >= d
//! ```
//!
//! The method starts at the unconstrained minimizer and adds violated
//! constraints one at a time while keeping dual feasibility, so no feasible
//! starting point is needed and an empty feasible set is detected directly.
//! Linear algebra is recomputed from a Cholesky factor of `H` at each step;
//! problem sizes here are a few dozen variables.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("hessian is not positive definite")]
    NotPositiveDefinite,
    #[error("constraints are infeasible")]
    Infeasible,
    #[error("active-set iteration limit reached")]
    IterationLimit,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// One multiplier per constraint row, zero for inactive rows.
    pub multipliers: Vec<f64>,
    pub active: Vec<usize>,
    pub iterations: usize,
}

struct ActiveSystem {
    w: DMatrix<f64>,
    schur: Option<Cholesky<f64, Dyn>>,
    schur_lu: Option<nalgebra::LU<f64, Dyn, Dyn>>,
    na: DMatrix<f64>,
}

impl ActiveSystem {
    fn new(chol: &Cholesky<f64, Dyn>, c: &DMatrix<f64>, active: &[usize]) -> Self {
        let n = c.ncols();
        let mut na = DMatrix::zeros(active.len(), n);
        for (r, &j) in active.iter().enumerate() {
            na.row_mut(r).copy_from(&c.row(j));
        }
        let w = chol.solve(&na.transpose());
        let s = &na * &w;
        let schur = s.clone().cholesky();
        let schur_lu = if schur.is_none() { Some(s.lu()) } else { None };
        Self { w, schur, schur_lu, na }
    }

    /// Primal step direction and the change of the active multipliers for
    /// adding constraint with normal `np`, where `v = H^-1 np`.
    fn directions(&self, v: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        if self.na.nrows() == 0 {
            return (v.clone(), DVector::zeros(0));
        }
        let rhs = &self.na * v;
        let r = match (&self.schur, &self.schur_lu) {
            (Some(ch), _) => ch.solve(&rhs),
            (None, Some(lu)) => lu.solve(&rhs).unwrap_or_else(|| DVector::zeros(rhs.len())),
            _ => unreachable!(),
        };
        let z = v - &self.w * &r;
        (z, r)
    }
}

/// `tol` is the accepted absolute violation `d_j - c_j x` at the solution.
pub fn solve_qp(
    hessian: &DMatrix<f64>,
    g: &DVector<f64>,
    c: &DMatrix<f64>,
    d: &DVector<f64>,
    tol: f64,
) -> Result<QpSolution, QpError> {
    let n = hessian.nrows();
    let nc = c.nrows();
    if n == 0 {
        // nothing to optimize; feasibility only
        if d.iter().any(|&dj| dj > tol) {
            return Err(QpError::Infeasible);
        }
        return Ok(QpSolution {
            x: DVector::zeros(0),
            multipliers: vec![0.0; nc],
            active: Vec::new(),
            iterations: 0,
        });
    }
    let chol = hessian.clone().cholesky().ok_or(QpError::NotPositiveDefinite)?;
    let mut x = -chol.solve(g);
    let mut active: Vec<usize> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    let mut is_active = vec![false; nc];
    let limit = 50 + 10 * nc;
    let mut iterations = 0;

    loop {
        iterations += 1;
        if iterations > limit {
            return Err(QpError::IterationLimit);
        }
        let slack = c * &x - d;
        let mut add = None;
        let mut worst = tol;
        for j in 0..nc {
            if !is_active[j] && -slack[j] > worst {
                worst = -slack[j];
                add = Some(j);
            }
        }
        let Some(p) = add else {
            let mut multipliers = vec![0.0; nc];
            for (&j, &uj) in active.iter().zip(&u) {
                multipliers[j] = uj.max(0.0);
            }
            return Ok(QpSolution {
                x,
                multipliers,
                active,
                iterations,
            });
        };
        let np = c.row(p).transpose();
        let v = chol.solve(&np);
        let vn = v.dot(&np);
        let mut up = 0.0;
        loop {
            iterations += 1;
            if iterations > limit {
                return Err(QpError::IterationLimit);
            }
            let system = ActiveSystem::new(&chol, c, &active);
            let (z, r) = system.directions(&v);
            let zn = z.dot(&np);
            let mut t1 = f64::INFINITY;
            let mut block = None;
            for (k, &rk) in r.iter().enumerate() {
                if rk > 0.0 {
                    let t = u[k] / rk;
                    if t < t1 {
                        t1 = t;
                        block = Some(k);
                    }
                }
            }
            if zn <= 1e-12 * vn {
                // np is a combination of the active normals: only the duals move
                let Some(k) = block else {
                    return Err(QpError::Infeasible);
                };
                for (uk, rk) in u.iter_mut().zip(r.iter()) {
                    *uk = (*uk - t1 * rk).max(0.0);
                }
                up += t1;
                is_active[active[k]] = false;
                active.remove(k);
                u.remove(k);
                continue;
            }
            let sp = np.dot(&x) - d[p];
            let t2 = (-sp / zn).max(0.0);
            let t = t1.min(t2);
            x.axpy(t, &z, 1.0);
            for (uk, rk) in u.iter_mut().zip(r.iter()) {
                *uk = (*uk - t * rk).max(0.0);
            }
            up += t;
            if t2 <= t1 {
                active.push(p);
                u.push(up);
                is_active[p] = true;
                break;
            }
            let k = block.expect("partial step has a blocking constraint");
            is_active[active[k]] = false;
            active.remove(k);
            u.remove(k);
        }
    }
}
