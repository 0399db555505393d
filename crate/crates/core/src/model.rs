//! First-order-hold triple integrator.
//!
//! Each joint is modelled as a chain of three integrators driven by jerk. The
//! jerk is assumed to vary linearly between samples, which gives the discrete
//! update `x[k+1] = Phi x[k] + Gamma1 u[k] + Gamma2 u[k+1]`. All matrices are
//! the scalar 3x3 (or 3x1) blocks expanded with a Kronecker product over the
//! `m` joints, so the stacked state is always `[q; qdot; qddot]`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("sampling time must be positive, got {0}")]
    InvalidSamplingTime(f64),
    #[error("joint count must be at least 1")]
    NoJoints,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("rollout needs at least 2 input samples, got {0}")]
    TooShort(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Number of joints.
    pub m: usize,
    /// Sampling time in seconds.
    pub h: f64,
}

impl ModelParams {
    pub fn new(m: usize, h: f64) -> Result<Self, ModelError> {
        let params = Self { m, h };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.m < 1 {
            return Err(ModelError::NoJoints);
        }
        if !(self.h > 0.0) || !self.h.is_finite() {
            return Err(ModelError::InvalidSamplingTime(self.h));
        }
        Ok(())
    }
}

/// Joint positions, velocities and accelerations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub q: Vec<f64>,
    pub qdot: Vec<f64>,
    pub qddot: Vec<f64>,
}

impl State {
    pub fn zeros(m: usize) -> Self {
        Self {
            q: vec![0.0; m],
            qdot: vec![0.0; m],
            qddot: vec![0.0; m],
        }
    }

    /// Resting state at the given configuration.
    pub fn at_rest(q: &[f64]) -> Self {
        Self {
            q: q.to_vec(),
            qdot: vec![0.0; q.len()],
            qddot: vec![0.0; q.len()],
        }
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    fn check(&self) -> Result<usize, ModelError> {
        let m = self.q.len();
        for len in [self.qdot.len(), self.qddot.len()] {
            if len != m {
                return Err(ModelError::Dimension { expected: m, got: len });
            }
        }
        Ok(m)
    }

    /// Stacked `[q; qdot; qddot]`.
    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_iterator(
            3 * self.q.len(),
            self.q
                .iter()
                .chain(self.qdot.iter())
                .chain(self.qddot.iter())
                .copied(),
        )
    }

    pub fn from_slice(stacked: &[f64]) -> Self {
        let m = stacked.len() / 3;
        Self {
            q: stacked[..m].to_vec(),
            qdot: stacked[m..2 * m].to_vec(),
            qddot: stacked[2 * m..3 * m].to_vec(),
        }
    }

    /// True when velocity and acceleration are both within `tol` of zero.
    pub fn is_steady(&self, tol: f64) -> bool {
        self.qdot
            .iter()
            .chain(self.qddot.iter())
            .all(|v| v.abs() <= tol)
    }
}

pub type StateTrajectory = Vec<State>;
pub type InputTrajectory = Vec<Vec<f64>>;

/// Discrete transition and input matrices of the first-order-hold model.
#[derive(Debug, Clone, PartialEq)]
pub struct FohMatrices {
    pub params: ModelParams,
    pub phi: DMatrix<f64>,
    pub gamma1: DMatrix<f64>,
    pub gamma2: DMatrix<f64>,
}

/// Scalar blocks before the Kronecker expansion.
pub(crate) fn scalar_blocks(h: f64) -> ([[f64; 3]; 3], [f64; 3], [f64; 3]) {
    let h2 = h * h;
    let h3 = h2 * h;
    let a = [[1.0, h, h2 / 2.0], [0.0, 1.0, h], [0.0, 0.0, 1.0]];
    let g1 = [h3 / 8.0, h2 / 3.0, h / 2.0];
    let g2 = [h3 / 24.0, h2 / 6.0, h / 2.0];
    (a, g1, g2)
}

pub fn foh_matrices(params: ModelParams) -> Result<FohMatrices, ModelError> {
    params.validate()?;
    let m = params.m;
    let (a, g1, g2) = scalar_blocks(params.h);
    let mut phi = DMatrix::zeros(3 * m, 3 * m);
    let mut gamma1 = DMatrix::zeros(3 * m, m);
    let mut gamma2 = DMatrix::zeros(3 * m, m);
    for r in 0..3 {
        for j in 0..m {
            for c in 0..3 {
                phi[(r * m + j, c * m + j)] = a[r][c];
            }
            gamma1[(r * m + j, j)] = g1[r];
            gamma2[(r * m + j, j)] = g2[r];
        }
    }
    Ok(FohMatrices {
        params,
        phi,
        gamma1,
        gamma2,
    })
}

fn check_input(u: &[f64], m: usize) -> Result<(), ModelError> {
    if u.len() != m {
        return Err(ModelError::Dimension {
            expected: m,
            got: u.len(),
        });
    }
    Ok(())
}

pub fn step(x: &State, u_k: &[f64], u_next: &[f64], mats: &FohMatrices) -> Result<State, ModelError> {
    let m = mats.params.m;
    let got = x.check()?;
    if got != m {
        return Err(ModelError::Dimension { expected: m, got });
    }
    check_input(u_k, m)?;
    check_input(u_next, m)?;
    let next = &mats.phi * x.to_vector()
        + &mats.gamma1 * DVector::from_column_slice(u_k)
        + &mats.gamma2 * DVector::from_column_slice(u_next);
    Ok(State::from_slice(next.as_slice()))
}

/// Integrates the model over the whole input sequence starting at `x0`.
pub fn rollout(x0: &State, inputs: &[Vec<f64>], mats: &FohMatrices) -> Result<StateTrajectory, ModelError> {
    if inputs.len() < 2 {
        return Err(ModelError::TooShort(inputs.len()));
    }
    let mut states = Vec::with_capacity(inputs.len());
    states.push(x0.clone());
    for k in 0..inputs.len() - 1 {
        let next = step(&states[k], &inputs[k], &inputs[k + 1], mats)?;
        states.push(next);
    }
    Ok(states)
}

/// Largest absolute dynamics defect `x[k+1] - (Phi x[k] + Gamma1 u[k] + Gamma2 u[k+1])`.
pub fn max_defect(states: &[State], inputs: &[Vec<f64>], mats: &FohMatrices) -> Result<f64, ModelError> {
    if states.len() != inputs.len() {
        return Err(ModelError::Dimension {
            expected: states.len(),
            got: inputs.len(),
        });
    }
    let mut worst = 0.0_f64;
    for k in 0..states.len().saturating_sub(1) {
        let predicted = step(&states[k], &inputs[k], &inputs[k + 1], mats)?.to_vector();
        let actual = states[k + 1].to_vector();
        worst = worst.max((actual - predicted).amax());
    }
    Ok(worst)
}
