//! Objective terms: smoothed 1-norm cost-to-go, segment weights, the softplus
//! collision penalty and the full horizon objective.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::collision::CollisionWorld;
use crate::model::State;

#[derive(Debug, Error, PartialEq)]
pub enum CostError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("split index {n_s} and horizon {n} invalid for trajectory of length {len}")]
    Indices { n_s: usize, n: usize, len: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    /// Weight of the cost-to-go towards the waypoint.
    pub w1: f64,
    /// Weight of the cost-to-go towards the goal.
    pub w2: f64,
    /// Collision weight.
    pub w3: f64,
    /// Smoothing of the 1-norm (rad).
    pub gamma: f64,
    /// Scale of the distance-based segment weights.
    pub sigma: f64,
    /// Lower clamp on segment length when computing weights (rad).
    pub d_min: f64,
    /// Softplus steepness (1/m).
    pub alpha: f64,
    /// Softplus shift (m).
    pub beta: f64,
    /// Weight on the squared jerk.
    pub input_weight: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        Self {
            w1: 1.0,
            w2: 1.0,
            w3: 100.0,
            gamma: 0.1,
            sigma: 20.0,
            d_min: 0.01,
            alpha: 1000.0,
            beta: 0.001,
            input_weight: 1.0,
        }
    }
}

fn check_len(a: &[f64], b: &[f64]) -> Result<(), CostError> {
    if a.len() != b.len() {
        return Err(CostError::Dimension {
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(())
}

/// `sum_i sqrt((q_i - r_i)^2 + gamma^2) - gamma`.
pub fn smooth_l1_cost(q: &[f64], q_ref: &[f64], gamma: f64) -> Result<f64, CostError> {
    check_len(q, q_ref)?;
    Ok(q.iter()
        .zip(q_ref)
        .map(|(a, b)| {
            let d = a - b;
            // sqrt(d^2 + g^2) - g without cancellation for small d
            d * d / ((d * d + gamma * gamma).sqrt() + gamma)
        })
        .sum())
}

pub fn smooth_l1_grad(q: &[f64], q_ref: &[f64], gamma: f64) -> Result<Vec<f64>, CostError> {
    check_len(q, q_ref)?;
    Ok(q.iter()
        .zip(q_ref)
        .map(|(a, b)| {
            let d = a - b;
            d / (d * d + gamma * gamma).sqrt()
        })
        .collect())
}

/// Diagonal of the Hessian of [`smooth_l1_cost`]; always positive.
pub fn smooth_l1_hess_diag(q: &[f64], q_ref: &[f64], gamma: f64) -> Result<Vec<f64>, CostError> {
    check_len(q, q_ref)?;
    Ok(q.iter()
        .zip(q_ref)
        .map(|(a, b)| {
            let d = a - b;
            let s = d * d + gamma * gamma;
            gamma * gamma / (s * s.sqrt())
        })
        .collect())
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Weights inversely proportional to the segment lengths init->waypoint and
/// waypoint->goal, clamped below by `d_min`.
pub fn segment_weights(
    q_init: &[f64],
    q_w: &[f64],
    q_g: &[f64],
    sigma: f64,
    d_min: f64,
) -> Result<(f64, f64), CostError> {
    check_len(q_init, q_w)?;
    check_len(q_w, q_g)?;
    let w1 = sigma / distance(q_w, q_init).max(d_min);
    let w2 = sigma / distance(q_g, q_w).max(d_min);
    Ok((w1, w2))
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `(1/alpha) log(1 + exp(-alpha (d + beta)))`, evaluated without overflow.
pub fn collision_penalty(d: f64, alpha: f64, beta: f64) -> f64 {
    softplus(-alpha * (d + beta)) / alpha
}

/// First and second derivative of [`collision_penalty`] with respect to `d`.
pub fn collision_penalty_derivs(d: f64, alpha: f64, beta: f64) -> (f64, f64) {
    let s = logistic(-alpha * (d + beta));
    (-s, alpha * s * (1.0 - s))
}

/// Objective over a whole horizon.
///
/// `w1` applies to samples `0..n_s`, `w2` to `n_s..n`; jerk and collision
/// terms apply to every sample.
#[allow(clippy::too_many_arguments)]
pub fn total_objective(
    xs: &[State],
    us: &[Vec<f64>],
    n_s: usize,
    n: usize,
    params: &CostParams,
    world: &CollisionWorld,
    q_w: &[f64],
    q_g: &[f64],
) -> Result<f64, CostError> {
    if n_s > n || n != xs.len() || n != us.len() {
        return Err(CostError::Indices {
            n_s,
            n,
            len: xs.len(),
        });
    }
    let mut total = 0.0;
    for (k, (x, u)) in xs.iter().zip(us).enumerate() {
        if k < n_s {
            total += params.w1 * smooth_l1_cost(&x.q, q_w, params.gamma)?;
        } else {
            total += params.w2 * smooth_l1_cost(&x.q, q_g, params.gamma)?;
        }
        total += params.input_weight * u.iter().map(|v| v * v).sum::<f64>();
        if params.w3 != 0.0 && !world.obstacles.is_empty() {
            let (col, _) = world.l_col(&x.q, params);
            total += params.w3 * col;
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn smooth_l1_zero_at_reference() {
        assert_eq!(smooth_l1_cost(&[0.3, -0.2], &[0.3, -0.2], 0.1).unwrap(), 0.0);
        assert_eq!(smooth_l1_grad(&[0.3], &[0.3], 0.1).unwrap(), vec![0.0]);
    }

    #[test]
    fn smooth_l1_unit_distance() {
        let c = smooth_l1_cost(&[1.0], &[0.0], 0.1).unwrap();
        assert_relative_eq!(c, 1.01_f64.sqrt() - 0.1, epsilon = 1e-14);
        assert_relative_eq!(c, 0.9049876, epsilon = 1e-7);
    }

    #[test]
    fn smooth_l1_approaches_abs_for_small_gamma() {
        let c = smooth_l1_cost(&[2.0, -1.0], &[0.0, 0.5], 1e-8).unwrap();
        assert_relative_eq!(c, 3.5, epsilon = 1e-7);
    }

    #[test]
    fn smooth_l1_gradient_value() {
        let g = smooth_l1_grad(&[0.1], &[0.0], 0.1).unwrap();
        assert_relative_eq!(g[0], 0.1 / 0.02_f64.sqrt(), epsilon = 1e-15);
        assert_relative_eq!(g[0], std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-15);
    }

    #[test]
    fn smooth_l1_dimension_mismatch() {
        assert!(smooth_l1_cost(&[0.0], &[0.0, 1.0], 0.1).is_err());
        assert!(smooth_l1_grad(&[0.0, 0.0], &[0.0], 0.1).is_err());
    }

    #[test]
    fn weights_examples() {
        let (w1, _) = segment_weights(&[0.0, 0.0], &[2.0, 0.0], &[3.0, 0.0], 20.0, 0.01).unwrap();
        assert_relative_eq!(w1, 10.0);
        let (_, w2) = segment_weights(&[0.0], &[1.0], &[1.0], 20.0, 0.01).unwrap();
        assert_relative_eq!(w2, 2000.0, epsilon = 1e-9);
        let (w1, w2) = segment_weights(&[0.0], &[1.0], &[2.0], 20.0, 0.01).unwrap();
        assert_eq!(w1, w2);
    }

    #[test]
    fn penalty_values() {
        assert_relative_eq!(collision_penalty(-0.001, 1000.0, 0.001), 2f64.ln() / 1000.0, epsilon = 1e-15);
        assert_relative_eq!(collision_penalty(-0.001, 1000.0, 0.001), 6.9315e-4, epsilon = 1e-8);
        let expected = (9.0 + (-9.0f64).exp().ln_1p()) / 1000.0;
        assert_relative_eq!(collision_penalty(-0.01, 1000.0, 0.001), expected, epsilon = 1e-15);
        assert_relative_eq!(expected, 9.000123e-3, epsilon = 1e-9);
        let far = collision_penalty(0.1, 1000.0, 0.001);
        assert!(far.is_finite() && far > 0.0 && far < 1e-40);
        let deep = collision_penalty(-10.0, 1000.0, 0.001);
        assert!(deep.is_finite());
        assert_relative_eq!(deep, 9.999, epsilon = 1e-12);
    }

    #[test]
    fn penalty_decreasing_and_convex() {
        let ds: Vec<f64> = (0..400).map(|i| -0.02 + i as f64 * 1e-4).collect();
        let vals: Vec<f64> = ds.iter().map(|&d| collision_penalty(d, 1000.0, 0.001)).collect();
        for w in vals.windows(2) {
            assert!(w[1] < w[0]);
        }
        for w in vals.windows(3) {
            assert!(w[0] - 2.0 * w[1] + w[2] >= -1e-18);
        }
    }

    #[test]
    fn penalty_derivatives_match_differences() {
        for &d in &[-0.02, -0.003, -0.001, 0.0, 0.002] {
            let eps = 1e-7;
            let (d1, d2) = collision_penalty_derivs(d, 1000.0, 0.001);
            let fd1 = (collision_penalty(d + eps, 1000.0, 0.001) - collision_penalty(d - eps, 1000.0, 0.001)) / (2.0 * eps);
            let (p1, _) = collision_penalty_derivs(d + eps, 1000.0, 0.001);
            let (m1, _) = collision_penalty_derivs(d - eps, 1000.0, 0.001);
            assert_relative_eq!(d1, fd1, epsilon = 1e-6);
            assert_relative_eq!(d2, (p1 - m1) / (2.0 * eps), epsilon = 1e-3, max_relative = 1e-5);
        }
    }

    #[test]
    fn objective_summation_bounds() {
        let world = CollisionWorld::free_space(crate::collision::PlanarArm::two_link_demo());
        let xs = vec![State::at_rest(&[1.0, 0.0]), State::at_rest(&[1.0, 0.0])];
        let us = vec![vec![0.0, 0.0]; 2];
        let params = CostParams {
            w1: 3.0,
            w2: 7.0,
            ..CostParams::default()
        };
        let l = smooth_l1_cost(&[1.0, 0.0], &[0.0, 0.0], 0.1).unwrap();
        // n_s = n: no goal term
        let v = total_objective(&xs, &us, 2, 2, &params, &world, &[0.0, 0.0], &[1.0, 0.0]).unwrap();
        assert_relative_eq!(v, 2.0 * 3.0 * l, epsilon = 1e-14);
        // n_s = 0: no waypoint term
        let v = total_objective(&xs, &us, 0, 2, &params, &world, &[0.0, 0.0], &[1.0, 0.0]).unwrap();
        assert_eq!(v, 0.0);
        assert!(total_objective(&xs, &us, 3, 2, &params, &world, &[0.0, 0.0], &[1.0, 0.0]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn smooth_l1_sandwich(
                q in prop::collection::vec(-3.0..3.0f64, 1..6),
                gamma in 1e-4..1.0f64,
            ) {
                let r: Vec<f64> = q.iter().map(|v| v * 0.3 - 0.1).collect();
                let c = smooth_l1_cost(&q, &r, gamma).unwrap();
                let l1: f64 = q.iter().zip(&r).map(|(a, b)| (a - b).abs()).sum();
                prop_assert!(c <= l1 + 1e-12);
                prop_assert!(c >= l1 - q.len() as f64 * gamma - 1e-12);
                for g in smooth_l1_grad(&q, &r, gamma).unwrap() {
                    prop_assert!(g > -1.0 && g < 1.0);
                }
            }
        }
    }
}
