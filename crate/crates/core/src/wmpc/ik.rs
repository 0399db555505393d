//! Closed-form inverse kinematics for planar 2- and 3-link arms.

use std::f64::consts::PI;

use thiserror::Error;

use crate::collision::PlanarArm;

#[derive(Debug, Error, PartialEq)]
pub enum IkError {
    #[error("target is outside the reachable workspace")]
    Unreachable,
    #[error("no solution within joint limits")]
    Limits,
    #[error("inverse kinematics supports 2 or 3 joints, arm has {0}")]
    UnsupportedArm(usize),
    #[error("target must be [x, y] or [x, y, phi], got {0} values")]
    Target(usize),
    #[error("previous configuration has {got} joints, arm has {expected}")]
    Dimension { expected: usize, got: usize },
}

const PHI_SAMPLES: usize = 720;

/// Shifts `v` by multiples of 2 pi towards `near`, staying inside `(lo, hi)`
/// if any representative does.
fn wrap_towards(v: f64, near: f64, (lo, hi): (f64, f64)) -> Option<f64> {
    let k0 = ((near - v) / (2.0 * PI)).round();
    let mut best: Option<f64> = None;
    for dk in [-1.0, 0.0, 1.0, -2.0, 2.0] {
        let c = v + (k0 + dk) * 2.0 * PI;
        if c >= lo && c <= hi && best.is_none_or(|b| (c - near).abs() < (b - near).abs()) {
            best = Some(c);
        }
    }
    best
}

/// Both elbow solutions of a 2-link chain reaching `(x, y)` from its base.
fn two_link(l1: f64, l2: f64, x: f64, y: f64) -> Option<[[f64; 2]; 2]> {
    let r2 = x * x + y * y;
    let c2 = (r2 - l1 * l1 - l2 * l2) / (2.0 * l1 * l2);
    if !(-1.0 - 1e-12..=1.0 + 1e-12).contains(&c2) {
        return None;
    }
    let c2 = c2.clamp(-1.0, 1.0);
    let s2 = (1.0 - c2 * c2).sqrt();
    let out = [s2, -s2].map(|s| {
        let q2 = s.atan2(c2);
        let q1 = y.atan2(x) - (l2 * s).atan2(l1 + l2 * c2);
        [q1, q2]
    });
    Some(out)
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn pick(candidates: impl Iterator<Item = Vec<f64>>, arm: &PlanarArm, q_prev: &[f64]) -> Option<Vec<f64>> {
    candidates
        .filter_map(|c| {
            c.iter()
                .zip(q_prev)
                .zip(&arm.joint_limits)
                .map(|((&v, &p), &lim)| wrap_towards(v, p, lim))
                .collect::<Option<Vec<f64>>>()
        })
        .min_by(|a, b| dist2(a, q_prev).total_cmp(&dist2(b, q_prev)))
}

/// Joint configuration placing the tool at `target`, closest to `q_prev`
/// in the least-squares sense among all branches within the joint limits.
///
/// `target` is `[x, y]`, or `[x, y, phi]` with the tool orientation for a
/// 3-link arm. A 3-link arm without orientation sweeps `phi`.
pub fn inverse_kinematics_planar(target: &[f64], arm: &PlanarArm, q_prev: &[f64]) -> Result<Vec<f64>, IkError> {
    let m = arm.dof();
    if q_prev.len() != m {
        return Err(IkError::Dimension { expected: m, got: q_prev.len() });
    }
    if !(target.len() == 2 || (target.len() == 3 && m == 3)) {
        return Err(IkError::Target(target.len()));
    }
    let (x, y) = (target[0] - arm.base[0], target[1] - arm.base[1]);
    let l = &arm.link_lengths;
    match m {
        2 => {
            let sols = two_link(l[0], l[1], x, y).ok_or(IkError::Unreachable)?;
            pick(sols.into_iter().map(|s| s.to_vec()), arm, q_prev).ok_or(IkError::Limits)
        }
        3 => {
            let phis: Vec<f64> = if target.len() == 3 {
                vec![target[2]]
            } else {
                (0..PHI_SAMPLES)
                    .map(|i| -PI + 2.0 * PI * i as f64 / PHI_SAMPLES as f64)
                    .collect()
            };
            let mut any = false;
            let mut candidates = Vec::new();
            for phi in phis {
                let (wx, wy) = (x - l[2] * phi.cos(), y - l[2] * phi.sin());
                if let Some(sols) = two_link(l[0], l[1], wx, wy) {
                    any = true;
                    for [a, b] in sols {
                        candidates.push(vec![a, b, phi - a - b]);
                    }
                }
            }
            if !any {
                return Err(IkError::Unreachable);
            }
            pick(candidates.into_iter(), arm, q_prev).ok_or(IkError::Limits)
        }
        _ => Err(IkError::UnsupportedArm(m)),
    }
}
