//! Planar arm kinematics, primitive signed distances and the aggregate
//! collision cost.
//!
//! The robot is a serial planar arm whose links carry collision spheres at a
//! fraction of the link length. Obstacles are circles ("spheres"), capsules,
//! or half-spaces. Distances are positive when separated and negative when
//! penetrating.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::costs::{collision_penalty, collision_penalty_derivs, CostParams};

pub type Point2 = [f64; 2];

#[derive(Debug, Error, PartialEq)]
pub enum CollisionError {
    #[error("link {0} has non-positive length")]
    LinkLength(usize),
    #[error("joint {0} has lower limit >= upper limit")]
    JointLimits(usize),
    #[error("expected {expected} joint limits, got {got}")]
    LimitCount { expected: usize, got: usize },
    #[error("sphere {0} is invalid (bad link index, fraction outside [0,1] or non-positive radius)")]
    Sphere(usize),
    #[error("robot has no collision spheres")]
    NoSpheres,
    #[error("obstacle {0} is invalid (non-positive radius or non-unit normal)")]
    Obstacle(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SphereSpec {
    pub link: usize,
    pub fraction: f64,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanarArm {
    pub link_lengths: Vec<f64>,
    pub joint_limits: Vec<(f64, f64)>,
    pub spheres: Vec<SphereSpec>,
    #[serde(default)]
    pub base: Point2,
}

/// World position of one collision sphere and its Jacobian (one column per joint).
#[derive(Debug, Clone, PartialEq)]
pub struct FkPoint {
    pub center: Point2,
    pub radius: f64,
    pub jacobian: Vec<Point2>,
}

impl PlanarArm {
    /// Two unit links with spheres at the elbow and the tip. Mostly for tests.
    pub fn two_link_demo() -> Self {
        let lim = 170f64.to_radians();
        Self {
            link_lengths: vec![1.0, 1.0],
            joint_limits: vec![(-lim, lim), (-120f64.to_radians(), 120f64.to_radians())],
            spheres: vec![
                SphereSpec { link: 0, fraction: 1.0, radius: 0.05 },
                SphereSpec { link: 1, fraction: 1.0, radius: 0.05 },
            ],
            base: [0.0, 0.0],
        }
    }

    pub fn dof(&self) -> usize {
        self.link_lengths.len()
    }

    pub fn validate(&self) -> Result<(), CollisionError> {
        for (i, &l) in self.link_lengths.iter().enumerate() {
            if !(l > 0.0) {
                return Err(CollisionError::LinkLength(i));
            }
        }
        if self.joint_limits.len() != self.dof() {
            return Err(CollisionError::LimitCount {
                expected: self.dof(),
                got: self.joint_limits.len(),
            });
        }
        for (i, &(lo, hi)) in self.joint_limits.iter().enumerate() {
            if !(lo < hi) {
                return Err(CollisionError::JointLimits(i));
            }
        }
        if self.spheres.is_empty() {
            return Err(CollisionError::NoSpheres);
        }
        for (i, s) in self.spheres.iter().enumerate() {
            if s.link >= self.dof() || !(0.0..=1.0).contains(&s.fraction) || !(s.radius > 0.0) {
                return Err(CollisionError::Sphere(i));
            }
        }
        Ok(())
    }

    /// Joint positions (base of each link) and the tip.
    pub fn joint_positions(&self, q: &[f64]) -> Vec<Point2> {
        let mut out = Vec::with_capacity(self.dof() + 1);
        let mut p = self.base;
        let mut theta = 0.0;
        out.push(p);
        for (qi, li) in q.iter().zip(&self.link_lengths) {
            theta += qi;
            p = [p[0] + li * theta.cos(), p[1] + li * theta.sin()];
            out.push(p);
        }
        out
    }

    pub fn end_effector(&self, q: &[f64]) -> Point2 {
        *self.joint_positions(q).last().unwrap()
    }

    pub fn within_limits(&self, q: &[f64], tol: f64) -> bool {
        q.iter()
            .zip(&self.joint_limits)
            .all(|(v, (lo, hi))| *v >= lo - tol && *v <= hi + tol)
    }

    /// Sphere centres and Jacobians. Panics if `q` has the wrong length; use
    /// [`PlanarArm::try_fk_points`] for a checked variant.
    pub fn fk_points(&self, q: &[f64]) -> Vec<FkPoint> {
        self.try_fk_points(q).expect("joint vector length")
    }

    pub fn try_fk_points(&self, q: &[f64]) -> Result<Vec<FkPoint>, crate::model::ModelError> {
        if q.len() != self.dof() {
            return Err(crate::model::ModelError::Dimension {
                expected: self.dof(),
                got: q.len(),
            });
        }
        let joints = self.joint_positions(q);
        let mut theta = Vec::with_capacity(q.len());
        let mut acc = 0.0;
        for qi in q {
            acc += qi;
            theta.push(acc);
        }
        Ok(self
            .spheres
            .iter()
            .map(|s| {
                let l = s.link;
                let base = joints[l];
                let len = s.fraction * self.link_lengths[l];
                let center = [base[0] + len * theta[l].cos(), base[1] + len * theta[l].sin()];
                // rotating joint j moves the point perpendicular to (c - p_j)
                let jacobian = (0..q.len())
                    .map(|j| {
                        if j <= l {
                            let r = [center[0] - joints[j][0], center[1] - joints[j][1]];
                            [-r[1], r[0]]
                        } else {
                            [0.0, 0.0]
                        }
                    })
                    .collect();
                FkPoint {
                    center,
                    radius: s.radius,
                    jacobian,
                }
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Obstacle {
    Sphere { center: Point2, radius: f64 },
    Capsule { start: Point2, end: Point2, radius: f64 },
    /// Occupies `{x : normal . (x - point) <= 0}`; `normal` points into free space.
    HalfSpace { point: Point2, normal: Point2 },
}

fn sub(a: Point2, b: Point2) -> Point2 {
    [a[0] - b[0], a[1] - b[1]]
}

fn dot(a: Point2, b: Point2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

fn norm(a: Point2) -> f64 {
    a[0].hypot(a[1])
}

impl Obstacle {
    pub fn validate(&self) -> bool {
        match self {
            Obstacle::Sphere { radius, .. } | Obstacle::Capsule { radius, .. } => *radius > 0.0,
            Obstacle::HalfSpace { normal, .. } => (norm(*normal) - 1.0).abs() < 1e-9,
        }
    }

    /// Centre, segment midpoint, or boundary point.
    pub fn reference_point(&self) -> Point2 {
        match self {
            Obstacle::Sphere { center, .. } => *center,
            Obstacle::Capsule { start, end, .. } => [(start[0] + end[0]) / 2.0, (start[1] + end[1]) / 2.0],
            Obstacle::HalfSpace { point, .. } => *point,
        }
    }

    /// Copy of the obstacle rigidly translated so that its reference point is at `position`.
    pub fn moved_to(&self, position: Point2) -> Obstacle {
        let shift = sub(position, self.reference_point());
        let mv = |p: &Point2| [p[0] + shift[0], p[1] + shift[1]];
        match self {
            Obstacle::Sphere { center, radius } => Obstacle::Sphere {
                center: mv(center),
                radius: *radius,
            },
            Obstacle::Capsule { start, end, radius } => Obstacle::Capsule {
                start: mv(start),
                end: mv(end),
                radius: *radius,
            },
            Obstacle::HalfSpace { point, normal } => Obstacle::HalfSpace {
                point: mv(point),
                normal: *normal,
            },
        }
    }

    /// Signed distance to a sphere and its gradient with respect to the sphere centre.
    pub fn signed_distance(&self, center: Point2, radius: f64) -> (f64, Point2) {
        match self {
            Obstacle::Sphere { center: c, radius: r } => {
                let v = sub(center, *c);
                let n = norm(v);
                let grad = if n > 0.0 { [v[0] / n, v[1] / n] } else { [1.0, 0.0] };
                (n - r - radius, grad)
            }
            Obstacle::Capsule { start, end, radius: r } => {
                let axis = sub(*end, *start);
                let len2 = dot(axis, axis);
                let t = if len2 > 0.0 {
                    (dot(sub(center, *start), axis) / len2).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                let closest = [start[0] + t * axis[0], start[1] + t * axis[1]];
                let v = sub(center, closest);
                let n = norm(v);
                let grad = if n > 0.0 {
                    [v[0] / n, v[1] / n]
                } else if len2 > 0.0 {
                    let l = len2.sqrt();
                    [-axis[1] / l, axis[0] / l]
                } else {
                    [1.0, 0.0]
                };
                (n - r - radius, grad)
            }
            Obstacle::HalfSpace { point, normal } => (dot(sub(center, *point), *normal) - radius, *normal),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollisionWorld {
    pub obstacles: Vec<Obstacle>,
    pub robot: PlanarArm,
}

/// Collision cost at one configuration with its gradient and Gauss-Newton curvature.
#[derive(Debug, Clone)]
pub struct CollisionTerms {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub curvature: DMatrix<f64>,
}

impl CollisionWorld {
    pub fn free_space(robot: PlanarArm) -> Self {
        Self {
            obstacles: Vec::new(),
            robot,
        }
    }

    pub fn validate(&self) -> Result<(), CollisionError> {
        self.robot.validate()?;
        for (i, o) in self.obstacles.iter().enumerate() {
            if !o.validate() {
                return Err(CollisionError::Obstacle(i));
            }
        }
        Ok(())
    }

    /// Sum of the softplus penalty over every obstacle/sphere pair, with its
    /// gradient in joint space.
    pub fn l_col(&self, q: &[f64], params: &CostParams) -> (f64, Vec<f64>) {
        let terms = self.collision_terms(q, params, false);
        (terms.value, terms.gradient)
    }

    pub fn collision_terms(&self, q: &[f64], params: &CostParams, with_curvature: bool) -> CollisionTerms {
        let m = q.len();
        let mut value = 0.0;
        let mut gradient = vec![0.0; m];
        let mut curvature = DMatrix::zeros(if with_curvature { m } else { 0 }, if with_curvature { m } else { 0 });
        if self.obstacles.is_empty() {
            return CollisionTerms {
                value,
                gradient,
                curvature,
            };
        }
        let points = self.robot.fk_points(q);
        let mut dq = vec![0.0; m];
        for obstacle in &self.obstacles {
            for p in &points {
                let (d, gc) = obstacle.signed_distance(p.center, p.radius);
                value += collision_penalty(d, params.alpha, params.beta);
                let (d1, d2) = collision_penalty_derivs(d, params.alpha, params.beta);
                if d1 == 0.0 && d2 == 0.0 {
                    continue;
                }
                for (j, col) in p.jacobian.iter().enumerate() {
                    dq[j] = dot(gc, *col);
                    gradient[j] += d1 * dq[j];
                }
                if with_curvature {
                    for a in 0..m {
                        for b in 0..m {
                            curvature[(a, b)] += d2 * dq[a] * dq[b];
                        }
                    }
                }
            }
        }
        CollisionTerms {
            value,
            gradient,
            curvature,
        }
    }

    /// Smallest signed distance over all pairs; `+inf` without obstacles.
    pub fn min_distance(&self, q: &[f64]) -> f64 {
        if self.obstacles.is_empty() {
            return f64::INFINITY;
        }
        let points = self.robot.fk_points(q);
        self.obstacles
            .iter()
            .flat_map(|o| points.iter().map(move |p| o.signed_distance(p.center, p.radius).0))
            .fold(f64::INFINITY, f64::min)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::FRAC_PI_2;

    fn tip_only(arm: &PlanarArm) -> PlanarArm {
        PlanarArm {
            spheres: vec![SphereSpec { link: 1, fraction: 1.0, radius: 0.05 }],
            ..arm.clone()
        }
    }

    #[test]
    fn straight_arm_tip() {
        let arm = tip_only(&PlanarArm::two_link_demo());
        let p = &arm.fk_points(&[0.0, 0.0])[0];
        assert_relative_eq!(p.center[0], 2.0);
        assert_relative_eq!(p.center[1], 0.0);
        let p = &arm.fk_points(&[FRAC_PI_2, 0.0])[0];
        assert_relative_eq!(p.center[0], 0.0, epsilon = 1e-15);
        assert_relative_eq!(p.center[1], 2.0);
    }

    #[test]
    fn fk_dimension_mismatch() {
        let arm = PlanarArm::two_link_demo();
        assert!(arm.try_fk_points(&[0.0]).is_err());
    }

    #[test]
    fn jacobian_matches_differences() {
        let arm = PlanarArm {
            link_lengths: vec![0.7, 0.5, 0.3],
            joint_limits: vec![(-3.0, 3.0); 3],
            spheres: vec![
                SphereSpec { link: 0, fraction: 0.4, radius: 0.05 },
                SphereSpec { link: 1, fraction: 0.9, radius: 0.05 },
                SphereSpec { link: 2, fraction: 1.0, radius: 0.05 },
            ],
            base: [0.1, -0.2],
        };
        let q = [0.3, -0.8, 1.1];
        let pts = arm.fk_points(&q);
        let eps = 1e-6;
        for j in 0..3 {
            let mut qp = q;
            let mut qm = q;
            qp[j] += eps;
            qm[j] -= eps;
            let pp = arm.fk_points(&qp);
            let pm = arm.fk_points(&qm);
            for s in 0..pts.len() {
                for c in 0..2 {
                    let fd = (pp[s].center[c] - pm[s].center[c]) / (2.0 * eps);
                    assert_relative_eq!(pts[s].jacobian[j][c], fd, epsilon = 1e-8);
                }
            }
        }
    }

    #[test]
    fn sphere_sphere_distance() {
        let o = Obstacle::Sphere { center: [0.0, 0.0], radius: 0.1 };
        let (d, g) = o.signed_distance([0.5, 0.0], 0.1);
        assert_relative_eq!(d, 0.3);
        assert_eq!(g, [1.0, 0.0]);
    }

    #[test]
    fn sphere_on_capsule_axis() {
        let o = Obstacle::Capsule { start: [0.0, 0.0], end: [1.0, 0.0], radius: 0.2 };
        let (d, g) = o.signed_distance([0.5, 0.0], 0.1);
        assert_relative_eq!(d, -0.3);
        assert_relative_eq!(norm(g), 1.0);
    }

    #[test]
    fn capsule_end_cap_matches_sampled_segment() {
        let (a, b) = ([0.0, 0.0], [1.0, 0.5]);
        let o = Obstacle::Capsule { start: a, end: b, radius: 0.2 };
        for c in [[1.5, 0.9], [-0.4, -0.3], [0.3, 0.8], [1.2, 0.4]] {
            let (d, _) = o.signed_distance(c, 0.05);
            // dense sampling of the segment as the oracle
            let oracle = (0..=100_000)
                .map(|i| {
                    let t = i as f64 / 100_000.0;
                    let p = [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
                    norm(sub(c, p))
                })
                .fold(f64::INFINITY, f64::min)
                - 0.25;
            assert_relative_eq!(d, oracle, epsilon = 1e-9);
        }
        let cap = Obstacle::Sphere { center: b, radius: 0.2 };
        let beyond = [1.6, 0.8];
        assert_relative_eq!(o.signed_distance(beyond, 0.05).0, cap.signed_distance(beyond, 0.05).0, epsilon = 1e-14);
    }

    #[test]
    fn half_space_distance() {
        let o = Obstacle::HalfSpace { point: [0.0, -0.5], normal: [0.0, 1.0] };
        let (d, g) = o.signed_distance([3.0, 0.5], 0.1);
        assert_relative_eq!(d, 0.9);
        assert_eq!(g, [0.0, 1.0]);
    }

    #[test]
    fn empty_world_has_no_cost() {
        let world = CollisionWorld::free_space(PlanarArm::two_link_demo());
        let (v, g) = world.l_col(&[0.1, 0.2], &CostParams::default());
        assert_eq!(v, 0.0);
        assert_eq!(g, vec![0.0, 0.0]);
        assert_eq!(world.min_distance(&[0.0, 0.0]), f64::INFINITY);
    }

    #[test]
    fn far_obstacle_negligible() {
        let world = CollisionWorld {
            obstacles: vec![Obstacle::Sphere { center: [5.0, 5.0], radius: 0.1 }],
            robot: PlanarArm::two_link_demo(),
        };
        let (v, g) = world.l_col(&[0.0, 0.0], &CostParams::default());
        assert!(v <= 1e-40);
        assert!(g.iter().all(|x| x.abs() < 1e-40));
    }

    #[test]
    fn single_pair_min_distance() {
        let arm = tip_only(&PlanarArm::two_link_demo());
        let o = Obstacle::Sphere { center: [2.5, 0.0], radius: 0.1 };
        let world = CollisionWorld { obstacles: vec![o.clone()], robot: arm };
        assert_relative_eq!(world.min_distance(&[0.0, 0.0]), o.signed_distance([2.0, 0.0], 0.05).0);
    }

    #[test]
    fn min_distance_permutation_invariant() {
        let obstacles = vec![
            Obstacle::Sphere { center: [1.0, 1.0], radius: 0.1 },
            Obstacle::Capsule { start: [-1.0, 0.5], end: [-0.5, 1.5], radius: 0.05 },
            Obstacle::HalfSpace { point: [0.0, -0.3], normal: [0.0, 1.0] },
        ];
        let mut rev = obstacles.clone();
        rev.reverse();
        let a = CollisionWorld { obstacles, robot: PlanarArm::two_link_demo() };
        let b = CollisionWorld { obstacles: rev, robot: PlanarArm::two_link_demo() };
        for q in [[0.3, 0.4], [1.2, -0.5], [-0.2, 1.0]] {
            assert_eq!(a.min_distance(&q), b.min_distance(&q));
        }
    }

    #[test]
    fn validation_errors() {
        let mut arm = PlanarArm::two_link_demo();
        arm.link_lengths[1] = 0.0;
        assert_eq!(arm.validate(), Err(CollisionError::LinkLength(1)));
        let mut arm = PlanarArm::two_link_demo();
        arm.spheres[0].radius = -1.0;
        assert_eq!(arm.validate(), Err(CollisionError::Sphere(0)));
        let world = CollisionWorld {
            obstacles: vec![Obstacle::HalfSpace { point: [0.0, 0.0], normal: [0.0, 2.0] }],
            robot: PlanarArm::two_link_demo(),
        };
        assert_eq!(world.validate(), Err(CollisionError::Obstacle(0)));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn obstacle() -> impl Strategy<Value = Obstacle> {
            prop_oneof![
                (-2.0..2.0f64, -2.0..2.0f64, 0.01..0.5f64)
                    .prop_map(|(x, y, r)| Obstacle::Sphere { center: [x, y], radius: r }),
                (-2.0..2.0f64, -2.0..2.0f64, -2.0..2.0f64, -2.0..2.0f64, 0.01..0.5f64)
                    .prop_map(|(x, y, u, v, r)| Obstacle::Capsule { start: [x, y], end: [u, v], radius: r }),
                (-2.0..2.0f64, -2.0..2.0f64, 0.0..std::f64::consts::TAU)
                    .prop_map(|(x, y, a)| Obstacle::HalfSpace { point: [x, y], normal: [a.cos(), a.sin()] }),
            ]
        }

        proptest! {
            #[test]
            fn signed_distance_is_one_lipschitz(
                o in obstacle(),
                c in (-3.0..3.0f64, -3.0..3.0f64),
                dc in (-0.2..0.2f64, -0.2..0.2f64),
            ) {
                let a = [c.0, c.1];
                let b = [c.0 + dc.0, c.1 + dc.1];
                let (da, _) = o.signed_distance(a, 0.05);
                let (db, _) = o.signed_distance(b, 0.05);
                prop_assert!((da - db).abs() <= norm(sub(a, b)) + 1e-12);
            }

            #[test]
            fn collision_cost_nonnegative(q0 in -3.0..3.0f64, q1 in -2.0..2.0f64, o in obstacle()) {
                let world = CollisionWorld { obstacles: vec![o], robot: PlanarArm::two_link_demo() };
                let (v, _) = world.l_col(&[q0, q1], &CostParams::default());
                prop_assert!(v >= 0.0);
            }
        }
    }
}
