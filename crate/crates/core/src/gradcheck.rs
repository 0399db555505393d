//! Central finite-difference checks of the analytic gradients at seeded
//! random points.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::collision::{CollisionWorld, Obstacle, PlanarArm, SphereSpec};
use crate::costs::{smooth_l1_cost, smooth_l1_grad, CostParams};
use crate::nlp::{Layout, Objective, TrajectoryObjective};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    SmoothL1,
    Collision,
    Objective,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::SmoothL1, Family::Collision, Family::Objective];

    pub fn name(&self) -> &'static str {
        match self {
            Family::SmoothL1 => "smooth_l1",
            Family::Collision => "collision",
            Family::Objective => "objective",
        }
    }

    pub fn from_name(name: &str) -> Option<Family> {
        Family::ALL.into_iter().find(|f| f.name() == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FamilyReport {
    pub family: Family,
    pub points: usize,
    /// `max |g - fd|_inf / max(1, |fd|_inf)` over all points.
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub seed: u64,
    pub families: Vec<FamilyReport>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.families.iter().all(|f| f.max_rel_error <= tol)
    }
}

fn central_difference(f: &dyn Fn(&[f64]) -> f64, z: &[f64]) -> Vec<f64> {
    let mut p = z.to_vec();
    (0..z.len())
        .map(|i| {
            let h = 1e-6 * z[i].abs().max(1.0);
            let zi = z[i];
            p[i] = zi + h;
            let fp = f(&p);
            p[i] = zi - h;
            let fm = f(&p);
            p[i] = zi;
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

fn relative_error(g: &[f64], fd: &[f64]) -> f64 {
    let scale = fd.iter().fold(1.0_f64, |a, v| a.max(v.abs()));
    g.iter().zip(fd).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale
}

fn random_arm(rng: &mut ChaCha8Rng) -> PlanarArm {
    let m = rng.random_range(2..=3);
    let link_lengths: Vec<f64> = (0..m).map(|_| rng.random_range(0.4..1.2)).collect();
    let spheres = (0..m)
        .flat_map(|l| [0.5, 1.0].map(|fraction| SphereSpec { link: l, fraction, radius: 0.06 }))
        .collect();
    PlanarArm {
        link_lengths,
        joint_limits: vec![(-2.9, 2.9); m],
        spheres,
        base: [0.0, 0.0],
    }
}

/// Obstacles placed close to the arm so the penalty is in its active range.
fn nearby_world(rng: &mut ChaCha8Rng, arm: PlanarArm, q: &[f64]) -> CollisionWorld {
    let pts = arm.fk_points(q);
    let near = |rng: &mut ChaCha8Rng| {
        let p = &pts[rng.random_range(0..pts.len())];
        let a: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let r = rng.random_range(0.05..0.3);
        let gap = p.radius + r + rng.random_range(-0.004..0.006);
        ([p.center[0] + gap * a.cos(), p.center[1] + gap * a.sin()], r, a)
    };
    let (c, r, _) = near(rng);
    let (c2, r2, a2) = near(rng);
    let dir = [-(a2.sin()), a2.cos()];
    let (c3, _, a3) = near(rng);
    CollisionWorld {
        obstacles: vec![
            Obstacle::Sphere { center: c, radius: r },
            Obstacle::Capsule {
                start: [c2[0] - 0.3 * dir[0], c2[1] - 0.3 * dir[1]],
                end: [c2[0] + 0.3 * dir[0], c2[1] + 0.3 * dir[1]],
                radius: r2,
            },
            Obstacle::HalfSpace {
                point: c3,
                normal: [-a3.cos(), -a3.sin()],
            },
        ],
        robot: arm,
    }
}

fn random_q(rng: &mut ChaCha8Rng, m: usize) -> Vec<f64> {
    (0..m).map(|_| rng.random_range(-2.5..2.5)).collect()
}

/// Runs every family at `count` points. `fault` flips the sign of one
/// family's analytic gradient, to confirm the check can fail.
pub fn check_gradients_with(seed: u64, count: usize, fault: Option<Family>) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut families = Vec::new();
    for family in Family::ALL {
        let sign = if fault == Some(family) { -1.0 } else { 1.0 };
        let mut worst = 0.0_f64;
        for _ in 0..count {
            let err = match family {
                Family::SmoothL1 => {
                    let m = rng.random_range(1..=7);
                    let q = random_q(&mut rng, m);
                    let r = random_q(&mut rng, m);
                    let gamma = rng.random_range(0.01..0.5);
                    let g: Vec<f64> = smooth_l1_grad(&q, &r, gamma).unwrap().iter().map(|v| sign * v).collect();
                    let fd = central_difference(&|z| smooth_l1_cost(z, &r, gamma).unwrap(), &q);
                    relative_error(&g, &fd)
                }
                Family::Collision => {
                    let arm = random_arm(&mut rng);
                    let q = random_q(&mut rng, arm.dof());
                    let world = nearby_world(&mut rng, arm, &q);
                    let params = CostParams::default();
                    let g: Vec<f64> = world.l_col(&q, &params).1.iter().map(|v| sign * v).collect();
                    let fd = central_difference(&|z| world.l_col(z, &params).0, &q);
                    relative_error(&g, &fd)
                }
                Family::Objective => {
                    let arm = random_arm(&mut rng);
                    let m = arm.dof();
                    let n = rng.random_range(2..=6);
                    let q0 = random_q(&mut rng, m);
                    let world = nearby_world(&mut rng, arm, &q0);
                    let layout = Layout::new(m, n);
                    let mut z: Vec<f64> = (0..layout.dim()).map(|_| rng.random_range(-0.3..0.3)).collect();
                    for k in 0..n {
                        for j in 0..m {
                            z[layout.q(k) + j] += q0[j];
                        }
                    }
                    let params = CostParams {
                        w1: rng.random_range(0.5..50.0),
                        w2: rng.random_range(0.5..50.0),
                        ..CostParams::default()
                    };
                    let obj = TrajectoryObjective {
                        layout,
                        n_s: rng.random_range(0..=n),
                        params,
                        world,
                        q_w: random_q(&mut rng, m),
                        q_g: random_q(&mut rng, m),
                    };
                    let mut g = vec![0.0; layout.dim()];
                    obj.gradient(&z, &mut g);
                    g.iter_mut().for_each(|v| *v *= sign);
                    let fd = central_difference(&|p| obj.value(p), &z);
                    relative_error(&g, &fd)
                }
            };
            worst = worst.max(err);
        }
        families.push(FamilyReport {
            family,
            points: count,
            max_rel_error: worst,
        });
    }
    GradCheckReport { seed, families }
}

pub fn check_gradients(seed: u64, count: usize) -> GradCheckReport {
    check_gradients_with(seed, count, None)
}
