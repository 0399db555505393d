//! Receding-horizon trajectory optimization for planar arms, with
//! intermediate waypoints, collision avoidance and steady terminal states.

// `!(x > 0.0)` style checks also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod collision;
pub mod costs;
pub mod model;
pub mod nlp;
pub mod wmpc;
pub mod gradcheck;
pub mod harness;
