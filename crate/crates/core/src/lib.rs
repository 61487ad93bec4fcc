//! Latency and coordinated-learning simulator for human-to-machine/robot
//! collaboration over XG-PON fiber-wireless access networks.

// Negated float comparisons are deliberate: they reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod glad;
pub mod haptic;
pub mod pon;
pub mod rng;
pub mod runner;
pub mod traffic;
