//! Tabular gridworld agent that learns values, plans, replays and wanders,
//! and scores every reward shortfall with the frustration equation
//! `max(0, expected - obtained) * certainty * attention * count`.

// `!(x >= 0.0)` is used deliberately so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod affect;
pub mod agent;
pub mod harness;
pub mod interventions;
pub mod planning;
pub mod protocols;
pub mod replay;
pub mod rng;
pub mod suffering;
pub mod values;
pub mod world;
