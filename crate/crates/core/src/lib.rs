#![doc = include_str!("../README.md")]
// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod controller;
pub mod density;
pub mod error;
pub mod experiment;
pub mod follower_control;
pub mod geometry;
pub mod kernel;
pub mod leader_control;
pub mod macrosim;
pub mod metrics;
pub mod microsim;
pub mod scenario;

pub use error::{Error, Result};
