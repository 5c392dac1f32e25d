//! Separable contraction metrics for monotone networked systems.
//!
//! The pipeline bounds each node's Jacobian over a domain box, assembles a
//! Metzler comparison matrix, and certifies it with positive-orthant linear
//! programs. The resulting diagonal, weighted-sum and weighted-max metrics are
//! checked pointwise, by simulation, and used to build decentralized tracking
//! controllers in the coordinates the metric induces.

pub mod cli;
pub mod controller;
pub mod expr;
pub mod optim;
pub mod positive_lti;
pub mod model;
pub mod modelfile;
pub mod separable_metric;
pub mod simulator;
pub mod small_gain;
pub mod sprocedure;
