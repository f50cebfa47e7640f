//! Low-latency spiking neural networks: hybrid input encoding, single-spike
//! LIF neurons, spike-timing-dependent backpropagation, ANN conversion and
//! compute-energy accounting.

// `!(x > 0.0)` rejects NaN on purpose; index loops mirror the math.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod ann;
pub mod config;
pub mod dataset;
pub mod encoding;
pub mod metrics;
pub mod model_io;
pub mod network;
pub mod neuron;
pub mod numerics;
pub mod parallel;
pub mod pipeline;
pub mod report;
pub mod stdb;
