//! Planning and analysis toolkit for throughput-oriented LLM inference that
//! offloads weights, KV cache, and activations across GPU, CPU, and disk.
//!
//! The crate computes memory footprints from model shapes, prices block
//! execution with an analytic per-channel cost model, searches placement
//! policies by linear programming, studies schedule I/O against oracles and
//! lower bounds, and simulates execution (pipeline parallelism and
//! compression included) without touching real model weights.

pub mod compress;
pub mod costmodel;
pub mod lp;
pub mod model;
pub mod policy;
pub mod presets;
pub mod schedule;
pub mod sim;
