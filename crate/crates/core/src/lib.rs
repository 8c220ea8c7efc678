//! Deterministic multi-rate dataflow synchronization.
//!
//! Nodes run at fixed rates and gate every callback on the number of
//! messages each input channel is expected to hold, so a graph produces the
//! same message schedule at any wall-clock speed.

pub mod demo;
pub mod engine;
pub mod env;
pub mod executor;
pub mod graph;
pub mod node;
pub mod nodes;
pub mod protocol;
pub mod transport;
