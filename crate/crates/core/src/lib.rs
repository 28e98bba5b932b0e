//! Rate-matched dataflow CNN accelerator planning and simulation.
//!
//! The pipeline: a [`model::ModelGraph`] is planned layer by layer against an
//! input data rate ([`dse::plan_network`]), which fixes each layer's pixel
//! parallelism and `(j, h)` parameters and derives its KPU variants
//! ([`kpu`]). The plan can be costed ([`dse::estimate_resources`],
//! [`dse::estimate_throughput`]) and checked cycle by cycle against the
//! golden executor ([`sim::simulate`]).

pub mod dse;
pub mod error;
pub mod kpu;
pub mod model;
pub mod rate;
pub mod report;
pub mod sim;

pub use error::{Error, Result};
pub use rate::Rate;
