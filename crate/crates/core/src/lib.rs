//! Construction of three-level overlay networks for live streaming.
//!
//! Streams travel from sources through reflectors to sinks. Each sink must
//! receive enough independent copies that its post-reconstruction loss stays
//! under a threshold, reflectors have fan-out (or bandwidth) limits, and the
//! total cost of reflectors and links is minimized.
//!
//! The approximation pipeline solves the LP relaxation ([`lp`]), applies
//! randomized rounding ([`rounding`]) and finishes with a min-cost flow
//! rounding over a box-structured flow graph ([`gapflow`]). [`color`] adds ISP
//! diversity constraints, [`verify`] audits any routing independently, and
//! [`gen`] produces synthetic instances.

pub mod color;
pub mod flow;
pub mod gapflow;
pub mod gen;
pub mod lp;
pub mod model;
pub mod pipeline;
pub mod rounding;
pub mod solution;
pub mod verify;

pub use model::{CostMode, Instance, RawInstance};
