//! Adaptive offload pipeline over a simulated heterogeneous environment.
//!
//! The crate analyzes programs written in a small imperative language (ELC),
//! searches for profitable accelerator offload patterns with a genetic
//! algorithm, inserts hoisted data-transfer directives, substitutes known
//! functional blocks with registered accelerator kernels, sizes CPU/device
//! resources, solves component placement on a cloud/edge/gateway topology,
//! verifies the deployment, and reconfigures it at runtime — all against a
//! deterministic cost-model simulator instead of real hardware.

// `!(a < b)` in loop conditions is deliberate: it must terminate on NaN
// bounds, which `a >= b` would not.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod gasearch;
pub mod lifecycle;
pub mod minilang;
pub mod par;
pub mod patterndb;
pub mod perfsim;
pub mod pipeline;
pub mod placement;
pub mod resource;
pub mod shadow;
pub mod transfer;
