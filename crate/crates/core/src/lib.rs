//! Deterministic, integer-only fused attention at desk scale.
//!
//! The crate provides:
//!
//! - [`tensor`]: quantized tensors, symmetric quantization, exact int8
//!   matrix products with int32 accumulation, and row reductions.
//! - [`fixed_point`]: the integer-only scalar kernels — a base-2 exponential
//!   built from a quotient/remainder split, fixed-point requantization
//!   multipliers, and scale release/accumulation.
//! - [`kernel`]: the fused tile-wise attention forward pass with a running
//!   row maximum and integer normalization.
//! - [`mod@reference`]: double-precision oracles for attention and `2^x`.
//! - [`metrics`]: SQNR/MSE comparison and the arithmetic-operation audit
//!   (see [`audit`]).
//! - [`harness`]: the workload catalog, seeded synthetic inputs, experiment
//!   orchestration, and report emission.
//! - [`qtf`]: the QTF1 binary tensor file format.

pub mod audit;
pub mod error;
pub mod fixed_point;
pub mod harness;
pub mod kernel;
pub mod metrics;
pub mod qtf;
pub mod reference;
pub mod tensor;

pub use audit::{audited_run, OpAudit};
pub use error::{Error, Result};
pub use fixed_point::{FixedPointMultiplier, ShiftExpParams, ShiftExpTrace};
pub use kernel::{AttentionInputs, KernelParams, KernelState, TileConfig};
pub use metrics::ErrorReport;
pub use tensor::{BitWidth, Granularity, QuantizedTensor, RealTensor};
