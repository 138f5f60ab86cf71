//! Arithmetic operation audit.
//!
//! [`OpAudit`] tallies every arithmetic operation executed on a computation
//! path. The integer kernel increments the integer counters (in bulk for
//! matrix products, per element for the scalar kernels); the floating-point
//! oracles increment `float_ops`. A kernel run is integer-only exactly when
//! its audit reports `float_ops == 0`.
//!
//! Counters are plain values returned alongside results; there is no global
//! state, and counting never changes numerical outputs.

use serde::{Deserialize, Serialize};

/// Operation counters for one invocation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpAudit {
    /// Integer multiplications (including widened 64-bit products).
    pub int_mul: u64,
    /// Integer additions/subtractions.
    pub int_add: u64,
    /// Integer shifts.
    pub int_shift: u64,
    /// Integer divisions (on the default kernel path these occur only in the
    /// final normalization step).
    pub int_div: u64,
    /// Floating-point arithmetic operations. Must be zero on the kernel path.
    pub float_ops: u64,
}

impl OpAudit {
    pub fn new() -> Self {
        Self::default()
    }

    /// Merge counters from another invocation (summation, order independent).
    pub fn merge(&mut self, other: &OpAudit) {
        self.int_mul += other.int_mul;
        self.int_add += other.int_add;
        self.int_shift += other.int_shift;
        self.int_div += other.int_div;
        self.float_ops += other.float_ops;
    }

    /// True when no floating-point arithmetic was recorded.
    pub fn is_integer_only(&self) -> bool {
        self.float_ops == 0
    }

    pub fn total_int_ops(&self) -> u64 {
        self.int_mul + self.int_add + self.int_shift + self.int_div
    }
}

/// Run a closure with a fresh audit and return its result with the counters.
pub fn audited_run<T>(f: impl FnOnce(&mut OpAudit) -> T) -> (T, OpAudit) {
    let mut audit = OpAudit::new();
    let out = f(&mut audit);
    (out, audit)
}
