//! Integer-only scalar kernels: fixed-point requantization multipliers, the
//! base-2 exponential, and scale release/accumulation.
//!
//! All real-valued scale handling happens at parameter-construction time
//! ([`FixedPointMultiplier::new`], [`ShiftExpParams::new`]). Evaluation uses
//! only integer multiplies, adds, and shifts, widened to 64 bits.

use crate::audit::OpAudit;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Shift precision of the mul+shift quotient inside the exponential.
/// 30 bits keeps `|x̂|·M` within 63 bits for the kernel's score range while
/// maximizing quotient precision.
pub const QUOTIENT_SHIFT_BITS: u32 = 30;

/// Quotients at or above this clamp underflow the exponential to zero; a
/// shift by the full accumulator width would be undefined and the true value
/// is below one output unit there anyway.
pub const Q_CLAMP: i32 = 31;

/// Precomputed (n, r, M_r) triple realizing the real rescale `·(s_X/s_Y)` as
/// a widened integer multiply followed by an arithmetic right shift.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedPointMultiplier {
    /// `n = ⌊log2(s_X/s_Y)⌋`.
    pub n: i32,
    /// Shift amount `r = b − n`.
    pub shift: u32,
    /// `M_r = ⌊(s_X/s_Y)·2^r⌉`, in `[2^b, 2^(b+1)]`.
    pub mult: i64,
    /// Source scale, retained for audit.
    pub src_scale: f64,
    /// Destination scale, retained for audit.
    pub dst_scale: f64,
}

/// Exact `⌊log2(x)⌋` for finite positive f64, taken from the exponent bits.
fn floor_log2(x: f64) -> i32 {
    debug_assert!(x.is_finite() && x > 0.0);
    let bits = x.to_bits();
    let exp = ((bits >> 52) & 0x7ff) as i32;
    if exp == 0 {
        // Subnormal: normalize the mantissa.
        let mant = bits & ((1u64 << 52) - 1);
        -1075 + (63 - mant.leading_zeros() as i32)
    } else {
        exp - 1023
    }
}

/// Multiply a positive f64 by 2^e without precision loss.
fn mul_pow2(x: f64, e: i32) -> f64 {
    // Split so each factor stays within the representable exponent range.
    let half = e / 2;
    x * (half as f64).exp2() * ((e - half) as f64).exp2()
}

impl FixedPointMultiplier {
    /// Build the multiplier for rescaling values of scale `s_x` onto scale
    /// `s_y` with `b` fractional bits.
    pub fn new(s_x: f64, s_y: f64, b: u32) -> Result<Self> {
        if !(s_x.is_finite() && s_x > 0.0 && s_y.is_finite() && s_y > 0.0) {
            return Err(Error::invalid("scales must be strictly positive and finite"));
        }
        let ratio = s_x / s_y;
        if !ratio.is_finite() || ratio <= 0.0 {
            return Err(Error::invalid("scale ratio is not a positive finite number"));
        }
        let n = floor_log2(ratio);
        let r = b as i64 - n as i64;
        if !(1..=62).contains(&r) {
            return Err(Error::invalid(format!(
                "scale ratio {ratio:e} cannot be realized as mul+shift with b={b} (r={r})"
            )));
        }
        // mantissa = ratio / 2^n ∈ [1, 2), so M_r = ⌊mantissa·2^b⌉ ∈ [2^b, 2^(b+1)].
        let mant = mul_pow2(ratio, -n);
        let mult = (mant * (1i64 << b) as f64).round() as i64;
        if mult < 1 {
            return Err(Error::invalid("degenerate multiplier (M_r = 0)"));
        }
        Ok(Self {
            n,
            shift: r as u32,
            mult,
            src_scale: s_x,
            dst_scale: s_y,
        })
    }

    /// The realized ratio `M_r / 2^r`.
    pub fn realized_ratio(&self) -> f64 {
        mul_pow2(self.mult as f64, -(self.shift as i32))
    }
}

/// Rescale one widened value: `(x·M_r) >> r` with arithmetic (floor) shift.
/// The caller is responsible for the product fitting 64 bits; on the kernel
/// path that is guaranteed by construction.
#[inline]
pub fn mul_shift(x: i64, m: &FixedPointMultiplier, audit: &mut OpAudit) -> i64 {
    audit.int_mul += 1;
    audit.int_shift += 1;
    (x * m.mult) >> m.shift
}

/// Requantize int32 values onto the multiplier's destination scale,
/// saturating to int8: `ŷ = sat8((x̂·M_r) >> r)`.
pub fn requantize(x: &[i32], m: &FixedPointMultiplier, audit: &mut OpAudit) -> Vec<i8> {
    x.iter()
        .map(|&v| {
            let shifted = mul_shift(v as i64, m, audit);
            shifted.clamp(i8::MIN as i64, i8::MAX as i64) as i8
        })
        .collect()
}

/// Requantize without the int8 saturation, for error analysis against the
/// real-arithmetic rescale.
pub fn requantize_unsaturated(x: i32, m: &FixedPointMultiplier, audit: &mut OpAudit) -> i64 {
    mul_shift(x as i64, m, audit)
}

/// Tensor-level requantization: int32 payload onto the multiplier's
/// destination scale as int8, preserving shape. The tensor's scale must match
/// the multiplier's source scale.
pub fn requantize_tensor(
    x: &crate::tensor::QuantizedTensor,
    m: &FixedPointMultiplier,
    audit: &mut OpAudit,
) -> Result<crate::tensor::QuantizedTensor> {
    use crate::tensor::{BitWidth, Granularity, IntData, QuantizedTensor};
    if x.granularity != Granularity::PerTensor {
        return Err(Error::invalid("requantize expects a per-tensor scaled input"));
    }
    if (x.scales[0] - m.src_scale).abs() > f64::EPSILON * m.src_scale {
        return Err(Error::invalid(format!(
            "tensor scale {} does not match the multiplier's source scale {}",
            x.scales[0], m.src_scale
        )));
    }
    let out = requantize(x.data.as_i32()?, m, audit);
    QuantizedTensor::new(
        IntData::I8(out),
        BitWidth::Int8,
        vec![m.dst_scale],
        Granularity::PerTensor,
        x.shape.clone(),
    )
}

/// Precomputed constants for the integer base-2 exponential: the combined
/// exponent scale `s`, its rounded reciprocal, and the fixed-point quotient
/// multiplier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftExpParams {
    /// Combined input scale of the exponent, `s > 0`.
    pub s: f64,
    /// `⌊1/s⌉ ≥ 1`.
    pub s_inv: i32,
    /// `⌊s·2^N_bits⌉ ≥ 1`; stored positive, with the quotient's sign folded
    /// in by multiplying `−x̂` instead.
    pub mult: i64,
    /// Shift precision of the quotient, fixed at [`QUOTIENT_SHIFT_BITS`].
    pub n_bits: u32,
}

impl ShiftExpParams {
    pub fn new(s: f64) -> Result<Self> {
        if !(s.is_finite() && s > 0.0) {
            return Err(Error::invalid("exponent scale must be positive and finite"));
        }
        let s_inv_f = (1.0 / s).round();
        if s_inv_f < 1.0 {
            return Err(Error::invalid(format!(
                "exponent scale {s:e} too large: ⌊1/s⌉ < 1"
            )));
        }
        if s_inv_f > i32::MAX as f64 {
            return Err(Error::invalid(format!(
                "exponent scale {s:e} too small: ⌊1/s⌉ exceeds int32"
            )));
        }
        let mult = (s * (1i64 << QUOTIENT_SHIFT_BITS) as f64).round() as i64;
        if mult < 1 {
            return Err(Error::invalid(format!(
                "exponent scale {s:e} too small for a {QUOTIENT_SHIFT_BITS}-bit quotient multiplier"
            )));
        }
        Ok(Self {
            s,
            s_inv: s_inv_f as i32,
            mult,
            n_bits: QUOTIENT_SHIFT_BITS,
        })
    }
}

/// Quotient/remainder decomposition of one exponential evaluation, exposed
/// for testing; production callers ignore it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShiftExpTrace {
    /// Nonnegative quotient (the negated integer part of the exponent).
    pub q: i32,
    /// Remainder `x̂ + q·s_inv`; in `(−s_inv, 0]` under the division quotient.
    pub rem: i32,
}

/// Division form of the quotient: `q = ⌊x̂ / (−s_inv)⌋ ≥ 0` for `x̂ ≤ 0`.
#[inline]
pub fn quotient_div(x: i32, s_inv: i32, audit: &mut OpAudit) -> i32 {
    debug_assert!(x <= 0 && s_inv >= 1);
    audit.int_div += 1;
    // Both operands made nonnegative: floor division equals truncation.
    ((-(x as i64)) / s_inv as i64) as i32
}

/// Mul+shift form of the quotient: `q = ((−x̂)·M) >> N_bits`, agreeing with
/// the division form within ±1 over the admissible range.
#[inline]
pub fn quotient_mulshift(x: i32, p: &ShiftExpParams, audit: &mut OpAudit) -> i32 {
    debug_assert!(x <= 0);
    audit.int_mul += 1;
    audit.int_shift += 1;
    (((-(x as i64)) * p.mult) >> p.n_bits) as i32
}

/// Which quotient realization the exponential uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuotientKind {
    /// Integer division (reference form).
    Div,
    /// Fixed-point multiply and shift (kernel path).
    MulShift,
}

/// Integer-only base-2 exponential: approximates `2^(s·x̂)` for `x̂ ≤ 0` as
/// `ŷ·s` with `ŷ ∈ [0, s_inv]`.
///
/// The input is split as `x̂ = −q·s_inv + rem`; the fractional factor
/// `2^(s·rem)` is replaced by the linear form `(rem/2 + s_inv)·s` and the
/// integer part becomes a right shift by `q`. Quotients at or above
/// [`Q_CLAMP`] underflow to zero.
pub fn shift_exp2_with(
    x: i32,
    p: &ShiftExpParams,
    kind: QuotientKind,
    audit: &mut OpAudit,
) -> (i32, f64, ShiftExpTrace) {
    debug_assert!(x <= 0, "exponential input must be ≤ 0 (max-subtracted)");
    let q = match kind {
        QuotientKind::Div => quotient_div(x, p.s_inv, audit),
        QuotientKind::MulShift => quotient_mulshift(x, p, audit),
    };
    audit.int_mul += 1;
    audit.int_add += 2;
    audit.int_shift += 2;
    let rem = x as i64 + q as i64 * p.s_inv as i64;
    debug_assert!(rem > -2 * p.s_inv as i64 && rem <= p.s_inv as i64);
    let pre = (rem >> 1) + p.s_inv as i64;
    debug_assert!(pre >= 0);
    let y = if q >= Q_CLAMP { 0 } else { (pre >> q) as i32 };
    (
        y,
        p.s,
        ShiftExpTrace {
            q,
            rem: rem as i32,
        },
    )
}

/// Kernel-path exponential (mul+shift quotient).
#[inline]
pub fn shift_exp2(x: i32, p: &ShiftExpParams, audit: &mut OpAudit) -> (i32, f64, ShiftExpTrace) {
    shift_exp2_with(x, p, QuotientKind::MulShift, audit)
}

/// Build the release multiplier for an exponential output scale `s_α`:
/// realizes `⌊·s_α⌋` with 16 fractional bits so the three-factor product
/// `acc·α̂·M` stays within 64 bits for all catalog workloads.
pub fn release_multiplier(s_alpha: f64) -> Result<FixedPointMultiplier> {
    FixedPointMultiplier::new(s_alpha, 1.0, 16)
}

/// One released element: `⌊acc·α̂·s_α⌋` realized as `(acc·α̂·M_α) >> r_α`.
/// Overflow of the widened product is a fault (misconfigured tile sizes).
#[inline]
pub fn release_one(
    acc: i32,
    alpha: i32,
    m: &FixedPointMultiplier,
    audit: &mut OpAudit,
) -> Result<i32> {
    audit.int_mul += 2;
    audit.int_shift += 1;
    let prod = (acc as i64)
        .checked_mul(alpha as i64)
        .and_then(|p| p.checked_mul(m.mult))
        .ok_or_else(|| Error::Overflow("scale_release widened product overflow".into()))?;
    let released = prod >> m.shift;
    i32::try_from(released)
        .map_err(|_| Error::KernelFault("released accumulator exceeds int32".into()))
}

/// Rescale an accumulator tensor row-wise by the integerized exponential
/// factor: `result[r][c] = ⌊acc[r][c]·α̂[r]·s_α⌋`. The accumulator's scale is
/// unchanged by the operation.
pub fn scale_release(
    acc: &[i32],
    rows: usize,
    alpha: &[i32],
    m: &FixedPointMultiplier,
    audit: &mut OpAudit,
) -> Result<Vec<i32>> {
    if rows == 0 || !acc.len().is_multiple_of(rows) {
        return Err(Error::shape(format!(
            "scale_release: {} elements cannot split into {rows} rows",
            acc.len()
        )));
    }
    if alpha.len() != rows {
        return Err(Error::shape(format!(
            "scale_release: {} alphas for {rows} rows",
            alpha.len()
        )));
    }
    let cols = acc.len() / rows;
    let mut out = Vec::with_capacity(acc.len());
    for r in 0..rows {
        for c in 0..cols {
            out.push(release_one(acc[r * cols + c], alpha[r], m, audit)?);
        }
    }
    Ok(out)
}

/// Scale-accumulation update (the comparison strategy the kernel does NOT
/// use): `result[r][c] = acc[r][c]·α̂[r] + pv[r][c]·s_inv`, letting the
/// accumulator's scale shrink by `s_α` every tile so its integer magnitude
/// grows geometrically. Accumulators are widened to 64 bits so the first few
/// tiles survive; every operation is checked and overflow is reported, not
/// wrapped.
pub fn scale_accumulate(
    acc: &[i64],
    rows: usize,
    alpha: &[i32],
    pv: &[i32],
    p: &ShiftExpParams,
    audit: &mut OpAudit,
) -> Result<Vec<i64>> {
    if rows == 0 || !acc.len().is_multiple_of(rows) {
        return Err(Error::shape(format!(
            "scale_accumulate: {} elements cannot split into {rows} rows",
            acc.len()
        )));
    }
    if alpha.len() != rows || pv.len() != acc.len() {
        return Err(Error::shape(
            "scale_accumulate: alpha/pv dimensions do not match accumulator",
        ));
    }
    let cols = acc.len() / rows;
    let mut out = Vec::with_capacity(acc.len());
    #[allow(clippy::needless_range_loop)]
    for r in 0..rows {
        for c in 0..cols {
            audit.int_mul += 2;
            audit.int_add += 1;
            let i = r * cols + c;
            let rescaled = acc[i]
                .checked_mul(alpha[r] as i64)
                .ok_or_else(|| Error::Overflow("scale_accumulate: acc·α̂ overflow".into()))?;
            let injected = (pv[i] as i64)
                .checked_mul(p.s_inv as i64)
                .ok_or_else(|| Error::Overflow("scale_accumulate: pv/s_α overflow".into()))?;
            out.push(rescaled.checked_add(injected).ok_or_else(|| {
                Error::Overflow("scale_accumulate: accumulator sum overflow".into())
            })?);
        }
    }
    Ok(out)
}
