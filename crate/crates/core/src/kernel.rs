//! The fused, tile-wise, integer-only attention forward pass.
//!
//! Per query row block the kernel walks the key/value tiles once, maintaining
//! a running row maximum `m̂`, an int32 denominator `l̂`, and an int32 output
//! accumulator `Ô`. Every tile performs: score matmul, max update, integer
//! exponential of the max offset and of the centered scores, requantization
//! of the attention weights to int8, and scale-released accumulation of the
//! denominator and numerator. A final floor division normalizes the block.
//!
//! Between input quantization and output emission no floating-point
//! instruction executes; all real-valued scale handling is folded into the
//! precomputed [`KernelParams`].

use crate::audit::OpAudit;
use crate::error::{Error, Result};
use crate::fixed_point::{
    release_multiplier, release_one, requantize, scale_accumulate, shift_exp2,
    FixedPointMultiplier, ShiftExpParams,
};
use crate::tensor::{matmul_nn_i8, matmul_nt_i8, row_max, row_sum_i8};
use serde::{Deserialize, Serialize};

/// Running-max initialization: strictly below any reachable int32 score for
/// head dimensions up to 128 (|Ŝ| ≤ 127·128·128 < 2^21). The first tile's
/// max-offset factor then underflows to zero, which is the intended
/// semantics for an empty accumulator.
pub const M_INIT: i32 = -(1 << 21);

/// Target scale of the requantized attention weights: probabilities live in
/// [0, 1], so 1/(2^7−1) maps them onto the full nonnegative int8 range.
/// Normalization cancels this scale between numerator and denominator, which
/// makes it a pure precision knob.
pub const P_HAT_SCALE: f64 = 1.0 / 127.0;

/// Largest supported head dimension; keeps scores below |[`M_INIT`]|.
pub const MAX_HEAD_DIM: usize = 128;

/// Query/key-value block sizes and the derived tile counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileConfig {
    /// Query block rows.
    pub b_r: usize,
    /// Key/value block rows.
    pub b_c: usize,
}

impl TileConfig {
    pub fn new(b_r: usize, b_c: usize) -> Result<Self> {
        let cfg = Self { b_r, b_c };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.b_r == 0 || self.b_c == 0 {
            return Err(Error::invalid("tile sizes must be ≥ 1"));
        }
        Ok(())
    }

    /// Number of query row blocks, ⌈n/B_r⌉.
    pub fn t_r(&self, n: usize) -> usize {
        n.div_ceil(self.b_r)
    }

    /// Number of key/value column tiles, ⌈n/B_c⌉.
    pub fn t_c(&self, n: usize) -> usize {
        n.div_ceil(self.b_c)
    }
}

/// One attention head's quantized operands and their scales.
#[derive(Debug, Clone, Copy)]
pub struct AttentionInputs<'a> {
    pub q: &'a [i8],
    pub k: &'a [i8],
    pub v: &'a [i8],
    /// Context length (rows of each operand).
    pub n: usize,
    /// Head dimension (columns of each operand).
    pub d: usize,
    pub s_q: f64,
    pub s_k: f64,
    pub s_v: f64,
}

impl<'a> AttentionInputs<'a> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        q: &'a [i8],
        k: &'a [i8],
        v: &'a [i8],
        n: usize,
        d: usize,
        s_q: f64,
        s_k: f64,
        s_v: f64,
    ) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::invalid("attention inputs need n ≥ 1 and d ≥ 1"));
        }
        if d > MAX_HEAD_DIM {
            return Err(Error::invalid(format!(
                "head dimension {d} exceeds the score range guard ({MAX_HEAD_DIM})"
            )));
        }
        if q.len() != n * d || k.len() != n * d || v.len() != n * d {
            return Err(Error::shape(format!(
                "expected three {n}×{d} operands, got {}/{}/{}",
                q.len(),
                k.len(),
                v.len()
            )));
        }
        if !(s_q > 0.0 && s_k > 0.0 && s_v > 0.0) {
            return Err(Error::invalid("input scales must be positive"));
        }
        Ok(Self {
            q,
            k,
            v,
            n,
            d,
            s_q,
            s_k,
            s_v,
        })
    }

    /// Combined exponent scale `s = s_Q·s_K·d^(−1/2)·log₂e`, so that the
    /// base-2 exponential of `s·Ŝ` equals `exp(S/√d)` on real scores.
    pub fn combined_exp_scale(&self) -> f64 {
        self.s_q * self.s_k / (self.d as f64).sqrt() * std::f64::consts::LOG2_E
    }
}

/// Constants precomputed once per kernel launch.
#[derive(Debug, Clone, Copy)]
pub struct KernelParams {
    /// Exponential constants for the combined score scale.
    pub exp: ShiftExpParams,
    /// Requantizer mapping exponential outputs (scale `s`) onto the int8
    /// weight grid (scale 1/127).
    pub p_requant: FixedPointMultiplier,
    /// Release multiplier realizing `⌊·s_α⌋` with 16 fractional bits.
    pub release: FixedPointMultiplier,
}

impl KernelParams {
    pub fn new(combined_scale: f64) -> Result<Self> {
        Ok(Self {
            exp: ShiftExpParams::new(combined_scale)?,
            p_requant: FixedPointMultiplier::new(combined_scale, P_HAT_SCALE, 8)?,
            release: release_multiplier(combined_scale)?,
        })
    }
}

/// Per-row-block running state, exposed so tests can inspect intermediates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KernelState {
    /// Running row maxima, nondecreasing over tiles.
    pub m: Vec<i32>,
    /// Denominator accumulator; positive after the first nonempty tile.
    pub l: Vec<i32>,
    /// Output numerator accumulator, rows×d.
    pub o_acc: Vec<i32>,
    /// Tiles processed so far.
    pub tile_index: usize,
    rows: usize,
    d: usize,
}

impl KernelState {
    pub fn new(rows: usize, d: usize) -> Self {
        Self {
            m: vec![M_INIT; rows],
            l: vec![0; rows],
            o_acc: vec![0; rows * d],
            tile_index: 0,
            rows,
            d,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }
}

/// One inner-loop iteration over a key/value tile of `cols` rows.
///
/// `q_block` is rows×d, `k_block` and `v_block` are cols×d row-major
/// (`k_block` is used transposed by the score product).
pub fn process_tile(
    state: &mut KernelState,
    q_block: &[i8],
    k_block: &[i8],
    v_block: &[i8],
    cols: usize,
    params: &KernelParams,
    audit: &mut OpAudit,
) -> Result<()> {
    let rows = state.rows;
    let d = state.d;
    if q_block.len() != rows * d || k_block.len() != cols * d || v_block.len() != cols * d {
        return Err(Error::shape("tile operand sizes disagree with state"));
    }

    // Score tile Ŝ = Q̂·K̂ᵀ.
    let s_hat = matmul_nt_i8(q_block, k_block, rows, d, cols, audit)?;

    // Row maxima of the tile, then the running-max update.
    let tile_max = row_max(&s_hat, rows, cols, audit)?;
    let m_new: Vec<i32> = state
        .m
        .iter()
        .zip(&tile_max)
        .map(|(&old, &tm)| old.max(tm))
        .collect();

    // Max-offset factor α̂: exp2 of the (nonpositive) max decrease.
    audit.int_add += rows as u64;
    let alpha: Vec<i32> = state
        .m
        .iter()
        .zip(&m_new)
        .map(|(&old, &new)| shift_exp2(old - new, &params.exp, audit).0)
        .collect();

    // Centered scores through the integer exponential.
    audit.int_add += (rows * cols) as u64;
    let mut p_tiled = s_hat;
    for r in 0..rows {
        let m_r = m_new[r];
        for v in &mut p_tiled[r * cols..(r + 1) * cols] {
            *v = shift_exp2(*v - m_r, &params.exp, audit).0;
        }
    }

    // Requantize the attention weights to int8 (scale 1/127).
    let p8 = requantize(&p_tiled, &params.p_requant, audit);

    // Denominator: release the previous value, add the tile's row sums.
    let row_sums = row_sum_i8(&p8, rows, cols, audit)?;
    audit.int_add += rows as u64;
    for r in 0..rows {
        let released = release_one(state.l[r], alpha[r], &params.release, audit)?;
        state.l[r] = released.checked_add(row_sums[r]).ok_or_else(|| {
            Error::KernelFault("denominator accumulator overflow".into())
        })?;
    }

    // Numerator: release the previous value, add P̂·V̂.
    let pv = matmul_nn_i8(&p8, v_block, rows, cols, d, audit)?;
    audit.int_add += (rows * d) as u64;
    #[allow(clippy::needless_range_loop)]
    for r in 0..rows {
        let a = alpha[r];
        for c in 0..d {
            let i = r * d + c;
            let released = release_one(state.o_acc[i], a, &params.release, audit)?;
            state.o_acc[i] = released.checked_add(pv[i]).ok_or_else(|| {
                Error::KernelFault("output accumulator overflow".into())
            })?;
        }
    }

    state.m = m_new;
    state.tile_index += 1;
    Ok(())
}

/// Elementwise floor division of the numerator by the per-row denominator.
/// The result is provably within int8 (|Ô| ≤ l̂·127 rowwise), so a value
/// outside that range is a kernel invariant breach, not a saturation case.
pub fn normalize(o_acc: &[i32], l: &[i32], rows: usize, audit: &mut OpAudit) -> Result<Vec<i8>> {
    if rows == 0 || !o_acc.len().is_multiple_of(rows) || l.len() != rows {
        return Err(Error::shape("normalize: inconsistent dimensions"));
    }
    let d = o_acc.len() / rows;
    let mut out = Vec::with_capacity(o_acc.len());
    for r in 0..rows {
        let denom = l[r];
        if denom <= 0 {
            return Err(Error::KernelFault(format!(
                "nonpositive denominator {denom} in row {r}"
            )));
        }
        audit.int_div += d as u64;
        for c in 0..d {
            let q = o_acc[r * d + c].div_euclid(denom);
            let v = i8::try_from(q).map_err(|_| {
                Error::KernelFault(format!("normalized value {q} escapes int8"))
            })?;
            out.push(v);
        }
    }
    Ok(out)
}

/// Full forward pass for one head: returns the int8 output and its scale
/// `s_O = s_V`.
pub fn qflash_forward(inp: &AttentionInputs, cfg: &TileConfig) -> Result<(Vec<i8>, f64)> {
    let mut audit = OpAudit::new();
    qflash_forward_audited(inp, cfg, &mut audit)
}

pub fn qflash_forward_audited(
    inp: &AttentionInputs,
    cfg: &TileConfig,
    audit: &mut OpAudit,
) -> Result<(Vec<i8>, f64)> {
    cfg.validate()?;
    let params = KernelParams::new(inp.combined_exp_scale())?;
    let n = inp.n;
    let d = inp.d;
    let mut out = vec![0i8; n * d];

    for row_start in (0..n).step_by(cfg.b_r) {
        let rows = cfg.b_r.min(n - row_start);
        let q_block = &inp.q[row_start * d..(row_start + rows) * d];
        let mut state = KernelState::new(rows, d);
        for col_start in (0..n).step_by(cfg.b_c) {
            // Ragged final tiles keep their true extent; padding would corrupt
            // the row maxima.
            let cols = cfg.b_c.min(n - col_start);
            let k_block = &inp.k[col_start * d..(col_start + cols) * d];
            let v_block = &inp.v[col_start * d..(col_start + cols) * d];
            process_tile(&mut state, q_block, k_block, v_block, cols, &params, audit)?;
        }
        let block_out = normalize(&state.o_acc, &state.l, rows, audit)?;
        out[row_start * d..(row_start + rows) * d].copy_from_slice(&block_out);
    }
    Ok((out, inp.s_v))
}

/// Forward pass using the scale-accumulation strategy instead of scale
/// release, provided only for the C1 comparison experiment. Accumulators are
/// widened to 64 bits and every step is checked; geometric growth of the
/// accumulator magnitude makes overflow the expected outcome at larger tile
/// counts, reported as [`Error::Overflow`].
pub fn qflash_forward_accumulate(
    inp: &AttentionInputs,
    cfg: &TileConfig,
    audit: &mut OpAudit,
) -> Result<(Vec<i8>, f64)> {
    cfg.validate()?;
    let params = KernelParams::new(inp.combined_exp_scale())?;
    let n = inp.n;
    let d = inp.d;
    let mut out = vec![0i8; n * d];

    for row_start in (0..n).step_by(cfg.b_r) {
        let rows = cfg.b_r.min(n - row_start);
        let q_block = &inp.q[row_start * d..(row_start + rows) * d];
        let mut m = vec![M_INIT; rows];
        let mut l_acc = vec![0i64; rows];
        let mut o_acc = vec![0i64; rows * d];

        for col_start in (0..n).step_by(cfg.b_c) {
            let cols = cfg.b_c.min(n - col_start);
            let k_block = &inp.k[col_start * d..(col_start + cols) * d];
            let v_block = &inp.v[col_start * d..(col_start + cols) * d];

            let s_hat = matmul_nt_i8(q_block, k_block, rows, d, cols, audit)?;
            let tile_max = row_max(&s_hat, rows, cols, audit)?;
            let m_new: Vec<i32> = m
                .iter()
                .zip(&tile_max)
                .map(|(&old, &tm)| old.max(tm))
                .collect();
            audit.int_add += rows as u64;
            let alpha: Vec<i32> = m
                .iter()
                .zip(&m_new)
                .map(|(&old, &new)| shift_exp2(old - new, &params.exp, audit).0)
                .collect();
            audit.int_add += (rows * cols) as u64;
            let mut p_tiled = s_hat;
            for r in 0..rows {
                let m_r = m_new[r];
                for v in &mut p_tiled[r * cols..(r + 1) * cols] {
                    *v = shift_exp2(*v - m_r, &params.exp, audit).0;
                }
            }
            let p8 = requantize(&p_tiled, &params.p_requant, audit);
            let row_sums = row_sum_i8(&p8, rows, cols, audit)?;
            let pv = matmul_nn_i8(&p8, v_block, rows, cols, d, audit)?;

            l_acc = scale_accumulate(&l_acc, rows, &alpha, &row_sums, &params.exp, audit)?;
            o_acc = scale_accumulate(&o_acc, rows, &alpha, &pv, &params.exp, audit)?;
            m = m_new;
        }

        for r in 0..rows {
            let denom = l_acc[r];
            if denom <= 0 {
                return Err(Error::KernelFault(format!(
                    "nonpositive denominator {denom} in row {r}"
                )));
            }
            audit.int_div += d as u64;
            for c in 0..d {
                let q = o_acc[r * d + c].div_euclid(denom);
                // The accumulate path is an error-analysis strategy; its
                // normalized values may escape int8 once precision degrades.
                out[(row_start + r) * d + c] = q.clamp(i8::MIN as i64, i8::MAX as i64) as i8;
            }
        }
    }
    Ok((out, inp.s_v))
}
