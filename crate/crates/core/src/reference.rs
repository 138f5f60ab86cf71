//! Floating-point oracles: exact softmax attention, the tiled online-softmax
//! variant, and the exact base-2 exponential. These are the ground truth for
//! every SQNR/MSE and approximation-error measurement; double precision
//! throughout so oracle error never enters the attribution.

use crate::audit::OpAudit;
use crate::error::{Error, Result};
use crate::kernel::TileConfig;

/// Exact `2^x` in double precision.
pub fn exp2_oracle(x: f64) -> f64 {
    x.exp2()
}

fn check_shapes(q: &[f64], k: &[f64], v: &[f64], n: usize, d: usize) -> Result<()> {
    if q.len() != n * d || k.len() != n * d || v.len() != n * d {
        return Err(Error::shape(format!(
            "attention oracle expects three {n}×{d} operands, got {}/{}/{}",
            q.len(),
            k.len(),
            v.len()
        )));
    }
    if n == 0 || d == 0 {
        return Err(Error::shape("attention oracle needs n ≥ 1, d ≥ 1"));
    }
    Ok(())
}

/// `softmax(Q·Kᵀ/√d)·V` in double precision with max subtraction for
/// stability. Row-major `n×d` operands, one attention head.
pub fn softmax_attention_fp(q: &[f64], k: &[f64], v: &[f64], n: usize, d: usize) -> Result<Vec<f64>> {
    let mut audit = OpAudit::new();
    softmax_attention_fp_audited(q, k, v, n, d, &mut audit)
}

pub fn softmax_attention_fp_audited(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    n: usize,
    d: usize,
    audit: &mut OpAudit,
) -> Result<Vec<f64>> {
    check_shapes(q, k, v, n, d)?;
    let inv_sqrt_d = 1.0 / (d as f64).sqrt();
    let mut out = vec![0.0f64; n * d];
    let mut scores = vec![0.0f64; n];
    for i in 0..n {
        let q_row = &q[i * d..(i + 1) * d];
        let mut max = f64::NEG_INFINITY;
        for (j, score) in scores.iter_mut().enumerate() {
            let k_row = &k[j * d..(j + 1) * d];
            let mut dot = 0.0;
            for (&a, &b) in q_row.iter().zip(k_row) {
                dot += a * b;
            }
            *score = dot * inv_sqrt_d;
            max = max.max(*score);
        }
        audit.float_ops += (n * (2 * d + 1)) as u64;
        let mut denom = 0.0;
        for score in scores.iter_mut() {
            *score = (*score - max).exp();
            denom += *score;
        }
        audit.float_ops += 3 * n as u64;
        let out_row = &mut out[i * d..(i + 1) * d];
        for (j, &w) in scores.iter().enumerate() {
            let weight = w / denom;
            let v_row = &v[j * d..(j + 1) * d];
            for (o, &vv) in out_row.iter_mut().zip(v_row) {
                *o += weight * vv;
            }
        }
        audit.float_ops += (n * (2 * d + 1)) as u64;
    }
    Ok(out)
}

/// Tiled double-precision attention with a running row maximum and rescaled
/// accumulators. Agrees with [`softmax_attention_fp`] to ~1e−10 for any
/// tiling (exact online softmax is tile-order invariant).
pub fn online_softmax_attention_fp(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    n: usize,
    d: usize,
    cfg: &TileConfig,
) -> Result<Vec<f64>> {
    let mut audit = OpAudit::new();
    online_softmax_attention_fp_audited(q, k, v, n, d, cfg, &mut audit)
}

pub fn online_softmax_attention_fp_audited(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    n: usize,
    d: usize,
    cfg: &TileConfig,
    audit: &mut OpAudit,
) -> Result<Vec<f64>> {
    check_shapes(q, k, v, n, d)?;
    cfg.validate()?;
    let inv_sqrt_d = 1.0 / (d as f64).sqrt();
    let b_r = cfg.b_r.min(n);
    let b_c = cfg.b_c.min(n);
    let mut out = vec![0.0f64; n * d];

    for row_start in (0..n).step_by(b_r) {
        let rows = b_r.min(n - row_start);
        let mut m = vec![f64::NEG_INFINITY; rows];
        let mut l = vec![0.0f64; rows];
        let mut acc = vec![0.0f64; rows * d];

        for col_start in (0..n).step_by(b_c) {
            let cols = b_c.min(n - col_start);
            for r in 0..rows {
                let q_row = &q[(row_start + r) * d..(row_start + r + 1) * d];
                let mut tile_max = f64::NEG_INFINITY;
                for c in 0..cols {
                    let k_row = &k[(col_start + c) * d..(col_start + c + 1) * d];
                    let mut dot = 0.0;
                    for (&a, &b) in q_row.iter().zip(k_row) {
                        dot += a * b;
                    }
                    tile_max = tile_max.max(dot * inv_sqrt_d);
                }
                let m_new = m[r].max(tile_max);
                let alpha = (m[r] - m_new).exp();
                l[r] *= alpha;
                let acc_row = &mut acc[r * d..(r + 1) * d];
                for a in acc_row.iter_mut() {
                    *a *= alpha;
                }
                for c in 0..cols {
                    let k_row = &k[(col_start + c) * d..(col_start + c + 1) * d];
                    let mut dot = 0.0;
                    for (&a, &b) in q_row.iter().zip(k_row) {
                        dot += a * b;
                    }
                    let p = (dot * inv_sqrt_d - m_new).exp();
                    l[r] += p;
                    let v_row = &v[(col_start + c) * d..(col_start + c + 1) * d];
                    for (a, &vv) in acc_row.iter_mut().zip(v_row) {
                        *a += p * vv;
                    }
                }
                m[r] = m_new;
                audit.float_ops += (cols * (4 * d + 4) + d + 2) as u64;
            }
        }
        for r in 0..rows {
            let acc_row = &acc[r * d..(r + 1) * d];
            let out_row = &mut out[(row_start + r) * d..(row_start + r + 1) * d];
            for (o, &a) in out_row.iter_mut().zip(acc_row) {
                *o = a / l[r];
            }
            audit.float_ops += d as u64;
        }
    }
    Ok(out)
}
