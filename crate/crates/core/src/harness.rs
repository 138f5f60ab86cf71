//! Workload catalog, synthetic input generation, experiment orchestration,
//! and report emission.
//!
//! Experiments fold the window axis into the batch axis and run one fused
//! kernel per (window·batch, head) problem; problems are independent and run
//! in parallel with results merged in index order, so reports are
//! deterministic for a given spec.

use crate::audit::OpAudit;
use crate::error::{Error, Result};
use crate::fixed_point::{quotient_div, quotient_mulshift, shift_exp2_with, QuotientKind, ShiftExpParams};
use crate::kernel::{
    qflash_forward_accumulate, qflash_forward_audited, AttentionInputs, TileConfig,
};
use crate::metrics::{error_report, max_abs_err, sqnr, ErrorReport};
use crate::reference::{exp2_oracle, online_softmax_attention_fp, softmax_attention_fp_audited};
use crate::tensor::{
    dequantize, quantize_auto, BitWidth, FusedGranularityRejection, Granularity, IntData,
    QuantizedTensor, RealTensor,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Default Gaussian standard deviation for synthetic activations.
pub const DEFAULT_STD: f64 = 0.5;
/// Default query and key/value block size.
pub const DEFAULT_TILE: usize = 64;

/// One attention workload configuration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Workload {
    pub id: String,
    pub source: String,
    /// Window count; 1 for the ViT/DeiT rows.
    pub windows: usize,
    pub heads: usize,
    /// Context length.
    pub n: usize,
    /// Head dimension.
    pub d: usize,
}

/// The seven catalog workloads extracted from ViT/DeiT/Swin inference at
/// 224×224.
pub fn catalog() -> Vec<Workload> {
    let mk = |id: &str, source: &str, windows, heads, n, d| Workload {
        id: id.to_string(),
        source: source.to_string(),
        windows,
        heads,
        n,
        d,
    };
    vec![
        mk("A1", "ViT/DeiT-Tiny", 1, 3, 197, 64),
        mk("A2", "ViT/DeiT-Small", 1, 6, 197, 64),
        mk("A3", "ViT/DeiT-Base", 1, 12, 197, 64),
        mk("A4", "Swin-T/S Stage-1", 64, 3, 49, 32),
        mk("A5", "Swin-T/S Stage-2", 16, 6, 49, 32),
        mk("A6", "Swin-T/S Stage-3", 4, 12, 49, 32),
        mk("A7", "Swin-T/S Stage-4", 1, 24, 49, 32),
    ]
}

/// Look up a catalog workload by id.
pub fn workload(id: &str) -> Result<Workload> {
    catalog()
        .into_iter()
        .find(|w| w.id == id)
        .ok_or_else(|| Error::invalid(format!("unknown workload `{id}` (A1..A7)")))
}

/// Full experiment description; identical specs yield identical results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub workload: Workload,
    pub batch: usize,
    pub seed: u64,
    pub tile: TileConfig,
    pub granularity: Granularity,
    pub mean: f64,
    pub std: f64,
}

impl ExperimentSpec {
    pub fn new(workload: Workload, batch: usize, seed: u64) -> Self {
        Self {
            workload,
            batch,
            seed,
            tile: TileConfig {
                b_r: DEFAULT_TILE,
                b_c: DEFAULT_TILE,
            },
            granularity: Granularity::PerTensor,
            mean: 0.0,
            std: DEFAULT_STD,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::invalid("batch must be ≥ 1"));
        }
        if !(self.std.is_finite() && self.std >= 0.0 && self.mean.is_finite()) {
            return Err(Error::invalid("distribution parameters must be finite, std ≥ 0"));
        }
        self.tile.validate()
    }

    /// Tensor shape with windows folded into the batch axis:
    /// (windows·batch, heads, n, d).
    pub fn shape(&self) -> Vec<usize> {
        vec![
            self.workload.windows * self.batch,
            self.workload.heads,
            self.workload.n,
            self.workload.d,
        ]
    }
}

fn fill_gaussian(rng: &mut ChaCha8Rng, mean: f64, std: f64, len: usize) -> Vec<f64> {
    if std == 0.0 {
        return vec![mean; len];
    }
    let normal = Normal::new(mean, std).expect("validated parameters");
    (0..len).map(|_| normal.sample(rng)).collect()
}

/// Deterministic pseudo-random Gaussian Q, K, V for a spec. Each tensor draws
/// from its own ChaCha stream of the spec's seed, so the bytes depend only on
/// (seed, spec).
pub fn gen_inputs(spec: &ExperimentSpec) -> Result<(RealTensor, RealTensor, RealTensor)> {
    spec.validate()?;
    let shape = spec.shape();
    let len: usize = shape.iter().product();
    let mut tensors = Vec::with_capacity(3);
    for stream in 0..3u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(stream);
        tensors.push(RealTensor::new(
            fill_gaussian(&mut rng, spec.mean, spec.std, len),
            shape.clone(),
        )?);
    }
    let v = tensors.pop().unwrap();
    let k = tensors.pop().unwrap();
    let q = tensors.pop().unwrap();
    Ok((q, k, v))
}

/// Outcome of an accumulate-path kernel run: overflow is a recorded result,
/// not a fault.
#[derive(Debug)]
pub enum AccumulateOutcome {
    Completed(QuantizedTensor),
    Overflowed { detail: String },
}

fn head_slices<'a>(
    q: &'a QuantizedTensor,
    k: &'a QuantizedTensor,
    v: &'a QuantizedTensor,
) -> Result<Vec<(usize, usize, AttentionInputs<'a>)>> {
    let shape = &q.shape;
    if shape.len() != 4 || k.shape != *shape || v.shape != *shape {
        return Err(Error::shape(
            "kernel expects three rank-4 tensors of identical shape",
        ));
    }
    let (wb, h, n, d) = (shape[0], shape[1], shape[2], shape[3]);
    let (qd, kd, vd) = (q.data.as_i8()?, k.data.as_i8()?, v.data.as_i8()?);
    let mut slices = Vec::with_capacity(wb * h);
    for b in 0..wb {
        for head in 0..h {
            let base = (b * h + head) * n * d;
            let inp = AttentionInputs::new(
                &qd[base..base + n * d],
                &kd[base..base + n * d],
                &vd[base..base + n * d],
                n,
                d,
                q.head_scale(head)?,
                k.head_scale(head)?,
                v.head_scale(head)?,
            )?;
            slices.push((b, head, inp));
        }
    }
    Ok(slices)
}

/// Run the fused kernel over every (window·batch, head) problem of a rank-4
/// quantized input set. Problems run in parallel; outputs and audits merge in
/// problem index order. Output scale and granularity mirror V.
pub fn run_kernel(
    q: &QuantizedTensor,
    k: &QuantizedTensor,
    v: &QuantizedTensor,
    tile: &TileConfig,
) -> Result<(QuantizedTensor, OpAudit)> {
    for t in [q, k, v] {
        t.granularity
            .validate_fused()
            .map_err(|r| Error::invalid(format!("granularity not kernel-compatible: {r}")))?;
    }
    let slices = head_slices(q, k, v)?;
    let n_d = q.shape[2] * q.shape[3];
    let results: Vec<Result<(Vec<i8>, OpAudit)>> = slices
        .par_iter()
        .map(|(_, _, inp)| {
            let mut audit = OpAudit::new();
            let (out, _) = qflash_forward_audited(inp, tile, &mut audit)?;
            Ok((out, audit))
        })
        .collect();

    let mut data = vec![0i8; q.len()];
    let mut audit = OpAudit::new();
    for (i, r) in results.into_iter().enumerate() {
        let (out, a) = r?;
        data[i * n_d..(i + 1) * n_d].copy_from_slice(&out);
        audit.merge(&a);
    }
    let out = QuantizedTensor::new(
        IntData::I8(data),
        BitWidth::Int8,
        v.scales.clone(),
        v.granularity,
        q.shape.clone(),
    )?;
    Ok((out, audit))
}

/// Accumulate-path variant used by the scale-management comparison. Overflow
/// in any problem marks the whole run as overflowed.
pub fn run_kernel_accumulate(
    q: &QuantizedTensor,
    k: &QuantizedTensor,
    v: &QuantizedTensor,
    tile: &TileConfig,
) -> Result<(AccumulateOutcome, OpAudit)> {
    let slices = head_slices(q, k, v)?;
    let n_d = q.shape[2] * q.shape[3];
    let results: Vec<Result<(Vec<i8>, OpAudit)>> = slices
        .par_iter()
        .map(|(_, _, inp)| {
            let mut audit = OpAudit::new();
            let (out, _) = qflash_forward_accumulate(inp, tile, &mut audit)?;
            Ok((out, audit))
        })
        .collect();

    let mut data = vec![0i8; q.len()];
    let mut audit = OpAudit::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok((out, a)) => {
                data[i * n_d..(i + 1) * n_d].copy_from_slice(&out);
                audit.merge(&a);
            }
            Err(Error::Overflow(detail)) => {
                return Ok((AccumulateOutcome::Overflowed { detail }, audit));
            }
            Err(e) => return Err(e),
        }
    }
    let out = QuantizedTensor::new(
        IntData::I8(data),
        BitWidth::Int8,
        v.scales.clone(),
        v.granularity,
        q.shape.clone(),
    )?;
    Ok((AccumulateOutcome::Completed(out), audit))
}

/// Exact FP64 attention over every problem of a rank-4 real input set.
pub fn oracle_attention(
    q: &RealTensor,
    k: &RealTensor,
    v: &RealTensor,
    audit: &mut OpAudit,
) -> Result<RealTensor> {
    let shape = &q.shape;
    if shape.len() != 4 || k.shape != *shape || v.shape != *shape {
        return Err(Error::shape("oracle expects three rank-4 tensors"));
    }
    let (wb, h, n, d) = (shape[0], shape[1], shape[2], shape[3]);
    let mut out = vec![0.0f64; q.len()];
    for b in 0..wb {
        for head in 0..h {
            let base = (b * h + head) * n * d;
            let o = softmax_attention_fp_audited(
                &q.data[base..base + n * d],
                &k.data[base..base + n * d],
                &v.data[base..base + n * d],
                n,
                d,
                audit,
            )?;
            out[base..base + n * d].copy_from_slice(&o);
        }
    }
    RealTensor::new(out, shape.clone())
}

fn online_oracle_attention(
    q: &RealTensor,
    k: &RealTensor,
    v: &RealTensor,
    tile: &TileConfig,
) -> Result<RealTensor> {
    let shape = &q.shape;
    let (wb, h, n, d) = (shape[0], shape[1], shape[2], shape[3]);
    let mut out = vec![0.0f64; q.len()];
    for b in 0..wb {
        for head in 0..h {
            let base = (b * h + head) * n * d;
            let o = online_softmax_attention_fp(
                &q.data[base..base + n * d],
                &k.data[base..base + n * d],
                &v.data[base..base + n * d],
                n,
                d,
                tile,
            )?;
            out[base..base + n * d].copy_from_slice(&o);
        }
    }
    RealTensor::new(out, shape.clone())
}

/// Scale factors echoed into the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleEcho {
    pub s_q: Vec<f64>,
    pub s_k: Vec<f64>,
    pub s_v: Vec<f64>,
}

/// Error metrics of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetrics {
    /// Kernel output (dequantized) against the exact FP64 oracle.
    pub vs_exact: ErrorReport,
    /// Kernel output against the tiled FP64 online-softmax oracle.
    pub vs_online: ErrorReport,
    /// Max |exact − online| oracle self-consistency check.
    pub oracle_agreement_max_abs: f64,
}

/// Single JSON document emitted per run. The timestamp is the one field
/// excluded from golden comparisons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    /// Seconds since the Unix epoch at emission time; excluded from golden
    /// comparisons.
    pub timestamp: u64,
    pub spec: ExperimentSpec,
    /// Present when the granularity gate rejected the spec; no kernel ran.
    pub rejection: Option<FusedGranularityRejection>,
    pub scales: Option<ScaleEcho>,
    pub metrics: Option<ReportMetrics>,
    pub op_audit: Option<OpAudit>,
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization is infallible")
    }
}

fn now_unix() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Quantize inputs, run the fused kernel and both FP oracles, and emit the
/// report. Per-token specs return a rejection report without running the
/// kernel.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Report> {
    spec.validate()?;
    let mut report = Report {
        schema_version: 1,
        timestamp: now_unix(),
        spec: spec.clone(),
        rejection: None,
        scales: None,
        metrics: None,
        op_audit: None,
    };
    if let Err(rej) = spec.granularity.validate_fused() {
        report.rejection = Some(rej);
        return Ok(report);
    }

    let (q, k, v) = gen_inputs(spec)?;
    let qq = quantize_auto(&q, BitWidth::Int8, spec.granularity)?;
    let qk = quantize_auto(&k, BitWidth::Int8, spec.granularity)?;
    let qv = quantize_auto(&v, BitWidth::Int8, spec.granularity)?;
    report.scales = Some(ScaleEcho {
        s_q: qq.scales.clone(),
        s_k: qk.scales.clone(),
        s_v: qv.scales.clone(),
    });

    let (out, audit) = run_kernel(&qq, &qk, &qv, &spec.tile)?;
    let deq = dequantize(&out);

    let mut oracle_audit = OpAudit::new();
    let exact = oracle_attention(&q, &k, &v, &mut oracle_audit)?;
    let online = online_oracle_attention(&q, &k, &v, &spec.tile)?;

    report.metrics = Some(ReportMetrics {
        vs_exact: error_report(&exact.data, &deq.data)?,
        vs_online: error_report(&online.data, &deq.data)?,
        oracle_agreement_max_abs: max_abs_err(&exact.data, &online.data)?,
    });
    report.op_audit = Some(audit);
    Ok(report)
}

/// One row of the scale-management comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    /// Requested inner-loop iteration count.
    pub t_c: usize,
    /// Key/value block size realizing it.
    pub b_c: usize,
    pub release_sqnr_db: f64,
    pub release_mse: f64,
    /// None when the overflow detector fired.
    pub accumulate_sqnr_db: Option<f64>,
    pub accumulate_overflow: bool,
}

/// SQNR trends of scale release vs. scale accumulation over inner-loop
/// iteration counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingSeries {
    pub spec: ExperimentSpec,
    pub rows: Vec<ScalingRow>,
}

impl ScalingSeries {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "t_c,b_c,release_sqnr_db,release_mse,accumulate_sqnr_db,accumulate_overflow\n",
        );
        for r in &self.rows {
            let acc = r
                .accumulate_sqnr_db
                .map(|v| v.to_string())
                .unwrap_or_default();
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.t_c, r.b_c, r.release_sqnr_db, r.release_mse, acc, r.accumulate_overflow
            ));
        }
        s
    }
}

/// For each requested inner-loop count, run the kernel once per scale
/// strategy and record SQNR against the exact oracle. Accumulate-path
/// overflow events are data points, not faults.
pub fn compare_scaling(spec: &ExperimentSpec, tile_counts: &[usize]) -> Result<ScalingSeries> {
    spec.validate()?;
    if let Err(rej) = spec.granularity.validate_fused() {
        return Err(Error::invalid(format!("granularity rejected: {rej}")));
    }
    let n = spec.workload.n;
    let (q, k, v) = gen_inputs(spec)?;
    let qq = quantize_auto(&q, BitWidth::Int8, spec.granularity)?;
    let qk = quantize_auto(&k, BitWidth::Int8, spec.granularity)?;
    let qv = quantize_auto(&v, BitWidth::Int8, spec.granularity)?;
    let mut oracle_audit = OpAudit::new();
    let exact = oracle_attention(&q, &k, &v, &mut oracle_audit)?;

    let mut rows = Vec::with_capacity(tile_counts.len());
    for &t_c in tile_counts {
        if t_c == 0 || t_c > n {
            return Err(Error::invalid(format!(
                "tile count {t_c} not achievable for n = {n}"
            )));
        }
        let b_c = n.div_ceil(t_c);
        let tile = TileConfig {
            b_r: spec.tile.b_r,
            b_c,
        };
        let (rel_out, _) = run_kernel(&qq, &qk, &qv, &tile)?;
        let rel_deq = dequantize(&rel_out);
        let release_sqnr_db = sqnr(&exact.data, &rel_deq.data)?;
        let release_mse = crate::metrics::mse(&exact.data, &rel_deq.data)?;

        let (acc_outcome, _) = run_kernel_accumulate(&qq, &qk, &qv, &tile)?;
        let (acc_sqnr, overflow) = match acc_outcome {
            AccumulateOutcome::Completed(acc_out) => {
                let acc_deq = dequantize(&acc_out);
                (Some(sqnr(&exact.data, &acc_deq.data)?), false)
            }
            AccumulateOutcome::Overflowed { .. } => (None, true),
        };
        rows.push(ScalingRow {
            t_c,
            b_c,
            release_sqnr_db,
            release_mse,
            accumulate_sqnr_db: acc_sqnr,
            accumulate_overflow: overflow,
        });
    }
    Ok(ScalingSeries {
        spec: spec.clone(),
        rows,
    })
}

/// One sweep point of the integer exponential error analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpErrorRow {
    pub x: i32,
    pub q_div: i32,
    pub q_mulshift: i32,
    pub y_div: i32,
    pub y_mulshift: i32,
    /// Dequantized mul+shift output `s·ŷ`.
    pub value: f64,
    /// Exact `2^(s·x̂)`.
    pub exact: f64,
    /// `(value − exact)/exact`.
    pub rel_err: f64,
}

/// Relative error of the integer exponential against the exact base-2
/// exponential, with quotient agreement flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpErrorSeries {
    pub scale: f64,
    pub s_inv: i32,
    pub rows: Vec<ExpErrorRow>,
}

impl ExpErrorSeries {
    pub fn to_csv(&self) -> String {
        let mut s =
            String::from("x,q_div,q_mulshift,quotient_diff,y_div,y_mulshift,value,exact,rel_err\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.x,
                r.q_div,
                r.q_mulshift,
                r.q_div - r.q_mulshift,
                r.y_div,
                r.y_mulshift,
                r.value,
                r.exact,
                r.rel_err
            ));
        }
        s
    }

    /// Largest |relative error| over rows whose output is at least
    /// `y_threshold`.
    pub fn max_rel_err_where_y_at_least(&self, y_threshold: i32) -> f64 {
        self.rows
            .iter()
            .filter(|r| r.y_mulshift >= y_threshold)
            .map(|r| r.rel_err.abs())
            .fold(0.0, f64::max)
    }

    pub fn max_quotient_diff(&self) -> i32 {
        self.rows
            .iter()
            .map(|r| (r.q_div - r.q_mulshift).abs())
            .max()
            .unwrap_or(0)
    }

    pub fn max_downstream_diff(&self) -> i32 {
        self.rows
            .iter()
            .map(|r| (r.y_div - r.y_mulshift).abs())
            .max()
            .unwrap_or(0)
    }
}

/// Sweep the integer exponential over `x ∈ [min, max]` with the given stride.
pub fn exp_error_sweep(scale: f64, min: i32, max: i32, stride: u32) -> Result<ExpErrorSeries> {
    if min > max || max > 0 {
        return Err(Error::invalid(
            "sweep range must satisfy min ≤ max ≤ 0 (exponential domain)",
        ));
    }
    if stride == 0 {
        return Err(Error::invalid("stride must be ≥ 1"));
    }
    let p = ShiftExpParams::new(scale)?;
    let mut audit = OpAudit::new();
    let mut rows = Vec::new();
    let mut sweep_point = |xi: i32, rows: &mut Vec<ExpErrorRow>| {
        let q_d = quotient_div(xi, p.s_inv, &mut audit);
        let q_m = quotient_mulshift(xi, &p, &mut audit);
        let (y_d, _, _) = shift_exp2_with(xi, &p, QuotientKind::Div, &mut audit);
        let (y_m, s_y, _) = shift_exp2_with(xi, &p, QuotientKind::MulShift, &mut audit);
        let value = y_m as f64 * s_y;
        let exact = exp2_oracle(p.s * xi as f64);
        let rel_err = (value - exact) / exact;
        rows.push(ExpErrorRow {
            x: xi,
            q_div: q_d,
            q_mulshift: q_m,
            y_div: y_d,
            y_mulshift: y_m,
            value,
            exact,
            rel_err,
        });
    };
    let mut x = min as i64;
    while x <= max as i64 {
        sweep_point(x as i32, &mut rows);
        x += stride as i64;
    }
    // The upper endpoint is always part of the sweep even when the stride
    // skips it; x̂ = max (usually 0) anchors the error analysis.
    if rows.last().map(|r| r.x) != Some(max) {
        sweep_point(max, &mut rows);
    }
    Ok(ExpErrorSeries {
        scale,
        s_inv: p.s_inv,
        rows,
    })
}

/// Combined exponent scales the catalog workloads produce under a spec's
/// synthetic distribution (per head for per-head granularity). These are the
/// "catalog scales" the exponential accuracy sweeps run over.
pub fn catalog_exp_scales(batch: usize, seed: u64, std: f64) -> Result<Vec<(String, f64)>> {
    let mut out = Vec::new();
    for w in catalog() {
        let mut spec = ExperimentSpec::new(w.clone(), batch, seed);
        spec.std = std;
        let (q, k, _) = gen_inputs(&spec)?;
        let sq = crate::tensor::compute_scale(&q, BitWidth::Int8, Granularity::PerTensor)?[0];
        let sk = crate::tensor::compute_scale(&k, BitWidth::Int8, Granularity::PerTensor)?[0];
        let s = sq * sk / (w.d as f64).sqrt() * std::f64::consts::LOG2_E;
        out.push((w.id, s));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalog_has_exactly_seven_rows() {
        let c = catalog();
        assert_eq!(c.len(), 7);
        let a2 = workload("A2").unwrap();
        assert_eq!((a2.windows, a2.heads, a2.n, a2.d), (1, 6, 197, 64));
        let a7 = workload("A7").unwrap();
        assert_eq!((a7.windows, a7.heads, a7.n, a7.d), (1, 24, 49, 32));
        let a4 = workload("A4").unwrap();
        assert_eq!((a4.windows, a4.heads, a4.n, a4.d), (64, 3, 49, 32));
        assert!(workload("A8").is_err());
    }

    #[test]
    fn gen_inputs_is_deterministic() {
        let spec = ExperimentSpec::new(workload("A7").unwrap(), 1, 42);
        let (q1, k1, v1) = gen_inputs(&spec).unwrap();
        let (q2, k2, v2) = gen_inputs(&spec).unwrap();
        assert_eq!(q1, q2);
        assert_eq!(k1, k2);
        assert_eq!(v1, v2);
        // Tensors differ from each other and across seeds.
        assert_ne!(q1.data, k1.data);
        assert_ne!(k1.data, v1.data);
        let other = ExperimentSpec::new(workload("A7").unwrap(), 1, 43);
        assert_ne!(gen_inputs(&other).unwrap().0.data, q1.data);
    }

    #[test]
    fn zero_std_gives_constant_tensors() {
        let mut spec = ExperimentSpec::new(workload("A7").unwrap(), 1, 1);
        spec.std = 0.0;
        spec.mean = 0.75;
        let (q, _, _) = gen_inputs(&spec).unwrap();
        assert!(q.data.iter().all(|&x| x == 0.75));
    }

    #[test]
    fn gen_inputs_match_requested_moments() {
        let mut spec = ExperimentSpec::new(workload("A2").unwrap(), 2, 7);
        spec.std = 0.5;
        spec.mean = -0.25;
        let (q, _, _) = gen_inputs(&spec).unwrap();
        let n = q.len() as f64;
        assert!(n > 1e5);
        let mean = q.data.iter().sum::<f64>() / n;
        let var = q.data.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        // 3σ bands for the sample mean and a generous band for the std.
        assert!((mean + 0.25).abs() < 3.0 * 0.5 / n.sqrt(), "mean {mean}");
        assert!((var.sqrt() - 0.5).abs() < 0.01, "std {}", var.sqrt());
    }

    #[test]
    fn per_token_spec_is_rejected_without_running() {
        let mut spec = ExperimentSpec::new(workload("A7").unwrap(), 1, 42);
        spec.granularity = Granularity::PerToken;
        let report = run_experiment(&spec).unwrap();
        assert!(report.rejection.is_some());
        assert!(report.metrics.is_none());
        assert!(report.op_audit.is_none());
    }

    #[test]
    fn run_experiment_produces_integer_only_audit() {
        let mut spec = ExperimentSpec::new(workload("A7").unwrap(), 1, 42);
        spec.tile = TileConfig { b_r: 16, b_c: 16 };
        let report = run_experiment(&spec).unwrap();
        let audit = report.op_audit.expect("kernel ran");
        assert_eq!(audit.float_ops, 0);
        assert!(audit.int_mul > 0);
        let m = report.metrics.expect("metrics present");
        assert!(m.vs_exact.sqnr_db.is_finite());
        assert!(m.oracle_agreement_max_abs < 1e-10);
    }

    #[test]
    fn per_head_experiment_runs() {
        let mut spec = ExperimentSpec::new(workload("A7").unwrap(), 1, 9);
        spec.granularity = Granularity::PerHead;
        let report = run_experiment(&spec).unwrap();
        assert!(report.rejection.is_none());
        let scales = report.scales.unwrap();
        assert_eq!(scales.s_q.len(), 24);
    }

    #[test]
    fn n1_micro_workload_returns_quantized_v() {
        let w = Workload {
            id: "micro".into(),
            source: "custom".into(),
            windows: 1,
            heads: 2,
            n: 1,
            d: 8,
        };
        let spec = ExperimentSpec::new(w, 1, 5);
        let (q, k, v) = gen_inputs(&spec).unwrap();
        let qq = quantize_auto(&q, BitWidth::Int8, Granularity::PerTensor).unwrap();
        let qk = quantize_auto(&k, BitWidth::Int8, Granularity::PerTensor).unwrap();
        let qv = quantize_auto(&v, BitWidth::Int8, Granularity::PerTensor).unwrap();
        let (out, _) = run_kernel(&qq, &qk, &qv, &spec.tile).unwrap();
        assert_eq!(out.data.as_i8().unwrap(), qv.data.as_i8().unwrap());
        assert_eq!(out.scales, qv.scales);
    }

    #[test]
    fn exp_error_sweep_has_expected_columns_and_flags() {
        let series = exp_error_sweep(5e-4, -(1 << 16), 0, 97).unwrap();
        assert!(!series.rows.is_empty());
        assert_eq!(series.rows[0].x, -(1 << 16));
        let last = series.rows.last().unwrap();
        assert!(last.x <= 0);
        assert!(series.max_quotient_diff() <= 1);
        // x = 0 row: relative error within the reciprocal rounding of s_inv.
        let zero_row = series.rows.iter().find(|r| r.x == 0).unwrap();
        assert!(zero_row.rel_err.abs() < 5e-4);
        let csv = series.to_csv();
        assert!(csv.starts_with("x,q_div,q_mulshift"));
        assert_eq!(csv.lines().count(), series.rows.len() + 1);
    }

    #[test]
    fn compare_scaling_single_tile_paths_agree() {
        let w = Workload {
            id: "small".into(),
            source: "custom".into(),
            windows: 1,
            heads: 1,
            n: 64,
            d: 16,
        };
        let mut spec = ExperimentSpec::new(w, 1, 3);
        spec.tile = TileConfig { b_r: 32, b_c: 64 };
        let series = compare_scaling(&spec, &[1, 4]).unwrap();
        assert_eq!(series.rows.len(), 2);
        let first = &series.rows[0];
        assert_eq!(first.t_c, 1);
        assert!(!first.accumulate_overflow);
        let acc = first.accumulate_sqnr_db.unwrap();
        assert!(
            (acc - first.release_sqnr_db).abs() < 1.0,
            "single tile: release {} vs accumulate {acc}",
            first.release_sqnr_db
        );
    }

    #[test]
    fn catalog_scales_are_small_positive() {
        let scales = catalog_exp_scales(1, 42, DEFAULT_STD).unwrap();
        assert_eq!(scales.len(), 7);
        for (id, s) in scales {
            assert!(s > 1e-6 && s < 1e-2, "{id}: s = {s}");
        }
    }
}
