//! Quantized tensor representation and integer tensor primitives.
//!
//! Values are carried as signed integer payloads plus real scale factors:
//! `x ≈ s · x̂` with `x̂` confined to the signed b-bit range
//! `[−2^(b−1), 2^(b−1)−1]`. Scales are computed per tensor, per head, or per
//! token row; the fused kernel accepts only the first two (see
//! [`Granularity::validate_fused`]).

use crate::audit::OpAudit;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Scale substituted for an all-zero slice so downstream divisions stay
/// defined; the quantized payload is all zeros either way.
pub const EPS_MIN_SCALE: f64 = 1.0 / (1 << 20) as f64;

/// Largest inner dimension for which an int8×int8 dot product accumulated in
/// int32 cannot overflow: 128·128·131071 < 2^31.
pub const MATMUL_INNER_LIMIT: usize = 131_071;

/// Supported integer payload widths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BitWidth {
    Int8,
    Int32,
}

impl BitWidth {
    pub fn bits(self) -> u32 {
        match self {
            BitWidth::Int8 => 8,
            BitWidth::Int32 => 32,
        }
    }

    /// Largest representable code, 2^(b−1)−1.
    pub fn qmax(self) -> i64 {
        match self {
            BitWidth::Int8 => i8::MAX as i64,
            BitWidth::Int32 => i32::MAX as i64,
        }
    }

    /// Smallest representable code, −2^(b−1).
    pub fn qmin(self) -> i64 {
        match self {
            BitWidth::Int8 => i8::MIN as i64,
            BitWidth::Int32 => i32::MIN as i64,
        }
    }
}

/// How many scale factors cover a tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Granularity {
    PerTensor,
    PerHead,
    PerToken,
}

impl Granularity {
    pub fn as_str(self) -> &'static str {
        match self {
            Granularity::PerTensor => "per-tensor",
            Granularity::PerHead => "per-head",
            Granularity::PerToken => "per-token",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "per-tensor" => Ok(Granularity::PerTensor),
            "per-head" => Ok(Granularity::PerHead),
            "per-token" => Ok(Granularity::PerToken),
            other => Err(Error::invalid(format!("unknown granularity `{other}`"))),
        }
    }

    /// Gate for the fused kernel. Tile-wise max updates and accumulation
    /// compare and add integer codes directly, which is only meaningful when
    /// every tile of a head shares one scale. Per-token scales break that, so
    /// they are rejected with a diagnostic rather than a fault.
    pub fn validate_fused(self) -> std::result::Result<(), FusedGranularityRejection> {
        match self {
            Granularity::PerTensor | Granularity::PerHead => Ok(()),
            Granularity::PerToken => Err(FusedGranularityRejection {
                granularity: self,
                reason: "per-token quantization assigns a different scale to every token row; \
                         the fused kernel's running-max update and tile accumulation compare and \
                         add raw integer codes, which requires all tiles of a head to share one \
                         scale"
                    .to_string(),
            }),
        }
    }
}

/// Structured rejection returned by the granularity gate. This is a value,
/// not a fault: callers surface it (CLI exit code 2) instead of aborting.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusedGranularityRejection {
    pub granularity: Granularity,
    pub reason: String,
}

impl std::fmt::Display for FusedGranularityRejection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} rejected: {}", self.granularity.as_str(), self.reason)
    }
}

/// Dense row-major real tensor, rank ≤ 4 (window, head, token, channel).
#[derive(Debug, Clone, PartialEq)]
pub struct RealTensor {
    pub data: Vec<f64>,
    pub shape: Vec<usize>,
}

impl RealTensor {
    pub fn new(data: Vec<f64>, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(format!(
                "shape {:?} implies {} elements, payload has {}",
                shape,
                n,
                data.len()
            )));
        }
        if shape.is_empty() || shape.len() > 4 {
            return Err(Error::shape(format!("rank must be 1..=4, got {:?}", shape)));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("real tensor contains non-finite elements"));
        }
        Ok(Self { data, shape })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Integer payload of a [`QuantizedTensor`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IntData {
    I8(Vec<i8>),
    I32(Vec<i32>),
}

impl IntData {
    pub fn len(&self) -> usize {
        match self {
            IntData::I8(v) => v.len(),
            IntData::I32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, i: usize) -> i64 {
        match self {
            IntData::I8(v) => v[i] as i64,
            IntData::I32(v) => v[i] as i64,
        }
    }

    pub fn as_i8(&self) -> Result<&[i8]> {
        match self {
            IntData::I8(v) => Ok(v),
            IntData::I32(_) => Err(Error::invalid("expected int8 payload, found int32")),
        }
    }

    pub fn as_i32(&self) -> Result<&[i32]> {
        match self {
            IntData::I32(v) => Ok(v),
            IntData::I8(_) => Err(Error::invalid("expected int32 payload, found int8")),
        }
    }
}

/// Integer tensor with scale metadata; the artifact's universal value carrier.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTensor {
    pub data: IntData,
    pub bit_width: BitWidth,
    pub scales: Vec<f64>,
    pub granularity: Granularity,
    pub shape: Vec<usize>,
}

impl QuantizedTensor {
    pub fn new(
        data: IntData,
        bit_width: BitWidth,
        scales: Vec<f64>,
        granularity: Granularity,
        shape: Vec<usize>,
    ) -> Result<Self> {
        let t = Self {
            data,
            bit_width,
            scales,
            granularity,
            shape,
        };
        t.validate()?;
        Ok(t)
    }

    /// Check the type invariants: payload size, code range, positive finite
    /// scales, and scale count matching the granularity.
    pub fn validate(&self) -> Result<()> {
        let n: usize = self.shape.iter().product();
        if n != self.data.len() {
            return Err(Error::shape(format!(
                "shape {:?} implies {} elements, payload has {}",
                self.shape,
                n,
                self.data.len()
            )));
        }
        if self.shape.is_empty() || self.shape.len() > 4 {
            return Err(Error::shape(format!(
                "rank must be 1..=4, got {:?}",
                self.shape
            )));
        }
        match (&self.data, self.bit_width) {
            (IntData::I8(_), BitWidth::Int8) | (IntData::I32(_), BitWidth::Int32) => {}
            _ => return Err(Error::invalid("payload width does not match bit_width")),
        }
        if !self.scales.iter().all(|s| s.is_finite() && *s > 0.0) {
            return Err(Error::invalid("scales must be strictly positive and finite"));
        }
        let expected = expected_scale_count(&self.shape, self.granularity);
        if self.scales.len() != expected {
            return Err(Error::invalid(format!(
                "{} tensor of shape {:?} needs {} scales, got {}",
                self.granularity.as_str(),
                self.shape,
                expected,
                self.scales.len()
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Scale covering a given head (PerTensor tensors return the single
    /// scale regardless of the index).
    pub fn head_scale(&self, head: usize) -> Result<f64> {
        match self.granularity {
            Granularity::PerTensor => Ok(self.scales[0]),
            Granularity::PerHead => self
                .scales
                .get(head)
                .copied()
                .ok_or_else(|| Error::invalid(format!("head index {head} out of range"))),
            Granularity::PerToken => Err(Error::invalid(
                "per-token tensors have no single per-head scale",
            )),
        }
    }
}

/// Number of scales implied by shape and granularity. The canonical rank-4
/// layout is (window, head, token, channel); lower ranks treat the leading
/// dimensions as absent.
pub fn expected_scale_count(shape: &[usize], g: Granularity) -> usize {
    let (heads, tokens) = match shape.len() {
        4 => (shape[1], shape[2]),
        3 => (shape[0], shape[1]),
        2 => (1, shape[0]),
        _ => (1, shape.first().copied().unwrap_or(1)),
    };
    match g {
        Granularity::PerTensor => 1,
        Granularity::PerHead => heads,
        Granularity::PerToken => heads * tokens,
    }
}

/// Views of the slices a granularity splits a tensor into, as index ranges of
/// the flattened payload together with the stride pattern.
fn for_each_slice(
    shape: &[usize],
    g: Granularity,
    mut f: impl FnMut(usize, &mut dyn Iterator<Item = usize>),
) {
    // Normalize to (windows, heads, tokens, channels).
    let (w, h, n, d) = match shape.len() {
        4 => (shape[0], shape[1], shape[2], shape[3]),
        3 => (1, shape[0], shape[1], shape[2]),
        2 => (1, 1, shape[0], shape[1]),
        _ => (1, 1, 1, shape[0]),
    };
    let total = w * h * n * d;
    match g {
        Granularity::PerTensor => f(0, &mut (0..total)),
        Granularity::PerHead => {
            for head in 0..h {
                let mut it = (0..w).flat_map(move |wi| {
                    let base = (wi * h + head) * n * d;
                    base..base + n * d
                });
                f(head, &mut it);
            }
        }
        Granularity::PerToken => {
            for head in 0..h {
                for tok in 0..n {
                    let mut it = (0..w).flat_map(move |wi| {
                        let base = ((wi * h + head) * n + tok) * d;
                        base..base + d
                    });
                    f(head * n + tok, &mut it);
                }
            }
        }
    }
}

/// Symmetric scale per slice: `s = ‖slice‖_∞ / (2^(b−1)−1)`. All-zero slices
/// fall back to [`EPS_MIN_SCALE`].
pub fn compute_scale(x: &RealTensor, bits: BitWidth, g: Granularity) -> Result<Vec<f64>> {
    let count = expected_scale_count(&x.shape, g);
    let mut scales = vec![0.0f64; count];
    for_each_slice(&x.shape, g, |slice_idx, indices| {
        let mut amax = 0.0f64;
        for i in indices {
            amax = amax.max(x.data[i].abs());
        }
        scales[slice_idx] = if amax == 0.0 {
            EPS_MIN_SCALE
        } else {
            amax / bits.qmax() as f64
        };
    });
    Ok(scales)
}

/// `x̂ = clamp(round(x / s))` with round-half-away-from-zero, per slice scale.
pub fn quantize(
    x: &RealTensor,
    scales: &[f64],
    bits: BitWidth,
    g: Granularity,
) -> Result<QuantizedTensor> {
    let count = expected_scale_count(&x.shape, g);
    if scales.len() != count {
        return Err(Error::invalid(format!(
            "expected {count} scales for {} over shape {:?}, got {}",
            g.as_str(),
            x.shape,
            scales.len()
        )));
    }
    if !scales.iter().all(|s| s.is_finite() && *s > 0.0) {
        return Err(Error::invalid("scales must be strictly positive and finite"));
    }
    let qmin = bits.qmin();
    let qmax = bits.qmax();
    let mut codes = vec![0i64; x.len()];
    for_each_slice(&x.shape, g, |slice_idx, indices| {
        let s = scales[slice_idx];
        for i in indices {
            // f64::round is round-half-away-from-zero.
            codes[i] = (x.data[i] / s).round().clamp(qmin as f64, qmax as f64) as i64;
        }
    });
    let data = match bits {
        BitWidth::Int8 => IntData::I8(codes.iter().map(|&c| c as i8).collect()),
        BitWidth::Int32 => IntData::I32(codes.iter().map(|&c| c as i32).collect()),
    };
    QuantizedTensor::new(data, bits, scales.to_vec(), g, x.shape.clone())
}

/// Convenience: compute scales then quantize.
pub fn quantize_auto(x: &RealTensor, bits: BitWidth, g: Granularity) -> Result<QuantizedTensor> {
    let scales = compute_scale(x, bits, g)?;
    quantize(x, &scales, bits, g)
}

/// `x = s · x̂` with the slice's scale. Oracle-side inverse of quantization;
/// never called on the kernel path.
pub fn dequantize(q: &QuantizedTensor) -> RealTensor {
    let mut out = vec![0.0f64; q.len()];
    for_each_slice(&q.shape, q.granularity, |slice_idx, indices| {
        let s = q.scales[slice_idx];
        for i in indices {
            out[i] = s * q.data.get(i) as f64;
        }
    });
    RealTensor {
        data: out,
        shape: q.shape.clone(),
    }
}

fn check_inner_dim(inner: usize) -> Result<()> {
    if inner == 0 {
        return Err(Error::invalid("matmul inner dimension must be ≥ 1"));
    }
    if inner > MATMUL_INNER_LIMIT {
        return Err(Error::invalid(format!(
            "inner dimension {inner} exceeds the int32 accumulation guard ({MATMUL_INNER_LIMIT})"
        )));
    }
    Ok(())
}

/// `C[i][j] = Σ_k A[i][k]·B[k][j]`, int8 inputs accumulated exactly in int32.
/// `a` is m×k row-major, `b` is k×n row-major.
pub fn matmul_nn_i8(
    a: &[i8],
    b: &[i8],
    m: usize,
    k: usize,
    n: usize,
    audit: &mut OpAudit,
) -> Result<Vec<i32>> {
    if a.len() != m * k || b.len() != k * n {
        return Err(Error::shape(format!(
            "matmul_nn: a has {} elements (want {m}×{k}), b has {} (want {k}×{n})",
            a.len(),
            b.len()
        )));
    }
    check_inner_dim(k)?;
    let mut c = vec![0i32; m * n];
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        for (kk, &av) in a_row.iter().enumerate() {
            if av == 0 {
                continue;
            }
            let b_row = &b[kk * n..(kk + 1) * n];
            let av = av as i32;
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv as i32;
            }
        }
    }
    audit.int_mul += (m * k * n) as u64;
    audit.int_add += (m * k * n) as u64;
    Ok(c)
}

/// `C[i][j] = Σ_k A[i][k]·B[j][k]` — the second operand is stored row-major
/// and used transposed, which is the natural layout for Q·Kᵀ.
pub fn matmul_nt_i8(
    a: &[i8],
    b: &[i8],
    m: usize,
    k: usize,
    n: usize,
    audit: &mut OpAudit,
) -> Result<Vec<i32>> {
    if a.len() != m * k || b.len() != n * k {
        return Err(Error::shape(format!(
            "matmul_nt: a has {} elements (want {m}×{k}), b has {} (want {n}×{k})",
            a.len(),
            b.len()
        )));
    }
    check_inner_dim(k)?;
    let mut c = vec![0i32; m * n];
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = 0i32;
            for (&av, &bv) in a_row.iter().zip(b_row) {
                acc += av as i32 * bv as i32;
            }
            c[i * n + j] = acc;
        }
    }
    audit.int_mul += (m * k * n) as u64;
    audit.int_add += (m * k * n) as u64;
    Ok(c)
}

/// Integer matrix multiply on 2-D quantized tensors: int8 × int8 → int32 with
/// the output scale `s_C = s_A · s_B`.
pub fn int_matmul(a: &QuantizedTensor, b: &QuantizedTensor) -> Result<QuantizedTensor> {
    let mut audit = OpAudit::new();
    int_matmul_audited(a, b, &mut audit)
}

pub fn int_matmul_audited(
    a: &QuantizedTensor,
    b: &QuantizedTensor,
    audit: &mut OpAudit,
) -> Result<QuantizedTensor> {
    if a.shape.len() != 2 || b.shape.len() != 2 {
        return Err(Error::shape("int_matmul expects 2-D operands"));
    }
    let (m, ka) = (a.shape[0], a.shape[1]);
    let (kb, n) = (b.shape[0], b.shape[1]);
    if ka != kb {
        return Err(Error::shape(format!(
            "inner dimensions differ: {ka} vs {kb}"
        )));
    }
    if a.granularity != Granularity::PerTensor || b.granularity != Granularity::PerTensor {
        return Err(Error::invalid(
            "int_matmul is defined for per-tensor scaled operands",
        ));
    }
    let c = matmul_nn_i8(a.data.as_i8()?, b.data.as_i8()?, m, ka, n, audit)?;
    QuantizedTensor::new(
        IntData::I32(c),
        BitWidth::Int32,
        vec![a.scales[0] * b.scales[0]],
        Granularity::PerTensor,
        vec![m, n],
    )
}

/// Row-wise maximum of an int32 matrix.
pub fn row_max(x: &[i32], rows: usize, cols: usize, audit: &mut OpAudit) -> Result<Vec<i32>> {
    if cols == 0 {
        return Err(Error::invalid("row_max of an empty row"));
    }
    if x.len() != rows * cols {
        return Err(Error::shape(format!(
            "row_max: {} elements for {rows}×{cols}",
            x.len()
        )));
    }
    let _ = audit; // comparisons are not tallied
    Ok((0..rows)
        .map(|i| x[i * cols..(i + 1) * cols].iter().copied().max().unwrap())
        .collect())
}

/// Row-wise sum of an int8 matrix, accumulated in int32.
pub fn row_sum_i8(x: &[i8], rows: usize, cols: usize, audit: &mut OpAudit) -> Result<Vec<i32>> {
    if x.len() != rows * cols {
        return Err(Error::shape(format!(
            "row_sum: {} elements for {rows}×{cols}",
            x.len()
        )));
    }
    audit.int_add += (rows * cols) as u64;
    Ok((0..rows)
        .map(|i| x[i * cols..(i + 1) * cols].iter().map(|&v| v as i32).sum())
        .collect())
}
