//! Python bindings: quantization, the integer exponential, the fused
//! attention kernel, error metrics, and the experiment harness.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use qflash_core::error::Error;
use qflash_core::fixed_point;
use qflash_core::harness;
use qflash_core::kernel::{AttentionInputs, TileConfig};
use qflash_core::metrics;
use qflash_core::tensor::{self, BitWidth, Granularity, RealTensor};

fn to_pyerr(e: Error) -> PyErr {
    match e {
        Error::InvalidArgument(_) | Error::ShapeMismatch(_) => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

/// Workload catalog as a list of dicts.
#[pyfunction]
fn catalog(py: Python<'_>) -> PyResult<Vec<Py<PyDict>>> {
    harness::catalog()
        .into_iter()
        .map(|w| {
            let d = PyDict::new(py);
            d.set_item("id", w.id)?;
            d.set_item("source", w.source)?;
            d.set_item("windows", w.windows)?;
            d.set_item("heads", w.heads)?;
            d.set_item("n", w.n)?;
            d.set_item("d", w.d)?;
            Ok(d.unbind())
        })
        .collect()
}

/// Symmetric int8 quantization. Returns (codes, scales).
#[pyfunction]
#[pyo3(signature = (values, shape, granularity = "per-tensor"))]
fn quantize(
    values: Vec<f64>,
    shape: Vec<usize>,
    granularity: &str,
) -> PyResult<(Vec<i8>, Vec<f64>)> {
    let g = Granularity::parse(granularity).map_err(to_pyerr)?;
    let x = RealTensor::new(values, shape).map_err(to_pyerr)?;
    let q = tensor::quantize_auto(&x, BitWidth::Int8, g).map_err(to_pyerr)?;
    let codes = q.data.as_i8().map_err(to_pyerr)?.to_vec();
    Ok((codes, q.scales))
}

/// Inverse of [`quantize`] for int8 codes.
#[pyfunction]
#[pyo3(signature = (codes, shape, scales, granularity = "per-tensor"))]
fn dequantize(
    codes: Vec<i8>,
    shape: Vec<usize>,
    scales: Vec<f64>,
    granularity: &str,
) -> PyResult<Vec<f64>> {
    let g = Granularity::parse(granularity).map_err(to_pyerr)?;
    let q = tensor::QuantizedTensor::new(
        tensor::IntData::I8(codes),
        BitWidth::Int8,
        scales,
        g,
        shape,
    )
    .map_err(to_pyerr)?;
    Ok(tensor::dequantize(&q).data)
}

/// Integer base-2 exponential of `x ≤ 0` under the combined exponent scale.
/// Returns (y, s_y, q, rem).
#[pyfunction]
fn shift_exp2(x: i32, scale: f64) -> PyResult<(i32, f64, i32, i32)> {
    if x > 0 {
        return Err(PyValueError::new_err("input must be ≤ 0 (max-subtracted)"));
    }
    let p = fixed_point::ShiftExpParams::new(scale).map_err(to_pyerr)?;
    let mut audit = qflash_core::OpAudit::new();
    let (y, s_y, trace) = fixed_point::shift_exp2(x, &p, &mut audit);
    Ok((y, s_y, trace.q, trace.rem))
}

/// Fused integer attention for one head on flat row-major int8 codes.
/// Returns (output codes, s_o).
#[pyfunction]
#[pyo3(signature = (q, k, v, n, d, s_q, s_k, s_v, b_r = 64, b_c = 64))]
#[allow(clippy::too_many_arguments)]
fn attention_int8(
    q: Vec<i8>,
    k: Vec<i8>,
    v: Vec<i8>,
    n: usize,
    d: usize,
    s_q: f64,
    s_k: f64,
    s_v: f64,
    b_r: usize,
    b_c: usize,
) -> PyResult<(Vec<i8>, f64)> {
    let inp = AttentionInputs::new(&q, &k, &v, n, d, s_q, s_k, s_v).map_err(to_pyerr)?;
    let cfg = TileConfig::new(b_r, b_c).map_err(to_pyerr)?;
    qflash_core::kernel::qflash_forward(&inp, &cfg).map_err(to_pyerr)
}

/// Signal-to-quantization-noise ratio in dB.
#[pyfunction]
fn sqnr(reference: Vec<f64>, test: Vec<f64>) -> PyResult<f64> {
    metrics::sqnr(&reference, &test).map_err(to_pyerr)
}

/// Mean squared error.
#[pyfunction]
fn mse(reference: Vec<f64>, test: Vec<f64>) -> PyResult<f64> {
    metrics::mse(&reference, &test).map_err(to_pyerr)
}

/// Run one harness experiment and return the JSON report as a string.
#[pyfunction]
#[pyo3(signature = (workload, batch = 1, seed = 42, tile_br = 64, tile_bc = 64,
                    granularity = "per-tensor", std = 0.5, mean = 0.0))]
#[allow(clippy::too_many_arguments)]
fn run_experiment(
    workload: &str,
    batch: usize,
    seed: u64,
    tile_br: usize,
    tile_bc: usize,
    granularity: &str,
    std: f64,
    mean: f64,
) -> PyResult<String> {
    let w = harness::workload(workload).map_err(to_pyerr)?;
    let mut spec = harness::ExperimentSpec::new(w, batch, seed);
    spec.tile = TileConfig::new(tile_br, tile_bc).map_err(to_pyerr)?;
    spec.granularity = Granularity::parse(granularity).map_err(to_pyerr)?;
    spec.std = std;
    spec.mean = mean;
    let report = harness::run_experiment(&spec).map_err(to_pyerr)?;
    Ok(report.to_json())
}

/// Sweep the integer exponential against the exact oracle; returns a summary
/// dict (max relative errors, quotient agreement).
#[pyfunction]
#[pyo3(signature = (scale, min = -(1 << 21), max = 0, stride = 97))]
fn exp_error_summary(
    py: Python<'_>,
    scale: f64,
    min: i32,
    max: i32,
    stride: u32,
) -> PyResult<Py<PyDict>> {
    let series = harness::exp_error_sweep(scale, min, max, stride).map_err(to_pyerr)?;
    let d = PyDict::new(py);
    d.set_item("scale", series.scale)?;
    d.set_item("s_inv", series.s_inv)?;
    d.set_item("points", series.rows.len())?;
    d.set_item("max_rel_err_y4", series.max_rel_err_where_y_at_least(4))?;
    d.set_item("max_rel_err_y12", series.max_rel_err_where_y_at_least(12))?;
    d.set_item("max_quotient_diff", series.max_quotient_diff())?;
    d.set_item("max_downstream_diff", series.max_downstream_diff())?;
    Ok(d.unbind())
}

#[pymodule]
fn qflash_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(catalog, m)?)?;
    m.add_function(wrap_pyfunction!(quantize, m)?)?;
    m.add_function(wrap_pyfunction!(dequantize, m)?)?;
    m.add_function(wrap_pyfunction!(shift_exp2, m)?)?;
    m.add_function(wrap_pyfunction!(attention_int8, m)?)?;
    m.add_function(wrap_pyfunction!(sqnr, m)?)?;
    m.add_function(wrap_pyfunction!(mse, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(exp_error_summary, m)?)?;
    Ok(())
}
