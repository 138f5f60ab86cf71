//! `qflash` — experiment harness for the integer-only fused attention kernel.
//!
//! Exit codes: 0 success, 2 validation rejection (including the per-token
//! granularity gate), 1 fault.

use clap::{Parser, Subcommand};
use qflash_core::error::Error;
use qflash_core::harness::{
    catalog, compare_scaling, exp_error_sweep, gen_inputs, oracle_attention, run_experiment,
    run_kernel, workload, ExperimentSpec, Workload, DEFAULT_STD, DEFAULT_TILE,
};
use qflash_core::kernel::TileConfig;
use qflash_core::qtf;
use qflash_core::tensor::{quantize_auto, BitWidth, Granularity};
use qflash_core::OpAudit;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "qflash", version, about = "Integer-only fused attention harness")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one experiment: quantize synthetic inputs, execute the fused
    /// kernel and the FP64 oracles, and write a JSON report.
    Run {
        /// Catalog workload id (A1..A7).
        #[arg(long)]
        workload: String,
        #[arg(long, default_value_t = 1)]
        batch: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Query block rows.
        #[arg(long = "tile-br", default_value_t = DEFAULT_TILE)]
        tile_br: usize,
        /// Key/value block rows.
        #[arg(long = "tile-bc", default_value_t = DEFAULT_TILE)]
        tile_bc: usize,
        /// per-tensor | per-head | per-token
        #[arg(long, default_value = "per-tensor")]
        granularity: String,
        /// Gaussian standard deviation of the synthetic activations.
        #[arg(long, default_value_t = DEFAULT_STD)]
        std: f64,
        /// Gaussian mean of the synthetic activations.
        #[arg(long, default_value_t = 0.0)]
        mean: f64,
        /// Report path (JSON).
        #[arg(long)]
        out: PathBuf,
    },
    /// Sweep inner-loop tile counts, running both scale-management
    /// strategies, and write a CSV series.
    CompareScaling {
        #[arg(long)]
        workload: String,
        #[arg(long, default_value_t = 1)]
        batch: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Comma-separated inner-loop iteration counts, e.g. 1,2,4,8.
        #[arg(long, value_delimiter = ',')]
        tiles: Vec<usize>,
        /// Replace the workload's context length (synthetic long-sequence
        /// runs, e.g. 4096).
        #[arg(long = "n-override")]
        n_override: Option<usize>,
        #[arg(long, default_value_t = DEFAULT_STD)]
        std: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sweep the integer exponential against the exact 2^x oracle and write
    /// a CSV series.
    ExpError {
        /// Combined exponent scale s (> 0).
        #[arg(long)]
        scale: f64,
        #[arg(long, default_value_t = -(1 << 21), allow_hyphen_values = true)]
        min: i32,
        #[arg(long, default_value_t = 0, allow_hyphen_values = true)]
        max: i32,
        #[arg(long, default_value_t = 97)]
        stride: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the FP64 attention oracle on a workload's synthetic inputs and
    /// write the output tensor as a QTF1 file.
    Oracle {
        #[arg(long)]
        workload: String,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        batch: usize,
        #[arg(long, default_value_t = DEFAULT_STD)]
        std: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the workload catalog.
    Catalog,
    /// Time the fused kernel on one workload (wall-clock curiosity only,
    /// not a validation metric).
    Bench {
        #[arg(long)]
        workload: String,
        #[arg(long, default_value_t = 1)]
        batch: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        iters: usize,
    },
}

#[allow(clippy::too_many_arguments)]
fn build_spec(
    workload_id: &str,
    batch: usize,
    seed: u64,
    tile: TileConfig,
    granularity: Granularity,
    mean: f64,
    std: f64,
    n_override: Option<usize>,
) -> Result<ExperimentSpec, Error> {
    let mut w: Workload = workload(workload_id)?;
    if let Some(n) = n_override {
        w = Workload {
            id: format!("{}-n{}", w.id, n),
            source: format!("{} (context override)", w.source),
            n,
            ..w
        };
    }
    let mut spec = ExperimentSpec::new(w, batch, seed);
    spec.tile = tile;
    spec.granularity = granularity;
    spec.mean = mean;
    spec.std = std;
    spec.validate()?;
    Ok(spec)
}

/// 0 = success, 2 = validation rejection, 1 = fault.
fn exit_for(err: &Error) -> u8 {
    match err {
        Error::InvalidArgument(_) | Error::ShapeMismatch(_) => 2,
        _ => 1,
    }
}

fn dispatch(cmd: Cmd) -> Result<u8, Error> {
    match cmd {
        Cmd::Run {
            workload,
            batch,
            seed,
            tile_br,
            tile_bc,
            granularity,
            std,
            mean,
            out,
        } => {
            let spec = build_spec(
                &workload,
                batch,
                seed,
                TileConfig::new(tile_br, tile_bc)?,
                Granularity::parse(&granularity)?,
                mean,
                std,
                None,
            )?;
            let report = run_experiment(&spec)?;
            std::fs::write(&out, report.to_json())?;
            if let Some(rej) = &report.rejection {
                eprintln!("rejected: {rej}");
                println!("report written to {} (rejection, kernel not run)", out.display());
                return Ok(2);
            }
            let m = report.metrics.as_ref().expect("kernel ran");
            let audit = report.op_audit.as_ref().expect("kernel ran");
            println!(
                "{}: sqnr {:.2} dB, mse {:.3e}, max |err| {:.3e}, float_ops {} → {}",
                spec.workload.id,
                m.vs_exact.sqnr_db,
                m.vs_exact.mse,
                m.vs_exact.max_abs_err,
                audit.float_ops,
                out.display()
            );
            Ok(0)
        }
        Cmd::CompareScaling {
            workload,
            batch,
            seed,
            tiles,
            n_override,
            std,
            out,
        } => {
            if tiles.is_empty() {
                return Err(Error::invalid("--tiles needs at least one count"));
            }
            let spec = build_spec(
                &workload,
                batch,
                seed,
                TileConfig::new(DEFAULT_TILE, DEFAULT_TILE)?,
                Granularity::PerTensor,
                0.0,
                std,
                n_override,
            )?;
            let series = compare_scaling(&spec, &tiles)?;
            std::fs::write(&out, series.to_csv())?;
            for r in &series.rows {
                println!(
                    "t_c {:4} b_c {:5}: release {:8.3} dB | accumulate {}",
                    r.t_c,
                    r.b_c,
                    r.release_sqnr_db,
                    if r.accumulate_overflow {
                        "overflow".to_string()
                    } else {
                        format!("{:8.3} dB", r.accumulate_sqnr_db.unwrap_or(f64::NAN))
                    }
                );
            }
            println!("series written to {}", out.display());
            Ok(0)
        }
        Cmd::ExpError {
            scale,
            min,
            max,
            stride,
            out,
        } => {
            let series = exp_error_sweep(scale, min, max, stride)?;
            std::fs::write(&out, series.to_csv())?;
            println!(
                "scale {scale:e} (s_inv {}): {} points, max |rel err| (ŷ≥4) {:.4}, \
                 quotient diff ≤ {}, downstream diff ≤ {} → {}",
                series.s_inv,
                series.rows.len(),
                series.max_rel_err_where_y_at_least(4),
                series.max_quotient_diff(),
                series.max_downstream_diff(),
                out.display()
            );
            Ok(0)
        }
        Cmd::Oracle {
            workload,
            seed,
            batch,
            std,
            out,
        } => {
            let spec = build_spec(
                &workload,
                batch,
                seed,
                TileConfig::new(DEFAULT_TILE, DEFAULT_TILE)?,
                Granularity::PerTensor,
                0.0,
                std,
                None,
            )?;
            let (q, k, v) = gen_inputs(&spec)?;
            let mut audit = OpAudit::new();
            let exact = oracle_attention(&q, &k, &v, &mut audit)?;
            qtf::write_file(&out, &qtf::TensorFile::Real(exact))?;
            println!(
                "oracle output for {} (batch {batch}, seed {seed}) → {}",
                spec.workload.id,
                out.display()
            );
            Ok(0)
        }
        Cmd::Catalog => {
            println!("{:<4} {:<18} {:>5} {:>5} {:>5} {:>5}", "id", "source", "#win", "H", "N", "D");
            for w in catalog() {
                println!(
                    "{:<4} {:<18} {:>5} {:>5} {:>5} {:>5}",
                    w.id, w.source, w.windows, w.heads, w.n, w.d
                );
            }
            Ok(0)
        }
        Cmd::Bench {
            workload: id,
            batch,
            seed,
            iters,
        } => {
            let spec = build_spec(
                &id,
                batch,
                seed,
                TileConfig::new(DEFAULT_TILE, DEFAULT_TILE)?,
                Granularity::PerTensor,
                0.0,
                DEFAULT_STD,
                None,
            )?;
            let (q, k, v) = gen_inputs(&spec)?;
            let qq = quantize_auto(&q, BitWidth::Int8, spec.granularity)?;
            let qk = quantize_auto(&k, BitWidth::Int8, spec.granularity)?;
            let qv = quantize_auto(&v, BitWidth::Int8, spec.granularity)?;
            // Warm-up run, then timed iterations.
            run_kernel(&qq, &qk, &qv, &spec.tile)?;
            let t0 = std::time::Instant::now();
            for _ in 0..iters.max(1) {
                run_kernel(&qq, &qk, &qv, &spec.tile)?;
            }
            let per = t0.elapsed().as_secs_f64() * 1e3 / iters.max(1) as f64;
            println!(
                "{} batch {batch}: {per:.3} ms/iteration over {iters} iterations (non-normative)",
                spec.workload.id
            );
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.cmd) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_for(&e))
        }
    }
}
