//! tcsim: run channel benches, quantify leakage, measure fence overhead,
//! and render channel matrices.
//!
//! Exit codes: 0 ok (analyze: no leak), 2 configuration or input error,
//! 3 pad overrun, 10 leak detected.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use tcsim_core::chanbench::{run_bench, BenchConfig, ChannelMatrix};
use tcsim_core::error::{Result, SimError};
use tcsim_core::fence::FenceVariant;
use tcsim_core::kernel::Component;
use tcsim_core::leakage::detect;
use tcsim_core::overhead::{run_overhead, WorkloadKind};
use tcsim_core::SimConfig;

const CONFIG_ENV: &str = "TCSIM_CONFIG";

#[derive(Parser)]
#[command(name = "tcsim", version, about = "Desk-scale timing-channel laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a trojan/spy bench and write the channel matrix as CSV.
    Channel(ChannelArgs),
    /// Compute mutual information and the zero-leakage bound for a matrix.
    Analyze(AnalyzeArgs),
    /// Measure the slowdown of fencing every context switch.
    Overhead(OverheadArgs),
    /// Render a channel matrix CSV as a binary PGM heatmap.
    Heatmap(HeatmapArgs),
}

#[derive(Args)]
struct ConfigArg {
    /// JSON configuration file; falls back to $TCSIM_CONFIG, then defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct ChannelArgs {
    /// Contended structure: l1d, l1i, bht, or rat.
    #[arg(long)]
    component: String,
    /// Mitigation at the context switch: none, fence.t.s, or naive.
    #[arg(long, default_value = "none")]
    mitigation: String,
    /// Number of distinct secrets (default: component capacity + 1).
    #[arg(long)]
    secrets: Option<usize>,
    /// Samples per secret.
    #[arg(long)]
    samples: Option<usize>,
    /// Uniform jitter amplitude in cycles.
    #[arg(long)]
    noise: Option<u64>,
    /// Merge observed times into fixed-width buckets.
    #[arg(long)]
    bucket_width: Option<u64>,
    /// RNG seed; omitted, one is drawn from entropy and printed.
    #[arg(long)]
    seed: Option<u64>,
    /// Fence pad target in cycles.
    #[arg(long)]
    pad: Option<u64>,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArg,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Channel matrix CSV produced by `tcsim channel`.
    matrix: PathBuf,
    /// Zero-leakage resample trials.
    #[arg(long)]
    trials: Option<usize>,
    /// Quantile of the resampled estimates used as the bound.
    #[arg(long)]
    confidence: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Also write the JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArg,
}

#[derive(Args)]
struct OverheadArgs {
    /// Foreground workload: pointer_chase, streaming, branch_heavy, mixed.
    #[arg(long, default_value = "mixed")]
    workload: String,
    /// Time-slice length in cycles.
    #[arg(long)]
    slice: Option<u64>,
    /// Workload size, in warm foreground slices.
    #[arg(long)]
    slices: Option<u64>,
    /// Mitigation applied at each switch: fence.t.s or naive.
    #[arg(long, default_value = "fence.t.s")]
    mitigation: String,
    #[arg(long)]
    pad: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Run once per comma-separated slice length and emit CSV rows.
    #[arg(long)]
    sweep: Option<String>,
    /// Write the JSON report (or sweep CSV) here as well as stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArg,
}

#[derive(Args)]
struct HeatmapArgs {
    /// Channel matrix CSV.
    matrix: PathBuf,
    /// Merge observed times into fixed-width buckets before rendering.
    #[arg(long)]
    bucket_width: Option<u64>,
    /// Output PGM path.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArg,
}

fn exit_code_for(err: &SimError) -> i32 {
    match err {
        SimError::PadOverrun { .. } => 3,
        _ => 2,
    }
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path)
        .map_err(|e| SimError::Config(format!("cannot read {}: {e}", path.display())))
}

/// Write via a temp file in the same directory, then rename.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let io_err =
        |e: std::io::Error| SimError::Config(format!("cannot write {}: {e}", path.display()));
    fs::write(&tmp, bytes).map_err(io_err)?;
    fs::rename(&tmp, path).map_err(io_err)?;
    Ok(())
}

/// Load the config file from the flag, the environment, or defaults.
/// Returns whether an explicit file supplied it.
fn load_config(arg: &ConfigArg) -> Result<(SimConfig, bool)> {
    let path = arg
        .config
        .clone()
        .or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from));
    match path {
        Some(path) => Ok((SimConfig::from_json(&read_file(&path)?)?, true)),
        None => Ok((SimConfig::default(), false)),
    }
}

/// Fixed seeds come from the flag or an explicit config file; otherwise one
/// is drawn from entropy and printed so the run can be reproduced.
fn resolve_seed(flag: Option<u64>, cfg: &SimConfig, explicit_config: bool) -> u64 {
    match flag {
        Some(seed) => seed,
        None if explicit_config => cfg.seed,
        None => {
            let seed: u64 = rand::random();
            println!("seed={seed} (drawn from entropy)");
            seed
        }
    }
}

fn cmd_channel(args: &ChannelArgs) -> Result<i32> {
    let (mut cfg, explicit) = load_config(&args.config)?;
    if let Some(pad) = args.pad {
        cfg.fence.pad_target = pad;
    }
    cfg.validate()?;
    let seed = resolve_seed(args.seed, &cfg, explicit);
    let component: Component = args.component.parse()?;
    let mitigation: FenceVariant = args.mitigation.parse()?;

    let ucfg = cfg.uarch();
    let mut bench = BenchConfig::new(component, cfg.fence_for(mitigation), &ucfg);
    if let Some(secrets) = args.secrets.or(cfg.bench.secret_count) {
        bench.secret_count = secrets;
    }
    bench.samples_per_secret = args.samples.unwrap_or(cfg.bench.samples_per_secret);
    bench.noise_cycles = args.noise.unwrap_or(cfg.bench.noise_cycles);
    bench.bucket_width = args.bucket_width;
    bench.seed = seed;

    let matrix = run_bench(&bench, &ucfg)?;
    write_atomic(&args.out, matrix.to_csv().as_bytes())?;
    let spread = if matrix.time_bins.len() == 1 {
        format!("constant spy time {} cycles", matrix.time_bins[0])
    } else {
        format!(
            "{} time bins spanning {}..{} cycles",
            matrix.time_bins.len(),
            matrix.time_bins[0],
            matrix.time_bins[matrix.time_bins.len() - 1]
        )
    };
    println!(
        "component={} mitigation={} secrets={} samples={} seed={seed} {} -> {}",
        component.name(),
        mitigation.name(),
        bench.secret_count,
        bench.samples_per_secret,
        spread,
        args.out.display()
    );
    Ok(0)
}

fn cmd_analyze(args: &AnalyzeArgs) -> Result<i32> {
    let (cfg, explicit) = load_config(&args.config)?;
    let seed = resolve_seed(args.seed, &cfg, explicit);
    let trials = args.trials.unwrap_or(cfg.leakage.trials);
    let confidence = args.confidence.unwrap_or(cfg.leakage.confidence);

    let matrix = ChannelMatrix::from_csv(&read_file(&args.matrix)?)?;
    let report = detect(&matrix, trials, confidence, seed)?;
    let json = serde_json::to_string_pretty(&report).expect("report serialises");
    println!("{json}");
    if let Some(out) = &args.out {
        write_atomic(out, json.as_bytes())?;
    }
    Ok(if report.leaky { 10 } else { 0 })
}

fn cmd_overhead(args: &OverheadArgs) -> Result<i32> {
    let (mut cfg, explicit) = load_config(&args.config)?;
    if let Some(pad) = args.pad {
        cfg.fence.pad_target = pad;
    }
    cfg.validate()?;
    let seed = resolve_seed(args.seed, &cfg, explicit);
    let workload: WorkloadKind = args.workload.parse()?;
    let mitigation: FenceVariant = args.mitigation.parse()?;
    let fence = cfg.fence_for(mitigation);
    let slices = args.slices.unwrap_or(cfg.overhead.total_slices);
    let ucfg = cfg.uarch();

    if let Some(sweep) = &args.sweep {
        let mut out = String::from(
            "workload,slice_cycles,pad_target,switches,baseline_cycles,mitigated_cycles,\
             direct_cost_cycles,indirect_cost_cycles,slowdown_percent\n",
        );
        for field in sweep.split(',') {
            let slice: u64 = field.trim().parse().map_err(|e| {
                SimError::Config(format!("bad sweep slice length {field:?}: {e}"))
            })?;
            let r = run_overhead(workload, slice, &fence, slices, &ucfg, seed)?;
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{:.6}\n",
                r.workload,
                r.slice_cycles,
                r.pad_target,
                r.switches,
                r.baseline_cycles,
                r.mitigated_cycles,
                r.direct_cost_cycles,
                r.indirect_cost_cycles,
                r.slowdown_percent
            ));
        }
        print!("{out}");
        if let Some(path) = &args.out {
            write_atomic(path, out.as_bytes())?;
        }
        return Ok(0);
    }

    let slice = args.slice.unwrap_or(cfg.overhead.slice_cycles);
    let report = run_overhead(workload, slice, &fence, slices, &ucfg, seed)?;
    let json = serde_json::to_string_pretty(&report).expect("report serialises");
    println!("{json}");
    if let Some(path) = &args.out {
        write_atomic(path, json.as_bytes())?;
    }
    Ok(0)
}

fn cmd_heatmap(args: &HeatmapArgs) -> Result<i32> {
    let mut matrix = ChannelMatrix::from_csv(&read_file(&args.matrix)?)?;
    if let Some(width) = args.bucket_width {
        matrix = matrix.bucketed(width)?;
    }
    write_atomic(&args.out, &matrix.to_pgm())?;
    println!(
        "heatmap {}x{} (secrets x time buckets) -> {}",
        matrix.secret_count,
        matrix.time_bins.len(),
        args.out.display()
    );
    Ok(0)
}

fn main() {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Channel(args) => cmd_channel(args),
        Command::Analyze(args) => cmd_analyze(args),
        Command::Overhead(args) => cmd_overhead(args),
        Command::Heatmap(args) => cmd_heatmap(args),
    };
    let code = match outcome {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            exit_code_for(&err)
        }
    };
    std::process::exit(code);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_to_exit_code_mapping() {
        assert_eq!(
            exit_code_for(&SimError::PadOverrun {
                raw: 16_000,
                target: 15_000
            }),
            3
        );
        assert_eq!(exit_code_for(&SimError::Config("x".into())), 2);
        assert_eq!(
            exit_code_for(&SimError::Csv {
                line: 3,
                msg: "x".into()
            }),
            2
        );
        assert_eq!(exit_code_for(&SimError::Contract("x".into())), 2);
    }
}
