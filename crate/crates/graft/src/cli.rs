//! Command-line front end.
//!
//! Exit codes: `0` success, `1` runtime or data error (including a
//! `NotRecommended` verdict under `--enforce`), `2` configuration or usage
//! error.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use graft_core::fusion::{TensorSummary, FOLD_ORDER_KEY};
use graft_core::{
    analyze, dare_merge, fuse_checkpoints_with_summary, fuse_lora_with_summary, task_arithmetic,
    ties_merge, weight_average, Checkpoint, GateConfig, Verdict,
};

use crate::config::{BaselineMethod, CliConfig, GranularityName, LayerName};
use crate::error::{Error, Result};
use crate::harness::{run_comparison, BenchConfig};
use crate::{store, trace_io};

pub const LOG_ENV: &str = "GRAFT_LOG";

#[derive(Debug, Parser)]
#[command(name = "graft", version, about = "Dual-gate checkpoint fusion toolkit")]
pub struct Cli {
    /// JSON configuration file; flags override its values.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fuse a base checkpoint with one or more graft checkpoints.
    Merge(MergeArgs),
    /// Merge experts with a baseline method.
    Baseline(BaselineArgs),
    /// Score an activation trace for fusion compatibility.
    Analyze(AnalyzeArgs),
    /// Train synthetic experts and compare every merge method.
    Bench(BenchArgs),
    /// Print a checkpoint's header.
    Inspect { path: PathBuf },
    /// Print the per-tensor maximum absolute difference of two checkpoints.
    Diff { a: PathBuf, b: PathBuf },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum GranularityArg {
    Channel,
    Block,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum LayersArg {
    All,
    Attn,
    Mlp,
}

#[derive(Debug, Args)]
pub struct MergeArgs {
    /// Base checkpoint followed by graft checkpoints (defaults to `io.inputs`).
    pub inputs: Vec<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub granularity: Option<GranularityArg>,
    #[arg(long, value_name = "K")]
    pub block_size: Option<usize>,
    #[arg(long)]
    pub layers: Option<LayersArg>,
    /// Fuse LoRA adapter factors instead of whole tensors.
    #[arg(long)]
    pub lora: bool,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    /// Initialization checkpoint followed by experts. For `average` every
    /// path is an expert.
    pub inputs: Vec<PathBuf>,
    #[arg(long, value_parser = parse_method)]
    pub method: Option<BaselineMethod>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    pub trace: PathBuf,
    /// Exit with status 1 unless the verdict is Fusable.
    #[arg(long)]
    pub enforce: bool,
    /// Sparsity threshold; defaults to the value stored in the trace.
    #[arg(long)]
    pub epsilon: Option<f64>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Benchmark configuration; the built-in default runs when omitted.
    pub bench_config: Option<PathBuf>,
    /// Output directory (defaults to `io.out`, then `bench-report`).
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

fn parse_method(s: &str) -> std::result::Result<BaselineMethod, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Parses arguments, runs the command and maps the outcome to an exit code.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    init_logging();
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_status(&e))
        }
    }
}

pub fn exit_status(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 2,
        _ => 1,
    }
}

fn init_logging() {
    let level = match std::env::var(LOG_ENV).as_deref() {
        Ok("quiet") => log::LevelFilter::Off,
        Ok("info") => log::LevelFilter::Info,
        Ok("debug") => log::LevelFilter::Debug,
        _ => log::LevelFilter::Warn,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .target(env_logger::Target::Stderr)
        .try_init();
}

pub fn run(cli: &Cli) -> Result<ExitCode> {
    let cfg = match &cli.config {
        Some(path) => CliConfig::load(path)?,
        None => CliConfig::default(),
    };
    let mut out = std::io::stdout().lock();
    match &cli.command {
        Command::Merge(args) => cmd_merge(args, &cfg, &mut out),
        Command::Baseline(args) => cmd_baseline(args, &cfg, &mut out),
        Command::Analyze(args) => cmd_analyze(args, &cfg, &mut out),
        Command::Bench(args) => cmd_bench(args, &cfg, &mut out),
        Command::Inspect { path } => cmd_inspect(path, &mut out),
        Command::Diff { a, b } => cmd_diff(a, b, &mut out),
    }
}

fn print(out: &mut impl Write, text: std::fmt::Arguments<'_>) -> Result<()> {
    out.write_fmt(text)
        .map_err(|e| Error::io(Path::new("<stdout>"), e))
}

fn inputs_or_config(given: &[PathBuf], cfg: &CliConfig) -> Vec<PathBuf> {
    if given.is_empty() {
        cfg.io.inputs.clone()
    } else {
        given.to_vec()
    }
}

fn out_path(given: &Option<PathBuf>, cfg: &CliConfig) -> Result<PathBuf> {
    given
        .clone()
        .or_else(|| cfg.io.out.clone())
        .ok_or_else(|| Error::Config("no output path: pass --out or set io.out".into()))
}

fn merge_gate_config(args: &MergeArgs, cfg: &CliConfig) -> Result<(GateConfig, bool)> {
    let mut gate = cfg.gate.clone();
    if let Some(g) = args.granularity {
        gate.granularity = match g {
            GranularityArg::Channel => GranularityName::Channel,
            GranularityArg::Block => GranularityName::Block,
        };
    }
    if let Some(k) = args.block_size {
        gate.block_size = k;
    }
    if let Some(l) = args.layers {
        gate.layer_filter = match l {
            LayersArg::All => LayerName::All,
            LayersArg::Attn => LayerName::Attn,
            LayersArg::Mlp => LayerName::Mlp,
        };
    }
    Ok((gate.to_gate_config()?, args.lora || gate.lora))
}

fn print_summary(out: &mut impl Write, summary: &[TensorSummary]) -> Result<()> {
    for s in summary {
        match &s.gates {
            Some(g) => print(
                out,
                format_args!(
                    "{}\tw_global={:.6}\tmean_w_local={:.6}\tmean_w_base={:.6}\n",
                    s.name, g.w_global, g.mean_w_local, g.mean_w_base
                ),
            )?,
            None => print(out, format_args!("{}\tcopied from base\n", s.name))?,
        }
    }
    Ok(())
}

pub fn cmd_merge(args: &MergeArgs, cfg: &CliConfig, out: &mut impl Write) -> Result<ExitCode> {
    let (gate, lora) = merge_gate_config(args, cfg)?;
    let inputs = inputs_or_config(&args.inputs, cfg);
    if inputs.len() < 2 {
        return Err(Error::Config(
            "merge needs a base checkpoint and at least one graft".into(),
        ));
    }
    let out_file = out_path(&args.out, cfg)?;
    let mut acc = store::load_checkpoint(&inputs[0])?;
    for (step, path) in inputs[1..].iter().enumerate() {
        let graft = store::load_checkpoint(path)?;
        let (fused, summary) = if lora {
            fuse_lora_with_summary(&acc, &graft, &gate)?
        } else {
            fuse_checkpoints_with_summary(&acc, &graft, &gate)?
        };
        if inputs.len() > 2 {
            print(
                out,
                format_args!("# step {}: {}\n", step + 1, path.display()),
            )?;
        }
        print_summary(out, &summary)?;
        acc = fused;
    }
    if inputs.len() > 2 {
        let order: Vec<String> = inputs.iter().map(|p| p.display().to_string()).collect();
        acc.set_metadata(FOLD_ORDER_KEY, order.join(","));
    }
    store::save_checkpoint(&acc, &out_file)?;
    log::info!("wrote {}", out_file.display());
    Ok(ExitCode::SUCCESS)
}

pub fn cmd_baseline(
    args: &BaselineArgs,
    cfg: &CliConfig,
    out: &mut impl Write,
) -> Result<ExitCode> {
    let mut b = cfg.baseline.clone();
    if let Some(m) = args.method {
        b.method = m;
    }
    if let Some(l) = args.lambda {
        b.lambda = l;
    }
    if let Some(s) = args.seed {
        b.seed = s;
    }
    if !b.lambda.is_finite() {
        return Err(Error::Config("--lambda must be finite".into()));
    }
    let inputs = inputs_or_config(&args.inputs, cfg);
    let min = if b.method == BaselineMethod::Average {
        1
    } else {
        2
    };
    if inputs.len() < min {
        return Err(Error::Config(format!(
            "`{}` needs at least {min} checkpoint path(s)",
            b.method
        )));
    }
    let out_file = out_path(&args.out, cfg)?;
    let ckpts = inputs
        .iter()
        .map(store::load_checkpoint)
        .collect::<Result<Vec<Checkpoint>>>()?;
    let merged = match b.method {
        BaselineMethod::Average => weight_average(&ckpts)?,
        BaselineMethod::TaskArith => task_arithmetic(&ckpts[0], &ckpts[1..], b.lambda)?,
        BaselineMethod::Ties => ties_merge(&ckpts[0], &ckpts[1..], &b.ties()?, b.lambda)?,
        BaselineMethod::Dare => dare_merge(&ckpts[0], &ckpts[1..], &b.dare()?, b.lambda)?,
    };
    store::save_checkpoint(&merged, &out_file)?;
    print(
        out,
        format_args!(
            "{}: merged {} tensor(s) into {}\n",
            b.method,
            merged.len(),
            out_file.display()
        ),
    )?;
    Ok(ExitCode::SUCCESS)
}

pub fn cmd_analyze(args: &AnalyzeArgs, cfg: &CliConfig, out: &mut impl Write) -> Result<ExitCode> {
    if let Some(e) = args.epsilon {
        if !(e > 0.0 && e.is_finite()) {
            return Err(Error::Config("--epsilon must be positive".into()));
        }
    }
    let trace = trace_io::load_trace(&args.trace, args.epsilon)?;
    let report = analyze(&trace, cfg.compat.threshold)?;
    print(
        out,
        format_args!(
            "{:<24} {:>9} {:>6} {:>9} {:>9} {:>6} {:>6} {:>6} {:>6}\n",
            "module", "mu", "s", "v", "rho", "mu'", "s'", "v'", "rho'"
        ),
    )?;
    for m in &report.modules {
        print(
            out,
            format_args!(
                "{:<24} {:>9.3} {:>6.3} {:>9.3} {:>9.3} {:>6.3} {:>6.3} {:>6.3} {:>6.3}\n",
                m.name,
                m.raw.mu,
                m.raw.s,
                m.raw.v,
                m.raw.rho,
                m.normalized.mu,
                m.normalized.s,
                m.normalized.v,
                m.normalized.rho
            ),
        )?;
    }
    print(
        out,
        format_args!(
            "compatibility {:.3} threshold {:.3} verdict {}\n",
            report.score,
            report.threshold,
            report.verdict.as_str()
        ),
    )?;
    let enforce = args.enforce || cfg.compat.enforce;
    if enforce && report.verdict != Verdict::Fusable {
        return Ok(ExitCode::from(1));
    }
    Ok(ExitCode::SUCCESS)
}

pub fn cmd_bench(args: &BenchArgs, cfg: &CliConfig, out: &mut impl Write) -> Result<ExitCode> {
    let bench = match &args.bench_config {
        Some(path) => BenchConfig::load(path)?,
        None => BenchConfig::default(),
    };
    let dir = args
        .out
        .clone()
        .or_else(|| cfg.io.out.clone())
        .unwrap_or_else(|| PathBuf::from("bench-report"));
    let report = run_comparison(&bench)?;
    report.write(&dir)?;
    for pair in &report.pairs {
        print(
            out,
            format_args!(
                "{} ({} / {})\n",
                pair.name,
                pair.task_a.as_str(),
                pair.task_b.as_str()
            ),
        )?;
        for row in &pair.methods {
            print(
                out,
                format_args!(
                    "  {:<14} {:>10.6} {:>10.6}\n",
                    row.method.as_str(),
                    row.loss_task_a,
                    row.loss_task_b
                ),
            )?;
        }
    }
    print(out, format_args!("report written to {}\n", dir.display()))?;
    Ok(ExitCode::SUCCESS)
}

pub fn cmd_inspect(path: &Path, out: &mut impl Write) -> Result<ExitCode> {
    let header = store::read_header(path)?;
    for (name, t) in &header.tensors {
        print(
            out,
            format_args!(
                "{name}\t{}\t{:?}\t{}\t[{}, {})\n",
                t.dtype,
                t.shape,
                t.role.as_deref().unwrap_or("other"),
                t.offsets[0],
                t.offsets[1]
            ),
        )?;
    }
    for (k, v) in &header.metadata {
        print(out, format_args!("metadata {k} = {v}\n"))?;
    }
    Ok(ExitCode::SUCCESS)
}

pub fn cmd_diff(a: &Path, b: &Path, out: &mut impl Write) -> Result<ExitCode> {
    let ca = store::load_checkpoint(a)?;
    let cb = store::load_checkpoint(b)?;
    for e in ca.entries() {
        match cb.matrix(&e.name) {
            None => print(out, format_args!("{}\tonly in {}\n", e.name, a.display()))?,
            Some(m) if m.shape() != e.matrix.shape() => print(
                out,
                format_args!(
                    "{}\tshape {:?} vs {:?}\n",
                    e.name,
                    e.matrix.shape(),
                    m.shape()
                ),
            )?,
            Some(m) => {
                let max = e
                    .matrix
                    .data()
                    .iter()
                    .zip(m.data())
                    .map(|(&x, &y)| (x as f64 - y as f64).abs())
                    .fold(0.0, f64::max);
                print(out, format_args!("{}\t{:e}\n", e.name, max))?;
            }
        }
    }
    for name in cb.names().filter(|n| !ca.contains(n)) {
        print(out, format_args!("{name}\tonly in {}\n", b.display()))?;
    }
    Ok(ExitCode::SUCCESS)
}
