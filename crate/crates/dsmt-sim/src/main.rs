//! Command-line front end: run one experiment, assemble a program image,
//! or sweep a batch of configurations into CSV.
//!
//! Exit codes: 0 when every run completed and matched the in-order
//! reference, 1 when a run diverged / hit the cycle limit / trapped,
//! 2 for usage or file problems.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use dsmt_core::asm::Program;
use dsmt_core::harness::{run_experiment_with, ReportFormat, SimReport};
use dsmt_core::kernels;
use dsmt_core::{assemble, FetchPolicy, SimConfig};

#[derive(Parser)]
#[command(
    name = "dsmt-sim",
    version,
    about = "cycle-level simulator of a dynamically threaded SMT core"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one program and print a report
    Run(RunArgs),
    /// Assemble a source file into a binary program image
    Asm {
        /// Assembly source file
        input: PathBuf,
        /// Output image path
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Run a batch of experiments from a sweep file, emitting CSV
    Sweep {
        /// One experiment per line: `<kernel> [key=value ...]`
        file: PathBuf,
        /// Write CSV here instead of stdout
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Built-in kernel name, `.asm` source file, or binary image
    #[arg(long)]
    kernel: String,
    /// Hardware contexts (1 disables threading)
    #[arg(long)]
    contexts: Option<usize>,
    /// Fetch policy: icount2.8m or ideal
    #[arg(long)]
    fetch_policy: Option<String>,
    #[arg(long)]
    max_cycles: Option<u64>,
    /// Skip this many instructions functionally before timing starts
    #[arg(long)]
    fast_skip: Option<u64>,
    /// Squash every early cross-context register read, matching or not
    #[arg(long)]
    strict: bool,
    /// Config file of `key = value` lines, applied before other flags
    #[arg(long)]
    config: Option<PathBuf>,
    /// Report format: text, json, or csv
    #[arg(long, default_value = "text")]
    report: String,
    /// Write the report here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write a per-cycle trace to this file
    #[arg(long)]
    trace: Option<PathBuf>,
}

/// Resolve a kernel argument: built-in name, assembly source, or image.
fn load_program(spec: &str) -> Result<(Program, String)> {
    if let Some(src) = kernels::by_name(spec) {
        let prog = assemble(src).with_context(|| format!("built-in kernel `{spec}`"))?;
        return Ok((prog, spec.to_string()));
    }
    let path = Path::new(spec);
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| spec.to_string());
    let bytes = fs::read(path).with_context(|| format!("reading `{spec}`"))?;
    let is_asm = matches!(
        path.extension().and_then(|e| e.to_str()),
        Some("asm") | Some("s")
    );
    if is_asm {
        let text = String::from_utf8(bytes).with_context(|| format!("`{spec}` is not text"))?;
        let prog = assemble(&text).with_context(|| format!("assembling `{spec}`"))?;
        return Ok((prog, name));
    }
    match Program::from_image_bytes(&bytes) {
        Ok(prog) => Ok((prog, name)),
        Err(img_err) => match String::from_utf8(bytes) {
            Ok(text) => {
                let prog = assemble(&text).with_context(|| format!("assembling `{spec}`"))?;
                Ok((prog, name))
            }
            Err(_) => bail!("`{spec}`: {img_err}"),
        },
    }
}

fn build_config(args: &RunArgs) -> Result<SimConfig> {
    let mut cfg = SimConfig::default();
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config `{}`", path.display()))?;
        cfg.apply_str_config(&text)
            .with_context(|| format!("config `{}`", path.display()))?;
    }
    if let Some(n) = args.contexts {
        cfg.contexts = n;
    }
    if let Some(p) = &args.fetch_policy {
        cfg.fetch_policy =
            FetchPolicy::parse(p).with_context(|| format!("unknown fetch policy `{p}`"))?;
    }
    if let Some(m) = args.max_cycles {
        cfg.max_cycles = m;
    }
    if let Some(k) = args.fast_skip {
        cfg.fast_skip = k;
    }
    if args.strict {
        cfg.strict_lbit_squash = true;
    }
    cfg.validate().context("invalid configuration")?;
    Ok(cfg)
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text)
            .with_context(|| format!("writing `{}`", path.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn cmd_run(args: &RunArgs) -> Result<bool> {
    let fmt = ReportFormat::parse(&args.report)
        .with_context(|| format!("unknown report format `{}`", args.report))?;
    let (prog, name) = load_program(&args.kernel)?;
    let cfg = build_config(args)?;
    let trace: Option<Box<dyn std::io::Write>> = match &args.trace {
        Some(path) => {
            let f = fs::File::create(path)
                .with_context(|| format!("creating trace `{}`", path.display()))?;
            Some(Box::new(BufWriter::new(f)))
        }
        None => None,
    };
    let report = match run_experiment_with(&prog, &cfg, &name, trace) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("run failed: {e}");
            return Ok(false);
        }
    };
    emit(&report.render(fmt), args.out.as_deref())?;
    Ok(report.complete && report.matches_reference)
}

fn cmd_asm(input: &Path, output: &Path) -> Result<()> {
    let text = fs::read_to_string(input)
        .with_context(|| format!("reading `{}`", input.display()))?;
    let prog = assemble(&text).with_context(|| format!("assembling `{}`", input.display()))?;
    fs::write(output, prog.to_image_bytes())
        .with_context(|| format!("writing `{}`", output.display()))?;
    eprintln!(
        "{}: {} words at {:#x}",
        output.display(),
        prog.words.len(),
        prog.base
    );
    Ok(())
}

/// One sweep line: `<kernel> [key=value ...]`, `#` starts a comment.
fn sweep_line(line: &str) -> Result<Option<(String, SimConfig)>> {
    let line = line.split('#').next().unwrap_or("").trim();
    if line.is_empty() {
        return Ok(None);
    }
    let mut parts = line.split_whitespace();
    let kernel = parts.next().unwrap().to_string();
    let mut cfg = SimConfig::default();
    for kv in parts {
        let (key, value) = kv
            .split_once('=')
            .with_context(|| format!("expected key=value, got `{kv}`"))?;
        cfg.set_key(key, value).map_err(|e| match e {
            dsmt_core::config::SetErr::Unknown => anyhow::anyhow!("unknown key in `{kv}`"),
            dsmt_core::config::SetErr::Bad => anyhow::anyhow!("bad value in `{kv}`"),
        })?;
    }
    cfg.validate().context("invalid configuration")?;
    Ok(Some((kernel, cfg)))
}

fn cmd_sweep(file: &Path, out: Option<&Path>) -> Result<bool> {
    let text =
        fs::read_to_string(file).with_context(|| format!("reading `{}`", file.display()))?;
    let mut rows = String::new();
    rows.push_str(SimReport::csv_header());
    rows.push('\n');
    let mut all_ok = true;
    for (i, raw) in text.lines().enumerate() {
        let (kernel, cfg) = match sweep_line(raw).with_context(|| format!("line {}", i + 1))? {
            Some(x) => x,
            None => continue,
        };
        let (prog, name) = load_program(&kernel).with_context(|| format!("line {}", i + 1))?;
        match run_experiment_with(&prog, &cfg, &name, None) {
            Ok(r) => {
                all_ok &= r.complete && r.matches_reference;
                rows.push_str(&r.csv_row());
                rows.push('\n');
            }
            Err(e) => {
                eprintln!("line {}: run failed: {e}", i + 1);
                all_ok = false;
            }
        }
    }
    emit(&rows, out)?;
    Ok(all_ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.cmd {
        Cmd::Run(args) => cmd_run(args),
        Cmd::Asm { input, output } => cmd_asm(input, output).map(|_| true),
        Cmd::Sweep { file, out } => cmd_sweep(file, out.as_deref()),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
