//! The `drgrad` command line.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use drgrad_core::data::read_idx_header;
use drgrad_core::harness::{run_suite, verify, RunConfig};
use drgrad_core::sampling::SkewKind;
use drgrad_core::OptimizerKind;

#[derive(Debug, Parser)]
#[command(name = "drgrad", version, about = "Doubly robust control-variate SGD experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every seed of a training config and write CSV curves.
    Train(TrainArgs),
    /// Run the exact-enumeration checks on the shipped fixtures.
    Verify {
        /// Print the checks as JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Print the header of an IDX file.
    InspectIdx { path: PathBuf },
    /// Merge the mean curves of several run directories into one CSV.
    ExportCurves {
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
    },
}

#[derive(Debug, clap::Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Comma-separated seeds, replacing the config's list.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_parser = parse_kind)]
    optimizer: Option<OptimizerKind>,
    #[arg(long, value_enum)]
    skew: Option<SkewArg>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SkewArg {
    Fixed,
    Rotating,
    Uniform,
}

fn parse_kind(s: &str) -> Result<OptimizerKind, String> {
    s.parse().map_err(|e: drgrad_core::Error| e.to_string())
}

/// Runs the CLI on `argv` (program name first) and returns the exit code.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn run(command: Command) -> anyhow::Result<i32> {
    match command {
        Command::Train(args) => train(args),
        Command::Verify { json } => verify_cmd(json),
        Command::InspectIdx { path } => {
            let h = read_idx_header(&path).with_context(|| format!("reading {}", path.display()))?;
            println!("magic: 0x{:08x}", h.magic);
            let dims: Vec<String> = h.dims.iter().map(u32::to_string).collect();
            println!("dims: {}", dims.join(" x "));
            println!("count: {}", h.dims.first().copied().unwrap_or(0));
            Ok(0)
        }
        Command::ExportCurves { out, dirs } => {
            export_curves(&out, &dirs)?;
            Ok(0)
        }
    }
}

fn train(args: TrainArgs) -> anyhow::Result<i32> {
    if !args.config.exists() {
        bail!("config file {} does not exist", args.config.display());
    }
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(seeds) = args.seeds {
        cfg.seeds = seeds;
    }
    if let Some(out) = args.out {
        cfg.output_dir = out;
    }
    if let Some(kind) = args.optimizer {
        cfg.optimizer.kind = kind;
    }
    if let Some(skew) = args.skew {
        cfg.skew.kind = match skew {
            SkewArg::Fixed => SkewKind::Fixed,
            SkewArg::Rotating => SkewKind::Rotating,
            SkewArg::Uniform => SkewKind::Uniform,
        };
    }
    cfg.validate()?;
    let report = run_suite(&cfg)?;
    for r in &report.records {
        match r.final_test_acc() {
            Some(acc) if r.completed() => println!("seed {:>4}: final test accuracy {acc:.4}", r.seed),
            _ => println!("seed {:>4}: {:?}", r.seed, r.status),
        }
    }
    if let Some(mean) = report.mean_final_test_acc() {
        println!("{}: mean final test accuracy {mean:.4}", cfg.optimizer.kind);
    }
    println!("wrote {}", report.output_dir.display());
    Ok(if report.partial { 1 } else { 0 })
}

fn verify_cmd(json: bool) -> anyhow::Result<i32> {
    let checks = verify::run_checks()?;
    if json {
        println!("{}", serde_json::to_string_pretty(&checks)?);
    } else {
        println!("{:<48} {:>12} {:>9} {:>10}  result", "check", "value", "", "threshold");
        for c in &checks {
            println!(
                "{:<48} {:>12.3e} {:>9} {:>10.1e}  {}",
                c.name,
                c.value,
                c.direction,
                c.threshold,
                if c.passed { "pass" } else { "FAIL" }
            );
        }
    }
    Ok(if checks.iter().all(|c| c.passed) { 0 } else { 1 })
}

fn suite_label(dir: &Path) -> String {
    let manifest = dir.join("manifest.json");
    std::fs::read_to_string(&manifest)
        .ok()
        .and_then(|text| serde_json::from_str::<serde_json::Value>(&text).ok())
        .and_then(|v| {
            let cfg = v.get("config")?;
            let name = cfg.get("name").and_then(|n| n.as_str()).unwrap_or("");
            let kind = cfg.get("optimizer")?.get("kind")?.as_str()?;
            Some(if name.is_empty() { kind.to_string() } else { format!("{name}/{kind}") })
        })
        .unwrap_or_else(|| dir.display().to_string())
}

fn export_curves(out: &Path, dirs: &[PathBuf]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(out).with_context(|| format!("creating {}", out.display()))?;
    w.write_record(["suite", "t", "mean_test_acc", "std_test_acc", "mean_train_loss", "runs"])?;
    for dir in dirs {
        let path = dir.join("mean_curve.csv");
        let mut r = csv::Reader::from_path(&path).with_context(|| format!("reading {}", path.display()))?;
        let label = suite_label(dir);
        for rec in r.records() {
            let rec = rec.with_context(|| format!("reading {}", path.display()))?;
            let mut row = vec![label.as_str()];
            row.extend(rec.iter());
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}
