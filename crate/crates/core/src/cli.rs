//! `dualsniff` command line: simulate, locate, report.

use crate::config::{ConfigError, ErrorMetric, ExperimentConfig, NoiseModel, Scheme};
use crate::experiment::{locate, read_logs, simulate, write_logs, LocateOutput};
use crate::report::{
    compare, read_estimates, rows_from, unique_labels, write_cdf_points, write_estimates,
    write_merged_cdf, write_summary, EstimatesFile, EstimatesMeta, InputSummary, ReportError,
};
use clap::{Args, Parser, Subcommand};
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Parser)]
#[command(
    name = "dualsniff",
    version,
    about = "Passive LTE UE localization from two sniffers"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate capture logs for every sniffer and configuration.
    Simulate(SimulateArgs),
    /// Estimate the UE position per matched subframe and summarize errors.
    Locate(LocateArgs),
    /// Compare estimates files: statistics table and merged CDF.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory for the log files.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Fixed per-record noise sigma in seconds; overrides the config.
    #[arg(long, conflicts_with = "snr")]
    pub sigma: Option<f64>,
    /// SNR in dB; scales the noise when the config sets clock.sigma0.
    #[arg(long)]
    pub snr: Option<f64>,
    #[arg(long)]
    pub subframes: Option<u64>,
}

#[derive(Debug, Args)]
pub struct LocateArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Directory holding the `snK_cfgC.log` files.
    #[arg(long)]
    pub logs: PathBuf,
    /// Output directory for estimates and summary.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub scheme: Option<Scheme>,
    #[arg(long)]
    pub rnti: Option<u16>,
    #[arg(long)]
    pub metric: Option<ErrorMetric>,
    /// Also write the per-sample CDF point list.
    #[arg(long)]
    pub cdf_points: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Estimates files written by `locate`.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write one CDF point list per input.
    #[arg(long)]
    pub cdf_points: bool,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    NoSamples(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Input(_) => 3,
            CliError::NoSamples(_) => 4,
        }
    }
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        if e.is_empty_input() {
            CliError::NoSamples(e.to_string())
        } else {
            CliError::Input(e.to_string())
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |e| CliError::Input(format!("{}: {e}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

fn write_file(
    path: &Path,
    f: impl FnOnce(&mut BufWriter<File>) -> io::Result<()>,
) -> Result<(), CliError> {
    let mut out = create(path)?;
    f(&mut out).and_then(|_| out.flush()).map_err(io_err(path))
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Locate(a) => cmd_locate(&a),
        Command::Report(a) => cmd_report(&a),
    }
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(sigma) = args.sigma {
        cfg.noise = NoiseModel::Fixed(sigma);
    }
    if let Some(snr) = args.snr {
        cfg.snr_db = snr;
    }
    if let Some(n) = args.subframes {
        cfg.subframes = n;
    }
    cfg.validate()?;
    if cfg.scenario.ue_truth().is_none() {
        return Err(ConfigError::Invalid("simulation needs scenario.ue_truth".into()).into());
    }
    let logs = simulate(&cfg).map_err(ConfigError::from)?;
    let paths = write_logs(&logs, &args.out).map_err(io_err(&args.out))?;
    for (p, records) in paths.iter().zip(logs.values()) {
        println!("{}\t{} records", p.display(), records.len());
    }
    Ok(())
}

fn print_summary(summaries: &[InputSummary]) -> Result<(), CliError> {
    let stdout = io::stdout();
    write_summary(stdout.lock(), summaries).map_err(|e| CliError::Input(format!("stdout: {e}")))
}

pub fn cmd_locate(args: &LocateArgs) -> Result<(), CliError> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(s) = args.scheme {
        cfg.scheme = s;
    }
    if let Some(r) = args.rnti {
        cfg.rnti = r;
    }
    if let Some(m) = args.metric {
        cfg.metric = m;
    }
    cfg.validate()?;

    let (logs, diagnostics) =
        read_logs(&cfg, &args.logs).map_err(|e| CliError::Input(e.to_string()))?;
    for d in &diagnostics {
        eprintln!("warning: {}: {}", d.file, d.message);
    }
    let LocateOutput {
        estimates,
        match_diagnostics,
    } = locate(&cfg, &logs).map_err(|e| CliError::Input(e.to_string()))?;
    for d in &match_diagnostics {
        eprintln!("warning: {d}");
    }
    if estimates.is_empty() {
        return Err(CliError::NoSamples(format!(
            "no matched samples for RNTI {}",
            cfg.rnti
        )));
    }

    let file = EstimatesFile {
        meta: EstimatesMeta {
            scheme: cfg.scheme,
            metric: cfg.metric,
            extra: vec![
                ("rnti".into(), cfg.rnti.to_string()),
                ("snr_db".into(), cfg.snr_db.to_string()),
                ("seed".into(), cfg.seed.to_string()),
            ],
        },
        rows: rows_from(
            &estimates,
            cfg.metric,
            cfg.scenario.ue_truth(),
            cfg.scenario.enb(),
        ),
    };
    std::fs::create_dir_all(&args.out).map_err(io_err(&args.out))?;
    let label = format!("{}", cfg.scheme);
    let est_path = args.out.join(format!("estimates_{label}.csv"));
    write_file(&est_path, |w| write_estimates(w, &file))?;
    eprintln!(
        "{}: {} estimates, {} failed",
        est_path.display(),
        file.rows.len(),
        file.failures()
    );

    if cfg.scenario.ue_truth().is_none() {
        eprintln!("no ground truth in scenario; error statistics skipped");
        return Ok(());
    }
    let summaries = compare(&[(label.clone(), file)])?;
    write_file(&args.out.join(format!("summary_{label}.csv")), |w| {
        write_summary(w, &summaries)
    })?;
    if args.cdf_points {
        write_file(&args.out.join(format!("cdf_{label}.csv")), |w| {
            write_cdf_points(w, &summaries[0].raw.stats)
        })?;
    }
    print_summary(&summaries)
}

pub fn cmd_report(args: &ReportArgs) -> Result<(), CliError> {
    let stems: Vec<String> = args
        .inputs
        .iter()
        .map(|p| {
            p.file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default()
        })
        .collect();
    let labels = unique_labels(&stems);
    let mut inputs = Vec::with_capacity(args.inputs.len());
    for (path, label) in args.inputs.iter().zip(labels) {
        let f = File::open(path).map_err(io_err(path))?;
        let file = read_estimates(BufReader::new(f), &path.display().to_string())?;
        inputs.push((label, file));
    }
    let summaries = compare(&inputs)?;
    std::fs::create_dir_all(&args.out).map_err(io_err(&args.out))?;
    write_file(&args.out.join("summary.csv"), |w| {
        write_summary(w, &summaries)
    })?;
    write_file(&args.out.join("cdf.csv"), |w| {
        write_merged_cdf(w, &summaries)
    })?;
    if args.cdf_points {
        for s in &summaries {
            let name = format!("cdf_{}.csv", s.label.replace('#', "_"));
            write_file(&args.out.join(name), |w| write_cdf_points(w, &s.raw.stats))?;
        }
    }
    print_summary(&summaries)
}
