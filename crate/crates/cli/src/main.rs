use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use dgpsi::baselines::MethodTag;
use dgpsi::dgp::{train_sem, DgpData, DgpSiEmulator};
use dgpsi::pipeline::experiment::{
    read_long_csv, read_report_json, run_experiment, summarise, synthetic_windows, write_long_csv,
    write_predictions_csv, write_report_json, EvaluationReport, ExperimentConfig, Mode, PredictionRow,
    SummaryEntry,
};
use dgpsi::pipeline::{discretise_hourly, ingest_csv, standardise, ObservationTable};
use log::info;

#[derive(Parser)]
#[command(name = "dgpsi", version, about = "Deep GP stochastic imputation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic admission windows as raw CSV files.
    Generate(GenerateArgs),
    /// Discretise to hourly rows and standardise raw CSV files.
    Preprocess(PreprocessArgs),
    /// Run the masking experiment and write report, results and predictions.
    Run(RunArgs),
    /// Re-aggregate a report JSON or long-format results CSV.
    Report(ReportArgs),
    /// Print an emulator manifest, optionally training and saving one first.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct Overrides {
    /// TOML config file; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    windows: Option<usize>,
}

impl Overrides {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                ExperimentConfig::from_toml(&text).with_context(|| format!("parsing {}", p.display()))?
            }
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(w) = self.windows {
            cfg.windows = w;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    common: Overrides,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PreprocessArgs {
    /// Raw CSV files with header `time,<var>...`.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Name of the output variable.
    #[arg(long, default_value = "ph")]
    output: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Overrides,
    /// Rerun the configuration recorded in an existing report.
    #[arg(long, conflicts_with = "config")]
    from_report: Option<PathBuf>,
    #[arg(long)]
    mode: Option<String>,
    /// Comma-separated, e.g. `locf,mice,gp,lgp,dgp_si`.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    proportions: Option<Vec<f64>>,
    /// Raw CSV windows to use instead of synthetic ones.
    #[arg(long, num_args = 1..)]
    inputs: Option<Vec<PathBuf>>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// `report.json` or a long-format `results.csv`.
    input: PathBuf,
    /// Print the summary as JSON instead of a table.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct InspectArgs {
    /// Emulator directory to read, or to write with `--train`.
    dir: PathBuf,
    /// Train from a raw CSV window first and save to `dir`.
    #[arg(long)]
    train: Option<PathBuf>,
    #[command(flatten)]
    common: Overrides,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Generate(a) => generate(a),
        Command::Preprocess(a) => preprocess(a),
        Command::Run(a) => run(a),
        Command::Report(a) => report(a),
        Command::Inspect(a) => inspect(a),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?))
}

fn generate(a: GenerateArgs) -> Result<()> {
    let cfg = a.common.load()?;
    fs::create_dir_all(&a.out)?;
    let windows = synthetic_windows(&cfg)?;
    for (w, win) in windows.iter().enumerate() {
        win.raw.write_csv(create(&a.out.join(format!("window_{w:03}.csv")))?)?;
        win.truth.write_csv(create(&a.out.join(format!("truth_{w:03}.csv")))?)?;
    }
    info!("wrote {} windows to {}", windows.len(), a.out.display());
    Ok(())
}

fn preprocess(a: PreprocessArgs) -> Result<()> {
    fs::create_dir_all(&a.out)?;
    for path in &a.inputs {
        let raw = ingest_csv(open(path)?, &[]).with_context(|| format!("reading {}", path.display()))?;
        let table = discretise_hourly(&raw)?.with_output(&a.output)?;
        let (z, record) = standardise(&table)?;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("window");
        table.write_csv(create(&a.out.join(format!("{stem}.hourly.csv")))?)?;
        z.write_csv(create(&a.out.join(format!("{stem}.standardised.csv")))?)?;
        serde_json::to_writer_pretty(create(&a.out.join(format!("{stem}.standardisation.json")))?, &record)?;
        info!("{}: {} hourly rows", path.display(), table.n_rows());
    }
    Ok(())
}

fn run(a: RunArgs) -> Result<()> {
    let mut cfg = match &a.from_report {
        Some(p) => read_report_json(open(p)?)?.manifest.config,
        None => a.common.load()?,
    };
    if a.from_report.is_some() && (a.common.seed.is_some() || a.common.windows.is_some()) {
        bail!("--from-report reruns the recorded config; drop the override flags");
    }
    if let Some(m) = &a.mode {
        cfg.mode = Mode::parse(m)?;
    }
    if let Some(ms) = &a.methods {
        cfg.methods = ms.iter().map(|m| MethodTag::parse(m)).collect::<dgpsi::Result<_>>()?;
    }
    if let Some(ps) = &a.proportions {
        cfg.proportions = ps.clone();
    }
    if let Some(inputs) = &a.inputs {
        cfg.inputs = inputs.clone();
    }
    cfg.validate()?;

    info!(
        "mode {:?}, {} proportions, methods {:?}",
        cfg.mode,
        cfg.proportions.len(),
        cfg.active_methods().iter().map(|m| m.name()).collect::<Vec<_>>()
    );
    let out = run_experiment(&cfg)?;
    fs::create_dir_all(&a.out)?;
    write_report_json(&out.report, create(&a.out.join("report.json"))?)?;
    write_long_csv(&out.report.per_window, create(&a.out.join("results.csv"))?)?;
    let mut groups: BTreeMap<(MethodTag, String), Vec<&PredictionRow>> = BTreeMap::new();
    for row in &out.predictions {
        groups.entry((row.method, format!("{}", row.proportion))).or_default().push(row);
    }
    for ((method, p), rows) in groups {
        let name = format!("predictions_{}_{}.csv", method.name(), p);
        write_predictions_csv(rows, create(&a.out.join(name))?)?;
    }
    for f in &out.report.failures {
        log::warn!(
            "window {} p={} {}: {}",
            f.window,
            f.proportion,
            f.method.map(|m| m.name()).unwrap_or("all"),
            f.error
        );
    }
    print_summary(&out.report.summary, &mut std::io::stdout().lock())?;
    info!("results in {}", a.out.display());
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let is_json = a.input.extension().is_some_and(|e| e == "json");
    let summary = if is_json {
        let rep: EvaluationReport = read_report_json(open(&a.input)?)?;
        summarise(&rep.per_window)
    } else {
        summarise(&read_long_csv(open(&a.input)?)?)
    };
    let mut stdout = std::io::stdout().lock();
    if a.json {
        serde_json::to_writer_pretty(&mut stdout, &summary)?;
        writeln!(stdout)?;
    } else {
        print_summary(&summary, &mut stdout)?;
    }
    Ok(())
}

fn print_summary(summary: &[SummaryEntry], w: &mut impl Write) -> Result<()> {
    writeln!(w, "{:<8} {:>10} {:>10} {:>10} {:>8}", "method", "proportion", "mean_mae", "std_error", "windows")?;
    for s in summary {
        writeln!(
            w,
            "{:<8} {:>10} {:>10.4} {:>10.4} {:>8}",
            s.method.name(),
            s.proportion,
            s.mean_mae,
            s.std_error,
            s.n_windows
        )?;
    }
    Ok(())
}

fn inspect(a: InspectArgs) -> Result<()> {
    let emulator = match &a.train {
        Some(path) => {
            let cfg = a.common.load()?;
            let arch = cfg.architecture()?;
            let mut declared = vec![cfg.output.clone()];
            declared.extend(cfg.covariates.iter().cloned());
            let raw = ingest_csv(open(path)?, &declared)?;
            let table: ObservationTable = discretise_hourly(&raw)?.with_output(&cfg.output)?;
            let (z, _) = standardise(&table)?;
            let (data, _) = DgpData::from_table(&z, &arch)?;
            let mut sem = cfg.sem.clone();
            sem.seed = cfg.seed;
            info!("training on {} rows, {} missing latent entries", data.n_rows(), data.missing_count());
            let em = train_sem(&data, &arch, &sem)?;
            em.save(&a.dir)?;
            em
        }
        None => DgpSiEmulator::load(&a.dir).with_context(|| format!("loading {}", a.dir.display()))?,
    };
    let mut stdout = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut stdout, &emulator.manifest())?;
    writeln!(stdout)?;
    Ok(())
}
