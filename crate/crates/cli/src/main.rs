mod config;

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use chanpred_core::gp::{LearnedModel, ModelKind};
use chanpred_experiments::{
    learn_realization, realization_field, run_learning_sweep, run_prediction_uncertain_test,
    run_prediction_uncertain_training, run_resource_allocation, ExperimentOutput, FailureRecord, MetricRow,
};
use clap::{Parser, Subcommand, ValueEnum};

use config::{parse_methods, RunConfig};

const CACHE_FILE: &str = "sigma_proc_offline.cache";

#[derive(Parser, Debug)]
#[command(name = "chanpred", version, about = "Channel prediction under location uncertainty")]
struct Cli {
    /// key=value configuration file; flags override its values
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file (simulate, learn) or directory (experiment)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (falls back to UGP_WORKERS, then all cores)
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Method name, or a comma-separated list for experiments
    #[arg(long, global = true)]
    method: Option<String>,
    /// Mean location-error std in meters
    #[arg(long, global = true)]
    lambda: Option<f64>,
    /// Confidence parameters for rate allocation
    #[arg(long, global = true, value_delimiter = ',')]
    alpha_list: Option<Vec<f64>>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate one channel field and write it as CSV
    Simulate,
    /// Learn hyperparameters on one simulated training set
    Learn,
    /// Run one of the Monte Carlo sweeps
    Experiment {
        #[arg(value_enum)]
        which: Which,
    },
    /// Print the resolved configuration
    Config,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Which {
    Learning,
    PredTrain,
    PredTest,
    Resource,
}

impl Which {
    fn name(self) -> &'static str {
        match self {
            Which::Learning => "learning",
            Which::PredTrain => "pred-train",
            Which::PredTest => "pred-test",
            Which::Resource => "resource",
        }
    }
}

/// Errors that map to exit code 2.
#[derive(Debug)]
struct Usage(anyhow::Error);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:#}", self.0)
    }
}

impl std::error::Error for Usage {}

fn usage<T>(r: Result<T>) -> Result<T> {
    r.map_err(|e| Usage(e).into())
}

fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            usage(RunConfig::from_text(&text).with_context(|| format!("in {}", p.display())))?
        }
        None => RunConfig::default(),
    };
    let e = &mut cfg.experiment;
    if let Some(s) = cli.seed {
        e.master_seed = s;
        e.field.seed = s;
    }
    if let Some(w) = cli.workers {
        e.workers = w;
    } else if let Ok(v) = std::env::var("UGP_WORKERS") {
        e.workers = usage(
            v.trim()
                .parse()
                .with_context(|| format!("UGP_WORKERS: cannot parse '{v}'")),
        )?;
    }
    if let Some(m) = &cli.method {
        e.methods = usage(parse_methods(m))?;
    }
    if let Some(l) = cli.lambda {
        cfg.lambda = l;
        e.lambda_sweep = vec![l];
        e.resource_lambdas = vec![l];
    }
    if let Some(a) = &cli.alpha_list {
        e.alpha_sweep = a.clone();
    }
    usage(cfg.validate())?;
    Ok(cfg)
}

/// Fill in the offline process noise from the cache in `dir`, or calibrate
/// and cache it.
fn resolve_sigma_proc(cfg: &mut RunConfig, dir: &Path) -> Result<()> {
    let e = &cfg.experiment;
    if e.sigma_proc_offline.is_some() || !e.methods.iter().any(|m| m.uses_expected_kernel()) {
        return Ok(());
    }
    let fingerprint = cfg.calibration_fingerprint();
    let path = dir.join(CACHE_FILE);
    if let Ok(text) = fs::read_to_string(&path) {
        if let Some((head, value)) = text.rsplit_once("sigma_proc_offline=") {
            if head == fingerprint {
                if let Ok(v) = value.trim().parse::<f64>() {
                    log::info!("using cached sigma_proc_offline = {v} from {}", path.display());
                    cfg.experiment.sigma_proc_offline = Some(v);
                    return Ok(());
                }
            }
        }
    }
    log::info!(
        "calibrating sigma_proc offline ({} realizations)",
        e.calibration_realizations
    );
    let v = e.resolve_sigma_proc()?;
    fs::write(&path, format!("{fingerprint}sigma_proc_offline={v}\n"))
        .with_context(|| format!("writing {}", path.display()))?;
    cfg.experiment.sigma_proc_offline = Some(v);
    Ok(())
}

fn parent_dir(path: &Path) -> Result<PathBuf> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".config");
    PathBuf::from(s)
}

fn write_config(path: &Path, cfg: &RunConfig) -> Result<()> {
    fs::write(path, cfg.dump()).with_context(|| format!("writing {}", path.display()))
}

fn cmd_simulate(cli: &Cli, cfg: &RunConfig) -> Result<bool> {
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("field.csv"));
    parent_dir(&out)?;
    let field = realization_field(&cfg.experiment, 0)?;
    let file = File::create(&out).with_context(|| format!("creating {}", out.display()))?;
    let mut w = BufWriter::new(file);
    field.write_csv(&mut w)?;
    w.flush()?;
    write_config(&sidecar(&out), cfg)?;
    println!(
        "seed={} grid_points={} out={}",
        cfg.experiment.master_seed,
        field.len(),
        out.display()
    );
    Ok(true)
}

fn cmd_learn(cli: &Cli, cfg: &mut RunConfig) -> Result<bool> {
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("learned.csv"));
    let dir = parent_dir(&out)?;
    resolve_sigma_proc(cfg, &dir)?;
    let models = learn_realization(&cfg.experiment, cfg.lambda, 0)?;
    let mut w = BufWriter::new(File::create(&out).with_context(|| format!("creating {}", out.display()))?);
    writeln!(w, "{}", LearnedModel::CSV_HEADER)?;
    let mut ok = true;
    for (kind, m) in &models {
        match m {
            Ok(m) => {
                writeln!(w, "{}", m.csv_row())?;
                println!(
                    "{kind}: d_c={} sigma_psi={} sigma_proc={} eta={}",
                    m.theta.d_c, m.theta.sigma_psi, m.theta.sigma_proc, m.theta.eta
                );
            }
            Err(e) => {
                ok = false;
                eprintln!("{kind}: learning failed: {e}");
            }
        }
    }
    w.flush()?;
    write_config(&sidecar(&out), cfg)?;
    Ok(ok)
}

/// Appends rows to an open CSV and flushes after every cell.
struct CellWriter {
    rows: File,
    failures: File,
    n_failures: usize,
}

impl CellWriter {
    fn create(dir: &Path, name: &str) -> Result<Self> {
        let open = |file: &str, header: &str| -> Result<File> {
            let path = dir.join(file);
            fs::write(&path, format!("{header}\n")).with_context(|| format!("writing {}", path.display()))?;
            Ok(OpenOptions::new().append(true).open(&path)?)
        };
        Ok(Self {
            rows: open(&format!("{name}.csv"), MetricRow::CSV_HEADER)?,
            failures: open("failures.csv", FailureRecord::CSV_HEADER)?,
            n_failures: 0,
        })
    }

    fn write(&mut self, rows: &[MetricRow], failures: &[FailureRecord]) -> std::io::Result<()> {
        let mut buf = String::new();
        for r in rows {
            buf.push_str(&r.csv_row());
            buf.push('\n');
        }
        self.rows.write_all(buf.as_bytes())?;
        self.rows.flush()?;
        let mut buf = String::new();
        for f in failures {
            buf.push_str(&f.csv_row());
            buf.push('\n');
        }
        self.failures.write_all(buf.as_bytes())?;
        self.failures.flush()?;
        self.n_failures += failures.len();
        Ok(())
    }
}

fn cmd_experiment(cli: &Cli, cfg: &mut RunConfig, which: Which) -> Result<bool> {
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("results"));
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    resolve_sigma_proc(cfg, &dir)?;
    write_config(&dir.join(format!("{}.config", which.name())), cfg)?;
    let mut writer = CellWriter::create(&dir, which.name())?;
    let mut io_error: Option<std::io::Error> = None;
    let mut sink = |rows: &[MetricRow], failures: &[FailureRecord]| {
        if io_error.is_none() {
            if let Err(e) = writer.write(rows, failures) {
                io_error = Some(e);
            }
        }
    };
    let e = &cfg.experiment;
    let result: ExperimentOutput = match which {
        Which::Learning => run_learning_sweep(e, Some(&mut sink)),
        Which::PredTrain => run_prediction_uncertain_training(e, Some(&mut sink)),
        Which::PredTest => run_prediction_uncertain_test(e, Some(&mut sink)),
        Which::Resource => run_resource_allocation(e, Some(&mut sink)),
    }?;
    if let Some(err) = io_error {
        return Err(err).context("writing results");
    }
    println!(
        "{}: {} rows, {} failed cells -> {}",
        which.name(),
        result.rows.len(),
        writer.n_failures,
        dir.display()
    );
    Ok(writer.n_failures == 0)
}

fn method_names() -> String {
    ModelKind::ALL.iter().map(|m| m.name()).collect::<Vec<_>>().join(", ")
}

fn run(cli: &Cli) -> Result<bool> {
    let mut cfg = resolve(cli)?;
    match &cli.command {
        Command::Simulate => cmd_simulate(cli, &cfg),
        Command::Learn => {
            if cli.method.is_none() {
                return usage(Err(anyhow!("learn requires --method (one of {})", method_names())));
            }
            cmd_learn(cli, &mut cfg)
        }
        Command::Experiment { which } => cmd_experiment(cli, &mut cfg, *which),
        Command::Config => {
            print!("{}", cfg.dump());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) if e.is::<Usage>() => {
            eprintln!("error: {e}");
            eprintln!("run `chanpred --help` for usage");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.chain()
                .any(|c| matches!(c.downcast_ref(), Some(chanpred_experiments::ExperimentError::Config(_))))
            {
                return ExitCode::from(2);
            }
            ExitCode::from(1)
        }
    }
}
