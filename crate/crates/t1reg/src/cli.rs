//! Command-line front end. Exit codes: 0 success, 1 validation error,
//! 2 runtime failure.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde_json::Value;
use t1reg_core::phantom::{generate, PhantomSpec};
use t1reg_core::registration::{register, RegistrationConfig, Scenario};
use t1reg_core::relaxometry::{fit_series, FitConfig};
use t1reg_core::warp::warp_series;
use t1reg_core::{losses::pca::correlation_spectrum, Error};

use crate::evaluation::{compare_scenarios, phantom_batch, spectrum_plot, EvalSummary};
use crate::io::{
    load_defs, load_mask, load_series, parse_json, read_json, save_defs, save_maps, save_mask, save_series,
    write_bytes, write_json, IoError,
};
use crate::report::save_report;

#[derive(Debug, Parser)]
#[command(name = "t1reg", version, about = "Template-free groupwise motion correction for MOLLI T1 mapping")]
pub struct Cli {
    /// Log progress and the per-iteration loss trace to stderr.
    #[arg(long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic phantom (series plus ground truth).
    Phantom {
        /// PhantomSpec JSON; defaults to the pre-contrast phantom.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Register a series; writes defs and a JSON report.
    Register {
        /// Series sidecar, or a directory containing `series.json`.
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// RegistrationConfig JSON.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit parameter maps, optionally after warping with registered defs.
    Fit {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Defs sidecar, or a register output directory.
        #[arg(long)]
        defs: Option<PathBuf>,
        /// FitConfig JSON.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Compare scenarios on a phantom batch or on one phantom directory.
    Eval {
        #[arg(long)]
        out: PathBuf,
        /// A phantom output directory to evaluate instead of a batch.
        #[arg(long = "in")]
        input: Option<PathBuf>,
        /// Base PhantomSpec JSON for the batch.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Shared RegistrationConfig fields (without `scenario`).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "raw,vm-p,vm-g,pca,pca-relax")]
        scenarios: String,
        #[arg(long, default_value_t = 10)]
        batch: usize,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// First phantom seed; the batch uses consecutive seeds.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Eigenvalue spectrum before and after warping, as CSV and chart.
    Spectrum {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        defs: Option<PathBuf>,
        /// Output path prefix; `.csv` and `.pgm` are appended.
        #[arg(long)]
        out: PathBuf,
    },
}

/// Error classes that decide the exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidSeries(_)
            | Error::ShapeMismatch(_)
            | Error::NonFinite(_)
            | Error::InvalidConfig(_)
            | Error::NoObjective
            | Error::EmptyRegion(_) => CliError::Validation(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        match e {
            IoError::Core(inner) => inner.into(),
            IoError::Io { .. } => CliError::Runtime(e.to_string()),
            IoError::Json { .. } | IoError::Format { .. } => CliError::Validation(e.to_string()),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

/// Missing inputs are validation errors; failures while writing are runtime.
fn require(path: &Path) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Validation(format!("{}: no such file or directory", path.display())))
    }
}

fn resolve(path: &Path, default_name: &str) -> PathBuf {
    if path.is_dir() {
        path.join(default_name)
    } else {
        path.to_path_buf()
    }
}

fn log(msg: impl AsRef<str>) {
    eprintln!("t1reg: {}", msg.as_ref());
}

fn parse_scenarios(list: &str) -> CliResult<Vec<Scenario>> {
    let out: Vec<Scenario> = list
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| Scenario::parse(s).ok_or_else(|| CliError::Validation(format!("unknown scenario `{s}`"))))
        .collect::<CliResult<_>>()?;
    if out.is_empty() {
        return Err(CliError::Validation("no scenarios given".into()));
    }
    Ok(out)
}

/// Reads an optional JSON object and builds a registration config for
/// `scenario`; an explicit scenario argument wins over the file's.
fn registration_config(
    path: Option<&Path>,
    scenario: Option<Scenario>,
    seed: Option<u64>,
) -> CliResult<RegistrationConfig> {
    let mut value = match path {
        Some(p) => {
            require(p)?;
            read_json::<Value>(p)?
        }
        None => Value::Object(Default::default()),
    };
    let obj = value
        .as_object_mut()
        .ok_or_else(|| CliError::Validation("registration config must be a JSON object".into()))?;
    if let Some(s) = scenario {
        obj.insert("scenario".into(), serde_json::to_value(s).expect("scenario serializes"));
    }
    if let Some(seed) = seed {
        obj.insert("seed".into(), seed.into());
    }
    if !obj.contains_key("scenario") {
        return Err(CliError::Validation("no scenario: pass --scenario or set it in --config".into()));
    }
    let origin = path.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("<flags>"));
    let cfg: RegistrationConfig = parse_json(&value.to_string(), &origin)?;
    cfg.validate()?;
    Ok(cfg)
}

fn json_line<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string(value).unwrap_or_default()
}

/// Parses arguments and runs; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            log(format!("error: {e}"));
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Phantom { spec, out, seed } => {
            let mut spec: PhantomSpec = match spec {
                Some(p) => {
                    require(p)?;
                    read_json(p)?
                }
                None => PhantomSpec::default(),
            };
            if let Some(seed) = seed {
                spec.seed = *seed;
            }
            log(format!("phantom spec {} seed {}", json_line(&spec), spec.seed));
            let truth = generate(&spec)?;
            write_json(&out.join("spec.json"), &spec)?;
            save_series(&truth.corrupted, &out.join("series.json"))?;
            save_series(&truth.aligned, &out.join("aligned.json"))?;
            save_series(&truth.clean, &out.join("clean.json"))?;
            save_defs(&truth.motion, &out.join("truth_motion.json"))?;
            save_defs(&truth.correction, &out.join("truth_correction.json"))?;
            save_mask(&truth.mask, &out.join("mask.json"))?;
            save_maps(&truth.maps, &out.join("truth_maps"))?;
            Ok(())
        }
        Command::Register {
            input,
            out,
            config,
            scenario,
            seed,
        } => {
            let scenario = scenario.as_deref().map(parse_scenarios).transpose()?;
            let scenario = match scenario.as_deref() {
                Some([one]) => Some(*one),
                Some(_) => return Err(CliError::Validation("--scenario takes exactly one scenario".into())),
                None => None,
            };
            let cfg = registration_config(config.as_deref(), scenario, *seed)?;
            log(format!("registration config {} seed {}", json_line(&cfg), cfg.seed));
            require(input)?;
            let series = load_series(&resolve(input, "series.json"))?;
            let start = std::time::Instant::now();
            let mut report = register(&series, &cfg)?;
            report.wall_s = start.elapsed().as_secs_f64();
            if cli.verbose {
                for (i, r) in report.trace.iter().enumerate() {
                    log(format!("iter {i} {}", json_line(r)));
                }
            }
            log(format!(
                "{} iterations, {:.2} s, leading share {:.4} -> {:.4}",
                report.iterations,
                report.wall_s,
                report.spectrum_before.leading_share(),
                report.spectrum_after.leading_share()
            ));
            write_json(&out.join("config.json"), &cfg)?;
            save_report(&report, out)?;
            Ok(())
        }
        Command::Fit {
            input,
            out,
            defs,
            config,
        } => {
            let cfg: FitConfig = match config {
                Some(p) => {
                    require(p)?;
                    read_json(p)?
                }
                None => FitConfig::default(),
            };
            cfg.validate()?;
            log(format!("fit config {}", json_line(&cfg)));
            require(input)?;
            let mut series = load_series(&resolve(input, "series.json"))?;
            if let Some(d) = defs {
                require(d)?;
                let defs = load_defs(&resolve(d, "defs.json"))?;
                series = warp_series(&series, &defs)?.to_series(series.times_ms())?;
            }
            let maps = fit_series(&series, None, &cfg)?;
            log(format!("{:.1}% of pixels converged", 100.0 * maps.converged_fraction()));
            save_maps(&maps, out)?;
            Ok(())
        }
        Command::Eval {
            out,
            input,
            spec,
            config,
            scenarios,
            batch,
            jobs,
            seed,
        } => {
            let scenarios = parse_scenarios(scenarios)?;
            let configs: Vec<RegistrationConfig> = scenarios
                .iter()
                .map(|&s| registration_config(config.as_deref(), Some(s), None))
                .collect::<CliResult<_>>()?;
            for cfg in &configs {
                log(format!("registration config {}", json_line(cfg)));
            }
            let summary: EvalSummary = match input {
                Some(dir) => {
                    require(dir)?;
                    let series = load_series(&dir.join("series.json"))?;
                    let mask = load_mask(&dir.join("mask.json"))?;
                    let truth_path = dir.join("truth_correction.json");
                    let truth = if truth_path.exists() { Some(load_defs(&truth_path)?) } else { None };
                    compare_scenarios(&series, &mask, truth.as_ref(), &configs)?
                }
                None => {
                    let base: PhantomSpec = match spec {
                        Some(p) => {
                            require(p)?;
                            read_json(p)?
                        }
                        None => PhantomSpec::default(),
                    };
                    if *batch == 0 {
                        return Err(CliError::Validation("--batch must be at least 1".into()));
                    }
                    base.validate()?;
                    let seeds: Vec<u64> = (0..*batch as u64).map(|i| seed + i).collect();
                    log(format!("phantom spec {} seeds {:?}", json_line(&base), seeds));
                    phantom_batch(&base, &seeds, &configs, *jobs)?
                }
            };
            for row in &summary.rows {
                if let Err(e) = &row.outcome {
                    log(format!("{} {} failed: {e}", row.sequence_id, row.scenario));
                }
            }
            write_bytes(&out.join("eval.csv"), summary.csv(true).as_bytes())?;
            write_json(&out.join("summary.json"), &summary.scenarios)?;
            for s in &summary.scenarios {
                log(format!(
                    "{:>9}: sd {:.2} ± {:.2} ms, disp {}, share {:.4} -> {:.4}, {:.1} s",
                    s.scenario.name(),
                    s.sd_mean_ms,
                    s.sd_spread_ms,
                    s.disp_err_px.map(|d| format!("{d:.3} px")).unwrap_or_else(|| "n/a".into()),
                    s.leading_share_before,
                    s.leading_share_after,
                    s.wall_s
                ));
            }
            if summary.scenarios.iter().all(|s| s.failures == s.sequences) {
                return Err(CliError::Runtime("every scenario failed".into()));
            }
            Ok(())
        }
        Command::Spectrum { input, defs, out } => {
            require(input)?;
            let series = load_series(&resolve(input, "series.json"))?;
            let before = correlation_spectrum(&series.as_stack())?;
            let after = match defs {
                Some(d) => {
                    require(d)?;
                    let defs = load_defs(&resolve(d, "defs.json"))?;
                    correlation_spectrum(&warp_series(&series, &defs)?)?
                }
                None => before.clone(),
            };
            log(format!(
                "leading share {:.4} -> {:.4}",
                before.leading_share(),
                after.leading_share()
            ));
            spectrum_plot(&before, &after, out)?;
            Ok(())
        }
    }
}
