use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bochner_core::catalog::{self, CatalogEntry, Chart, EntryKind, Params};
use bochner_core::report::{
    convergence_study, run_check, to_json_string, CheckConfig, Derivatives, Real, VerificationReport,
};
use bochner_core::GeomError;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

/// Numerical verification of Bochner-type identities on explicit geometries.
#[derive(Debug, Parser)]
#[command(name = "bochner-lab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one check at one resolution.
    Check(RunArgs),
    /// Run one check over dyadic resolutions and fit the decay order.
    Study(RunArgs),
    /// Inspect the geometry catalog.
    Catalog {
        #[command(subcommand)]
        action: CatalogAction,
    },
    /// Inspect the effective configuration.
    Config {
        #[command(subcommand)]
        action: ConfigAction,
    },
}

#[derive(Debug, Subcommand)]
enum CatalogAction {
    /// Parameter schema of every entry.
    List,
    /// Resolved parameters and reference table of one entry.
    Show {
        name: String,
        #[arg(long, default_value = "")]
        params: String,
    },
}

#[derive(Debug, Subcommand)]
enum ConfigAction {
    /// Print the configuration after applying the file and flags.
    Show(Settings),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Check id, e.g. weitzenboeck, simons, stability.
    check: String,
    #[arg(long)]
    geometry: String,
    /// Entry parameters, `k=v,...`.
    #[arg(long, default_value = "")]
    params: String,
    #[command(flatten)]
    settings: Settings,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the residual table as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DerivArg {
    Analytic,
    Reference,
    Grid,
}

#[derive(Debug, Args)]
struct Settings {
    /// JSON configuration file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    resolution: Option<usize>,
    /// Comma-separated study resolutions.
    #[arg(long, value_delimiter = ',')]
    resolutions: Option<Vec<usize>>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long, value_parser = ["2", "4"])]
    order: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Strict variant of the hypothesis check.
    #[arg(long)]
    strict: bool,
    #[arg(long, value_enum)]
    derivatives: Option<DerivArg>,
    /// Number of stability eigenvalues to report.
    #[arg(long)]
    modes: Option<usize>,
}

/// Input, usage or file-system failure; exits 1.
#[derive(Debug)]
struct CliError(String);

impl From<GeomError> for CliError {
    fn from(e: GeomError) -> Self {
        CliError(e.to_string())
    }
}

impl Settings {
    fn resolve(&self) -> Result<CheckConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| CliError(format!("{}: {e}", path.display())))?;
                serde_json::from_str(&text).map_err(|e| CliError(format!("{}: {e}", path.display())))?
            }
            None => CheckConfig::default(),
        };
        if self.resolution.is_some() {
            cfg.resolution = self.resolution;
        }
        if let Some(r) = &self.resolutions {
            cfg.resolutions = r.clone();
        }
        if self.tol.is_some() {
            cfg.tol = self.tol;
        }
        if let Some(o) = &self.order {
            cfg.order = o.parse().expect("validated by clap");
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.strict |= self.strict;
        if let Some(d) = self.derivatives {
            cfg.derivatives = Some(match d {
                DerivArg::Analytic => Derivatives::Analytic,
                DerivArg::Reference => Derivatives::Reference,
                DerivArg::Grid => Derivatives::Grid,
            });
        }
        if let Some(m) = self.modes {
            cfg.modes = m;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Serialize)]
struct ReferenceView<'a> {
    quantity: &'a str,
    value: Real,
    tolerance: Real,
    provenance: &'a str,
}

#[derive(Serialize)]
struct EntryView<'a> {
    name: &'a str,
    kind: EntryKind,
    description: &'a str,
    params: &'a Params,
    chart: &'a Chart,
    default_resolution: usize,
    references: Vec<ReferenceView<'a>>,
}

fn show(entry: &CatalogEntry) -> String {
    let view = EntryView {
        name: &entry.name,
        kind: entry.kind,
        description: &entry.description,
        params: &entry.params,
        chart: &entry.chart,
        default_resolution: entry.default_resolution,
        references: entry
            .references
            .iter()
            .map(|r| ReferenceView {
                quantity: &r.quantity,
                value: Real(r.value),
                tolerance: Real(r.tolerance),
                provenance: &r.provenance,
            })
            .collect(),
    };
    to_json_string(&view)
}

/// Prints to stdout; a closed pipe is not an error.
fn emit(text: &str) {
    let _ = writeln!(io::stdout().lock(), "{text}");
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError(format!("{}: {e}", path.display())))
}

fn run(args: &RunArgs, study: bool) -> Result<VerificationReport, CliError> {
    let cfg = args.settings.resolve()?;
    let entry = catalog::build(&args.geometry, &Params::parse(&args.params)?)?;
    let report =
        if study { convergence_study(&args.check, &entry, &cfg)? } else { run_check(&args.check, &entry, &cfg)? };
    let json = report.to_json();
    match &args.out {
        Some(path) => {
            write(path, &(json + "\n"))?;
            emit(&format!("{} {} {}: {}", report.check_id, report.geometry.name, path.display(), report.verdict));
        }
        None => emit(&json),
    }
    if let Some(path) = &args.csv {
        write(path, &report.to_csv()?)?;
    }
    Ok(report)
}

fn configure_threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var("BOCHNER_LAB_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| CliError(format!("BOCHNER_LAB_THREADS must be a positive integer, got '{v}'")))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| CliError(e.to_string()))?;
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<i32, CliError> {
    configure_threads()?;
    match cli.command {
        Command::Check(args) => Ok(run(&args, false)?.exit_code()),
        Command::Study(args) => Ok(run(&args, true)?.exit_code()),
        Command::Catalog { action: CatalogAction::List } => {
            emit(&to_json_string(&catalog::list()));
            Ok(0)
        }
        Command::Catalog { action: CatalogAction::Show { name, params } } => {
            emit(&show(&catalog::build(&name, &Params::parse(&params)?)?));
            Ok(0)
        }
        Command::Config { action: ConfigAction::Show(settings) } => {
            emit(&to_json_string(&settings.resolve()?));
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(CliError(msg)) => {
            eprintln!("bochner-lab: {msg}");
            ExitCode::from(1)
        }
    }
}
