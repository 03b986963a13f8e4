//! `evppi`: run multilevel Monte Carlo value-of-information experiments
//! and write their results as CSV or JSON.

mod error;
mod output;

use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use evppi_core::diagnostics::{cost_comparison, evppi_report, fit_rates, level_sweep_with, PMode};
use evppi_core::mlmc::{mlmc_run, MlmcConfig};
use evppi_core::models::{self, DecisionModel};
use evppi_core::{GaussianModel, GaussianModelSpec, RandomStream};

use crate::error::CliError;
use crate::output::{
    destination, write_file, Artifact, CompareBody, Document, EvppiBody, Format, LevelsBody,
    RunBody, SCHEMA_VERSION,
};

/// Seed used when `--seed` is not given.
const DEFAULT_SEED: u64 = 0x5eed_2016;

#[derive(Parser, Debug)]
#[command(
    name = "evppi",
    version,
    about = "Multilevel Monte Carlo estimation of EVPI and EVPPI"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the adaptive MLMC driver for EVPI - EVPPI at one accuracy.
    Run {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        driver: Driver,
        /// Root-mean-square accuracy target.
        #[arg(long, required = true)]
        epsilon: Vec<f64>,
    },
    /// Sweep fixed sample counts over levels and fit the convergence rates.
    Levels {
        #[command(flatten)]
        common: Common,
        /// Samples per level.
        #[arg(long, default_value = "200000", value_parser = parse_count)]
        n: u64,
        /// Finest level of the sweep.
        #[arg(long, default_value_t = 10)]
        max_level: u32,
        /// Estimate P_l from draws independent of those used for Z_l.
        #[arg(long)]
        independent_p: bool,
    },
    /// Compare measured MLMC cost with modelled nested Monte Carlo cost.
    Compare {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        driver: Driver,
        /// Accuracy targets; repeat the flag for several.
        #[arg(long, required = true)]
        epsilon: Vec<f64>,
        /// Independent driver runs averaged per accuracy.
        #[arg(long, default_value_t = 1)]
        replications: u32,
    },
    /// EVPI by standard Monte Carlo, EVPI - EVPPI by MLMC, and EVPPI.
    Evppi {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        driver: Driver,
        /// Accuracy target for EVPI - EVPPI.
        #[arg(long, required = true)]
        epsilon: Vec<f64>,
        /// Samples for the EVPI estimate.
        #[arg(long, default_value = "10000000", value_parser = parse_count)]
        n: u64,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// Built-in model: synthetic1, synthetic2, synthetic3 or bkoc.
    #[arg(long, default_value = "synthetic1")]
    model: String,
    /// TOML file overriding the bkoc model parameters.
    #[arg(long)]
    config: Option<PathBuf>,
    /// 1-based indices of the variables observed before deciding (bkoc).
    #[arg(long, value_delimiter = ',')]
    outer: Option<Vec<usize>>,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
    /// Output file; defaults to a file under $EVPPI_OUTPUT_DIR, else stdout.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Also write a gnuplot script next to a CSV output file.
    #[arg(long)]
    emit_plot_script: bool,
}

#[derive(Args, Debug)]
struct Driver {
    /// Warm-up samples per initial level.
    #[arg(long, default_value = "10000", value_parser = parse_count)]
    warmup: u64,
    /// Finest level the driver may add.
    #[arg(long, default_value_t = 25)]
    max_level: u32,
}

impl Driver {
    fn config(&self, epsilon: f64) -> MlmcConfig {
        MlmcConfig {
            warmup_samples: self.warmup,
            max_level: self.max_level,
            ..MlmcConfig::new(epsilon)
        }
    }
}

/// Accepts plain integers and integral scientific notation such as `1e7`.
fn parse_count(s: &str) -> Result<u64, String> {
    if let Ok(n) = s.parse::<u64>() {
        return Ok(n);
    }
    match s.parse::<f64>() {
        Ok(x) if x >= 0.0 && x.fract() == 0.0 && x < u64::MAX as f64 => Ok(x as u64),
        _ => Err(format!("`{s}` is not a non-negative integer")),
    }
}

fn single_epsilon(eps: &[f64]) -> Result<f64, CliError> {
    match eps {
        [e] => Ok(*e),
        _ => Err(CliError::usage(
            "exactly one --epsilon is required for this command",
        )),
    }
}

#[derive(Debug)]
struct LoadedModel {
    model: Arc<dyn DecisionModel>,
    outer_indices: Option<Vec<usize>>,
}

fn load_model(common: &Common) -> Result<LoadedModel, CliError> {
    let gaussian = common.model == "bkoc";
    if !gaussian && (common.config.is_some() || common.outer.is_some()) {
        return Err(CliError::usage(format!(
            "--config and --outer apply to the bkoc model, not `{}`",
            common.model
        )));
    }
    if !gaussian {
        return Ok(LoadedModel {
            model: models::builtin(&common.model)?,
            outer_indices: None,
        });
    }
    let mut spec = match &common.config {
        Some(path) => GaussianModelSpec::load(path)?,
        None => GaussianModelSpec::bkoc(),
    };
    if let Some(outer) = &common.outer {
        spec = spec.with_outer(outer);
    }
    let outer_indices = Some(spec.outer_indices.clone());
    Ok(LoadedModel {
        model: Arc::new(GaussianModel::bkoc(spec)?),
        outer_indices,
    })
}

fn document<T>(command: &str, loaded: &LoadedModel, seed: u64, body: T) -> Document<T> {
    Document {
        schema_version: SCHEMA_VERSION,
        command: command.to_string(),
        model: loaded.model.name().to_string(),
        outer_indices: loaded.outer_indices.clone(),
        seed,
        body,
    }
}

fn execute(command: &Command) -> Result<(Artifact, String), CliError> {
    match command {
        Command::Run {
            common,
            driver,
            epsilon,
        } => {
            let loaded = load_model(common)?;
            let config = driver.config(single_epsilon(epsilon)?);
            let result = mlmc_run(
                loaded.model.as_ref(),
                &config,
                &RandomStream::new(common.seed),
            )?;
            let summary = format!(
                "estimate {} std_error {:.3e} levels {} cost {}",
                result.estimate,
                result.std_error(),
                result.max_level_used,
                result.total_cost
            );
            let doc = document("run", &loaded, common.seed, RunBody { config, result });
            Ok((Artifact::Run(doc), summary))
        }
        Command::Levels {
            common,
            n,
            max_level,
            independent_p,
        } => {
            let loaded = load_model(common)?;
            let mode = if *independent_p {
                PMode::Independent
            } else {
                PMode::Shared
            };
            let levels = level_sweep_with(
                loaded.model.as_ref(),
                *max_level,
                *n,
                &RandomStream::new(common.seed),
                mode,
            )?;
            let rates = fit_rates(&levels, 2).ok();
            let summary = match &rates {
                Some(r) => format!(
                    "alpha {:.3} beta {:.3} over levels 2..={max_level}",
                    r.alpha, r.beta
                ),
                None => "too few usable levels to fit rates".to_string(),
            };
            let body = LevelsBody {
                n_per_level: *n,
                max_level: *max_level,
                independent_p: *independent_p,
                levels,
                rates,
            };
            Ok((
                Artifact::Levels(document("levels", &loaded, common.seed, body)),
                summary,
            ))
        }
        Command::Compare {
            common,
            driver,
            epsilon,
            replications,
        } => {
            let loaded = load_model(common)?;
            let mut eps = epsilon.clone();
            eps.sort_by(|a, b| b.total_cmp(a));
            let config = driver.config(eps[0]);
            config.validate()?;
            let rows = cost_comparison(
                loaded.model.as_ref(),
                &eps,
                &config,
                *replications,
                &RandomStream::new(common.seed),
            )?;
            let summary = rows
                .iter()
                .map(|r| format!("eps {} ratio {:.1}", r.epsilon, r.ratio))
                .collect::<Vec<_>>()
                .join("; ");
            let body = CompareBody {
                config,
                replications: *replications,
                rows,
            };
            Ok((
                Artifact::Compare(document("compare", &loaded, common.seed, body)),
                summary,
            ))
        }
        Command::Evppi {
            common,
            driver,
            epsilon,
            n,
        } => {
            let loaded = load_model(common)?;
            let config = driver.config(single_epsilon(epsilon)?);
            let report = evppi_report(
                loaded.model.as_ref(),
                loaded.outer_indices.clone(),
                &config,
                *n,
                &RandomStream::new(common.seed),
            )?;
            let summary = format!(
                "evpi {:.6} difference {:.6} evppi {:.6} (std_error {:.3e})",
                report.evpi.value, report.difference, report.evppi, report.evppi_std_error
            );
            let body = EvppiBody {
                config,
                n_evpi: *n,
                report,
            };
            Ok((
                Artifact::Evppi(document("evppi", &loaded, common.seed, body)),
                summary,
            ))
        }
    }
}

fn common(command: &Command) -> &Common {
    match command {
        Command::Run { common, .. }
        | Command::Levels { common, .. }
        | Command::Compare { common, .. }
        | Command::Evppi { common, .. } => common,
    }
}

fn command_name(command: &Command) -> &'static str {
    match command {
        Command::Run { .. } => "run",
        Command::Levels { .. } => "levels",
        Command::Compare { .. } => "compare",
        Command::Evppi { .. } => "evppi",
    }
}

fn emit(artifact: &Artifact, summary: &str, common: &Common, name: &str) -> Result<(), CliError> {
    let default_name = format!("{name}-{}.{}", common.model, common.format.extension());
    let Some(path) = destination(common.output.as_deref(), &default_name)? else {
        if common.emit_plot_script {
            return Err(CliError::usage("--emit-plot-script needs an output file"));
        }
        let stdout = io::stdout();
        artifact
            .write(stdout.lock(), common.format)
            .map_err(|e| CliError::io("writing stdout", e))?;
        eprintln!("{summary}");
        return Ok(());
    };
    if common.emit_plot_script {
        write_plot_script(artifact, common.format, &path)?;
    }
    write_file(&path, |w| artifact.write(w, common.format))?;
    println!("{summary} -> {}", path.display());
    Ok(())
}

fn write_plot_script(artifact: &Artifact, format: Format, data: &Path) -> Result<(), CliError> {
    if format != Format::Csv {
        return Err(CliError::usage("--emit-plot-script needs --format csv"));
    }
    let file_name = data
        .file_name()
        .map(|f| f.to_string_lossy().into_owned())
        .unwrap_or_default();
    let Some(script) = artifact.plot_script(&file_name) else {
        return Err(CliError::usage("this command has no plot script"));
    };
    write_file(&data.with_extension("gp"), |w| {
        w.write_all(script.as_bytes())
    })
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let common = common(&cli.command);
    let (artifact, summary) = match common.threads {
        Some(0) => return Err(CliError::usage("--threads must be at least 1")),
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map_err(|e| CliError::usage(format!("cannot start {k} threads: {e}")))?
            .install(|| execute(&cli.command))?,
        None => execute(&cli.command)?,
    };
    emit(&artifact, &summary, common, command_name(&cli.command))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn counts_accept_scientific_notation() {
        assert_eq!(parse_count("200000"), Ok(200_000));
        assert_eq!(parse_count("1e7"), Ok(10_000_000));
        assert!(parse_count("1.5").is_err());
        assert!(parse_count("-3").is_err());
    }

    #[test]
    fn outer_only_for_bkoc() {
        let cli = Cli::try_parse_from([
            "evppi",
            "run",
            "--model",
            "synthetic1",
            "--outer",
            "5,14",
            "--epsilon",
            "0.1",
        ])
        .unwrap();
        let err = load_model(common(&cli.command)).unwrap_err();
        assert!(matches!(err, CliError::Usage(_)));
    }

    #[test]
    fn outer_list_parses() {
        let cli = Cli::try_parse_from([
            "evppi",
            "evppi",
            "--model",
            "bkoc",
            "--outer",
            "5,6,14,15",
            "--epsilon",
            "1",
        ])
        .unwrap();
        let loaded = load_model(common(&cli.command)).unwrap();
        assert_eq!(loaded.outer_indices, Some(vec![5, 6, 14, 15]));
    }
}
