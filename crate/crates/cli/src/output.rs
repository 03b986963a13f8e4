use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use evppi_core::diagnostics::{
    format_real, write_comparison_csv, write_level_csv, CostComparisonRow, EvppiReport,
};
use evppi_core::mlmc::{MlmcConfig, MlmcResult};
use evppi_core::{LevelStats, RateEstimates};

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

/// Directory used for output files when `--output` is absent.
pub const OUTPUT_DIR_ENV: &str = "EVPPI_OUTPUT_DIR";

pub const EVPPI_CSV_HEADER: &str = "quantity,value,std_error";

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

/// Common header of every JSON document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Document<T> {
    pub schema_version: u32,
    pub command: String,
    pub model: String,
    pub outer_indices: Option<Vec<usize>>,
    pub seed: u64,
    #[serde(flatten)]
    pub body: T,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunBody {
    pub config: MlmcConfig,
    pub result: MlmcResult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelsBody {
    pub n_per_level: u64,
    pub max_level: u32,
    pub independent_p: bool,
    pub levels: Vec<LevelStats>,
    /// Fit over levels `>= 2`; absent when too few levels are usable.
    pub rates: Option<RateEstimates>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareBody {
    pub config: MlmcConfig,
    pub replications: u32,
    pub rows: Vec<CostComparisonRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvppiBody {
    pub config: MlmcConfig,
    pub n_evpi: u64,
    pub report: EvppiReport,
}

/// Payload of a finished command, ready to be written in either format.
pub enum Artifact {
    Run(Document<RunBody>),
    Levels(Document<LevelsBody>),
    Compare(Document<CompareBody>),
    Evppi(Document<EvppiBody>),
}

impl Artifact {
    pub fn write<W: Write>(&self, mut w: W, format: Format) -> io::Result<()> {
        match format {
            Format::Json => {
                match self {
                    Artifact::Run(d) => serde_json::to_writer_pretty(&mut w, d),
                    Artifact::Levels(d) => serde_json::to_writer_pretty(&mut w, d),
                    Artifact::Compare(d) => serde_json::to_writer_pretty(&mut w, d),
                    Artifact::Evppi(d) => serde_json::to_writer_pretty(&mut w, d),
                }?;
                writeln!(w)
            }
            Format::Csv => match self {
                Artifact::Run(d) => write_level_csv(w, &d.body.result.level_stats),
                Artifact::Levels(d) => write_level_csv(w, &d.body.levels),
                Artifact::Compare(d) => write_comparison_csv(w, &d.body.rows),
                Artifact::Evppi(d) => write_evppi_csv(w, &d.body.report),
            },
        }
    }

    pub fn plot_script(&self, data_file: &str) -> Option<String> {
        match self {
            Artifact::Run(_) | Artifact::Levels(_) => Some(level_plot_script(data_file)),
            Artifact::Compare(_) => Some(comparison_plot_script(data_file)),
            Artifact::Evppi(_) => None,
        }
    }
}

pub fn write_evppi_csv<W: Write>(mut w: W, r: &EvppiReport) -> io::Result<()> {
    writeln!(w, "{EVPPI_CSV_HEADER}")?;
    for (name, value, se) in [
        ("evpi", r.evpi.value, r.evpi.std_error),
        ("difference", r.difference, r.difference_std_error),
        ("evppi", r.evppi, r.evppi_std_error),
    ] {
        writeln!(w, "{name},{},{}", format_real(value), format_real(se))?;
    }
    Ok(())
}

/// Where the artifact goes: `--output`, else a file named `default_name`
/// under `$EVPPI_OUTPUT_DIR`, else stdout.
pub fn destination(output: Option<&Path>, default_name: &str) -> Result<Option<PathBuf>, CliError> {
    if let Some(p) = output {
        return Ok(Some(p.to_path_buf()));
    }
    match std::env::var_os(OUTPUT_DIR_ENV) {
        Some(dir) if !dir.is_empty() => {
            let dir = PathBuf::from(dir);
            fs::create_dir_all(&dir)
                .map_err(|e| CliError::io(format!("creating {}", dir.display()), e))?;
            Ok(Some(dir.join(default_name)))
        }
        _ => Ok(None),
    }
}

pub fn write_file(
    path: &Path,
    f: impl FnOnce(&mut io::BufWriter<fs::File>) -> io::Result<()>,
) -> Result<(), CliError> {
    let context = || format!("writing {}", path.display());
    let file = fs::File::create(path).map_err(|e| CliError::io(context(), e))?;
    let mut w = io::BufWriter::new(file);
    f(&mut w).map_err(|e| CliError::io(context(), e))?;
    w.flush().map_err(|e| CliError::io(context(), e))
}

fn level_plot_script(data: &str) -> String {
    format!(
        r#"set datafile separator ','
set terminal pngcairo size 1200,400
set output '{data}.png'
set multiplot layout 1,3
set xlabel 'level'
set key top right
set ylabel 'log_2 variance'
plot '{data}' skip 1 using 1:($4 > 0 ? log($4)/log(2) : 1/0) with linespoints title 'Z_l', \
     '' skip 1 using 1:($7 > 0 ? log($7)/log(2) : 1/0) with linespoints title 'P_l'
set ylabel 'log_2 |mean|'
plot '{data}' skip 1 using 1:($3 != 0 ? log(abs($3))/log(2) : 1/0) with linespoints title 'Z_l', \
     '' skip 1 using 1:($6 > 0 ? log($6)/log(2) : 1/0) with linespoints title 'P_l'
set ylabel 'kurtosis'
plot '{data}' skip 1 using 1:5 with linespoints title 'Z_l'
unset multiplot
"#
    )
}

fn comparison_plot_script(data: &str) -> String {
    format!(
        r#"set datafile separator ','
set terminal pngcairo size 800,500
set output '{data}.png'
set logscale xy
set xlabel 'epsilon'
set ylabel 'epsilon^2 cost'
set key top right
plot '{data}' skip 1 using 1:($1*$1*$2) with linespoints title 'MLMC', \
     '' skip 1 using 1:($1*$1*$3) with linespoints title 'nested MC (modelled)'
"#
    )
}
