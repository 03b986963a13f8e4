//! Level statistics, rate fits, level sweeps and cost comparisons, plus the
//! CSV forms used to export them.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{evpi_mc, sample_level, sample_p_independent, Estimate};
use crate::mlmc::{mlmc_run, MlmcConfig, MlmcResult};
use crate::models::DecisionModel;
use crate::rng::RandomStream;
use crate::stats::{least_squares, MomentAccumulator};

/// Per-level moments of the correction `Z_l` and the approximation `P_l`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelStats {
    pub level: u32,
    pub n: u64,
    pub mean_z: f64,
    /// Unbiased sample variance.
    pub var_z: f64,
    /// `m4 / m2^2`; `None` when the sample has no spread.
    pub kurtosis_z: Option<f64>,
    pub mean_p: f64,
    pub var_p: f64,
    pub cost_per_sample: u64,
}

impl LevelStats {
    pub fn from_accumulator(level: u32, acc: &MomentAccumulator) -> Self {
        Self {
            level,
            n: acc.n,
            mean_z: acc.mean_z(),
            var_z: acc.var_z(),
            kurtosis_z: acc.kurtosis_z(),
            mean_p: acc.mean_p(),
            var_p: acc.var_p(),
            cost_per_sample: 1u64 << level,
        }
    }

    /// The level-0 row: `Z_0 = P_0 = 0` for every draw.
    pub fn level_zero(n: u64) -> Self {
        Self {
            level: 0,
            n,
            mean_z: 0.0,
            var_z: 0.0,
            kurtosis_z: None,
            mean_p: 0.0,
            var_p: 0.0,
            cost_per_sample: 1,
        }
    }
}

/// Statistics of explicit lists of `Z_l` and `P_l` values.
pub fn level_stats(z_values: &[f64], p_values: &[f64], level: u32) -> Result<LevelStats> {
    if z_values.len() != p_values.len() {
        return Err(Error::domain("z and p lists differ in length"));
    }
    if z_values.len() < 2 {
        return Err(Error::InsufficientData("variance needs two values".into()));
    }
    let mut acc = MomentAccumulator::new();
    for (&z, &p) in z_values.iter().zip(p_values) {
        acc.push(z, p, 1u64 << level);
    }
    Ok(LevelStats::from_accumulator(level, &acc))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateEstimates {
    /// Weak-error rate: `|E[Z_l]| ~ 2^{-alpha l}`.
    pub alpha: f64,
    /// Variance rate: `V[Z_l] ~ 2^{-beta l}`.
    pub beta: f64,
    /// Cost rate; `2^l` inner samples per draw makes it exactly one.
    pub gamma: f64,
    pub r_squared_alpha: f64,
    pub r_squared_beta: f64,
}

/// Least-squares fit of `log2 |mean_z|` and `log2 var_z` against level over
/// levels `>= min_level`. Levels with a zero mean (resp. variance) are left
/// out of that fit.
pub fn fit_rates(stats: &[LevelStats], min_level: u32) -> Result<RateEstimates> {
    let fit = |what: &str, f: fn(&LevelStats) -> f64| {
        let pts: Vec<(f64, f64)> = stats
            .iter()
            .filter(|s| s.level >= min_level && s.level > 0)
            .filter_map(|s| {
                let y = f(s);
                (y > 0.0 && y.is_finite()).then(|| (s.level as f64, y.log2()))
            })
            .collect();
        if pts.len() < 3 {
            return Err(Error::InsufficientData(format!(
                "{what} fit needs three usable levels at or above {min_level}, have {}",
                pts.len()
            )));
        }
        least_squares(&pts)
            .ok_or_else(|| Error::InsufficientData(format!("{what} fit is degenerate")))
    };
    let a = fit("mean", |s| s.mean_z.abs())?;
    let b = fit("variance", |s| s.var_z)?;
    Ok(RateEstimates {
        alpha: -a.slope,
        beta: -b.slope,
        gamma: 1.0,
        r_squared_alpha: a.r_squared,
        r_squared_beta: b.r_squared,
    })
}

/// How `P_l` statistics are gathered in a sweep.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PMode {
    /// From the same draws as `Z_l`.
    #[default]
    Shared,
    /// From a separate set of draws.
    Independent,
}

/// Statistics for levels `0..=max_level` from `n_per_level` independent
/// draws per level; level `l` uses `stream.split(l)`.
pub fn level_sweep(
    model: &dyn DecisionModel,
    max_level: u32,
    n_per_level: u64,
    stream: &RandomStream,
) -> Result<Vec<LevelStats>> {
    level_sweep_with(model, max_level, n_per_level, stream, PMode::Shared)
}

pub fn level_sweep_with(
    model: &dyn DecisionModel,
    max_level: u32,
    n_per_level: u64,
    stream: &RandomStream,
    p_mode: PMode,
) -> Result<Vec<LevelStats>> {
    if n_per_level < 1000 {
        return Err(Error::domain(
            "a level sweep needs at least 1000 samples per level",
        ));
    }
    let mut out = vec![LevelStats::level_zero(n_per_level)];
    for l in 1..=max_level {
        let s = stream.split(l as u64);
        let acc = sample_level(model, l, n_per_level, &s)?;
        let mut st = LevelStats::from_accumulator(l, &acc);
        if p_mode == PMode::Independent {
            let p = sample_p_independent(model, l, n_per_level, &s.split(u64::MAX))?;
            st.mean_p = p.mean_p();
            st.var_p = p.var_p();
        }
        out.push(st);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostComparisonRow {
    pub epsilon: f64,
    /// Total MLMC cost, averaged over the replications.
    pub mlmc_cost: f64,
    /// Modelled cost `N * 2^L` of single-level nested Monte Carlo.
    pub std_cost_model: f64,
    pub ratio: f64,
    /// Outer samples `N = ceil(2 V[P] eps^-2)` of the modelled estimator.
    pub std_outer_samples: f64,
    /// Level `L` of the modelled estimator (`2^L` inner samples).
    pub std_level: u32,
    pub mlmc_levels: u32,
    pub replications: u32,
}

/// Modelled nested Monte Carlo cost at accuracy `eps`, from the statistics
/// of an MLMC run: `N = ceil(2 V eps^-2)` with `V = max_l V[P_l]`, and `L`
/// the smallest level whose extrapolated bias `|E[Z_L]| / (2^alpha - 1)`
/// is at most `eps / sqrt(2)`. Returns `(N, L)`.
pub fn standard_mc_model(stats: &[LevelStats], alpha: f64, epsilon: f64) -> (f64, u32) {
    let v = stats.iter().map(|s| s.var_p).fold(0.0, f64::max);
    let n = (2.0 * v / (epsilon * epsilon)).ceil().max(1.0);

    // log2 |E[Z_l]| ~ c - alpha l, anchored by least squares at the
    // measured levels >= 2 and extrapolated beyond them.
    let pts: Vec<(f64, f64)> = stats
        .iter()
        .filter(|s| s.level >= 2 && s.mean_z != 0.0)
        .map(|s| (s.level as f64, s.mean_z.abs().log2()))
        .collect();
    let intercept = if pts.is_empty() {
        return (n, 1);
    } else {
        pts.iter().map(|(l, y)| y + alpha * l).sum::<f64>() / pts.len() as f64
    };
    let target = epsilon / std::f64::consts::SQRT_2;
    let denom = alpha.exp2() - 1.0;
    let mut level = 1u32;
    while level < 62 && (intercept - alpha * level as f64).exp2() / denom > target {
        level += 1;
    }
    (n, level)
}

/// Runs the MLMC driver at each accuracy and compares its measured cost
/// with the modelled single-level nested Monte Carlo cost. Costs are
/// averaged over `replications` independent runs; replication `r` of
/// accuracy `i` uses `stream.split(i).split(r)`. The reported levels are
/// the largest over the replications.
pub fn cost_comparison(
    model: &dyn DecisionModel,
    epsilons: &[f64],
    template: &MlmcConfig,
    replications: u32,
    stream: &RandomStream,
) -> Result<Vec<CostComparisonRow>> {
    if epsilons.is_empty() {
        return Err(Error::domain("no accuracies given"));
    }
    if replications == 0 {
        return Err(Error::domain("replications must be at least 1"));
    }
    epsilons
        .iter()
        .enumerate()
        .map(|(i, &eps)| {
            let config = MlmcConfig {
                epsilon: eps,
                ..template.clone()
            };
            let per_eps = stream.split(i as u64);
            let mut rows = Vec::with_capacity(replications as usize);
            for r in 0..replications {
                let run = mlmc_run(model, &config, &per_eps.split(r as u64))?;
                rows.push(compare_run(&run));
            }
            let k = replications as f64;
            let mlmc_cost = rows.iter().map(|r| r.mlmc_cost).sum::<f64>() / k;
            let std_cost_model = rows.iter().map(|r| r.std_cost_model).sum::<f64>() / k;
            Ok(CostComparisonRow {
                epsilon: eps,
                mlmc_cost,
                std_cost_model,
                ratio: std_cost_model / mlmc_cost,
                std_outer_samples: rows.iter().map(|r| r.std_outer_samples).sum::<f64>() / k,
                std_level: rows.iter().map(|r| r.std_level).max().unwrap_or(0),
                mlmc_levels: rows.iter().map(|r| r.mlmc_levels).max().unwrap_or(0),
                replications,
            })
        })
        .collect()
}

/// Comparison row for a finished run.
pub fn compare_run(r: &MlmcResult) -> CostComparisonRow {
    let (n, level) = standard_mc_model(&r.level_stats, r.fitted_alpha, r.epsilon);
    let std_cost = n * 2f64.powi(level as i32);
    CostComparisonRow {
        epsilon: r.epsilon,
        mlmc_cost: r.total_cost as f64,
        std_cost_model: std_cost,
        ratio: std_cost / r.total_cost as f64,
        std_outer_samples: n,
        std_level: level,
        mlmc_levels: r.max_level_used,
        replications: 1,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvppiReport {
    pub model: String,
    pub outer_indices: Option<Vec<usize>>,
    pub epsilon: f64,
    pub evpi: Estimate,
    /// `EVPI - EVPPI` from the MLMC driver.
    pub difference: f64,
    pub difference_std_error: f64,
    /// `EVPI - (EVPI - EVPPI)`.
    pub evppi: f64,
    pub evppi_std_error: f64,
    pub mlmc: MlmcResult,
}

/// EVPI by standard Monte Carlo (`stream.split(0)`), `EVPI - EVPPI` by
/// MLMC (`stream.split(1)`), and their difference.
pub fn evppi_report(
    model: &dyn DecisionModel,
    outer_indices: Option<Vec<usize>>,
    config: &MlmcConfig,
    n_evpi: u64,
    stream: &RandomStream,
) -> Result<EvppiReport> {
    let evpi = evpi_mc(model, n_evpi, &stream.split(0))?;
    let mlmc = mlmc_run(model, config, &stream.split(1))?;
    let difference = mlmc.estimate;
    let difference_std_error = mlmc.std_error();
    Ok(EvppiReport {
        model: model.name().to_string(),
        outer_indices,
        epsilon: config.epsilon,
        evppi: evpi.value - difference,
        evppi_std_error: (evpi.std_error.powi(2) + mlmc.variance_of_estimator).sqrt(),
        evpi,
        difference,
        difference_std_error,
        mlmc,
    })
}

pub const LEVEL_CSV_HEADER: &str = "level,n,mean_z,var_z,kurtosis_z,mean_p,var_p,cost";
pub const COMPARISON_CSV_HEADER: &str = "epsilon,mlmc_cost,std_cost_model,ratio";

/// 17 significant digits.
pub fn format_real(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_level_csv<W: Write>(mut w: W, stats: &[LevelStats]) -> std::io::Result<()> {
    writeln!(w, "{LEVEL_CSV_HEADER}")?;
    for s in stats {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            s.level,
            s.n,
            format_real(s.mean_z),
            format_real(s.var_z),
            s.kurtosis_z.map(format_real).unwrap_or_default(),
            format_real(s.mean_p),
            format_real(s.var_p),
            s.cost_per_sample
        )?;
    }
    Ok(())
}

fn parse_field<T: std::str::FromStr>(field: &str, line: usize) -> Result<T> {
    field
        .trim()
        .parse()
        .map_err(|_| Error::config(format!("line {line}: cannot parse `{field}`")))
}

fn csv_rows<R: BufRead>(r: R, header: &str) -> Result<Vec<(usize, Vec<String>)>> {
    let mut lines = r.lines();
    let first = lines
        .next()
        .transpose()
        .map_err(|e| Error::config(e.to_string()))?
        .ok_or_else(|| Error::config("empty CSV"))?;
    if first.trim() != header {
        return Err(Error::config(format!("unexpected CSV header `{first}`")));
    }
    let columns = header.split(',').count();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::config(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<String> = line.split(',').map(str::to_string).collect();
        if fields.len() != columns {
            return Err(Error::config(format!(
                "line {}: expected {columns} fields",
                i + 2
            )));
        }
        rows.push((i + 2, fields));
    }
    Ok(rows)
}

pub fn read_level_csv<R: BufRead>(r: R) -> Result<Vec<LevelStats>> {
    csv_rows(r, LEVEL_CSV_HEADER)?
        .into_iter()
        .map(|(line, f)| {
            Ok(LevelStats {
                level: parse_field(&f[0], line)?,
                n: parse_field(&f[1], line)?,
                mean_z: parse_field(&f[2], line)?,
                var_z: parse_field(&f[3], line)?,
                kurtosis_z: if f[4].trim().is_empty() {
                    None
                } else {
                    Some(parse_field(&f[4], line)?)
                },
                mean_p: parse_field(&f[5], line)?,
                var_p: parse_field(&f[6], line)?,
                cost_per_sample: parse_field(&f[7], line)?,
            })
        })
        .collect()
}

pub fn write_comparison_csv<W: Write>(mut w: W, rows: &[CostComparisonRow]) -> std::io::Result<()> {
    writeln!(w, "{COMPARISON_CSV_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{}",
            format_real(r.epsilon),
            format_real(r.mlmc_cost),
            format_real(r.std_cost_model),
            format_real(r.ratio)
        )?;
    }
    Ok(())
}

/// Reads back `(epsilon, mlmc_cost, std_cost_model, ratio)` tuples.
pub fn read_comparison_csv<R: BufRead>(r: R) -> Result<Vec<(f64, f64, f64, f64)>> {
    csv_rows(r, COMPARISON_CSV_HEADER)?
        .into_iter()
        .map(|(line, f)| {
            Ok((
                parse_field(&f[0], line)?,
                parse_field(&f[1], line)?,
                parse_field(&f[2], line)?,
                parse_field(&f[3], line)?,
            ))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geometric(alpha: f64, beta: f64, levels: u32) -> Vec<LevelStats> {
        (1..=levels)
            .map(|l| LevelStats {
                level: l,
                n: 1000,
                mean_z: 0.3 * 2f64.powf(-alpha * l as f64),
                var_z: 2f64.powf(-beta * l as f64),
                kurtosis_z: Some(3.0),
                mean_p: 0.1,
                var_p: 0.01,
                cost_per_sample: 1 << l,
            })
            .collect()
    }

    #[test]
    fn constant_list_has_undefined_kurtosis() {
        let s = level_stats(&[5.0; 10], &[1.0; 10], 2).unwrap();
        assert_eq!(s.var_z, 0.0);
        assert_eq!(s.kurtosis_z, None);
        assert_eq!(s.mean_z, 5.0);
    }

    #[test]
    fn two_point_distribution_attains_pearson_bound() {
        let s = level_stats(&[1.0, -1.0, 1.0, -1.0], &[0.0; 4], 1).unwrap();
        assert!((s.var_z - 4.0 / 3.0).abs() < 1e-15);
        assert!((s.kurtosis_z.unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn level_stats_errors() {
        assert!(level_stats(&[1.0], &[1.0], 1).is_err());
        assert!(level_stats(&[1.0, 2.0], &[1.0], 1).is_err());
    }

    #[test]
    fn planted_rates_are_recovered() {
        let st = geometric(1.0, 1.0, 5);
        let r = fit_rates(&st, 1).unwrap();
        assert!((r.beta - 1.0).abs() < 1e-12);
        assert!((r.alpha - 1.0).abs() < 1e-12);
        assert!((r.r_squared_beta - 1.0).abs() < 1e-12);
        assert_eq!(r.gamma, 1.0);

        let r = fit_rates(&geometric(0.64, 1.12, 8), 2).unwrap();
        assert!((r.alpha - 0.64).abs() < 1e-12);
        assert!((r.beta - 1.12).abs() < 1e-12);
    }

    #[test]
    fn fit_skips_zero_levels_and_needs_three() {
        let mut st = geometric(1.0, 1.5, 5);
        st[3].mean_z = 0.0;
        let r = fit_rates(&st, 1).unwrap();
        assert!((r.alpha - 1.0).abs() < 1e-12);
        assert!(matches!(fit_rates(&st, 3), Err(Error::InsufficientData(_))));
        assert!(fit_rates(&geometric(1.0, 1.0, 2), 1).is_err());
    }

    #[test]
    fn level_csv_round_trip() {
        let mut st = geometric(0.9, 1.4, 4);
        st.insert(0, LevelStats::level_zero(1000));
        st[2].kurtosis_z = Some(std::f64::consts::PI * 1e3);
        let mut buf = Vec::new();
        write_level_csv(&mut buf, &st).unwrap();
        let back = read_level_csv(buf.as_slice()).unwrap();
        assert_eq!(back, st);
    }

    #[test]
    fn comparison_csv_round_trip() {
        let rows = vec![CostComparisonRow {
            epsilon: 1e-4,
            mlmc_cost: 123_456_789.25,
            std_cost_model: 1.0 / 3.0 * 1e12,
            ratio: 2700.123456789,
            std_outer_samples: 1e7,
            std_level: 20,
            mlmc_levels: 18,
            replications: 4,
        }];
        let mut buf = Vec::new();
        write_comparison_csv(&mut buf, &rows).unwrap();
        let back = read_comparison_csv(buf.as_slice()).unwrap();
        assert_eq!(
            back,
            vec![(1e-4, 123_456_789.25, 1.0 / 3.0 * 1e12, 2700.123456789)]
        );
    }

    #[test]
    fn bad_csv_is_rejected() {
        assert!(read_level_csv("nope\n1,2".as_bytes()).is_err());
        let text = format!("{LEVEL_CSV_HEADER}\n1,2,3\n");
        assert!(read_level_csv(text.as_bytes()).is_err());
    }

    #[test]
    fn standard_model_exact_geometric() {
        // mean_z = 0.3 * 2^-l, alpha = 1: bias(L) = 0.3 * 2^-L
        let st = geometric(1.0, 1.5, 6);
        let eps = 1e-3;
        let (n, level) = standard_mc_model(&st, 1.0, eps);
        assert_eq!(n, (2.0 * 0.01 / (eps * eps)).ceil());
        let target = eps / std::f64::consts::SQRT_2;
        assert!(0.3 * 2f64.powi(-(level as i32)) <= target * (1.0 + 1e-12));
        assert!(0.3 * 2f64.powi(-(level as i32 - 1)) > target);
    }
}
