//! Adaptive multilevel driver for `E[P] = EVPI - EVPPI`.
//!
//! Levels start at 1 because `Z_0 = P_0 = 0`. The mean-square-error budget
//! `eps^2` is split evenly: sampling variance `sum V_l / N_l <= eps^2 / 2`
//! and squared bias `<= eps^2 / 2`.

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::diagnostics::LevelStats;
use crate::error::{Error, Result};
use crate::estimators::{sample_level, MAX_LEVEL};
use crate::models::DecisionModel;
use crate::rng::RandomStream;
use crate::stats::{least_squares, MomentAccumulator};

/// Kurtosis above which the finest-level variance estimate is flagged.
pub const KURTOSIS_WARNING: f64 = 100.0;

/// Fewest samples drawn on a level added after warm-up.
pub const MIN_NEW_LEVEL_SAMPLES: u64 = 100;

const MIN_ALPHA: f64 = 0.5;
const MIN_BETA: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlmcConfig {
    /// Root-mean-square accuracy target.
    pub epsilon: f64,
    /// Samples per level during warm-up.
    pub warmup_samples: u64,
    /// Warm-up covers levels `1..=initial_levels`.
    pub initial_levels: u32,
    pub max_level: u32,
    pub alpha_override: Option<f64>,
    pub beta_override: Option<f64>,
}

impl MlmcConfig {
    pub fn new(epsilon: f64) -> Self {
        Self {
            epsilon,
            warmup_samples: 10_000,
            initial_levels: 3,
            max_level: 25,
            alpha_override: None,
            beta_override: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::config("epsilon must be positive"));
        }
        if self.warmup_samples < 100 {
            return Err(Error::config("warmup_samples must be at least 100"));
        }
        if self.initial_levels < 2 {
            return Err(Error::config("initial_levels must be at least 2"));
        }
        if self.max_level < self.initial_levels || self.max_level > MAX_LEVEL {
            return Err(Error::config(format!(
                "max_level must lie in {}..={MAX_LEVEL}",
                self.initial_levels
            )));
        }
        for (name, v) in [("alpha", self.alpha_override), ("beta", self.beta_override)] {
            if let Some(v) = v {
                if !(v.is_finite() && v > 0.0) {
                    return Err(Error::config(format!("{name} override must be positive")));
                }
            }
        }
        Ok(())
    }
}

/// One pass of the driver loop, for the run log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriverIteration {
    pub iteration: u32,
    pub finest_level: u32,
    pub alpha: f64,
    pub beta: f64,
    /// Variance estimates used for allocation, levels `1..=finest_level`.
    pub variances: Vec<f64>,
    pub samples: Vec<u64>,
    pub targets: Vec<u64>,
    /// Bias remainder, present once the variance target was met.
    pub remainder: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlmcResult {
    pub epsilon: f64,
    /// Estimate of `EVPI - EVPPI`.
    pub estimate: f64,
    pub level_stats: Vec<LevelStats>,
    pub max_level_used: u32,
    /// Samples drawn per level, levels `1..=max_level_used`.
    pub allocations: Vec<u64>,
    /// Inner samples consumed, `sum 2^l N_l`, warm-up included.
    pub total_cost: u64,
    pub fitted_alpha: f64,
    pub fitted_beta: f64,
    pub variance_of_estimator: f64,
    pub bias_estimate: f64,
    pub converged: bool,
    pub warnings: Vec<String>,
    pub log: Vec<DriverIteration>,
}

impl MlmcResult {
    pub fn std_error(&self) -> f64 {
        self.variance_of_estimator.sqrt()
    }
}

/// Result of [`optimal_allocation`].
#[derive(Clone, Debug, PartialEq)]
pub struct Allocation {
    pub samples: Vec<u64>,
    /// Every variance was zero; `samples` holds the minimum allocation.
    pub degenerate: bool,
}

/// `N_l = ceil(2 eps^-2 sqrt(V_l / C_l) sum_k sqrt(V_k C_k))`, which meets
/// `sum V_l / N_l <= eps^2 / 2` at least total cost `sum N_l C_l`.
pub fn optimal_allocation(
    variances: &[f64],
    costs: &[f64],
    epsilon: f64,
    min_samples: u64,
) -> Result<Allocation> {
    if variances.len() != costs.len() || variances.is_empty() {
        return Err(Error::domain(
            "variances and costs must be non-empty and equal length",
        ));
    }
    if variances.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::domain("variances must be finite and non-negative"));
    }
    if costs.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
        return Err(Error::domain("costs must be positive"));
    }
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(Error::domain("epsilon must be positive"));
    }
    if variances.iter().all(|&v| v == 0.0) {
        return Ok(Allocation {
            samples: vec![min_samples; variances.len()],
            degenerate: true,
        });
    }
    let total: f64 = variances
        .iter()
        .zip(costs)
        .map(|(v, c)| (v * c).sqrt())
        .sum();
    let scale = 2.0 / (epsilon * epsilon) * total;
    let samples = variances
        .iter()
        .zip(costs)
        .map(|(v, c)| ceil_snapped(scale * (v / c).sqrt()))
        .collect();
    Ok(Allocation {
        samples,
        degenerate: false,
    })
}

/// Ceiling that ignores round-off just above an integer.
fn ceil_snapped(x: f64) -> u64 {
    let r = x.round();
    if (x - r).abs() <= 1e-12 * x.abs() {
        r as u64
    } else {
        x.ceil() as u64
    }
}

/// Extrapolated weak error `|E[P - P_L]|` from the last three levels:
/// `max_l |mean Z_l| 2^{alpha (l - L)} / (2^alpha - 1)`.
pub fn bias_remainder(stats: &[LevelStats], alpha: f64) -> Result<f64> {
    if stats.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "bias test needs three levels, have {}",
            stats.len()
        )));
    }
    if alpha.is_nan() || alpha <= 0.0 {
        return Err(Error::domain("alpha must be positive"));
    }
    let finest = stats[stats.len() - 1].level as f64;
    let denom = alpha.exp2() - 1.0;
    Ok(stats[stats.len() - 3..]
        .iter()
        .map(|s| s.mean_z.abs() * (alpha * (s.level as f64 - finest)).exp2() / denom)
        .fold(0.0, f64::max))
}

/// Returns whether the extrapolated remainder is within `eps / sqrt(2)`,
/// together with the remainder.
pub fn bias_converged(stats: &[LevelStats], alpha: f64, epsilon: f64) -> Result<(bool, f64)> {
    let rem = bias_remainder(stats, alpha)?;
    Ok((rem <= epsilon / std::f64::consts::SQRT_2, rem))
}

/// Draws `n0` samples on each of `levels` from `stream.split(l).split(0)`.
pub fn warmup(
    model: &dyn DecisionModel,
    levels: std::ops::RangeInclusive<u32>,
    n0: u64,
    stream: &RandomStream,
) -> Result<Vec<LevelStats>> {
    if n0 < 100 {
        return Err(Error::config(
            "warm-up needs at least 100 samples per level",
        ));
    }
    levels
        .map(|l| {
            let acc = sample_level(model, l, n0, &stream.split(l as u64).split(0))?;
            Ok(LevelStats::from_accumulator(l, &acc))
        })
        .collect()
}

/// Decay rates fitted by the driver over levels >= 2, or the overrides.
fn driver_rates(stats: &[LevelStats], config: &MlmcConfig) -> (f64, f64) {
    let fit = |f: &dyn Fn(&LevelStats) -> f64| {
        let pts: Vec<(f64, f64)> = stats
            .iter()
            .filter(|s| s.level >= 2)
            .filter_map(|s| {
                let y = f(s);
                (y > 0.0).then(|| (s.level as f64, y.log2()))
            })
            .collect();
        least_squares(&pts).map(|fit| -fit.slope)
    };
    let alpha = config
        .alpha_override
        .unwrap_or_else(|| fit(&|s| s.mean_z.abs()).unwrap_or(1.0).max(MIN_ALPHA));
    let beta = config
        .beta_override
        .unwrap_or_else(|| fit(&|s| s.var_z).unwrap_or(1.0).max(MIN_BETA));
    (alpha, beta)
}

/// Variance estimates used for allocation: the pooled sample variance,
/// floored at half the value extrapolated from the next-coarser level.
fn allocation_variances(stats: &[LevelStats], beta: f64) -> Vec<f64> {
    let raw: Vec<f64> = stats.iter().map(|s| s.var_z).collect();
    let decay = beta.exp2();
    (0..raw.len())
        .map(|i| {
            if i == 0 {
                raw[0]
            } else {
                raw[i].max(0.5 * raw[i - 1] / decay)
            }
        })
        .collect()
}

struct Driver<'a> {
    model: &'a dyn DecisionModel,
    stream: &'a RandomStream,
    accs: Vec<MomentAccumulator>,
    batches: Vec<u64>,
}

impl<'a> Driver<'a> {
    fn level_stream(&mut self, level: u32) -> RandomStream {
        let i = (level - 1) as usize;
        let s = self.stream.split(level as u64).split(self.batches[i]);
        self.batches[i] += 1;
        s
    }

    fn draw(&mut self, level: u32, n: u64) -> Result<()> {
        if n == 0 {
            return Ok(());
        }
        let s = self.level_stream(level);
        let acc = sample_level(self.model, level, n, &s)?;
        self.accs[(level - 1) as usize].merge(&acc);
        Ok(())
    }

    fn add_level(&mut self) {
        self.accs.push(MomentAccumulator::new());
        self.batches.push(0);
    }

    fn stats(&self) -> Vec<LevelStats> {
        self.accs
            .iter()
            .enumerate()
            .map(|(i, a)| LevelStats::from_accumulator(i as u32 + 1, a))
            .collect()
    }
}

/// Runs the adaptive driver until the variance and bias targets are both
/// met or `max_level` is exhausted.
pub fn mlmc_run(
    model: &dyn DecisionModel,
    config: &MlmcConfig,
    stream: &RandomStream,
) -> Result<MlmcResult> {
    config.validate()?;
    let eps = config.epsilon;
    let mut driver = Driver {
        model,
        stream,
        accs: Vec::new(),
        batches: Vec::new(),
    };
    for l in 1..=config.initial_levels {
        driver.add_level();
        driver.draw(l, config.warmup_samples)?;
    }

    let mut log = Vec::new();
    let mut warnings = Vec::new();
    let mut iteration = 0u32;
    loop {
        iteration += 1;
        let stats = driver.stats();
        let finest = stats.len() as u32;
        let (alpha, beta) = driver_rates(&stats, config);
        let variances = allocation_variances(&stats, beta);
        let costs: Vec<f64> = stats.iter().map(|s| s.cost_per_sample as f64).collect();
        let alloc = optimal_allocation(&variances, &costs, eps, config.warmup_samples)?;
        let samples: Vec<u64> = stats.iter().map(|s| s.n).collect();
        let extra: Vec<u64> = alloc
            .samples
            .iter()
            .zip(&samples)
            .map(|(t, n)| t.saturating_sub(*n))
            .collect();
        let mut record = DriverIteration {
            iteration,
            finest_level: finest,
            alpha,
            beta,
            variances: variances.clone(),
            samples: samples.clone(),
            targets: alloc.samples.clone(),
            remainder: None,
        };

        if extra.iter().any(|&e| e > 0) {
            debug!("iteration {iteration}: topping up {extra:?}");
            log.push(record);
            for (i, &e) in extra.iter().enumerate() {
                driver.draw(i as u32 + 1, e)?;
            }
            continue;
        }

        let (ok, remainder) = bias_converged(&stats, alpha, eps)?;
        record.remainder = Some(remainder);
        log.push(record);
        debug!("iteration {iteration}: L = {finest}, remainder {remainder:.3e}");

        let finish = |converged: bool, warnings: Vec<String>, log: Vec<DriverIteration>| {
            let variance_of_estimator: f64 = variances
                .iter()
                .zip(&samples)
                .map(|(v, &n)| v / n as f64)
                .sum();
            MlmcResult {
                epsilon: eps,
                estimate: stats.iter().map(|s| s.mean_z).sum(),
                max_level_used: finest,
                allocations: samples.clone(),
                total_cost: driver.accs.iter().map(|a| a.cost).sum(),
                fitted_alpha: alpha,
                fitted_beta: beta,
                variance_of_estimator,
                bias_estimate: remainder,
                converged,
                warnings,
                log,
                level_stats: stats.clone(),
            }
        };

        if ok || finest >= config.max_level {
            if let Some(k) = stats.last().and_then(|s| s.kurtosis_z) {
                if k > KURTOSIS_WARNING {
                    let msg = format!(
                        "kurtosis {k:.1} at level {finest}: variance estimate may be unreliable"
                    );
                    warn!("{msg}");
                    warnings.push(msg);
                }
            }
            if alloc.degenerate {
                warnings.push("all level variances are zero".to_string());
            }
            if ok {
                return Ok(finish(true, warnings, log));
            }
            return Err(Error::NotConverged {
                max_level: config.max_level,
                partial: Box::new(finish(false, warnings, log)),
            });
        }

        // Extend by one level, sized from the extrapolated variance.
        let new_level = finest + 1;
        let mut v_ext = variances.clone();
        v_ext.push(variances[variances.len() - 1] / beta.exp2());
        let mut c_ext = costs.clone();
        c_ext.push(2f64.powi(new_level as i32));
        let target = optimal_allocation(&v_ext, &c_ext, eps, config.warmup_samples)?
            .samples
            .last()
            .copied()
            .unwrap_or(config.warmup_samples);
        let initial = target.clamp(MIN_NEW_LEVEL_SAMPLES, config.warmup_samples);
        driver.add_level();
        driver.draw(new_level, initial)?;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Synthetic, SyntheticCase};

    fn stats_with_means(means: &[f64]) -> Vec<LevelStats> {
        means
            .iter()
            .enumerate()
            .map(|(i, &m)| LevelStats {
                level: i as u32 + 1,
                n: 1000,
                mean_z: m,
                var_z: 1.0,
                kurtosis_z: None,
                mean_p: 0.0,
                var_p: 0.0,
                cost_per_sample: 1 << (i + 1),
            })
            .collect()
    }

    #[test]
    fn allocation_worked_example() {
        let a = optimal_allocation(&[1.0, 0.25], &[2.0, 4.0], 0.1, 100).unwrap();
        assert_eq!(a.samples, vec![342, 121]);
        assert!(!a.degenerate);
    }

    #[test]
    fn allocation_single_level_is_standard_mc_count() {
        // N = ceil(2 V / eps^2)
        for (v, c, eps, n) in [
            (0.3, 8.0, 0.01, 6000),
            (2.0, 1.0, 0.5, 16),
            (1e-3, 64.0, 1e-3, 2000),
            (0.123, 2.0, 0.1, 25),
        ] {
            let a = optimal_allocation(&[v], &[c], eps, 100).unwrap();
            assert_eq!(a.samples, vec![n]);
        }
    }

    #[test]
    fn allocation_all_zero_variance() {
        let a = optimal_allocation(&[0.0, 0.0, 0.0], &[2.0, 4.0, 8.0], 0.1, 777).unwrap();
        assert!(a.degenerate);
        assert_eq!(a.samples, vec![777; 3]);
    }

    #[test]
    fn allocation_rejects_bad_input() {
        assert!(optimal_allocation(&[], &[], 0.1, 1).is_err());
        assert!(optimal_allocation(&[1.0], &[1.0, 2.0], 0.1, 1).is_err());
        assert!(optimal_allocation(&[-1.0], &[1.0], 0.1, 1).is_err());
        assert!(optimal_allocation(&[1.0], &[1.0], 0.0, 1).is_err());
    }

    #[test]
    fn bias_zero_means_converged() {
        let (ok, rem) = bias_converged(&stats_with_means(&[0.0, 0.0, 0.0]), 1.0, 1e-6).unwrap();
        assert!(ok);
        assert_eq!(rem, 0.0);
    }

    #[test]
    fn bias_geometric_tail() {
        let m = 0.8;
        let means: Vec<f64> = (1..=5).map(|l| m * 2f64.powi(-l)).collect();
        let rem = bias_remainder(&stats_with_means(&means), 1.0).unwrap();
        assert!((rem - m * 2f64.powi(-5)).abs() < 1e-15);
    }

    #[test]
    fn bias_needs_three_levels() {
        assert!(matches!(
            bias_converged(&stats_with_means(&[0.1, 0.05]), 1.0, 0.1),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn config_validation() {
        assert!(MlmcConfig::new(0.0).validate().is_err());
        let mut c = MlmcConfig::new(0.1);
        c.warmup_samples = 99;
        assert!(c.validate().is_err());
        let mut c = MlmcConfig::new(0.1);
        c.initial_levels = 1;
        assert!(c.validate().is_err());
        assert!(MlmcConfig::new(0.1).validate().is_ok());
    }

    #[test]
    fn warmup_counts_and_determinism() {
        let m = Synthetic::new(SyntheticCase::Linear);
        let s = RandomStream::new(8);
        let a = warmup(&m, 1..=3, 1000, &s).unwrap();
        let b = warmup(&m, 1..=3, 1000, &s).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|st| st.n == 1000));
        assert!(warmup(&m, 1..=3, 50, &s).is_err());
    }

    #[derive(Debug)]
    struct ConstantGap;

    impl DecisionModel for ConstantGap {
        fn name(&self) -> &str {
            "constant-gap"
        }
        fn decision_count(&self) -> usize {
            2
        }
        fn outer_dim(&self) -> usize {
            1
        }
        fn inner_dim(&self) -> usize {
            1
        }
        fn sample_outer_into(&self, s: &mut RandomStream, out: &mut [f64]) {
            out[0] = s.standard_normal();
        }
        fn sample_inner_into(&self, _: &[f64], s: &mut RandomStream, out: &mut [f64]) {
            out[0] = s.standard_normal();
        }
        fn payoffs_into(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
            out[0] = x[0] + y[0];
            out[1] = out[0] + 1.0;
        }
    }

    #[test]
    fn dominated_decision_gives_zero() {
        let config = MlmcConfig {
            warmup_samples: 1000,
            ..MlmcConfig::new(1e-3)
        };
        let r = mlmc_run(&ConstantGap, &config, &RandomStream::new(4)).unwrap();
        assert_eq!(r.estimate, 0.0);
        assert_eq!(r.max_level_used, 3);
        assert!(r.converged);
        assert_eq!(r.total_cost, 1000 * (2 + 4 + 8));
    }
}
