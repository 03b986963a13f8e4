//! Per-sample estimators of the inner bracket `E[max f | X] - max E[f | X]`
//! and its antithetic level corrections, plus the single-level baselines.
//!
//! Sampling order for one level-`l` draw is fixed: one outer sample, then
//! `2^{l-1}` inner samples forming half `a`, then `2^{l-1}` forming half `b`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{Decision, DecisionModel, OuterSample};
use crate::rng::RandomStream;
use crate::stats::{CompensatedSum, MomentAccumulator};

/// Samples per parallel work unit. Part of the reproducibility contract:
/// changing it changes the variates assigned to each sample.
pub const BLOCK_SIZE: u64 = 1024;

/// Largest level whose inner count `2^l` we are willing to represent.
pub const MAX_LEVEL: u32 = 40;

/// One draw of the level-`l` correction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelSample {
    pub z: f64,
    /// Fine approximation `P_l` from the same inner samples.
    pub p_fine: f64,
    /// Inner samples consumed, `2^l`.
    pub cost: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
    pub n_samples: u64,
    /// Inner-sample (payoff vector) evaluations.
    pub cost: u64,
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax_decision(values: &[f64]) -> Result<Decision> {
    if values.is_empty() {
        return Err(Error::domain("argmax of an empty payoff vector"));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::domain("argmax of a payoff vector containing NaN"));
    }
    Ok(Decision::from_index(first_argmax(values)))
}

#[inline]
fn first_argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[inline]
fn max_of(values: &[f64]) -> f64 {
    values[first_argmax(values)]
}

/// Per-decision half averages of one antithetic draw.
#[derive(Clone, Debug, PartialEq)]
pub struct AntitheticAverages {
    pub half_a: Vec<f64>,
    pub half_b: Vec<f64>,
    /// Average over all `2^l` inner samples, formed as the mean of the two
    /// half averages so the antithetic identity holds exactly.
    pub combined: Vec<f64>,
    /// Average over all inner samples of `max_d f_d`.
    pub mean_of_max: f64,
    pub inner_count: u64,
}

impl AntitheticAverages {
    fn from_sums(sum_a: &[f64], sum_b: &[f64], max_a: f64, max_b: f64, half: u64) -> Self {
        let h = half as f64;
        let half_a: Vec<f64> = sum_a.iter().map(|s| s / h).collect();
        let half_b: Vec<f64> = sum_b.iter().map(|s| s / h).collect();
        let combined = half_a
            .iter()
            .zip(&half_b)
            .map(|(a, b)| 0.5 * (a + b))
            .collect();
        Self {
            half_a,
            half_b,
            combined,
            mean_of_max: 0.5 * (max_a / h + max_b / h),
            inner_count: 2 * half,
        }
    }

    pub fn z(&self) -> f64 {
        0.5 * (max_of(&self.half_a) + max_of(&self.half_b)) - max_of(&self.combined)
    }

    /// `P_l = mean(max_d f_d) - max_d mean(f_d)`; non-negative because
    /// rounded sums are monotone in each term.
    pub fn p_fine(&self) -> f64 {
        self.mean_of_max - max_of(&self.combined)
    }

    /// Whether the same decision maximises both halves and the combined
    /// average, in which case `z` vanishes.
    pub fn argmax_agrees(&self) -> bool {
        let c = first_argmax(&self.combined);
        first_argmax(&self.half_a) == c && first_argmax(&self.half_b) == c
    }

    pub fn level_sample(&self) -> LevelSample {
        LevelSample {
            z: self.z(),
            p_fine: self.p_fine(),
            cost: self.inner_count,
        }
    }
}

/// Builds the antithetic averages from explicit payoffs: `payoff_rows` holds
/// `2^l` rows of `decision_count` values, row `i` being `f(X, Y_i)`.
pub fn antithetic_averages(
    payoff_rows: &[f64],
    decision_count: usize,
) -> Result<AntitheticAverages> {
    if decision_count == 0 || !payoff_rows.len().is_multiple_of(decision_count) {
        return Err(Error::domain("payoff rows do not match the decision count"));
    }
    let rows = payoff_rows.len() / decision_count;
    if rows < 2 || !rows.is_power_of_two() {
        return Err(Error::domain(format!(
            "antithetic correction needs 2^l rows with l >= 1, got {rows}"
        )));
    }
    let half = rows / 2;
    let mut sums = [vec![0.0; decision_count], vec![0.0; decision_count]];
    let mut maxes = [0.0; 2];
    for (i, row) in payoff_rows.chunks_exact(decision_count).enumerate() {
        let g = usize::from(i >= half);
        for (s, f) in sums[g].iter_mut().zip(row) {
            *s += f;
        }
        maxes[g] += max_of(row);
    }
    Ok(AntitheticAverages::from_sums(
        &sums[0],
        &sums[1],
        maxes[0],
        maxes[1],
        half as u64,
    ))
}

/// Reusable buffers for one worker.
struct Scratch {
    outer: Vec<f64>,
    inner: Vec<f64>,
    payoff: Vec<f64>,
    sum_a: Vec<f64>,
    sum_b: Vec<f64>,
}

impl Scratch {
    fn new(model: &dyn DecisionModel) -> Self {
        let d = model.decision_count();
        Self {
            outer: vec![0.0; model.outer_dim()],
            inner: vec![0.0; model.inner_dim()],
            payoff: vec![0.0; d],
            sum_a: vec![0.0; d],
            sum_b: vec![0.0; d],
        }
    }

    /// Adds `count` inner draws given the current outer sample into `sums`;
    /// returns the sum over draws of `max_d f_d`.
    #[inline]
    fn accumulate_inner(
        model: &dyn DecisionModel,
        outer: &[f64],
        inner: &mut [f64],
        payoff: &mut [f64],
        sums: &mut [f64],
        count: u64,
        stream: &mut RandomStream,
    ) -> f64 {
        sums.iter_mut().for_each(|s| *s = 0.0);
        let mut max_sum = 0.0;
        for _ in 0..count {
            model.sample_inner_into(outer, stream, inner);
            model.payoffs_into(outer, inner, payoff);
            for (s, f) in sums.iter_mut().zip(payoff.iter()) {
                *s += f;
            }
            max_sum += max_of(payoff);
        }
        max_sum
    }

    fn draw(
        &mut self,
        model: &dyn DecisionModel,
        level: u32,
        stream: &mut RandomStream,
    ) -> AntitheticAverages {
        debug_assert!(level >= 1);
        model.sample_outer_into(stream, &mut self.outer);
        let half = 1u64 << (level - 1);
        let max_a = Self::accumulate_inner(
            model,
            &self.outer,
            &mut self.inner,
            &mut self.payoff,
            &mut self.sum_a,
            half,
            stream,
        );
        let max_b = Self::accumulate_inner(
            model,
            &self.outer,
            &mut self.inner,
            &mut self.payoff,
            &mut self.sum_b,
            half,
            stream,
        );
        AntitheticAverages::from_sums(&self.sum_a, &self.sum_b, max_a, max_b, half)
    }
}

fn check_level(level: u32) -> Result<()> {
    if level > MAX_LEVEL {
        return Err(Error::domain(format!("level {level} exceeds {MAX_LEVEL}")));
    }
    Ok(())
}

/// Draws one outer sample and `2^level` inner samples and returns both the
/// outer sample and the antithetic averages.
pub fn draw_antithetic(
    model: &dyn DecisionModel,
    level: u32,
    stream: &mut RandomStream,
) -> Result<(OuterSample, AntitheticAverages)> {
    check_level(level)?;
    if level == 0 {
        return Err(Error::domain(
            "level-0 correction is identically zero and is never sampled",
        ));
    }
    let mut scratch = Scratch::new(model);
    let avg = scratch.draw(model, level, stream);
    Ok((OuterSample(scratch.outer), avg))
}

/// One draw of the antithetic correction `Z_l`, `l >= 1`.
pub fn z_level(
    model: &dyn DecisionModel,
    level: u32,
    stream: &mut RandomStream,
) -> Result<LevelSample> {
    Ok(draw_antithetic(model, level, stream)?.1.level_sample())
}

/// One draw of `P_l`, the bracket estimated with `2^l` inner samples.
/// `P_0` is identically zero.
pub fn p_level(model: &dyn DecisionModel, level: u32, stream: &mut RandomStream) -> Result<f64> {
    if level == 0 {
        // One outer and one inner draw keep the stream consumption uniform.
        let mut scratch = Scratch::new(model);
        model.sample_outer_into(stream, &mut scratch.outer);
        model.sample_inner_into(&scratch.outer, stream, &mut scratch.inner);
        return Ok(0.0);
    }
    Ok(draw_antithetic(model, level, stream)?.1.p_fine())
}

/// Runs `n` draws split into blocks of [`BLOCK_SIZE`]; block `b` uses
/// `stream.split(b)`. Blocks run in parallel and merge in block order, so
/// the result does not depend on the thread count.
fn blocked<T, F>(n: u64, stream: &RandomStream, work: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64, RandomStream) -> T + Sync + Send,
{
    let blocks = n.div_ceil(BLOCK_SIZE);
    (0..blocks)
        .into_par_iter()
        .map(|b| {
            let len = BLOCK_SIZE.min(n - b * BLOCK_SIZE);
            work(len, stream.split(b))
        })
        .collect()
}

/// Accumulates `n` independent level-`l` samples of `(Z_l, P_l)`.
pub fn sample_level(
    model: &dyn DecisionModel,
    level: u32,
    n: u64,
    stream: &RandomStream,
) -> Result<MomentAccumulator> {
    check_level(level)?;
    if level == 0 {
        return Err(Error::domain("level 0 is never sampled"));
    }
    let parts = blocked(n, stream, |len, mut s| {
        let mut scratch = Scratch::new(model);
        let mut acc = MomentAccumulator::new();
        for _ in 0..len {
            let avg = scratch.draw(model, level, &mut s);
            acc.push(avg.z(), avg.p_fine(), avg.inner_count);
        }
        acc
    });
    Ok(merge_all(parts))
}

/// Accumulates `n` draws of `P_l` alone (stored in both slots), for
/// validating the shared-draw statistics.
pub fn sample_p_independent(
    model: &dyn DecisionModel,
    level: u32,
    n: u64,
    stream: &RandomStream,
) -> Result<MomentAccumulator> {
    check_level(level)?;
    let parts = blocked(n, stream, |len, mut s| {
        let mut scratch = Scratch::new(model);
        let mut acc = MomentAccumulator::new();
        for _ in 0..len {
            let p = if level == 0 {
                model.sample_outer_into(&mut s, &mut scratch.outer);
                model.sample_inner_into(&scratch.outer, &mut s, &mut scratch.inner);
                0.0
            } else {
                scratch.draw(model, level, &mut s).p_fine()
            };
            acc.push(p, p, 1u64 << level);
        }
        acc
    });
    Ok(merge_all(parts))
}

fn merge_all(parts: Vec<MomentAccumulator>) -> MomentAccumulator {
    let mut total = MomentAccumulator::new();
    for p in &parts {
        total.merge(p);
    }
    total
}

#[derive(Clone, Debug, Default)]
struct EvpiSums {
    n: u64,
    max: CompensatedSum,
    max_sq: CompensatedSum,
    per_decision: Vec<CompensatedSum>,
}

/// Standard Monte Carlo EVPI estimate from `n` joint draws of `(X, Y)`:
/// `mean(max_d f_d) - max_d mean(f_d)`.
///
/// The standard error covers the first term only; the second is a maximum
/// of averages whose spread is of lower order.
pub fn evpi_mc(model: &dyn DecisionModel, n: u64, stream: &RandomStream) -> Result<Estimate> {
    if n < 2 {
        return Err(Error::domain("EVPI estimate needs at least two samples"));
    }
    let d = model.decision_count();
    let parts = blocked(n, stream, |len, mut s| {
        let mut scratch = Scratch::new(model);
        let mut sums = EvpiSums {
            per_decision: vec![CompensatedSum::default(); d],
            ..Default::default()
        };
        for _ in 0..len {
            model.sample_outer_into(&mut s, &mut scratch.outer);
            model.sample_inner_into(&scratch.outer, &mut s, &mut scratch.inner);
            model.payoffs_into(&scratch.outer, &scratch.inner, &mut scratch.payoff);
            let m = max_of(&scratch.payoff);
            sums.n += 1;
            sums.max.add(m);
            sums.max_sq.add(m * m);
            for (acc, f) in sums.per_decision.iter_mut().zip(&scratch.payoff) {
                acc.add(*f);
            }
        }
        sums
    });
    let mut total = EvpiSums {
        per_decision: vec![CompensatedSum::default(); d],
        ..Default::default()
    };
    for p in &parts {
        total.n += p.n;
        total.max.merge(&p.max);
        total.max_sq.merge(&p.max_sq);
        for (a, b) in total.per_decision.iter_mut().zip(&p.per_decision) {
            a.merge(b);
        }
    }
    let nf = total.n as f64;
    let mean_max = total.max.value() / nf;
    let means: Vec<f64> = total.per_decision.iter().map(|s| s.value() / nf).collect();
    let var = ((total.max_sq.value() - nf * mean_max * mean_max) / (nf - 1.0)).max(0.0);
    Ok(Estimate {
        value: mean_max - max_of(&means),
        std_error: (var / nf).sqrt(),
        n_samples: total.n,
        cost: total.n,
    })
}

/// Nested Monte Carlo estimate of EVPI - EVPPI with `n` outer and `m`
/// inner samples each. The standard error comes from the spread of the `n`
/// bracket terms.
pub fn nested_mc(
    model: &dyn DecisionModel,
    n: u64,
    m: u64,
    stream: &RandomStream,
) -> Result<Estimate> {
    if n < 2 {
        return Err(Error::domain(
            "nested estimate needs at least two outer samples",
        ));
    }
    if m < 1 {
        return Err(Error::domain(
            "nested estimate needs at least one inner sample",
        ));
    }
    let parts = blocked(n, stream, |len, mut s| {
        let mut scratch = Scratch::new(model);
        let mut acc = MomentAccumulator::new();
        let mf = m as f64;
        for _ in 0..len {
            model.sample_outer_into(&mut s, &mut scratch.outer);
            let max_sum = Scratch::accumulate_inner(
                model,
                &scratch.outer,
                &mut scratch.inner,
                &mut scratch.payoff,
                &mut scratch.sum_a,
                m,
                &mut s,
            );
            let best_mean = scratch
                .sum_a
                .iter()
                .map(|s| s / mf)
                .fold(f64::NEG_INFINITY, f64::max);
            let bracket = max_sum / mf - best_mean;
            acc.push(bracket, bracket, m);
        }
        acc
    });
    let total = merge_all(parts);
    Ok(Estimate {
        value: total.mean_z(),
        std_error: (total.var_z() / total.n as f64).sqrt(),
        n_samples: total.n,
        cost: total.cost,
    })
}
