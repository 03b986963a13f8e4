//! Compensated running sums and mergeable moment accumulators.

use serde::{Deserialize, Serialize};

/// Neumaier (improved Kahan) summation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn merge(&mut self, other: &CompensatedSum) {
        self.add(other.sum);
        self.add(other.compensation);
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

/// Central moments of one variable up to order four, updated one value at
/// a time and merged with the pairwise formulas of Chan et al. and Pebay,
/// so that a large common offset does not cancel the spread.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CentralMoments {
    pub n: u64,
    pub mean: f64,
    /// Sums of powers of deviations from the mean, orders 2..4.
    pub m2: f64,
    pub m3: f64,
    pub m4: f64,
}

impl CentralMoments {
    #[inline]
    pub fn push(&mut self, x: f64) {
        let n1 = self.n as f64;
        self.n += 1;
        let n = self.n as f64;
        let delta = x - self.mean;
        let dn = delta / n;
        let dn2 = dn * dn;
        let term = delta * dn * n1;
        self.mean += dn;
        self.m4 += term * dn2 * (n * n - 3.0 * n + 3.0) + 6.0 * dn2 * self.m2 - 4.0 * dn * self.m3;
        self.m3 += term * dn * (n - 2.0) - 3.0 * dn * self.m2;
        self.m2 += term;
    }

    pub fn merge(&mut self, other: &CentralMoments) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let (na, nb) = (self.n as f64, other.n as f64);
        let n = na + nb;
        let delta = other.mean - self.mean;
        let d2 = delta * delta;
        let m2 = self.m2 + other.m2 + d2 * na * nb / n;
        let m3 = self.m3
            + other.m3
            + d2 * delta * na * nb * (na - nb) / (n * n)
            + 3.0 * delta * (na * other.m2 - nb * self.m2) / n;
        let m4 = self.m4
            + other.m4
            + d2 * d2 * na * nb * (na * na - na * nb + nb * nb) / (n * n * n)
            + 6.0 * d2 * (na * na * other.m2 + nb * nb * self.m2) / (n * n)
            + 4.0 * delta * (na * other.m3 - nb * self.m3) / n;
        self.n += other.n;
        self.mean += delta * nb / n;
        self.m2 = m2;
        self.m3 = m3;
        self.m4 = m4;
    }

    /// Unbiased sample variance; zero when fewer than two values.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        (self.m2 / (self.n - 1) as f64).max(0.0)
    }

    /// Moment-ratio kurtosis `m4 / m2^2` from biased central moments.
    /// `None` when `n < 4` or the spread is round-off relative to the mean.
    pub fn kurtosis(&self) -> Option<f64> {
        if self.n < 4 {
            return None;
        }
        let n = self.n as f64;
        let var = self.m2 / n;
        if var.is_nan() || var <= (1e-14 * self.mean).powi(2) || var < f64::MIN_POSITIVE {
            return None;
        }
        Some((self.m4 / n / (var * var)).max(1.0))
    }
}

/// Moments of the level correction `z` (orders 1..4) and of the fine
/// approximation `p` (orders 1..2), plus the inner-sample cost.
///
/// Merging is not associative in floating point; for bit-reproducible
/// results merge in a fixed order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MomentAccumulator {
    pub n: u64,
    pub cost: u64,
    z: CentralMoments,
    p: CentralMoments,
}

impl MomentAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn push(&mut self, z: f64, p: f64, cost: u64) {
        self.n += 1;
        self.cost += cost;
        self.z.push(z);
        self.p.push(p);
    }

    pub fn merge(&mut self, other: &MomentAccumulator) {
        self.n += other.n;
        self.cost += other.cost;
        self.z.merge(&other.z);
        self.p.merge(&other.p);
    }

    pub fn mean_z(&self) -> f64 {
        self.z.mean
    }

    /// Unbiased sample variance of `z`; zero when fewer than two samples.
    pub fn var_z(&self) -> f64 {
        self.z.variance()
    }

    pub fn mean_p(&self) -> f64 {
        self.p.mean
    }

    pub fn var_p(&self) -> f64 {
        self.p.variance()
    }

    /// Moment-ratio kurtosis of `z`; see [`CentralMoments::kurtosis`].
    pub fn kurtosis_z(&self) -> Option<f64> {
        self.z.kurtosis()
    }
}

/// Ordinary least-squares line `y = intercept + slope * x`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Fits a line through at least two points with distinct abscissae.
pub fn least_squares(points: &[(f64, f64)]) -> Option<LineFit> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in points {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 {
        1.0
    } else {
        (sxy * sxy / (sxx * syy)).min(1.0)
    };
    Some(LineFit {
        slope,
        intercept: my - slope * mx,
        r_squared,
    })
}
