//! Multivariate-normal decision models with polynomial payoffs, and the
//! 19-variable two-treatment cost-effectiveness model ("BKOC") built on it.

use std::collections::BTreeSet;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{AssumptionClass, DecisionModel};
use crate::error::{Error, Result};
use crate::rng::RandomStream;

/// Correlation between two variables, given by one-based indices.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrelatedPair {
    pub first: usize,
    pub second: usize,
    pub rho: f64,
}

impl CorrelatedPair {
    pub fn new(first: usize, second: usize, rho: f64) -> Self {
        Self { first, second, rho }
    }
}

/// Parameters of a Gaussian input model. All indices are one-based, as in
/// the variable names `X1..Xn`.
///
/// Every field has the BKOC default, so a configuration file only needs to
/// name the fields it changes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaussianModelSpec {
    pub means: Vec<f64>,
    pub std_devs: Vec<f64>,
    pub correlated_pairs: Vec<CorrelatedPair>,
    pub outer_indices: Vec<usize>,
    /// Monetary value of one unit of health utility.
    pub lambda: f64,
}

const BKOC_MEANS: [f64; 19] = [
    1000.0, 0.1, 5.2, 400.0, 0.7, 0.3, 3.0, 0.25, -0.1, 0.5, 1500.0, 0.08, 6.1, 0.8, 0.3, 3.0, 0.2,
    -0.1, 0.5,
];
const BKOC_STD_DEVS: [f64; 19] = [
    1.0, 0.02, 1.0, 200.0, 0.1, 0.1, 0.5, 0.1, 0.02, 0.2, 1.0, 0.02, 1.0, 0.1, 0.05, 1.0, 0.05,
    0.02, 0.2,
];
/// Response probability and response duration of both treatments.
const BKOC_CORRELATED: [usize; 4] = [5, 7, 14, 16];
const BKOC_RHO: f64 = 0.6;

impl Default for GaussianModelSpec {
    fn default() -> Self {
        Self::bkoc()
    }
}

impl GaussianModelSpec {
    /// The BKOC table with every pair among `{X5, X7, X14, X16}` correlated
    /// at `rho = 0.6`, `lambda = 1e4`, and outer set `{X5, X14}`.
    pub fn bkoc() -> Self {
        let mut pairs = Vec::new();
        for (i, &a) in BKOC_CORRELATED.iter().enumerate() {
            for &b in &BKOC_CORRELATED[i + 1..] {
                pairs.push(CorrelatedPair::new(a, b, BKOC_RHO));
            }
        }
        Self {
            means: BKOC_MEANS.to_vec(),
            std_devs: BKOC_STD_DEVS.to_vec(),
            correlated_pairs: pairs,
            outer_indices: vec![5, 14],
            lambda: 1e4,
        }
    }

    /// The BKOC table with only the within-treatment pairs `(X5, X7)` and
    /// `(X14, X16)` correlated.
    pub fn bkoc_disjoint_pairs() -> Self {
        Self {
            correlated_pairs: vec![
                CorrelatedPair::new(5, 7, BKOC_RHO),
                CorrelatedPair::new(14, 16, BKOC_RHO),
            ],
            ..Self::bkoc()
        }
    }

    pub fn with_outer(mut self, outer_indices: &[usize]) -> Self {
        self.outer_indices = outer_indices.to_vec();
        self
    }

    pub fn with_pairs(mut self, pairs: Vec<CorrelatedPair>) -> Self {
        self.correlated_pairs = pairs;
        self
    }

    /// Parses a TOML document; missing fields keep their BKOC defaults.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: Self =
            toml::from_str(text).map_err(|e| Error::config(format!("model config: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("spec serialises")
    }

    pub fn dim(&self) -> usize {
        self.means.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.means.len();
        if n == 0 {
            return Err(Error::config("no variables"));
        }
        if self.std_devs.len() != n {
            return Err(Error::config(format!(
                "{} means but {} standard deviations",
                n,
                self.std_devs.len()
            )));
        }
        if let Some(j) = self.means.iter().position(|m| !m.is_finite()) {
            return Err(Error::config(format!("mean of X{} is not finite", j + 1)));
        }
        if let Some(j) = self
            .std_devs
            .iter()
            .position(|s| !(s.is_finite() && *s > 0.0))
        {
            return Err(Error::config(format!(
                "standard deviation of X{} must be positive",
                j + 1
            )));
        }
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(Error::config("lambda must be positive"));
        }
        let mut seen = BTreeSet::new();
        for p in &self.correlated_pairs {
            for idx in [p.first, p.second] {
                if idx == 0 || idx > n {
                    return Err(Error::config(format!(
                        "correlated index {idx} outside 1..={n}"
                    )));
                }
            }
            if p.first == p.second {
                return Err(Error::config(format!(
                    "X{} correlated with itself",
                    p.first
                )));
            }
            if p.rho.is_nan() || p.rho.abs() >= 1.0 {
                return Err(Error::domain(format!(
                    "correlation of (X{}, X{}) must lie in (-1, 1), got {}",
                    p.first, p.second, p.rho
                )));
            }
            let key = (p.first.min(p.second), p.first.max(p.second));
            if !seen.insert(key) {
                return Err(Error::config(format!(
                    "pair (X{}, X{}) listed twice",
                    key.0, key.1
                )));
            }
        }
        if self.outer_indices.is_empty() {
            return Err(Error::config("outer index set is empty"));
        }
        let outer: BTreeSet<usize> = self.outer_indices.iter().copied().collect();
        if outer.len() != self.outer_indices.len() {
            return Err(Error::config("outer indices repeat"));
        }
        if let Some(&bad) = outer.iter().find(|&&i| i == 0 || i > n) {
            return Err(Error::config(format!("outer index {bad} outside 1..={n}")));
        }
        if outer.len() == n {
            return Err(Error::config(
                "every variable is outer; no inner variables left",
            ));
        }
        Ok(())
    }

    fn covariance(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut cov = DMatrix::from_diagonal(&DVector::from_iterator(
            n,
            self.std_devs.iter().map(|s| s * s),
        ));
        for p in &self.correlated_pairs {
            let (a, b) = (p.first - 1, p.second - 1);
            let c = p.rho * self.std_devs[a] * self.std_devs[b];
            cov[(a, b)] = c;
            cov[(b, a)] = c;
        }
        cov
    }
}

/// Lower-triangular matrix stored by rows, zeros omitted.
#[derive(Clone, Debug)]
struct SparseLower {
    rows: Vec<Vec<(usize, f64)>>,
}

impl SparseLower {
    fn cholesky(matrix: DMatrix<f64>, what: &str) -> Result<Self> {
        let n = matrix.nrows();
        let chol = matrix
            .cholesky()
            .ok_or_else(|| Error::domain(format!("{what} covariance is not positive definite")))?;
        let l = chol.l();
        let rows = (0..n)
            .map(|i| {
                (0..=i)
                    .filter(|&k| l[(i, k)] != 0.0)
                    .map(|k| (k, l[(i, k)]))
                    .collect()
            })
            .collect();
        Ok(Self { rows })
    }

    /// Replaces `v` by `L v`. Works bottom-up so row `i` only reads entries
    /// that have not been overwritten yet.
    #[inline]
    fn apply_in_place(&self, v: &mut [f64]) {
        for i in (0..self.rows.len()).rev() {
            let mut acc = 0.0;
            for &(k, c) in &self.rows[i] {
                acc += c * v[k];
            }
            v[i] = acc;
        }
    }
}

/// Joint sampler for all variables of a [`GaussianModelSpec`].
#[derive(Clone, Debug)]
pub struct CorrelatedNormalSampler {
    means: Vec<f64>,
    factor: SparseLower,
}

impl CorrelatedNormalSampler {
    pub fn new(spec: &GaussianModelSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            means: spec.means.clone(),
            factor: SparseLower::cholesky(spec.covariance(), "joint")?,
        })
    }

    pub fn dim(&self) -> usize {
        self.means.len()
    }

    pub fn sample_into(&self, stream: &mut RandomStream, out: &mut [f64]) {
        stream.fill_standard_normal(out);
        self.factor.apply_in_place(out);
        for (v, m) in out.iter_mut().zip(&self.means) {
            *v += m;
        }
    }

    pub fn sample(&self, stream: &mut RandomStream) -> Vec<f64> {
        let mut v = vec![0.0; self.dim()];
        self.sample_into(stream, &mut v);
        v
    }
}

impl GaussianModelSpec {
    /// One joint draw of every variable.
    pub fn sample_correlated_normals(&self, stream: &mut RandomStream) -> Result<Vec<f64>> {
        Ok(CorrelatedNormalSampler::new(self)?.sample(stream))
    }
}

/// `coef * prod(X_j for j in factors)`, factors zero-based.
#[derive(Clone, Debug, PartialEq)]
pub struct ProductTerm {
    pub coef: f64,
    pub factors: Vec<usize>,
}

impl ProductTerm {
    pub fn new(coef: f64, factors: &[usize]) -> Self {
        Self {
            coef,
            factors: factors.to_vec(),
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum Slot {
    Outer(usize),
    Inner(usize),
}

/// Decision model whose inputs are jointly Gaussian and whose payoffs are
/// sums of products of inputs. The outer/inner partition is part of the
/// model, fixed at construction.
#[derive(Clone, Debug)]
pub struct GaussianModel {
    name: String,
    spec: GaussianModelSpec,
    payoffs: Vec<Vec<ProductTerm>>,
    outer: Vec<usize>,
    inner: Vec<usize>,
    slots: Vec<Slot>,
    outer_factor: SparseLower,
    /// Per inner variable: `(outer position, coefficient)` of the
    /// conditional-mean regression on `x - mu_outer`.
    regression: Vec<Vec<(usize, f64)>>,
    conditional_factor: SparseLower,
    conditional_cov: DMatrix<f64>,
    analytic: bool,
}

impl GaussianModel {
    pub fn new(
        name: impl Into<String>,
        spec: GaussianModelSpec,
        payoffs: Vec<Vec<ProductTerm>>,
    ) -> Result<Self> {
        spec.validate()?;
        let n = spec.dim();
        if payoffs.len() < 2 {
            return Err(Error::config(
                "a decision model needs at least two decisions",
            ));
        }
        for term in payoffs.iter().flatten() {
            if let Some(&j) = term.factors.iter().find(|&&j| j >= n) {
                return Err(Error::config(format!(
                    "payoff references X{} but only {n} variables exist",
                    j + 1
                )));
            }
        }

        let mut outer: Vec<usize> = spec.outer_indices.iter().map(|i| i - 1).collect();
        outer.sort_unstable();
        let inner: Vec<usize> = (0..n).filter(|j| outer.binary_search(j).is_err()).collect();
        let mut slots = vec![Slot::Outer(0); n];
        for (k, &j) in outer.iter().enumerate() {
            slots[j] = Slot::Outer(k);
        }
        for (k, &j) in inner.iter().enumerate() {
            slots[j] = Slot::Inner(k);
        }

        let cov = spec.covariance();
        // Full-rank check before any partitioning.
        SparseLower::cholesky(cov.clone(), "joint")?;
        let sxx = cov.select_rows(&outer).select_columns(&outer);
        let syx = cov.select_rows(&inner).select_columns(&outer);
        let syy = cov.select_rows(&inner).select_columns(&inner);

        let chol_x = sxx
            .clone()
            .cholesky()
            .ok_or_else(|| Error::domain("outer covariance is not positive definite"))?;
        // B = S_yx S_xx^{-1}, obtained as (S_xx^{-1} S_xy)^T.
        let b = chol_x.solve(&syx.transpose()).transpose();
        let conditional_cov = &syy - &b * syx.transpose();
        let regression = (0..inner.len())
            .map(|i| {
                (0..outer.len())
                    .filter(|&k| b[(i, k)] != 0.0)
                    .map(|k| (k, b[(i, k)]))
                    .collect()
            })
            .collect();

        let analytic = payoffs.iter().flatten().all(|t| t.factors.len() <= 3);

        Ok(Self {
            name: name.into(),
            outer_factor: SparseLower::cholesky(sxx, "outer")?,
            conditional_factor: SparseLower::cholesky(conditional_cov.clone(), "conditional")?,
            conditional_cov,
            regression,
            spec,
            payoffs,
            outer,
            inner,
            slots,
            analytic,
        })
    }

    /// Two-treatment model
    /// `f1 = lambda (X5 X6 X7 + X8 X9 X10) - (X1 + X2 X3 X4)` and
    /// `f2 = lambda (X14 X15 X16 + X17 X18 X19) - (X11 + X12 X13 X4)`.
    pub fn bkoc(spec: GaussianModelSpec) -> Result<Self> {
        if spec.dim() != 19 {
            return Err(Error::config(format!(
                "BKOC model needs 19 variables, config has {}",
                spec.dim()
            )));
        }
        let lam = spec.lambda;
        // one-based variable numbers -> zero-based factors
        let t = |coef: f64, vars: &[usize]| {
            ProductTerm::new(coef, &vars.iter().map(|v| v - 1).collect::<Vec<_>>())
        };
        let payoffs = vec![
            vec![
                t(lam, &[5, 6, 7]),
                t(lam, &[8, 9, 10]),
                t(-1.0, &[1]),
                t(-1.0, &[2, 3, 4]),
            ],
            vec![
                t(lam, &[14, 15, 16]),
                t(lam, &[17, 18, 19]),
                t(-1.0, &[11]),
                t(-1.0, &[12, 13, 4]),
            ],
        ];
        Self::new("bkoc", spec, payoffs)
    }

    pub fn spec(&self) -> &GaussianModelSpec {
        &self.spec
    }

    /// Zero-based indices of the outer variables, ascending.
    pub fn outer_variables(&self) -> &[usize] {
        &self.outer
    }

    pub fn inner_variables(&self) -> &[usize] {
        &self.inner
    }

    /// Mean of each inner variable given the outer values.
    pub fn conditional_inner_means(&self, outer: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.inner.len()];
        self.write_conditional_means(outer, &mut out);
        out
    }

    /// Conditional standard deviation of each inner variable.
    pub fn conditional_inner_std_devs(&self) -> Vec<f64> {
        (0..self.inner.len())
            .map(|i| self.conditional_cov[(i, i)].sqrt())
            .collect()
    }

    #[inline]
    fn write_conditional_means(&self, outer: &[f64], out: &mut [f64]) {
        for (i, &j) in self.inner.iter().enumerate() {
            let mut m = self.spec.means[j];
            for &(k, c) in &self.regression[i] {
                m += c * (outer[k] - self.spec.means[self.outer[k]]);
            }
            out[i] = m;
        }
    }

    #[inline]
    fn value(&self, j: usize, outer: &[f64], inner: &[f64]) -> f64 {
        match self.slots[j] {
            Slot::Outer(k) => outer[k],
            Slot::Inner(k) => inner[k],
        }
    }

    fn conditional_covariance(&self, a: usize, b: usize) -> f64 {
        match (self.slots[a], self.slots[b]) {
            (Slot::Inner(i), Slot::Inner(k)) => self.conditional_cov[(i, k)],
            _ => 0.0,
        }
    }
}

impl DecisionModel for GaussianModel {
    fn name(&self) -> &str {
        &self.name
    }

    fn decision_count(&self) -> usize {
        self.payoffs.len()
    }

    fn outer_dim(&self) -> usize {
        self.outer.len()
    }

    fn inner_dim(&self) -> usize {
        self.inner.len()
    }

    fn assumption_class(&self) -> AssumptionClass {
        AssumptionClass::Unknown
    }

    fn has_analytic_conditional_mean(&self) -> bool {
        self.analytic
    }

    fn sample_outer_into(&self, stream: &mut RandomStream, out: &mut [f64]) {
        stream.fill_standard_normal(out);
        self.outer_factor.apply_in_place(out);
        for (v, &j) in out.iter_mut().zip(&self.outer) {
            *v += self.spec.means[j];
        }
    }

    fn sample_inner_into(&self, outer: &[f64], stream: &mut RandomStream, out: &mut [f64]) {
        stream.fill_standard_normal(out);
        self.conditional_factor.apply_in_place(out);
        for (i, &j) in self.inner.iter().enumerate() {
            let mut m = self.spec.means[j];
            for &(k, c) in &self.regression[i] {
                m += c * (outer[k] - self.spec.means[self.outer[k]]);
            }
            out[i] += m;
        }
    }

    fn payoffs_into(&self, outer: &[f64], inner: &[f64], out: &mut [f64]) {
        for (o, terms) in out.iter_mut().zip(&self.payoffs) {
            let mut acc = 0.0;
            for term in terms {
                let mut prod = term.coef;
                for &j in &term.factors {
                    prod *= self.value(j, outer, inner);
                }
                acc += prod;
            }
            *o = acc;
        }
    }

    /// Conditional expectation of each product by Isserlis' theorem for
    /// Gaussian vectors (third central moments vanish).
    fn conditional_means_into(&self, outer: &[f64], out: &mut [f64]) -> Result<()> {
        if !self.analytic {
            return Err(Error::Unsupported(
                "conditional mean only available for products of at most three inputs".into(),
            ));
        }
        let mut inner_means = vec![0.0; self.inner.len()];
        self.write_conditional_means(outer, &mut inner_means);
        let mean = |j: usize| self.value(j, outer, &inner_means);
        let cov = |a: usize, b: usize| self.conditional_covariance(a, b);
        for (o, terms) in out.iter_mut().zip(&self.payoffs) {
            let mut acc = 0.0;
            for term in terms {
                let e = match term.factors.as_slice() {
                    [] => 1.0,
                    &[a] => mean(a),
                    &[a, b] => mean(a) * mean(b) + cov(a, b),
                    &[a, b, c] => {
                        mean(a) * mean(b) * mean(c)
                            + mean(a) * cov(b, c)
                            + mean(b) * cov(a, c)
                            + mean(c) * cov(a, b)
                    }
                    _ => unreachable!("checked at construction"),
                };
                acc += term.coef * e;
            }
            *o = acc;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Decision, InnerSample, OuterSample};

    fn disjoint(outer: &[usize]) -> GaussianModel {
        GaussianModel::bkoc(GaussianModelSpec::bkoc_disjoint_pairs().with_outer(outer)).unwrap()
    }

    fn at_means(model: &GaussianModel) -> (OuterSample, InnerSample) {
        let m = &model.spec().means;
        (
            OuterSample(model.outer_variables().iter().map(|&j| m[j]).collect()),
            InnerSample(model.inner_variables().iter().map(|&j| m[j]).collect()),
        )
    }

    #[test]
    fn payoff_at_table_means() {
        let model = disjoint(&[5, 14]);
        let (x, y) = at_means(&model);
        let dynm: &dyn DecisionModel = &model;
        let f1 = dynm.payoff(Decision::new(1).unwrap(), &x, &y).unwrap();
        let f2 = dynm.payoff(Decision::new(2).unwrap(), &x, &y).unwrap();
        assert!((f1 - 4967.0).abs() < 1e-9, "{f1}");
        assert!((f2 - 5404.8).abs() < 1e-9, "{f2}");
    }

    #[test]
    fn disjoint_pair_conditioning() {
        let model = disjoint(&[5, 14]);
        let pos7 = model
            .inner_variables()
            .iter()
            .position(|&j| j == 6)
            .unwrap();
        let at_mean = model.conditional_inner_means(&[0.7, 0.8]);
        assert!((at_mean[pos7] - 3.0).abs() < 1e-12);
        let shifted = model.conditional_inner_means(&[0.8, 0.8]);
        assert!((shifted[pos7] - 3.3).abs() < 1e-12);
        let sd = model.conditional_inner_std_devs();
        assert!((sd[pos7] - 0.4).abs() < 1e-12);
        // unpaired inner variables keep their marginals
        let pos4 = model
            .inner_variables()
            .iter()
            .position(|&j| j == 3)
            .unwrap();
        assert_eq!(shifted[pos4], 400.0);
        assert!((sd[pos4] - 200.0).abs() < 1e-9);
    }

    #[test]
    fn outer_marginals() {
        let model = disjoint(&[5, 14]);
        let dynm: &dyn DecisionModel = &model;
        let mut s = RandomStream::new(3);
        let n = 100_000;
        let (mut s5, mut s14) = (0.0, 0.0);
        for _ in 0..n {
            let x = dynm.sample_outer(&mut s);
            assert_eq!(x.0.len(), 2);
            s5 += x.0[0];
            s14 += x.0[1];
        }
        let tol = 4.0 * 0.1 / (n as f64).sqrt();
        assert!((s5 / n as f64 - 0.7).abs() < tol);
        assert!((s14 / n as f64 - 0.8).abs() < tol);
    }

    #[test]
    fn invalid_correlation_is_domain_error() {
        let spec = GaussianModelSpec::bkoc().with_pairs(vec![CorrelatedPair::new(5, 7, 1.0)]);
        assert!(matches!(
            GaussianModel::bkoc(spec.clone()),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            spec.sample_correlated_normals(&mut RandomStream::new(0)),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn config_overrides_defaults() {
        let spec = GaussianModelSpec::from_toml_str("lambda = 20000.0\nouter_indices = [7, 16]\n")
            .unwrap();
        assert_eq!(spec.lambda, 2e4);
        assert_eq!(spec.outer_indices, vec![7, 16]);
        assert_eq!(spec.means, GaussianModelSpec::bkoc().means);
        assert_eq!(spec.correlated_pairs.len(), 6);

        let pairs = GaussianModelSpec::from_toml_str(
            "[[correlated_pairs]]\nfirst = 5\nsecond = 7\nrho = 0.6\n",
        )
        .unwrap();
        assert_eq!(pairs.correlated_pairs, vec![CorrelatedPair::new(5, 7, 0.6)]);
    }

    #[test]
    fn config_rejects_bad_input() {
        assert!(GaussianModelSpec::from_toml_str("lambda = -1.0").is_err());
        assert!(GaussianModelSpec::from_toml_str("outer_indices = [0]").is_err());
        assert!(GaussianModelSpec::from_toml_str("outer_indices = [5, 5]").is_err());
        assert!(GaussianModelSpec::from_toml_str("std_devs = [1.0]").is_err());
        assert!(GaussianModelSpec::from_toml_str("unknown_field = 1").is_err());
    }

    #[test]
    fn toml_round_trip() {
        let spec = GaussianModelSpec::bkoc().with_outer(&[5, 6, 14, 15]);
        let back = GaussianModelSpec::from_toml_str(&spec.to_toml_string()).unwrap();
        assert_eq!(spec, back);
    }

    #[test]
    fn isserlis_matches_direct_for_independent_inputs() {
        // With no correlated inner factors the conditional mean is the
        // payoff at conditional means.
        let model = disjoint(&[5, 14]);
        let x = [0.65, 0.9];
        let mut f = [0.0; 2];
        let mut fm = [0.0; 2];
        model.conditional_means_into(&x, &mut fm).unwrap();
        let y = model.conditional_inner_means(&x);
        model.payoffs_into(&x, &y, &mut f);
        for d in 0..2 {
            assert!((f[d] - fm[d]).abs() < 1e-9 * f[d].abs());
        }
    }
}
