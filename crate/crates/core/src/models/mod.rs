//! Decision models: payoffs `f_d(X, Y)` of an outer input `X` and an inner
//! input `Y`, together with samplers for `X` and for `Y | X`.

mod gaussian;
mod synthetic;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RandomStream;

pub use gaussian::{CorrelatedPair, GaussianModel, GaussianModelSpec, ProductTerm};
pub use synthetic::{Synthetic, SyntheticCase};

/// How a model relates to the regularity conditions under which the
/// antithetic correction attains variance decay `2^{-3l/2}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssumptionClass {
    /// Finite moments, a thin decision boundary and linear separation
    /// of the optimal payoff away from it.
    SatisfiesAll,
    /// Payoff gap vanishes faster than linearly at the boundary.
    ViolatesA3,
    /// The set of outer values with tied optimal decisions has positive
    /// probability.
    ViolatesA2,
    Unknown,
}

/// One-based decision label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Decision(usize);

impl Decision {
    pub fn new(label: usize) -> Result<Self> {
        if label == 0 {
            return Err(Error::domain("decision labels start at 1"));
        }
        Ok(Decision(label))
    }

    pub(crate) fn from_index(index: usize) -> Self {
        Decision(index + 1)
    }

    pub fn label(self) -> usize {
        self.0
    }

    /// Zero-based position in a payoff vector.
    pub fn index(self) -> usize {
        self.0 - 1
    }
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "d{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OuterSample(pub Vec<f64>);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InnerSample(pub Vec<f64>);

/// A decision problem under uncertainty.
///
/// Implementations are immutable and shared across worker threads. All
/// randomness comes from the stream argument, so every method is a pure
/// function of its inputs and the stream state.
pub trait DecisionModel: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;

    fn decision_count(&self) -> usize;

    fn outer_dim(&self) -> usize;

    fn inner_dim(&self) -> usize;

    fn assumption_class(&self) -> AssumptionClass {
        AssumptionClass::Unknown
    }

    fn has_analytic_conditional_mean(&self) -> bool {
        false
    }

    /// Draws `X` from its marginal law into `out` (length `outer_dim`).
    fn sample_outer_into(&self, stream: &mut RandomStream, out: &mut [f64]);

    /// Draws `Y` from its law conditional on `X = outer` into `out`
    /// (length `inner_dim`).
    fn sample_inner_into(&self, outer: &[f64], stream: &mut RandomStream, out: &mut [f64]);

    /// Writes `f_d(outer, inner)` for every decision into `out`
    /// (length `decision_count`).
    fn payoffs_into(&self, outer: &[f64], inner: &[f64], out: &mut [f64]);

    /// Writes `F_d(outer) = E[f_d(X, Y) | X = outer]` for every decision.
    fn conditional_means_into(&self, _outer: &[f64], _out: &mut [f64]) -> Result<()> {
        Err(Error::Unsupported(format!(
            "model `{}` has no closed-form conditional mean",
            self.name()
        )))
    }
}

impl dyn DecisionModel {
    pub fn sample_outer(&self, stream: &mut RandomStream) -> OuterSample {
        let mut v = vec![0.0; self.outer_dim()];
        self.sample_outer_into(stream, &mut v);
        OuterSample(v)
    }

    pub fn sample_inner(&self, outer: &OuterSample, stream: &mut RandomStream) -> InnerSample {
        let mut v = vec![0.0; self.inner_dim()];
        self.sample_inner_into(&outer.0, stream, &mut v);
        InnerSample(v)
    }

    pub fn payoff(&self, d: Decision, outer: &OuterSample, inner: &InnerSample) -> Result<f64> {
        self.check_decision(d)?;
        self.check_dims(outer, Some(inner))?;
        let mut out = vec![0.0; self.decision_count()];
        self.payoffs_into(&outer.0, &inner.0, &mut out);
        Ok(out[d.index()])
    }

    pub fn conditional_mean(&self, d: Decision, outer: &OuterSample) -> Result<f64> {
        self.check_decision(d)?;
        self.check_dims(outer, None)?;
        let mut out = vec![0.0; self.decision_count()];
        self.conditional_means_into(&outer.0, &mut out)?;
        Ok(out[d.index()])
    }

    fn check_decision(&self, d: Decision) -> Result<()> {
        if d.label() > self.decision_count() {
            return Err(Error::domain(format!(
                "decision {} out of range 1..={}",
                d.label(),
                self.decision_count()
            )));
        }
        Ok(())
    }

    fn check_dims(&self, outer: &OuterSample, inner: Option<&InnerSample>) -> Result<()> {
        if outer.0.len() != self.outer_dim() {
            return Err(Error::domain(format!(
                "outer sample has {} entries, model expects {}",
                outer.0.len(),
                self.outer_dim()
            )));
        }
        if let Some(inner) = inner {
            if inner.0.len() != self.inner_dim() {
                return Err(Error::domain(format!(
                    "inner sample has {} entries, model expects {}",
                    inner.0.len(),
                    self.inner_dim()
                )));
            }
        }
        Ok(())
    }
}

pub const BUILTIN_MODELS: [&str; 4] = ["synthetic1", "synthetic2", "synthetic3", "bkoc"];

/// Looks up a built-in model by name. `bkoc` uses the default outer
/// partition `{X5, X14}`.
pub fn builtin(name: &str) -> Result<Arc<dyn DecisionModel>> {
    Ok(match name {
        "synthetic1" => Arc::new(Synthetic::new(SyntheticCase::Linear)),
        "synthetic2" => Arc::new(Synthetic::new(SyntheticCase::Cubic)),
        "synthetic3" => Arc::new(Synthetic::new(SyntheticCase::Plateau)),
        "bkoc" => Arc::new(GaussianModel::bkoc(GaussianModelSpec::bkoc())?),
        other => {
            return Err(Error::config(format!(
                "unknown model `{other}` (expected one of {})",
                BUILTIN_MODELS.join(", ")
            )))
        }
    })
}
