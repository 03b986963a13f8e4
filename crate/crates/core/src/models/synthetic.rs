use super::{AssumptionClass, DecisionModel};
use crate::error::Result;
use crate::rng::RandomStream;

/// The three scalar two-decision test problems with `X, Y ~ N(0, 1)`
/// independent and `f_1 = 0`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SyntheticCase {
    /// `f_2 = X + Y`
    Linear,
    /// `f_2 = X^3 + Y`
    Cubic,
    /// `f_2 = X + Y + 1` for `X < -1`, `Y` on `[-1, 1]`, `X + Y - 1` for `X > 1`
    Plateau,
}

#[derive(Clone, Debug)]
pub struct Synthetic {
    case: SyntheticCase,
}

impl Synthetic {
    pub fn new(case: SyntheticCase) -> Self {
        Self { case }
    }

    pub fn case(&self) -> SyntheticCase {
        self.case
    }

    #[inline]
    fn mean_gain(&self, x: f64) -> f64 {
        match self.case {
            SyntheticCase::Linear => x,
            SyntheticCase::Cubic => x * x * x,
            SyntheticCase::Plateau => {
                if x < -1.0 {
                    x + 1.0
                } else if x > 1.0 {
                    x - 1.0
                } else {
                    0.0
                }
            }
        }
    }
}

impl DecisionModel for Synthetic {
    fn name(&self) -> &str {
        match self.case {
            SyntheticCase::Linear => "synthetic1",
            SyntheticCase::Cubic => "synthetic2",
            SyntheticCase::Plateau => "synthetic3",
        }
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

    fn assumption_class(&self) -> AssumptionClass {
        match self.case {
            SyntheticCase::Linear => AssumptionClass::SatisfiesAll,
            SyntheticCase::Cubic => AssumptionClass::ViolatesA3,
            SyntheticCase::Plateau => AssumptionClass::ViolatesA2,
        }
    }

    fn has_analytic_conditional_mean(&self) -> bool {
        true
    }

    #[inline]
    fn sample_outer_into(&self, stream: &mut RandomStream, out: &mut [f64]) {
        out[0] = stream.standard_normal();
    }

    #[inline]
    fn sample_inner_into(&self, _outer: &[f64], stream: &mut RandomStream, out: &mut [f64]) {
        out[0] = stream.standard_normal();
    }

    #[inline]
    fn payoffs_into(&self, outer: &[f64], inner: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
        out[1] = self.mean_gain(outer[0]) + inner[0];
    }

    fn conditional_means_into(&self, outer: &[f64], out: &mut [f64]) -> Result<()> {
        out[0] = 0.0;
        out[1] = self.mean_gain(outer[0]);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Decision, DecisionModel, InnerSample, OuterSample};

    fn model(case: SyntheticCase) -> Box<dyn DecisionModel> {
        Box::new(Synthetic::new(case))
    }

    #[test]
    fn linear_payoff() {
        let m = model(SyntheticCase::Linear);
        let v = m
            .payoff(
                Decision::new(2).unwrap(),
                &OuterSample(vec![0.3]),
                &InnerSample(vec![-0.1]),
            )
            .unwrap();
        assert!((v - 0.2).abs() < 1e-15);
        let v1 = m
            .payoff(
                Decision::new(1).unwrap(),
                &OuterSample(vec![0.3]),
                &InnerSample(vec![-0.1]),
            )
            .unwrap();
        assert_eq!(v1, 0.0);
    }

    #[test]
    fn invalid_decision_is_domain_error() {
        let m = model(SyntheticCase::Linear);
        let err = m.payoff(
            Decision::new(3).unwrap(),
            &OuterSample(vec![0.0]),
            &InnerSample(vec![0.0]),
        );
        assert!(matches!(err, Err(crate::Error::Domain(_))));
        assert!(Decision::new(0).is_err());
    }

    #[test]
    fn conditional_means() {
        let d1 = Decision::new(1).unwrap();
        let d2 = Decision::new(2).unwrap();
        let cubic = model(SyntheticCase::Cubic);
        assert_eq!(
            cubic
                .conditional_mean(d2, &OuterSample(vec![-0.5]))
                .unwrap(),
            -0.125
        );
        let plateau = model(SyntheticCase::Plateau);
        assert_eq!(
            plateau
                .conditional_mean(d2, &OuterSample(vec![0.7]))
                .unwrap(),
            0.0
        );
        assert_eq!(
            plateau
                .conditional_mean(d2, &OuterSample(vec![1.5]))
                .unwrap(),
            0.5
        );
        assert_eq!(
            plateau
                .conditional_mean(d2, &OuterSample(vec![-2.0]))
                .unwrap(),
            -1.0
        );
        let linear = model(SyntheticCase::Linear);
        for x in [-3.0, 0.0, 2.5] {
            assert_eq!(
                linear.conditional_mean(d1, &OuterSample(vec![x])).unwrap(),
                0.0
            );
        }
    }

    #[test]
    fn plateau_is_flat_on_unit_interval() {
        let m = Synthetic::new(SyntheticCase::Plateau);
        for i in 0..=200 {
            let x = -1.0 + i as f64 * 0.01;
            assert_eq!(m.mean_gain(x), 0.0);
        }
    }

    #[test]
    fn inner_ignores_outer() {
        let m = model(SyntheticCase::Linear);
        let mut s1 = RandomStream::new(5);
        let mut s2 = RandomStream::new(5);
        let a = m.sample_inner(&OuterSample(vec![-4.0]), &mut s1);
        let b = m.sample_inner(&OuterSample(vec![4.0]), &mut s2);
        assert_eq!(a, b);
    }
}
