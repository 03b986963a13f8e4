//! Level statistics, rate fits and sweeps.

use evppi_core::diagnostics::{fit_rates, level_stats, level_sweep, LevelStats};
use evppi_core::estimators::nested_mc;
use evppi_core::mlmc::optimal_allocation;
use evppi_core::models::{self, BUILTIN_MODELS};
use evppi_core::stats::MomentAccumulator;
use evppi_core::RandomStream;
use proptest::prelude::*;

#[test]
fn gaussian_kurtosis_is_three() {
    let mut s = RandomStream::new(51);
    let z: Vec<f64> = (0..1_000_000).map(|_| s.standard_normal()).collect();
    let st = level_stats(&z, &z, 1).unwrap();
    let k = st.kurtosis_z.unwrap();
    assert!((k - 3.0).abs() < 0.1, "kurtosis {k}");
}

#[test]
fn model1_kurtosis_grows_with_level() {
    let model = models::builtin("synthetic1").unwrap();
    let stats = level_sweep(model.as_ref(), 8, 200_000, &RandomStream::new(52)).unwrap();
    let k: Vec<f64> = stats[2..=8].iter().map(|s| s.kurtosis_z.unwrap()).collect();
    assert!(k.windows(2).all(|w| w[1] > w[0]), "kurtosis {k:?}");
    assert_eq!(stats[0].mean_p, 0.0);
    assert_eq!(stats[0].var_p, 0.0);
}

/// `V[P_l]` at a fine level against a brute-force estimate of `V[P]`
/// with `2^14` inner samples.
#[test]
fn fine_level_variance_of_p_approaches_limit() {
    let model = models::builtin("synthetic1").unwrap();
    let stats = level_sweep(model.as_ref(), 10, 100_000, &RandomStream::new(53)).unwrap();
    let n = 10_000;
    let brute = nested_mc(model.as_ref(), n, 1 << 14, &RandomStream::new(54)).unwrap();
    let v_brute = brute.std_error * brute.std_error * n as f64;
    let v10 = stats[10].var_p;
    assert!(
        (v10 / v_brute - 1.0).abs() < 0.15,
        "V[P_10] {v10} vs brute force {v_brute}"
    );
    assert!((stats[9].var_p / v10 - 1.0).abs() < 0.1);
}

#[test]
fn rates_respect_weak_strong_relation() {
    for name in BUILTIN_MODELS {
        let model = models::builtin(name).unwrap();
        let (levels, n) = if name == "bkoc" {
            (8, 20_000)
        } else {
            (10, 100_000)
        };
        let stats = level_sweep(model.as_ref(), levels, n, &RandomStream::new(55)).unwrap();
        let r = fit_rates(&stats, 2).unwrap();
        assert!(
            r.alpha >= r.beta / 2.0 - 0.15,
            "{name}: alpha {} beta {}",
            r.alpha,
            r.beta
        );
        assert_eq!(r.gamma, 1.0);
    }
}

#[test]
fn sweep_statistics_are_reproducible() {
    let model = models::builtin("synthetic2").unwrap();
    let a = level_sweep(model.as_ref(), 5, 5_000, &RandomStream::new(56)).unwrap();
    let b = level_sweep(model.as_ref(), 5, 5_000, &RandomStream::new(56)).unwrap();
    assert_eq!(a, b);
    assert!(a.iter().all(|s| s.n == 5_000));
    assert_eq!(
        a.iter().map(|s| s.level).collect::<Vec<_>>(),
        (0..=5).collect::<Vec<_>>()
    );
}

fn planted(alpha: f64, beta: f64) -> Vec<LevelStats> {
    (1..=9)
        .map(|l| LevelStats {
            level: l,
            n: 100,
            mean_z: 0.7 * 2f64.powf(-alpha * l as f64),
            var_z: 2.5 * 2f64.powf(-beta * l as f64),
            kurtosis_z: None,
            mean_p: 0.0,
            var_p: 0.0,
            cost_per_sample: 1 << l,
        })
        .collect()
}

proptest! {
    #[test]
    fn kurtosis_is_affine_invariant(
        z in prop::collection::vec(-10.0f64..10.0, 8..200),
        a in prop_oneof![-100.0f64..-0.01, 0.01f64..100.0],
        b in -1e3f64..1e3,
    ) {
        let st = level_stats(&z, &z, 1).unwrap();
        let moved: Vec<f64> = z.iter().map(|x| a * x + b).collect();
        let st2 = level_stats(&moved, &moved, 1).unwrap();
        if let Some(k1) = st.kurtosis_z {
            let k2 = st2.kurtosis_z.expect("spread survives an affine map");
            prop_assert!((k1 - k2).abs() <= 1e-6 * k1, "{} vs {}", k1, k2);
        }
    }

    #[test]
    fn planted_rates_are_recovered(alpha in 0.3f64..3.0, beta in 0.3f64..3.0) {
        let r = fit_rates(&planted(alpha, beta), 2).unwrap();
        prop_assert!((r.alpha - alpha).abs() < 1e-9);
        prop_assert!((r.beta - beta).abs() < 1e-9);
        prop_assert!(r.r_squared_alpha > 1.0 - 1e-12);
        prop_assert!(r.r_squared_beta > 1.0 - 1e-12);
    }

    #[test]
    fn allocation_meets_variance_budget(
        v in prop::collection::vec(1e-8f64..10.0, 1..12),
        eps in 1e-4f64..1.0,
    ) {
        let costs: Vec<f64> = (1..=v.len()).map(|l| 2f64.powi(l as i32)).collect();
        let a = optimal_allocation(&v, &costs, eps, 1).unwrap();
        let spent: f64 = v.iter().zip(&a.samples).map(|(v, &n)| v / n as f64).sum();
        prop_assert!(spent <= eps * eps / 2.0 * (1.0 + 1e-12));
    }

    #[test]
    fn geometric_variances_give_decreasing_allocation(beta in 1.0f64..3.0, v1 in 1e-4f64..1.0, eps in 1e-4f64..0.1) {
        let v: Vec<f64> = (1..=10).map(|l| v1 * 2f64.powf(-beta * (l - 1) as f64)).collect();
        let costs: Vec<f64> = (1..=10).map(|l| 2f64.powi(l)).collect();
        let a = optimal_allocation(&v, &costs, eps, 1).unwrap();
        prop_assert!(a.samples.windows(2).all(|w| w[0] >= w[1]), "{:?}", a.samples);
    }

    #[test]
    fn merged_moments_match_sequential(xs in prop::collection::vec((-50.0f64..50.0, 0.0f64..50.0), 2..300), split in 0usize..300) {
        let split = split.min(xs.len());
        let mut whole = MomentAccumulator::new();
        let (mut left, mut right) = (MomentAccumulator::new(), MomentAccumulator::new());
        for (i, &(z, p)) in xs.iter().enumerate() {
            whole.push(z, p, 2);
            if i < split { left.push(z, p, 2) } else { right.push(z, p, 2) }
        }
        left.merge(&right);
        prop_assert_eq!(left.n, whole.n);
        prop_assert_eq!(left.cost, whole.cost);
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * (1.0 + a.abs());
        prop_assert!(close(left.mean_z(), whole.mean_z()));
        prop_assert!(close(left.var_z(), whole.var_z()));
        prop_assert!(close(left.var_p(), whole.var_p()));
    }
}
