mod common;

use choquet_emv::choquet::{regularizer_of_quantile, BuiltinDistortion, DistortionFn, QuantileFn};
use choquet_emv::closedform::{classical_solution, lagrange_multiplier, optimal_policy, EmvSpec, MarketParams};
use choquet_emv::{LocationScalePolicy, RegularizerMode};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn builtin() -> impl Strategy<Value = BuiltinDistortion> {
    prop::sample::select(BuiltinDistortion::ALL.to_vec())
}

fn mode() -> impl Strategy<Value = RegularizerMode> {
    prop::sample::select(RegularizerMode::ALL.to_vec())
}

fn market() -> impl Strategy<Value = MarketParams> {
    (-0.5f64..0.5, 0.1f64..0.4)
        .prop_filter("rho must be away from zero", |(mu, sigma)| ((mu - 0.02) / sigma).abs() > 0.05)
        .prop_map(|(mu, sigma)| MarketParams::new(mu, sigma, 0.02).unwrap())
}

fn quantile_from(seed: u64) -> QuantileFn {
    common::random_quantile(&mut ChaCha8Rng::seed_from_u64(seed))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn regularizer_is_location_invariant(b in builtin(), seed in any::<u64>(), c in -5.0f64..5.0) {
        let h: DistortionFn = b.into();
        let q = quantile_from(seed);
        let base = regularizer_of_quantile(&h, &q).unwrap();
        let shifted = regularizer_of_quantile(&h, &q.affine(1.0, c)).unwrap();
        prop_assert!((base - shifted).abs() < 1e-10, "{base} vs {shifted}");
    }

    #[test]
    fn regularizer_is_positively_homogeneous(b in builtin(), seed in any::<u64>(), a in 0.1f64..10.0) {
        let h: DistortionFn = b.into();
        let q = quantile_from(seed);
        let base = regularizer_of_quantile(&h, &q).unwrap();
        let scaled = regularizer_of_quantile(&h, &q.affine(a, 0.0)).unwrap();
        prop_assert!((a * base - scaled).abs() < 1e-10, "{} vs {scaled}", a * base);
    }

    #[test]
    fn regularizer_is_nonnegative(b in builtin(), seed in any::<u64>()) {
        let v = regularizer_of_quantile(&b.into(), &quantile_from(seed)).unwrap();
        prop_assert!(v >= -1e-12, "{v}");
    }

    #[test]
    fn regularizer_increases_with_spread_in_family(b in builtin(), m in -3.0f64..3.0, s1 in 0.01f64..5.0, ds in 0.01f64..5.0) {
        let h: DistortionFn = b.into();
        let family = |s: f64| {
            let h = h.clone();
            QuantileFn::new(move |p| m + s * h.template(p))
        };
        let lo = regularizer_of_quantile(&h, &family(s1)).unwrap();
        let hi = regularizer_of_quantile(&h, &family(s1 + ds)).unwrap();
        prop_assert!(hi > lo);
    }

    #[test]
    fn policy_quantile_is_nondecreasing(b in builtin(), m in -3.0f64..3.0, s in 0.0f64..4.0) {
        let pol = LocationScalePolicy::new(b.into(), m, s).unwrap();
        let (lo, hi) = pol.support();
        let mut prev = f64::NEG_INFINITY;
        for i in 1..200 {
            let u = pol.sample(i as f64 / 200.0).unwrap();
            prop_assert!(u >= prev && u >= lo && u <= hi);
            prev = u;
        }
    }

    #[test]
    fn optimal_variance_decreases_in_time(mk in market(), md in mode(), b in builtin(), x in 0.0f64..3.0, lambda in 1e-3f64..1.0) {
        let spec = EmvSpec::new(1.0, lambda, 1.4, 1.0, md, b.into()).unwrap();
        let w = lagrange_multiplier(&spec, &mk).unwrap();
        let mut prev = f64::INFINITY;
        for i in 0..=20 {
            let (_, var) = optimal_policy(i as f64 / 20.0, x, &spec, &mk, w).unwrap().moments();
            prop_assert!(var < prev);
            prev = var;
        }
    }

    #[test]
    fn matched_norms_give_identical_plain_policies(mk in market(), t in 0.0f64..1.0, x in 0.0f64..3.0, lambda in 1e-3f64..1.0) {
        // gini rescaled by sqrt(3) has ||h'|| = 1, like gaussian_score
        let gini = DistortionFn::gini().scaled(3f64.sqrt()).unwrap();
        let specs = [DistortionFn::gaussian_score(), DistortionFn::entropy_like(), gini]
            .map(|h| EmvSpec::new(1.0, lambda, 1.4, 1.0, RegularizerMode::Plain, h).unwrap());
        let w = lagrange_multiplier(&specs[0], &mk).unwrap();
        let (m0, v0) = optimal_policy(t, x, &specs[0], &mk, w).unwrap().moments();
        for s in &specs[1..] {
            let (m, v) = optimal_policy(t, x, s, &mk, lagrange_multiplier(s, &mk).unwrap()).unwrap().moments();
            prop_assert!((m - m0).abs() <= 1e-12 * m0.abs().max(1.0));
            prop_assert!((v - v0).abs() <= 1e-12 * v0);
        }
    }

    #[test]
    fn classical_and_exploratory_share_multiplier_and_mean(mk in market(), t in 0.0f64..1.0, x in -1.0f64..3.0, b in builtin()) {
        let plain = EmvSpec::new(1.0, 0.01, 1.4, 1.0, RegularizerMode::Plain, b.into()).unwrap();
        let log = plain.with_mode(RegularizerMode::Log).with_lambda(0.1).unwrap();
        let w = lagrange_multiplier(&plain, &mk).unwrap();
        prop_assert_eq!(w, lagrange_multiplier(&log, &mk).unwrap());
        let (u, _) = classical_solution(t, x, &plain, &mk, w).unwrap();
        prop_assert_eq!(optimal_policy(t, x, &plain, &mk, w).unwrap().location, u);
        prop_assert_eq!(optimal_policy(t, x, &log, &mk, w).unwrap().location, u);
    }
}
