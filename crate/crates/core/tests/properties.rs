mod common;

use isac_beam::optimizer::DesignLabel;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn outer_products_pass_and_negative_shifts_fail_psd_check(v in common::beamformer_values(), s in 1e-6f64..1e-2) {
        common::psd_tolerance(&v, s)?;
    }

    #[test]
    fn af_magnitude_ignores_global_phase(
        v in common::beamformer_values(),
        phase in 0.0..std::f64::consts::TAU,
        theta in -80.0f64..80.0,
        lag in -16i64..=16,
    ) {
        common::phase_invariance(&v, phase, theta, lag)?;
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn wider_mask_never_lowers_isl(
        v in common::beamformer_values(),
        inner in 0.0f64..120.0,
        outer in 150.0f64..240.0,
        grow in 0.0f64..90.0,
    ) {
        common::mask_monotonicity(&v, inner, outer, grow)?;
    }

    #[test]
    fn vectorized_isl_is_quadratic(v in common::beamformer_values(), c in 0.01f64..100.0) {
        common::quadratic_homogeneity(&v, c)?;
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 3, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn pipeline_is_deterministic(
        seed in 1u64..1000,
        label in prop::sample::select(vec![DesignLabel::Proposed, DesignLabel::JointMaxgain, DesignLabel::BpMatching]),
    ) {
        common::pipeline_determinism(seed, label)?;
    }
}
