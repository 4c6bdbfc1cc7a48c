//! Fixtures and property bodies shared by the property suite and the
//! acceptance runner.
#![allow(dead_code)]

use isac_beam::ambiguity::{af_value, isl_direct, isl_vectorized, AngleGrid, TargetParams};
use isac_beam::array::ArrayGeometry;
use isac_beam::config::ExperimentConfig;
use isac_beam::experiment::Scenario;
use isac_beam::optimizer::{CovarianceSet, DesignLabel, PSD_TOLERANCE};
use isac_beam::waveform::{
    build_correlation_matrix, build_mask, AFCorrelationMatrix, CorrelationKind, RangeDopplerGrid,
    RangeInterval, SidelobeMask, WaveformSet,
};
use isac_beam::{CMatrix, C64};
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;

pub const M: usize = 8;
pub const K: usize = 2;

/// Eight antennas, two length-64 ZC waveforms, 33 range lags.
pub struct Small {
    pub geometry: ArrayGeometry,
    pub corr: AFCorrelationMatrix,
    pub mask: SidelobeMask,
    pub omega: AngleGrid,
}

pub fn small() -> Small {
    let geometry = ArrayGeometry::half_wavelength(M, 3.5e9).unwrap();
    let waves = WaveformSet::zadoff_chu(&[1, 3], 64, 10e6).unwrap();
    let grid = RangeDopplerGrid::symmetric(16);
    let corr = build_correlation_matrix(&waves, &grid, CorrelationKind::Aperiodic).unwrap();
    let mask = build_mask(&grid, 10e6, &region(30.0, 240.0)).unwrap();
    let omega = AngleGrid::from_degree_intervals(&[(-10.0, -5.0), (5.0, 10.0)], 0.5).unwrap();
    Small {
        geometry,
        corr,
        mask,
        omega,
    }
}

pub fn region(inner: f64, outer: f64) -> Vec<RangeInterval> {
    vec![
        RangeInterval::new(-outer, -inner),
        RangeInterval::new(inner, outer),
    ]
}

pub fn matrix_from(values: &[f64], rows: usize, cols: usize) -> CMatrix {
    CMatrix::from_fn(rows, cols, |r, c| {
        let i = 2 * (r * cols + c);
        C64::new(values[i], values[i + 1])
    })
}

pub fn beamformer_values() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, 2 * M * K)
}

/// Outer products are PSD within tolerance, and a clearly negative
/// eigenvalue is detected.
pub fn psd_tolerance(values: &[f64], shift: f64) -> Result<(), TestCaseError> {
    let w = matrix_from(values, M, K);
    let cov = CovarianceSet::from_beamformer(&w);
    prop_assert!(
        cov.is_psd(),
        "outer products flagged non-PSD: {:?}",
        cov.min_eigen_ratios()
    );
    let r = &cov.as_slice()[0];
    let scale = r.norm();
    prop_assume!(scale > 1e-6);
    let bent = r - CMatrix::identity(M, M) * C64::from(shift * scale);
    let bent = CovarianceSet::new(vec![bent, cov.as_slice()[1].clone()]).unwrap();
    prop_assert!(
        !bent.is_psd(),
        "shift {shift} below -{PSD_TOLERANCE} not detected"
    );
    Ok(())
}

/// `|chi|` ignores a global phase on `W`.
pub fn phase_invariance(
    values: &[f64],
    phase: f64,
    theta1_deg: f64,
    lag: i64,
) -> Result<(), TestCaseError> {
    let s = small();
    let w = matrix_from(values, M, K);
    let rotated = &w * C64::from_polar(1.0, phase);
    let bin = s.corr.range_bin();
    let t0 = TargetParams::new(600.0, 0.0, 0.0);
    let t1 = TargetParams::new(600.0 + lag as f64 * bin, 0.0, theta1_deg.to_radians());
    let a = af_value(&w, &s.geometry, &s.corr, &t0, &t1, true).unwrap();
    let b = af_value(&rotated, &s.geometry, &s.corr, &t0, &t1, true).unwrap();
    prop_assert!((a.value.norm() - b.value.norm()).abs() <= 1e-9 * a.value.norm().max(1e-12));
    prop_assert!((a.phase.norm() - 1.0).abs() < 1e-12);
    Ok(())
}

/// A larger sidelobe region never lowers the direct ISL.
pub fn mask_monotonicity(
    values: &[f64],
    inner: f64,
    outer: f64,
    grow: f64,
) -> Result<(), TestCaseError> {
    let s = small();
    let w = matrix_from(values, M, K);
    let grid = s.corr.grid();
    let narrow = build_mask(grid, 10e6, &region(inner, outer)).unwrap();
    let wide = build_mask(grid, 10e6, &region((inner - grow).max(0.0), outer)).unwrap();
    prop_assert!(narrow.is_subset_of(&wide));
    let a = isl_direct(&w, &s.geometry, &s.corr, &narrow, 0.0, &s.omega).unwrap();
    let b = isl_direct(&w, &s.geometry, &s.corr, &wide, 0.0, &s.omega).unwrap();
    prop_assert!(b >= a * (1.0 - 1e-12), "{b} < {a}");
    Ok(())
}

/// Scaling every `R_k` by `c` scales the vectorized ISL by `c^2`.
pub fn quadratic_homogeneity(values: &[f64], c: f64) -> Result<(), TestCaseError> {
    let s = small();
    let cov = CovarianceSet::from_beamformer(&matrix_from(values, M, K));
    let base = isl_vectorized(&cov, &s.geometry, &s.corr, &s.mask, 0.0, &s.omega).unwrap();
    let scaled =
        isl_vectorized(&cov.scaled(c), &s.geometry, &s.corr, &s.mask, 0.0, &s.omega).unwrap();
    prop_assert!((scaled - c * c * base).abs() <= 1e-10 * (c * c * base).max(1e-300));
    Ok(())
}

/// Small scenario config for the end-to-end pipeline.
pub fn pipeline_config(seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::from_toml_str(
        r#"
        [system]
        num_antennas = 8
        num_users = 2
        gain_target = "4.4 mW"
        [regions]
        range = "[-240,-30]∪[30,240] m"
        angular = "[-10,-5]∪[5,10] deg, step 0.5"
        [waveform]
        length = 64
        [solver]
        randomizations = 64
        # length-64 codes have larger cross-correlation than the reference 512
        cross_threshold = 1.0
        "#,
    )
    .unwrap();
    cfg.run.seed = seed;
    cfg
}

/// Two runs of the same design from the same seed agree bit for bit.
pub fn pipeline_determinism(seed: u64, label: DesignLabel) -> Result<(), TestCaseError> {
    let cfg = pipeline_config(seed);
    let run = || {
        let sc = Scenario::from_config(&cfg).unwrap();
        let ch = sc.channels(seed).unwrap();
        let p = sc.problem(&ch);
        sc.design(label, &p, seed).map(|o| o.w)
    };
    match (run(), run()) {
        (Ok(a), Ok(b)) => prop_assert_eq!(a, b),
        (a, b) => prop_assert!(false, "design failed: {:?} / {:?}", a.err(), b.err()),
    }
    Ok(())
}
