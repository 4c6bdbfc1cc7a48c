//! Metrics and exported series: range/angle cuts, range-angle heatmaps,
//! beampatterns and ISLR sweeps over the SINR and gain requirements.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::ambiguity::{self, to_db, AfEvaluator, AmbiguityError, AngleGrid};
use crate::array::{self, ArrayError, ArrayGeometry};
use crate::channel::{user_sinr, ChannelError, ChannelSet};
use crate::experiment::{Scenario, ScenarioError};
use crate::optimizer::{CovarianceSet, DesignLabel, DesignProblem};
use crate::units::linear_to_db;
use crate::waveform::{AFCorrelationMatrix, SidelobeMask};
use crate::CMatrix;

/// Display step of the cuts, degrees.
pub const CUT_STEP_DEG: f64 = 0.1;
/// Display step of the heatmaps, degrees.
pub const HEATMAP_STEP_DEG: f64 = 0.25;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Ambiguity(#[from] AmbiguityError),
    #[error(transparent)]
    Array(#[from] ArrayError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Sensing and communication figures of one beamformer.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsBundle {
    pub design_label: DesignLabel,
    /// ISLR of the full ambiguity function over the optimization region.
    pub islr_db: f64,
    /// ISLR with the cross-user correlation terms dropped, as optimized.
    pub islr_vectorized_db: f64,
    pub per_user_sinr_db: Vec<f64>,
    pub total_power_mw: f64,
    pub target_gain_mw: f64,
}

/// Evaluate every metric of `w` on the problem it was designed for.
pub fn metrics(
    w: &CMatrix,
    label: DesignLabel,
    p: &DesignProblem,
) -> Result<MetricsBundle, EvalError> {
    let theta0 = p.constraints.theta0;
    let isl = ambiguity::isl_direct(w, p.geometry, p.corr, p.mask, theta0, p.omega)?;
    let isl_vec = ambiguity::isl_vectorized(
        &CovarianceSet::from_beamformer(w),
        p.geometry,
        p.corr,
        p.mask,
        theta0,
        p.omega,
    )?;
    let peak = ambiguity::mainlobe(w, p.geometry, p.corr, theta0, false)?;
    Ok(MetricsBundle {
        design_label: label,
        islr_db: ambiguity::islr_from_peak(isl, peak)?,
        islr_vectorized_db: ambiguity::islr_from_peak(isl_vec, peak)?,
        per_user_sinr_db: user_sinr(w, p.channels, p.constraints.noise_power)?
            .into_iter()
            .map(linear_to_db)
            .collect(),
        total_power_mw: w.norm_squared(),
        target_gain_mw: array::target_gain(w, p.geometry, 0.0, theta0)?,
    })
}

/// `(axis value, magnitude dB)` samples normalized to a 0 dB peak.
pub type Series = Vec<(f64, f64)>;

fn normalize(raw: Vec<(f64, f64)>) -> Series {
    let peak = raw.iter().map(|&(_, m)| m).fold(0.0, f64::max);
    raw.into_iter()
        .map(|(x, m)| {
            (
                x,
                if peak > 0.0 {
                    to_db((m / peak).powi(2))
                } else {
                    ambiguity::DB_FLOOR
                },
            )
        })
        .collect()
}

/// Open display grid over `(-90, 90)` degrees.
pub fn display_angles_deg(step_deg: f64) -> Vec<f64> {
    let n = (90.0 / step_deg).round() as i64;
    (1 - n..n).map(|i| i as f64 * step_deg).collect()
}

fn zero_doppler(corr: &AFCorrelationMatrix) -> usize {
    corr.grid().doppler_index(0.0).unwrap_or(0)
}

/// AF magnitude along range at `theta1 = theta0` and zero Doppler, over every
/// lag of the correlation window.
pub fn range_cut(
    w: &CMatrix,
    geometry: &ArrayGeometry,
    corr: &AFCorrelationMatrix,
    theta0: f64,
    include_receive_factor: bool,
) -> Result<Series, EvalError> {
    let eval = AfEvaluator::new(w, geometry, corr, theta0)?;
    let d = zero_doppler(corr);
    let bin = corr.range_bin();
    let raw = corr
        .grid()
        .lags()
        .iter()
        .enumerate()
        .map(|(l, &lag)| {
            (
                lag as f64 * bin,
                eval.magnitude(theta0, l, d, include_receive_factor),
            )
        })
        .collect();
    Ok(normalize(raw))
}

/// AF magnitude along `theta1` (degrees) at zero lag and zero Doppler.
pub fn angle_cut(
    w: &CMatrix,
    geometry: &ArrayGeometry,
    corr: &AFCorrelationMatrix,
    theta0: f64,
    angles_deg: &[f64],
    include_receive_factor: bool,
) -> Result<Series, EvalError> {
    let eval = AfEvaluator::new(w, geometry, corr, theta0)?;
    let d = zero_doppler(corr);
    let l0 = corr
        .grid()
        .lag_index(0)
        .ok_or(AmbiguityError::OffGridRange(0.0))?;
    let raw = angles_deg
        .iter()
        .map(|&t| {
            (
                t,
                eval.magnitude(t.to_radians(), l0, d, include_receive_factor),
            )
        })
        .collect();
    Ok(normalize(raw))
}

/// Range-angle magnitudes, normalized to the global peak.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub angles_deg: Vec<f64>,
    pub delta_r_m: Vec<f64>,
    /// Row-major `[angle][lag]`, dB.
    pub mag_db: Vec<f64>,
}

impl Heatmap {
    pub fn at(&self, angle_idx: usize, lag_idx: usize) -> f64 {
        self.mag_db[angle_idx * self.delta_r_m.len() + lag_idx]
    }
}

pub fn heatmap(
    w: &CMatrix,
    geometry: &ArrayGeometry,
    corr: &AFCorrelationMatrix,
    theta0: f64,
    angles_deg: &[f64],
    include_receive_factor: bool,
) -> Result<Heatmap, EvalError> {
    let eval = AfEvaluator::new(w, geometry, corr, theta0)?;
    let d = zero_doppler(corr);
    let lags = corr.grid().num_lags();
    let mags: Vec<f64> = angles_deg
        .par_iter()
        .flat_map_iter(|&t| {
            let eval = &eval;
            let ups = eval.upsilon(0.0, t.to_radians());
            let rf = if include_receive_factor {
                eval.receive_factor(0.0, t.to_radians()).norm()
            } else {
                1.0
            };
            (0..lags).map(move |l| eval.cell(l, d, &ups).norm() * rf)
        })
        .collect();
    let peak = mags.iter().copied().fold(0.0, f64::max);
    let mag_db = mags
        .iter()
        .map(|&m| {
            if peak > 0.0 {
                to_db((m / peak).powi(2))
            } else {
                ambiguity::DB_FLOOR
            }
        })
        .collect();
    let bin = corr.range_bin();
    Ok(Heatmap {
        angles_deg: angles_deg.to_vec(),
        delta_r_m: corr.grid().lags().iter().map(|&l| l as f64 * bin).collect(),
        mag_db,
    })
}

/// Transmit beampattern of `w` in dBm per angle (degrees).
pub fn beampattern_dbm(
    w: &CMatrix,
    geometry: &ArrayGeometry,
    angles_deg: &[f64],
) -> Result<Series, EvalError> {
    let r_w = w * w.adjoint();
    let rads: Vec<f64> = angles_deg.iter().map(|a| a.to_radians()).collect();
    let gains = array::beampattern(&r_w, geometry, &rads)?;
    Ok(angles_deg
        .iter()
        .zip(gains)
        .map(|(&a, g)| (a, to_db(g)))
        .collect())
}

/// Largest range-cut value inside the masked lags.
pub fn max_masked_sidelobe_db(
    cut: &Series,
    corr: &AFCorrelationMatrix,
    mask: &SidelobeMask,
) -> f64 {
    let d = zero_doppler(corr);
    cut.iter()
        .enumerate()
        .filter(|&(l, _)| mask.cell(l, d))
        .map(|(_, &(_, v))| v)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Angle-cut values at the sidelobe angles `omega`.
pub fn cut_over_omega(
    w: &CMatrix,
    geometry: &ArrayGeometry,
    corr: &AFCorrelationMatrix,
    theta0: f64,
    omega: &AngleGrid,
    include_receive_factor: bool,
) -> Result<Vec<f64>, EvalError> {
    // normalize against the zero-lag peak at theta0, the same reference as the full cut
    let mut angles: Vec<f64> = omega.angles().iter().map(|a| a.to_degrees()).collect();
    angles.push(theta0.to_degrees());
    let cut = angle_cut(w, geometry, corr, theta0, &angles, include_receive_factor)?;
    Ok(cut[..omega.len()].iter().map(|&(_, v)| v).collect())
}

pub fn median(values: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// One `(SINR floor, gain target, design)` cell of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub gamma_c_db: f64,
    pub gamma_s_db: f64,
    pub design: DesignLabel,
    /// `None` when no seed produced a certified design.
    pub median_islr_db: Option<f64>,
    pub n_seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn get(&self, gamma_c_db: f64, gamma_s_db: f64, design: DesignLabel) -> Option<&SweepRow> {
        self.rows.iter().find(|r| {
            r.gamma_c_db == gamma_c_db && r.gamma_s_db == gamma_s_db && r.design == design
        })
    }

    /// Max minus min of the proposed design's medians along the SINR axis at
    /// a fixed gain target.
    pub fn proposed_spread(&self, gamma_s_db: f64) -> Option<f64> {
        let vals: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.gamma_s_db == gamma_s_db && r.design == DesignLabel::Proposed)
            .filter_map(|r| r.median_islr_db)
            .collect();
        let lo = vals.iter().copied().reduce(f64::min)?;
        let hi = vals.iter().copied().reduce(f64::max)?;
        Some(hi - lo)
    }
}

/// Median ISLR over `n_seeds` channel draws for every grid cell and design.
///
/// Jobs run on the rayon pool; each uses the channel stream of its seed and
/// the randomization stream of its cell, so results do not depend on the
/// scheduling. Infeasible or uncertified draws are logged and skipped.
pub fn sweep_islr(
    scenario: &Scenario,
    gamma_c_db: &[f64],
    gamma_s_db: &[f64],
    designs: &[DesignLabel],
    n_seeds: usize,
) -> Result<SweepResult, EvalError> {
    let channels: Vec<ChannelSet> = (0..n_seeds as u64)
        .map(|s| scenario.channels(scenario.seed + s))
        .collect::<Result<_, _>>()?;
    let mut cells = Vec::new();
    for &gs in gamma_s_db {
        for &gc in gamma_c_db {
            for &d in designs {
                cells.push((gc, gs, d));
            }
        }
    }
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..n_seeds).map(move |s| (c, s)))
        .collect();
    let values: Vec<Option<f64>> = jobs
        .par_iter()
        .map(|&(c, s)| {
            let (gc, gs, d) = cells[c];
            let mut p = scenario.problem(&channels[s]);
            p.constraints.sinr_min = crate::units::db_to_linear(gc);
            p.constraints.gain_target = crate::units::db_to_linear(gs);
            let seed = crate::experiment::derive_seed(
                scenario.seed + s as u64,
                crate::experiment::streams::SWEEP_CELL_BASE + c as u64,
            );
            match scenario.design_with_seed(d, &p, seed) {
                Ok(o) if o.certificate.passed() => metrics(&o.w, d, &p).map(|m| m.islr_db).ok(),
                Ok(o) => {
                    log::warn!(
                        "sweep {d} at ({gc} dB, {gs} dB) seed {s}: uncertified {:?}",
                        o.certificate.failures()
                    );
                    None
                }
                Err(e) => {
                    log::warn!("sweep {d} at ({gc} dB, {gs} dB) seed {s}: {e}");
                    None
                }
            }
        })
        .collect();
    let rows = cells
        .iter()
        .enumerate()
        .map(|(c, &(gc, gs, d))| {
            let ok: Vec<f64> = values[c * n_seeds..(c + 1) * n_seeds]
                .iter()
                .flatten()
                .copied()
                .collect();
            SweepRow {
                gamma_c_db: gc,
                gamma_s_db: gs,
                design: d,
                median_islr_db: median(&ok),
                n_seeds: ok.len(),
            }
        })
        .collect();
    Ok(SweepResult { rows })
}

#[derive(Serialize)]
struct HeatmapRow {
    design: DesignLabel,
    theta_deg: f64,
    delta_r_m: f64,
    mag_db: f64,
}

#[derive(Serialize)]
struct CutRow {
    design: DesignLabel,
    axis_value: f64,
    mag_db: f64,
}

#[derive(Serialize)]
struct BeampatternRow {
    design: DesignLabel,
    theta_deg: f64,
    gain_dbm: f64,
}

pub fn write_heatmap_csv<W: Write>(
    out: W,
    design: DesignLabel,
    h: &Heatmap,
) -> Result<(), EvalError> {
    let mut wr = csv::Writer::from_writer(out);
    for (i, &theta_deg) in h.angles_deg.iter().enumerate() {
        for (l, &delta_r_m) in h.delta_r_m.iter().enumerate() {
            wr.serialize(HeatmapRow {
                design,
                theta_deg,
                delta_r_m,
                mag_db: h.at(i, l),
            })?;
        }
    }
    wr.flush()?;
    Ok(())
}

pub fn write_cut_csv<W: Write>(out: W, cuts: &[(DesignLabel, Series)]) -> Result<(), EvalError> {
    let mut wr = csv::Writer::from_writer(out);
    for (design, series) in cuts {
        for &(axis_value, mag_db) in series {
            wr.serialize(CutRow {
                design: *design,
                axis_value,
                mag_db,
            })?;
        }
    }
    wr.flush()?;
    Ok(())
}

pub fn write_beampattern_csv<W: Write>(
    out: W,
    patterns: &[(DesignLabel, Series)],
) -> Result<(), EvalError> {
    let mut wr = csv::Writer::from_writer(out);
    for (design, series) in patterns {
        for &(theta_deg, gain_dbm) in series {
            wr.serialize(BeampatternRow {
                design: *design,
                theta_deg,
                gain_dbm,
            })?;
        }
    }
    wr.flush()?;
    Ok(())
}

/// Absent cells leave the median column empty.
pub fn write_sweep_csv<W: Write>(out: W, sweep: &SweepResult) -> Result<(), EvalError> {
    let mut wr = csv::Writer::from_writer(out);
    for r in &sweep.rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::waveform::{
        build_correlation_matrix, build_mask, CorrelationKind, RangeDopplerGrid, RangeInterval,
        WaveformSet,
    };
    use crate::C64;

    fn setup() -> (ArrayGeometry, AFCorrelationMatrix, SidelobeMask, CMatrix) {
        let g = ArrayGeometry::half_wavelength(8, 3.5e9).unwrap();
        let waves = WaveformSet::zadoff_chu(&[1, 3], 64, 10e6).unwrap();
        let grid = RangeDopplerGrid::symmetric(16);
        let corr = build_correlation_matrix(&waves, &grid, CorrelationKind::Aperiodic).unwrap();
        let mask = build_mask(
            &grid,
            10e6,
            &[
                RangeInterval::new(-240.0, -30.0),
                RangeInterval::new(30.0, 240.0),
            ],
        )
        .unwrap();
        let w = CMatrix::from_fn(8, 2, |m, k| {
            C64::from_polar(0.25, 0.3 * (m * (k + 1)) as f64)
        });
        (g, corr, mask, w)
    }

    #[test]
    fn range_cut_peaks_at_zero_lag() {
        let (g, corr, _, w) = setup();
        let cut = range_cut(&w, &g, &corr, 0.0, true).unwrap();
        let (zero, val) = cut.iter().copied().find(|&(r, _)| r == 0.0).unwrap();
        assert_eq!(zero, 0.0);
        assert_eq!(val, 0.0);
        assert!(cut.iter().all(|&(_, v)| v <= 0.0));
    }

    #[test]
    fn angle_cut_is_normalized() {
        let (g, corr, _, w) = setup();
        let cut = angle_cut(&w, &g, &corr, 0.0, &display_angles_deg(CUT_STEP_DEG), false).unwrap();
        assert_eq!(cut.len(), 1799);
        let max = cut
            .iter()
            .map(|&(_, v)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(max, 0.0);
    }

    #[test]
    fn heatmap_of_zero_beamformer_is_floor() {
        let (g, corr, _, _) = setup();
        let h = heatmap(
            &CMatrix::zeros(8, 2),
            &g,
            &corr,
            0.0,
            &[-10.0, 0.0, 10.0],
            true,
        )
        .unwrap();
        assert!(h.mag_db.iter().all(|&v| v == ambiguity::DB_FLOOR));
    }

    #[test]
    fn masked_sidelobe_ignores_unmasked_lags() {
        let (g, corr, mask, w) = setup();
        let cut = range_cut(&w, &g, &corr, 0.0, false).unwrap();
        let inside = max_masked_sidelobe_db(&cut, &corr, &mask);
        assert!(inside < 0.0, "mainlobe lag is outside the mask");
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn cut_csv_has_schema_header() {
        let mut buf = Vec::new();
        write_cut_csv(
            &mut buf,
            &[(DesignLabel::Proposed, vec![(0.0, 0.0), (15.0, -20.5)])],
        )
        .unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(
            text.starts_with("design,axis_value,mag_db\nproposed,0.0,0.0\n"),
            "{text}"
        );
    }

    #[test]
    fn sweep_csv_leaves_absent_medians_empty() {
        let sweep = SweepResult {
            rows: vec![SweepRow {
                gamma_c_db: 16.0,
                gamma_s_db: 13.0,
                design: DesignLabel::CommOnly,
                median_islr_db: None,
                n_seeds: 0,
            }],
        };
        let mut buf = Vec::new();
        write_sweep_csv(&mut buf, &sweep).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "gamma_c_db,gamma_s_db,design,median_islr_db,n_seeds\n16.0,13.0,comm_only,,0\n"
        );
    }
}
