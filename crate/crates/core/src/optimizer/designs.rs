//! The six designs of the comparison family, each returning certified
//! beamformers with solver and extraction diagnostics.

use serde::{Deserialize, Serialize};

use super::certify::{certify, Certificate};
use super::conic::{solve, ConicSolution, SolveStatus};
use super::extract::{
    align_phases, extract_beamformers, operating_scale, ExtractionPath, ExtractionReport, Scorer,
};
use super::qsdp::{
    build_isl_design, build_matching, build_max_gain, build_min_power, build_min_weighted,
    Formulation, Reduction,
};
use super::{CovarianceSet, DesignLabel, DesignProblem, OptimizerError};
use crate::{CMatrix, C64};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesignOptions {
    /// Relative duality-gap target of each conic solve.
    pub eps: f64,
    pub randomizations: usize,
    /// Seed of the randomization streams.
    pub seed: u64,
    pub reduction: Reduction,
    /// Largest masked cross-correlation ratio accepted before the separable
    /// sidelobe objective is used.
    pub cross_threshold: f64,
    /// Full width of the desired mainlobe of the beampattern baselines, rad.
    pub mainlobe_width: f64,
    /// Spacing of the worst-gain constraints of the min-weighted baseline,
    /// rad. Denser grids make the constraints nearly dependent.
    pub mainlobe_step: f64,
    /// Angle step of the beampattern grids, rad.
    pub pattern_step: f64,
    pub bisection_tol_db: f64,
    pub bisection_max_iter: usize,
    /// Relative tightening of the SINR floor inside the conic problems, so
    /// that solver residuals do not leave returned beamformers under it.
    pub sinr_margin: f64,
}

impl Default for DesignOptions {
    fn default() -> Self {
        Self {
            eps: 1e-7,
            randomizations: 500,
            seed: 0,
            reduction: Reduction::default(),
            cross_threshold: 0.1,
            mainlobe_width: 10f64.to_radians(),
            mainlobe_step: 1f64.to_radians(),
            pattern_step: 0.1f64.to_radians(),
            bisection_tol_db: 0.01,
            bisection_max_iter: 60,
            sinr_margin: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BeampatternMode {
    Matching,
    MinWeighted,
}

#[derive(Debug, Clone)]
pub struct DesignOutcome {
    pub label: DesignLabel,
    pub w: CMatrix,
    /// Relaxed covariance solution lifted to the full space.
    pub relaxed: CovarianceSet,
    pub status: SolveStatus,
    /// Relative duality gap of the final solve.
    pub gap: f64,
    pub iterations: u32,
    pub solve_time: f64,
    pub reduced_dim: usize,
    pub extraction: ExtractionReport,
    pub certificate: Certificate,
}

fn solve_checked(form: &Formulation, eps: f64) -> Result<ConicSolution, OptimizerError> {
    let sol = solve(&form.problem, eps)?;
    log::info!(
        "{}: {} (order {} blocks, {} vars)",
        form.label,
        sol.diagnostics,
        form.reduced_dim(),
        form.problem.num_vars()
    );
    match sol.status {
        SolveStatus::Optimal | SolveStatus::NearOptimal => Ok(sol),
        SolveStatus::Infeasible => Err(OptimizerError::Infeasible(format!(
            "{}: solver certificate of infeasibility ({})",
            form.label, sol.diagnostics
        ))),
        SolveStatus::Error => Err(OptimizerError::Solver {
            status: sol.status,
            diagnostics: sol.diagnostics,
        }),
    }
}

fn finish(
    form: &Formulation,
    sol: &ConicSolution,
    p: &DesignProblem,
    scorer: &Scorer,
    bound: f64,
    opts: &DesignOptions,
) -> Result<DesignOutcome, OptimizerError> {
    let reduced = form.reduced_covariances(sol);
    let (w, extraction) = extract_beamformers(
        form,
        &reduced,
        p,
        scorer,
        bound,
        opts.randomizations,
        opts.seed,
    )?;
    let certificate = certify(
        &w,
        form.label,
        &p.constraints,
        p.channels,
        p.geometry,
        &extraction.path,
    )?;
    if !certificate.passed() {
        log::warn!(
            "{}: certification failed: {:?}",
            form.label,
            certificate.failures()
        );
    }
    Ok(DesignOutcome {
        label: form.label,
        w,
        relaxed: form.covariances(sol),
        status: sol.status,
        gap: sol.gap,
        iterations: sol.iterations,
        solve_time: sol.solve_time,
        reduced_dim: form.reduced_dim(),
        extraction,
        certificate,
    })
}

/// Minimize the range-angle ISL subject to power, SINR and target gain.
pub fn design_proposed(
    p: &DesignProblem,
    opts: &DesignOptions,
) -> Result<DesignOutcome, OptimizerError> {
    let form = build_isl_design(
        p,
        opts.reduction,
        opts.cross_threshold,
        true,
        opts.sinr_margin,
    )?;
    let sol = solve_checked(&form, opts.eps)?;
    finish(
        &form,
        &sol,
        p,
        &Scorer::Isl,
        form.natural_objective(&sol),
        opts,
    )
}

/// The proposed problem without SINR constraints.
pub fn design_sensing_only(
    p: &DesignProblem,
    opts: &DesignOptions,
) -> Result<DesignOutcome, OptimizerError> {
    let form = build_isl_design(p, opts.reduction, opts.cross_threshold, false, 0.0)?;
    let sol = solve_checked(&form, opts.eps)?;
    finish(
        &form,
        &sol,
        p,
        &Scorer::Isl,
        form.natural_objective(&sol),
        opts,
    )
}

/// Maximize the target gain subject to power and SINR.
pub fn design_joint_maxgain(
    p: &DesignProblem,
    opts: &DesignOptions,
) -> Result<DesignOutcome, OptimizerError> {
    p.constraints.validate(p.num_antennas())?;
    let form = build_max_gain(p, opts.reduction, opts.sinr_margin)?;
    let sol = solve_checked(&form, opts.eps)?;
    // cost = negative gain
    finish(&form, &sol, p, &Scorer::Gain, sol.objective, opts)
}

/// Max-min SINR under the power budget, by bisection over the common SINR
/// level with a minimum-power feasibility problem at each step.
pub fn design_comm_only(
    p: &DesignProblem,
    opts: &DesignOptions,
) -> Result<DesignOutcome, OptimizerError> {
    let c = &p.constraints;
    if !(c.power_budget > 0.0 && c.noise_power > 0.0) {
        return Err(OptimizerError::Invalid(
            "power budget and noise must be positive".into(),
        ));
    }
    if p.num_users() == 1 {
        return comm_only_single(p);
    }
    // SINR_k <= P_t ||h_k||^2 / sigma^2 bounds the search from above, and
    // equal-power matched filtering gives a reachable level from below
    let best_snr = p
        .channels
        .vectors
        .iter()
        .map(|h| c.power_budget * h.norm_squared() / c.noise_power)
        .fold(0.0, f64::max);
    let mut hi = 10.0 * best_snr.log10();
    let mut lo = 10.0 * matched_min_sinr(p)?.log10();
    let feasible_at = |db: f64| -> Result<Option<(Formulation, ConicSolution)>, OptimizerError> {
        let form = build_min_power(p, 10f64.powf(db / 10.0))?;
        let sol = solve(&form.problem, opts.eps)?;
        Ok(match sol.status {
            SolveStatus::Optimal | SolveStatus::NearOptimal if sol.objective <= c.power_budget => {
                Some((form, sol))
            }
            // a probe the solver cannot settle near the boundary counts as
            // not certified feasible; the bisection then moves down
            SolveStatus::Error => {
                log::debug!("comm_only probe at {db:.3} dB: {}", sol.diagnostics);
                None
            }
            _ => None,
        })
    };
    let mut last = None;
    let mut iterations = 0;
    while hi - lo > opts.bisection_tol_db {
        iterations += 1;
        if iterations > opts.bisection_max_iter {
            return Err(OptimizerError::Bisection(opts.bisection_max_iter));
        }
        let mid = 0.5 * (lo + hi);
        match feasible_at(mid)? {
            Some(found) => {
                lo = mid;
                last = Some(found);
            }
            None => hi = mid,
        }
    }
    let last = match last {
        Some(found) => found,
        None => feasible_at(lo)?.ok_or_else(|| {
            OptimizerError::Infeasible(format!(
                "minimum-power problem at {lo:.2} dB has no solution"
            ))
        })?,
    };
    log::info!("comm_only: max-min SINR {lo:.3} dB after {iterations} bisection steps");
    let (form, sol) = last;
    let bound = -10f64.powf(lo / 10.0);
    finish(&form, &sol, p, &Scorer::MinSinr, bound, opts)
}

/// Worst-user SINR of matched filtering with the budget split equally.
fn matched_min_sinr(p: &DesignProblem) -> Result<f64, OptimizerError> {
    let c = &p.constraints;
    let k = p.num_users() as f64;
    let cols: Vec<_> = p
        .channels
        .vectors
        .iter()
        .map(|h| h * C64::from((c.power_budget / k).sqrt() / h.norm().max(1e-300)))
        .collect();
    let w = CMatrix::from_columns(&cols);
    let sinr = crate::channel::user_sinr(&w, p.channels, c.noise_power)?;
    Ok(sinr.into_iter().fold(f64::INFINITY, f64::min).max(1e-12))
}

/// Single user: the matched beamformer at full power is optimal.
fn comm_only_single(p: &DesignProblem) -> Result<DesignOutcome, OptimizerError> {
    let c = &p.constraints;
    let h = &p.channels.vectors[0];
    let hn = h.norm();
    if hn == 0.0 {
        return Err(OptimizerError::Invalid("zero channel".into()));
    }
    let mut w = CMatrix::from_column_slice(
        h.len(),
        1,
        (h * C64::from(c.power_budget.sqrt() / hn)).as_slice(),
    );
    align_phases(&mut w, p);
    let s = operating_scale(&w, DesignLabel::CommOnly, p);
    w *= C64::from(s);
    let sinr = c.power_budget * h.norm_squared() / c.noise_power;
    let path = ExtractionPath::RankOne;
    let certificate = certify(&w, DesignLabel::CommOnly, c, p.channels, p.geometry, &path)?;
    Ok(DesignOutcome {
        label: DesignLabel::CommOnly,
        relaxed: CovarianceSet::from_beamformer(&w),
        w,
        status: SolveStatus::Optimal,
        gap: 0.0,
        iterations: 0,
        solve_time: 0.0,
        reduced_dim: 1,
        extraction: ExtractionReport {
            path,
            eigen_ratios: vec![1.0],
            bound: -sinr,
            achieved: -sinr,
            relaxation_gap: 0.0,
        },
        certificate,
    })
}

/// Angle grid over `[-90, 90]` degrees at `step` and the indicator of the
/// mainlobe of full width `width` centred on `theta0`.
pub fn desired_pattern(theta0: f64, width: f64, step: f64) -> (Vec<f64>, Vec<f64>) {
    let n = (std::f64::consts::PI / step).round() as i64;
    let angles: Vec<f64> = (0..=n)
        .map(|i| -std::f64::consts::FRAC_PI_2 + i as f64 * step)
        .map(|t| t.clamp(-std::f64::consts::FRAC_PI_2, std::f64::consts::FRAC_PI_2))
        .collect();
    let half = 0.5 * width + 1e-9;
    let desired = angles
        .iter()
        .map(|&t| if (t - theta0).abs() <= half { 1.0 } else { 0.0 })
        .collect();
    (angles, desired)
}

/// Beampattern baselines: least-squares matching of a mainlobe indicator,
/// or maximization of the worst mainlobe gain.
pub fn design_beampattern_family(
    mode: BeampatternMode,
    p: &DesignProblem,
    opts: &DesignOptions,
) -> Result<DesignOutcome, OptimizerError> {
    p.constraints.validate(p.num_antennas())?;
    let (angles, desired) =
        desired_pattern(p.constraints.theta0, opts.mainlobe_width, opts.pattern_step);
    match mode {
        BeampatternMode::Matching => {
            let form = build_matching(p, &angles, &desired, opts.sinr_margin)?;
            let sol = solve_checked(&form, opts.eps)?;
            let bound = form.natural_objective(&sol);
            finish(
                &form,
                &sol,
                p,
                &Scorer::Matching { angles, desired },
                bound,
                opts,
            )
        }
        BeampatternMode::MinWeighted => {
            let half = 0.5 * opts.mainlobe_width;
            let count = (opts.mainlobe_width / opts.mainlobe_step).round().max(1.0) as usize;
            let mainlobe: Vec<f64> = (0..=count)
                .map(|i| {
                    p.constraints.theta0 - half + opts.mainlobe_width * i as f64 / count as f64
                })
                .collect();
            let form = build_min_weighted(p, &mainlobe, opts.reduction, opts.sinr_margin)?;
            let sol = solve_checked(&form, opts.eps)?;
            finish(
                &form,
                &sol,
                p,
                &Scorer::MinMainlobe { angles: mainlobe },
                sol.objective,
                opts,
            )
        }
    }
}

/// Dispatch on the design label.
pub fn design(
    label: DesignLabel,
    p: &DesignProblem,
    opts: &DesignOptions,
) -> Result<DesignOutcome, OptimizerError> {
    match label {
        DesignLabel::Proposed => design_proposed(p, opts),
        DesignLabel::SensingOnly => design_sensing_only(p, opts),
        DesignLabel::CommOnly => design_comm_only(p, opts),
        DesignLabel::JointMaxgain => design_joint_maxgain(p, opts),
        DesignLabel::BpMatching => design_beampattern_family(BeampatternMode::Matching, p, opts),
        DesignLabel::BpMinweighted => {
            design_beampattern_family(BeampatternMode::MinWeighted, p, opts)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desired_pattern_grid() {
        let (a, d) = desired_pattern(0.0, 10f64.to_radians(), 0.1f64.to_radians());
        assert_eq!(a.len(), 1801);
        assert_eq!(d.iter().filter(|&&x| x > 0.0).count(), 101);
        assert!((a[0] + std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        assert!((a[1800] - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
    }
}
