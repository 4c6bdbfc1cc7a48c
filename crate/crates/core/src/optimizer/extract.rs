//! Rank-one beamformer recovery from a relaxed covariance solution.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::qsdp::Formulation;
use super::{hermitian_eigen, CovarianceSet, DesignLabel, DesignProblem, OptimizerError};
use crate::ambiguity::isl_vectorized;
use crate::array::{beampattern, target_gain};
use crate::channel::user_sinr;
use crate::{CMatrix, CVector, C64};

/// Dominant-eigenvalue share above which a block counts as rank one.
pub const RANK_ONE_THRESHOLD: f64 = 0.9999;

/// Relative SINR shortfall tolerated for any returned beamformer.
pub const SINR_TOLERANCE: f64 = 1e-4;

/// Relative gain error tolerated on the randomized path.
pub const RANDOMIZED_GAIN_TOLERANCE: f64 = 1e-2;

const POWER_TOLERANCE: f64 = 1e-6;

const RANK_ONE_GAIN_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ExtractionPath {
    RankOne,
    Randomized { draws: usize, feasible: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionReport {
    pub path: ExtractionPath,
    /// `lambda_1 / sum lambda` per user.
    pub eigen_ratios: Vec<f64>,
    /// Design cost of the relaxed solution (lower is better).
    pub bound: f64,
    /// Design cost of the returned beamformer.
    pub achieved: f64,
    /// `achieved - bound`; non-negative up to solver accuracy.
    pub relaxation_gap: f64,
}

/// Design-specific cost used to rank candidates; lower is better.
#[derive(Debug, Clone)]
pub enum Scorer {
    /// Vectorized ISL.
    Isl,
    /// Negative worst-user SINR.
    MinSinr,
    /// Negative target gain.
    Gain,
    /// Squared error of the best non-negative scaling of `desired`.
    Matching { angles: Vec<f64>, desired: Vec<f64> },
    /// Negative worst gain over the mainlobe grid.
    MinMainlobe { angles: Vec<f64> },
}

impl Scorer {
    pub fn cost(&self, w: &CMatrix, p: &DesignProblem) -> f64 {
        let geom = p.geometry;
        match self {
            Scorer::Isl => isl_vectorized(
                &CovarianceSet::from_beamformer(w),
                geom,
                p.corr,
                p.mask,
                p.constraints.theta0,
                p.omega,
            )
            .unwrap_or(f64::INFINITY),
            Scorer::MinSinr => -user_sinr(w, p.channels, p.constraints.noise_power)
                .map(|s| s.into_iter().fold(f64::INFINITY, f64::min))
                .unwrap_or(f64::NEG_INFINITY),
            Scorer::Gain => -target_gain(w, geom, 0.0, p.constraints.theta0).unwrap_or(0.0),
            Scorer::Matching { angles, desired } => {
                let r = CovarianceSet::from_beamformer(w);
                let pat = beampattern(r.total(), geom, angles).unwrap_or_default();
                matching_error(&pat, desired)
            }
            Scorer::MinMainlobe { angles } => {
                let r = CovarianceSet::from_beamformer(w);
                -beampattern(r.total(), geom, angles)
                    .unwrap_or_default()
                    .into_iter()
                    .fold(f64::INFINITY, f64::min)
            }
        }
    }
}

/// `min_{alpha >= 0} ||alpha d - pattern||^2`.
pub fn matching_error(pattern: &[f64], desired: &[f64]) -> f64 {
    let dd: f64 = desired.iter().map(|d| d * d).sum();
    let dp: f64 = desired.iter().zip(pattern).map(|(d, p)| d * p).sum();
    let alpha = if dd > 0.0 { (dp / dd).max(0.0) } else { 0.0 };
    desired
        .iter()
        .zip(pattern)
        .map(|(d, p)| (alpha * d - p).powi(2))
        .sum()
}

fn power(w: &CMatrix) -> f64 {
    w.norm_squared()
}

fn gain(w: &CMatrix, p: &DesignProblem) -> f64 {
    let b0 = p.geometry.transmit(p.constraints.theta0);
    (b0.adjoint() * w).norm_squared()
}

/// Rotate each column so that `b_T^H(theta0) w_k` is real and non-negative.
pub(crate) fn align_phases(w: &mut CMatrix, p: &DesignProblem) {
    let b0 = p.geometry.transmit(p.constraints.theta0);
    for mut col in w.column_iter_mut() {
        let proj: C64 = b0.iter().zip(col.iter()).map(|(b, x)| b.conj() * x).sum();
        if proj.norm() > 0.0 {
            let rot = proj.conj() / proj.norm();
            col.iter_mut().for_each(|x| *x *= rot);
        }
    }
}

/// Scale to the design's operating point: the gain target for gain-pinned
/// designs (never exceeding the budget), the full budget otherwise.
pub(crate) fn operating_scale(w: &CMatrix, label: DesignLabel, p: &DesignProblem) -> f64 {
    let pw = power(w);
    if pw <= 0.0 {
        return 1.0;
    }
    let c = &p.constraints;
    let to_budget = c.power_budget / pw;
    let s2 = if label.has_gain_equality() {
        let g = gain(w, p);
        if g > 0.0 {
            (c.gain_target / g).min(to_budget)
        } else {
            to_budget
        }
    } else {
        to_budget
    };
    s2.sqrt()
}

fn feasible(w: &CMatrix, label: DesignLabel, p: &DesignProblem, gain_tol: f64) -> bool {
    let c = &p.constraints;
    if power(w) > c.power_budget * (1.0 + POWER_TOLERANCE) {
        return false;
    }
    if label.has_sinr_constraint() {
        let Ok(s) = user_sinr(w, p.channels, c.noise_power) else {
            return false;
        };
        if s.iter().any(|&x| x < c.sinr_min * (1.0 - SINR_TOLERANCE)) {
            return false;
        }
    }
    if label.has_gain_equality() && ((gain(w, p) - c.gain_target) / c.gain_target).abs() > gain_tol
    {
        return false;
    }
    true
}

/// Keep the candidate's directions and solve for the per-user powers that
/// meet every SINR floor with equality, then move to the operating point.
fn refit_powers(w: &CMatrix, label: DesignLabel, p: &DesignProblem) -> Option<CMatrix> {
    let k_users = w.ncols();
    let c = &p.constraints;
    let dirs: Vec<CVector> = w
        .column_iter()
        .map(|col| {
            let n = col.norm();
            if n > 0.0 {
                col.into_owned() / C64::from(n)
            } else {
                col.into_owned()
            }
        })
        .collect();
    let a = nalgebra::DMatrix::<f64>::from_fn(k_users, k_users, |k, j| {
        let g = (p.channels.vectors[k].adjoint() * &dirs[j])[(0, 0)].norm_sqr();
        if k == j {
            g / c.sinr_min
        } else {
            -g
        }
    });
    let rhs = nalgebra::DVector::from_element(k_users, c.noise_power);
    let powers = a.lu().solve(&rhs)?;
    if powers.iter().any(|&x| !(x > 0.0)) {
        return None;
    }
    let mut out = CMatrix::from_columns(&dirs);
    for (k, mut col) in out.column_iter_mut().enumerate() {
        col *= C64::from(powers[k].sqrt());
    }
    // only scale up from the SINR-tight point unless the gain demands less
    let s = operating_scale(&out, label, p);
    out *= C64::from(s);
    Some(out)
}

fn complex_normal(rng: &mut impl Rng) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Recover beamformers from a relaxed solution.
///
/// Rank-one blocks give `w_k = sqrt(lambda_1) u_1` directly. Otherwise
/// `draws` candidate sets are sampled from `CN(0, R_k)` on independent
/// streams of `seed`, moved to the design's operating point, repaired by a
/// per-user power refit when that alone misses the SINR floor, filtered
/// for feasibility and ranked by `scorer`.
pub fn extract_beamformers(
    form: &Formulation,
    reduced: &[CMatrix],
    p: &DesignProblem,
    scorer: &Scorer,
    bound: f64,
    draws: usize,
    seed: u64,
) -> Result<(CMatrix, ExtractionReport), OptimizerError> {
    let label = form.label;
    let q = &form.basis;
    let m = p.num_antennas();
    let total_trace: f64 = reduced.iter().map(|z| z.trace().re.max(0.0)).sum();
    let eig: Vec<(Vec<f64>, CMatrix)> = reduced.iter().map(hermitian_eigen).collect();
    let ratios: Vec<f64> = eig
        .iter()
        .map(|(vals, _)| {
            let pos: f64 = vals.iter().map(|v| v.max(0.0)).sum();
            if pos > 0.0 {
                vals[0].max(0.0) / pos
            } else {
                0.0
            }
        })
        .collect();
    // a block carrying no power is trivially rank one (w_k = 0)
    let negligible = |k: usize| reduced[k].trace().re <= 1e-9 * total_trace.max(1e-300);
    let rank_one = (0..reduced.len()).all(|k| ratios[k] >= RANK_ONE_THRESHOLD || negligible(k));

    if rank_one {
        let mut w = CMatrix::zeros(m, reduced.len());
        for (k, (vals, vecs)) in eig.iter().enumerate() {
            if negligible(k) {
                continue;
            }
            let z = vecs.column(0) * C64::from(vals[0].max(0.0).sqrt());
            w.set_column(k, &(q * z));
        }
        align_phases(&mut w, p);
        let s = operating_scale(&w, label, p);
        w *= C64::from(s);
        // solver residuals can leave an SINR a hair under the floor; keep the
        // directions and re-solve the per-user powers in that case
        if label.has_sinr_constraint() && !feasible(&w, label, p, RANK_ONE_GAIN_TOLERANCE) {
            if let Some(mut fixed) = refit_powers(&w, label, p) {
                if feasible(&fixed, label, p, RANK_ONE_GAIN_TOLERANCE) {
                    align_phases(&mut fixed, p);
                    w = fixed;
                }
            }
        }
        let achieved = scorer.cost(&w, p);
        return Ok((
            w,
            ExtractionReport {
                path: ExtractionPath::RankOne,
                eigen_ratios: ratios,
                bound,
                achieved,
                relaxation_gap: achieved - bound,
            },
        ));
    }

    // square-root factors L_k = V_k diag(sqrt(lambda_+)) in the reduced basis
    let factors: Vec<CMatrix> = eig
        .iter()
        .map(|(vals, vecs)| {
            let mut l = vecs.clone();
            for (i, mut col) in l.column_iter_mut().enumerate() {
                col *= C64::from(vals[i].max(0.0).sqrt());
            }
            q * l
        })
        .collect();
    let n = form.reduced_dim();
    let best = (0..draws)
        .into_par_iter()
        .filter_map(|idx| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(idx as u64);
            let mut w = CMatrix::zeros(m, factors.len());
            for (k, l) in factors.iter().enumerate() {
                let xi = CVector::from_fn(n, |_, _| complex_normal(&mut rng));
                w.set_column(k, &(l * xi));
            }
            let s = operating_scale(&w, label, p);
            w *= C64::from(s);
            let candidate = if feasible(&w, label, p, RANDOMIZED_GAIN_TOLERANCE) {
                Some(w)
            } else if label.has_sinr_constraint() {
                refit_powers(&w, label, p)
                    .filter(|r| feasible(r, label, p, RANDOMIZED_GAIN_TOLERANCE))
            } else {
                None
            }?;
            let mut candidate = candidate;
            align_phases(&mut candidate, p);
            let cost = scorer.cost(&candidate, p);
            cost.is_finite().then_some((cost, idx, candidate))
        })
        .collect::<Vec<_>>();
    let feasible_count = best.len();
    let winner = best
        .into_iter()
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let Some((achieved, _, w)) = winner else {
        return Err(OptimizerError::NoFeasibleCandidate { draws, bound });
    };
    log::debug!(
        "{label}: randomized extraction kept {feasible_count}/{draws} candidates, cost {achieved:.6e} vs bound {bound:.6e}"
    );
    Ok((
        w,
        ExtractionReport {
            path: ExtractionPath::Randomized {
                draws,
                feasible: feasible_count,
            },
            eigen_ratios: ratios,
            bound,
            achieved,
            relaxation_gap: achieved - bound,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matching_error_uses_best_scale() {
        let d = [0.0, 1.0, 1.0, 0.0];
        assert_eq!(matching_error(&[0.0, 3.0, 3.0, 0.0], &d), 0.0);
        // negative correlation clamps alpha to zero
        assert_eq!(matching_error(&[0.0, -1.0, -1.0, 0.0], &d), 2.0);
        assert!((matching_error(&[1.0, 2.0, 2.0, 0.0], &d) - 1.0).abs() < 1e-12);
    }
}
