//! Conic formulations of the relaxed design problems.

use nalgebra::DMatrix;

use super::conic::{ConicProblem, ConicSolution, HermitianBlock, LinExpr, ProblemDims};
use super::subspace::{orthonormal_basis, DEFAULT_TOLERANCE};
use super::{CovarianceSet, DesignLabel, DesignProblem, OptimizerError};
use crate::ambiguity::masked_auto_gram;
use crate::array::ArrayGeometry;
use crate::{CMatrix, CVector, C64};

/// How the covariance variables are parametrized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Reduction {
    /// One complex `M x M` block per user.
    Full,
    /// Blocks restricted to the span of the vectors the design touches, with
    /// secondary directions truncated at the given relative singular value.
    Subspace { tolerance: f64 },
}

impl Default for Reduction {
    fn default() -> Self {
        Reduction::Subspace {
            tolerance: DEFAULT_TOLERANCE,
        }
    }
}

/// Meaning of the solver's objective value in design units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ObjectiveKind {
    /// `t = sqrt(ISL) / norm`.
    IslSqrt { norm: f64 },
    /// `t = sqrt(sum of squared pattern errors) / norm`.
    MatchingSqrt { norm: f64 },
    /// Minimized negative target gain.
    NegGain,
    /// Minimized negative worst mainlobe gain.
    NegMinGain,
    /// Total transmit power.
    Power,
}

impl ObjectiveKind {
    /// Design objective recovered from the solver objective. Gains are
    /// returned with their natural (positive) sign.
    pub fn natural(self, solver_objective: f64) -> f64 {
        match self {
            ObjectiveKind::IslSqrt { norm } | ObjectiveKind::MatchingSqrt { norm } => {
                (solver_objective.max(0.0) * norm).powi(2)
            }
            ObjectiveKind::NegGain | ObjectiveKind::NegMinGain => -solver_objective,
            ObjectiveKind::Power => solver_objective,
        }
    }
}

/// A built conic problem plus what is needed to map its solution back to
/// covariance matrices.
#[derive(Debug, Clone)]
pub struct Formulation {
    pub label: DesignLabel,
    pub problem: ConicProblem,
    pub blocks: Vec<HermitianBlock>,
    /// `M x n` orthonormal basis; `R_k = Q Z_k Q^H`.
    pub basis: CMatrix,
    pub objective: ObjectiveKind,
    /// Index of the pattern scale variable (beampattern matching only).
    pub alpha: Option<usize>,
}

impl Formulation {
    pub fn reduced_dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn dims(&self) -> ProblemDims {
        self.problem.dims()
    }

    pub fn reduced_covariances(&self, sol: &ConicSolution) -> Vec<CMatrix> {
        self.blocks.iter().map(|b| b.value(&sol.x)).collect()
    }

    pub fn covariances(&self, sol: &ConicSolution) -> CovarianceSet {
        let q = &self.basis;
        let covs = self
            .reduced_covariances(sol)
            .iter()
            .map(|z| q * z * q.adjoint())
            .collect();
        CovarianceSet::new(covs).expect("at least one block")
    }

    pub fn natural_objective(&self, sol: &ConicSolution) -> f64 {
        self.objective.natural(sol.objective)
    }
}

fn project(q: &CMatrix, v: &CVector) -> Vec<C64> {
    (q.adjoint() * v).iter().copied().collect()
}

fn select_basis(dim: usize, reduction: Reduction, exact: &[CVector], extra: &[CVector]) -> CMatrix {
    match reduction {
        Reduction::Full => CMatrix::identity(dim, dim),
        Reduction::Subspace { tolerance } => orthonormal_basis(dim, exact, extra, tolerance),
    }
}

fn new_blocks(prob: &mut ConicProblem, users: usize, n: usize) -> Vec<HermitianBlock> {
    (0..users).map(|_| prob.add_psd_block(n)).collect()
}

fn total_trace(blocks: &[HermitianBlock]) -> LinExpr {
    let mut e = LinExpr::zero();
    for b in blocks {
        e += &b.trace();
    }
    e
}

fn add_power(prob: &mut ConicProblem, blocks: &[HermitianBlock], budget: f64, equality: bool) {
    let slack = LinExpr::constant(budget) - total_trace(blocks);
    if equality {
        prob.add_eq(slack, "power");
    } else {
        prob.add_nonneg(slack, "power");
    }
}

/// `(1 + 1/Gamma) h^H R_k h - h^H R_W h - sigma^2 >= 0` for every user.
fn add_sinr(
    prob: &mut ConicProblem,
    blocks: &[HermitianBlock],
    h: &[Vec<C64>],
    gamma: f64,
    noise: f64,
) {
    for (k, hk) in h.iter().enumerate() {
        let mut e = blocks[k].hermitian_form(hk).scaled(1.0 + 1.0 / gamma);
        for b in blocks {
            e += &b.hermitian_form(hk).scaled(-1.0);
        }
        e += &LinExpr::constant(-noise);
        prob.add_nonneg(e, format!("sinr[{k}]"));
    }
}

fn gain_expr(blocks: &[HermitianBlock], u0: &[C64]) -> LinExpr {
    let mut e = LinExpr::zero();
    for b in blocks {
        e += &b.hermitian_form(u0);
    }
    e
}

fn reduced_channels(p: &DesignProblem, q: &CMatrix) -> Vec<Vec<C64>> {
    p.channels.vectors.iter().map(|h| project(q, h)).collect()
}

fn check_users(p: &DesignProblem) -> Result<(), OptimizerError> {
    let k = p.num_users();
    if k == 0 {
        return Err(OptimizerError::Invalid("no users".into()));
    }
    if p.corr.num_users() != k {
        return Err(OptimizerError::Invalid(format!(
            "{} waveforms for {k} users",
            p.corr.num_users()
        )));
    }
    if p.channels
        .vectors
        .iter()
        .any(|h| h.len() != p.num_antennas())
    {
        return Err(OptimizerError::Invalid(
            "channel length differs from M".into(),
        ));
    }
    Ok(())
}

/// The proposed design: minimize the vectorized range-angle ISL subject to
/// power, per-user SINR and target-gain equality, rank constraints dropped.
pub fn build_qsdp(
    p: &DesignProblem,
    reduction: Reduction,
    cross_threshold: f64,
) -> Result<Formulation, OptimizerError> {
    build_isl_design(p, reduction, cross_threshold, true, 0.0)
}

/// Shared builder of the proposed and sensing-only designs.
pub(crate) fn build_isl_design(
    p: &DesignProblem,
    reduction: Reduction,
    cross_threshold: f64,
    with_sinr: bool,
    sinr_margin: f64,
) -> Result<Formulation, OptimizerError> {
    check_users(p)?;
    p.constraints.validate(p.num_antennas())?;
    let ratio = p.corr.max_masked_cross_ratio(p.mask);
    if ratio > cross_threshold {
        return Err(OptimizerError::CrossBlocks {
            ratio,
            threshold: cross_threshold,
        });
    }
    let geom = p.geometry;
    let c = &p.constraints;
    let b0 = geom.transmit(c.theta0);
    let b_omega: Vec<CVector> = p.omega.angles().iter().map(|&t| geom.transmit(t)).collect();
    let mut exact = p.channels.vectors.clone();
    exact.push(b0.clone());
    let q = select_basis(p.num_antennas(), reduction, &exact, &b_omega);
    let n = q.ncols();
    let users = p.num_users();

    let mut prob = ConicProblem::new();
    let blocks = new_blocks(&mut prob, users, n);
    add_power(&mut prob, &blocks, c.power_budget, false);
    if with_sinr {
        add_sinr(
            &mut prob,
            &blocks,
            &reduced_channels(p, &q),
            c.sinr_min * (1.0 + sinr_margin),
            c.noise_power,
        );
    }
    let u0 = project(&q, &b0);
    prob.add_eq(
        gain_expr(&blocks, &u0) - LinExpr::constant(c.gain_target),
        "gain",
    );

    let norm = (0..users)
        .map(|k| p.corr.energy(k))
        .fold(0.0, f64::max)
        .max(1e-300);
    let t = prob.add_scalar();
    prob.objective = LinExpr::var(t);
    if p.omega.is_empty() || p.mask.retained() == 0 {
        prob.add_nonneg(LinExpr::var(t), "objective");
    } else {
        // g_k = Z_k u0 as explicit variables, 2n reals per user
        let g: Vec<Vec<usize>> = (0..users).map(|_| prob.add_scalars(2 * n)).collect();
        for (k, blk) in blocks.iter().enumerate() {
            for (a, row) in blk.mat_vec(&u0).into_iter().enumerate() {
                prob.add_eq(LinExpr::var(g[k][a]) - row.re, "aux");
                prob.add_eq(LinExpr::var(g[k][n + a]) - row.im, "aux");
            }
        }
        let rows = isl_factor(p, &q, norm);
        let cols: Vec<usize> = g.iter().flatten().copied().collect();
        let soc_rows = compress_rows(&rows)
            .row_iter()
            .map(|r| {
                let mut e = LinExpr::zero();
                for (j, &v) in r.iter().enumerate() {
                    e.add_term(cols[j], v);
                }
                e
            })
            .collect();
        prob.add_soc(LinExpr::var(t), soc_rows, "objective");
    }
    Ok(Formulation {
        label: if with_sinr {
            DesignLabel::Proposed
        } else {
            DesignLabel::SensingOnly
        },
        problem: prob,
        blocks,
        basis: q,
        objective: ObjectiveKind::IslSqrt { norm },
        alpha: None,
    })
}

/// Dense real map from the stacked `(Re g_k, Im g_k)` to the stacked real and
/// imaginary parts of `conj(F) d(p)`, where `d_k(p) = u_p^H g_k` and
/// `F^H F` is the masked auto-correlation Gram matrix scaled by `1/norm^2`.
/// Its squared norm is the vectorized ISL divided by `norm^2`.
fn isl_factor(p: &DesignProblem, q: &CMatrix, norm: f64) -> DMatrix<f64> {
    let users = p.num_users();
    let n = q.ncols();
    let gram = masked_auto_gram(p.corr, p.mask) / C64::from(norm * norm);
    let (vals, vecs) = super::hermitian_eigen(&gram);
    // F = Lambda^{1/2} V^H, rows with zero eigenvalue dropped
    let f_rows: Vec<Vec<C64>> = vals
        .iter()
        .enumerate()
        .filter(|(_, &l)| l > 1e-14 * vals[0].max(1e-300))
        .map(|(i, &l)| (0..users).map(|k| vecs[(k, i)].conj() * l.sqrt()).collect())
        .collect();
    let r = f_rows.len();
    let omega = p.omega.angles();
    let mut a = DMatrix::<f64>::zeros(2 * r * omega.len(), 2 * users * n);
    for (pi, &theta) in omega.iter().enumerate() {
        let up = project(q, &p.geometry.transmit(theta));
        for (ri, f) in f_rows.iter().enumerate() {
            let row = 2 * (pi * r + ri);
            for k in 0..users {
                for (ai, upa) in up.iter().enumerate() {
                    let c = (f[k] * upa).conj();
                    let re_col = k * 2 * n + ai;
                    let im_col = re_col + n;
                    a[(row, re_col)] += c.re;
                    a[(row, im_col)] -= c.im;
                    a[(row + 1, re_col)] += c.im;
                    a[(row + 1, im_col)] += c.re;
                }
            }
        }
    }
    a
}

/// Replace a tall matrix by the triangular factor of its QR decomposition,
/// which has the same Gram matrix and hence preserves every norm `||A x||`.
fn compress_rows(a: &DMatrix<f64>) -> DMatrix<f64> {
    if a.nrows() <= a.ncols() {
        return a.clone();
    }
    a.clone().qr().r()
}

/// Minimum total power meeting every SINR at `sinr`, restricted to the span
/// of the channels (exact for this problem).
pub(crate) fn build_min_power(p: &DesignProblem, sinr: f64) -> Result<Formulation, OptimizerError> {
    check_users(p)?;
    let q = select_basis(
        p.num_antennas(),
        Reduction::default(),
        &p.channels.vectors,
        &[],
    );
    let mut prob = ConicProblem::new();
    let blocks = new_blocks(&mut prob, p.num_users(), q.ncols());
    add_sinr(
        &mut prob,
        &blocks,
        &reduced_channels(p, &q),
        sinr,
        p.constraints.noise_power,
    );
    prob.objective = total_trace(&blocks);
    Ok(Formulation {
        label: DesignLabel::CommOnly,
        problem: prob,
        blocks,
        basis: q,
        objective: ObjectiveKind::Power,
        alpha: None,
    })
}

/// Maximize the target gain under power and SINR constraints.
pub(crate) fn build_max_gain(
    p: &DesignProblem,
    reduction: Reduction,
    sinr_margin: f64,
) -> Result<Formulation, OptimizerError> {
    check_users(p)?;
    let c = &p.constraints;
    let b0 = p.geometry.transmit(c.theta0);
    let mut exact = p.channels.vectors.clone();
    exact.push(b0.clone());
    let q = select_basis(p.num_antennas(), reduction, &exact, &[]);
    let mut prob = ConicProblem::new();
    let blocks = new_blocks(&mut prob, p.num_users(), q.ncols());
    add_power(&mut prob, &blocks, c.power_budget, false);
    add_sinr(
        &mut prob,
        &blocks,
        &reduced_channels(p, &q),
        c.sinr_min * (1.0 + sinr_margin),
        c.noise_power,
    );
    prob.objective = -gain_expr(&blocks, &project(&q, &b0));
    Ok(Formulation {
        label: DesignLabel::JointMaxgain,
        problem: prob,
        blocks,
        basis: q,
        objective: ObjectiveKind::NegGain,
        alpha: None,
    })
}

/// Maximize the worst transmit gain over the mainlobe angles under power and
/// SINR constraints.
pub(crate) fn build_min_weighted(
    p: &DesignProblem,
    mainlobe: &[f64],
    reduction: Reduction,
    sinr_margin: f64,
) -> Result<Formulation, OptimizerError> {
    check_users(p)?;
    if mainlobe.is_empty() {
        return Err(OptimizerError::Invalid("empty mainlobe grid".into()));
    }
    let c = &p.constraints;
    let steer: Vec<CVector> = mainlobe.iter().map(|&t| p.geometry.transmit(t)).collect();
    let q = select_basis(p.num_antennas(), reduction, &p.channels.vectors, &steer);
    let mut prob = ConicProblem::new();
    let blocks = new_blocks(&mut prob, p.num_users(), q.ncols());
    add_power(&mut prob, &blocks, c.power_budget, false);
    add_sinr(
        &mut prob,
        &blocks,
        &reduced_channels(p, &q),
        c.sinr_min * (1.0 + sinr_margin),
        c.noise_power,
    );
    let s = prob.add_scalar();
    for b in &steer {
        prob.add_nonneg(
            gain_expr(&blocks, &project(&q, b)) - LinExpr::var(s),
            "mainlobe",
        );
    }
    prob.objective = -LinExpr::var(s);
    Ok(Formulation {
        label: DesignLabel::BpMinweighted,
        problem: prob,
        blocks,
        basis: q,
        objective: ObjectiveKind::NegMinGain,
        alpha: None,
    })
}

/// Least-squares fit of `alpha * desired` by the transmit beampattern over
/// the full space, with the total power fixed at the budget.
///
/// The pattern depends on `R_W` only through its diagonal sums
/// `S_delta = sum_m R_W[m][m + delta]`, so those `2M - 1` reals are carried
/// as auxiliary variables and the residual is compressed to a square factor.
pub(crate) fn build_matching(
    p: &DesignProblem,
    angles: &[f64],
    desired: &[f64],
    sinr_margin: f64,
) -> Result<Formulation, OptimizerError> {
    check_users(p)?;
    if angles.len() != desired.len() || angles.is_empty() {
        return Err(OptimizerError::Invalid(
            "desired pattern and angle grid differ in length".into(),
        ));
    }
    let c = &p.constraints;
    let m = p.num_antennas();
    let q = CMatrix::identity(m, m);
    let mut prob = ConicProblem::new();
    let blocks = new_blocks(&mut prob, p.num_users(), m);
    add_power(&mut prob, &blocks, c.power_budget, true);
    add_sinr(
        &mut prob,
        &blocks,
        &reduced_channels(p, &q),
        c.sinr_min * (1.0 + sinr_margin),
        c.noise_power,
    );

    let alpha = prob.add_scalar();
    prob.add_nonneg(LinExpr::var(alpha), "alpha");
    // aux layout: s0, a_1..a_{M-1}, b_1..b_{M-1}
    let aux = prob.add_scalars(2 * m - 1);
    prob.add_eq(LinExpr::var(aux[0]) - total_trace(&blocks), "aux");
    for delta in 1..m {
        let mut sum = super::conic::ComplexExpr::default();
        for b in &blocks {
            for r in 0..m - delta {
                sum += &b.entry(r, r + delta);
            }
        }
        prob.add_eq(LinExpr::var(aux[delta]) - sum.re, "aux");
        prob.add_eq(LinExpr::var(aux[m - 1 + delta]) - sum.im, "aux");
    }

    let norm = c.power_budget * m as f64;
    let mut a = DMatrix::<f64>::zeros(angles.len(), 2 * m);
    for (i, (&theta, &d)) in angles.iter().zip(desired).enumerate() {
        let psi = phase_step(p.geometry, theta);
        a[(i, 0)] = d / norm;
        a[(i, 1)] = -1.0 / norm;
        for delta in 1..m {
            let x = psi * delta as f64;
            a[(i, 1 + delta)] = -2.0 * x.cos() / norm;
            a[(i, m + delta)] = 2.0 * x.sin() / norm;
        }
    }
    let mut cols = vec![alpha];
    cols.extend_from_slice(&aux);
    let rows = compress_rows(&a)
        .row_iter()
        .map(|r| {
            let mut e = LinExpr::zero();
            for (j, &v) in r.iter().enumerate() {
                e.add_term(cols[j], v);
            }
            e
        })
        .collect();
    let t = prob.add_scalar();
    prob.add_soc(LinExpr::var(t), rows, "objective");
    prob.objective = LinExpr::var(t);
    Ok(Formulation {
        label: DesignLabel::BpMatching,
        problem: prob,
        blocks,
        basis: q,
        objective: ObjectiveKind::MatchingSqrt { norm },
        alpha: Some(alpha),
    })
}

/// Inter-element phase increment `2 pi f_c d sin(theta) / c`.
fn phase_step(geom: &ArrayGeometry, theta: f64) -> f64 {
    2.0 * std::f64::consts::PI * geom.carrier_freq() * geom.element_delay(1, theta)
}
