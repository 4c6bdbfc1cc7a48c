//! Semidefinite relaxation of the sidelobe-minimizing beamformer design,
//! rank-one recovery, and the baseline designs it is compared against.

pub mod certify;
pub mod conic;
mod designs;
mod extract;
mod qsdp;
pub mod subspace;

use std::fmt;
use std::str::FromStr;

use nalgebra::SymmetricEigen;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ambiguity::{AmbiguityError, AngleGrid};
use crate::array::{ArrayError, ArrayGeometry};
use crate::channel::{ChannelError, ChannelSet};
use crate::waveform::{AFCorrelationMatrix, SidelobeMask};
use crate::CMatrix;

pub use certify::{certify, Certificate, CheckResult};
pub use conic::{solve, ConicError, ConicProblem, ConicSolution, SolveStatus};
pub use designs::{
    design, design_beampattern_family, design_comm_only, design_joint_maxgain, design_proposed,
    design_sensing_only, BeampatternMode, DesignOptions, DesignOutcome,
};
pub use extract::{extract_beamformers, ExtractionPath, ExtractionReport};
pub use qsdp::{build_qsdp, Formulation, Reduction};

/// An `M x K` matrix whose columns are the per-user beamformers.
pub type BeamformerMatrix = CMatrix;

#[derive(Debug, Error)]
pub enum OptimizerError {
    #[error("provably infeasible: {0}")]
    Infeasible(String),
    #[error("solver returned {status:?}: {diagnostics}")]
    Solver {
        status: SolveStatus,
        diagnostics: String,
    },
    #[error(
        "no feasible candidate among {draws} randomizations (relaxation bound {bound:.6e}); \
         increase the randomization count"
    )]
    NoFeasibleCandidate { draws: usize, bound: f64 },
    #[error("bisection did not converge within {0} iterations")]
    Bisection(usize),
    #[error(
        "masked cross-correlation ratio {ratio:.4} exceeds {threshold}; the separable sidelobe \
         objective is not justified for these waveforms"
    )]
    CrossBlocks { ratio: f64, threshold: f64 },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Array(#[from] ArrayError),
    #[error(transparent)]
    Ambiguity(#[from] AmbiguityError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Conic(#[from] ConicError),
}

/// The six designs of the comparison family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignLabel {
    Proposed,
    SensingOnly,
    CommOnly,
    JointMaxgain,
    BpMatching,
    BpMinweighted,
}

impl DesignLabel {
    pub const ALL: [DesignLabel; 6] = [
        DesignLabel::Proposed,
        DesignLabel::SensingOnly,
        DesignLabel::CommOnly,
        DesignLabel::JointMaxgain,
        DesignLabel::BpMatching,
        DesignLabel::BpMinweighted,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DesignLabel::Proposed => "proposed",
            DesignLabel::SensingOnly => "sensing_only",
            DesignLabel::CommOnly => "comm_only",
            DesignLabel::JointMaxgain => "joint_maxgain",
            DesignLabel::BpMatching => "bp_matching",
            DesignLabel::BpMinweighted => "bp_minweighted",
        }
    }

    /// Whether the design imposes the per-user SINR floor.
    pub fn has_sinr_constraint(self) -> bool {
        !matches!(self, DesignLabel::SensingOnly | DesignLabel::CommOnly)
    }

    /// Whether the design pins the target gain with an equality.
    pub fn has_gain_equality(self) -> bool {
        matches!(self, DesignLabel::Proposed | DesignLabel::SensingOnly)
    }

    /// Whether the design's objective is the sidelobe level.
    pub fn minimizes_isl(self) -> bool {
        self.has_gain_equality()
    }
}

impl fmt::Display for DesignLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DesignLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        let label = match norm.as_str() {
            "proposed" | "a" => DesignLabel::Proposed,
            "sensing_only" | "b" => DesignLabel::SensingOnly,
            "comm_only" | "c" => DesignLabel::CommOnly,
            "joint_maxgain" | "d" => DesignLabel::JointMaxgain,
            "bp_matching" | "e" => DesignLabel::BpMatching,
            "bp_minweighted" | "f" => DesignLabel::BpMinweighted,
            _ => return Err(format!("unknown design '{s}'")),
        };
        Ok(label)
    }
}

/// Design constraints in linear units: powers in mW, SINR as a ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignConstraints {
    pub power_budget: f64,
    pub sinr_min: f64,
    pub gain_target: f64,
    pub noise_power: f64,
    pub theta0: f64,
}

impl DesignConstraints {
    /// Positivity checks and the gain precheck `Gamma_s <= P_t M`, which is
    /// the largest gain any beamformer within budget can reach.
    pub fn validate(&self, num_antennas: usize) -> Result<(), OptimizerError> {
        let positive = [
            ("power budget", self.power_budget),
            ("SINR floor", self.sinr_min),
            ("target gain", self.gain_target),
            ("noise power", self.noise_power),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(OptimizerError::Invalid(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if !self.theta0.is_finite() || self.theta0.abs() >= std::f64::consts::FRAC_PI_2 {
            return Err(OptimizerError::Invalid(format!(
                "target angle {} rad outside (-pi/2, pi/2)",
                self.theta0
            )));
        }
        let max_gain = self.power_budget * num_antennas as f64;
        if self.gain_target > max_gain {
            return Err(OptimizerError::Infeasible(format!(
                "target gain {:.4} mW exceeds P_t * M = {:.4} mW",
                self.gain_target, max_gain
            )));
        }
        Ok(())
    }
}

/// Everything a design needs besides its options.
#[derive(Debug, Clone, Copy)]
pub struct DesignProblem<'a> {
    pub geometry: &'a ArrayGeometry,
    pub channels: &'a ChannelSet,
    pub corr: &'a AFCorrelationMatrix,
    pub mask: &'a SidelobeMask,
    pub omega: &'a AngleGrid,
    pub constraints: DesignConstraints,
}

impl DesignProblem<'_> {
    pub fn num_users(&self) -> usize {
        self.channels.num_users()
    }

    pub fn num_antennas(&self) -> usize {
        self.geometry.num_antennas()
    }
}

/// Relative PSD tolerance: eigenvalues down to `-1e-8 * trace` are accepted.
pub const PSD_TOLERANCE: f64 = 1e-8;

/// The per-user covariance matrices `R_k` of the relaxation and their sum.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceSet {
    covs: Vec<CMatrix>,
    total: CMatrix,
}

impl CovarianceSet {
    pub fn new(covs: Vec<CMatrix>) -> Result<Self, OptimizerError> {
        let Some(first) = covs.first() else {
            return Err(OptimizerError::Invalid("empty covariance set".into()));
        };
        let m = first.nrows();
        if covs.iter().any(|r| r.nrows() != m || r.ncols() != m) {
            return Err(OptimizerError::Invalid(
                "covariances must be square and of equal order".into(),
            ));
        }
        let mut total = CMatrix::zeros(m, m);
        for r in &covs {
            total += r;
        }
        Ok(Self { covs, total })
    }

    /// `R_k = w_k w_k^H` for every column of `W`.
    pub fn from_beamformer(w: &CMatrix) -> Self {
        let covs: Vec<CMatrix> = w
            .column_iter()
            .map(|c| c.into_owned() * c.adjoint())
            .collect();
        let mut total = CMatrix::zeros(w.nrows(), w.nrows());
        for r in &covs {
            total += r;
        }
        Self { covs, total }
    }

    pub fn num_users(&self) -> usize {
        self.covs.len()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, CMatrix> {
        self.covs.iter()
    }

    pub fn get(&self, k: usize) -> &CMatrix {
        &self.covs[k]
    }

    pub fn as_slice(&self) -> &[CMatrix] {
        &self.covs
    }

    /// `R_W = sum_k R_k`.
    pub fn total(&self) -> &CMatrix {
        &self.total
    }

    pub fn total_power(&self) -> f64 {
        self.total.trace().re
    }

    pub fn scaled(&self, s: f64) -> Self {
        let f = crate::C64::from(s);
        Self {
            covs: self.covs.iter().map(|r| r * f).collect(),
            total: &self.total * f,
        }
    }

    /// Smallest eigenvalue of each `R_k` divided by its trace.
    pub fn min_eigen_ratios(&self) -> Vec<f64> {
        self.covs
            .iter()
            .map(|r| {
                let tr = r.trace().re;
                let lo = hermitian_eigen(r)
                    .0
                    .iter()
                    .copied()
                    .fold(f64::INFINITY, f64::min);
                if tr > 0.0 {
                    lo / tr
                } else {
                    lo
                }
            })
            .collect()
    }

    pub fn is_psd(&self) -> bool {
        self.min_eigen_ratios().iter().all(|&r| r >= -PSD_TOLERANCE)
    }

    /// Dominant-eigenvalue share `lambda_1 / sum lambda` per user.
    pub fn dominant_ratios(&self) -> Vec<f64> {
        self.covs.iter().map(dominant_ratio).collect()
    }
}

/// Eigenvalues in descending order with matching eigenvector columns.
pub(crate) fn hermitian_eigen(r: &CMatrix) -> (Vec<f64>, CMatrix) {
    let herm = (r + r.adjoint()) * crate::C64::from(0.5);
    let eig = SymmetricEigen::new(herm);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = CMatrix::from_columns(
        &order
            .iter()
            .map(|&i| eig.eigenvectors.column(i).into_owned())
            .collect::<Vec<_>>(),
    );
    (vals, vecs)
}

pub(crate) fn dominant_ratio(r: &CMatrix) -> f64 {
    let (vals, _) = hermitian_eigen(r);
    let pos: f64 = vals.iter().map(|v| v.max(0.0)).sum();
    if pos > 0.0 {
        vals[0].max(0.0) / pos
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::C64;
    use approx::assert_relative_eq;

    #[test]
    fn labels_round_trip() {
        for l in DesignLabel::ALL {
            assert_eq!(l.as_str().parse::<DesignLabel>().unwrap(), l);
        }
        assert_eq!(
            "D".parse::<DesignLabel>().unwrap(),
            DesignLabel::JointMaxgain
        );
        assert!("x".parse::<DesignLabel>().is_err());
    }

    #[test]
    fn covariance_from_beamformer() {
        let w = CMatrix::from_fn(4, 2, |m, k| C64::from_polar(0.5, (m + 3 * k) as f64));
        let cov = CovarianceSet::from_beamformer(&w);
        assert_eq!(cov.num_users(), 2);
        assert_relative_eq!(cov.total_power(), w.norm_squared(), max_relative = 1e-12);
        assert!(cov.is_psd());
        for r in cov.dominant_ratios() {
            assert_relative_eq!(r, 1.0, epsilon = 1e-12);
        }
        let sum = cov.get(0) + cov.get(1);
        assert!((sum - cov.total()).norm() < 1e-14);
    }

    #[test]
    fn psd_detection() {
        let mut r = CMatrix::identity(3, 3);
        r[(2, 2)] = C64::from(-0.1);
        let cov = CovarianceSet::new(vec![r]).unwrap();
        assert!(!cov.is_psd());
        assert!(CovarianceSet::new(vec![]).is_err());
    }

    #[test]
    fn gain_precheck() {
        let c = DesignConstraints {
            power_budget: 1.0,
            sinr_min: 39.81,
            gain_target: 37.0,
            noise_power: 1e-3,
            theta0: 0.0,
        };
        assert!(matches!(c.validate(36), Err(OptimizerError::Infeasible(_))));
        assert!(DesignConstraints {
            gain_target: 19.95,
            ..c
        }
        .validate(36)
        .is_ok());
        assert!(DesignConstraints {
            noise_power: 0.0,
            ..c
        }
        .validate(36)
        .is_err());
    }
}
