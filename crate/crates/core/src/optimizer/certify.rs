//! Constraint certification of a returned beamformer against the
//! constraint set of the design that produced it.

use serde::{Deserialize, Serialize};

use super::extract::{ExtractionPath, RANDOMIZED_GAIN_TOLERANCE, SINR_TOLERANCE};
use super::{DesignConstraints, DesignLabel, OptimizerError};
use crate::array::{target_gain, ArrayGeometry};
use crate::channel::{user_sinr, ChannelSet};
use crate::CMatrix;

/// Relative power overshoot accepted by certification.
pub const POWER_TOLERANCE: f64 = 1e-6;
/// Relative gain error accepted on the rank-one path.
pub const RANK_ONE_GAIN_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub value: f64,
    pub bound: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub label: DesignLabel,
    pub power_mw: f64,
    /// Linear SINR per user.
    pub sinr: Vec<f64>,
    pub gain_mw: f64,
    pub checks: Vec<CheckResult>,
}

impl Certificate {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&CheckResult> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }
}

/// Check `w` against power, and where the design imposes them, the SINR
/// floor and the gain equality. The gain tolerance depends on the path.
pub fn certify(
    w: &CMatrix,
    label: DesignLabel,
    constraints: &DesignConstraints,
    channels: &ChannelSet,
    geometry: &ArrayGeometry,
    path: &ExtractionPath,
) -> Result<Certificate, OptimizerError> {
    let power = w.norm_squared();
    let sinr = user_sinr(w, channels, constraints.noise_power)?;
    let gain = target_gain(w, geometry, 0.0, constraints.theta0)?;
    let mut checks = Vec::new();

    let pmax = constraints.power_budget * (1.0 + POWER_TOLERANCE);
    checks.push(CheckResult {
        name: "power".into(),
        value: power,
        bound: pmax,
        passed: power <= pmax,
    });
    if label.has_sinr_constraint() {
        let floor = constraints.sinr_min * (1.0 - SINR_TOLERANCE);
        for (k, &s) in sinr.iter().enumerate() {
            checks.push(CheckResult {
                name: format!("sinr[{k}]"),
                value: s,
                bound: floor,
                passed: s >= floor,
            });
        }
    }
    if label.has_gain_equality() {
        let tol = match path {
            ExtractionPath::RankOne => RANK_ONE_GAIN_TOLERANCE,
            ExtractionPath::Randomized { .. } => RANDOMIZED_GAIN_TOLERANCE,
        };
        let rel = (gain - constraints.gain_target).abs() / constraints.gain_target;
        checks.push(CheckResult {
            name: "gain".into(),
            value: rel,
            bound: tol,
            passed: rel <= tol,
        });
    }
    Ok(Certificate {
        label,
        power_mw: power,
        sinr,
        gain_mw: gain,
        checks,
    })
}
