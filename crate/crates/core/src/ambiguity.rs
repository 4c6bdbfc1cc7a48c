//! Range-angle-Doppler ambiguity function of a beamformed multi-waveform
//! transmission, and its integrated sidelobe level.
//!
//! With `Y0 = W^H b_T(f0, theta0)` and `Y1 = W^H b_T(f1, theta1)` the
//! matched-filter output summed over receive antennas and waveforms is
//!
//! ```text
//! chi(T0, T1) = xi * Y0^H X(dr, df) Y1 * phi
//! ```
//!
//! where `xi = b_R^H(T0) b_R(T1)` is the receive array factor and `phi` a
//! unit-modulus range phase. The sidelobe objective drops `xi`; evaluation
//! paths can include it through `include_receive_factor`.

use std::f64::consts::PI;

use thiserror::Error;

use crate::array::{ArrayError, ArrayGeometry, Side, SPEED_OF_LIGHT};
use crate::optimizer::CovarianceSet;
use crate::waveform::{AFCorrelationMatrix, SidelobeMask, WaveformSet};
use crate::{CMatrix, CVector, C64};

/// dB value reported for an exactly-zero power ratio.
pub const DB_FLOOR: f64 = -300.0;

/// Threshold on `2 v B T / c` below which the narrowband model holds.
pub const NARROWBAND_THRESHOLD: f64 = 0.01;

#[derive(Debug, Error, PartialEq)]
pub enum AmbiguityError {
    #[error(transparent)]
    Array(#[from] ArrayError),
    #[error("range offset {0} m is not on the lag grid")]
    OffGridRange(f64),
    #[error("Doppler offset {0} Hz is not on the Doppler grid")]
    OffGridDoppler(f64),
    #[error("mask shape {mask:?} does not match correlation grid {grid:?}")]
    GridMismatch {
        mask: (usize, usize),
        grid: (usize, usize),
    },
    #[error("beamformer has {got} columns, correlation matrix has {expected} users")]
    UserMismatch { expected: usize, got: usize },
    #[error("covariance {0} is not Hermitian")]
    NotHermitian(usize),
    #[error("mainlobe is zero; the beamformer radiates nothing toward the target")]
    ZeroMainlobe,
    #[error("invalid angle grid: {0}")]
    AngleGrid(String),
}

/// Target range (m), radial velocity (m/s) and angle (rad).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetParams {
    pub range: f64,
    pub velocity: f64,
    pub angle: f64,
}

impl TargetParams {
    pub fn new(range: f64, velocity: f64, angle: f64) -> Self {
        Self {
            range,
            velocity,
            angle,
        }
    }

    /// Stationary target at `angle`, zero range.
    pub fn at_angle(angle: f64) -> Self {
        Self::new(0.0, 0.0, angle)
    }

    /// Doppler shift `2 v / lambda`.
    pub fn doppler(&self, geometry: &ArrayGeometry) -> f64 {
        2.0 * self.velocity / geometry.wavelength()
    }

    /// Round-trip delay `2 r / c`.
    pub fn delay(&self) -> f64 {
        2.0 * self.range / SPEED_OF_LIGHT
    }
}

/// Sorted angular sidelobe set, in radians.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleGrid {
    angles: Vec<f64>,
}

impl AngleGrid {
    pub fn new(mut angles: Vec<f64>) -> Result<Self, AmbiguityError> {
        if angles.iter().any(|a| !a.is_finite() || a.abs() >= PI / 2.0) {
            return Err(AmbiguityError::AngleGrid(
                "angles must be finite and inside (-90, 90) degrees".into(),
            ));
        }
        angles.sort_by(f64::total_cmp);
        angles.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        Ok(Self { angles })
    }

    /// Samples every closed degree interval at `step_deg`, endpoints included.
    pub fn from_degree_intervals(
        intervals: &[(f64, f64)],
        step_deg: f64,
    ) -> Result<Self, AmbiguityError> {
        if !(step_deg.is_finite() && step_deg > 0.0) {
            return Err(AmbiguityError::AngleGrid(format!("bad step {step_deg}")));
        }
        let mut out = Vec::new();
        for &(lo, hi) in intervals {
            if !(lo.is_finite() && hi.is_finite()) || lo > hi {
                return Err(AmbiguityError::AngleGrid(format!(
                    "bad interval [{lo}, {hi}]"
                )));
            }
            let count = ((hi - lo) / step_deg + 1e-9).floor() as usize;
            out.extend((0..=count).map(|i| (lo + i as f64 * step_deg).to_radians()));
        }
        Self::new(out)
    }

    /// Errors if the grid contains `theta0` (the sidelobe set must exclude the target).
    pub fn excluding(self, theta0: f64) -> Result<Self, AmbiguityError> {
        if self.angles.iter().any(|a| (a - theta0).abs() < 1e-12) {
            return Err(AmbiguityError::AngleGrid(format!(
                "sidelobe set contains the target angle {:.4} deg",
                theta0.to_degrees()
            )));
        }
        Ok(self)
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }
}

/// One evaluated AF cell with its factors.
#[derive(Debug, Clone, PartialEq)]
pub struct AFValue {
    pub value: C64,
    pub receive_factor: C64,
    pub upsilon0: CVector,
    pub upsilon1: CVector,
    pub phase: C64,
}

fn check_users(w: &CMatrix, corr: &AFCorrelationMatrix) -> Result<(), AmbiguityError> {
    if w.ncols() != corr.num_users() {
        return Err(AmbiguityError::UserMismatch {
            expected: corr.num_users(),
            got: w.ncols(),
        });
    }
    Ok(())
}

fn check_mask(corr: &AFCorrelationMatrix, mask: &SidelobeMask) -> Result<(), AmbiguityError> {
    let grid = (corr.grid().num_lags(), corr.grid().num_doppler());
    if mask.shape() != grid {
        return Err(AmbiguityError::GridMismatch {
            mask: mask.shape(),
            grid,
        });
    }
    Ok(())
}

fn lag_of_range(corr: &AFCorrelationMatrix, delta_r: f64) -> Result<usize, AmbiguityError> {
    let x = delta_r / corr.range_bin();
    let lag = x.round();
    if !x.is_finite() || (x - lag).abs() > 1e-6 {
        return Err(AmbiguityError::OffGridRange(delta_r));
    }
    corr.grid()
        .lag_index(lag as i64)
        .ok_or(AmbiguityError::OffGridRange(delta_r))
}

pub fn af_value(
    w: &CMatrix,
    geometry: &ArrayGeometry,
    corr: &AFCorrelationMatrix,
    target0: &TargetParams,
    target1: &TargetParams,
    include_receive_factor: bool,
) -> Result<AFValue, AmbiguityError> {
    check_users(w, corr)?;
    let f0 = target0.doppler(geometry);
    let f1 = target1.doppler(geometry);
    let lag_idx = lag_of_range(corr, target1.range - target0.range)?;
    let dop_idx = corr
        .grid()
        .doppler_index(f1 - f0)
        .ok_or(AmbiguityError::OffGridDoppler(f1 - f0))?;

    let b0 = geometry.steering_vector(f0, target0.angle, Side::Transmit)?;
    let b1 = geometry.steering_vector(f1, target1.angle, Side::Transmit)?;
    let upsilon0 = w.adjoint() * &b0;
    let upsilon1 = w.adjoint() * &b1;
    let x = corr.x_matrix(lag_idx, dop_idx);
    let core = (upsilon0.adjoint() * x * &upsilon1)[(0, 0)];

    let receive_factor = if include_receive_factor {
        let r0 = geometry.steering_vector(f0, target0.angle, Side::Receive)?;
        let r1 = geometry.steering_vector(f1, target1.angle, Side::Receive)?;
        (r0.adjoint() * r1)[(0, 0)]
    } else {
        C64::new(1.0, 0.0)
    };
    let fc = geometry.carrier_freq();
    let phase = C64::from_polar(1.0, -2.0 * PI * (fc + f0) * target0.delay())
        * C64::from_polar(1.0, -2.0 * PI * (fc + f1) * target1.delay());

    Ok(AFValue {
        value: receive_factor * core * phase,
        receive_factor,
        upsilon0,
        upsilon1,
        phase,
    })
}

/// Fast AF magnitudes at a fixed `theta0` and zero target Doppler.
///
/// Precomputes `Y0^H X(cell)` for every grid cell so each `(theta1, cell)`
/// evaluation is a length-`K` dot product.
pub struct AfEvaluator<'a> {
    w: &'a CMatrix,
    geometry: &'a ArrayGeometry,
    corr: &'a AFCorrelationMatrix,
    theta0: f64,
    // row vectors Y0^H X(lag, dop), indexed [lag * L_d + dop]
    left: Vec<CVector>,
}

impl<'a> AfEvaluator<'a> {
    pub fn new(
        w: &'a CMatrix,
        geometry: &'a ArrayGeometry,
        corr: &'a AFCorrelationMatrix,
        theta0: f64,
    ) -> Result<Self, AmbiguityError> {
        check_users(w, corr)?;
        if w.nrows() != geometry.num_antennas() {
            return Err(ArrayError::DimensionMismatch {
                expected: geometry.num_antennas(),
                got: w.nrows(),
            }
            .into());
        }
        let b0 = geometry.steering_vector(0.0, theta0, Side::Transmit)?;
        let y0 = w.adjoint() * b0;
        let grid = corr.grid();
        let mut left = Vec::with_capacity(grid.num_lags() * grid.num_doppler());
        for l in 0..grid.num_lags() {
            for d in 0..grid.num_doppler() {
                // (Y0^H X)^T as a column: entry i = sum_k conj(Y0_k) X_ki
                let x = corr.x_matrix(l, d);
                left.push(x.transpose() * y0.conjugate());
            }
        }
        Ok(Self {
            w,
            geometry,
            corr,
            theta0,
            left,
        })
    }

    pub fn theta0(&self) -> f64 {
        self.theta0
    }

    /// `W^H b_T(doppler, theta1)`.
    pub fn upsilon(&self, doppler: f64, theta1: f64) -> CVector {
        self.w.adjoint() * self.geometry.steer_unchecked(doppler, theta1)
    }

    /// Receive factor `b_R^H(0, theta0) b_R(doppler, theta1)`.
    pub fn receive_factor(&self, doppler: f64, theta1: f64) -> C64 {
        let r0 = self.geometry.steer_unchecked(0.0, self.theta0);
        let r1 = self.geometry.steer_unchecked(doppler, theta1);
        (r0.adjoint() * r1)[(0, 0)]
    }

    /// AF value without the range phase `phi`, at cell `(lag_idx, dop_idx)`
    /// and given `upsilon1 = W^H b_T(theta1)`.
    pub fn cell(&self, lag_idx: usize, dop_idx: usize, upsilon1: &CVector) -> C64 {
        let nd = self.corr.grid().num_doppler();
        self.left[lag_idx * nd + dop_idx]
            .iter()
            .zip(upsilon1.iter())
            .map(|(a, b)| a * b)
            .sum()
    }

    /// `|chi(theta0, theta1, lag, dop)|`.
    pub fn magnitude(
        &self,
        theta1: f64,
        lag_idx: usize,
        dop_idx: usize,
        include_receive_factor: bool,
    ) -> f64 {
        let df = self.corr.grid().doppler_bins()[dop_idx];
        let u1 = self.upsilon(df, theta1);
        let core = self.cell(lag_idx, dop_idx, &u1).norm();
        if include_receive_factor {
            core * self.receive_factor(df, theta1).norm()
        } else {
            core
        }
    }
}

/// `sum_{theta1 in Omega} sum_{masked cells} |chi(theta0, theta1, cell)|^2`
/// evaluated pointwise with the full correlation matrix, receive factor off.
pub fn isl_direct(
    w: &CMatrix,
    geometry: &ArrayGeometry,
    corr: &AFCorrelationMatrix,
    mask: &SidelobeMask,
    theta0: f64,
    omega: &AngleGrid,
) -> Result<f64, AmbiguityError> {
    check_mask(corr, mask)?;
    let eval = AfEvaluator::new(w, geometry, corr, theta0)?;
    let dopplers = corr.grid().doppler_bins();
    let mut total = 0.0;
    for &theta1 in omega.angles() {
        // Upsilon depends on the Doppler bin only through the steering frequency
        let ups: Vec<CVector> = dopplers
            .iter()
            .map(|&df| eval.upsilon(df, theta1))
            .collect();
        for (l, d) in mask.retained_cells() {
            total += eval.cell(l, d, &ups[d]).norm_sqr();
        }
    }
    Ok(total)
}

fn is_hermitian(r: &CMatrix) -> bool {
    let scale = r.norm().max(1e-300);
    r.is_square() && (r - r.adjoint()).norm() <= 1e-9 * scale
}

/// Cross-gains `c_k(p) = b_T^H(theta0) R_k b_T(theta_p)` as a `K x P` matrix.
pub fn cross_gains(
    cov: &CovarianceSet,
    geometry: &ArrayGeometry,
    theta0: f64,
    omega: &AngleGrid,
) -> Result<CMatrix, AmbiguityError> {
    let b0 = geometry.steering_vector(0.0, theta0, Side::Transmit)?;
    let b_omega = geometry.steering_matrix(0.0, omega.angles());
    let mut c = CMatrix::zeros(cov.num_users(), omega.len());
    for (k, r) in cov.iter().enumerate() {
        if !is_hermitian(r) {
            return Err(AmbiguityError::NotHermitian(k));
        }
        if r.nrows() != geometry.num_antennas() {
            return Err(ArrayError::DimensionMismatch {
                expected: geometry.num_antennas(),
                got: r.nrows(),
            }
            .into());
        }
        let row = b0.adjoint() * r * &b_omega;
        c.set_row(k, &row);
    }
    Ok(c)
}

/// Squared Frobenius norm of `sum_k c_k (x) x_k`, where `c_k` stacks the
/// cross-gains of user `k` over `Omega` and `x_k` the masked cells of the
/// `k`-th diagonal correlation block. Cross-user blocks are ignored.
pub fn isl_vectorized(
    cov: &CovarianceSet,
    geometry: &ArrayGeometry,
    corr: &AFCorrelationMatrix,
    mask: &SidelobeMask,
    theta0: f64,
    omega: &AngleGrid,
) -> Result<f64, AmbiguityError> {
    check_mask(corr, mask)?;
    if cov.num_users() != corr.num_users() {
        return Err(AmbiguityError::UserMismatch {
            expected: corr.num_users(),
            got: cov.num_users(),
        });
    }
    let c = cross_gains(cov, geometry, theta0, omega)?;
    let autos: Vec<Vec<C64>> = (0..corr.num_users())
        .map(|k| corr.masked_auto(k, mask))
        .collect();
    let mut total = 0.0;
    for p in 0..omega.len() {
        for cell in 0..mask.retained() {
            let v: C64 = (0..corr.num_users())
                .map(|k| c[(k, p)] * autos[k][cell])
                .sum();
            total += v.norm_sqr();
        }
    }
    Ok(total)
}

/// How far `isl_direct` may sit from `isl_vectorized` for a given `W`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossEnergyBound {
    /// ISL of the cross-user terms alone, `||b||^2`.
    pub cross_energy: f64,
    /// `2 ||a|| ||b|| + ||b||^2` with `||a||^2` the vectorized ISL.
    pub absolute: f64,
    /// `absolute` over the vectorized ISL; infinite when that is zero.
    pub relative: f64,
}

/// Bound on `|isl_direct - isl_vectorized|`. Each AF cell splits into an
/// auto part `a` (kept by the vectorized form) and a cross part `b`, and
/// `| ||a+b||^2 - ||a||^2 | <= 2 ||a|| ||b|| + ||b||^2`.
pub fn cross_energy_bound(
    w: &CMatrix,
    geometry: &ArrayGeometry,
    corr: &AFCorrelationMatrix,
    mask: &SidelobeMask,
    theta0: f64,
    omega: &AngleGrid,
) -> Result<CrossEnergyBound, AmbiguityError> {
    let auto = isl_vectorized(
        &CovarianceSet::from_beamformer(w),
        geometry,
        corr,
        mask,
        theta0,
        omega,
    )?;
    let cross_energy = isl_direct(w, geometry, &corr.cross_blocks_only(), mask, theta0, omega)?;
    let absolute = 2.0 * (auto * cross_energy).sqrt() + cross_energy;
    let relative = if auto > 0.0 {
        absolute / auto
    } else {
        f64::INFINITY
    };
    Ok(CrossEnergyBound {
        cross_energy,
        absolute,
        relative,
    })
}

/// Gram matrix `G_kk' = sum_cells conj(x_k) x_k'` of the masked diagonal
/// blocks. With it, the vectorized ISL equals `sum_p c(p)^H G c(p)`.
pub fn masked_auto_gram(corr: &AFCorrelationMatrix, mask: &SidelobeMask) -> CMatrix {
    let autos: Vec<Vec<C64>> = (0..corr.num_users())
        .map(|k| corr.masked_auto(k, mask))
        .collect();
    let k_users = corr.num_users();
    CMatrix::from_fn(k_users, k_users, |k, j| {
        autos[k]
            .iter()
            .zip(&autos[j])
            .map(|(a, b)| a.conj() * b)
            .sum()
    })
}

/// `|chi(theta0, theta0, 0, 0)|`, the on-grid mainlobe peak.
pub fn mainlobe(
    w: &CMatrix,
    geometry: &ArrayGeometry,
    corr: &AFCorrelationMatrix,
    theta0: f64,
    include_receive_factor: bool,
) -> Result<f64, AmbiguityError> {
    let t0 = TargetParams::at_angle(theta0);
    Ok(
        af_value(w, geometry, corr, &t0, &t0, include_receive_factor)?
            .value
            .norm(),
    )
}

/// Power ratio in dB with the zero floor applied.
pub fn to_db(ratio: f64) -> f64 {
    if ratio > 0.0 {
        (10.0 * ratio.log10()).max(DB_FLOOR)
    } else {
        DB_FLOOR
    }
}

/// `10 log10(ISL / |chi(theta0, theta0, 0, 0)|^2)`.
pub fn islr(
    isl: f64,
    w: &CMatrix,
    geometry: &ArrayGeometry,
    corr: &AFCorrelationMatrix,
    theta0: f64,
    include_receive_factor: bool,
) -> Result<f64, AmbiguityError> {
    let peak = mainlobe(w, geometry, corr, theta0, include_receive_factor)?;
    islr_from_peak(isl, peak)
}

pub fn islr_from_peak(isl: f64, peak: f64) -> Result<f64, AmbiguityError> {
    if !(peak > 0.0) {
        return Err(AmbiguityError::ZeroMainlobe);
    }
    Ok(to_db(isl / (peak * peak)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NarrowbandCheck {
    /// `2 v_max B T / c`.
    pub value: f64,
    pub satisfied: bool,
}

/// Narrowband criterion with bandwidth `B = f_s` and duration `T = N / f_s`.
/// Violations are logged as warnings, never raised.
pub fn narrowband_check(waves: &WaveformSet, max_speed: f64) -> NarrowbandCheck {
    let bandwidth = waves.sample_rate();
    let value = 2.0 * max_speed.abs() * bandwidth * waves.duration() / SPEED_OF_LIGHT;
    let satisfied = value < NARROWBAND_THRESHOLD;
    if !satisfied {
        log::warn!("narrowband assumption violated: 2vBT/c = {value:.3e}");
    }
    NarrowbandCheck { value, satisfied }
}
