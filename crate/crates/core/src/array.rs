//! Uniform linear array geometry and steering vectors.
//!
//! Element `m` (counted from zero at the phase reference) sits at `m * d`
//! along the array axis. A plane wave leaving at angle `theta` from
//! broadside picks up the delay `m * d * sin(theta) / c` at that element,
//! and the steering vector collects the corresponding phasors
//! `exp(j 2 pi f tau_m)` evaluated at `f = f_c + f_doppler`.

use std::f64::consts::PI;

use thiserror::Error;

use crate::{CMatrix, CVector, C64};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Error, PartialEq)]
pub enum ArrayError {
    #[error("invalid array geometry: {0}")]
    InvalidGeometry(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("dimension mismatch: expected {expected} rows, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Which side of the colocated monostatic array a steering vector describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Transmit,
    Receive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArrayGeometry {
    num_antennas: usize,
    element_spacing: f64,
    carrier_freq: f64,
}

impl ArrayGeometry {
    pub fn new(
        num_antennas: usize,
        element_spacing: f64,
        carrier_freq: f64,
    ) -> Result<Self, ArrayError> {
        if num_antennas == 0 {
            return Err(ArrayError::InvalidGeometry(
                "array needs at least one antenna".into(),
            ));
        }
        if !(element_spacing.is_finite() && element_spacing > 0.0) {
            return Err(ArrayError::InvalidGeometry(format!(
                "element spacing must be positive, got {element_spacing}"
            )));
        }
        if !(carrier_freq.is_finite() && carrier_freq > 0.0) {
            return Err(ArrayError::InvalidGeometry(format!(
                "carrier frequency must be positive, got {carrier_freq}"
            )));
        }
        Ok(Self {
            num_antennas,
            element_spacing,
            carrier_freq,
        })
    }

    /// Array with half-wavelength element spacing at the given carrier.
    pub fn half_wavelength(num_antennas: usize, carrier_freq: f64) -> Result<Self, ArrayError> {
        if !(carrier_freq.is_finite() && carrier_freq > 0.0) {
            return Err(ArrayError::InvalidGeometry(format!(
                "carrier frequency must be positive, got {carrier_freq}"
            )));
        }
        Self::new(
            num_antennas,
            SPEED_OF_LIGHT / carrier_freq / 2.0,
            carrier_freq,
        )
    }

    pub fn num_antennas(&self) -> usize {
        self.num_antennas
    }

    pub fn element_spacing(&self) -> f64 {
        self.element_spacing
    }

    pub fn carrier_freq(&self) -> f64 {
        self.carrier_freq
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_freq
    }

    /// Per-element delay `m d sin(theta) / c`. The transmit and receive
    /// apertures share the same spacing, so both sides use this.
    pub fn element_delay(&self, element: usize, theta: f64) -> f64 {
        element as f64 * self.element_spacing * theta.sin() / SPEED_OF_LIGHT
    }

    pub fn steering_vector(
        &self,
        doppler: f64,
        theta: f64,
        side: Side,
    ) -> Result<CVector, ArrayError> {
        if !theta.is_finite() || !doppler.is_finite() {
            return Err(ArrayError::InvalidInput(format!(
                "non-finite steering argument (theta = {theta}, doppler = {doppler})"
            )));
        }
        if theta.abs() > PI / 2.0 + 1e-12 {
            return Err(ArrayError::InvalidInput(format!(
                "steering angle {theta} rad outside [-pi/2, pi/2]"
            )));
        }
        // both apertures are the same ULA; `side` only documents intent
        let _ = side;
        Ok(self.steer_unchecked(doppler, theta))
    }

    /// Transmit steering vector at zero Doppler. Panics on non-finite angles;
    /// meant for validated internal grids.
    pub fn transmit(&self, theta: f64) -> CVector {
        assert!(theta.is_finite(), "steering angle must be finite");
        self.steer_unchecked(0.0, theta)
    }

    pub(crate) fn steer_unchecked(&self, doppler: f64, theta: f64) -> CVector {
        let f = self.carrier_freq + doppler;
        CVector::from_fn(self.num_antennas, |m, _| {
            C64::from_polar(1.0, 2.0 * PI * f * self.element_delay(m, theta))
        })
    }

    /// Columns of transmit steering vectors for every angle in `thetas`.
    pub fn steering_matrix(&self, doppler: f64, thetas: &[f64]) -> CMatrix {
        let mut b = CMatrix::zeros(self.num_antennas, thetas.len());
        for (p, &theta) in thetas.iter().enumerate() {
            b.set_column(p, &self.steer_unchecked(doppler, theta));
        }
        b
    }

    fn check_rows(&self, rows: usize) -> Result<(), ArrayError> {
        if rows != self.num_antennas {
            return Err(ArrayError::DimensionMismatch {
                expected: self.num_antennas,
                got: rows,
            });
        }
        Ok(())
    }
}

/// Beamforming gain toward `theta0`: `sum_k |b^H w_k|^2 = ||b^H W||^2`.
pub fn target_gain(
    w: &CMatrix,
    geometry: &ArrayGeometry,
    doppler: f64,
    theta0: f64,
) -> Result<f64, ArrayError> {
    geometry.check_rows(w.nrows())?;
    let b = geometry.steering_vector(doppler, theta0, Side::Transmit)?;
    Ok((b.adjoint() * w).norm_squared())
}

/// Transmit beampattern `b(theta)^H R_W b(theta)` over an angle grid.
///
/// The imaginary part of the quadratic form is discarded; it vanishes for
/// Hermitian `R_W`.
pub fn beampattern(
    r_w: &CMatrix,
    geometry: &ArrayGeometry,
    angles: &[f64],
) -> Result<Vec<f64>, ArrayError> {
    geometry.check_rows(r_w.nrows())?;
    geometry.check_rows(r_w.ncols())?;
    angles
        .iter()
        .map(|&theta| {
            let b = geometry.steering_vector(0.0, theta, Side::Transmit)?;
            Ok((b.adjoint() * r_w * &b)[(0, 0)].re)
        })
        .collect()
}
