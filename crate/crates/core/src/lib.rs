//! Transmit beamforming for a monostatic MIMO ISAC base station that
//! suppresses range-angle sidelobes of the transmit ambiguity function while
//! meeting per-user SINR, power and target-gain constraints.
//!
//! The pipeline runs channels -> waveforms -> correlation matrix -> conic
//! relaxation -> rank-one extraction -> metrics. See [`experiment::run`] for
//! the end-to-end driver.

// Link the system OpenBLAS that backs the solver's dense LAPACK calls.
extern crate openblas_src as _;

pub mod ambiguity;
pub mod array;
pub mod channel;
pub mod config;
pub mod evaluation;
pub mod experiment;
pub mod io;
pub mod optimizer;
pub mod units;
pub mod waveform;

pub use num_complex::Complex64 as C64;

pub type CVector = nalgebra::DVector<C64>;
pub type CMatrix = nalgebra::DMatrix<C64>;

pub use ambiguity::{AngleGrid, TargetParams};
pub use array::ArrayGeometry;
pub use channel::{ChannelConfig, ChannelSet};
pub use optimizer::{CovarianceSet, DesignConstraints, DesignLabel};
pub use waveform::{AFCorrelationMatrix, RangeDopplerGrid, SidelobeMask, WaveformSet};
