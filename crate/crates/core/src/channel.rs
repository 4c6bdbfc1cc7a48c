//! Multiuser extended Saleh-Valenzuela channels and downlink SINR.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::array::ArrayGeometry;
use crate::{CMatrix, CVector, C64};

#[derive(Debug, Error, PartialEq)]
pub enum ChannelError {
    #[error("invalid channel configuration: {0}")]
    Config(String),
    #[error("noise power must be positive, got {0}")]
    NonPositiveNoise(f64),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelConfig {
    pub paths_per_user: usize,
    /// Fraction of the expected channel energy carried by the line-of-sight path.
    pub los_energy_fraction: f64,
    /// Linear path loss `g_k`, one per user.
    pub path_loss: Vec<f64>,
    /// Line-of-sight directions of departure in radians, one per user.
    pub los_dods: Vec<f64>,
    pub rng_seed: u64,
}

impl ChannelConfig {
    /// Unit path loss for every user.
    pub fn new(
        los_dods: Vec<f64>,
        paths_per_user: usize,
        los_energy_fraction: f64,
        rng_seed: u64,
    ) -> Self {
        Self {
            paths_per_user,
            los_energy_fraction,
            path_loss: vec![1.0; los_dods.len()],
            los_dods,
            rng_seed,
        }
    }

    pub fn num_users(&self) -> usize {
        self.los_dods.len()
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        if self.los_dods.is_empty() {
            return Err(ChannelError::Config("at least one user is required".into()));
        }
        if self.paths_per_user == 0 {
            return Err(ChannelError::Config(
                "paths_per_user must be at least 1".into(),
            ));
        }
        let f = self.los_energy_fraction;
        if !(f > 0.0 && f <= 1.0) {
            return Err(ChannelError::Config(format!(
                "LoS energy fraction must lie in (0, 1], got {f}"
            )));
        }
        if self.paths_per_user == 1 && f < 1.0 {
            return Err(ChannelError::Config(
                "a single-path channel cannot carry non-LoS energy; set los_energy_fraction = 1"
                    .into(),
            ));
        }
        if self.path_loss.len() != self.los_dods.len() {
            return Err(ChannelError::Config(format!(
                "{} path-loss values for {} users",
                self.path_loss.len(),
                self.los_dods.len()
            )));
        }
        if self.path_loss.iter().any(|g| !(g.is_finite() && *g > 0.0)) {
            return Err(ChannelError::Config("path loss must be positive".into()));
        }
        if self
            .los_dods
            .iter()
            .any(|phi| !phi.is_finite() || phi.abs() > PI / 2.0)
        {
            return Err(ChannelError::Config(
                "LoS directions must lie in [-pi/2, pi/2]".into(),
            ));
        }
        Ok(())
    }
}

/// Per-path draw kept alongside the channel so statistics can be inspected.
#[derive(Debug, Clone, PartialEq)]
pub struct PathGain {
    pub gain: C64,
    pub dod: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    pub vectors: Vec<CVector>,
    /// `paths[k][l]`, with `l = 0` the LoS path.
    pub paths: Vec<Vec<PathGain>>,
}

impl ChannelSet {
    pub fn num_users(&self) -> usize {
        self.vectors.len()
    }

    /// Build a channel set from explicit vectors (no path metadata).
    pub fn from_vectors(vectors: Vec<CVector>) -> Self {
        Self {
            paths: vec![Vec::new(); vectors.len()],
            vectors,
        }
    }
}

fn complex_gaussian(rng: &mut impl Rng, variance: f64) -> C64 {
    let scale = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re * scale, im * scale)
}

/// Draw `h_k = sqrt(g_k) sum_l beta_{l,k} a(phi_{l,k})` for every user.
///
/// The LoS gain has deterministic modulus `sqrt(los_fraction)` and a uniform
/// phase; the remaining `L_p - 1` gains are `CN(0, (1 - los_fraction)/(L_p - 1))`
/// with directions uniform on `(-pi/2, pi/2)`. Users are drawn in order from a
/// single ChaCha stream seeded by `rng_seed`.
pub fn generate_channels(
    config: &ChannelConfig,
    geometry: &ArrayGeometry,
) -> Result<ChannelSet, ChannelError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let nlos = config.paths_per_user - 1;
    let nlos_var = if nlos > 0 {
        (1.0 - config.los_energy_fraction) / nlos as f64
    } else {
        0.0
    };

    let mut vectors = Vec::with_capacity(config.num_users());
    let mut paths = Vec::with_capacity(config.num_users());
    for (k, &los_dod) in config.los_dods.iter().enumerate() {
        let psi: f64 = rng.random_range(0.0..2.0 * PI);
        let mut user_paths = vec![PathGain {
            gain: C64::from_polar(config.los_energy_fraction.sqrt(), psi),
            dod: los_dod,
        }];
        for _ in 0..nlos {
            let gain = complex_gaussian(&mut rng, nlos_var);
            let dod = rng.random_range(-PI / 2.0..PI / 2.0);
            user_paths.push(PathGain { gain, dod });
        }
        let mut h = CVector::zeros(geometry.num_antennas());
        for p in &user_paths {
            h += geometry.steer_unchecked(0.0, p.dod) * p.gain;
        }
        h *= C64::from(config.path_loss[k].sqrt());
        vectors.push(h);
        paths.push(user_paths);
    }
    Ok(ChannelSet { vectors, paths })
}

/// `SINR_k = |h_k^H w_k|^2 / (sum_{n != k} |h_k^H w_n|^2 + sigma^2)`, linear.
pub fn user_sinr(
    w: &CMatrix,
    channels: &ChannelSet,
    noise_power: f64,
) -> Result<Vec<f64>, ChannelError> {
    if !(noise_power.is_finite() && noise_power > 0.0) {
        return Err(ChannelError::NonPositiveNoise(noise_power));
    }
    let k_users = channels.num_users();
    if w.ncols() != k_users {
        return Err(ChannelError::Dimension(format!(
            "beamformer has {} columns for {} users",
            w.ncols(),
            k_users
        )));
    }
    channels
        .vectors
        .iter()
        .enumerate()
        .map(|(k, h)| {
            if h.len() != w.nrows() {
                return Err(ChannelError::Dimension(format!(
                    "channel of user {k} has length {}, beamformer has {} rows",
                    h.len(),
                    w.nrows()
                )));
            }
            let gains = h.adjoint() * w;
            let total: f64 = gains.iter().map(|g| g.norm_sqr()).sum();
            let signal = gains[k].norm_sqr();
            Ok(signal / (total - signal + noise_power))
        })
        .collect()
}

/// The covariance form `h^H R_k h / (h^H (R_W - R_k) h + sigma^2)` of the same
/// quantity, used to cross-check rank-one consistency.
pub fn user_sinr_covariance(
    covariances: &[CMatrix],
    channels: &ChannelSet,
    noise_power: f64,
) -> Result<Vec<f64>, ChannelError> {
    if !(noise_power.is_finite() && noise_power > 0.0) {
        return Err(ChannelError::NonPositiveNoise(noise_power));
    }
    if covariances.len() != channels.num_users() {
        return Err(ChannelError::Dimension(format!(
            "{} covariances for {} users",
            covariances.len(),
            channels.num_users()
        )));
    }
    let quad = |r: &CMatrix, h: &CVector| (h.adjoint() * r * h)[(0, 0)].re;
    Ok(channels
        .vectors
        .iter()
        .enumerate()
        .map(|(k, h)| {
            let signal = quad(&covariances[k], h);
            let all: f64 = covariances.iter().map(|r| quad(r, h)).sum();
            signal / (all - signal + noise_power)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn geometry() -> ArrayGeometry {
        ArrayGeometry::half_wavelength(8, 3.5e9).unwrap()
    }

    #[test]
    fn single_los_path_is_scaled_all_ones() {
        let cfg = ChannelConfig::new(vec![0.0], 1, 1.0, 7);
        let ch = generate_channels(&cfg, &geometry()).unwrap();
        let h = &ch.vectors[0];
        let first = h[0];
        assert_relative_eq!(first.norm(), 1.0, epsilon = 1e-12);
        for z in h.iter() {
            assert!((z - first).norm() < 1e-12);
        }
        assert_relative_eq!(h.norm_squared(), 8.0, epsilon = 1e-12);
    }

    #[test]
    fn same_seed_same_channels() {
        let cfg = ChannelConfig::new(vec![-0.5, 0.5, 0.8], 3, 0.9, 42);
        let a = generate_channels(&cfg, &geometry()).unwrap();
        let b = generate_channels(&cfg, &geometry()).unwrap();
        assert_eq!(a, b);
        let mut other = cfg.clone();
        other.rng_seed = 43;
        assert_ne!(a, generate_channels(&other, &geometry()).unwrap());
    }

    #[test]
    fn config_errors() {
        let g = geometry();
        let cfg = ChannelConfig::new(vec![0.0], 1, 0.9, 1);
        assert!(matches!(
            generate_channels(&cfg, &g),
            Err(ChannelError::Config(_))
        ));
        let cfg = ChannelConfig::new(vec![0.0], 3, 0.0, 1);
        assert!(generate_channels(&cfg, &g).is_err());
        let cfg = ChannelConfig::new(vec![], 3, 0.9, 1);
        assert!(generate_channels(&cfg, &g).is_err());
    }

    #[test]
    fn single_user_matched_sinr() {
        let g = geometry();
        let ch = generate_channels(&ChannelConfig::new(vec![0.3], 3, 0.9, 5), &g).unwrap();
        let h = &ch.vectors[0];
        let p: f64 = 0.5;
        let w = CMatrix::from_column_slice(8, 1, (h * C64::from(p.sqrt() / h.norm())).as_slice());
        let s = user_sinr(&w, &ch, 1e-3).unwrap();
        assert_relative_eq!(s[0], p * h.norm_squared() / 1e-3, max_relative = 1e-12);
    }

    #[test]
    fn zero_beamformer_and_bad_noise() {
        let g = geometry();
        let ch = generate_channels(&ChannelConfig::new(vec![0.3, -0.2], 3, 0.9, 5), &g).unwrap();
        let w = CMatrix::zeros(8, 2);
        assert_eq!(user_sinr(&w, &ch, 1e-3).unwrap(), vec![0.0, 0.0]);
        assert_eq!(
            user_sinr(&w, &ch, 0.0),
            Err(ChannelError::NonPositiveNoise(0.0))
        );
        assert!(user_sinr(&CMatrix::zeros(8, 3), &ch, 1e-3).is_err());
    }
}
