//! Experiment configuration: a TOML file whose absent keys fall back to the
//! reference simulation parameters.
//!
//! Quantities carry their units as strings (`"16 dB"`, `"0 dBm"`,
//! `"10 MHz"`); angles are degrees in the file and radians everywhere else.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::optimizer::DesignLabel;
use crate::units::{self, UnitError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Syntax(String),
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("`{path}`: {reason}")]
    Invalid { path: String, reason: String },
}

fn invalid(path: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        path: path.to_owned(),
        reason: reason.into(),
    }
}

fn unit(path: &str) -> impl Fn(UnitError) -> ConfigError + '_ {
    move |e| invalid(path, e.to_string())
}

/// Allowed keys per section; anything else is rejected with its full path.
const SCHEMA: &[(&str, &[&str])] = &[
    (
        "system",
        &[
            "num_antennas",
            "num_users",
            "carrier_frequency",
            "element_spacing_wavelengths",
            "transmit_power",
            "sinr_min",
            "noise_power",
            "gain_target",
            "target_angle_deg",
        ],
    ),
    ("regions", &["angular", "range", "sample_rate"]),
    (
        "channel",
        &["los_dods_deg", "paths_per_user", "los_fraction"],
    ),
    ("waveform", &["roots", "length", "correlation"]),
    (
        "solver",
        &[
            "eps",
            "randomizations",
            "reduction",
            "subspace_tolerance",
            "cross_threshold",
            "sinr_margin",
        ],
    ),
    (
        "run",
        &["seed", "designs", "out_dir", "include_receive_factor"],
    ),
    ("sweep", &["sinr_db", "gain_db", "n_seeds"]),
    (
        "baselines",
        &[
            "mainlobe_width_deg",
            "pattern_step_deg",
            "mainlobe_step_deg",
        ],
    ),
];

const DEFAULT_DODS_DEG: [f64; 3] = [-30.0, 30.0, 45.0];
const DEFAULT_ROOTS: [u64; 3] = [1, 3, 5];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrelationMode {
    Aperiodic,
    Periodic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReductionMode {
    Full,
    Subspace,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SystemConfig {
    pub num_antennas: usize,
    pub num_users: usize,
    pub carrier_frequency_hz: f64,
    pub element_spacing_wavelengths: f64,
    pub transmit_power_mw: f64,
    pub sinr_min: f64,
    pub noise_power_mw: f64,
    pub gain_target_mw: f64,
    pub target_angle_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegionConfig {
    pub angular_intervals_deg: Vec<(f64, f64)>,
    pub angle_step_deg: f64,
    pub range_intervals_m: Vec<(f64, f64)>,
    pub sample_rate_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChannelSection {
    pub los_dods_deg: Vec<f64>,
    pub paths_per_user: usize,
    pub los_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WaveformConfig {
    pub roots: Vec<u64>,
    pub length: usize,
    pub correlation: CorrelationMode,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverConfig {
    pub eps: f64,
    pub randomizations: usize,
    pub reduction: ReductionMode,
    pub subspace_tolerance: f64,
    pub cross_threshold: f64,
    pub sinr_margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub seed: u64,
    pub designs: Vec<DesignLabel>,
    pub out_dir: String,
    pub include_receive_factor: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepConfig {
    pub sinr_db: Vec<f64>,
    pub gain_db: Vec<f64>,
    pub n_seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BaselineConfig {
    pub mainlobe_width_deg: f64,
    pub pattern_step_deg: f64,
    pub mainlobe_step_deg: f64,
}

/// Fully resolved and validated experiment parameters.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub system: SystemConfig,
    pub regions: RegionConfig,
    pub channel: ChannelSection,
    pub waveform: WaveformConfig,
    pub solver: SolverConfig,
    pub run: RunConfig,
    pub sweep: SweepConfig,
    pub baselines: BaselineConfig,
}

// Raw sections mirror the file; every key is optional.

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    system: RawSystem,
    #[serde(default)]
    regions: RawRegions,
    #[serde(default)]
    channel: RawChannel,
    #[serde(default)]
    waveform: RawWaveform,
    #[serde(default)]
    solver: RawSolver,
    #[serde(default)]
    run: RawRun,
    #[serde(default)]
    sweep: RawSweep,
    #[serde(default)]
    baselines: RawBaselines,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSystem {
    num_antennas: Option<i64>,
    num_users: Option<i64>,
    carrier_frequency: Option<String>,
    element_spacing_wavelengths: Option<f64>,
    transmit_power: Option<String>,
    sinr_min: Option<String>,
    noise_power: Option<String>,
    gain_target: Option<String>,
    target_angle_deg: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRegions {
    angular: Option<String>,
    range: Option<String>,
    sample_rate: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawChannel {
    los_dods_deg: Option<Vec<f64>>,
    paths_per_user: Option<i64>,
    los_fraction: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawWaveform {
    roots: Option<Vec<i64>>,
    length: Option<i64>,
    correlation: Option<CorrelationMode>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSolver {
    eps: Option<f64>,
    randomizations: Option<i64>,
    reduction: Option<ReductionMode>,
    subspace_tolerance: Option<f64>,
    cross_threshold: Option<f64>,
    sinr_margin: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRun {
    seed: Option<i64>,
    designs: Option<Vec<String>>,
    out_dir: Option<String>,
    include_receive_factor: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    sinr_db: Option<Vec<f64>>,
    gain_db: Option<Vec<f64>>,
    n_seeds: Option<i64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBaselines {
    mainlobe_width_deg: Option<f64>,
    pattern_step_deg: Option<f64>,
    mainlobe_step_deg: Option<f64>,
}

fn check_keys(table: &toml::Table) -> Result<(), ConfigError> {
    for (section, value) in table {
        let Some((_, keys)) = SCHEMA.iter().find(|(s, _)| s == section) else {
            return Err(ConfigError::UnknownKey(section.clone()));
        };
        let Some(inner) = value.as_table() else {
            return Err(invalid(section, "expected a table"));
        };
        if let Some(k) = inner.keys().find(|k| !keys.contains(&k.as_str())) {
            return Err(ConfigError::UnknownKey(format!("{section}.{k}")));
        }
    }
    Ok(())
}

fn count(path: &str, v: Option<i64>, default: usize, min: usize) -> Result<usize, ConfigError> {
    match v {
        None => Ok(default),
        Some(x) if x >= min as i64 => Ok(x as usize),
        Some(x) => Err(invalid(path, format!("must be at least {min}, got {x}"))),
    }
}

fn positive(path: &str, v: Option<f64>, default: f64) -> Result<f64, ConfigError> {
    let x = v.unwrap_or(default);
    if x.is_finite() && x > 0.0 {
        Ok(x)
    } else {
        Err(invalid(
            path,
            format!("must be positive and finite, got {x}"),
        ))
    }
}

fn string_or<T>(
    v: Option<&String>,
    default: &str,
    path: &str,
    parse: impl Fn(&str) -> Result<T, UnitError>,
) -> Result<T, ConfigError> {
    parse(v.map(String::as_str).unwrap_or(default)).map_err(unit(path))
}

impl ExperimentConfig {
    /// The reference parameter set (empty config).
    pub fn table_one() -> Self {
        Self::from_toml_str("").expect("defaults are valid")
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| ConfigError::Syntax(e.to_string()))?;
        check_keys(&table)?;
        let raw: RawConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Syntax(e.message().to_owned()))?;
        resolve(raw)
    }

    pub fn num_users(&self) -> usize {
        self.system.num_users
    }

    /// Canonical JSON of the resolved config, the input to the config hash.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}

fn resolve(raw: RawConfig) -> Result<ExperimentConfig, ConfigError> {
    let s = &raw.system;
    let num_antennas = count("system.num_antennas", s.num_antennas, 36, 1)?;

    let explicit_users = s
        .num_users
        .map(|_| count("system.num_users", s.num_users, 3, 1))
        .transpose()?;
    let dods = match &raw.channel.los_dods_deg {
        Some(d) => d.clone(),
        None => {
            let k = explicit_users.unwrap_or(3);
            if k > DEFAULT_DODS_DEG.len() {
                return Err(invalid(
                    "channel.los_dods_deg",
                    format!("must be given for {k} users"),
                ));
            }
            DEFAULT_DODS_DEG[..k].to_vec()
        }
    };
    let num_users = explicit_users.unwrap_or(dods.len());
    if dods.len() != num_users {
        return Err(invalid(
            "channel.los_dods_deg",
            format!("{} directions for {num_users} users", dods.len()),
        ));
    }
    if num_users == 0 {
        return Err(invalid(
            "channel.los_dods_deg",
            "at least one user is required",
        ));
    }
    if dods.iter().any(|d| !d.is_finite() || d.abs() > 90.0) {
        return Err(invalid(
            "channel.los_dods_deg",
            "directions must lie in [-90, 90] deg",
        ));
    }

    let roots: Vec<u64> = match &raw.waveform.roots {
        Some(r) => r
            .iter()
            .map(|&x| u64::try_from(x).ok().filter(|&x| x > 0))
            .collect::<Option<_>>()
            .ok_or_else(|| invalid("waveform.roots", "roots must be positive integers"))?,
        None => {
            if num_users > DEFAULT_ROOTS.len() {
                return Err(invalid(
                    "waveform.roots",
                    format!("must be given for {num_users} users"),
                ));
            }
            DEFAULT_ROOTS[..num_users].to_vec()
        }
    };
    if roots.len() != num_users {
        return Err(invalid(
            "waveform.roots",
            format!("{} roots for {num_users} users", roots.len()),
        ));
    }
    let length = count("waveform.length", raw.waveform.length, 512, 2)?;

    let transmit_power_mw = string_or(
        s.transmit_power.as_ref(),
        "0 dBm",
        "system.transmit_power",
        units::parse_power_mw,
    )?;
    let gain_target_mw = string_or(
        s.gain_target.as_ref(),
        "13 dB",
        "system.gain_target",
        units::parse_power_mw,
    )?;
    let noise_power_mw = string_or(
        s.noise_power.as_ref(),
        "-30 dBm",
        "system.noise_power",
        units::parse_power_mw,
    )?;
    let sinr_min = string_or(
        s.sinr_min.as_ref(),
        "16 dB",
        "system.sinr_min",
        units::parse_ratio,
    )?;
    if transmit_power_mw <= 0.0 {
        return Err(invalid("system.transmit_power", "must be positive"));
    }
    if noise_power_mw <= 0.0 {
        return Err(invalid("system.noise_power", "must be positive"));
    }
    if sinr_min <= 0.0 {
        return Err(invalid("system.sinr_min", "must be positive"));
    }
    if gain_target_mw <= 0.0 {
        return Err(invalid("system.gain_target", "must be positive"));
    }
    if gain_target_mw > transmit_power_mw * num_antennas as f64 {
        return Err(invalid(
            "system.gain_target",
            format!(
                "{gain_target_mw:.4} mW exceeds the array limit P_t*M = {:.4} mW",
                transmit_power_mw * num_antennas as f64
            ),
        ));
    }
    let target_angle_deg = s.target_angle_deg.unwrap_or(0.0);
    if !(target_angle_deg.is_finite() && target_angle_deg.abs() < 90.0) {
        return Err(invalid("system.target_angle_deg", "must lie in (-90, 90)"));
    }

    let angular = string_or(
        raw.regions.angular.as_ref(),
        "[-10,-5]∪[5,10] deg, step 0.1",
        "regions.angular",
        units::parse_angle_region,
    )?;
    let range_intervals_m = string_or(
        raw.regions.range.as_ref(),
        "[-1590,-90]∪[90,1590] m",
        "regions.range",
        units::parse_range_region,
    )?;

    let designs = match &raw.run.designs {
        None => DesignLabel::ALL.to_vec(),
        Some(list) => list
            .iter()
            .map(|d| {
                d.parse::<DesignLabel>()
                    .map_err(|e| invalid("run.designs", e))
            })
            .collect::<Result<_, _>>()?,
    };
    if designs.is_empty() {
        return Err(invalid("run.designs", "at least one design is required"));
    }

    let sweep_sinr = raw
        .sweep
        .sinr_db
        .clone()
        .unwrap_or_else(|| vec![10.0, 12.0, 14.0, 16.0, 18.0, 20.0]);
    let sweep_gain = raw
        .sweep
        .gain_db
        .clone()
        .unwrap_or_else(|| vec![units::linear_to_db(gain_target_mw)]);
    if sweep_sinr.is_empty() || sweep_sinr.iter().any(|x| !x.is_finite()) {
        return Err(invalid(
            "sweep.sinr_db",
            "must be a non-empty list of finite values",
        ));
    }
    if sweep_gain.is_empty() || sweep_gain.iter().any(|x| !x.is_finite()) {
        return Err(invalid(
            "sweep.gain_db",
            "must be a non-empty list of finite values",
        ));
    }

    let los_fraction = positive("channel.los_fraction", raw.channel.los_fraction, 0.9)?;
    if los_fraction > 1.0 {
        return Err(invalid("channel.los_fraction", "must not exceed 1"));
    }
    let sinr_margin = raw.solver.sinr_margin.unwrap_or(1e-3);
    if !(sinr_margin.is_finite() && (0.0..0.1).contains(&sinr_margin)) {
        return Err(invalid("solver.sinr_margin", "must lie in [0, 0.1)"));
    }
    let seed = match raw.run.seed {
        None => 0,
        Some(x) => u64::try_from(x).map_err(|_| invalid("run.seed", "must be non-negative"))?,
    };

    Ok(ExperimentConfig {
        system: SystemConfig {
            num_antennas,
            num_users,
            carrier_frequency_hz: string_or(
                s.carrier_frequency.as_ref(),
                "3.5 GHz",
                "system.carrier_frequency",
                units::parse_frequency_hz,
            )?,
            element_spacing_wavelengths: positive(
                "system.element_spacing_wavelengths",
                s.element_spacing_wavelengths,
                0.5,
            )?,
            transmit_power_mw,
            sinr_min,
            noise_power_mw,
            gain_target_mw,
            target_angle_deg,
        },
        regions: RegionConfig {
            angular_intervals_deg: angular.intervals_deg,
            angle_step_deg: angular.step_deg,
            range_intervals_m,
            sample_rate_hz: string_or(
                raw.regions.sample_rate.as_ref(),
                "10 MHz",
                "regions.sample_rate",
                units::parse_frequency_hz,
            )?,
        },
        channel: ChannelSection {
            los_dods_deg: dods,
            paths_per_user: count("channel.paths_per_user", raw.channel.paths_per_user, 3, 1)?,
            los_fraction,
        },
        waveform: WaveformConfig {
            roots,
            length,
            correlation: raw
                .waveform
                .correlation
                .unwrap_or(CorrelationMode::Aperiodic),
        },
        solver: SolverConfig {
            eps: positive("solver.eps", raw.solver.eps, 1e-7)?,
            randomizations: count("solver.randomizations", raw.solver.randomizations, 500, 1)?,
            reduction: raw.solver.reduction.unwrap_or(ReductionMode::Subspace),
            subspace_tolerance: positive(
                "solver.subspace_tolerance",
                raw.solver.subspace_tolerance,
                1e-10,
            )?,
            cross_threshold: positive("solver.cross_threshold", raw.solver.cross_threshold, 0.1)?,
            sinr_margin,
        },
        run: RunConfig {
            seed,
            designs,
            out_dir: raw.run.out_dir.clone().unwrap_or_else(|| "out".to_owned()),
            include_receive_factor: raw.run.include_receive_factor.unwrap_or(true),
        },
        sweep: SweepConfig {
            sinr_db: sweep_sinr,
            gain_db: sweep_gain,
            n_seeds: count("sweep.n_seeds", raw.sweep.n_seeds, 10, 1)?,
        },
        baselines: BaselineConfig {
            mainlobe_width_deg: positive(
                "baselines.mainlobe_width_deg",
                raw.baselines.mainlobe_width_deg,
                10.0,
            )?,
            pattern_step_deg: positive(
                "baselines.pattern_step_deg",
                raw.baselines.pattern_step_deg,
                0.1,
            )?,
            mainlobe_step_deg: positive(
                "baselines.mainlobe_step_deg",
                raw.baselines.mainlobe_step_deg,
                1.0,
            )?,
        },
    })
}
