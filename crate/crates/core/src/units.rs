//! Parsing of quantities written with units, as they appear in config files.
//!
//! Powers resolve to mW, ratios to linear scale, frequencies to Hz, angles to
//! degrees and ranges to meters.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("cannot parse {input:?}: {reason}")]
pub struct UnitError {
    pub input: String,
    pub reason: String,
}

fn fail(input: &str, reason: impl Into<String>) -> UnitError {
    UnitError {
        input: input.to_owned(),
        reason: reason.into(),
    }
}

/// Split `"<number> <unit>"` (the space is optional).
fn split_number(input: &str) -> Result<(f64, &str), UnitError> {
    let s = input.trim();
    let end = s
        .char_indices()
        .find(|&(i, c)| {
            !(c.is_ascii_digit()
                || c == '.'
                || c == '+'
                || c == '-'
                || ((c == 'e' || c == 'E') && i > 0 && exponent_follows(s, i)))
        })
        .map(|(i, _)| i)
        .unwrap_or(s.len());
    let value: f64 = s[..end]
        .parse()
        .map_err(|_| fail(input, "expected a number"))?;
    if !value.is_finite() {
        return Err(fail(input, "value is not finite"));
    }
    Ok((value, s[end..].trim()))
}

// an `e` inside a number is an exponent only when a digit or sign follows
fn exponent_follows(s: &str, i: usize) -> bool {
    matches!(s[i + 1..].chars().next(), Some(c) if c.is_ascii_digit() || c == '-' || c == '+')
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// Power in mW from `dBm`, `mW`, `uW` or `W`. A bare `dB` is read relative
/// to 1 mW, the convention for the target-gain requirement.
pub fn parse_power_mw(input: &str) -> Result<f64, UnitError> {
    let (v, unit) = split_number(input)?;
    let mw = match unit {
        "dBm" | "dB" => db_to_linear(v),
        "mW" => v,
        "uW" | "µW" => v * 1e-3,
        "W" => v * 1e3,
        "" => return Err(fail(input, "missing power unit (dBm, mW, W)")),
        other => return Err(fail(input, format!("unknown power unit {other:?}"))),
    };
    if mw < 0.0 {
        return Err(fail(input, "power must be non-negative"));
    }
    Ok(mw)
}

/// Dimensionless ratio: `"16 dB"` or a bare linear value.
pub fn parse_ratio(input: &str) -> Result<f64, UnitError> {
    let (v, unit) = split_number(input)?;
    match unit {
        "dB" => Ok(db_to_linear(v)),
        "" if v >= 0.0 => Ok(v),
        "" => Err(fail(input, "linear ratio must be non-negative")),
        other => Err(fail(input, format!("unknown ratio unit {other:?}"))),
    }
}

pub fn parse_frequency_hz(input: &str) -> Result<f64, UnitError> {
    let (v, unit) = split_number(input)?;
    let scale = match unit {
        "Hz" => 1.0,
        "kHz" => 1e3,
        "MHz" => 1e6,
        "GHz" => 1e9,
        "" => return Err(fail(input, "missing frequency unit")),
        other => return Err(fail(input, format!("unknown frequency unit {other:?}"))),
    };
    if v <= 0.0 {
        return Err(fail(input, "frequency must be positive"));
    }
    Ok(v * scale)
}

type Intervals = Vec<(f64, f64)>;

/// A union of closed intervals, e.g. `[-10,-5]∪[5,10]`. Returns the
/// intervals and the text after the last bracket.
fn parse_intervals(input: &str) -> Result<(Intervals, &str), UnitError> {
    let mut rest = input.trim();
    let mut out = Vec::new();
    loop {
        let Some(body) = rest.strip_prefix('[') else {
            return Err(fail(input, "expected '[' to open an interval"));
        };
        let close = body
            .find(']')
            .ok_or_else(|| fail(input, "unterminated interval"))?;
        let (lo, hi) = body[..close]
            .split_once(',')
            .ok_or_else(|| fail(input, "interval needs two comma-separated ends"))?;
        let lo: f64 = lo
            .trim()
            .parse()
            .map_err(|_| fail(input, "bad interval start"))?;
        let hi: f64 = hi
            .trim()
            .parse()
            .map_err(|_| fail(input, "bad interval end"))?;
        if !(lo.is_finite() && hi.is_finite()) || lo > hi {
            return Err(fail(input, format!("invalid interval [{lo}, {hi}]")));
        }
        out.push((lo, hi));
        rest = body[close + 1..].trim_start();
        match rest.chars().next() {
            Some('∪') => rest = rest['∪'.len_utf8()..].trim_start(),
            Some('U') | Some('u') if rest[1..].trim_start().starts_with('[') => {
                rest = rest[1..].trim_start()
            }
            _ => return Ok((out, rest)),
        }
    }
}

/// Angular region with its sampling step, both in degrees.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleRegion {
    pub intervals_deg: Vec<(f64, f64)>,
    pub step_deg: f64,
}

/// `"[-10,-5]∪[5,10] deg, step 0.1"`.
pub fn parse_angle_region(input: &str) -> Result<AngleRegion, UnitError> {
    let (intervals_deg, rest) = parse_intervals(input)?;
    let rest = rest
        .strip_prefix("deg")
        .ok_or_else(|| fail(input, "angular region must be given in deg"))?
        .trim_start();
    let rest = rest
        .strip_prefix(',')
        .ok_or_else(|| fail(input, "missing ', step <deg>'"))?
        .trim_start();
    let step = rest
        .strip_prefix("step")
        .ok_or_else(|| fail(input, "missing 'step'"))?
        .trim();
    let step = step.strip_suffix("deg").unwrap_or(step).trim();
    let step_deg: f64 = step.parse().map_err(|_| fail(input, "bad step"))?;
    if !(step_deg.is_finite() && step_deg > 0.0) {
        return Err(fail(input, "step must be positive"));
    }
    if intervals_deg
        .iter()
        .any(|&(lo, hi)| lo < -90.0 || hi > 90.0)
    {
        return Err(fail(input, "angles must lie in [-90, 90] deg"));
    }
    Ok(AngleRegion {
        intervals_deg,
        step_deg,
    })
}

/// `"[-1590,-90]∪[90,1590] m"` (also `km`), in meters.
pub fn parse_range_region(input: &str) -> Result<Vec<(f64, f64)>, UnitError> {
    let (intervals, rest) = parse_intervals(input)?;
    let scale = match rest {
        "m" => 1.0,
        "km" => 1e3,
        "" => return Err(fail(input, "missing range unit")),
        other => return Err(fail(input, format!("unknown range unit {other:?}"))),
    };
    Ok(intervals
        .into_iter()
        .map(|(a, b)| (a * scale, b * scale))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn powers() {
        assert_relative_eq!(parse_power_mw("0 dBm").unwrap(), 1.0);
        assert_relative_eq!(
            parse_power_mw("-30 dBm").unwrap(),
            1e-3,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            parse_power_mw("13 dB").unwrap(),
            19.952_623_149_688_8,
            max_relative = 1e-12
        );
        assert_relative_eq!(parse_power_mw("2W").unwrap(), 2000.0);
        assert!(parse_power_mw("5").is_err());
        assert!(parse_power_mw("5 dBW").is_err());
        assert!(parse_power_mw("-1 mW").is_err());
    }

    #[test]
    fn ratios_and_frequencies() {
        assert_relative_eq!(
            parse_ratio("16 dB").unwrap(),
            39.810_717_055_349_7,
            max_relative = 1e-12
        );
        assert_relative_eq!(parse_ratio("2.5").unwrap(), 2.5);
        assert_relative_eq!(parse_frequency_hz("10 MHz").unwrap(), 1e7);
        assert_relative_eq!(parse_frequency_hz("3.5GHz").unwrap(), 3.5e9);
        assert_relative_eq!(parse_frequency_hz("1e3 Hz").unwrap(), 1e3);
        assert!(parse_frequency_hz("0 Hz").is_err());
        assert!(parse_frequency_hz("NaN Hz").is_err());
    }

    #[test]
    fn regions() {
        let r = parse_angle_region("[-10,-5]∪[5,10] deg, step 0.1").unwrap();
        assert_eq!(r.intervals_deg, vec![(-10.0, -5.0), (5.0, 10.0)]);
        assert_relative_eq!(r.step_deg, 0.1);
        let r = parse_angle_region("[-10, -5] U [5, 10] deg, step 0.5 deg").unwrap();
        assert_eq!(r.intervals_deg.len(), 2);
        assert!(parse_angle_region("[-10,-5] deg").is_err());
        assert!(parse_angle_region("[5,-5] deg, step 1").is_err());
        assert!(parse_angle_region("[-100,5] deg, step 1").is_err());

        let d = parse_range_region("[-1590,-90]∪[90,1590] m").unwrap();
        assert_eq!(d, vec![(-1590.0, -90.0), (90.0, 1590.0)]);
        assert_eq!(
            parse_range_region("[1,2] km").unwrap(),
            vec![(1000.0, 2000.0)]
        );
        assert!(parse_range_region("[1,2]").is_err());
        assert!(parse_range_region("[1,2").is_err());
    }
}
