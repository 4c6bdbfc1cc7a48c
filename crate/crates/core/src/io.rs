//! Beamformer export: a CSV with one row per antenna and interleaved
//! real/imaginary columns per user, plus a JSON sidecar with what `verify`
//! needs to re-check it.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluation::MetricsBundle;
use crate::optimizer::{DesignLabel, DesignOutcome, ExtractionPath, SolveStatus};
use crate::{CMatrix, C64};

/// Largest dimension accepted from a file; guards allocation on bad input.
pub const MAX_DIMENSION: usize = 4096;

#[derive(Debug, Error)]
pub enum BeamformerIoError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("row {row}: {reason}")]
    Row { row: usize, reason: String },
    #[error("{0}")]
    Shape(String),
}

fn header(users: usize) -> Vec<String> {
    std::iter::once("antenna".to_owned())
        .chain((0..users).flat_map(|k| [format!("re_{k}"), format!("im_{k}")]))
        .collect()
}

/// One row per antenna: `antenna,re_0,im_0,re_1,im_1,...`.
pub fn write_beamformer_csv<W: Write>(out: W, w: &CMatrix) -> Result<(), BeamformerIoError> {
    let mut wr = csv::Writer::from_writer(out);
    wr.write_record(header(w.ncols()))?;
    for m in 0..w.nrows() {
        let mut row = vec![m.to_string()];
        for z in w.row(m).iter() {
            row.push(z.re.to_string());
            row.push(z.im.to_string());
        }
        wr.write_record(&row)?;
    }
    wr.flush()?;
    Ok(())
}

/// Parse a beamformer CSV. Antennas may appear in any order but each of
/// `0..M` exactly once, with finite values for every user.
pub fn read_beamformer_csv<R: Read>(input: R) -> Result<CMatrix, BeamformerIoError> {
    let mut rd = csv::Reader::from_reader(input);
    let headers = rd.headers()?.clone();
    let cols = headers.len();
    if cols < 3 || cols % 2 == 0 || cols > 1 + 2 * MAX_DIMENSION {
        return Err(BeamformerIoError::Shape(format!(
            "header has {cols} columns; expected antenna plus re/im pairs"
        )));
    }
    let users = (cols - 1) / 2;
    if headers
        .iter()
        .map(str::trim)
        .ne(header(users).iter().map(String::as_str))
    {
        return Err(BeamformerIoError::Shape(format!(
            "expected header {}, got {}",
            header(users).join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut rows: Vec<(usize, Vec<C64>)> = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let row = i + 2;
        let bad = |reason: String| BeamformerIoError::Row { row, reason };
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let antenna: usize = rec[0]
            .trim()
            .parse()
            .map_err(|_| bad(format!("bad antenna index {:?}", &rec[0])))?;
        if antenna >= MAX_DIMENSION {
            return Err(bad(format!("index exceeds {MAX_DIMENSION}")));
        }
        let mut values = Vec::with_capacity(2 * users);
        for field in rec.iter().skip(1) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| bad(format!("not a number: {field:?}")))?;
            if !v.is_finite() {
                return Err(bad("non-finite value".into()));
            }
            values.push(v);
        }
        rows.push((
            antenna,
            values.chunks(2).map(|p| C64::new(p[0], p[1])).collect(),
        ));
    }
    let m = rows.len();
    if m == 0 {
        return Err(BeamformerIoError::Shape("no antenna rows".into()));
    }
    let mut w = CMatrix::zeros(m, users);
    let mut seen = vec![false; m];
    for (antenna, values) in rows {
        if antenna >= m || std::mem::replace(&mut seen[antenna], true) {
            return Err(BeamformerIoError::Shape(format!(
                "antenna {antenna} out of range or repeated in a {m}-row file"
            )));
        }
        for (k, z) in values.into_iter().enumerate() {
            w[(antenna, k)] = z;
        }
    }
    Ok(w)
}

/// Sidecar of an exported beamformer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamformerMetadata {
    pub design: DesignLabel,
    pub status: SolveStatus,
    pub extraction_path: ExtractionPath,
    pub islr_db: f64,
    pub islr_vectorized_db: f64,
    pub per_user_sinr_db: Vec<f64>,
    pub total_power_mw: f64,
    pub target_gain_mw: f64,
    pub config_hash: String,
    /// Master seed of the channel draw.
    pub seed: u64,
}

impl BeamformerMetadata {
    pub fn new(
        outcome: &DesignOutcome,
        metrics: &MetricsBundle,
        config_hash: String,
        seed: u64,
    ) -> Self {
        Self {
            design: outcome.label,
            status: outcome.status,
            extraction_path: outcome.extraction.path.clone(),
            islr_db: metrics.islr_db,
            islr_vectorized_db: metrics.islr_vectorized_db,
            per_user_sinr_db: metrics.per_user_sinr_db.clone(),
            total_power_mw: metrics.total_power_mw,
            target_gain_mw: metrics.target_gain_mw,
            config_hash,
            seed,
        }
    }
}

pub fn read_metadata(path: &Path) -> Result<BeamformerMetadata, BeamformerIoError> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_is_exact() {
        let w = CMatrix::from_fn(5, 3, |m, k| {
            C64::new((m as f64 + 0.1).sqrt() / 7.0, -(k as f64 * 1.3).sin())
        });
        let mut buf = Vec::new();
        write_beamformer_csv(&mut buf, &w).unwrap();
        assert_eq!(read_beamformer_csv(buf.as_slice()).unwrap(), w);
    }

    #[test]
    fn rejects_incomplete_and_duplicate_grids() {
        let short = "antenna,re_0,im_0,re_1,im_1\n0,1,0,1\n";
        assert!(read_beamformer_csv(short.as_bytes()).is_err());
        let gap = "antenna,re_0,im_0\n0,1,0\n2,1,0\n";
        assert!(matches!(
            read_beamformer_csv(gap.as_bytes()),
            Err(BeamformerIoError::Shape(_))
        ));
        let dup = "antenna,re_0,im_0\n0,1,0\n0,1,0\n";
        assert!(read_beamformer_csv(dup.as_bytes()).is_err());
        let bad = "antenna,re_0,im_0\n0,NaN,0\n";
        assert!(read_beamformer_csv(bad.as_bytes()).is_err());
        let header = "a,b,c\n0,1,0\n";
        assert!(read_beamformer_csv(header.as_bytes()).is_err());
        assert!(read_beamformer_csv("".as_bytes()).is_err());
    }

    #[test]
    fn rows_may_come_in_any_order() {
        let text = "antenna,re_0,im_0\n1,2,0\n0,1,-1\n";
        let w = read_beamformer_csv(text.as_bytes()).unwrap();
        assert_eq!(w[(0, 0)], C64::new(1.0, -1.0));
        assert_eq!(w[(1, 0)], C64::new(2.0, 0.0));
    }
}
