//! Probing waveforms and the discretized range-Doppler correlation matrix.
//!
//! For users `k, i`, lag `l` (in range bins) and Doppler offset `df`, the
//! correlation entry is
//!
//! ```text
//! X_ki(l, df) = sum_n s_k[n] conj(s_i[n - l]) exp(-j 2 pi df n / f_s)
//! ```
//!
//! with samples outside `0..N` treated as zero (aperiodic correlation) or
//! wrapped modulo `N` (periodic correlation). One lag corresponds to a range
//! offset of `c / (2 f_s)` meters.

use std::f64::consts::PI;
use std::io::Read;

use thiserror::Error;

use crate::array::SPEED_OF_LIGHT;
use crate::{CMatrix, C64};

#[derive(Debug, Error, PartialEq)]
pub enum WaveformError {
    #[error("root {root} is not coprime with length {length}")]
    InvalidRoot { root: u64, length: usize },
    #[error("invalid waveform: {0}")]
    Invalid(String),
    #[error("lag {lag} out of range for sequences of length {length}")]
    LagOutOfRange { lag: i64, length: usize },
    #[error("sidelobe region {lo} m .. {hi} m reaches lag {lag}, outside the grid window")]
    RegionOutsideWindow { lo: f64, hi: f64, lag: i64 },
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("waveform CSV line {line}: {msg}")]
    Csv { line: u64, msg: String },
}

pub fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Zadoff-Chu sequence of the given root and length.
///
/// Even lengths use `exp(-j pi u n^2 / N)`, odd lengths `exp(-j pi u n (n + 1) / N)`.
/// The phase index is reduced modulo `2N` in integer arithmetic so long
/// sequences keep full precision.
pub fn zadoff_chu(root: u64, length: usize) -> Result<Vec<C64>, WaveformError> {
    if length == 0 {
        return Err(WaveformError::Invalid(
            "sequence length must be positive".into(),
        ));
    }
    let n_len = length as u64;
    if root == 0 || gcd(root, n_len) != 1 {
        return Err(WaveformError::InvalidRoot { root, length });
    }
    let modulus = 2 * n_len as u128;
    Ok((0..n_len)
        .map(|n| {
            let n = n as u128;
            let quad = if length.is_multiple_of(2) {
                n * n
            } else {
                n * (n + 1)
            };
            let idx = (root as u128 % modulus) * (quad % modulus) % modulus;
            C64::from_polar(1.0, -PI * idx as f64 / n_len as f64)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaveformSet {
    sequences: Vec<Vec<C64>>,
    sample_rate: f64,
}

impl WaveformSet {
    pub fn new(sequences: Vec<Vec<C64>>, sample_rate: f64) -> Result<Self, WaveformError> {
        if sequences.is_empty() {
            return Err(WaveformError::Invalid("no sequences".into()));
        }
        let n = sequences[0].len();
        if n == 0 || sequences.iter().any(|s| s.len() != n) {
            return Err(WaveformError::Invalid(
                "all sequences must share one nonzero length".into(),
            ));
        }
        if sequences
            .iter()
            .flatten()
            .any(|z| !z.re.is_finite() || !z.im.is_finite())
        {
            return Err(WaveformError::Invalid("non-finite sample".into()));
        }
        if !(sample_rate.is_finite() && sample_rate > 0.0) {
            return Err(WaveformError::Invalid(format!(
                "sample rate must be positive, got {sample_rate}"
            )));
        }
        Ok(Self {
            sequences,
            sample_rate,
        })
    }

    /// One Zadoff-Chu sequence per root. Roots must be distinct and coprime with `length`.
    pub fn zadoff_chu(
        roots: &[u64],
        length: usize,
        sample_rate: f64,
    ) -> Result<Self, WaveformError> {
        for (a, r) in roots.iter().enumerate() {
            if roots[..a].contains(r) {
                return Err(WaveformError::Invalid(format!("duplicate root {r}")));
            }
        }
        let seqs = roots
            .iter()
            .map(|&u| zadoff_chu(u, length))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(seqs, sample_rate)
    }

    pub fn num_users(&self) -> usize {
        self.sequences.len()
    }

    pub fn len(&self) -> usize {
        self.sequences[0].len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn sequence(&self, k: usize) -> &[C64] {
        &self.sequences[k]
    }

    pub fn energy(&self, k: usize) -> f64 {
        self.sequences[k].iter().map(|z| z.norm_sqr()).sum()
    }

    /// Signal duration `N / f_s` in seconds.
    pub fn duration(&self) -> f64 {
        self.len() as f64 / self.sample_rate
    }

    pub fn range_bin(&self) -> f64 {
        range_bin(self.sample_rate)
    }
}

/// Range offset of one lag, `c / (2 f_s)`.
pub fn range_bin(sample_rate: f64) -> f64 {
    SPEED_OF_LIGHT / (2.0 * sample_rate)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CorrelationKind {
    #[default]
    Aperiodic,
    Periodic,
}

/// Direct sum `sum_n a[n] conj(b[n - lag]) exp(-j 2 pi df n / f_s)`.
pub fn correlate(a: &[C64], b: &[C64], lag: i64, doppler_norm: f64, kind: CorrelationKind) -> C64 {
    let n = a.len() as i64;
    let rot = |idx: i64| {
        if doppler_norm == 0.0 {
            C64::new(1.0, 0.0)
        } else {
            C64::from_polar(1.0, -2.0 * PI * doppler_norm * idx as f64)
        }
    };
    match kind {
        CorrelationKind::Aperiodic => {
            let lo = lag.max(0);
            let hi = n.min(n + lag);
            (lo..hi)
                .map(|idx| a[idx as usize] * b[(idx - lag) as usize].conj() * rot(idx))
                .sum()
        }
        CorrelationKind::Periodic => (0..n)
            .map(|idx| a[idx as usize] * b[(idx - lag).rem_euclid(n) as usize].conj() * rot(idx))
            .sum(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RangeDopplerGrid {
    lags: Vec<i64>,
    doppler_bins: Vec<f64>,
}

impl RangeDopplerGrid {
    pub fn new(lags: Vec<i64>, doppler_bins: Vec<f64>) -> Result<Self, WaveformError> {
        if !lags.windows(2).all(|w| w[0] < w[1]) {
            return Err(WaveformError::Grid(
                "lags must be strictly increasing".into(),
            ));
        }
        if !lags.contains(&0) {
            return Err(WaveformError::Grid("lag set must contain zero".into()));
        }
        let mut neg: Vec<i64> = lags.iter().map(|l| -l).collect();
        neg.reverse();
        if neg != lags {
            return Err(WaveformError::Grid(
                "lag set must be symmetric about zero".into(),
            ));
        }
        if doppler_bins.is_empty() || doppler_bins.iter().any(|f| !f.is_finite()) {
            return Err(WaveformError::Grid(
                "Doppler bins must be finite and nonempty".into(),
            ));
        }
        Ok(Self { lags, doppler_bins })
    }

    /// Lags `-max_lag..=max_lag` at zero Doppler.
    pub fn symmetric(max_lag: i64) -> Self {
        Self {
            lags: (-max_lag.abs()..=max_lag.abs()).collect(),
            doppler_bins: vec![0.0],
        }
    }

    pub fn lags(&self) -> &[i64] {
        &self.lags
    }

    pub fn doppler_bins(&self) -> &[f64] {
        &self.doppler_bins
    }

    pub fn num_lags(&self) -> usize {
        self.lags.len()
    }

    pub fn num_doppler(&self) -> usize {
        self.doppler_bins.len()
    }

    pub fn max_lag(&self) -> i64 {
        *self.lags.last().expect("grid always holds the zero lag")
    }

    pub fn lag_index(&self, lag: i64) -> Option<usize> {
        self.lags.binary_search(&lag).ok()
    }

    /// Index of a Doppler bin, matched to within 1e-9 Hz relative.
    pub fn doppler_index(&self, freq: f64) -> Option<usize> {
        self.doppler_bins
            .iter()
            .position(|&f| (f - freq).abs() <= 1e-9 * f.abs().max(1.0))
    }
}

/// `K x K` blocks of correlation values over a range-Doppler grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AFCorrelationMatrix {
    num_users: usize,
    grid: RangeDopplerGrid,
    sample_rate: f64,
    energies: Vec<f64>,
    // [((k * K + i) * L_r + lag) * L_d + doppler]
    data: Vec<C64>,
}

impl AFCorrelationMatrix {
    fn offset(&self, k: usize, i: usize, lag_idx: usize, dop_idx: usize) -> usize {
        ((k * self.num_users + i) * self.grid.num_lags() + lag_idx) * self.grid.num_doppler()
            + dop_idx
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn grid(&self) -> &RangeDopplerGrid {
        &self.grid
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn range_bin(&self) -> f64 {
        range_bin(self.sample_rate)
    }

    pub fn energy(&self, k: usize) -> f64 {
        self.energies[k]
    }

    pub fn entry(&self, k: usize, i: usize, lag_idx: usize, dop_idx: usize) -> C64 {
        self.data[self.offset(k, i, lag_idx, dop_idx)]
    }

    /// The `K x K` matrix `X(lag, doppler)`.
    pub fn x_matrix(&self, lag_idx: usize, dop_idx: usize) -> CMatrix {
        CMatrix::from_fn(self.num_users, self.num_users, |k, i| {
            self.entry(k, i, lag_idx, dop_idx)
        })
    }

    fn keep_blocks(&self, keep: impl Fn(usize, usize) -> bool) -> Self {
        let mut out = self.clone();
        for k in 0..self.num_users {
            for i in 0..self.num_users {
                if keep(k, i) {
                    continue;
                }
                for l in 0..self.grid.num_lags() {
                    for d in 0..self.grid.num_doppler() {
                        let o = out.offset(k, i, l, d);
                        out.data[o] = C64::new(0.0, 0.0);
                    }
                }
            }
        }
        out
    }

    /// Copy with every off-diagonal (cross-user) block set to zero.
    pub fn without_cross_blocks(&self) -> Self {
        self.keep_blocks(|k, i| k == i)
    }

    /// Copy with every diagonal (auto) block set to zero.
    pub fn cross_blocks_only(&self) -> Self {
        self.keep_blocks(|k, i| k != i)
    }

    /// Masked diagonal block of user `k`, flattened over retained cells in
    /// grid order (lag-major, then Doppler).
    pub fn masked_auto(&self, k: usize, mask: &SidelobeMask) -> Vec<C64> {
        let mut out = Vec::with_capacity(mask.retained());
        for l in 0..self.grid.num_lags() {
            for d in 0..self.grid.num_doppler() {
                if mask.cell(l, d) {
                    out.push(self.entry(k, k, l, d));
                }
            }
        }
        out
    }

    /// Largest masked cross-block modulus normalized by `sqrt(E_k E_i)`.
    /// Zero for a single user.
    pub fn max_masked_cross_ratio(&self, mask: &SidelobeMask) -> f64 {
        let mut worst: f64 = 0.0;
        for k in 0..self.num_users {
            for i in 0..self.num_users {
                if k == i {
                    continue;
                }
                let norm = (self.energies[k] * self.energies[i]).sqrt();
                for l in 0..self.grid.num_lags() {
                    for d in 0..self.grid.num_doppler() {
                        if mask.cell(l, d) {
                            worst = worst.max(self.entry(k, i, l, d).norm() / norm);
                        }
                    }
                }
            }
        }
        worst
    }

    /// Largest ratio `|X_ki| / sqrt(E_k E_i)` over all entries; at most 1 by
    /// Cauchy-Schwarz.
    pub fn max_normalized_entry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for k in 0..self.num_users {
            for i in 0..self.num_users {
                let norm = (self.energies[k] * self.energies[i]).sqrt();
                for l in 0..self.grid.num_lags() {
                    for d in 0..self.grid.num_doppler() {
                        worst = worst.max(self.entry(k, i, l, d).norm() / norm);
                    }
                }
            }
        }
        worst
    }
}

pub fn build_correlation_matrix(
    waves: &WaveformSet,
    grid: &RangeDopplerGrid,
    kind: CorrelationKind,
) -> Result<AFCorrelationMatrix, WaveformError> {
    let n = waves.len();
    if grid.max_lag() >= n as i64 {
        return Err(WaveformError::LagOutOfRange {
            lag: grid.max_lag(),
            length: n,
        });
    }
    let k_users = waves.num_users();
    let mut data = Vec::with_capacity(k_users * k_users * grid.num_lags() * grid.num_doppler());
    for k in 0..k_users {
        for i in 0..k_users {
            for &lag in grid.lags() {
                for &df in grid.doppler_bins() {
                    data.push(correlate(
                        waves.sequence(k),
                        waves.sequence(i),
                        lag,
                        df / waves.sample_rate(),
                        kind,
                    ));
                }
            }
        }
    }
    Ok(AFCorrelationMatrix {
        num_users: k_users,
        grid: grid.clone(),
        sample_rate: waves.sample_rate(),
        energies: (0..k_users).map(|k| waves.energy(k)).collect(),
        data,
    })
}

/// Closed interval of range offsets in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RangeInterval {
    pub lo: f64,
    pub hi: f64,
}

impl RangeInterval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    /// Integer lags whose range offset lies inside the closed interval.
    pub fn lags(&self, bin: f64) -> std::ops::RangeInclusive<i64> {
        // snap values within 1e-9 bins of an integer so exact boundaries are kept
        let snap = |x: f64| {
            let r = x.round();
            if (x - r).abs() < 1e-9 {
                r
            } else {
                x
            }
        };
        let first = snap(self.lo / bin).ceil() as i64;
        let last = snap(self.hi / bin).floor() as i64;
        first..=last
    }
}

/// 0/1 selection of range-Doppler cells counted as sidelobes. The same
/// pattern applies to every user block.
#[derive(Debug, Clone, PartialEq)]
pub struct SidelobeMask {
    num_lags: usize,
    num_doppler: usize,
    cells: Vec<bool>,
}

impl SidelobeMask {
    pub fn cell(&self, lag_idx: usize, dop_idx: usize) -> bool {
        self.cells[lag_idx * self.num_doppler + dop_idx]
    }

    /// Mask value for block `(k, i)`; identical across blocks.
    pub fn entry(&self, _k: usize, _i: usize, lag_idx: usize, dop_idx: usize) -> u8 {
        self.cell(lag_idx, dop_idx) as u8
    }

    pub fn retained(&self) -> usize {
        self.cells.iter().filter(|c| **c).count()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.num_lags, self.num_doppler)
    }

    /// Retained `(lag_idx, dop_idx)` pairs in grid order.
    pub fn retained_cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.num_lags)
            .flat_map(move |l| (0..self.num_doppler).map(move |d| (l, d)))
            .filter(move |&(l, d)| self.cell(l, d))
    }

    /// True when every cell retained here is also retained in `other`.
    pub fn is_subset_of(&self, other: &SidelobeMask) -> bool {
        self.shape() == other.shape() && self.cells.iter().zip(&other.cells).all(|(a, b)| !a || *b)
    }
}

/// Mask retaining the zero-Doppler cells whose range offset falls in any of
/// the given intervals. Cells at other Doppler bins are never retained.
pub fn build_mask(
    grid: &RangeDopplerGrid,
    sample_rate: f64,
    region: &[RangeInterval],
) -> Result<SidelobeMask, WaveformError> {
    let bin = range_bin(sample_rate);
    let mut cells = vec![false; grid.num_lags() * grid.num_doppler()];
    let zero_dop = grid.doppler_index(0.0);
    for iv in region {
        if !(iv.lo.is_finite() && iv.hi.is_finite()) || iv.lo > iv.hi {
            return Err(WaveformError::Grid(format!(
                "bad range interval [{}, {}]",
                iv.lo, iv.hi
            )));
        }
        for lag in iv.lags(bin) {
            let Some(l) = grid.lag_index(lag) else {
                return Err(WaveformError::RegionOutsideWindow {
                    lo: iv.lo,
                    hi: iv.hi,
                    lag,
                });
            };
            if let Some(d) = zero_dop {
                cells[l * grid.num_doppler() + d] = true;
            }
        }
    }
    Ok(SidelobeMask {
        num_lags: grid.num_lags(),
        num_doppler: grid.num_doppler(),
        cells,
    })
}

/// Parse one complex sequence from two-column `real,imag` CSV rows.
/// Blank lines and lines starting with `#` are skipped; there is no header.
pub fn read_waveform_csv<R: Read>(reader: R) -> Result<Vec<C64>, WaveformError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| WaveformError::Csv {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            msg: e.to_string(),
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        if rec.len() != 2 {
            return Err(WaveformError::Csv {
                line,
                msg: format!("expected 2 columns, found {}", rec.len()),
            });
        }
        let parse = |s: &str| -> Result<f64, WaveformError> {
            let v: f64 = s.parse().map_err(|_| WaveformError::Csv {
                line,
                msg: format!("not a number: {s:?}"),
            })?;
            if !v.is_finite() {
                return Err(WaveformError::Csv {
                    line,
                    msg: format!("non-finite value {s:?}"),
                });
            }
            Ok(v)
        };
        out.push(C64::new(parse(&rec[0])?, parse(&rec[1])?));
    }
    if out.is_empty() {
        return Err(WaveformError::Csv {
            line: 0,
            msg: "no samples".into(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn zc_length_four() {
        let x = zadoff_chu(1, 4).unwrap();
        let expected = [0.0, -PI / 4.0, -PI, -9.0 * PI / 4.0];
        for (z, ph) in x.iter().zip(expected) {
            assert!((z - C64::from_polar(1.0, ph)).norm() < 1e-12);
        }
    }

    #[test]
    fn zc_rejects_non_coprime_root() {
        assert_eq!(
            zadoff_chu(2, 512),
            Err(WaveformError::InvalidRoot {
                root: 2,
                length: 512
            })
        );
        assert!(zadoff_chu(0, 7).is_err());
        assert!(WaveformSet::zadoff_chu(&[1, 1], 8, 1e6).is_err());
    }

    #[test]
    fn zc_512_unit_modulus() {
        let w = WaveformSet::zadoff_chu(&[1], 512, 10e6).unwrap();
        assert!(w.sequence(0).iter().all(|z| (z.norm() - 1.0).abs() < 1e-12));
        assert_relative_eq!(w.energy(0), 512.0, epsilon = 1e-9);
        assert_relative_eq!(w.duration(), 51.2e-6, max_relative = 1e-12);
    }

    #[test]
    fn mask_counts_table_one_region() {
        let grid = RangeDopplerGrid::symmetric(106);
        let region = [
            RangeInterval::new(-1590.0, -90.0),
            RangeInterval::new(90.0, 1590.0),
        ];
        let mask = build_mask(&grid, 10e6, &region).unwrap();
        assert_eq!(mask.retained(), 200);
        // lags 7..=106 on each side
        assert!(!mask.cell(grid.lag_index(6).unwrap(), 0));
        assert!(mask.cell(grid.lag_index(7).unwrap(), 0));
        assert!(mask.cell(grid.lag_index(-106).unwrap(), 0));
        assert!(!mask.cell(grid.lag_index(0).unwrap(), 0));
    }

    #[test]
    fn mask_region_outside_window() {
        let grid = RangeDopplerGrid::symmetric(50);
        let region = [RangeInterval::new(90.0, 1590.0)];
        assert!(matches!(
            build_mask(&grid, 10e6, &region),
            Err(WaveformError::RegionOutsideWindow { .. })
        ));
    }

    #[test]
    fn empty_and_full_masks() {
        let grid = RangeDopplerGrid::symmetric(10);
        assert_eq!(build_mask(&grid, 10e6, &[]).unwrap().retained(), 0);
        let bin = range_bin(10e6);
        let full = build_mask(
            &grid,
            10e6,
            &[
                RangeInterval::new(-10.0 * bin, -bin),
                RangeInterval::new(bin, 10.0 * bin),
            ],
        )
        .unwrap();
        assert_eq!(full.retained(), 20);
        assert!(!full.cell(grid.lag_index(0).unwrap(), 0));
    }

    #[test]
    fn grid_validation() {
        assert!(RangeDopplerGrid::new(vec![-1, 0, 2], vec![0.0]).is_err());
        assert!(RangeDopplerGrid::new(vec![-1, 1], vec![0.0]).is_err());
        assert!(RangeDopplerGrid::new(vec![-1, 0, 1], vec![]).is_err());
        assert!(RangeDopplerGrid::new(vec![-1, 0, 1], vec![0.0, 100.0]).is_ok());
    }

    #[test]
    fn lag_beyond_length_errors() {
        let w = WaveformSet::zadoff_chu(&[1], 8, 1e6).unwrap();
        assert!(matches!(
            build_correlation_matrix(
                &w,
                &RangeDopplerGrid::symmetric(8),
                CorrelationKind::Aperiodic
            ),
            Err(WaveformError::LagOutOfRange { .. })
        ));
    }

    #[test]
    fn csv_import() {
        let text = "# user 1\n1.0, 0.0\n0.5,-0.5\n\n-1e-3,2\n";
        let s = read_waveform_csv(text.as_bytes()).unwrap();
        assert_eq!(
            s,
            vec![
                C64::new(1.0, 0.0),
                C64::new(0.5, -0.5),
                C64::new(-1e-3, 2.0)
            ]
        );
        assert!(read_waveform_csv("1,2,3\n".as_bytes()).is_err());
        assert!(read_waveform_csv("1,x\n".as_bytes()).is_err());
        assert!(read_waveform_csv("1,NaN\n".as_bytes()).is_err());
        assert!(read_waveform_csv("".as_bytes()).is_err());
    }
}
