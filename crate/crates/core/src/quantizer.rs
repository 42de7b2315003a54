//! Equal-mass scalar quantization of normalized pitch and clamped binning of
//! durations.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numeric::CompensatedSum;

pub const DURATION_BINS: usize = 32;
pub const DEFAULT_LF_BINS: usize = 32;

/// Interior boundaries `b_1 < ... < b_{K-1}` (the outer ones are ±∞) and the
/// training mean of each bin. Bin `i` covers `(b_i, b_{i+1}]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LfQuantizer {
    boundaries: Vec<f64>,
    bin_means: Vec<f64>,
}

/// Fit diagnostics: per-bin counts on the fitting data.
#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub counts: Vec<usize>,
    pub total: usize,
    /// Bins holding more than `ceil(N/K) + 1` samples because of tied values.
    pub heavy_bins: Vec<usize>,
}

impl LfQuantizer {
    pub fn from_parts(boundaries: Vec<f64>, bin_means: Vec<f64>) -> Result<Self> {
        if bin_means.len() < 2 || boundaries.len() + 1 != bin_means.len() {
            return Err(Error::InvalidValue(format!(
                "quantizer needs K >= 2 means and K-1 boundaries, got {} and {}",
                bin_means.len(),
                boundaries.len()
            )));
        }
        if boundaries.iter().chain(&bin_means).any(|v| !v.is_finite()) {
            return Err(Error::InvalidValue("non-finite quantizer value".into()));
        }
        if boundaries.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidValue(
                "quantizer boundaries must be strictly increasing".into(),
            ));
        }
        Ok(Self {
            boundaries,
            bin_means,
        })
    }

    pub fn bins(&self) -> usize {
        self.bin_means.len()
    }

    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    pub fn bin_means(&self) -> &[f64] {
        &self.bin_means
    }

    /// Bin index `i` such that `x` lies in `(b_i, b_{i+1}]`.
    pub fn quantize(&self, x: f64) -> Result<usize> {
        if x.is_nan() {
            return Err(Error::InvalidValue("cannot quantize NaN".into()));
        }
        Ok(self.boundaries.partition_point(|&b| b < x))
    }

    pub fn dequantize(&self, bin: usize) -> Result<f64> {
        self.bin_means.get(bin).copied().ok_or_else(|| {
            Error::OutOfRange(format!("lf bin {bin} not in [0, {})", self.bins()))
        })
    }

    /// Counts of `values` per bin.
    pub fn occupancy(&self, values: &[f64]) -> Result<Vec<usize>> {
        let mut counts = vec![0; self.bins()];
        for &v in values {
            counts[self.quantize(v)?] += 1;
        }
        Ok(counts)
    }

    /// Stable identifier of the quantizer contents.
    pub fn fingerprint(&self) -> String {
        crate::config::hash_text(&self.to_text())
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("lf_quantizer v1 K={}\n", self.bins());
        for b in &self.boundaries {
            let _ = writeln!(out, "{b:.9}");
        }
        for m in &self.bin_means {
            let _ = writeln!(out, "{m:.9}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::InvalidValue("empty quantizer file".into()))?;
        let k: usize = header
            .strip_prefix("lf_quantizer v1 K=")
            .and_then(|k| k.trim().parse().ok())
            .ok_or_else(|| Error::InvalidValue(format!("bad quantizer header `{header}`")))?;
        if k < 2 {
            return Err(Error::InvalidValue(format!("quantizer K={k} < 2")));
        }
        let values: Vec<f64> = lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                l.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::InvalidValue(format!("bad quantizer value `{l}`")))
            })
            .collect::<Result<_>>()?;
        if values.len() != 2 * k - 1 {
            return Err(Error::InvalidValue(format!(
                "quantizer K={k} needs {} values, found {}",
                2 * k - 1,
                values.len()
            )));
        }
        let (b, m) = values.split_at(k - 1);
        Self::from_parts(b.to_vec(), m.to_vec())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?)
    }

    /// The quantizer as it reads back from its text form.
    pub fn rounded(&self) -> Result<Self> {
        Self::from_text(&self.to_text())
    }
}

/// Fits `K` equal-mass bins. Interior boundaries sit at the empirical `i/K`
/// quantiles, placed midway between adjacent order statistics. Where tied
/// values straddle a target position the cut moves to the nearest position
/// between distinct values, so an atom (such as the lf = 0 mass from
/// unvoiced segments) lands whole in one heavier bin.
pub fn fit_lf_quantizer(values: &[f64], k: usize) -> Result<(LfQuantizer, FitReport)> {
    if values.is_empty() {
        return Err(Error::Empty("quantizer fitting values".into()));
    }
    if k < 2 {
        return Err(Error::InvalidValue(format!("K must be >= 2, got {k}")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidValue("non-finite fitting value".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();

    // Positions m in 1..n where a cut between sorted[m-1] and sorted[m] separates distinct values.
    let valid: Vec<usize> = (1..n).filter(|&m| sorted[m - 1] < sorted[m]).collect();
    let distinct = valid.len() + 1;
    if k > distinct {
        return Err(Error::TooFewDistinct { bins: k, distinct });
    }

    let cuts_needed = k - 1;
    let mut picks: Vec<usize> = (1..k)
        .map(|i| {
            let target = (i * n + k / 2) / k;
            nearest_valid(&valid, target)
        })
        .collect();
    // Forward then backward pass to make the picked cut indices strictly increasing.
    for i in 1..cuts_needed {
        if picks[i] <= picks[i - 1] {
            picks[i] = picks[i - 1] + 1;
        }
    }
    for i in (0..cuts_needed).rev() {
        let upper = if i + 1 < cuts_needed {
            picks[i + 1] - 1
        } else {
            valid.len() - 1
        };
        picks[i] = picks[i].min(upper);
    }

    let cut_positions: Vec<usize> = picks.iter().map(|&j| valid[j]).collect();
    let boundaries: Vec<f64> = cut_positions
        .iter()
        .map(|&m| sorted[m - 1] + (sorted[m] - sorted[m - 1]) / 2.0)
        .collect();

    let mut edges = Vec::with_capacity(k + 1);
    edges.push(0);
    edges.extend_from_slice(&cut_positions);
    edges.push(n);
    let mut bin_means = Vec::with_capacity(k);
    let mut counts = Vec::with_capacity(k);
    for w in edges.windows(2) {
        let bin = &sorted[w[0]..w[1]];
        let s: CompensatedSum = bin.iter().copied().collect();
        bin_means.push(s.value() / bin.len() as f64);
        counts.push(bin.len());
    }
    let cap = n.div_ceil(k) + 1;
    let heavy_bins = counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > cap)
        .map(|(i, _)| i)
        .collect();

    let q = LfQuantizer::from_parts(boundaries, bin_means)?;
    Ok((
        q,
        FitReport {
            counts,
            total: n,
            heavy_bins,
        },
    ))
}

/// Index into `valid` of the cut position closest to `target` (upper on ties).
fn nearest_valid(valid: &[usize], target: usize) -> usize {
    let j = valid.partition_point(|&m| m < target);
    if j == 0 {
        return 0;
    }
    if j == valid.len() {
        return valid.len() - 1;
    }
    if target - valid[j - 1] < valid[j] - target {
        j - 1
    } else {
        j
    }
}

/// Duration bin: `min(d, 32) - 1`.
pub fn quantize_duration(d: i64) -> Result<usize> {
    if d <= 0 {
        return Err(Error::InvalidValue(format!("duration must be >= 1, got {d}")));
    }
    Ok((d.min(DURATION_BINS as i64) - 1) as usize)
}

pub fn dequantize_duration(bin: usize) -> Result<u32> {
    if bin >= DURATION_BINS {
        return Err(Error::OutOfRange(format!(
            "duration bin {bin} not in [0, {DURATION_BINS})"
        )));
    }
    Ok(bin as u32 + 1)
}
