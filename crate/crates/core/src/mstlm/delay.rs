//! Encoding of segment sequences into model tokens and the delayed alignment
//! of prosody streams behind the unit stream.

use super::MsTlmConfig;
use crate::error::{Error, Result};
use crate::quantizer::{quantize_duration, LfQuantizer};
use crate::representation::SegmentSequence;

/// A segment sequence in model vocabulary, with raw values kept for metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedUtterance {
    pub units: Vec<usize>,
    pub d: Vec<u32>,
    pub lf: Vec<f64>,
    pub d_bins: Vec<usize>,
    /// Present when a quantizer was supplied.
    pub lf_bins: Option<Vec<usize>>,
}

impl EncodedUtterance {
    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn from_parts(units: Vec<usize>, d: Vec<u32>, lf: Vec<f64>, quantizer: Option<&LfQuantizer>) -> Result<Self> {
        if d.len() != units.len() || lf.len() != units.len() {
            return Err(Error::LengthMismatch {
                what: "encoded streams",
                expected: units.len(),
                got: d.len().min(lf.len()),
            });
        }
        let d_bins = d
            .iter()
            .map(|&v| quantize_duration(v as i64))
            .collect::<Result<Vec<_>>>()?;
        let lf_bins = match quantizer {
            Some(q) => Some(lf.iter().map(|&v| q.quantize(v)).collect::<Result<Vec<_>>>()?),
            None => None,
        };
        Ok(Self {
            units,
            d,
            lf,
            d_bins,
            lf_bins,
        })
    }
}

pub fn encode(seq: &SegmentSequence, quantizer: Option<&LfQuantizer>) -> Result<EncodedUtterance> {
    EncodedUtterance::from_parts(
        seq.segments.iter().map(|s| s.u as usize).collect(),
        seq.segments.iter().map(|s| s.d).collect(),
        seq.segments.iter().map(|s| s.lf).collect(),
        quantizer,
    )
}

/// One prosody stream value as seen by the model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProsodyToken {
    Pad,
    Bin(usize),
    Value(f64),
}

/// Step-aligned inputs and targets for one utterance. Step `s` (0-based)
/// corresponds to `t = s + 1`: the unit input is `u_{t-1}`, the prosody input
/// is segment `t-Δ-1`, the unit target is `u_t` and the prosody target is
/// segment `t-Δ`. `None` targets are masked.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayedBatch {
    pub delay: usize,
    pub segments: usize,
    pub input_u: Vec<usize>,
    pub input_d: Vec<ProsodyToken>,
    pub input_lf: Vec<ProsodyToken>,
    pub target_u: Vec<Option<usize>>,
    pub target_d: Vec<Option<ProsodyToken>>,
    pub target_lf: Vec<Option<ProsodyToken>>,
    /// Raw ground-truth prosody behind each unmasked prosody target.
    pub raw_d: Vec<Option<f64>>,
    pub raw_lf: Vec<Option<f64>>,
}

impl DelayedBatch {
    pub fn steps(&self) -> usize {
        self.input_u.len()
    }

    /// Unmasked target counts `(u, d, lf)`.
    pub fn counts(&self) -> (usize, usize, usize) {
        (
            self.target_u.iter().flatten().count(),
            self.target_d.iter().flatten().count(),
            self.target_lf.iter().flatten().count(),
        )
    }
}

/// Number of steps for `len` segments under delay `delay`.
pub fn step_count(len: usize, delay: usize) -> usize {
    len + delay.max(1)
}

/// 1-based segment index `j` mapped to a 0-based slot when `1 <= j <= len`.
fn slot(j: i64, len: usize) -> Option<usize> {
    (j >= 1 && j <= len as i64).then(|| (j - 1) as usize)
}

pub fn prosody_tokens(enc: &EncodedUtterance, config: &MsTlmConfig, i: usize) -> Result<(ProsodyToken, ProsodyToken)> {
    if config.quantized {
        let lf_bins = enc
            .lf_bins
            .as_ref()
            .ok_or_else(|| Error::Config("quantized model needs lf bins (fit a quantizer)".into()))?;
        Ok((ProsodyToken::Bin(enc.d_bins[i]), ProsodyToken::Bin(lf_bins[i])))
    } else {
        Ok((ProsodyToken::Value(enc.d[i] as f64), ProsodyToken::Value(enc.lf[i])))
    }
}

pub fn delay_streams(enc: &EncodedUtterance, config: &MsTlmConfig) -> Result<DelayedBatch> {
    let len = enc.len();
    let delay = config.delay;
    if len == 0 {
        return Err(Error::Empty("utterance has no segments".into()));
    }
    if delay >= len {
        return Err(Error::DelayTooLarge { delay, len });
    }
    if let Some(&u) = enc.units.iter().find(|&&u| u >= config.unit_vocab) {
        return Err(Error::OutOfRange(format!(
            "unit {u} outside vocabulary of {}",
            config.unit_vocab
        )));
    }
    let steps = step_count(len, delay);
    if steps > config.max_positions {
        return Err(Error::UtteranceTooLong {
            index: 0,
            segments: len,
            max: config.max_positions.saturating_sub(delay.max(1)),
        });
    }
    let (eos, pad) = (config.eos(), config.pad());
    let mut b = DelayedBatch {
        delay,
        segments: len,
        input_u: Vec::with_capacity(steps),
        input_d: Vec::with_capacity(steps),
        input_lf: Vec::with_capacity(steps),
        target_u: Vec::with_capacity(steps),
        target_d: Vec::with_capacity(steps),
        target_lf: Vec::with_capacity(steps),
        raw_d: Vec::with_capacity(steps),
        raw_lf: Vec::with_capacity(steps),
    };
    // Unit stream position j: 0 is BOS, 1..=len are segments, len+1 is EOS.
    let unit_at = |j: i64| -> Option<usize> {
        match j {
            0 => Some(pad),
            j if j >= 1 && j <= len as i64 => Some(enc.units[(j - 1) as usize]),
            j if j == len as i64 + 1 => Some(eos),
            _ => None,
        }
    };
    for s in 0..steps {
        let t = s as i64 + 1;
        b.input_u.push(unit_at(t - 1).unwrap_or(pad));
        b.target_u.push(if t >= 1 { unit_at(t).filter(|_| t <= len as i64 + 1) } else { None });
        match slot(t - delay as i64 - 1, len) {
            Some(i) => {
                let (d, lf) = prosody_tokens(enc, config, i)?;
                b.input_d.push(d);
                b.input_lf.push(lf);
            }
            None => {
                b.input_d.push(ProsodyToken::Pad);
                b.input_lf.push(ProsodyToken::Pad);
            }
        }
        match slot(t - delay as i64, len) {
            Some(i) => {
                let (d, lf) = prosody_tokens(enc, config, i)?;
                b.target_d.push(Some(d));
                b.target_lf.push(Some(lf));
                b.raw_d.push(Some(enc.d[i] as f64));
                b.raw_lf.push(Some(enc.lf[i]));
            }
            None => {
                b.target_d.push(None);
                b.target_lf.push(None);
                b.raw_d.push(None);
                b.raw_lf.push(None);
            }
        }
    }
    Ok(b)
}
