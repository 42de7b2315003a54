//! Temperature and Laplace sampling, and prompted continuation.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mstlm::{EncodedUtterance, MsTlm, ProsodyToken, StepLogits};
use crate::nn::ParameterSet;
use crate::numeric::{argmax, derive_seed};
use crate::quantizer::{dequantize_duration, LfQuantizer};

/// Draws an index from `softmax(logits / tau)`; `tau == 0` is argmax.
pub fn sample_discrete(logits: &[f64], tau: f64, rng: &mut impl Rng) -> usize {
    if tau <= 0.0 {
        return argmax(logits);
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits.iter().map(|&z| ((z - max) / tau).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut x = rng.gen::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if x < *w {
            return i;
        }
        x -= w;
    }
    // Rounding left a sliver past the last bucket.
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

fn open_unit(rng: &mut impl Rng) -> f64 {
    loop {
        let u: f64 = rng.gen();
        if u > 0.0 {
            return u;
        }
    }
}

fn laplace_inverse(loc: f64, b: f64, u: f64) -> f64 {
    if u < 0.5 {
        loc + b * (2.0 * u).ln()
    } else {
        loc - b * (2.0 * (1.0 - u)).ln()
    }
}

/// `loc + Laplace(0, b)` by inverse CDF.
pub fn sample_lf_continuous(loc: f64, b: f64, rng: &mut impl Rng) -> f64 {
    if b <= 0.0 {
        return loc;
    }
    laplace_inverse(loc, b, open_unit(rng))
}

/// Laplace(loc, b) restricted to `(0, ∞)`, rounded half away from zero and
/// floored at 1.
pub fn sample_duration_continuous(loc: f64, b: f64, rng: &mut impl Rng) -> u32 {
    let x = if b <= 0.0 {
        loc
    } else if loc < 0.0 {
        // Past the mode the density is a pure exponential.
        -b * open_unit(rng).ln()
    } else {
        let f0 = 0.5 * (-loc / b).exp();
        let u = f0 + (1.0 - f0) * (1.0 - open_unit(rng));
        laplace_inverse(loc, b, u.max(f64::MIN_POSITIVE))
    };
    let r = x.round();
    if r.is_nan() || r < 1.0 {
        1
    } else if r > u32::MAX as f64 {
        u32::MAX
    } else {
        r as u32
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ContinuationMode {
    Full,
    DOnly,
    LfOnly,
    UOnly,
}

impl ContinuationMode {
    pub const ALL: [ContinuationMode; 4] = [
        ContinuationMode::Full,
        ContinuationMode::DOnly,
        ContinuationMode::LfOnly,
        ContinuationMode::UOnly,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ContinuationMode::Full => "full",
            ContinuationMode::DOnly => "d_only",
            ContinuationMode::LfOnly => "lf_only",
            ContinuationMode::UOnly => "u_only",
        }
    }

    fn samples_u(self) -> bool {
        matches!(self, ContinuationMode::Full | ContinuationMode::UOnly)
    }

    fn samples_d(self) -> bool {
        matches!(self, ContinuationMode::Full | ContinuationMode::DOnly)
    }

    fn samples_lf(self) -> bool {
        matches!(self, ContinuationMode::Full | ContinuationMode::LfOnly)
    }
}

impl fmt::Display for ContinuationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ContinuationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidValue(format!("unknown continuation mode `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerConfig {
    pub tau_u: f64,
    /// Temperatures for quantized prosody streams.
    pub tau_d: f64,
    pub tau_lf: f64,
    /// Laplace scales for continuous prosody streams.
    pub b_d: f64,
    pub b_lf: f64,
    pub n_samples: usize,
    pub seed: u64,
    /// Segment cap when no reference length applies.
    pub max_length: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            tau_u: 1.0,
            tau_d: 1.0,
            tau_lf: 1.0,
            b_d: 0.0,
            b_lf: 0.0,
            n_samples: 20,
            seed: 0,
            max_length: 256,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("tau_u", self.tau_u),
            ("tau_d", self.tau_d),
            ("tau_lf", self.tau_lf),
            ("b_d", self.b_d),
            ("b_lf", self.b_lf),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be a finite value >= 0")));
            }
        }
        if self.n_samples == 0 {
            return Err(Error::Config("n_samples must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuationTask {
    pub id: u64,
    /// Number of leading reference segments given as prompt.
    pub prompt_len: usize,
    pub reference: EncodedUtterance,
    pub mode: ContinuationMode,
}

/// One generated sequence, prompt included. Prosody values are raw
/// (de-quantized to bin means for quantized models).
#[derive(Debug, Clone, PartialEq)]
pub struct Continuation {
    pub prompt_id: u64,
    pub sample_idx: usize,
    pub prompt_len: usize,
    pub units: Vec<usize>,
    pub d: Vec<u32>,
    pub lf: Vec<f64>,
    pub ended_with_eos: bool,
    /// Inputs actually fed at each step.
    pub fed_u: Vec<usize>,
    pub fed_d: Vec<ProsodyToken>,
    pub fed_lf: Vec<ProsodyToken>,
}

impl Continuation {
    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn cont_units(&self) -> &[usize] {
        &self.units[self.prompt_len.min(self.units.len())..]
    }

    pub fn cont_d(&self) -> Vec<f64> {
        self.d[self.prompt_len.min(self.d.len())..].iter().map(|&v| v as f64).collect()
    }

    pub fn cont_lf(&self) -> &[f64] {
        &self.lf[self.prompt_len.min(self.lf.len())..]
    }
}

/// Generates one continuation with its own rng.
pub fn continue_one(
    model: &MsTlm,
    params: &ParameterSet,
    quantizer: Option<&LfQuantizer>,
    task: &ContinuationTask,
    cfg: &SamplerConfig,
    sample_idx: usize,
) -> Result<Continuation> {
    let mc = model.config();
    let delay = mc.delay;
    let reference = &task.reference;
    let p = task.prompt_len;
    if p == 0 || p < delay + 1 {
        return Err(Error::InvalidValue(format!(
            "prompt of {p} segments is shorter than delay + 1 = {}",
            delay + 1
        )));
    }
    if p > reference.len() {
        return Err(Error::InvalidValue("prompt longer than reference".into()));
    }
    if mc.quantized {
        match quantizer {
            Some(q) if q.bins() == mc.lf_bins && reference.lf_bins.is_some() => {}
            _ => return Err(Error::Mismatch("quantized model needs a matching quantizer".into())),
        }
    }
    let limit = reference.len().min(cfg.max_length.max(p));
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[task.id, sample_idx as u64]));
    let (eos, pad) = (mc.eos(), mc.pad());

    let reference_d_token = |j: usize| -> ProsodyToken {
        if mc.quantized {
            ProsodyToken::Bin(reference.d_bins[j])
        } else {
            ProsodyToken::Value(reference.d[j] as f64)
        }
    };
    let reference_lf_token = |j: usize| -> ProsodyToken {
        if mc.quantized {
            ProsodyToken::Bin(reference.lf_bins.as_ref().map_or(0, |b| b[j]))
        } else {
            ProsodyToken::Value(reference.lf[j])
        }
    };

    let mut units: Vec<usize> = Vec::new();
    let mut d_vals: Vec<(ProsodyToken, u32)> = Vec::new();
    let mut lf_vals: Vec<(ProsodyToken, f64)> = Vec::new();
    let mut length: Option<usize> = None;
    let mut ended_with_eos = false;
    let (mut fed_u, mut fed_d, mut fed_lf) = (Vec::new(), Vec::new(), Vec::new());
    let mut dec = model.decoder(params);
    let mut t = 1usize;
    loop {
        let total_steps = length.map(|l| l + delay.max(1));
        if total_steps.is_some_and(|n| t > n) {
            break;
        }
        let u_in = match t - 1 {
            0 => pad,
            k if k <= units.len() => units[k - 1],
            k if length == Some(k - 1) => eos,
            _ => pad,
        };
        let (d_in, lf_in) = if t >= delay + 2 {
            let j = t - delay - 1;
            (d_vals[j - 1].0, lf_vals[j - 1].0)
        } else {
            (ProsodyToken::Pad, ProsodyToken::Pad)
        };
        fed_u.push(u_in);
        fed_d.push(d_in);
        fed_lf.push(lf_in);
        let out: StepLogits = dec.step(u_in, d_in, lf_in)?;

        if length.is_none() {
            let u = if t <= p {
                reference.units[t - 1]
            } else if t > limit {
                eos
            } else if task.mode.samples_u() {
                sample_discrete(&out.unit, cfg.tau_u, &mut rng)
            } else {
                reference.units[t - 1]
            };
            if u == eos {
                length = Some(units.len());
                ended_with_eos = t <= limit;
            } else {
                units.push(u);
            }
        }

        if t > delay {
            let j = t - delay;
            let known = length.unwrap_or(units.len());
            if j <= known {
                let forced = j <= p;
                let d = if !forced && task.mode.samples_d() {
                    sample_d(&out.d, cfg, &mut rng)?
                } else {
                    (reference_d_token(j - 1), reference.d[j - 1])
                };
                let lf = if !forced && task.mode.samples_lf() {
                    sample_lf(&out.lf, cfg, quantizer, &mut rng)?
                } else {
                    (reference_lf_token(j - 1), reference.lf[j - 1])
                };
                d_vals.push(d);
                lf_vals.push(lf);
            }
        }
        t += 1;
        if t > mc.max_positions {
            return Err(Error::UtteranceTooLong {
                index: task.id as usize,
                segments: units.len(),
                max: mc.max_positions,
            });
        }
    }
    Ok(Continuation {
        prompt_id: task.id,
        sample_idx,
        prompt_len: p,
        units,
        d: d_vals.iter().map(|v| v.1).collect(),
        lf: lf_vals.iter().map(|v| v.1).collect(),
        ended_with_eos,
        fed_u,
        fed_d,
        fed_lf,
    })
}

fn sample_d(out: &[f64], cfg: &SamplerConfig, rng: &mut impl Rng) -> Result<(ProsodyToken, u32)> {
    if out.len() == 1 {
        let d = sample_duration_continuous(out[0], cfg.b_d, rng);
        Ok((ProsodyToken::Value(d as f64), d))
    } else {
        let bin = sample_discrete(out, cfg.tau_d, rng);
        Ok((ProsodyToken::Bin(bin), dequantize_duration(bin)?))
    }
}

fn sample_lf(
    out: &[f64],
    cfg: &SamplerConfig,
    quantizer: Option<&LfQuantizer>,
    rng: &mut impl Rng,
) -> Result<(ProsodyToken, f64)> {
    if out.len() == 1 {
        let v = sample_lf_continuous(out[0], cfg.b_lf, rng);
        Ok((ProsodyToken::Value(v), v))
    } else {
        let bin = sample_discrete(out, cfg.tau_lf, rng);
        let q = quantizer.ok_or_else(|| Error::Mismatch("missing quantizer".into()))?;
        Ok((ProsodyToken::Bin(bin), q.dequantize(bin)?))
    }
}

/// `cfg.n_samples` continuations per task, ordered by task then sample.
pub fn continue_all(
    model: &MsTlm,
    params: &ParameterSet,
    quantizer: Option<&LfQuantizer>,
    tasks: &[ContinuationTask],
    cfg: &SamplerConfig,
) -> Result<Vec<Vec<Continuation>>> {
    cfg.validate()?;
    tasks
        .par_iter()
        .map(|task| {
            (0..cfg.n_samples)
                .into_par_iter()
                .map(|k| continue_one(model, params, quantizer, task, cfg, k))
                .collect::<Result<Vec<_>>>()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_temperature_is_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(sample_discrete(&[1.0, 3.0, 2.0], 0.0, &mut rng), 1);
        assert_eq!(sample_discrete(&[2.0, 2.0], 0.0, &mut rng), 0);
    }

    #[test]
    fn degenerate_scales() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(sample_lf_continuous(0.37, 0.0, &mut rng), 0.37);
        assert_eq!(sample_duration_continuous(3.4, 0.0, &mut rng), 3);
        assert_eq!(sample_duration_continuous(0.2, 0.0, &mut rng), 1);
        assert_eq!(sample_duration_continuous(2.5, 0.0, &mut rng), 3);
    }

    #[test]
    fn durations_are_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for loc in [-5.0, -0.1, 0.0, 0.4, 2.0, 10.0] {
            for _ in 0..1000 {
                assert!(sample_duration_continuous(loc, 1.3, &mut rng) >= 1);
            }
        }
    }

    #[test]
    fn mode_names_round_trip() {
        for m in ContinuationMode::ALL {
            assert_eq!(m.as_str().parse::<ContinuationMode>().unwrap(), m);
        }
    }
}
