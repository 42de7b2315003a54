//! Weighted per-stream loss: cross-entropy for units and quantized prosody,
//! L1 for continuous prosody.

use super::{DelayedBatch, MsTlmConfig, ProsodyToken, StepOutputs};
use crate::error::{Error, Result};
use crate::nn::Mat;

/// Unnormalized per-stream loss sums and their target counts.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossSums {
    pub u: f64,
    pub d: f64,
    pub lf: f64,
    pub n_u: usize,
    pub n_d: usize,
    pub n_lf: usize,
}

impl LossSums {
    pub fn merge(&mut self, other: &LossSums) {
        self.u += other.u;
        self.d += other.d;
        self.lf += other.lf;
        self.n_u += other.n_u;
        self.n_d += other.n_d;
        self.n_lf += other.n_lf;
    }

    pub fn report(&self, config: &MsTlmConfig) -> LossReport {
        let avg = |sum: f64, n: usize, name: &str| {
            if n == 0 {
                log::warn!("all `{name}` targets are masked; component set to 0");
                0.0
            } else {
                sum / n as f64
            }
        };
        let l_u = avg(self.u, self.n_u, "u");
        let l_d = avg(self.d, self.n_d, "d");
        let l_lf = avg(self.lf, self.n_lf, "lf");
        LossReport {
            l_u,
            l_d,
            l_lf,
            total: l_u + config.alpha * l_d + config.beta * l_lf,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossReport {
    pub l_u: f64,
    pub l_d: f64,
    pub l_lf: f64,
    pub total: f64,
}

/// Multipliers applied to each stream's summed loss when forming gradients;
/// normally `1/n_u`, `α/n_d`, `β/n_lf` for the whole accumulation group.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StreamWeights {
    pub u: f64,
    pub d: f64,
    pub lf: f64,
}

impl StreamWeights {
    pub fn for_counts(config: &MsTlmConfig, n_u: usize, n_d: usize, n_lf: usize) -> Self {
        let inv = |n: usize| if n == 0 { 0.0 } else { 1.0 / n as f64 };
        Self {
            u: inv(n_u),
            d: config.alpha * inv(n_d),
            lf: config.beta * inv(n_lf),
        }
    }
}

/// Cross-entropy of `target` under `logits`; adds `weight·∂/∂logits` to `grad`.
fn cross_entropy(logits: &[f64], target: usize, weight: f64, grad: &mut [f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = logits.iter().map(|&z| (z - max).exp()).sum();
    let lse = max + total.ln();
    for (g, &z) in grad.iter_mut().zip(logits) {
        *g += weight * (z - lse).exp();
    }
    grad[target] -= weight;
    lse - logits[target]
}

fn l1(pred: f64, target: f64, weight: f64, grad: &mut f64) -> f64 {
    let diff = pred - target;
    *grad += weight * if diff > 0.0 { 1.0 } else if diff < 0.0 { -1.0 } else { 0.0 };
    diff.abs()
}

fn stream_term(
    out: &Mat,
    grad: &mut Mat,
    s: usize,
    target: ProsodyToken,
    weight: f64,
) -> Result<f64> {
    match target {
        ProsodyToken::Bin(i) if out.cols > 1 && i < out.cols => {
            Ok(cross_entropy(out.row(s), i, weight, grad.row_mut(s)))
        }
        ProsodyToken::Value(v) if out.cols == 1 => Ok(l1(out.row(s)[0], v, weight, &mut grad.row_mut(s)[0])),
        other => Err(Error::Mismatch(format!(
            "target {other:?} incompatible with a {}-wide output",
            out.cols
        ))),
    }
}

/// Loss sums for one utterance plus `∂(Σ w_k·sum_k)/∂outputs`.
pub fn loss_and_grad(
    outputs: &StepOutputs,
    batch: &DelayedBatch,
    weights: StreamWeights,
) -> Result<(LossSums, StepOutputs)> {
    let n = batch.steps();
    if outputs.unit.rows != n || outputs.d.rows != n || outputs.lf.rows != n {
        return Err(Error::LengthMismatch {
            what: "model outputs vs steps",
            expected: n,
            got: outputs.unit.rows,
        });
    }
    let mut grad = outputs.zeros_like();
    let mut sums = LossSums::default();
    for s in 0..n {
        if let Some(u) = batch.target_u[s] {
            if u >= outputs.unit.cols {
                return Err(Error::OutOfRange(format!("unit target {u}")));
            }
            sums.u += cross_entropy(outputs.unit.row(s), u, weights.u, grad.unit.row_mut(s));
            sums.n_u += 1;
        }
        if let Some(t) = batch.target_d[s] {
            sums.d += stream_term(&outputs.d, &mut grad.d, s, t, weights.d)?;
            sums.n_d += 1;
        }
        if let Some(t) = batch.target_lf[s] {
            sums.lf += stream_term(&outputs.lf, &mut grad.lf, s, t, weights.lf)?;
            sums.n_lf += 1;
        }
    }
    Ok((sums, grad))
}

/// Per-stream averaged loss for a set of utterances.
pub fn mstlm_loss(config: &MsTlmConfig, items: &[(&StepOutputs, &DelayedBatch)]) -> Result<LossReport> {
    let mut total = LossSums::default();
    let w = StreamWeights {
        u: 0.0,
        d: 0.0,
        lf: 0.0,
    };
    for (o, b) in items {
        let (s, _) = loss_and_grad(o, b, w)?;
        total.merge(&s);
    }
    Ok(total.report(config))
}
