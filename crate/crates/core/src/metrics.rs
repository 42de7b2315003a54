//! Teacher-forcing and continuation metrics.

use std::collections::HashMap;
use std::hash::Hash;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mstlm::{DelayedBatch, MsTlm};
use crate::nn::{Mode, ParameterSet, ProsodyDropout};
use crate::numeric::{argmax, log_sum_exp, CompensatedSum};
use crate::quantizer::{dequantize_duration, LfQuantizer};
use crate::representation::FrameStream;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TeacherForcingReport {
    /// Nats per unit target.
    pub u_nll: f64,
    /// Frames.
    pub d_mae: f64,
    pub lf_mae: f64,
    pub u_targets: usize,
    pub prosody_targets: usize,
}

#[derive(Default)]
struct TfSums {
    nll: CompensatedSum,
    d: CompensatedSum,
    lf: CompensatedSum,
    n_u: usize,
    n_p: usize,
}

/// Point prediction from a prosody head: de-quantized argmax bin for
/// quantized models, the raw location otherwise.
pub fn point_duration(out: &[f64]) -> f64 {
    if out.len() == 1 {
        out[0]
    } else {
        dequantize_duration(argmax(out)).map(f64::from).unwrap_or(f64::NAN)
    }
}

pub fn point_lf(out: &[f64], quantizer: Option<&LfQuantizer>) -> Result<f64> {
    if out.len() == 1 {
        return Ok(out[0]);
    }
    let q = quantizer.ok_or_else(|| Error::Mismatch("quantized model evaluated without a quantizer".into()))?;
    q.dequantize(argmax(out))
}

fn check_quantizer(model: &MsTlm, quantizer: Option<&LfQuantizer>) -> Result<()> {
    let cfg = model.config();
    if cfg.quantized {
        match quantizer {
            None => return Err(Error::Mismatch("quantized model needs its quantizer".into())),
            Some(q) if q.bins() != cfg.lf_bins => {
                return Err(Error::Mismatch(format!(
                    "quantizer has {} bins, model expects {}",
                    q.bins(),
                    cfg.lf_bins
                )))
            }
            _ => {}
        }
    }
    Ok(())
}

/// Unit NLL and prosody MAE with full ground-truth context at every step.
pub fn teacher_forcing_eval(
    model: &MsTlm,
    params: &ParameterSet,
    batches: &[DelayedBatch],
    quantizer: Option<&LfQuantizer>,
) -> Result<TeacherForcingReport> {
    check_quantizer(model, quantizer)?;
    let per: Vec<Result<TfSums>> = batches
        .par_iter()
        .map(|b| {
            let out = model.forward(params, b, Mode::Eval, &ProsodyDropout::NONE, None)?;
            let mut s = TfSums::default();
            for t in 0..b.steps() {
                if let Some(u) = b.target_u[t] {
                    let row = out.unit.row(t);
                    s.nll.add(log_sum_exp(row) - row[u]);
                    s.n_u += 1;
                }
                if let (Some(rd), Some(rl)) = (b.raw_d[t], b.raw_lf[t]) {
                    s.d.add((point_duration(out.d.row(t)) - rd).abs());
                    s.lf.add((point_lf(out.lf.row(t), quantizer)? - rl).abs());
                    s.n_p += 1;
                }
            }
            Ok(s)
        })
        .collect();
    let mut total = TfSums::default();
    for s in per {
        let s = s?;
        total.nll.add(s.nll.value());
        total.d.add(s.d.value());
        total.lf.add(s.lf.value());
        total.n_u += s.n_u;
        total.n_p += s.n_p;
    }
    if total.n_u == 0 {
        return Err(Error::Empty("no unit targets to evaluate".into()));
    }
    let div = |x: f64, n: usize| if n == 0 { 0.0 } else { x / n as f64 };
    Ok(TeacherForcingReport {
        u_nll: div(total.nll.value(), total.n_u),
        d_mae: div(total.d.value(), total.n_p),
        lf_mae: div(total.lf.value(), total.n_p),
        u_targets: total.n_u,
        prosody_targets: total.n_p,
    })
}

/// Mean absolute error after truncating both sequences to the shorter one;
/// `None` when either is empty.
pub fn truncated_mae(generated: &[f64], reference: &[f64]) -> Option<f64> {
    let n = generated.len().min(reference.len());
    if n == 0 {
        return None;
    }
    let s: CompensatedSum = generated[..n]
        .iter()
        .zip(&reference[..n])
        .map(|(a, b)| (a - b).abs())
        .collect();
    Some(s.value() / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PromptAverage {
    pub value: f64,
    pub used: usize,
    pub excluded: usize,
}

/// Mean over prompts of the minimum per-sample MAE. `samples[p][k]` is the
/// continuation region of sample `k` for prompt `p`.
pub fn min_mae(samples: &[Vec<Vec<f64>>], references: &[Vec<f64>]) -> Result<PromptAverage> {
    if samples.len() != references.len() {
        return Err(Error::LengthMismatch {
            what: "prompts vs references",
            expected: references.len(),
            got: samples.len(),
        });
    }
    let mut acc = CompensatedSum::new();
    let (mut used, mut excluded) = (0, 0);
    for (pool, r) in samples.iter().zip(references) {
        let best = pool
            .iter()
            .filter_map(|s| truncated_mae(s, r))
            .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.min(v))));
        match best {
            Some(v) => {
                acc.add(v);
                used += 1;
            }
            None => excluded += 1,
        }
    }
    if used == 0 {
        return Err(Error::Empty("no prompt has a nonempty continuation".into()));
    }
    Ok(PromptAverage {
        value: acc.value() / used as f64,
        used,
        excluded,
    })
}

fn mean(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        None
    } else {
        let s: CompensatedSum = xs.iter().copied().collect();
        Some(s.value() / xs.len() as f64)
    }
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            what: "pearson inputs",
            expected: x.len(),
            got: y.len(),
        });
    }
    let (mx, my) = match (mean(x), mean(y)) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::Empty("pearson on empty input".into())),
    };
    let (mut sxy, mut sxx, mut syy) = (CompensatedSum::new(), CompensatedSum::new(), CompensatedSum::new());
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy.add(dx * dy);
        sxx.add(dx * dx);
        syy.add(dy * dy);
    }
    let denom = (sxx.value() * syy.value()).sqrt();
    if denom == 0.0 {
        return Err(Error::InvalidValue("pearson undefined for a constant series".into()));
    }
    Ok((sxy.value() / denom).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Aggregation {
    /// Average the per-sample continuation means.
    #[default]
    Mean,
    /// Use the sample with the lowest MAE against the reference.
    BestSample,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyItem {
    pub prompt: Vec<f64>,
    pub samples: Vec<Vec<f64>>,
    /// Reference continuation region, used by [`Aggregation::BestSample`].
    pub reference: Vec<f64>,
    pub reference_seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Consistency {
    pub r: f64,
    pub used: usize,
    pub excluded: usize,
}

/// Pearson correlation between prompt means and continuation means over the
/// prompts whose reference lasts at least `min_seconds`.
pub fn consistency_corr(items: &[ConsistencyItem], aggregation: Aggregation, min_seconds: f64) -> Result<Consistency> {
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    let mut excluded = 0;
    for it in items {
        if it.reference_seconds < min_seconds {
            excluded += 1;
            continue;
        }
        let x = mean(&it.prompt);
        let y = match aggregation {
            Aggregation::Mean => {
                let means: Vec<f64> = it.samples.iter().filter_map(|s| mean(s)).collect();
                mean(&means)
            }
            Aggregation::BestSample => it
                .samples
                .iter()
                .filter_map(|s| truncated_mae(s, &it.reference).map(|m| (m, s)))
                .fold(None, |best: Option<(f64, &Vec<f64>)>, (m, s)| match best {
                    Some((bm, _)) if bm <= m => best,
                    _ => Some((m, s)),
                })
                .and_then(|(_, s)| mean(s)),
        };
        match (x, y) {
            (Some(x), Some(y)) => {
                xs.push(x);
                ys.push(y);
            }
            _ => excluded += 1,
        }
    }
    if xs.len() < 3 {
        return Err(Error::Empty(format!(
            "consistency needs at least 3 eligible prompts, found {}",
            xs.len()
        )));
    }
    Ok(Consistency {
        r: pearson(&xs, &ys)?,
        used: xs.len(),
        excluded,
    })
}

/// Population standard deviation of every generated value.
pub fn expressiveness_std(pool: &[Vec<Vec<f64>>]) -> Result<f64> {
    let values: Vec<f64> = pool.iter().flatten().flatten().copied().collect();
    let m = mean(&values).ok_or_else(|| Error::Empty("no generated values".into()))?;
    let s: CompensatedSum = values.iter().map(|v| (v - m) * (v - m)).collect();
    Ok((s.value() / values.len() as f64).sqrt())
}

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Sentence BLEU with uniform 1/2-gram weights and brevity penalty. A zero
/// match count for an order with `c` candidate n-grams contributes
/// `1/(c+1)` instead of 0.
pub fn bleu2<T: Eq + Hash>(candidate: &[T], reference: &[T]) -> f64 {
    if candidate.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let mut log_p = 0.0;
    for n in 1..=2 {
        let cand = ngram_counts(candidate, n);
        let refc = ngram_counts(reference, n);
        let total = candidate.len().saturating_sub(n - 1);
        let matched: usize = cand
            .iter()
            .map(|(g, &c)| c.min(refc.get(g).copied().unwrap_or(0)))
            .sum();
        let p = if matched == 0 {
            1.0 / (total as f64 + 1.0)
        } else {
            matched as f64 / total as f64
        };
        log_p += 0.5 * p.ln();
    }
    let (c, r) = (candidate.len() as f64, reference.len() as f64);
    let bp = if c < r { (1.0 - r / c).exp() } else { 1.0 };
    bp * log_p.exp()
}

/// Mean over prompts of the best BLEU2 among samples; prompts with an empty
/// reference continuation are excluded.
pub fn max_cont_bleu2<T: Eq + Hash>(samples: &[Vec<Vec<T>>], references: &[Vec<T>]) -> Result<PromptAverage> {
    if samples.len() != references.len() {
        return Err(Error::LengthMismatch {
            what: "prompts vs references",
            expected: references.len(),
            got: samples.len(),
        });
    }
    let mut acc = CompensatedSum::new();
    let (mut used, mut excluded) = (0, 0);
    for (pool, r) in samples.iter().zip(references) {
        if r.is_empty() {
            excluded += 1;
            continue;
        }
        let best = pool.iter().map(|s| bleu2(s, r)).fold(0.0, f64::max);
        acc.add(best);
        used += 1;
    }
    if used == 0 {
        return Err(Error::Empty("no prompt has a nonempty reference".into()));
    }
    Ok(PromptAverage {
        value: acc.value() / used as f64,
        used,
        excluded,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResynthReport {
    pub ffe: f64,
    pub vde: f64,
}

/// Voicing decision error and F0 frame error (20% relative tolerance).
pub fn ffe_vde(reference: &FrameStream, reconstructed: &[(bool, f64)]) -> Result<ResynthReport> {
    let r: Vec<(bool, f64)> = reference.frames.iter().map(|f| (f.voiced, f.f0)).collect();
    ffe_vde_pairs(&r, reconstructed)
}

pub fn ffe_vde_pairs(reference: &[(bool, f64)], reconstructed: &[(bool, f64)]) -> Result<ResynthReport> {
    if reference.len() != reconstructed.len() {
        return Err(Error::LengthMismatch {
            what: "frames",
            expected: reference.len(),
            got: reconstructed.len(),
        });
    }
    if reference.is_empty() {
        return Err(Error::Empty("no frames".into()));
    }
    let (mut voicing, mut gross) = (0usize, 0usize);
    for (&(rv, rf), &(gv, gf)) in reference.iter().zip(reconstructed) {
        if rv != gv {
            voicing += 1;
        } else if rv && ((gf - rf).abs() / rf) > 0.2 {
            gross += 1;
        }
    }
    let n = reference.len() as f64;
    Ok(ResynthReport {
        ffe: (voicing + gross) as f64 / n,
        vde: voicing as f64 / n,
    })
}
