//! Standard dropout plus the sequence- and span-level input dropout applied
//! to prosody streams.

use rand::Rng;

/// Inverted-dropout multipliers (`0` or `1/(1-p)`), or `None` when `p == 0`.
pub fn dropout_mask(len: usize, p: f64, rng: &mut impl Rng) -> Option<Vec<f64>> {
    if p <= 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - p);
    Some(
        (0..len)
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect(),
    )
}

/// Applies dropout in place and returns the mask used.
pub fn dropout(x: &mut [f64], p: f64, rng: &mut impl Rng) -> Option<Vec<f64>> {
    let mask = dropout_mask(x.len(), p, rng)?;
    for (v, m) in x.iter_mut().zip(&mask) {
        *v *= m;
    }
    Some(mask)
}

/// Steps zeroed by span masking: each step starts a span with probability
/// `start_prob`, and a span covers `span_len` consecutive steps.
pub fn span_zero(len: usize, start_prob: f64, span_len: usize, rng: &mut impl Rng) -> Vec<bool> {
    let mut zeroed = vec![false; len];
    for t in 0..len {
        if rng.gen::<f64>() < start_prob {
            for z in zeroed.iter_mut().skip(t).take(span_len) {
                *z = true;
            }
        }
    }
    zeroed
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProsodyDropout {
    /// Probability that a whole stream is zeroed for an utterance.
    pub sequence_prob: f64,
    pub span_start_prob: f64,
    pub span_len: usize,
}

impl Default for ProsodyDropout {
    fn default() -> Self {
        Self {
            sequence_prob: 0.2,
            span_start_prob: 0.02,
            span_len: 5,
        }
    }
}

impl ProsodyDropout {
    pub const NONE: ProsodyDropout = ProsodyDropout {
        sequence_prob: 0.0,
        span_start_prob: 0.0,
        span_len: 0,
    };

    pub fn is_active(&self) -> bool {
        self.sequence_prob > 0.0 || (self.span_start_prob > 0.0 && self.span_len > 0)
    }

    /// Which steps of one stream are zeroed.
    pub fn mask(&self, len: usize, rng: &mut impl Rng) -> Vec<bool> {
        let whole = rng.gen::<f64>() < self.sequence_prob;
        let spans = span_zero(len, self.span_start_prob, self.span_len, rng);
        if whole {
            vec![true; len]
        } else {
            spans
        }
    }
}
