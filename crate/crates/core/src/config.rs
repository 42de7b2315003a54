//! Merged key=value run configuration shared by every command.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::corpus::SynthConfig;
use crate::error::{Error, Result};
use crate::metrics::Aggregation;
use crate::mstlm::{InputStreams, MsTlmConfig};
use crate::nn::{ProsodyDropout, TransformerConfig};
use crate::quantizer::DEFAULT_LF_BINS;
use crate::representation::F0Mode;
use crate::sampling::{ContinuationMode, SamplerConfig};
use crate::training::{OptimizerConfig, TrainConfig};

/// First 16 hex digits of the SHA-256 of `text`.
pub fn hash_text(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

pub const SEED_KEY: &str = "run.seed";

pub const DEFAULT_TAU_GRID: &str = "0.0,0.25,0.5,0.7,1.0,1.3";
pub const DEFAULT_B_D_GRID: &str = "0.0,0.05,0.125,0.25,0.5,0.7,1.0,1.3";
/// `0.01 * 2^k` for `k = -6..=0`.
pub const DEFAULT_B_LF_GRID: &str = "0.00015625,0.0003125,0.000625,0.00125,0.0025,0.005,0.01";

#[derive(Debug, Clone, PartialEq)]
pub struct KeySpec {
    pub key: &'static str,
    /// Empty for keys without a default.
    pub default: String,
    pub help: &'static str,
}

fn spec(key: &'static str, default: impl ToString, help: &'static str) -> KeySpec {
    KeySpec {
        key,
        default: default.to_string(),
        help,
    }
}

/// Every recognized key with its default.
pub fn registry() -> Vec<KeySpec> {
    let s = SynthConfig::default();
    let m = MsTlmConfig::default();
    let t = TransformerConfig::default();
    let o = OptimizerConfig::default();
    let p = ProsodyDropout::default();
    let sc = SamplerConfig::default();
    vec![
        spec(SEED_KEY, "", "base seed for every randomized step (required)"),
        spec("corpus.units", s.units, "unit vocabulary size"),
        spec("corpus.unvoiced_units", s.unvoiced_units, "units that are never voiced"),
        spec("corpus.successors", s.successors, "successors per unit in the transition table"),
        spec("corpus.speakers", s.speakers, "number of speakers"),
        spec("corpus.utterances", s.utterances, "number of utterances"),
        spec("corpus.min_segments", s.min_segments, "minimum segments per utterance"),
        spec("corpus.max_segments", s.max_segments, "maximum segments per utterance"),
        spec("corpus.frame_rate", s.frame_rate, "frames per second"),
        spec("corpus.speaker_log_f0_min", s.speaker_log_f0.0, "lowest speaker mean log-F0"),
        spec("corpus.speaker_log_f0_max", s.speaker_log_f0.1, "highest speaker mean log-F0"),
        spec("corpus.speaker_scale_min", s.speaker_scale.0, "lowest speaker lf scale"),
        spec("corpus.speaker_scale_max", s.speaker_scale.1, "highest speaker lf scale"),
        spec("corpus.mean_duration_min", s.mean_duration.0, "lowest per-unit mean duration"),
        spec("corpus.mean_duration_max", s.mean_duration.1, "highest per-unit mean duration"),
        spec("corpus.coupling", s.coupling, "prosody/next-unit coupling strength"),
        spec("corpus.duration_coupling", s.duration_coupling, "duration shift at full coupling"),
        spec("corpus.lf_coupling", s.lf_coupling, "lf shift at full coupling"),
        spec("corpus.lf_offset_std", s.lf_offset_std, "spread of per-unit lf offsets"),
        spec("corpus.accent", s.accent, "+/- lf accent whose sign is redrawn after unvoiced segments"),
        spec("corpus.duration_noise", s.duration_noise, "duration noise std"),
        spec("corpus.frame_noise", s.frame_noise, "per-frame log-F0 noise std"),
        spec("corpus.unvoiced_frame_prob", s.unvoiced_frame_prob, "dropout of voicing in voiced units"),
        spec("corpus.leading_silence", s.leading_silence, "start every utterance with unit 0"),
        spec("corpus.word_min", s.word_min, "shortest word in units"),
        spec("corpus.word_max", s.word_max, "longest word in units"),
        spec("split.train", 0.8, "training fraction per speaker"),
        spec("split.valid", 0.1, "validation fraction per speaker"),
        spec("split.test", 0.1, "test fraction per speaker"),
        spec("prepare.f0_mode", F0Mode::LogMean, "lf normalization (log_mean, log_none, lin_mean, lin_none)"),
        spec("quantizer.bins", DEFAULT_LF_BINS, "lf bins K"),
        spec("model.unit_vocab", m.unit_vocab, "unit vocabulary V"),
        spec("model.delay", m.delay, "prosody delay"),
        spec("model.quantized", m.quantized, "discrete (true) or continuous (false) prosody"),
        spec("model.alpha", m.alpha, "duration loss weight"),
        spec("model.beta", m.beta, "lf loss weight"),
        spec("model.input_streams", m.input_streams, "u_only or u_d_lf"),
        spec("model.layers", t.layers, "transformer layers"),
        spec("model.heads", t.heads, "attention heads"),
        spec("model.embed_dim", t.embed_dim, "embedding width"),
        spec("model.ffn_dim", t.ffn_dim, "feed-forward width"),
        spec("model.dropout", t.dropout_p, "residual dropout"),
        spec("model.attn_dropout", t.attn_dropout_p, "attention dropout"),
        spec("model.max_positions", m.max_positions, "longest sequence in steps"),
        spec("model.init_std", m.init_std, "weight init std"),
        spec("train.peak_lr", o.peak_lr, "peak learning rate"),
        spec("train.warmup_updates", o.warmup_updates, "linear warmup updates"),
        spec("train.beta1", o.beta1, "Adam beta1"),
        spec("train.beta2", o.beta2, "Adam beta2"),
        spec("train.eps", o.eps, "Adam epsilon"),
        spec("train.max_segments_per_batch", o.max_segments_per_batch, "segment budget per batch"),
        spec("train.grad_accum", o.grad_accum, "batches per update"),
        spec("train.epochs", o.epochs, "epochs to run"),
        spec("train.prosody_dropout", p.sequence_prob, "probability of dropping a whole prosody stream"),
        spec("train.span_start_prob", p.span_start_prob, "per-step probability of starting a dropped span"),
        spec("train.span_len", p.span_len, "dropped span length"),
        spec("sample.mode", ContinuationMode::Full, "full, d_only, lf_only or u_only"),
        spec("sample.split", "test", "split whose utterances are continued"),
        spec("sample.prompt_seconds", 3.0, "prompt length in seconds"),
        spec("sample.tau_u", sc.tau_u, "unit temperature"),
        spec("sample.tau_d", sc.tau_d, "duration temperature"),
        spec("sample.tau_lf", sc.tau_lf, "lf temperature"),
        spec("sample.b_d", sc.b_d, "duration Laplace scale"),
        spec("sample.b_lf", sc.b_lf, "lf Laplace scale"),
        spec("sample.n_samples", sc.n_samples, "continuations per prompt"),
        spec("sample.max_length", sc.max_length, "segment cap without a reference"),
        spec("sweep.split", "valid", "split used for selection"),
        spec("sweep.tau_grid", DEFAULT_TAU_GRID, "temperatures tried for quantized streams"),
        spec("sweep.b_d_grid", DEFAULT_B_D_GRID, "duration scales tried for continuous models"),
        spec("sweep.b_lf_grid", DEFAULT_B_LF_GRID, "lf scales tried for continuous models"),
        spec("eval.split", "test", "split for teacher forcing"),
        spec("eval.min_seconds", 6.0, "shortest reference counted by consistency"),
        spec("eval.aggregation", "mean", "consistency aggregation (mean or best_sample)"),
        spec("eval.per_prompt", false, "append a per-prompt table"),
    ]
}

/// `--help` listing.
pub fn help_text() -> String {
    let mut s = String::from("Configuration keys (key=value, default shown):\n");
    for k in registry() {
        let d = if k.default.is_empty() { "<required>".to_string() } else { k.default };
        let _ = writeln!(s, "  {:<32} {:<38} {}", k.key, d, k.help);
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
    defaults: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::new()
    }
}

impl RunConfig {
    pub fn new() -> Self {
        let defaults: BTreeMap<String, String> = registry()
            .into_iter()
            .map(|k| (k.key.to_string(), k.default))
            .collect();
        Self {
            values: BTreeMap::new(),
            defaults,
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim();
        if !self.defaults.contains_key(key) {
            return Err(Error::Config(format!("unknown config key `{key}`")));
        }
        self.values.insert(key.to_string(), value.trim().to_string());
        Ok(())
    }

    /// Applies one `key=value` assignment.
    pub fn set_assignment(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, got `{assignment}`")))?;
        self.set(k, v)
    }

    /// Applies every line of a config file. Blank lines and `#` comments are
    /// skipped.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            self.set_assignment(line)
                .map_err(|e| Error::Config(format!("{origin}:{}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config `{}`: {e}", path.display())))?;
        self.apply_text(&text, &path.display().to_string())
    }

    pub fn raw(&self, key: &str) -> Result<&str> {
        if let Some(v) = self.values.get(key) {
            return Ok(v);
        }
        self.defaults
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Config(format!("unknown config key `{key}`")))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T> {
        let v = self.raw(key)?;
        if v.is_empty() {
            return Err(Error::Config(format!("`{key}` must be set")));
        }
        v.parse()
            .map_err(|_| Error::Config(format!("invalid value `{v}` for `{key}`")))
    }

    pub fn list(&self, key: &str) -> Result<Vec<f64>> {
        let v = self.raw(key)?;
        let out = v
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::Config(format!("invalid list `{v}` for `{key}`")))?;
        if out.is_empty() || out.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::Config(format!("`{key}` needs finite non-negative values")));
        }
        Ok(out)
    }

    pub fn seed(&self) -> Result<u64> {
        match self.raw(SEED_KEY)? {
            "" => Err(Error::Config(format!(
                "this command is randomized; pass an explicit seed ({SEED_KEY}=<n>)"
            ))),
            _ => self.get(SEED_KEY),
        }
    }

    /// Every key with its effective value, sorted.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for k in self.defaults.keys() {
            let _ = writeln!(s, "{k}={}", self.raw(k).unwrap_or_default());
        }
        s
    }

    /// Hash of the canonical listing; independent of assignment order.
    pub fn hash(&self) -> String {
        hash_text(&self.to_text())
    }

    pub fn synth_config(&self) -> Result<SynthConfig> {
        let c = SynthConfig {
            units: self.get("corpus.units")?,
            unvoiced_units: self.get("corpus.unvoiced_units")?,
            successors: self.get("corpus.successors")?,
            speakers: self.get("corpus.speakers")?,
            utterances: self.get("corpus.utterances")?,
            min_segments: self.get("corpus.min_segments")?,
            max_segments: self.get("corpus.max_segments")?,
            frame_rate: self.get("corpus.frame_rate")?,
            speaker_log_f0: (self.get("corpus.speaker_log_f0_min")?, self.get("corpus.speaker_log_f0_max")?),
            speaker_scale: (self.get("corpus.speaker_scale_min")?, self.get("corpus.speaker_scale_max")?),
            mean_duration: (self.get("corpus.mean_duration_min")?, self.get("corpus.mean_duration_max")?),
            coupling: self.get("corpus.coupling")?,
            duration_coupling: self.get("corpus.duration_coupling")?,
            lf_coupling: self.get("corpus.lf_coupling")?,
            lf_offset_std: self.get("corpus.lf_offset_std")?,
            accent: self.get("corpus.accent")?,
            duration_noise: self.get("corpus.duration_noise")?,
            frame_noise: self.get("corpus.frame_noise")?,
            unvoiced_frame_prob: self.get("corpus.unvoiced_frame_prob")?,
            leading_silence: self.get("corpus.leading_silence")?,
            word_min: self.get("corpus.word_min")?,
            word_max: self.get("corpus.word_max")?,
            seed: self.seed()?,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn split_ratios(&self) -> Result<(f64, f64, f64)> {
        Ok((self.get("split.train")?, self.get("split.valid")?, self.get("split.test")?))
    }

    pub fn f0_mode(&self) -> Result<F0Mode> {
        self.get("prepare.f0_mode")
    }

    pub fn quantizer_bins(&self) -> Result<usize> {
        let k: usize = self.get("quantizer.bins")?;
        if k < 2 {
            return Err(Error::Config("quantizer.bins must be >= 2".into()));
        }
        Ok(k)
    }

    pub fn model_config(&self) -> Result<MsTlmConfig> {
        let input_streams: InputStreams = self.get("model.input_streams")?;
        let c = MsTlmConfig {
            unit_vocab: self.get("model.unit_vocab")?,
            delay: self.get("model.delay")?,
            quantized: self.get("model.quantized")?,
            lf_bins: self.quantizer_bins()?,
            alpha: self.get("model.alpha")?,
            beta: self.get("model.beta")?,
            input_streams,
            transformer: TransformerConfig {
                layers: self.get("model.layers")?,
                heads: self.get("model.heads")?,
                embed_dim: self.get("model.embed_dim")?,
                ffn_dim: self.get("model.ffn_dim")?,
                dropout_p: self.get("model.dropout")?,
                attn_dropout_p: self.get("model.attn_dropout")?,
            },
            max_positions: self.get("model.max_positions")?,
            init_std: self.get("model.init_std")?,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn optimizer_config(&self) -> Result<OptimizerConfig> {
        let c = OptimizerConfig {
            peak_lr: self.get("train.peak_lr")?,
            warmup_updates: self.get("train.warmup_updates")?,
            beta1: self.get("train.beta1")?,
            beta2: self.get("train.beta2")?,
            eps: self.get("train.eps")?,
            max_segments_per_batch: self.get("train.max_segments_per_batch")?,
            grad_accum: self.get("train.grad_accum")?,
            epochs: self.get("train.epochs")?,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let prosody_dropout = ProsodyDropout {
            sequence_prob: self.get("train.prosody_dropout")?,
            span_start_prob: self.get("train.span_start_prob")?,
            span_len: self.get("train.span_len")?,
        };
        for (k, v) in [
            ("train.prosody_dropout", prosody_dropout.sequence_prob),
            ("train.span_start_prob", prosody_dropout.span_start_prob),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("`{k}` must lie in [0, 1]")));
            }
        }
        Ok(TrainConfig {
            optimizer: self.optimizer_config()?,
            seed: self.seed()?,
            prosody_dropout,
        })
    }

    pub fn sampler_config(&self) -> Result<SamplerConfig> {
        let c = SamplerConfig {
            tau_u: self.get("sample.tau_u")?,
            tau_d: self.get("sample.tau_d")?,
            tau_lf: self.get("sample.tau_lf")?,
            b_d: self.get("sample.b_d")?,
            b_lf: self.get("sample.b_lf")?,
            n_samples: self.get("sample.n_samples")?,
            seed: self.seed()?,
            max_length: self.get("sample.max_length")?,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn continuation_mode(&self) -> Result<ContinuationMode> {
        self.get("sample.mode")
    }

    pub fn aggregation(&self) -> Result<Aggregation> {
        match self.raw("eval.aggregation")? {
            "mean" => Ok(Aggregation::Mean),
            "best_sample" => Ok(Aggregation::BestSample),
            v => Err(Error::Config(format!("invalid value `{v}` for `eval.aggregation`"))),
        }
    }
}
