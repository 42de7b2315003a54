//! Multi-stream transformer LM over (unit, duration, lf) segments.

mod delay;
mod loss;

pub use delay::{delay_streams, encode, prosody_tokens, step_count, DelayedBatch, EncodedUtterance, ProsodyToken};
pub use loss::{loss_and_grad, mstlm_loss, LossReport, LossSums, StreamWeights};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::hash_text;
use crate::error::{Error, Result};
use crate::nn::kernels::{affine, affine_backward, axpy, bias_backward, row_affine};
use crate::nn::{DecodeState, Mat, Mode, ParamId, ParameterSet, ProsodyDropout, Tape, Transformer, TransformerConfig};
use crate::numeric::derive_seed;
use crate::quantizer::DURATION_BINS;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputStreams {
    UOnly,
    UDLf,
}

impl InputStreams {
    pub fn as_str(self) -> &'static str {
        match self {
            InputStreams::UOnly => "u_only",
            InputStreams::UDLf => "u_d_lf",
        }
    }
}

impl fmt::Display for InputStreams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for InputStreams {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "u_only" => Ok(InputStreams::UOnly),
            "u_d_lf" => Ok(InputStreams::UDLf),
            _ => Err(Error::InvalidValue(format!("unknown input streams `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MsTlmConfig {
    /// Number of real units `V`; EOS is `V` and PAD/BOS is `V+1`.
    pub unit_vocab: usize,
    pub delay: usize,
    pub quantized: bool,
    pub lf_bins: usize,
    pub alpha: f64,
    pub beta: f64,
    pub input_streams: InputStreams,
    pub transformer: TransformerConfig,
    pub max_positions: usize,
    pub init_std: f64,
}

impl Default for MsTlmConfig {
    fn default() -> Self {
        Self {
            unit_vocab: 100,
            delay: 1,
            quantized: true,
            lf_bins: 32,
            alpha: 0.5,
            beta: 0.5,
            input_streams: InputStreams::UDLf,
            transformer: TransformerConfig::default(),
            max_positions: 512,
            init_std: 0.02,
        }
    }
}

impl MsTlmConfig {
    pub fn eos(&self) -> usize {
        self.unit_vocab
    }

    pub fn pad(&self) -> usize {
        self.unit_vocab + 1
    }

    pub fn d_outputs(&self) -> usize {
        if self.quantized {
            DURATION_BINS
        } else {
            1
        }
    }

    pub fn lf_outputs(&self) -> usize {
        if self.quantized {
            self.lf_bins
        } else {
            1
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.transformer.validate()?;
        if self.unit_vocab == 0 {
            return Err(Error::Config("unit_vocab must be positive".into()));
        }
        if self.quantized && self.lf_bins < 2 {
            return Err(Error::Config("lf_bins must be >= 2".into()));
        }
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(Error::Config("alpha and beta must be >= 0".into()));
        }
        if self.max_positions < 2 {
            return Err(Error::Config("max_positions must be >= 2".into()));
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            return Err(Error::Config("init_std must be positive".into()));
        }
        Ok(())
    }

    /// Canonical key/value form stored in checkpoints.
    pub fn to_meta(&self) -> BTreeMap<String, String> {
        let t = &self.transformer;
        [
            ("unit_vocab", self.unit_vocab.to_string()),
            ("delay", self.delay.to_string()),
            ("quantized", self.quantized.to_string()),
            ("lf_bins", self.lf_bins.to_string()),
            ("alpha", self.alpha.to_string()),
            ("beta", self.beta.to_string()),
            ("input_streams", self.input_streams.to_string()),
            ("layers", t.layers.to_string()),
            ("heads", t.heads.to_string()),
            ("embed_dim", t.embed_dim.to_string()),
            ("ffn_dim", t.ffn_dim.to_string()),
            ("dropout", t.dropout_p.to_string()),
            ("attn_dropout", t.attn_dropout_p.to_string()),
            ("max_positions", self.max_positions.to_string()),
            ("init_std", self.init_std.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (format!("model.{k}"), v))
        .collect()
    }

    pub fn from_meta(meta: &BTreeMap<String, String>) -> Result<Self> {
        fn get<T: FromStr>(meta: &BTreeMap<String, String>, key: &str) -> Result<T> {
            let full = format!("model.{key}");
            let raw = meta
                .get(&full)
                .ok_or_else(|| Error::Checkpoint(format!("missing `{full}`")))?;
            raw.parse()
                .map_err(|_| Error::Checkpoint(format!("bad value `{raw}` for `{full}`")))
        }
        let c = Self {
            unit_vocab: get(meta, "unit_vocab")?,
            delay: get(meta, "delay")?,
            quantized: get(meta, "quantized")?,
            lf_bins: get(meta, "lf_bins")?,
            alpha: get(meta, "alpha")?,
            beta: get(meta, "beta")?,
            input_streams: get(meta, "input_streams")?,
            transformer: TransformerConfig {
                layers: get(meta, "layers")?,
                heads: get(meta, "heads")?,
                embed_dim: get(meta, "embed_dim")?,
                ffn_dim: get(meta, "ffn_dim")?,
                dropout_p: get(meta, "dropout")?,
                attn_dropout_p: get(meta, "attn_dropout")?,
            },
            max_positions: get(meta, "max_positions")?,
            init_std: get(meta, "init_std")?,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn hash(&self) -> String {
        let text: String = self
            .to_meta()
            .iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect();
        hash_text(&text)
    }
}

#[derive(Debug, Clone)]
enum ProsodyEmbed {
    Table(ParamId),
    Linear { w: ParamId, b: ParamId, pad: ParamId },
}

#[derive(Debug, Clone)]
struct Head {
    w: ParamId,
    b: ParamId,
    outputs: usize,
}

/// Per-step raw model outputs. Quantized streams carry logits; continuous
/// streams carry a single predicted location per step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutputs {
    pub unit: Mat,
    pub d: Mat,
    pub lf: Mat,
}

impl StepOutputs {
    pub fn zeros_like(&self) -> Self {
        Self {
            unit: Mat::zeros(self.unit.rows, self.unit.cols),
            d: Mat::zeros(self.d.rows, self.d.cols),
            lf: Mat::zeros(self.lf.rows, self.lf.cols),
        }
    }
}

/// Forward record for [`MsTlm::backward`].
#[derive(Default)]
pub struct ForwardTape {
    tf: Tape,
    hidden: Option<Mat>,
    dropped_d: Vec<bool>,
    dropped_lf: Vec<bool>,
}

impl ForwardTape {
    pub fn new() -> Self {
        Self::default()
    }
}

#[derive(Debug, Clone)]
pub struct MsTlm {
    config: MsTlmConfig,
    emb_u: ParamId,
    emb_pos: ParamId,
    emb_d: ProsodyEmbed,
    emb_lf: ProsodyEmbed,
    transformer: Transformer,
    head_u: Head,
    head_d: Head,
    head_lf: Head,
}

impl MsTlm {
    /// Creates a model with freshly initialized parameters.
    pub fn new(config: MsTlmConfig, seed: u64) -> Result<(Self, ParameterSet)> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParameterSet::new();
        let d = config.transformer.embed_dim;
        let s = config.init_std;
        p.add_normal("emb.unit", &[config.unit_vocab + 2, d], s, &mut rng);
        p.add_normal("emb.pos", &[config.max_positions, d], s, &mut rng);
        if config.quantized {
            p.add_normal("emb.dur", &[DURATION_BINS + 1, d], s, &mut rng);
            p.add_normal("emb.lf", &[config.lf_bins + 1, d], s, &mut rng);
        } else {
            for name in ["dur", "lf"] {
                p.add_normal(format!("emb.{name}.w"), &[d], s, &mut rng);
                p.add_filled(format!("emb.{name}.b"), &[d], 0.0);
                p.add_normal(format!("emb.{name}.pad"), &[d], s, &mut rng);
            }
        }
        Transformer::register(config.transformer, &mut p, "tf.", s, &mut rng)?;
        for (name, n) in [
            ("unit", config.unit_vocab + 1),
            ("dur", config.d_outputs()),
            ("lf", config.lf_outputs()),
        ] {
            p.add_normal(format!("head.{name}.weight"), &[d, n], s, &mut rng);
            p.add_filled(format!("head.{name}.bias"), &[n], 0.0);
        }
        let model = Self::bind(config, &p)?;
        Ok((model, p))
    }

    /// Attaches to an existing parameter set, validating names and shapes.
    pub fn bind(config: MsTlmConfig, params: &ParameterSet) -> Result<Self> {
        config.validate()?;
        let d = config.transformer.embed_dim;
        let get = |name: &str, shape: &[usize]| -> Result<ParamId> {
            let id = params
                .id(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))?;
            let got = &params.get(id).shape;
            if got != shape {
                return Err(Error::Shape {
                    name: name.to_string(),
                    expected: shape.to_vec(),
                    got: got.clone(),
                });
            }
            Ok(id)
        };
        let (emb_d, emb_lf) = if config.quantized {
            (
                ProsodyEmbed::Table(get("emb.dur", &[DURATION_BINS + 1, d])?),
                ProsodyEmbed::Table(get("emb.lf", &[config.lf_bins + 1, d])?),
            )
        } else {
            let lin = |n: &str| -> Result<ProsodyEmbed> {
                Ok(ProsodyEmbed::Linear {
                    w: get(&format!("emb.{n}.w"), &[d])?,
                    b: get(&format!("emb.{n}.b"), &[d])?,
                    pad: get(&format!("emb.{n}.pad"), &[d])?,
                })
            };
            (lin("dur")?, lin("lf")?)
        };
        let head = |n: &str, outputs: usize| -> Result<Head> {
            Ok(Head {
                w: get(&format!("head.{n}.weight"), &[d, outputs])?,
                b: get(&format!("head.{n}.bias"), &[outputs])?,
                outputs,
            })
        };
        let expected = 2
            + if config.quantized { 2 } else { 6 }
            + 12 * config.transformer.layers
            + 2
            + 6;
        if params.len() != expected {
            return Err(Error::Checkpoint(format!(
                "parameter set has {} tensors, model expects {expected}",
                params.len()
            )));
        }
        Ok(Self {
            emb_u: get("emb.unit", &[config.unit_vocab + 2, d])?,
            emb_pos: get("emb.pos", &[config.max_positions, d])?,
            emb_d,
            emb_lf,
            transformer: Transformer::bind(config.transformer, params, "tf.")?,
            head_u: head("unit", config.unit_vocab + 1)?,
            head_d: head("dur", config.d_outputs())?,
            head_lf: head("lf", config.lf_outputs())?,
            config,
        })
    }

    pub fn config(&self) -> &MsTlmConfig {
        &self.config
    }

    fn prosody_table_row(&self, token: ProsodyToken, pad_row: usize) -> Result<usize> {
        match token {
            ProsodyToken::Pad => Ok(pad_row),
            ProsodyToken::Bin(i) if i < pad_row => Ok(i),
            other => Err(Error::Mismatch(format!(
                "token {other:?} not valid for a quantized stream of {pad_row} bins"
            ))),
        }
    }

    fn add_prosody(
        &self,
        params: &ParameterSet,
        embed: &ProsodyEmbed,
        pad_row: usize,
        token: ProsodyToken,
        out: &mut [f64],
    ) -> Result<()> {
        let d = out.len();
        match embed {
            ProsodyEmbed::Table(id) => {
                let r = self.prosody_table_row(token, pad_row)?;
                axpy(1.0, &params.data(*id)[r * d..(r + 1) * d], out);
            }
            ProsodyEmbed::Linear { w, b, pad } => match token {
                ProsodyToken::Pad => axpy(1.0, params.data(*pad), out),
                ProsodyToken::Value(v) => {
                    let (wv, bv) = (params.data(*w), params.data(*b));
                    for k in 0..d {
                        out[k] += v * wv[k] + bv[k];
                    }
                }
                ProsodyToken::Bin(_) => {
                    return Err(Error::Mismatch("bin token fed to a continuous model".into()))
                }
            },
        }
        Ok(())
    }

    /// Summed input embedding for one step.
    #[allow(clippy::too_many_arguments)]
    fn embed_step(
        &self,
        params: &ParameterSet,
        pos: usize,
        u: usize,
        d_tok: ProsodyToken,
        lf_tok: ProsodyToken,
        drop_d: bool,
        drop_lf: bool,
        out: &mut [f64],
    ) -> Result<()> {
        let dim = out.len();
        if u > self.config.pad() {
            return Err(Error::OutOfRange(format!("unit input {u}")));
        }
        if pos >= self.config.max_positions {
            return Err(Error::UtteranceTooLong {
                index: 0,
                segments: pos + 1,
                max: self.config.max_positions,
            });
        }
        out.copy_from_slice(&params.data(self.emb_u)[u * dim..(u + 1) * dim]);
        axpy(1.0, &params.data(self.emb_pos)[pos * dim..(pos + 1) * dim], out);
        if self.config.input_streams == InputStreams::UDLf {
            if !drop_d {
                self.add_prosody(params, &self.emb_d, DURATION_BINS, d_tok, out)?;
            }
            if !drop_lf {
                self.add_prosody(params, &self.emb_lf, self.config.lf_bins, lf_tok, out)?;
            }
        }
        Ok(())
    }

    /// Runs all steps of `batch`. In train mode, `prosody_dropout` and the
    /// transformer dropout draw from streams derived from the mode seed.
    pub fn forward(
        &self,
        params: &ParameterSet,
        batch: &DelayedBatch,
        mode: Mode,
        prosody_dropout: &ProsodyDropout,
        tape: Option<&mut ForwardTape>,
    ) -> Result<StepOutputs> {
        let n = batch.steps();
        let dim = self.config.transformer.embed_dim;
        let (dropped_d, dropped_lf, tf_mode) = match mode {
            Mode::Train { seed } if prosody_dropout.is_active() => {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[1]));
                let dd = prosody_dropout.mask(n, &mut rng);
                let dl = prosody_dropout.mask(n, &mut rng);
                (dd, dl, Mode::Train { seed: derive_seed(seed, &[2]) })
            }
            Mode::Train { seed } => (vec![false; n], vec![false; n], Mode::Train { seed: derive_seed(seed, &[2]) }),
            Mode::Eval => (vec![false; n], vec![false; n], Mode::Eval),
        };
        let mut x = Mat::zeros(n, dim);
        for s in 0..n {
            self.embed_step(
                params,
                s,
                batch.input_u[s],
                batch.input_d[s],
                batch.input_lf[s],
                dropped_d[s],
                dropped_lf[s],
                x.row_mut(s),
            )?;
        }
        let mut tape = tape;
        let h = self
            .transformer
            .forward(params, &x, tf_mode, tape.as_mut().map(|t| &mut t.tf))?;
        let outputs = self.heads(params, &h);
        if let Some(t) = tape {
            t.hidden = Some(h);
            t.dropped_d = dropped_d;
            t.dropped_lf = dropped_lf;
        }
        Ok(outputs)
    }

    fn heads(&self, params: &ParameterSet, h: &Mat) -> StepOutputs {
        let run = |hd: &Head| affine(h, params.data(hd.w), Some(params.data(hd.b)), hd.outputs);
        StepOutputs {
            unit: run(&self.head_u),
            d: run(&self.head_d),
            lf: run(&self.head_lf),
        }
    }

    /// Accumulates parameter gradients given gradients of the loss with
    /// respect to every output.
    pub fn backward(
        &self,
        params: &ParameterSet,
        batch: &DelayedBatch,
        tape: &ForwardTape,
        d_out: &StepOutputs,
        grads: &mut ParameterSet,
    ) -> Result<()> {
        let h = tape.hidden.as_ref().ok_or(Error::NoForward)?;
        let dim = self.config.transformer.embed_dim;
        let mut dh = Mat::zeros(h.rows, dim);
        for (hd, dy) in [(&self.head_u, &d_out.unit), (&self.head_d, &d_out.d), (&self.head_lf, &d_out.lf)] {
            bias_backward(dy, grads.data_mut(hd.b));
            let part = affine_backward(h, params.data(hd.w), dy, grads.data_mut(hd.w));
            axpy(1.0, &part.data, &mut dh.data);
        }
        let dx = self.transformer.backward(params, &tape.tf, &dh, grads)?;
        for s in 0..dx.rows {
            let g = dx.row(s);
            let u = batch.input_u[s];
            axpy(1.0, g, &mut grads.data_mut(self.emb_u)[u * dim..(u + 1) * dim]);
            axpy(1.0, g, &mut grads.data_mut(self.emb_pos)[s * dim..(s + 1) * dim]);
            if self.config.input_streams == InputStreams::UOnly {
                continue;
            }
            let streams = [
                (&self.emb_d, DURATION_BINS, batch.input_d[s], tape.dropped_d[s]),
                (&self.emb_lf, self.config.lf_bins, batch.input_lf[s], tape.dropped_lf[s]),
            ];
            for (embed, pad_row, tok, dropped) in streams {
                if dropped {
                    continue;
                }
                match embed {
                    ProsodyEmbed::Table(id) => {
                        let r = self.prosody_table_row(tok, pad_row)?;
                        axpy(1.0, g, &mut grads.data_mut(*id)[r * dim..(r + 1) * dim]);
                    }
                    ProsodyEmbed::Linear { w, b, pad } => match tok {
                        ProsodyToken::Pad => axpy(1.0, g, grads.data_mut(*pad)),
                        ProsodyToken::Value(v) => {
                            axpy(v, g, grads.data_mut(*w));
                            axpy(1.0, g, grads.data_mut(*b));
                        }
                        ProsodyToken::Bin(_) => {
                            return Err(Error::Mismatch("bin token fed to a continuous model".into()))
                        }
                    },
                }
            }
        }
        Ok(())
    }

    pub fn decoder<'a>(&'a self, params: &'a ParameterSet) -> Decoder<'a> {
        Decoder {
            model: self,
            params,
            state: self.transformer.start_decode(),
            hidden: vec![0.0; self.config.transformer.embed_dim],
        }
    }
}

/// Outputs of one incremental decoding step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepLogits {
    pub unit: Vec<f64>,
    pub d: Vec<f64>,
    pub lf: Vec<f64>,
}

/// Eval-mode incremental decoder; step `s` reproduces row `s` of
/// [`MsTlm::forward`] exactly.
pub struct Decoder<'a> {
    model: &'a MsTlm,
    params: &'a ParameterSet,
    state: DecodeState,
    hidden: Vec<f64>,
}

impl Decoder<'_> {
    pub fn position(&self) -> usize {
        self.state.len()
    }

    pub fn step(&mut self, u: usize, d_tok: ProsodyToken, lf_tok: ProsodyToken) -> Result<StepLogits> {
        let m = self.model;
        let pos = self.state.len();
        let mut x = vec![0.0; m.config.transformer.embed_dim];
        m.embed_step(self.params, pos, u, d_tok, lf_tok, false, false, &mut x)?;
        self.hidden = m.transformer.decode_step(self.params, &x, &mut self.state)?;
        let run = |hd: &Head| {
            let mut out = vec![0.0; hd.outputs];
            row_affine(&self.hidden, self.params.data(hd.w), Some(self.params.data(hd.b)), &mut out);
            out
        };
        Ok(StepLogits {
            unit: run(&m.head_u),
            d: run(&m.head_d),
            lf: run(&m.head_lf),
        })
    }
}
