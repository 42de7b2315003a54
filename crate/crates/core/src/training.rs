//! Adam with linear warmup and inverse-square-root decay, length-bucketed
//! batching, gradient accumulation and checkpointing.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::metrics::{teacher_forcing_eval, TeacherForcingReport};
use crate::mstlm::{loss_and_grad, DelayedBatch, ForwardTape, LossReport, LossSums, MsTlm, MsTlmConfig, StreamWeights};
use crate::nn::{Container, Mode, ParameterSet, ProsodyDropout};
use crate::numeric::derive_seed;
use crate::quantizer::LfQuantizer;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub peak_lr: f64,
    pub warmup_updates: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub max_segments_per_batch: usize,
    pub grad_accum: usize,
    pub epochs: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            peak_lr: 5e-4,
            warmup_updates: 4000,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-8,
            max_segments_per_batch: 3072,
            grad_accum: 8,
            epochs: 10,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.peak_lr > 0.0) || self.warmup_updates == 0 {
            return Err(Error::Config("peak_lr and warmup_updates must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err(Error::Config("adam betas must lie in [0, 1) and eps be positive".into()));
        }
        if self.max_segments_per_batch == 0 || self.grad_accum == 0 {
            return Err(Error::Config("batch size and grad_accum must be positive".into()));
        }
        Ok(())
    }

    pub fn to_meta(&self) -> BTreeMap<String, String> {
        [
            ("peak_lr", self.peak_lr.to_string()),
            ("warmup_updates", self.warmup_updates.to_string()),
            ("adam_beta1", self.beta1.to_string()),
            ("adam_beta2", self.beta2.to_string()),
            ("adam_eps", self.eps.to_string()),
            ("max_segments", self.max_segments_per_batch.to_string()),
            ("grad_accum", self.grad_accum.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (format!("train.{k}"), v))
        .collect()
    }
}

/// Learning rate for 1-based update `step`.
pub fn lr_at(cfg: &OptimizerConfig, step: u64) -> Result<f64> {
    if step == 0 {
        return Err(Error::OutOfRange("learning-rate step must be >= 1".into()));
    }
    let w = cfg.warmup_updates;
    Ok(if step <= w {
        cfg.peak_lr * step as f64 / w as f64
    } else {
        cfg.peak_lr * (w as f64 / step as f64).sqrt()
    })
}

/// Adam moments for every parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub m: ParameterSet,
    pub v: ParameterSet,
    pub t: u64,
}

impl Adam {
    pub fn new(params: &ParameterSet) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }

    /// One bias-corrected Adam update.
    pub fn step(&mut self, params: &mut ParameterSet, grads: &ParameterSet, lr: f64, cfg: &OptimizerConfig) -> Result<()> {
        if !params.same_layout(grads) || !params.same_layout(&self.m) {
            return Err(Error::Mismatch("gradient layout differs from parameters".into()));
        }
        if let Err(name) = grads.all_finite() {
            return Err(Error::NonFiniteGradient(name));
        }
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.t as i32);
        let ids: Vec<_> = params.iter().map(|(id, _, _)| id).collect();
        for id in ids {
            let g = grads.data(id);
            let m = self.m.data_mut(id);
            for (mi, &gi) in m.iter_mut().zip(g) {
                *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
            }
            let v = self.v.data_mut(id);
            for (vi, &gi) in v.iter_mut().zip(g) {
                *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
            }
            let (m, v) = (self.m.data(id), self.v.data(id));
            let p = params.data_mut(id);
            for k in 0..p.len() {
                let mh = m[k] / bc1;
                let vh = v[k] / bc2;
                p[k] -= lr * mh / (vh.sqrt() + cfg.eps);
            }
        }
        Ok(())
    }
}

/// Groups utterance indices into batches of at most `max_segments` segments.
/// Utterances are shuffled, stably sorted by length so similar lengths share
/// a batch, packed greedily, and the batch order is shuffled again.
pub fn make_batches(lengths: &[usize], max_segments: usize, seed: u64, epoch: u64) -> Result<Vec<Vec<usize>>> {
    if lengths.is_empty() {
        return Err(Error::Empty("no utterances to batch".into()));
    }
    if let Some((i, &l)) = lengths.iter().enumerate().find(|(_, &l)| l > max_segments) {
        return Err(Error::UtteranceTooLong {
            index: i,
            segments: l,
            max: max_segments,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0xba7c, epoch]));
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.shuffle(&mut rng);
    order.sort_by_key(|&i| lengths[i]);
    let mut batches = Vec::new();
    let mut cur: Vec<usize> = Vec::new();
    let mut total = 0;
    for i in order {
        if total + lengths[i] > max_segments && !cur.is_empty() {
            batches.push(std::mem::take(&mut cur));
            total = 0;
        }
        cur.push(i);
        total += lengths[i];
    }
    if !cur.is_empty() {
        batches.push(cur);
    }
    batches.shuffle(&mut rng);
    Ok(batches)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub optimizer: OptimizerConfig,
    pub seed: u64,
    pub prosody_dropout: ProsodyDropout,
}

/// Everything needed to resume training exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: ParameterSet,
    pub adam: Adam,
    /// Completed optimizer updates.
    pub step: u64,
    /// Completed epochs.
    pub epoch: u64,
    pub best_valid_nll: Option<f64>,
}

impl TrainState {
    pub fn new(params: ParameterSet) -> Self {
        Self {
            adam: Adam::new(&params),
            params,
            step: 0,
            epoch: 0,
            best_valid_nll: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateLog {
    pub step: u64,
    pub lr: f64,
    pub loss: LossReport,
}

impl UpdateLog {
    pub fn line(&self) -> String {
        format!(
            "{}\t{:.6e}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            self.step, self.lr, self.loss.l_u, self.loss.l_d, self.loss.l_lf, self.loss.total
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochReport {
    pub epoch: u64,
    pub train: LossReport,
    pub valid: Option<TeacherForcingReport>,
}

/// One accumulated update over `group` (each inner slice is one batch of
/// utterance indices). Returns the group's loss sums; parameters are left
/// untouched on error.
pub fn train_update(
    model: &MsTlm,
    state: &mut TrainState,
    cfg: &TrainConfig,
    data: &[DelayedBatch],
    group: &[Vec<usize>],
) -> Result<(LossSums, f64)> {
    let mcfg = model.config();
    let step = state.step + 1;
    let (mut n_u, mut n_d, mut n_lf) = (0, 0, 0);
    for &i in group.iter().flatten() {
        let (a, b, c) = data[i].counts();
        n_u += a;
        n_d += b;
        n_lf += c;
    }
    let weights = StreamWeights::for_counts(mcfg, n_u, n_d, n_lf);
    let mut grads = state.params.zeros_like();
    let mut sums = LossSums::default();
    for &i in group.iter().flatten() {
        let b = &data[i];
        let mode = Mode::Train {
            seed: derive_seed(cfg.seed, &[step, i as u64]),
        };
        let mut tape = ForwardTape::new();
        let out = model.forward(&state.params, b, mode, &cfg.prosody_dropout, Some(&mut tape))?;
        let (s, d_out) = loss_and_grad(&out, b, weights)?;
        model.backward(&state.params, b, &tape, &d_out, &mut grads)?;
        sums.merge(&s);
    }
    let report = sums.report(mcfg);
    if !report.total.is_finite() {
        return Err(Error::Diverged {
            step,
            loss: report.total,
        });
    }
    let lr = lr_at(&cfg.optimizer, step)?;
    state.adam.step(&mut state.params, &grads, lr, &cfg.optimizer)?;
    state.step = step;
    Ok((sums, lr))
}

/// Runs one epoch (numbered `state.epoch + 1`) and validation.
pub fn train_epoch(
    model: &MsTlm,
    state: &mut TrainState,
    cfg: &TrainConfig,
    train: &[DelayedBatch],
    valid: &[DelayedBatch],
    quantizer: Option<&LfQuantizer>,
    mut log: Option<&mut dyn Write>,
) -> Result<EpochReport> {
    let epoch = state.epoch + 1;
    let lengths: Vec<usize> = train.iter().map(|b| b.segments).collect();
    let batches = make_batches(&lengths, cfg.optimizer.max_segments_per_batch, cfg.seed, epoch)?;
    let mut epoch_sums = LossSums::default();
    for group in batches.chunks(cfg.optimizer.grad_accum) {
        let (sums, lr) = train_update(model, state, cfg, train, group)?;
        if let Some(w) = log.as_deref_mut() {
            let entry = UpdateLog {
                step: state.step,
                lr,
                loss: sums.report(model.config()),
            };
            writeln!(w, "{}", entry.line())?;
        }
        epoch_sums.merge(&sums);
    }
    state.epoch = epoch;
    let valid_report = if valid.is_empty() {
        None
    } else {
        let r = teacher_forcing_eval(model, &state.params, valid, quantizer)?;
        if state.best_valid_nll.is_none_or(|b| r.u_nll < b) {
            state.best_valid_nll = Some(r.u_nll);
        }
        Some(r)
    };
    Ok(EpochReport {
        epoch,
        train: epoch_sums.report(model.config()),
        valid: valid_report,
    })
}

/// Mean loss over `data` in eval mode.
pub fn evaluate_loss(model: &MsTlm, params: &ParameterSet, data: &[DelayedBatch]) -> Result<LossReport> {
    let mut sums = LossSums::default();
    let w = StreamWeights { u: 0.0, d: 0.0, lf: 0.0 };
    for b in data {
        let out = model.forward(params, b, Mode::Eval, &ProsodyDropout::NONE, None)?;
        sums.merge(&loss_and_grad(&out, b, w)?.0);
    }
    Ok(sums.report(model.config()))
}

/// Serializes model config, optimizer config, training progress, Adam moments
/// and parameters into one container.
pub fn checkpoint_container(
    config: &MsTlmConfig,
    opt: &OptimizerConfig,
    state: &TrainState,
    quantizer: Option<&LfQuantizer>,
    extra: &BTreeMap<String, String>,
) -> Container {
    let mut c = Container::default();
    c.meta.extend(config.to_meta());
    c.meta.extend(opt.to_meta());
    c.meta.extend(extra.clone());
    c.meta.insert("config_hash".into(), config.hash());
    c.meta.insert("state.step".into(), state.step.to_string());
    c.meta.insert("state.epoch".into(), state.epoch.to_string());
    c.meta.insert("state.adam_t".into(), state.adam.t.to_string());
    if let Some(b) = state.best_valid_nll {
        c.meta.insert("state.best_valid_nll".into(), format!("{:016x}", b.to_bits()));
    }
    if let Some(q) = quantizer {
        c.meta.insert("quantizer".into(), q.to_text());
    }
    c.push_set("param/", &state.params);
    c.push_set("adam.m/", &state.adam.m);
    c.push_set("adam.v/", &state.adam.v);
    c
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: MsTlmConfig,
    pub model: MsTlm,
    pub state: TrainState,
    pub quantizer: Option<LfQuantizer>,
    pub meta: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn from_container(c: &Container) -> Result<Self> {
        let config = MsTlmConfig::from_meta(&c.meta)?;
        if c.meta("config_hash")? != config.hash() {
            return Err(Error::Checkpoint("config hash does not match stored config".into()));
        }
        let parse = |k: &str| -> Result<u64> {
            c.meta(k)?
                .parse()
                .map_err(|_| Error::Checkpoint(format!("bad `{k}`")))
        };
        let (model, mut params) = MsTlm::new(config.clone(), 0)?;
        params.copy_from(&c.take_set("param/"))?;
        let mut m = params.zeros_like();
        let mut v = params.zeros_like();
        m.copy_from(&c.take_set("adam.m/"))?;
        v.copy_from(&c.take_set("adam.v/"))?;
        let best_valid_nll = match c.meta.get("state.best_valid_nll") {
            Some(h) => Some(f64::from_bits(
                u64::from_str_radix(h, 16).map_err(|_| Error::Checkpoint("bad best_valid_nll".into()))?,
            )),
            None => None,
        };
        let quantizer = match c.meta.get("quantizer") {
            Some(t) => Some(LfQuantizer::from_text(t)?),
            None => None,
        };
        Ok(Self {
            config,
            model,
            state: TrainState {
                params,
                adam: Adam {
                    m,
                    v,
                    t: parse("state.adam_t")?,
                },
                step: parse("state.step")?,
                epoch: parse("state.epoch")?,
                best_valid_nll,
            },
            quantizer,
            meta: c.meta.clone(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::load(path)?)
    }
}
