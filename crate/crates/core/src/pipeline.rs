//! Artifact layout and the glue between prepared data, models, sampling and
//! metrics.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::corpus::{parse_manifest, prepare_segments, split, CorpusSplit, Lexicon, ManifestEntry, Split};
use crate::error::{Error, Result};
use crate::formats::{format_lf, read_segment_file};
use crate::metrics::{
    consistency_corr, expressiveness_std, max_cont_bleu2, min_mae, teacher_forcing_eval, Aggregation, Consistency,
    ConsistencyItem, PromptAverage, TeacherForcingReport,
};
use crate::mstlm::{delay_streams, encode, DelayedBatch, EncodedUtterance, MsTlm, MsTlmConfig};
use crate::nn::ParameterSet;
use crate::quantizer::LfQuantizer;
use crate::representation::{F0Mode, FrameStream, SegmentSequence, SpeakerStats};
use crate::sampling::{continue_all, Continuation, ContinuationMode, ContinuationTask, SamplerConfig};
use crate::training::Checkpoint;

pub const FRAMES_FILE: &str = "corpus.frames";
pub const WORDS_FILE: &str = "words.txt";
pub const LEXICON_FILE: &str = "lexicon.tsv";
pub const SEGMENTS_FILE: &str = "segments.txt";
pub const MANIFEST_FILE: &str = "manifest.tsv";
pub const STATS_FILE: &str = "speaker_stats.tsv";
pub const PREPARE_REPORT_FILE: &str = "prepare_report.txt";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const TRAIN_LOG_FILE: &str = "train.log";
pub const EPOCH_LOG_FILE: &str = "epochs.tsv";
pub const SAMPLES_FILE: &str = "samples.txt";
pub const PROMPTS_FILE: &str = "prompts.tsv";
pub const SWEEP_FILE: &str = "sweep.tsv";
pub const SELECTED_FILE: &str = "selected.conf";
pub const RUN_CONFIG_FILE: &str = "run_config.txt";

/// Segment sequences with their manifest rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub segments: Vec<SegmentSequence>,
    pub manifest: Vec<ManifestEntry>,
}

impl Dataset {
    pub fn new(segments: Vec<SegmentSequence>, manifest: Vec<ManifestEntry>) -> Result<Self> {
        if segments.len() != manifest.len() {
            return Err(Error::LengthMismatch {
                what: "manifest rows vs segment lines",
                expected: segments.len(),
                got: manifest.len(),
            });
        }
        for (i, (m, s)) in manifest.iter().zip(&segments).enumerate() {
            if m.utt_id != i || m.speaker != s.speaker || m.n_frames != s.total_frames() {
                return Err(Error::Mismatch(format!("manifest row {i} does not describe segment line {i}")));
            }
        }
        Ok(Self { segments, manifest })
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let segments = read_segment_file(&dir.join(SEGMENTS_FILE))?;
        let mpath = dir.join(MANIFEST_FILE);
        let manifest = parse_manifest(&fs::read_to_string(&mpath)?, &mpath.display().to_string())?;
        Self::new(segments, manifest)
    }

    pub fn ids(&self, split: Split) -> Vec<usize> {
        self.manifest
            .iter()
            .filter(|m| m.split == split)
            .map(|m| m.utt_id)
            .collect()
    }

    /// Every segment lf value of the given utterances.
    pub fn lf_values(&self, ids: &[usize]) -> Vec<f64> {
        ids.iter()
            .flat_map(|&i| self.segments[i].segments.iter().map(|s| s.lf))
            .collect()
    }

    pub fn encode(&self, ids: &[usize], quantizer: Option<&LfQuantizer>) -> Result<Vec<EncodedUtterance>> {
        ids.par_iter()
            .map(|&i| encode(&self.segments[i], quantizer))
            .collect()
    }
}

/// Splits `streams` per speaker, normalizes with training-split statistics
/// and run-length encodes every utterance.
pub fn prepare_dataset(
    streams: &[FrameStream],
    ratios: (f64, f64, f64),
    seed: u64,
    mode: F0Mode,
) -> Result<(Dataset, BTreeMap<String, SpeakerStats>, CorpusSplit)> {
    let speakers: Vec<String> = streams.iter().map(|s| s.speaker.clone()).collect();
    let parts = split(&speakers, ratios, seed)?;
    let membership = parts.membership(streams.len());
    let (stats, segments) = prepare_segments(streams, &parts.train, mode)?;
    let manifest = segments
        .iter()
        .enumerate()
        .map(|(i, s)| ManifestEntry {
            utt_id: i,
            speaker: s.speaker.clone(),
            n_frames: s.total_frames(),
            split: membership[i],
        })
        .collect();
    Ok((Dataset::new(segments, manifest)?, stats, parts))
}

pub fn delayed_batches(encoded: &[EncodedUtterance], config: &MsTlmConfig) -> Result<Vec<DelayedBatch>> {
    encoded.par_iter().map(|e| delay_streams(e, config)).collect()
}

/// Quantizer required by `config`: the checkpoint's own if it has one.
pub fn quantizer_for<'a>(config: &MsTlmConfig, q: Option<&'a LfQuantizer>) -> Result<Option<&'a LfQuantizer>> {
    if !config.quantized {
        return Ok(None);
    }
    match q {
        Some(q) if q.bins() == config.lf_bins => Ok(Some(q)),
        Some(q) => Err(Error::Mismatch(format!(
            "quantizer has {} bins but the model expects {}",
            q.bins(),
            config.lf_bins
        ))),
        None => Err(Error::Mismatch("quantized model needs a quantizer".into())),
    }
}

/// Rejects a checkpoint whose model config differs from the requested one.
pub fn check_config(ckpt: &Checkpoint, requested: &MsTlmConfig) -> Result<()> {
    if ckpt.config.hash() != requested.hash() {
        return Err(Error::Mismatch(format!(
            "checkpoint config hash {} differs from requested {}",
            ckpt.config.hash(),
            requested.hash()
        )));
    }
    Ok(())
}

pub fn teacher_forcing(
    ckpt: &Checkpoint,
    data: &Dataset,
    ids: &[usize],
) -> Result<TeacherForcingReport> {
    let q = quantizer_for(&ckpt.config, ckpt.quantizer.as_ref())?;
    let batches = delayed_batches(&data.encode(ids, q)?, &ckpt.config)?;
    teacher_forcing_eval(&ckpt.model, &ckpt.state.params, &batches, q)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptRecord {
    pub prompt_id: u64,
    pub utt_id: usize,
    pub prompt_len: usize,
    pub mode: ContinuationMode,
}

pub const PROMPTS_HEADER: &str = "prompt_id\tutt_id\tprompt_len\tmode";

/// One prompt per utterance whose `prompt_seconds` prefix is a strict prefix
/// of at least `delay + 1` segments. Returns the tasks and the number of
/// skipped utterances.
pub fn build_prompts(
    data: &Dataset,
    ids: &[usize],
    mode: ContinuationMode,
    prompt_seconds: f64,
    delay: usize,
) -> (Vec<PromptRecord>, usize) {
    let mut out = Vec::new();
    let mut skipped = 0;
    for &i in ids {
        let seq = &data.segments[i];
        let p = seq.prefix_len_for_seconds(prompt_seconds);
        if p < delay + 1 || p >= seq.len() {
            skipped += 1;
            continue;
        }
        out.push(PromptRecord {
            prompt_id: out.len() as u64,
            utt_id: i,
            prompt_len: p,
            mode,
        });
    }
    (out, skipped)
}

pub fn tasks_for(
    data: &Dataset,
    prompts: &[PromptRecord],
    quantizer: Option<&LfQuantizer>,
) -> Result<Vec<ContinuationTask>> {
    prompts
        .iter()
        .map(|p| {
            Ok(ContinuationTask {
                id: p.prompt_id,
                prompt_len: p.prompt_len,
                reference: encode(&data.segments[p.utt_id], quantizer)?,
                mode: p.mode,
            })
        })
        .collect()
}

pub fn run_continuations(
    ckpt: &Checkpoint,
    data: &Dataset,
    prompts: &[PromptRecord],
    cfg: &SamplerConfig,
) -> Result<Vec<Vec<Continuation>>> {
    let q = quantizer_for(&ckpt.config, ckpt.quantizer.as_ref())?;
    let tasks = tasks_for(data, prompts, q)?;
    continue_all(&ckpt.model, &ckpt.state.params, q, &tasks, cfg)
}

pub fn prompts_to_text(prompts: &[PromptRecord]) -> String {
    let mut s = format!("{PROMPTS_HEADER}\n");
    for p in prompts {
        let _ = writeln!(s, "{}\t{}\t{}\t{}", p.prompt_id, p.utt_id, p.prompt_len, p.mode);
    }
    s
}

pub fn parse_prompts(text: &str, path: &str) -> Result<Vec<PromptRecord>> {
    let err = |line: usize, m: &str| Error::Parse {
        path: path.to_string(),
        line,
        column: 1,
        message: m.to_string(),
    };
    let mut lines = text.lines().enumerate();
    if lines.next().map(|l| l.1) != Some(PROMPTS_HEADER) {
        return Err(err(1, &format!("expected header `{PROMPTS_HEADER}`")));
    }
    let mut out = Vec::new();
    for (n, line) in lines.filter(|(_, l)| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 {
            return Err(err(n + 1, "expected 4 tab-separated fields"));
        }
        out.push(PromptRecord {
            prompt_id: f[0].parse().map_err(|_| err(n + 1, "bad prompt_id"))?,
            utt_id: f[1].parse().map_err(|_| err(n + 1, "bad utt_id"))?,
            prompt_len: f[2].parse().map_err(|_| err(n + 1, "bad prompt_len"))?,
            mode: f[3].parse().map_err(|e: Error| err(n + 1, &e.to_string()))?,
        });
    }
    Ok(out)
}

/// Segment lines with a trailing `sample_idx` column, prompt-major.
pub fn samples_to_text(data: &Dataset, prompts: &[PromptRecord], samples: &[Vec<Continuation>]) -> String {
    let mut s = String::new();
    for (p, pool) in prompts.iter().zip(samples) {
        let r = &data.segments[p.utt_id];
        for c in pool {
            let _ = write!(s, "{}\t{}\t", r.speaker, r.frame_rate);
            for j in 0..c.len() {
                if j > 0 {
                    s.push(';');
                }
                let _ = write!(s, "{},{},{}", c.units[j], c.d[j], format_lf(c.lf[j]));
            }
            let _ = writeln!(s, "\t{}", c.sample_idx);
        }
    }
    s
}

/// Reads a samples file back against its prompt manifest.
pub fn parse_samples(text: &str, path: &str, prompts: &[PromptRecord]) -> Result<Vec<Vec<Continuation>>> {
    let err = |line: usize, m: String| Error::Parse {
        path: path.to_string(),
        line,
        column: 1,
        message: m,
    };
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    if prompts.is_empty() {
        return Ok(Vec::new());
    }
    if lines.len() % prompts.len() != 0 {
        return Err(err(1, format!("{} lines do not divide among {} prompts", lines.len(), prompts.len())));
    }
    let n = lines.len() / prompts.len();
    let mut out = Vec::with_capacity(prompts.len());
    for (pi, p) in prompts.iter().enumerate() {
        let mut pool = Vec::with_capacity(n);
        for k in 0..n {
            let line_no = pi * n + k + 1;
            let f: Vec<&str> = lines[pi * n + k].split('\t').collect();
            if f.len() != 4 {
                return Err(err(line_no, "expected 4 tab-separated fields".into()));
            }
            let idx: usize = f[3].parse().map_err(|_| err(line_no, "bad sample_idx".into()))?;
            if idx != k {
                return Err(err(line_no, format!("expected sample_idx {k}, got {idx}")));
            }
            let (mut units, mut d, mut lf) = (Vec::new(), Vec::new(), Vec::new());
            for seg in f[2].split(';').filter(|x| !x.is_empty()) {
                let parts: Vec<&str> = seg.split(',').collect();
                let bad = || err(line_no, format!("bad segment `{seg}`"));
                if parts.len() != 3 {
                    return Err(bad());
                }
                units.push(parts[0].parse::<usize>().map_err(|_| bad())?);
                d.push(parts[1].parse::<u32>().map_err(|_| bad())?);
                lf.push(parts[2].parse::<f64>().map_err(|_| bad())?);
            }
            pool.push(Continuation {
                prompt_id: p.prompt_id,
                sample_idx: k,
                prompt_len: p.prompt_len,
                units,
                d,
                lf,
                ended_with_eos: false,
                fed_u: Vec::new(),
                fed_d: Vec::new(),
                fed_lf: Vec::new(),
            });
        }
        out.push(pool);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamReport {
    pub min_mae: PromptAverage,
    pub corr: Option<Consistency>,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuationReport {
    pub mode: ContinuationMode,
    pub prompts: usize,
    pub n_samples: usize,
    pub d: Option<StreamReport>,
    pub lf: Option<StreamReport>,
    pub bleu2_units: Option<PromptAverage>,
    pub bleu2_words: Option<PromptAverage>,
    pub per_prompt: Vec<PromptRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptRow {
    pub prompt_id: u64,
    pub utt_id: usize,
    pub d_min_mae: Option<f64>,
    pub lf_min_mae: Option<f64>,
    pub bleu2_units: Option<f64>,
}

pub struct ReportOptions<'a> {
    pub min_seconds: f64,
    pub aggregation: Aggregation,
    pub lexicon: Option<&'a Lexicon>,
}

fn stream_report(
    prompts: &[PromptRecord],
    data: &Dataset,
    samples: &[Vec<Vec<f64>>],
    refs: &[Vec<f64>],
    prompt_vals: &[Vec<f64>],
    opts: &ReportOptions,
) -> Result<StreamReport> {
    let items: Vec<ConsistencyItem> = prompts
        .iter()
        .enumerate()
        .map(|(i, p)| ConsistencyItem {
            prompt: prompt_vals[i].clone(),
            samples: samples[i].clone(),
            reference: refs[i].clone(),
            reference_seconds: data.segments[p.utt_id].seconds(),
        })
        .collect();
    let corr = match consistency_corr(&items, opts.aggregation, opts.min_seconds) {
        Ok(c) => Some(c),
        Err(e) => {
            log::warn!("consistency not computed: {e}");
            None
        }
    };
    Ok(StreamReport {
        min_mae: min_mae(samples, refs)?,
        corr,
        std: expressiveness_std(samples)?,
    })
}

fn per_prompt_min(pool: &[Vec<f64>], r: &[f64]) -> Option<f64> {
    pool.iter()
        .filter_map(|s| crate::metrics::truncated_mae(s, r))
        .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.min(v))))
}

pub fn continuation_report(
    data: &Dataset,
    prompts: &[PromptRecord],
    samples: &[Vec<Continuation>],
    opts: &ReportOptions,
) -> Result<ContinuationReport> {
    if prompts.is_empty() {
        return Err(Error::Empty("no prompts to evaluate".into()));
    }
    if samples.len() != prompts.len() {
        return Err(Error::LengthMismatch {
            what: "sample pools vs prompts",
            expected: prompts.len(),
            got: samples.len(),
        });
    }
    let mode = prompts[0].mode;
    if prompts.iter().any(|p| p.mode != mode) {
        return Err(Error::Mismatch("prompts mix continuation modes".into()));
    }
    let reference = |p: &PromptRecord| &data.segments[p.utt_id].segments;
    let d_samples: Vec<Vec<Vec<f64>>> = samples.iter().map(|pool| pool.iter().map(|c| c.cont_d()).collect()).collect();
    let lf_samples: Vec<Vec<Vec<f64>>> =
        samples.iter().map(|pool| pool.iter().map(|c| c.cont_lf().to_vec()).collect()).collect();
    let d_refs: Vec<Vec<f64>> = prompts
        .iter()
        .map(|p| reference(p)[p.prompt_len..].iter().map(|s| s.d as f64).collect())
        .collect();
    let lf_refs: Vec<Vec<f64>> = prompts
        .iter()
        .map(|p| reference(p)[p.prompt_len..].iter().map(|s| s.lf).collect())
        .collect();
    let d_prompt: Vec<Vec<f64>> = prompts
        .iter()
        .map(|p| reference(p)[..p.prompt_len].iter().map(|s| s.d as f64).collect())
        .collect();
    let lf_prompt: Vec<Vec<f64>> = prompts
        .iter()
        .map(|p| reference(p)[..p.prompt_len].iter().map(|s| s.lf).collect())
        .collect();
    let gen_d = matches!(mode, ContinuationMode::Full | ContinuationMode::DOnly);
    let gen_lf = matches!(mode, ContinuationMode::Full | ContinuationMode::LfOnly);
    let gen_u = matches!(mode, ContinuationMode::Full | ContinuationMode::UOnly);
    let d = if gen_d {
        Some(stream_report(prompts, data, &d_samples, &d_refs, &d_prompt, opts)?)
    } else {
        None
    };
    let lf = if gen_lf {
        Some(stream_report(prompts, data, &lf_samples, &lf_refs, &lf_prompt, opts)?)
    } else {
        None
    };
    let u_samples: Vec<Vec<Vec<usize>>> =
        samples.iter().map(|pool| pool.iter().map(|c| c.cont_units().to_vec()).collect()).collect();
    let u_refs: Vec<Vec<usize>> = prompts
        .iter()
        .map(|p| reference(p)[p.prompt_len..].iter().map(|s| s.u as usize).collect())
        .collect();
    let (bleu2_units, bleu2_words) = if gen_u {
        let words = match opts.lexicon {
            Some(lex) => {
                let ws: Vec<Vec<Vec<String>>> = u_samples
                    .iter()
                    .map(|pool| pool.iter().map(|s| lex.transcribe(s)).collect())
                    .collect();
                let wr: Vec<Vec<String>> = u_refs.iter().map(|r| lex.transcribe(r)).collect();
                Some(max_cont_bleu2(&ws, &wr)?)
            }
            None => None,
        };
        (Some(max_cont_bleu2(&u_samples, &u_refs)?), words)
    } else {
        (None, None)
    };
    let per_prompt = prompts
        .iter()
        .enumerate()
        .map(|(i, p)| PromptRow {
            prompt_id: p.prompt_id,
            utt_id: p.utt_id,
            d_min_mae: if gen_d { per_prompt_min(&d_samples[i], &d_refs[i]) } else { None },
            lf_min_mae: if gen_lf { per_prompt_min(&lf_samples[i], &lf_refs[i]) } else { None },
            bleu2_units: if gen_u {
                Some(u_samples[i].iter().map(|s| crate::metrics::bleu2(s, &u_refs[i])).fold(0.0, f64::max))
            } else {
                None
            },
        })
        .collect();
    Ok(ContinuationReport {
        mode,
        prompts: prompts.len(),
        n_samples: samples.first().map_or(0, Vec::len),
        d,
        lf,
        bleu2_units,
        bleu2_words,
        per_prompt,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "na".to_string(), |x| x.to_string())
}

pub fn teacher_forcing_lines(r: &TeacherForcingReport) -> String {
    format!(
        "tf.u_nll={}\ntf.d_mae={}\ntf.lf_mae={}\ntf.u_targets={}\ntf.prosody_targets={}\n",
        r.u_nll, r.d_mae, r.lf_mae, r.u_targets, r.prosody_targets
    )
}

pub fn continuation_lines(r: &ContinuationReport, per_prompt: bool) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "cont.mode={}", r.mode);
    let _ = writeln!(s, "cont.prompts={}", r.prompts);
    let _ = writeln!(s, "cont.n_samples={}", r.n_samples);
    for (name, sr) in [("d", &r.d), ("lf", &r.lf)] {
        if let Some(sr) = sr {
            let _ = writeln!(s, "cont.{name}.min_mae={}", sr.min_mae.value);
            let _ = writeln!(s, "cont.{name}.min_mae_excluded={}", sr.min_mae.excluded);
            let _ = writeln!(s, "cont.{name}.corr={}", opt(sr.corr.map(|c| c.r)));
            let _ = writeln!(s, "cont.{name}.corr_used={}", sr.corr.map_or(0, |c| c.used));
            let _ = writeln!(s, "cont.{name}.std={}", sr.std);
        }
    }
    if let Some(b) = r.bleu2_units {
        let _ = writeln!(s, "cont.bleu2_units={}", b.value);
    }
    if let Some(b) = r.bleu2_words {
        let _ = writeln!(s, "cont.bleu2_words={}", b.value);
    }
    if per_prompt {
        s.push_str("\nprompt_id\tutt_id\td_min_mae\tlf_min_mae\tbleu2_units\n");
        for row in &r.per_prompt {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}",
                row.prompt_id,
                row.utt_id,
                opt(row.d_min_mae),
                opt(row.lf_min_mae),
                opt(row.bleu2_units)
            );
        }
    }
    s
}

/// Which parameter a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepStream {
    D,
    Lf,
}

impl SweepStream {
    pub fn mode(self) -> ContinuationMode {
        match self {
            SweepStream::D => ContinuationMode::DOnly,
            SweepStream::Lf => ContinuationMode::LfOnly,
        }
    }

    /// Config key set by the sweep for a quantized or continuous model.
    pub fn key(self, quantized: bool) -> &'static str {
        match (self, quantized) {
            (SweepStream::D, true) => "sample.tau_d",
            (SweepStream::D, false) => "sample.b_d",
            (SweepStream::Lf, true) => "sample.tau_lf",
            (SweepStream::Lf, false) => "sample.b_lf",
        }
    }

    fn apply(self, cfg: &mut SamplerConfig, quantized: bool, v: f64) {
        match (self, quantized) {
            (SweepStream::D, true) => cfg.tau_d = v,
            (SweepStream::D, false) => cfg.b_d = v,
            (SweepStream::Lf, true) => cfg.tau_lf = v,
            (SweepStream::Lf, false) => cfg.b_lf = v,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub stream: SweepStream,
    pub key: &'static str,
    pub values: Vec<(f64, f64)>,
    pub selected: f64,
}

/// Per-stream continuation min-MAE over `grid`; ties go to the earliest
/// grid value.
pub fn sweep(
    ckpt: &Checkpoint,
    data: &Dataset,
    ids: &[usize],
    stream: SweepStream,
    grid: &[f64],
    base: &SamplerConfig,
    prompt_seconds: f64,
) -> Result<SweepResult> {
    let (prompts, _) = build_prompts(data, ids, stream.mode(), prompt_seconds, ckpt.config.delay);
    if prompts.is_empty() {
        return Err(Error::Empty("no utterance is long enough to prompt".into()));
    }
    let quantized = ckpt.config.quantized;
    let mut values = Vec::with_capacity(grid.len());
    for &v in grid {
        let mut cfg = base.clone();
        stream.apply(&mut cfg, quantized, v);
        let samples = run_continuations(ckpt, data, &prompts, &cfg)?;
        let pools: Vec<Vec<Vec<f64>>> = samples
            .iter()
            .map(|pool| {
                pool.iter()
                    .map(|c| match stream {
                        SweepStream::D => c.cont_d(),
                        SweepStream::Lf => c.cont_lf().to_vec(),
                    })
                    .collect()
            })
            .collect();
        let refs: Vec<Vec<f64>> = prompts
            .iter()
            .map(|p| {
                data.segments[p.utt_id].segments[p.prompt_len..]
                    .iter()
                    .map(|s| match stream {
                        SweepStream::D => s.d as f64,
                        SweepStream::Lf => s.lf,
                    })
                    .collect()
            })
            .collect();
        values.push((v, min_mae(&pools, &refs)?.value));
    }
    let selected = values
        .iter()
        .fold(None, |best: Option<(f64, f64)>, &(v, m)| match best {
            Some((_, bm)) if bm <= m => best,
            _ => Some((v, m)),
        })
        .map(|b| b.0)
        .ok_or_else(|| Error::Empty("empty sweep grid".into()))?;
    Ok(SweepResult {
        stream,
        key: stream.key(quantized),
        values,
        selected,
    })
}

/// Convenience for callers holding a bare model and parameters.
pub fn teacher_forcing_with(
    model: &MsTlm,
    params: &ParameterSet,
    quantizer: Option<&LfQuantizer>,
    data: &Dataset,
    ids: &[usize],
) -> Result<TeacherForcingReport> {
    let q = quantizer_for(model.config(), quantizer)?;
    let batches = delayed_batches(&data.encode(ids, q)?, model.config())?;
    teacher_forcing_eval(model, params, &batches, q)
}
