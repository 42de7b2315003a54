use std::fmt::Write as _;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use log::{info, warn};
use prosody_lm::config::RunConfig;
use prosody_lm::corpus::{generate, ingest_frames, manifest_to_text, stats_to_text, words_to_text, Lexicon, Split};
use prosody_lm::formats::{write_frame_file, write_segment_file};
use prosody_lm::metrics::ffe_vde;
use prosody_lm::mstlm::MsTlm;
use prosody_lm::pipeline::{
    self, build_prompts, check_config, continuation_lines, continuation_report, delayed_batches, parse_prompts,
    parse_samples, prepare_dataset, prompts_to_text, quantizer_for, run_continuations, samples_to_text, teacher_forcing,
    teacher_forcing_lines, Dataset, ReportOptions, SweepStream,
};
use prosody_lm::quantizer::{fit_lf_quantizer, LfQuantizer};
use prosody_lm::representation::segments_to_frames;
use prosody_lm::training::{checkpoint_container, train_epoch, Checkpoint, TrainState};
use prosody_lm::Error;

/// Input or usage problem; exits with status 2.
#[derive(Debug)]
pub struct UserError(pub String);

impl std::fmt::Display for UserError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UserError {}

pub fn user(msg: impl Into<String>) -> anyhow::Error {
    UserError(msg.into()).into()
}

pub fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.is::<UserError>() || cause.is::<std::io::Error>() {
            return 2;
        }
        if let Some(err) = cause.downcast_ref::<Error>() {
            return match err {
                Error::NonFiniteGradient(_) | Error::Diverged { .. } | Error::Shape { .. } | Error::NoForward => 1,
                _ => 2,
            };
        }
    }
    1
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(user(format!("missing {what}: {}", path.display())))
    }
}

fn require_dir(path: &Path, what: &str) -> Result<()> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(user(format!("missing {what}: {}", path.display())))
    }
}

fn load_dataset(dir: &Path) -> Result<Dataset> {
    require_dir(dir, "prepared data directory")?;
    for f in [pipeline::SEGMENTS_FILE, pipeline::MANIFEST_FILE] {
        require_file(&dir.join(f), "prepared data file")?;
    }
    Ok(Dataset::load(dir)?)
}

fn load_checkpoint(path: &Path, cfg: &RunConfig) -> Result<Checkpoint> {
    require_file(path, "checkpoint")?;
    let ckpt = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
    check_config(&ckpt, &cfg.model_config()?)?;
    Ok(ckpt)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn create_out_dir(out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))
}

fn split_arg(cfg: &RunConfig, key: &str) -> Result<Split> {
    Ok(Split::parse(cfg.raw(key)?)?)
}

pub fn gen_corpus(cfg: &RunConfig, out: &Path) -> Result<()> {
    let synth = cfg.synth_config()?;
    let corpus = generate(&synth)?;
    create_out_dir(out)?;
    write_frame_file(&out.join(pipeline::FRAMES_FILE), &corpus.streams())?;
    let words: Vec<Vec<String>> = corpus.utterances.iter().map(|u| u.words.clone()).collect();
    write_text(&out.join(pipeline::WORDS_FILE), &words_to_text(&words))?;
    write_text(&out.join(pipeline::LEXICON_FILE), &corpus.lexicon.to_text())?;
    write_text(&out.join(pipeline::RUN_CONFIG_FILE), &cfg.to_text())?;
    info!(
        "wrote {} utterances ({} words in lexicon) to {}",
        corpus.utterances.len(),
        corpus.lexicon.len(),
        out.display()
    );
    Ok(())
}

fn frame_files(input: &Path) -> Result<Vec<PathBuf>> {
    require_dir(input, "input directory")?;
    let mut files: Vec<PathBuf> = fs::read_dir(input)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "frames"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(user(format!("no .frames files in input directory {}", input.display())));
    }
    Ok(files)
}

pub fn prepare(cfg: &RunConfig, input: &Path, out: &Path) -> Result<()> {
    let files = frame_files(input)?;
    let mut streams = Vec::new();
    for f in &files {
        streams.extend(ingest_frames(f)?);
    }
    if streams.is_empty() {
        return Err(user(format!("no utterances in {}", input.display())));
    }
    let mode = cfg.f0_mode()?;
    let (ds, stats, parts) = prepare_dataset(&streams, cfg.split_ratios()?, cfg.seed()?, mode)?;

    let mut ffe = 0.0;
    let mut vde = 0.0;
    for (s, seq) in streams.iter().zip(&ds.segments) {
        let r = ffe_vde(s, &segments_to_frames(seq).reconstruct_f0(&stats[&s.speaker], mode))?;
        ffe += r.ffe;
        vde += r.vde;
    }
    let n = streams.len() as f64;

    create_out_dir(out)?;
    write_segment_file(&out.join(pipeline::SEGMENTS_FILE), &ds.segments)?;
    write_text(&out.join(pipeline::MANIFEST_FILE), &manifest_to_text(&ds.manifest))?;
    write_text(&out.join(pipeline::STATS_FILE), &stats_to_text(&stats))?;
    let mut report = String::new();
    let _ = writeln!(report, "utterances={}", streams.len());
    let _ = writeln!(report, "train={}", parts.train.len());
    let _ = writeln!(report, "valid={}", parts.valid.len());
    let _ = writeln!(report, "test={}", parts.test.len());
    let _ = writeln!(report, "f0_mode={mode}");
    let _ = writeln!(report, "resynth.ffe={}", ffe / n);
    let _ = writeln!(report, "resynth.vde={}", vde / n);
    write_text(&out.join(pipeline::PREPARE_REPORT_FILE), &report)?;
    write_text(&out.join(pipeline::RUN_CONFIG_FILE), &cfg.to_text())?;
    info!(
        "prepared {} utterances ({} train, {} valid, {} test)",
        streams.len(),
        parts.train.len(),
        parts.valid.len(),
        parts.test.len()
    );
    Ok(())
}

pub fn fit_quantizer(cfg: &RunConfig, data: &Path, out: &Path) -> Result<()> {
    let ds = load_dataset(data)?;
    let values = ds.lf_values(&ds.ids(Split::Train));
    let (q, report) = fit_lf_quantizer(&values, cfg.quantizer_bins()?)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_out_dir(parent)?;
    }
    q.save(out)?;
    info!("fitted {} bins on {} values: {report:?}", q.bins(), values.len());
    Ok(())
}

fn open_log(path: &Path, append: bool) -> Result<BufWriter<File>> {
    let f = OpenOptions::new()
        .create(true)
        .write(true)
        .append(append)
        .truncate(!append)
        .open(path)
        .with_context(|| format!("opening {}", path.display()))?;
    Ok(BufWriter::new(f))
}

const EPOCH_HEADER: &str = "epoch\tstep\tL_u\tL_d\tL_lf\ttotal\tvalid_u_nll\tvalid_d_mae\tvalid_lf_mae";

pub fn train(
    cfg: &RunConfig,
    data: &Path,
    quantizer: Option<&Path>,
    resume: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let model_cfg = cfg.model_config()?;
    let train_cfg = cfg.train_config()?;
    let q: Option<LfQuantizer> = if model_cfg.quantized {
        let path = quantizer.ok_or_else(|| user("missing quantizer: quantized models need --quantizer"))?;
        require_file(path, "quantizer")?;
        Some(LfQuantizer::load(path)?)
    } else {
        if quantizer.is_some() {
            warn!("ignoring --quantizer for a continuous model");
        }
        None
    };
    let q = quantizer_for(&model_cfg, q.as_ref())?;
    let ds = load_dataset(data)?;

    let (model, mut state) = match resume {
        Some(path) => {
            let ckpt = load_checkpoint(path, cfg)?;
            if ckpt.quantizer.as_ref().map(LfQuantizer::fingerprint) != q.map(LfQuantizer::fingerprint) {
                return Err(user("quantizer differs from the one stored in the checkpoint"));
            }
            (ckpt.model, ckpt.state)
        }
        None => {
            let (model, params) = MsTlm::new(model_cfg.clone(), train_cfg.seed)?;
            (model, TrainState::new(params))
        }
    };
    let train_set = delayed_batches(&ds.encode(&ds.ids(Split::Train), q)?, &model_cfg)?;
    let valid_set = delayed_batches(&ds.encode(&ds.ids(Split::Valid), q)?, &model_cfg)?;
    if train_set.is_empty() {
        return Err(user("training split is empty"));
    }

    create_out_dir(out)?;
    let append = resume.is_some();
    let mut log = open_log(&out.join(pipeline::TRAIN_LOG_FILE), append)?;
    let mut epochs = open_log(&out.join(pipeline::EPOCH_LOG_FILE), append)?;
    if !append {
        writeln!(epochs, "{EPOCH_HEADER}")?;
    }
    write_text(&out.join(pipeline::RUN_CONFIG_FILE), &cfg.to_text())?;
    let mut extra = std::collections::BTreeMap::new();
    extra.insert("train.seed".to_string(), train_cfg.seed.to_string());
    let target = train_cfg.optimizer.epochs as u64;
    if state.epoch >= target {
        warn!("checkpoint already has {} epochs; nothing to do", state.epoch);
    }
    while state.epoch < target {
        let r = train_epoch(&model, &mut state, &train_cfg, &train_set, &valid_set, q, Some(&mut log))?;
        let (vu, vd, vl) = r
            .valid
            .as_ref()
            .map_or(("na".into(), "na".into(), "na".into()), |v| {
                (v.u_nll.to_string(), v.d_mae.to_string(), v.lf_mae.to_string())
            });
        writeln!(
            epochs,
            "{}\t{}\t{}\t{}\t{}\t{}\t{vu}\t{vd}\t{vl}",
            r.epoch, state.step, r.train.l_u, r.train.l_d, r.train.l_lf, r.train.total
        )?;
        log.flush()?;
        epochs.flush()?;
        checkpoint_container(&model_cfg, &train_cfg.optimizer, &state, q, &extra)
            .save(&out.join(pipeline::CHECKPOINT_FILE))?;
        info!("epoch {} done: train total {:.6}, valid u_nll {vu}", r.epoch, r.train.total);
    }
    Ok(())
}

pub fn sample(cfg: &RunConfig, data: &Path, checkpoint: &Path, out: &Path) -> Result<()> {
    let sampler = cfg.sampler_config()?;
    let ds = load_dataset(data)?;
    let ckpt = load_checkpoint(checkpoint, cfg)?;
    let ids = ds.ids(split_arg(cfg, "sample.split")?);
    let (prompts, skipped) = build_prompts(
        &ds,
        &ids,
        cfg.continuation_mode()?,
        cfg.get("sample.prompt_seconds")?,
        ckpt.config.delay,
    );
    if skipped > 0 {
        warn!("{skipped} utterances too short to prompt were skipped");
    }
    if prompts.is_empty() {
        return Err(user("no utterance in the split is long enough to prompt"));
    }
    let samples = run_continuations(&ckpt, &ds, &prompts, &sampler)?;
    create_out_dir(out)?;
    write_text(&out.join(pipeline::SAMPLES_FILE), &samples_to_text(&ds, &prompts, &samples))?;
    write_text(&out.join(pipeline::PROMPTS_FILE), &prompts_to_text(&prompts))?;
    write_text(&out.join(pipeline::RUN_CONFIG_FILE), &cfg.to_text())?;
    info!("wrote {} continuations for {} prompts", prompts.len() * sampler.n_samples, prompts.len());
    Ok(())
}

pub fn sweep(cfg: &RunConfig, data: &Path, checkpoint: &Path, out: &Path) -> Result<()> {
    let base = cfg.sampler_config()?;
    let ds = load_dataset(data)?;
    let ckpt = load_checkpoint(checkpoint, cfg)?;
    let ids = ds.ids(split_arg(cfg, "sweep.split")?);
    let seconds: f64 = cfg.get("sample.prompt_seconds")?;
    let quantized = ckpt.config.quantized;
    let mut table = String::from("stream\tkey\tvalue\tmin_mae\n");
    let mut selected = String::new();
    for stream in [SweepStream::D, SweepStream::Lf] {
        let grid = match (quantized, stream) {
            (true, _) => cfg.list("sweep.tau_grid")?,
            (false, SweepStream::D) => cfg.list("sweep.b_d_grid")?,
            (false, SweepStream::Lf) => cfg.list("sweep.b_lf_grid")?,
        };
        let r = pipeline::sweep(&ckpt, &ds, &ids, stream, &grid, &base, seconds)?;
        let name = match stream {
            SweepStream::D => "d",
            SweepStream::Lf => "lf",
        };
        for (v, m) in &r.values {
            let _ = writeln!(table, "{name}\t{}\t{v}\t{m}", r.key);
        }
        let _ = writeln!(selected, "{}={}", r.key, r.selected);
        info!("{name}: selected {}={}", r.key, r.selected);
    }
    create_out_dir(out)?;
    write_text(&out.join(pipeline::SWEEP_FILE), &table)?;
    write_text(&out.join(pipeline::SELECTED_FILE), &selected)?;
    write_text(&out.join(pipeline::RUN_CONFIG_FILE), &cfg.to_text())?;
    Ok(())
}

pub fn eval(
    cfg: &RunConfig,
    data: &Path,
    checkpoint: &Path,
    samples: Option<&Path>,
    lexicon: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let ds = load_dataset(data)?;
    let ckpt = load_checkpoint(checkpoint, cfg)?;
    let split = split_arg(cfg, "eval.split")?;
    let ids = ds.ids(split);
    if ids.is_empty() {
        return Err(user(format!("split `{}` is empty", split.as_str())));
    }
    let mut report = String::new();
    let _ = writeln!(report, "split={}", split.as_str());
    let _ = writeln!(report, "model.config_hash={}", ckpt.config.hash());
    let _ = writeln!(report, "model.input_streams={}", ckpt.config.input_streams);
    let _ = writeln!(report, "model.quantized={}", ckpt.config.quantized);
    report.push_str(&teacher_forcing_lines(&teacher_forcing(&ckpt, &ds, &ids)?));

    if let Some(dir) = samples {
        require_dir(dir, "samples directory")?;
        let ppath = dir.join(pipeline::PROMPTS_FILE);
        let spath = dir.join(pipeline::SAMPLES_FILE);
        require_file(&ppath, "prompt manifest")?;
        require_file(&spath, "samples file")?;
        let prompts = parse_prompts(&fs::read_to_string(&ppath)?, &ppath.display().to_string())?;
        if let Some(p) = prompts.iter().find(|p| p.utt_id >= ds.segments.len()) {
            return Err(user(format!("prompt {} refers to unknown utterance {}", p.prompt_id, p.utt_id)));
        }
        let pools = parse_samples(&fs::read_to_string(&spath)?, &spath.display().to_string(), &prompts)?;
        let lex = match lexicon {
            Some(p) => {
                require_file(p, "lexicon")?;
                Some(Lexicon::from_text(&fs::read_to_string(p)?)?)
            }
            None => None,
        };
        let opts = ReportOptions {
            min_seconds: cfg.get("eval.min_seconds")?,
            aggregation: cfg.aggregation()?,
            lexicon: lex.as_ref(),
        };
        let r = continuation_report(&ds, &prompts, &pools, &opts)?;
        report.push_str(&continuation_lines(&r, cfg.get("eval.per_prompt")?));
    }
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_out_dir(parent)?;
    }
    write_text(out, &report)?;
    info!("wrote report to {}", out.display());
    Ok(())
}
