//! Synthetic corpora with controllable content/prosody coupling, ingestion,
//! splitting and the manifest file.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::formats::{read_frame_file, read_segment_file};
use crate::numeric::derive_seed;
use crate::representation::{
    compute_speaker_stats, frames_to_segments, normalize_f0, F0Mode, Frame, FrameStream, SegmentSequence,
    SpeakerStats,
};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    /// Unit vocabulary size `V`.
    pub units: usize,
    /// Units `0..unvoiced_units` are always unvoiced.
    pub unvoiced_units: usize,
    /// Number of distinct successors per unit in the transition table.
    pub successors: usize,
    pub speakers: usize,
    pub utterances: usize,
    pub min_segments: usize,
    pub max_segments: usize,
    pub frame_rate: u32,
    pub speaker_log_f0: (f64, f64),
    /// Per-speaker multiplier on lf excursions.
    pub speaker_scale: (f64, f64),
    pub mean_duration: (f64, f64),
    /// Coupling strength κ of a segment's prosody to the next unit.
    pub coupling: f64,
    /// Duration shift (frames) and lf shift at full coupling.
    pub duration_coupling: f64,
    pub lf_coupling: f64,
    pub lf_offset_std: f64,
    /// Magnitude of a ± lf accent shared by a phrase. The sign is drawn at
    /// the start of an utterance and again after every unvoiced segment.
    pub accent: f64,
    pub duration_noise: f64,
    pub frame_noise: f64,
    pub unvoiced_frame_prob: f64,
    pub leading_silence: bool,
    pub word_min: usize,
    pub word_max: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            units: 50,
            unvoiced_units: 2,
            successors: 4,
            speakers: 4,
            utterances: 200,
            min_segments: 20,
            max_segments: 60,
            frame_rate: 50,
            speaker_log_f0: (90f64.ln(), 220f64.ln()),
            speaker_scale: (0.7, 1.3),
            mean_duration: (2.0, 8.0),
            coupling: 0.7,
            duration_coupling: 3.0,
            lf_coupling: 0.4,
            lf_offset_std: 0.15,
            accent: 0.0,
            duration_noise: 0.5,
            frame_noise: 0.02,
            unvoiced_frame_prob: 0.05,
            leading_silence: true,
            word_min: 2,
            word_max: 4,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.units < 3 || self.unvoiced_units >= self.units {
            return bad("need at least 3 units and at least one voiced unit");
        }
        if self.successors == 0 || self.successors >= self.units {
            return bad("successors must lie in [1, units)");
        }
        if self.speakers == 0 || self.utterances == 0 {
            return bad("speakers and utterances must be positive");
        }
        if self.min_segments == 0 || self.min_segments > self.max_segments {
            return bad("segment range must satisfy 1 <= min <= max");
        }
        if self.frame_rate == 0 {
            return bad("frame_rate must be positive");
        }
        if !(0.0..=1.0).contains(&self.coupling) {
            return bad("coupling must lie in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.unvoiced_frame_prob) {
            return bad("unvoiced_frame_prob must lie in [0, 1)");
        }
        if self.word_min == 0 || self.word_min > self.word_max {
            return bad("word length range must satisfy 1 <= min <= max");
        }
        for (name, (lo, hi)) in [
            ("speaker_log_f0", self.speaker_log_f0),
            ("speaker_scale", self.speaker_scale),
            ("mean_duration", self.mean_duration),
        ] {
            if !(lo <= hi && lo.is_finite() && hi.is_finite()) {
                return Err(Error::Config(format!("{name} range must be ordered and finite")));
            }
        }
        for v in [self.duration_noise, self.frame_noise, self.lf_offset_std, self.accent] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad("noise and spread parameters must be >= 0");
            }
        }
        Ok(())
    }
}

/// Per-unit generative tables.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitTables {
    pub mean_duration: Vec<f64>,
    pub lf_offset: Vec<f64>,
    /// Code in [-1, 1] that a preceding segment's prosody reveals.
    pub code: Vec<f64>,
    /// `(successor, probability)` rows; probabilities sum to 1.
    pub transitions: Vec<Vec<(usize, f64)>>,
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..hi)
    }
}

fn normal(rng: &mut impl Rng, std: f64) -> f64 {
    if std == 0.0 {
        0.0
    } else {
        Normal::new(0.0, std).expect("finite std").sample(rng)
    }
}

impl UnitTables {
    pub fn generate(cfg: &SynthConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[0]));
        let v = cfg.units;
        let mut mean_duration = Vec::with_capacity(v);
        let mut lf_offset = Vec::with_capacity(v);
        let mut code = Vec::with_capacity(v);
        let mut transitions = Vec::with_capacity(v);
        for u in 0..v {
            mean_duration.push(uniform(&mut rng, cfg.mean_duration));
            lf_offset.push(if u < cfg.unvoiced_units { 0.0 } else { normal(&mut rng, cfg.lf_offset_std) });
            code.push(rng.gen_range(-1.0..=1.0));
            let mut others: Vec<usize> = (0..v).filter(|&x| x != u).collect();
            others.shuffle(&mut rng);
            let chosen = &others[..cfg.successors];
            let weights: Vec<f64> = chosen.iter().map(|_| rng.gen_range(0.5..1.5)).collect();
            let total: f64 = weights.iter().sum();
            let mut row: Vec<(usize, f64)> = chosen.iter().zip(&weights).map(|(&s, &w)| (s, w / total)).collect();
            row.sort_by_key(|e| e.0);
            transitions.push(row);
        }
        Self {
            mean_duration,
            lf_offset,
            code,
            transitions,
        }
    }

    fn next(&self, u: usize, rng: &mut impl Rng) -> usize {
        let row = &self.transitions[u];
        let mut x: f64 = rng.gen();
        for &(s, p) in row {
            if x < p {
                return s;
            }
            x -= p;
        }
        row[row.len() - 1].0
    }
}

/// Generated utterance with its latent word labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthUtterance {
    pub stream: FrameStream,
    pub words: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub utterances: Vec<SynthUtterance>,
    pub tables: UnitTables,
    pub lexicon: Lexicon,
}

impl SynthCorpus {
    pub fn streams(&self) -> Vec<FrameStream> {
        self.utterances.iter().map(|u| u.stream.clone()).collect()
    }
}

pub fn speaker_name(i: usize) -> String {
    format!("spk{i:02}")
}

/// Word label for a run of units.
pub fn word_label(units: &[usize]) -> String {
    let parts: Vec<String> = units.iter().map(|u| u.to_string()).collect();
    format!("w{}", parts.join("_"))
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthCorpus> {
    cfg.validate()?;
    let tables = UnitTables::generate(cfg);
    let mut speaker_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[1]));
    let speakers: Vec<(f64, f64)> = (0..cfg.speakers)
        .map(|_| {
            (
                uniform(&mut speaker_rng, cfg.speaker_log_f0),
                uniform(&mut speaker_rng, cfg.speaker_scale),
            )
        })
        .collect();
    let utterances: Vec<SynthUtterance> = (0..cfg.utterances)
        .into_par_iter()
        .map(|i| generate_utterance(cfg, &tables, &speakers, i))
        .collect::<Result<_>>()?;
    let mut lexicon = Lexicon::default();
    for u in &utterances {
        for w in &u.words {
            lexicon.insert_label(w)?;
        }
    }
    Ok(SynthCorpus {
        utterances,
        tables,
        lexicon,
    })
}

fn generate_utterance(
    cfg: &SynthConfig,
    tables: &UnitTables,
    speakers: &[(f64, f64)],
    index: usize,
) -> Result<SynthUtterance> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[2, index as u64]));
    let spk = index % cfg.speakers;
    let (log_mean, scale) = speakers[spk];
    let len = rng.gen_range(cfg.min_segments..=cfg.max_segments);
    let mut units = Vec::with_capacity(len + 1);
    units.push(if cfg.leading_silence {
        0
    } else {
        rng.gen_range(cfg.unvoiced_units..cfg.units)
    });
    while units.len() < len + 1 {
        let prev = units[units.len() - 1];
        units.push(tables.next(prev, &mut rng));
    }
    let k = cfg.coupling;
    let draw_accent = |rng: &mut ChaCha8Rng| match cfg.accent > 0.0 {
        true if rng.gen::<bool>() => cfg.accent,
        true => -cfg.accent,
        false => 0.0,
    };
    let mut accent = draw_accent(&mut rng);
    let mut frames = Vec::new();
    for t in 0..len {
        let u = units[t];
        let c = tables.code[units[t + 1]];
        let d = (tables.mean_duration[u] + k * cfg.duration_coupling * c + normal(&mut rng, cfg.duration_noise))
            .round()
            .clamp(1.0, 32.0) as u32;
        let lf = scale * (tables.lf_offset[u] + k * cfg.lf_coupling * c + accent);
        if u < cfg.unvoiced_units {
            accent = draw_accent(&mut rng);
        }
        for _ in 0..d {
            let noise = normal(&mut rng, cfg.frame_noise);
            let voiced = u >= cfg.unvoiced_units && rng.gen::<f64>() >= cfg.unvoiced_frame_prob;
            if voiced {
                let f0 = ((log_mean + lf + noise).exp() * 1e4).round() / 1e4;
                frames.push(Frame::voiced(u as u32, f0.max(1e-4)));
            } else {
                frames.push(Frame::unvoiced(u as u32));
            }
        }
    }
    let mut words = Vec::new();
    let mut t = 0;
    while t < len {
        let w = rng.gen_range(cfg.word_min..=cfg.word_max).min(len - t);
        words.push(word_label(&units[t..t + w]));
        t += w;
    }
    Ok(SynthUtterance {
        stream: FrameStream::new(speaker_name(spk), cfg.frame_rate, frames)?,
        words,
    })
}

/// Word inventory mapping unit runs to labels; transcribes unit streams by
/// greedy longest match.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Lexicon {
    entries: BTreeMap<Vec<usize>, String>,
    max_len: usize,
}

impl Lexicon {
    pub fn insert(&mut self, units: Vec<usize>, label: String) {
        self.max_len = self.max_len.max(units.len());
        self.entries.insert(units, label);
    }

    /// Adds a label produced by [`word_label`].
    pub fn insert_label(&mut self, label: &str) -> Result<()> {
        let units = label
            .strip_prefix('w')
            .ok_or_else(|| Error::InvalidValue(format!("bad word label `{label}`")))?
            .split('_')
            .map(|p| p.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::InvalidValue(format!("bad word label `{label}`")))?;
        self.insert(units, label.to_string());
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Longest known word starting at each position; unmatched units become
    /// `<unk>`.
    pub fn transcribe(&self, units: &[usize]) -> Vec<String> {
        let mut out = Vec::new();
        let mut i = 0;
        while i < units.len() {
            let longest = (1..=self.max_len.min(units.len() - i))
                .rev()
                .find_map(|n| self.entries.get(&units[i..i + n]).map(|w| (n, w)));
            match longest {
                Some((n, w)) => {
                    out.push(w.clone());
                    i += n;
                }
                None => {
                    out.push("<unk>".to_string());
                    i += 1;
                }
            }
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (units, label) in &self.entries {
            let parts: Vec<String> = units.iter().map(|u| u.to_string()).collect();
            let _ = writeln!(s, "{label}\t{}", parts.join(" "));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lex = Self::default();
        for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let (label, units) = line
                .split_once('\t')
                .ok_or_else(|| Error::InvalidValue(format!("lexicon line {}: missing tab", n + 1)))?;
            let units = units
                .split(' ')
                .map(|p| p.parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| Error::InvalidValue(format!("lexicon line {}: bad unit", n + 1)))?;
            lex.insert(units, label.to_string());
        }
        Ok(lex)
    }
}

pub fn words_to_text(words: &[Vec<String>]) -> String {
    let mut s = String::new();
    for (i, w) in words.iter().enumerate() {
        let _ = writeln!(s, "{i}\t{}", w.join(" "));
    }
    s
}

pub fn ingest_frames(path: &Path) -> Result<Vec<FrameStream>> {
    let streams = read_frame_file(path)?;
    for (i, s) in streams.iter().enumerate() {
        s.validate()
            .map_err(|e| Error::InvalidValue(format!("{}: utterance {i}: {e}", path.display())))?;
    }
    Ok(streams)
}

pub fn ingest_segments(path: &Path) -> Result<Vec<SegmentSequence>> {
    let seqs = read_segment_file(path)?;
    for (i, s) in seqs.iter().enumerate() {
        s.validate()
            .map_err(|e| Error::InvalidValue(format!("{}: utterance {i}: {e}", path.display())))?;
    }
    Ok(seqs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            _ => Err(Error::InvalidValue(format!("unknown split `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CorpusSplit {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

impl CorpusSplit {
    pub fn membership(&self, n: usize) -> Vec<Split> {
        let mut m = vec![Split::Train; n];
        for &i in &self.valid {
            m[i] = Split::Valid;
        }
        for &i in &self.test {
            m[i] = Split::Test;
        }
        m
    }
}

/// Per-speaker shuffled split. Each speaker keeps at least one training
/// utterance; a speaker with one utterance goes entirely to train.
pub fn split(speakers: &[String], ratios: (f64, f64, f64), seed: u64) -> Result<CorpusSplit> {
    let (a, b, c) = ratios;
    if [a, b, c].iter().any(|r| !(*r >= 0.0)) || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split ratios {a},{b},{c} must be >= 0 and sum to 1")));
    }
    let mut by_speaker: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in speakers.iter().enumerate() {
        by_speaker.entry(s).or_default().push(i);
    }
    let mut out = CorpusSplit::default();
    for (k, (spk, mut ids)) in by_speaker.into_iter().enumerate() {
        let n = ids.len();
        if n == 1 {
            if b > 0.0 || c > 0.0 {
                log::warn!("speaker `{spk}` has a single utterance; assigning it to train");
            }
            out.train.push(ids[0]);
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[3, k as u64]));
        ids.shuffle(&mut rng);
        let mut n_valid = (n as f64 * b).round() as usize;
        let mut n_test = (n as f64 * c).round() as usize;
        while n_valid + n_test >= n {
            if n_test >= n_valid && n_test > 0 {
                n_test -= 1;
            } else {
                n_valid -= 1;
            }
        }
        out.valid.extend_from_slice(&ids[..n_valid]);
        out.test.extend_from_slice(&ids[n_valid..n_valid + n_test]);
        out.train.extend_from_slice(&ids[n_valid + n_test..]);
    }
    out.train.sort_unstable();
    out.valid.sort_unstable();
    out.test.sort_unstable();
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub utt_id: usize,
    pub speaker: String,
    pub n_frames: u64,
    pub split: Split,
}

pub const MANIFEST_HEADER: &str = "utt_id\tspeaker\tn_frames\tsplit";

pub fn manifest_to_text(entries: &[ManifestEntry]) -> String {
    let mut s = String::from(MANIFEST_HEADER);
    s.push('\n');
    for e in entries {
        let _ = writeln!(s, "{}\t{}\t{}\t{}", e.utt_id, e.speaker, e.n_frames, e.split.as_str());
    }
    s
}

pub fn parse_manifest(text: &str, path: &str) -> Result<Vec<ManifestEntry>> {
    let mut out = Vec::new();
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == MANIFEST_HEADER => {}
        _ => {
            return Err(Error::Parse {
                path: path.to_string(),
                line: 1,
                column: 1,
                message: format!("expected header `{MANIFEST_HEADER}`"),
            })
        }
    }
    for (n, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let err = |m: &str| Error::Parse {
            path: path.to_string(),
            line: n + 1,
            column: 1,
            message: m.to_string(),
        };
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 {
            return Err(err("expected 4 tab-separated fields"));
        }
        out.push(ManifestEntry {
            utt_id: f[0].parse().map_err(|_| err("bad utt_id"))?,
            speaker: f[1].to_string(),
            n_frames: f[2].parse().map_err(|_| err("bad n_frames"))?,
            split: Split::parse(f[3]).map_err(|e| err(&e.to_string()))?,
        });
    }
    Ok(out)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    parse_manifest(&fs::read_to_string(path)?, &path.display().to_string())
}

/// Speaker statistics from the training utterances, then segment sequences
/// for every utterance.
pub fn prepare_segments(
    streams: &[FrameStream],
    train_ids: &[usize],
    mode: F0Mode,
) -> Result<(BTreeMap<String, SpeakerStats>, Vec<SegmentSequence>)> {
    if streams.is_empty() {
        return Err(Error::Empty("no utterances".into()));
    }
    let train: Vec<FrameStream> = train_ids.iter().map(|&i| streams[i].clone()).collect();
    let stats = compute_speaker_stats(&train)?;
    let all: BTreeSet<&str> = streams.iter().map(|s| s.speaker.as_str()).collect();
    if let Some(missing) = all.iter().find(|s| !stats.contains_key(**s)) {
        return Err(Error::InvalidValue(format!("speaker `{missing}` has no training utterance")));
    }
    let seqs = streams
        .par_iter()
        .map(|s| {
            let lf = normalize_f0(s, &stats[&s.speaker], mode)?;
            frames_to_segments(s, &lf)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((stats, seqs))
}

pub fn stats_to_text(stats: &BTreeMap<String, SpeakerStats>) -> String {
    let mut s = String::from("speaker\tmean_log_f0\tmean_f0\tvoiced_frames\n");
    for st in stats.values() {
        let _ = writeln!(
            s,
            "{}\t{:.9}\t{:.6}\t{}",
            st.speaker, st.mean_log_f0, st.mean_f0, st.voiced_frame_count
        );
    }
    s
}
