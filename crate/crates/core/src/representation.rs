//! Frame-level streams, segment-level `(u, d, lf)` sequences, and the
//! speaker-mean log-F0 normalization that links them.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numeric::{CompensatedSum, RunningMean};

pub type UnitId = u32;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub unit: UnitId,
    pub voiced: bool,
    /// Hz; 0 is only permitted on unvoiced frames.
    pub f0: f64,
}

impl Frame {
    pub fn voiced(unit: UnitId, f0: f64) -> Self {
        Self {
            unit,
            voiced: true,
            f0,
        }
    }

    pub fn unvoiced(unit: UnitId) -> Self {
        Self {
            unit,
            voiced: false,
            f0: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameStream {
    pub speaker: String,
    pub frame_rate: u32,
    pub frames: Vec<Frame>,
}

impl FrameStream {
    /// Builds a stream after checking its invariants.
    pub fn new(speaker: impl Into<String>, frame_rate: u32, frames: Vec<Frame>) -> Result<Self> {
        let stream = Self {
            speaker: speaker.into(),
            frame_rate,
            frames,
        };
        stream.validate()?;
        Ok(stream)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::Empty(format!(
                "frame stream for speaker `{}`",
                self.speaker
            )));
        }
        if self.frame_rate == 0 {
            return Err(Error::InvalidValue("frame_rate must be positive".into()));
        }
        for (index, f) in self.frames.iter().enumerate() {
            if !f.f0.is_finite() || f.f0 < 0.0 {
                return Err(Error::InvalidValue(format!(
                    "frame {index} has invalid f0 {}",
                    f.f0
                )));
            }
            if f.voiced && f.f0 <= 0.0 {
                return Err(Error::NonPositiveF0 { index, f0: f.f0 });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn seconds(&self) -> f64 {
        self.frames.len() as f64 / self.frame_rate as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerStats {
    pub speaker: String,
    /// Mean of ln(f0) over voiced frames.
    pub mean_log_f0: f64,
    /// Mean of f0 in Hz over voiced frames (used by the linear-scale modes).
    pub mean_f0: f64,
    pub voiced_frame_count: u64,
}

/// Scale and normalization applied to raw F0 before segment averaging.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum F0Mode {
    #[default]
    LogMean,
    LogNone,
    LinMean,
    LinNone,
}

impl F0Mode {
    pub const ALL: [F0Mode; 4] = [
        F0Mode::LogMean,
        F0Mode::LogNone,
        F0Mode::LinMean,
        F0Mode::LinNone,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            F0Mode::LogMean => "log_mean",
            F0Mode::LogNone => "log_none",
            F0Mode::LinMean => "lin_mean",
            F0Mode::LinNone => "lin_none",
        }
    }

    fn forward(self, f0: f64, stats: &SpeakerStats) -> f64 {
        match self {
            F0Mode::LogMean => f0.ln() - stats.mean_log_f0,
            F0Mode::LogNone => f0.ln(),
            F0Mode::LinMean => f0 - stats.mean_f0,
            F0Mode::LinNone => f0,
        }
    }

    fn inverse(self, value: f64, stats: &SpeakerStats) -> f64 {
        match self {
            F0Mode::LogMean => (value + stats.mean_log_f0).exp(),
            F0Mode::LogNone => value.exp(),
            F0Mode::LinMean => value + stats.mean_f0,
            F0Mode::LinNone => value,
        }
    }
}

impl fmt::Display for F0Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for F0Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        F0Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidValue(format!("unknown f0 mode `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub u: UnitId,
    /// Duration in frames, at least 1.
    pub d: u32,
    pub lf: f64,
    pub voiced_frames: u32,
}

impl Segment {
    pub fn new(u: UnitId, d: u32, lf: f64, voiced_frames: u32) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidValue("segment duration must be >= 1".into()));
        }
        if voiced_frames > d {
            return Err(Error::InvalidValue(format!(
                "voiced_frames {voiced_frames} exceeds duration {d}"
            )));
        }
        if !lf.is_finite() {
            return Err(Error::InvalidValue(format!("non-finite lf {lf}")));
        }
        if voiced_frames == 0 && lf != 0.0 {
            return Err(Error::InvalidValue(
                "fully unvoiced segment must have lf == 0".into(),
            ));
        }
        Ok(Self {
            u,
            d,
            lf,
            voiced_frames,
        })
    }

    pub fn is_voiced(&self) -> bool {
        self.voiced_frames > 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentSequence {
    pub speaker: String,
    pub frame_rate: u32,
    pub segments: Vec<Segment>,
}

impl SegmentSequence {
    pub fn validate(&self) -> Result<()> {
        if self.frame_rate == 0 {
            return Err(Error::InvalidValue("frame_rate must be positive".into()));
        }
        for (i, s) in self.segments.iter().enumerate() {
            Segment::new(s.u, s.d, s.lf, s.voiced_frames)
                .map_err(|e| Error::InvalidValue(format!("segment {i}: {e}")))?;
        }
        for (i, w) in self.segments.windows(2).enumerate() {
            if w[0].u == w[1].u {
                return Err(Error::InvalidValue(format!(
                    "segments {i} and {} share unit {} (not run-length encoded)",
                    i + 1,
                    w[0].u
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn total_frames(&self) -> u64 {
        self.segments.iter().map(|s| s.d as u64).sum()
    }

    pub fn seconds(&self) -> f64 {
        self.total_frames() as f64 / self.frame_rate as f64
    }

    pub fn units(&self) -> Vec<UnitId> {
        self.segments.iter().map(|s| s.u).collect()
    }

    /// Number of leading segments whose first frame starts within `seconds`.
    pub fn prefix_len_for_seconds(&self, seconds: f64) -> usize {
        let window = seconds * self.frame_rate as f64;
        let mut start = 0u64;
        let mut n = 0;
        for s in &self.segments {
            if (start as f64) < window {
                n += 1;
                start += s.d as u64;
            } else {
                break;
            }
        }
        n
    }

    pub fn prefix(&self, n: usize) -> SegmentSequence {
        SegmentSequence {
            speaker: self.speaker.clone(),
            frame_rate: self.frame_rate,
            segments: self.segments[..n.min(self.segments.len())].to_vec(),
        }
    }
}

/// One expanded frame carrying its segment's unit and averaged value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LfFrame {
    pub unit: UnitId,
    pub voiced: bool,
    pub lf: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LfFrameStream {
    pub speaker: String,
    pub frame_rate: u32,
    pub frames: Vec<LfFrame>,
}

impl LfFrameStream {
    pub fn to_segments(&self) -> Result<SegmentSequence> {
        let segments = run_length_segments(
            self.frames
                .iter()
                .map(|f| (f.unit, f.voiced, f.lf)),
        );
        if segments.is_empty() {
            return Err(Error::Empty("frame expansion".into()));
        }
        Ok(SegmentSequence {
            speaker: self.speaker.clone(),
            frame_rate: self.frame_rate,
            segments,
        })
    }

    /// Maps values back to Hz; unvoiced frames get voicing `false` and f0 0.
    pub fn reconstruct_f0(&self, stats: &SpeakerStats, mode: F0Mode) -> Vec<(bool, f64)> {
        self.frames
            .iter()
            .map(|f| {
                if f.voiced {
                    (true, mode.inverse(f.lf, stats))
                } else {
                    (false, 0.0)
                }
            })
            .collect()
    }
}

/// Per-speaker mean of log F0 (and linear F0) over voiced frames.
pub fn compute_speaker_stats(streams: &[FrameStream]) -> Result<BTreeMap<String, SpeakerStats>> {
    struct Acc {
        log_sum: CompensatedSum,
        lin_sum: CompensatedSum,
        count: u64,
    }
    let mut acc: BTreeMap<&str, Acc> = BTreeMap::new();
    for stream in streams {
        let entry = acc.entry(stream.speaker.as_str()).or_insert_with(|| Acc {
            log_sum: CompensatedSum::new(),
            lin_sum: CompensatedSum::new(),
            count: 0,
        });
        for (index, f) in stream.frames.iter().enumerate() {
            if !f.voiced {
                continue;
            }
            if f.f0 <= 0.0 || !f.f0.is_finite() {
                return Err(Error::NonPositiveF0 { index, f0: f.f0 });
            }
            entry.log_sum.add(f.f0.ln());
            entry.lin_sum.add(f.f0);
            entry.count += 1;
        }
    }
    let mut out = BTreeMap::new();
    for (speaker, a) in acc {
        if a.count == 0 {
            return Err(Error::NoVoicedFrames(speaker.to_string()));
        }
        let n = a.count as f64;
        out.insert(
            speaker.to_string(),
            SpeakerStats {
                speaker: speaker.to_string(),
                mean_log_f0: a.log_sum.value() / n,
                mean_f0: a.lin_sum.value() / n,
                voiced_frame_count: a.count,
            },
        );
    }
    Ok(out)
}

/// Per-frame normalized pitch; unvoiced frames map to 0 in every mode.
pub fn normalize_f0(stream: &FrameStream, stats: &SpeakerStats, mode: F0Mode) -> Result<Vec<f64>> {
    if stats.speaker != stream.speaker {
        return Err(Error::SpeakerMismatch {
            stats: stats.speaker.clone(),
            stream: stream.speaker.clone(),
        });
    }
    stream
        .frames
        .iter()
        .enumerate()
        .map(|(index, f)| {
            if !f.voiced {
                Ok(0.0)
            } else if f.f0 <= 0.0 || !f.f0.is_finite() {
                Err(Error::NonPositiveF0 { index, f0: f.f0 })
            } else {
                Ok(mode.forward(f.f0, stats))
            }
        })
        .collect()
}

fn run_length_segments(frames: impl Iterator<Item = (UnitId, bool, f64)>) -> Vec<Segment> {
    let mut segments: Vec<Segment> = Vec::new();
    let mut current: Option<(UnitId, u32, RunningMean)> = None;
    let close = |(u, d, m): (UnitId, u32, RunningMean), out: &mut Vec<Segment>| {
        out.push(Segment {
            u,
            d,
            lf: m.mean().unwrap_or(0.0),
            voiced_frames: m.count() as u32,
        });
    };
    for (unit, voiced, lf) in frames {
        match current.as_mut() {
            Some((u, d, m)) if *u == unit => {
                *d += 1;
                if voiced {
                    m.push(lf);
                }
            }
            _ => {
                if let Some(run) = current.take() {
                    close(run, &mut segments);
                }
                let mut m = RunningMean::default();
                if voiced {
                    m.push(lf);
                }
                current = Some((unit, 1, m));
            }
        }
    }
    if let Some(run) = current {
        close(run, &mut segments);
    }
    segments
}

/// Run-length encodes units; a segment's lf is the mean over its voiced frames.
pub fn frames_to_segments(stream: &FrameStream, lf: &[f64]) -> Result<SegmentSequence> {
    if stream.frames.is_empty() {
        return Err(Error::Empty(format!(
            "frame stream for speaker `{}`",
            stream.speaker
        )));
    }
    if lf.len() != stream.frames.len() {
        return Err(Error::LengthMismatch {
            what: "per-frame lf values",
            expected: stream.frames.len(),
            got: lf.len(),
        });
    }
    let segments = run_length_segments(
        stream
            .frames
            .iter()
            .zip(lf)
            .map(|(f, &v)| (f.unit, f.voiced, v)),
    );
    Ok(SegmentSequence {
        speaker: stream.speaker.clone(),
        frame_rate: stream.frame_rate,
        segments,
    })
}

/// Repeats each segment's unit and lf over its duration. A frame is voiced
/// iff its segment had at least one voiced frame.
pub fn segments_to_frames(seq: &SegmentSequence) -> LfFrameStream {
    let mut frames = Vec::with_capacity(seq.total_frames() as usize);
    for s in &seq.segments {
        let voiced = s.voiced_frames > 0;
        for _ in 0..s.d {
            frames.push(LfFrame {
                unit: s.u,
                voiced,
                lf: s.lf,
            });
        }
    }
    LfFrameStream {
        speaker: seq.speaker.clone(),
        frame_rate: seq.frame_rate,
        frames,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stream(frames: Vec<Frame>) -> FrameStream {
        FrameStream::new("spk", 50, frames).unwrap()
    }

    fn stats_for(frames: Vec<Frame>) -> SpeakerStats {
        compute_speaker_stats(&[stream(frames)]).unwrap()["spk"].clone()
    }

    #[test]
    fn speaker_mean_of_constant_pitch() {
        let s = stats_for(vec![Frame::voiced(1, 100.0), Frame::voiced(2, 100.0)]);
        assert!((s.mean_log_f0 - 100f64.ln()).abs() < 1e-15);
        assert_eq!(s.voiced_frame_count, 2);
    }

    #[test]
    fn speaker_mean_excludes_unvoiced() {
        let s = stats_for(vec![Frame::voiced(1, 100.0), Frame::unvoiced(2)]);
        assert!((s.mean_log_f0 - 100f64.ln()).abs() < 1e-15);
        assert_eq!(s.voiced_frame_count, 1);
    }

    #[test]
    fn speaker_mean_three_values() {
        let s = stats_for(vec![
            Frame::voiced(1, 100.0),
            Frame::voiced(2, 200.0),
            Frame::voiced(3, 400.0),
        ]);
        let expected = (100f64.ln() + 200f64.ln() + 400f64.ln()) / 3.0;
        assert!((s.mean_log_f0 - expected).abs() < 1e-14);
    }

    #[test]
    fn speaker_without_voiced_frames_is_named() {
        let a = stream(vec![Frame::voiced(0, 120.0)]);
        let b = FrameStream::new("quiet", 50, vec![Frame::unvoiced(0)]).unwrap();
        match compute_speaker_stats(&[a, b]) {
            Err(Error::NoVoicedFrames(s)) => assert_eq!(s, "quiet"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn normalize_examples() {
        let mut stats = stats_for(vec![Frame::voiced(0, 100.0)]);
        stats.mean_log_f0 = 100f64.ln();
        let s = stream(vec![
            Frame::voiced(0, 100.0),
            Frame::voiced(0, 200.0),
            Frame {
                unit: 0,
                voiced: false,
                f0: 321.0,
            },
        ]);
        let lf = normalize_f0(&s, &stats, F0Mode::LogMean).unwrap();
        assert_eq!(lf[0], 0.0);
        assert!((lf[1] - 2f64.ln()).abs() < 1e-12);
        assert_eq!(lf[2], 0.0);
        for mode in F0Mode::ALL {
            assert_eq!(normalize_f0(&s, &stats, mode).unwrap()[2], 0.0);
        }
    }

    #[test]
    fn normalize_rejects_bad_voiced_frame() {
        let stats = stats_for(vec![Frame::voiced(0, 100.0)]);
        let bad = FrameStream {
            speaker: "spk".into(),
            frame_rate: 50,
            frames: vec![Frame {
                unit: 0,
                voiced: true,
                f0: 0.0,
            }],
        };
        assert!(matches!(
            normalize_f0(&bad, &stats, F0Mode::LogMean),
            Err(Error::NonPositiveF0 { index: 0, .. })
        ));
    }

    #[test]
    fn normalize_rejects_foreign_stats() {
        let stats = stats_for(vec![Frame::voiced(0, 100.0)]);
        let other = FrameStream::new("other", 50, vec![Frame::voiced(0, 90.0)]).unwrap();
        assert!(matches!(
            normalize_f0(&other, &stats, F0Mode::LogMean),
            Err(Error::SpeakerMismatch { .. })
        ));
    }

    #[test]
    fn lin_modes() {
        let stats = stats_for(vec![Frame::voiced(0, 100.0), Frame::voiced(0, 300.0)]);
        let s = stream(vec![Frame::voiced(0, 250.0)]);
        assert!((normalize_f0(&s, &stats, F0Mode::LinMean).unwrap()[0] - 50.0).abs() < 1e-12);
        assert_eq!(normalize_f0(&s, &stats, F0Mode::LinNone).unwrap()[0], 250.0);
        assert!((normalize_f0(&s, &stats, F0Mode::LogNone).unwrap()[0] - 250f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn appendix_example_segments() {
        let s = stream(vec![
            Frame::voiced(13, 1.0),
            Frame::voiced(13, 1.0),
            Frame::unvoiced(13),
            Frame::unvoiced(21),
            Frame::voiced(27, 1.0),
            Frame::voiced(27, 1.0),
        ]);
        let lf = [1.5, 2.5, 0.0, 0.0, 1.3, 3.5];
        let seq = frames_to_segments(&s, &lf).unwrap();
        let got: Vec<_> = seq.segments.iter().map(|g| (g.u, g.d, g.voiced_frames)).collect();
        assert_eq!(got, vec![(13, 3, 2), (21, 1, 0), (27, 2, 2)]);
        assert_eq!(seq.segments[0].lf, 2.0);
        assert_eq!(seq.segments[1].lf, 0.0);
        assert!((seq.segments[2].lf - 2.4).abs() < 1e-12);

        let frames = segments_to_frames(&seq);
        let units: Vec<_> = frames.frames.iter().map(|f| f.unit).collect();
        assert_eq!(units, vec![13, 13, 13, 21, 27, 27]);
    }

    #[test]
    fn single_frame_segment() {
        let s = stream(vec![Frame::voiced(5, 1.0)]);
        let seq = frames_to_segments(&s, &[0.7]).unwrap();
        assert_eq!(seq.segments, vec![Segment::new(5, 1, 0.7, 1).unwrap()]);
    }

    #[test]
    fn single_segment_expansion() {
        let seq = SegmentSequence {
            speaker: "spk".into(),
            frame_rate: 50,
            segments: vec![Segment::new(13, 3, 2.0, 3).unwrap()],
        };
        let frames = segments_to_frames(&seq).frames;
        assert_eq!(frames.len(), 3);
        assert!(frames.iter().all(|f| f.unit == 13 && f.lf == 2.0 && f.voiced));
    }

    #[test]
    fn lf_length_mismatch() {
        let s = stream(vec![Frame::voiced(5, 1.0)]);
        assert!(matches!(
            frames_to_segments(&s, &[0.1, 0.2]),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn empty_stream_rejected() {
        assert!(FrameStream::new("spk", 50, vec![]).is_err());
        let raw = FrameStream {
            speaker: "spk".into(),
            frame_rate: 50,
            frames: vec![],
        };
        assert!(matches!(frames_to_segments(&raw, &[]), Err(Error::Empty(_))));
    }

    #[test]
    fn prompt_prefix_includes_boundary_segment() {
        let seq = SegmentSequence {
            speaker: "spk".into(),
            frame_rate: 10,
            segments: vec![
                Segment::new(1, 12, 0.0, 0).unwrap(),
                Segment::new(2, 15, 0.0, 0).unwrap(),
                Segment::new(3, 5, 0.0, 0).unwrap(),
                Segment::new(4, 5, 0.0, 0).unwrap(),
            ],
        };
        // 3 s at 10 fps = 30 frames; segment 3 starts at frame 27 and is included.
        assert_eq!(seq.prefix_len_for_seconds(3.0), 3);
        assert_eq!(seq.prefix_len_for_seconds(1.0), 1);
    }

    #[test]
    fn reconstruct_inverts_log_mean() {
        let stats = stats_for(vec![Frame::voiced(0, 150.0), Frame::voiced(0, 90.0)]);
        let s = stream(vec![Frame::voiced(0, 180.0), Frame::unvoiced(1)]);
        let lf = normalize_f0(&s, &stats, F0Mode::LogMean).unwrap();
        let seq = frames_to_segments(&s, &lf).unwrap();
        let rec = segments_to_frames(&seq).reconstruct_f0(&stats, F0Mode::LogMean);
        assert!(rec[0].0 && (rec[0].1 - 180.0).abs() < 1e-9);
        assert_eq!(rec[1], (false, 0.0));
    }
}
