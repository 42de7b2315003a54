//! Line-oriented text formats for frame streams and segment sequences.
//!
//! Frame line:   `speaker<TAB>frame_rate<TAB>u:v:f u:v:f ...`
//! Segment line: `speaker<TAB>frame_rate<TAB>u,d,lf;u,d,lf;...`
//!
//! Pitch is written with at most four decimals (trailing zeros trimmed) and
//! segment lf with exactly six, so a write/read/write cycle is byte-stable.
//! The segment format does not carry voiced-frame counts; on reading, a
//! segment is taken as fully voiced when its lf is non-zero.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::representation::{Frame, FrameStream, Segment, SegmentSequence};

pub fn format_f0(f0: f64) -> String {
    let s = format!("{f0:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s.is_empty() || s == "-0" {
        "0".to_string()
    } else {
        s.to_string()
    }
}

pub fn format_lf(lf: f64) -> String {
    let s = format!("{lf:.6}");
    if s == "-0.000000" {
        "0.000000".to_string()
    } else {
        s
    }
}

pub fn frame_line(stream: &FrameStream) -> String {
    let mut out = format!("{}\t{}\t", stream.speaker, stream.frame_rate);
    for (i, f) in stream.frames.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        let _ = write!(out, "{}:{}:{}", f.unit, u8::from(f.voiced), format_f0(f.f0));
    }
    out
}

pub fn segment_line(seq: &SegmentSequence) -> String {
    let mut out = format!("{}\t{}\t", seq.speaker, seq.frame_rate);
    out.push_str(&segments_field(&seq.segments));
    out
}

pub fn segments_field(segments: &[Segment]) -> String {
    let mut out = String::new();
    for (i, s) in segments.iter().enumerate() {
        if i > 0 {
            out.push(';');
        }
        let _ = write!(out, "{},{},{}", s.u, s.d, format_lf(s.lf));
    }
    out
}

struct LineCtx<'a> {
    path: &'a str,
    line: usize,
}

impl LineCtx<'_> {
    fn err(&self, column: usize, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_string(),
            line: self.line,
            column,
            message: message.into(),
        }
    }
}

/// Splits `speaker<TAB>rate<TAB>payload`, returning the payload's column.
fn split_header<'a>(ctx: &LineCtx, line: &'a str) -> Result<(&'a str, u32, &'a str, usize)> {
    let mut parts = line.splitn(3, '\t');
    let speaker = parts.next().unwrap_or("");
    if speaker.is_empty() {
        return Err(ctx.err(1, "missing speaker id"));
    }
    let rate_str = parts
        .next()
        .ok_or_else(|| ctx.err(speaker.len() + 1, "missing frame rate"))?;
    let rate_col = speaker.len() + 2;
    let rate: u32 = rate_str
        .parse()
        .map_err(|_| ctx.err(rate_col, format!("invalid frame rate `{rate_str}`")))?;
    if rate == 0 {
        return Err(ctx.err(rate_col, "frame rate must be positive"));
    }
    let payload_col = rate_col + rate_str.len() + 1;
    let payload = parts
        .next()
        .ok_or_else(|| ctx.err(payload_col, "missing payload"))?;
    if payload.is_empty() {
        return Err(ctx.err(payload_col, "empty payload"));
    }
    Ok((speaker, rate, payload, payload_col))
}

pub fn parse_frame_line(line: &str, path: &str, line_no: usize) -> Result<FrameStream> {
    let ctx = LineCtx {
        path,
        line: line_no,
    };
    let (speaker, frame_rate, payload, mut col) = split_header(&ctx, line)?;
    let mut frames = Vec::new();
    for token in payload.split(' ') {
        let mut fields = token.split(':');
        let (Some(u), Some(v), Some(f), None) =
            (fields.next(), fields.next(), fields.next(), fields.next())
        else {
            return Err(ctx.err(col, format!("expected `unit:voiced:f0`, got `{token}`")));
        };
        let unit: u32 = u
            .parse()
            .map_err(|_| ctx.err(col, format!("invalid unit `{u}`")))?;
        let voiced = match v {
            "0" => false,
            "1" => true,
            _ => return Err(ctx.err(col, format!("voicing flag must be 0 or 1, got `{v}`"))),
        };
        let f0: f64 = f
            .parse()
            .map_err(|_| ctx.err(col, format!("invalid f0 `{f}`")))?;
        if !f0.is_finite() || f0 < 0.0 {
            return Err(ctx.err(col, format!("f0 must be a non-negative number, got `{f}`")));
        }
        if voiced && f0 <= 0.0 {
            return Err(ctx.err(col, "voiced frame with f0 = 0"));
        }
        frames.push(Frame { unit, voiced, f0 });
        col += token.len() + 1;
    }
    Ok(FrameStream {
        speaker: speaker.to_string(),
        frame_rate,
        frames,
    })
}

pub fn parse_segment_line(line: &str, path: &str, line_no: usize) -> Result<SegmentSequence> {
    let ctx = LineCtx {
        path,
        line: line_no,
    };
    let (speaker, frame_rate, payload, col) = split_header(&ctx, line)?;
    let segments = parse_segments_field(&ctx, payload, col)?;
    let seq = SegmentSequence {
        speaker: speaker.to_string(),
        frame_rate,
        segments,
    };
    seq.validate().map_err(|e| ctx.err(col, e.to_string()))?;
    Ok(seq)
}

fn parse_segments_field(ctx: &LineCtx, payload: &str, mut col: usize) -> Result<Vec<Segment>> {
    let mut segments = Vec::new();
    for token in payload.split(';') {
        let mut fields = token.split(',');
        let (Some(u), Some(d), Some(lf), None) =
            (fields.next(), fields.next(), fields.next(), fields.next())
        else {
            return Err(ctx.err(col, format!("expected `u,d,lf`, got `{token}`")));
        };
        let u: u32 = u
            .parse()
            .map_err(|_| ctx.err(col, format!("invalid unit `{u}`")))?;
        let d: u32 = d
            .parse()
            .map_err(|_| ctx.err(col, format!("invalid duration `{d}`")))?;
        if d == 0 {
            return Err(ctx.err(col, "duration must be >= 1"));
        }
        let lf: f64 = lf
            .parse()
            .map_err(|_| ctx.err(col, format!("invalid lf `{lf}`")))?;
        if !lf.is_finite() {
            return Err(ctx.err(col, "lf must be finite"));
        }
        let voiced_frames = if lf != 0.0 { d } else { 0 };
        segments.push(Segment {
            u,
            d,
            lf,
            voiced_frames,
        });
        col += token.len() + 1;
    }
    Ok(segments)
}

fn lines_of(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty())
}

pub fn parse_frame_text(text: &str, path: &str) -> Result<Vec<FrameStream>> {
    lines_of(text)
        .map(|(n, l)| parse_frame_line(l, path, n))
        .collect()
}

pub fn parse_segment_text(text: &str, path: &str) -> Result<Vec<SegmentSequence>> {
    lines_of(text)
        .map(|(n, l)| parse_segment_line(l, path, n))
        .collect()
}

pub fn frames_to_text(streams: &[FrameStream]) -> String {
    let mut out = String::new();
    for s in streams {
        out.push_str(&frame_line(s));
        out.push('\n');
    }
    out
}

pub fn segments_to_text(seqs: &[SegmentSequence]) -> String {
    let mut out = String::new();
    for s in seqs {
        out.push_str(&segment_line(s));
        out.push('\n');
    }
    out
}

pub fn read_frame_file(path: &Path) -> Result<Vec<FrameStream>> {
    let text = fs::read_to_string(path)?;
    parse_frame_text(&text, &path.display().to_string())
}

pub fn read_segment_file(path: &Path) -> Result<Vec<SegmentSequence>> {
    let text = fs::read_to_string(path)?;
    parse_segment_text(&text, &path.display().to_string())
}

pub fn write_frame_file(path: &Path, streams: &[FrameStream]) -> Result<()> {
    fs::write(path, frames_to_text(streams))?;
    Ok(())
}

pub fn write_segment_file(path: &Path, seqs: &[SegmentSequence]) -> Result<()> {
    fs::write(path, segments_to_text(seqs))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f0_formatting_trims() {
        assert_eq!(format_f0(100.0), "100");
        assert_eq!(format_f0(123.45), "123.45");
        assert_eq!(format_f0(0.0), "0");
        assert_eq!(format_f0(98.123456), "98.1235");
    }

    #[test]
    fn lf_formatting_has_no_negative_zero() {
        assert_eq!(format_lf(-1e-9), "0.000000");
        assert_eq!(format_lf(2.4), "2.400000");
        assert_eq!(format_lf(-0.25), "-0.250000");
    }

    #[test]
    fn parses_two_line_frame_file() {
        let text = "a\t50\t1:1:100 1:0:0 2:1:120.5\nb\t100\t3:0:0\n";
        let streams = parse_frame_text(text, "mem").unwrap();
        assert_eq!(streams.len(), 2);
        assert_eq!(streams[0].frames.len(), 3);
        assert_eq!(streams[1].frame_rate, 100);
        assert_eq!(frames_to_text(&streams), text);
    }

    #[test]
    fn tampered_voicing_flag_names_line_and_column() {
        let text = "a\t50\t1:1:100\na\t50\t1:1:100 2:1:0\n";
        match parse_frame_text(text, "f.txt") {
            Err(Error::Parse { line, column, .. }) => {
                assert_eq!(line, 2);
                assert_eq!(column, 14);
            }
            other => panic!("unexpected {other:?}"),
        }
        let text = "a\t50\t1:7:100\n";
        assert!(matches!(
            parse_frame_text(text, "f.txt"),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn segment_line_round_trip() {
        let line = "spk\t50\t13,3,2.000000;21,1,0.000000;27,2,2.400000";
        let seq = parse_segment_line(line, "mem", 1).unwrap();
        assert_eq!(seq.segments[1].voiced_frames, 0);
        assert_eq!(seq.segments[2].voiced_frames, 2);
        assert_eq!(segment_line(&seq), line);
    }

    #[test]
    fn segment_line_rejects_repeated_units() {
        let line = "spk\t50\t13,3,2.000000;13,1,0.000000";
        assert!(parse_segment_line(line, "mem", 4).is_err());
    }

    #[test]
    fn malformed_segment_token() {
        let line = "spk\t50\t13,3;21,1,0.0";
        match parse_segment_line(line, "mem", 9) {
            Err(Error::Parse { line, column, .. }) => {
                assert_eq!(line, 9);
                assert_eq!(column, 8);
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
