//! F0 tracks and their conversion into fixed-length log-F0 model inputs.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::wavelet::{csv_io, CoefficientPlane};

/// Padded signal length in frames (1 ms each).
pub const SIGNAL_LEN: usize = 4000;
/// Width of the coefficient windows fed to the networks.
pub const WINDOW: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Syllable {
    pub start_ms: f64,
    pub end_ms: f64,
}

/// One F0 contour sampled every millisecond.
#[derive(Debug, Clone, PartialEq)]
pub struct F0Track {
    pub f0_hz: Vec<f64>,
    pub voicing: Vec<bool>,
    pub syllables: Vec<Syllable>,
    pub attitude: String,
    pub utterance_id: String,
    pub speaker_id: String,
}

impl F0Track {
    pub fn len(&self) -> usize {
        self.f0_hz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f0_hz.is_empty()
    }

    pub fn voiced_count(&self) -> usize {
        self.voicing.iter().filter(|&&v| v).count()
    }

    pub fn validate(&self) -> Result<()> {
        let id = &self.utterance_id;
        if self.voicing.len() != self.f0_hz.len() {
            return Err(Error::Pipeline(format!("{id}: voicing and f0 lengths differ")));
        }
        if let Some(k) = (0..self.len()).find(|&k| self.voicing[k] && !(self.f0_hz[k] > 0.0 && self.f0_hz[k].is_finite())) {
            return Err(Error::Pipeline(format!("{id}: voiced frame {k} has f0 {}", self.f0_hz[k])));
        }
        let mut prev = 0.0;
        for (i, s) in self.syllables.iter().enumerate() {
            if !(s.start_ms >= prev && s.end_ms > s.start_ms && s.end_ms <= self.len() as f64) {
                return Err(Error::Pipeline(format!(
                    "{id}: syllable {i} [{}, {}) overlaps, is unsorted or exceeds {} ms",
                    s.start_ms,
                    s.end_ms,
                    self.len()
                )));
            }
            prev = s.end_ms;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParallelPair {
    pub source: F0Track,
    pub target: F0Track,
}

impl ParallelPair {
    pub fn new(source: F0Track, target: F0Track) -> Result<Self> {
        source.validate()?;
        target.validate()?;
        if source.utterance_id != target.utterance_id || source.speaker_id != target.speaker_id {
            return Err(Error::Contract(format!(
                "pair members differ in utterance/speaker: {}/{} vs {}/{}",
                source.utterance_id, source.speaker_id, target.utterance_id, target.speaker_id
            )));
        }
        if source.attitude == target.attitude {
            return Err(Error::Contract(format!("pair {} has one attitude on both sides", source.utterance_id)));
        }
        if source.syllables.len() != target.syllables.len() {
            return Err(Error::Alignment(format!(
                "pair {}: {} vs {} syllables",
                source.utterance_id,
                source.syllables.len(),
                target.syllables.len()
            )));
        }
        Ok(ParallelPair { source, target })
    }

    pub fn swapped(&self) -> ParallelPair {
        ParallelPair { source: self.target.clone(), target: self.source.clone() }
    }
}

/// Network input: padded log-F0 with a voicing mask.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput {
    pub signal: Vec<f64>,
    pub voicing_mask: Vec<f64>,
    pub mean_logf0: f64,
    pub valid_length: usize,
}

pub fn prepare(track: &F0Track) -> Result<ModelInput> {
    prepare_with_length(track, SIGNAL_LEN)
}

/// Log transform, gap interpolation and zero padding to `length` frames.
pub fn prepare_with_length(track: &F0Track, length: usize) -> Result<ModelInput> {
    track.validate()?;
    let n = track.len();
    if n > length {
        return Err(Error::Pipeline(format!("{}: {n} ms exceeds the {length} ms limit", track.utterance_id)));
    }
    let voiced: Vec<usize> = (0..n).filter(|&k| track.voicing[k]).collect();
    let (Some(&first), Some(&last)) = (voiced.first(), voiced.last()) else {
        return Err(Error::Pipeline(format!("{}: no voiced frames", track.utterance_id)));
    };
    let mut signal = vec![0.0; length];
    let mut mask = vec![0.0; length];
    for &k in &voiced {
        signal[k] = track.f0_hz[k].ln();
        mask[k] = 1.0;
    }
    for k in 0..first {
        signal[k] = signal[first];
    }
    for k in last + 1..n {
        signal[k] = signal[last];
    }
    for w in voiced.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b > a + 1 {
            let (va, vb) = (signal[a], signal[b]);
            for k in a + 1..b {
                signal[k] = va + (vb - va) * (k - a) as f64 / (b - a) as f64;
            }
        }
    }
    let mean_logf0 = voiced.iter().map(|&k| signal[k]).sum::<f64>() / voiced.len() as f64;
    Ok(ModelInput { signal, voicing_mask: mask, mean_logf0, valid_length: n })
}

fn knots(track: &F0Track) -> Vec<f64> {
    let mut k = vec![0.0];
    for s in &track.syllables {
        k.push(s.start_ms);
        k.push(s.end_ms);
    }
    k.push(track.len() as f64);
    k
}

/// Maps a target-timeline position onto the source timeline.
fn warp(t: f64, tk: &[f64], sk: &[f64]) -> f64 {
    for j in 0..tk.len() - 1 {
        if t <= tk[j + 1] && tk[j + 1] > tk[j] {
            if t < tk[j] {
                return sk[j];
            }
            return sk[j] + (t - tk[j]) * (sk[j + 1] - sk[j]) / (tk[j + 1] - tk[j]);
        }
    }
    *sk.last().expect("knots are never empty")
}

/// Warps the source onto the target timeline, syllable by syllable.
pub fn align_pair(pair: &ParallelPair) -> Result<ParallelPair> {
    let (src, tgt) = (&pair.source, &pair.target);
    if src.syllables.len() != tgt.syllables.len() {
        return Err(Error::Alignment(format!(
            "{}: {} vs {} syllables",
            src.utterance_id,
            src.syllables.len(),
            tgt.syllables.len()
        )));
    }
    if src.is_empty() || tgt.is_empty() {
        return Err(Error::Alignment(format!("{}: empty track", src.utterance_id)));
    }
    let (sk, tk) = (knots(src), knots(tgt));
    let last = src.len() - 1;
    let mut f0 = Vec::with_capacity(tgt.len());
    let mut voicing = Vec::with_capacity(tgt.len());
    for n in 0..tgt.len() {
        let u = warp(n as f64, &tk, &sk).clamp(0.0, last as f64);
        let near = u.round() as usize;
        let v = src.voicing[near];
        voicing.push(v);
        if !v {
            f0.push(0.0);
            continue;
        }
        let i0 = u.floor() as usize;
        let frac = u - i0 as f64;
        let value = if frac == 0.0 || i0 + 1 > last || !src.voicing[i0] || !src.voicing[i0 + 1] {
            src.f0_hz[near]
        } else {
            src.f0_hz[i0] + frac * (src.f0_hz[i0 + 1] - src.f0_hz[i0])
        };
        f0.push(value);
    }
    let source = F0Track { f0_hz: f0, voicing, syllables: tgt.syllables.clone(), ..src.clone() };
    Ok(ParallelPair { source, target: tgt.clone() })
}

/// One `[rows × WINDOW]` slice of a coefficient plane.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub rows: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

pub fn slice_windows(plane: &CoefficientPlane, valid_length: usize) -> Result<Vec<Block>> {
    slice_with_width(&plane.coeffs, plane.n_scales, plane.len, valid_length, WINDOW)
}

/// Splits the first `valid_length` columns of a row-major `[rows × cols]` matrix into zero-padded windows.
pub fn slice_with_width(data: &[f64], rows: usize, cols: usize, valid_length: usize, width: usize) -> Result<Vec<Block>> {
    if valid_length == 0 || valid_length > cols || width == 0 || data.len() != rows * cols {
        return Err(Error::Contract(format!("cannot slice {valid_length} of {cols} columns into width {width}")));
    }
    let mut blocks = Vec::new();
    for start in (0..valid_length).step_by(width) {
        let w = width.min(valid_length - start);
        let mut block = vec![0.0; rows * width];
        for r in 0..rows {
            block[r * width..r * width + w].copy_from_slice(&data[r * cols + start..r * cols + start + w]);
        }
        blocks.push(Block { rows, width: w, data: block });
    }
    Ok(blocks)
}

/// Concatenates block columns back into a `[rows × valid_length]` matrix.
pub fn unslice(blocks: &[Block], valid_length: usize) -> Result<Vec<f64>> {
    let Some(first) = blocks.first() else {
        return Err(Error::Contract("no blocks to unslice".into()));
    };
    let rows = first.rows;
    let width = first.data.len() / rows;
    let total: usize = blocks.iter().map(|b| b.width).sum();
    if total != valid_length {
        return Err(Error::Contract(format!("blocks hold {total} columns, expected {valid_length}")));
    }
    let mut out = vec![0.0; rows * valid_length];
    let mut start = 0;
    for b in blocks {
        for r in 0..rows {
            out[r * valid_length + start..r * valid_length + start + b.width]
                .copy_from_slice(&b.data[r * width..r * width + b.width]);
        }
        start += b.width;
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
struct FrameRow {
    time_ms: u64,
    f0_hz: f64,
    voiced: u8,
}

#[derive(Debug, Serialize, Deserialize)]
struct SyllableRow {
    syl_index: usize,
    start_ms: f64,
    end_ms: f64,
}

fn parse_err(path: &Path, e: &csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    Error::Parse { path: path.to_path_buf(), line, msg: e.to_string() }
}

fn open_csv(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

/// Reads a `time_ms,f0_hz,voiced` frame file.
pub fn read_f0_csv(path: &Path) -> Result<(Vec<f64>, Vec<bool>)> {
    let mut rdr = open_csv(path)?;
    let (mut f0, mut voicing) = (Vec::new(), Vec::new());
    for rec in rdr.deserialize::<FrameRow>() {
        let row = rec.map_err(|e| parse_err(path, &e))?;
        let line = f0.len() as u64 + 2;
        if row.time_ms != f0.len() as u64 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: format!("expected time_ms {}, found {}", f0.len(), row.time_ms),
            });
        }
        if row.voiced > 1 || !row.f0_hz.is_finite() || (row.voiced == 1 && row.f0_hz <= 0.0) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: format!("invalid frame f0_hz={} voiced={}", row.f0_hz, row.voiced),
            });
        }
        f0.push(row.f0_hz);
        voicing.push(row.voiced == 1);
    }
    Ok((f0, voicing))
}

pub fn write_f0_csv(path: &Path, track: &F0Track) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    for (k, (&f, &v)) in track.f0_hz.iter().zip(&track.voicing).enumerate() {
        let f0_hz = if v { f } else { 0.0 };
        w.serialize(FrameRow { time_ms: k as u64, f0_hz, voiced: v as u8 }).map_err(|e| csv_io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_syllables_csv(path: &Path) -> Result<Vec<Syllable>> {
    let mut rdr = open_csv(path)?;
    let mut out = Vec::new();
    for rec in rdr.deserialize::<SyllableRow>() {
        let row = rec.map_err(|e| parse_err(path, &e))?;
        if row.syl_index != out.len() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: out.len() as u64 + 2,
                msg: format!("expected syl_index {}, found {}", out.len(), row.syl_index),
            });
        }
        out.push(Syllable { start_ms: row.start_ms, end_ms: row.end_ms });
    }
    Ok(out)
}

pub fn write_syllables_csv(path: &Path, syllables: &[Syllable]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    for (i, s) in syllables.iter().enumerate() {
        w.serialize(SyllableRow { syl_index: i, start_ms: s.start_ms, end_ms: s.end_ms }).map_err(|e| csv_io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
