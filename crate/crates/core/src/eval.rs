//! RMSE metrics, the CWT-AS baseline, and report/plot emission.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::corpus::{corpus_seed, Corpus, Split, UnitDurations};
use crate::error::{Error, Result};
use crate::model::ModelBundle;
use crate::pipeline::{align_pair, prepare_with_length, F0Track, ParallelPair};
use crate::training::{convert, reconstruct_track, Direction, PreparedPair};
use crate::wavelet::{adaptive_scale_select, dense_grid, encode, reconstruct, CoefficientPlane, Reconstruction, ReconstructionConstants};

/// Root-mean-square difference in Hz over frames voiced in both tracks.
pub fn rmse_hz(pred: &F0Track, reference: &F0Track) -> Result<f64> {
    if pred.len() != reference.len() {
        return Err(Error::Eval(format!("tracks differ in length: {} vs {}", pred.len(), reference.len())));
    }
    let (mut acc, mut n) = (0.0, 0usize);
    for k in 0..pred.len() {
        if pred.voicing[k] && reference.voicing[k] {
            let d = pred.f0_hz[k] - reference.f0_hz[k];
            acc += d * d;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Eval(format!(
            "no frames voiced in both {}/{} and {}/{}",
            pred.utterance_id, pred.attitude, reference.utterance_id, reference.attitude
        )));
    }
    Ok((acc / n as f64).sqrt())
}

/// Anything that can encode and invert a track.
pub trait Reconstructor {
    fn reconstruct(&self, track: &F0Track) -> Result<F0Track>;
}

/// Anything that can map a track from one attitude to the other.
pub trait Converter {
    fn convert(&self, track: &F0Track, direction: Direction, seed: u64) -> Result<F0Track>;
}

impl Reconstructor for ModelBundle {
    fn reconstruct(&self, track: &F0Track) -> Result<F0Track> {
        reconstruct_track(track, self)
    }
}

/// Conversion with generator dropout switched off.
impl Converter for ModelBundle {
    fn convert(&self, track: &F0Track, direction: Direction, seed: u64) -> Result<F0Track> {
        convert(track, self, direction, seed, false)
    }
}

/// Returns the source unchanged; its transformation RMSE is the identity baseline.
pub struct IdentityConverter;

impl Converter for IdentityConverter {
    fn convert(&self, track: &F0Track, _direction: Direction, _seed: u64) -> Result<F0Track> {
        Ok(track.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UtteranceMetrics {
    pub utterance_id: String,
    pub reconstruction_a: f64,
    pub reconstruction_b: f64,
    pub transformation_a2b: Option<f64>,
    pub transformation_b2a: Option<f64>,
    pub identity_a2b: f64,
    pub identity_b2a: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub reconstruction: f64,
    pub transformation_a2b: Option<f64>,
    pub transformation_b2a: Option<f64>,
    pub transformation: Option<f64>,
    pub identity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub attitudes: [String; 2],
    pub utterances: Vec<UtteranceMetrics>,
    pub summary: Summary,
}

fn mean(v: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = v.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 { f64::NAN } else { s / n as f64 }
}

fn mean_opt(v: impl IntoIterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<Option<f64>> = v.into_iter().collect();
    if v.is_empty() || v.iter().any(Option::is_none) {
        return None;
    }
    Some(mean(v.into_iter().flatten()))
}

/// Converts the source of `pair` after warping it onto the target timeline and scores it.
fn transformation_rmse(conv: &dyn Converter, pair: &ParallelPair, direction: Direction, seed: u64) -> Result<(f64, f64)> {
    let aligned = align_pair(pair)?;
    let out = conv.convert(&aligned.source, direction, seed)?;
    let out = F0Track { voicing: aligned.source.voicing.clone(), ..out };
    Ok((rmse_hz(&out, &aligned.target)?, rmse_hz(&aligned.source, &aligned.target)?))
}

/// Scores reconstruction of every track and conversion in the requested directions.
pub fn evaluate_with(
    rec: &dyn Reconstructor,
    conv: &dyn Converter,
    corpus: &Corpus,
    split: Split,
    directions: &[Direction],
    seed: u64,
) -> Result<EvalReport> {
    let mut rows = Vec::new();
    for (i, cp) in corpus.pairs.iter().enumerate() {
        if cp.split != split {
            continue;
        }
        let pair = &cp.pair;
        let s = corpus_seed(seed, i);
        let rec_a = rmse_hz(&rec.reconstruct(&pair.source)?, &pair.source)?;
        let rec_b = rmse_hz(&rec.reconstruct(&pair.target)?, &pair.target)?;
        let ab = transformation_rmse(conv, pair, Direction::AtoB, s)?;
        let ba = transformation_rmse(conv, &pair.swapped(), Direction::BtoA, s.wrapping_add(1))?;
        rows.push(UtteranceMetrics {
            utterance_id: pair.source.utterance_id.clone(),
            reconstruction_a: rec_a,
            reconstruction_b: rec_b,
            transformation_a2b: directions.contains(&Direction::AtoB).then_some(ab.0),
            transformation_b2a: directions.contains(&Direction::BtoA).then_some(ba.0),
            identity_a2b: ab.1,
            identity_b2a: ba.1,
        });
    }
    if rows.is_empty() {
        return Err(Error::Eval(format!("corpus has no {split:?} pairs to evaluate")));
    }
    let t_ab = mean_opt(rows.iter().map(|r| r.transformation_a2b));
    let t_ba = mean_opt(rows.iter().map(|r| r.transformation_b2a));
    let transformation = match (t_ab, t_ba) {
        (Some(x), Some(y)) => Some(0.5 * (x + y)),
        (x, y) => x.or(y),
    };
    let identity = mean(directions.iter().flat_map(|d| {
        rows.iter().map(move |r| match d {
            Direction::AtoB => r.identity_a2b,
            Direction::BtoA => r.identity_b2a,
        })
    }));
    let summary = Summary {
        reconstruction: mean(rows.iter().flat_map(|r| [r.reconstruction_a, r.reconstruction_b])),
        transformation_a2b: t_ab,
        transformation_b2a: t_ba,
        transformation,
        identity,
    };
    Ok(EvalReport { attitudes: corpus.attitudes.clone(), utterances: rows, summary })
}

/// Held-out evaluation of a bundle in both directions.
pub fn evaluate(bundle: &ModelBundle, corpus: &Corpus, seed: u64) -> Result<EvalReport> {
    if !bundle.trained() {
        log::warn!("evaluating a bundle that has not been trained");
    }
    if bundle.attitudes != corpus.attitudes {
        return Err(Error::Contract(format!("bundle attitudes {:?} do not match corpus {:?}", bundle.attitudes, corpus.attitudes)));
    }
    evaluate_with(bundle, bundle, corpus, Split::Valid, &[Direction::AtoB, Direction::BtoA], seed)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

impl EvalReport {
    pub fn write_csv(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("report.csv");
        let mut w = csv::Writer::from_path(&path).map_err(|e| crate::wavelet::csv_io(&path, e))?;
        let rec = |w: &mut csv::Writer<fs::File>, r: &[String]| w.write_record(r).map_err(|e| crate::wavelet::csv_io(&path, e));
        rec(
            &mut w,
            &["utterance_id", "reconstruction_a_hz", "reconstruction_b_hz", "transformation_a2b_hz", "transformation_b2a_hz", "identity_a2b_hz", "identity_b2a_hz"]
                .map(String::from),
        )?;
        for u in &self.utterances {
            rec(
                &mut w,
                &[
                    u.utterance_id.clone(),
                    format!("{}", u.reconstruction_a),
                    format!("{}", u.reconstruction_b),
                    opt(u.transformation_a2b),
                    opt(u.transformation_b2a),
                    format!("{}", u.identity_a2b),
                    format!("{}", u.identity_b2a),
                ],
            )?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;

        let path = dir.join("summary.csv");
        let s = &self.summary;
        let body = format!(
            "method,reconstruction_hz,transformation_hz,transformation_a2b_hz,transformation_b2a_hz\n\
             model,{},{},{},{}\nidentity,,{},,\n",
            s.reconstruction,
            opt(s.transformation),
            opt(s.transformation_a2b),
            opt(s.transformation_b2a),
            s.identity
        );
        fs::write(&path, body).map_err(|e| Error::io(&path, e))
    }

    pub fn table(&self) -> String {
        let s = &self.summary;
        let f = |v: Option<f64>| v.map(|x| format!("{x:>10.3}")).unwrap_or_else(|| format!("{:>10}", "-"));
        let mut out = String::new();
        let _ = writeln!(out, "{} -> {} ({} held-out utterances)", self.attitudes[0], self.attitudes[1], self.utterances.len());
        let _ = writeln!(out, "{:<10} {:>16} {:>16}", "RMSE (Hz)", "Reconstruction", "Transformation");
        let _ = writeln!(out, "{:<10} {:>16.3} {:>16}", "model", s.reconstruction, f(s.transformation).trim());
        let _ = writeln!(out, "{:<10} {:>16} {:>16.3}", "identity", "-", s.identity);
        out
    }
}

/// Fixed-grid baseline: keep the `m` grid scales that differ most between attitudes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CwtAs {
    pub grid: Vec<f64>,
    pub distances_rank: Vec<usize>,
    /// Selected scales in ascending order.
    pub scales: Vec<f64>,
    pub constants: ReconstructionConstants,
}

pub const CWT_AS_S0: f64 = 2.0;
pub const CWT_AS_DJ: f64 = 0.125;
pub const CWT_AS_SMAX: f64 = 2048.0;

impl CwtAs {
    pub fn fit(corpus: &Corpus, m: usize, signal_len: usize, constants: ReconstructionConstants) -> Result<Self> {
        let grid = dense_grid(CWT_AS_S0, CWT_AS_DJ, CWT_AS_SMAX);
        let (mut pa, mut pb, mut voiced) = (Vec::new(), Vec::new(), Vec::new());
        for pair in corpus.split(Split::Train) {
            let p = PreparedPair::new(pair, signal_len)?;
            let v = p.valid_length();
            pa.push(encode(&p.a.signal, &p.a.voicing_mask, v, &grid)?);
            pb.push(encode(&p.b.signal, &p.b.voicing_mask, v, &grid)?);
            voiced.push(p.joint_mask[..v].iter().map(|&x| x > 0.5).collect());
        }
        let rank = adaptive_scale_select(&pa, &pb, &voiced, m)?;
        let mut idx = rank.clone();
        idx.sort_unstable();
        let scales = idx.iter().map(|&i| grid[i]).collect();
        Ok(CwtAs { grid, distances_rank: rank, scales, constants })
    }

    pub fn spread(&self) -> f64 {
        scale_spread(&self.scales)
    }
}

impl Reconstructor for CwtAs {
    fn reconstruct(&self, track: &F0Track) -> Result<F0Track> {
        let input = prepare_with_length(track, track.len())?;
        let plane: CoefficientPlane = encode(&input.signal, &input.voicing_mask, input.valid_length, &self.scales)?;
        let x = reconstruct(&plane, &self.constants, Reconstruction::Classic)?;
        let f0_hz = track.voicing.iter().zip(&x).map(|(&v, &y)| if v { y.exp() } else { 0.0 }).collect();
        Ok(F0Track { f0_hz, ..track.clone() })
    }
}

/// Mean reconstruction RMSE over both tracks of every pair in a split.
pub fn reconstruction_rmse(rec: &dyn Reconstructor, corpus: &Corpus, split: Split) -> Result<f64> {
    let mut all = Vec::new();
    for pair in corpus.split(split) {
        for t in [&pair.source, &pair.target] {
            all.push(rmse_hz(&rec.reconstruct(t)?, t)?);
        }
    }
    if all.is_empty() {
        return Err(Error::Eval(format!("corpus has no {split:?} pairs")));
    }
    Ok(mean(all))
}

pub fn scale_spread(scales: &[f64]) -> f64 {
    let lo = scales.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scales.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    hi - lo
}

pub fn write_scales_csv(scales: &[f64], path: &Path) -> Result<()> {
    let mut body = String::from("index,scale_ms\n");
    for (i, s) in scales.iter().enumerate() {
        let _ = writeln!(body, "{i},{s}");
    }
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

fn markers(units: &UnitDurations) -> Vec<(&'static str, f64)> {
    [("P", units.phone), ("SY", units.syllable), ("W", units.word), ("SE", units.sentence)]
        .into_iter()
        .filter_map(|(k, v)| v.filter(|x| x.is_finite() && *x > 0.0).map(|x| (k, x)))
        .collect()
}

/// Strip plot of scales on a log time axis with unit-duration markers.
pub fn scales_svg(scales: &[f64], units: &UnitDurations, title: &str) -> String {
    let (w, h, left, right, axis_y) = (720.0, 200.0, 40.0, 20.0, 150.0);
    let marks = markers(units);
    let all = scales.iter().copied().chain(marks.iter().map(|m| m.1)).filter(|v| *v > 0.0);
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (lo, hi) = if lo.is_finite() { (10f64.powf(lo.log10().floor()), 10f64.powf(hi.log10().ceil())) } else { (1.0, 10.0) };
    let (lo, hi) = if hi <= lo { (lo, lo * 10.0) } else { (lo, hi) };
    let x = |v: f64| left + (v.log10() - lo.log10()) / (hi.log10() - lo.log10()) * (w - left - right);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{left}" y="20" font-family="sans-serif" font-size="13">{}</text>"#, escape(title));
    let _ = writeln!(s, r#"<line x1="{left}" y1="{axis_y}" x2="{}" y2="{axis_y}" stroke="black"/>"#, w - right);
    let mut decade = lo;
    while decade <= hi * (1.0 + 1e-9) {
        let px = x(decade);
        let _ = writeln!(s, r#"<line x1="{px:.2}" y1="{axis_y}" x2="{px:.2}" y2="{}" stroke="black"/>"#, axis_y + 5.0);
        let _ = writeln!(
            s,
            r#"<text x="{px:.2}" y="{}" font-family="sans-serif" font-size="11" text-anchor="middle">{decade} ms</text>"#,
            axis_y + 18.0
        );
        decade *= 10.0;
    }
    for (name, v) in &marks {
        let px = x(*v);
        let _ = writeln!(s, r#"<line class="marker" x1="{px:.2}" y1="40" x2="{px:.2}" y2="{axis_y}" stroke="gray" stroke-dasharray="4 3"/>"#);
        let _ = writeln!(s, r#"<text x="{px:.2}" y="36" font-family="sans-serif" font-size="11" text-anchor="middle">{name}</text>"#);
    }
    for v in scales {
        let px = x(*v);
        let _ = writeln!(s, r#"<line class="scale" x1="{px:.2}" y1="70" x2="{px:.2}" y2="{}" stroke="steelblue" stroke-width="2"/>"#, axis_y - 2.0);
    }
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Writes `scales.csv` and `scales.svg` into `dir`.
pub fn scale_histogram(scales: &[f64], units: &UnitDurations, dir: &Path, title: &str) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_scales_csv(scales, &dir.join("scales.csv"))?;
    let path = dir.join("scales.svg");
    fs::write(&path, scales_svg(scales, units, title)).map_err(|e| Error::io(&path, e))
}
