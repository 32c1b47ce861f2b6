//! Ricker-kernel convolutional encoder with learnable scales, the inverse
//! transform, and the fixed-grid scale selector used as a baseline.

use std::cell::RefCell;
use std::f64::consts::{LN_2, PI};
use std::path::Path;
use std::sync::Arc;

use f0dg_tensor::{CustomOp, Tape, Tensor, Var};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Constants of the inverse transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionConstants {
    pub d_t: f64,
    pub d_j: f64,
    pub c_d: f64,
    pub y_0: f64,
}

impl Default for ReconstructionConstants {
    fn default() -> Self {
        ReconstructionConstants { d_t: 1.2, d_j: 0.125, c_d: 3.541, y_0: 0.867 }
    }
}

impl ReconstructionConstants {
    pub fn prefactor(&self) -> f64 {
        self.d_j * self.d_t.sqrt() / (self.c_d * self.y_0)
    }
}

/// How coefficient rows are combined by [`reconstruct`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Reconstruction {
    /// Plain column sum of the rows times the prefactor.
    Verbatim,
    /// Each row weighted by its log2 scale cell (relative to `d_j`) and `1/sqrt(s·d_t)`,
    /// the classical inverse for arbitrary scale sets.
    #[default]
    Classic,
}

pub fn ricker_peak() -> f64 {
    2.0 / 3f64.sqrt() * PI.powf(-0.25)
}

pub fn ricker(t: f64, s: f64) -> f64 {
    let u = t / s;
    ricker_peak() * (1.0 - u * u) * (-0.5 * u * u).exp()
}

/// d/ds of [`ricker`].
pub fn ricker_dscale(t: f64, s: f64) -> f64 {
    let u2 = (t / s) * (t / s);
    ricker_peak() * (3.0 * u2 - u2 * u2) * (-0.5 * u2).exp() / s
}

/// Smallest odd length covering ±5 scales, at least 3 and at most `cap` (rounded down to odd).
pub fn support_for(scale: f64, cap: usize) -> usize {
    let mut k = (10.0 * scale).ceil().max(3.0) as usize;
    if k % 2 == 0 {
        k += 1;
    }
    let cap = if cap % 2 == 0 { cap.saturating_sub(1) } else { cap };
    k.min(cap.max(1))
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaveletKernel {
    pub scale: f64,
    pub taps: Vec<f64>,
}

impl WaveletKernel {
    pub fn support(&self) -> usize {
        self.taps.len()
    }

    /// Time offset of tap `k` relative to the centre.
    pub fn offset(&self, k: usize) -> f64 {
        k as f64 - ((self.taps.len() - 1) / 2) as f64
    }
}

pub fn ricker_kernel(scale: f64, support: usize) -> Result<WaveletKernel> {
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::Contract(format!("wavelet scale must be positive and finite, got {scale}")));
    }
    if support < 3 || support % 2 == 0 {
        return Err(Error::Contract(format!("kernel support must be odd and >= 3, got {support}")));
    }
    let c = ((support - 1) / 2) as f64;
    let taps = (0..support).map(|k| ricker(k as f64 - c, scale)).collect();
    Ok(WaveletKernel { scale, taps })
}

fn softplus_inv(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

/// Learnable, strictly increasing scales: `s_0 = s_min + softplus(δ_0)`,
/// `s_i = s_{i-1} + softplus(δ_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleBank {
    raw: Tensor,
    s_min: f64,
}

impl ScaleBank {
    pub fn from_scales(scales: &[f64], s_min: f64) -> Result<Self> {
        if scales.is_empty() {
            return Err(Error::Contract("scale bank needs at least one scale".into()));
        }
        let mut prev = s_min;
        let mut raw = Vec::with_capacity(scales.len());
        for &s in scales {
            if !(s > prev) || !s.is_finite() {
                return Err(Error::Contract(format!("scales must strictly increase above s_min={s_min}: {scales:?}")));
            }
            raw.push(softplus_inv(s - prev));
            prev = s;
        }
        let raw = Tensor::parameter(vec![raw.len()], raw)?;
        Ok(ScaleBank { raw, s_min })
    }

    /// `n` scales spaced evenly in log between `lo` and `hi` (samples).
    pub fn log_spaced(n: usize, lo: f64, hi: f64, s_min: f64) -> Result<Self> {
        if n == 0 || !(lo > 0.0) || !(hi > lo || n == 1) {
            return Err(Error::Contract(format!("bad log-spaced bank n={n} lo={lo} hi={hi}")));
        }
        let scales: Vec<f64> = if n == 1 {
            vec![lo]
        } else {
            (0..n).map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64)).collect()
        };
        Self::from_scales(&scales, s_min)
    }

    pub fn from_raw(raw: Tensor, s_min: f64) -> Result<Self> {
        if raw.shape().len() != 1 || !(s_min > 0.0) {
            return Err(Error::Contract("scale bank raw parameters must be a vector and s_min positive".into()));
        }
        let mut raw = raw;
        raw.set_requires_grad(true);
        Ok(ScaleBank { raw, s_min })
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    pub fn s_min(&self) -> f64 {
        self.s_min
    }

    pub fn raw(&self) -> &Tensor {
        &self.raw
    }

    pub fn raw_mut(&mut self) -> &mut Tensor {
        &mut self.raw
    }

    pub fn scales(&self) -> Vec<f64> {
        let mut acc = self.s_min;
        self.raw
            .values()
            .iter()
            .map(|&d| {
                acc += f64_softplus(d);
                acc
            })
            .collect()
    }

    /// Records the raw parameters on `tape` and returns `(raw, scales)`.
    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> (Var<'t>, Var<'t>) {
        let raw = if trainable { tape.leaf(&self.raw) } else { tape.frozen(&self.raw) };
        let scales = raw.softplus().cumsum().add_scalar(self.s_min);
        (raw, scales)
    }
}

fn f64_softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Coefficient rows `[n_scales × len]` for one signal plus the mean removed before encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientPlane {
    pub n_scales: usize,
    pub len: usize,
    pub coeffs: Vec<f64>,
    pub signal_mean: f64,
    pub scales: Vec<f64>,
}

impl CoefficientPlane {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.coeffs[i * self.len..(i + 1) * self.len]
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
        let mut header = vec!["scale".to_string()];
        header.extend((0..self.len).map(|k| format!("t{k}")));
        w.write_record(&header).map_err(|e| csv_io(path, e))?;
        for i in 0..self.n_scales {
            let mut rec = vec![format!("{}", self.scales[i])];
            rec.extend(self.row(i).iter().map(|v| format!("{v}")));
            w.write_record(&rec).map_err(|e| csv_io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

pub(crate) fn csv_io(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e.to_string()))
}

/// Subtracts the voiced mean from the first `valid_length` samples and zeroes the rest.
pub fn center_signal(signal: &[f64], mask: &[f64], valid_length: usize) -> Result<(Vec<f64>, f64)> {
    if mask.len() != signal.len() || valid_length > signal.len() {
        return Err(Error::Contract(format!(
            "signal ({}), mask ({}) and valid length ({valid_length}) disagree",
            signal.len(),
            mask.len()
        )));
    }
    let (mut sum, mut n) = (0.0, 0usize);
    for (x, m) in signal.iter().zip(mask) {
        if *m > 0.0 {
            sum += x;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Pipeline("cannot encode a signal without voiced frames".into()));
    }
    let mean = sum / n as f64;
    let centered = signal.iter().enumerate().map(|(k, x)| if k < valid_length { x - mean } else { 0.0 }).collect();
    Ok((centered, mean))
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn fft_in_place(buf: &mut [Complex<f64>], inverse: bool) {
    let plan = PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(buf.len())
        } else {
            p.plan_fft_forward(buf.len())
        }
    });
    plan.process(buf);
}

/// Kernel spectrum for scale `s` on an `l`-point circular grid.
fn kernel_spectrum(s: f64, half: usize, l: usize, f: fn(f64, f64) -> f64) -> Vec<Complex<f64>> {
    let mut buf = vec![Complex::new(0.0, 0.0); l];
    buf[0].re = f(0.0, s);
    for k in 1..=half {
        let v = f(k as f64, s);
        buf[k].re = v;
        buf[l - k].re = v;
    }
    fft_in_place(&mut buf, false);
    buf
}

/// Precomputed spectrum of a centred signal, shared by the forward and backward passes.
struct Spectrum {
    x: Vec<Complex<f64>>,
    len: usize,
    fft_len: usize,
}

impl Spectrum {
    fn new(centered: &[f64]) -> Self {
        let len = centered.len();
        let fft_len = (2 * len).next_power_of_two();
        let mut x: Vec<Complex<f64>> = centered.iter().map(|&v| Complex::new(v, 0.0)).collect();
        x.resize(fft_len, Complex::new(0.0, 0.0));
        fft_in_place(&mut x, false);
        Spectrum { x, len, fft_len }
    }

    fn half(&self, s: f64) -> usize {
        (support_for(s, 2 * self.len - 1) - 1) / 2
    }

    /// Row for scale `s`: cross-correlation with the kernel, divided by sqrt(s).
    fn row(&self, s: f64) -> Vec<f64> {
        let psi = kernel_spectrum(s, self.half(s), self.fft_len, ricker);
        let mut buf: Vec<Complex<f64>> = self.x.iter().zip(&psi).map(|(x, p)| x * p.conj()).collect();
        fft_in_place(&mut buf, true);
        let norm = 1.0 / (self.fft_len as f64 * s.sqrt());
        buf[..self.len].iter().map(|c| c.re * norm).collect()
    }

    /// d(Σ g·row)/ds given the row itself.
    fn row_grad(&self, s: f64, g: &[f64], row: &[f64]) -> f64 {
        let half = self.half(s);
        let l = self.fft_len;
        let mut buf = vec![Complex::new(0.0, 0.0); l];
        for (b, &v) in buf.iter_mut().zip(g) {
            b.re = v;
        }
        fft_in_place(&mut buf, false);
        for (b, x) in buf.iter_mut().zip(&self.x) {
            *b = b.conj() * x;
        }
        fft_in_place(&mut buf, true);
        let inv = 1.0 / l as f64;
        let mut corr = ricker_dscale(0.0, s) * buf[0].re;
        for k in 1..=half {
            corr += ricker_dscale(k as f64, s) * (buf[k].re + buf[l - k].re);
        }
        let gh: f64 = g.iter().zip(row).map(|(a, b)| a * b).sum();
        -gh / (2.0 * s) + corr * inv / s.sqrt()
    }
}

struct EncodeOp {
    spectrum: Arc<Spectrum>,
}

impl CustomOp for EncodeOp {
    fn name(&self) -> &'static str {
        "wavelet_encode"
    }

    fn backward(&self, inputs: &[&[f64]], output: &[f64], grad_out: &[f64], needs_grad: &[bool]) -> Vec<Option<Vec<f64>>> {
        if !needs_grad[0] {
            return vec![None];
        }
        let t = self.spectrum.len;
        let grads = inputs[0]
            .iter()
            .enumerate()
            .map(|(i, &s)| {
                let g = &grad_out[i * t..(i + 1) * t];
                if g.iter().all(|&v| v == 0.0) {
                    0.0
                } else {
                    self.spectrum.row_grad(s, g, &output[i * t..(i + 1) * t])
                }
            })
            .collect();
        vec![Some(grads)]
    }
}

/// Encodes a signal on the tape; the result is `[N × len]` and differentiable in `scales`.
pub fn encode_var<'t>(scales: Var<'t>, signal: &[f64], mask: &[f64], valid_length: usize) -> Result<(Var<'t>, f64)> {
    let (centered, mean) = center_signal(signal, mask, valid_length)?;
    let spectrum = Arc::new(Spectrum::new(&centered));
    let s = scales.value();
    if s.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::Contract(format!("encoder scales must be positive and finite: {s:?}")));
    }
    let mut value = Vec::with_capacity(s.len() * signal.len());
    for &si in &s {
        value.extend(spectrum.row(si));
    }
    let out = scales
        .tape()
        .custom(&[scales], vec![s.len(), signal.len()], value, Box::new(EncodeOp { spectrum }))?;
    Ok((out, mean))
}

/// Encodes a signal with fixed scales.
pub fn encode(signal: &[f64], mask: &[f64], valid_length: usize, scales: &[f64]) -> Result<CoefficientPlane> {
    let (centered, mean) = center_signal(signal, mask, valid_length)?;
    if scales.is_empty() || scales.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::Contract(format!("encoder scales must be positive and finite: {scales:?}")));
    }
    let spectrum = Spectrum::new(&centered);
    let mut coeffs = Vec::with_capacity(scales.len() * signal.len());
    for &s in scales {
        coeffs.extend(spectrum.row(s));
    }
    Ok(CoefficientPlane { n_scales: scales.len(), len: signal.len(), coeffs, signal_mean: mean, scales: scales.to_vec() })
}

/// Per-row weights of the classic inverse, as a `[N]` variable differentiable in the scales.
pub fn icwt_weights_var<'t>(scales: Var<'t>, consts: &ReconstructionConstants) -> Result<Var<'t>> {
    let n = scales.len();
    let log_s = scales.log()?;
    // 1 / sqrt(s · d_t)
    let amp = log_s.add_scalar(consts.d_t.ln()).scale(-0.5).exp()?;
    if n == 1 {
        return Ok(amp);
    }
    let l2 = log_s.scale(1.0 / LN_2);
    let diff = l2.narrow(0, 1, n - 1)?.sub(&l2.narrow(0, 0, n - 1)?)?;
    let left = diff.narrow(0, 0, 1)?.concat(&diff, 0)?;
    let right = diff.concat(&diff.narrow(0, n - 2, 1)?, 0)?;
    let cell = left.add(&right)?.scale(0.5 / consts.d_j);
    Ok(cell.mul(&amp)?)
}

/// Inverse transform of a `[N × L]` plane on the tape; returns `[L]`.
pub fn reconstruct_var<'t>(
    plane: Var<'t>,
    scales: Var<'t>,
    mean: f64,
    consts: &ReconstructionConstants,
    mode: Reconstruction,
) -> Result<Var<'t>> {
    let shape = plane.shape();
    if shape.len() != 2 || shape[0] != scales.len() {
        return Err(Error::Contract(format!("plane {shape:?} does not match {} scales", scales.len())));
    }
    let n = shape[0];
    let w = match mode {
        Reconstruction::Verbatim => plane.tape().constant(vec![1, n], vec![1.0; n])?,
        Reconstruction::Classic => icwt_weights_var(scales, consts)?.reshape(vec![1, n])?,
    };
    let sum = w.matmul(&plane)?.reshape(vec![shape[1]])?;
    Ok(sum.scale(consts.prefactor()).add_scalar(mean))
}

pub fn icwt_weights(scales: &[f64], consts: &ReconstructionConstants) -> Result<Vec<f64>> {
    let tape = Tape::new();
    let s = tape.constant(vec![scales.len()], scales.to_vec())?;
    Ok(icwt_weights_var(s, consts)?.value())
}

pub fn reconstruct(plane: &CoefficientPlane, consts: &ReconstructionConstants, mode: Reconstruction) -> Result<Vec<f64>> {
    if plane.n_scales == 0 || plane.scales.len() != plane.n_scales {
        return Err(Error::Contract("plane must carry at least one row and its scales".into()));
    }
    let tape = Tape::new();
    let p = tape.constant(vec![plane.n_scales, plane.len], plane.coeffs.clone())?;
    let s = tape.constant(vec![plane.n_scales], plane.scales.clone())?;
    Ok(reconstruct_var(p, s, plane.signal_mean, consts, mode)?.value())
}

/// Fixed dyadic grid `s0 · 2^(j·dj)` up to and including `s_max`.
pub fn dense_grid(s0: f64, dj: f64, s_max: f64) -> Vec<f64> {
    (0..).map(|j| s0 * 2f64.powf(j as f64 * dj)).take_while(|&s| s <= s_max * (1.0 + 1e-12)).collect()
}

/// Mean absolute coefficient distance per scale between paired planes, over voiced columns.
pub fn scale_distances(a: &[CoefficientPlane], b: &[CoefficientPlane], voiced: &[Vec<bool>]) -> Result<Vec<f64>> {
    if a.len() != b.len() || a.len() != voiced.len() {
        return Err(Error::Contract(format!(
            "paired corpora differ in size: {} vs {} planes, {} masks",
            a.len(),
            b.len(),
            voiced.len()
        )));
    }
    let Some(first) = a.first() else {
        return Err(Error::Contract("scale selection needs at least one pair".into()));
    };
    let n = first.n_scales;
    let mut dist = vec![0.0; n];
    for ((pa, pb), mask) in a.iter().zip(b).zip(voiced) {
        if pa.n_scales != n || pb.n_scales != n || pa.len != pb.len {
            return Err(Error::Contract("planes are not on the same grid".into()));
        }
        let cols: Vec<usize> = (0..pa.len.min(mask.len())).filter(|&k| mask[k]).collect();
        if cols.is_empty() {
            continue;
        }
        for (i, d) in dist.iter_mut().enumerate() {
            let (ra, rb) = (pa.row(i), pb.row(i));
            *d += cols.iter().map(|&k| (ra[k] - rb[k]).abs()).sum::<f64>() / cols.len() as f64;
        }
    }
    for d in &mut dist {
        *d /= a.len() as f64;
    }
    Ok(dist)
}

/// Indices of the `m` scales that best separate the two classes, ties broken by index.
pub fn adaptive_scale_select(
    a: &[CoefficientPlane],
    b: &[CoefficientPlane],
    voiced: &[Vec<bool>],
    m: usize,
) -> Result<Vec<usize>> {
    let dist = scale_distances(a, b, voiced)?;
    if m == 0 || m > dist.len() {
        return Err(Error::Contract(format!("cannot select {m} of {} scales", dist.len())));
    }
    let mut idx: Vec<usize> = (0..dist.len()).collect();
    idx.sort_by(|&i, &j| dist[j].total_cmp(&dist[i]).then(i.cmp(&j)));
    idx.truncate(m);
    Ok(idx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn support_is_odd_and_capped() {
        assert_eq!(support_for(5.0, 8000), 51);
        assert_eq!(support_for(5.05, 8000), 51);
        assert_eq!(support_for(5.11, 8000), 53);
        assert_eq!(support_for(2000.0, 7999), 7999);
        assert_eq!(support_for(0.1, 100), 3);
    }

    #[test]
    fn softplus_inverse_round_trips() {
        for y in [1e-3, 0.5, 3.0, 40.0, 900.0] {
            assert!((f64_softplus(softplus_inv(y)) - y).abs() < 1e-9 * y.max(1.0));
        }
    }

    #[test]
    fn bank_recovers_its_scales() {
        let bank = ScaleBank::log_spaced(32, 5.0, 2000.0, 1.0).unwrap();
        let s = bank.scales();
        assert!((s[0] - 5.0).abs() < 1e-9 && (s[31] - 2000.0).abs() < 1e-7);
        assert!(s.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn fft_row_matches_direct_correlation() {
        let x: Vec<f64> = (0..64).map(|k| ((k as f64) * 0.3).sin() + 0.1 * k as f64).collect();
        let mask = vec![1.0; 64];
        let plane = encode(&x, &mask, 50, &[3.3]).unwrap();
        let (c, _) = center_signal(&x, &mask, 50).unwrap();
        let half = (support_for(3.3, 127) - 1) / 2;
        for n in 0..64 {
            let mut acc = 0.0;
            for k in -(half as i64)..=half as i64 {
                let m = n as i64 + k;
                if (0..64).contains(&m) {
                    acc += c[m as usize] * ricker(k as f64, 3.3);
                }
            }
            assert!((plane.coeffs[n] - acc / 3.3f64.sqrt()).abs() < 1e-12);
        }
    }
}
