//! im2col-based 1-D/2-D convolution kernels shared by forward and backward passes.

use crate::linalg::gemm;
use crate::tape::ConvGeom;

/// Zero-padding scheme for convolutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Output length `ceil(n / stride)`. Odd padding totals put the extra zero on the left.
    Same,
    /// No padding; output length `(n - k) / stride + 1`.
    Valid,
}

/// Output length and leading pad along one axis.
pub(crate) fn axis_geometry(n_in: usize, k: usize, stride: usize, padding: Padding) -> Option<(usize, usize)> {
    match padding {
        Padding::Same => {
            let n_out = n_in.div_ceil(stride);
            let total = ((n_out - 1) * stride + k).saturating_sub(n_in);
            Some((n_out, total.div_ceil(2)))
        }
        Padding::Valid => {
            if k > n_in {
                None
            } else {
                Some(((n_in - k) / stride + 1, 0))
            }
        }
    }
}

impl ConvGeom {
    fn rows(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.h_out * self.w_out
    }

    fn in_len(&self) -> usize {
        self.c_in * self.h_in * self.w_in
    }

    fn out_len(&self) -> usize {
        self.c_out * self.positions()
    }
}

fn im2col(x: &[f64], g: &ConvGeom, cols: &mut [f64]) {
    let p = g.positions();
    for ci in 0..g.c_in {
        let plane = &x[ci * g.h_in * g.w_in..(ci + 1) * g.h_in * g.w_in];
        for a in 0..g.kh {
            for b in 0..g.kw {
                let row = (ci * g.kh + a) * g.kw + b;
                let dst = &mut cols[row * p..(row + 1) * p];
                for ho in 0..g.h_out {
                    let hi = (ho * g.sh + a) as isize - g.pad_top as isize;
                    let out_row = &mut dst[ho * g.w_out..(ho + 1) * g.w_out];
                    if hi < 0 || hi as usize >= g.h_in {
                        out_row.iter_mut().for_each(|v| *v = 0.0);
                        continue;
                    }
                    let src = &plane[hi as usize * g.w_in..(hi as usize + 1) * g.w_in];
                    for (wo, v) in out_row.iter_mut().enumerate() {
                        let wi = (wo * g.sw + b) as isize - g.pad_left as isize;
                        *v = if wi < 0 || wi as usize >= g.w_in { 0.0 } else { src[wi as usize] };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let p = g.positions();
    for ci in 0..g.c_in {
        let plane = &mut dx[ci * g.h_in * g.w_in..(ci + 1) * g.h_in * g.w_in];
        for a in 0..g.kh {
            for b in 0..g.kw {
                let row = (ci * g.kh + a) * g.kw + b;
                let src = &cols[row * p..(row + 1) * p];
                for ho in 0..g.h_out {
                    let hi = (ho * g.sh + a) as isize - g.pad_top as isize;
                    if hi < 0 || hi as usize >= g.h_in {
                        continue;
                    }
                    let dst = &mut plane[hi as usize * g.w_in..(hi as usize + 1) * g.w_in];
                    for wo in 0..g.w_out {
                        let wi = (wo * g.sw + b) as isize - g.pad_left as isize;
                        if wi >= 0 && (wi as usize) < g.w_in {
                            dst[wi as usize] += src[ho * g.w_out + wo];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn forward(x: &[f64], w: &[f64], bias: Option<&[f64]>, g: &ConvGeom) -> Vec<f64> {
    let (r, p) = (g.rows(), g.positions());
    let mut out = vec![0.0; g.batch * g.out_len()];
    let mut cols = vec![0.0; r * p];
    for bi in 0..g.batch {
        im2col(&x[bi * g.in_len()..(bi + 1) * g.in_len()], g, &mut cols);
        let y = &mut out[bi * g.out_len()..(bi + 1) * g.out_len()];
        if let Some(b) = bias {
            for (co, row) in y.chunks_mut(p).enumerate() {
                row.iter_mut().for_each(|v| *v = b[co]);
            }
        }
        gemm(g.c_out, r, p, w, false, &cols, false, y, if bias.is_some() { 1.0 } else { 0.0 });
    }
    out
}

pub(crate) struct ConvGrads {
    pub input: Option<Vec<f64>>,
    pub weight: Option<Vec<f64>>,
    pub bias: Option<Vec<f64>>,
}

pub(crate) fn backward(
    x: &[f64],
    w: &[f64],
    gout: &[f64],
    g: &ConvGeom,
    need: (bool, bool, bool),
) -> ConvGrads {
    let (r, p) = (g.rows(), g.positions());
    let mut dx = need.0.then(|| vec![0.0; g.batch * g.in_len()]);
    let mut dw = need.1.then(|| vec![0.0; g.c_out * r]);
    let mut db = need.2.then(|| vec![0.0; g.c_out]);
    let mut cols = vec![0.0; r * p];
    for bi in 0..g.batch {
        let go = &gout[bi * g.out_len()..(bi + 1) * g.out_len()];
        if let Some(db) = db.as_mut() {
            for (co, row) in go.chunks(p).enumerate() {
                db[co] += row.iter().sum::<f64>();
            }
        }
        if let Some(dw) = dw.as_mut() {
            im2col(&x[bi * g.in_len()..(bi + 1) * g.in_len()], g, &mut cols);
            gemm(g.c_out, p, r, go, false, &cols, true, dw, 1.0);
        }
        if let Some(dx) = dx.as_mut() {
            gemm(r, g.c_out, p, w, true, go, false, &mut cols, 0.0);
            col2im(&cols, g, &mut dx[bi * g.in_len()..(bi + 1) * g.in_len()]);
        }
    }
    ConvGrads { input: dx, weight: dw, bias: db }
}
