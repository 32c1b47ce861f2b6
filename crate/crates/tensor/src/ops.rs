//! Forward definitions of every recorded operation.

use rand::Rng;

use crate::conv::{self, axis_geometry, Padding};
use crate::error::{dim_err, Result, TensorError};
use crate::linalg::gemm;
use crate::tape::{ConvGeom, Op, Var};

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn check_finite(v: &[f64], what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(TensorError::NonFinite(what.into()))
    }
}

impl<'t> Var<'t> {
    fn same_tape(&self, other: &Var<'t>) {
        assert!(std::ptr::eq(self.tape, other.tape), "vars recorded on different tapes");
    }

    fn unary(&self, op: Op, f: impl Fn(f64) -> f64) -> Var<'t> {
        let (shape, value, rg) = {
            let n = self.node();
            (n.shape.clone(), n.value.iter().map(|&x| f(x)).collect(), n.requires_grad)
        };
        self.tape.push(shape, value, rg, op)
    }

    fn binary(&self, other: &Var<'t>, name: &str, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var<'t>> {
        self.same_tape(other);
        let (shape, value, rg) = {
            let a = self.node();
            let b = other.node();
            if a.shape != b.shape {
                return dim_err(format!("{name}: shapes {:?} and {:?} differ", a.shape, b.shape));
            }
            let v = a.value.iter().zip(&b.value).map(|(&x, &y)| f(x, y)).collect();
            (a.shape.clone(), v, a.requires_grad || b.requires_grad)
        };
        Ok(self.tape.push(shape, value, rg, op))
    }

    pub fn add(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "add", Op::Add(self.id, other.id), |a, b| a + b)
    }

    pub fn sub(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "sub", Op::Sub(self.id, other.id), |a, b| a - b)
    }

    /// Element-wise product.
    pub fn mul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "mul", Op::Mul(self.id, other.id), |a, b| a * b)
    }

    pub fn scale(&self, c: f64) -> Var<'t> {
        self.unary(Op::Scale(self.id, c), |x| c * x)
    }

    pub fn add_scalar(&self, c: f64) -> Var<'t> {
        self.unary(Op::Identity(self.id), |x| x + c)
    }

    /// Adds a constant array of the same length.
    pub fn add_const(&self, c: &[f64]) -> Result<Var<'t>> {
        let (shape, value, rg) = {
            let n = self.node();
            if c.len() != n.value.len() {
                return dim_err(format!("add_const: {} values for shape {:?}", c.len(), n.shape));
            }
            (n.shape.clone(), n.value.iter().zip(c).map(|(a, b)| a + b).collect(), n.requires_grad)
        };
        Ok(self.tape.push(shape, value, rg, Op::Identity(self.id)))
    }

    /// Multiplies element-wise by a constant array of the same length.
    pub fn mul_const(&self, c: Vec<f64>) -> Result<Var<'t>> {
        let (shape, value, rg) = {
            let n = self.node();
            if c.len() != n.value.len() {
                return dim_err(format!("mul_const: {} values for shape {:?}", c.len(), n.shape));
            }
            (n.shape.clone(), n.value.iter().zip(&c).map(|(a, b)| a * b).collect(), n.requires_grad)
        };
        Ok(self.tape.push(shape, value, rg, Op::MulConst(self.id, c)))
    }

    pub fn relu(&self) -> Var<'t> {
        self.unary(Op::Relu(self.id), |x| x.max(0.0))
    }

    pub fn leaky_relu(&self, slope: f64) -> Var<'t> {
        self.unary(Op::LeakyRelu(self.id, slope), |x| if x > 0.0 { x } else { slope * x })
    }

    pub fn sigmoid(&self) -> Var<'t> {
        self.unary(Op::Sigmoid(self.id), sigmoid)
    }

    /// `ln(sigmoid(x))`, evaluated without overflow.
    pub fn log_sigmoid(&self) -> Var<'t> {
        self.unary(Op::LogSigmoid(self.id), |x| -softplus(-x))
    }

    pub fn softplus(&self) -> Var<'t> {
        self.unary(Op::Softplus(self.id), softplus)
    }

    pub fn exp(&self) -> Result<Var<'t>> {
        let out = self.unary(Op::Exp(self.id), f64::exp);
        out.with_value(|v| check_finite(v, "exp"))?;
        Ok(out)
    }

    pub fn log(&self) -> Result<Var<'t>> {
        if let Some(bad) = self.with_value(|v| v.iter().copied().find(|&x| x <= 0.0 || x.is_nan())) {
            return Err(TensorError::Domain(format!("log of non-positive value {bad}")));
        }
        Ok(self.unary(Op::Log(self.id), f64::ln))
    }

    pub fn sqrt(&self) -> Result<Var<'t>> {
        if let Some(bad) = self.with_value(|v| v.iter().copied().find(|&x| x <= 0.0 || x.is_nan())) {
            return Err(TensorError::Domain(format!("sqrt of non-positive value {bad}")));
        }
        Ok(self.unary(Op::Sqrt(self.id), f64::sqrt))
    }

    /// Normalized exponential over the last axis.
    pub fn softmax(&self) -> Var<'t> {
        let (shape, value, rg, dim) = {
            let n = self.node();
            let dim = *n.shape.last().expect("shapes are non-empty");
            let mut out = n.value.clone();
            for row in out.chunks_mut(dim) {
                let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for v in row.iter_mut() {
                    *v = (*v - mx).exp();
                    z += *v;
                }
                row.iter_mut().for_each(|v| *v /= z);
            }
            (n.shape.clone(), out, n.requires_grad, dim)
        };
        self.tape.push(shape, value, rg, Op::Softmax { input: self.id, dim })
    }

    pub fn sum(&self) -> Var<'t> {
        let (s, rg) = {
            let n = self.node();
            (n.value.iter().sum(), n.requires_grad)
        };
        self.tape.push(vec![1], vec![s], rg, Op::Sum(self.id))
    }

    pub fn mean(&self) -> Var<'t> {
        let (s, rg) = {
            let n = self.node();
            (n.value.iter().sum::<f64>() / n.value.len() as f64, n.requires_grad)
        };
        self.tape.push(vec![1], vec![s], rg, Op::Mean(self.id))
    }

    /// Running sum over the flattened values.
    pub fn cumsum(&self) -> Var<'t> {
        let (shape, value, rg) = {
            let n = self.node();
            let mut acc = 0.0;
            let v = n
                .value
                .iter()
                .map(|x| {
                    acc += x;
                    acc
                })
                .collect();
            (n.shape.clone(), v, n.requires_grad)
        };
        self.tape.push(shape, value, rg, Op::Cumsum(self.id))
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Var<'t>> {
        let (value, rg) = {
            let n = self.node();
            if shape.iter().product::<usize>() != n.value.len() || shape.contains(&0) {
                return dim_err(format!("cannot reshape {:?} to {shape:?}", n.shape));
            }
            (n.value.clone(), n.requires_grad)
        };
        Ok(self.tape.push(shape, value, rg, Op::Identity(self.id)))
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(&self, other: &Var<'t>, axis: usize) -> Result<Var<'t>> {
        self.same_tape(other);
        let (shape, value, rg, outer, ca, cb) = {
            let a = self.node();
            let b = other.node();
            if a.shape.len() != b.shape.len() || axis >= a.shape.len() {
                return dim_err(format!("concat axis {axis}: ranks {:?} / {:?}", a.shape, b.shape));
            }
            for d in 0..a.shape.len() {
                if d != axis && a.shape[d] != b.shape[d] {
                    return dim_err(format!("concat axis {axis}: shapes {:?} / {:?}", a.shape, b.shape));
                }
            }
            let outer: usize = a.shape[..axis].iter().product();
            let inner: usize = a.shape[axis + 1..].iter().product();
            let (ca, cb) = (a.shape[axis] * inner, b.shape[axis] * inner);
            let mut v = Vec::with_capacity(a.value.len() + b.value.len());
            for o in 0..outer {
                v.extend_from_slice(&a.value[o * ca..(o + 1) * ca]);
                v.extend_from_slice(&b.value[o * cb..(o + 1) * cb]);
            }
            let mut shape = a.shape.clone();
            shape[axis] += b.shape[axis];
            (shape, v, a.requires_grad || b.requires_grad, outer, ca, cb)
        };
        Ok(self.tape.push(shape, value, rg, Op::Concat { a: self.id, b: other.id, outer, ca, cb }))
    }

    /// The sub-range `[start, start + len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Var<'t>> {
        let (shape, value, rg, outer, dim, inner) = {
            let n = self.node();
            if axis >= n.shape.len() || len == 0 || start + len > n.shape[axis] {
                return dim_err(format!("narrow axis {axis} [{start}, +{len}) of {:?}", n.shape));
            }
            let outer: usize = n.shape[..axis].iter().product();
            let inner: usize = n.shape[axis + 1..].iter().product();
            let dim = n.shape[axis];
            let mut v = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                let base = o * dim * inner;
                v.extend_from_slice(&n.value[base + start * inner..base + (start + len) * inner]);
            }
            let mut shape = n.shape.clone();
            shape[axis] = len;
            (shape, v, n.requires_grad, outer, dim, inner)
        };
        Ok(self.tape.push(shape, value, rg, Op::Narrow { input: self.id, outer, dim, start, len, inner }))
    }

    /// 1-D cross-correlation. `self` is `[C_in, T]` or `[B, C_in, T]`, `weight` is `[C_out, C_in, K]`.
    pub fn conv1d(&self, weight: &Var<'t>, bias: Option<&Var<'t>>, stride: usize, padding: Padding) -> Result<Var<'t>> {
        let shape = self.shape();
        let batched = match shape.len() {
            2 => false,
            3 => true,
            _ => return dim_err(format!("conv1d input must be [C,T] or [B,C,T], got {shape:?}")),
        };
        let (b, c, t) = if batched { (shape[0], shape[1], shape[2]) } else { (1, shape[0], shape[1]) };
        let ws = weight.shape();
        if ws.len() != 3 {
            return dim_err(format!("conv1d kernel must be [C_out,C_in,K], got {ws:?}"));
        }
        let out = self.conv_impl(weight, bias, [b, c, 1, t], [ws[0], ws[1], 1, ws[2]], (1, stride), padding)?;
        let s = out.shape();
        if batched {
            out.reshape(vec![s[0], s[1], s[3]])
        } else {
            out.reshape(vec![s[1], s[3]])
        }
    }

    /// 2-D cross-correlation. `self` is `[C_in, H, W]` or `[B, C_in, H, W]`, `weight` is `[C_out, C_in, KH, KW]`.
    pub fn conv2d(
        &self,
        weight: &Var<'t>,
        bias: Option<&Var<'t>>,
        stride: (usize, usize),
        padding: Padding,
    ) -> Result<Var<'t>> {
        let shape = self.shape();
        let dims = match shape.len() {
            3 => [1, shape[0], shape[1], shape[2]],
            4 => [shape[0], shape[1], shape[2], shape[3]],
            _ => return dim_err(format!("conv2d input must be [C,H,W] or [B,C,H,W], got {shape:?}")),
        };
        let ws = weight.shape();
        if ws.len() != 4 {
            return dim_err(format!("conv2d kernel must be [C_out,C_in,KH,KW], got {ws:?}"));
        }
        let out = self.conv_impl(weight, bias, dims, [ws[0], ws[1], ws[2], ws[3]], stride, padding)?;
        if shape.len() == 3 {
            let s = out.shape();
            out.reshape(s[1..].to_vec())
        } else {
            Ok(out)
        }
    }

    fn conv_impl(
        &self,
        weight: &Var<'t>,
        bias: Option<&Var<'t>>,
        [batch, c_in, h_in, w_in]: [usize; 4],
        [c_out, wc_in, kh, kw]: [usize; 4],
        (sh, sw): (usize, usize),
        padding: Padding,
    ) -> Result<Var<'t>> {
        self.same_tape(weight);
        if c_in != wc_in {
            return dim_err(format!("conv: input has {c_in} channels, kernel expects {wc_in}"));
        }
        if sh == 0 || sw == 0 {
            return Err(TensorError::Contract("conv stride must be positive".into()));
        }
        if let Some(b) = bias {
            self.same_tape(b);
            if b.len() != c_out {
                return dim_err(format!("conv bias has {} values for {c_out} output channels", b.len()));
            }
        }
        let (h_out, pad_top) = axis_geometry(h_in, kh, sh, padding)
            .ok_or_else(|| TensorError::Dimension(format!("kernel height {kh} exceeds input {h_in}")))?;
        let (w_out, pad_left) = axis_geometry(w_in, kw, sw, padding)
            .ok_or_else(|| TensorError::Dimension(format!("kernel width {kw} exceeds input {w_in}")))?;
        let geom = ConvGeom { batch, c_in, c_out, h_in, w_in, h_out, w_out, kh, kw, sh, sw, pad_top, pad_left };
        let (value, rg) = {
            let x = self.node();
            let w = weight.node();
            let bn = bias.map(|b| b.node());
            let v = conv::forward(&x.value, &w.value, bn.as_ref().map(|b| b.value.as_slice()), &geom);
            let rg = x.requires_grad || w.requires_grad || bn.as_ref().is_some_and(|b| b.requires_grad);
            (v, rg)
        };
        Ok(self.tape.push(
            vec![batch, c_out, h_out, w_out],
            value,
            rg,
            Op::Conv { input: self.id, weight: weight.id, bias: bias.map(|b| b.id), geom },
        ))
    }

    /// Non-overlapping max pooling over the last axis with window `k`; a ragged tail is dropped.
    pub fn max_pool_last(&self, k: usize) -> Result<Var<'t>> {
        let (shape, value, rg, argmax) = {
            let n = self.node();
            let w = *n.shape.last().expect("non-empty shape");
            if k == 0 || w < k {
                return dim_err(format!("max pool window {k} on last axis of {:?}", n.shape));
            }
            let wo = w / k;
            let rows = n.value.len() / w;
            let mut out = Vec::with_capacity(rows * wo);
            let mut arg = Vec::with_capacity(rows * wo);
            for r in 0..rows {
                for j in 0..wo {
                    let base = r * w + j * k;
                    let (mut bi, mut bv) = (base, n.value[base]);
                    for i in base + 1..base + k {
                        if n.value[i] > bv {
                            bi = i;
                            bv = n.value[i];
                        }
                    }
                    out.push(bv);
                    arg.push(bi);
                }
            }
            let mut shape = n.shape.clone();
            *shape.last_mut().expect("non-empty") = wo;
            (shape, out, n.requires_grad, arg)
        };
        Ok(self.tape.push(shape, value, rg, Op::MaxPoolLast { input: self.id, argmax }))
    }

    /// Nearest-neighbour upsampling of the last axis.
    pub fn upsample_last(&self, factor: usize) -> Result<Var<'t>> {
        if factor == 0 {
            return Err(TensorError::Contract("upsample factor must be positive".into()));
        }
        let (shape, value, rg, w_in) = {
            let n = self.node();
            let w = *n.shape.last().expect("non-empty shape");
            let mut out = Vec::with_capacity(n.value.len() * factor);
            for row in n.value.chunks(w) {
                for &v in row {
                    for _ in 0..factor {
                        out.push(v);
                    }
                }
            }
            let mut shape = n.shape.clone();
            *shape.last_mut().expect("non-empty") = w * factor;
            (shape, out, n.requires_grad, w)
        };
        Ok(self.tape.push(shape, value, rg, Op::UpsampleLast { input: self.id, factor, w_in }))
    }

    /// Affine layer: `weight · input + bias` for `[F]` or `[B, F]` inputs and a `[U, F]` weight.
    pub fn dense(&self, weight: &Var<'t>, bias: &Var<'t>) -> Result<Var<'t>> {
        self.same_tape(weight);
        self.same_tape(bias);
        let shape = self.shape();
        let ws = weight.shape();
        let (batch, fan_in) = match shape.len() {
            1 => (1, shape[0]),
            2 => (shape[0], shape[1]),
            _ => return dim_err(format!("dense input must be [F] or [B,F], got {shape:?}")),
        };
        if ws.len() != 2 || ws[1] != fan_in {
            return dim_err(format!("dense weight {ws:?} does not accept {fan_in} features"));
        }
        let units = ws[0];
        if bias.len() != units {
            return dim_err(format!("dense bias has {} values for {units} units", bias.len()));
        }
        let (value, rg) = {
            let x = self.node();
            let w = weight.node();
            let b = bias.node();
            let mut out: Vec<f64> = (0..batch).flat_map(|_| b.value.iter().copied()).collect();
            gemm(batch, fan_in, units, &x.value, false, &w.value, true, &mut out, 1.0);
            (out, x.requires_grad || w.requires_grad || b.requires_grad)
        };
        let out_shape = if shape.len() == 1 { vec![units] } else { vec![batch, units] };
        Ok(self.tape.push(
            out_shape,
            value,
            rg,
            Op::Dense { input: self.id, weight: weight.id, bias: bias.id, batch, fan_in, units },
        ))
    }

    /// Matrix product of `[M, K]` and `[K, N]`.
    pub fn matmul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.same_tape(other);
        let (sa, sb) = (self.shape(), other.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return dim_err(format!("matmul {sa:?} x {sb:?}"));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let (value, rg) = {
            let a = self.node();
            let b = other.node();
            let mut out = vec![0.0; m * n];
            gemm(m, k, n, &a.value, false, &b.value, false, &mut out, 0.0);
            (out, a.requires_grad || b.requires_grad)
        };
        Ok(self.tape.push(vec![m, n], value, rg, Op::Matmul { a: self.id, b: other.id, m, k, n }))
    }

    /// Zeroes each element with probability `rate` and rescales survivors by `1/(1-rate)`.
    /// Identity when `training` is false or `rate` is zero.
    pub fn dropout<R: Rng + ?Sized>(&self, rate: f64, rng: &mut R, training: bool) -> Result<Var<'t>> {
        if !(0.0..1.0).contains(&rate) {
            return Err(TensorError::Contract(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !training || rate == 0.0 {
            return Ok(*self);
        }
        let keep = 1.0 / (1.0 - rate);
        let mask = (0..self.len()).map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep }).collect();
        self.mul_const(mask)
    }

    /// Mean absolute difference.
    pub fn l1_mean(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.same_tape(other);
        let (v, rg) = {
            let a = self.node();
            let b = other.node();
            if a.value.len() != b.value.len() {
                return dim_err(format!("l1_mean: shapes {:?} and {:?}", a.shape, b.shape));
            }
            let s: f64 = a.value.iter().zip(&b.value).map(|(x, y)| (x - y).abs()).sum();
            (s / a.value.len() as f64, a.requires_grad || b.requires_grad)
        };
        Ok(self.tape.push(vec![1], vec![v], rg, Op::L1Mean(self.id, other.id)))
    }

    /// `Σ mask·|a − b| / Σ mask`.
    pub fn masked_l1(&self, other: &Var<'t>, mask: Vec<f64>) -> Result<Var<'t>> {
        self.same_tape(other);
        let denom: f64 = mask.iter().sum();
        if denom <= 0.0 {
            return Err(TensorError::Contract("masked_l1 with an empty mask".into()));
        }
        let (v, rg) = {
            let a = self.node();
            let b = other.node();
            if a.value.len() != b.value.len() || a.value.len() != mask.len() {
                return dim_err(format!(
                    "masked_l1: shapes {:?} / {:?} with mask of {}",
                    a.shape,
                    b.shape,
                    mask.len()
                ));
            }
            let s: f64 = a.value.iter().zip(&b.value).zip(&mask).map(|((x, y), m)| m * (x - y).abs()).sum();
            (s / denom, a.requires_grad || b.requires_grad)
        };
        Ok(self.tape.push(vec![1], vec![v], rg, Op::MaskedL1 { a: self.id, b: other.id, mask, denom }))
    }

    /// `−Σ target·ln(self)` averaged over rows of the last axis.
    pub fn cross_entropy(&self, target: &[f64]) -> Result<Var<'t>> {
        let (v, rg) = {
            let p = self.node();
            if p.value.len() != target.len() {
                return dim_err(format!("cross_entropy: {} probabilities, {} targets", p.value.len(), target.len()));
            }
            let dim = *p.shape.last().expect("non-empty shape");
            let rows = p.value.len() / dim;
            let mut s = 0.0;
            for (&pi, &ti) in p.value.iter().zip(target) {
                if ti != 0.0 {
                    if pi <= 0.0 {
                        return Err(TensorError::Domain(format!("probability {pi} at a labelled class")));
                    }
                    s -= ti * pi.ln();
                }
            }
            (s / rows as f64, p.requires_grad)
        };
        Ok(self.tape.push(vec![1], vec![v], rg, Op::CrossEntropy { probs: self.id, target: target.to_vec() }))
    }

    /// Splits the first `valid` columns of a `[R, C]` matrix into `[B, R, width]` windows,
    /// zero-filling the tail of the last window.
    pub fn to_windows(&self, valid: usize, width: usize) -> Result<Var<'t>> {
        let (shape, value, rg, cols) = {
            let n = self.node();
            if n.shape.len() != 2 || valid == 0 || width == 0 || valid > n.shape[1] {
                return dim_err(format!("to_windows(valid={valid}, width={width}) on {:?}", n.shape));
            }
            let (rows, cols) = (n.shape[0], n.shape[1]);
            let blocks = valid.div_ceil(width);
            let mut out = vec![0.0; blocks * rows * width];
            for b in 0..blocks {
                let w = width.min(valid - b * width);
                for r in 0..rows {
                    let src = &n.value[r * cols + b * width..r * cols + b * width + w];
                    out[(b * rows + r) * width..(b * rows + r) * width + w].copy_from_slice(src);
                }
            }
            (vec![blocks, rows, width], out, n.requires_grad, cols)
        };
        Ok(self.tape.push(shape, value, rg, Op::ToWindows { input: self.id, cols, valid, width }))
    }

    /// Inverse of [`Var::to_windows`]: `[B, R, width]` back to `[R, valid]`.
    pub fn from_windows(&self, valid: usize) -> Result<Var<'t>> {
        let (shape, value, rg, rows, width) = {
            let n = self.node();
            if n.shape.len() != 3 || valid == 0 || valid > n.shape[0] * n.shape[2] {
                return dim_err(format!("from_windows(valid={valid}) on {:?}", n.shape));
            }
            let (blocks, rows, width) = (n.shape[0], n.shape[1], n.shape[2]);
            let mut out = vec![0.0; rows * valid];
            for b in 0..blocks {
                if b * width >= valid {
                    break;
                }
                let w = width.min(valid - b * width);
                for r in 0..rows {
                    out[r * valid + b * width..r * valid + b * width + w]
                        .copy_from_slice(&n.value[(b * rows + r) * width..(b * rows + r) * width + w]);
                }
            }
            (vec![rows, valid], out, n.requires_grad, rows, width)
        };
        Ok(self.tape.push(shape, value, rg, Op::FromWindows { input: self.id, rows, valid, width }))
    }
}
