//! Vector-Jacobian products for every recorded operation.

use crate::conv;
use crate::linalg::gemm;
use crate::ops::sigmoid;
use crate::tape::{Node, Op};

fn acc(nodes: &[Node], grads: &mut [Option<Vec<f64>>], id: usize, g: Vec<f64>) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut grads[id] {
        Some(existing) => existing.iter_mut().zip(&g).for_each(|(e, x)| *e += x),
        slot => *slot = Some(g),
    }
}

fn map_grad(nodes: &[Node], input: usize, g: &[f64], f: impl Fn(f64, f64, f64) -> f64, out: &[f64]) -> Vec<f64> {
    let x = &nodes[input].value;
    g.iter().zip(x).zip(out).map(|((&g, &x), &y)| f(g, x, y)).collect()
}

pub(crate) fn propagate(nodes: &[Node], id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let node = &nodes[id];
    let out = &node.value;
    match &node.op {
        Op::Leaf => {}
        Op::Identity(a) => acc(nodes, grads, *a, g.to_vec()),
        Op::Add(a, b) => {
            acc(nodes, grads, *a, g.to_vec());
            acc(nodes, grads, *b, g.to_vec());
        }
        Op::Sub(a, b) => {
            acc(nodes, grads, *a, g.to_vec());
            acc(nodes, grads, *b, g.iter().map(|v| -v).collect());
        }
        Op::Mul(a, b) => {
            let (va, vb) = (&nodes[*a].value, &nodes[*b].value);
            if nodes[*a].requires_grad {
                acc(nodes, grads, *a, g.iter().zip(vb).map(|(g, y)| g * y).collect());
            }
            if nodes[*b].requires_grad {
                acc(nodes, grads, *b, g.iter().zip(va).map(|(g, x)| g * x).collect());
            }
        }
        Op::Scale(a, c) => acc(nodes, grads, *a, g.iter().map(|v| c * v).collect()),
        Op::MulConst(a, m) => acc(nodes, grads, *a, g.iter().zip(m).map(|(g, m)| g * m).collect()),
        Op::Relu(a) => {
            let d = map_grad(nodes, *a, g, |g, x, _| if x > 0.0 { g } else { 0.0 }, out);
            acc(nodes, grads, *a, d)
        }
        Op::LeakyRelu(a, s) => {
            let d = map_grad(nodes, *a, g, |g, x, _| if x > 0.0 { g } else { s * g }, out);
            acc(nodes, grads, *a, d)
        }
        Op::Sigmoid(a) => {
            let d = map_grad(nodes, *a, g, |g, _, y| g * y * (1.0 - y), out);
            acc(nodes, grads, *a, d)
        }
        Op::Exp(a) => {
            let d = map_grad(nodes, *a, g, |g, _, y| g * y, out);
            acc(nodes, grads, *a, d)
        }
        Op::Log(a) => {
            let d = map_grad(nodes, *a, g, |g, x, _| g / x, out);
            acc(nodes, grads, *a, d)
        }
        Op::LogSigmoid(a) => {
            let d = map_grad(nodes, *a, g, |g, x, _| g * sigmoid(-x), out);
            acc(nodes, grads, *a, d)
        }
        Op::Softplus(a) => {
            let d = map_grad(nodes, *a, g, |g, x, _| g * sigmoid(x), out);
            acc(nodes, grads, *a, d)
        }
        Op::Sqrt(a) => {
            let d = map_grad(nodes, *a, g, |g, _, y| g * 0.5 / y, out);
            acc(nodes, grads, *a, d)
        }
        Op::Softmax { input, dim } => {
            let mut d = vec![0.0; out.len()];
            for ((y, gy), dx) in out.chunks(*dim).zip(g.chunks(*dim)).zip(d.chunks_mut(*dim)) {
                let dot: f64 = y.iter().zip(gy).map(|(a, b)| a * b).sum();
                for i in 0..*dim {
                    dx[i] = y[i] * (gy[i] - dot);
                }
            }
            acc(nodes, grads, *input, d)
        }
        Op::Sum(a) => acc(nodes, grads, *a, vec![g[0]; nodes[*a].value.len()]),
        Op::Mean(a) => {
            let n = nodes[*a].value.len();
            acc(nodes, grads, *a, vec![g[0] / n as f64; n])
        }
        Op::Cumsum(a) => {
            let mut d = vec![0.0; g.len()];
            let mut running = 0.0;
            for i in (0..g.len()).rev() {
                running += g[i];
                d[i] = running;
            }
            acc(nodes, grads, *a, d)
        }
        Op::Concat { a, b, outer, ca, cb, .. } => {
            let mut ga = Vec::with_capacity(outer * ca);
            let mut gb = Vec::with_capacity(outer * cb);
            for o in 0..*outer {
                let base = o * (ca + cb);
                ga.extend_from_slice(&g[base..base + ca]);
                gb.extend_from_slice(&g[base + ca..base + ca + cb]);
            }
            acc(nodes, grads, *a, ga);
            acc(nodes, grads, *b, gb);
        }
        Op::Narrow { input, outer, dim, start, len, inner } => {
            let mut d = vec![0.0; outer * dim * inner];
            for o in 0..*outer {
                let base = o * dim * inner;
                d[base + start * inner..base + (start + len) * inner]
                    .copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
            }
            acc(nodes, grads, *input, d)
        }
        Op::Conv { input, weight, bias, geom } => {
            let need = (
                nodes[*input].requires_grad,
                nodes[*weight].requires_grad,
                bias.is_some_and(|b| nodes[b].requires_grad),
            );
            let r = conv::backward(&nodes[*input].value, &nodes[*weight].value, g, geom, need);
            if let Some(d) = r.input {
                acc(nodes, grads, *input, d);
            }
            if let Some(d) = r.weight {
                acc(nodes, grads, *weight, d);
            }
            if let (Some(b), Some(d)) = (bias, r.bias) {
                acc(nodes, grads, *b, d);
            }
        }
        Op::MaxPoolLast { input, argmax } => {
            let mut d = vec![0.0; nodes[*input].value.len()];
            for (&i, &gv) in argmax.iter().zip(g) {
                d[i] += gv;
            }
            acc(nodes, grads, *input, d)
        }
        Op::UpsampleLast { input, factor, w_in } => {
            let rows = g.len() / (w_in * factor);
            let mut d = vec![0.0; rows * w_in];
            for (i, dv) in d.iter_mut().enumerate() {
                *dv = g[i * factor..(i + 1) * factor].iter().sum();
            }
            debug_assert_eq!(d.len(), nodes[*input].value.len());
            acc(nodes, grads, *input, d)
        }
        Op::Dense { input, weight, bias, batch, fan_in, units } => {
            let (b, f, u) = (*batch, *fan_in, *units);
            if nodes[*input].requires_grad {
                let mut d = vec![0.0; b * f];
                gemm(b, u, f, g, false, &nodes[*weight].value, false, &mut d, 0.0);
                acc(nodes, grads, *input, d);
            }
            if nodes[*weight].requires_grad {
                let mut d = vec![0.0; u * f];
                gemm(u, b, f, g, true, &nodes[*input].value, false, &mut d, 0.0);
                acc(nodes, grads, *weight, d);
            }
            if nodes[*bias].requires_grad {
                let mut d = vec![0.0; u];
                for row in g.chunks(u) {
                    d.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                }
                acc(nodes, grads, *bias, d);
            }
        }
        Op::Matmul { a, b, m, k, n } => {
            if nodes[*a].requires_grad {
                let mut d = vec![0.0; m * k];
                gemm(*m, *n, *k, g, false, &nodes[*b].value, true, &mut d, 0.0);
                acc(nodes, grads, *a, d);
            }
            if nodes[*b].requires_grad {
                let mut d = vec![0.0; k * n];
                gemm(*k, *m, *n, &nodes[*a].value, true, g, false, &mut d, 0.0);
                acc(nodes, grads, *b, d);
            }
        }
        Op::L1Mean(a, b) => {
            let (va, vb) = (&nodes[*a].value, &nodes[*b].value);
            let scale = g[0] / va.len() as f64;
            let d: Vec<f64> = va.iter().zip(vb).map(|(x, y)| scale * sign(x - y)).collect();
            acc(nodes, grads, *b, d.iter().map(|v| -v).collect());
            acc(nodes, grads, *a, d);
        }
        Op::MaskedL1 { a, b, mask, denom } => {
            let (va, vb) = (&nodes[*a].value, &nodes[*b].value);
            let scale = g[0] / denom;
            let d: Vec<f64> = va.iter().zip(vb).zip(mask).map(|((x, y), m)| scale * m * sign(x - y)).collect();
            acc(nodes, grads, *b, d.iter().map(|v| -v).collect());
            acc(nodes, grads, *a, d);
        }
        Op::CrossEntropy { probs, target } => {
            let p = &nodes[*probs].value;
            let dim = *nodes[*probs].shape.last().expect("non-empty");
            let rows = (p.len() / dim) as f64;
            let d = p
                .iter()
                .zip(target)
                .map(|(&p, &t)| if t != 0.0 { -g[0] * t / (p * rows) } else { 0.0 })
                .collect();
            acc(nodes, grads, *probs, d)
        }
        Op::ToWindows { input, cols, valid, width } => {
            let rows = node.shape[1];
            let blocks = node.shape[0];
            let mut d = vec![0.0; rows * cols];
            for b in 0..blocks {
                let w = (*width).min(valid - b * width);
                for r in 0..rows {
                    d[r * cols + b * width..r * cols + b * width + w]
                        .copy_from_slice(&g[(b * rows + r) * width..(b * rows + r) * width + w]);
                }
            }
            acc(nodes, grads, *input, d)
        }
        Op::FromWindows { input, rows, valid, width } => {
            let blocks = nodes[*input].shape[0];
            let mut d = vec![0.0; blocks * rows * width];
            for b in 0..blocks {
                if b * width >= *valid {
                    break;
                }
                let w = (*width).min(valid - b * width);
                for r in 0..*rows {
                    d[(b * rows + r) * width..(b * rows + r) * width + w]
                        .copy_from_slice(&g[r * valid + b * width..r * valid + b * width + w]);
                }
            }
            acc(nodes, grads, *input, d)
        }
        Op::Custom { inputs, op } => {
            let vals: Vec<&[f64]> = inputs.iter().map(|&i| nodes[i].value.as_slice()).collect();
            let need: Vec<bool> = inputs.iter().map(|&i| nodes[i].requires_grad).collect();
            let gs = op.backward(&vals, out, g, &need);
            for (&i, gi) in inputs.iter().zip(gs) {
                if let Some(gi) = gi {
                    assert_eq!(gi.len(), nodes[i].value.len(), "custom op {} returned a misshaped gradient", op.name());
                    acc(nodes, grads, i, gi);
                }
            }
        }
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}
