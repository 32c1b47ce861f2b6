//! Classifier, generators and discriminators over coefficient windows `[B, N, W]`.

use f0dg_tensor::{Padding, Tape, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered access to trainable tensors; the order is the checkpoint and binding order.
pub trait Module {
    fn params(&self) -> Vec<&Tensor>;
    fn params_mut(&mut self) -> Vec<&mut Tensor>;

    fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Records every parameter on `tape`, as gradient-tracking leaves when `trainable`.
    fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> Vec<Var<'t>> {
        self.params().into_iter().map(|p| if trainable { tape.leaf(p) } else { tape.frozen(p) }).collect()
    }
}

fn glorot(rng: &mut ChaCha8Rng, shape: Vec<usize>, fan_in: usize, fan_out: usize, gain: f64) -> Tensor {
    let a = gain * (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    let v = (0..n).map(|_| rng.random_range(-a..a)).collect();
    Tensor::parameter(shape, v).expect("shape matches value count")
}

fn zeros(shape: Vec<usize>) -> Tensor {
    let n = shape.iter().product();
    Tensor::parameter(shape, vec![0.0; n]).expect("shape matches value count")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Conv {
    fn new_1d(rng: &mut ChaCha8Rng, c_in: usize, c_out: usize, k: usize) -> Self {
        Conv { weight: glorot(rng, vec![c_out, c_in, k], c_in * k, c_out * k, 1.0), bias: zeros(vec![c_out]) }
    }

    fn new_2d(rng: &mut ChaCha8Rng, c_in: usize, c_out: usize, k: usize) -> Self {
        Conv {
            weight: glorot(rng, vec![c_out, c_in, k, k], c_in * k * k, c_out * k * k, 1.0),
            bias: zeros(vec![c_out]),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Dense {
    fn new(rng: &mut ChaCha8Rng, fan_in: usize, units: usize) -> Self {
        Dense { weight: glorot(rng, vec![units, fan_in], fan_in, units, 1.0), bias: zeros(vec![units]) }
    }

    fn zero(fan_in: usize, units: usize) -> Self {
        Dense { weight: zeros(vec![units, fan_in]), bias: zeros(vec![units]) }
    }
}

fn push_pair<'a>(out: &mut Vec<&'a Tensor>, w: &'a Tensor, b: &'a Tensor) {
    out.push(w);
    out.push(b);
}

fn push_pair_mut<'a>(out: &mut Vec<&'a mut Tensor>, w: &'a mut Tensor, b: &'a mut Tensor) {
    out.push(w);
    out.push(b);
}

fn check_input(x: &Var<'_>, n_scales: usize, width: usize, what: &str) -> Result<()> {
    let s = x.shape();
    if s.len() != 3 || s[1] != n_scales || s[2] != width {
        return Err(Error::Contract(format!("{what} expects [B, {n_scales}, {width}] blocks, got {s:?}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub n_scales: usize,
    pub width: usize,
    pub filters: Vec<usize>,
    pub convs_per_block: usize,
    pub kernel: usize,
    pub scale_stride: usize,
    pub time_pool: usize,
    pub hidden: usize,
    pub dropout: f64,
    pub classes: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            n_scales: 32,
            width: 512,
            filters: vec![32, 64, 128],
            convs_per_block: 1,
            kernel: 3,
            scale_stride: 2,
            time_pool: 4,
            hidden: 1000,
            dropout: 0.2,
            classes: 2,
        }
    }
}

impl ClassifierConfig {
    /// Flattened feature count after the convolutional blocks.
    pub fn flat_features(&self) -> usize {
        let (mut h, mut w) = (self.n_scales, self.width);
        for _ in &self.filters {
            h = h.div_ceil(self.scale_stride);
            w /= self.time_pool;
        }
        h * w * self.filters.last().copied().unwrap_or(1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub cfg: ClassifierConfig,
    pub convs: Vec<Conv>,
    pub hidden: Dense,
    pub out: Dense,
}

impl Classifier {
    pub fn new(cfg: ClassifierConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        if cfg.filters.is_empty() || cfg.convs_per_block == 0 || cfg.flat_features() == 0 {
            return Err(Error::Contract(format!("degenerate classifier config {cfg:?}")));
        }
        let mut convs = Vec::new();
        let mut c_in = 1;
        for &f in &cfg.filters {
            for _ in 0..cfg.convs_per_block {
                convs.push(Conv::new_2d(rng, c_in, f, cfg.kernel));
                c_in = f;
            }
        }
        let hidden = Dense::new(rng, cfg.flat_features(), cfg.hidden);
        let out = Dense::zero(cfg.hidden, cfg.classes);
        Ok(Classifier { cfg, convs, hidden, out })
    }

    /// Class posteriors `[B, classes]`.
    pub fn forward<'t>(&self, p: &[Var<'t>], x: Var<'t>, rng: &mut ChaCha8Rng, training: bool) -> Result<Var<'t>> {
        let c = &self.cfg;
        check_input(&x, c.n_scales, c.width, "classifier")?;
        let b = x.shape()[0];
        let mut h = x.reshape(vec![b, 1, c.n_scales, c.width])?;
        let mut i = 0;
        for _ in &c.filters {
            for j in 0..c.convs_per_block {
                let stride = if j == 0 { (c.scale_stride, 1) } else { (1, 1) };
                h = h.conv2d(&p[2 * i], Some(&p[2 * i + 1]), stride, Padding::Same)?.relu();
                i += 1;
            }
            h = h.dropout(c.dropout, rng, training)?.max_pool_last(c.time_pool)?;
        }
        let k = 2 * i;
        let flat = h.reshape(vec![b, c.flat_features()])?;
        let hid = flat.dense(&p[k], &p[k + 1])?.relu();
        Ok(hid.dense(&p[k + 2], &p[k + 3])?.softmax())
    }
}

impl Module for Classifier {
    fn params(&self) -> Vec<&Tensor> {
        let mut v = Vec::new();
        for c in &self.convs {
            push_pair(&mut v, &c.weight, &c.bias);
        }
        push_pair(&mut v, &self.hidden.weight, &self.hidden.bias);
        push_pair(&mut v, &self.out.weight, &self.out.bias);
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = Vec::new();
        for c in &mut self.convs {
            push_pair_mut(&mut v, &mut c.weight, &mut c.bias);
        }
        push_pair_mut(&mut v, &mut self.hidden.weight, &mut self.hidden.bias);
        push_pair_mut(&mut v, &mut self.out.weight, &mut self.out.bias);
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub n_scales: usize,
    pub channels: Vec<usize>,
    pub kernel: usize,
    pub dropout: f64,
    /// Scale of the random weights on the decoder half of the output layer; the input skip
    /// half starts as the identity.
    pub out_init_gain: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig { n_scales: 32, channels: vec![64, 128, 256, 256], kernel: 5, dropout: 0.5, out_init_gain: 0.1 }
    }
}

impl GeneratorConfig {
    fn decoder_out(&self, level: usize) -> usize {
        if level == 0 {
            (self.channels[0] / 2).max(1)
        } else {
            self.channels[level - 1]
        }
    }

    fn decoder_in(&self, level: usize) -> usize {
        if level + 1 == self.channels.len() {
            self.channels[level]
        } else {
            2 * self.channels[level]
        }
    }

    /// Windows must halve cleanly at every down-sampling layer.
    pub fn width_multiple(&self) -> usize {
        1 << self.channels.len()
    }
}

/// U-Net style encoder–decoder; dropout after every hidden layer is its noise source.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub cfg: GeneratorConfig,
    pub down: Vec<Conv>,
    pub up: Vec<Conv>,
    pub out: Conv,
}

impl Generator {
    pub fn new(cfg: GeneratorConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut g = Self::identity(cfg)?;
        let c = g.cfg.clone();
        let mut c_in = c.n_scales;
        for (i, &ch) in c.channels.iter().enumerate() {
            g.down[i] = Conv::new_1d(rng, c_in, ch, c.kernel);
            c_in = ch;
        }
        // up[0] is the deepest decoder level.
        for (slot, level) in (0..c.channels.len()).rev().enumerate() {
            g.up[slot] = Conv::new_1d(rng, c.decoder_in(level), c.decoder_out(level), c.kernel);
        }
        let d0 = c.decoder_out(0);
        let fan_in = d0 + c.n_scales;
        let a = c.out_init_gain * (6.0 / (fan_in + c.n_scales) as f64).sqrt();
        let w = g.out.weight.values_mut();
        for n in 0..c.n_scales {
            for j in 0..d0 {
                w[n * fan_in + j] = if a > 0.0 { rng.random_range(-a..a) } else { 0.0 };
            }
        }
        Ok(g)
    }

    /// Hidden layers zeroed and the output layer copying its input skip: output == input
    /// whenever dropout is off.
    pub fn identity(cfg: GeneratorConfig) -> Result<Self> {
        if cfg.channels.is_empty() || cfg.kernel == 0 || !(0.0..1.0).contains(&cfg.dropout) {
            return Err(Error::Contract(format!("degenerate generator config {cfg:?}")));
        }
        let mut c_in = cfg.n_scales;
        let mut down = Vec::new();
        for &ch in &cfg.channels {
            down.push(Conv { weight: zeros(vec![ch, c_in, cfg.kernel]), bias: zeros(vec![ch]) });
            c_in = ch;
        }
        let up = (0..cfg.channels.len())
            .rev()
            .map(|l| Conv {
                weight: zeros(vec![cfg.decoder_out(l), cfg.decoder_in(l), cfg.kernel]),
                bias: zeros(vec![cfg.decoder_out(l)]),
            })
            .collect();
        let d0 = cfg.decoder_out(0);
        let fan_in = d0 + cfg.n_scales;
        let mut w = vec![0.0; cfg.n_scales * fan_in];
        for n in 0..cfg.n_scales {
            w[n * fan_in + d0 + n] = 1.0;
        }
        let out = Conv {
            weight: Tensor::parameter(vec![cfg.n_scales, fan_in, 1], w)?,
            bias: zeros(vec![cfg.n_scales]),
        };
        Ok(Generator { cfg, down, up, out })
    }

    pub fn forward<'t>(&self, p: &[Var<'t>], x: Var<'t>, rng: &mut ChaCha8Rng, noise: bool) -> Result<Var<'t>> {
        let c = &self.cfg;
        let s = x.shape();
        if s.len() != 3 || s[1] != c.n_scales || s[2] % c.width_multiple() != 0 {
            return Err(Error::Contract(format!(
                "generator expects [B, {}, W] with W a multiple of {}, got {s:?}",
                c.n_scales,
                c.width_multiple()
            )));
        }
        let levels = c.channels.len();
        let mut skips = Vec::with_capacity(levels);
        let mut h = x;
        for i in 0..levels {
            h = h.conv1d(&p[2 * i], Some(&p[2 * i + 1]), 2, Padding::Same)?.relu().dropout(c.dropout, rng, noise)?;
            skips.push(h);
        }
        for (slot, level) in (0..levels).rev().enumerate() {
            let k = 2 * (levels + slot);
            h = h
                .upsample_last(2)?
                .conv1d(&p[k], Some(&p[k + 1]), 1, Padding::Same)?
                .relu()
                .dropout(c.dropout, rng, noise)?;
            let skip = if level > 0 { skips[level - 1] } else { x };
            h = h.concat(&skip, 1)?;
        }
        let k = 4 * levels;
        Ok(h.conv1d(&p[k], Some(&p[k + 1]), 1, Padding::Same)?)
    }
}

impl Module for Generator {
    fn params(&self) -> Vec<&Tensor> {
        let mut v = Vec::new();
        for c in self.down.iter().chain(&self.up) {
            push_pair(&mut v, &c.weight, &c.bias);
        }
        push_pair(&mut v, &self.out.weight, &self.out.bias);
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = Vec::new();
        for c in self.down.iter_mut().chain(self.up.iter_mut()) {
            push_pair_mut(&mut v, &mut c.weight, &mut c.bias);
        }
        push_pair_mut(&mut v, &mut self.out.weight, &mut self.out.bias);
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscriminatorConfig {
    pub n_scales: usize,
    pub width: usize,
    pub channels: Vec<usize>,
    pub kernel: usize,
    pub slope: f64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig { n_scales: 32, width: 512, channels: vec![64, 128, 256, 256], kernel: 5, slope: 0.2 }
    }
}

impl DiscriminatorConfig {
    pub fn flat_features(&self) -> usize {
        let mut w = self.width;
        for _ in &self.channels {
            w = w.div_ceil(2);
        }
        w * self.channels.last().copied().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    pub cfg: DiscriminatorConfig,
    pub convs: Vec<Conv>,
    pub out: Dense,
}

impl Discriminator {
    pub fn new(cfg: DiscriminatorConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        if cfg.channels.is_empty() || cfg.flat_features() == 0 {
            return Err(Error::Contract(format!("degenerate discriminator config {cfg:?}")));
        }
        let mut convs = Vec::new();
        let mut c_in = cfg.n_scales;
        for &ch in &cfg.channels {
            convs.push(Conv::new_1d(rng, c_in, ch, cfg.kernel));
            c_in = ch;
        }
        let out = Dense::zero(cfg.flat_features(), 1);
        Ok(Discriminator { cfg, convs, out })
    }

    /// Pre-sigmoid realness scores `[B, 1]`.
    pub fn logits<'t>(&self, p: &[Var<'t>], x: Var<'t>) -> Result<Var<'t>> {
        let c = &self.cfg;
        check_input(&x, c.n_scales, c.width, "discriminator")?;
        let b = x.shape()[0];
        let mut h = x;
        for i in 0..c.channels.len() {
            h = h.conv1d(&p[2 * i], Some(&p[2 * i + 1]), 2, Padding::Same)?.leaky_relu(c.slope);
        }
        let k = 2 * c.channels.len();
        Ok(h.reshape(vec![b, c.flat_features()])?.dense(&p[k], &p[k + 1])?)
    }

    pub fn discriminate<'t>(&self, p: &[Var<'t>], x: Var<'t>) -> Result<Var<'t>> {
        Ok(self.logits(p, x)?.sigmoid())
    }
}

impl Module for Discriminator {
    fn params(&self) -> Vec<&Tensor> {
        let mut v = Vec::new();
        for c in &self.convs {
            push_pair(&mut v, &c.weight, &c.bias);
        }
        push_pair(&mut v, &self.out.weight, &self.out.bias);
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = Vec::new();
        for c in &mut self.convs {
            push_pair_mut(&mut v, &mut c.weight, &mut c.bias);
        }
        push_pair_mut(&mut v, &mut self.out.weight, &mut self.out.bias);
        v
    }
}
