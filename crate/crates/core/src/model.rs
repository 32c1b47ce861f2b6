//! Model configuration, the bundle of all trainable components, and its checkpoint format.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use f0dg_tensor::{AdamState, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{ConfigKind, LossWeights};
use crate::networks::{
    Classifier, ClassifierConfig, Discriminator, DiscriminatorConfig, Generator, GeneratorConfig, Module,
};
use crate::pipeline::{SIGNAL_LEN, WINDOW};
use crate::wavelet::{Reconstruction, ReconstructionConstants, ScaleBank};

const MAGIC: &[u8; 4] = b"F0DG";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub n_scales: usize,
    /// Log-spaced initial scale range, in ms (one sample per ms).
    pub scale_init_ms: (f64, f64),
    pub s_min: f64,
    pub signal_len: usize,
    pub window: usize,
    pub reconstruction: Reconstruction,
    pub constants: ReconstructionConstants,
    pub classifier: ClassifierConfig,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_scales: 32,
            scale_init_ms: (2.0, 2000.0),
            s_min: 1.0,
            signal_len: SIGNAL_LEN,
            window: WINDOW,
            reconstruction: Reconstruction::Classic,
            constants: ReconstructionConstants::default(),
            classifier: ClassifierConfig::default(),
            generator: GeneratorConfig::default(),
            discriminator: DiscriminatorConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let c = self;
        if c.classifier.n_scales != c.n_scales || c.generator.n_scales != c.n_scales || c.discriminator.n_scales != c.n_scales {
            return Err(Error::Contract("every network must use the encoder's scale count".into()));
        }
        if c.classifier.width != c.window || c.discriminator.width != c.window {
            return Err(Error::Contract("classifier and discriminator widths must equal the window".into()));
        }
        if c.window % c.generator.width_multiple() != 0 {
            return Err(Error::Contract(format!("window {} is not a multiple of {}", c.window, c.generator.width_multiple())));
        }
        if c.signal_len == 0 || c.window == 0 {
            return Err(Error::Contract("signal length and window must be positive".into()));
        }
        Ok(())
    }

    /// A scaled-down model for tests and smoke runs.
    pub fn tiny(n_scales: usize, window: usize, signal_len: usize) -> Self {
        ModelConfig {
            n_scales,
            scale_init_ms: (2.0, 30.0),
            signal_len,
            window,
            classifier: ClassifierConfig {
                n_scales,
                width: window,
                filters: vec![4, 4, 4],
                time_pool: 2,
                hidden: 8,
                ..ClassifierConfig::default()
            },
            generator: GeneratorConfig { n_scales, channels: vec![4, 4, 4, 4], ..GeneratorConfig::default() },
            discriminator: DiscriminatorConfig {
                n_scales,
                width: window,
                channels: vec![4, 4, 4, 4],
                ..DiscriminatorConfig::default()
            },
            ..ModelConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub config: ConfigKind,
    pub weights: LossWeights,
    pub lr: f64,
    pub steps_pretrain: usize,
    pub steps_dualgan: usize,
    pub seed: u64,
    pub d_steps_per_g: usize,
    /// Write a checkpoint every this many steps; 0 disables intermediate checkpoints.
    pub checkpoint_every: usize,
    /// Compare generator outputs directly instead of their products with the inputs.
    pub dual_plain: bool,
    /// Keep generator dropout active (it is the generators' noise input).
    pub noise: bool,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::new(ConfigKind::A)
    }
}

impl TrainConfig {
    pub fn new(config: ConfigKind) -> Self {
        TrainConfig {
            config,
            weights: LossWeights::for_config(config),
            lr: 1e-4,
            steps_pretrain: 500,
            steps_dualgan: 2000,
            seed: 0,
            d_steps_per_g: 1,
            checkpoint_every: 0,
            dual_plain: false,
            noise: true,
            model: ModelConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if !(self.lr > 0.0) || self.d_steps_per_g == 0 {
            return Err(Error::Contract("learning rate and D steps per G step must be positive".into()));
        }
        if self.weights != LossWeights::for_config(self.config) {
            log::warn!("loss weights {:?} differ from the defaults of config {:?}", self.weights, self.config);
        }
        Ok(())
    }
}

/// One Adam state per independently stepped component.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizers {
    pub bank: AdamState,
    pub classifier: AdamState,
    pub g_ab: AdamState,
    pub g_ba: AdamState,
    pub d_a: AdamState,
    pub d_b: AdamState,
}

fn adam_for<M: Module>(lr: f64, m: &M) -> AdamState {
    AdamState::for_params(lr, &m.params())
}

/// Encoder scales, classifier, both generators, both discriminators and their optimiser states.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub config: ModelConfig,
    pub attitudes: [String; 2],
    pub bank: ScaleBank,
    pub classifier: Classifier,
    pub g_ab: Generator,
    pub g_ba: Generator,
    pub d_a: Discriminator,
    pub d_b: Discriminator,
    pub opt: Optimizers,
    pub pretrain_steps: usize,
    pub dualgan_steps: usize,
    /// Classifier posterior of the true class per `utterance_id/attitude`, frozen after pretraining.
    pub sample_weights: BTreeMap<String, f64>,
}

pub fn sample_key(utterance_id: &str, attitude: &str) -> String {
    format!("{utterance_id}/{attitude}")
}

impl ModelBundle {
    pub fn new(config: ModelConfig, attitudes: [String; 2], lr: f64, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (lo, hi) = config.scale_init_ms;
        let bank = ScaleBank::log_spaced(config.n_scales, lo, hi, config.s_min)?;
        let classifier = Classifier::new(config.classifier.clone(), &mut rng)?;
        let g_ab = Generator::new(config.generator.clone(), &mut rng)?;
        let g_ba = Generator::new(config.generator.clone(), &mut rng)?;
        let d_a = Discriminator::new(config.discriminator.clone(), &mut rng)?;
        let d_b = Discriminator::new(config.discriminator.clone(), &mut rng)?;
        let opt = Optimizers {
            bank: AdamState::for_params(lr, &[bank.raw()]),
            classifier: adam_for(lr, &classifier),
            g_ab: adam_for(lr, &g_ab),
            g_ba: adam_for(lr, &g_ba),
            d_a: adam_for(lr, &d_a),
            d_b: adam_for(lr, &d_b),
        };
        let b = ModelBundle {
            config,
            attitudes,
            bank,
            classifier,
            g_ab,
            g_ba,
            d_a,
            d_b,
            opt,
            pretrain_steps: 0,
            dualgan_steps: 0,
            sample_weights: BTreeMap::new(),
        };
        log::info!(
            "parameters: scales {}, classifier {}, generators {} each, discriminators {} each",
            b.bank.len(),
            b.classifier.param_count(),
            b.g_ab.param_count(),
            b.d_a.param_count()
        );
        Ok(b)
    }

    pub fn sample_weight(&self, utterance_id: &str, attitude: &str) -> f64 {
        self.sample_weights.get(&sample_key(utterance_id, attitude)).copied().unwrap_or(1.0)
    }

    pub fn trained(&self) -> bool {
        self.pretrain_steps > 0 || self.dualgan_steps > 0
    }

    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![("bank.raw".to_string(), self.bank.raw())];
        let groups: [(&str, Vec<&Tensor>); 5] = [
            ("classifier", self.classifier.params()),
            ("g_ab", self.g_ab.params()),
            ("g_ba", self.g_ba.params()),
            ("d_a", self.d_a.params()),
            ("d_b", self.d_b.params()),
        ];
        for (name, ps) in groups {
            for (i, p) in ps.into_iter().enumerate() {
                out.push((format!("{name}.{i}"), p));
            }
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![self.bank.raw_mut()];
        out.extend(self.classifier.params_mut());
        out.extend(self.g_ab.params_mut());
        out.extend(self.g_ba.params_mut());
        out.extend(self.d_a.params_mut());
        out.extend(self.d_b.params_mut());
        out
    }

    fn adam_states(&self) -> [(&'static str, &AdamState); 6] {
        let o = &self.opt;
        [("bank", &o.bank), ("classifier", &o.classifier), ("g_ab", &o.g_ab), ("g_ba", &o.g_ba), ("d_a", &o.d_a), ("d_b", &o.d_b)]
    }

    fn adam_states_mut(&mut self) -> [&mut AdamState; 6] {
        let o = &mut self.opt;
        [&mut o.bank, &mut o.classifier, &mut o.g_ab, &mut o.g_ba, &mut o.d_a, &mut o.d_b]
    }

    /// Serialises the bundle: magic, little-endian header length, JSON header, raw f64 data.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let tensors = self.named_tensors();
        let header = Header {
            format_version: FORMAT_VERSION,
            config: self.config.clone(),
            attitudes: self.attitudes.clone(),
            scales: self.bank.scales(),
            s_min: self.bank.s_min(),
            pretrain_steps: self.pretrain_steps,
            dualgan_steps: self.dualgan_steps,
            sample_weights: self.sample_weights.clone(),
            tensors: tensors.iter().map(|(n, t)| TensorEntry { name: n.clone(), shape: t.shape().to_vec() }).collect(),
            optimizers: self
                .adam_states()
                .iter()
                .map(|(n, s)| AdamEntry {
                    name: n.to_string(),
                    step: s.step,
                    lr: s.lr,
                    beta1: s.beta1,
                    beta2: s.beta2,
                    epsilon: s.epsilon,
                    lengths: s.m.iter().map(Vec::len).collect(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        let mut put = |v: &[f64]| v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
        for (_, t) in &tensors {
            put(t.values());
        }
        for (_, s) in self.adam_states() {
            for (m, v) in s.m.iter().zip(&s.v) {
                put(m);
                put(v);
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(bad("missing F0DG magic"));
        }
        let hlen = u64::from_le_bytes(bytes[4..12].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(12..12 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(body)?;
        if header.format_version != FORMAT_VERSION {
            return Err(bad(&format!("unsupported format version {}", header.format_version)));
        }
        let mut data = bytes[12 + hlen..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        let mut take = |n: usize| -> Result<Vec<f64>> {
            let v: Vec<f64> = data.by_ref().take(n).collect();
            if v.len() != n {
                return Err(bad("truncated parameter data"));
            }
            Ok(v)
        };
        // Build a skeleton with the right shapes, then overwrite every value.
        let mut b = ModelBundle::new(header.config.clone(), header.attitudes.clone(), 1e-4, 0)?;
        b.bank = ScaleBank::from_raw(Tensor::zeros(vec![header.config.n_scales]), header.s_min)?;
        let expected: Vec<(String, Vec<usize>)> =
            b.named_tensors().into_iter().map(|(n, t)| (n, t.shape().to_vec())).collect();
        if expected.len() != header.tensors.len()
            || expected.iter().zip(&header.tensors).any(|((n, s), e)| *n != e.name || *s != e.shape)
        {
            return Err(bad("tensor layout does not match the configuration"));
        }
        for t in b.tensors_mut() {
            let v = take(t.len())?;
            t.values_mut().copy_from_slice(&v);
        }
        if header.optimizers.len() != 6 {
            return Err(bad("expected six optimiser states"));
        }
        for (s, e) in b.adam_states_mut().into_iter().zip(&header.optimizers) {
            let mut st = AdamState::new(e.lr, &e.lengths);
            st.step = e.step;
            st.beta1 = e.beta1;
            st.beta2 = e.beta2;
            st.epsilon = e.epsilon;
            for (m, v) in st.m.iter_mut().zip(st.v.iter_mut()) {
                *m = take(m.len())?;
                *v = take(v.len())?;
            }
            *s = st;
        }
        if data.next().is_some() {
            return Err(bad("trailing data after optimiser states"));
        }
        b.pretrain_steps = header.pretrain_steps;
        b.dualgan_steps = header.dualgan_steps;
        b.sample_weights = header.sample_weights;
        Ok(b)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path).and_then(|mut f| f.read_to_end(&mut bytes)).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct AdamEntry {
    name: String,
    step: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    lengths: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: ModelConfig,
    attitudes: [String; 2],
    scales: Vec<f64>,
    s_min: f64,
    pretrain_steps: usize,
    dualgan_steps: usize,
    sample_weights: BTreeMap<String, f64>,
    tensors: Vec<TensorEntry>,
    optimizers: Vec<AdamEntry>,
}
