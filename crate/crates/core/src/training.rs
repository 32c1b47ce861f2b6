//! Pretraining of the encoder (and classifier), joint Dual-GAN training, and conversion.

use std::fs::{self, File, OpenOptions};
use std::path::{Path, PathBuf};

use f0dg_tensor::{adam_step, Gradients, Tape, TensorError, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::losses::{self, ConfigKind};
use crate::model::{sample_key, ModelBundle, ModelConfig, TrainConfig};
use crate::networks::Module;
use crate::pipeline::{align_pair, prepare_with_length, F0Track, ModelInput, ParallelPair};
use crate::wavelet::{encode, encode_var, reconstruct, reconstruct_var};

/// An aligned pair turned into model inputs on a shared timeline.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedPair {
    pub utterance_id: String,
    pub attitudes: [String; 2],
    pub a: ModelInput,
    pub b: ModelInput,
    pub joint_mask: Vec<f64>,
}

impl PreparedPair {
    pub fn new(pair: &ParallelPair, signal_len: usize) -> Result<Self> {
        let aligned = align_pair(pair)?;
        let a = prepare_with_length(&aligned.source, signal_len)?;
        let b = prepare_with_length(&aligned.target, signal_len)?;
        let joint_mask = a.voicing_mask.iter().zip(&b.voicing_mask).map(|(x, y)| x * y).collect();
        Ok(PreparedPair {
            utterance_id: pair.source.utterance_id.clone(),
            attitudes: [pair.source.attitude.clone(), pair.target.attitude.clone()],
            a,
            b,
            joint_mask,
        })
    }

    pub fn valid_length(&self) -> usize {
        self.a.valid_length
    }
}

/// Which components receive gradients when a bundle is bound to a tape.
#[derive(Debug, Clone, Copy, Default)]
pub struct Trainable {
    pub bank: bool,
    pub classifier: bool,
    pub generators: bool,
    pub discriminators: bool,
}

/// Bundle parameters recorded on one tape, in declaration order.
pub struct Bound<'t> {
    pub raw: Var<'t>,
    pub scales: Var<'t>,
    pub classifier: Vec<Var<'t>>,
    pub g_ab: Vec<Var<'t>>,
    pub g_ba: Vec<Var<'t>>,
    pub d_a: Vec<Var<'t>>,
    pub d_b: Vec<Var<'t>>,
}

impl ModelBundle {
    pub fn bind<'t>(&self, tape: &'t Tape, t: Trainable) -> Bound<'t> {
        let (raw, scales) = self.bank.bind(tape, t.bank);
        Bound {
            raw,
            scales,
            classifier: self.classifier.bind(tape, t.classifier),
            g_ab: self.g_ab.bind(tape, t.generators),
            g_ba: self.g_ba.bind(tape, t.generators),
            d_a: self.d_a.bind(tape, t.discriminators),
            d_b: self.d_b.bind(tape, t.discriminators),
        }
    }
}

/// Encoder outputs for both sides of a pair.
pub struct Encoded<'t> {
    pub plane_a: Var<'t>,
    pub plane_b: Var<'t>,
    pub mean_a: f64,
    pub mean_b: f64,
    pub blocks_a: Var<'t>,
    pub blocks_b: Var<'t>,
}

pub fn encode_pair<'t>(scales: Var<'t>, p: &PreparedPair, cfg: &ModelConfig) -> Result<Encoded<'t>> {
    let v = p.valid_length();
    let (plane_a, mean_a) = encode_var(scales, &p.a.signal, &p.a.voicing_mask, v)?;
    let (plane_b, mean_b) = encode_var(scales, &p.b.signal, &p.b.voicing_mask, v)?;
    let blocks_a = plane_a.to_windows(v, cfg.window)?;
    let blocks_b = plane_b.to_windows(v, cfg.window)?;
    Ok(Encoded { plane_a, plane_b, mean_a, mean_b, blocks_a, blocks_b })
}

/// Masked L1 between the reconstruction of a `[N × T]` plane and a prepared signal.
fn signal_term<'t>(plane: Var<'t>, scales: Var<'t>, mean: f64, target: &ModelInput, cfg: &ModelConfig) -> Result<Var<'t>> {
    let v = target.valid_length;
    let cols = plane.shape()[1];
    let plane = if cols == v { plane } else { plane.narrow(1, 0, v)? };
    let recon = reconstruct_var(plane, scales, mean, &cfg.constants, cfg.reconstruction)?;
    losses::masked_signal_l1(recon, &target.signal, &target.voicing_mask)
}

pub fn rec_loss<'t>(b: &Bound<'t>, e: &Encoded<'t>, p: &PreparedPair, cfg: &ModelConfig) -> Result<Var<'t>> {
    let ra = signal_term(e.plane_a, b.scales, e.mean_a, &p.a, cfg)?;
    let rb = signal_term(e.plane_b, b.scales, e.mean_b, &p.b, cfg)?;
    losses::loss_rec(ra, rb)
}

/// Classifier posteriors for all blocks of both sides, with their labels (a = 0, b = 1).
pub fn classify_pair<'t>(
    bundle: &ModelBundle,
    b: &Bound<'t>,
    e: &Encoded<'t>,
    rng: &mut ChaCha8Rng,
    training: bool,
) -> Result<(Var<'t>, Vec<usize>)> {
    let x = e.blocks_a.concat(&e.blocks_b, 0)?;
    let (na, nb) = (e.blocks_a.shape()[0], e.blocks_b.shape()[0]);
    let probs = bundle.classifier.forward(&b.classifier, x, rng, training)?;
    let labels = std::iter::repeat_n(0, na).chain(std::iter::repeat_n(1, nb)).collect();
    Ok((probs, labels))
}

pub fn cl_loss<'t>(bundle: &ModelBundle, b: &Bound<'t>, e: &Encoded<'t>, rng: &mut ChaCha8Rng, training: bool) -> Result<Var<'t>> {
    let (probs, labels) = classify_pair(bundle, b, e, rng, training)?;
    losses::loss_cl(probs, &labels)
}

/// Generator outputs in window layout.
pub struct Converted<'t> {
    pub ab: Var<'t>,
    pub ba: Var<'t>,
}

pub fn generate_pair<'t>(bundle: &ModelBundle, b: &Bound<'t>, e: &Encoded<'t>, rng: &mut ChaCha8Rng, noise: bool) -> Result<Converted<'t>> {
    let ab = bundle.g_ab.forward(&b.g_ab, e.blocks_a, rng, noise)?;
    let ba = bundle.g_ba.forward(&b.g_ba, e.blocks_b, rng, noise)?;
    Ok(Converted { ab, ba })
}

/// Transformation loss: converted a→b against b and b→a against a, weighted per source utterance.
pub fn ab_loss<'t>(
    b: &Bound<'t>,
    e: &Encoded<'t>,
    c: &Converted<'t>,
    p: &PreparedPair,
    cfg: &ModelConfig,
    weights: (f64, f64),
) -> Result<Var<'t>> {
    let v = p.valid_length();
    let ab = signal_term(c.ab.from_windows(v)?, b.scales, e.mean_a, &p.b, cfg)?;
    let ba = signal_term(c.ba.from_windows(v)?, b.scales, e.mean_b, &p.a, cfg)?;
    losses::loss_ab(ab, ba, weights)
}

pub fn dual_loss<'t>(e: &Encoded<'t>, c: &Converted<'t>, p: &PreparedPair, cfg: &ModelConfig, plain: bool) -> Result<Var<'t>> {
    let mask = losses::window_mask(&p.joint_mask, p.valid_length(), cfg.n_scales, cfg.window);
    losses::loss_dual(e.blocks_a, c.ab, e.blocks_b, c.ba, mask, plain)
}

/// Generator side of the adversarial loss: D_b judges a→b outputs, D_a judges b→a outputs.
pub fn adv_g_loss<'t>(bundle: &ModelBundle, b: &Bound<'t>, c: &Converted<'t>) -> Result<Var<'t>> {
    let gb = losses::adv_g(bundle.d_b.logits(&b.d_b, c.ab)?);
    let ga = losses::adv_g(bundle.d_a.logits(&b.d_a, c.ba)?);
    Ok(ga.add(&gb)?)
}

/// Discriminator loss on the given real and converted blocks, summed over both directions.
pub fn adv_d_loss<'t>(
    bundle: &ModelBundle,
    b: &Bound<'t>,
    real_a: Var<'t>,
    fake_a: Var<'t>,
    real_b: Var<'t>,
    fake_b: Var<'t>,
) -> Result<Var<'t>> {
    let da = losses::adv_d(bundle.d_a.logits(&b.d_a, real_a)?, bundle.d_a.logits(&b.d_a, fake_a)?)?;
    let db = losses::adv_d(bundle.d_b.logits(&b.d_b, real_b)?, bundle.d_b.logits(&b.d_b, fake_b)?)?;
    Ok(da.add(&db)?)
}

/// One line of the loss log; `None` marks a term not evaluated in that phase.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossRow {
    pub step: usize,
    pub phase: String,
    pub l_rec: Option<f64>,
    pub l_cl: Option<f64>,
    pub l_ab: Option<f64>,
    pub l_adv_d: Option<f64>,
    pub l_adv_g: Option<f64>,
    pub l_dual: Option<f64>,
    pub total: f64,
}

impl LossRow {
    fn record(&self) -> Vec<String> {
        let f = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
        vec![
            self.step.to_string(),
            self.phase.clone(),
            f(self.l_rec),
            f(self.l_cl),
            f(self.l_ab),
            f(self.l_adv_d),
            f(self.l_adv_g),
            f(self.l_dual),
            format!("{}", self.total),
        ]
    }
}

pub const LOSS_HEADER: [&str; 9] = ["step", "phase", "L_rec", "L_cl", "L_ab", "L_adv_D", "L_adv_G", "L_dual", "total"];

/// Appends loss rows to a CSV file, flushing after each step.
pub struct LossLog {
    path: PathBuf,
    writer: csv::Writer<File>,
}

impl LossLog {
    pub fn open(path: &Path) -> Result<Self> {
        let fresh = !path.exists() || fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(|e| Error::io(path, e))?;
        let mut writer = csv::Writer::from_writer(file);
        if fresh {
            writer.write_record(LOSS_HEADER).map_err(|e| crate::wavelet::csv_io(path, e))?;
        }
        Ok(LossLog { path: path.to_path_buf(), writer })
    }

    pub fn push(&mut self, row: &LossRow) -> Result<()> {
        self.writer.write_record(row.record()).map_err(|e| crate::wavelet::csv_io(&self.path, e))?;
        self.writer.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// Where a training run writes its loss log, checkpoints and failure dumps.
#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    pub dir: Option<PathBuf>,
}

impl RunOutput {
    pub fn to_dir(dir: &Path) -> Self {
        RunOutput { dir: Some(dir.to_path_buf()) }
    }

    fn log(&self) -> Result<Option<LossLog>> {
        match &self.dir {
            Some(d) => {
                fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
                Ok(Some(LossLog::open(&d.join("losses.csv"))?))
            }
            None => Ok(None),
        }
    }

    fn checkpoint(&self, bundle: &ModelBundle, phase: &str, step: usize) -> Result<()> {
        if let Some(d) = &self.dir {
            bundle.save(&d.join(format!("checkpoint_{phase}_{step:06}.f0dg")))?;
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct FailureDump<'a> {
    step: usize,
    phase: &'a str,
    utterance_id: &'a str,
    valid_length: usize,
    losses: &'a LossRow,
    scales: Vec<f64>,
    error: String,
}

fn backward_or_dump(
    tape: &Tape,
    loss: Var<'_>,
    row: &LossRow,
    p: &PreparedPair,
    bundle: &ModelBundle,
    out: &RunOutput,
) -> Result<Gradients> {
    match tape.backward(loss) {
        Ok(g) => Ok(g),
        Err(TensorError::NonFinite(what)) => {
            let dump = FailureDump {
                step: row.step,
                phase: &row.phase,
                utterance_id: &p.utterance_id,
                valid_length: p.valid_length(),
                losses: row,
                scales: bundle.bank.scales(),
                error: what.clone(),
            };
            let text = serde_json::to_string_pretty(&dump)?;
            if let Some(d) = &out.dir {
                let path = d.join(format!("nonfinite_{}_{:06}.json", row.phase, row.step));
                fs::write(&path, &text).map_err(|e| Error::io(&path, e))?;
            }
            Err(Error::NonFinite { step: row.step, phase: row.phase.clone(), detail: text })
        }
        Err(e) => Err(e.into()),
    }
}

fn step_module<M: Module>(m: &mut M, vars: &[Var<'_>], g: &Gradients, st: &mut f0dg_tensor::AdamState) -> Result<()> {
    let mut ps = m.params_mut();
    g.accumulate_into(vars, &mut ps)?;
    adam_step(&mut ps, st)?;
    Ok(())
}

fn step_bank(bundle: &mut ModelBundle, raw: Var<'_>, g: &Gradients) -> Result<()> {
    let raw_t = bundle.bank.raw_mut();
    g.accumulate_into(&[raw], &mut [&mut *raw_t])?;
    adam_step(&mut [raw_t], &mut bundle.opt.bank)?;
    let s = bundle.bank.scales();
    if !s.windows(2).all(|w| w[0] < w[1]) || s.iter().any(|v| !v.is_finite()) {
        return Err(Error::Contract(format!("scale bank lost monotonicity: {s:?}")));
    }
    Ok(())
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Training pairs as prepared inputs, in corpus order.
pub fn prepare_pairs(corpus: &Corpus, split: crate::corpus::Split, signal_len: usize) -> Result<Vec<PreparedPair>> {
    corpus.split(split).into_iter().map(|p| PreparedPair::new(p, signal_len)).collect()
}

/// Yields pair indices epoch by epoch, reshuffled with a seeded RNG.
struct EpochOrder {
    n: usize,
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl EpochOrder {
    fn new(n: usize, rng: ChaCha8Rng) -> Self {
        EpochOrder { n, order: Vec::new(), pos: 0, rng }
    }

    fn next(&mut self) -> usize {
        if self.pos == self.order.len() {
            self.order = (0..self.n).collect();
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }
}

fn require_training_pairs(pairs: &[PreparedPair]) -> Result<()> {
    if pairs.is_empty() {
        return Err(Error::Contract("training split holds no complete pairs of both attitudes".into()));
    }
    Ok(())
}

/// Minimises `α·L_rec + β·L_cl` over the training split. The encoder scales always update;
/// the classifier updates in config B.
pub fn pretrain(corpus: &Corpus, cfg: &TrainConfig, bundle: Option<ModelBundle>, out: &RunOutput) -> Result<(ModelBundle, Vec<LossRow>)> {
    cfg.validate()?;
    let mut bundle = match bundle {
        Some(b) => b,
        None => ModelBundle::new(cfg.model.clone(), corpus.attitudes.clone(), cfg.lr, cfg.seed)?,
    };
    let pairs = prepare_pairs(corpus, crate::corpus::Split::Train, bundle.config.signal_len)?;
    require_training_pairs(&pairs)?;
    let with_cl = cfg.config == ConfigKind::B;
    let mut order = EpochOrder::new(pairs.len(), rng_for(cfg.seed, 10));
    let mut noise_rng = rng_for(cfg.seed, 11);
    let mut log = out.log()?;
    let mut rows = Vec::with_capacity(cfg.steps_pretrain);
    let mcfg = bundle.config.clone();
    for _ in 0..cfg.steps_pretrain {
        let step = bundle.pretrain_steps;
        let p = &pairs[order.next()];
        let tape = Tape::new();
        let b = bundle.bind(&tape, Trainable { bank: true, classifier: with_cl, ..Trainable::default() });
        let e = encode_pair(b.scales, p, &mcfg)?;
        let l_rec = rec_loss(&b, &e, p, &mcfg)?;
        let l_cl = if with_cl { Some(cl_loss(&bundle, &b, &e, &mut noise_rng, true)?) } else { None };
        let total = cfg.weights.pretrain(l_rec, l_cl)?;
        let row = LossRow {
            step,
            phase: "pretrain".into(),
            l_rec: Some(l_rec.item()),
            l_cl: l_cl.map(|v| v.item()),
            l_ab: None,
            l_adv_d: None,
            l_adv_g: None,
            l_dual: None,
            total: total.item(),
        };
        let g = backward_or_dump(&tape, total, &row, p, &bundle, out)?;
        step_bank(&mut bundle, b.raw, &g)?;
        if with_cl {
            let cls = &mut bundle.classifier;
            step_module(cls, &b.classifier, &g, &mut bundle.opt.classifier)?;
        }
        drop(b);
        bundle.pretrain_steps += 1;
        if let Some(l) = log.as_mut() {
            l.push(&row)?;
        }
        rows.push(row);
        if cfg.checkpoint_every > 0 && bundle.pretrain_steps % cfg.checkpoint_every == 0 {
            out.checkpoint(&bundle, "pretrain", bundle.pretrain_steps)?;
        }
    }
    if with_cl {
        bundle.sample_weights = sample_weights(&bundle, corpus)?;
    }
    Ok((bundle, rows))
}

/// Mean classifier posterior of the true class per utterance side, without dropout.
pub fn sample_weights(bundle: &ModelBundle, corpus: &Corpus) -> Result<std::collections::BTreeMap<String, f64>> {
    let mut out = std::collections::BTreeMap::new();
    let mut rng = rng_for(0, 0);
    for cp in &corpus.pairs {
        let p = PreparedPair::new(&cp.pair, bundle.config.signal_len)?;
        let tape = Tape::new();
        let b = bundle.bind(&tape, Trainable::default());
        let e = encode_pair(b.scales, &p, &bundle.config)?;
        let (probs, labels) = classify_pair(bundle, &b, &e, &mut rng, false)?;
        let v = probs.value();
        for (side, att) in p.attitudes.iter().enumerate() {
            let picked: Vec<f64> = labels.iter().enumerate().filter(|(_, &l)| l == side).map(|(r, _)| v[r * 2 + side]).collect();
            out.insert(sample_key(&p.utterance_id, att), picked.iter().sum::<f64>() / picked.len() as f64);
        }
    }
    Ok(out)
}

/// Held-out (or any split) block accuracy of the classifier.
pub fn classifier_accuracy(bundle: &ModelBundle, pairs: &[PreparedPair]) -> Result<f64> {
    let (mut hit, mut n) = (0usize, 0usize);
    let mut rng = rng_for(0, 0);
    for p in pairs {
        let tape = Tape::new();
        let b = bundle.bind(&tape, Trainable::default());
        let e = encode_pair(b.scales, p, &bundle.config)?;
        let (probs, labels) = classify_pair(bundle, &b, &e, &mut rng, false)?;
        let v = probs.value();
        for (r, &l) in labels.iter().enumerate() {
            let pred = if v[r * 2 + 1] > v[r * 2] { 1 } else { 0 };
            hit += (pred == l) as usize;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Eval("no blocks to classify".into()));
    }
    Ok(hit as f64 / n as f64)
}

/// Alternating D and G updates; the encoder scales are stepped together with the generators.
pub fn train_dualgan(corpus: &Corpus, bundle: ModelBundle, cfg: &TrainConfig, out: &RunOutput) -> Result<(ModelBundle, Vec<LossRow>)> {
    cfg.validate()?;
    let mut bundle = bundle;
    if !bundle.trained() {
        log::warn!("dual-GAN training starts from an untrained bundle");
    }
    let pairs = prepare_pairs(corpus, crate::corpus::Split::Train, bundle.config.signal_len)?;
    require_training_pairs(&pairs)?;
    let mut order = EpochOrder::new(pairs.len(), rng_for(cfg.seed, 20));
    let mut noise_rng = rng_for(cfg.seed, 21);
    let mut log = out.log()?;
    let mut rows = Vec::with_capacity(cfg.steps_dualgan);
    let mcfg = bundle.config.clone();
    for _ in 0..cfg.steps_dualgan {
        let step = bundle.dualgan_steps;
        let p = &pairs[order.next()];
        let weights = (bundle.sample_weight(&p.utterance_id, &p.attitudes[0]), bundle.sample_weight(&p.utterance_id, &p.attitudes[1]));
        let tape = Tape::new();
        let b = bundle.bind(&tape, Trainable { bank: true, generators: true, ..Trainable::default() });
        let e = encode_pair(b.scales, p, &mcfg)?;
        let c = generate_pair(&bundle, &b, &e, &mut noise_rng, cfg.noise)?;

        let mut l_adv_d = 0.0;
        for _ in 0..cfg.d_steps_per_g {
            let dtape = Tape::new();
            let db = bundle.bind(&dtape, Trainable { discriminators: true, ..Trainable::default() });
            let real_a = dtape.constant(e.blocks_a.shape(), e.blocks_a.value())?;
            let real_b = dtape.constant(e.blocks_b.shape(), e.blocks_b.value())?;
            let fake_a = dtape.constant(c.ba.shape(), c.ba.value())?;
            let fake_b = dtape.constant(c.ab.shape(), c.ab.value())?;
            let ld = adv_d_loss(&bundle, &db, real_a, fake_a, real_b, fake_b)?;
            l_adv_d = ld.item();
            let drow = LossRow {
                step,
                phase: "dualgan".into(),
                l_rec: None,
                l_cl: None,
                l_ab: None,
                l_adv_d: Some(l_adv_d),
                l_adv_g: None,
                l_dual: None,
                total: l_adv_d,
            };
            let g = backward_or_dump(&dtape, ld, &drow, p, &bundle, out)?;
            step_module(&mut bundle.d_a, &db.d_a, &g, &mut bundle.opt.d_a)?;
            step_module(&mut bundle.d_b, &db.d_b, &g, &mut bundle.opt.d_b)?;
        }

        // Discriminators enter the generator step frozen, with their freshly updated weights.
        let d_a = bundle.d_a.bind(&tape, false);
        let d_b = bundle.d_b.bind(&tape, false);
        let b = Bound { d_a, d_b, ..b };
        let l_ab = ab_loss(&b, &e, &c, p, &mcfg, weights)?;
        let l_adv_g = adv_g_loss(&bundle, &b, &c)?;
        let l_dual = dual_loss(&e, &c, p, &mcfg, cfg.dual_plain)?;
        let total = cfg.weights.dualgan(l_ab, l_adv_g, l_dual)?;
        let row = LossRow {
            step,
            phase: "dualgan".into(),
            l_rec: None,
            l_cl: None,
            l_ab: Some(l_ab.item()),
            l_adv_d: Some(l_adv_d),
            l_adv_g: Some(l_adv_g.item()),
            l_dual: Some(l_dual.item()),
            total: total.item(),
        };
        let g = backward_or_dump(&tape, total, &row, p, &bundle, out)?;
        step_bank(&mut bundle, b.raw, &g)?;
        step_module(&mut bundle.g_ab, &b.g_ab, &g, &mut bundle.opt.g_ab)?;
        step_module(&mut bundle.g_ba, &b.g_ba, &g, &mut bundle.opt.g_ba)?;
        bundle.dualgan_steps += 1;
        if let Some(l) = log.as_mut() {
            l.push(&row)?;
        }
        rows.push(row);
        if cfg.checkpoint_every > 0 && bundle.dualgan_steps % cfg.checkpoint_every == 0 {
            out.checkpoint(&bundle, "dualgan", bundle.dualgan_steps)?;
        }
    }
    Ok((bundle, rows))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
pub enum Direction {
    #[serde(rename = "a2b")]
    AtoB,
    #[serde(rename = "b2a")]
    BtoA,
}

impl std::str::FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "a2b" | "a->b" | "ab" => Ok(Direction::AtoB),
            "b2a" | "b->a" | "ba" => Ok(Direction::BtoA),
            _ => Err(Error::Contract(format!("unknown direction {s:?}, expected a2b or b2a"))),
        }
    }
}

fn track_from_log(track: &F0Track, logf0: &[f64], attitude: &str) -> F0Track {
    let f0_hz = track.voicing.iter().zip(logf0).map(|(&v, &x)| if v { x.exp() } else { 0.0 }).collect();
    F0Track { f0_hz, attitude: attitude.to_string(), ..track.clone() }
}

/// Encodes and inverts a track with the bundle's scales (no generator).
pub fn reconstruct_track(track: &F0Track, bundle: &ModelBundle) -> Result<F0Track> {
    let input = prepare_with_length(track, bundle.config.signal_len)?;
    let plane = encode(&input.signal, &input.voicing_mask, input.valid_length, &bundle.bank.scales())?;
    let x = reconstruct(&plane, &bundle.config.constants, bundle.config.reconstruction)?;
    Ok(track_from_log(track, &x[..input.valid_length], &track.attitude))
}

/// Converts a track; the result stays on the source timeline with the source voicing.
pub fn convert(track: &F0Track, bundle: &ModelBundle, direction: Direction, seed: u64, noise: bool) -> Result<F0Track> {
    let cfg = &bundle.config;
    let input = prepare_with_length(track, cfg.signal_len)?;
    let v = input.valid_length;
    let tape = Tape::new();
    let b = bundle.bind(&tape, Trainable::default());
    let (plane, mean) = encode_var(b.scales, &input.signal, &input.voicing_mask, v)?;
    let blocks = plane.to_windows(v, cfg.window)?;
    let (gen, params, att) = match direction {
        Direction::AtoB => (&bundle.g_ab, &b.g_ab, &bundle.attitudes[1]),
        Direction::BtoA => (&bundle.g_ba, &b.g_ba, &bundle.attitudes[0]),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let out = gen.forward(params, blocks, &mut rng, noise)?.from_windows(v)?;
    let x = reconstruct_var(out, b.scales, mean, &cfg.constants, cfg.reconstruction)?.value();
    Ok(track_from_log(track, &x, att))
}
