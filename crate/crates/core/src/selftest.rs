//! Finite-difference gradient suite and wavelet oracle checks, shared by the `selftest` command.

use f0dg_tensor::gradcheck::{compare, GradCheckConfig, GradCheckReport};
use f0dg_tensor::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::corpus::{random_skeleton, synth_pair, CorpusSpec, SkeletonSpec};
use crate::error::Result;
use crate::model::{ModelBundle, ModelConfig};
use crate::networks::Module;
use crate::training::{
    ab_loss, adv_d_loss, adv_g_loss, cl_loss, dual_loss, encode_pair, generate_pair, rec_loss, PreparedPair, Trainable,
};
use crate::wavelet::{reconstruct, ricker, ricker_kernel, CoefficientPlane, Reconstruction, ReconstructionConstants};

pub const LOSS_NAMES: [&str; 6] = ["L_rec", "L_cl", "L_ab", "L_adv_D", "L_adv_G", "L_dual"];

/// Signal length, scale count and window of the gradient-suite models.
pub const SUITE_LEN: usize = 512;
pub const SUITE_SCALES: usize = 4;
pub const SUITE_WINDOW: usize = 128;

pub fn suite_config() -> ModelConfig {
    let mut c = ModelConfig::tiny(SUITE_SCALES, SUITE_WINDOW, SUITE_LEN);
    c.classifier.filters = vec![2, 2, 2];
    c.classifier.hidden = 4;
    c.generator.channels = vec![2, 2, 2, 2];
    c.discriminator.channels = vec![2, 2, 2, 2];
    c
}

/// One random instance: a tiny bundle with every weight perturbed, and a short aligned pair.
pub struct Instance {
    pub bundle: ModelBundle,
    pub pair: PreparedPair,
    pub sample_weights: (f64, f64),
    pub seed: u64,
}

pub fn all_params_mut(b: &mut ModelBundle) -> Vec<&mut Tensor> {
    let mut v = vec![b.bank.raw_mut()];
    v.extend(b.classifier.params_mut());
    v.extend(b.g_ab.params_mut());
    v.extend(b.g_ba.params_mut());
    v.extend(b.d_a.params_mut());
    v.extend(b.d_b.params_mut());
    v
}

pub fn random_instance(seed: u64) -> Result<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = suite_config();
    let spec = CorpusSpec::preset("separable")?;
    let mut bundle = ModelBundle::new(cfg.clone(), [spec.profiles[0].name.clone(), spec.profiles[1].name.clone()], 1e-4, seed)?;
    // Scales spread over the short signal, kept well inside its length.
    let mut scales: Vec<f64> = (0..SUITE_SCALES).map(|_| rng.random_range(1.5..40.0)).collect();
    scales.sort_by(f64::total_cmp);
    for i in 1..scales.len() {
        scales[i] = scales[i].max(scales[i - 1] + 0.5);
    }
    bundle.bank = crate::wavelet::ScaleBank::from_scales(&scales, cfg.s_min)?;
    // Zero-initialised output layers would hide most of the graph from the check.
    let noise = Normal::new(0.0, 0.3).expect("valid normal");
    {
        let mut ps = all_params_mut(&mut bundle);
        for t in ps.iter_mut().skip(1) {
            for v in t.values_mut() {
                *v += noise.sample(&mut rng);
            }
        }
    }
    let skel = random_skeleton(&SkeletonSpec { min_syllables: 2, max_syllables: 3, min_syllable_ms: 120, max_syllable_ms: 160 }, &mut rng)?;
    let pair = synth_pair(&skel, &spec.profiles[0], &spec.profiles[1], rng.random(), "g")?;
    let pair = PreparedPair::new(&pair, SUITE_LEN)?;
    let sample_weights = (rng.random_range(0.2..1.0), rng.random_range(0.2..1.0));
    Ok(Instance { bundle, pair, sample_weights, seed })
}

/// All six objectives at the current parameters, built on `tape` with every parameter trainable.
/// Dropout masks are redrawn from the instance seed, so repeated calls see the same masks.
fn objectives<'t>(inst: &Instance, tape: &'t Tape) -> Result<(crate::training::Bound<'t>, Vec<f0dg_tensor::Var<'t>>)> {
    let b = &inst.bundle;
    let all = Trainable { bank: true, classifier: true, generators: true, discriminators: true };
    let bound = b.bind(tape, all);
    let mut rng = ChaCha8Rng::seed_from_u64(inst.seed ^ 0x5eed);
    let e = encode_pair(bound.scales, &inst.pair, &b.config)?;
    let l_rec = rec_loss(&bound, &e, &inst.pair, &b.config)?;
    let l_cl = cl_loss(b, &bound, &e, &mut rng, true)?;
    let c = generate_pair(b, &bound, &e, &mut rng, true)?;
    let l_ab = ab_loss(&bound, &e, &c, &inst.pair, &b.config, inst.sample_weights)?;
    let l_adv_d = adv_d_loss(b, &bound, e.blocks_a, c.ba, e.blocks_b, c.ab)?;
    let l_adv_g = adv_g_loss(b, &bound, &c)?;
    let l_dual = dual_loss(&e, &c, &inst.pair, &b.config, false)?;
    Ok((bound, vec![l_rec, l_cl, l_ab, l_adv_d, l_adv_g, l_dual]))
}

/// Values of the six objectives (used by the finite-difference side).
pub fn objective_values(inst: &Instance) -> Result<Vec<f64>> {
    let tape = Tape::new();
    let (_, l) = objectives(inst, &tape)?;
    Ok(l.iter().map(|v| v.item()).collect())
}

#[derive(Debug, Clone, Default)]
pub struct SuiteReport {
    pub instances: usize,
    /// One merged report per objective, in `LOSS_NAMES` order.
    pub per_loss: Vec<GradCheckReport>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.per_loss.iter().all(GradCheckReport::passed)
    }

    pub fn checked(&self) -> usize {
        self.per_loss.iter().map(|r| r.checked).sum()
    }
}

/// Compares tape gradients of every objective against central differences over every parameter.
pub fn check_instance(inst: &mut Instance, cfg: &GradCheckConfig) -> Result<Vec<GradCheckReport>> {
    let analytic: Vec<Vec<Vec<f64>>> = {
        let tape = Tape::new();
        let (bound, losses) = objectives(inst, &tape)?;
        let mut vars = vec![bound.raw];
        for group in [&bound.classifier, &bound.g_ab, &bound.g_ba, &bound.d_a, &bound.d_b] {
            vars.extend(group.iter().copied());
        }
        let mut out = Vec::new();
        for l in losses {
            let g = tape.backward(l)?;
            out.push(vars.iter().map(|&v| g.get_or_zeros(v)).collect());
        }
        out
    };
    // One sweep perturbs each parameter once and records all six objectives.
    let n_losses = analytic.len();
    let lens: Vec<usize> = all_params_mut(&mut inst.bundle).iter().map(|t| t.len()).collect();
    let mut numeric: Vec<Vec<Vec<f64>>> = (0..n_losses).map(|_| lens.iter().map(|&n| vec![0.0; n]).collect()).collect();
    for (ti, &n) in lens.iter().enumerate() {
        for i in 0..n {
            let orig = all_params_mut(&mut inst.bundle)[ti].values()[i];
            all_params_mut(&mut inst.bundle)[ti].values_mut()[i] = orig + cfg.step;
            let fp = objective_values(inst)?;
            all_params_mut(&mut inst.bundle)[ti].values_mut()[i] = orig - cfg.step;
            let fm = objective_values(inst)?;
            all_params_mut(&mut inst.bundle)[ti].values_mut()[i] = orig;
            for l in 0..n_losses {
                numeric[l][ti][i] = (fp[l] - fm[l]) / (2.0 * cfg.step);
            }
        }
    }
    Ok(analytic.iter().zip(&numeric).map(|(a, n)| compare(a, n, cfg)).collect())
}

pub fn gradient_suite(instances: usize, seed: u64, cfg: &GradCheckConfig) -> Result<SuiteReport> {
    let mut per_loss: Vec<GradCheckReport> = vec![GradCheckReport::default(); LOSS_NAMES.len()];
    for i in 0..instances {
        let mut inst = random_instance(seed.wrapping_mul(1000).wrapping_add(i as u64))?;
        for (acc, r) in per_loss.iter_mut().zip(check_instance(&mut inst, cfg)?) {
            acc.merge(r);
        }
    }
    Ok(SuiteReport { instances, per_loss })
}

/// Largest deviation of the kernel taps from a direct evaluation of the Ricker formula.
pub fn kernel_oracle(scales: &[f64]) -> Result<f64> {
    let a0 = 2.0 / (3f64.sqrt() * std::f64::consts::PI.powf(0.25));
    let mut worst: f64 = 0.0;
    for &s in scales {
        let support = crate::wavelet::support_for(s, 8001);
        let k = ricker_kernel(s, support)?;
        let half = (support / 2) as f64;
        for (i, &tap) in k.taps.iter().enumerate() {
            let u = (i as f64 - half) / s;
            let direct = a0 * (1.0 - u * u) * (-u * u / 2.0).exp();
            worst = worst.max((tap - direct).abs()).max((tap - ricker(i as f64 - half, s)).abs());
        }
    }
    Ok(worst)
}

/// Largest deviation of the verbatim inverse from `c · Σ_i W_i(t) + mean` on random planes.
pub fn reconstruction_oracle(trials: usize, seed: u64) -> Result<f64> {
    let consts = ReconstructionConstants::default();
    let c = consts.d_j * consts.d_t.sqrt() / (consts.c_d * consts.y_0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let n = rng.random_range(1..8);
        let len = rng.random_range(1..64);
        let coeffs: Vec<f64> = (0..n * len).map(|_| rng.random_range(-3.0..3.0)).collect();
        let mut scales: Vec<f64> = (0..n).map(|i| 2.0 + i as f64 * 3.0).collect();
        scales.sort_by(f64::total_cmp);
        let mean = rng.random_range(3.0..6.0);
        let plane = CoefficientPlane { n_scales: n, len, coeffs: coeffs.clone(), signal_mean: mean, scales };
        let x = reconstruct(&plane, &consts, Reconstruction::Verbatim)?;
        for t in 0..len {
            let direct = c * (0..n).map(|i| coeffs[i * len + t]).sum::<f64>() + mean;
            worst = worst.max((x[t] - direct).abs());
        }
    }
    Ok(worst)
}

