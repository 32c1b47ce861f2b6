//! Training objectives on tape variables.

use f0dg_tensor::Var;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConfigKind {
    A,
    B,
}

impl std::str::FromStr for ConfigKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(ConfigKind::A),
            "B" | "b" => Ok(ConfigKind::B),
            _ => Err(Error::Contract(format!("unknown config {s:?}, expected A or B"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub gamma: f64,
}

impl LossWeights {
    pub fn for_config(kind: ConfigKind) -> Self {
        match kind {
            ConfigKind::A => LossWeights { alpha: 1.0, beta: 0.0, lambda: 5.0, gamma: 15.0 },
            ConfigKind::B => LossWeights { alpha: 10.0, beta: 1.0, lambda: 5.0, gamma: 15.0 },
        }
    }

    pub fn pretrain_total(&self, l_rec: f64, l_cl: f64) -> f64 {
        self.alpha * l_rec + self.beta * l_cl
    }

    pub fn dualgan_total(&self, l_ab: f64, l_adv_g: f64, l_dual: f64) -> f64 {
        self.lambda * l_ab + l_adv_g + self.gamma * l_dual
    }

    pub fn pretrain<'t>(&self, l_rec: Var<'t>, l_cl: Option<Var<'t>>) -> Result<Var<'t>> {
        let total = l_rec.scale(self.alpha);
        match l_cl {
            Some(cl) if self.beta != 0.0 => Ok(total.add(&cl.scale(self.beta))?),
            _ => Ok(total),
        }
    }

    pub fn dualgan<'t>(&self, l_ab: Var<'t>, l_adv_g: Var<'t>, l_dual: Var<'t>) -> Result<Var<'t>> {
        Ok(l_ab.scale(self.lambda).add(&l_adv_g)?.add(&l_dual.scale(self.gamma))?)
    }
}

/// Voiced-masked L1 between a reconstructed signal and the first `recon.len()` frames of `target`.
pub fn masked_signal_l1<'t>(recon: Var<'t>, target: &[f64], mask: &[f64]) -> Result<Var<'t>> {
    let n = recon.len();
    if target.len() < n || mask.len() < n {
        return Err(Error::Contract(format!("reconstruction of {n} frames outruns target ({})", target.len())));
    }
    let t = recon.tape().constant(vec![n], target[..n].to_vec())?;
    Ok(recon.masked_l1(&t, mask[..n].to_vec())?)
}

/// Mean of the two per-utterance reconstruction terms.
pub fn loss_rec<'t>(rec_a: Var<'t>, rec_b: Var<'t>) -> Result<Var<'t>> {
    Ok(rec_a.add(&rec_b)?.scale(0.5))
}

/// Mean cross-entropy of `[B, C]` posteriors against integer labels.
pub fn loss_cl<'t>(probs: Var<'t>, labels: &[usize]) -> Result<Var<'t>> {
    let s = probs.shape();
    if s.len() != 2 || s[0] != labels.len() {
        return Err(Error::Contract(format!("{} labels for posteriors {s:?}", labels.len())));
    }
    let mut onehot = vec![0.0; s[0] * s[1]];
    for (r, &l) in labels.iter().enumerate() {
        if l >= s[1] {
            return Err(Error::Contract(format!("label {l} out of {} classes", s[1])));
        }
        onehot[r * s[1] + l] = 1.0;
    }
    Ok(probs.cross_entropy(&onehot)?)
}

/// Sample-weighted sum of the two transformation terms.
pub fn loss_ab<'t>(ab: Var<'t>, ba: Var<'t>, weights: (f64, f64)) -> Result<Var<'t>> {
    Ok(ab.scale(weights.0).add(&ba.scale(weights.1))?)
}

/// Discriminator objective for one direction: BCE of real logits against 1 and fake against 0.
pub fn adv_d<'t>(real_logits: Var<'t>, fake_logits: Var<'t>) -> Result<Var<'t>> {
    let real = real_logits.log_sigmoid().mean();
    let fake = fake_logits.scale(-1.0).log_sigmoid().mean();
    Ok(real.add(&fake)?.scale(-1.0))
}

/// Non-saturating generator objective for one direction.
pub fn adv_g<'t>(fake_logits: Var<'t>) -> Var<'t> {
    fake_logits.log_sigmoid().mean().scale(-1.0)
}

/// Dual consistency between the two mappings, masked to voiced columns.
/// With `plain` the products are dropped and the generator outputs compared directly.
pub fn loss_dual<'t>(
    plane_a: Var<'t>,
    out_ab: Var<'t>,
    plane_b: Var<'t>,
    out_ba: Var<'t>,
    mask: Vec<f64>,
    plain: bool,
) -> Result<Var<'t>> {
    let (lhs, rhs) = if plain { (out_ab, out_ba) } else { (plane_a.mul(&out_ab)?, plane_b.mul(&out_ba)?) };
    Ok(lhs.masked_l1(&rhs, mask)?)
}

/// Expands a per-frame mask to the `[B, rows, width]` window layout.
pub fn window_mask(mask: &[f64], valid_length: usize, rows: usize, width: usize) -> Vec<f64> {
    let blocks = valid_length.div_ceil(width);
    let mut out = vec![0.0; blocks * rows * width];
    for b in 0..blocks {
        for k in 0..width.min(valid_length - b * width) {
            let m = mask[b * width + k];
            for r in 0..rows {
                out[(b * rows + r) * width + k] = m;
            }
        }
    }
    out
}
