//! Central finite differences, used as an independent oracle for tape gradients.

use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    pub step: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { step: 1e-6, rel_tol: 1e-3, abs_tol: 1e-5 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mismatch {
    pub tensor: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_abs_error: f64,
    /// Largest error relative to max(|analytic|, |numeric|) among entries above the absolute floor.
    pub max_rel_error: f64,
    pub mismatches: Vec<Mismatch>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }

    pub fn merge(&mut self, other: GradCheckReport) {
        self.checked += other.checked;
        self.max_abs_error = self.max_abs_error.max(other.max_abs_error);
        self.max_rel_error = self.max_rel_error.max(other.max_rel_error);
        self.mismatches.extend(other.mismatches);
    }
}

/// Central-difference gradient of `f` with respect to every element of the
/// tensors returned by `slots`. Each element is perturbed in place and restored.
pub fn central_difference<S>(
    state: &mut S,
    slots: impl Fn(&mut S) -> Vec<&mut Tensor>,
    mut f: impl FnMut(&S) -> f64,
    step: f64,
) -> Vec<Vec<f64>> {
    let lens: Vec<usize> = slots(state).iter().map(|t| t.len()).collect();
    let mut out = Vec::with_capacity(lens.len());
    for (ti, &n) in lens.iter().enumerate() {
        let mut g = vec![0.0; n];
        for (i, gi) in g.iter_mut().enumerate() {
            let orig = slots(state)[ti].values()[i];
            slots(state)[ti].values_mut()[i] = orig + step;
            let fp = f(state);
            slots(state)[ti].values_mut()[i] = orig - step;
            let fm = f(state);
            slots(state)[ti].values_mut()[i] = orig;
            *gi = (fp - fm) / (2.0 * step);
        }
        out.push(g);
    }
    out
}

/// Element-wise comparison: passes when `|a - n| <= max(rel_tol * max(|a|, |n|), abs_tol)`.
pub fn compare(analytic: &[Vec<f64>], numeric: &[Vec<f64>], cfg: &GradCheckConfig) -> GradCheckReport {
    let mut r = GradCheckReport::default();
    for (ti, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        assert_eq!(a.len(), n.len(), "gradient length mismatch for tensor {ti}");
        for (i, (&av, &nv)) in a.iter().zip(n).enumerate() {
            let err = (av - nv).abs();
            let scale = av.abs().max(nv.abs());
            r.checked += 1;
            r.max_abs_error = r.max_abs_error.max(err);
            if err > cfg.abs_tol && scale > 0.0 {
                r.max_rel_error = r.max_rel_error.max(err / scale);
            }
            if err > (cfg.rel_tol * scale).max(cfg.abs_tol) || !av.is_finite() {
                r.mismatches.push(Mismatch { tensor: ti, index: i, analytic: av, numeric: nv });
            }
        }
    }
    r
}
