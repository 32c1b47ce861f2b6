use f0dg::losses::*;
use f0dg::model::ModelConfig;
use f0dg::pipeline::ModelInput;
use f0dg::training::{ab_loss, Bound, Converted, Encoded, PreparedPair};
use f0dg::wavelet::ReconstructionConstants;
use f0dg_tensor::Tape;
use proptest::prelude::*;

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[test]
fn signal_l1_examples() {
    let tape = Tape::new();
    let target = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0];
    let mask = vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0];
    let same = tape.constant(vec![8], target.clone()).unwrap();
    assert_eq!(masked_signal_l1(same, &target, &mask).unwrap().item(), 0.0);
    let shifted = tape.constant(vec![8], target.iter().map(|v| v + 0.3).collect()).unwrap();
    assert!((masked_signal_l1(shifted, &target, &mask).unwrap().item() - 0.3).abs() < 1e-12);
    let errs = [0.1, 99.0, 0.2, -99.0, 0.0, 5.0, -0.1, 7.0];
    let r = tape.constant(vec![8], target.iter().zip(&errs).map(|(t, e)| t + e).collect()).unwrap();
    assert!((masked_signal_l1(r, &target, &mask).unwrap().item() - 0.1).abs() < 1e-12);
}

#[test]
fn classification_examples() {
    let tape = Tape::new();
    let perfect = tape.constant(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    assert_eq!(loss_cl(perfect, &[0, 1]).unwrap().item(), 0.0);
    let uniform = tape.constant(vec![3, 2], vec![0.5; 6]).unwrap();
    assert!((loss_cl(uniform, &[0, 1, 1]).unwrap().item() - 2f64.ln()).abs() < 1e-15);
    let p = tape.constant(vec![2, 2], vec![0.8, 0.2, 0.2, 0.8]).unwrap();
    let v = loss_cl(p, &[0, 1]).unwrap().item();
    assert!((v + 0.8f64.ln()).abs() < 1e-15);
    assert!((v - 0.2231).abs() < 1e-4);
    let p = tape.constant(vec![1, 2], vec![0.5, 0.5]).unwrap();
    assert!(loss_cl(p, &[2]).is_err());
}

#[test]
fn adversarial_examples() {
    let tape = Tape::new();
    let zeros = tape.constant(vec![4, 1], vec![0.0; 4]).unwrap();
    assert!((adv_d(zeros, zeros).unwrap().item() - 2.0 * 2f64.ln()).abs() < 1e-15);
    let real = tape.constant(vec![1, 1], vec![logit(0.8)]).unwrap();
    let fake = tape.constant(vec![1, 1], vec![logit(0.3)]).unwrap();
    let v = adv_d(real, fake).unwrap().item();
    assert!((v + 0.8f64.ln() + 0.7f64.ln()).abs() < 1e-12);
    assert!((v - 0.5798).abs() < 1e-4);
    let mut last = f64::INFINITY;
    for eps in [1e-2, 1e-4, 1e-6, 1e-8] {
        let r = tape.constant(vec![1, 1], vec![logit(1.0 - eps)]).unwrap();
        let f = tape.constant(vec![1, 1], vec![logit(eps)]).unwrap();
        let v = adv_d(r, f).unwrap().item();
        assert!(v < last && v < 3.0 * eps);
        last = v;
    }
    let g = adv_g(tape.constant(vec![2, 1], vec![0.0, 0.0]).unwrap()).item();
    assert!((g - 2f64.ln()).abs() < 1e-15);
}

#[test]
fn dual_examples() {
    let tape = Tape::new();
    let c = |v: Vec<f64>| tape.constant(vec![1, 2, 2], v).unwrap();
    let x = c(vec![1.0, -2.0, 0.5, 3.0]);
    let g = c(vec![0.3, 0.1, -1.0, 2.0]);
    assert_eq!(loss_dual(x, g, x, g, vec![1.0; 4], false).unwrap().item(), 0.0);
    let z = c(vec![0.0; 4]);
    assert_eq!(loss_dual(z, z, z, z, vec![1.0; 4], false).unwrap().item(), 0.0);
    // |a·ab − b·ba| over the first column only (mask [1,0] per row).
    let a = c(vec![1.0, 2.0, 3.0, 4.0]);
    let ab = c(vec![2.0, 0.0, -1.0, 1.0]);
    let b = c(vec![0.5, 1.0, 2.0, -1.0]);
    let ba = c(vec![2.0, 3.0, 1.0, 0.0]);
    let hand = ((1.0 * 2.0 - 0.5 * 2.0) as f64).abs() + (3.0 * -1.0 - 2.0 * 1.0f64).abs();
    let v = loss_dual(a, ab, b, ba, vec![1.0, 0.0, 1.0, 0.0], false).unwrap().item();
    assert!((v - hand / 2.0).abs() < 1e-15);
}

#[test]
fn weights_compose_as_stated() {
    let a = LossWeights::for_config(ConfigKind::A);
    assert_eq!((a.alpha, a.beta, a.lambda, a.gamma), (1.0, 0.0, 5.0, 15.0));
    let b = LossWeights::for_config(ConfigKind::B);
    assert_eq!((b.alpha, b.beta), (10.0, 1.0));
    assert_eq!(a.pretrain_total(0.37, 123.0), 0.37);
    assert_eq!(a.dualgan_total(1.0, 2.0, 3.0), 52.0);
    let tape = Tape::new();
    let s = |v| tape.scalar(v);
    assert_eq!(a.dualgan(s(1.0), s(2.0), s(3.0)).unwrap().item(), 52.0);
    assert_eq!(a.pretrain(s(0.4), Some(s(9.0))).unwrap().item(), 0.4);
    assert_eq!(b.pretrain(s(0.4), Some(s(0.7))).unwrap().item(), 4.0 + 0.7);
    assert!("C".parse::<ConfigKind>().is_err());
}

#[test]
fn sample_weight_scales_its_term() {
    let tape = Tape::new();
    let (x, y) = (tape.scalar(0.6), tape.scalar(0.2));
    assert!((loss_ab(x, y, (1.0, 1.0)).unwrap().item() - 0.8).abs() < 1e-15);
    assert!((loss_ab(x, y, (0.5, 1.0)).unwrap().item() - 0.5).abs() < 1e-15);
}

/// Two scales, four frames, generator outputs written by hand.
#[test]
fn transformation_loss_on_a_toy_encoder() {
    let mut cfg = ModelConfig::tiny(2, 4, 4);
    cfg.constants = ReconstructionConstants::default();
    let input = |signal: Vec<f64>, mask: Vec<f64>| ModelInput { mean_logf0: 0.0, signal, voicing_mask: mask, valid_length: 4 };
    let a = input(vec![4.0, 4.1, 4.2, 4.3], vec![1.0, 1.0, 0.0, 1.0]);
    let b = input(vec![5.0, 5.2, 5.1, 4.9], vec![1.0, 0.0, 1.0, 1.0]);
    let pair = PreparedPair {
        utterance_id: "toy".into(),
        attitudes: ["x".into(), "y".into()],
        joint_mask: vec![1.0, 0.0, 0.0, 1.0],
        a,
        b,
    };
    let tape = Tape::new();
    let scales = tape.constant(vec![2], vec![2.0, 8.0]).unwrap();
    let zero = tape.constant(vec![2, 4], vec![0.0; 8]).unwrap();
    let bound = Bound { raw: scales, scales, classifier: vec![], g_ab: vec![], g_ba: vec![], d_a: vec![], d_b: vec![] };
    let (mean_a, mean_b) = (4.15, 5.05);
    let enc = Encoded { plane_a: zero, plane_b: zero, mean_a, mean_b, blocks_a: zero, blocks_b: zero };
    let ab = [0.5, -1.0, 2.0, 0.25, 1.5, 0.0, -0.5, 3.0];
    let ba = [-0.2, 0.4, 0.0, 1.0, 0.3, -0.6, 0.9, 0.1];
    let conv = Converted {
        ab: tape.constant(vec![1, 2, 4], ab.to_vec()).unwrap(),
        ba: tape.constant(vec![1, 2, 4], ba.to_vec()).unwrap(),
    };
    let v = ab_loss(&bound, &enc, &conv, &pair, &cfg, (0.7, 1.3)).unwrap().item();

    let c = 0.125 * 1.2f64.sqrt() / (3.541 * 0.867);
    let cell = 2.0 / 0.125;
    let (w1, w2) = (cell / (2.0 * 1.2f64).sqrt(), cell / (8.0 * 1.2f64).sqrt());
    let side = |g: &[f64], mean: f64, target: &ModelInput| {
        let (mut s, mut n) = (0.0, 0.0);
        for t in 0..4 {
            let r = c * (w1 * g[t] + w2 * g[4 + t]) + mean;
            s += target.voicing_mask[t] * (r - target.signal[t]).abs();
            n += target.voicing_mask[t];
        }
        s / n
    };
    let hand = 0.7 * side(&ab, mean_a, &pair.b) + 1.3 * side(&ba, mean_b, &pair.a);
    assert!((v - hand).abs() < 1e-12, "{v} vs {hand}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn unvoiced_frames_do_not_matter(
        vals in prop::collection::vec(-3.0f64..3.0, 24),
        noise in prop::collection::vec(-50.0f64..50.0, 24),
        voiced in prop::collection::vec(any::<bool>(), 24),
    ) {
        let mut mask: Vec<f64> = voiced.iter().map(|&v| v as u8 as f64).collect();
        mask[0] = 1.0;
        let tape = Tape::new();
        let target: Vec<f64> = vals.iter().map(|v| v * 0.5).collect();
        let target2: Vec<f64> = target.iter().zip(&noise).zip(&mask).map(|((t, n), m)| if *m == 0.0 { t + n } else { *t }).collect();
        let rec = tape.constant(vec![24], vals.clone()).unwrap();
        let rec2 = tape.constant(vec![24], vals.iter().zip(&noise).zip(&mask).map(|((v, n), m)| if *m == 0.0 { v - n } else { *v }).collect()).unwrap();
        let l1 = masked_signal_l1(rec, &target, &mask).unwrap().item();
        let l2 = masked_signal_l1(rec2, &target2, &mask).unwrap().item();
        prop_assert!(l1 >= 0.0);
        prop_assert!((l1 - l2).abs() < 1e-12);

        let planes = |v: &[f64]| tape.constant(vec![1, 4, 6], v.to_vec()).unwrap();
        let wmask = window_mask(&mask[..6], 6, 4, 6);
        let d1 = loss_dual(planes(&vals), planes(&target), planes(&target), planes(&vals), wmask.clone(), false).unwrap().item();
        let shuffled: Vec<f64> = vals.iter().zip(&noise).enumerate().map(|(k, (v, n))| if wmask[k] == 0.0 { v + n } else { *v }).collect();
        let d2 = loss_dual(planes(&shuffled), planes(&target), planes(&target), planes(&vals), wmask, false).unwrap().item();
        prop_assert!(d1 >= 0.0);
        prop_assert!((d1 - d2).abs() < 1e-12);
    }

    #[test]
    fn losses_are_non_negative(logits in prop::collection::vec(-30.0f64..30.0, 2..12), p in 0.001f64..0.999) {
        let tape = Tape::new();
        let n = logits.len();
        let l = tape.constant(vec![n, 1], logits.clone()).unwrap();
        prop_assert!(adv_d(l, l).unwrap().item() >= 0.0);
        prop_assert!(adv_g(l).item() >= 0.0);
        let probs = tape.constant(vec![1, 2], vec![p, 1.0 - p]).unwrap();
        prop_assert!(loss_cl(probs, &[1]).unwrap().item() >= 0.0);
    }

    #[test]
    fn composition_is_linear(x in 0.0f64..5.0, y in 0.0f64..5.0, z in 0.0f64..5.0, d in 0.01f64..1.0) {
        for w in [LossWeights::for_config(ConfigKind::A), LossWeights::for_config(ConfigKind::B)] {
            let base = w.dualgan_total(x, y, z);
            prop_assert!((w.dualgan_total(x + d, y, z) - base - w.lambda * d).abs() < 1e-9);
            prop_assert!((w.dualgan_total(x, y + d, z) - base - d).abs() < 1e-9);
            prop_assert!((w.dualgan_total(x, y, z + d) - base - w.gamma * d).abs() < 1e-9);
            let p = w.pretrain_total(x, y);
            prop_assert!((w.pretrain_total(x + d, y) - p - w.alpha * d).abs() < 1e-9);
            prop_assert!((w.pretrain_total(x, y + d) - p - w.beta * d).abs() < 1e-9);
        }
    }
}
