//! Tape gradients against central finite differences on random small graphs.

use f0dg_tensor::gradcheck::{central_difference, compare, GradCheckConfig};
use f0dg_tensor::{adam_step, AdamState, Padding, Tape, Tensor, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_param(rng: &mut ChaCha8Rng, shape: Vec<usize>, scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::parameter(shape, (0..n).map(|_| rng.random_range(-1.0..1.0) * scale).collect()).unwrap()
}

fn check<F>(params: &mut Vec<Tensor>, loss: F, step: f64)
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    let tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p)).collect();
    let l = loss(&tape, &vars);
    let grads = tape.backward(l).unwrap();
    let analytic: Vec<Vec<f64>> = vars.iter().map(|v| grads.get_or_zeros(*v)).collect();
    let numeric = central_difference(
        params,
        |p| p.iter_mut().collect(),
        |p| {
            let tape = Tape::new();
            let vars: Vec<Var> = p.iter().map(|t| tape.leaf(t)).collect();
            loss(&tape, &vars).item()
        },
        step,
    );
    let cfg = GradCheckConfig { step, ..Default::default() };
    let report = compare(&analytic, &numeric, &cfg);
    assert!(report.passed(), "{:?}", &report.mismatches[..report.mismatches.len().min(5)]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn conv_dense_softmax_graph(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![
            random_param(&mut rng, vec![2, 2, 9], 1.0),
            random_param(&mut rng, vec![3, 2, 3], 0.7),
            random_param(&mut rng, vec![3], 0.3),
            random_param(&mut rng, vec![4, 15], 0.4),
            random_param(&mut rng, vec![4], 0.1),
        ];
        check(&mut params, |_t, v| {
            let h = v[0].conv1d(&v[1], Some(&v[2]), 2, Padding::Same).unwrap().sigmoid();
            let flat = h.reshape(vec![2, 15]).unwrap();
            let p = flat.dense(&v[3], &v[4]).unwrap().softmax();
            p.cross_entropy(&[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap()
        }, 1e-4);
    }

    #[test]
    fn conv2d_pool_graph(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![
            random_param(&mut rng, vec![1, 2, 5, 8], 1.0),
            random_param(&mut rng, vec![3, 2, 3, 3], 0.5),
            random_param(&mut rng, vec![3], 0.2),
        ];
        check(&mut params, |_t, v| {
            let h = v[0].conv2d(&v[1], Some(&v[2]), (2, 1), Padding::Same).unwrap().leaky_relu(0.2);
            let p = h.max_pool_last(4).unwrap();
            p.mul(&p).unwrap().mean()
        }, 1e-6);
    }

    #[test]
    fn shape_ops_graph(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![
            random_param(&mut rng, vec![3, 7], 1.0),
            random_param(&mut rng, vec![2, 3], 1.0),
            random_param(&mut rng, vec![3], 1.0),
        ];
        check(&mut params, |t, v| {
            let w = v[0].to_windows(7, 4).unwrap();
            let u = w.upsample_last(2).unwrap().narrow(2, 1, 4).unwrap();
            let back = u.from_windows(7).unwrap();
            let m = v[1].matmul(&back).unwrap();
            let c = m.concat(&v[1], 1).unwrap();
            let s = v[2].softplus().cumsum().add_scalar(0.5);
            let r = s.log().unwrap().exp().unwrap().sqrt().unwrap();
            let tail = r.reshape(vec![1, 3]).unwrap();
            let d = c.narrow(1, 0, 3).unwrap().mul(&tail.concat(&tail, 0).unwrap()).unwrap();
            let target = t.constant(vec![2, 10], vec![0.05; 20]).unwrap();
            c.sub(&target).unwrap().log_sigmoid().sum().add(&d.sum()).unwrap()
        }, 1e-6);
    }

    #[test]
    fn l1_losses_graph(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![random_param(&mut rng, vec![12], 1.0), random_param(&mut rng, vec![12], 1.0)];
        let mask: Vec<f64> = (0..12).map(|i| if i % 3 == 0 { 0.0 } else { 1.0 }).collect();
        check(&mut params, move |_t, v| {
            let a = v[0].l1_mean(&v[1]).unwrap();
            let b = v[0].scale(2.0).masked_l1(&v[1], mask.clone()).unwrap();
            a.add(&b).unwrap()
        }, 1e-7);
    }

    #[test]
    fn backward_is_linear_in_loss_scale(seed in 0u64..10_000, alpha in -5.0f64..5.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_param(&mut rng, vec![6], 1.0);
        let grads_for = |scale: f64| {
            let tape = Tape::new();
            let v = tape.leaf(&p);
            let l = v.sigmoid().mul(&v).unwrap().sum().scale(scale);
            tape.backward(l).unwrap().get_or_zeros(v)
        };
        let g1 = grads_for(1.0);
        let ga = grads_for(alpha);
        for (a, b) in g1.iter().zip(&ga) {
            prop_assert!((alpha * a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }
}

#[test]
fn identical_seeds_give_identical_values_and_grads() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let x = random_param(&mut rng, vec![2, 3, 16], 1.0);
        let w = random_param(&mut rng, vec![4, 3, 5], 0.5);
        let tape = Tape::new();
        let (xv, wv) = (tape.leaf(&x), tape.leaf(&w));
        let y = xv.conv1d(&wv, None, 2, Padding::Same).unwrap().dropout(0.5, &mut rng, true).unwrap();
        let l = y.relu().mean();
        let g = tape.backward(l).unwrap();
        (l.item().to_bits(), g.get_or_zeros(wv).iter().map(|v| v.to_bits()).collect::<Vec<_>>())
    };
    assert_eq!(run(), run());
}

/// Scripted reference of the published Adam recurrence.
fn scripted_adam(p0: f64, grads: &[f64], lr: f64) -> f64 {
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let (mut m, mut v, mut p) = (0.0, 0.0, p0);
    for (t, g) in grads.iter().enumerate() {
        let t = (t + 1) as i32;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let mh = m / (1.0 - b1.powi(t));
        let vh = v / (1.0 - b2.powi(t));
        p -= lr * mh / (vh.sqrt() + eps);
    }
    p
}

#[test]
fn adam_two_steps_match_scripted_oracle() {
    let lr = 1e-4;
    let mut p = Tensor::parameter(vec![1], vec![0.25]).unwrap();
    let mut st = AdamState::for_params(lr, &[&p]);
    for _ in 0..2 {
        p.accumulate_grad(&[1.0]).unwrap();
        adam_step(&mut [&mut p], &mut st).unwrap();
    }
    let want = scripted_adam(0.25, &[1.0, 1.0], lr);
    assert!((p.values()[0] - want).abs() < 1e-12);
    assert_eq!(st.step, 2);
}
