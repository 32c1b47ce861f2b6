use f0dg_tensor::{Padding, Tape, Tensor, TensorError};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

#[test]
fn conv1d_identity_kernel() {
    let tape = Tape::new();
    let x = tape.constant(vec![1, 3], vec![1.0, 2.0, 3.0]).unwrap();
    let k = tape.constant(vec![1, 1, 1], vec![1.0]).unwrap();
    let y = x.conv1d(&k, None, 1, Padding::Same).unwrap();
    assert_eq!(y.value(), vec![1.0, 2.0, 3.0]);
}

#[test]
fn conv1d_zero_input_gives_zero_output() {
    let tape = Tape::new();
    let x = tape.constant(vec![1, 512], vec![0.0; 512]).unwrap();
    let k = tape.constant(vec![1, 1, 7], vec![0.3, -1.0, 2.0, 5.0, 1.0, -4.0, 0.1]).unwrap();
    let y = x.conv1d(&k, None, 1, Padding::Same).unwrap();
    assert!(y.value().iter().all(|&v| v == 0.0));
}

#[test]
fn conv1d_even_kernel_pads_left() {
    // out[t] = x[t-1] + x[t]
    let tape = Tape::new();
    let x = tape.constant(vec![1, 4], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let k = tape.constant(vec![1, 1, 2], vec![1.0, 1.0]).unwrap();
    let y = x.conv1d(&k, None, 1, Padding::Same).unwrap();
    assert_eq!(y.value(), vec![1.0, 1.0, 0.0, 1.0]);
}

#[test]
fn conv1d_rejects_channel_mismatch() {
    let tape = Tape::new();
    let x = tape.constant(vec![2, 4], vec![0.0; 8]).unwrap();
    let k = tape.constant(vec![1, 3, 1], vec![1.0; 3]).unwrap();
    assert!(matches!(x.conv1d(&k, None, 1, Padding::Same), Err(TensorError::Dimension(_))));
}

#[test]
fn conv1d_strided_same_length() {
    let tape = Tape::new();
    let x = tape.constant(vec![2, 1, 9], (0..18).map(|v| v as f64).collect()).unwrap();
    let k = tape.constant(vec![3, 1, 5], vec![0.1; 15]).unwrap();
    let y = x.conv1d(&k, None, 2, Padding::Same).unwrap();
    assert_eq!(y.shape(), vec![2, 3, 5]);
    let v = x.conv1d(&k, None, 2, Padding::Valid).unwrap();
    assert_eq!(v.shape(), vec![2, 3, 3]);
}

#[test]
fn dense_examples() {
    let tape = Tape::new();
    let x = tape.constant(vec![2], vec![3.0, 4.0]).unwrap();
    let eye = tape.constant(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let zero_b = tape.constant(vec![2], vec![0.0, 0.0]).unwrap();
    assert_eq!(x.dense(&eye, &zero_b).unwrap().value(), vec![3.0, 4.0]);

    let zw = tape.constant(vec![2, 2], vec![0.0; 4]).unwrap();
    let b = tape.constant(vec![2], vec![1.0, 2.0]).unwrap();
    assert_eq!(x.dense(&zw, &b).unwrap().value(), vec![1.0, 2.0]);

    let x2 = tape.constant(vec![2], vec![2.0, 3.0]).unwrap();
    let w = tape.constant(vec![2, 2], vec![1.0, 1.0, 1.0, -1.0]).unwrap();
    assert_eq!(x2.dense(&w, &zero_b).unwrap().value(), vec![5.0, -1.0]);

    let bad = tape.constant(vec![3], vec![0.0; 3]).unwrap();
    assert!(matches!(bad.dense(&w, &zero_b), Err(TensorError::Dimension(_))));
}

#[test]
fn activation_examples() {
    let tape = Tape::new();
    let x = tape.constant(vec![3], vec![-1.0, 0.0, 2.0]).unwrap();
    assert_eq!(x.relu().value(), vec![0.0, 0.0, 2.0]);
    let z = tape.constant(vec![2], vec![0.0, 0.0]).unwrap();
    assert_eq!(z.softmax().value(), vec![0.5, 0.5]);
    assert_eq!(tape.scalar(0.0).sigmoid().value(), vec![0.5]);
    assert!(matches!(x.log(), Err(TensorError::Domain(_))));
    let rows = tape.constant(vec![3, 4], (0..12).map(|v| (v as f64 * 0.7).sin() * 30.0).collect()).unwrap();
    for row in rows.softmax().value().chunks(4) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn dropout_behaviour() {
    let tape = Tape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = tape.constant(vec![5], vec![1.0, -2.0, 3.0, 0.5, 9.0]).unwrap();
    assert_eq!(x.dropout(0.0, &mut rng, true).unwrap().value(), x.value());
    assert_eq!(x.dropout(0.5, &mut rng, false).unwrap().value(), x.value());
    assert!(x.dropout(1.0, &mut rng, true).is_err());

    let n = 10_000;
    let ones = tape.constant(vec![n], vec![1.0; n]).unwrap();
    let y = ones.dropout(0.5, &mut rng, true).unwrap().value();
    let survivors = y.iter().filter(|&&v| v != 0.0).count();
    // Oracle: survivors are scaled by 2, so the mean is exactly 2 * survivors / n.
    let mean = y.iter().sum::<f64>() / n as f64;
    assert!((mean - 2.0 * survivors as f64 / n as f64).abs() < 1e-12);
    assert!((mean - 1.0).abs() < 0.05, "mean {mean}");
}

#[test]
fn reduction_examples() {
    let tape = Tape::new();
    let x = tape.constant(vec![2], vec![1.0, 2.0]).unwrap();
    assert_eq!(x.l1_mean(&x).unwrap().item(), 0.0);
    let y = tape.constant(vec![2], vec![2.0, 4.0]).unwrap();
    assert!((x.l1_mean(&y).unwrap().item() - 1.5).abs() < 1e-15);
    let p = tape.constant(vec![2], vec![0.5, 0.5]).unwrap();
    assert!((p.cross_entropy(&[1.0, 0.0]).unwrap().item() - std::f64::consts::LN_2).abs() < 1e-12);
    let p0 = tape.constant(vec![2], vec![0.0, 1.0]).unwrap();
    assert!(matches!(p0.cross_entropy(&[1.0, 0.0]), Err(TensorError::Domain(_))));
}

#[test]
fn backward_simple_rules() {
    let tape = Tape::new();
    let w = tape.leaf(&Tensor::parameter(vec![3], vec![0.2, -0.4, 1.0]).unwrap());
    let unused = tape.leaf(&Tensor::parameter(vec![2], vec![1.0, 1.0]).unwrap());
    let x = tape.constant(vec![3], vec![1.5, 2.5, -3.0]).unwrap();
    let loss = w.mul(&x).unwrap().sum();
    let g = tape.backward(loss).unwrap();
    assert_eq!(g.get(w).unwrap(), &[1.5, 2.5, -3.0]);
    assert!(g.get(unused).is_none());
    assert_eq!(g.get_or_zeros(unused), vec![0.0, 0.0]);
    assert!(matches!(tape.backward(w), Err(TensorError::Contract(_))));
}

#[test]
fn backward_accumulates_over_reuse() {
    let tape = Tape::new();
    let w = tape.leaf(&Tensor::parameter(vec![1], vec![3.0]).unwrap());
    let loss = w.mul(&w).unwrap().add(&w).unwrap().sum();
    let g = tape.backward(loss).unwrap();
    assert_eq!(g.get(w).unwrap(), &[7.0]);
}

#[test]
fn windows_round_trip() {
    let tape = Tape::new();
    let plane: Vec<f64> = (0..3 * 10).map(|v| v as f64).collect();
    let p = tape.constant(vec![3, 10], plane.clone()).unwrap();
    let w = p.to_windows(9, 4).unwrap();
    assert_eq!(w.shape(), vec![3, 3, 4]);
    let back = w.from_windows(9).unwrap().value();
    let expect: Vec<f64> = plane.chunks(10).flat_map(|r| r[..9].to_vec()).collect();
    assert_eq!(back, expect);
}

#[test]
fn matmul_and_narrow() {
    let tape = Tape::new();
    let a = tape.constant(vec![1, 3], vec![1.0, 2.0, 3.0]).unwrap();
    let b = tape.constant(vec![3, 2], vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
    assert!(close(&a.matmul(&b).unwrap().value(), &[4.0, 5.0], 1e-15));
    let n = b.narrow(1, 1, 1).unwrap();
    assert_eq!(n.value(), vec![0.0, 1.0, 1.0]);
}
