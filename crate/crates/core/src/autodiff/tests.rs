use super::{load_tensors, save_tensors, NodeId, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let len: usize = shape.iter().product();
    let values: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::from_values(shape, values).unwrap()
}

/// Naive cross-correlation, written independently of the tape implementation.
#[allow(clippy::too_many_arguments)]
fn naive_conv(
    input: &[f64],
    (c_in, h, w): (usize, usize, usize),
    weight: &[f64],
    (c_out, k): (usize, usize),
    bias: &[f64],
    stride: usize,
    padding: usize,
) -> Vec<f64> {
    let oh = (h + 2 * padding - k) / stride + 1;
    let ow = (w + 2 * padding - k) / stride + 1;
    let mut out = vec![0.0; c_out * oh * ow];
    for oc in 0..c_out {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = bias[oc];
                for c in 0..c_in {
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (oy * stride + ky) as isize - padding as isize;
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if iy >= 0 && iy < h as isize && ix >= 0 && ix < w as isize {
                                acc += input[(c * h + iy as usize) * w + ix as usize]
                                    * weight[((oc * c_in + c) * k + ky) * k + kx];
                            }
                        }
                    }
                }
                out[(oc * oh + oy) * ow + ox] = acc;
            }
        }
    }
    out
}

#[test]
fn conv_matches_naive_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (c_in, h, w, c_out, k, stride, padding) in
        [(1, 6, 6, 1, 3, 1, 0), (1, 6, 6, 4, 3, 1, 1), (3, 8, 7, 5, 3, 2, 1), (2, 5, 5, 3, 1, 1, 0)]
    {
        let input = rand_tensor(&[c_in, h, w], &mut rng);
        let weight = rand_tensor(&[c_out, c_in, k, k], &mut rng);
        let bias = rand_tensor(&[c_out], &mut rng);
        let want = naive_conv(
            input.values(),
            (c_in, h, w),
            weight.values(),
            (c_out, k),
            bias.values(),
            stride,
            padding,
        );

        let mut tape: Tape<f64> = Tape::new();
        let x = tape.input(input);
        let wid = tape.input(weight);
        let bid = tape.input(bias);
        let y = tape.conv2d(x, wid, bid, stride, padding).unwrap();
        let got = tape.value(y).values();
        assert_eq!(got.len(), want.len());
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }
}

#[test]
fn conv_batched_equals_per_image() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let images: Vec<Tensor<f64>> = (0..3).map(|_| rand_tensor(&[2, 6, 6], &mut rng)).collect();
    let weight = rand_tensor(&[4, 2, 3, 3], &mut rng);
    let bias = rand_tensor(&[4], &mut rng);

    let mut batched = Vec::new();
    for img in &images {
        batched.extend_from_slice(img.values());
    }
    let mut tape: Tape<f64> = Tape::new();
    let x = tape.input(Tensor::from_values(&[3, 2, 6, 6], batched).unwrap());
    let wid = tape.input(weight.clone());
    let bid = tape.input(bias.clone());
    let y = tape.conv2d(x, wid, bid, 1, 1).unwrap();
    let batch_out = tape.value(y).values().to_vec();

    for (b, img) in images.iter().enumerate() {
        let mut single: Tape<f64> = Tape::new();
        let x = single.input(img.clone());
        let wid = single.input(weight.clone());
        let bid = single.input(bias.clone());
        let y = single.conv2d(x, wid, bid, 1, 1).unwrap();
        let out = single.value(y).values();
        let chunk = &batch_out[b * out.len()..(b + 1) * out.len()];
        assert_eq!(out, chunk);
    }
}

#[test]
fn conv_identity_and_zero_kernels() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let input = rand_tensor(&[1, 5, 5], &mut rng);

    let mut tape: Tape<f64> = Tape::new();
    let x = tape.input(input.clone());
    let wid = tape.input(Tensor::from_values(&[1, 1, 1, 1], vec![1.0]).unwrap());
    let bid = tape.input(Tensor::from_values(&[1], vec![0.0]).unwrap());
    let y = tape.conv2d(x, wid, bid, 1, 0).unwrap();
    assert_eq!(tape.value(y).values(), input.values());

    let mut tape: Tape<f64> = Tape::new();
    let x = tape.input(input);
    let wid = tape.input(Tensor::zeros(&[2, 1, 3, 3]));
    let bid = tape.input(Tensor::from_values(&[2], vec![0.5, -0.25]).unwrap());
    let y = tape.conv2d(x, wid, bid, 1, 1).unwrap();
    for (i, &v) in tape.value(y).values().iter().enumerate() {
        assert_eq!(v, if i < 25 { 0.5 } else { -0.25 });
    }
}

#[test]
fn conv_rejects_channel_mismatch() {
    let mut tape: Tape<f64> = Tape::new();
    let x = tape.input(Tensor::zeros(&[2, 5, 5]));
    let wid = tape.input(Tensor::zeros(&[4, 3, 3, 3]));
    let bid = tape.input(Tensor::zeros(&[4]));
    assert!(tape.conv2d(x, wid, bid, 1, 1).is_err());
}

#[test]
fn maxpool_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let input = rand_tensor(&[1, 8, 8], &mut rng);
    let mut tape: Tape<f64> = Tape::new();
    let x = tape.input(input.clone());
    let y = tape.maxpool2d(x, 2, 2).unwrap();
    let got = tape.value(y).values();

    for oy in 0..4 {
        for ox in 0..4 {
            let mut want = f64::NEG_INFINITY;
            for wy in 0..2 {
                for wx in 0..2 {
                    want = want.max(input.values()[(oy * 2 + wy) * 8 + ox * 2 + wx]);
                }
            }
            assert_eq!(got[oy * 4 + ox], want);
        }
    }
}

#[test]
fn maxpool_small_cases_and_errors() {
    let mut tape: Tape<f64> = Tape::new();
    let x = tape.input(Tensor::from_values(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let y = tape.maxpool2d(x, 2, 2).unwrap();
    assert_eq!(tape.value(y).values(), &[4.0]);

    let x = tape.input(Tensor::zeros(&[1, 2, 2]));
    assert!(tape.maxpool2d(x, 3, 1).is_err());
}

/// Constant input: pooling backward sends all gradient to each window's first
/// element.
#[test]
fn maxpool_tie_breaks_to_first_element() {
    let mut tape: Tape<f64> = Tape::new();
    let x = tape.input(Tensor::from_values(&[1, 2, 2], vec![0.7; 4]).unwrap());
    let y = tape.maxpool2d(x, 2, 2).unwrap();
    let m = tape.mean(y);
    tape.backward(m).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[1.0, 0.0, 0.0, 0.0]);
}

#[test]
fn dense_identity_zero_and_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);

    let mut tape: Tape<f64> = Tape::new();
    let x = tape.input(Tensor::from_values(&[3], vec![1.0, -2.0, 0.5]).unwrap());
    let eye = Tensor::from_values(&[3, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
    let wid = tape.input(eye);
    let bid = tape.input(Tensor::zeros(&[3]));
    let y = tape.dense(x, wid, bid).unwrap();
    assert_eq!(tape.value(y).values(), &[1.0, -2.0, 0.5]);

    let wid = tape.input(Tensor::zeros(&[3, 2]));
    let bid = tape.input(Tensor::from_values(&[2], vec![0.25, -1.5]).unwrap());
    let y = tape.dense(x, wid, bid).unwrap();
    assert_eq!(tape.value(y).values(), &[0.25, -1.5]);

    let input = rand_tensor(&[4, 6], &mut rng);
    let weight = rand_tensor(&[6, 3], &mut rng);
    let bias = rand_tensor(&[3], &mut rng);
    let mut tape: Tape<f64> = Tape::new();
    let x = tape.input(input.clone());
    let wid = tape.input(weight.clone());
    let bid = tape.input(bias.clone());
    let y = tape.dense(x, wid, bid).unwrap();
    for r in 0..4 {
        for cidx in 0..3 {
            let mut want = bias.values()[cidx];
            for j in 0..6 {
                want += input.values()[r * 6 + j] * weight.values()[j * 3 + cidx];
            }
            let got = tape.value(y).values()[r * 3 + cidx];
            assert!((got - want).abs() < 1e-6);
        }
    }

    let mut tape: Tape<f64> = Tape::new();
    let x = tape.input(Tensor::zeros(&[4]));
    let wid = tape.input(Tensor::zeros(&[3, 2]));
    let bid = tape.input(Tensor::zeros(&[2]));
    assert!(tape.dense(x, wid, bid).is_err());
}

#[test]
fn activation_values_and_gradients() {
    let mut tape: Tape<f64> = Tape::new();
    let x = tape.input(Tensor::scalar(0.0));
    let y = tape.tanh(x);
    assert_eq!(tape.value(y).item(), 0.0);
    tape.backward(y).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[1.0]);

    let mut tape: Tape<f64> = Tape::new();
    let x = tape.input(Tensor::scalar(-2.0));
    let y = tape.relu(x);
    assert_eq!(tape.value(y).item(), 0.0);
    tape.backward(y).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[0.0]);

    let mut tape: Tape<f64> = Tape::new();
    let x = tape.input(Tensor::scalar(3.0));
    let y = tape.square(x);
    assert_eq!(tape.value(y).item(), 9.0);
    tape.backward(y).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[6.0]);

    // Subgradient conventions at the kinks.
    let mut tape: Tape<f64> = Tape::new();
    let x = tape.input(Tensor::scalar(0.0));
    let y = tape.abs(x);
    tape.backward(y).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[0.0]);

    let mut tape: Tape<f64> = Tape::new();
    let x = tape.input(Tensor::scalar(0.0));
    let y = tape.relu(x);
    tape.backward(y).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[0.0]);
}

#[test]
fn reduce_max_takes_first_maximum() {
    let mut tape: Tape<f64> = Tape::new();
    let x = tape.input(Tensor::from_values(&[4], vec![1.0, 3.0, 3.0, 2.0]).unwrap());
    let y = tape.reduce_max(x);
    assert_eq!(tape.value(y).item(), 3.0);
    tape.backward(y).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[0.0, 1.0, 0.0, 0.0]);
}

#[test]
fn slice_mean_and_elementwise_shapes() {
    let mut tape: Tape<f64> = Tape::new();
    let x = tape.input(Tensor::from_values(&[5], vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap());
    let a = tape.slice(x, 0, 4).unwrap();
    let b = tape.slice(x, 1, 4).unwrap();
    let d = tape.sub(a, b).unwrap();
    assert_eq!(tape.value(d).values(), &[-1.0; 4]);
    let m = tape.mean(d);
    assert_eq!(tape.value(m).item(), -1.0);
    tape.backward(m).unwrap();
    // The mean telescopes to (x[0] − x[4])/4, so interior gradients cancel.
    let g = tape.grad(x).unwrap();
    assert!((g[0] - 0.25).abs() < 1e-12);
    for &v in &g[1..4] {
        assert!(v.abs() < 1e-12);
    }
    assert!((g[4] + 0.25).abs() < 1e-12);

    assert!(tape.slice(x, 3, 3).is_err());
    let y2 = tape.input(Tensor::zeros(&[3]));
    assert!(tape.add(x, y2).is_err());
    assert!(tape.reshape(x, &[2, 2]).is_err());
}

#[test]
fn backward_requires_scalar_loss() {
    let mut tape: Tape<f64> = Tape::new();
    let x = tape.input(Tensor::zeros(&[3]));
    let y = tape.relu(x);
    assert!(tape.backward(y).is_err());
}

#[test]
fn backward_accumulates_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let input = rand_tensor(&[4], &mut rng);
    let mut tape: Tape<f64> = Tape::new();
    let x = tape.input(input);
    let sq = tape.square(x);
    let t = tape.tanh(sq);
    let loss = tape.mean(t);
    tape.backward(loss).unwrap();
    let once: Vec<f64> = tape.grad(x).unwrap().to_vec();
    let mid: Vec<f64> = tape.grad(sq).unwrap().to_vec();
    tape.backward(loss).unwrap();
    for (a, b) in tape.grad(x).unwrap().iter().zip(&once) {
        assert_eq!(*a, 2.0 * b);
    }
    for (a, b) in tape.grad(sq).unwrap().iter().zip(&mid) {
        assert_eq!(*a, 2.0 * b);
    }

    tape.zero_grads();
    assert!(tape.grad(x).is_none());
    tape.backward(loss).unwrap();
    for (a, b) in tape.grad(x).unwrap().iter().zip(&once) {
        assert_eq!(a, b);
    }
}

#[test]
fn gradient_of_parameter_sum_is_one() {
    let mut tape: Tape<f64> = Tape::new();
    let x = tape.input(Tensor::from_values(&[6], vec![0.3; 6]).unwrap());
    let m = tape.mean(x);
    let loss = tape.scale(m, 6.0);
    tape.backward(loss).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[1.0; 6]);
}

#[test]
fn forward_is_deterministic_replay() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let input = rand_tensor(&[1, 6, 6], &mut rng);
    let weight = rand_tensor(&[2, 1, 3, 3], &mut rng);
    let bias = rand_tensor(&[2], &mut rng);

    let run = || -> Vec<f64> {
        let mut tape: Tape<f64> = Tape::new();
        let x = tape.input(input.clone());
        let wid = tape.input(weight.clone());
        let bid = tape.input(bias.clone());
        let c = tape.conv2d(x, wid, bid, 1, 1).unwrap();
        let r = tape.relu(c);
        let p = tape.maxpool2d(r, 2, 2).unwrap();
        tape.value(p).values().to_vec()
    };
    assert_eq!(run(), run());
}

/// Central finite differences against backward gradients for a composite
/// graph exercising every primitive that feeds the real networks.
#[test]
fn finite_difference_check_composite() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let input = rand_tensor(&[2, 6, 6], &mut rng);
    let conv_w = rand_tensor(&[3, 2, 3, 3], &mut rng);
    let conv_b = rand_tensor(&[3], &mut rng);
    let dense_w = rand_tensor(&[27, 4], &mut rng);
    let dense_b = rand_tensor(&[4], &mut rng);

    let eval = |tensors: &[Tensor<f64>]| -> (f64, Vec<Vec<f64>>) {
        let mut tape: Tape<f64> = Tape::new();
        let ids: Vec<NodeId> = tensors.iter().map(|t| tape.input(t.clone())).collect();
        let c = tape.conv2d(ids[0], ids[1], ids[2], 1, 1).unwrap();
        let r = tape.relu(c);
        let p = tape.maxpool2d(r, 2, 2).unwrap();
        let flat = tape.reshape(p, &[1, 27]).unwrap();
        let d = tape.dense(flat, ids[3], ids[4]).unwrap();
        let t = tape.tanh(d);
        let e = tape.exp(t);
        let a = tape.abs(e);
        let sq = tape.square(a);
        let v = tape.reshape(sq, &[4]).unwrap();
        let head = tape.slice(v, 0, 3).unwrap();
        let tail = tape.slice(v, 1, 3).unwrap();
        let diff = tape.sub(head, tail).unwrap();
        let sc = tape.scale(diff, -1.7);
        let of = tape.offset(sc, 0.3);
        let mx = tape.reduce_max(v);
        let mn = tape.mean(of);
        let both = tape.add(mx, mn).unwrap();
        let loss = tape.square(both);
        tape.backward(loss).unwrap();
        let grads = ids.iter().map(|&id| tape.grad(id).unwrap_or(&[]).to_vec()).collect();
        (tape.value(loss).item(), grads)
    };

    let tensors = vec![input, conv_w, conv_b, dense_w, dense_b];
    let (_, grads) = eval(&tensors);

    let h = 1e-5;
    let mut checked = 0;
    for ti in 0..tensors.len() {
        let len = tensors[ti].len();
        for _ in 0..8 {
            let j = rng.gen_range(0..len);
            let mut plus = tensors.clone();
            plus[ti].values_mut()[j] += h;
            let mut minus = tensors.clone();
            minus[ti].values_mut()[j] -= h;
            let fd = (eval(&plus).0 - eval(&minus).0) / (2.0 * h);
            let ad = grads[ti][j];
            let rel = (ad - fd).abs() / ad.abs().max(fd.abs()).max(1e-6);
            assert!(rel < 1e-6, "tensor {ti} coord {j}: ad {ad} vs fd {fd} (rel {rel:.2e})");
            checked += 1;
        }
    }
    assert_eq!(checked, 40);
}

#[test]
fn checkpoint_round_trips() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("params.ckpt");

    let tensors: Vec<Tensor<f32>> = vec![
        Tensor::from_values(&[2, 3], (0..6).map(|i| i as f32 * 0.5 - 1.0).collect()).unwrap(),
        Tensor::from_values(&[4], (0..4).map(|_| rng.gen_range(-1.0f32..1.0)).collect()).unwrap(),
    ];
    save_tensors(&path, &tensors).unwrap();
    let loaded = load_tensors(&path).unwrap();
    assert_eq!(tensors, loaded);

    // f64 tensors survive via the f32 wire format.
    let t64: Vec<Tensor<f64>> = vec![Tensor::from_values(&[2], vec![0.25, -0.75]).unwrap()];
    save_tensors(&path, &t64).unwrap();
    let loaded = load_tensors(&path).unwrap();
    assert_eq!(loaded[0].values(), &[0.25f32, -0.75]);

    // Corruption is detected.
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 1]).unwrap();
    assert!(load_tensors(&path).is_err());
    std::fs::write(&path, b"NOT-A-CKPT\nx\n").unwrap();
    assert!(load_tensors(&path).is_err());
}
