//! Optimized paths against direct loop implementations.

mod common;

use lmfn::attention::{acfm, alfm, DEFAULT_ATTENTION_BUDGET};
use lmfn::metrics::{psnr, report, ssim};
use lmfn::train::blur::apply_kernel;
use lmfn::train::{make_blur_kernel, Adam, AdamConfig, BlurSpec, Checkpoint};
use lmfn::{ParamStore, Shape, Tape, Tensor};
use rand::Rng;

use common::*;

#[test]
fn conv2d_matches_direct_loops() {
    let mut r = rng(1);
    let cases = [
        ([2, 3, 8, 8], [4, 3, 3, 3], 1, (1, 1)),
        ([2, 3, 8, 8], [4, 3, 3, 3], 2, (1, 1)),
        ([1, 2, 7, 5], [3, 2, 1, 1], 1, (0, 0)),
        ([2, 1, 6, 4], [1, 1, 3, 1], 1, (1, 0)),
        ([1, 4, 8, 8], [2, 4, 2, 2], 2, (0, 0)),
    ];
    for (xs, ws, stride, pad) in cases {
        let x = random(xs, &mut r);
        let w = random(ws, &mut r);
        let b = random([1, 1, 1, ws[0]], &mut r);
        let (shape, want) = naive_conv(&x, &w, &b, stride, pad);
        let mut tape = Tape::new();
        let (xv, wv, bv) = (tape.leaf(x), tape.leaf(w), tape.leaf(b));
        let y = tape.conv2d_padded(xv, wv, bv, stride, pad).unwrap();
        assert_eq!(tape.shape(y), shape);
        assert_close(tape.value(y).data(), &want, 1e-5, "conv2d");
    }
}

#[test]
fn matmul_matches_direct_loops() {
    let mut r = rng(2);
    let a = random([2, 3, 5, 7], &mut r);
    let b = random([2, 3, 7, 4], &mut r);
    let want = naive_matmul(&a, &b);
    let mut tape = Tape::new();
    let (av, bv) = (tape.leaf(a), tape.leaf(b));
    let y = tape.matmul(av, bv).unwrap();
    assert_close(tape.value(y).data(), &want, 1e-5, "matmul");
}

#[test]
fn mse_matches_direct_sum() {
    let mut r = rng(3);
    let a = random([2, 3, 4, 5], &mut r);
    let b = random([2, 3, 4, 5], &mut r);
    let want = naive_mse(&a, &b);
    let mut tape = Tape::new();
    let (av, bv) = (tape.leaf(a), tape.leaf(b));
    let l = tape.mse_loss(av, bv).unwrap();
    assert_close(tape.value(l).data(), &[want], 1e-6, "mse");
}

#[test]
fn softmax_matches_definition() {
    let mut r = rng(4);
    let x = random([2, 1, 3, 6], &mut r);
    let mut want = Vec::new();
    for row in x.data().chunks(6) {
        let e: Vec<f64> = row.iter().map(|v| (*v as f64 * 20.0).exp()).collect();
        let s: f64 = e.iter().sum();
        want.extend(e.iter().map(|v| v / s));
    }
    let scaled = Tensor::from_vec(x.shape(), x.data().iter().map(|v| v * 20.0).collect()).unwrap();
    let mut tape = Tape::new();
    let xv = tape.leaf(scaled);
    let y = tape.softmax(xv).unwrap();
    assert_close(tape.value(y).data(), &want, 1e-6, "softmax");
}

#[test]
fn layer_attention_matches_direct_loops() {
    let mut r = rng(5);
    for theta in [0.5f32, -1.25, 0.0] {
        let x = random([2, 6, 3, 3], &mut r);
        let want = naive_alfm(&x, theta as f64);
        let mut tape = Tape::new();
        let xv = tape.leaf(x);
        let tv = tape.leaf(Tensor::scalar(theta));
        let y = alfm(&mut tape, xv, tv, DEFAULT_ATTENTION_BUDGET).unwrap();
        assert_close(tape.value(y).data(), &want, 1e-5, "alfm");
    }
}

#[test]
fn channel_attention_matches_direct_loops() {
    let mut r = rng(6);
    for alpha in [1.0f32, 0.3, -0.7] {
        let x = random([2, 5, 4, 6], &mut r);
        let ws = random([1, 1, 3, 3], &mut r);
        let wc = random([1, 1, 3, 1], &mut r);
        let (bs, bc) = (r.random_range(-0.5..0.5f32), r.random_range(-0.5..0.5f32));
        let want = naive_acfm(&x, ws.data(), bs, wc.data(), bc, alpha as f64);
        let mut tape = Tape::new();
        let xv = tape.leaf(x);
        let wsv = tape.leaf(ws);
        let bsv = tape.leaf(Tensor::scalar(bs));
        let wcv = tape.leaf(wc);
        let bcv = tape.leaf(Tensor::scalar(bc));
        let av = tape.leaf(Tensor::scalar(alpha));
        let y = acfm(&mut tape, xv, wsv, bsv, wcv, bcv, av).unwrap();
        assert_close(tape.value(y).data(), &want, 1e-5, "acfm");
    }
}

#[test]
fn ssim_matches_direct_windows() {
    let mut r = rng(7);
    for (w, h, c, noise) in [(11, 11, 1, 0.05), (14, 12, 3, 0.2), (16, 13, 1, 0.5)] {
        let a = random_image(w, h, c, &mut r);
        let b = perturbed(&a, noise, &mut r);
        let got = ssim(&a, &b).unwrap();
        let want = naive_ssim(&a, &b);
        assert!((got - want).abs() < 1e-4, "{w}×{h}×{c}: {got} vs {want}");
    }
}

#[test]
fn psnr_matches_formula() {
    let mut r = rng(8);
    let a = random_image(9, 7, 3, &mut r);
    let b = perturbed(&a, 0.1, &mut r);
    let mse = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| (*x as f64 - *y as f64).powi(2))
        .sum::<f64>()
        / a.values().len() as f64;
    let want = 10.0 * (1.0 / mse).log10();
    assert!((psnr(&a, &b).unwrap() - want).abs() < 1e-9);
}

#[test]
fn gaussian_blur_matches_direct_loops() {
    let mut r = rng(9);
    for sigma in [0.6, 1.0, 1.5] {
        let size = 2 * (3.0f64 * sigma).ceil() as usize + 1;
        let half = (size / 2) as f64;
        let mut w: Vec<f64> = (0..size * size)
            .map(|i| {
                let (dy, dx) = ((i / size) as f64 - half, (i % size) as f64 - half);
                (-(dy * dy + dx * dx) / (2.0 * sigma * sigma)).exp()
            })
            .collect();
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= total);
        let k = make_blur_kernel(&BlurSpec::gaussian(sigma)).unwrap();
        assert_eq!(k.size, size);
        for (a, b) in k.weights.iter().zip(&w) {
            assert!((a - b).abs() < 1e-12);
        }
        let img = random_image(8, 7, 3, &mut r);
        let got = apply_kernel(&img, &k);
        assert_close(got.values(), &naive_blur(&img, &w, size), 1e-5, "blur");
    }
}

#[test]
fn motion_blur_matches_direct_loops() {
    let mut r = rng(10);
    for (len, angle) in [(3, 0.0), (5, 90.0), (7, 30.0), (5, 135.0)] {
        let k = make_blur_kernel(&BlurSpec::motion(len, angle)).unwrap();
        let img = random_image(8, 8, 1, &mut r);
        let got = apply_kernel(&img, &k);
        assert_close(
            got.values(),
            &naive_blur(&img, &k.weights, k.size),
            1e-5,
            "motion blur",
        );
    }
}

#[test]
fn pixel_shuffle_follows_sub_pixel_layout() {
    let mut r = rng(11);
    let x = random([2, 8, 3, 2], &mut r);
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let y = tape.pixel_shuffle(xv, 2).unwrap();
    let ys = tape.shape(y);
    assert_eq!(ys, Shape::new(2, 2, 6, 4));
    for n in 0..2 {
        for c in 0..2 {
            for h in 0..6 {
                for w in 0..4 {
                    let src = x.at(n, c * 4 + (h % 2) * 2 + (w % 2), h / 2, w / 2);
                    assert_eq!(tape.value(y).at(n, c, h, w), src);
                }
            }
        }
    }
    let back = tape.pixel_unshuffle(y, 2).unwrap();
    assert_eq!(tape.value(back), &x);
}

#[test]
fn adam_descends_a_parabola() {
    let mut store = ParamStore::new();
    store
        .insert("x", Tensor::scalar(3.0).with_requires_grad(true))
        .unwrap();
    let mut adam = Adam::new(AdamConfig {
        weight_decay: 0.0,
        ..AdamConfig::default()
    });
    for _ in 0..100 {
        store.zero_grad();
        let x = store.get("x").unwrap().data()[0];
        store.get_mut("x").unwrap().accumulate_grad(&[2.0 * x]);
        adam.step(&mut store, 0.1).unwrap();
    }
    let x = store.get("x").unwrap().data()[0];
    assert!(x.abs() < 0.1, "x = {x}");
}

#[test]
fn every_single_bit_flip_is_refused() {
    let bytes = Checkpoint::from_model(&tiny_model(3), None)
        .to_bytes()
        .unwrap();
    let mut r = rng(12);
    let mut positions: Vec<usize> = (0..64.min(bytes.len() * 8)).collect();
    positions.extend((0..2000).map(|_| r.random_range(0..bytes.len() * 8)));
    positions.extend(bytes.len() * 8 - 32..bytes.len() * 8);
    for bit in positions {
        let mut b = bytes.clone();
        b[bit / 8] ^= 1 << (bit % 8);
        assert!(Checkpoint::from_bytes(&b).is_err(), "bit {bit} accepted");
    }
}

#[test]
fn zeroed_model_report_scores_a_black_prediction() {
    let mut model = tiny_model(4);
    for (_, t) in model.params_mut().iter_mut() {
        t.data_mut().fill(0.0);
    }
    let mut r = rng(13);
    let sharp = random_image(13, 11, 3, &mut r);
    let blurred = perturbed(&sharp, 0.1, &mut r);
    let rep = report(&model, &[("a".into(), blurred, sharp.clone())]).unwrap();
    let energy = sharp
        .values()
        .iter()
        .map(|v| (*v as f64).powi(2))
        .sum::<f64>()
        / sharp.values().len() as f64;
    assert!((rep.mean_psnr - 10.0 * (1.0 / energy).log10()).abs() < 1e-6);
    assert_eq!(rep.param_count, Some(model.total_param_count()));
}
