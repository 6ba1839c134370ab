//! Graph ops against direct nested-loop evaluations in f64.
//!
//! Shared by the per-suite test targets and the acceptance target.

#![allow(dead_code)]

use cdaae_core::{Graph, Scalar, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const CASES: usize = 24;

fn random<T: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<T> {
    let n = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::from_f64(shape, &data).unwrap()
}

fn as_f64<T: Scalar>(t: &Tensor<T>) -> Vec<f64> {
    t.data().iter().map(|v| v.as_f64()).collect()
}

fn max_err<T: Scalar>(got: &Tensor<T>, want: &[f64]) -> f64 {
    assert_eq!(got.numel(), want.len());
    got.data()
        .iter()
        .zip(want)
        .map(|(a, b)| (a.as_f64() - b).abs())
        .fold(0.0, f64::max)
}

#[derive(Clone, Copy, Debug)]
struct ConvCase {
    n: usize,
    c: usize,
    f: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
}

fn conv_case(rng: &mut ChaCha8Rng) -> ConvCase {
    let k = rng.random_range(1..=5);
    let pad = rng.random_range(0..=k / 2 + 1);
    ConvCase {
        n: rng.random_range(1..=3),
        c: rng.random_range(1..=4),
        f: rng.random_range(1..=4),
        h: rng.random_range(k.max(2)..=9),
        w: rng.random_range(k.max(2)..=9),
        k,
        stride: rng.random_range(1..=3),
        pad,
    }
}

fn conv_oracle(x: &[f64], k: &[f64], b: &[f64], cs: ConvCase) -> (Vec<f64>, [usize; 4]) {
    let ho = (cs.h + 2 * cs.pad - cs.k) / cs.stride + 1;
    let wo = (cs.w + 2 * cs.pad - cs.k) / cs.stride + 1;
    let mut y = vec![0.0; cs.n * cs.f * ho * wo];
    for n in 0..cs.n {
        for f in 0..cs.f {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = b[f];
                    for c in 0..cs.c {
                        for ky in 0..cs.k {
                            for kx in 0..cs.k {
                                let iy = (oy * cs.stride + ky) as isize - cs.pad as isize;
                                let ix = (ox * cs.stride + kx) as isize - cs.pad as isize;
                                if iy < 0 || ix < 0 || iy >= cs.h as isize || ix >= cs.w as isize {
                                    continue;
                                }
                                let xv = x[((n * cs.c + c) * cs.h + iy as usize) * cs.w + ix as usize];
                                let kv = k[((f * cs.c + c) * cs.k + ky) * cs.k + kx];
                                acc += xv * kv;
                            }
                        }
                    }
                    y[((n * cs.f + f) * ho + oy) * wo + ox] = acc;
                }
            }
        }
    }
    (y, [cs.n, cs.f, ho, wo])
}

/// Scatter form: every input pixel adds `x · kernel` into the output window.
fn conv_transpose_oracle(x: &[f64], k: &[f64], b: &[f64], cs: ConvCase, out_pad: usize) -> (Vec<f64>, [usize; 4]) {
    let full_h = (cs.h - 1) * cs.stride + cs.k + out_pad;
    let full_w = (cs.w - 1) * cs.stride + cs.k + out_pad;
    let ho = full_h - 2 * cs.pad;
    let wo = full_w - 2 * cs.pad;
    let mut y = vec![0.0; cs.n * cs.f * ho * wo];
    for n in 0..cs.n {
        for f in 0..cs.f {
            for i in 0..ho * wo {
                y[(n * cs.f + f) * ho * wo + i] = b[f];
            }
        }
        for c in 0..cs.c {
            for iy in 0..cs.h {
                for ix in 0..cs.w {
                    let xv = x[((n * cs.c + c) * cs.h + iy) * cs.w + ix];
                    for f in 0..cs.f {
                        for ky in 0..cs.k {
                            for kx in 0..cs.k {
                                let oy = (iy * cs.stride + ky) as isize - cs.pad as isize;
                                let ox = (ix * cs.stride + kx) as isize - cs.pad as isize;
                                if oy < 0 || ox < 0 || oy >= ho as isize || ox >= wo as isize {
                                    continue;
                                }
                                let kv = k[((c * cs.f + f) * cs.k + ky) * cs.k + kx];
                                y[((n * cs.f + f) * ho + oy as usize) * wo + ox as usize] += xv * kv;
                            }
                        }
                    }
                }
            }
        }
    }
    (y, [cs.n, cs.f, ho, wo])
}

pub fn check_conv<T: Scalar>(tol: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..CASES {
        let cs = conv_case(&mut rng);
        let x = random::<T>(&mut rng, &[cs.n, cs.c, cs.h, cs.w]);
        let k = random::<T>(&mut rng, &[cs.f, cs.c, cs.k, cs.k]);
        let b = random::<T>(&mut rng, &[cs.f]);
        let (want, shape) = conv_oracle(&as_f64(&x), &as_f64(&k), &as_f64(&b), cs);
        let mut g = Graph::<T>::new();
        let (xv, kv, bv) = (g.constant(x), g.constant(k), g.constant(b));
        let y = g.conv2d(xv, kv, bv, cs.stride, cs.pad).unwrap();
        assert_eq!(g.value(y).shape(), shape, "{cs:?}");
        let err = max_err(g.value(y), &want);
        assert!(err < tol, "{cs:?}: max error {err:e}");
    }
}

pub fn check_conv_transpose<T: Scalar>(tol: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..CASES {
        let mut cs = conv_case(&mut rng);
        cs.pad = rng.random_range(0..cs.k);
        let out_pad = rng.random_range(0..cs.stride);
        let x = random::<T>(&mut rng, &[cs.n, cs.c, cs.h, cs.w]);
        let k = random::<T>(&mut rng, &[cs.c, cs.f, cs.k, cs.k]);
        let b = random::<T>(&mut rng, &[cs.f]);
        let (want, shape) = conv_transpose_oracle(&as_f64(&x), &as_f64(&k), &as_f64(&b), cs, out_pad);
        let mut g = Graph::<T>::new();
        let (xv, kv, bv) = (g.constant(x), g.constant(k), g.constant(b));
        let y = g.conv2d_transpose(xv, kv, bv, cs.stride, cs.pad, out_pad).unwrap();
        assert_eq!(g.value(y).shape(), shape, "{cs:?} out_pad {out_pad}");
        let err = max_err(g.value(y), &want);
        assert!(err < tol, "{cs:?}: max error {err:e}");
    }
}

pub fn check_dense<T: Scalar>(tol: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..CASES {
        let (n, d, k) = (
            rng.random_range(1..=6),
            rng.random_range(1..=40),
            rng.random_range(1..=20),
        );
        let x = random::<T>(&mut rng, &[n, d]);
        let w = random::<T>(&mut rng, &[d, k]);
        let b = random::<T>(&mut rng, &[k]);
        let (xs, ws, bs) = (as_f64(&x), as_f64(&w), as_f64(&b));
        let mut want = vec![0.0; n * k];
        for i in 0..n {
            for j in 0..k {
                want[i * k + j] = bs[j] + (0..d).map(|p| xs[i * d + p] * ws[p * k + j]).sum::<f64>();
            }
        }
        let mut g = Graph::<T>::new();
        let (xv, wv, bv) = (g.constant(x), g.constant(w), g.constant(b));
        let y = g.dense(xv, wv, bv).unwrap();
        assert_eq!(g.value(y).shape(), [n, k]);
        let err = max_err(g.value(y), &want);
        assert!(err < tol, "dense {n}x{d}x{k}: max error {err:e}");
    }
}

pub fn check_losses<T: Scalar>(tol: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..CASES {
        let n = rng.random_range(1..=50);
        let a = random::<T>(&mut rng, &[n]);
        let b = random::<T>(&mut rng, &[n]);
        let (av, bv) = (as_f64(&a), as_f64(&b));
        let mse = av.iter().zip(&bv).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / n as f64;

        let probs: Vec<f64> = (0..n).map(|_| rng.random_range(0.02..0.98)).collect();
        let targets: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 }).collect();
        let bce = probs
            .iter()
            .zip(&targets)
            .map(|(p, t)| -(t * p.ln() + (1.0 - t) * (1.0 - p).ln()))
            .sum::<f64>()
            / n as f64;
        let logits: Vec<f64> = probs.iter().map(|p| (p / (1.0 - p)).ln()).collect();

        let mut g = Graph::<T>::new();
        let (x, y) = (g.constant(a), g.constant(b));
        let m = g.mse_loss(x, y).unwrap();
        let p = g.constant(Tensor::from_f64(&[n], &probs).unwrap());
        let t = Tensor::from_f64(&[n], &targets).unwrap();
        let l = g.bce_loss(p, &t).unwrap();
        let z = g.constant(Tensor::from_f64(&[n], &logits).unwrap());
        let lz = g.bce_with_logits(z, &t).unwrap();
        assert!(max_err(g.value(m), &[mse]) < tol);
        assert!(max_err(g.value(l), &[bce]) < tol, "bce n={n}");
        assert!(max_err(g.value(lz), &[bce]) < tol, "bce from logits n={n}");
    }
}

/// Every op oracle at both precisions.
pub fn all_ops() {
    check_conv::<f32>(1e-5, 1);
    check_conv::<f64>(1e-10, 2);
    check_conv_transpose::<f32>(1e-5, 3);
    check_conv_transpose::<f64>(1e-10, 4);
    check_dense::<f32>(1e-5, 5);
    check_dense::<f64>(1e-10, 6);
    check_losses::<f32>(1e-5, 7);
    check_losses::<f64>(1e-10, 8);
}
