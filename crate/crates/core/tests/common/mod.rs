//! Direct-summation reference implementations, independent of the GEMM
//! lowering in the library.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use valveseg::{LabelMap, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// `max|a − b| / max|b|` over all elements.
pub fn rel_error(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    let diff = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    let scale = b.data().iter().map(|y| y.abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// `out[n,f,oy,ox] = b[f] + Σ x[n,c,oy·s+ky−p, ox·s+kx−p] · w[f,c,ky,kx]`.
pub fn conv2d(x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64], stride: usize, pad: usize) -> Tensor<f64> {
    let [n, c, h, wd] = x.shape().dims();
    let [f, _, k, _] = w.shape().dims();
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (wd + 2 * pad - k) / stride + 1;
    Tensor::from_fn([n, f, oh, ow], |[ni, fi, oy, ox]| {
        let mut acc = b[fi];
        for ci in 0..c {
            for ky in 0..k {
                for kx in 0..k {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    let ix = (ox * stride + kx) as isize - pad as isize;
                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                        acc += x.get([ni, ci, iy as usize, ix as usize]) * w.get([fi, ci, ky, kx]);
                    }
                }
            }
        }
        acc
    })
}

/// Scatter form: every input pixel stamps `x · w[c,f]` at `iy·s + ky − p`.
pub fn transposed_conv2d(x: &Tensor<f64>, w: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
    let [n, c, h, wd] = x.shape().dims();
    let [_, f, k, _] = w.shape().dims();
    let oh = (h - 1) * stride + k - 2 * pad;
    let ow = (wd - 1) * stride + k - 2 * pad;
    let mut out = Tensor::zeros([n, f, oh, ow]);
    for ni in 0..n {
        for ci in 0..c {
            for iy in 0..h {
                for ix in 0..wd {
                    let v = x.get([ni, ci, iy, ix]);
                    for fi in 0..f {
                        for ky in 0..k {
                            for kx in 0..k {
                                let oy = (iy * stride + ky) as isize - pad as isize;
                                let ox = (ix * stride + kx) as isize - pad as isize;
                                if oy >= 0 && ox >= 0 && (oy as usize) < oh && (ox as usize) < ow {
                                    let idx = [ni, fi, oy as usize, ox as usize];
                                    out.set(idx, out.get(idx) + v * w.get([ci, fi, ky, kx]));
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn relu(x: &Tensor<f64>) -> Tensor<f64> {
    Tensor::from_fn(x.shape(), |i| x.get(i).max(0.0))
}

pub fn mul(a: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
    Tensor::from_fn(a.shape(), |i| a.get(i) * b.get(i))
}

pub fn add(a: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
    Tensor::from_fn(a.shape(), |i| a.get(i) + b.get(i))
}

/// Mean over pixels of `−w[y]·log softmax(z)[y]`.
pub fn softmax_ce(z: &Tensor<f64>, labels: &LabelMap, weights: Option<&[f64]>) -> f64 {
    let [n, c, h, w] = z.shape().dims();
    let mut total = 0.0;
    for ni in 0..n {
        for y in 0..h {
            for x in 0..w {
                let t = labels.get(ni, y, x) as usize;
                let m = (0..c).map(|k| z.get([ni, k, y, x])).fold(f64::NEG_INFINITY, f64::max);
                let lse = m + (0..c).map(|k| (z.get([ni, k, y, x]) - m).exp()).sum::<f64>().ln();
                let wt = weights.map_or(1.0, |ws| ws[t]);
                total += wt * (lse - z.get([ni, t, y, x]));
            }
        }
    }
    total / (n * h * w) as f64
}

/// Per-class `(intersection, union)` by scanning every pixel for every class.
pub fn iou_counts(pred: &LabelMap, gt: &LabelMap, classes: usize) -> Vec<(u64, u64)> {
    (0..classes)
        .map(|c| {
            let mut i = 0;
            let mut u = 0;
            for (&p, &g) in pred.data().iter().zip(gt.data()) {
                let (a, b) = (p as usize == c, g as usize == c);
                i += (a && b) as u64;
                u += (a || b) as u64;
            }
            (i, u)
        })
        .collect()
}

/// A plain net carrying the gated net's weights, with the image branch of
/// the valve layer as its first conv.
pub fn plain_twin<T: valveseg::tensor::Scalar>(gated: &valveseg::fcn::Network<T>) -> valveseg::fcn::Network<T> {
    let spec = valveseg::fcn::NetworkSpec {
        seg_channels: None,
        ..gated.spec().clone()
    };
    let params = gated
        .named_params()
        .filter(|(n, _)| !n.starts_with("enc1.valve"))
        .map(|(n, t)| (n.replace("enc1.image", "enc1.conv"), t.clone()))
        .collect();
    valveseg::fcn::Network::from_params(spec, params).unwrap()
}

pub fn random_image(rng: &mut ChaCha8Rng, n: usize, size: usize) -> Tensor<f32> {
    Tensor::from_fn([n, 3, size, size], |_| rng.gen_range(0.0..1.0))
}

pub fn random_labels(rng: &mut ChaCha8Rng, n: usize, size: usize, classes: u8) -> LabelMap {
    LabelMap::new(
        n,
        size,
        size,
        (0..n * size * size).map(|_| rng.gen_range(0..classes)).collect(),
    )
    .unwrap()
}
