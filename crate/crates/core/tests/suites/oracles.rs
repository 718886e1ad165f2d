//! Library kernels against brute-force reference implementations.

use irb_core::autodiff::{AdamConfig, AdamState, Graph};
use irb_core::irb::{self, local_max_mask, strict_peak_mask};
use irb_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Quadruple-loop cross-correlation with zero padding.
pub fn naive_conv(x: &Tensor, w: &Tensor, b: &[f64], stride: usize, pad: usize) -> Vec<f64> {
    let (ci, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (co, k) = (w.shape()[0], w.shape()[2]);
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (wd + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; co * oh * ow];
    for o in 0..co {
        for i in 0..oh {
            for j in 0..ow {
                let mut acc = b[o];
                for c in 0..ci {
                    for di in 0..k {
                        for dj in 0..k {
                            let y = (i * stride + di) as isize - pad as isize;
                            let xx = (j * stride + dj) as isize - pad as isize;
                            if y < 0 || xx < 0 || y >= h as isize || xx >= wd as isize {
                                continue;
                            }
                            acc += x.at(&[c, y as usize, xx as usize]) * w.at(&[o, c, di, dj]);
                        }
                    }
                }
                out[(o * oh + i) * ow + j] = acc;
            }
        }
    }
    out
}

/// Largest absolute deviation from the loop oracle over 100 random
/// configurations with up to 16 channels and 8x8 planes.
pub fn conv2d_max_deviation() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let ci = rng.gen_range(1..=16);
        let co = rng.gen_range(1..=16);
        let h = rng.gen_range(1..=8);
        let w = rng.gen_range(1..=8);
        let k = [1, 3, 5][rng.gen_range(0..3)];
        let pad = rng.gen_range(0..=k / 2);
        if k > h.min(w) + 2 * pad {
            continue;
        }
        let stride = rng.gen_range(1..=2);
        let x = Tensor::uniform(&[ci, h, w], -1.0, 1.0, &mut rng);
        let kern = Tensor::uniform(&[co, ci, k, k], -1.0, 1.0, &mut rng);
        let bias = Tensor::uniform(&[co], -1.0, 1.0, &mut rng);
        let want = naive_conv(&x, &kern, bias.values(), stride, pad);
        let mut g = Graph::new();
        let (xi, ki, bi) = (g.constant(x), g.constant(kern), g.constant(bias.clone()));
        let y = g.conv2d(xi, ki, bi, stride, pad).unwrap();
        for (a, b) in g.value(y).values().iter().zip(&want) {
            worst = worst.max((a - b).abs());
        }
        assert_eq!(g.value(y).len(), want.len());
    }
    worst
}

pub fn spatial_sum_max_deviation() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let x = Tensor::uniform(&[3, 5, 5], -1.0, 1.0, &mut rng);
        let mut g = Graph::new();
        let xi = g.constant(x.clone());
        let s = g.spatial_sum(xi).unwrap();
        for c in 0..3 {
            let mut acc = 0.0;
            for i in 0..5 {
                for j in 0..5 {
                    acc += x.at(&[c, i, j]);
                }
            }
            worst = worst.max((g.value(s).values()[c] - acc).abs());
        }
    }
    worst
}

/// Explicit window scan: the maximum over the clipped window and whether
/// the centre is the unique holder of it.
fn window_scan(x: &Tensor, c: usize, i: usize, j: usize, window: usize) -> (f64, bool) {
    let (h, w) = (x.shape()[1] as isize, x.shape()[2] as isize);
    let r = (window / 2) as isize;
    let centre = x.at(&[c, i, j]);
    let mut best = f64::NEG_INFINITY;
    let mut others_below = true;
    for di in -r..=r {
        for dj in -r..=r {
            let (y, xx) = (i as isize + di, j as isize + dj);
            if y < 0 || xx < 0 || y >= h || xx >= w {
                continue;
            }
            let v = x.at(&[c, y as usize, xx as usize]);
            best = best.max(v);
            if (di, dj) != (0, 0) && v >= centre {
                others_below = false;
            }
        }
    }
    (best, others_below)
}

/// Random maps, half of them drawn from a few integers so ties are common.
fn random_map(rng: &mut ChaCha8Rng, trial: usize) -> Tensor {
    let shape = [rng.gen_range(1..=4), rng.gen_range(5..=9), rng.gen_range(5..=9)];
    let n: usize = shape.iter().product();
    let v = if trial.is_multiple_of(2) {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    } else {
        (0..n).map(|_| f64::from(rng.gen_range(0..3))).collect()
    };
    Tensor::new(&shape, v).unwrap()
}

/// Count of mask entries that disagree with the window-scan oracle for
/// local max selection and strict peaks, over 100 maps and windows 3 and 5.
pub fn mask_mismatches() -> (usize, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (mut lms_bad, mut peak_bad) = (0, 0);
    for trial in 0..100 {
        let x = random_map(&mut rng, trial);
        let (n, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        for window in [3, 5] {
            let lms = local_max_mask(&x, window).unwrap();
            let peaks = strict_peak_mask(&x, window).unwrap();
            for c in 0..n {
                for i in 0..h {
                    for j in 0..w {
                        let (best, unique) = window_scan(&x, c, i, j, window);
                        let idx = (c * h + i) * w + j;
                        let want_lms = if x.at(&[c, i, j]) == best { 1.0 } else { 0.0 };
                        let want_peak = if unique { 1.0 } else { 0.0 };
                        lms_bad += usize::from(lms[idx] != want_lms);
                        peak_bad += usize::from(peaks[idx] != want_peak);
                    }
                }
            }
        }
    }
    (lms_bad, peak_bad)
}

/// Largest deviation of the CACPR output from a loop evaluation of
/// `x * peak * sigmoid(clipped 5x5 mean)`.
pub fn cacpr_max_deviation() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut worst: f64 = 0.0;
    for trial in 0..100 {
        let x = random_map(&mut rng, trial);
        let (n, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let mut g = Graph::new();
        let xi = g.constant(x.clone());
        let out = irb::cacpr(&mut g, xi, 3, 5).unwrap().node;
        let got = g.value(out).values();
        for c in 0..n {
            for i in 0..h {
                for j in 0..w {
                    let (_, unique) = window_scan(&x, c, i, j, 3);
                    let (mut sum, mut cnt) = (0.0, 0.0);
                    for y in i.saturating_sub(2)..=(i + 2).min(h - 1) {
                        for xx in j.saturating_sub(2)..=(j + 2).min(w - 1) {
                            sum += x.at(&[c, y, xx]);
                            cnt += 1.0;
                        }
                    }
                    let kappa = 1.0 / (1.0 + (-sum / cnt).exp());
                    let want = if unique { x.at(&[c, i, j]) * kappa } else { 0.0 };
                    worst = worst.max((got[(c * h + i) * w + j] - want).abs());
                }
            }
        }
    }
    worst
}

/// Distance from 2 after 50 library Adam steps on `(x - 2)^2` from 0 with
/// lr 0.1, and the largest deviation from a scalar reference Adam. The
/// momentum overshoot past 2 is still decaying at step 50.
pub fn adam_scalar() -> (f64, f64) {
    let (lr, b1, b2, eps) = (0.1, 0.9, 0.999, 1e-8);
    let mut params = vec![Tensor::scalar(0.0)];
    let mut state = AdamState::new(&params);
    let cfg = AdamConfig::default();
    let (mut x, mut m, mut v) = (0.0f64, 0.0f64, 0.0f64);
    let mut worst: f64 = 0.0;
    for t in 1..=50 {
        let grad = 2.0 * (params[0].item() - 2.0);
        state.step(&mut params, &[vec![grad]], lr, &cfg).unwrap();
        let gr = 2.0 * (x - 2.0);
        m = b1 * m + (1.0 - b1) * gr;
        v = b2 * v + (1.0 - b2) * gr * gr;
        let mh = m / (1.0 - b1.powi(t));
        let vh = v / (1.0 - b2.powi(t));
        x -= lr * mh / (vh.sqrt() + eps);
        worst = worst.max((params[0].item() - x).abs());
    }
    ((params[0].item() - 2.0).abs(), worst)
}

/// Identical seeds give bit-identical forward values and gradients.
pub fn forward_backward_is_deterministic() -> bool {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let x = Tensor::uniform(&[3, 8, 8], -1.0, 1.0, &mut rng).with_grad();
        let w = Tensor::uniform(&[4, 3, 3, 3], -1.0, 1.0, &mut rng).with_grad();
        let b = Tensor::uniform(&[4], -1.0, 1.0, &mut rng).with_grad();
        let mut g = Graph::new();
        let (xi, wi, bi) = (g.leaf(x), g.leaf(w), g.leaf(b));
        let y = g.conv2d(xi, wi, bi, 1, 1).unwrap();
        let y = g.relu(y).unwrap();
        let s = g.spatial_sum(y).unwrap();
        let s = g.scale(s, 0.05).unwrap();
        let p = g.softmax(s).unwrap();
        let l = g.neg_log_pick(p, 1, 1e-12).unwrap();
        g.backward(l).unwrap();
        let mut out = g.value(l).values().to_vec();
        for id in [xi, wi, bi] {
            out.extend_from_slice(g.grad(id).unwrap());
        }
        out.into_iter().map(f64::to_bits).collect::<Vec<u64>>()
    };
    run() == run()
}
