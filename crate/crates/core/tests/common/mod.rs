//! Independent reference implementations used by the integration suites.
//! Nothing here calls into the GEMM-lowered kernels.
#![allow(dead_code)]

use flowsur::layers::{Layer, Tape};
use flowsur::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn at(t: &Tensor<f64>, c: usize, y: isize, x: isize) -> f64 {
    let s = t.shape();
    let (h, w) = (s[1] as isize, s[2] as isize);
    if y < 0 || x < 0 || y >= h || x >= w {
        0.0
    } else {
        t.data()[c * (h * w) as usize + (y * w + x) as usize]
    }
}

/// Direct 3×3 / pad 1 convolution.
pub fn conv2d_oracle(x: &Tensor<f64>, k: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let o = k.shape()[0];
    let mut out = vec![0.0; o * h * w];
    for oc in 0..o {
        for i in 0..h {
            for j in 0..w {
                let mut acc = b.data()[oc];
                for ic in 0..c {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let kv = k.data()[((oc * c + ic) * 3 + ky) * 3 + kx];
                            acc += kv
                                * at(
                                    x,
                                    ic,
                                    i as isize + ky as isize - 1,
                                    j as isize + kx as isize - 1,
                                );
                        }
                    }
                }
                out[(oc * h + i) * w + j] = acc;
            }
        }
    }
    Tensor::new(vec![o, h, w], out).unwrap()
}

/// Scatter form of the transposed convolution: every input cell spreads
/// `x · w[c, o]` over its 3×3 neighbourhood, cropped to the input extent.
pub fn conv_transpose2d_oracle(x: &Tensor<f64>, k: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let o = k.shape()[1];
    let mut out = vec![0.0; o * h * w];
    for oc in 0..o {
        for v in &mut out[oc * h * w..(oc + 1) * h * w] {
            *v = b.data()[oc];
        }
    }
    for ic in 0..c {
        for i in 0..h {
            for j in 0..w {
                let xv = x.data()[(ic * h + i) * w + j];
                for oc in 0..o {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let yi = i as isize + ky as isize - 1;
                            let yj = j as isize + kx as isize - 1;
                            if yi < 0 || yj < 0 || yi >= h as isize || yj >= w as isize {
                                continue;
                            }
                            let kv = k.data()[((ic * o + oc) * 3 + ky) * 3 + kx];
                            out[(oc * h + yi as usize) * w + yj as usize] += kv * xv;
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![o, h, w], out).unwrap()
}

/// Enumerates every 3×3 window at stride 2 over a −∞-padded input.
pub fn maxpool_oracle(x: &Tensor<f64>) -> Tensor<f64> {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (oh, ow) = ((h + 1) / 2, (w + 1) / 2);
    let mut out = Vec::new();
    for ic in 0..c {
        for oi in 0..oh {
            for oj in 0..ow {
                let mut m = f64::NEG_INFINITY;
                for dy in -1..=1isize {
                    for dx in -1..=1isize {
                        let (y, xx) = (2 * oi as isize + dy, 2 * oj as isize + dx);
                        if y >= 0 && xx >= 0 && y < h as isize && xx < w as isize {
                            m = m.max(x.data()[(ic * h + y as usize) * w + xx as usize]);
                        }
                    }
                }
                out.push(m);
            }
        }
    }
    Tensor::new(vec![c, oh, ow], out).unwrap()
}

/// Closed-form corner-aligned bilinear interpolation, evaluated point by point.
pub fn bilinear_oracle(x: &Tensor<f64>, th: usize, tw: usize) -> Tensor<f64> {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let coord = |o: usize, src: usize, dst: usize| -> f64 {
        if dst == 1 {
            0.0
        } else {
            o as f64 * (src as f64 - 1.0) / (dst as f64 - 1.0)
        }
    };
    let mut out = Vec::new();
    for ic in 0..c {
        for i in 0..th {
            for j in 0..tw {
                let (sy, sx) = (coord(i, h, th), coord(j, w, tw));
                let mut acc = 0.0;
                // tent-weight sum over every source cell
                for y in 0..h {
                    for xx in 0..w {
                        let wy = (1.0 - (sy - y as f64).abs()).max(0.0);
                        let wx = (1.0 - (sx - xx as f64).abs()).max(0.0);
                        acc += wy * wx * x.data()[(ic * h + y) * w + xx];
                    }
                }
                out.push(acc);
            }
        }
    }
    Tensor::new(vec![c, th, tw], out).unwrap()
}

pub fn max_abs_diff(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Central-difference gradient of `f` at `x` with step `h`.
pub fn numeric_gradient(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `‖a − n‖ / max(‖a‖, ‖n‖)`; zero when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).powi(2))
        .sum::<f64>()
        .sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    let scale = na.max(nn);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

pub const FD_STEP: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-4;

/// Prints one acceptance line and returns whether it passed.
pub fn report(criterion: &str, pass: bool, detail: impl std::fmt::Display) -> bool {
    println!(
        "[{}] {criterion}: {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    pass
}

/// Worst relative error over the input gradient and every parameter gradient
/// of `layer`, for the scalar loss `⟨layer(x), r⟩` with a random projection `r`.
pub fn layer_gradient_error(layer: &mut dyn Layer<f64>, x: &Tensor<f64>, seed: u64) -> f64 {
    let mut rng = rng(seed);
    for p in layer.params_mut() {
        p.zero_grad();
    }
    let mut tape = Tape::new();
    let y = layer.forward_train(x, &mut tape).unwrap();
    let r = random_tensor(&mut rng, y.shape());
    let dx = layer.backward(&r, &mut tape).unwrap();
    assert!(tape.is_empty(), "tape not fully consumed");

    let shape = x.shape().to_vec();
    let num_dx = numeric_gradient(x.data(), FD_STEP, |v| {
        let xv = Tensor::new(shape.clone(), v.to_vec()).unwrap();
        layer.forward(&xv).unwrap().dot(&r).unwrap()
    });
    let mut worst = relative_error(dx.data(), &num_dx);

    let n_params = layer.params().len();
    for pi in 0..n_params {
        for which in 0..2 {
            let (values, analytic) = {
                let p = &layer.params()[pi];
                if which == 0 {
                    (p.weight.data().to_vec(), p.grad_weight.data().to_vec())
                } else {
                    (p.bias.data().to_vec(), p.grad_bias.data().to_vec())
                }
            };
            let numeric = numeric_gradient(&values, FD_STEP, |v| {
                {
                    let mut ps = layer.params_mut();
                    let t = if which == 0 {
                        &mut ps[pi].weight
                    } else {
                        &mut ps[pi].bias
                    };
                    t.data_mut().copy_from_slice(v);
                }
                layer.forward(x).unwrap().dot(&r).unwrap()
            });
            {
                let mut ps = layer.params_mut();
                let t = if which == 0 {
                    &mut ps[pi].weight
                } else {
                    &mut ps[pi].bias
                };
                t.data_mut().copy_from_slice(&values);
            }
            worst = worst.max(relative_error(&analytic, &numeric));
        }
    }
    worst
}

/// Result of a sampled whole-network gradient check.
#[derive(Debug, Clone, Copy)]
pub struct NetworkCheck {
    /// Worst per-tensor relative error over the coordinates kept.
    pub worst: f64,
    pub checked: usize,
    /// Coordinates dropped because a ReLU or max-pool switch lies within the
    /// probe step (the steps `h` and `h/10` disagree).
    pub skipped: usize,
}

/// Gradients below this are at the central-difference noise floor for O(1) losses.
pub const NETWORK_GRAD_FLOOR: f64 = 1e-7;

/// Analytic vs central-difference gradients on `per_tensor` random
/// coordinates of every parameter tensor of a network.
pub fn network_gradient_check<N>(
    net: &mut N,
    params: impl Fn(&mut N) -> Vec<&mut flowsur::layers::LayerParams<f64>>,
    accumulate: impl Fn(&mut N) -> f64,
    loss: impl Fn(&N) -> f64,
    per_tensor: usize,
    seed: u64,
) -> NetworkCheck {
    let mut rng = rng(seed);
    for p in params(net) {
        p.zero_grad();
    }
    accumulate(net);
    let mut out = NetworkCheck {
        worst: 0.0,
        checked: 0,
        skipped: 0,
    };
    let n = params(net).len();
    for pi in 0..n {
        for which in 0..2 {
            let pick = |net: &mut N| -> (usize, Vec<f64>) {
                let ps = params(net);
                let (v, g) = if which == 0 {
                    (&ps[pi].weight, &ps[pi].grad_weight)
                } else {
                    (&ps[pi].bias, &ps[pi].grad_bias)
                };
                (v.len(), g.data().to_vec())
            };
            let (len, grads) = pick(net);
            let nudge = |net: &mut N, k: usize, delta: f64| {
                let mut ps = params(net);
                let t = if which == 0 {
                    &mut ps[pi].weight
                } else {
                    &mut ps[pi].bias
                };
                t.data_mut()[k] += delta;
            };
            let central = |net: &mut N, k: usize, h: f64| {
                nudge(net, k, h);
                let up = loss(net);
                nudge(net, k, -2.0 * h);
                let down = loss(net);
                nudge(net, k, h);
                (up - down) / (2.0 * h)
            };
            let mut analytic = Vec::new();
            let mut numeric = Vec::new();
            for _ in 0..per_tensor.min(len) {
                let k = rng.random_range(0..len);
                let coarse = central(net, k, FD_STEP);
                let fine = central(net, k, 0.1 * FD_STEP);
                if (coarse - fine).abs() > 1e-5 * coarse.abs().max(fine.abs()) + 1e-10 {
                    out.skipped += 1;
                    continue;
                }
                analytic.push(grads[k]);
                numeric.push(coarse);
                out.checked += 1;
            }
            let diff = analytic
                .iter()
                .zip(&numeric)
                .map(|(a, n)| (a - n).powi(2))
                .sum::<f64>()
                .sqrt();
            let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
            let scale = norm(&analytic).max(norm(&numeric)).max(NETWORK_GRAD_FLOOR);
            out.worst = out.worst.max(diff / scale);
        }
    }
    out
}
