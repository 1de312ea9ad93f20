//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use obalex::io::Image;
use obalex::net::{LayerKind, LayerSpec, Shape, TinyNet, DENSE_BLOCK};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Alignment score by explicit double loop over rows and columns.
pub fn naive_score(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..a.len() {
        for j in 0..a[i].len() {
            num += a[i][j] * b[i][j];
            den += b[i][j];
        }
    }
    num / den
}

pub fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> Image {
    let values = (0..h * w * c).map(|_| rng.random::<f64>()).collect();
    Image::new(h, w, c, values).unwrap()
}

/// Worst relative error between backprop and central differences over all
/// parameters and input pixels.
pub struct GradCheck {
    pub max_rel_error: f64,
    pub n_checked: usize,
}

fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

fn param_mut(net: &mut TinyNet<f64>, layer: usize, which: usize, i: usize) -> &mut f64 {
    let p = &mut net.params_mut()[layer];
    if which == 0 {
        &mut p.weights[i]
    } else {
        &mut p.bias[i]
    }
}

pub fn gradient_check(net: &TinyNet<f64>, image: &Image, label: usize, step: f64) -> GradCheck {
    let analytic = net.backward(image, label).unwrap();
    let loss = |n: &TinyNet<f64>, img: &Image| -> f64 {
        let p = n.probabilities(img).unwrap();
        -p[label].ln()
    };
    let mut worst: f64 = 0.0;
    let mut count = 0;
    let mut probe = net.clone();
    for k in 0..net.layers().len() {
        for which in 0..2 {
            let len = if which == 0 {
                net.params()[k].weights.len()
            } else {
                net.params()[k].bias.len()
            };
            for i in 0..len {
                let orig = *param_mut(&mut probe, k, which, i);
                *param_mut(&mut probe, k, which, i) = orig + step;
                let up = loss(&probe, image);
                *param_mut(&mut probe, k, which, i) = orig - step;
                let down = loss(&probe, image);
                *param_mut(&mut probe, k, which, i) = orig;
                let numeric = (up - down) / (2.0 * step);
                let g = &analytic.gradients.layers[k];
                let a = if which == 0 { g.weights[i] } else { g.bias[i] };
                worst = worst.max(rel_error(a, numeric));
                count += 1;
            }
        }
    }
    // Input gradient, CHW order in the tensor, HWC in the image.
    let (h, w, c) = (image.height, image.width, image.channels);
    for ch in 0..c {
        for r in 0..h {
            for col in 0..w {
                let mut plus = image.clone();
                let mut minus = image.clone();
                let v = image.get(r, col, ch);
                plus.values[(r * w + col) * c + ch] = v + step;
                minus.values[(r * w + col) * c + ch] = v - step;
                let numeric = (loss(net, &plus) - loss(net, &minus)) / (2.0 * step);
                let a = analytic.input_grad.data[ch * h * w + r * w + col];
                worst = worst.max(rel_error(a, numeric));
                count += 1;
            }
        }
    }
    GradCheck {
        max_rel_error: worst,
        n_checked: count,
    }
}

/// Random weights and biases, so ReLUs and pools see varied inputs.
pub fn randomized(net: TinyNet<f64>, seed: u64) -> TinyNet<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = net;
    for p in net.params_mut() {
        for b in &mut p.bias {
            *b = rng.random_range(-0.1..0.1);
        }
    }
    net
}

fn conv(i: usize, o: usize, kernel: usize, stride: usize, padding: usize) -> LayerKind {
    LayerKind::Conv {
        in_channels: i,
        out_channels: o,
        kernel,
        stride,
        padding,
    }
}

/// One small net per layer kind, each isolating that kind before a dense
/// readout.
pub fn layer_kind_nets() -> Vec<(&'static str, TinyNet<f64>)> {
    let dense = |inputs| LayerKind::Dense { inputs, outputs: 3 };
    let cases: Vec<(&str, Vec<LayerKind>, Shape)> = vec![
        (
            "conv (k3 s1 p1)",
            vec![conv(3, 2, 3, 1, 1), LayerKind::Flatten, dense(2 * 5 * 5)],
            Shape::new(3, 5, 5),
        ),
        (
            "conv (k3 s2 p0)",
            vec![conv(1, 2, 3, 2, 0), LayerKind::Flatten, dense(2 * 3 * 3)],
            Shape::new(1, 7, 7),
        ),
        (
            "relu",
            vec![conv(1, 2, 3, 1, 1), LayerKind::Relu, LayerKind::Flatten, dense(2 * 4 * 4)],
            Shape::new(1, 4, 4),
        ),
        (
            "maxpool",
            vec![
                conv(1, 2, 3, 1, 1),
                LayerKind::MaxPool { window: 2, stride: 2 },
                LayerKind::Flatten,
                dense(2 * 3 * 3),
            ],
            Shape::new(1, 6, 6),
        ),
        (
            "maxpool (overlapping)",
            vec![
                LayerKind::MaxPool { window: 3, stride: 2 },
                LayerKind::Flatten,
                dense(3 * 2 * 2),
            ],
            Shape::new(3, 5, 5),
        ),
        ("flatten", vec![LayerKind::Flatten, dense(3 * 3 * 3)], Shape::new(3, 3, 3)),
        (
            "dense",
            vec![
                LayerKind::Flatten,
                LayerKind::Dense { inputs: 9, outputs: 4 },
                LayerKind::Relu,
                dense(4),
            ],
            Shape::new(1, 3, 3),
        ),
        ("softmax", vec![LayerKind::Flatten, dense(6)], Shape::new(1, 2, 3)),
    ];
    cases
        .into_iter()
        .enumerate()
        .map(|(i, (name, mut kinds, shape))| {
            kinds.push(LayerKind::Softmax);
            let layers = kinds
                .into_iter()
                .map(|k| LayerSpec::new(k, DENSE_BLOCK))
                .collect();
            let net = TinyNet::<f64>::new(layers, shape, 100 + i as u64).unwrap();
            (name, randomized(net, 200 + i as u64))
        })
        .collect()
}
