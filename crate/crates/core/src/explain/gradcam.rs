//! Grad-CAM and Grad-CAM++.
//!
//! The feature maps are taken at the chosen conv layer, after its ReLU when
//! the next layer is one. Grad-CAM weights each map by the spatial mean of
//! the target logit's gradient. Grad-CAM++ uses per-location weights
//!
//! ```text
//! alpha_ij = g_ij^2 / (2 g_ij^2 + sum_ab A_ab * g_ij^3)
//! w_k      = sum_ij alpha_ij * relu(g_ij)
//! ```
//!
//! which is the exponential-output closed form for ReLU networks (higher
//! derivatives expressed as powers of the first). Both maps go through ReLU,
//! are resampled bilinearly to image size, and re-normalized.

use super::{check_target, CamConfig, Method, RawAttribution};
use crate::error::{Error, Result};
use crate::io::{resample_bilinear, Image};
use crate::metric::{ExplanationMap, Grid};
use crate::net::{LayerKind, Storage, Tensor, TinyNet};

/// Feature maps and target-logit gradients at a conv layer.
fn feature_and_grad<S: Storage>(
    net: &TinyNet<S>,
    image: &Image,
    target_class: usize,
    layer: Option<usize>,
) -> Result<(Tensor, Tensor)> {
    check_target(net.num_classes(), target_class)?;
    let layer = match layer {
        Some(l) => l,
        None => net.last_conv_layer().ok_or(Error::NotAConvLayer(0))?,
    };
    match net.layers().get(layer) {
        Some(spec) if matches!(spec.kind, LayerKind::Conv { .. }) => {}
        _ => return Err(Error::NotAConvLayer(layer)),
    }
    let tap = match net.layers().get(layer + 1) {
        Some(next) if next.kind == LayerKind::Relu => layer + 1,
        _ => layer,
    };
    let (features, grad, _) = net.logit_gradient(image, target_class, tap)?;
    Ok((features, grad))
}

fn combine(features: &Tensor, weights: &[f64]) -> Grid {
    let (h, w) = (features.shape.height, features.shape.width);
    let mut values = vec![0.0; h * w];
    for (k, &wk) in weights.iter().enumerate() {
        if wk == 0.0 {
            continue;
        }
        for (v, &a) in values.iter_mut().zip(features.channel(k)) {
            *v += wk * a;
        }
    }
    values.iter_mut().for_each(|v| *v = v.max(0.0));
    Grid {
        height: h,
        width: w,
        values,
    }
}

fn gradcam_weights(grad: &Tensor) -> Vec<f64> {
    let n = (grad.shape.height * grad.shape.width) as f64;
    (0..grad.shape.channels)
        .map(|k| grad.channel(k).iter().sum::<f64>() / n)
        .collect()
}

/// Per-location weights `alpha_ij` and pooled weight `w_k` for one map.
pub fn gradcampp_weights(features: &[f64], grad: &[f64]) -> (Vec<f64>, f64) {
    let sum_a: f64 = features.iter().sum();
    let alphas: Vec<f64> = grad
        .iter()
        .map(|&g| {
            let g2 = g * g;
            let denom = 2.0 * g2 + sum_a * g2 * g;
            if g2 == 0.0 || denom == 0.0 {
                0.0
            } else {
                g2 / denom
            }
        })
        .collect();
    let pooled = alphas.iter().zip(grad).map(|(a, &g)| a * g.max(0.0)).sum();
    (alphas, pooled)
}

/// Un-resampled, un-normalized class activation map at feature resolution.
pub fn gradcam_feature_map<S: Storage>(
    net: &TinyNet<S>,
    image: &Image,
    target_class: usize,
    config: &CamConfig,
    plus_plus: bool,
) -> Result<Grid> {
    let (features, grad) = feature_and_grad(net, image, target_class, config.layer)?;
    let weights = if plus_plus {
        (0..features.shape.channels)
            .map(|k| gradcampp_weights(features.channel(k), grad.channel(k)).1)
            .collect()
    } else {
        gradcam_weights(&grad)
    };
    Ok(combine(&features, &weights))
}

fn cam_explain<S: Storage>(
    net: &TinyNet<S>,
    image: &Image,
    target_class: usize,
    config: &CamConfig,
    plus_plus: bool,
) -> Result<ExplanationMap> {
    let coarse = gradcam_feature_map(net, image, target_class, config, plus_plus)?;
    if coarse.values.iter().all(|&v| v <= 0.0) {
        return Err(Error::EmptyExplanation);
    }
    RawAttribution {
        grid: resample_bilinear(&coarse, image.height, image.width),
        method: if plus_plus {
            Method::Gradcampp
        } else {
            Method::Gradcam
        },
        target_class,
    }
    .normalize()
}

pub fn gradcam_explain<S: Storage>(
    net: &TinyNet<S>,
    image: &Image,
    target_class: usize,
    config: &CamConfig,
) -> Result<ExplanationMap> {
    cam_explain(net, image, target_class, config, false)
}

pub fn gradcampp_explain<S: Storage>(
    net: &TinyNet<S>,
    image: &Image,
    target_class: usize,
    config: &CamConfig,
) -> Result<ExplanationMap> {
    cam_explain(net, image, target_class, config, true)
}
