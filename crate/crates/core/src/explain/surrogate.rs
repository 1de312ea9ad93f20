//! Tile-grid perturbation surrogate.
//!
//! The image is cut into a `grid x grid` tile layout. Each perturbation keeps
//! a random subset of tiles (each with probability 1/2) and fills the rest
//! with mid-gray. A weighted ridge regression of the target probability on
//! the binary keep-vector, with proximity weights `exp(-dropped / sigma)` and
//! `sigma = grid^2 / 4`, yields one coefficient per tile. The intercept is
//! unpenalized. Positive coefficients become the attribution of their tile.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{check_target, Classifier, Method, RawAttribution, SurrogateConfig};
use crate::error::{Error, Result};
use crate::io::Image;
use crate::metric::{ExplanationMap, Grid};

const GRAY: f64 = 0.5;

/// Tile of pixel `(row, col)`, row-major over the tile grid. Tiles split the
/// image as evenly as integer division allows.
pub fn tile_index(row: usize, col: usize, height: usize, width: usize, grid: usize) -> usize {
    (row * grid / height) * grid + col * grid / width
}

/// Fitted surrogate: per-tile coefficients and the intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateFit {
    pub weights: Vec<f64>,
    pub intercept: f64,
}

/// Weighted ridge fit of `targets` on binary `masks` (true = tile kept).
pub fn fit_tile_weights(
    masks: &[Vec<bool>],
    targets: &[f64],
    lambda: f64,
    sigma: f64,
) -> Result<SurrogateFit> {
    let n_tiles = masks.first().map_or(0, Vec::len);
    if masks.is_empty() || masks.len() != targets.len() || n_tiles == 0 {
        return Err(Error::InvalidConfig(
            "surrogate fit needs matching nonempty masks and targets".into(),
        ));
    }
    let weights: Vec<f64> = masks
        .iter()
        .map(|m| {
            let dropped = m.iter().filter(|&&k| !k).count() as f64;
            (-dropped / sigma).exp()
        })
        .collect();
    let total: f64 = weights.iter().sum();
    let mut mean_x = vec![0.0; n_tiles];
    let mut mean_y = 0.0;
    for ((m, &y), &w) in masks.iter().zip(targets).zip(&weights) {
        for (mx, &k) in mean_x.iter_mut().zip(m) {
            if k {
                *mx += w;
            }
        }
        mean_y += w * y;
    }
    mean_x.iter_mut().for_each(|v| *v /= total);
    mean_y /= total;

    // Normal equations on weighted-centered data: (Xc' W Xc + lambda I) b = Xc' W yc.
    let mut gram = vec![0.0; n_tiles * n_tiles];
    let mut rhs = vec![0.0; n_tiles];
    let mut xc = vec![0.0; n_tiles];
    for ((m, &y), &w) in masks.iter().zip(targets).zip(&weights) {
        for t in 0..n_tiles {
            xc[t] = f64::from(u8::from(m[t])) - mean_x[t];
        }
        let yc = y - mean_y;
        for a in 0..n_tiles {
            rhs[a] += w * xc[a] * yc;
            for b in 0..=a {
                gram[a * n_tiles + b] += w * xc[a] * xc[b];
            }
        }
    }
    for a in 0..n_tiles {
        gram[a * n_tiles + a] += lambda;
        for b in 0..a {
            gram[b * n_tiles + a] = gram[a * n_tiles + b];
        }
    }
    let coef = cholesky_solve(&mut gram, n_tiles, &rhs)
        .ok_or_else(|| Error::InvalidConfig("surrogate system is not positive definite".into()))?;
    let intercept = mean_y - coef.iter().zip(&mean_x).map(|(b, x)| b * x).sum::<f64>();
    Ok(SurrogateFit {
        weights: coef,
        intercept,
    })
}

/// Solves `A x = b` for symmetric positive definite `A` (overwritten).
fn cholesky_solve(a: &mut [f64], n: usize, b: &[f64]) -> Option<Vec<f64>> {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > 0.0) {
            return None;
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
    }
    let mut y = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            y[i] -= a[i * n + k] * y[k];
        }
        y[i] /= a[i * n + i];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            y[i] -= a[k * n + i] * y[k];
        }
        y[i] /= a[i * n + i];
    }
    Some(y)
}

fn perturbation_masks(config: &SurrogateConfig) -> Vec<Vec<bool>> {
    let n_tiles = config.grid * config.grid;
    if config.exhaustive {
        return (0..1u32 << n_tiles)
            .map(|bits| (0..n_tiles).map(|t| bits >> t & 1 == 1).collect())
            .collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    (0..config.samples)
        .map(|_| (0..n_tiles).map(|_| rng.random_bool(0.5)).collect())
        .collect()
}

/// Tile coefficients spread over pixels, negatives clamped.
pub fn surrogate_raw(
    model: &dyn Classifier,
    image: &Image,
    target_class: usize,
    config: &SurrogateConfig,
) -> Result<RawAttribution> {
    check_target(model.num_classes(), target_class)?;
    let (h, w, g) = (image.height, image.width, config.grid);
    if g > h || g > w {
        return Err(Error::shape(format!("surrogate grid {g}x{g}"), format!("image {h}x{w}")));
    }
    let tiles: Vec<usize> = (0..h * w).map(|p| tile_index(p / w, p % w, h, w, g)).collect();
    let base = model.probabilities(image)?[target_class];
    let masks = perturbation_masks(config);
    // Targets are shifted by the unperturbed probability; the intercept absorbs
    // the shift, and a constant model then yields exactly zero coefficients.
    let targets = masks
        .par_iter()
        .map(|keep| {
            let mut perturbed = image.clone();
            for (p, &t) in tiles.iter().enumerate() {
                if !keep[t] {
                    for c in 0..image.channels {
                        perturbed.values[p * image.channels + c] = GRAY;
                    }
                }
            }
            Ok(model.probabilities(&perturbed)?[target_class] - base)
        })
        .collect::<Result<Vec<f64>>>()?;
    let sigma = (g * g) as f64 / 4.0;
    let fit = fit_tile_weights(&masks, &targets, config.lambda, sigma)?;
    Ok(RawAttribution {
        grid: Grid {
            height: h,
            width: w,
            values: tiles.iter().map(|&t| fit.weights[t].max(0.0)).collect(),
        },
        method: Method::Surrogate,
        target_class,
    })
}

pub fn surrogate_explain(
    model: &dyn Classifier,
    image: &Image,
    target_class: usize,
    config: &SurrogateConfig,
) -> Result<ExplanationMap> {
    surrogate_raw(model, image, target_class, config)?.normalize()
}
