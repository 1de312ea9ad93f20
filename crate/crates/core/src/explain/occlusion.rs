use rayon::prelude::*;

use super::{check_target, Classifier, Method, OcclusionConfig, RawAttribution};
use crate::error::{Error, Result};
use crate::io::Image;
use crate::metric::{ExplanationMap, Grid};

/// Top-left offsets along one axis: every `stride` step, plus a final
/// flush-right position so the whole axis is covered.
pub fn occlusion_positions(len: usize, patch: usize, stride: usize) -> Vec<usize> {
    let last = len - patch;
    let mut out: Vec<usize> = (0..=last).step_by(stride).collect();
    if out.last() != Some(&last) {
        out.push(last);
    }
    out
}

/// Mean probability drop over the patches covering each pixel.
pub fn occlusion_raw(
    model: &dyn Classifier,
    image: &Image,
    target_class: usize,
    config: &OcclusionConfig,
) -> Result<RawAttribution> {
    check_target(model.num_classes(), target_class)?;
    let (h, w) = (image.height, image.width);
    let (patch, stride) = config.resolve(h, w);
    if patch > h || patch > w {
        return Err(Error::shape(
            format!("occlusion patch {patch}x{patch}"),
            format!("image {h}x{w}"),
        ));
    }
    let base = model.probabilities(image)?[target_class];
    let rows = occlusion_positions(h, patch, stride);
    let cols = occlusion_positions(w, patch, stride);
    let positions: Vec<(usize, usize)> = rows
        .iter()
        .flat_map(|&r| cols.iter().map(move |&c| (r, c)))
        .collect();
    let drops = positions
        .par_iter()
        .map(|&(top, left)| {
            let mut occluded = image.clone();
            for r in top..top + patch {
                for c in left..left + patch {
                    for ch in 0..image.channels {
                        occluded.set(r, c, ch, config.fill);
                    }
                }
            }
            let p = model.probabilities(&occluded)?[target_class];
            Ok((base - p).max(0.0))
        })
        .collect::<Result<Vec<f64>>>()?;

    let mut sum = vec![0.0; h * w];
    let mut count = vec![0u32; h * w];
    for (&(top, left), &drop) in positions.iter().zip(&drops) {
        for r in top..top + patch {
            for c in left..left + patch {
                sum[r * w + c] += drop;
                count[r * w + c] += 1;
            }
        }
    }
    let values = sum
        .iter()
        .zip(&count)
        .map(|(&s, &n)| if n > 0 { s / f64::from(n) } else { 0.0 })
        .collect();
    Ok(RawAttribution {
        grid: Grid {
            height: h,
            width: w,
            values,
        },
        method: Method::Occlusion,
        target_class,
    })
}

pub fn occlusion_explain(
    model: &dyn Classifier,
    image: &Image,
    target_class: usize,
    config: &OcclusionConfig,
) -> Result<ExplanationMap> {
    occlusion_raw(model, image, target_class, config)?.normalize()
}
