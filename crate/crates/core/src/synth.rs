//! Synthetic two-class images with exact object masks.
//!
//! Every image is a mid-gray canvas with Gaussian noise and one object
//! (disk or rectangle). The class is encoded by stripe orientation
//! (horizontal = class 0, vertical = class 1). With `in_object` placement
//! the stripes fill the object itself; with `in_background` the object is a
//! flat uniform shape and the stripes sit in a separate square patch kept at
//! least one patch-width away from the object.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::Image;
use crate::metric::{ActivationMap, Grid};
use crate::seed::derive_seed;

pub const MID_GRAY: f64 = 0.5;
const STRIPE_BRIGHT: f64 = 0.9;
const STRIPE_DARK: f64 = 0.1;
const FLAT_OBJECT: f64 = 0.75;
const STRIPE_WIDTH: usize = 2;
const PLACEMENT_ATTEMPTS: usize = 1000;

const STREAM_SAMPLE: u64 = 0x5359_4e54;
const STREAM_MASKBG: u64 = 0x4d41_534b;

/// One image with its label and exact object mask.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub image_id: String,
    pub image: Image,
    pub label: usize,
    pub mask: ActivationMap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    InObject,
    InBackground,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectShape {
    Disk,
    Rectangle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    #[serde(default = "default_size")]
    pub image_size: usize,
    #[serde(default = "default_classes")]
    pub num_classes: usize,
    #[serde(default = "default_per_class")]
    pub samples_per_class: usize,
    #[serde(default = "default_placement")]
    pub placement: Placement,
    #[serde(default = "default_shape")]
    pub object_shape: ObjectShape,
    #[serde(default = "default_area")]
    pub object_area_fraction: f64,
    #[serde(default = "default_noise")]
    pub noise_std: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_size() -> usize {
    32
}
fn default_classes() -> usize {
    2
}
fn default_per_class() -> usize {
    140
}
fn default_placement() -> Placement {
    Placement::InObject
}
fn default_shape() -> ObjectShape {
    ObjectShape::Disk
}
fn default_area() -> f64 {
    0.12
}
fn default_noise() -> f64 {
    0.05
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            image_size: default_size(),
            num_classes: default_classes(),
            samples_per_class: default_per_class(),
            placement: default_placement(),
            object_shape: default_shape(),
            object_area_fraction: default_area(),
            noise_std: default_noise(),
            seed: 0,
        }
    }
}

impl SynthSpec {
    /// Side of the background stripe patch, also the minimum gap between it
    /// and the object.
    pub fn signal_side(&self) -> usize {
        (self.image_size / 4).max(STRIPE_WIDTH * 2)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.num_classes != 2 {
            return bad(format!("num_classes must be 2, got {}", self.num_classes));
        }
        if self.image_size < 8 {
            return bad(format!("image_size must be >= 8, got {}", self.image_size));
        }
        if self.samples_per_class == 0 {
            return bad("samples_per_class must be >= 1".into());
        }
        if !(self.object_area_fraction > 0.0 && self.object_area_fraction <= 0.5) {
            return bad(format!(
                "object_area_fraction must lie in (0, 0.5] so the background is at least as large, got {}",
                self.object_area_fraction
            ));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad(format!("noise_std must be >= 0, got {}", self.noise_std));
        }
        let (h, w) = self.object_extent();
        if h < 2 || w < 2 {
            return bad("object too small to carry stripes".into());
        }
        if h > self.image_size || w > self.image_size {
            return bad("object does not fit in the image".into());
        }
        Ok(())
    }

    fn object_area(&self) -> f64 {
        self.object_area_fraction * (self.image_size * self.image_size) as f64
    }

    fn disk_radius(&self) -> f64 {
        (self.object_area() / std::f64::consts::PI).sqrt()
    }

    fn rect_dims(&self) -> (usize, usize) {
        let area = self.object_area();
        let w = area.sqrt().round().max(1.0) as usize;
        let h = (area / w as f64).round().max(1.0) as usize;
        (h, w)
    }

    /// Bounding-box height and width of the object.
    fn object_extent(&self) -> (usize, usize) {
        match self.object_shape {
            ObjectShape::Disk => {
                let d = (2.0 * self.disk_radius()).ceil() as usize;
                (d, d)
            }
            ObjectShape::Rectangle => self.rect_dims(),
        }
    }
}

/// Generated sample plus the region that carries the class signal.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample {
    pub sample: LabeledSample,
    pub signal_region: ActivationMap,
}

pub fn generate(spec: &SynthSpec) -> Result<Vec<LabeledSample>> {
    Ok(generate_detailed(spec)?.into_iter().map(|s| s.sample).collect())
}

pub fn generate_detailed(spec: &SynthSpec) -> Result<Vec<SynthSample>> {
    spec.validate()?;
    let n = spec.samples_per_class * spec.num_classes;
    (0..n)
        .into_par_iter()
        .map(|i| generate_one(spec, i))
        .collect()
}

#[derive(Clone, Copy)]
struct Rect {
    top: usize,
    left: usize,
    height: usize,
    width: usize,
}

impl Rect {
    /// Larger of the row and column gaps between two boxes (0 if they overlap).
    fn gap(&self, other: &Rect) -> usize {
        let axis = |a0: usize, a1: usize, b0: usize, b1: usize| {
            if a1 <= b0 {
                b0 - a1
            } else if b1 <= a0 {
                a0 - b1
            } else {
                0
            }
        };
        axis(self.top, self.top + self.height, other.top, other.top + other.height).max(axis(
            self.left,
            self.left + self.width,
            other.left,
            other.left + other.width,
        ))
    }
}

fn generate_one(spec: &SynthSpec, index: usize) -> Result<SynthSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, STREAM_SAMPLE, index as u64));
    let size = spec.image_size;
    let label = index % spec.num_classes;
    let (oh, ow) = spec.object_extent();

    let place = |rng: &mut ChaCha8Rng, h: usize, w: usize| Rect {
        top: rng.random_range(0..=size - h),
        left: rng.random_range(0..=size - w),
        height: h,
        width: w,
    };
    let (object_box, signal_box) = match spec.placement {
        Placement::InObject => (place(&mut rng, oh, ow), None),
        Placement::InBackground => {
            let side = spec.signal_side();
            let mut found = None;
            for _ in 0..PLACEMENT_ATTEMPTS {
                let obj = place(&mut rng, oh, ow);
                let sig = place(&mut rng, side, side);
                if obj.gap(&sig) >= side {
                    found = Some((obj, sig));
                    break;
                }
            }
            let (obj, sig) = found.ok_or_else(|| {
                Error::InvalidSpec(format!(
                    "cannot place a {side}px signal patch {side}px away from the object in a {size}px image"
                ))
            })?;
            (obj, Some(sig))
        }
    };

    let mut object = vec![false; size * size];
    match spec.object_shape {
        ObjectShape::Disk => {
            let r = spec.disk_radius();
            let cy = object_box.top as f64 + oh as f64 / 2.0;
            let cx = object_box.left as f64 + ow as f64 / 2.0;
            for i in object_box.top..object_box.top + oh {
                for j in object_box.left..object_box.left + ow {
                    let (dy, dx) = (i as f64 + 0.5 - cy, j as f64 + 0.5 - cx);
                    if dy * dy + dx * dx <= r * r {
                        object[i * size + j] = true;
                    }
                }
            }
        }
        ObjectShape::Rectangle => {
            for i in object_box.top..object_box.top + oh {
                for j in object_box.left..object_box.left + ow {
                    object[i * size + j] = true;
                }
            }
        }
    }

    let signal: Vec<bool> = match signal_box {
        None => object.clone(),
        Some(b) => (0..size * size)
            .map(|p| {
                let (i, j) = (p / size, p % size);
                (b.top..b.top + b.height).contains(&i) && (b.left..b.left + b.width).contains(&j)
            })
            .collect(),
    };

    let phase = rng.random_range(0..2 * STRIPE_WIDTH);
    let stripe = |i: usize, j: usize| {
        let coord = if label == 0 { i } else { j };
        if ((coord + phase) / STRIPE_WIDTH) % 2 == 0 {
            STRIPE_BRIGHT
        } else {
            STRIPE_DARK
        }
    };
    let noise = Normal::new(0.0, spec.noise_std.max(0.0)).expect("finite std");
    let mut values = Vec::with_capacity(size * size);
    for p in 0..size * size {
        let (i, j) = (p / size, p % size);
        let base = if signal[p] {
            stripe(i, j)
        } else if object[p] {
            FLAT_OBJECT
        } else {
            MID_GRAY
        };
        let v = if spec.noise_std > 0.0 {
            (base + noise.sample(&mut rng)).clamp(0.0, 1.0)
        } else {
            base
        };
        values.push(v);
    }

    let to_map = |bits: &[bool]| {
        ActivationMap::new(Grid {
            height: size,
            width: size,
            values: bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        })
        .expect("binary map")
    };
    Ok(SynthSample {
        sample: LabeledSample {
            image_id: format!("s{index:05}"),
            image: Image {
                height: size,
                width: size,
                channels: 1,
                values,
            },
            label,
            mask: to_map(&object),
        },
        signal_region: to_map(&signal),
    })
}

/// Replaces every pixel with zero mask membership by uniform noise.
pub fn mask_background(sample: &LabeledSample, seed: u64) -> LabeledSample {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_MASKBG, 0));
    let mut out = sample.clone();
    let channels = out.image.channels;
    for (p, &m) in sample.mask.values().iter().enumerate() {
        if m == 0.0 {
            for c in 0..channels {
                out.image.values[p * channels + c] = rng.random::<f64>();
            }
        }
    }
    out
}

/// Seed for masking sample `index` of a dataset under `seed`.
pub fn mask_seed(seed: u64, index: usize) -> u64 {
    derive_seed(seed, STREAM_MASKBG, index as u64 + 1)
}
