//! Explanation methods. Each produces nonnegative raw attributions at image
//! resolution which are then max-normalized into an [`ExplanationMap`].

mod gradcam;
mod occlusion;
mod surrogate;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::Image;
use crate::metric::{normalize_explanation, ExplanationMap, Grid};
use crate::net::{Storage, TinyNet};

pub use gradcam::{gradcam_explain, gradcam_feature_map, gradcampp_explain, gradcampp_weights};
pub use occlusion::{occlusion_explain, occlusion_positions, occlusion_raw};
pub use surrogate::{
    fit_tile_weights, surrogate_explain, surrogate_raw, tile_index, SurrogateFit,
};

/// Anything mapping an image to class probabilities.
pub trait Classifier: Sync {
    fn num_classes(&self) -> usize;
    fn probabilities(&self, image: &Image) -> Result<Vec<f64>>;
}

impl<S: Storage> Classifier for TinyNet<S> {
    fn num_classes(&self) -> usize {
        TinyNet::num_classes(self)
    }

    fn probabilities(&self, image: &Image) -> Result<Vec<f64>> {
        TinyNet::probabilities(self, image)
    }
}

/// Adapts a closure into a [`Classifier`].
pub struct FnClassifier<F> {
    pub num_classes: usize,
    pub f: F,
}

impl<F> FnClassifier<F>
where
    F: Fn(&Image) -> Vec<f64> + Sync,
{
    pub fn new(num_classes: usize, f: F) -> Self {
        Self { num_classes, f }
    }
}

impl<F> Classifier for FnClassifier<F>
where
    F: Fn(&Image) -> Vec<f64> + Sync,
{
    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn probabilities(&self, image: &Image) -> Result<Vec<f64>> {
        Ok((self.f)(image))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Occlusion,
    Gradcam,
    Gradcampp,
    Surrogate,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Occlusion,
        Method::Gradcam,
        Method::Gradcampp,
        Method::Surrogate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Occlusion => "occlusion",
            Method::Gradcam => "gradcam",
            Method::Gradcampp => "gradcampp",
            Method::Surrogate => "surrogate",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "unknown method `{s}`; valid methods: occlusion, gradcam, gradcampp, surrogate"
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OcclusionConfig {
    /// Patch side in pixels; defaults to a quarter of the image side.
    #[serde(default)]
    pub patch: Option<usize>,
    /// Defaults to half the patch.
    #[serde(default)]
    pub stride: Option<usize>,
    #[serde(default = "default_fill")]
    pub fill: f64,
}

fn default_fill() -> f64 {
    0.5
}

impl Default for OcclusionConfig {
    fn default() -> Self {
        Self {
            patch: None,
            stride: None,
            fill: default_fill(),
        }
    }
}

impl OcclusionConfig {
    /// Concrete (patch, stride) for an image.
    pub fn resolve(&self, height: usize, width: usize) -> (usize, usize) {
        let patch = self.patch.unwrap_or((height.min(width) / 4).max(1));
        let stride = self.stride.unwrap_or((patch / 2).max(1));
        (patch, stride)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct CamConfig {
    /// Conv layer index; defaults to the last conv layer.
    #[serde(default)]
    pub layer: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurrogateConfig {
    /// Tiles per side.
    #[serde(default = "default_grid")]
    pub grid: usize,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default)]
    pub seed: u64,
    /// Evaluate all 2^(grid^2) tile masks instead of sampling.
    #[serde(default)]
    pub exhaustive: bool,
}

fn default_grid() -> usize {
    4
}
fn default_samples() -> usize {
    100
}
fn default_lambda() -> f64 {
    1.0
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self {
            grid: default_grid(),
            samples: default_samples(),
            lambda: default_lambda(),
            seed: 0,
            exhaustive: false,
        }
    }
}

/// Method plus its hyperparameters, as serialized in configs and reports.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum ExplainerConfig {
    Occlusion(OcclusionConfig),
    Gradcam(CamConfig),
    Gradcampp(CamConfig),
    Surrogate(SurrogateConfig),
}

impl ExplainerConfig {
    pub fn default_for(method: Method) -> Self {
        match method {
            Method::Occlusion => ExplainerConfig::Occlusion(OcclusionConfig::default()),
            Method::Gradcam => ExplainerConfig::Gradcam(CamConfig::default()),
            Method::Gradcampp => ExplainerConfig::Gradcampp(CamConfig::default()),
            Method::Surrogate => ExplainerConfig::Surrogate(SurrogateConfig::default()),
        }
    }

    pub fn method(&self) -> Method {
        match self {
            ExplainerConfig::Occlusion(_) => Method::Occlusion,
            ExplainerConfig::Gradcam(_) => Method::Gradcam,
            ExplainerConfig::Gradcampp(_) => Method::Gradcampp,
            ExplainerConfig::Surrogate(_) => Method::Surrogate,
        }
    }

    pub fn name(&self) -> &'static str {
        self.method().as_str()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        match *self {
            ExplainerConfig::Occlusion(c) => {
                if c.patch == Some(0) || c.stride == Some(0) {
                    return bad("occlusion patch and stride must be >= 1".into());
                }
                if !(0.0..=1.0).contains(&c.fill) {
                    return bad(format!("occlusion fill {} outside [0, 1]", c.fill));
                }
            }
            ExplainerConfig::Surrogate(c) => {
                if c.grid == 0 {
                    return bad("surrogate grid must be >= 1".into());
                }
                if !(c.lambda > 0.0) {
                    return bad(format!("surrogate lambda must be > 0, got {}", c.lambda));
                }
                if !c.exhaustive && c.samples < c.grid * c.grid {
                    return bad(format!(
                        "surrogate samples ({}) must be >= tile count ({})",
                        c.samples,
                        c.grid * c.grid
                    ));
                }
                if c.exhaustive && c.grid * c.grid > 16 {
                    return bad("exhaustive surrogate limited to 16 tiles".into());
                }
            }
            ExplainerConfig::Gradcam(_) | ExplainerConfig::Gradcampp(_) => {}
        }
        Ok(())
    }

    /// Copy with every defaulted field filled in for the given image size
    /// and network, so reports are self-describing.
    pub fn resolved<S: Storage>(&self, height: usize, width: usize, net: &TinyNet<S>) -> Self {
        match *self {
            ExplainerConfig::Occlusion(c) => {
                let (patch, stride) = c.resolve(height, width);
                ExplainerConfig::Occlusion(OcclusionConfig {
                    patch: Some(patch),
                    stride: Some(stride),
                    fill: c.fill,
                })
            }
            ExplainerConfig::Gradcam(c) => ExplainerConfig::Gradcam(CamConfig {
                layer: c.layer.or_else(|| net.last_conv_layer()),
            }),
            ExplainerConfig::Gradcampp(c) => ExplainerConfig::Gradcampp(CamConfig {
                layer: c.layer.or_else(|| net.last_conv_layer()),
            }),
            other => other,
        }
    }
}

/// Nonnegative attributions before normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct RawAttribution {
    pub grid: Grid,
    pub method: Method,
    pub target_class: usize,
}

impl RawAttribution {
    /// Max-normalizes; an attribution without positive mass is an error.
    pub fn normalize(&self) -> Result<ExplanationMap> {
        let map = normalize_explanation(&self.grid);
        if map.is_empty() {
            return Err(Error::EmptyExplanation);
        }
        Ok(map)
    }
}

pub(crate) fn check_target(num_classes: usize, target: usize) -> Result<()> {
    if target >= num_classes {
        return Err(Error::LabelOutOfRange {
            label: target,
            num_classes,
        });
    }
    Ok(())
}

/// Runs the configured method against a network.
pub fn explain<S: Storage>(
    config: &ExplainerConfig,
    net: &TinyNet<S>,
    image: &Image,
    target_class: usize,
) -> Result<ExplanationMap> {
    config.validate()?;
    match config {
        ExplainerConfig::Occlusion(c) => occlusion_explain(net, image, target_class, c),
        ExplainerConfig::Gradcam(c) => gradcam_explain(net, image, target_class, c),
        ExplainerConfig::Gradcampp(c) => gradcampp_explain(net, image, target_class, c),
        ExplainerConfig::Surrogate(c) => surrogate_explain(net, image, target_class, c),
    }
}
