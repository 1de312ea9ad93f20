//! PNG images, masks and heatmaps; grid resampling; overlay rendering; the
//! on-disk dataset layout.
//!
//! Dataset directories look like
//!
//! ```text
//! <root>/images/<id>.png   8-bit grayscale or RGB
//! <root>/masks/<id>.png    8-bit grayscale, 255 = object
//! <root>/labels.csv        header `id,label`, zero-based class index
//! ```
//!
//! Heatmaps are 16-bit grayscale PNGs with a `<name>.json` sidecar holding
//! `{"scale": f64, "image_id": string}`; decoded cell = stored / 65535 * scale.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metric::{mask_from_gray, ActivationMap, ExplanationMap, Grid};
use crate::synth::LabeledSample;

/// Image with unit-interval intensities, row-major with interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub values: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, values: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidConfig(format!(
                "images have 1 or 3 channels, got {channels}"
            )));
        }
        if height == 0 || width == 0 {
            return Err(Error::InvalidConfig("image must be at least 1x1".into()));
        }
        if values.len() != height * width * channels {
            return Err(Error::shape(
                format!("{height}x{width}x{channels} image"),
                format!("{} values", values.len()),
            ));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidConfig("image values must lie in [0, 1]".into()));
        }
        Ok(Self {
            height,
            width,
            channels,
            values,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self {
            height,
            width,
            channels,
            values: vec![value; height * width * channels],
        }
    }

    pub fn gray(grid: &Grid) -> Result<Self> {
        Self::new(grid.height, grid.width, 1, grid.values.clone())
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.values[(row * self.width + col) * self.channels + channel]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, channel: usize, value: f64) {
        self.values[(row * self.width + col) * self.channels + channel] = value;
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.values.iter().map(|&v| unit_to_u8(v)).collect()
    }

    pub fn from_bytes(height: usize, width: usize, channels: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(
            height,
            width,
            channels,
            bytes.iter().map(|&b| f64::from(b) / 255.0).collect(),
        )
    }
}

fn unit_to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Raw decoded PNG samples before interpretation.
struct RawPng {
    width: usize,
    height: usize,
    channels: usize,
    bit_depth: u8,
    samples: Vec<u16>,
    text: Vec<(String, String)>,
}

fn read_png(path: &Path) -> Result<RawPng> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let decoder = png::Decoder::new(BufReader::new(file));
    let mut reader = decoder.read_info().map_err(|e| png_err(path, e))?;
    let info = reader.info();
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        other => {
            return Err(Error::UnsupportedFormat {
                path: path.into(),
                reason: format!("color type {other:?}"),
            })
        }
    };
    let bit_depth = match info.bit_depth {
        png::BitDepth::Eight => 8,
        png::BitDepth::Sixteen => 16,
        other => {
            return Err(Error::UnsupportedFormat {
                path: path.into(),
                reason: format!("bit depth {other:?}"),
            })
        }
    };
    let text = info
        .uncompressed_latin1_text
        .iter()
        .map(|t| (t.keyword.clone(), t.text.clone()))
        .collect();
    let size = reader.output_buffer_size().ok_or_else(|| Error::UnsupportedFormat {
        path: path.into(),
        reason: "image too large".into(),
    })?;
    let mut buf = vec![0u8; size];
    let frame = reader.next_frame(&mut buf).map_err(|e| png_err(path, e))?;
    let (width, height) = (frame.width as usize, frame.height as usize);
    let row_bytes = width * channels * usize::from(bit_depth / 8);
    let mut samples = Vec::with_capacity(width * height * channels);
    for row in buf.chunks(frame.line_size).take(height) {
        let row = &row[..row_bytes];
        if bit_depth == 8 {
            samples.extend(row.iter().map(|&b| u16::from(b)));
        } else {
            samples.extend(row.chunks_exact(2).map(|p| u16::from_be_bytes([p[0], p[1]])));
        }
    }
    Ok(RawPng {
        width,
        height,
        channels,
        bit_depth,
        samples,
        text,
    })
}

fn png_err(path: &Path, e: png::DecodingError) -> Error {
    match e {
        png::DecodingError::IoError(source) => Error::io(path, source),
        other => Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::InvalidData, other.to_string()),
        ),
    }
}

fn write_png(
    path: &Path,
    width: usize,
    height: usize,
    color: png::ColorType,
    depth: png::BitDepth,
    data: &[u8],
    text: &[(&str, String)],
) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    encoder.set_color(color);
    encoder.set_depth(depth);
    let enc_err = |e: png::EncodingError| match e {
        png::EncodingError::IoError(source) => Error::io(path, source),
        other => Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::InvalidData, other.to_string()),
        ),
    };
    for (key, value) in text {
        encoder
            .add_text_chunk((*key).to_string(), value.clone())
            .map_err(enc_err)?;
    }
    let mut writer = encoder.write_header().map_err(enc_err)?;
    writer.write_image_data(data).map_err(enc_err)?;
    writer.finish().map_err(enc_err)?;
    Ok(())
}

/// Loads an 8-bit grayscale or RGB PNG as unit-interval intensities.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let raw = read_png(path)?;
    if raw.bit_depth != 8 {
        return Err(Error::UnsupportedFormat {
            path: path.into(),
            reason: format!("images must be 8-bit, found {}-bit", raw.bit_depth),
        });
    }
    Ok(Image {
        height: raw.height,
        width: raw.width,
        channels: raw.channels,
        values: raw.samples.iter().map(|&s| f64::from(s) / 255.0).collect(),
    })
}

pub fn save_image(path: impl AsRef<Path>, image: &Image) -> Result<()> {
    let color = if image.channels == 3 {
        png::ColorType::Rgb
    } else {
        png::ColorType::Grayscale
    };
    write_png(
        path.as_ref(),
        image.width,
        image.height,
        color,
        png::BitDepth::Eight,
        &image.to_bytes(),
        &[],
    )
}

/// Loads an 8-bit single-channel PNG as a fuzzy object mask.
pub fn load_mask(path: impl AsRef<Path>) -> Result<ActivationMap> {
    let path = path.as_ref();
    let raw = read_png(path)?;
    if raw.channels != 1 || raw.bit_depth != 8 {
        return Err(Error::UnsupportedFormat {
            path: path.into(),
            reason: format!(
                "masks must be 8-bit grayscale, found {} channel(s) at {}-bit",
                raw.channels, raw.bit_depth
            ),
        });
    }
    let bytes: Vec<u8> = raw.samples.iter().map(|&s| s as u8).collect();
    mask_from_gray(raw.height, raw.width, &bytes)
}

pub fn save_mask(path: impl AsRef<Path>, mask: &ActivationMap) -> Result<()> {
    let bytes: Vec<u8> = mask.values().iter().map(|&v| unit_to_u8(v)).collect();
    write_png(
        path.as_ref(),
        mask.width(),
        mask.height(),
        png::ColorType::Grayscale,
        png::BitDepth::Eight,
        &bytes,
        &[],
    )
}

/// Sidecar metadata stored next to a heatmap PNG.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapMeta {
    pub scale: f64,
    pub image_id: String,
}

/// Quantized heatmap: 16-bit cells plus the scale that maps 65535 back to
/// the largest raw value.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapFile {
    pub height: usize,
    pub width: usize,
    pub cells: Vec<u16>,
    pub meta: HeatmapMeta,
}

impl HeatmapFile {
    /// Quantizes nonnegative raw attributions; negatives are clamped to 0.
    pub fn encode(grid: &Grid, image_id: &str) -> Self {
        let scale = grid.values.iter().copied().fold(0.0f64, f64::max);
        let cells = grid
            .values
            .iter()
            .map(|&v| {
                if scale > 0.0 {
                    ((v.max(0.0) / scale) * 65535.0).round().min(65535.0) as u16
                } else {
                    0
                }
            })
            .collect();
        Self {
            height: grid.height,
            width: grid.width,
            cells,
            meta: HeatmapMeta {
                scale,
                image_id: image_id.to_string(),
            },
        }
    }

    pub fn decode(&self) -> Grid {
        Grid {
            height: self.height,
            width: self.width,
            values: self
                .cells
                .iter()
                .map(|&c| f64::from(c) / 65535.0 * self.meta.scale)
                .collect(),
        }
    }
}

pub fn sidecar_path(png_path: &Path) -> PathBuf {
    png_path.with_extension("json")
}

/// Writes `<name>.png` (16-bit gray) and `<name>.json`.
pub fn save_heatmap(path: impl AsRef<Path>, heatmap: &HeatmapFile) -> Result<()> {
    let path = path.as_ref();
    let data: Vec<u8> = heatmap.cells.iter().flat_map(|c| c.to_be_bytes()).collect();
    write_png(
        path,
        heatmap.width,
        heatmap.height,
        png::ColorType::Grayscale,
        png::BitDepth::Sixteen,
        &data,
        &[],
    )?;
    let sidecar = sidecar_path(path);
    let json = serde_json::to_string_pretty(&heatmap.meta).expect("meta serializes");
    std::fs::write(&sidecar, json + "\n").map_err(|e| Error::io(&sidecar, e))
}

/// Reads a heatmap. 16-bit files require their sidecar; plain 8-bit
/// grayscale PNGs are accepted as `v / 255` with no sidecar.
pub fn load_heatmap(path: impl AsRef<Path>) -> Result<HeatmapFile> {
    let path = path.as_ref();
    let raw = read_png(path)?;
    if raw.channels != 1 {
        return Err(Error::UnsupportedFormat {
            path: path.into(),
            reason: "heatmaps must be single-channel".into(),
        });
    }
    let sidecar = sidecar_path(path);
    let meta = if raw.bit_depth == 16 || sidecar.exists() {
        let text = std::fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
        serde_json::from_str::<HeatmapMeta>(&text).map_err(|e| Error::Malformed {
            path: sidecar.clone(),
            reason: e.to_string(),
        })?
    } else {
        HeatmapMeta {
            scale: 1.0,
            image_id: path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
        }
    };
    let cells = if raw.bit_depth == 16 {
        raw.samples
    } else {
        // Widen 8-bit to the 16-bit range: 255 * 257 = 65535.
        raw.samples.iter().map(|&s| s * 257).collect()
    };
    Ok(HeatmapFile {
        height: raw.height,
        width: raw.width,
        cells,
        meta,
    })
}

/// Corner-aligned bilinear resampling.
pub fn resample_bilinear(grid: &Grid, target_h: usize, target_w: usize) -> Grid {
    assert!(target_h >= 1 && target_w >= 1, "target dims must be positive");
    if (target_h, target_w) == grid.dims() {
        return grid.clone();
    }
    let src = |t: usize, n_target: usize, n_src: usize| -> (usize, usize, f64) {
        if n_src == 1 {
            return (0, 0, 0.0);
        }
        let pos = if n_target == 1 {
            (n_src - 1) as f64 / 2.0
        } else {
            (t * (n_src - 1)) as f64 / (n_target - 1) as f64
        };
        let lo = (pos.floor() as usize).min(n_src - 1);
        let hi = (lo + 1).min(n_src - 1);
        (lo, hi, pos - lo as f64)
    };
    let cols: Vec<_> = (0..target_w).map(|j| src(j, target_w, grid.width)).collect();
    let mut values = Vec::with_capacity(target_h * target_w);
    for i in 0..target_h {
        let (r0, r1, fy) = src(i, target_h, grid.height);
        for &(c0, c1, fx) in &cols {
            let lerp = |a: f64, b: f64, t: f64| if t == 0.0 { a } else { a + (b - a) * t };
            let top = lerp(grid.get(r0, c0), grid.get(r0, c1), fx);
            let bottom = lerp(grid.get(r1, c0), grid.get(r1, c1), fx);
            values.push(lerp(top, bottom, fy));
        }
    }
    Grid {
        height: target_h,
        width: target_w,
        values,
    }
}

/// Heat-overlay opacity at full explanation strength.
pub const OVERLAY_ALPHA: f64 = 0.5;

/// An RGB visualization plus the score it illustrates.
#[derive(Debug, Clone, PartialEq)]
pub struct Overlay {
    pub image: Image,
    pub score: Option<f64>,
}

/// Red heat blended at opacity `OVERLAY_ALPHA * b`, with the mask boundary
/// (object pixels with a 4-neighbour outside the object) painted green.
pub fn render_overlay(
    image: &Image,
    explanation: &ExplanationMap,
    mask: &ActivationMap,
    score: Option<f64>,
) -> Result<Overlay> {
    let dims = (image.height, image.width);
    if dims != (explanation.height(), explanation.width()) || dims != (mask.height(), mask.width())
    {
        return Err(Error::shape(
            format!("image {}x{}", image.height, image.width),
            format!(
                "explanation {}x{} / mask {}x{}",
                explanation.height(),
                explanation.width(),
                mask.height(),
                mask.width()
            ),
        ));
    }
    let (h, w) = dims;
    let inside = |r: usize, c: usize| mask.get(r, c) >= 0.5;
    let mut out = Image::filled(h, w, 3, 0.0);
    for r in 0..h {
        for c in 0..w {
            let boundary = inside(r, c)
                && ((r > 0 && !inside(r - 1, c))
                    || (r + 1 < h && !inside(r + 1, c))
                    || (c > 0 && !inside(r, c - 1))
                    || (c + 1 < w && !inside(r, c + 1)));
            if boundary {
                out.set(r, c, 0, 0.0);
                out.set(r, c, 1, 1.0);
                out.set(r, c, 2, 0.0);
                continue;
            }
            let alpha = OVERLAY_ALPHA * explanation.get(r, c);
            for ch in 0..3 {
                let base = image.get(r, c, if image.channels == 3 { ch } else { 0 });
                let heat = if ch == 0 { 1.0 } else { 0.0 };
                let v = if alpha == 0.0 {
                    base
                } else {
                    (1.0 - alpha) * base + alpha * heat
                };
                out.set(r, c, ch, v);
            }
        }
    }
    Ok(Overlay { image: out, score })
}

/// PNG text key carrying the score in saved overlays.
pub const SCORE_KEY: &str = "obalex_score";

pub fn save_overlay(path: impl AsRef<Path>, overlay: &Overlay) -> Result<()> {
    let text: Vec<(&str, String)> = overlay
        .score
        .map(|s| vec![(SCORE_KEY, format!("{s}"))])
        .unwrap_or_default();
    write_png(
        path.as_ref(),
        overlay.image.width,
        overlay.image.height,
        png::ColorType::Rgb,
        png::BitDepth::Eight,
        &overlay.image.to_bytes(),
        &text,
    )
}

/// Reads the score text chunk written by [`save_overlay`].
pub fn read_overlay_score(path: impl AsRef<Path>) -> Result<Option<f64>> {
    let raw = read_png(path.as_ref())?;
    Ok(raw
        .text
        .iter()
        .find(|(k, _)| k == SCORE_KEY)
        .and_then(|(_, v)| v.parse().ok()))
}

/// Writes the dataset layout (images/, masks/, labels.csv).
pub fn export_dataset(dir: impl AsRef<Path>, samples: &[LabeledSample]) -> Result<()> {
    let dir = dir.as_ref();
    for sub in ["images", "masks"] {
        let p = dir.join(sub);
        std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let labels_path = dir.join("labels.csv");
    let file = File::create(&labels_path).map_err(|e| Error::io(&labels_path, e))?;
    let mut csv = csv::Writer::from_writer(BufWriter::new(file));
    let csv_err = |e: csv::Error| Error::io(&labels_path, std::io::Error::other(e.to_string()));
    csv.write_record(["id", "label"]).map_err(csv_err)?;
    for sample in samples {
        save_image(dir.join("images").join(format!("{}.png", sample.image_id)), &sample.image)?;
        save_mask(dir.join("masks").join(format!("{}.png", sample.image_id)), &sample.mask)?;
        csv.write_record([sample.image_id.as_str(), &sample.label.to_string()])
            .map_err(csv_err)?;
    }
    let mut inner = csv.into_inner().map_err(|e| Error::io(&labels_path, e.into_error()))?;
    inner.flush().map_err(|e| Error::io(&labels_path, e))
}

#[derive(Debug, Deserialize)]
struct LabelRow {
    id: String,
    label: usize,
}

/// Reads a dataset directory in `labels.csv` order.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Vec<LabeledSample>> {
    let dir = dir.as_ref();
    let labels_path = dir.join("labels.csv");
    let mut reader = csv::Reader::from_path(&labels_path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(&labels_path, io),
        other => Error::Malformed {
            path: labels_path.clone(),
            reason: format!("{other:?}"),
        },
    })?;
    let headers = reader.headers().map_err(|e| Error::Malformed {
        path: labels_path.clone(),
        reason: e.to_string(),
    })?;
    if headers.iter().collect::<Vec<_>>() != ["id", "label"] {
        return Err(Error::Malformed {
            path: labels_path,
            reason: "header must be `id,label`".into(),
        });
    }
    let mut samples = Vec::new();
    for row in reader.deserialize::<LabelRow>() {
        let row = row.map_err(|e| Error::Malformed {
            path: labels_path.clone(),
            reason: e.to_string(),
        })?;
        let image = load_image(dir.join("images").join(format!("{}.png", row.id)))?;
        let mask = load_mask(dir.join("masks").join(format!("{}.png", row.id)))?;
        if (mask.height(), mask.width()) != (image.height, image.width) {
            return Err(Error::shape(
                format!("image {} {}x{}", row.id, image.height, image.width),
                format!("mask {}x{}", mask.height(), mask.width()),
            ));
        }
        samples.push(LabeledSample {
            image_id: row.id,
            image,
            label: row.label,
            mask,
        });
    }
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(samples)
}
