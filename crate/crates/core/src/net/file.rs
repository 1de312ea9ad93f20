//! Binary model format, all integers and floats little-endian:
//!
//! ```text
//! magic        "OBLX"
//! version      u16 (= 1)
//! input shape  u32 channels, u32 height, u32 width
//! n_layers     u32
//! per layer    u8 kind, u8 block_id, 5 x u32 kind parameters
//!                conv    in, out, kernel, stride, padding
//!                maxpool window, stride, 0, 0, 0
//!                dense   inputs, outputs, 0, 0, 0
//!                other   0, 0, 0, 0, 0
//! n_blocks     u32
//! per block    u8 block_id, u8 trainable
//! parameters   per layer in order: weights then biases, f32
//! ```

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use super::{LayerKind, LayerParams, LayerSpec, Shape, TinyNet};
use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 4] = b"OBLX";
pub const MODEL_VERSION: u16 = 1;

const KIND_CONV: u8 = 0;
const KIND_RELU: u8 = 1;
const KIND_MAXPOOL: u8 = 2;
const KIND_FLATTEN: u8 = 3;
const KIND_DENSE: u8 = 4;
const KIND_SOFTMAX: u8 = 5;

impl TinyNet<f32> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        let u32le = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
        let s = self.input_shape;
        for v in [s.channels, s.height, s.width, self.layers.len()] {
            u32le(&mut out, v);
        }
        for layer in &self.layers {
            let (code, fields) = match layer.kind {
                LayerKind::Conv {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                    padding,
                } => (KIND_CONV, [in_channels, out_channels, kernel, stride, padding]),
                LayerKind::Relu => (KIND_RELU, [0; 5]),
                LayerKind::MaxPool { window, stride } => (KIND_MAXPOOL, [window, stride, 0, 0, 0]),
                LayerKind::Flatten => (KIND_FLATTEN, [0; 5]),
                LayerKind::Dense { inputs, outputs } => (KIND_DENSE, [inputs, outputs, 0, 0, 0]),
                LayerKind::Softmax => (KIND_SOFTMAX, [0; 5]),
            };
            out.push(code);
            out.push(layer.block_id);
            for f in fields {
                u32le(&mut out, f);
            }
        }
        u32le(&mut out, self.trainable.len());
        for (&block, &flag) in &self.trainable {
            out.push(block);
            out.push(u8::from(flag));
        }
        for p in &self.params {
            for v in p.weights.iter().chain(&p.bias) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_reader(mut r: impl Read) -> std::io::Result<Result<Self>> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MODEL_MAGIC {
            return Ok(Err(Error::BadMagic));
        }
        let mut b2 = [0u8; 2];
        r.read_exact(&mut b2)?;
        let version = u16::from_le_bytes(b2);
        if version != MODEL_VERSION {
            return Ok(Err(Error::VersionUnsupported(version)));
        }
        let read_u32 = |r: &mut dyn Read| -> std::io::Result<usize> {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            Ok(u32::from_le_bytes(b) as usize)
        };
        let (c, h, w) = (read_u32(&mut r)?, read_u32(&mut r)?, read_u32(&mut r)?);
        let n_layers = read_u32(&mut r)?;
        let mut layers = Vec::with_capacity(n_layers.min(1024));
        for _ in 0..n_layers {
            let mut head = [0u8; 2];
            r.read_exact(&mut head)?;
            let mut f = [0usize; 5];
            for v in &mut f {
                *v = read_u32(&mut r)?;
            }
            let kind = match head[0] {
                KIND_CONV => LayerKind::Conv {
                    in_channels: f[0],
                    out_channels: f[1],
                    kernel: f[2],
                    stride: f[3],
                    padding: f[4],
                },
                KIND_RELU => LayerKind::Relu,
                KIND_MAXPOOL => LayerKind::MaxPool {
                    window: f[0],
                    stride: f[1],
                },
                KIND_FLATTEN => LayerKind::Flatten,
                KIND_DENSE => LayerKind::Dense {
                    inputs: f[0],
                    outputs: f[1],
                },
                KIND_SOFTMAX => LayerKind::Softmax,
                other => {
                    return Ok(Err(Error::InvalidArchitecture(format!(
                        "unknown layer kind code {other}"
                    ))))
                }
            };
            layers.push(LayerSpec::new(kind, head[1]));
        }
        let n_blocks = read_u32(&mut r)?;
        let mut trainable = BTreeMap::new();
        for _ in 0..n_blocks {
            let mut b = [0u8; 2];
            r.read_exact(&mut b)?;
            trainable.insert(b[0], b[1] != 0);
        }
        let mut params = Vec::with_capacity(layers.len());
        for layer in &layers {
            let (nw, nb) = layer.kind.param_counts();
            let mut read_f32s = |n: usize| -> std::io::Result<Vec<f32>> {
                let mut buf = vec![0u8; n * 4];
                r.read_exact(&mut buf)?;
                Ok(buf
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                    .collect())
            };
            let weights = read_f32s(nw)?;
            let bias = read_f32s(nb)?;
            params.push(LayerParams { weights, bias });
        }
        Ok(TinyNet::from_parts(layers, Shape::new(c, h, w), params, trainable))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut cursor = bytes.as_slice();
        let net = Self::from_reader(&mut cursor).map_err(|e| Error::io(path, e))??;
        if !cursor.is_empty() {
            return Err(Error::Malformed {
                path: path.into(),
                reason: format!("{} trailing bytes", cursor.len()),
            });
        }
        Ok(net)
    }
}
