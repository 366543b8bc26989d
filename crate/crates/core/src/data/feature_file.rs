//! `TSFF` feature files: one video's per-frame conv and fc activations.
//!
//! Layout, little-endian throughout:
//!
//! | offset   | size        | field                                        |
//! |---------:|------------:|----------------------------------------------|
//! | 0        | 4           | magic `TSFF`                                 |
//! | 4        | 2           | format version (`u16`, currently 1)          |
//! | 6        | 1           | conv layout: 0 spatial `C×H×W`, 1 pooled `C` |
//! | 7        | 1           | reserved, zero                               |
//! | 8        | 4           | label (`u32`)                                |
//! | 12       | 4           | frame count `T` (`u32`, ≥ 1)                 |
//! | 16       | 4           | conv channels `C`                            |
//! | 20       | 4           | conv height `H` (1 when pooled)              |
//! | 24       | 4           | conv width `W` (1 when pooled)               |
//! | 28       | 4           | fc dim `F`                                   |
//! | 32       | 2           | video id length `n` (`u16`)                  |
//! | 34       | n           | video id, UTF-8                              |
//! | 34+n     | 4·T·(CHW+F) | payload: for each frame, `C·H·W` conv values |
//! |          |             | (channel-major) then `F` fc values, `f32`    |
//! | end−4    | 4           | CRC-32 (IEEE) of the payload bytes           |

use std::path::Path;

use crate::error::{Error, Result};
use crate::fsio::{read_all, write_atomic};
use crate::model::{ConvPooling, Sample};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"TSFF";
pub const VERSION: u16 = 1;
const FIXED_HEADER: usize = 34;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvLayout {
    Spatial {
        channels: usize,
        height: usize,
        width: usize,
    },
    Pooled {
        dim: usize,
    },
}

impl ConvLayout {
    pub fn frame_len(&self) -> usize {
        match *self {
            ConvLayout::Spatial {
                channels,
                height,
                width,
            } => channels * height * width,
            ConvLayout::Pooled { dim } => dim,
        }
    }

    /// Per-frame vector length after applying `pooling` at load.
    pub fn pooled_len(&self, pooling: ConvPooling) -> usize {
        match (*self, pooling) {
            (ConvLayout::Spatial { channels, .. }, ConvPooling::SpatialAverage) => channels,
            _ => self.frame_len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFile {
    pub video_id: String,
    pub label: u32,
    pub conv_layout: ConvLayout,
    pub fc_dim: usize,
    pub frames: usize,
    /// `frames × conv_layout.frame_len()` values, frame-major.
    pub conv: Vec<f32>,
    /// `frames × fc_dim` values, frame-major.
    pub fc: Vec<f32>,
}

impl FeatureFile {
    /// Narrows a sample's values to `f32`. `layout` describes how the conv
    /// vectors are laid out; its frame length must match.
    pub fn from_sample(s: &Sample, layout: ConvLayout) -> Result<Self> {
        let conv_len = layout.frame_len();
        let fc_dim = s.fc.first().map_or(0, |t| t.len());
        let mut conv = Vec::with_capacity(s.len() * conv_len);
        let mut fc = Vec::with_capacity(s.len() * fc_dim);
        for (c, f) in s.conv.iter().zip(&s.fc) {
            if c.len() != conv_len {
                return Err(Error::dim("feature file conv frame", c.shape(), &[conv_len]));
            }
            if f.len() != fc_dim {
                return Err(Error::dim("feature file fc frame", f.shape(), &[fc_dim]));
            }
            conv.extend(c.values().iter().map(|&v| v as f32));
            fc.extend(f.values().iter().map(|&v| v as f32));
        }
        Ok(Self {
            video_id: s.video_id.clone(),
            label: s.label as u32,
            conv_layout: layout,
            fc_dim,
            frames: s.len(),
            conv,
            fc,
        })
    }

    pub fn conv_frame(&self, t: usize) -> &[f32] {
        let n = self.conv_layout.frame_len();
        &self.conv[t * n..(t + 1) * n]
    }

    pub fn fc_frame(&self, t: usize) -> &[f32] {
        &self.fc[t * self.fc_dim..(t + 1) * self.fc_dim]
    }

    /// Widens to `f64`, pooling spatial conv maps if asked.
    pub fn to_sample(&self, pooling: ConvPooling) -> Result<Sample> {
        let widen = |v: &[f32]| Tensor::vector(v.iter().map(|&x| f64::from(x)).collect());
        let conv = (0..self.frames)
            .map(|t| {
                let frame = self.conv_frame(t);
                match (self.conv_layout, pooling) {
                    (
                        ConvLayout::Spatial {
                            channels,
                            height,
                            width,
                        },
                        ConvPooling::SpatialAverage,
                    ) => {
                        let area = height * width;
                        Tensor::vector(
                            (0..channels)
                                .map(|c| {
                                    frame[c * area..(c + 1) * area]
                                        .iter()
                                        .map(|&x| f64::from(x))
                                        .sum::<f64>()
                                        / area as f64
                                })
                                .collect(),
                        )
                    }
                    _ => widen(frame),
                }
            })
            .collect();
        let fc = (0..self.frames).map(|t| widen(self.fc_frame(t))).collect();
        Sample::new(self.video_id.clone(), self.label as usize, conv, fc)
    }

    fn validate(&self) -> Result<()> {
        if self.frames == 0 {
            return Err(Error::EmptySequence("feature file"));
        }
        if self.conv_layout.frame_len() == 0 || self.fc_dim == 0 {
            return Err(Error::Config(format!(
                "{}: zero-sized feature dimension",
                self.video_id
            )));
        }
        if self.conv.len() != self.frames * self.conv_layout.frame_len() {
            return Err(Error::dim(
                "feature file conv payload",
                &[self.conv.len()],
                &[self.frames, self.conv_layout.frame_len()],
            ));
        }
        if self.fc.len() != self.frames * self.fc_dim {
            return Err(Error::dim(
                "feature file fc payload",
                &[self.fc.len()],
                &[self.frames, self.fc_dim],
            ));
        }
        if self.video_id.len() > u16::MAX as usize {
            return Err(Error::Config("video id longer than 65535 bytes".into()));
        }
        Ok(())
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let (kind, c, h, w) = match self.conv_layout {
            ConvLayout::Spatial {
                channels,
                height,
                width,
            } => (0u8, channels, height, width),
            ConvLayout::Pooled { dim } => (1u8, dim, 1, 1),
        };
        let payload_len = 4 * (self.conv.len() + self.fc.len());
        let mut out = Vec::with_capacity(FIXED_HEADER + self.video_id.len() + payload_len + 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(kind);
        out.push(0);
        for v in [self.label as usize, self.frames, c, h, w, self.fc_dim] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.extend_from_slice(&(self.video_id.len() as u16).to_le_bytes());
        out.extend_from_slice(self.video_id.as_bytes());
        let payload_start = out.len();
        for t in 0..self.frames {
            for v in self.conv_frame(t).iter().chain(self.fc_frame(t)) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out[payload_start..]);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let corrupt = |reason: String| Error::Corruption {
            path: path.to_path_buf(),
            reason,
        };
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(Error::Format {
                path: path.to_path_buf(),
                found: String::from_utf8_lossy(&bytes[..bytes.len().min(4)]).into_owned(),
                expected: "TSFF",
            });
        }
        if bytes.len() < FIXED_HEADER {
            return Err(corrupt(format!("truncated header ({} bytes)", bytes.len())));
        }
        let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
        let version = u16_at(4);
        if version != VERSION {
            return Err(Error::Version {
                path: path.to_path_buf(),
                version: version.into(),
            });
        }
        let (label, frames, c, h, w, fc_dim) = (u32_at(8), u32_at(12), u32_at(16), u32_at(20), u32_at(24), u32_at(28));
        let conv_layout = match bytes[6] {
            0 => ConvLayout::Spatial {
                channels: c,
                height: h,
                width: w,
            },
            1 if h == 1 && w == 1 => ConvLayout::Pooled { dim: c },
            1 => return Err(corrupt(format!("pooled layout with spatial dims {h}x{w}"))),
            k => return Err(corrupt(format!("unknown conv layout {k}"))),
        };
        if frames == 0 || conv_layout.frame_len() == 0 || fc_dim == 0 {
            return Err(corrupt("zero frame count or feature dimension".into()));
        }
        let id_len = u16_at(32) as usize;
        let payload_start = FIXED_HEADER + id_len;
        let conv_len = conv_layout.frame_len();
        let payload_len = frames
            .checked_mul(conv_len + fc_dim)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| corrupt("declared sizes overflow".into()))?;
        let expected = payload_start + payload_len + 4;
        if bytes.len() < expected {
            return Err(corrupt(format!(
                "truncated: header declares {expected} bytes, file has {}",
                bytes.len()
            )));
        }
        if bytes.len() > expected {
            return Err(corrupt(format!(
                "{} unexpected trailing bytes after offset {expected}",
                bytes.len() - expected
            )));
        }
        let video_id = std::str::from_utf8(&bytes[FIXED_HEADER..payload_start])
            .map_err(|_| corrupt("video id is not UTF-8".into()))?
            .to_owned();
        let payload = &bytes[payload_start..payload_start + payload_len];
        let stored = u32::from_le_bytes(bytes[expected - 4..].try_into().unwrap());
        let computed = crc32fast::hash(payload);
        if stored != computed {
            return Err(corrupt(format!(
                "payload checksum {computed:08x} does not match stored {stored:08x}"
            )));
        }
        let mut conv = Vec::with_capacity(frames * conv_len);
        let mut fc = Vec::with_capacity(frames * fc_dim);
        for frame in payload.chunks_exact(4 * (conv_len + fc_dim)) {
            let vals = frame.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap()));
            for (i, v) in vals.enumerate() {
                if i < conv_len {
                    conv.push(v);
                } else {
                    fc.push(v);
                }
            }
        }
        Ok(Self {
            video_id,
            label: label as u32,
            conv_layout,
            fc_dim,
            frames,
            conv,
            fc,
        })
    }

    pub fn payload_crc(&self) -> u32 {
        let mut hasher = crc32fast::Hasher::new();
        for t in 0..self.frames {
            for v in self.conv_frame(t).iter().chain(self.fc_frame(t)) {
                hasher.update(&v.to_le_bytes());
            }
        }
        hasher.finalize()
    }
}

pub fn write_feature_file(path: &Path, file: &FeatureFile) -> Result<()> {
    write_atomic(path, &file.encode()?)
}

pub fn read_feature_file(path: &Path) -> Result<FeatureFile> {
    FeatureFile::decode(&read_all(path)?, path)
}
