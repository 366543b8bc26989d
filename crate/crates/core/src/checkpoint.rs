//! Binary model checkpoints.
//!
//! Layout, all integers and floats little-endian:
//!
//! | offset | size | field                                          |
//! |-------:|-----:|------------------------------------------------|
//! | 0      | 4    | magic `FSM1`                                   |
//! | 4      | 4    | format version (`u32`, currently 1)            |
//! | 8      | 1    | variant: 0 conv_l, 1 fc_l, 2 fu_1, 3 fu_2      |
//! | 9      | 1    | conv pooling: 0 flatten, 1 spatial_average     |
//! | 10     | 2    | reserved, zero                                 |
//! | 12     | 8    | conv_dim (`u64`)                               |
//! | 20     | 8    | fc_dim                                         |
//! | 28     | 8    | hidden_dim                                     |
//! | 36     | 8    | merge_dim                                      |
//! | 44     | 8    | num_classes                                    |
//! | 52     | 8    | dropout_rate (`f64`)                           |
//! | 60     | 4    | tensor count (`u32`)                           |
//! | 64     | ...  | tensors in [`FusionModel::named_tensors`] order |
//! | end-4  | 4    | CRC-32 (IEEE) of every preceding byte          |
//!
//! Each tensor is `ndims: u32`, `ndims × u64` dims, then the `f64` values.

use std::path::Path;

use crate::error::{Error, Result};
use crate::fsio::{read_all, write_atomic};
use crate::model::{ConvPooling, FusionModel, ModelConfig, Variant};

pub const MAGIC: &[u8; 4] = b"FSM1";
pub const VERSION: u32 = 1;

pub fn encode(model: &FusionModel) -> Vec<u8> {
    let cfg = model.config();
    let mut out = Vec::with_capacity(64 + model.parameter_count() * 8 + 64);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(cfg.variant.code());
    out.push(match cfg.conv_pooling {
        ConvPooling::Flatten => 0,
        ConvPooling::SpatialAverage => 1,
    });
    out.extend_from_slice(&[0, 0]);
    for d in [cfg.conv_dim, cfg.fc_dim, cfg.hidden_dim, cfg.merge_dim, cfg.num_classes] {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    out.extend_from_slice(&cfg.dropout_rate.to_le_bytes());
    let tensors = model.tensors();
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Corruption {
                path: self.path.to_path_buf(),
                reason: format!("truncated at byte {}", self.pos),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<FusionModel> {
    let corrupt = |reason: String| Error::Corruption {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        let found = String::from_utf8_lossy(&bytes[..bytes.len().min(4)]).into_owned();
        return Err(Error::Format {
            path: path.to_path_buf(),
            found,
            expected: "FSM1",
        });
    }
    if bytes.len() < 68 {
        return Err(corrupt(format!("only {} bytes", bytes.len())));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let mut cur = Cursor {
        buf: body,
        pos: 4,
        path,
    };
    let version = cur.u32()?;
    if version != VERSION {
        return Err(Error::Version {
            path: path.to_path_buf(),
            version,
        });
    }
    if crc32fast::hash(body) != stored {
        return Err(corrupt("checksum mismatch".into()));
    }
    let variant = Variant::from_code(cur.u8()?).ok_or_else(|| corrupt("unknown variant code".into()))?;
    let conv_pooling = match cur.u8()? {
        0 => ConvPooling::Flatten,
        1 => ConvPooling::SpatialAverage,
        c => return Err(corrupt(format!("unknown pooling code {c}"))),
    };
    cur.take(2)?;
    let mut dims = [0usize; 5];
    for d in &mut dims {
        *d = cur.u64()? as usize;
    }
    let config = ModelConfig {
        variant,
        conv_dim: dims[0],
        fc_dim: dims[1],
        hidden_dim: dims[2],
        merge_dim: dims[3],
        num_classes: dims[4],
        dropout_rate: cur.f64()?,
        conv_pooling,
    };
    config.validate()?;
    let mut model = skeleton(config);
    let count = cur.u32()? as usize;
    let mut tensors = model.tensors_mut();
    if count != tensors.len() {
        return Err(corrupt(format!("expected {} tensors, found {count}", tensors.len())));
    }
    for t in tensors.iter_mut() {
        let ndims = cur.u32()? as usize;
        let mut shape = Vec::with_capacity(ndims);
        for _ in 0..ndims {
            shape.push(cur.u64()? as usize);
        }
        if shape != t.shape() {
            return Err(corrupt(format!("tensor shape {shape:?}, expected {:?}", t.shape())));
        }
        for v in t.values_mut() {
            *v = cur.f64()?;
        }
    }
    if cur.pos != body.len() {
        return Err(corrupt(format!("{} trailing bytes", body.len() - cur.pos)));
    }
    Ok(model)
}

fn skeleton(config: ModelConfig) -> FusionModel {
    // Shapes only; every value is overwritten by the decoder.
    FusionModel::from_seed(config, 0)
        .expect("validated config")
        .zeros_like()
}

pub fn save(model: &FusionModel, path: &Path) -> Result<()> {
    write_atomic(path, &encode(model))
}

pub fn load(path: &Path) -> Result<FusionModel> {
    decode(&read_all(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        for v in Variant::ALL {
            let cfg = ModelConfig::new(v, 5, 6, 3)
                .with_hidden(4)
                .with_merge(3)
                .with_dropout(0.3);
            let m = FusionModel::from_seed(cfg, 11).unwrap();
            let bytes = encode(&m);
            let back = decode(&bytes, Path::new("mem")).unwrap();
            assert_eq!(back, m);
            assert_eq!(encode(&back), bytes);
        }
    }

    #[test]
    fn detects_damage() {
        let m = FusionModel::from_seed(ModelConfig::new(Variant::Fu1, 5, 6, 3).with_hidden(4), 1).unwrap();
        let bytes = encode(&m);
        let p = Path::new("mem");

        let mut bad = bytes.clone();
        bad[..4].copy_from_slice(b"ABCD");
        assert!(matches!(decode(&bad, p), Err(Error::Format { .. })));

        let mut bad = bytes.clone();
        bad[100] ^= 0x40;
        assert!(matches!(decode(&bad, p), Err(Error::Corruption { .. })));

        assert!(matches!(
            decode(&bytes[..bytes.len() - 9], p),
            Err(Error::Corruption { .. })
        ));
    }
}
