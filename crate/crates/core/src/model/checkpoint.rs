//! Checkpoint file layout (all integers little-endian):
//!
//! ```text
//! "FCN1"
//! u32 header length, header JSON {format_version, dtype, config, class_names}
//! per parameter, in registry order:
//!     u32 name length, name (UTF-8), u32 rank, rank × u64 extents,
//!     raw scalars in the header's dtype
//! u32 CRC-32 of every preceding byte
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{build_model, Model, ModelConfig};
use crate::error::{Error, Result};
use crate::layers::Parameterized;
use crate::tensor::{DType, Scalar, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"FCN1";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    dtype: DType,
    config: ModelConfig,
    class_names: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint<T> {
    pub model: Model<T>,
    pub class_names: Vec<String>,
}

pub fn save_checkpoint<T: Scalar>(model: &Model<T>, class_names: &[String], path: &Path) -> Result<()> {
    let header = Header {
        format_version: FORMAT_VERSION,
        dtype: T::DTYPE,
        config: model.config().clone(),
        class_names: class_names.to_vec(),
    };
    let header = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(1 << 20);
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header);
    model.visit_params(&mut |p| {
        buf.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        buf.extend_from_slice(p.name.as_bytes());
        buf.extend_from_slice(&(p.value.rank() as u32).to_le_bytes());
        for &d in p.value.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in p.value.data() {
            v.write_le(&mut buf);
        }
    });
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Checksum {
                path: self.path.to_path_buf(),
                msg: "unexpected end of parameter data".into(),
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

fn corrupt(path: &Path, msg: impl Into<String>) -> Error {
    Error::Checksum {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

/// Loads a checkpoint, converting the stored scalars to `T` if needed.
/// Nothing is returned unless the whole file verifies.
pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Checkpoint<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 4 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(corrupt(path, "not a checkpoint (bad magic)"));
    }
    if bytes.len() < 12 {
        return Err(corrupt(path, "file truncated"));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let actual = crc32fast::hash(body);
    if stored != actual {
        return Err(corrupt(
            path,
            format!("CRC-32 mismatch (stored {stored:08x}, computed {actual:08x}); file truncated or corrupt"),
        ));
    }

    let mut r = Reader { bytes: body, pos: 4, path };
    let header_len = r.u32()? as usize;
    let header: Header = serde_json::from_slice(r.take(header_len)?)
        .map_err(|e| corrupt(path, format!("bad header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::Version {
            path: path.to_path_buf(),
            field: "format_version".into(),
            found: header.format_version.to_string(),
            expected: FORMAT_VERSION.to_string(),
        });
    }
    let mut model = build_model::<T>(&header.config, 0)?;

    let width = header.dtype.size_of();
    let mut values = Vec::new();
    let mut expected = Vec::new();
    model.visit_params(&mut |p| expected.push((p.name.clone(), p.value.shape().to_vec())));
    for (name, shape) in &expected {
        let name_len = r.u32()? as usize;
        let got_name = std::str::from_utf8(r.take(name_len)?).map_err(|_| corrupt(path, "parameter name is not UTF-8"))?;
        if got_name != name {
            return Err(corrupt(path, format!("expected parameter `{name}`, found `{got_name}`")));
        }
        let rank = r.u32()? as usize;
        let mut got_shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            got_shape.push(r.u64()? as usize);
        }
        if &got_shape != shape {
            return Err(corrupt(path, format!("parameter `{name}` has shape {got_shape:?}, expected {shape:?}")));
        }
        let count: usize = shape.iter().product();
        let raw = r.take(count * width)?;
        let data: Vec<T> = match header.dtype {
            DType::F32 => raw.chunks_exact(4).map(|b| T::from_f64_lossy(f32::read_le(b) as f64)).collect(),
            DType::F64 => raw.chunks_exact(8).map(|b| T::from_f64_lossy(f64::read_le(b))).collect(),
        };
        values.push(Tensor::new(shape, data)?);
    }
    if r.pos != body.len() {
        return Err(corrupt(path, format!("{} unexpected trailing bytes", body.len() - r.pos)));
    }
    model.restore(&values)?;
    Ok(Checkpoint {
        model,
        class_names: header.class_names,
    })
}

/// Loads a checkpoint and requires its configuration to equal `expected`,
/// reporting the first differing field.
pub fn load_checkpoint_expecting<T: Scalar>(path: &Path, expected: &ModelConfig) -> Result<Checkpoint<T>> {
    let ck = load_checkpoint::<T>(path)?;
    let found = serde_json::to_value(ck.model.config())?;
    let want = serde_json::to_value(expected)?;
    if let (Some(found), Some(want)) = (found.as_object(), want.as_object()) {
        for (field, w) in want {
            let f = found.get(field).cloned().unwrap_or_default();
            if &f != w {
                return Err(Error::Version {
                    path: path.to_path_buf(),
                    field: field.clone(),
                    found: f.to_string(),
                    expected: w.to_string(),
                });
            }
        }
    }
    Ok(ck)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::Mode;
    use crate::testutil::rand_tensor;

    fn small_cfg(num_classes: usize) -> ModelConfig {
        ModelConfig {
            input_size: 16,
            channel_plan: vec![4, 4, 8, 16],
            fc_plan: vec![8, 8],
            num_classes,
            se_reduction: 4,
            ..ModelConfig::default()
        }
    }

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("class_{i}")).collect()
    }

    #[test]
    fn round_trip_is_bit_exact_including_running_stats() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.fcn");
        let mut model = build_model::<f32>(&small_cfg(5), 7).unwrap();
        let x = rand_tensor::<f32>(&[4, 16, 16, 3], 1);
        // move the running statistics away from their initial values
        model.forward(&x, Mode::Train).unwrap();
        save_checkpoint(&model, &names(5), &path).unwrap();
        let mut loaded = load_checkpoint::<f32>(&path).unwrap();
        assert_eq!(loaded.class_names, names(5));
        assert_eq!(loaded.model.snapshot(), model.snapshot());
        let a = model.forward(&x, Mode::Infer).unwrap();
        let b = loaded.model.forward(&x, Mode::Infer).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn truncated_or_flipped_files_fail_checksum() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.fcn");
        let model = build_model::<f32>(&small_cfg(3), 1).unwrap();
        save_checkpoint(&model, &names(3), &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        for cut in [bytes.len() - 1, bytes.len() / 2, 9] {
            fs::write(&path, &bytes[..cut]).unwrap();
            assert!(matches!(load_checkpoint::<f32>(&path), Err(Error::Checksum { .. })), "cut {cut}");
        }
        let mut flipped = bytes.clone();
        flipped[bytes.len() / 3] ^= 0x40;
        fs::write(&path, &flipped).unwrap();
        assert!(matches!(load_checkpoint::<f32>(&path), Err(Error::Checksum { .. })));
        fs::write(&path, b"PNG\x00garbage").unwrap();
        assert!(matches!(load_checkpoint::<f32>(&path), Err(Error::Checksum { .. })));
    }

    #[test]
    fn class_count_mismatch_names_the_field() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.fcn");
        let model = build_model::<f32>(&small_cfg(4), 1).unwrap();
        save_checkpoint(&model, &names(4), &path).unwrap();
        match load_checkpoint_expecting::<f32>(&path, &small_cfg(15)) {
            Err(Error::Version { field, found, expected, .. }) => {
                assert_eq!(field, "num_classes");
                assert_eq!((found.as_str(), expected.as_str()), ("4", "15"));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(load_checkpoint_expecting::<f32>(&path, &small_cfg(4)).is_ok());
    }

    #[test]
    fn f64_checkpoint_loads_into_f32_model() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.fcn");
        let model = build_model::<f64>(&small_cfg(3), 2).unwrap();
        save_checkpoint(&model, &names(3), &path).unwrap();
        let loaded = load_checkpoint::<f32>(&path).unwrap();
        let want: Vec<Tensor<f32>> = model.snapshot().iter().map(Tensor::cast).collect();
        assert_eq!(loaded.model.snapshot(), want);
    }
}
