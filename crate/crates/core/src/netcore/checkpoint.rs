//! Checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! | field | type |
//! |---|---|
//! | magic | `b"DRCK"` |
//! | version | u32 |
//! | config length | u32 |
//! | config | UTF-8 JSON of [`ModelConfig`] |
//! | parameter count | u32 |
//! | per parameter: name length, name, rows, cols | u32, UTF-8, u32, u32 |
//! | per parameter: values | `rows·cols` f32, row-major |
//!
//! Parameters appear in store order.

use std::path::Path;

use super::{Model, ModelConfig};
use crate::autodiff::{Matrix, ParamStore};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"DRCK";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put_u32(buf: &mut Vec<u8>, v: usize) {
    buf.extend_from_slice(&(v as u32).to_le_bytes());
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(&CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let config = serde_json::to_vec(&model.config).map_err(|e| Error::json(path, e))?;
    put_u32(&mut buf, config.len());
    buf.extend_from_slice(&config);
    put_u32(&mut buf, model.params.len());
    for (_, name, m) in model.params.iter() {
        put_u32(&mut buf, name.len());
        buf.extend_from_slice(name.as_bytes());
        put_u32(&mut buf, m.rows);
        put_u32(&mut buf, m.cols);
        for &x in &m.data {
            buf.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Corrupt {
                path: self.path.to_path_buf(),
                reason: format!("truncated at byte {}", self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let corrupt = |reason: String| Error::Corrupt {
        path: path.to_path_buf(),
        reason,
    };
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
        path,
    };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(corrupt("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()? as u32;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Schema {
            path: path.to_path_buf(),
            expected: format!("checkpoint version {CHECKPOINT_VERSION}"),
            found: format!("version {version}"),
        });
    }
    let n = r.u32()?;
    let config: ModelConfig =
        serde_json::from_slice(r.take(n)?).map_err(|e| Error::json(path, e))?;
    config.validate()?;
    let count = r.u32()?;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let n = r.u32()?;
        let name = std::str::from_utf8(r.take(n)?)
            .map_err(|_| corrupt("parameter name is not UTF-8".into()))?
            .to_string();
        let (rows, cols) = (r.u32()?, r.u32()?);
        let raw = r.take(rows * cols * 4)?;
        let data: Vec<f64> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        if data.iter().any(|x| !x.is_finite()) {
            return Err(corrupt(format!("parameter {name} has non-finite values")));
        }
        if params.find(&name).is_some() {
            return Err(corrupt(format!("duplicate parameter {name}")));
        }
        params.add(name, Matrix::from_vec(rows, cols, data));
    }
    if r.pos != bytes.len() {
        return Err(corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let expected = super::init_params(&config, 0);
    for (_, name, m) in expected.iter() {
        match params.find(name) {
            Some(id) if params.get(id).shape() == m.shape() => {}
            Some(id) => {
                return Err(corrupt(format!(
                    "parameter {name} has shape {:?}, config implies {:?}",
                    params.get(id).shape(),
                    m.shape()
                )))
            }
            None => return Err(corrupt(format!("missing parameter {name}"))),
        }
    }
    if params.len() != expected.len() {
        return Err(corrupt("unexpected extra parameters".into()));
    }
    Ok(Model { config, params })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let cfg = ModelConfig {
            feature_dim: 4,
            context_hidden: 4,
            object_hidden: 4,
            graph_hidden: 4,
            temporal_hidden: 6,
            accident_hidden: 3,
            head_hidden: 3,
            heads: 2,
            ..ModelConfig::default()
        };
        let model = Model::new(cfg, 11).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&model, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, model);

        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Corrupt { .. })));
        std::fs::write(&path, b"nope").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Corrupt { .. })));
    }
}
