//! Checkpoint container.
//!
//! ```text
//! offset  size  field
//! 0       8     magic  b"PDGSCKPT"
//! 8       4     format version, u32 little-endian (currently 1)
//! 12      4     header length H, u32 little-endian
//! 16      H     UTF-8 JSON header
//! 16+H    ...   parameter blobs: every tensor listed in the header, in
//!               order, as rows*cols little-endian f64 values, row-major
//! ```
//!
//! The header is `{"config": ModelConfig, "meta": any, "tensors": [{"name",
//! "rows", "cols"}]}`. Trailing bytes are rejected.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{GaModel, Mat, ModelConfig, ModelError};

const MAGIC: &[u8; 8] = b"PDGSCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("not a checkpoint (bad magic)")]
    Magic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("malformed header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("unexpected data after the last tensor")]
    Trailing,
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Serialize, Deserialize)]
struct TensorInfo {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    meta: serde_json::Value,
    tensors: Vec<TensorInfo>,
}

pub fn write_checkpoint<W: Write>(mut w: W, model: &GaModel, meta: &serde_json::Value) -> Result<(), CheckpointError> {
    let header = Header {
        config: model.config().clone(),
        meta: meta.clone(),
        tensors: model
            .param_names()
            .into_iter()
            .zip(model.params())
            .map(|(name, p)| TensorInfo {
                name,
                rows: p.rows,
                cols: p.cols,
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let len = u32::try_from(json.len()).map_err(|_| io::Error::other("header too large"))?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(&json)?;
    for p in model.params() {
        for v in &p.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(GaModel, serde_json::Value), CheckpointError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::Magic);
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    r.read_exact(&mut word)?;
    let mut json = vec![0u8; u32::from_le_bytes(word) as usize];
    r.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json)?;
    let mut params = Vec::with_capacity(header.tensors.len());
    let mut buf = [0u8; 8];
    for t in &header.tensors {
        let mut data = Vec::with_capacity(t.rows * t.cols);
        for _ in 0..t.rows * t.cols {
            r.read_exact(&mut buf)?;
            data.push(f64::from_le_bytes(buf));
        }
        params.push(Mat::from_vec(t.rows, t.cols, data));
    }
    if r.read(&mut buf)? != 0 {
        return Err(CheckpointError::Trailing);
    }
    Ok((GaModel::from_params(header.config, params)?, header.meta))
}

pub fn save_checkpoint(path: &Path, model: &GaModel, meta: &serde_json::Value) -> Result<(), CheckpointError> {
    write_checkpoint(BufWriter::new(File::create(path)?), model, meta)
}

pub fn load_checkpoint(path: &Path) -> Result<(GaModel, serde_json::Value), CheckpointError> {
    read_checkpoint(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_exact() {
        let m = GaModel::new(ModelConfig::small()).unwrap();
        let meta = serde_json::json!({"seed": 7});
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, &m, &meta).unwrap();
        assert_eq!(&bytes[..8], b"PDGSCKPT");
        let (back, meta_back) = read_checkpoint(bytes.as_slice()).unwrap();
        assert_eq!(back, m);
        assert_eq!(meta_back, meta);
        let header_len = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        assert_eq!(bytes.len(), 16 + header_len + 8 * m.param_count());
    }

    #[test]
    fn rejects_corruption() {
        let m = GaModel::new(ModelConfig::small()).unwrap();
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, &m, &serde_json::Value::Null).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(read_checkpoint(bad.as_slice()), Err(CheckpointError::Magic)));
        let mut bad = bytes.clone();
        bad[8] = 9;
        assert!(matches!(read_checkpoint(bad.as_slice()), Err(CheckpointError::Version(9))));
        let mut bad = bytes.clone();
        bad.push(0);
        assert!(matches!(read_checkpoint(bad.as_slice()), Err(CheckpointError::Trailing)));
        bytes.truncate(bytes.len() - 3);
        assert!(matches!(read_checkpoint(bytes.as_slice()), Err(CheckpointError::Io(_))));
    }
}
