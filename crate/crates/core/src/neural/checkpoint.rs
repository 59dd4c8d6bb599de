//! Binary checkpoint format.
//!
//! ```text
//! magic    b"USTMLP01"
//! u64 LE   header length
//! header   JSON MlpConfig (layer_dims, dropout_rates, activation)
//! f64 LE   per layer: weights (row-major, input-major) then bias
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Layer, Mlp, MlpConfig};
use crate::error::{Result, UstError};

const MAGIC: &[u8; 8] = b"USTMLP01";

pub fn write_checkpoint<W: Write>(model: &Mlp, mut w: W) -> std::io::Result<()> {
    let header = serde_json::to_vec(model.config()).map_err(std::io::Error::other)?;
    w.write_all(MAGIC)?;
    w.write_all(&(header.len() as u64).to_le_bytes())?;
    w.write_all(&header)?;
    for layer in model.layers() {
        for v in layer.weights.iter().chain(&layer.bias) {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Mlp> {
    let bad = |e: std::io::Error| UstError::Checkpoint(e.to_string());
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(bad)?;
    if &magic != MAGIC {
        return Err(UstError::Checkpoint("bad magic".into()));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len).map_err(bad)?;
    let len = u64::from_le_bytes(len);
    if len > 1 << 20 {
        return Err(UstError::Checkpoint(format!("header of {len} bytes")));
    }
    let mut header = vec![0u8; len as usize];
    r.read_exact(&mut header).map_err(bad)?;
    let config: MlpConfig = serde_json::from_slice(&header)?;
    config.validate()?;

    let mut read_vec = |n: usize| -> Result<Vec<f64>> {
        let mut buf = vec![0u8; n * 8];
        r.read_exact(&mut buf).map_err(bad)?;
        Ok(buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    };
    let mut layers = Vec::new();
    for dims in config.layer_dims.windows(2) {
        let weights = read_vec(dims[0] * dims[1])?;
        let bias = read_vec(dims[1])?;
        layers.push(Layer {
            inputs: dims[0],
            outputs: dims[1],
            weights,
            bias,
        });
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(bad)? != 0 {
        return Err(UstError::Checkpoint("trailing bytes".into()));
    }
    Mlp::from_parts(config, layers)
}

impl Mlp {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| UstError::io(path, e))?;
        write_checkpoint(self, BufWriter::new(file)).map_err(|e| UstError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| UstError::io(path, e))?;
        read_checkpoint(BufReader::new(file))
    }
}
