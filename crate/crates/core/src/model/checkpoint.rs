//! `HCM1` checkpoints: magic, u32 LE layer count, per-layer u32 LE
//! rows/cols, then every weight matrix (row-major) followed by its bias as
//! f64 LE, layer by layer.

use std::io::{Read, Write};

use ndarray::{Array1, Array2};

use super::{EncoderModel, Layer};
use crate::data::io::ByteReader;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"HCM1";

pub fn write_checkpoint<W: Write>(mut w: W, model: &EncoderModel) -> std::io::Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&(model.layers.len() as u32).to_le_bytes())?;
    for layer in &model.layers {
        w.write_all(&(layer.outputs() as u32).to_le_bytes())?;
        w.write_all(&(layer.inputs() as u32).to_le_bytes())?;
    }
    for layer in &model.layers {
        for v in layer.weight.iter().chain(layer.bias.iter()) {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()
}

/// Reads the layer stack; the encoder/projection split comes from the
/// sidecar metadata and is applied by the caller.
pub fn read_checkpoint<R: Read>(r: R) -> Result<Vec<Layer>> {
    let mut r = ByteReader::new(r);
    r.expect_magic(CHECKPOINT_MAGIC)?;
    let count = r.u32()? as usize;
    let mut shapes = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        shapes.push((rows, cols));
    }
    let mut layers = Vec::with_capacity(shapes.len());
    for (rows, cols) in shapes {
        let weight = (0..rows * cols)
            .map(|_| r.f64())
            .collect::<Result<Vec<_>>>()?;
        let bias = (0..rows).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        layers.push(Layer {
            weight: Array2::from_shape_vec((rows, cols), weight)
                .map_err(|e| Error::format(r.offset(), e.to_string()))?,
            bias: Array1::from(bias),
        });
    }
    r.expect_eof()?;
    Ok(layers)
}
