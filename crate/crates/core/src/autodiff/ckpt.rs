//! Parameter checkpoints: "FLUIDRPM-CKPT-1", a shape manifest line, then the
//! tensors' values as little-endian 32-bit floats.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::tensor::Tensor;

pub const CKPT_HEADER: &str = "FLUIDRPM-CKPT-1";

/// Writes tensors to a checkpoint file. Values are stored as f32 regardless
/// of the working precision.
pub fn save_tensors<S: Scalar>(path: &Path, tensors: &[Tensor<S>]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let shapes: Vec<String> = tensors
        .iter()
        .map(|t| t.shape().iter().map(|d| d.to_string()).collect::<Vec<_>>().join(","))
        .collect();
    write!(w, "{CKPT_HEADER}\n{}\n", shapes.join(" ")).map_err(|e| Error::io(path, e))?;
    for t in tensors {
        let mut bytes = Vec::with_capacity(t.len() * 4);
        for &v in t.values() {
            bytes.extend_from_slice(&(v.to_f64() as f32).to_le_bytes());
        }
        w.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a checkpoint back as f32 tensors.
pub fn load_tensors(path: &Path) -> Result<Vec<Tensor<f32>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);

    let mut line = String::new();
    r.read_line(&mut line).map_err(|e| Error::io(path, e))?;
    if line.trim_end_matches('\n') != CKPT_HEADER {
        return Err(Error::corrupt(path, format!("bad header {:?}", line.trim_end())));
    }
    line.clear();
    r.read_line(&mut line).map_err(|e| Error::io(path, e))?;
    let mut shapes: Vec<Vec<usize>> = Vec::new();
    for entry in line.trim_end().split(' ').filter(|s| !s.is_empty()) {
        let dims: std::result::Result<Vec<usize>, _> = entry.split(',').map(str::parse).collect();
        shapes.push(dims.map_err(|e| Error::corrupt(path, format!("bad shape {entry:?}: {e}")))?);
    }
    if shapes.is_empty() {
        return Err(Error::corrupt(path, "empty shape manifest"));
    }

    let mut tensors = Vec::with_capacity(shapes.len());
    for shape in &shapes {
        let len: usize = shape.iter().product();
        let mut bytes = vec![0u8; len * 4];
        r.read_exact(&mut bytes).map_err(|e| Error::corrupt(path, format!("truncated values: {e}")))?;
        let values: Vec<f32> =
            bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        tensors.push(Tensor::from_values(shape, values)?);
    }
    let mut rest = [0u8; 1];
    match r.read(&mut rest) {
        Ok(0) => Ok(tensors),
        Ok(_) => Err(Error::corrupt(path, "trailing bytes after tensor data")),
        Err(e) => Err(Error::io(path, e)),
    }
}
