//! Binary PGM (P5) export and import for canvases.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::raster::Canvas;
use crate::scalar::Scalar;

/// Encodes a canvas as a P5 PGM: intensity v becomes round(255·v), halves
/// away from zero.
pub fn pgm_bytes<S: Scalar>(canvas: &Canvas<S>) -> Vec<u8> {
    let side = crate::raster::CANVAS_SIZE;
    let mut bytes = format!("P5\n{side} {side}\n255\n").into_bytes();
    bytes.extend(canvas.pixels().iter().map(|&v| {
        let v = v.to_f64().clamp(0.0, 1.0);
        (255.0 * v).round() as u8
    }));
    bytes
}

pub fn write_pgm<S: Scalar>(path: &Path, canvas: &Canvas<S>) -> Result<()> {
    fs::write(path, pgm_bytes(canvas)).map_err(|e| Error::io(path, e))
}

/// Reads a P5 PGM with maxval 255. Returns (width, height, row-major bytes).
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let data = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut pos = 0usize;

    let mut token = |data: &[u8]| -> Result<String> {
        // Skip whitespace and # comment lines between header fields.
        loop {
            while pos < data.len() && data[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < data.len() && data[pos] == b'#' {
                while pos < data.len() && data[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < data.len() && !data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::corrupt(path, "truncated header"));
        }
        Ok(String::from_utf8_lossy(&data[start..pos]).into_owned())
    };

    if token(&data)? != "P5" {
        return Err(Error::corrupt(path, "not a binary PGM (missing P5 magic)"));
    }
    let width: usize =
        token(&data)?.parse().map_err(|_| Error::corrupt(path, "bad width"))?;
    let height: usize =
        token(&data)?.parse().map_err(|_| Error::corrupt(path, "bad height"))?;
    let maxval: usize =
        token(&data)?.parse().map_err(|_| Error::corrupt(path, "bad maxval"))?;
    if maxval != 255 {
        return Err(Error::corrupt(path, format!("maxval {maxval}, want 255")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if pos >= data.len() || !data[pos].is_ascii_whitespace() {
        return Err(Error::corrupt(path, "missing raster separator"));
    }
    pos += 1;
    let raster = &data[pos..];
    if raster.len() != width * height {
        return Err(Error::corrupt(
            path,
            format!("raster holds {} bytes, want {}", raster.len(), width * height),
        ));
    }
    Ok((width, height, raster.to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::CANVAS_SIZE;

    #[test]
    fn round_trips_quantized_pixels() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.pgm");
        let mut canvas: Canvas<f64> = Canvas::new();
        canvas.set(0, 0, 1.0);
        canvas.set(1, 2, 0.5);
        canvas.set(99, 99, 1.0 / 3.0);
        write_pgm(&path, &canvas).unwrap();

        let (w, h, bytes) = read_pgm(&path).unwrap();
        assert_eq!((w, h), (CANVAS_SIZE, CANVAS_SIZE));
        assert_eq!(bytes[0], 255);
        assert_eq!(bytes[1 * CANVAS_SIZE + 2], 128, "0.5 rounds away from zero");
        assert_eq!(bytes[99 * CANVAS_SIZE + 99], 85);
        assert_eq!(bytes.iter().filter(|&&b| b != 0).count(), 3);
    }

    #[test]
    fn rejects_malformed_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.pgm");

        std::fs::write(&path, b"P6\n2 2\n255\n0000").unwrap();
        assert!(read_pgm(&path).is_err());

        std::fs::write(&path, b"P5\n2 2\n255\n000").unwrap();
        let err = read_pgm(&path).unwrap_err().to_string();
        assert!(err.contains("bad.pgm"), "{err}");

        std::fs::write(&path, b"P5\n2 2\n64\n0000").unwrap();
        assert!(read_pgm(&path).is_err());
    }

    #[test]
    fn header_comments_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.pgm");
        std::fs::write(&path, b"P5\n# a note\n2 1\n255\nAB").unwrap();
        let (w, h, bytes) = read_pgm(&path).unwrap();
        assert_eq!((w, h, bytes), (2, 1, vec![b'A', b'B']));
    }
}
