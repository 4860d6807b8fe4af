//! Portable tensor file: one JSON header line, then the raw row-major
//! payload as little-endian 64-bit floats.
//!
//! Header: `{"shape":[...],"dtype":"f64"}` terminated by `\n`.

use crate::tensor::Tensor;
use crate::{NumError, Result};
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

#[derive(Serialize, Deserialize)]
struct Header {
    shape: Vec<usize>,
    dtype: String,
}

fn io_err(path: &Path, source: std::io::Error) -> NumError {
    NumError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn write_tensor(path: &Path, tensor: &Tensor) -> Result<()> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    let header = Header {
        shape: tensor.shape().to_vec(),
        dtype: "f64".to_string(),
    };
    let line = serde_json::to_string(&header).expect("header serialization cannot fail");
    w.write_all(line.as_bytes()).map_err(|e| io_err(path, e))?;
    w.write_all(b"\n").map_err(|e| io_err(path, e))?;
    for v in tensor.data() {
        w.write_all(&v.to_le_bytes()).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut r = BufReader::new(file);
    let mut line = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        let n = r.read(&mut byte).map_err(|e| io_err(path, e))?;
        if n == 0 {
            return Err(NumError::BadHeader {
                path: path.display().to_string(),
                detail: "missing newline-terminated header".into(),
            });
        }
        if byte[0] == b'\n' {
            break;
        }
        line.push(byte[0]);
    }
    let header: Header = serde_json::from_slice(&line).map_err(|e| NumError::BadHeader {
        path: path.display().to_string(),
        detail: e.to_string(),
    })?;
    if header.dtype != "f64" {
        return Err(NumError::BadHeader {
            path: path.display().to_string(),
            detail: format!("unsupported dtype {:?}", header.dtype),
        });
    }
    let numel: usize = header.shape.iter().product();
    let mut payload = vec![0u8; numel * 8];
    r.read_exact(&mut payload).map_err(|e| io_err(path, e))?;
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing).map_err(|e| io_err(path, e))? != 0 {
        return Err(NumError::BadHeader {
            path: path.display().to_string(),
            detail: "trailing bytes after payload".into(),
        });
    }
    let data: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::new(header.shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.f64");
        let t = Tensor::new(vec![2, 3], vec![1.5, -0.25, 3e-300, 0.0, 7.0, -1e9]).unwrap();
        write_tensor(&path, &t).unwrap();
        let back = read_tensor(&path).unwrap();
        assert_eq!(back.shape(), t.shape());
        for (a, b) in back.data().iter().zip(t.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.f64");
        std::fs::write(&path, b"{\"shape\":[4],\"dtype\":\"f64\"}\n\x00\x00").unwrap();
        assert!(read_tensor(&path).is_err());
    }
}
