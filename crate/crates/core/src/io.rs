//! Small helpers for the on-disk formats: little-endian `f32` payloads and
//! JSON sidecars.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Result, T2lError};

pub fn write_f32_le(path: &Path, values: impl IntoIterator<Item = f32>) -> Result<()> {
    let file = File::create(path).map_err(|e| T2lError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for v in values {
        w.write_all(&v.to_le_bytes()).map_err(|e| T2lError::io(path, e))?;
    }
    w.flush().map_err(|e| T2lError::io(path, e))
}

pub fn read_f32_le(path: &Path) -> Result<Vec<f32>> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|f| BufReader::new(f).read_to_end(&mut bytes))
        .map_err(|e| T2lError::io(path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(T2lError::Incompatible {
            path: path.to_path_buf(),
            message: format!("payload length {} is not a multiple of 4", bytes.len()),
        });
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| T2lError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| T2lError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| T2lError::Incompatible {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| T2lError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f32_payload_roundtrip_is_little_endian() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.f32");
        write_f32_le(&p, [1.0f32, -2.5, f32::MIN_POSITIVE]).unwrap();
        let raw = fs::read(&p).unwrap();
        assert_eq!(&raw[..4], &1.0f32.to_le_bytes());
        assert_eq!(read_f32_le(&p).unwrap(), vec![1.0, -2.5, f32::MIN_POSITIVE]);
        fs::write(&p, [0u8; 5]).unwrap();
        assert!(matches!(read_f32_le(&p), Err(T2lError::Incompatible { .. })));
    }
}
