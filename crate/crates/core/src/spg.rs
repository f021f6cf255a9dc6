//! Binary spectrogram files (`.spg`) for corpora generated directly in the
//! spectrogram domain.
//!
//! Layout, little-endian: magic `SPG1`, `u32` rows, `u32` columns, `f64`
//! time step, `f64` dB floor, `u8` scale (0 linear, 1 log), `rows × f64`
//! frequency axis, then `rows × columns` `f32` dB values in row-major order.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use thiserror::Error;

use crate::frontend::{FreqScale, Spectrogram};

const MAGIC: &[u8; 4] = b"SPG1";

#[derive(Debug, Error)]
pub enum SpgError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: not a spectrogram file ({detail})")]
    Format { path: PathBuf, detail: String },
}

pub fn encode(spec: &Spectrogram) -> Vec<u8> {
    let (rows, cols) = spec.values.dim();
    let mut out = Vec::with_capacity(29 + rows * 8 + rows * cols * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(rows as u32).to_le_bytes());
    out.extend_from_slice(&(cols as u32).to_le_bytes());
    out.extend_from_slice(&spec.time_step.to_le_bytes());
    out.extend_from_slice(&spec.db_floor.to_le_bytes());
    out.push(match spec.scale {
        FreqScale::Linear => 0,
        FreqScale::Log => 1,
    });
    for f in &spec.freq_axis {
        out.extend_from_slice(&f.to_le_bytes());
    }
    for &v in spec.values.iter() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Spectrogram, SpgError> {
    let fail = |detail: &str| SpgError::Format {
        path: path.to_path_buf(),
        detail: detail.to_string(),
    };
    if bytes.len() < 29 || &bytes[..4] != MAGIC {
        return Err(fail("bad magic"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes")) as usize;
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
    let (rows, cols) = (u32_at(4), u32_at(8));
    let time_step = f64_at(12);
    let db_floor = f64_at(20);
    let scale = match bytes[28] {
        0 => FreqScale::Linear,
        1 => FreqScale::Log,
        _ => return Err(fail("unknown frequency scale")),
    };
    let expected = 29 + rows * 8 + rows * cols * 4;
    if bytes.len() != expected || rows == 0 || cols == 0 {
        return Err(fail(&format!("expected {expected} bytes for {rows}x{cols}, found {}", bytes.len())));
    }
    let freq_axis: Vec<f64> = (0..rows).map(|r| f64_at(29 + 8 * r)).collect();
    if freq_axis.windows(2).any(|w| w[1] <= w[0]) {
        return Err(fail("frequency axis not increasing"));
    }
    let base = 29 + rows * 8;
    let values: Vec<f64> = bytes[base..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok(Spectrogram {
        values: Array2::from_shape_vec((rows, cols), values).expect("length checked"),
        time_step,
        freq_axis,
        scale,
        db_floor,
    })
}

pub fn write_spg(path: &Path, spec: &Spectrogram) -> Result<(), SpgError> {
    fs::write(path, encode(spec)).map_err(|source| SpgError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_spg(path: &Path) -> Result<Spectrogram, SpgError> {
    let bytes = fs::read(path).map_err(|source| SpgError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_of_f32_values() {
        let values = Array2::from_shape_fn((3, 4), |(r, c)| -80.0 + (r * 4 + c) as f64 * 0.5);
        let spec = Spectrogram {
            values,
            time_step: 0.004,
            freq_axis: vec![100.0, 200.0, 400.0],
            scale: FreqScale::Log,
            db_floor: -80.0,
        };
        let back = decode(&encode(&spec), Path::new("x")).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn garbage_rejected() {
        assert!(decode(b"nope", Path::new("x")).is_err());
        let mut b = encode(&Spectrogram {
            values: Array2::zeros((1, 1)),
            time_step: 1.0,
            freq_axis: vec![1.0],
            scale: FreqScale::Linear,
            db_floor: -80.0,
        });
        b.pop();
        assert!(decode(&b, Path::new("x")).is_err());
    }
}
