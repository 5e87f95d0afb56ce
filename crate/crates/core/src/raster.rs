//! Raster files: little-endian `f32` samples with a JSON sidecar, and 8-bit
//! PGM export.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: bad sidecar: {source}")]
    Sidecar {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("raster holds {got} bytes, sidecar implies {expected}")]
    SizeMismatch { expected: usize, got: usize },
    #[error("frames have differing shapes")]
    RaggedFrames,
}

/// Sidecar contents. `spacings` are mm per row, per column and per frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RasterMeta {
    pub rows: usize,
    pub cols: usize,
    pub frames: usize,
    pub spacings: [f64; 3],
}

pub fn sidecar_path(raster: &Path) -> PathBuf {
    raster.with_extension("json")
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RasterError + '_ {
    move |source| RasterError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes frames in order, each row-major, and the sidecar next to it.
pub fn write_raster(
    path: &Path,
    frames: &[Array2<f64>],
    spacings: [f64; 3],
) -> Result<RasterMeta, RasterError> {
    let (rows, cols) = frames.first().map(|f| f.dim()).unwrap_or((0, 0));
    if frames.iter().any(|f| f.dim() != (rows, cols)) {
        return Err(RasterError::RaggedFrames);
    }
    let meta = RasterMeta {
        rows,
        cols,
        frames: frames.len(),
        spacings,
    };
    let mut bytes = Vec::with_capacity(rows * cols * frames.len() * 4);
    for f in frames {
        for v in f.iter() {
            bytes.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    fs::write(path, &bytes).map_err(io_err(path))?;
    let side = sidecar_path(path);
    let json = serde_json::to_string_pretty(&meta).expect("meta serializes");
    fs::write(&side, json).map_err(io_err(&side))?;
    Ok(meta)
}

pub fn read_raster(path: &Path) -> Result<(Vec<Array2<f64>>, RasterMeta), RasterError> {
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(io_err(&side))?;
    let meta: RasterMeta = serde_json::from_str(&text).map_err(|source| RasterError::Sidecar {
        path: side.clone(),
        source,
    })?;
    let bytes = fs::read(path).map_err(io_err(path))?;
    let per_frame = meta.rows * meta.cols;
    let expected = per_frame * meta.frames * 4;
    if bytes.len() != expected {
        return Err(RasterError::SizeMismatch {
            expected,
            got: bytes.len(),
        });
    }
    let values: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let frames = values
        .chunks_exact(per_frame.max(1))
        .take(meta.frames)
        .map(|c| Array2::from_shape_vec((meta.rows, meta.cols), c.to_vec()).expect("sized"))
        .collect();
    Ok((frames, meta))
}

/// Binary PGM with `lo..=hi` mapped linearly onto 0..=255.
pub fn write_pgm(path: &Path, image: &Array2<f64>, lo: f64, hi: f64) -> Result<(), RasterError> {
    let (rows, cols) = image.dim();
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut out = Vec::with_capacity(rows * cols + 32);
    write!(out, "P5\n{cols} {rows}\n255\n").expect("vec write");
    out.extend(
        image
            .iter()
            .map(|v| (((v - lo) / span).clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    fs::write(path, out).map_err(io_err(path))
}
