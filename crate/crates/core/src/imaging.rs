//! RF to B-mode conversion, volume assembly, peak localization and CNR.

use ndarray::{Array2, ArrayView1, Axis};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ImagingError {
    #[error("frame envelope is zero everywhere")]
    AllZeroFrame,
    #[error("frame {index} has shape {got:?}, expected {expected:?}")]
    ShapeMismatch {
        index: usize,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("region {0:?} is empty or outside the {1}×{2} image")]
    RoiOutOfBounds(Roi, usize, usize),
    #[error("background region has zero variance")]
    ZeroBackgroundVariance,
    #[error("volume has no frames")]
    EmptyVolume,
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
}

/// Raw echo samples: rows are axial samples, columns are scan lines.
#[derive(Debug, Clone, PartialEq)]
pub struct RfFrame {
    pub samples: Array2<f64>,
    /// mm per sample
    pub axial_spacing: f64,
    /// mm per line
    pub lateral_spacing: f64,
}

impl RfFrame {
    pub fn new(
        samples: Array2<f64>,
        axial_spacing: f64,
        lateral_spacing: f64,
    ) -> Result<Self, ImagingError> {
        if !(axial_spacing > 0.0 && lateral_spacing > 0.0) {
            return Err(ImagingError::InvalidParameter("spacings must be positive"));
        }
        if samples.nrows() == 0 || samples.ncols() == 0 {
            return Err(ImagingError::InvalidParameter("frame must be non-empty"));
        }
        Ok(Self {
            samples,
            axial_spacing,
            lateral_spacing,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.samples.dim()
    }
}

/// Ordered stack of equally shaped images, `frame_spacing` mm apart.
#[derive(Debug, Clone, PartialEq)]
pub struct UsVolume {
    pub frames: Vec<Array2<f64>>,
    pub frame_spacing: f64,
}

impl UsVolume {
    /// Distance between the first and last frame, mm.
    pub fn elevational_extent(&self) -> f64 {
        self.frames.len().saturating_sub(1) as f64 * self.frame_spacing
    }

    pub fn frame_shape(&self) -> Option<(usize, usize)> {
        self.frames.first().map(|f| f.dim())
    }
}

/// `(row0, col0, rows, cols)` rectangle in image indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Roi {
    pub row0: usize,
    pub col0: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Roi {
    pub fn new(row0: usize, col0: usize, rows: usize, cols: usize) -> Self {
        Self {
            row0,
            col0,
            rows,
            cols,
        }
    }

    pub fn check(&self, shape: (usize, usize)) -> Result<(), ImagingError> {
        if self.rows == 0
            || self.cols == 0
            || self.row0 + self.rows > shape.0
            || self.col0 + self.cols > shape.1
        {
            Err(ImagingError::RoiOutOfBounds(*self, shape.0, shape.1))
        } else {
            Ok(())
        }
    }
}

/// Magnitude of the analytic signal, computed with a full-length FFT: the
/// positive frequencies are doubled, the negative ones zeroed, DC and Nyquist
/// kept. Lines shorter than two samples are returned as `|x|`.
pub fn hilbert_envelope(line: ArrayView1<f64>) -> Vec<f64> {
    let n = line.len();
    if n < 2 {
        return line.iter().map(|v| v.abs()).collect();
    }
    let mut planner = FftPlanner::<f64>::new();
    envelope_with(&mut planner, line)
}

fn envelope_with(planner: &mut FftPlanner<f64>, line: ArrayView1<f64>) -> Vec<f64> {
    let n = line.len();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut buf: Vec<Complex<f64>> = line.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fwd.process(&mut buf);
    let half = n / 2;
    for (k, c) in buf.iter_mut().enumerate() {
        let gain = if k == 0 || (n.is_multiple_of(2) && k == half) {
            1.0
        } else if k <= (n - 1) / 2 {
            2.0
        } else {
            0.0
        };
        *c *= gain;
    }
    inv.process(&mut buf);
    let scale = 1.0 / n as f64;
    buf.iter().map(|c| c.norm() * scale).collect()
}

/// Envelope of every scan line (column) of a frame.
pub fn frame_envelope(frame: &RfFrame) -> Array2<f64> {
    let (rows, cols) = frame.shape();
    let mut out = Array2::zeros((rows, cols));
    if rows < 2 {
        out.assign(&frame.samples.mapv(f64::abs));
        return out;
    }
    let mut planner = FftPlanner::<f64>::new();
    for (c, line) in frame.samples.axis_iter(Axis(1)).enumerate() {
        let env = envelope_with(&mut planner, line);
        for (r, v) in env.into_iter().enumerate() {
            out[(r, c)] = v;
        }
    }
    out
}

/// Log compression of an envelope image against `reference`:
/// `20 log10(env / reference)` clamped to `[−dr, 0]` and mapped onto `[0, 1]`.
pub fn log_compress(envelope: &Array2<f64>, reference: f64, dynamic_range_db: f64) -> Array2<f64> {
    envelope.mapv(|e| {
        let db = 20.0 * (e / reference).log10();
        let db = if db.is_nan() { -dynamic_range_db } else { db };
        (db.clamp(-dynamic_range_db, 0.0) + dynamic_range_db) / dynamic_range_db
    })
}

/// B-mode image normalized by the frame's own envelope maximum.
pub fn bmode(frame: &RfFrame, dynamic_range_db: f64) -> Result<Array2<f64>, ImagingError> {
    if !(dynamic_range_db > 0.0) {
        return Err(ImagingError::InvalidParameter("dynamic range must be positive"));
    }
    let env = frame_envelope(frame);
    let max = env.iter().cloned().fold(0.0, f64::max);
    if !(max > 0.0) {
        return Err(ImagingError::AllZeroFrame);
    }
    Ok(log_compress(&env, max, dynamic_range_db))
}

/// B-mode images of a sequence of frames sharing one normalization: the
/// largest envelope over all frames.
pub fn bmode_volume_normalized(
    frames: &[RfFrame],
    dynamic_range_db: f64,
) -> Result<Vec<Array2<f64>>, ImagingError> {
    if !(dynamic_range_db > 0.0) {
        return Err(ImagingError::InvalidParameter("dynamic range must be positive"));
    }
    let envs: Vec<_> = frames.iter().map(frame_envelope).collect();
    let max = envs
        .iter()
        .flat_map(|e| e.iter().cloned())
        .fold(0.0, f64::max);
    if !(max > 0.0) {
        return Err(ImagingError::AllZeroFrame);
    }
    Ok(envs
        .iter()
        .map(|e| log_compress(e, max, dynamic_range_db))
        .collect())
}

pub fn assemble_volume(
    frames: Vec<Array2<f64>>,
    spacing: f64,
) -> Result<UsVolume, ImagingError> {
    if !(spacing > 0.0) {
        return Err(ImagingError::InvalidParameter("frame spacing must be positive"));
    }
    if let Some(first) = frames.first() {
        let expected = first.dim();
        for (index, f) in frames.iter().enumerate() {
            if f.dim() != expected {
                return Err(ImagingError::ShapeMismatch {
                    index,
                    expected,
                    got: f.dim(),
                });
            }
        }
    }
    Ok(UsVolume {
        frames,
        frame_spacing: spacing,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub frame: usize,
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

/// Global maximum; ties go to the first voxel in (frame, row, col) order.
pub fn locate_peak(volume: &UsVolume) -> Result<Peak, ImagingError> {
    let mut best: Option<Peak> = None;
    for (f, img) in volume.frames.iter().enumerate() {
        for ((r, c), &v) in img.indexed_iter() {
            if best.is_none_or(|b| v > b.value) {
                best = Some(Peak {
                    frame: f,
                    row: r,
                    col: c,
                    value: v,
                });
            }
        }
    }
    best.ok_or(ImagingError::EmptyVolume)
}

/// Mean and population standard deviation of a region.
pub fn roi_stats(image: &Array2<f64>, roi: &Roi) -> Result<(f64, f64), ImagingError> {
    roi.check(image.dim())?;
    let view = image.slice(ndarray::s![
        roi.row0..roi.row0 + roi.rows,
        roi.col0..roi.col0 + roi.cols
    ]);
    let n = view.len() as f64;
    let mean = view.sum() / n;
    let var = view.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

/// `|m_t − m_b| / σ_b` with the population standard deviation of the
/// background region.
pub fn cnr(image: &Array2<f64>, target: &Roi, background: &Roi) -> Result<f64, ImagingError> {
    let (m_t, _) = roi_stats(image, target)?;
    let (m_b, s_b) = roi_stats(image, background)?;
    if !(s_b > 0.0) {
        return Err(ImagingError::ZeroBackgroundVariance);
    }
    Ok((m_t - m_b).abs() / s_b)
}
