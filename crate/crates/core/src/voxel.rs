//! Voxel-grid tensorization of event windows.
//!
//! Each event is spread over the two temporal bins nearest to its normalized
//! timestamp `t* = (B - 1)(t - t0) / (t1 - t0)` with the triangular kernel
//! `max(0, 1 - |b - t*|)`, signed by polarity.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::events::EventStream;

pub const DEFAULT_BINS: usize = 5;
pub const VOXEL_MAGIC: &[u8; 4] = b"VOX1";

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    bins: usize,
    height: usize,
    width: usize,
    values: Vec<f32>,
    source_window: (u64, u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Normalization {
    #[default]
    None,
    /// Divide by the standard deviation of the nonzero entries.
    UnitStd,
}

impl VoxelGrid {
    pub fn zeros(bins: usize, height: usize, width: usize) -> Self {
        VoxelGrid {
            bins,
            height,
            width,
            values: vec![0.0; bins * height * width],
            source_window: (0, 0),
        }
    }

    pub fn from_raw(bins: usize, height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        if bins == 0 {
            return Err(Error::Argument("voxel grid needs at least one bin".into()));
        }
        if values.len() != bins * height * width {
            return Err(Error::Argument(format!(
                "{} values do not fill a {bins}x{height}x{width} grid",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument(
                "voxel grid contains non-finite values".into(),
            ));
        }
        Ok(VoxelGrid {
            bins,
            height,
            width,
            values,
            source_window: (0, 0),
        })
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn source_window(&self) -> (u64, u64) {
        self.source_window
    }

    /// Values in bin-major, then row-major order.
    pub fn values(&self) -> &[f32] {
        &self.values
    }

    #[inline]
    pub fn get(&self, bin: usize, y: usize, x: usize) -> f32 {
        self.values[(bin * self.height + y) * self.width + x]
    }

    pub fn bin(&self, bin: usize) -> &[f32] {
        let plane = self.height * self.width;
        &self.values[bin * plane..(bin + 1) * plane]
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().map(|&v| f64::from(v)).sum()
    }

    pub fn normalize(&self, mode: Normalization) -> VoxelGrid {
        match mode {
            Normalization::None => self.clone(),
            Normalization::UnitStd => {
                let nonzero: Vec<f64> = self
                    .values
                    .iter()
                    .filter(|&&v| v != 0.0)
                    .map(|&v| f64::from(v))
                    .collect();
                if nonzero.is_empty() {
                    return self.clone();
                }
                let n = nonzero.len() as f64;
                let mean = nonzero.iter().sum::<f64>() / n;
                let var = nonzero.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                let std = var.sqrt();
                // all nonzero entries equal: nothing to rescale against
                if std == 0.0 {
                    return self.clone();
                }
                VoxelGrid {
                    values: self
                        .values
                        .iter()
                        .map(|&v| (f64::from(v) / std) as f32)
                        .collect(),
                    ..self.clone()
                }
            }
        }
    }

    pub fn write_vox<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let mut buf = Vec::with_capacity(16 + self.values.len() * 4);
        buf.extend_from_slice(VOXEL_MAGIC);
        for dim in [self.bins, self.height, self.width] {
            buf.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        for v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)
    }

    pub fn read_vox<R: Read>(mut input: R) -> Result<Self> {
        let mut buf = Vec::new();
        input
            .read_to_end(&mut buf)
            .map_err(|e| Error::Format(format!("reading voxel grid: {e}")))?;
        if buf.len() < 16 || &buf[0..4] != VOXEL_MAGIC {
            return Err(Error::Format("missing VOX1 header".into()));
        }
        let dim = |o: usize| u32::from_le_bytes(buf[o..o + 4].try_into().unwrap()) as usize;
        let (bins, height, width) = (dim(4), dim(8), dim(12));
        let expected = bins
            .checked_mul(height)
            .and_then(|n| n.checked_mul(width))
            .and_then(|n| n.checked_mul(4))
            .and_then(|n| n.checked_add(16));
        if expected != Some(buf.len()) {
            return Err(Error::Format(format!(
                "voxel file of {} bytes does not match {bins}x{height}x{width}",
                buf.len()
            )));
        }
        let values = buf[16..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::from_raw(bins, height, width, values).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_vox(BufReader::new(file))
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        self.write_vox(&mut out)
            .and_then(|()| out.flush())
            .map_err(|e| Error::io(path, e))
    }
}

/// Builds a `bins`-channel voxel grid over the stream's window.
///
/// A degenerate window (`t0 == t1`) places every event in bin 0.
pub fn build_voxel_grid(stream: &EventStream, bins: usize) -> Result<VoxelGrid> {
    if bins == 0 {
        return Err(Error::Argument("voxel grid needs at least one bin".into()));
    }
    let (t0, t1) = stream.window();
    let (width, height) = (stream.width() as usize, stream.height() as usize);
    let plane = width * height;
    let mut acc = vec![0.0f64; bins * plane];
    let last = (bins - 1) as f64;
    let span = (t1 - t0) as f64;
    for e in stream.events() {
        debug_assert!(e.t >= t0 && e.t <= t1);
        let t_star = if t1 == t0 {
            0.0
        } else {
            last * (e.t - t0) as f64 / span
        };
        let lo = (t_star.floor() as usize).min(bins - 1);
        let frac = t_star - lo as f64;
        let p = e.polarity.as_f64();
        let pixel = e.y as usize * width + e.x as usize;
        acc[lo * plane + pixel] += p * (1.0 - frac);
        if frac > 0.0 && lo + 1 < bins {
            acc[(lo + 1) * plane + pixel] += p * frac;
        }
    }
    Ok(VoxelGrid {
        bins,
        height,
        width,
        values: round_preserving_sum(&acc),
        source_window: (t0, t1),
    })
}

/// Narrows to `f32`, carrying each rounding error into the next nonzero
/// entry. Entries are visited from largest to smallest magnitude, so the
/// stored total ends within half an ulp of the smallest nonzero entry.
/// Zero entries stay zero.
fn round_preserving_sum(acc: &[f64]) -> Vec<f32> {
    let mut order: Vec<usize> = (0..acc.len()).filter(|&i| acc[i] != 0.0).collect();
    order.sort_by(|&a, &b| acc[b].abs().total_cmp(&acc[a].abs()).then(a.cmp(&b)));
    let mut out = vec![0.0f32; acc.len()];
    let mut carry = 0.0f64;
    for i in order {
        let target = acc[i] + carry;
        out[i] = target as f32;
        carry = target - f64::from(out[i]);
    }
    out
}
