//! Pixel-wise attention blending of candidate reconstructions.
//!
//! Candidate order is fixed: refined warp from the left keyframe, refined
//! warp from the right keyframe, synthesis.

use crate::error::{Error, Result};
use crate::frame::FloatImage;
use crate::voxel::VoxelGrid;

pub const CANDIDATES: usize = 3;
pub const CANDIDATE_NAMES: [&str; CANDIDATES] = ["refine_0", "refine_1", "synthesis"];

/// One score plane per candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMaps {
    width: u32,
    height: u32,
    scores: [Vec<f32>; CANDIDATES],
}

impl AttentionMaps {
    pub fn new(width: u32, height: u32, scores: [Vec<f32>; CANDIDATES]) -> Result<Self> {
        let n = width as usize * height as usize;
        if scores.iter().any(|s| s.len() != n) {
            return Err(Error::Argument(format!(
                "score planes must hold {n} values for {width}x{height}"
            )));
        }
        if scores.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Argument("attention scores must be finite".into()));
        }
        Ok(AttentionMaps {
            width,
            height,
            scores,
        })
    }

    pub fn uniform(width: u32, height: u32) -> Self {
        let n = width as usize * height as usize;
        AttentionMaps {
            width,
            height,
            scores: [vec![0.0; n], vec![0.0; n], vec![0.0; n]],
        }
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn scores(&self) -> &[Vec<f32>; CANDIDATES] {
        &self.scores
    }

    /// Softmax weights at pixel index `i`.
    #[inline]
    pub fn weights(&self, i: usize) -> [f64; CANDIDATES] {
        let s = [0, 1, 2].map(|k| f64::from(self.scores[k][i]));
        let max = s[0].max(s[1]).max(s[2]);
        let e = s.map(|v| (v - max).exp());
        let total = e[0] + e[1] + e[2];
        e.map(|v| v / total)
    }

    /// Stored as a three-bin `VOX1` grid.
    pub fn to_voxel_grid(&self) -> VoxelGrid {
        let values = self.scores.concat();
        VoxelGrid::from_raw(
            CANDIDATES,
            self.height as usize,
            self.width as usize,
            values,
        )
        .expect("scores are finite and sized")
    }

    pub fn from_voxel_grid(grid: &VoxelGrid) -> Result<Self> {
        if grid.bins() != CANDIDATES {
            return Err(Error::Format(format!(
                "attention maps need {CANDIDATES} planes, file has {}",
                grid.bins()
            )));
        }
        Self::new(
            grid.width() as u32,
            grid.height() as u32,
            [0, 1, 2].map(|k| grid.bin(k).to_vec()),
        )
    }
}

/// Softmax-weighted average of the candidates, clamped to `[0, 255]`.
pub fn blend(
    candidates: [&FloatImage; CANDIDATES],
    attention: &AttentionMaps,
) -> Result<FloatImage> {
    let dims = attention.dims();
    if candidates.iter().any(|c| c.dims() != dims) {
        return Err(Error::Argument(format!(
            "candidates must all match the {}x{} attention maps",
            dims.0, dims.1
        )));
    }
    let n = dims.0 as usize * dims.1 as usize;
    let mut out = Vec::with_capacity(n * 3);
    for i in 0..n {
        let w = attention.weights(i);
        for c in 0..3 {
            let v: f64 = (0..CANDIDATES)
                .map(|k| w[k] * f64::from(candidates[k].as_slice()[i * 3 + c]))
                .sum();
            out.push(v.clamp(0.0, 255.0) as f32);
        }
    }
    FloatImage::from_raw(dims.0, dims.1, out)
}

/// Per-candidate count of pixels where it holds the highest score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ContributionStats {
    pub counts: [u64; CANDIDATES],
}

impl ContributionStats {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Fractions of pixels per candidate. The last entry is computed as the
    /// remainder so the three always sum to one.
    pub fn fractions(&self) -> [f64; CANDIDATES] {
        let total = self.total();
        if total == 0 {
            return [0.0; CANDIDATES];
        }
        let f0 = self.counts[0] as f64 / total as f64;
        let f1 = self.counts[1] as f64 / total as f64;
        [f0, f1, 1.0 - (f0 + f1)]
    }

    pub fn merge(&self, other: &ContributionStats) -> ContributionStats {
        ContributionStats {
            counts: [0, 1, 2].map(|k| self.counts[k] + other.counts[k]),
        }
    }
}

/// Argmax of the scores per pixel; ties go to the lowest candidate index.
pub fn contribution_stats(attention: &AttentionMaps) -> ContributionStats {
    let mut counts = [0u64; CANDIDATES];
    let n = attention.dims().0 as usize * attention.dims().1 as usize;
    let [s0, s1, s2] = attention.scores();
    for ((&a, &b), &c) in s0.iter().zip(s1).zip(s2).take(n) {
        let mut best = if b > a { 1 } else { 0 };
        if c > [a, b][best] {
            best = 2;
        }
        counts[best] += 1;
    }
    ContributionStats { counts }
}
