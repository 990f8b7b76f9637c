//! Backward (gather) warping with bilinear sampling.
//!
//! Out-of-image taps read as zero. A pixel is valid only when every tap with
//! nonzero bilinear weight falls inside the source.

use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::frame::FloatImage;

#[derive(Debug, Clone, PartialEq)]
pub struct WarpResult {
    pub image: FloatImage,
    /// Row-major, one entry per pixel.
    pub validity: Vec<bool>,
}

impl WarpResult {
    /// Wraps an image as a fully valid warp.
    pub fn identity(image: FloatImage) -> Self {
        let n = image.width() as usize * image.height() as usize;
        WarpResult {
            image,
            validity: vec![true; n],
        }
    }

    pub fn valid_fraction(&self) -> f64 {
        if self.validity.is_empty() {
            return 0.0;
        }
        self.validity.iter().filter(|&&v| v).count() as f64 / self.validity.len() as f64
    }
}

fn warp_masked(source: &FloatImage, mask: Option<&[bool]>, flow: &FlowField) -> Result<WarpResult> {
    if source.dims() != flow.dims() {
        return Err(Error::Argument(format!(
            "source is {:?} but flow is {:?}",
            source.dims(),
            flow.dims()
        )));
    }
    let (w, h) = source.dims();
    let mut image = FloatImage::zeros(w, h);
    let mut validity = vec![false; w as usize * h as usize];
    for y in 0..h {
        for x in 0..w {
            let [dx, dy] = flow.get(x, y);
            let sx = f64::from(x) + f64::from(dx);
            let sy = f64::from(y) + f64::from(dy);
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as i64, y0 as i64);
            let taps = [
                (x0, y0, (1.0 - fx) * (1.0 - fy)),
                (x0 + 1, y0, fx * (1.0 - fy)),
                (x0, y0 + 1, (1.0 - fx) * fy),
                (x0 + 1, y0 + 1, fx * fy),
            ];
            let mut acc = [0.0f64; 3];
            let mut valid = true;
            for (tx, ty, weight) in taps {
                if weight == 0.0 {
                    continue;
                }
                if tx < 0 || ty < 0 || tx >= i64::from(w) || ty >= i64::from(h) {
                    valid = false;
                    continue;
                }
                let (tx, ty) = (tx as u32, ty as u32);
                if let Some(mask) = mask {
                    valid &= mask[ty as usize * w as usize + tx as usize];
                }
                let p = source.pixel(tx, ty);
                for c in 0..3 {
                    acc[c] += weight * f64::from(p[c]);
                }
            }
            image.set_pixel(x, y, acc.map(|v| v as f32));
            validity[y as usize * w as usize + x as usize] = valid;
        }
    }
    Ok(WarpResult { image, validity })
}

/// Samples `source` at `(x + dx, y + dy)` for every target pixel.
pub fn backward_warp(source: &FloatImage, flow: &FlowField) -> Result<WarpResult> {
    warp_masked(source, None, flow)
}

pub fn scale_flow(flow: &FlowField, factor: f32) -> FlowField {
    flow.scale(factor)
}

/// Warps an existing warp result a second time by a residual flow. A pixel
/// stays valid only if its new footprint is in-bounds and every tap it reads
/// was valid in the base warp.
pub fn compose_refinement(base: &WarpResult, residual: &FlowField) -> Result<WarpResult> {
    warp_masked(&base.image, Some(&base.validity), residual)
}
