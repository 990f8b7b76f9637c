//! Frames and real-valued image buffers.

use std::path::Path;

use image::RgbImage;

use crate::error::{Error, Result};

/// A timestamped 8-bit RGB frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub timestamp_us: u64,
    pub image: RgbImage,
}

impl Frame {
    pub fn new(timestamp_us: u64, image: RgbImage) -> Self {
        Frame {
            timestamp_us,
            image,
        }
    }

    pub fn width(&self) -> u32 {
        self.image.width()
    }

    pub fn height(&self) -> u32 {
        self.image.height()
    }
}

/// BT.601 luma of an RGB triple.
#[inline]
pub fn luma(r: f64, g: f64, b: f64) -> f64 {
    0.299 * r + 0.587 * g + 0.114 * b
}

/// Luma plane of an 8-bit image, row-major.
pub fn luma_plane(image: &RgbImage) -> Vec<f64> {
    image
        .pixels()
        .map(|p| luma(f64::from(p[0]), f64::from(p[1]), f64::from(p[2])))
        .collect()
}

pub fn load_png(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    image::open(path)
        .map(|img| img.to_rgb8())
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

pub fn save_png(image: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    image.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Three-channel real-valued image with values nominally in `[0, 255]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatImage {
    width: u32,
    height: u32,
    data: Vec<f32>,
}

impl FloatImage {
    pub fn zeros(width: u32, height: u32) -> Self {
        FloatImage {
            width,
            height,
            data: vec![0.0; width as usize * height as usize * 3],
        }
    }

    pub fn from_raw(width: u32, height: u32, data: Vec<f32>) -> Result<Self> {
        if data.len() != width as usize * height as usize * 3 {
            return Err(Error::Argument(format!(
                "{} samples do not fill a {width}x{height}x3 image",
                data.len()
            )));
        }
        Ok(FloatImage {
            width,
            height,
            data,
        })
    }

    pub fn from_rgb8(image: &RgbImage) -> Self {
        FloatImage {
            width: image.width(),
            height: image.height(),
            data: image.as_raw().iter().map(|&v| f32::from(v)).collect(),
        }
    }

    /// Rounds to the nearest integer and clamps to `[0, 255]`.
    pub fn to_rgb8(&self) -> RgbImage {
        let raw = self
            .data
            .iter()
            .map(|&v| v.round().clamp(0.0, 255.0) as u8)
            .collect();
        RgbImage::from_raw(self.width, self.height, raw).expect("buffer sized at construction")
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn pixel(&self, x: u32, y: u32) -> [f32; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: u32, y: u32, value: [f32; 3]) {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.data[i..i + 3].copy_from_slice(&value);
    }

    /// Elementwise `a * self + b * other`.
    pub fn combine(&self, a: f32, other: &FloatImage, b: f32) -> Result<FloatImage> {
        if self.dims() != other.dims() {
            return Err(Error::Argument("image dimensions differ".into()));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&u, &v)| a * u + b * v)
            .collect();
        Ok(FloatImage { data, ..*self })
    }
}
