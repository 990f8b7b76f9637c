//! Dense displacement fields and the Middlebury `.flo` format.
//!
//! A [`FlowField`] stores backward flow: for each target pixel `(x, y)` the
//! value `(dx, dy)` names the sampling location `(x + dx, y + dy)` in the
//! source image.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Magic number at the start of every `.flo` file.
pub const FLO_MAGIC: f32 = 202021.25;

#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    width: u32,
    height: u32,
    data: Vec<[f32; 2]>,
}

impl FlowField {
    pub fn zeros(width: u32, height: u32) -> Self {
        Self::constant(width, height, 0.0, 0.0)
    }

    pub fn constant(width: u32, height: u32, dx: f32, dy: f32) -> Self {
        FlowField {
            width,
            height,
            data: vec![[dx, dy]; width as usize * height as usize],
        }
    }

    pub fn from_fn<F: FnMut(u32, u32) -> [f32; 2]>(width: u32, height: u32, mut f: F) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        FlowField {
            width,
            height,
            data,
        }
    }

    pub fn from_raw(width: u32, height: u32, data: Vec<[f32; 2]>) -> Result<Self> {
        if data.len() != width as usize * height as usize {
            return Err(Error::Argument(format!(
                "{} vectors do not fill a {width}x{height} flow field",
                data.len()
            )));
        }
        if data.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Argument("flow contains non-finite values".into()));
        }
        Ok(FlowField {
            width,
            height,
            data,
        })
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

    pub fn as_slice(&self) -> &[[f32; 2]] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> [f32; 2] {
        self.data[y as usize * self.width as usize + x as usize]
    }

    /// Elementwise multiplication by `factor`.
    pub fn scale(&self, factor: f32) -> FlowField {
        FlowField {
            data: self
                .data
                .iter()
                .map(|&[dx, dy]| [dx * factor, dy * factor])
                .collect(),
            ..*self
        }
    }

    pub fn mean_magnitude(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        let sum: f64 = self
            .data
            .iter()
            .map(|&[dx, dy]| f64::from(dx).hypot(f64::from(dy)))
            .sum();
        sum / self.data.len() as f64
    }

    pub fn write_flo<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let mut buf = Vec::with_capacity(12 + self.data.len() * 8);
        buf.extend_from_slice(&FLO_MAGIC.to_le_bytes());
        buf.extend_from_slice(&(self.width as i32).to_le_bytes());
        buf.extend_from_slice(&(self.height as i32).to_le_bytes());
        for &[dx, dy] in &self.data {
            buf.extend_from_slice(&dx.to_le_bytes());
            buf.extend_from_slice(&dy.to_le_bytes());
        }
        out.write_all(&buf)
    }

    pub fn read_flo<R: Read>(mut input: R) -> Result<Self> {
        let mut buf = Vec::new();
        input
            .read_to_end(&mut buf)
            .map_err(|e| Error::Format(format!("reading flow: {e}")))?;
        if buf.len() < 12 {
            return Err(Error::Format("flow file shorter than its header".into()));
        }
        let word = |o: usize| -> [u8; 4] { buf[o..o + 4].try_into().unwrap() };
        if f32::from_le_bytes(word(0)) != FLO_MAGIC {
            return Err(Error::Format("bad .flo magic".into()));
        }
        let width = i32::from_le_bytes(word(4));
        let height = i32::from_le_bytes(word(8));
        if width < 0 || height < 0 {
            return Err(Error::Format(format!(
                "negative flow size {width}x{height}"
            )));
        }
        let count = width as usize * height as usize;
        if buf.len() != 12 + count * 8 {
            return Err(Error::Format(format!(
                "flow file has {} bytes, expected {}",
                buf.len(),
                12 + count * 8
            )));
        }
        let data = buf[12..]
            .chunks_exact(8)
            .map(|c| {
                [
                    f32::from_le_bytes(c[0..4].try_into().unwrap()),
                    f32::from_le_bytes(c[4..8].try_into().unwrap()),
                ]
            })
            .collect();
        Self::from_raw(width as u32, height as u32, data).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_flo(BufReader::new(file))
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        self.write_flo(&mut out)
            .and_then(|()| out.flush())
            .map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn scale_cases() {
        let f = FlowField::constant(3, 2, 2.0, -4.0);
        assert_eq!(f.scale(0.5), FlowField::constant(3, 2, 1.0, -2.0));
        assert_eq!(f.scale(1.0), f);
        assert!(f
            .scale(0.0)
            .as_slice()
            .iter()
            .all(|v| v[0] == 0.0 && v[1] == 0.0));
    }

    #[test]
    fn flo_header_layout() {
        let mut buf = Vec::new();
        FlowField::constant(2, 1, 1.5, -0.5)
            .write_flo(&mut buf)
            .unwrap();
        assert_eq!(buf.len(), 12 + 2 * 8);
        assert_eq!(f32::from_le_bytes(buf[0..4].try_into().unwrap()), 202021.25);
        assert_eq!(&buf[0..4], b"PIEH");
        assert_eq!(i32::from_le_bytes(buf[4..8].try_into().unwrap()), 2);
        assert_eq!(i32::from_le_bytes(buf[8..12].try_into().unwrap()), 1);
        assert_eq!(f32::from_le_bytes(buf[12..16].try_into().unwrap()), 1.5);
        assert_eq!(f32::from_le_bytes(buf[16..20].try_into().unwrap()), -0.5);
    }

    #[test]
    fn flo_rejects_bad_input() {
        let mut buf = Vec::new();
        FlowField::zeros(2, 2).write_flo(&mut buf).unwrap();
        assert!(FlowField::read_flo(&buf[..buf.len() - 4]).is_err());
        let mut nan = buf.clone();
        nan[12..16].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(FlowField::read_flo(&nan[..]).is_err());
        buf[0] ^= 1;
        assert!(FlowField::read_flo(&buf[..]).is_err());
    }

    proptest! {
        #[test]
        fn flo_round_trip(w in 0u32..6, h in 0u32..6, seed in prop::collection::vec(-50.0f32..50.0, 72)) {
            let f = FlowField::from_fn(w, h, |x, y| {
                let i = ((y * w + x) * 2) as usize;
                [seed[i], seed[i + 1]]
            });
            let mut buf = Vec::new();
            f.write_flo(&mut buf).unwrap();
            prop_assert_eq!(FlowField::read_flo(&buf[..]).unwrap(), f);
        }
    }
}
