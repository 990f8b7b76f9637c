//! Procedural test sequences with exact ground-truth flow.
//!
//! Each sequence moves a smooth random texture with a known global offset
//! and brightness gain. Events are simulated from frames rendered several
//! times faster than the saved ones, so they carry inter-frame motion that
//! the keyframes alone do not.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use evfi_core::dataset::{write_sequence, Split};
use evfi_core::esim::{simulate, SimulatorConfig};
use evfi_core::{FlowField, Frame};
use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{BenchError, Result};

pub const FLOW_DIR: &str = "flow";

/// Path of `F_{i->j}` inside a sequence directory.
pub fn flow_path(sequence_root: &Path, i: usize, j: usize) -> PathBuf {
    sequence_root
        .join(FLOW_DIR)
        .join(format!("{i:06}_{j:06}.flo"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Motion {
    Static,
    /// Constant velocity of (2, 1) px per frame.
    Translate,
    /// Horizontal offset growing quadratically in time.
    Accelerate,
    /// Fixed texture, brightness rising quadratically.
    Illumination,
}

impl Motion {
    pub const ALL: [Motion; 4] = [
        Motion::Static,
        Motion::Translate,
        Motion::Accelerate,
        Motion::Illumination,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Motion::Static => "static",
            Motion::Translate => "translate",
            Motion::Accelerate => "accelerate",
            Motion::Illumination => "illumination",
        }
    }

    /// Texture offset after `t` frame intervals, in pixels.
    pub fn offset(self, t: f64) -> (f64, f64) {
        match self {
            Motion::Translate => (2.0 * t, t),
            Motion::Accelerate => (0.25 * t * t, 0.0),
            Motion::Static | Motion::Illumination => (0.0, 0.0),
        }
    }

    fn gain(self, t: f64, span: f64) -> f64 {
        match self {
            Motion::Illumination => 0.5 + 0.6 * (t / span).powi(2),
            _ => 1.0,
        }
    }
}

impl fmt::Display for Motion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Motion {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Motion::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown motion {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub width: u32,
    pub height: u32,
    pub frames: usize,
    /// Rendered frames per saved frame interval, for the simulator only.
    pub substeps: usize,
    pub frame_interval_us: u64,
    pub seed: u64,
    pub motions: Vec<Motion>,
    /// Frame gaps for which flow files are written in both directions.
    pub flow_gaps: Vec<usize>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            width: 64,
            height: 64,
            frames: 9,
            substeps: 8,
            frame_interval_us: 40_000,
            seed: 0,
            motions: Motion::ALL.to_vec(),
            flow_gaps: vec![2, 4],
        }
    }
}

struct Wave {
    kx: f64,
    ky: f64,
    phase: f64,
    amp: [f64; 3],
}

struct Blob {
    x: f64,
    y: f64,
    sigma: f64,
    amp: [f64; 3],
}

/// Smooth RGB texture defined on the whole plane.
struct Texture {
    waves: Vec<Wave>,
    blobs: Vec<Blob>,
}

impl Texture {
    fn random(rng: &mut ChaCha8Rng, width: u32, height: u32) -> Self {
        let waves = (0..4)
            .map(|_| {
                let wavelength = rng.random_range(14.0..32.0);
                let angle = rng.random_range(0.0..std::f64::consts::TAU);
                let k = std::f64::consts::TAU / wavelength;
                Wave {
                    kx: k * angle.cos(),
                    ky: k * angle.sin(),
                    phase: rng.random_range(0.0..std::f64::consts::TAU),
                    amp: [0; 3].map(|_| rng.random_range(10.0..30.0)),
                }
            })
            .collect();
        let margin = 24.0;
        let blobs = (0..6)
            .map(|_| Blob {
                x: rng.random_range(-margin..f64::from(width) + margin),
                y: rng.random_range(-margin..f64::from(height) + margin),
                sigma: rng.random_range(2.5..5.0),
                amp: [0; 3].map(|_| rng.random_range(-50.0..50.0)),
            })
            .collect();
        Texture { waves, blobs }
    }

    fn sample(&self, x: f64, y: f64) -> [f64; 3] {
        let mut v = [128.0; 3];
        for w in &self.waves {
            let s = (w.kx * x + w.ky * y + w.phase).sin();
            for (c, a) in v.iter_mut().zip(w.amp) {
                *c += a * s;
            }
        }
        for b in &self.blobs {
            let d2 = (x - b.x).powi(2) + (y - b.y).powi(2);
            let g = (-d2 / (2.0 * b.sigma * b.sigma)).exp();
            for (c, a) in v.iter_mut().zip(b.amp) {
                *c += a * g;
            }
        }
        v
    }
}

fn render(tex: &Texture, motion: Motion, t: f64, span: f64, width: u32, height: u32) -> RgbImage {
    let (ox, oy) = motion.offset(t);
    let gain = motion.gain(t, span);
    RgbImage::from_fn(width, height, |x, y| {
        let v = tex.sample(f64::from(x) - ox, f64::from(y) - oy);
        image::Rgb(v.map(|c| (gain * c).round().clamp(0.0, 255.0) as u8))
    })
}

/// Writes one test-split sequence per configured motion under `root` and
/// returns their directories.
pub fn generate_dataset(root: impl AsRef<Path>, config: &SynthConfig) -> Result<Vec<PathBuf>> {
    let root = root.as_ref();
    if config.frames < 2 || config.substeps == 0 || config.frame_interval_us == 0 {
        return Err(evfi_core::Error::Argument(
            "need at least 2 frames, 1 substep and a positive interval".into(),
        )
        .into());
    }
    if !config
        .frame_interval_us
        .is_multiple_of(config.substeps as u64)
    {
        return Err(evfi_core::Error::Argument(format!(
            "frame interval {} is not divisible into {} substeps",
            config.frame_interval_us, config.substeps
        ))
        .into());
    }
    let span = (config.frames - 1) as f64;
    let step_us = config.frame_interval_us / config.substeps as u64;
    let sim = SimulatorConfig {
        seed: config.seed,
        ..SimulatorConfig::default()
    };
    let mut dirs = Vec::new();
    for (n, &motion) in config.motions.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(n as u64));
        let tex = Texture::random(&mut rng, config.width, config.height);
        let fine: Vec<Frame> = (0..=(config.frames - 1) * config.substeps)
            .map(|s| {
                let t = s as f64 / config.substeps as f64;
                Frame::new(
                    s as u64 * step_us,
                    render(&tex, motion, t, span, config.width, config.height),
                )
            })
            .collect();
        let events = simulate(&fine, &sim)?;
        let frames: Vec<Frame> = fine.into_iter().step_by(config.substeps).collect();
        let dir = root.join(motion.as_str());
        write_sequence(
            &dir,
            &frames,
            &events,
            None,
            Split::Test,
            &format!("synthetic {motion} texture, seed {}", config.seed),
        )?;
        let flow_dir = dir.join(FLOW_DIR);
        fs::create_dir_all(&flow_dir).map_err(|e| BenchError::io(&flow_dir, e))?;
        for &gap in &config.flow_gaps {
            for i in 0..config.frames.saturating_sub(gap) {
                let j = i + gap;
                let (xi, yi) = motion.offset(i as f64);
                let (xj, yj) = motion.offset(j as f64);
                let (dx, dy) = ((xj - xi) as f32, (yj - yi) as f32);
                FlowField::constant(config.width, config.height, dx, dy)
                    .write_file(flow_path(&dir, i, j))?;
                FlowField::constant(config.width, config.height, -dx, -dy)
                    .write_file(flow_path(&dir, j, i))?;
            }
        }
        dirs.push(dir);
    }
    Ok(dirs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use evfi_core::dataset::load_dataset;
    use evfi_core::warp::backward_warp;
    use evfi_core::FloatImage;

    fn small() -> SynthConfig {
        SynthConfig {
            width: 24,
            height: 20,
            frames: 5,
            substeps: 4,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn writes_loadable_sequences() {
        let tmp = tempfile::tempdir().unwrap();
        let dirs = generate_dataset(tmp.path(), &small()).unwrap();
        assert_eq!(dirs.len(), 4);
        let seqs = load_dataset(tmp.path()).unwrap();
        assert_eq!(seqs.len(), 4);
        for s in &seqs {
            assert_eq!(s.len(), 5);
            assert_eq!(s.timestamps, vec![0, 40_000, 80_000, 120_000, 160_000]);
            assert_eq!(s.split, Split::Test);
            let ev = s.load_events((24, 20)).unwrap();
            assert_eq!(ev.window(), (0, 160_000));
            if s.name == "static" {
                assert!(ev.is_empty());
            } else {
                assert!(!ev.is_empty(), "{} has no events", s.name);
            }
        }
    }

    #[test]
    fn flow_files_warp_exactly_for_translation() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            motions: vec![Motion::Translate],
            ..small()
        };
        let dir = generate_dataset(tmp.path(), &cfg).unwrap().remove(0);
        let seq = evfi_core::dataset::SequenceManifest::load(&dir).unwrap();
        let f02 = FlowField::read_file(flow_path(&dir, 0, 2)).unwrap();
        assert_eq!(f02.get(0, 0), [4.0, 2.0]);
        assert_eq!(
            FlowField::read_file(flow_path(&dir, 2, 0))
                .unwrap()
                .get(3, 3),
            [-4.0, -2.0]
        );
        let i0 = FloatImage::from_rgb8(&seq.load_frame(0).unwrap().image);
        let i2 = FloatImage::from_rgb8(&seq.load_frame(2).unwrap().image);
        let warped = backward_warp(&i2, &f02).unwrap();
        for y in 0..20 {
            for x in 0..24 {
                if warped.validity[(y * 24 + x) as usize] {
                    assert_eq!(warped.image.pixel(x, y), i0.pixel(x, y));
                }
            }
        }
    }

    #[test]
    fn deterministic_for_seed() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            motions: vec![Motion::Accelerate],
            ..small()
        };
        generate_dataset(a.path(), &cfg).unwrap();
        generate_dataset(b.path(), &cfg).unwrap();
        for f in ["events.evt1", "images/000003.png"] {
            let fa = fs::read(a.path().join("accelerate").join(f)).unwrap();
            let fb = fs::read(b.path().join("accelerate").join(f)).unwrap();
            assert_eq!(fa, fb, "{f}");
        }
    }

    #[test]
    fn motion_names_parse() {
        for m in Motion::ALL {
            assert_eq!(m.as_str().parse::<Motion>(), Ok(m));
        }
        assert!("spin".parse::<Motion>().is_err());
    }
}
