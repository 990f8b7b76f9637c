//! Contrast-threshold event simulator.
//!
//! Each pixel keeps a reference log intensity. Between consecutive frames the
//! log intensity is interpolated linearly in time; whenever it reaches
//! `reference + c_pos` (or `reference - c_neg`) an event is emitted at the
//! interpolated crossing time and the reference steps by the threshold.
//! A crossing that lands exactly on a frame timestamp belongs to the segment
//! ending there.

use image::RgbImage;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::events::{Event, EventStream, Polarity};
use crate::frame::{luma, Frame};

/// Slack for comparing a threshold level against a segment endpoint, so
/// that levels reached exactly at a frame survive accumulated rounding.
const LEVEL_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatorConfig {
    pub c_pos: f64,
    pub c_neg: f64,
    pub log_eps: f64,
    pub seed: u64,
    /// Standard deviation of per-pixel threshold noise; 0 disables it.
    pub jitter_std: f64,
}

impl Default for SimulatorConfig {
    fn default() -> Self {
        SimulatorConfig {
            c_pos: 0.2,
            c_neg: 0.2,
            log_eps: 0.001,
            seed: 0,
            jitter_std: 0.0,
        }
    }
}

impl SimulatorConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::Argument(format!("{name} must be positive, got {v}")))
            }
        };
        positive("c_pos", self.c_pos)?;
        positive("c_neg", self.c_neg)?;
        positive("log_eps", self.log_eps)?;
        if !(self.jitter_std.is_finite() && self.jitter_std >= 0.0) {
            return Err(Error::Argument(format!(
                "jitter_std must be non-negative, got {}",
                self.jitter_std
            )));
        }
        Ok(())
    }
}

#[inline]
pub fn log_intensity(luma: f64, log_eps: f64) -> f64 {
    (luma / 255.0 + log_eps).ln()
}

/// Log-intensity plane of an RGB image (luma first), row-major.
pub fn log_plane(image: &RgbImage, log_eps: f64) -> Vec<f64> {
    image
        .pixels()
        .map(|p| {
            log_intensity(
                luma(f64::from(p[0]), f64::from(p[1]), f64::from(p[2])),
                log_eps,
            )
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
struct Thresholds {
    pos: f64,
    neg: f64,
}

/// Emits the crossings of one pixel over the segment `(t_a, t_b]` on which
/// the log intensity moves linearly from `l_a` to `l_b`.
#[inline]
fn cross_segment(
    reference: &mut f64,
    c: Thresholds,
    (t_a, l_a): (u64, f64),
    (t_b, l_b): (u64, f64),
    mut emit: impl FnMut(u64, Polarity),
) {
    let slope = l_b - l_a;
    if slope == 0.0 {
        return;
    }
    let crossing_time = |level: f64| {
        let frac = ((level - l_a) / slope).clamp(0.0, 1.0);
        let t = t_a as f64 + frac * (t_b - t_a) as f64;
        (t.round() as u64).clamp(t_a, t_b)
    };
    if slope > 0.0 {
        while *reference + c.pos <= l_b + LEVEL_TOLERANCE {
            *reference += c.pos;
            emit(crossing_time(*reference), Polarity::Positive);
        }
    } else {
        while *reference - c.neg >= l_b - LEVEL_TOLERANCE {
            *reference -= c.neg;
            emit(crossing_time(*reference), Polarity::Negative);
        }
    }
}

/// Incremental simulator over a sequence of log-intensity planes.
#[derive(Debug)]
pub struct Simulator {
    width: u32,
    height: u32,
    t_first: u64,
    t_last: u64,
    previous: Vec<f64>,
    reference: Vec<f64>,
    thresholds: Vec<Thresholds>,
    events: Vec<Event>,
}

impl Simulator {
    /// Starts a simulation at time `t0` with the given initial log plane.
    pub fn new(
        width: u32,
        height: u32,
        t0: u64,
        initial: Vec<f64>,
        config: &SimulatorConfig,
    ) -> Result<Self> {
        config.validate()?;
        if width > u32::from(u16::MAX) + 1 || height > u32::from(u16::MAX) + 1 {
            return Err(Error::Argument(format!(
                "sensor {width}x{height} exceeds 16-bit coordinates"
            )));
        }
        let pixels = width as usize * height as usize;
        if initial.len() != pixels {
            return Err(Error::Argument(format!(
                "log plane has {} values, expected {pixels}",
                initial.len()
            )));
        }
        Ok(Simulator {
            width,
            height,
            t_first: t0,
            t_last: t0,
            reference: initial.clone(),
            previous: initial,
            thresholds: sample_thresholds(pixels, config)?,
            events: Vec::new(),
        })
    }

    /// Advances to the next frame at time `t` (strictly after the previous one).
    pub fn advance(&mut self, t: u64, next: Vec<f64>) -> Result<()> {
        if t <= self.t_last {
            return Err(Error::Argument(format!(
                "frame timestamp {t} is not after {}",
                self.t_last
            )));
        }
        if next.len() != self.previous.len() {
            return Err(Error::Argument(format!(
                "log plane has {} values, expected {}",
                next.len(),
                self.previous.len()
            )));
        }
        let width = self.width as usize;
        let t_a = self.t_last;
        let rows: Vec<Vec<Event>> = self
            .reference
            .par_chunks_mut(width)
            .zip(self.previous.par_chunks(width))
            .zip(next.par_chunks(width))
            .zip(self.thresholds.par_chunks(width))
            .enumerate()
            .map(|(y, (((reference, prev), next), thresholds))| {
                let mut row = Vec::new();
                for x in 0..width {
                    cross_segment(
                        &mut reference[x],
                        thresholds[x],
                        (t_a, prev[x]),
                        (t, next[x]),
                        |te, polarity| row.push(Event::new(te, x as u16, y as u16, polarity)),
                    );
                }
                row
            })
            .collect();
        for row in rows {
            self.events.extend(row);
        }
        self.previous = next;
        self.t_last = t;
        Ok(())
    }

    /// Canonically ordered events over `[t_first, t_last]`.
    pub fn finish(mut self) -> EventStream {
        self.events.sort_unstable();
        EventStream::from_sorted(
            self.events,
            (self.t_first, self.t_last),
            self.width,
            self.height,
        )
        .expect("simulator emits in-window events on its own sensor")
    }
}

fn sample_thresholds(pixels: usize, config: &SimulatorConfig) -> Result<Vec<Thresholds>> {
    let base = Thresholds {
        pos: config.c_pos,
        neg: config.c_neg,
    };
    if config.jitter_std == 0.0 {
        return Ok(vec![base; pixels]);
    }
    let noise = Normal::new(0.0, config.jitter_std)
        .map_err(|e| Error::Argument(format!("jitter_std: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    // jittered thresholds are floored at a tenth of the nominal value
    Ok((0..pixels)
        .map(|_| Thresholds {
            pos: (config.c_pos + noise.sample(&mut rng)).max(0.1 * config.c_pos),
            neg: (config.c_neg + noise.sample(&mut rng)).max(0.1 * config.c_neg),
        })
        .collect())
}

/// Simulates events from frames with strictly increasing timestamps.
pub fn simulate(frames: &[Frame], config: &SimulatorConfig) -> Result<EventStream> {
    let (first, rest) = match frames {
        [first, rest @ ..] if !rest.is_empty() => (first, rest),
        _ => {
            return Err(Error::Argument(format!(
                "simulation needs at least 2 frames, got {}",
                frames.len()
            )))
        }
    };
    config.validate()?;
    let dims = first.image.dimensions();
    let mut sim = Simulator::new(
        dims.0,
        dims.1,
        first.timestamp_us,
        log_plane(&first.image, config.log_eps),
        config,
    )?;
    for (i, frame) in rest.iter().enumerate() {
        if frame.image.dimensions() != dims {
            return Err(Error::Argument(format!(
                "frame {} is {:?}, expected {dims:?}",
                i + 1,
                frame.image.dimensions()
            )));
        }
        sim.advance(frame.timestamp_us, log_plane(&frame.image, config.log_eps))?;
    }
    Ok(sim.finish())
}

/// Simulates a single pixel whose log intensity follows the piecewise-linear
/// signal through `knots` (time, log intensity).
pub fn simulate_signal(knots: &[(u64, f64)], config: &SimulatorConfig) -> Result<EventStream> {
    let (first, rest) = match knots {
        [first, rest @ ..] if !rest.is_empty() => (first, rest),
        _ => return Err(Error::Argument("signal needs at least 2 knots".into())),
    };
    let mut sim = Simulator::new(1, 1, first.0, vec![first.1], config)?;
    for &(t, level) in rest {
        sim.advance(t, vec![level])?;
    }
    Ok(sim.finish())
}
