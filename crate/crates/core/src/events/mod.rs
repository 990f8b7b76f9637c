//! Canonical event data model.
//!
//! An [`EventStream`] owns a time-ordered list of polarity events together
//! with the closed time window `[t_begin, t_end]` it describes and the sensor
//! dimensions. Streams are immutable once built; every operation returns a new
//! stream.

mod io;

pub use io::{read_binary, read_text, write_binary, write_text, BINARY_HEADER_LEN, BINARY_MAGIC};

use crate::error::{Error, Result};

/// Sign of a brightness change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(i8)]
pub enum Polarity {
    Negative = -1,
    Positive = 1,
}

impl Polarity {
    pub fn from_sign(sign: i64) -> Option<Self> {
        match sign {
            1 => Some(Polarity::Positive),
            -1 => Some(Polarity::Negative),
            _ => None,
        }
    }

    pub fn sign(self) -> i8 {
        self as i8
    }

    pub fn as_f64(self) -> f64 {
        f64::from(self.sign())
    }

    pub fn flipped(self) -> Self {
        match self {
            Polarity::Positive => Polarity::Negative,
            Polarity::Negative => Polarity::Positive,
        }
    }
}

/// A single event. Timestamps are integer microseconds.
///
/// Field order matters: the derived `Ord` is the canonical stream order
/// `(t, y, x, polarity)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Event {
    pub t: u64,
    pub y: u16,
    pub x: u16,
    pub polarity: Polarity,
}

impl Event {
    pub fn new(t: u64, x: u16, y: u16, polarity: Polarity) -> Self {
        Event { t, y, x, polarity }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventStream {
    events: Vec<Event>,
    t_begin: u64,
    t_end: u64,
    width: u32,
    height: u32,
}

impl EventStream {
    /// Builds a stream from events in any order. Events are sorted into
    /// canonical order; coordinates and timestamps are validated.
    pub fn new(
        mut events: Vec<Event>,
        window: (u64, u64),
        width: u32,
        height: u32,
    ) -> Result<Self> {
        events.sort_unstable();
        Self::from_sorted(events, window, width, height)
    }

    /// Builds a stream from events already in canonical order.
    pub fn from_sorted(
        events: Vec<Event>,
        (t_begin, t_end): (u64, u64),
        width: u32,
        height: u32,
    ) -> Result<Self> {
        if t_begin > t_end {
            return Err(Error::Argument(format!(
                "window begin {t_begin} is after end {t_end}"
            )));
        }
        if width > u32::from(u16::MAX) + 1 || height > u32::from(u16::MAX) + 1 {
            return Err(Error::Argument(format!(
                "sensor {width}x{height} exceeds 16-bit coordinates"
            )));
        }
        for (i, e) in events.iter().enumerate() {
            if u32::from(e.x) >= width || u32::from(e.y) >= height {
                return Err(Error::Range(format!(
                    "event {i} at ({}, {}) outside {width}x{height} sensor",
                    e.x, e.y
                )));
            }
            if e.t < t_begin || e.t > t_end {
                return Err(Error::Range(format!(
                    "event {i} at t={} outside window [{t_begin}, {t_end}]",
                    e.t
                )));
            }
        }
        if let Some(i) = events.windows(2).position(|w| w[0] > w[1]) {
            return Err(Error::Format(format!(
                "events {i} and {} are not in canonical order",
                i + 1
            )));
        }
        Ok(EventStream {
            events,
            t_begin,
            t_end,
            width,
            height,
        })
    }

    pub fn empty(window: (u64, u64), width: u32, height: u32) -> Result<Self> {
        Self::from_sorted(Vec::new(), window, width, height)
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn into_events(self) -> Vec<Event> {
        self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn window(&self) -> (u64, u64) {
        (self.t_begin, self.t_end)
    }

    pub fn t_begin(&self) -> u64 {
        self.t_begin
    }

    pub fn t_end(&self) -> u64 {
        self.t_end
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn polarity_sum(&self) -> i64 {
        self.events
            .iter()
            .map(|e| i64::from(e.polarity.sign()))
            .sum()
    }

    /// Events with `a <= t <= b`, as a stream over window `[a, b]`.
    pub fn slice(&self, a: u64, b: u64) -> Result<EventStream> {
        if a > b || a < self.t_begin || b > self.t_end {
            return Err(Error::Range(format!(
                "slice [{a}, {b}] not inside window [{}, {}]",
                self.t_begin, self.t_end
            )));
        }
        let lo = self.events.partition_point(|e| e.t < a);
        let hi = self.events.partition_point(|e| e.t <= b);
        Ok(EventStream {
            events: self.events[lo..hi].to_vec(),
            t_begin: a,
            t_end: b,
            width: self.width,
            height: self.height,
        })
    }

    /// Time-reverses the stream: `(t, x, y, p)` becomes
    /// `(t_begin + t_end - t, x, y, -p)`. The window is unchanged.
    pub fn reverse(&self) -> EventStream {
        let span = self.t_begin + self.t_end;
        let mut events: Vec<Event> = self
            .events
            .iter()
            .map(|e| Event {
                t: span - e.t,
                polarity: e.polarity.flipped(),
                ..*e
            })
            .collect();
        events.sort_unstable();
        EventStream { events, ..*self }
    }

    /// Splits the stream into the `N - 1` intervals between consecutive frame
    /// timestamps. Group `i` covers `[ts[i], ts[i + 1]]`; an event exactly on
    /// an interior boundary belongs only to the earlier group.
    pub fn group_between_frames(&self, frame_timestamps: &[u64]) -> Result<Vec<EventStream>> {
        if frame_timestamps.len() < 2 {
            return Err(Error::Argument(format!(
                "need at least 2 frame timestamps, got {}",
                frame_timestamps.len()
            )));
        }
        if frame_timestamps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Argument(
                "frame timestamps must be strictly increasing".into(),
            ));
        }
        let first = frame_timestamps[0];
        let last = frame_timestamps[frame_timestamps.len() - 1];
        if first < self.t_begin || last > self.t_end {
            return Err(Error::Range(format!(
                "frame timestamps [{first}, {last}] not inside window [{}, {}]",
                self.t_begin, self.t_end
            )));
        }
        let mut start = self.events.partition_point(|e| e.t < first);
        let groups = frame_timestamps
            .windows(2)
            .map(|w| {
                let end = self.events.partition_point(|e| e.t <= w[1]);
                let group = EventStream {
                    events: self.events[start..end].to_vec(),
                    t_begin: w[0],
                    t_end: w[1],
                    width: self.width,
                    height: self.height,
                };
                start = end;
                group
            })
            .collect();
        Ok(groups)
    }

    /// Union of two streams over the same window and sensor.
    pub fn merge(&self, other: &EventStream) -> Result<EventStream> {
        if self.window() != other.window()
            || (self.width, self.height) != (other.width, other.height)
        {
            return Err(Error::Argument(
                "merged streams must share window and sensor size".into(),
            ));
        }
        let mut events = Vec::with_capacity(self.len() + other.len());
        events.extend_from_slice(&self.events);
        events.extend_from_slice(&other.events);
        events.sort_unstable();
        Ok(EventStream { events, ..*self })
    }

    /// Remaps event coordinates onto a (possibly different) sensor, dropping
    /// events for which `map` returns `None`.
    pub fn remap<F>(&self, width: u32, height: u32, mut map: F) -> Result<EventStream>
    where
        F: FnMut(u16, u16) -> Option<(u16, u16)>,
    {
        let events = self
            .events
            .iter()
            .filter_map(|e| {
                let (x, y) = map(e.x, e.y)?;
                (u32::from(x) < width && u32::from(y) < height).then_some(Event { x, y, ..*e })
            })
            .collect();
        EventStream::new(events, self.window(), width, height)
    }
}
