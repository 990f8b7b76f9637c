//! Synchronized event + frame recordings.
//!
//! On-disk layout of one sequence directory:
//!
//! ```text
//! <seq>/images/000000.png ...   keyframes and ground-truth frames
//! <seq>/timestamps.txt          one integer microsecond timestamp per line
//! <seq>/triggers.txt            optional, `t S|E` exposure triggers; used when
//!                               timestamps.txt is absent
//! <seq>/events.evt1             EVT1 event stream covering all frames
//! <seq>/homography.txt          optional, 9 reals row-major, applied to events
//! <seq>/meta.txt                optional, key=value (split, description)
//! ```

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::events::EventStream;
use crate::frame::{load_png, save_png, Frame};

pub const IMAGES_DIR: &str = "images";
pub const TIMESTAMPS_FILE: &str = "timestamps.txt";
pub const TRIGGERS_FILE: &str = "triggers.txt";
pub const EVENTS_FILE: &str = "events.evt1";
pub const HOMOGRAPHY_FILE: &str = "homography.txt";
pub const META_FILE: &str = "meta.txt";

/// Minimum `|det|` for a homography to count as invertible.
const MIN_DETERMINANT: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TriggerEdge {
    ExposureStart,
    ExposureEnd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TriggerRecord {
    pub t: u64,
    pub edge: TriggerEdge,
}

/// Parses `t edge` lines with `edge` in `{S, E}`.
pub fn parse_triggers(text: &str) -> Result<Vec<TriggerRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let bad = || Error::Format(format!("trigger line {}: {line:?}", i + 1));
            let mut fields = line.split_whitespace();
            let t = fields.next().and_then(|f| f.parse().ok()).ok_or_else(bad)?;
            let edge = match fields.next() {
                Some("S") => TriggerEdge::ExposureStart,
                Some("E") => TriggerEdge::ExposureEnd,
                _ => return Err(bad()),
            };
            if fields.next().is_some() {
                return Err(bad());
            }
            Ok(TriggerRecord { t, edge })
        })
        .collect()
}

/// Frame timestamps at the midpoint of each exposure, rounded half up.
pub fn assign_frame_timestamps(triggers: &[TriggerRecord], frame_count: usize) -> Result<Vec<u64>> {
    if let Some(w) = triggers.windows(2).find(|w| w[0].t >= w[1].t) {
        return Err(Error::Format(format!(
            "trigger timestamps not strictly increasing at {} -> {}",
            w[0].t, w[1].t
        )));
    }
    if !triggers.len().is_multiple_of(2) {
        return Err(Error::Format(format!(
            "{} trigger records cannot form start/end pairs",
            triggers.len()
        )));
    }
    let stamps = triggers
        .chunks_exact(2)
        .enumerate()
        .map(|(i, pair)| match (pair[0].edge, pair[1].edge) {
            (TriggerEdge::ExposureStart, TriggerEdge::ExposureEnd) => {
                Ok(pair[0].t + (pair[1].t - pair[0].t).div_ceil(2))
            }
            _ => Err(Error::Format(format!(
                "exposure {i} is not a start/end pair"
            ))),
        })
        .collect::<Result<Vec<_>>>()?;
    if stamps.len() != frame_count {
        return Err(Error::Consistency(format!(
            "{} exposures for {frame_count} frames",
            stamps.len()
        )));
    }
    Ok(stamps)
}

/// A nonsingular planar homography acting on pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography(Matrix3<f64>);

impl Homography {
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument("homography has non-finite entries".into()));
        }
        let det = m.determinant();
        if det.abs() <= MIN_DETERMINANT {
            return Err(Error::Argument(format!(
                "homography is singular (det = {det:e})"
            )));
        }
        Ok(Homography(m))
    }

    pub fn from_row_slice(values: &[f64]) -> Result<Self> {
        if values.len() != 9 {
            return Err(Error::Argument(format!(
                "homography needs 9 values, got {}",
                values.len()
            )));
        }
        Self::new(Matrix3::from_row_slice(values))
    }

    pub fn identity() -> Self {
        Homography(Matrix3::identity())
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn inverse(&self) -> Homography {
        Homography(self.0.try_inverse().expect("nonsingular by construction"))
    }

    /// Maps a point with perspective divide. Returns `None` for points sent
    /// to infinity.
    pub fn map(&self, x: f64, y: f64) -> Option<(f64, f64)> {
        let p = self.0 * Vector3::new(x, y, 1.0);
        let (u, v) = (p.x / p.z, p.y / p.z);
        (p.z != 0.0 && u.is_finite() && v.is_finite()).then_some((u, v))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let values = text
            .split_whitespace()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| Error::Format(format!("bad homography entry {f:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if values.len() != 9 {
            return Err(Error::Format(format!(
                "homography file has {} values, expected 9",
                values.len()
            )));
        }
        Self::from_row_slice(&values)
    }
}

impl fmt::Display for Homography {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in 0..3 {
            writeln!(
                f,
                "{} {} {}",
                self.0[(r, 0)],
                self.0[(r, 1)],
                self.0[(r, 2)]
            )?;
        }
        Ok(())
    }
}

/// Maps every event through `h`, rounding to the nearest pixel of a
/// `target_dims` sensor. Events landing outside are dropped.
pub fn apply_homography(
    stream: &EventStream,
    h: &Homography,
    (width, height): (u32, u32),
) -> Result<EventStream> {
    stream.remap(width, height, |x, y| {
        let (u, v) = h.map(f64::from(x), f64::from(y))?;
        let (u, v) = (u.round(), v.round());
        (u >= 0.0 && v >= 0.0 && u < f64::from(width) && v < f64::from(height))
            .then_some((u as u16, v as u16))
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Split {
    Train,
    #[default]
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Format(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceManifest {
    pub name: String,
    pub root: PathBuf,
    pub frames_dir: PathBuf,
    pub timestamps: Vec<u64>,
    pub event_file: PathBuf,
    pub homography_file: Option<PathBuf>,
    pub split: Split,
    pub description: String,
}

pub fn frame_file_name(index: usize) -> String {
    format!("{index:06}.png")
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_timestamps(text: &str) -> Result<Vec<u64>> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| {
            l.parse()
                .map_err(|_| Error::Format(format!("bad timestamp {l:?}")))
        })
        .collect()
}

impl SequenceManifest {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let root = dir.as_ref().to_path_buf();
        let name = root
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::Argument(format!("bad sequence path {}", root.display())))?
            .to_string();
        if name.contains([',', '\n', '#']) {
            return Err(Error::Argument(format!(
                "sequence name {name:?} must not contain ',', '#' or newlines"
            )));
        }
        let frames_dir = root.join(IMAGES_DIR);
        let frame_count = (0..)
            .take_while(|&i| frames_dir.join(frame_file_name(i)).is_file())
            .count();
        let stamps_path = root.join(TIMESTAMPS_FILE);
        let triggers_path = root.join(TRIGGERS_FILE);
        let timestamps = if stamps_path.is_file() {
            parse_timestamps(&read_to_string(&stamps_path)?)?
        } else if triggers_path.is_file() {
            let triggers = parse_triggers(&read_to_string(&triggers_path)?)?;
            assign_frame_timestamps(&triggers, frame_count)?
        } else {
            return Err(Error::Argument(format!(
                "{}: neither {TIMESTAMPS_FILE} nor {TRIGGERS_FILE} present",
                root.display()
            )));
        };
        if timestamps.len() != frame_count {
            return Err(Error::Consistency(format!(
                "{name}: {} timestamps for {frame_count} frames",
                timestamps.len()
            )));
        }
        if timestamps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Consistency(format!(
                "{name}: frame timestamps are not strictly increasing"
            )));
        }
        let homography_file = Some(root.join(HOMOGRAPHY_FILE)).filter(|p| p.is_file());
        let mut split = Split::default();
        let mut description = String::new();
        let meta_path = root.join(META_FILE);
        if meta_path.is_file() {
            for line in read_to_string(&meta_path)?.lines() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (key, value) = line
                    .split_once('=')
                    .ok_or_else(|| Error::Format(format!("meta line {line:?} lacks '='")))?;
                match key.trim() {
                    "split" => split = value.trim().parse()?,
                    "description" => description = value.trim().to_string(),
                    _ => {}
                }
            }
        }
        Ok(SequenceManifest {
            event_file: root.join(EVENTS_FILE),
            name,
            root,
            frames_dir,
            timestamps,
            homography_file,
            split,
            description,
        })
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn frame_path(&self, index: usize) -> PathBuf {
        self.frames_dir.join(frame_file_name(index))
    }

    pub fn load_frame(&self, index: usize) -> Result<Frame> {
        let ts = *self
            .timestamps
            .get(index)
            .ok_or_else(|| Error::Range(format!("frame {index} of {}", self.len())))?;
        Ok(Frame::new(ts, load_png(self.frame_path(index))?))
    }

    pub fn homography(&self) -> Result<Option<Homography>> {
        self.homography_file
            .as_deref()
            .map(|p| Homography::parse(&read_to_string(p)?))
            .transpose()
    }

    /// Loads the event stream, aligned to the frame sensor when a homography
    /// is present.
    pub fn load_events(&self, frame_dims: (u32, u32)) -> Result<EventStream> {
        let raw = EventStream::read_file(&self.event_file)?;
        let stream = match self.homography()? {
            Some(h) => apply_homography(&raw, &h, frame_dims)?,
            None => raw,
        };
        if (stream.width(), stream.height()) != frame_dims {
            return Err(Error::Consistency(format!(
                "{}: events are {}x{} but frames are {}x{}",
                self.name,
                stream.width(),
                stream.height(),
                frame_dims.0,
                frame_dims.1
            )));
        }
        Ok(stream)
    }
}

/// Loads every sequence directory under `root`, sorted by name.
pub fn load_dataset(root: impl AsRef<Path>) -> Result<Vec<SequenceManifest>> {
    let root = root.as_ref();
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.join(IMAGES_DIR).is_dir())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Argument(format!(
            "no sequences found under {}",
            root.display()
        )));
    }
    dirs.iter().map(SequenceManifest::load).collect()
}

/// Writes a sequence in the layout [`SequenceManifest::load`] reads.
pub fn write_sequence(
    dir: impl AsRef<Path>,
    frames: &[Frame],
    events: &EventStream,
    homography: Option<&Homography>,
    split: Split,
    description: &str,
) -> Result<()> {
    let dir = dir.as_ref();
    let images = dir.join(IMAGES_DIR);
    fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let mut stamps = String::new();
    for (i, f) in frames.iter().enumerate() {
        save_png(&f.image, images.join(frame_file_name(i)))?;
        stamps.push_str(&format!("{}\n", f.timestamp_us));
    }
    let write = |name: &str, text: String| {
        let path = dir.join(name);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    };
    write(TIMESTAMPS_FILE, stamps)?;
    events.write_file(dir.join(EVENTS_FILE))?;
    if let Some(h) = homography {
        write(HOMOGRAPHY_FILE, h.to_string())?;
    }
    write(
        META_FILE,
        format!("split={}\ndescription={description}\n", split.as_str()),
    )
}

/// One frame to reconstruct inside an [`InterpolationJob`].
#[derive(Debug, Clone)]
pub struct JobTarget {
    pub frame_index: usize,
    /// 1-based position between the keyframes.
    pub position: usize,
    pub t_us: u64,
    /// Normalized time in `(0, 1)` between the keyframes.
    pub tau: f64,
    /// Events from the left keyframe to the target, `E_{0->tau}`.
    pub left: EventStream,
    /// Events from the target to the right keyframe, `E_{tau->1}`.
    pub right: EventStream,
    /// Time-reversed left events, `E_{tau->0}`.
    pub reversed: EventStream,
    pub ground_truth: Frame,
    pub ground_truth_path: PathBuf,
}

/// A keyframe pair with the skipped frames between them.
#[derive(Debug, Clone)]
pub struct InterpolationJob {
    pub id: String,
    pub sequence: String,
    pub keyframe_indices: (usize, usize),
    pub keyframes: (Frame, Frame),
    pub keyframe_paths: (PathBuf, PathBuf),
    /// Full event stream between the two keyframes.
    pub events: EventStream,
    pub targets: Vec<JobTarget>,
}

/// Keyframes are every `(skip + 1)`-th frame; the `skip` frames between each
/// consecutive pair become targets. Trailing frames that do not complete a
/// group are left out.
pub fn skip_job_indices(frame_count: usize, skip: usize) -> Result<Vec<(usize, usize)>> {
    if skip == 0 {
        return Err(Error::Argument("skip must be at least 1".into()));
    }
    if frame_count < skip + 2 {
        return Err(Error::Argument(format!(
            "{frame_count} frames are too few for skip {skip}"
        )));
    }
    let stride = skip + 1;
    Ok((0..)
        .map(|j| (j * stride, (j + 1) * stride))
        .take_while(|&(_, k1)| k1 < frame_count)
        .collect())
}

pub fn make_skip_benchmark(
    manifest: &SequenceManifest,
    skip: usize,
) -> Result<Vec<InterpolationJob>> {
    let pairs = skip_job_indices(manifest.len(), skip)?;
    let first = manifest.load_frame(0)?;
    let dims = first.image.dimensions();
    let stream = manifest.load_events(dims)?;
    let (t_first, t_last) = (
        manifest.timestamps[0],
        manifest.timestamps[manifest.len() - 1],
    );
    if stream.t_begin() > t_first || stream.t_end() < t_last {
        return Err(Error::Consistency(format!(
            "{}: event window [{}, {}] does not cover frames [{t_first}, {t_last}]",
            manifest.name,
            stream.t_begin(),
            stream.t_end()
        )));
    }
    let load = |i: usize| -> Result<Frame> {
        let f = manifest.load_frame(i)?;
        if f.image.dimensions() != dims {
            return Err(Error::Consistency(format!(
                "{}: frame {i} is {:?}, expected {dims:?}",
                manifest.name,
                f.image.dimensions()
            )));
        }
        Ok(f)
    };
    pairs
        .into_iter()
        .map(|(k0, k1)| {
            let (t0, t1) = (manifest.timestamps[k0], manifest.timestamps[k1]);
            let targets = (k0 + 1..k1)
                .map(|i| {
                    let t = manifest.timestamps[i];
                    let left = stream.slice(t0, t)?;
                    Ok(JobTarget {
                        frame_index: i,
                        position: i - k0,
                        t_us: t,
                        tau: (t - t0) as f64 / (t1 - t0) as f64,
                        reversed: left.reverse(),
                        left,
                        right: stream.slice(t, t1)?,
                        ground_truth: load(i)?,
                        ground_truth_path: manifest.frame_path(i),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(InterpolationJob {
                id: format!("{}_{k0:06}", manifest.name),
                sequence: manifest.name.clone(),
                keyframe_indices: (k0, k1),
                keyframes: (load(k0)?, load(k1)?),
                keyframe_paths: (manifest.frame_path(k0), manifest.frame_path(k1)),
                events: stream.slice(t0, t1)?,
                targets,
            })
        })
        .collect()
}
