//! Directory interchange protocol between the harness and backends.
//!
//! The harness materializes one directory per job; a backend reads the
//! inputs, writes its predictions under `output/` and creates `job.done`
//! last. Ground-truth frames are never written into a job directory.
//!
//! ```text
//! <job>/job.txt                        key=value: id, width, height, t0_us, t1_us,
//!                                      targets, bins, events (real|empty), seed
//! <job>/frame_0.png, frame_1.png       keyframes I_0, I_1
//! <job>/flow_01.flo, flow_10.flo       optional keyframe flows F_{0->1}, F_{1->0}
//! <job>/targets/<k>/target.txt         position, t_us, tau
//! <job>/targets/<k>/events_left.evt1       E_{0->tau}
//! <job>/targets/<k>/events_right.evt1      E_{tau->1}
//! <job>/targets/<k>/events_reversed.evt1   E_{tau->0}
//! <job>/targets/<k>/voxel_{left,right,reversed}.vox
//! <job>/output/<k>.png                 final prediction (required)
//! <job>/output/<k>_{warp,synthesis,refined}.png   optional intermediate stages
//! <job>/output/<k>_attention.vox       optional 3-plane attention scores
//! <job>/job.done                       completion sentinel
//! ```
//!
//! `<k>` is the zero-based target index formatted as three digits. Flows use
//! backward semantics: `F_{0->1}` holds, for each pixel of `I_0`, the
//! displacement to its sampling location in `I_1`.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use evfi_core::blend::AttentionMaps;
use evfi_core::dataset::InterpolationJob;
use evfi_core::frame::{load_png, save_png};
use evfi_core::voxel::{build_voxel_grid, VoxelGrid};
use evfi_core::{EventStream, FlowField};
use image::RgbImage;

use crate::error::{BenchError, Result};

pub const JOB_FILE: &str = "job.txt";
pub const DONE_FILE: &str = "job.done";
pub const LEFT_FRAME: &str = "frame_0.png";
pub const RIGHT_FRAME: &str = "frame_1.png";
pub const FLOW_01: &str = "flow_01.flo";
pub const FLOW_10: &str = "flow_10.flo";
pub const TARGETS_DIR: &str = "targets";
pub const OUTPUT_DIR: &str = "output";

/// Which event files a job exposes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EventsMode {
    #[default]
    Real,
    /// Empty streams over the same windows, zero voxel grids.
    Empty,
}

impl EventsMode {
    pub fn as_str(self) -> &'static str {
        match self {
            EventsMode::Real => "real",
            EventsMode::Empty => "empty",
        }
    }
}

impl fmt::Display for EventsMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EventsMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "real" => Ok(EventsMode::Real),
            "empty" => Ok(EventsMode::Empty),
            other => Err(format!("events mode must be real or empty, got {other:?}")),
        }
    }
}

/// Intermediate outputs a backend may emit alongside its final prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Warp,
    Synthesis,
    Refined,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Warp, Stage::Synthesis, Stage::Refined];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Warp => "warp",
            Stage::Synthesis => "synthesis",
            Stage::Refined => "refined",
        }
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| format!("unknown stage {s:?}"))
    }
}

pub fn target_dir_name(index: usize) -> String {
    format!("{index:03}")
}

pub fn prediction_file(index: usize) -> String {
    format!("{index:03}.png")
}

pub fn stage_file(index: usize, stage: Stage) -> String {
    format!("{index:03}_{}.png", stage.as_str())
}

pub fn attention_file(index: usize) -> String {
    format!("{index:03}_attention.vox")
}

pub fn parse_key_values(text: &str) -> BTreeMap<String, String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| BenchError::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| BenchError::io(path, e))
}

/// Options for writing a job directory.
#[derive(Debug, Clone)]
pub struct MaterializeOptions {
    pub bins: usize,
    pub events: EventsMode,
    pub seed: u64,
    pub flows: Option<(FlowField, FlowField)>,
}

/// Writes the backend-visible inputs of `job` into `dir` (created fresh).
pub fn materialize_job(
    job: &InterpolationJob,
    dir: &Path,
    opts: &MaterializeOptions,
) -> Result<()> {
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(|e| BenchError::io(dir, e))?;
    }
    create_dir(&dir.join(OUTPUT_DIR))?;
    let (f0, f1) = &job.keyframes;
    let (width, height) = f0.image.dimensions();
    write_text(
        &dir.join(JOB_FILE),
        &format!(
            "id={}\nwidth={width}\nheight={height}\nt0_us={}\nt1_us={}\ntargets={}\nbins={}\nevents={}\nseed={}\n",
            job.id,
            f0.timestamp_us,
            f1.timestamp_us,
            job.targets.len(),
            opts.bins,
            opts.events,
            opts.seed
        ),
    )?;
    copy_file(&job.keyframe_paths.0, &dir.join(LEFT_FRAME))?;
    copy_file(&job.keyframe_paths.1, &dir.join(RIGHT_FRAME))?;
    if let Some((f01, f10)) = &opts.flows {
        f01.write_file(dir.join(FLOW_01))?;
        f10.write_file(dir.join(FLOW_10))?;
    }
    for (k, target) in job.targets.iter().enumerate() {
        let tdir = dir.join(TARGETS_DIR).join(target_dir_name(k));
        create_dir(&tdir)?;
        write_text(
            &tdir.join("target.txt"),
            &format!(
                "position={}\nt_us={}\ntau={}\n",
                target.position, target.t_us, target.tau
            ),
        )?;
        let streams = [
            ("left", &target.left),
            ("right", &target.right),
            ("reversed", &target.reversed),
        ];
        for (name, stream) in streams {
            let stream = match opts.events {
                EventsMode::Real => stream.clone(),
                EventsMode::Empty => {
                    EventStream::empty(stream.window(), stream.width(), stream.height())?
                }
            };
            stream.write_file(tdir.join(format!("events_{name}.evt1")))?;
            build_voxel_grid(&stream, opts.bins)?
                .write_file(tdir.join(format!("voxel_{name}.vox")))?;
        }
    }
    Ok(())
}

fn copy_file(from: &Path, to: &Path) -> Result<()> {
    fs::copy(from, to)
        .map(|_| ())
        .map_err(|e| BenchError::io(from, e))
}

/// Backend-side view of one target.
#[derive(Debug, Clone)]
pub struct TargetInputs {
    pub index: usize,
    pub position: usize,
    pub t_us: u64,
    pub tau: f64,
    pub dir: PathBuf,
}

impl TargetInputs {
    fn stream(&self, name: &str) -> Result<EventStream> {
        Ok(EventStream::read_file(
            self.dir.join(format!("events_{name}.evt1")),
        )?)
    }

    fn voxel(&self, name: &str) -> Result<VoxelGrid> {
        Ok(VoxelGrid::read_file(
            self.dir.join(format!("voxel_{name}.vox")),
        )?)
    }

    /// `E_{0->tau}`
    pub fn left_events(&self) -> Result<EventStream> {
        self.stream("left")
    }

    /// `E_{tau->1}`
    pub fn right_events(&self) -> Result<EventStream> {
        self.stream("right")
    }

    /// `E_{tau->0}`
    pub fn reversed_events(&self) -> Result<EventStream> {
        self.stream("reversed")
    }

    pub fn left_voxels(&self) -> Result<VoxelGrid> {
        self.voxel("left")
    }

    pub fn right_voxels(&self) -> Result<VoxelGrid> {
        self.voxel("right")
    }

    pub fn reversed_voxels(&self) -> Result<VoxelGrid> {
        self.voxel("reversed")
    }
}

/// Backend-side view of a job directory.
#[derive(Debug, Clone)]
pub struct JobInputs {
    pub dir: PathBuf,
    pub id: String,
    pub width: u32,
    pub height: u32,
    pub t0_us: u64,
    pub t1_us: u64,
    pub bins: usize,
    pub events: EventsMode,
    pub seed: u64,
    pub targets: Vec<TargetInputs>,
}

fn required<T: FromStr>(kv: &BTreeMap<String, String>, key: &str, path: &Path) -> Result<T> {
    kv.get(key)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| BenchError::protocol(path, format!("missing or invalid `{key}`")))
}

impl JobInputs {
    pub fn read(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        let job_path = dir.join(JOB_FILE);
        let text = fs::read_to_string(&job_path).map_err(|e| BenchError::io(&job_path, e))?;
        let kv = parse_key_values(&text);
        let count: usize = required(&kv, "targets", &job_path)?;
        let targets = (0..count)
            .map(|index| {
                let tdir = dir.join(TARGETS_DIR).join(target_dir_name(index));
                let tpath = tdir.join("target.txt");
                let text = fs::read_to_string(&tpath).map_err(|e| BenchError::io(&tpath, e))?;
                let tkv = parse_key_values(&text);
                Ok(TargetInputs {
                    index,
                    position: required(&tkv, "position", &tpath)?,
                    t_us: required(&tkv, "t_us", &tpath)?,
                    tau: required(&tkv, "tau", &tpath)?,
                    dir: tdir,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let events = kv
            .get("events")
            .map(|v| v.parse::<EventsMode>())
            .transpose()
            .map_err(|e| BenchError::protocol(&job_path, e))?
            .unwrap_or_default();
        Ok(JobInputs {
            id: required(&kv, "id", &job_path)?,
            width: required(&kv, "width", &job_path)?,
            height: required(&kv, "height", &job_path)?,
            t0_us: required(&kv, "t0_us", &job_path)?,
            t1_us: required(&kv, "t1_us", &job_path)?,
            bins: required(&kv, "bins", &job_path)?,
            seed: kv.get("seed").and_then(|v| v.parse().ok()).unwrap_or(0),
            events,
            targets,
            dir,
        })
    }

    pub fn left_frame(&self) -> Result<RgbImage> {
        Ok(load_png(self.dir.join(LEFT_FRAME))?)
    }

    pub fn right_frame(&self) -> Result<RgbImage> {
        Ok(load_png(self.dir.join(RIGHT_FRAME))?)
    }

    /// `(F_{0->1}, F_{1->0})` when the job provides keyframe flows.
    pub fn flows(&self) -> Result<Option<(FlowField, FlowField)>> {
        let (a, b) = (self.dir.join(FLOW_01), self.dir.join(FLOW_10));
        if !a.is_file() || !b.is_file() {
            return Ok(None);
        }
        Ok(Some((FlowField::read_file(a)?, FlowField::read_file(b)?)))
    }

    pub fn output_dir(&self) -> PathBuf {
        self.dir.join(OUTPUT_DIR)
    }

    pub fn write_prediction(&self, index: usize, image: &RgbImage) -> Result<()> {
        Ok(save_png(
            image,
            self.output_dir().join(prediction_file(index)),
        )?)
    }

    pub fn write_stage(&self, index: usize, stage: Stage, image: &RgbImage) -> Result<()> {
        Ok(save_png(
            image,
            self.output_dir().join(stage_file(index, stage)),
        )?)
    }

    pub fn write_attention(&self, index: usize, maps: &AttentionMaps) -> Result<()> {
        Ok(maps
            .to_voxel_grid()
            .write_file(self.output_dir().join(attention_file(index)))?)
    }

    pub fn mark_done(&self) -> Result<()> {
        write_text(&self.dir.join(DONE_FILE), "")
    }
}

/// What a backend left for one target.
#[derive(Debug, Clone, Default)]
pub struct TargetOutputs {
    pub prediction: Option<RgbImage>,
    pub stages: BTreeMap<Stage, RgbImage>,
    pub attention: Option<AttentionMaps>,
}

/// Predictions read back from a finished job directory.
#[derive(Debug, Clone)]
pub struct BackendResult {
    pub targets: Vec<TargetOutputs>,
}

/// Reads the outputs of a finished job, checking the sentinel and that every
/// image matches the keyframe size. A missing or misshaped final prediction
/// fails the job; a bad stage image is dropped.
pub fn read_outputs(dir: &Path, target_count: usize, dims: (u32, u32)) -> Result<BackendResult> {
    if !dir.join(DONE_FILE).is_file() {
        return Err(BenchError::protocol(dir, "backend did not write job.done"));
    }
    let out = dir.join(OUTPUT_DIR);
    let load = |name: String| -> Option<Result<RgbImage>> {
        let path = out.join(&name);
        path.is_file().then(|| {
            let img = load_png(&path)?;
            if img.dimensions() != dims {
                return Err(BenchError::protocol(
                    &path,
                    format!("image is {:?}, keyframes are {dims:?}", img.dimensions()),
                ));
            }
            Ok(img)
        })
    };
    let targets = (0..target_count)
        .map(|k| {
            let prediction = load(prediction_file(k)).ok_or_else(|| {
                BenchError::protocol(&out, format!("missing {}", prediction_file(k)))
            })??;
            let stages = Stage::ALL
                .into_iter()
                .filter_map(|s| match load(stage_file(k, s)) {
                    Some(Ok(img)) => Some((s, img)),
                    _ => None,
                })
                .collect();
            let apath = out.join(attention_file(k));
            let attention = if apath.is_file() {
                VoxelGrid::read_file(&apath)
                    .and_then(|g| AttentionMaps::from_voxel_grid(&g))
                    .ok()
            } else {
                None
            };
            Ok(TargetOutputs {
                prediction: Some(prediction),
                stages,
                attention,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BackendResult { targets })
}
