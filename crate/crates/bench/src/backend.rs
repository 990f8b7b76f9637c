//! Interpolation backends driven through job directories.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use evfi_core::blend::{blend, AttentionMaps};
use evfi_core::esim::log_intensity;
use evfi_core::frame::luma;
use evfi_core::warp::{backward_warp, scale_flow, WarpResult};
use evfi_core::{EventStream, FloatImage, FlowField};
use image::RgbImage;

use crate::error::{BenchError, Result};
use crate::protocol::{parse_key_values, EventsMode, JobInputs, Stage, TargetInputs};

/// Per-invocation switches passed to a backend alongside the job directory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunOptions {
    pub events: EventsMode,
    pub seed: u64,
}

/// Something that turns a materialized job directory into predictions.
///
/// `run` must leave `output/<k>.png` for every target and create `job.done`.
pub trait Backend: Send + Sync {
    fn name(&self) -> &str;

    /// Intermediate stages this backend writes next to its predictions.
    fn intermediates(&self) -> &[Stage] {
        &[]
    }

    /// Whether `output/<k>_attention.vox` is written.
    fn emits_attention(&self) -> bool {
        false
    }

    fn run(&self, job_dir: &Path, opts: &RunOptions) -> Result<()>;
}

/// Backends compiled into the harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Builtin {
    /// Predicts the left keyframe.
    CopyLeft,
    /// Predicts the right keyframe.
    CopyRight,
    /// Per-pixel mean of the keyframes.
    Average,
    /// Warps both keyframes with linearly scaled keyframe flow.
    LinearFlow,
    /// Hand-written model that integrates events in log space. Emits every
    /// intermediate stage and attention maps; needs no training.
    EventIntegral,
}

impl Builtin {
    pub const ALL: [Builtin; 5] = [
        Builtin::CopyLeft,
        Builtin::CopyRight,
        Builtin::Average,
        Builtin::LinearFlow,
        Builtin::EventIntegral,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Builtin::CopyLeft => "copy-left",
            Builtin::CopyRight => "copy-right",
            Builtin::Average => "average",
            Builtin::LinearFlow => "linear-flow",
            Builtin::EventIntegral => "event-integral",
        }
    }

    pub fn from_name(name: &str) -> Option<Builtin> {
        Builtin::ALL.into_iter().find(|b| b.as_str() == name)
    }
}

impl fmt::Display for Builtin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Contrast threshold the event-integral backend assumes.
pub const INTEGRAL_THRESHOLD: f64 = 0.2;
const INTEGRAL_LOG_EPS: f64 = 0.001;

impl Backend for Builtin {
    fn name(&self) -> &str {
        self.as_str()
    }

    fn intermediates(&self) -> &[Stage] {
        match self {
            Builtin::EventIntegral => &Stage::ALL,
            _ => &[],
        }
    }

    fn emits_attention(&self) -> bool {
        matches!(self, Builtin::EventIntegral)
    }

    fn run(&self, job_dir: &Path, _opts: &RunOptions) -> Result<()> {
        let job = JobInputs::read(job_dir)?;
        let i0 = job.left_frame()?;
        let i1 = job.right_frame()?;
        let flows = match self {
            Builtin::LinearFlow => Some(job.flows()?.ok_or_else(|| BenchError::Backend {
                backend: self.to_string(),
                msg: format!("job {} has no keyframe flow", job.id),
            })?),
            Builtin::EventIntegral => job.flows()?,
            _ => None,
        };
        let f0 = FloatImage::from_rgb8(&i0);
        let f1 = FloatImage::from_rgb8(&i1);
        for target in &job.targets {
            let tau = target.tau;
            match self {
                Builtin::CopyLeft => job.write_prediction(target.index, &i0)?,
                Builtin::CopyRight => job.write_prediction(target.index, &i1)?,
                Builtin::Average => {
                    let avg = f0.combine(0.5, &f1, 0.5)?;
                    job.write_prediction(target.index, &avg.to_rgb8())?;
                }
                Builtin::LinearFlow => {
                    let (f01, f10) = flows.as_ref().expect("checked above");
                    let (w0, w1) = linear_warps(&f0, &f1, f01, f10, tau)?;
                    let out = fuse_warps(&w0, &w1, &f0, &f1, tau);
                    job.write_prediction(target.index, &out.to_rgb8())?;
                }
                Builtin::EventIntegral => {
                    event_integral(&job, target, &i0, &i1, flows.as_ref())?;
                }
            }
        }
        job.mark_done()
    }
}

/// Backward warps of both keyframes to time `tau` assuming linear motion:
/// `F_{tau->0} = -tau F_{0->1}` and `F_{tau->1} = -(1 - tau) F_{1->0}`.
pub fn linear_warps(
    f0: &FloatImage,
    f1: &FloatImage,
    f01: &FlowField,
    f10: &FlowField,
    tau: f64,
) -> Result<(WarpResult, WarpResult)> {
    let to0 = scale_flow(f01, -(tau as f32));
    let to1 = scale_flow(f10, -(1.0 - tau) as f32);
    Ok((backward_warp(f0, &to0)?, backward_warp(f1, &to1)?))
}

/// Time-weighted mix of two warps. Where only one warp is valid it is used
/// alone; where neither is, the keyframes are mixed instead.
pub fn fuse_warps(
    w0: &WarpResult,
    w1: &WarpResult,
    f0: &FloatImage,
    f1: &FloatImage,
    tau: f64,
) -> FloatImage {
    let (w, h) = f0.dims();
    let mut out = FloatImage::zeros(w, h);
    let (a, b) = ((1.0 - tau) as f32, tau as f32);
    for y in 0..h {
        for x in 0..w {
            let i = (y * w + x) as usize;
            let (p0, p1) = match (w0.validity[i], w1.validity[i]) {
                (true, true) => (w0.image.pixel(x, y), w1.image.pixel(x, y)),
                (true, false) => (w0.image.pixel(x, y), w0.image.pixel(x, y)),
                (false, true) => (w1.image.pixel(x, y), w1.image.pixel(x, y)),
                (false, false) => (f0.pixel(x, y), f1.pixel(x, y)),
            };
            out.set_pixel(x, y, [0, 1, 2].map(|c| a * p0[c] + b * p1[c]));
        }
    }
    out
}

fn polarity_sums(stream: &EventStream) -> Vec<f64> {
    let w = stream.width() as usize;
    let mut sums = vec![0.0; w * stream.height() as usize];
    for e in stream.events() {
        sums[e.y as usize * w + e.x as usize] += e.polarity.as_f64();
    }
    sums
}

fn log_luma(image: &FloatImage) -> Vec<f64> {
    image
        .as_slice()
        .chunks_exact(3)
        .map(|p| {
            log_intensity(
                luma(f64::from(p[0]), f64::from(p[1]), f64::from(p[2])),
                INTEGRAL_LOG_EPS,
            )
        })
        .collect()
}

/// Moves `image` by `steps` contrast thresholds per pixel in log luma,
/// rescaling RGB by the resulting luma ratio.
fn integrate(image: &FloatImage, steps: &[f64]) -> FloatImage {
    let (w, h) = image.dims();
    let mut out = FloatImage::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let p = image.pixel(x, y).map(f64::from);
            let y_in = luma(p[0], p[1], p[2]);
            let l = log_intensity(y_in, INTEGRAL_LOG_EPS)
                + INTEGRAL_THRESHOLD * steps[(y * w + x) as usize];
            let y_out = (255.0 * (l.exp() - INTEGRAL_LOG_EPS)).clamp(0.0, 255.0);
            let px = if y_in > 1.0 {
                p.map(|v| (v * y_out / y_in).clamp(0.0, 255.0) as f32)
            } else {
                [y_out as f32; 3]
            };
            out.set_pixel(x, y, px);
        }
    }
    out
}

/// Squared excess of a log-change mismatch beyond one threshold, the
/// resolution at which events report change.
fn dead_zone(mismatch: f64) -> f64 {
    (mismatch.abs() - INTEGRAL_THRESHOLD).max(0.0).powi(2)
}

/// Candidate motion phases tried when timing the keyframe flow.
const PHASE_STEPS: usize = 50;

/// Finds the motion phase `alpha` whose linear warps best explain the
/// per-pixel log changes reported by the events on both sides of the
/// target. Ties go to the candidate closest to `tau`.
fn event_timed_phase(
    f0: &FloatImage,
    f1: &FloatImage,
    flows: &(FlowField, FlowField),
    forward: &[f64],
    backward: &[f64],
    tau: f64,
) -> Result<f64> {
    let (l0, l1) = (log_luma(f0), log_luma(f1));
    let mut best = (f64::INFINITY, f64::INFINITY, tau);
    let candidates = (0..=PHASE_STEPS)
        .map(|k| k as f64 / PHASE_STEPS as f64)
        .chain([tau]);
    for alpha in candidates {
        let (w0, w1) = linear_warps(f0, f1, &flows.0, &flows.1, alpha)?;
        let (a, b) = (log_luma(&w0.image), log_luma(&w1.image));
        let (mut cost, mut n) = (0.0, 0usize);
        for i in 0..l0.len() {
            if w0.validity[i] {
                cost += dead_zone(a[i] - l0[i] - INTEGRAL_THRESHOLD * forward[i]);
                n += 1;
            }
            if w1.validity[i] {
                cost += dead_zone(b[i] - l1[i] - INTEGRAL_THRESHOLD * backward[i]);
                n += 1;
            }
        }
        if n == 0 {
            continue;
        }
        let cost = cost / n as f64;
        let key = (cost, (alpha - tau).abs(), alpha);
        if key.0 < best.0 || (key.0 == best.0 && key.1 < best.1) {
            best = key;
        }
    }
    Ok(best.2)
}

fn fill_invalid(warp: &WarpResult, fallback: &FloatImage) -> FloatImage {
    let (w, h) = fallback.dims();
    let mut out = fallback.clone();
    for y in 0..h {
        for x in 0..w {
            if warp.validity[(y * w + x) as usize] {
                out.set_pixel(x, y, warp.image.pixel(x, y));
            }
        }
    }
    out
}

/// Score offset that effectively removes a candidate from the softmax.
const SUPPRESS: f32 = -12.0;

/// Stages of the event-integral model:
/// * warp: both keyframes warped with linearly scaled flow at `tau`;
/// * synthesis: each keyframe moved by its events in log luma, mixed by time;
/// * refined: the warps redone at the motion phase the events support, with
///   uncovered pixels taken from the synthesis;
/// * attention: refined warps weighted by phase where valid, synthesis where
///   neither warp is.
///
/// Without flow the warps degenerate to the keyframes themselves.
fn event_integral(
    job: &JobInputs,
    target: &TargetInputs,
    i0: &RgbImage,
    i1: &RgbImage,
    flows: Option<&(FlowField, FlowField)>,
) -> Result<()> {
    let (f0, f1) = (FloatImage::from_rgb8(i0), FloatImage::from_rgb8(i1));
    let (w, h) = f0.dims();
    let tau = target.tau;

    let forward = polarity_sums(&target.left_events()?);
    let backward: Vec<f64> = polarity_sums(&target.right_events()?)
        .into_iter()
        .map(|s| -s)
        .collect();
    let synthesis = integrate(&f0, &forward).combine(
        (1.0 - tau) as f32,
        &integrate(&f1, &backward),
        tau as f32,
    )?;

    let zero = (FlowField::zeros(w, h), FlowField::zeros(w, h));
    let flows = flows.unwrap_or(&zero);
    let (w0, w1) = linear_warps(&f0, &f1, &flows.0, &flows.1, tau)?;
    let warp = fuse_warps(&w0, &w1, &f0, &f1, tau);

    let alpha = event_timed_phase(&f0, &f1, flows, &forward, &backward, tau)?;
    let (v0, v1) = linear_warps(&f0, &f1, &flows.0, &flows.1, alpha)?;
    let (r0, r1) = (fill_invalid(&v0, &synthesis), fill_invalid(&v1, &synthesis));
    let refined = fuse_warps(&v0, &v1, &synthesis, &synthesis, alpha);

    let prior = [
        (1.0 - alpha).max(1e-6).ln() as f32,
        alpha.max(1e-6).ln() as f32,
    ];
    let side = |k: usize, validity: &[bool]| -> Vec<f32> {
        validity
            .iter()
            .map(|&v| prior[k] + if v { 0.0 } else { SUPPRESS })
            .collect()
    };
    let uncovered = v0
        .validity
        .iter()
        .zip(&v1.validity)
        .map(|(&a, &b)| if a || b { SUPPRESS } else { 0.0 })
        .collect();
    let scores = [side(0, &v0.validity), side(1, &v1.validity), uncovered];
    let attention = AttentionMaps::new(w, h, scores)?;
    let out = blend([&r0, &r1, &synthesis], &attention)?;

    let k = target.index;
    job.write_stage(k, Stage::Warp, &warp.to_rgb8())?;
    job.write_stage(k, Stage::Synthesis, &synthesis.to_rgb8())?;
    job.write_stage(k, Stage::Refined, &refined.to_rgb8())?;
    job.write_attention(k, &attention)?;
    job.write_prediction(k, &out.to_rgb8())
}

/// A backend living in another process, described by a key=value manifest:
///
/// ```text
/// name=my-model
/// command=python3 -m my_model.backend
/// intermediates=warp,synthesis,refined,attention
/// ```
///
/// The command is split on whitespace; a first word containing `/` is
/// resolved against the manifest's directory. It is run as
/// `<command> --job-dir <dir> --events <real|empty> --seed <n>`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExternalBackend {
    pub name: String,
    pub program: PathBuf,
    pub args: Vec<String>,
    pub stages: Vec<Stage>,
    pub attention: bool,
}

impl ExternalBackend {
    pub fn from_manifest(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| BenchError::io(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
            .map_err(|msg| BenchError::protocol(path, msg))
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self, String> {
        let kv = parse_key_values(text);
        let name = kv.get("name").cloned().ok_or("manifest needs `name`")?;
        let command = kv.get("command").ok_or("manifest needs `command`")?;
        let mut words = command.split_whitespace().map(String::from);
        let first = words.next().ok_or("`command` is empty")?;
        let program = if first.contains('/') && Path::new(&first).is_relative() {
            base.join(&first)
        } else {
            PathBuf::from(&first)
        };
        let mut stages = Vec::new();
        let mut attention = false;
        for item in kv
            .get("intermediates")
            .map(String::as_str)
            .unwrap_or("")
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
        {
            if item == "attention" {
                attention = true;
            } else {
                stages.push(item.parse::<Stage>()?);
            }
        }
        stages.sort();
        stages.dedup();
        Ok(ExternalBackend {
            name,
            program,
            args: words.collect(),
            stages,
            attention,
        })
    }
}

impl Backend for ExternalBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn intermediates(&self) -> &[Stage] {
        &self.stages
    }

    fn emits_attention(&self) -> bool {
        self.attention
    }

    fn run(&self, job_dir: &Path, opts: &RunOptions) -> Result<()> {
        let output = Command::new(&self.program)
            .args(&self.args)
            .arg("--job-dir")
            .arg(job_dir)
            .arg("--events")
            .arg(opts.events.as_str())
            .arg("--seed")
            .arg(opts.seed.to_string())
            .output()
            .map_err(|e| BenchError::Backend {
                backend: self.name.clone(),
                msg: format!("cannot start {}: {e}", self.program.display()),
            })?;
        if !output.status.success() {
            let stderr = String::from_utf8_lossy(&output.stderr);
            return Err(BenchError::Backend {
                backend: self.name.clone(),
                msg: format!("exited with {}: {}", output.status, stderr.trim()),
            });
        }
        Ok(())
    }
}

/// Resolves a builtin name or a path to an external backend manifest.
pub fn resolve_backend(spec: &str) -> Result<Box<dyn Backend>> {
    if let Some(b) = Builtin::from_name(spec) {
        return Ok(Box::new(b));
    }
    let path = Path::new(spec);
    if path.is_file() {
        return Ok(Box::new(ExternalBackend::from_manifest(path)?));
    }
    Err(BenchError::UnknownBackend(spec.to_string()))
}
