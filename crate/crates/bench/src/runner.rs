//! Benchmark orchestration: build jobs, run a backend on each, score, report.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use evfi_core::blend::{contribution_stats, AttentionMaps, ContributionStats, CANDIDATE_NAMES};
use evfi_core::dataset::{load_dataset, make_skip_benchmark, InterpolationJob, Split};
use evfi_core::metrics::{aggregate, psnr, ssim, FrameRecord, MetricReport, Summary};
use evfi_core::voxel::{VoxelGrid, DEFAULT_BINS};
use evfi_core::FlowField;
use image::RgbImage;
use rayon::prelude::*;

use crate::backend::{Backend, RunOptions};
use crate::error::{BenchError, Result};
use crate::protocol::{materialize_job, read_outputs, EventsMode, MaterializeOptions, Stage};
use crate::synth::flow_path;

pub const REPORT_FILE: &str = "report.csv";
pub const TABLE_FILE: &str = "table.txt";
pub const FAILURES_FILE: &str = "failures.txt";
pub const ATTENTION_DIR: &str = "attention";

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub dataset: PathBuf,
    pub skip: usize,
    pub bins: usize,
    /// Worker threads; 0 picks the number of cores.
    pub jobs: usize,
    pub seed: u64,
    pub events: EventsMode,
    /// Leave job directories on disk after scoring.
    pub keep_jobs: bool,
}

impl BenchConfig {
    pub fn new(dataset: impl Into<PathBuf>, skip: usize) -> Self {
        BenchConfig {
            dataset: dataset.into(),
            skip,
            bins: DEFAULT_BINS,
            jobs: 0,
            seed: 0,
            events: EventsMode::Real,
            keep_jobs: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JobFailure {
    pub job_id: String,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
struct JobScore {
    records: Vec<FrameRecord>,
    stages: BTreeMap<Stage, Vec<FrameRecord>>,
    attention: Vec<(String, AttentionMaps)>,
}

#[derive(Debug, Clone)]
pub struct BenchOutcome {
    pub backend: String,
    pub skip: usize,
    pub report: MetricReport,
    /// Scores of each intermediate stage the backend produced for every
    /// scored target; stages missing for any target are left out.
    pub stages: BTreeMap<Stage, MetricReport>,
    /// Attention maps keyed `<job id>_<target>`, in job order.
    pub attention: Vec<(String, AttentionMaps)>,
    pub failures: Vec<JobFailure>,
    pub job_count: usize,
    pub sequence_count: usize,
}

impl BenchOutcome {
    pub fn all_scored(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Builds the skip benchmark for every test-split sequence of the dataset.
pub fn build_jobs(dataset: &Path, skip: usize) -> Result<(Vec<InterpolationJob>, usize)> {
    let sequences: Vec<_> = load_dataset(dataset)?
        .into_iter()
        .filter(|s| s.split == Split::Test)
        .collect();
    if sequences.is_empty() {
        return Err(evfi_core::Error::Argument(format!(
            "{} holds no test sequences",
            dataset.display()
        ))
        .into());
    }
    let mut jobs = Vec::new();
    for s in &sequences {
        jobs.extend(make_skip_benchmark(s, skip)?);
    }
    Ok((jobs, sequences.len()))
}

fn keyframe_flows(
    dataset: &Path,
    job: &InterpolationJob,
) -> Result<Option<(FlowField, FlowField)>> {
    let root = dataset.join(&job.sequence);
    let (k0, k1) = job.keyframe_indices;
    let (a, b) = (flow_path(&root, k0, k1), flow_path(&root, k1, k0));
    if a.is_file() && b.is_file() {
        Ok(Some((FlowField::read_file(a)?, FlowField::read_file(b)?)))
    } else {
        Ok(None)
    }
}

fn score(job: &InterpolationJob, k: usize, prediction: &RgbImage) -> Result<FrameRecord> {
    let t = &job.targets[k];
    let gt = &t.ground_truth.image;
    Ok(FrameRecord {
        sequence: job.sequence.clone(),
        frame_index: t.frame_index,
        skip_position: t.position,
        psnr_db: psnr(prediction, gt)?,
        ssim: ssim(prediction, gt)?,
    })
}

fn run_job(
    config: &BenchConfig,
    backend: &dyn Backend,
    job: &InterpolationJob,
    dir: &Path,
) -> Result<JobScore> {
    let opts = MaterializeOptions {
        bins: config.bins,
        events: config.events,
        seed: config.seed,
        flows: keyframe_flows(&config.dataset, job)?,
    };
    materialize_job(job, dir, &opts)?;
    backend.run(
        dir,
        &RunOptions {
            events: config.events,
            seed: config.seed,
        },
    )?;
    let outputs = read_outputs(dir, job.targets.len(), job.keyframes.0.image.dimensions())?;
    let mut scored = JobScore::default();
    for (k, out) in outputs.targets.into_iter().enumerate() {
        let prediction = out.prediction.expect("read_outputs requires predictions");
        scored.records.push(score(job, k, &prediction)?);
        for (stage, img) in &out.stages {
            scored
                .stages
                .entry(*stage)
                .or_default()
                .push(score(job, k, img)?);
        }
        if let Some(maps) = out.attention {
            scored.attention.push((format!("{}_{k:03}", job.id), maps));
        }
    }
    if !config.keep_jobs {
        fs::remove_dir_all(dir).map_err(|e| BenchError::io(dir, e))?;
    }
    Ok(scored)
}

/// Runs `backend` on every job, using `work_dir` for the job directories.
/// A job that fails is recorded and the rest continue.
pub fn execute(
    config: &BenchConfig,
    backend: &dyn Backend,
    work_dir: &Path,
) -> Result<BenchOutcome> {
    let (jobs, sequence_count) = build_jobs(&config.dataset, config.skip)?;
    fs::create_dir_all(work_dir).map_err(|e| BenchError::io(work_dir, e))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs)
        .build()
        .map_err(|e| BenchError::Backend {
            backend: backend.name().to_string(),
            msg: format!("cannot start worker pool: {e}"),
        })?;
    let results: Vec<Result<JobScore>> = pool.install(|| {
        jobs.par_iter()
            .map(|job| run_job(config, backend, job, &work_dir.join(&job.id)))
            .collect()
    });

    let mut records = Vec::new();
    let mut stages: BTreeMap<Stage, Vec<FrameRecord>> = BTreeMap::new();
    let mut attention = Vec::new();
    let mut failures = Vec::new();
    for (job, result) in jobs.iter().zip(results) {
        match result {
            Ok(s) => {
                records.extend(s.records);
                for (stage, r) in s.stages {
                    stages.entry(stage).or_default().extend(r);
                }
                attention.extend(s.attention);
            }
            Err(e) => failures.push(JobFailure {
                job_id: job.id.clone(),
                message: e.to_string(),
            }),
        }
    }
    if records.is_empty() {
        return Err(BenchError::NoResults);
    }
    let total = records.len();
    let stages = stages
        .into_iter()
        .filter(|(_, r)| r.len() == total)
        .map(|(s, r)| Ok((s, aggregate(r)?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    Ok(BenchOutcome {
        backend: backend.name().to_string(),
        skip: config.skip,
        report: aggregate(records)?,
        stages,
        attention,
        failures,
        job_count: jobs.len(),
        sequence_count,
    })
}

/// One row of a results table; `None` marks an absent row.
pub type TableRow = (String, Option<(Summary, Summary)>);

/// Plain-text table with `mean±std` cells, PSNR to two decimals and SSIM to
/// three.
pub fn format_table(caption: &str, rows: &[TableRow]) -> String {
    let cells: Vec<(String, String, String)> = rows
        .iter()
        .map(|(label, s)| match s {
            Some((p, q)) => (label.clone(), p.display(2), q.display(3)),
            None => (label.clone(), "absent".into(), "absent".into()),
        })
        .collect();
    let width = |f: &dyn Fn(&(String, String, String)) -> usize, head: &str| {
        cells
            .iter()
            .map(f)
            .chain([head.chars().count()])
            .max()
            .unwrap_or(0)
    };
    let w0 = width(&|c| c.0.chars().count(), "Method");
    let w1 = width(&|c| c.1.chars().count(), "PSNR");
    let mut s = String::new();
    let _ = writeln!(s, "{caption}");
    let _ = writeln!(s, "{:<w0$}  {:<w1$}  SSIM", "Method", "PSNR");
    for (a, b, c) in &cells {
        let pad0 = w0 - a.chars().count();
        let pad1 = w1 - b.chars().count();
        let _ = writeln!(s, "{a}{}  {b}{}  {c}", " ".repeat(pad0), " ".repeat(pad1));
    }
    s
}

fn summary_of(report: &MetricReport) -> Option<(Summary, Summary)> {
    Some((report.psnr, report.ssim))
}

fn caption(outcome: &BenchOutcome) -> String {
    format!(
        "skip {} | {} frames from {} jobs in {} sequences",
        outcome.skip,
        outcome.report.records.len(),
        outcome.job_count,
        outcome.sequence_count
    )
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| BenchError::io(path, e))
}

fn failures_text(failures: &[JobFailure]) -> String {
    failures
        .iter()
        .map(|f| format!("{}: {}\n", f.job_id, f.message.replace('\n', " ")))
        .collect()
}

fn write_common(out_dir: &Path, outcome: &BenchOutcome) -> Result<()> {
    write_file(
        &out_dir.join(FAILURES_FILE),
        &failures_text(&outcome.failures),
    )?;
    if !outcome.attention.is_empty() {
        let dir = out_dir.join(ATTENTION_DIR);
        fs::create_dir_all(&dir).map_err(|e| BenchError::io(&dir, e))?;
        for (name, maps) in &outcome.attention {
            maps.to_voxel_grid()
                .write_file(dir.join(format!("{name}_attention.vox")))?;
        }
    }
    Ok(())
}

fn prepare(out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| BenchError::io(out_dir, e))
}

/// Skip-N benchmark. Writes `report.csv`, `table.txt` and `failures.txt`
/// to `out_dir`, plus any attention maps under `attention/`.
pub fn run_benchmark(
    config: &BenchConfig,
    backend: &dyn Backend,
    out_dir: &Path,
) -> Result<BenchOutcome> {
    prepare(out_dir)?;
    let outcome = execute(config, backend, &out_dir.join("jobs"))?;
    write_file(&out_dir.join(REPORT_FILE), &outcome.report.to_csv())?;
    let table = format_table(
        &caption(&outcome),
        &[(outcome.backend.clone(), summary_of(&outcome.report))],
    );
    write_file(&out_dir.join(TABLE_FILE), &table)?;
    write_common(out_dir, &outcome)?;
    Ok(outcome)
}

pub const ABLATION_ROWS: [&str; 4] = [
    "Warping interpolation",
    "Interpolation by synthesis",
    "Warping refinement",
    "Attention averaging",
];

#[derive(Debug, Clone)]
pub struct AblationTable {
    pub outcome: BenchOutcome,
    /// Rows in [`ABLATION_ROWS`] order.
    pub rows: Vec<TableRow>,
}

impl AblationTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("module,psnr_mean,psnr_std,ssim_mean,ssim_std\n");
        for (label, row) in &self.rows {
            match row {
                Some((p, q)) => {
                    let _ = writeln!(
                        s,
                        "{label},{:.6},{:.6},{:.6},{:.6}",
                        p.mean, p.std, q.mean, q.std
                    );
                }
                None => {
                    let _ = writeln!(s, "{label},absent,absent,absent,absent");
                }
            }
        }
        s
    }
}

/// Scores each pipeline stage separately; the final prediction is the
/// attention-averaging row. Writes `ablation.csv` and `ablation.txt`.
pub fn run_ablation(
    config: &BenchConfig,
    backend: &dyn Backend,
    out_dir: &Path,
) -> Result<AblationTable> {
    prepare(out_dir)?;
    let outcome = execute(config, backend, &out_dir.join("jobs"))?;
    let stage_row = |s: Stage| outcome.stages.get(&s).and_then(summary_of);
    let rows: Vec<TableRow> = vec![
        (ABLATION_ROWS[0].into(), stage_row(Stage::Warp)),
        (ABLATION_ROWS[1].into(), stage_row(Stage::Synthesis)),
        (ABLATION_ROWS[2].into(), stage_row(Stage::Refined)),
        (ABLATION_ROWS[3].into(), summary_of(&outcome.report)),
    ];
    let table = AblationTable { outcome, rows };
    write_file(&out_dir.join("ablation.csv"), &table.to_csv())?;
    write_file(
        &out_dir.join("ablation.txt"),
        &format_table(
            &format!(
                "{} | backend {}",
                caption(&table.outcome),
                table.outcome.backend
            ),
            &table.rows,
        ),
    )?;
    write_common(out_dir, &table.outcome)?;
    Ok(table)
}

/// Mean PSNR per skip position. Writes `rope.csv`.
pub fn run_rope(
    config: &BenchConfig,
    backend: &dyn Backend,
    out_dir: &Path,
) -> Result<BenchOutcome> {
    if config.skip < 2 {
        return Err(evfi_core::Error::Argument(format!(
            "quality by position needs skip >= 2, got {}",
            config.skip
        ))
        .into());
    }
    prepare(out_dir)?;
    let outcome = execute(config, backend, &out_dir.join("jobs"))?;
    write_file(&out_dir.join("rope.csv"), &outcome.report.rope_csv())?;
    write_common(out_dir, &outcome)?;
    Ok(outcome)
}

pub const INTERFRAME_ROWS: [&str; 2] = ["with inter-frame events", "without inter-frame events"];

#[derive(Debug, Clone)]
pub struct InterframeTable {
    pub with_events: BenchOutcome,
    pub without_events: BenchOutcome,
}

impl InterframeTable {
    pub fn rows(&self) -> Vec<TableRow> {
        vec![
            (
                INTERFRAME_ROWS[0].into(),
                summary_of(&self.with_events.report),
            ),
            (
                INTERFRAME_ROWS[1].into(),
                summary_of(&self.without_events.report),
            ),
        ]
    }

    pub fn all_scored(&self) -> bool {
        self.with_events.all_scored() && self.without_events.all_scored()
    }
}

/// Runs the benchmark with real and with empty event streams. Writes
/// `interframe.csv` and `interframe.txt`.
pub fn run_interframe(
    config: &BenchConfig,
    backend: &dyn Backend,
    out_dir: &Path,
) -> Result<InterframeTable> {
    prepare(out_dir)?;
    let run = |events: EventsMode| {
        let cfg = BenchConfig {
            events,
            ..config.clone()
        };
        execute(&cfg, backend, &out_dir.join(format!("jobs_{events}")))
    };
    let table = InterframeTable {
        with_events: run(EventsMode::Real)?,
        without_events: run(EventsMode::Empty)?,
    };
    let mut csv = String::from("events,psnr_mean,psnr_std,ssim_mean,ssim_std\n");
    for (mode, o) in [
        ("real", &table.with_events),
        ("empty", &table.without_events),
    ] {
        let r = &o.report;
        let _ = writeln!(
            csv,
            "{mode},{:.6},{:.6},{:.6},{:.6}",
            r.psnr.mean, r.psnr.std, r.ssim.mean, r.ssim.std
        );
    }
    write_file(&out_dir.join("interframe.csv"), &csv)?;
    write_file(
        &out_dir.join("interframe.txt"),
        &format_table(
            &format!(
                "{} | backend {}",
                caption(&table.with_events),
                table.with_events.backend
            ),
            &table.rows(),
        ),
    )?;
    let mut failures = table.with_events.failures.clone();
    failures.extend(table.without_events.failures.iter().cloned());
    write_file(&out_dir.join(FAILURES_FILE), &failures_text(&failures))?;
    Ok(table)
}

fn collect_attention(path: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    if path.is_file() {
        out.push(path.to_path_buf());
        return Ok(());
    }
    let entries = fs::read_dir(path).map_err(|e| BenchError::io(path, e))?;
    for entry in entries {
        let p = entry.map_err(|e| BenchError::io(path, e))?.path();
        if p.is_dir() {
            collect_attention(&p, out)?;
        } else if p
            .file_name()
            .and_then(|n| n.to_str())
            .is_some_and(|n| n.ends_with("_attention.vox"))
        {
            out.push(p);
        }
    }
    Ok(())
}

/// Pools argmax contributions over attention files. Directories are searched
/// recursively for `*_attention.vox`.
pub fn contribution_histogram(paths: &[PathBuf]) -> Result<(ContributionStats, usize)> {
    let mut files = Vec::new();
    for p in paths {
        collect_attention(p, &mut files)?;
    }
    files.sort();
    files.dedup();
    let mut total = ContributionStats::default();
    for f in &files {
        let maps = AttentionMaps::from_voxel_grid(&VoxelGrid::read_file(f)?)?;
        total = total.merge(&contribution_stats(&maps));
    }
    Ok((total, files.len()))
}

pub fn contribution_csv(stats: &ContributionStats) -> String {
    let mut s = String::from("candidate,pixels,fraction\n");
    let fractions = stats.fractions();
    for (k, name) in CANDIDATE_NAMES.iter().enumerate() {
        let _ = writeln!(s, "{name},{},{:.6}", stats.counts[k], fractions[k]);
    }
    s
}
