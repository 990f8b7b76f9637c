use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use evfi_bench::runner::{self, BenchConfig};
use evfi_bench::synth::{generate_dataset, Motion, SynthConfig};
use evfi_bench::{resolve_backend, EventsMode};
use evfi_core::esim::{simulate, SimulatorConfig};
use evfi_core::frame::load_png;
use evfi_core::Frame;

#[derive(Parser)]
#[command(
    name = "evfi",
    version,
    about = "Event-based video frame interpolation benchmark"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate an event stream from a directory of frames.
    Simulate(SimulateArgs),
    /// Skip-N interpolation benchmark.
    Benchmark(BenchArgs),
    /// Score every intermediate stage of a backend.
    Ablation(BenchArgs),
    /// Mean PSNR per skip position.
    Rope(BenchArgs),
    /// Compare runs with real and with empty inter-frame events.
    Interframe(BenchArgs),
    /// Attention contribution histogram from attention map files.
    Stats(StatsArgs),
    /// Write the synthetic test dataset.
    Synth(SynthArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Directory of `%06d.png` frames.
    #[arg(long)]
    frames_dir: PathBuf,
    /// One timestamp in µs per frame.
    #[arg(long)]
    timestamps_file: PathBuf,
    /// Output event file; `.txt` writes text, anything else binary.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.2)]
    c_pos: f64,
    #[arg(long, default_value_t = 0.2)]
    c_neg: f64,
    #[arg(long, default_value_t = 0.0)]
    jitter_std: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value_t = 1)]
    skip: usize,
    /// Builtin name or a backend manifest file.
    #[arg(long)]
    backend: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = evfi_core::voxel::DEFAULT_BINS)]
    bins: usize,
    /// Parallel jobs; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Event files given to the backend.
    #[arg(long, default_value = "real")]
    events: EventsMode,
    /// Keep job directories under the output directory.
    #[arg(long)]
    keep_jobs: bool,
}

impl BenchArgs {
    fn config(&self) -> BenchConfig {
        BenchConfig {
            dataset: self.dataset.clone(),
            skip: self.skip,
            bins: self.bins,
            jobs: self.jobs,
            seed: self.seed,
            events: self.events,
            keep_jobs: self.keep_jobs,
        }
    }
}

#[derive(Args)]
struct StatsArgs {
    /// Attention `.vox` files or directories holding `*_attention.vox`.
    #[arg(required = true)]
    paths: Vec<PathBuf>,
    /// Also write the histogram as CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 64)]
    width: u32,
    #[arg(long, default_value_t = 64)]
    height: u32,
    #[arg(long, default_value_t = 9)]
    frames: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Motions to generate; all by default.
    #[arg(long, value_delimiter = ',')]
    motions: Vec<Motion>,
}

fn simulate_cmd(args: &SimulateArgs) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(&args.timestamps_file)
        .with_context(|| format!("reading {}", args.timestamps_file.display()))?;
    let stamps: Vec<u64> = text
        .split_whitespace()
        .map(|s| s.parse().with_context(|| format!("bad timestamp {s:?}")))
        .collect::<anyhow::Result<_>>()?;
    let frames = stamps
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let path = args.frames_dir.join(evfi_core::dataset::frame_file_name(i));
            Ok(Frame::new(t, load_png(&path)?))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let config = SimulatorConfig {
        c_pos: args.c_pos,
        c_neg: args.c_neg,
        jitter_std: args.jitter_std,
        seed: args.seed,
        ..SimulatorConfig::default()
    };
    let events = simulate(&frames, &config)?;
    events.write_file(&args.out)?;
    println!(
        "{} events over [{}, {}] µs -> {}",
        events.len(),
        events.t_begin(),
        events.t_end(),
        args.out.display()
    );
    Ok(())
}

fn report_failures(failures: &[runner::JobFailure]) -> bool {
    for f in failures {
        eprintln!("job {} failed: {}", f.job_id, f.message);
    }
    failures.is_empty()
}

fn print_file(path: &Path) -> anyhow::Result<()> {
    print!("{}", std::fs::read_to_string(path)?);
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::Simulate(args) => simulate_cmd(&args).map(|_| true),
        Command::Benchmark(args) => {
            let backend = resolve_backend(&args.backend)?;
            let outcome = runner::run_benchmark(&args.config(), backend.as_ref(), &args.out)?;
            print_file(&args.out.join(runner::TABLE_FILE))?;
            Ok(report_failures(&outcome.failures))
        }
        Command::Ablation(args) => {
            let backend = resolve_backend(&args.backend)?;
            let table = runner::run_ablation(&args.config(), backend.as_ref(), &args.out)?;
            print_file(&args.out.join("ablation.txt"))?;
            Ok(report_failures(&table.outcome.failures))
        }
        Command::Rope(args) => {
            let backend = resolve_backend(&args.backend)?;
            let outcome = runner::run_rope(&args.config(), backend.as_ref(), &args.out)?;
            print!("{}", outcome.report.rope_csv());
            Ok(report_failures(&outcome.failures))
        }
        Command::Interframe(args) => {
            let backend = resolve_backend(&args.backend)?;
            let table = runner::run_interframe(&args.config(), backend.as_ref(), &args.out)?;
            print_file(&args.out.join("interframe.txt"))?;
            let ok = report_failures(&table.with_events.failures);
            Ok(report_failures(&table.without_events.failures) && ok)
        }
        Command::Stats(args) => {
            let (stats, files) = runner::contribution_histogram(&args.paths)?;
            if files == 0 {
                bail!("no attention maps found");
            }
            let csv = runner::contribution_csv(&stats);
            if let Some(out) = &args.out {
                std::fs::write(out, &csv).with_context(|| format!("writing {}", out.display()))?;
            }
            println!("{files} attention maps, {} pixels", stats.total());
            print!("{csv}");
            Ok(true)
        }
        Command::Synth(args) => {
            let defaults = SynthConfig::default();
            let config = SynthConfig {
                width: args.width,
                height: args.height,
                frames: args.frames,
                seed: args.seed,
                motions: if args.motions.is_empty() {
                    defaults.motions.clone()
                } else {
                    args.motions.clone()
                },
                ..defaults
            };
            for dir in generate_dataset(&args.out, &config)? {
                println!("{}", dir.display());
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
