mod common;

use std::fs;
use std::path::Path;

use evfi_bench::protocol::{JobInputs, Stage};
use evfi_bench::runner::{self, contribution_histogram, BenchConfig, ABLATION_ROWS, REPORT_FILE};
use evfi_bench::synth::Motion;
use evfi_bench::{Backend, BenchError, Builtin, RunOptions};
use evfi_core::metrics::PSNR_CAP_DB;
use image::RgbImage;

fn config(dataset: &Path, skip: usize) -> BenchConfig {
    BenchConfig::new(dataset, skip)
}

#[test]
fn static_scene_hits_the_cap() {
    let data = common::dataset(&[Motion::Static]);
    let out = common::out_dir();
    let left = runner::run_benchmark(
        &config(data.path(), 1),
        &Builtin::CopyLeft,
        &out.path().join("l"),
    )
    .unwrap();
    let avg = runner::run_benchmark(
        &config(data.path(), 1),
        &Builtin::Average,
        &out.path().join("a"),
    )
    .unwrap();
    for o in [&left, &avg] {
        assert!(o.all_scored());
        assert_eq!(o.report.records.len(), 4);
        assert_eq!(o.report.psnr.mean, PSNR_CAP_DB);
        assert_eq!(o.report.ssim.mean, 1.0);
    }
    assert_eq!(left.report.records, avg.report.records);
    let csv = fs::read_to_string(out.path().join("l").join(REPORT_FILE)).unwrap();
    assert_eq!(csv, left.report.to_csv());
    let table = fs::read_to_string(out.path().join("l").join(runner::TABLE_FILE)).unwrap();
    assert!(
        table.contains("copy-left  100.00±0.00  1.000±0.000"),
        "{table}"
    );
}

#[test]
fn linear_flow_beats_average_on_translation() {
    let data = common::dataset(&[Motion::Translate]);
    let out = common::out_dir();
    for skip in [1, 3] {
        let cfg = config(data.path(), skip);
        let lin = runner::run_benchmark(
            &cfg,
            &Builtin::LinearFlow,
            &out.path().join(format!("lin{skip}")),
        )
        .unwrap();
        let avg = runner::run_benchmark(
            &cfg,
            &Builtin::Average,
            &out.path().join(format!("avg{skip}")),
        )
        .unwrap();
        assert!(lin.all_scored() && avg.all_scored());
        assert!(
            lin.report.psnr.mean > avg.report.psnr.mean,
            "skip {skip}: {} vs {}",
            lin.report.psnr.mean,
            avg.report.psnr.mean
        );
    }
}

#[test]
fn reports_do_not_depend_on_parallelism() {
    let data = common::dataset(&[Motion::Translate, Motion::Illumination]);
    let out = common::out_dir();
    let mut csvs = Vec::new();
    for (n, jobs) in [1, 4, 0].into_iter().enumerate() {
        let cfg = BenchConfig {
            jobs,
            ..config(data.path(), 1)
        };
        let dir = out.path().join(n.to_string());
        runner::run_benchmark(&cfg, &Builtin::EventIntegral, &dir).unwrap();
        csvs.push(fs::read(dir.join(REPORT_FILE)).unwrap());
    }
    assert_eq!(csvs[0], csvs[1]);
    assert_eq!(csvs[0], csvs[2]);
}

#[test]
fn job_directories_are_removed_unless_kept() {
    let data = common::dataset(&[Motion::Static]);
    let out = common::out_dir();
    runner::run_benchmark(&config(data.path(), 1), &Builtin::Average, out.path()).unwrap();
    assert_eq!(fs::read_dir(out.path().join("jobs")).unwrap().count(), 0);
    let kept = BenchConfig {
        keep_jobs: true,
        ..config(data.path(), 1)
    };
    runner::run_benchmark(&kept, &Builtin::Average, out.path()).unwrap();
    assert!(out.path().join("jobs/static_000000/job.done").is_file());
}

/// Fails every job whose id ends in the given suffix, otherwise copies the
/// left keyframe; can also write misshaped frames.
struct Flaky {
    fail_suffix: &'static str,
    misshape: bool,
}

impl Backend for Flaky {
    fn name(&self) -> &str {
        "flaky"
    }

    fn run(&self, job_dir: &Path, _opts: &RunOptions) -> evfi_bench::Result<()> {
        let job = JobInputs::read(job_dir)?;
        if job.id.ends_with(self.fail_suffix) {
            return Err(BenchError::Backend {
                backend: "flaky".into(),
                msg: "refusing".into(),
            });
        }
        let frame = if self.misshape {
            RgbImage::new(job.width / 2, job.height)
        } else {
            job.left_frame()?
        };
        for t in &job.targets {
            job.write_prediction(t.index, &frame)?;
        }
        job.mark_done()
    }
}

#[test]
fn failed_jobs_are_recorded_and_the_run_continues() {
    let data = common::dataset(&[Motion::Static, Motion::Translate]);
    let out = common::out_dir();
    let flaky = Flaky {
        fail_suffix: "_000002",
        misshape: false,
    };
    let o = runner::run_benchmark(&config(data.path(), 1), &flaky, out.path()).unwrap();
    assert!(!o.all_scored());
    let ids: Vec<&str> = o.failures.iter().map(|f| f.job_id.as_str()).collect();
    assert_eq!(ids, vec!["static_000002", "translate_000002"]);
    assert_eq!(o.job_count, 8);
    assert_eq!(o.report.records.len(), 6);
    let failures = fs::read_to_string(out.path().join(runner::FAILURES_FILE)).unwrap();
    assert_eq!(failures.lines().count(), 2);
    assert!(failures.starts_with("static_000002: backend flaky failed: refusing"));
}

#[test]
fn misshaped_predictions_fail_jobs_and_no_results_is_an_error() {
    let data = common::dataset(&[Motion::Static]);
    let out = common::out_dir();
    let flaky = Flaky {
        fail_suffix: "never",
        misshape: true,
    };
    let err = runner::run_benchmark(&config(data.path(), 1), &flaky, out.path()).unwrap_err();
    assert!(matches!(err, BenchError::NoResults), "{err}");
}

#[test]
fn dataset_without_test_sequences_is_rejected() {
    let data = common::dataset(&[Motion::Static]);
    let meta = data.path().join("static/meta.txt");
    fs::write(&meta, "split=train\n").unwrap();
    let out = common::out_dir();
    assert!(runner::run_benchmark(&config(data.path(), 1), &Builtin::Average, out.path()).is_err());
}

/// Writes the same image for every stage.
struct SameEverywhere;

impl Backend for SameEverywhere {
    fn name(&self) -> &str {
        "same"
    }

    fn intermediates(&self) -> &[Stage] {
        &Stage::ALL
    }

    fn run(&self, job_dir: &Path, _opts: &RunOptions) -> evfi_bench::Result<()> {
        let job = JobInputs::read(job_dir)?;
        let frame = job.right_frame()?;
        for t in &job.targets {
            for s in Stage::ALL {
                job.write_stage(t.index, s, &frame)?;
            }
            job.write_prediction(t.index, &frame)?;
        }
        job.mark_done()
    }
}

#[test]
fn ablation_rows() {
    let data = common::dataset(&[Motion::Translate]);
    let out = common::out_dir();
    let same = runner::run_ablation(
        &config(data.path(), 1),
        &SameEverywhere,
        &out.path().join("s"),
    )
    .unwrap();
    assert_eq!(same.rows.len(), 4);
    for (i, (label, row)) in same.rows.iter().enumerate() {
        assert_eq!(label, ABLATION_ROWS[i]);
        assert_eq!(row, &same.rows[3].1);
        assert!(row.is_some());
    }
    let text = fs::read_to_string(out.path().join("s/ablation.txt")).unwrap();
    assert_eq!(text.lines().count(), 6);

    let plain = runner::run_ablation(
        &config(data.path(), 1),
        &Builtin::CopyLeft,
        &out.path().join("c"),
    )
    .unwrap();
    let present: Vec<bool> = plain.rows.iter().map(|r| r.1.is_some()).collect();
    assert_eq!(present, vec![false, false, false, true]);
    let csv = fs::read_to_string(out.path().join("c/ablation.csv")).unwrap();
    assert!(csv.contains("Warping interpolation,absent,absent,absent,absent"));
}

#[test]
fn event_integral_ablation_stages_on_accelerating_motion() {
    let data = common::dataset(&[Motion::Accelerate]);
    let out = common::out_dir();
    let t =
        runner::run_ablation(&config(data.path(), 1), &Builtin::EventIntegral, out.path()).unwrap();
    let psnr: Vec<f64> = t.rows.iter().map(|r| r.1.unwrap().0.mean).collect();
    // warp, synthesis, refined, attention
    assert!(psnr[2] > psnr[0], "{psnr:?}");
    assert!(
        psnr[3] >= psnr.iter().take(3).cloned().fold(f64::MIN, f64::max) - 0.1,
        "{psnr:?}"
    );
}

#[test]
fn rope_orderings() {
    let data = common::dataset(&[Motion::Translate]);
    let out = common::out_dir();
    let cfg = config(data.path(), 3);
    let left = runner::run_rope(&cfg, &Builtin::CopyLeft, &out.path().join("l")).unwrap();
    let p: Vec<f64> = left.report.per_position.iter().map(|p| p.psnr_db).collect();
    assert_eq!(p.len(), 3);
    assert!(p[0] > p[1] && p[1] > p[2], "{p:?}");

    let avg = runner::run_rope(&cfg, &Builtin::Average, &out.path().join("a")).unwrap();
    let q: Vec<f64> = avg.report.per_position.iter().map(|p| p.psnr_db).collect();
    // Symmetric next to a one-sided predictor's drop over the same positions.
    assert!((q[0] - q[2]).abs() < 0.25 * (p[0] - p[2]), "{q:?} vs {p:?}");
    assert!(q[1] > q[0] && q[1] > q[2], "{q:?}");

    let csv = fs::read_to_string(out.path().join("l/rope.csv")).unwrap();
    assert!(csv.starts_with("position,psnr_db\n1,"));
    assert_eq!(csv.lines().count(), 4);

    let still = common::dataset(&[Motion::Static]);
    let flat = runner::run_rope(
        &config(still.path(), 3),
        &Builtin::Average,
        &out.path().join("s"),
    )
    .unwrap();
    assert!(flat
        .report
        .per_position
        .iter()
        .all(|p| p.psnr_db == PSNR_CAP_DB));

    assert!(runner::run_rope(
        &config(data.path(), 1),
        &Builtin::Average,
        &out.path().join("x")
    )
    .is_err());
}

#[test]
fn interframe_rows() {
    let out = common::out_dir();
    let moving = common::dataset(&[Motion::Accelerate]);
    let ignoring = runner::run_interframe(
        &config(moving.path(), 1),
        &Builtin::LinearFlow,
        &out.path().join("i"),
    )
    .unwrap();
    assert_eq!(ignoring.with_events.report, ignoring.without_events.report);

    for skip in [1, 3] {
        let t = runner::run_interframe(
            &config(moving.path(), skip),
            &Builtin::EventIntegral,
            &out.path().join(format!("e{skip}")),
        )
        .unwrap();
        assert!(t.all_scored());
        assert!(
            t.with_events.report.psnr.mean >= t.without_events.report.psnr.mean,
            "skip {skip}: {} vs {}",
            t.with_events.report.psnr.mean,
            t.without_events.report.psnr.mean
        );
    }
    let csv = fs::read_to_string(out.path().join("e1/interframe.csv")).unwrap();
    assert!(csv.lines().nth(1).unwrap().starts_with("real,"));
    assert!(csv.lines().nth(2).unwrap().starts_with("empty,"));

    let still = common::dataset(&[Motion::Static]);
    let s = runner::run_interframe(
        &config(still.path(), 1),
        &Builtin::EventIntegral,
        &out.path().join("s"),
    )
    .unwrap();
    assert_eq!(s.with_events.report.psnr.mean, PSNR_CAP_DB);
    assert_eq!(s.with_events.report, s.without_events.report);
}

#[test]
fn attention_maps_feed_the_histogram() {
    let data = common::dataset(&[Motion::Translate]);
    let out = common::out_dir();
    let o = runner::run_benchmark(&config(data.path(), 1), &Builtin::EventIntegral, out.path())
        .unwrap();
    assert_eq!(o.attention.len(), 4);
    let dir = out.path().join(runner::ATTENTION_DIR);
    let (stats, files) = contribution_histogram(std::slice::from_ref(&dir)).unwrap();
    assert_eq!(files, 4);
    assert_eq!(stats.total(), 4 * 64 * 64);
    let f = stats.fractions();
    assert!((f.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    let csv = runner::contribution_csv(&stats);
    assert!(csv.starts_with("candidate,pixels,fraction\nrefine_0,"));

    let one = dir.join("translate_000000_000_attention.vox");
    let (single, n) = contribution_histogram(&[one.clone(), one]).unwrap();
    assert_eq!((single.total(), n), (64 * 64, 1));
}
