//! Acceptance suite: one line per criterion, nonzero exit on any gating
//! failure. Run with `cargo test -p evfi-bench --test acceptance`.

use std::fs;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use evfi_bench::runner::{self, BenchConfig, REPORT_FILE};
use evfi_bench::synth::{generate_dataset, Motion, SynthConfig};
use evfi_bench::Builtin;
use evfi_core::esim::{simulate, simulate_signal, SimulatorConfig};
use evfi_core::metrics::{psnr, ssim};
use evfi_core::oracles::{sampled_crossings, ssim_direct};
use evfi_core::voxel::build_voxel_grid;
use evfi_core::warp::backward_warp;
use evfi_core::{Event, EventStream, FloatImage, FlowField, Frame, Polarity};
use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_stream(rng: &mut ChaCha8Rng) -> EventStream {
    let t0 = rng.random_range(0..1_000_000u64);
    let t1 = t0 + rng.random_range(1..200_000u64);
    let (w, h) = (rng.random_range(1..40u32), rng.random_range(1..40u32));
    let n = rng.random_range(0..300);
    let events = (0..n)
        .map(|_| {
            let p = if rng.random() {
                Polarity::Positive
            } else {
                Polarity::Negative
            };
            Event::new(
                rng.random_range(t0..=t1),
                rng.random_range(0..w) as u16,
                rng.random_range(0..h) as u16,
                p,
            )
        })
        .collect();
    EventStream::new(events, (t0, t1), w, h).unwrap()
}

fn reversal() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for i in 0..1000 {
        let s = random_stream(&mut rng);
        let r = s.reverse();
        ensure(r.reverse() == s, || {
            format!("stream {i}: reverse(reverse(s)) != s")
        })?;
        ensure(r.polarity_sum() == -s.polarity_sum(), || {
            format!(
                "stream {i}: polarity sum {} vs {}",
                r.polarity_sum(),
                s.polarity_sum()
            )
        })?;
    }
    Ok("1000 streams, exact".into())
}

fn voxels() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_mass = 0f64;
    let mut worst_eq = 0f64;
    for i in 0..1000 {
        let s = random_stream(&mut rng);
        let bins = 1 + i % 8;
        let g = build_voxel_grid(&s, bins).map_err(|e| e.to_string())?;
        let mass = (g.sum() - s.polarity_sum() as f64).abs();
        worst_mass = worst_mass.max(mass);
        ensure(mass <= 1e-6, || {
            format!("stream {i}, B={bins}: mass error {mass:e}")
        })?;
        let r = build_voxel_grid(&s.reverse(), bins).map_err(|e| e.to_string())?;
        for b in 0..bins {
            for (x, y) in r.bin(b).iter().zip(g.bin(bins - 1 - b)) {
                let d = f64::from(x + y).abs();
                worst_eq = worst_eq.max(d);
                ensure(d <= 1e-6, || {
                    format!("stream {i}, B={bins}: equivariance error {d:e}")
                })?;
            }
        }
    }
    Ok(format!(
        "1000 streams, B in 1..=8; max mass error {worst_mass:.1e}, max equivariance error {worst_eq:.1e}"
    ))
}

fn simulator() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut total = 0;
    for i in 0..200 {
        let c = rng.random_range(0.1..0.5);
        let mut knots = vec![(0u64, rng.random_range(-4.0..0.0))];
        for _ in 0..rng.random_range(1..8) {
            let &(t, l) = knots.last().unwrap();
            knots.push((
                t + rng.random_range(1..=100u64) * 10_000,
                l + rng.random_range(-1.5..1.5),
            ));
        }
        let cfg = SimulatorConfig {
            c_pos: c,
            c_neg: c,
            ..SimulatorConfig::default()
        };
        let events = simulate_signal(&knots, &cfg).map_err(|e| e.to_string())?;
        let oracle = sampled_crossings(&knots, c, c, 10_000);
        ensure(events.len() == oracle.len(), || {
            format!(
                "signal {i}: {} events, oracle {}",
                events.len(),
                oracle.len()
            )
        })?;
        for (e, o) in events.events().iter().zip(&oracle) {
            ensure(e.polarity == o.1, || {
                format!("signal {i}: polarity mismatch at {}", e.t)
            })?;
            ensure((e.t as f64 - o.0).abs() <= o.2, || {
                format!(
                    "signal {i}: event at {} vs oracle {} (step {})",
                    e.t, o.0, o.2
                )
            })?;
        }
        total += events.len();
    }
    let ramp = simulate_signal(
        &[(0, 0.0), (1_000_000, 1.0)],
        &SimulatorConfig {
            c_pos: 0.25,
            c_neg: 0.25,
            ..SimulatorConfig::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let times: Vec<(u64, Polarity)> = ramp.events().iter().map(|e| (e.t, e.polarity)).collect();
    let expected: Vec<(u64, Polarity)> = [250_000, 500_000, 750_000, 1_000_000]
        .into_iter()
        .map(|t| (t, Polarity::Positive))
        .collect();
    ensure(times == expected, || format!("ramp gave {times:?}"))?;
    Ok(format!(
        "200 signals, {total} events matched; ramp gives 4 events at 250/500/750/1000 ms"
    ))
}

fn random_image(rng: &mut ChaCha8Rng, w: u32, h: u32) -> RgbImage {
    RgbImage::from_fn(w, h, |_, _| {
        image::Rgb([rng.random(), rng.random(), rng.random()])
    })
}

fn warp() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut compared = 0usize;
    for i in 0..100 {
        let (w, h) = (rng.random_range(4..40u32), rng.random_range(4..40u32));
        let img = random_image(&mut rng, w, h);
        let src = FloatImage::from_rgb8(&img);
        let id = backward_warp(&src, &FlowField::zeros(w, h)).map_err(|e| e.to_string())?;
        ensure(id.image == src && id.image.to_rgb8() == img, || {
            format!("image {i}: identity not exact")
        })?;
        ensure(id.validity.iter().all(|&v| v), || {
            format!("image {i}: identity lost pixels")
        })?;

        let (dx, dy) = (rng.random_range(-6..=6i32), rng.random_range(-6..=6i32));
        let shifted = backward_warp(&src, &FlowField::constant(w, h, dx as f32, dy as f32))
            .map_err(|e| e.to_string())?;
        for y in 0..h as i32 {
            for x in 0..w as i32 {
                let (sx, sy) = (x + dx, y + dy);
                let inside = sx >= 0 && sy >= 0 && sx < w as i32 && sy < h as i32;
                let valid = shifted.validity[(y as u32 * w + x as u32) as usize];
                ensure(valid == inside, || {
                    format!("image {i}: validity wrong at ({x}, {y})")
                })?;
                if inside {
                    compared += 1;
                    let got = shifted.image.pixel(x as u32, y as u32);
                    let want = src.pixel(sx as u32, sy as u32);
                    ensure(got == want, || {
                        format!("image {i}: shift ({dx}, {dy}) differs at ({x}, {y})")
                    })?;
                }
            }
        }
    }
    Ok(format!(
        "100 images bit-exact under zero flow; {compared} shifted interior pixels exact"
    ))
}

fn metrics() -> Check {
    let a = RgbImage::from_pixel(32, 32, image::Rgb([100, 100, 100]));
    let b = RgbImage::from_pixel(32, 32, image::Rgb([116, 116, 116]));
    let closed = 20.0 * (255.0f64 / 16.0).log10();
    let p = psnr(&a, &b).map_err(|e| e.to_string())?;
    ensure((p - closed).abs() < 1e-4, || {
        format!("psnr {p} vs closed form {closed}")
    })?;

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut worst_self, mut worst_sym, mut worst_oracle) = (0f64, 0f64, 0f64);
    for i in 0..50 {
        let (w, h) = (rng.random_range(11..48u32), rng.random_range(11..48u32));
        let x = random_image(&mut rng, w, h);
        let y = random_image(&mut rng, w, h);
        let s = |a: &RgbImage, b: &RgbImage| ssim(a, b).map_err(|e| e.to_string());
        let self_err = (s(&x, &x)? - 1.0).abs();
        let xy = s(&x, &y)?;
        let sym = (xy - s(&y, &x)?).abs();
        let oracle = (xy - ssim_direct(&x, &y)).abs();
        worst_self = worst_self.max(self_err);
        worst_sym = worst_sym.max(sym);
        worst_oracle = worst_oracle.max(oracle);
        ensure(self_err <= 1e-9, || {
            format!("pair {i}: |ssim(I,I) - 1| = {self_err:e}")
        })?;
        ensure(sym <= 1e-9, || format!("pair {i}: asymmetry {sym:e}"))?;
        ensure(oracle <= 1e-9, || {
            format!("pair {i}: differs from direct SSIM by {oracle:e}")
        })?;
    }
    Ok(format!(
        "psnr {p:.6} dB (closed form {closed:.6}); 50 random pairs: |ssim(I,I)-1| <= {worst_self:.1e}, \
         asymmetry <= {worst_sym:.1e}, direct-window gap <= {worst_oracle:.1e}"
    ))
}

fn benchmark() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = tmp.path().join("synthetic");
    generate_dataset(&data, &SynthConfig::default()).map_err(|e| e.to_string())?;
    let run = |backend: &Builtin, dataset: &std::path::Path, out: &str, jobs: usize| {
        let cfg = BenchConfig {
            jobs,
            ..BenchConfig::new(dataset, 1)
        };
        runner::run_benchmark(&cfg, backend, &tmp.path().join(out)).map_err(|e| e.to_string())
    };
    run(&Builtin::Average, &data, "avg-a", 1)?;
    run(&Builtin::Average, &data, "avg-b", 4)?;
    let read = |d: &str| fs::read(tmp.path().join(d).join(REPORT_FILE)).map_err(|e| e.to_string());
    ensure(read("avg-a")? == read("avg-b")?, || {
        "average reports differ between runs".into()
    })?;

    let cv = tmp.path().join("constant-velocity");
    generate_dataset(
        &cv,
        &SynthConfig {
            motions: vec![Motion::Translate],
            ..SynthConfig::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let lin = run(&Builtin::LinearFlow, &cv, "lin", 0)?;
    let avg = run(&Builtin::Average, &cv, "avg-cv", 0)?;
    ensure(lin.all_scored() && avg.all_scored(), || {
        "unscored jobs".into()
    })?;
    let (l, a) = (lin.report.psnr.mean, avg.report.psnr.mean);
    ensure(l > a, || {
        format!("linear-flow {l:.3} dB not above average {a:.3} dB")
    })?;
    Ok(format!(
        "average reports byte-identical across runs; constant velocity: linear-flow {l:.2} dB > average {a:.2} dB"
    ))
}

fn throughput() -> Check {
    let (w, h) = (640u32, 480u32);
    let frame = |shift: f64| {
        RgbImage::from_fn(w, h, |x, y| {
            let (fx, fy) = (f64::from(x) - shift, f64::from(y));
            let v = 128.0
                + 60.0 * (fx / 9.0).sin() * (fy / 13.0).cos()
                + 30.0 * ((fx + fy) / 21.0).sin();
            image::Rgb([v as u8, (v * 0.9) as u8, (255.0 - v) as u8])
        })
    };
    let frames = [Frame::new(0, frame(0.0)), Frame::new(33_333, frame(3.0))];
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| e.to_string())?;
    let cfg = SimulatorConfig::default();
    let mut best = Duration::MAX;
    let mut count = 0;
    for _ in 0..3 {
        let start = Instant::now();
        let events = pool
            .install(|| simulate(&frames, &cfg))
            .map_err(|e| e.to_string())?;
        best = best.min(start.elapsed());
        count = events.len();
    }
    let ms = best.as_secs_f64() * 1e3;
    let verdict = if ms < 100.0 { "within" } else { "over" };
    Ok(format!(
        "640x480 pair, 1 thread: {ms:.1} ms for {count} events ({verdict} the 100 ms target)"
    ))
}

fn main() -> ExitCode {
    let start = Instant::now();
    let gating: [Criterion; 6] = [
        ("reversal involution and polarity-sum negation", reversal),
        ("voxel mass conservation and reversal equivariance", voxels),
        (
            "simulator vs dense-sampling oracle, analytic ramp",
            simulator,
        ),
        ("warp identity and integer shifts", warp),
        ("psnr closed form, ssim identity and symmetry", metrics),
        (
            "benchmark determinism, linear-flow above average",
            benchmark,
        ),
    ];
    let mut failed = 0;
    for (name, check) in gating {
        match check() {
            Ok(detail) => println!("[PASS] {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("[FAIL] {name}: {why}");
            }
        }
    }
    let elapsed = start.elapsed();
    if elapsed < Duration::from_secs(300) {
        println!(
            "[PASS] primary suite runtime: {:.1} s (limit 300 s)",
            elapsed.as_secs_f64()
        );
    } else {
        failed += 1;
        println!(
            "[FAIL] primary suite runtime: {:.1} s (limit 300 s)",
            elapsed.as_secs_f64()
        );
    }
    match throughput() {
        Ok(detail) => println!("[INFO] simulator throughput: {detail}"),
        Err(why) => println!("[INFO] simulator throughput: not measured ({why})"),
    }
    if failed == 0 {
        println!("acceptance: all gating criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failed} gating criteria failed");
        ExitCode::FAILURE
    }
}
