//! PSNR, SSIM and report aggregation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use image::RgbImage;

use crate::error::{Error, Result};
use crate::frame::luma_plane;

/// PSNR reported for identical images.
pub const PSNR_CAP_DB: f64 = 100.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
const PEAK: f64 = 255.0;

fn check_same_shape(a: &RgbImage, b: &RgbImage) -> Result<()> {
    if a.dimensions() != b.dimensions() {
        return Err(Error::Argument(format!(
            "image sizes differ: {:?} vs {:?}",
            a.dimensions(),
            b.dimensions()
        )));
    }
    Ok(())
}

/// Peak signal-to-noise ratio over all channels jointly, capped at
/// [`PSNR_CAP_DB`].
pub fn psnr(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    check_same_shape(a, b)?;
    let n = a.as_raw().len();
    if n == 0 {
        return Err(Error::Argument("cannot score empty images".into()));
    }
    let sse: u64 = a
        .as_raw()
        .iter()
        .zip(b.as_raw())
        .map(|(&u, &v)| {
            let d = i64::from(u) - i64::from(v);
            (d * d) as u64
        })
        .sum();
    if sse == 0 {
        return Ok(PSNR_CAP_DB);
    }
    let mse = sse as f64 / n as f64;
    Ok((10.0 * (PEAK * PEAK / mse).log10()).min(PSNR_CAP_DB))
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut k = [0.0; SSIM_WINDOW];
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let total: f64 = k.iter().sum();
    k.map(|v| v / total)
}

/// Valid-mode separable filtering of a `w x h` plane.
fn filter_valid(plane: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        let src = &plane[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = k.iter().zip(&src[x..]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = k
                .iter()
                .enumerate()
                .map(|(i, a)| a * rows[(y + i) * ow + x])
                .sum();
        }
    }
    out
}

/// Mean structural similarity on luma with an 11x11 Gaussian window
/// (sigma 1.5), evaluated only where the window fits inside the image.
pub fn ssim(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    check_same_shape(a, b)?;
    let (w, h) = (a.width() as usize, a.height() as usize);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::Argument(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {w}x{h}"
        )));
    }
    let x = luma_plane(a);
    let y = luma_plane(b);
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(u, v)| u * v).collect();
    let k = gaussian_kernel();
    let [mx, my, sxx, syy, sxy] = [&x, &y, &xx, &yy, &xy].map(|p| filter_valid(p, w, h, &k));
    let c1 = (SSIM_K1 * PEAK).powi(2);
    let c2 = (SSIM_K2 * PEAK).powi(2);
    let total: f64 = (0..mx.len())
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cov = sxy[i] - ux * uy;
            ((2.0 * (ux * uy) + c1) * (2.0 * cov + c2))
                / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / mx.len() as f64)
}

/// Score of one interpolated frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub sequence: String,
    /// Index of the reconstructed frame within its sequence.
    pub frame_index: usize,
    /// 1-based position between the keyframes.
    pub skip_position: usize,
    pub psnr_db: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Summary {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Summary {
        if values.is_empty() {
            return Summary::default();
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Summary {
            mean,
            std: var.sqrt(),
        }
    }

    /// `mean±std` with the given number of decimals.
    pub fn display(&self, decimals: usize) -> String {
        format!("{:.*}±{:.*}", decimals, self.mean, decimals, self.std)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PositionSummary {
    pub position: usize,
    pub count: usize,
    pub psnr_db: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    /// Sorted by `(sequence, frame_index, skip_position)`.
    pub records: Vec<FrameRecord>,
    pub psnr: Summary,
    pub ssim: Summary,
    /// Mean scores per skip position, ascending.
    pub per_position: Vec<PositionSummary>,
}

/// Aggregates frame records. Records are put into a canonical order before
/// summing, so the result does not depend on the input order.
pub fn aggregate(mut records: Vec<FrameRecord>) -> Result<MetricReport> {
    if records.is_empty() {
        return Err(Error::Argument("no records to aggregate".into()));
    }
    records.sort_by(|a, b| {
        (&a.sequence, a.frame_index, a.skip_position)
            .cmp(&(&b.sequence, b.frame_index, b.skip_position))
            .then(a.psnr_db.total_cmp(&b.psnr_db))
            .then(a.ssim.total_cmp(&b.ssim))
    });
    let psnr: Vec<f64> = records.iter().map(|r| r.psnr_db).collect();
    let ssim: Vec<f64> = records.iter().map(|r| r.ssim).collect();
    let mut by_position: BTreeMap<usize, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for r in &records {
        let entry = by_position.entry(r.skip_position).or_default();
        entry.0.push(r.psnr_db);
        entry.1.push(r.ssim);
    }
    let per_position = by_position
        .into_iter()
        .map(|(position, (p, s))| PositionSummary {
            position,
            count: p.len(),
            psnr_db: Summary::of(&p).mean,
            ssim: Summary::of(&s).mean,
        })
        .collect();
    Ok(MetricReport {
        psnr: Summary::of(&psnr),
        ssim: Summary::of(&ssim),
        per_position,
        records,
    })
}

pub const REPORT_HEADER: &str = "sequence,frame_index,skip_position,psnr_db,ssim";

impl MetricReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        s.push_str(REPORT_HEADER);
        s.push('\n');
        for r in &self.records {
            let _ = writeln!(
                s,
                "{},{},{},{:.6},{:.6}",
                r.sequence, r.frame_index, r.skip_position, r.psnr_db, r.ssim
            );
        }
        let _ = writeln!(s, "# mean,{:.6},{:.6}", self.psnr.mean, self.ssim.mean);
        let _ = writeln!(s, "# std,{:.6},{:.6}", self.psnr.std, self.ssim.std);
        s
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        out.write_all(self.to_csv().as_bytes())
    }

    /// `position,psnr_db` rows for quality-versus-position plots.
    pub fn rope_csv(&self) -> String {
        let mut s = String::from("position,psnr_db\n");
        for p in &self.per_position {
            let _ = writeln!(s, "{},{:.6}", p.position, p.psnr_db);
        }
        s
    }

    /// Parses the per-frame rows of a report CSV and re-aggregates them.
    pub fn parse_csv(text: &str) -> Result<MetricReport> {
        let mut lines = text.lines();
        if lines.next() != Some(REPORT_HEADER) {
            return Err(Error::Format("missing report header".into()));
        }
        let mut records = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            let bad = || Error::Format(format!("report row {}: {line:?}", i + 1));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(bad());
            }
            records.push(FrameRecord {
                sequence: f[0].to_string(),
                frame_index: f[1].parse().map_err(|_| bad())?,
                skip_position: f[2].parse().map_err(|_| bad())?,
                psnr_db: f[3].parse().map_err(|_| bad())?,
                ssim: f[4].parse().map_err(|_| bad())?,
            });
        }
        aggregate(records)
    }
}
