//! Brute-force reference implementations for tests.
//!
//! Nothing here shares code with the production paths it checks: the event
//! oracle samples the signal densely instead of solving for crossings, and
//! the SSIM oracle evaluates every window directly with a 2-D kernel instead
//! of separable filtering.

use image::RgbImage;

use crate::events::Polarity;

/// Detects threshold crossings of a piecewise-linear signal by evaluating it
/// at `samples_per_interval` evenly spaced points inside every knot interval.
///
/// Returns `(sample time, polarity, sampling step)` per detected event, where
/// the time is the first sample at or past the crossing.
pub fn sampled_crossings(
    knots: &[(u64, f64)],
    c_pos: f64,
    c_neg: f64,
    samples_per_interval: u32,
) -> Vec<(f64, Polarity, f64)> {
    let mut out = Vec::new();
    let Some(&(_, start)) = knots.first() else {
        return out;
    };
    let mut reference = start;
    for pair in knots.windows(2) {
        let ((ta, la), (tb, lb)) = (pair[0], pair[1]);
        let step = (tb - ta) as f64 / f64::from(samples_per_interval);
        for k in 1..=samples_per_interval {
            let u = f64::from(k) / f64::from(samples_per_interval);
            let t = ta as f64 + step * f64::from(k);
            let level = la + (lb - la) * u;
            while level >= reference + c_pos {
                reference += c_pos;
                out.push((t, Polarity::Positive, step));
            }
            while level <= reference - c_neg {
                reference -= c_neg;
                out.push((t, Polarity::Negative, step));
            }
        }
    }
    out
}

fn gray(image: &RgbImage) -> Vec<Vec<f64>> {
    (0..image.height())
        .map(|y| {
            (0..image.width())
                .map(|x| {
                    let p = image.get_pixel(x, y);
                    0.299 * f64::from(p[0]) + 0.587 * f64::from(p[1]) + 0.114 * f64::from(p[2])
                })
                .collect()
        })
        .collect()
}

/// Mean SSIM over all fully contained 11x11 windows, Gaussian sigma 1.5.
pub fn ssim_direct(a: &RgbImage, b: &RgbImage) -> f64 {
    const N: usize = 11;
    let sigma = 1.5f64;
    let mut kernel = [[0.0f64; N]; N];
    let mut total = 0.0;
    for (i, row) in kernel.iter_mut().enumerate() {
        for (j, w) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *w = (-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp();
            total += *w;
        }
    }
    let c1 = (0.01f64 * 255.0).powi(2);
    let c2 = (0.03f64 * 255.0).powi(2);
    let (ga, gb) = (gray(a), gray(b));
    let (h, w) = (ga.len(), ga[0].len());
    let mut sum = 0.0;
    let mut count = 0usize;
    for top in 0..=h - N {
        for left in 0..=w - N {
            let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..N {
                for j in 0..N {
                    let k = kernel[i][j] / total;
                    let x = ga[top + i][left + j];
                    let y = gb[top + i][left + j];
                    mx += k * x;
                    my += k * y;
                    sxx += k * x * x;
                    syy += k * y * y;
                    sxy += k * x * y;
                }
            }
            let vx = sxx - mx * mx;
            let vy = syy - my * my;
            let cov = sxy - mx * my;
            sum += ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    sum / count as f64
}
