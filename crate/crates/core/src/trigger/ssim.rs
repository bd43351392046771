//! Windowed SSIM with its exact gradient.

use crate::error::{Error, Result};
use crate::tensor::{Image, Mask};

pub const SSIM_WINDOW: usize = 8;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// Top-left corners of the 8x8 windows whose centre pixel
/// `(row + 4, col + 4)` lies in `mask`.
pub fn ssim_windows(mask: &Mask) -> Vec<(usize, usize)> {
    let (h, w) = (mask.height(), mask.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Vec::new();
    }
    let half = SSIM_WINDOW / 2;
    let mut out = Vec::new();
    for r in 0..=h - SSIM_WINDOW {
        for c in 0..=w - SSIM_WINDOW {
            if mask.get(r + half, c + half) {
                out.push((r, c));
            }
        }
    }
    out
}

struct WindowStats {
    mx: f64,
    my: f64,
    vx: f64,
    vy: f64,
    cxy: f64,
}

fn window_stats(x: &[f64], y: &[f64], width: usize, channels: usize, ch: usize, r0: usize, c0: usize) -> WindowStats {
    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let (mut sx, mut sy) = (0.0, 0.0);
    for r in r0..r0 + SSIM_WINDOW {
        for c in c0..c0 + SSIM_WINDOW {
            let i = (r * width + c) * channels + ch;
            sx += x[i];
            sy += y[i];
        }
    }
    let (mx, my) = (sx / n, sy / n);
    let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
    for r in r0..r0 + SSIM_WINDOW {
        for c in c0..c0 + SSIM_WINDOW {
            let i = (r * width + c) * channels + ch;
            let (dx, dy) = (x[i] - mx, y[i] - my);
            vx += dx * dx;
            vy += dy * dy;
            cxy += dx * dy;
        }
    }
    WindowStats {
        mx,
        my,
        vx: vx / n,
        vy: vy / n,
        cxy: cxy / n,
    }
}

/// SSIM of one window of one channel, from population statistics.
pub fn window_ssim(x: &Image, y: &Image, ch: usize, row: usize, col: usize) -> f64 {
    let s = window_stats(x.as_slice(), y.as_slice(), x.width(), x.channels(), ch, row, col);
    ssim_value(&s)
}

fn ssim_value(s: &WindowStats) -> f64 {
    let a = 2.0 * s.mx * s.my + SSIM_C1;
    let b = 2.0 * s.cxy + SSIM_C2;
    let c = s.mx * s.mx + s.my * s.my + SSIM_C1;
    let d = s.vx + s.vy + SSIM_C2;
    a * b / (c * d)
}

/// Mean SSIM over the selected windows and all channels, and optionally its
/// gradient with respect to `x` (same layout as the image data).
pub(crate) fn masked_ssim(
    x: &[f64],
    y: &[f64],
    shape: (usize, usize, usize),
    mask: &Mask,
    want_grad: bool,
) -> Result<(f64, Option<Vec<f64>>)> {
    let (h, w, chs) = shape;
    if (mask.height(), mask.width()) != (h, w) || x.len() != h * w * chs || y.len() != x.len() {
        return Err(Error::Shape("SSIM inputs and mask differ in shape".into()));
    }
    let windows = ssim_windows(mask);
    if windows.is_empty() {
        return Err(Error::SsimWindow);
    }
    let count = (windows.len() * chs) as f64;
    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let mut total = 0.0;
    let mut grad = want_grad.then(|| vec![0.0; x.len()]);
    for &(r0, c0) in &windows {
        for ch in 0..chs {
            let s = window_stats(x, y, w, chs, ch, r0, c0);
            let a = 2.0 * s.mx * s.my + SSIM_C1;
            let b = 2.0 * s.cxy + SSIM_C2;
            let c = s.mx * s.mx + s.my * s.my + SSIM_C1;
            let d = s.vx + s.vy + SSIM_C2;
            let value = a * b / (c * d);
            total += value;
            if let Some(g) = grad.as_mut() {
                // dS/dx_p = (A' B + A B') / (C D) - S (C'/C + D'/D), with
                // A' = 2 my / n, B' = 2 (y_p - my) / n, C' = 2 mx / n,
                // D' = 2 (x_p - mx) / n.
                let cd = c * d;
                for r in r0..r0 + SSIM_WINDOW {
                    for col in c0..c0 + SSIM_WINDOW {
                        let i = (r * w + col) * chs + ch;
                        let da = 2.0 * s.my / n;
                        let db = 2.0 * (y[i] - s.my) / n;
                        let dc = 2.0 * s.mx / n;
                        let dd = 2.0 * (x[i] - s.mx) / n;
                        g[i] += ((da * b + a * db) / cd - value * (dc / c + dd / d)) / count;
                    }
                }
            }
        }
    }
    Ok((total / count, grad))
}

/// Mean SSIM over the 8x8 windows centred in `env_mask`, averaged across channels.
pub fn env_consistency_score(gen: &Image, clean: &Image, env_mask: &Mask) -> Result<f64> {
    if gen.shape() != clean.shape() {
        return Err(Error::Shape("generated and clean images differ in shape".into()));
    }
    Ok(masked_ssim(gen.as_slice(), clean.as_slice(), gen.shape(), env_mask, false)?.0)
}

/// Mean SSIM over every window of the image.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    env_consistency_score(a, b, &Mask::full(a.height(), a.width()))
}
