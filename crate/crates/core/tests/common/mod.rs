//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lanetrap_core::scene::{GeneratorConfig, MISSING};
use lanetrap_core::{Image, LaneLabel};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> Image {
    Image::new(h, w, c, (0..h * w * c).map(|_| rng.random::<f64>()).collect()).unwrap()
}

/// Image with values kept away from the [0, 1] bounds, so small
/// perturbations stay valid.
pub fn interior_image(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> Image {
    Image::new(h, w, c, (0..h * w * c).map(|_| rng.random_range(0.05..0.95)).collect()).unwrap()
}

/// Nearly straight random lanes on the default 96x160 anchor grid. Each lane
/// follows `c0 + s*d + k*d^2` with `d` the distance above the bottom row;
/// points outside the image are MISSING and some lanes are absent.
pub fn random_label(rng: &mut ChaCha8Rng, lanes: usize, max_curvature: f64) -> LaneLabel {
    let cfg = GeneratorConfig::default();
    let anchors = cfg.row_anchors();
    let bottom = *anchors.first().unwrap() as f64;
    let width = cfg.width;
    let mut label = LaneLabel::empty(anchors.clone(), lanes, width);
    for i in 0..lanes {
        if rng.random::<f64>() < 0.2 {
            continue;
        }
        let c0 = rng.random_range(20.0..140.0);
        let s = rng.random_range(-0.8..0.8);
        let k = rng.random_range(-max_curvature..=max_curvature);
        let cols: Vec<f64> = anchors
            .iter()
            .map(|&r| {
                let d = bottom - r as f64;
                let c = c0 + s * d + k * d * d;
                if (0.0..width as f64).contains(&c) {
                    c
                } else {
                    MISSING
                }
            })
            .collect();
        if cols.iter().filter(|c| **c != MISSING).count() >= 2 {
            label.lanes[i] = cols;
            label.exist[i] = true;
        }
    }
    label.validate().unwrap();
    label
}

/// Central finite difference of `f` at `x` along one coordinate.
pub fn central_difference(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + 1e-8)
}
