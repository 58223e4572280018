//! Procedural handwritten-style digits, used when no IDX image files are at hand.
//!
//! Each class is a fixed set of pen strokes in the unit square. Every sample
//! jitters the stroke points, applies a random small affine warp, varies the
//! pen width and adds faint background noise before rasterizing.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use super::images::ImageDataset;
use crate::error::Result;
use crate::rng::{self, Rng};

type Stroke = Vec<(f64, f64)>;

fn arc(cx: f64, cy: f64, rx: f64, ry: f64, from_deg: f64, to_deg: f64) -> Stroke {
    let steps = 14;
    (0..=steps)
        .map(|i| {
            let a = (from_deg + (to_deg - from_deg) * i as f64 / steps as f64) * PI / 180.0;
            (cx + rx * libm::cos(a), cy + ry * libm::sin(a))
        })
        .collect()
}

/// Pen strokes for `digit` in image coordinates (x right, y down).
fn strokes(digit: usize) -> Vec<Stroke> {
    match digit {
        0 => vec![arc(0.5, 0.5, 0.25, 0.36, -80.0, 285.0), vec![(0.55, 0.14), (0.66, 0.08)]],
        1 => vec![vec![(0.28, 0.36), (0.56, 0.1), (0.56, 0.9)]],
        2 => {
            let mut s = arc(0.5, 0.32, 0.22, 0.2, 190.0, 380.0);
            s.extend([(0.3, 0.8)]);
            s.extend(arc(0.36, 0.8, 0.08, 0.07, 180.0, 540.0));
            s.extend([(0.78, 0.86)]);
            vec![s]
        }
        3 => vec![arc(0.47, 0.31, 0.21, 0.18, 200.0, 450.0), arc(0.47, 0.67, 0.25, 0.2, 270.0, 520.0)],
        4 => vec![vec![(0.62, 0.12), (0.22, 0.64), (0.82, 0.64)], vec![(0.62, 0.12), (0.62, 0.9)]],
        5 => {
            let mut s = vec![(0.76, 0.12), (0.34, 0.12), (0.31, 0.46)];
            s.extend(arc(0.5, 0.64, 0.25, 0.22, 215.0, 500.0));
            vec![s]
        }
        6 => {
            let mut s = vec![(0.68, 0.1), (0.42, 0.3)];
            s.extend(arc(0.5, 0.66, 0.22, 0.22, 200.0, 560.0));
            vec![s]
        }
        7 => vec![vec![(0.2, 0.12), (0.8, 0.12), (0.42, 0.9)], vec![(0.4, 0.5), (0.72, 0.5)]],
        8 => vec![arc(0.5, 0.3, 0.17, 0.17, 0.0, 360.0), arc(0.5, 0.68, 0.24, 0.21, 0.0, 360.0)],
        _ => {
            let mut s = arc(0.46, 0.32, 0.2, 0.2, 0.0, 360.0);
            s.extend([(0.66, 0.32), (0.6, 0.9)]);
            vec![s]
        }
    }
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 { 0.0 } else { (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0) };
    let (qx, qy) = (a.0 + t * dx - p.0, a.1 + t * dy - p.1);
    libm::sqrt(qx * qx + qy * qy)
}

fn render(digit: usize, side: usize, rng: &mut Rng) -> Vec<f64> {
    let jitter = Normal::new(0.0, 0.018).unwrap();
    let angle = rng.random_range(-0.2..0.2);
    let scale = rng.random_range(0.82..1.05);
    let shear = rng.random_range(-0.18..0.18);
    // writers drift toward the top left of the box
    let (tx, ty) = (rng.random_range(-0.12..0.0), rng.random_range(-0.12..0.0));
    let pen = rng.random_range(0.045..0.08);
    let (s, c) = (libm::sin(angle), libm::cos(angle));
    let warp = |(x, y): (f64, f64)| {
        let (x, y) = (x - 0.5 + shear * (y - 0.5), y - 0.5);
        (0.5 + scale * (c * x - s * y) + tx, 0.5 + scale * (s * x + c * y) + ty)
    };
    let segs: Vec<((f64, f64), (f64, f64))> = strokes(digit)
        .into_iter()
        .flat_map(|stroke| {
            let pts: Vec<(f64, f64)> = stroke
                .into_iter()
                .map(|(x, y)| warp((x + jitter.sample(rng), y + jitter.sample(rng))))
                .collect();
            pts.windows(2).map(|w| (w[0], w[1])).collect::<Vec<_>>()
        })
        .collect();
    let texel = 1.0 / side as f64;
    let mut img = vec![0.0; side * side];
    for i in 0..side {
        for j in 0..side {
            let p = ((j as f64 + 0.5) * texel, (i as f64 + 0.5) * texel);
            let d = segs.iter().map(|&(a, b)| segment_distance(p, a, b)).fold(f64::INFINITY, f64::min);
            let v = 1.0 - (d - pen * 0.5) / texel;
            let noise: f64 = rng.random_range(0.0..0.04);
            img[i * side + j] = (v.clamp(0.0, 1.0) + noise).min(1.0);
        }
    }
    img
}

/// `count` glyph images of `side × side` pixels with balanced, shuffled labels 0–9.
pub fn synth_digits(count: usize, side: usize, seed: u64, domain: &str) -> Result<ImageDataset> {
    let mut rng = rng::stream(seed, "glyphs");
    let order = rng::permutation(count, &mut rng);
    let labels: Vec<usize> = order.iter().map(|i| i % 10).collect();
    let mut pixels = Vec::with_capacity(count * side * side);
    for &l in &labels {
        pixels.extend(render(l, side, &mut rng));
    }
    ImageDataset::new(pixels, side, side, labels, domain)
}
