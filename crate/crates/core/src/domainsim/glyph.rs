//! Procedural seven-segment glyph rasters.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::dataset::{DomainDataset, RasterShape};
use crate::error::{Error, Result};
use crate::rng::rng_from;

pub const MIN_CANVAS: usize = 8;

/// Segment endpoints in a unit box (x right, y down):
/// top, upper-right, lower-right, bottom, lower-left, upper-left, middle.
const SEGMENTS: [((f64, f64), (f64, f64)); 7] = [
    ((0.0, 0.0), (1.0, 0.0)),
    ((1.0, 0.0), (1.0, 0.5)),
    ((1.0, 0.5), (1.0, 1.0)),
    ((0.0, 1.0), (1.0, 1.0)),
    ((0.0, 0.5), (0.0, 1.0)),
    ((0.0, 0.0), (0.0, 0.5)),
    ((0.0, 0.5), (1.0, 0.5)),
];

/// Active segments per digit, bit k = `SEGMENTS[k]`.
const DIGITS: [u8; 10] = [
    0b011_1111, 0b000_0110, 0b101_1011, 0b100_1111, 0b110_0110,
    0b110_1101, 0b111_1101, 0b000_0111, 0b111_1111, 0b110_1111,
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlyphStyle {
    /// Maximum translation of the glyph box in pixels.
    pub jitter_px: f64,
    /// Stroke half-width as a fraction of the canvas side.
    pub stroke: f64,
    /// Std of additive pixel noise before clamping.
    pub noise_std: f64,
}

impl Default for GlyphStyle {
    fn default() -> Self {
        Self {
            jitter_px: 1.0,
            stroke: 0.07,
            noise_std: 0.05,
        }
    }
}

fn dist_to_segment(px: f64, py: f64, a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = (((px - a.0) * dx + (py - a.1) * dy) / len2).clamp(0.0, 1.0);
    let (cx, cy) = (a.0 + t * dx, a.1 + t * dy);
    ((px - cx).powi(2) + (py - cy).powi(2)).sqrt()
}

/// Renders one glyph into a `canvas × canvas` intensity plane with a one
/// pixel antialiased edge.
fn render(mask: u8, canvas: usize, box_x: (f64, f64), box_y: (f64, f64), half_width: f64) -> Vec<f64> {
    let segs: Vec<_> = SEGMENTS
        .iter()
        .enumerate()
        .filter(|(k, _)| mask >> k & 1 == 1)
        .map(|(_, &(a, b))| {
            let map = |p: (f64, f64)| {
                (box_x.0 + p.0 * (box_x.1 - box_x.0), box_y.0 + p.1 * (box_y.1 - box_y.0))
            };
            (map(a), map(b))
        })
        .collect();
    let mut out = Vec::with_capacity(canvas * canvas);
    for y in 0..canvas {
        for x in 0..canvas {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let d = segs
                .iter()
                .map(|&(a, b)| dist_to_segment(px, py, a, b))
                .fold(f64::INFINITY, f64::min);
            out.push((half_width + 0.5 - d).clamp(0.0, 1.0));
        }
    }
    out
}

/// `C ≤ 10` classes of digit-like glyphs with per-sample translation, stroke
/// intensity and additive noise. Three-channel output tints each sample with
/// a random color. Samples are in class-major order.
pub fn gen_glyph_domain(
    name: &str,
    num_classes: usize,
    samples_per_class: usize,
    canvas: usize,
    channels: usize,
    style: GlyphStyle,
    seed: u64,
) -> Result<DomainDataset> {
    if canvas < MIN_CANVAS {
        return Err(Error::Parameter(format!(
            "canvas {canvas} is too small to render distinct glyphs (minimum {MIN_CANVAS})"
        )));
    }
    if !(2..=DIGITS.len()).contains(&num_classes) {
        return Err(Error::Parameter(format!(
            "glyph domains support 2 to {} classes, got {num_classes}",
            DIGITS.len()
        )));
    }
    if channels != 1 && channels != 3 {
        return Err(Error::Parameter(format!("channels must be 1 or 3, got {channels}")));
    }
    if samples_per_class == 0 {
        return Err(Error::Parameter("samples per class must be positive".into()));
    }
    let shape = RasterShape {
        channels,
        height: canvas,
        width: canvas,
    };
    let noise = Normal::new(0.0, style.noise_std.max(0.0))
        .map_err(|e| Error::Parameter(format!("noise std: {e}")))?;
    let mut rng = rng_from(seed, &[0x61F4]);
    let side = canvas as f64;
    let half_width = style.stroke * side;
    let mut features = Vec::with_capacity(num_classes * samples_per_class * shape.len());
    let mut labels = Vec::with_capacity(num_classes * samples_per_class);
    for (c, &mask) in DIGITS.iter().enumerate().take(num_classes) {
        for _ in 0..samples_per_class {
            let jx = rng.random_range(-style.jitter_px..=style.jitter_px);
            let jy = rng.random_range(-style.jitter_px..=style.jitter_px);
            let box_x = (0.3 * side + jx, 0.7 * side + jx);
            let box_y = (0.18 * side + jy, 0.82 * side + jy);
            let intensity = rng.random_range(0.7..=1.0);
            let plane = render(mask, canvas, box_x, box_y, half_width);
            let tint: Vec<f64> = if channels == 3 {
                (0..3).map(|_| rng.random_range(0.4..=1.0)).collect()
            } else {
                vec![1.0]
            };
            for t in &tint {
                for &p in &plane {
                    let v = p * intensity * t + if p > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                    features.push(v.clamp(0.0, 1.0) as f32);
                }
            }
            labels.push(c);
        }
    }
    DomainDataset::new(name, features, shape.len(), Some(labels), num_classes)?
        .with_raster(shape)
        .map(|d| {
            d.with_provenance(format!(
                "glyph(classes={num_classes}, per_class={samples_per_class}, canvas={canvas}, channels={channels}, seed={seed})"
            ))
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_bounded() {
        let a = gen_glyph_domain("g", 4, 10, 12, 3, GlyphStyle::default(), 5).unwrap();
        let b = gen_glyph_domain("g", 4, 10, 12, 3, GlyphStyle::default(), 5).unwrap();
        assert_eq!(a, b);
        assert!(a.features().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(a.feature_dim(), 3 * 144);
    }

    #[test]
    fn class_means_differ() {
        let d = gen_glyph_domain("g", 10, 20, 12, 1, GlyphStyle::default(), 1).unwrap();
        let labels = d.labels().unwrap();
        let dim = d.feature_dim();
        let mut means = vec![vec![0.0f64; dim]; 10];
        for i in 0..d.len() {
            for (m, &v) in means[labels[i]].iter_mut().zip(d.sample(i)) {
                *m += v as f64 / 20.0;
            }
        }
        for i in 0..10 {
            for j in i + 1..10 {
                let l1: f64 = means[i].iter().zip(&means[j]).map(|(a, b)| (a - b).abs()).sum();
                assert!(l1 > 0.0, "classes {i} and {j}");
            }
        }
    }

    #[test]
    fn small_canvas_rejected() {
        assert!(matches!(
            gen_glyph_domain("g", 4, 10, 7, 1, GlyphStyle::default(), 0),
            Err(Error::Parameter(_))
        ));
        assert!(gen_glyph_domain("g", 11, 10, 12, 1, GlyphStyle::default(), 0).is_err());
    }
}
