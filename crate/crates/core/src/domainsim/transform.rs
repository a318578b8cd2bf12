//! Domain-shift transforms.
//!
//! Raster transforms (background overlay, scale-and-recenter, channel
//! stacking) operate on channel-major images with values in `[0, 1]`. The
//! low-dimensional transforms (rotation, mean shift) operate on plain
//! feature vectors. Label noise applies to any labeled dataset.

use std::f64::consts::PI;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::dataset::{DomainDataset, RasterShape};
use crate::error::{Error, Result};
use crate::rng::{rng_from, SimRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TransformSpec {
    BackgroundOverlay {
        amplitude: f64,
        #[serde(default)]
        seed: u64,
    },
    ScaleRecenter {
        inner: usize,
    },
    ChannelStack {
        shift_px: usize,
    },
    /// Givens rotation by `angle` radians in every coordinate plane
    /// `(2k, 2k+1)`, followed by uniform scaling.
    Rotate {
        angle: f64,
        #[serde(default = "unit_scale")]
        scale: f64,
    },
    /// Translate every sample by `magnitude` along a seeded random unit
    /// direction.
    MeanShift {
        magnitude: f64,
        #[serde(default)]
        seed: u64,
    },
    /// Reassign `floor(fraction · n)` labels to uniformly random other classes.
    LabelNoise {
        fraction: f64,
        #[serde(default)]
        seed: u64,
    },
}

fn unit_scale() -> f64 {
    1.0
}

impl TransformSpec {
    pub fn apply(&self, d: &DomainDataset) -> Result<DomainDataset> {
        match *self {
            TransformSpec::BackgroundOverlay { amplitude, seed } => {
                apply_background_overlay(d, amplitude, seed)
            }
            TransformSpec::ScaleRecenter { inner } => apply_scale_recenter(d, inner),
            TransformSpec::ChannelStack { shift_px } => apply_channel_stack(d, shift_px),
            TransformSpec::Rotate { angle, scale } => apply_rotate(d, angle, scale),
            TransformSpec::MeanShift { magnitude, seed } => apply_mean_shift(d, magnitude, seed),
            TransformSpec::LabelNoise { fraction, seed } => apply_label_noise(d, fraction, seed),
        }
    }
}

pub fn apply_chain(d: DomainDataset, chain: &[TransformSpec]) -> Result<DomainDataset> {
    chain.iter().try_fold(d, |acc, t| t.apply(&acc))
}

fn require_raster(d: &DomainDataset, op: &str) -> Result<RasterShape> {
    d.raster().ok_or_else(|| {
        Error::Type(format!("{op} needs a raster dataset, {} is not one", d.name()))
    })
}

fn require_vectors(d: &DomainDataset, op: &str) -> Result<()> {
    if d.raster().is_some() {
        return Err(Error::Type(format!(
            "{op} applies to low-dimensional feature vectors, {} is a raster",
            d.name()
        )));
    }
    Ok(())
}

/// Smooth texture in `[0, 1]`: three random low-frequency sinusoid gratings,
/// summed and mapped affinely from `[-3, 3]`.
fn grating_texture(rng: &mut SimRng, height: usize, width: usize) -> Vec<f32> {
    let gratings: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            let freq = rng.random_range(0.5..2.0);
            let theta = rng.random_range(0.0..2.0 * PI);
            let phase = rng.random_range(0.0..2.0 * PI);
            (freq * theta.cos(), freq * theta.sin(), phase)
        })
        .collect();
    let mut out = Vec::with_capacity(height * width);
    for y in 0..height {
        for x in 0..width {
            let (u, v) = (x as f64 / width as f64, y as f64 / height as f64);
            let s: f64 = gratings
                .iter()
                .map(|(fx, fy, ph)| (2.0 * PI * (fx * u + fy * v) + ph).sin())
                .sum();
            out.push(((s + 3.0) / 6.0) as f32);
        }
    }
    out
}

/// `out = clamp(max(glyph, texture · amplitude), 0, 1)` with an independent
/// texture per sample and channel.
pub fn apply_background_overlay(d: &DomainDataset, amplitude: f64, seed: u64) -> Result<DomainDataset> {
    let shape = require_raster(d, "background overlay")?;
    if !(amplitude > 0.0 && amplitude <= 1.0) {
        return Err(Error::Parameter(format!(
            "background amplitude must lie in (0, 1], got {amplitude}"
        )));
    }
    let mut rng = rng_from(seed, &[0xBAC6]);
    let amp = amplitude as f32;
    let plane = shape.height * shape.width;
    let mut out = Vec::with_capacity(d.features().len());
    for i in 0..d.len() {
        let sample = d.sample(i);
        for c in 0..shape.channels {
            let tex = grating_texture(&mut rng, shape.height, shape.width);
            for (p, t) in sample[c * plane..(c + 1) * plane].iter().zip(&tex) {
                out.push(p.max(t * amp).clamp(0.0, 1.0));
            }
        }
    }
    d.map_features(
        out,
        d.feature_dim(),
        Some(shape),
        format!("background_overlay(amplitude={amplitude}, seed={seed})"),
    )
}

/// Bilinear resampling of one `n×n` plane to `m×m` with pixel-center
/// alignment; `m ≤ n` keeps every sample position inside the source grid.
fn bilinear_resize(src: &[f32], n: usize, m: usize) -> Vec<f32> {
    let scale = n as f64 / m as f64;
    let coords: Vec<(usize, usize, f64)> = (0..m)
        .map(|i| {
            let u = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (n - 1) as f64);
            let i0 = u.floor() as usize;
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, u - i0 as f64)
        })
        .collect();
    let mut out = Vec::with_capacity(m * m);
    for &(y0, y1, fy) in &coords {
        for &(x0, x1, fx) in &coords {
            let at = |y: usize, x: usize| src[y * n + x] as f64;
            let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
            let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
            out.push((top * (1.0 - fy) + bottom * fy) as f32);
        }
    }
    out
}

/// Downscale every channel to `inner×inner` and paste it centered on a zero
/// canvas of the original size.
pub fn apply_scale_recenter(d: &DomainDataset, inner: usize) -> Result<DomainDataset> {
    let shape = require_raster(d, "scale_recenter")?;
    if shape.height != shape.width {
        return Err(Error::Parameter(format!(
            "scale_recenter needs a square canvas, got {}x{}",
            shape.height, shape.width
        )));
    }
    let canvas = shape.width;
    if inner == 0 || inner > canvas {
        return Err(Error::Parameter(format!(
            "inner size {inner} must lie in [1, canvas {canvas}]"
        )));
    }
    let offset = (canvas - inner) / 2;
    let plane = canvas * canvas;
    let mut out = vec![0.0f32; d.features().len()];
    for i in 0..d.len() {
        let sample = d.sample(i);
        let dst = &mut out[i * d.feature_dim()..(i + 1) * d.feature_dim()];
        for c in 0..shape.channels {
            let small = bilinear_resize(&sample[c * plane..(c + 1) * plane], canvas, inner);
            for y in 0..inner {
                for x in 0..inner {
                    dst[shape.index(c, y + offset, x + offset)] = small[y * inner + x];
                }
            }
        }
    }
    d.map_features(out, d.feature_dim(), Some(shape), format!("scale_recenter(inner={inner})"))
}

/// Grayscale → RGB with the red channel shifted `+shift_px` along x, blue
/// shifted `−shift_px`, green unshifted. Vacated pixels are zero.
pub fn apply_channel_stack(d: &DomainDataset, shift_px: usize) -> Result<DomainDataset> {
    let shape = require_raster(d, "channel_stack")?;
    if shape.channels != 1 {
        return Err(Error::Type(format!(
            "channel_stack needs a single-channel raster, {} has {} channels",
            d.name(),
            shape.channels
        )));
    }
    if shift_px == 0 || 2 * shift_px >= shape.width {
        return Err(Error::Parameter(format!(
            "shift {shift_px} must lie in [1, width/2) for width {}",
            shape.width
        )));
    }
    let out_shape = RasterShape {
        channels: 3,
        ..shape
    };
    let s = shift_px as isize;
    let (h, w) = (shape.height, shape.width);
    let mut out = Vec::with_capacity(d.len() * out_shape.len());
    for i in 0..d.len() {
        let src = d.sample(i);
        for offset in [s, 0, -s] {
            for y in 0..h {
                for x in 0..w {
                    let sx = x as isize - offset;
                    out.push(if (0..w as isize).contains(&sx) {
                        src[y * w + sx as usize]
                    } else {
                        0.0
                    });
                }
            }
        }
    }
    d.map_features(
        out,
        out_shape.len(),
        Some(out_shape),
        format!("channel_stack(shift_px={shift_px})"),
    )
}

pub fn apply_rotate(d: &DomainDataset, angle: f64, scale: f64) -> Result<DomainDataset> {
    require_vectors(d, "rotate")?;
    if !angle.is_finite() {
        return Err(Error::Parameter(format!("rotation angle must be finite, got {angle}")));
    }
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::Parameter(format!("rotation scale must be positive, got {scale}")));
    }
    let (sin, cos) = angle.sin_cos();
    let dim = d.feature_dim();
    let mut out = Vec::with_capacity(d.features().len());
    for i in 0..d.len() {
        let x = d.sample(i);
        let mut k = 0;
        while k < dim {
            if k + 1 < dim {
                let (a, b) = (x[k] as f64, x[k + 1] as f64);
                out.push((scale * (cos * a - sin * b)) as f32);
                out.push((scale * (sin * a + cos * b)) as f32);
                k += 2;
            } else {
                out.push((scale * x[k] as f64) as f32);
                k += 1;
            }
        }
    }
    d.map_features(out, dim, None, format!("rotate(angle={angle}, scale={scale})"))
}

pub fn apply_mean_shift(d: &DomainDataset, magnitude: f64, seed: u64) -> Result<DomainDataset> {
    require_vectors(d, "mean_shift")?;
    if !(magnitude.is_finite() && magnitude >= 0.0) {
        return Err(Error::Parameter(format!(
            "mean shift magnitude must be finite and nonnegative, got {magnitude}"
        )));
    }
    let dim = d.feature_dim();
    let mut rng = rng_from(seed, &[0x3EA5]);
    let raw: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    let shift: Vec<f64> = raw.iter().map(|v| magnitude * v / norm).collect();
    let out = d
        .features()
        .chunks_exact(dim)
        .flat_map(|x| x.iter().zip(&shift).map(|(a, s)| (*a as f64 + s) as f32))
        .collect();
    d.map_features(out, dim, None, format!("mean_shift(magnitude={magnitude}, seed={seed})"))
}

pub fn apply_label_noise(d: &DomainDataset, fraction: f64, seed: u64) -> Result<DomainDataset> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Parameter(format!(
            "label noise fraction must lie in [0, 1], got {fraction}"
        )));
    }
    let labels = d
        .labels()
        .ok_or_else(|| Error::Type(format!("label_noise needs labels, {} has none", d.name())))?;
    let n = labels.len();
    let flips = (fraction * n as f64).floor() as usize;
    let c = d.num_classes();
    let mut rng = rng_from(seed, &[0x1AB3]);
    let mut noisy = labels.to_vec();
    for i in sample_indices(&mut rng, n, flips) {
        let other = rng.random_range(0..c - 1);
        noisy[i] = if other >= labels[i] { other + 1 } else { other };
    }
    d.map_labels(noisy, format!("label_noise(fraction={fraction}, seed={seed})"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raster(channels: usize, side: usize, n: usize, seed: u64) -> DomainDataset {
        let mut rng = rng_from(seed, &[]);
        let shape = RasterShape {
            channels,
            height: side,
            width: side,
        };
        let feats: Vec<f32> = (0..n * shape.len())
            .map(|_| if rng.random_bool(0.3) { rng.random_range(0.0..1.0) } else { 0.0 })
            .collect();
        let labels = (0..n).map(|i| i % 2).collect();
        DomainDataset::new("r", feats, shape.len(), Some(labels), 2)
            .unwrap()
            .with_raster(shape)
            .unwrap()
    }

    fn vectors() -> DomainDataset {
        let feats: Vec<f32> = (0..40).map(|i| (i as f32 * 0.37).sin()).collect();
        let labels = (0..8).map(|i| i % 4).collect();
        DomainDataset::new("v", feats, 5, Some(labels), 4).unwrap()
    }

    /// Independent bilinear reference: maps output pixel centers back into
    /// the source grid and interpolates the four neighbours.
    fn reference_downscale(src: &[f32], n: usize, m: usize) -> Vec<f64> {
        let mut out = vec![0.0; m * m];
        for oy in 0..m {
            for ox in 0..m {
                let sy = (oy as f64 + 0.5) * n as f64 / m as f64 - 0.5;
                let sx = (ox as f64 + 0.5) * n as f64 / m as f64 - 0.5;
                let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
                let (dy, dx) = (sy - y0 as f64, sx - x0 as f64);
                let mut acc = 0.0;
                for (yy, wy) in [(y0, 1.0 - dy), (y0 + 1, dy)] {
                    for (xx, wx) in [(x0, 1.0 - dx), (x0 + 1, dx)] {
                        if wy * wx > 0.0 {
                            acc += wy * wx * src[yy * n + xx] as f64;
                        }
                    }
                }
                out[oy * m + ox] = acc;
            }
        }
        out
    }

    #[test]
    fn scale_recenter_zero_border() {
        let d = raster(3, 12, 5, 1);
        let out = apply_scale_recenter(&d, 8).unwrap();
        let shape = out.raster().unwrap();
        for i in 0..out.len() {
            let s = out.sample(i);
            for c in 0..3 {
                for y in 0..12 {
                    for x in 0..12 {
                        let inside = (2..10).contains(&y) && (2..10).contains(&x);
                        if !inside {
                            assert_eq!(s[shape.index(c, y, x)], 0.0);
                        }
                    }
                }
            }
        }
        assert_eq!(out.labels(), d.labels());
    }

    #[test]
    fn scale_recenter_full_size_is_identity() {
        let d = raster(1, 10, 4, 2);
        let out = apply_scale_recenter(&d, 10).unwrap();
        for (a, b) in out.features().iter().zip(d.features()) {
            assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn scale_recenter_rejects_oversized_inner() {
        let d = raster(1, 10, 2, 3);
        assert!(matches!(apply_scale_recenter(&d, 11), Err(Error::Parameter(_))));
        assert!(matches!(apply_scale_recenter(&vectors(), 2), Err(Error::Type(_))));
    }

    #[test]
    fn scale_recenter_matches_reference_and_never_adds_mass() {
        let d = raster(1, 12, 100, 4);
        for inner in [3, 5, 8, 11] {
            let out = apply_scale_recenter(&d, inner).unwrap();
            let off = (12 - inner) / 2;
            for i in 0..d.len() {
                let want = reference_downscale(d.sample(i), 12, inner);
                let got = out.sample(i);
                for y in 0..inner {
                    for x in 0..inner {
                        let g = got[(y + off) * 12 + x + off] as f64;
                        assert!((g - want[y * inner + x]).abs() < 1e-6);
                    }
                }
                let before: f64 = d.sample(i).iter().map(|&v| v as f64).sum();
                let after: f64 = got.iter().map(|&v| v as f64).sum();
                assert!(after <= before + 1e-5, "inner {inner}: {after} > {before}");
            }
        }
    }

    #[test]
    fn channel_stack_translates() {
        let d = raster(1, 12, 6, 5);
        let s = 2;
        let out = apply_channel_stack(&d, s).unwrap();
        assert_eq!(out.feature_dim(), 3 * d.feature_dim());
        let plane = 144;
        for i in 0..d.len() {
            let src = d.sample(i);
            let o = out.sample(i);
            let (r, g, b) = (&o[..plane], &o[plane..2 * plane], &o[2 * plane..]);
            assert_eq!(g, src);
            for y in 0..12 {
                for x in 0..12 {
                    // shift back and compare where both sides are defined
                    if x + s < 12 {
                        assert_eq!(r[y * 12 + x + s], src[y * 12 + x]);
                        assert_eq!(b[y * 12 + x], src[y * 12 + x + s]);
                    }
                    if x < s {
                        assert_eq!(r[y * 12 + x], 0.0);
                        assert_eq!(b[y * 12 + 11 - x], 0.0);
                    }
                }
            }
        }
        assert_eq!(out.labels(), d.labels());
    }

    #[test]
    fn channel_stack_rejects_color_and_bad_shift() {
        assert!(matches!(apply_channel_stack(&raster(3, 12, 2, 6), 1), Err(Error::Type(_))));
        assert!(matches!(apply_channel_stack(&raster(1, 12, 2, 6), 6), Err(Error::Parameter(_))));
        assert!(matches!(apply_channel_stack(&raster(1, 12, 2, 6), 0), Err(Error::Parameter(_))));
    }

    #[test]
    fn overlay_small_amplitude_is_near_identity() {
        let d = raster(3, 12, 4, 7);
        let amp = 1e-3;
        let out = apply_background_overlay(&d, amp, 9).unwrap();
        for (a, b) in out.features().iter().zip(d.features()) {
            assert!(*a >= *b && (a - b) as f64 <= amp + 1e-9);
        }
        assert_eq!(out.labels(), d.labels());
    }

    #[test]
    fn overlay_full_amplitude_fills_background() {
        let d = raster(1, 16, 50, 8);
        let out = apply_background_overlay(&d, 1.0, 10).unwrap();
        let (mut bg, mut positive) = (0usize, 0usize);
        for (a, b) in out.features().iter().zip(d.features()) {
            if *b == 0.0 {
                bg += 1;
                if *a > 0.0 {
                    positive += 1;
                }
            }
        }
        assert!(positive as f64 >= 0.99 * bg as f64);
        assert!(out.features().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn overlay_rejects_bad_amplitude() {
        let d = raster(1, 8, 2, 8);
        assert!(apply_background_overlay(&d, 0.0, 1).is_err());
        assert!(apply_background_overlay(&d, 1.5, 1).is_err());
        assert!(matches!(apply_background_overlay(&vectors(), 0.5, 1), Err(Error::Type(_))));
    }

    #[test]
    fn transforms_are_deterministic() {
        let d = raster(1, 12, 4, 11);
        let spec = TransformSpec::BackgroundOverlay {
            amplitude: 0.7,
            seed: 3,
        };
        assert_eq!(spec.apply(&d).unwrap(), spec.apply(&d).unwrap());
        let v = vectors();
        let shift = TransformSpec::MeanShift {
            magnitude: 2.0,
            seed: 5,
        };
        assert_eq!(shift.apply(&v).unwrap(), shift.apply(&v).unwrap());
    }

    #[test]
    fn rotation_preserves_norm_and_rejects_zero_scale() {
        let v = vectors();
        let out = apply_rotate(&v, 0.8, 1.0).unwrap();
        for i in 0..v.len() {
            let n0: f64 = v.sample(i).iter().map(|&a| (a as f64).powi(2)).sum();
            let n1: f64 = out.sample(i).iter().map(|&a| (a as f64).powi(2)).sum();
            assert!((n0 - n1).abs() < 1e-5);
        }
        assert!(matches!(apply_rotate(&v, 0.3, 0.0), Err(Error::Parameter(_))));
    }

    #[test]
    fn zero_shift_is_bit_identical() {
        let v = vectors();
        assert_eq!(apply_mean_shift(&v, 0.0, 4).unwrap().features(), v.features());
        assert_eq!(apply_rotate(&v, 0.0, 1.0).unwrap().features(), v.features());
    }

    #[test]
    fn label_noise_flips_exact_count() {
        let feats = vec![0.0f32; 100 * 2];
        let labels: Vec<usize> = (0..100).map(|i| i % 5).collect();
        let d = DomainDataset::new("n", feats, 2, Some(labels.clone()), 5).unwrap();
        let out = apply_label_noise(&d, 0.37, 12).unwrap();
        let flipped = out.labels().unwrap().iter().zip(&labels).filter(|(a, b)| a != b).count();
        assert_eq!(flipped, 37);
        assert_eq!(out.features(), d.features());
    }

    #[test]
    fn spec_parses_from_toml() {
        #[derive(Deserialize)]
        struct Holder {
            t: Vec<TransformSpec>,
        }
        let h: Holder = toml::from_str(
            r#"t = [ { kind = "rotate", angle = 0.5 }, { kind = "label_noise", fraction = 0.2, seed = 4 } ]"#,
        )
        .unwrap();
        assert_eq!(h.t[0], TransformSpec::Rotate { angle: 0.5, scale: 1.0 });
        let bad: std::result::Result<Holder, _> =
            toml::from_str(r#"t = [ { kind = "rotate", angel = 0.5 } ]"#);
        assert!(bad.is_err());
    }
}
