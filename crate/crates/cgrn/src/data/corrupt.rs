//! Scene synthesis: composite a glyph over a procedural background and
//! degrade it. Everything is drawn from a per-sample seed, so generation
//! is order-independent and reproducible.

use crate::data::dataset::{shuffle_fonts, Sample, TargetAtlas};
use crate::data::font::SynthFont;
use crate::data::ppm::Image;
use crate::data::render::{compose, render_coverage, CANONICAL_INK};
use crate::error::{Error, Result};
use crate::rng::{mix, Rng};

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum BgMode {
    Flat,
    Gradient,
    Noise,
    Patch,
}

/// Degradation ranges. Every per-sample draw is uniform within its range;
/// a range of zero disables the corresponding stage entirely, so the
/// all-zero spec reproduces the canonical rendering bit-for-bit.
#[derive(Clone, Debug)]
pub struct CorruptionSpec {
    /// Background modes to draw from; empty means plain white.
    pub bg_modes: Vec<BgMode>,
    pub blur_radius: f64,
    pub brightness: f64,
    pub contrast: f64,
    pub rotation_deg: f64,
    pub translation_px: f64,
    pub occlusion_prob: f64,
    /// Minimum |foreground − background| mean luminance difference.
    pub contrast_floor: f64,
}

impl CorruptionSpec {
    /// No-op corruption: white background, canonical ink, zero jitter.
    pub fn identity() -> Self {
        CorruptionSpec {
            bg_modes: Vec::new(),
            blur_radius: 0.0,
            brightness: 0.0,
            contrast: 0.0,
            rotation_deg: 0.0,
            translation_px: 0.0,
            occlusion_prob: 0.0,
            contrast_floor: 0.0,
        }
    }

    /// The default scene-degradation ranges.
    pub fn default_ranges() -> Self {
        CorruptionSpec {
            bg_modes: vec![BgMode::Flat, BgMode::Gradient, BgMode::Noise, BgMode::Patch],
            blur_radius: 1.0,
            brightness: 0.12,
            contrast: 0.25,
            rotation_deg: 10.0,
            translation_px: 4.0,
            occlusion_prob: 0.2,
            contrast_floor: 0.1,
        }
    }
}

fn draw(rng: &mut Rng, half_range: f64) -> f64 {
    if half_range == 0.0 {
        0.0
    } else {
        (rng.uniform() * 2.0 - 1.0) * half_range
    }
}

fn background(rng: &mut Rng, mode: BgMode, size: usize) -> Vec<f64> {
    let plane = size * size;
    let mut bg = vec![0.0; 3 * plane];
    match mode {
        BgMode::Flat => {
            let level = 0.55 + rng.uniform() * 0.45;
            for c in 0..3 {
                let v = (level + draw(rng, 0.06)).clamp(0.0, 1.0);
                bg[c * plane..(c + 1) * plane].fill(v);
            }
        }
        BgMode::Gradient => {
            let l0 = 0.45 + rng.uniform() * 0.55;
            let l1 = 0.45 + rng.uniform() * 0.55;
            let angle = rng.uniform() * std::f64::consts::TAU;
            let (dx, dy) = (angle.cos(), angle.sin());
            let tint = [draw(rng, 0.05), draw(rng, 0.05), draw(rng, 0.05)];
            for y in 0..size {
                for x in 0..size {
                    let t = ((x as f64 * dx + y as f64 * dy) / size as f64 + 1.0) / 2.0;
                    let v = l0 + (l1 - l0) * t.clamp(0.0, 1.0);
                    for c in 0..3 {
                        bg[c * plane + y * size + x] = (v + tint[c]).clamp(0.0, 1.0);
                    }
                }
            }
        }
        BgMode::Noise => {
            // low-frequency blotches: a coarse grid upsampled bilinearly
            const G: usize = 9;
            let mut grid = [0.0; G * G];
            let base = 0.4 + rng.uniform() * 0.4;
            for v in &mut grid {
                *v = (base + draw(rng, 0.3)).clamp(0.0, 1.0);
            }
            let tint = [draw(rng, 0.05), draw(rng, 0.05), draw(rng, 0.05)];
            let s = (G - 1) as f64 / (size - 1) as f64;
            for y in 0..size {
                let fy = y as f64 * s;
                let (y0, dy) = (fy.floor() as usize, fy.fract());
                let y1 = (y0 + 1).min(G - 1);
                for x in 0..size {
                    let fx = x as f64 * s;
                    let (x0, dx) = (fx.floor() as usize, fx.fract());
                    let x1 = (x0 + 1).min(G - 1);
                    let v = grid[y0 * G + x0] * (1.0 - dx) * (1.0 - dy)
                        + grid[y0 * G + x1] * dx * (1.0 - dy)
                        + grid[y1 * G + x0] * (1.0 - dx) * dy
                        + grid[y1 * G + x1] * dx * dy;
                    for c in 0..3 {
                        bg[c * plane + y * size + x] = (v + tint[c]).clamp(0.0, 1.0);
                    }
                }
            }
        }
        BgMode::Patch => {
            // interference of two sinusoids: a cheap periodic texture
            let base = 0.5 + rng.uniform() * 0.35;
            let amp = 0.08 + rng.uniform() * 0.18;
            let (fx, fy) = (0.15 + rng.uniform() * 0.7, 0.15 + rng.uniform() * 0.7);
            let phase = rng.uniform() * std::f64::consts::TAU;
            let tint = [draw(rng, 0.05), draw(rng, 0.05), draw(rng, 0.05)];
            for y in 0..size {
                for x in 0..size {
                    let v = base
                        + amp
                            * ((fx * x as f64 + phase).sin() + (fy * y as f64 - phase).cos())
                            / 2.0;
                    for c in 0..3 {
                        bg[c * plane + y * size + x] = (v + tint[c]).clamp(0.0, 1.0);
                    }
                }
            }
        }
    }
    bg
}

fn box_blur(planes: &mut [f64], size: usize, radius: usize) {
    if radius == 0 {
        return;
    }
    let plane = size * size;
    let norm = 1.0 / (2 * radius + 1) as f64;
    let mut tmp = vec![0.0; plane];
    for c in 0..3 {
        let p = &mut planes[c * plane..(c + 1) * plane];
        // horizontal
        for y in 0..size {
            for x in 0..size {
                let mut acc = 0.0;
                for k in 0..=2 * radius {
                    let xx = (x + k).saturating_sub(radius).min(size - 1);
                    acc += p[y * size + xx];
                }
                tmp[y * size + x] = acc * norm;
            }
        }
        // vertical
        for y in 0..size {
            for x in 0..size {
                let mut acc = 0.0;
                for k in 0..=2 * radius {
                    let yy = (y + k).saturating_sub(radius).min(size - 1);
                    acc += tmp[yy * size + x];
                }
                p[y * size + x] = acc * norm;
            }
        }
    }
}

/// Render one corrupted scene image plus its contrast-floor verdict.
pub fn render_scene(
    class: usize,
    font: &SynthFont,
    spec: &CorruptionSpec,
    seed: u64,
) -> Result<(Image, bool)> {
    const SIZE: usize = 64;
    let plane = SIZE * SIZE;
    let mut rng = Rng::new(mix(seed, 0x7363656e65)); // "scene"
    let rot = draw(&mut rng, spec.rotation_deg);
    let tx = draw(&mut rng, spec.translation_px);
    let ty = draw(&mut rng, spec.translation_px);
    let cov = render_coverage(class, font, SIZE, rot, tx, ty)?;

    let (bg, ink) = if spec.bg_modes.is_empty() {
        (vec![1.0; 3 * plane], [CANONICAL_INK; 3])
    } else {
        let mode = spec.bg_modes[rng.below(spec.bg_modes.len())];
        let bg = background(&mut rng, mode, SIZE);
        let base = rng.uniform() * 0.30;
        let ink = [
            (base + draw(&mut rng, 0.05)).clamp(0.0, 1.0),
            (base + draw(&mut rng, 0.05)).clamp(0.0, 1.0),
            (base + draw(&mut rng, 0.05)).clamp(0.0, 1.0),
        ];
        (bg, ink)
    };

    let mut planes = vec![0.0; 3 * plane];
    for c in 0..3 {
        for i in 0..plane {
            planes[c * plane + i] = compose(bg[c * plane + i], ink[c], cov[i]);
        }
    }

    if spec.blur_radius > 0.0 {
        let radius = (rng.uniform() * spec.blur_radius).round() as usize;
        box_blur(&mut planes, SIZE, radius);
    }
    if spec.brightness > 0.0 || spec.contrast > 0.0 {
        let b = draw(&mut rng, spec.brightness);
        let c = 1.0 + draw(&mut rng, spec.contrast);
        for v in &mut planes {
            *v = ((*v - 0.5) * c + 0.5 + b).clamp(0.0, 1.0);
        }
    }
    if spec.occlusion_prob > 0.0 && rng.chance(spec.occlusion_prob) {
        let w = 6 + rng.below(16);
        let h = 6 + rng.below(16);
        let x0 = rng.below(SIZE - w);
        let y0 = rng.below(SIZE - h);
        let color = [
            0.1 + rng.uniform() * 0.8,
            0.1 + rng.uniform() * 0.8,
            0.1 + rng.uniform() * 0.8,
        ];
        for c in 0..3 {
            for y in y0..y0 + h {
                for x in x0..x0 + w {
                    planes[c * plane + y * SIZE + x] = color[c];
                }
            }
        }
    }

    // contrast verdict: coverage-weighted foreground vs background
    // luminance on the final image
    let (mut fg, mut fg_w, mut bgl, mut bg_w) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..plane {
        let gray = (planes[i] + planes[plane + i] + planes[2 * plane + i]) / 3.0;
        fg += cov[i] * gray;
        fg_w += cov[i];
        bgl += (1.0 - cov[i]) * gray;
        bg_w += 1.0 - cov[i];
    }
    let ok = fg_w > 0.0 && bg_w > 0.0 && ((fg / fg_w) - (bgl / bg_w)).abs() >= spec.contrast_floor;

    Ok((Image::from_planes(SIZE, SIZE, &planes)?, ok))
}

/// Build one full sample: corrupted scene, class label, the m canonical
/// targets, and the per-sample font permutation applied jointly to the
/// embedding indices and the target list. A sample failing the contrast
/// floor is regenerated with a fresh seed up to 5 times, then rejected.
pub fn synth_scene(
    class: usize,
    font: &SynthFont,
    spec: &CorruptionSpec,
    seed: u64,
    atlas: &TargetAtlas,
) -> Result<Sample> {
    let mut image = None;
    for attempt in 0..5 {
        let (img, ok) = render_scene(class, font, spec, mix(seed, attempt))?;
        if ok {
            image = Some(img);
            break;
        }
    }
    let x = image.ok_or_else(|| {
        Error::Data(format!(
            "sample (class {class}, font {}, seed {seed}) failed the contrast floor 5 times",
            font.id
        ))
    })?;
    let m = atlas.m();
    let mut sample = Sample {
        x,
        y: class,
        targets: (0..m).map(|j| atlas.get(class, j)).collect::<Result<Vec<_>>>()?,
        font_perm: (1..=m).collect(),
    };
    let mut perm_rng = Rng::new(mix(seed, 0x7065726d)); // "perm"
    shuffle_fonts(&mut sample, &mut perm_rng);
    Ok(sample)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::font::builtin_fonts;
    use crate::data::render::render_canonical;

    #[test]
    fn identity_corruption_reproduces_the_canonical_image() {
        let font = &builtin_fonts()[1];
        let atlas = TargetAtlas::build(&builtin_fonts()[..2], 36, 64).unwrap();
        let sample = synth_scene(7, font, &CorruptionSpec::identity(), 99, &atlas).unwrap();
        let canonical = render_canonical(7, font, 64).unwrap();
        assert_eq!(sample.x, canonical);
        // and it matches the target slot carrying the same font
        let slot = sample.font_perm.iter().position(|&f| f == 2).unwrap();
        assert_eq!(*sample.targets[slot], canonical);
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let font = &builtin_fonts()[0];
        let spec = CorruptionSpec::default_ranges();
        let atlas = TargetAtlas::build(&builtin_fonts()[..3], 36, 64).unwrap();
        let a = synth_scene(20, font, &spec, 1234, &atlas).unwrap();
        let b = synth_scene(20, font, &spec, 1234, &atlas).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.font_perm, b.font_perm);
        let c = synth_scene(20, font, &spec, 1235, &atlas).unwrap();
        assert_ne!(a.x, c.x, "different seeds should corrupt differently");
    }

    #[test]
    fn corruption_keeps_pixels_in_range_and_varies_backgrounds() {
        let font = &builtin_fonts()[2];
        let spec = CorruptionSpec::default_ranges();
        let mut distinct = std::collections::HashSet::new();
        for seed in 0..12 {
            let (img, _) = render_scene(5, font, &spec, seed).unwrap();
            distinct.insert(img.get(1, 1));
        }
        assert!(distinct.len() > 4, "backgrounds barely vary: {}", distinct.len());
    }

    #[test]
    fn impossible_contrast_floor_rejects_after_retries() {
        let font = &builtin_fonts()[0];
        let mut spec = CorruptionSpec::identity();
        spec.contrast_floor = 2.0; // unattainable: luminance lives in [0,1]
        let atlas = TargetAtlas::build(&builtin_fonts()[..1], 36, 64).unwrap();
        let err = synth_scene(3, font, &spec, 7, &atlas).err().unwrap();
        assert!(err.to_string().contains("contrast"), "{err}");
    }
}
