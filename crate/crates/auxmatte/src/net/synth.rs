//! Procedural training samples.
//!
//! Foreground mattes are unions of soft-edged ellipses plus one or two thin
//! filament strokes whose borders carry genuinely fractional alpha. The
//! foreground is colored warm, the background cool, so opacity is learnable
//! from color at desk scale. Backgrounds get straight dark strokes that the
//! line detector can find, which is what the background-line task supervises.

use super::{SampleBundle, Task};
use crate::compose::{
    composite, edge_from_mask, make_guidance, perturb_guidance, PerturbParams,
    GUIDANCE_ERODE_K, GUIDANCE_THRESHOLD,
};
use crate::distfield::{homography_adaptation, line_activation};
use crate::error::Result;
use crate::geometry::{HomographyParams, LineSegment};
use crate::image::ImageF32;
use crate::lsd::LsdParams;
use crate::pseudogt::background_line_gt;
use crate::seeds::derive_seed;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Homography-adaptation branches used for pseudo ground truth.
pub const SYNTH_ADAPT_BRANCHES: usize = 5;

/// Soft union of ellipses and filaments; values cover [0, 1] with fractional
/// borders a couple of pixels wide.
fn synth_alpha(rng: &mut ChaCha8Rng, size: usize) -> ImageF32 {
    let s = size as f32;
    let mut a = ImageF32::new(size, size, 1);
    let n_blobs = rng.gen_range(2..=4usize);
    let mut centers = Vec::new();
    for _ in 0..n_blobs {
        let cx = rng.gen_range(0.30 * s..0.70 * s);
        let cy = rng.gen_range(0.30 * s..0.70 * s);
        let rx = rng.gen_range(0.16 * s..0.28 * s);
        let ry = rng.gen_range(0.16 * s..0.28 * s);
        let rot = rng.gen_range(0.0..std::f32::consts::PI);
        centers.push((cx, cy));
        let (crot, srot) = (rot.cos(), rot.sin());
        for y in 0..size {
            for x in 0..size {
                let dx = x as f32 - cx;
                let dy = y as f32 - cy;
                let u = dx * crot + dy * srot;
                let v = -dx * srot + dy * crot;
                let r = ((u / rx).powi(2) + (v / ry).powi(2)).sqrt();
                // approximate signed pixel distance to the boundary, soft
                // band about 2 px wide
                let signed = (1.0 - r) * rx.min(ry);
                let val = (0.5 + signed / 2.0).clamp(0.0, 1.0);
                let p = y * size + x;
                a.data[p] = a.data[p].max(val);
            }
        }
    }
    let n_fil = rng.gen_range(1..=2usize);
    for _ in 0..n_fil {
        let &(cx, cy) = &centers[rng.gen_range(0..centers.len())];
        let ang = rng.gen_range(0.0..std::f32::consts::TAU);
        let len = rng.gen_range(0.30 * s..0.55 * s);
        let x2 = (cx + ang.cos() * len).clamp(1.0, s - 2.0);
        let y2 = (cy + ang.sin() * len).clamp(1.0, s - 2.0);
        let seg = LineSegment::new(cx, cy, x2, y2);
        let sigma = rng.gen_range(0.55..0.9f32);
        for y in 0..size {
            for x in 0..size {
                let d = seg.distance_to_point(x as f32, y as f32);
                if d < 4.0 * sigma {
                    // saturating core, fractional borders
                    let val = (1.2 * (-d * d / (2.0 * sigma * sigma)).exp()).min(1.0);
                    let p = y * size + x;
                    a.data[p] = a.data[p].max(val);
                }
            }
        }
    }
    a
}

/// Smooth color field from four random corner colors, channel ranges chosen
/// per layer role.
fn corner_field(rng: &mut ChaCha8Rng, size: usize, ranges: [(f32, f32); 3]) -> ImageF32 {
    let mut img = ImageF32::new(size, size, 3);
    for c in 0..3 {
        let (lo, hi) = ranges[c];
        let k: Vec<f32> = (0..4).map(|_| rng.gen_range(lo..hi)).collect();
        for y in 0..size {
            let fy = y as f32 / (size - 1) as f32;
            for x in 0..size {
                let fx = x as f32 / (size - 1) as f32;
                let v = k[0] * (1.0 - fy) * (1.0 - fx)
                    + k[1] * (1.0 - fy) * fx
                    + k[2] * fy * (1.0 - fx)
                    + k[3] * fy * fx;
                img.set(y, x, c, v);
            }
        }
    }
    img
}

/// Multiplicative dark stroke along a random segment; long and straight so
/// the detector can recover it.
fn stamp_dark_strokes(rng: &mut ChaCha8Rng, img: &mut ImageF32) -> Vec<LineSegment> {
    let s = img.height as f32;
    let n = rng.gen_range(2..=5usize);
    let mut segs = Vec::new();
    for _ in 0..n {
        let m = 4.0;
        let (x1, y1) = (rng.gen_range(m..s - m), rng.gen_range(m..s - m));
        let ang = rng.gen_range(0.0..std::f32::consts::TAU);
        let len = rng.gen_range(0.45 * s..0.8 * s);
        let x2 = (x1 + ang.cos() * len).clamp(m, s - 1.0 - m);
        let y2 = (y1 + ang.sin() * len).clamp(m, s - 1.0 - m);
        let seg = LineSegment::new(x1, y1, x2, y2);
        if seg.length() < 0.3 * s {
            continue;
        }
        let sigma = rng.gen_range(0.6..1.0f32);
        let contrast = rng.gen_range(0.6..0.85f32);
        for y in 0..img.height {
            for x in 0..img.width {
                let d = seg.distance_to_point(x as f32, y as f32);
                if d < 5.0 * sigma {
                    let f = 1.0 - contrast * (-d * d / (2.0 * sigma * sigma)).exp();
                    for c in 0..3 {
                        let v = img.at(y, x, c) * f;
                        img.set(y, x, c, v);
                    }
                }
            }
        }
        segs.push(seg);
    }
    segs
}

fn binarize_ge(img: &ImageF32, t: f32) -> ImageF32 {
    let mut out = ImageF32::new(img.height, img.width, 1);
    for (o, &v) in out.data.iter_mut().zip(img.data.iter()) {
        *o = if v >= t { 1.0 } else { 0.0 };
    }
    out
}

/// Deterministic sample for one task. Sub-streams are derived per stage so
/// the draw order of one stage cannot disturb another.
pub fn synth_sample(task: Task, seed: u64, size: usize) -> Result<SampleBundle> {
    assert!(size >= 32 && size % 32 == 0, "sample size must be a positive multiple of 32");
    let mut rng_alpha = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0));
    let mut rng_fg = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1));
    let mut rng_bg = ChaCha8Rng::seed_from_u64(derive_seed(seed, 2));

    let alpha = synth_alpha(&mut rng_alpha, size);
    // warm foreground vs cool background keeps opacity color-separable: the
    // red channel of the composite is an affine function of alpha up to the
    // narrow per-corner variation, so every head has a per-pixel cue
    let fg = corner_field(&mut rng_fg, size, [(0.8, 1.0), (0.3, 0.7), (0.0, 0.2)]);
    let mut bg = corner_field(&mut rng_bg, size, [(0.0, 0.2), (0.3, 0.7), (0.8, 1.0)]);
    stamp_dark_strokes(&mut rng_bg, &mut bg);
    let image = composite(&fg, &bg, &alpha)?;

    let (bl, dist) = if task == Task::BgLine {
        let gray = bg.to_gray();
        let d = homography_adaptation(
            &gray,
            SYNTH_ADAPT_BRANCHES,
            derive_seed(seed, 4),
            &LsdParams::default(),
            &HomographyParams::default(),
        )?;
        let pl = line_activation(&d);
        let bl = background_line_gt(&pl, &alpha)?;
        (Some(bl), Some(d))
    } else {
        (None, None)
    };

    let clean = make_guidance(&alpha, GUIDANCE_THRESHOLD, GUIDANCE_ERODE_K)?;
    let guidance = perturb_guidance(
        &clean,
        dist.as_ref(),
        derive_seed(seed, 3),
        &PerturbParams::default(),
    )?;

    let seg = binarize_ge(&alpha, 0.5);
    let edge = edge_from_mask(&seg, 2)?;

    let bundle = SampleBundle {
        task,
        image,
        guidance,
        alpha: match task {
            Task::SegData => None,
            _ => Some(alpha),
        },
        seg: match task {
            Task::SegData => Some(seg),
            _ => None,
        },
        edge: match task {
            Task::SegData => Some(edge),
            _ => None,
        },
        bl,
        dist,
    };
    bundle.validate()?;
    Ok(bundle)
}
