//! Simplified LSD-style line segment detector.
//!
//! Gradients come from the classic 2x2 scheme, so the field stored at pixel
//! `(x, y)` is sampled at `(x+0.5, y+0.5)`; the last row and column are zero.
//! Detection grows regions over high-magnitude pixels whose level-line angles
//! agree modulo pi (the two flanks of an anti-aliased stroke point in opposite
//! gradient directions and must land in one region; growth jumps up to two
//! pixels so the low-magnitude trough row of an axis-aligned stroke cannot
//! sever its flanks), fits an oriented rectangle from magnitude-weighted
//! second moments, and emits the principal axis when the aligned-point
//! density and length gates pass.

use crate::error::{Error, Result};
use crate::geometry::LineSegment;
use crate::image::ImageF32;
use std::collections::VecDeque;
use std::f32::consts::PI;

/// Magnitudes at or below this are treated as orientation-free background.
const MAG_FLOOR: f32 = 1e-3;
/// Regions smaller than this are noise; skipped before rectangle fitting.
const MIN_REGION_PIXELS: usize = 5;

#[derive(Clone, Copy, Debug)]
pub struct LsdParams {
    /// Angular admission tolerance, degrees, compared modulo pi.
    pub angle_tol_deg: f32,
    /// Minimum aligned-point density inside the fitted rectangle.
    pub min_density: f32,
    /// Minimum emitted segment length in pixels.
    pub min_length: f32,
    /// Magnitude quantile (over above-floor pixels) for region seeds/members.
    pub mag_quantile: f32,
}

impl Default for LsdParams {
    fn default() -> Self {
        Self {
            angle_tol_deg: 22.5,
            min_density: 0.7,
            min_length: 8.0,
            mag_quantile: 0.7,
        }
    }
}

/// 2x2 image gradient: returns (magnitude, level-line angle). The level-line
/// angle `atan2(gx, -gy)` is the isophote direction, perpendicular to the
/// gradient.
pub fn grad_field(gray: &ImageF32) -> Result<(ImageF32, ImageF32)> {
    if gray.channels != 1 {
        return Err(Error::Shape("grad_field expects a single channel".into()));
    }
    let (h, w) = (gray.height, gray.width);
    let mut mag = ImageF32::new(h, w, 1);
    let mut angle = ImageF32::new(h, w, 1);
    if h < 2 || w < 2 {
        return Ok((mag, angle));
    }
    for y in 0..h - 1 {
        for x in 0..w - 1 {
            let a = gray.at(y, x, 0);
            let b = gray.at(y, x + 1, 0);
            let c = gray.at(y + 1, x, 0);
            let d = gray.at(y + 1, x + 1, 0);
            let gx = (b - a + d - c) / 2.0;
            let gy = (c - a + d - b) / 2.0;
            mag.set(y, x, 0, gx.hypot(gy));
            angle.set(y, x, 0, gx.atan2(-gy));
        }
    }
    Ok((mag, angle))
}

/// Fold an angular difference into (-pi/2, pi/2]: angles are compared as
/// undirected lines.
fn axial_diff(a: f32, b: f32) -> f32 {
    let mut d = (a - b) % PI;
    if d > PI / 2.0 {
        d -= PI;
    } else if d <= -PI / 2.0 {
        d += PI;
    }
    d
}

struct Region {
    /// Pixel indices (y * w + x) admitted to the region.
    pixels: Vec<usize>,
    /// Doubled-angle circular sums tracking the running mean direction.
    sin2: f32,
    cos2: f32,
}

impl Region {
    fn mean_angle(&self) -> f32 {
        0.5 * self.sin2.atan2(self.cos2)
    }
}

/// Detect line segments. Deterministic: seeds are visited in decreasing
/// magnitude order with index as tie-break, and growth is breadth-first.
pub fn lsd_detect(gray: &ImageF32, params: &LsdParams) -> Result<Vec<LineSegment>> {
    if gray.channels != 1 {
        return Err(Error::Shape("lsd_detect expects a single channel".into()));
    }
    if gray.height < 16 || gray.width < 16 {
        return Err(Error::Shape(format!(
            "lsd_detect needs min side 16, got {}x{}",
            gray.height, gray.width
        )));
    }
    let (h, w) = (gray.height, gray.width);
    let (mag, angle) = grad_field(gray)?;

    let mut above: Vec<f32> = mag.data.iter().copied().filter(|&m| m > MAG_FLOOR).collect();
    if above.is_empty() {
        return Ok(Vec::new());
    }
    above.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let qi = ((above.len() - 1) as f64 * params.mag_quantile as f64).round() as usize;
    let tau = above[qi];

    let candidate: Vec<bool> = mag.data.iter().map(|&m| m > MAG_FLOOR && m >= tau).collect();
    let mut seeds: Vec<usize> = (0..mag.data.len()).filter(|&i| candidate[i]).collect();
    seeds.sort_by(|&a, &b| {
        mag.data[b]
            .partial_cmp(&mag.data[a])
            .unwrap()
            .then(a.cmp(&b))
    });

    let tol = params.angle_tol_deg.to_radians();
    let mut used = vec![false; mag.data.len()];
    let mut segments = Vec::new();

    for &seed in &seeds {
        if used[seed] {
            continue;
        }
        let region = grow_region(seed, &angle, &candidate, &mut used, tol, h, w);
        if region.pixels.len() < MIN_REGION_PIXELS {
            continue;
        }
        if let Some(seg) = fit_and_gate(&region, &mag, &angle, params, h, w) {
            segments.push(seg);
        }
    }
    Ok(segments)
}

fn grow_region(
    seed: usize,
    angle: &ImageF32,
    candidate: &[bool],
    used: &mut [bool],
    tol: f32,
    h: usize,
    w: usize,
) -> Region {
    let mut region = Region {
        pixels: Vec::new(),
        sin2: 0.0,
        cos2: 0.0,
    };
    let mut queue = VecDeque::new();
    used[seed] = true;
    queue.push_back(seed);
    let seed_angle = angle.data[seed];
    region.sin2 += (2.0 * seed_angle).sin();
    region.cos2 += (2.0 * seed_angle).cos();
    region.pixels.push(seed);

    // radius-2 neighborhood: an axis-aligned stroke has a low-magnitude
    // trough row between its two flanks, and growth must leap over it
    while let Some(idx) = queue.pop_front() {
        let y = idx / w;
        let x = idx % w;
        for dy in -2i32..=2 {
            for dx in -2i32..=2 {
                if dy == 0 && dx == 0 {
                    continue;
                }
                let ny = y as i32 + dy;
                let nx = x as i32 + dx;
                if ny < 0 || nx < 0 || ny >= h as i32 || nx >= w as i32 {
                    continue;
                }
                let nidx = ny as usize * w + nx as usize;
                if used[nidx] || !candidate[nidx] {
                    continue;
                }
                let na = angle.data[nidx];
                if axial_diff(na, region.mean_angle()).abs() > tol {
                    continue;
                }
                used[nidx] = true;
                region.sin2 += (2.0 * na).sin();
                region.cos2 += (2.0 * na).cos();
                region.pixels.push(nidx);
                queue.push_back(nidx);
            }
        }
    }
    region
}

/// Fit an oriented rectangle to the region via magnitude-weighted moments and
/// emit its axis if the length and aligned-density gates pass.
fn fit_and_gate(
    region: &Region,
    mag: &ImageF32,
    angle: &ImageF32,
    params: &LsdParams,
    h: usize,
    w: usize,
) -> Option<LineSegment> {
    // gradient samples live at half-integer offsets from their storage index
    let pos = |idx: usize| -> (f32, f32) {
        let y = (idx / w) as f32 + 0.5;
        let x = (idx % w) as f32 + 0.5;
        (x, y)
    };

    let mut wsum = 0.0f64;
    let mut cx = 0.0f64;
    let mut cy = 0.0f64;
    for &idx in &region.pixels {
        let m = mag.data[idx] as f64;
        let (x, y) = pos(idx);
        wsum += m;
        cx += m * x as f64;
        cy += m * y as f64;
    }
    if wsum <= 0.0 {
        return None;
    }
    cx /= wsum;
    cy /= wsum;

    let mut mxx = 0.0f64;
    let mut myy = 0.0f64;
    let mut mxy = 0.0f64;
    for &idx in &region.pixels {
        let m = mag.data[idx] as f64;
        let (x, y) = pos(idx);
        let dx = x as f64 - cx;
        let dy = y as f64 - cy;
        mxx += m * dx * dx;
        myy += m * dy * dy;
        mxy += m * dx * dy;
    }
    mxx /= wsum;
    myy /= wsum;
    mxy /= wsum;

    let phi = 0.5 * (2.0 * mxy).atan2(mxx - myy);
    let (dirx, diry) = (phi.cos(), phi.sin());

    let mut tmin = f64::INFINITY;
    let mut tmax = f64::NEG_INFINITY;
    let mut smin = f64::INFINITY;
    let mut smax = f64::NEG_INFINITY;
    for &idx in &region.pixels {
        let (x, y) = pos(idx);
        let dx = x as f64 - cx;
        let dy = y as f64 - cy;
        let t = dx * dirx + dy * diry;
        let s = -dx * diry + dy * dirx;
        tmin = tmin.min(t);
        tmax = tmax.max(t);
        smin = smin.min(s);
        smax = smax.max(s);
    }
    let length = tmax - tmin;
    if (length as f32) < params.min_length {
        return None;
    }

    // aligned-point density over the oriented pixels inside the rectangle
    // (half-pixel margin so the member pixels themselves are always inside)
    let tol = params.angle_tol_deg.to_radians();
    let corners = [
        (tmin - 0.5, smin - 0.5),
        (tmin - 0.5, smax + 0.5),
        (tmax + 0.5, smin - 0.5),
        (tmax + 0.5, smax + 0.5),
    ];
    let mut x_lo = f64::INFINITY;
    let mut x_hi = f64::NEG_INFINITY;
    let mut y_lo = f64::INFINITY;
    let mut y_hi = f64::NEG_INFINITY;
    for &(t, s) in &corners {
        let x = cx + t * dirx - s * diry;
        let y = cy + t * diry + s * dirx;
        x_lo = x_lo.min(x);
        x_hi = x_hi.max(x);
        y_lo = y_lo.min(y);
        y_hi = y_hi.max(y);
    }
    let xs = (x_lo.floor().max(0.0)) as usize;
    let xe = (x_hi.ceil().min((w - 1) as f64)) as usize;
    let ys = (y_lo.floor().max(0.0)) as usize;
    let ye = (y_hi.ceil().min((h - 1) as f64)) as usize;

    let mut inside = 0usize;
    let mut aligned = 0usize;
    let rect_angle = phi as f32;
    for y in ys..=ye {
        for x in xs..=xe {
            let px = x as f64 + 0.5;
            let py = y as f64 + 0.5;
            let dx = px - cx;
            let dy = py - cy;
            let t = dx * dirx + dy * diry;
            let s = -dx * diry + dy * dirx;
            if t < tmin - 0.5 || t > tmax + 0.5 || s < smin - 0.5 || s > smax + 0.5 {
                continue;
            }
            let idx = y * w + x;
            if mag.data[idx] <= MAG_FLOOR {
                // orientation-free pixels (the trough of a merged flank pair)
                // carry no evidence either way
                continue;
            }
            inside += 1;
            if axial_diff(angle.data[idx], rect_angle).abs() <= tol {
                aligned += 1;
            }
        }
    }
    if inside == 0 || (aligned as f32 / inside as f32) < params.min_density {
        return None;
    }

    Some(LineSegment::new(
        (cx + tmin * dirx) as f32,
        (cy + tmin * diry) as f32,
        (cx + tmax * dirx) as f32,
        (cy + tmax * diry) as f32,
    ))
}
