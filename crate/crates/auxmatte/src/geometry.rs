//! Planar geometry: line segments, homographies, and warping.
//!
//! Homographies are stored as row-major 3x3 `f64` matrices normalized so the
//! bottom-right entry is 1 whenever it is nonzero. Points transform as
//! homogeneous columns `(x, y, 1)` with a perspective divide afterwards.

use crate::error::{Error, Result};
use crate::image::ImageF32;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// A line segment in continuous pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineSegment {
    pub x1: f32,
    pub y1: f32,
    pub x2: f32,
    pub y2: f32,
}

impl LineSegment {
    pub fn new(x1: f32, y1: f32, x2: f32, y2: f32) -> Self {
        Self { x1, y1, x2, y2 }
    }

    pub fn length(&self) -> f32 {
        (self.x2 - self.x1).hypot(self.y2 - self.y1)
    }

    /// Angle of the carrier line in radians, in (-pi/2, pi/2] (undirected).
    pub fn axial_angle(&self) -> f32 {
        let mut a = (self.y2 - self.y1).atan2(self.x2 - self.x1);
        if a <= -std::f32::consts::FRAC_PI_2 {
            a += std::f32::consts::PI;
        } else if a > std::f32::consts::FRAC_PI_2 {
            a -= std::f32::consts::PI;
        }
        a
    }

    /// Euclidean distance from the point `(px, py)` to this segment; the
    /// projection parameter is clamped to [0, 1] so endpoints bound the
    /// answer. Internally double precision: callers compare fields at 1e-6.
    pub fn distance_to_point(&self, px: f32, py: f32) -> f32 {
        let (x1, y1) = (self.x1 as f64, self.y1 as f64);
        let (px, py) = (px as f64, py as f64);
        let dx = self.x2 as f64 - x1;
        let dy = self.y2 as f64 - y1;
        let len2 = dx * dx + dy * dy;
        let t = if len2 > 0.0 {
            (((px - x1) * dx + (py - y1) * dy) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let cx = x1 + t * dx;
        let cy = y1 + t * dy;
        (px - cx).hypot(py - cy) as f32
    }
}

/// Invertible plane projective transform.
#[derive(Clone, Copy, Debug)]
pub struct Homography {
    /// Row-major 3x3 matrix, bottom-right normalized to 1 when nonzero.
    pub m: [[f64; 3]; 3],
}

const DET_EPS: f64 = 1e-9;

impl Homography {
    pub fn identity() -> Self {
        Self {
            m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    /// Build from a raw matrix, normalizing and checking invertibility.
    pub fn new(m: [[f64; 3]; 3]) -> Result<Self> {
        let mut h = Self { m };
        h.normalize();
        if h.det().abs() <= DET_EPS {
            return Err(Error::InvalidArg("homography is singular".into()));
        }
        Ok(h)
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self {
            m: [[1.0, 0.0, tx], [0.0, 1.0, ty], [0.0, 0.0, 1.0]],
        }
    }

    fn normalize(&mut self) {
        let w = self.m[2][2];
        if w != 0.0 && w != 1.0 {
            for row in self.m.iter_mut() {
                for v in row.iter_mut() {
                    *v /= w;
                }
            }
        }
    }

    pub fn det(&self) -> f64 {
        let m = &self.m;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// Matrix product `self * rhs` (apply `rhs` first, then `self`).
    pub fn compose(&self, rhs: &Homography) -> Homography {
        let a = &self.m;
        let b = &rhs.m;
        let mut out = [[0.0f64; 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
            }
        }
        let mut h = Homography { m: out };
        h.normalize();
        h
    }

    /// Inverse via the adjugate, renormalized.
    pub fn invert(&self) -> Result<Homography> {
        let d = self.det();
        if d.abs() <= DET_EPS {
            return Err(Error::InvalidArg("cannot invert singular homography".into()));
        }
        let m = &self.m;
        let adj = [
            [
                m[1][1] * m[2][2] - m[1][2] * m[2][1],
                m[0][2] * m[2][1] - m[0][1] * m[2][2],
                m[0][1] * m[1][2] - m[0][2] * m[1][1],
            ],
            [
                m[1][2] * m[2][0] - m[1][0] * m[2][2],
                m[0][0] * m[2][2] - m[0][2] * m[2][0],
                m[0][2] * m[1][0] - m[0][0] * m[1][2],
            ],
            [
                m[1][0] * m[2][1] - m[1][1] * m[2][0],
                m[0][1] * m[2][0] - m[0][0] * m[2][1],
                m[0][0] * m[1][1] - m[0][1] * m[1][0],
            ],
        ];
        let mut out = [[0.0f64; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                out[i][j] = adj[i][j] / d;
            }
        }
        let mut h = Homography { m: out };
        h.normalize();
        Ok(h)
    }

    /// Transform a point with perspective divide.
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let m = &self.m;
        let xp = m[0][0] * x + m[0][1] * y + m[0][2];
        let yp = m[1][0] * x + m[1][1] * y + m[1][2];
        let w = m[2][0] * x + m[2][1] * y + m[2][2];
        (xp / w, yp / w)
    }
}

/// Ranges for random homography sampling. Translation is expressed as a
/// fraction of the shorter image side; perspective coefficients are drawn per
/// unit of normalized coordinate (divided by the longer side) so the warp
/// stays folding-free inside the frame.
#[derive(Clone, Copy, Debug)]
pub struct HomographyParams {
    pub max_rot_deg: f64,
    pub scale_range: (f64, f64),
    pub max_persp: f64,
    pub max_trans_frac: f64,
}

impl Default for HomographyParams {
    fn default() -> Self {
        Self {
            max_rot_deg: 30.0,
            scale_range: (0.7, 1.3),
            max_persp: 0.1,
            max_trans_frac: 0.1,
        }
    }
}

impl HomographyParams {
    /// Ranges that always produce the exact identity matrix.
    pub fn identity() -> Self {
        Self {
            max_rot_deg: 0.0,
            scale_range: (1.0, 1.0),
            max_persp: 0.0,
            max_trans_frac: 0.0,
        }
    }
}

/// Draw a random homography about the image center. Deterministic per seed;
/// draw order (rotation, scale, two perspective terms, two translations) is
/// part of the determinism contract.
pub fn sample_homography(
    seed: u64,
    height: usize,
    width: usize,
    params: &HomographyParams,
) -> Homography {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max_rot = params.max_rot_deg.to_radians();
    let rot = rng.gen_range(-max_rot..=max_rot);
    let (slo, shi) = params.scale_range;
    let scale = rng.gen_range(slo..=shi);
    let long_side = height.max(width).max(1) as f64;
    let persp_x = rng.gen_range(-params.max_persp..=params.max_persp) / long_side;
    let persp_y = rng.gen_range(-params.max_persp..=params.max_persp) / long_side;
    let max_trans = params.max_trans_frac * height.min(width) as f64;
    let tx = rng.gen_range(-max_trans..=max_trans);
    let ty = rng.gen_range(-max_trans..=max_trans);

    let (s, c) = rot.sin_cos();
    let rot_scale = Homography {
        m: [
            [scale * c, -scale * s, 0.0],
            [scale * s, scale * c, 0.0],
            [0.0, 0.0, 1.0],
        ],
    };
    let persp = Homography {
        m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [persp_x, persp_y, 1.0]],
    };
    let trans = Homography::translation(tx, ty);

    let cx = (width as f64 - 1.0) / 2.0;
    let cy = (height as f64 - 1.0) / 2.0;
    let to_center = Homography::translation(cx, cy);
    let to_origin = Homography::translation(-cx, -cy);

    to_center
        .compose(&trans)
        .compose(&rot_scale)
        .compose(&persp)
        .compose(&to_origin)
}

/// Warp an image by `h` using inverse mapping with bilinear sampling; samples
/// falling outside the source replicate the border, so the warp introduces no
/// artificial edges for a detector to latch onto.
pub fn warp_image(img: &ImageF32, h: &Homography) -> Result<ImageF32> {
    let inv = h.invert()?;
    let mut out = ImageF32::new(img.height, img.width, img.channels);
    for y in 0..img.height {
        for x in 0..img.width {
            let (sx, sy) = inv.apply(x as f64, y as f64);
            let x0 = sx.floor();
            let y0 = sy.floor();
            let fx = (sx - x0) as f32;
            let fy = (sy - y0) as f32;
            let x0 = x0 as isize;
            let y0 = y0 as isize;
            for ch in 0..img.channels {
                let v00 = img.at_clamped(y0, x0, ch);
                let v01 = img.at_clamped(y0, x0 + 1, ch);
                let v10 = img.at_clamped(y0 + 1, x0, ch);
                let v11 = img.at_clamped(y0 + 1, x0 + 1, ch);
                let top = v00 * (1.0 - fx) + v01 * fx;
                let bot = v10 * (1.0 - fx) + v11 * fx;
                out.set(y, x, ch, top * (1.0 - fy) + bot * fy);
            }
        }
    }
    Ok(out)
}

/// Map segment endpoints through `h`, dropping segments whose endpoints both
/// land outside the `[0, w-1] x [0, h-1]` frame.
pub fn warp_segments(
    segs: &[LineSegment],
    h: &Homography,
    height: usize,
    width: usize,
) -> Vec<LineSegment> {
    let inside = |x: f64, y: f64| {
        x >= 0.0 && y >= 0.0 && x <= (width - 1) as f64 && y <= (height - 1) as f64
    };
    let mut out = Vec::with_capacity(segs.len());
    for s in segs {
        let (x1, y1) = h.apply(s.x1 as f64, s.y1 as f64);
        let (x2, y2) = h.apply(s.x2 as f64, s.y2 as f64);
        if !inside(x1, y1) && !inside(x2, y2) {
            continue;
        }
        out.push(LineSegment::new(x1 as f32, y1 as f32, x2 as f32, y2 as f32));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn approx(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn identity_apply_and_invert() {
        let h = Homography::identity();
        let (x, y) = h.apply(3.5, -2.25);
        assert_eq!((x, y), (3.5, -2.25));
        let inv = h.invert().unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!(approx(inv.m[i][j], h.m[i][j], 1e-12));
            }
        }
    }

    #[test]
    fn new_rejects_singular() {
        let m = [[1.0, 2.0, 3.0], [2.0, 4.0, 6.0], [0.0, 0.0, 1.0]];
        assert!(Homography::new(m).is_err());
    }

    #[test]
    fn new_normalizes_bottom_right() {
        let m = [[2.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 2.0]];
        let h = Homography::new(m).unwrap();
        assert_eq!(h.m[2][2], 1.0);
        assert_eq!(h.m[0][0], 1.0);
    }

    #[test]
    fn invert_roundtrips_to_identity() {
        let h = sample_homography(7, 64, 48, &HomographyParams::default());
        let prod = h.compose(&h.invert().unwrap());
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!(
                    approx(prod.m[i][j], want, 1e-9),
                    "entry ({i},{j}) = {}",
                    prod.m[i][j]
                );
            }
        }
    }

    #[test]
    fn collapsed_ranges_give_exact_identity() {
        let h = sample_homography(123, 64, 64, &HomographyParams::identity());
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert_eq!(h.m[i][j], want, "entry ({i},{j})");
            }
        }
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let p = HomographyParams::default();
        let a = sample_homography(42, 64, 64, &p);
        let b = sample_homography(42, 64, 64, &p);
        assert_eq!(a.m, b.m);
        let c = sample_homography(43, 64, 64, &p);
        assert_ne!(a.m, c.m);
    }

    #[test]
    fn thousand_samples_stay_invertible() {
        let p = HomographyParams::default();
        for seed in 0..1000u64 {
            let h = sample_homography(seed, 64, 64, &p);
            assert!(h.det().abs() > 1e-6, "seed {seed} det {}", h.det());
        }
    }

    #[test]
    fn identity_warp_is_bit_identical() {
        let mut img = ImageF32::new(13, 17, 3);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = ((i * 2654435761) % 1000) as f32 / 1000.0;
        }
        let out = warp_image(&img, &Homography::identity()).unwrap();
        assert_eq!(img.data, out.data);
    }

    #[test]
    fn translation_warp_shifts_content() {
        let mut img = ImageF32::new(16, 16, 1);
        img.set(0, 0, 0, 0.7);
        img.set(5, 6, 0, 1.0);
        let h = Homography::translation(3.0, 2.0);
        let out = warp_image(&img, &h).unwrap();
        assert_eq!(out.at(7, 9, 0), 1.0);
        assert_eq!(out.at(5, 6, 0), 0.0);
        // area vacated by the shift replicates the border it came from
        assert_eq!(out.at(0, 0, 0), 0.7);
    }

    #[test]
    fn translation_acts_on_segments() {
        let segs = vec![LineSegment::new(0.0, 0.0, 10.0, 0.0)];
        let h = Homography::translation(5.0, 3.0);
        let out = warp_segments(&segs, &h, 32, 32);
        assert_eq!(out.len(), 1);
        assert_eq!((out[0].x1, out[0].y1), (5.0, 3.0));
        assert_eq!((out[0].x2, out[0].y2), (15.0, 3.0));
    }

    #[test]
    fn identity_keeps_segments() {
        let segs = vec![
            LineSegment::new(1.0, 2.0, 3.0, 4.0),
            LineSegment::new(10.0, 0.5, 0.25, 12.0),
        ];
        let out = warp_segments(&segs, &Homography::identity(), 16, 16);
        assert_eq!(out, segs);
    }

    #[test]
    fn fully_outside_segments_are_dropped() {
        let segs = vec![
            LineSegment::new(-5.0, -5.0, -1.0, -2.0),
            LineSegment::new(2.0, 2.0, 40.0, 40.0),
        ];
        let out = warp_segments(&segs, &Homography::identity(), 16, 16);
        // first is gone, second survives because one endpoint is in frame
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].x1, 2.0);
    }

    #[test]
    fn segment_warp_roundtrip() {
        let p = HomographyParams::default();
        for seed in [1u64, 9, 77] {
            let h = sample_homography(seed, 64, 64, &p);
            let inv = h.invert().unwrap();
            let segs = vec![
                LineSegment::new(20.0, 20.0, 40.0, 30.0),
                LineSegment::new(30.0, 12.0, 25.0, 50.0),
            ];
            // generous frame so the intermediate drop rule never fires
            let fwd = warp_segments(&segs, &h, 4096, 4096);
            let back = warp_segments(&fwd, &inv, 4096, 4096);
            assert_eq!(back.len(), segs.len());
            for (a, b) in segs.iter().zip(back.iter()) {
                assert!((a.x1 - b.x1).abs() < 1e-3);
                assert!((a.y1 - b.y1).abs() < 1e-3);
                assert!((a.x2 - b.x2).abs() < 1e-3);
                assert!((a.y2 - b.y2).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn point_segment_distance_closed_forms() {
        let s = LineSegment::new(2.0, 5.0, 10.0, 5.0);
        // perpendicular foot inside the segment
        assert!((s.distance_to_point(6.0, 9.0) - 4.0).abs() < 1e-6);
        // beyond an endpoint: Euclidean distance to that endpoint
        assert!((s.distance_to_point(13.0, 9.0) - 5.0).abs() < 1e-6);
        // degenerate segment collapses to a point
        let p = LineSegment::new(3.0, 3.0, 3.0, 3.0);
        assert!((p.distance_to_point(0.0, 7.0) - 5.0).abs() < 1e-6);
    }

    #[test]
    fn segment_json_roundtrip() {
        let segs = vec![
            LineSegment::new(1.5, 2.5, 3.5, 4.5),
            LineSegment::new(0.0, 0.0, 8.0, 8.0),
        ];
        let json = serde_json::to_string(&segs).unwrap();
        assert!(json.contains("\"x1\""));
        let back: Vec<LineSegment> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, segs);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn apply_roundtrip_recovers_points(
            seed in 0u64..500,
            x in 0.0f64..63.0,
            y in 0.0f64..63.0,
        ) {
            let h = sample_homography(seed, 64, 64, &HomographyParams::default());
            let inv = h.invert().unwrap();
            let (wx, wy) = h.apply(x, y);
            let (bx, by) = inv.apply(wx, wy);
            prop_assert!((bx - x).abs() < 1e-6);
            prop_assert!((by - y).abs() < 1e-6);
        }

        #[test]
        fn distance_is_symmetric_in_orientation(
            x1 in -10.0f32..70.0, y1 in -10.0f32..70.0,
            x2 in -10.0f32..70.0, y2 in -10.0f32..70.0,
            px in -10.0f32..70.0, py in -10.0f32..70.0,
        ) {
            let a = LineSegment::new(x1, y1, x2, y2);
            let b = LineSegment::new(x2, y2, x1, y1);
            let da = a.distance_to_point(px, py);
            let db = b.distance_to_point(px, py);
            prop_assert!((da - db).abs() < 1e-4);
        }
    }
}
