//! Per-pixel distance to the nearest detected line, and homography-adapted
//! aggregation of many detection rounds into one robust field.

use crate::error::{Error, Result};
use crate::geometry::{
    sample_homography, warp_image, warp_segments, Homography, HomographyParams, LineSegment,
};
use crate::image::ImageF32;
use crate::lsd::{lsd_detect, LsdParams};
use crate::seeds::derive_seed;

/// Nonnegative distances in pixels, one per pixel.
#[derive(Clone, Debug)]
pub struct DistanceField {
    pub height: usize,
    pub width: usize,
    pub d: Vec<f32>,
}

impl DistanceField {
    pub fn at(&self, y: usize, x: usize) -> f32 {
        self.d[y * self.width + x]
    }
}

/// Sentinel written when no lines exist: exceeds any in-frame distance and
/// keeps median arithmetic total.
pub fn empty_distance(height: usize, width: usize) -> f32 {
    (height + width) as f32
}

/// Exact point-to-segment distance minimized over all segments, evaluated at
/// integer pixel positions. Empty input fills the field with `empty_distance`.
pub fn distance_field(segs: &[LineSegment], height: usize, width: usize) -> DistanceField {
    assert!(height >= 1 && width >= 1, "distance_field needs a nonempty frame");
    let cap = empty_distance(height, width);
    let mut d = vec![cap; height * width];
    if !segs.is_empty() {
        for y in 0..height {
            for x in 0..width {
                let mut best = cap;
                for s in segs {
                    let v = s.distance_to_point(x as f32, y as f32);
                    if v < best {
                        best = v;
                    }
                }
                d[y * width + x] = best;
            }
        }
    }
    DistanceField { height, width, d }
}

/// Activation map `exp(-d/2)`: 1 on a line, decaying with distance, range (0, 1].
pub fn line_activation(field: &DistanceField) -> ImageF32 {
    let mut out = ImageF32::new(field.height, field.width, 1);
    for (o, &d) in out.data.iter_mut().zip(field.d.iter()) {
        *o = (-d / 2.0).exp();
    }
    out
}

/// Lower median: sorts ascending and returns element `(n-1)/2`. Deterministic
/// for even counts, exact order statistic, permutation invariant.
pub fn lower_median(values: &mut [f32]) -> f32 {
    assert!(!values.is_empty());
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    values[(values.len() - 1) / 2]
}

/// The homography used for aggregation branch `index`. Branch 0 is always the
/// identity so a single-branch run reduces to direct detection; later branches
/// draw from per-index derived seeds, making the set independent of traversal
/// order.
pub fn adaptation_homography(
    seed: u64,
    index: usize,
    height: usize,
    width: usize,
    params: &HomographyParams,
) -> Homography {
    if index == 0 {
        Homography::identity()
    } else {
        sample_homography(derive_seed(seed, index as u64), height, width, params)
    }
}

/// One aggregation branch: warp the image, detect segments there, map the
/// segments back into the source frame, and measure distances.
pub fn adapted_field(
    gray: &ImageF32,
    h: &Homography,
    lsd_params: &LsdParams,
) -> Result<DistanceField> {
    let warped = warp_image(gray, h)?;
    let segs = lsd_detect(&warped, lsd_params)?;
    let back = warp_segments(&segs, &h.invert()?, gray.height, gray.width);
    Ok(distance_field(&back, gray.height, gray.width))
}

/// Median-of-branches distance field: `n` detection rounds under random
/// homographies (branch 0 identity), aggregated per pixel with the lower
/// median.
pub fn homography_adaptation(
    gray: &ImageF32,
    n: usize,
    seed: u64,
    lsd_params: &LsdParams,
    homo_params: &HomographyParams,
) -> Result<DistanceField> {
    if n == 0 {
        return Err(Error::InvalidArg("need at least one branch".into()));
    }
    if gray.channels != 1 {
        return Err(Error::Shape("homography adaptation expects a single channel".into()));
    }
    let mut fields = Vec::with_capacity(n);
    for i in 0..n {
        let h = adaptation_homography(seed, i, gray.height, gray.width, homo_params);
        fields.push(adapted_field(gray, &h, lsd_params)?);
    }
    let mut d = vec![0.0f32; gray.height * gray.width];
    let mut scratch = vec![0.0f32; n];
    for (p, out) in d.iter_mut().enumerate() {
        for (i, f) in fields.iter().enumerate() {
            scratch[i] = f.d[p];
        }
        *out = lower_median(&mut scratch);
    }
    Ok(DistanceField {
        height: gray.height,
        width: gray.width,
        d,
    })
}
