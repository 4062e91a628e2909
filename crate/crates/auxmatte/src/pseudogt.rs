//! Background-line supervision targets: masking the line activation by the
//! alpha matte (with an ignore band) and the distance-thresholded loss masks.

use crate::distfield::DistanceField;
use crate::error::{Error, Result};
use crate::image::{BinaryMask, ImageF32};

/// Alpha below this: the background is visible enough to supervise directly.
pub const SUPERVISED_ALPHA: f32 = 0.8;
/// Tolerance for the "fully opaque" test; compositing can leave alpha at
/// 1 minus an ulp.
pub const OPAQUE_TOL: f32 = 1e-6;

/// Distance threshold for the line-detection term of the background loss.
pub const LINE_LOSS_RADIUS: f32 = 13.0;
/// Distance threshold for the matting term of the background loss.
pub const MAT_LOSS_RADIUS: f32 = 3.0;

/// A supervision target with per-pixel validity: wherever `valid` is 0 the
/// value must not be consumed by any loss.
#[derive(Clone, Debug)]
pub struct SupervisionMap {
    pub values: ImageF32,
    pub valid: BinaryMask,
}

/// Mask the line activation by alpha: supervised with the activation where the
/// background shows through (`A < 0.8`), ignored in the ambiguous band
/// (`0.8 <= A < 1`), supervised with zero where fully opaque (`A = 1` within
/// tolerance).
pub fn background_line_gt(pl: &ImageF32, alpha: &ImageF32) -> Result<SupervisionMap> {
    if !pl.same_size(alpha) || pl.channels != 1 || alpha.channels != 1 {
        return Err(Error::Shape(
            "activation and alpha must be single-channel and equally sized".into(),
        ));
    }
    let mut values = ImageF32::new(pl.height, pl.width, 1);
    let mut valid = ImageF32::new(pl.height, pl.width, 1);
    for i in 0..pl.data.len() {
        let a = alpha.data[i];
        let (v, ok) = if a >= 1.0 - OPAQUE_TOL {
            (0.0, 1.0)
        } else if a >= SUPERVISED_ALPHA {
            (0.0, 0.0)
        } else {
            (pl.data[i], 1.0)
        };
        values.data[i] = v;
        valid.data[i] = ok;
    }
    Ok(SupervisionMap { values, valid })
}

/// Binary mask of pixels within `threshold` pixels of a detected line.
pub fn loss_region_mask(field: &DistanceField, threshold: f32) -> BinaryMask {
    assert!(threshold > 0.0, "loss region threshold must be positive");
    let mut mask = ImageF32::new(field.height, field.width, 1);
    for (m, &d) in mask.data.iter_mut().zip(field.d.iter()) {
        *m = if d <= threshold { 1.0 } else { 0.0 };
    }
    mask
}

/// Mean absolute error over pixels that are both in `region` and supervised.
/// Returns `(loss, empty_support)`; an empty intersection yields `(0, true)`
/// rather than an error so training can continue on fully-ignored crops.
pub fn masked_l1(
    pred: &ImageF32,
    target: &SupervisionMap,
    region: &BinaryMask,
) -> Result<(f32, bool)> {
    if !pred.same_size(&target.values) || !pred.same_size(region) || pred.channels != 1 {
        return Err(Error::Shape("masked_l1 shapes differ".into()));
    }
    let mut sum = 0.0f64;
    let mut count = 0usize;
    for i in 0..pred.data.len() {
        if region.data[i] >= 0.5 && target.valid.data[i] >= 0.5 {
            sum += (pred.data[i] - target.values.data[i]).abs() as f64;
            count += 1;
        }
    }
    if count == 0 {
        Ok((0.0, true))
    } else {
        Ok(((sum / count as f64) as f32, false))
    }
}
