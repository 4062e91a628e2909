//! Build background-line supervision from a line activation and a matte.
//!
//! The matte partitions the activation into three regimes: fully opaque
//! pixels are supervised to zero (the line is hidden), the ambiguous band
//! with alpha in [0.8, 1) is excluded from the loss, and everywhere else the
//! activation value itself is the target. Loss masks restrict both line and
//! matte terms to narrow bands around detected lines.

use auxmatte::distfield::{distance_field, line_activation};
use auxmatte::geometry::LineSegment;
use auxmatte::image::ImageF32;
use auxmatte::pseudogt::{
    background_line_gt, loss_region_mask, masked_l1, LINE_LOSS_RADIUS, MAT_LOSS_RADIUS,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let size = 64usize;
    let s = size as f32;

    let segs = [LineSegment::new(6.0, 40.0, 58.0, 30.0)];
    let field = distance_field(&segs, size, size);
    let pl = line_activation(&field);

    // vertical alpha ramp: clear at the top, ambiguous band, opaque bottom
    let mut alpha = ImageF32::new(size, size, 1);
    for y in 0..size {
        let v = (y as f32 / (s - 1.0) * 1.4).min(1.0);
        for x in 0..size {
            alpha.set(y, x, 0, v);
        }
    }

    let bl = background_line_gt(&pl, &alpha)?;
    let mut supervised_line = 0usize;
    let mut supervised_zero = 0usize;
    let mut ignored = 0usize;
    for p in 0..size * size {
        if bl.valid.data[p] == 0.0 {
            ignored += 1;
        } else if alpha.data[p] >= 1.0 {
            supervised_zero += 1;
        } else {
            supervised_line += 1;
        }
    }
    println!("supervised with activation: {supervised_line} px");
    println!("supervised with zero (opaque): {supervised_zero} px");
    println!("ignored (alpha in [0.8, 1)): {ignored} px");

    let line_band = loss_region_mask(&field, LINE_LOSS_RADIUS);
    let mat_band = loss_region_mask(&field, MAT_LOSS_RADIUS);
    println!(
        "line-loss band (d <= {LINE_LOSS_RADIUS}): {} px; matte band (d <= {MAT_LOSS_RADIUS}): {} px",
        line_band.data.iter().filter(|&&v| v == 1.0).count(),
        mat_band.data.iter().filter(|&&v| v == 1.0).count()
    );

    let zeros = ImageF32::new(size, size, 1);
    let (loss, empty) = masked_l1(&zeros, &bl, &line_band)?;
    println!("masked L1 of an all-zero prediction in the band: {loss:.4} (empty: {empty})");
    Ok(())
}
