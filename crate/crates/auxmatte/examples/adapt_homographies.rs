//! Aggregate line detections across random homography branches into a
//! median distance field, then turn it into the soft line activation.
//!
//! One branch is always the identity, so n=1 equals direct detection; more
//! branches make the field robust to detector flakiness under viewpoint
//! change.

use auxmatte::distfield::{homography_adaptation, line_activation};
use auxmatte::geometry::{HomographyParams, LineSegment};
use auxmatte::image::ImageF32;
use auxmatte::io::write_png;
use auxmatte::lsd::LsdParams;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let size = 72usize;
    let mut img = ImageF32::filled(size, size, 1, 0.9);
    let seg = LineSegment::new(10.0, 18.0, 62.0, 50.0);
    for y in 0..size {
        for x in 0..size {
            let d = seg.distance_to_point(x as f32, y as f32);
            if d < 4.0 {
                let f = 1.0 - 0.8 * (-d * d / (2.0 * 0.7 * 0.7)).exp();
                let v = img.at(y, x, 0) * f;
                img.set(y, x, 0, v);
            }
        }
    }

    let lsd = LsdParams::default();
    let homo = HomographyParams::default();
    for n in [1usize, 5, 9] {
        let field = homography_adaptation(&img, n, 42, &lsd, &homo)?;
        let on_line: f32 = (0..size)
            .map(|t| {
                let fx = t as f32 / (size - 1) as f32;
                let x = seg.x1 + fx * (seg.x2 - seg.x1);
                let y = seg.y1 + fx * (seg.y2 - seg.y1);
                field.d[y.round() as usize * size + x.round() as usize]
            })
            .fold(0.0, f32::max);
        let mean: f32 = field.d.iter().sum::<f32>() / field.d.len() as f32;
        println!("n={n}: worst distance along the true line {on_line:.2} px, field mean {mean:.2}");
        if n == 5 {
            let act = line_activation(&field);
            let dir = std::env::temp_dir().join("auxmatte_adapt_homographies");
            std::fs::create_dir_all(&dir)?;
            write_png(&dir.join("activation.png"), &act)?;
            println!("  activation written to {}", dir.join("activation.png").display());
        }
    }
    Ok(())
}
