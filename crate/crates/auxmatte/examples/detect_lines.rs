//! Run the line segment detector on an image with two known dark strokes
//! and compare the detections against the strokes that were drawn.

use auxmatte::geometry::LineSegment;
use auxmatte::image::ImageF32;
use auxmatte::lsd::{lsd_detect, LsdParams};

fn stamp(img: &mut ImageF32, seg: &LineSegment, sigma: f32, contrast: f32) {
    for y in 0..img.height {
        for x in 0..img.width {
            let d = seg.distance_to_point(x as f32, y as f32);
            if d < 5.0 * sigma {
                let f = 1.0 - contrast * (-d * d / (2.0 * sigma * sigma)).exp();
                let v = img.at(y, x, 0) * f;
                img.set(y, x, 0, v);
            }
        }
    }
}

fn endpoint_gap(a: &LineSegment, b: &LineSegment) -> f32 {
    let d = |x1: f32, y1: f32, x2: f32, y2: f32| ((x1 - x2).powi(2) + (y1 - y2).powi(2)).sqrt();
    let fwd = d(a.x1, a.y1, b.x1, b.y1).max(d(a.x2, a.y2, b.x2, b.y2));
    let rev = d(a.x1, a.y1, b.x2, b.y2).max(d(a.x2, a.y2, b.x1, b.y1));
    fwd.min(rev)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let size = 80usize;
    let mut img = ImageF32::filled(size, size, 1, 0.85);
    let truth = [
        LineSegment::new(12.0, 18.0, 68.0, 26.0),
        LineSegment::new(14.0, 60.0, 64.0, 42.0),
    ];
    for seg in &truth {
        stamp(&mut img, seg, 0.8, 0.75);
    }

    let segs = lsd_detect(&img, &LsdParams::default())?;
    println!("{} segments detected (2 drawn)", segs.len());
    for (i, s) in segs.iter().enumerate() {
        let best = truth
            .iter()
            .map(|t| endpoint_gap(s, t))
            .fold(f32::INFINITY, f32::min);
        println!(
            "  seg {i}: ({:5.1},{:5.1})-({:5.1},{:5.1}) len {:5.1}  endpoint gap to nearest truth {:4.1} px",
            s.x1, s.y1, s.x2, s.y2,
            s.length(),
            best
        );
    }
    Ok(())
}
