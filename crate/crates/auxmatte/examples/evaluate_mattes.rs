//! Score a predicted matte against ground truth with the four standard
//! matting metrics, whole-image and restricted to the soft detail band.
//!
//! The prediction is the truth with a small shift and a detached speck, so
//! every metric reacts: SAD/MSE to the changed values, the gradient error to
//! the displaced rim, the connectivity error to the speck.

use auxmatte::image::ImageF32;
use auxmatte::io::write_png;
use auxmatte::metrics::{evaluate, evaluate_pair, EvalOptions};

fn disc(size: usize, cx: f32, cy: f32, r: f32) -> ImageF32 {
    let mut img = ImageF32::new(size, size, 1);
    for y in 0..size {
        for x in 0..size {
            let d = ((x as f32 - cx).powi(2) + (y as f32 - cy).powi(2)).sqrt();
            img.set(y, x, 0, ((r - d + 1.0) / 2.0).clamp(0.0, 1.0));
        }
    }
    img
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let size = 48usize;
    let gt = disc(size, 24.0, 24.0, 12.0);
    let mut pred = disc(size, 25.5, 24.0, 12.0);
    pred.set(4, 4, 0, 0.9); // detached speck

    let opts = EvalOptions::default();
    let (whole, detail) = evaluate_pair(&pred, &gt, &opts)?;
    println!("whole : sad {:.4}  mse {:.6}  grad {:.5}  conn {:.5}", whole.sad, whole.mse, whole.grad, whole.conn);
    println!("detail: sad {:.4}  mse {:.6}  grad {:.5}  conn {:.5}", detail.sad, detail.mse, detail.grad, detail.conn);

    // the same pair through the directory interface
    let dir = std::env::temp_dir().join("auxmatte_evaluate_mattes");
    let (pd, gd) = (dir.join("pred"), dir.join("gt"));
    std::fs::create_dir_all(&pd)?;
    std::fs::create_dir_all(&gd)?;
    write_png(&pd.join("disc.png"), &pred)?;
    write_png(&gd.join("disc.png"), &gt)?;
    let report = evaluate(&pd, &gd, &opts)?;
    print!("{}", report.table());
    Ok(())
}
