//! Composite a soft-edged foreground over a background, derive the guidance
//! mask from the matte, and perturb it the way training does.
//!
//! Writes the intermediate images as PNGs and prints the endpoint checks:
//! where alpha is 1 the composite equals the foreground, where it is 0 the
//! background.

use auxmatte::compose::{composite, make_guidance, perturb_guidance, PerturbParams};
use auxmatte::image::ImageF32;
use auxmatte::io::write_png;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let size = 96usize;
    let s = size as f32;

    // soft disc matte: 1 inside, 0 outside, a ~2 px fractional rim
    let mut alpha = ImageF32::new(size, size, 1);
    for y in 0..size {
        for x in 0..size {
            let d = ((x as f32 - 0.5 * s).powi(2) + (y as f32 - 0.45 * s).powi(2)).sqrt();
            let v = (0.30 * s - d + 1.0).clamp(0.0, 2.0) / 2.0;
            alpha.set(y, x, 0, v);
        }
    }

    // warm foreground, cool background gradients
    let mut fg = ImageF32::new(size, size, 3);
    let mut bg = ImageF32::new(size, size, 3);
    for y in 0..size {
        for x in 0..size {
            let fx = x as f32 / (s - 1.0);
            let fy = y as f32 / (s - 1.0);
            fg.set(y, x, 0, 0.85 + 0.15 * fx);
            fg.set(y, x, 1, 0.45 + 0.2 * fy);
            fg.set(y, x, 2, 0.10);
            bg.set(y, x, 0, 0.10);
            bg.set(y, x, 1, 0.35 + 0.2 * fx);
            bg.set(y, x, 2, 0.80 + 0.2 * fy);
        }
    }

    let img = composite(&fg, &bg, &alpha)?;

    let mut max_opaque_err = 0.0f32;
    let mut max_clear_err = 0.0f32;
    for y in 0..size {
        for x in 0..size {
            for c in 0..3 {
                let a = alpha.at(y, x, 0);
                if a == 1.0 {
                    max_opaque_err = max_opaque_err.max((img.at(y, x, c) - fg.at(y, x, c)).abs());
                } else if a == 0.0 {
                    max_clear_err = max_clear_err.max((img.at(y, x, c) - bg.at(y, x, c)).abs());
                }
            }
        }
    }
    println!("composite == foreground where alpha=1: max abs err {max_opaque_err:.2e}");
    println!("composite == background where alpha=0: max abs err {max_clear_err:.2e}");

    let clean = make_guidance(&alpha, 0.95, 21)?;
    let noisy = perturb_guidance(&clean, None, 7, &PerturbParams::default())?;
    let kept: usize = clean.data.iter().filter(|&&v| v == 1.0).count();
    println!(
        "guidance keeps {kept} of {} pixels after threshold 0.95 + erode 21",
        size * size
    );

    let dir = std::env::temp_dir().join("auxmatte_compose_sample");
    std::fs::create_dir_all(&dir)?;
    write_png(&dir.join("alpha.png"), &alpha)?;
    write_png(&dir.join("composite.png"), &img)?;
    write_png(&dir.join("guidance_clean.png"), &clean)?;
    write_png(&dir.join("guidance_perturbed.png"), &noisy)?;
    println!("wrote PNGs to {}", dir.display());
    Ok(())
}
