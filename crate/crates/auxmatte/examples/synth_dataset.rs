//! Generate a few deterministic training samples per task and summarize
//! what supervision each bundle carries.
//!
//! Matting samples carry the matte, segmentation samples a binary mask and
//! its edge band, background-line samples the line supervision with its
//! validity mask plus the distance field it came from.

use auxmatte::io::{write_field, write_png};
use auxmatte::net::synth::synth_sample;
use auxmatte::net::Task;
use auxmatte::seeds::derive_seed;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("auxmatte_synth_dataset");
    std::fs::create_dir_all(&dir)?;

    for task in [Task::MattingData, Task::SegData, Task::BgLine] {
        for i in 0..2u64 {
            let b = synth_sample(task, derive_seed(11, i), 64)?;
            let stem = format!("{}_{i}", b.task.name());
            write_png(&dir.join(format!("{stem}_image.png")), &b.image)?;
            write_png(&dir.join(format!("{stem}_guidance.png")), &b.guidance)?;
            let mut parts = Vec::new();
            if let Some(a) = &b.alpha {
                write_png(&dir.join(format!("{stem}_alpha.png")), a)?;
                let soft = a.data.iter().filter(|&&v| v > 0.0 && v < 1.0).count();
                parts.push(format!("alpha ({soft} soft px)"));
            }
            if let Some(s) = &b.seg {
                write_png(&dir.join(format!("{stem}_seg.png")), s)?;
                parts.push(format!(
                    "seg ({:.0}% on)",
                    100.0 * s.mean()
                ));
            }
            if let Some(e) = &b.edge {
                write_png(&dir.join(format!("{stem}_edge.png")), e)?;
                parts.push("edge".into());
            }
            if let Some(bl) = &b.bl {
                let ignored = bl.valid.data.iter().filter(|&&v| v == 0.0).count();
                parts.push(format!("line gt ({ignored} ignored px)"));
            }
            if let Some(d) = &b.dist {
                let min = d.d.iter().fold(f32::INFINITY, |m, &v| m.min(v));
                write_field(
                    &dir.join(format!("{stem}_dist.fld")),
                    &auxmatte::image::ImageF32::from_vec(d.height, d.width, 1, d.d.clone())?,
                )?;
                parts.push(format!("distance field (min {min:.1} px)"));
            }
            println!("{stem}: {}", parts.join(", "));
        }
    }
    println!("files in {}", dir.display());
    Ok(())
}
