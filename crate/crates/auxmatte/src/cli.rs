//! Command-line surface: every pipeline stage as its own subcommand.
//!
//! Exit codes: 0 success, 1 usage error, 2 i/o error, 3 verification
//! failure. Outputs are written atomically, so a crashed pipeline never
//! leaves a partial file behind. Every random choice flows from the
//! invocation's `--seed`.

use crate::autodiff::{check_named_op, checked_op_names, read_checkpoint, write_checkpoint, Graph};
use crate::compose::{composite, make_guidance};
use crate::distfield::{homography_adaptation, line_activation, DistanceField};
use crate::error::{Error, Result};
use crate::geometry::HomographyParams;
use crate::image::ImageF32;
use crate::io::{read_field, read_png, write_atomic, write_field, write_png};
use crate::lsd::{lsd_detect, LsdParams};
use crate::metrics::{evaluate, EvalOptions};
use crate::net::synth::synth_sample;
use crate::net::train::{train, write_curves_csv, TrainConfig};
use crate::net::{Network, Task};
use crate::pseudogt::background_line_gt;
use crate::seeds::derive_seed;
use clap::{Parser, Subcommand, ValueEnum};
use std::fmt::Write as _;
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "auxmatte", about = "matting pipeline stages", disable_version_flag = true)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum TaskArg {
    Matting,
    Seg,
    Bgline,
}

impl TaskArg {
    fn task(self) -> Task {
        match self {
            TaskArg::Matting => Task::MattingData,
            TaskArg::Seg => Task::SegData,
            TaskArg::Bgline => Task::BgLine,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Alpha-blend a foreground over a background.
    Composite {
        #[arg(long)]
        fg: PathBuf,
        #[arg(long)]
        bg: PathBuf,
        #[arg(long)]
        alpha: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Threshold-and-erode an alpha matte into a guidance mask.
    Guidance {
        #[arg(long)]
        alpha: PathBuf,
        #[arg(long, default_value_t = 0.95)]
        threshold: f32,
        #[arg(long, default_value_t = 21)]
        erode: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Detect line segments in an image; writes a CSV of endpoints.
    Lsd {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out_segments: PathBuf,
        #[arg(long, default_value_t = 22.5)]
        angle_tol: f32,
        #[arg(long, default_value_t = 0.7)]
        min_density: f32,
        #[arg(long, default_value_t = 8.0)]
        min_length: f32,
        #[arg(long, default_value_t = 0.7)]
        mag_quantile: f32,
    },
    /// Median line distance field over random homography branches.
    Homoadapt {
        #[arg(long)]
        image: PathBuf,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_distance: PathBuf,
    },
    /// Background-line supervision from a distance field and an alpha matte.
    Pseudogt {
        #[arg(long)]
        distance: PathBuf,
        #[arg(long)]
        alpha: PathBuf,
        #[arg(long)]
        out_bl: PathBuf,
    },
    /// Generate a synthetic training set for one task.
    Synth {
        #[arg(long, value_enum)]
        task: TaskArg,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train the multi-head network on the synthetic stream.
    Train {
        /// JSON config; omitted fields take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_checkpoint: PathBuf,
        #[arg(long)]
        out_curves: PathBuf,
    },
    /// Predict a full-resolution alpha matte from an image and guidance.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        guidance: PathBuf,
        #[arg(long)]
        out_alpha: PathBuf,
    },
    /// Score predicted mattes against ground truth, whole and detail region.
    Eval {
        #[arg(long)]
        pred_dir: PathBuf,
        #[arg(long)]
        gt_dir: PathBuf,
        #[arg(long)]
        out_report: PathBuf,
        #[arg(long, default_value_t = 15)]
        detail_band: usize,
    },
    /// Finite-difference audit of every differentiable op.
    Gradcheck {
        #[arg(long, default_value = "all")]
        op: String,
    },
}

/// Parse argv and dispatch; the return value is the process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.cmd) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Io { .. } | Error::Png { .. } | Error::Format(_) => 2,
                Error::Shape(_) | Error::InvalidArg(_) => 1,
                Error::Verification(_) => 3,
            }
        }
    }
}

fn dispatch(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Composite { fg, bg, alpha, out } => {
            let fg = read_png(&fg)?;
            let bg = read_png(&bg)?;
            let alpha = read_png(&alpha)?;
            let img = composite(&fg, &bg, &alpha)?;
            write_png(&out, &img)
        }
        Cmd::Guidance { alpha, threshold, erode, out } => {
            let alpha = read_png(&alpha)?;
            let mask = make_guidance(&alpha, threshold, erode)?;
            write_png(&out, &mask)
        }
        Cmd::Lsd { image, out_segments, angle_tol, min_density, min_length, mag_quantile } => {
            let gray = read_png(&image)?.to_gray();
            let params = LsdParams {
                angle_tol_deg: angle_tol,
                min_density,
                min_length,
                mag_quantile,
            };
            let segs = lsd_detect(&gray, &params)?;
            let mut csv = String::from("x1,y1,x2,y2\n");
            for s in &segs {
                let _ = writeln!(csv, "{},{},{},{}", s.x1, s.y1, s.x2, s.y2);
            }
            write_atomic(&out_segments, csv.as_bytes())?;
            println!("{} segments", segs.len());
            Ok(())
        }
        Cmd::Homoadapt { image, n, seed, out_distance } => {
            let gray = read_png(&image)?.to_gray();
            let field = homography_adaptation(
                &gray,
                n,
                seed,
                &LsdParams::default(),
                &HomographyParams::default(),
            )?;
            write_field(&out_distance, &field_to_image(&field))
        }
        Cmd::Pseudogt { distance, alpha, out_bl } => {
            let field = image_to_field(&read_field(&distance)?)?;
            let alpha = read_png(&alpha)?;
            let pl = line_activation(&field);
            let bl = background_line_gt(&pl, &alpha)?;
            let mut packed = ImageF32::new(bl.values.height, bl.values.width, 2);
            for p in 0..bl.values.data.len() {
                packed.data[2 * p] = bl.values.data[p];
                packed.data[2 * p + 1] = bl.valid.data[p];
            }
            write_field(&out_bl, &packed)
        }
        Cmd::Synth { task, n, seed, out_dir } => {
            std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
            for i in 0..n {
                let b = synth_sample(task.task(), derive_seed(seed, i as u64), 64)?;
                let stem = |name: &str, ext: &str| out_dir.join(format!("s{i:04}_{name}.{ext}"));
                write_png(&stem("image", "png"), &b.image)?;
                write_png(&stem("guidance", "png"), &b.guidance)?;
                if let Some(a) = &b.alpha {
                    write_png(&stem("alpha", "png"), a)?;
                }
                if let Some(s) = &b.seg {
                    write_png(&stem("seg", "png"), s)?;
                }
                if let Some(e) = &b.edge {
                    write_png(&stem("edge", "png"), e)?;
                }
                if let Some(bl) = &b.bl {
                    let mut packed = ImageF32::new(bl.values.height, bl.values.width, 2);
                    for p in 0..bl.values.data.len() {
                        packed.data[2 * p] = bl.values.data[p];
                        packed.data[2 * p + 1] = bl.valid.data[p];
                    }
                    write_field(&stem("bl", "fld"), &packed)?;
                }
                if let Some(d) = &b.dist {
                    write_field(&stem("dist", "fld"), &field_to_image(d))?;
                }
            }
            println!("{n} samples in {}", out_dir.display());
            Ok(())
        }
        Cmd::Train { config, out_checkpoint, out_curves } => {
            let cfg: TrainConfig = match config {
                Some(p) => {
                    let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
                    serde_json::from_str(&text)
                        .map_err(|e| Error::Format(format!("{}: {e}", p.display())))?
                }
                None => TrainConfig::default(),
            };
            let result = train(&cfg)?;
            write_checkpoint(&out_checkpoint, &result.network.to_entries())?;
            write_curves_csv(&out_curves, &result.curves)?;
            println!(
                "trained {} steps, {} params, checkpoint {}",
                cfg.steps,
                result.network.param_count(),
                out_checkpoint.display()
            );
            Ok(())
        }
        Cmd::Infer { checkpoint, image, guidance, out_alpha } => {
            let entries = read_checkpoint(&checkpoint)?;
            let net: Network<f32> = Network::from_entries(&entries)?;
            let image = read_png(&image)?;
            let guidance = read_png(&guidance)?.to_gray();
            if image.channels != 3 {
                return Err(Error::Shape("infer expects an RGB image".into()));
            }
            if guidance.height != image.height || guidance.width != image.width {
                return Err(Error::Shape("guidance size must match the image".into()));
            }
            let (h, w) = (image.height, image.width);
            let ph = h.div_ceil(32) * 32;
            let pw = w.div_ceil(32) * 32;
            let image_p = pad_replicate(&image, ph, pw);
            let guidance_p = pad_replicate(&guidance, ph, pw);
            let mut g: Graph<f32> = Graph::new();
            let handles =
                net.forward(&mut g, &image_p.to_planar(), &guidance_p.data, ph, pw)?;
            let pred = g.data(handles.outputs.alpha_os1);
            let mut out = ImageF32::new(h, w, 1);
            for y in 0..h {
                for x in 0..w {
                    out.data[y * w + x] = pred[y * pw + x];
                }
            }
            write_png(&out_alpha, &out)
        }
        Cmd::Eval { pred_dir, gt_dir, out_report, detail_band } => {
            let opts = EvalOptions {
                detail_band,
                ..EvalOptions::default()
            };
            let report = evaluate(&pred_dir, &gt_dir, &opts)?;
            let json = serde_json::to_string_pretty(&report)
                .map_err(|e| Error::Format(format!("report serialization: {e}")))?;
            write_atomic(&out_report, json.as_bytes())?;
            print!("{}", report.table());
            Ok(())
        }
        Cmd::Gradcheck { op } => {
            let names = checked_op_names();
            let selected: Vec<&str> = if op == "all" {
                names
            } else if names.contains(&op.as_str()) {
                vec![names[names.iter().position(|n| *n == op).unwrap()]]
            } else {
                return Err(Error::InvalidArg(format!(
                    "unknown op {op:?}; expected \"all\" or one of {names:?}"
                )));
            };
            let mut failed = Vec::new();
            for name in selected {
                let mut worst = 0.0f64;
                let mut tol = 0.0f64;
                for seed in [0u64, 1, 2] {
                    let r = check_named_op(name, seed)?;
                    worst = worst.max(r.max_rel_err);
                    tol = r.tol;
                }
                let ok = worst <= tol;
                println!(
                    "{name:<12} max_rel_err {worst:.3e}  tol {tol:.0e}  {}",
                    if ok { "ok" } else { "FAIL" }
                );
                if !ok {
                    failed.push(name);
                }
            }
            if failed.is_empty() {
                Ok(())
            } else {
                Err(Error::Verification(format!(
                    "gradient check failed for {failed:?}"
                )))
            }
        }
    }
}

fn field_to_image(field: &DistanceField) -> ImageF32 {
    ImageF32::from_vec(field.height, field.width, 1, field.d.clone())
        .expect("distance field dimensions are consistent")
}

fn image_to_field(img: &ImageF32) -> Result<DistanceField> {
    if img.channels != 1 {
        return Err(Error::Shape(format!(
            "distance field must have 1 channel, got {}",
            img.channels
        )));
    }
    Ok(DistanceField {
        height: img.height,
        width: img.width,
        d: img.data.clone(),
    })
}

/// Extend an image to `(ph, pw)` by repeating its last row/column, so
/// padding does not inject spurious edges.
fn pad_replicate(img: &ImageF32, ph: usize, pw: usize) -> ImageF32 {
    let mut out = ImageF32::new(ph, pw, img.channels);
    for y in 0..ph {
        let sy = y.min(img.height - 1);
        for x in 0..pw {
            let sx = x.min(img.width - 1);
            for c in 0..img.channels {
                out.set(y, x, c, img.at(sy, sx, c));
            }
        }
    }
    out
}
