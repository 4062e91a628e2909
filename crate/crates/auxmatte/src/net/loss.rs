//! Per-task training objectives.
//!
//! Matting data: L1 + Laplacian-pyramid loss at all three alpha heads against
//! the ground-truth matte resized to each head's resolution. Segmentation
//! data: BCE on the OS8 seg logits plus class-balanced cross-entropy on the
//! edge logits. Background lines: masked L1 on the line head inside the
//! near-line band (distance <= 13, ignore pixels excluded) plus masked L1 on
//! the full-resolution alpha inside the tight band (distance <= 3).

use super::{NetworkOutputs, SampleBundle, Task};
use crate::autodiff::{laplacian_loss, Graph, Real, Shape, Tensor};
use crate::error::{Error, Result};
use crate::pseudogt::{loss_region_mask, LINE_LOSS_RADIUS, MAT_LOSS_RADIUS};

/// Pyramid depth requested for matting losses; the pyramid itself caps depth
/// on small heads.
const LAP_LEVELS: usize = 5;

/// Itemized loss terms for one sample, in evaluation order.
#[derive(Clone, Debug)]
pub struct LossReport {
    pub task: Task,
    pub terms: Vec<(String, f64)>,
    pub total: f64,
    /// Raised when the near-line supervision band was empty.
    pub empty_line_region: bool,
}

/// Block-average downsample by an integer factor; exact for sides divisible
/// by the factor.
pub fn box_down(data: &[f32], h: usize, w: usize, f: usize) -> Vec<f32> {
    assert!(f >= 1 && h % f == 0 && w % f == 0, "box_down needs exact tiling");
    let (oh, ow) = (h / f, w / f);
    let mut out = vec![0.0f32; oh * ow];
    let inv = 1.0 / (f * f) as f32;
    for oy in 0..oh {
        for ox in 0..ow {
            let mut acc = 0.0;
            for dy in 0..f {
                for dx in 0..f {
                    acc += data[(oy * f + dy) * w + ox * f + dx];
                }
            }
            out[oy * ow + ox] = acc * inv;
        }
    }
    out
}

/// Majority-vote downsample of a binary mask: block mean >= 0.5 becomes 1.
/// Keeps the BCE optimum at exactly zero loss, which soft targets cannot.
pub fn majority_down(data: &[f32], h: usize, w: usize, f: usize) -> Vec<f32> {
    box_down(data, h, w, f)
        .into_iter()
        .map(|v| if v >= 0.5 { 1.0 } else { 0.0 })
        .collect()
}

fn to_real<F: Real>(v: &[f32]) -> Vec<F> {
    v.iter().map(|&x| F::from(x).unwrap()).collect()
}

/// Build the task objective on top of an existing forward graph. Returns the
/// scalar loss tensor plus a report with every term's value.
pub fn task_loss<F: Real>(
    g: &mut Graph<F>,
    outs: &NetworkOutputs,
    sample: &SampleBundle,
) -> Result<(Tensor, LossReport)> {
    sample.validate()?;
    let (h, w) = (sample.image.height, sample.image.width);
    let mut terms: Vec<(String, f64)> = Vec::new();
    let mut empty_line_region = false;
    let mut total: Option<Tensor> = None;

    let add_term = |g: &mut Graph<F>,
                        total: &mut Option<Tensor>,
                        terms: &mut Vec<(String, f64)>,
                        name: &str,
                        t: Tensor| {
        terms.push((name.to_string(), g.scalar_value(t).to_f64().unwrap()));
        *total = Some(match *total {
            Some(acc) => g.add(acc, t),
            None => t,
        });
    };

    match sample.task {
        Task::MattingData => {
            let alpha = sample.alpha.as_ref().unwrap();
            for (head, factor, tag) in [
                (outs.alpha_os8, 8usize, "os8"),
                (outs.alpha_os4, 4, "os4"),
                (outs.alpha_os1, 1, "os1"),
            ] {
                let gt = if factor == 1 {
                    alpha.data.clone()
                } else {
                    box_down(&alpha.data, h, w, factor)
                };
                let shape = Shape::chw(1, h / factor, w / factor);
                let gt_t = g.leaf(shape, to_real::<F>(&gt));
                let l1 = g.l1_loss(head, gt_t);
                add_term(g, &mut total, &mut terms, &format!("mat_l1_{tag}"), l1);
                let lap = laplacian_loss(g, head, gt_t, LAP_LEVELS);
                add_term(g, &mut total, &mut terms, &format!("mat_lap_{tag}"), lap);
            }
        }
        Task::SegData => {
            let seg = sample.seg.as_ref().unwrap();
            let edge = sample.edge.as_ref().unwrap();
            let seg8 = majority_down(&seg.data, h, w, 8);
            let bce = g.bce_loss(outs.seg_os8, &to_real::<F>(&seg8));
            add_term(g, &mut total, &mut terms, "seg_bce", bce);
            let wce = g.weighted_ce_loss(outs.edge_os1, &to_real::<F>(&edge.data));
            add_term(g, &mut total, &mut terms, "edge_wce", wce);
        }
        Task::BgLine => {
            let alpha = sample.alpha.as_ref().unwrap();
            let bl = sample.bl.as_ref().unwrap();
            let dist = sample.dist.as_ref().unwrap();

            let line_band = loss_region_mask(dist, LINE_LOSS_RADIUS);
            let line_mask: Vec<f32> = line_band
                .data
                .iter()
                .zip(bl.valid.data.iter())
                .map(|(&b, &v)| b * v)
                .collect();
            let (line_t, line_empty) = g.masked_l1_loss(
                outs.bgline_os1,
                &to_real::<F>(&bl.values.data),
                &to_real::<F>(&line_mask),
            );
            empty_line_region = line_empty;
            add_term(g, &mut total, &mut terms, "bg_line_l1", line_t);

            let mat_band = loss_region_mask(dist, MAT_LOSS_RADIUS);
            let (mat_t, _mat_empty) = g.masked_l1_loss(
                outs.alpha_os1,
                &to_real::<F>(&alpha.data),
                &to_real::<F>(&mat_band.data),
            );
            add_term(g, &mut total, &mut terms, "bg_mat_l1", mat_t);
        }
    }

    let total = total.ok_or_else(|| Error::InvalidArg("no loss terms built".into()))?;
    let report = LossReport {
        task: sample.task,
        terms,
        total: g.scalar_value(total).to_f64().unwrap(),
        empty_line_region,
    };
    Ok((total, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distfield::DistanceField;
    use crate::image::ImageF32;
    use crate::pseudogt::SupervisionMap;

    /// Outputs whose six heads are plain leaves, for loss-only tests.
    fn leaf_outputs(
        g: &mut Graph<f64>,
        h: usize,
        w: usize,
        alpha: &[f64],
        seg_logit: f64,
        edge_logit: f64,
        bgline: &[f64],
    ) -> NetworkOutputs {
        let a8 = box_down(
            &alpha.iter().map(|&v| v as f32).collect::<Vec<_>>(),
            h,
            w,
            8,
        );
        let a4 = box_down(
            &alpha.iter().map(|&v| v as f32).collect::<Vec<_>>(),
            h,
            w,
            4,
        );
        let alpha_os8 = g.leaf(Shape::chw(1, h / 8, w / 8), to_real::<f64>(&a8));
        let alpha_os4 = g.leaf(Shape::chw(1, h / 4, w / 4), to_real::<f64>(&a4));
        let alpha_os1 = g.leaf(Shape::chw(1, h, w), alpha.to_vec());
        let seg_os8 = g.leaf(Shape::chw(1, h / 8, w / 8), vec![seg_logit; h * w / 64]);
        let edge_os1 = g.leaf(Shape::chw(1, h, w), vec![edge_logit; h * w]);
        let bgline_os1 = g.leaf(Shape::chw(1, h, w), bgline.to_vec());
        let dummy = g.leaf(Shape::scalar(), vec![0.0]);
        NetworkOutputs {
            alpha_os8,
            alpha_os4,
            alpha_os1,
            seg_os8,
            edge_os1,
            bgline_os1,
            ma: dummy,
            se: dummy,
            in_map: dummy,
            delta: dummy,
        }
    }

    fn blob_alpha(h: usize, w: usize) -> ImageF32 {
        let mut a = ImageF32::new(h, w, 1);
        for y in 0..h {
            for x in 0..w {
                let d = ((y as f32 - h as f32 / 2.0).powi(2)
                    + (x as f32 - w as f32 / 2.0).powi(2))
                .sqrt();
                a.data[y * w + x] = (1.0 - (d - 8.0) / 3.0).clamp(0.0, 1.0);
            }
        }
        a
    }

    #[test]
    fn perfect_matting_predictions_cost_nothing() {
        let (h, w) = (32, 32);
        let alpha = blob_alpha(h, w);
        let sample = SampleBundle {
            task: Task::MattingData,
            image: ImageF32::new(h, w, 3),
            guidance: ImageF32::new(h, w, 1),
            alpha: Some(alpha.clone()),
            seg: None,
            edge: None,
            bl: None,
            dist: None,
        };
        let mut g: Graph<f64> = Graph::new();
        let af64: Vec<f64> = alpha.data.iter().map(|&v| v as f64).collect();
        let outs = leaf_outputs(&mut g, h, w, &af64, 0.0, 0.0, &vec![0.0; h * w]);
        let (_, report) = task_loss(&mut g, &outs, &sample).unwrap();
        assert!(
            report.total.abs() < 1e-9,
            "perfect predictions should cost ~0, got {}",
            report.total
        );
        assert_eq!(report.terms.len(), 6, "three heads, two terms each");
    }

    #[test]
    fn seg_loss_matches_hand_computation() {
        // 32x32 scene; seg GT is 1 on the left half so every 8x8 block is
        // uniform and majority downsample is exact; edge GT marks the top
        // quarter of the rows
        let (h, w) = (32, 32);
        let mut seg = ImageF32::new(h, w, 1);
        for y in 0..h {
            for x in 0..w / 2 {
                seg.data[y * w + x] = 1.0;
            }
        }
        let mut edge = ImageF32::new(h, w, 1);
        for y in 0..h / 4 {
            for x in 0..w {
                edge.data[y * w + x] = 1.0;
            }
        }
        let sample = SampleBundle {
            task: Task::SegData,
            image: ImageF32::new(h, w, 3),
            guidance: ImageF32::new(h, w, 1),
            alpha: None,
            seg: Some(seg),
            edge: Some(edge),
            bl: None,
            dist: None,
        };
        let z = 0.3f64;
        let ze = -0.2f64;
        let mut g: Graph<f64> = Graph::new();
        let outs = leaf_outputs(&mut g, h, w, &vec![0.0; h * w], z, ze, &vec![0.0; h * w]);
        let (_, report) = task_loss(&mut g, &outs, &sample).unwrap();

        // hand: stable bce = max(z,0) - z*t + ln(1+e^{-|z|}); half targets 1
        let bce_t1 = z.max(0.0) - z + (1.0 + (-z.abs()).exp()).ln();
        let bce_t0 = z.max(0.0) + (1.0 + (-z.abs()).exp()).ln();
        let want_bce = 0.5 * bce_t1 + 0.5 * bce_t0;
        // hand: quarter positives, w_pos = 0.75, w_neg = 0.25, mean over all
        let ce_t1 = ze.max(0.0) - ze + (1.0 + (-ze.abs()).exp()).ln();
        let ce_t0 = ze.max(0.0) + (1.0 + (-ze.abs()).exp()).ln();
        let want_wce = 0.25 * (0.75 * ce_t1) + 0.75 * (0.25 * ce_t0);

        let get = |name: &str| {
            report
                .terms
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, v)| *v)
                .unwrap()
        };
        assert!((get("seg_bce") - want_bce).abs() < 1e-6);
        assert!((get("edge_wce") - want_wce).abs() < 1e-6);
        assert!((report.total - want_bce - want_wce).abs() < 1e-6);
    }

    #[test]
    fn empty_line_band_leaves_only_the_matte_term() {
        let (h, w) = (32, 32);
        let alpha = blob_alpha(h, w);
        // distance field far beyond both thresholds except one tight spot
        let mut d = vec![60.0f32; h * w];
        d[5 * w + 5] = 2.0;
        // but the near-line band (<=13) is emptied by an all-ignore valid map
        let bl = SupervisionMap {
            values: ImageF32::new(h, w, 1),
            valid: ImageF32::new(h, w, 1),
        };
        let sample = SampleBundle {
            task: Task::BgLine,
            image: ImageF32::new(h, w, 3),
            guidance: ImageF32::new(h, w, 1),
            alpha: Some(alpha.clone()),
            seg: None,
            edge: None,
            bl: Some(bl),
            dist: Some(DistanceField {
                height: h,
                width: w,
                d,
            }),
        };
        let mut g: Graph<f64> = Graph::new();
        let af64: Vec<f64> = alpha.data.iter().map(|&v| v as f64).collect();
        let pred_alpha: Vec<f64> = af64.iter().map(|v| (v - 0.3).clamp(0.05, 0.95)).collect();
        let outs = leaf_outputs(&mut g, h, w, &pred_alpha, 0.0, 0.0, &vec![0.5; h * w]);
        let (_, report) = task_loss(&mut g, &outs, &sample).unwrap();
        assert!(report.empty_line_region);
        let get = |name: &str| {
            report
                .terms
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, v)| *v)
                .unwrap()
        };
        assert_eq!(get("bg_line_l1"), 0.0);
        // the single in-band pixel at (5,5): |pred - gt| there
        let want = (pred_alpha[5 * w + 5] - af64[5 * w + 5]).abs();
        assert!((get("bg_mat_l1") - want).abs() < 1e-9);
        assert!((report.total - want).abs() < 1e-9);
    }

    #[test]
    fn box_down_averages_blocks() {
        let data: Vec<f32> = (0..16).map(|v| v as f32).collect();
        let out = box_down(&data, 4, 4, 2);
        assert_eq!(out, vec![2.5, 4.5, 10.5, 12.5]);
        let maj = majority_down(&[1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0], 2, 4, 2);
        assert_eq!(maj, vec![1.0, 0.0]);
    }

    #[test]
    fn wrong_bundle_contents_are_rejected() {
        let sample = SampleBundle {
            task: Task::MattingData,
            image: ImageF32::new(32, 32, 3),
            guidance: ImageF32::new(32, 32, 1),
            alpha: None,
            seg: None,
            edge: None,
            bl: None,
            dist: None,
        };
        assert!(sample.validate().is_err());
    }
}
