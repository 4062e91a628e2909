//! Matting evaluation: SAD, MSE, gradient error, connectivity error, with a
//! whole-image and a detail-region report.
//!
//! Gradient error convolves both mattes with L2-normalized first-order
//! Gaussian-derivative kernels (sigma 1.4, replicate border) and sums the
//! squared difference of gradient magnitudes. Connectivity error sweeps
//! thresholds 0.1..=1.0, tracks for every pixel the last threshold at which
//! it belonged to the largest 4-connected component of `pred >= t & gt >= t`,
//! and compares the degradation maps with the standard 0.15 floor. SAD and
//! connectivity are reported in kilo-units.

use crate::error::{Error, Result};
use crate::image::{BinaryMask, ImageF32};
use crate::imageops::dilate;
use crate::io::read_png;
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::Path;

pub const GRAD_SIGMA: f32 = 1.4;
pub const CONN_STEP: f32 = 0.1;
pub const CONN_FLOOR: f32 = 0.15;
pub const DETAIL_BAND: usize = 15;

fn check_pair(pred: &ImageF32, gt: &ImageF32) -> Result<()> {
    if pred.channels != 1 || gt.channels != 1 {
        return Err(Error::Shape("metrics expect single-channel mattes".into()));
    }
    if !pred.same_size(gt) {
        return Err(Error::Shape("matte sizes differ".into()));
    }
    Ok(())
}

/// Sum of absolute differences, in thousands.
pub fn sad(pred: &ImageF32, gt: &ImageF32) -> Result<f32> {
    check_pair(pred, gt)?;
    let s: f64 = pred
        .data
        .iter()
        .zip(gt.data.iter())
        .map(|(&p, &g)| (p - g).abs() as f64)
        .sum();
    Ok((s / 1000.0) as f32)
}

/// Plain mean squared error; table scaling happens at print time.
pub fn mse(pred: &ImageF32, gt: &ImageF32) -> Result<f32> {
    check_pair(pred, gt)?;
    let s: f64 = pred
        .data
        .iter()
        .zip(gt.data.iter())
        .map(|(&p, &g)| ((p - g) as f64).powi(2))
        .sum();
    Ok((s / pred.data.len() as f64) as f32)
}

/// 1D Gaussian and its derivative, evaluated on the odd support the sigma
/// needs; the pair is L2-normalized jointly like the standard evaluation
/// kernel.
fn gauss_pair(sigma: f32) -> (Vec<f64>, Vec<f64>, usize) {
    let s = sigma as f64;
    let eps = 1e-2f64;
    let half = (s * (-2.0 * (f64::sqrt(2.0 * std::f64::consts::PI) * s * eps).ln()).sqrt()).ceil()
        as usize;
    let n = 2 * half + 1;
    let mut g = vec![0.0f64; n];
    let mut dg = vec![0.0f64; n];
    for i in 0..n {
        let x = i as f64 - half as f64;
        let gv = (-x * x / (2.0 * s * s)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt());
        g[i] = gv;
        dg[i] = -x * gv / (s * s);
    }
    // ||outer(g, dg)||_F = ||g|| * ||dg||; fold the whole normalization into dg
    let ng: f64 = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    let ndg: f64 = dg.iter().map(|v| v * v).sum::<f64>().sqrt();
    for v in dg.iter_mut() {
        *v /= ng * ndg;
    }
    (g, dg, half)
}

/// Separable convolution with replicate border: rows with `kx`, then columns
/// with `ky`. True convolution, so the kernels are applied flipped.
fn sep_conv(img: &[f32], h: usize, w: usize, ky: &[f64], kx: &[f64], half: usize) -> Vec<f64> {
    let mut tmp = vec![0.0f64; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, &k) in kx.iter().enumerate() {
                // convolution: sample at x - (i - half)
                let sx = (x as isize - (i as isize - half as isize)).clamp(0, w as isize - 1);
                acc += k * img[y * w + sx as usize] as f64;
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0f64; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, &k) in ky.iter().enumerate() {
                let sy = (y as isize - (i as isize - half as isize)).clamp(0, h as isize - 1);
                acc += k * tmp[sy as usize * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

fn gradient_magnitude(img: &ImageF32, sigma: f32) -> Vec<f64> {
    let (g, dg, half) = gauss_pair(sigma);
    let gx = sep_conv(&img.data, img.height, img.width, &g, &dg, half);
    let gy = sep_conv(&img.data, img.height, img.width, &dg, &g, half);
    gx.iter()
        .zip(gy.iter())
        .map(|(&a, &b)| (a * a + b * b).sqrt())
        .collect()
}

/// Squared gradient-magnitude discrepancy, in thousands.
pub fn grad_error(pred: &ImageF32, gt: &ImageF32, sigma: f32) -> Result<f32> {
    check_pair(pred, gt)?;
    let gp = gradient_magnitude(pred, sigma);
    let gg = gradient_magnitude(gt, sigma);
    let s: f64 = gp
        .iter()
        .zip(gg.iter())
        .map(|(&a, &b)| (a - b).powi(2))
        .sum();
    Ok((s / 1000.0) as f32)
}

/// Largest 4-connected component of `mask`; ties resolved toward the
/// component whose first pixel comes earliest in row-major order.
fn largest_component(mask: &[bool], h: usize, w: usize) -> Vec<bool> {
    let mut label = vec![usize::MAX; h * w];
    let mut sizes: Vec<usize> = Vec::new();
    let mut stack = Vec::new();
    for start in 0..h * w {
        if !mask[start] || label[start] != usize::MAX {
            continue;
        }
        let id = sizes.len();
        let mut size = 0usize;
        stack.push(start);
        label[start] = id;
        while let Some(p) = stack.pop() {
            size += 1;
            let (y, x) = (p / w, p % w);
            let mut visit = |q: usize| {
                if mask[q] && label[q] == usize::MAX {
                    label[q] = id;
                    stack.push(q);
                }
            };
            if x > 0 {
                visit(p - 1);
            }
            if x + 1 < w {
                visit(p + 1);
            }
            if y > 0 {
                visit(p - w);
            }
            if y + 1 < h {
                visit(p + w);
            }
        }
        sizes.push(size);
    }
    let mut out = vec![false; h * w];
    if let Some(best) = (0..sizes.len()).max_by_key(|&i| (sizes[i], std::cmp::Reverse(i))) {
        for (o, &l) in out.iter_mut().zip(label.iter()) {
            *o = l == best;
        }
    }
    out
}

/// Per-pixel connectivity floor map: the last threshold at which the pixel was
/// inside the largest shared component; never-connected pixels keep the
/// threshold below their first exit, never-exiting pixels saturate at 1.
fn connectivity_floor(pred: &ImageF32, gt: &ImageF32, step: f32) -> Vec<f32> {
    let (h, w) = (pred.height, pred.width);
    let n = h * w;
    let mut l_map = vec![-1.0f32; n];
    let steps = (1.0 / step).round() as usize;
    for ii in 1..=steps {
        let th = ii as f32 * step;
        let inter: Vec<bool> = pred
            .data
            .iter()
            .zip(gt.data.iter())
            .map(|(&p, &g)| p >= th && g >= th)
            .collect();
        let omega = largest_component(&inter, h, w);
        for i in 0..n {
            if l_map[i] < 0.0 && !omega[i] {
                l_map[i] = th - step;
            }
        }
    }
    for v in l_map.iter_mut() {
        if *v < 0.0 {
            *v = 1.0;
        }
    }
    l_map
}

/// Connectivity degradation discrepancy, in thousands.
pub fn conn_error(pred: &ImageF32, gt: &ImageF32, step: f32) -> Result<f32> {
    check_pair(pred, gt)?;
    let l_map = connectivity_floor(pred, gt, step);
    let mut s = 0.0f64;
    for i in 0..l_map.len() {
        let dp = pred.data[i] - l_map[i];
        let dg = gt.data[i] - l_map[i];
        let phi_p = 1.0 - dp * if dp >= CONN_FLOOR { 1.0 } else { 0.0 };
        let phi_g = 1.0 - dg * if dg >= CONN_FLOOR { 1.0 } else { 0.0 };
        s += (phi_p - phi_g).abs() as f64;
    }
    Ok((s / 1000.0) as f32)
}

/// Soft-transition neighborhood of the ground truth: every strictly
/// fractional pixel dilated by an odd `band_k` kernel.
pub fn detail_region(gt: &ImageF32, band_k: usize) -> Result<BinaryMask> {
    if gt.channels != 1 {
        return Err(Error::Shape("detail region expects a single channel".into()));
    }
    if band_k % 2 == 0 {
        return Err(Error::InvalidArg("detail band must be odd".into()));
    }
    let mut soft = ImageF32::new(gt.height, gt.width, 1);
    for (o, &v) in soft.data.iter_mut().zip(gt.data.iter()) {
        *o = if v > 0.0 && v < 1.0 { 1.0 } else { 0.0 };
    }
    dilate(&soft, band_k)
}

#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct Metrics {
    pub sad: f32,
    pub mse: f32,
    pub grad: f32,
    pub conn: f32,
}

#[derive(Clone, Debug, Serialize)]
pub struct ImageEval {
    pub name: String,
    pub whole: Metrics,
    pub detail: Metrics,
}

#[derive(Clone, Debug, Serialize)]
pub struct EvalReport {
    pub count: usize,
    pub detail_band: usize,
    pub grad_sigma: f32,
    pub conn_step: f32,
    pub aggregate_whole: Metrics,
    pub aggregate_detail: Metrics,
    pub images: Vec<ImageEval>,
}

#[derive(Clone, Copy, Debug)]
pub struct EvalOptions {
    pub detail_band: usize,
    pub grad_sigma: f32,
    pub conn_step: f32,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            detail_band: DETAIL_BAND,
            grad_sigma: GRAD_SIGMA,
            conn_step: CONN_STEP,
        }
    }
}

/// Restriction of each metric to a region mask. SAD keeps its absolute sum
/// semantics; MSE averages over region pixels; grad and conn sum their
/// per-pixel discrepancies over the region only.
fn metrics_in_region(
    pred: &ImageF32,
    gt: &ImageF32,
    region: Option<&BinaryMask>,
    opts: &EvalOptions,
) -> Result<Metrics> {
    let keep = |i: usize| region.map(|r| r.data[i] >= 0.5).unwrap_or(true);
    let n_kept = (0..pred.data.len()).filter(|&i| keep(i)).count();
    if n_kept == 0 {
        return Ok(Metrics::default());
    }
    let mut sad_s = 0.0f64;
    let mut mse_s = 0.0f64;
    for i in 0..pred.data.len() {
        if keep(i) {
            let d = (pred.data[i] - gt.data[i]) as f64;
            sad_s += d.abs();
            mse_s += d * d;
        }
    }
    let gp = gradient_magnitude(pred, opts.grad_sigma);
    let gg = gradient_magnitude(gt, opts.grad_sigma);
    let mut grad_s = 0.0f64;
    for i in 0..gp.len() {
        if keep(i) {
            grad_s += (gp[i] - gg[i]).powi(2);
        }
    }
    let l_map = connectivity_floor(pred, gt, opts.conn_step);
    let mut conn_s = 0.0f64;
    for i in 0..l_map.len() {
        if keep(i) {
            let dp = pred.data[i] - l_map[i];
            let dg = gt.data[i] - l_map[i];
            let phi_p = 1.0 - dp * if dp >= CONN_FLOOR { 1.0 } else { 0.0 };
            let phi_g = 1.0 - dg * if dg >= CONN_FLOOR { 1.0 } else { 0.0 };
            conn_s += (phi_p - phi_g).abs() as f64;
        }
    }
    Ok(Metrics {
        sad: (sad_s / 1000.0) as f32,
        mse: (mse_s / n_kept as f64) as f32,
        grad: (grad_s / 1000.0) as f32,
        conn: (conn_s / 1000.0) as f32,
    })
}

/// Whole-image and detail-region metrics for one pair.
pub fn evaluate_pair(pred: &ImageF32, gt: &ImageF32, opts: &EvalOptions) -> Result<(Metrics, Metrics)> {
    check_pair(pred, gt)?;
    let whole = metrics_in_region(pred, gt, None, opts)?;
    let region = detail_region(gt, opts.detail_band)?;
    let detail = metrics_in_region(pred, gt, Some(&region), opts)?;
    Ok((whole, detail))
}

fn gray_png(path: &Path) -> Result<ImageF32> {
    let img = read_png(path)?;
    Ok(if img.channels == 1 { img } else { img.to_gray() })
}

/// Pair every `*.png` in `pred_dir` with its namesake in `gt_dir` and
/// aggregate by arithmetic mean.
pub fn evaluate(pred_dir: &Path, gt_dir: &Path, opts: &EvalOptions) -> Result<EvalReport> {
    let mut preds: BTreeMap<String, std::path::PathBuf> = BTreeMap::new();
    for entry in std::fs::read_dir(pred_dir).map_err(|e| Error::io(pred_dir, e))? {
        let entry = entry.map_err(|e| Error::io(pred_dir, e))?;
        let p = entry.path();
        if p.extension().and_then(|e| e.to_str()) == Some("png") {
            preds.insert(
                p.file_name().unwrap().to_string_lossy().into_owned(),
                p,
            );
        }
    }
    if preds.is_empty() {
        return Err(Error::InvalidArg(format!(
            "no .png predictions in {}",
            pred_dir.display()
        )));
    }
    let mut images = Vec::new();
    let mut agg_w = [0.0f64; 4];
    let mut agg_d = [0.0f64; 4];
    for (name, ppath) in &preds {
        let gpath = gt_dir.join(name);
        if !gpath.exists() {
            return Err(Error::Verification(format!(
                "no ground truth for {name} in {}",
                gt_dir.display()
            )));
        }
        let pred = gray_png(ppath)?;
        let gt = gray_png(&gpath)?;
        let (whole, detail) = evaluate_pair(&pred, &gt, opts)?;
        for (acc, v) in agg_w
            .iter_mut()
            .zip([whole.sad, whole.mse, whole.grad, whole.conn])
        {
            *acc += v as f64;
        }
        for (acc, v) in agg_d
            .iter_mut()
            .zip([detail.sad, detail.mse, detail.grad, detail.conn])
        {
            *acc += v as f64;
        }
        images.push(ImageEval {
            name: name.clone(),
            whole,
            detail,
        });
    }
    let n = images.len() as f64;
    let mk = |a: &[f64; 4]| Metrics {
        sad: (a[0] / n) as f32,
        mse: (a[1] / n) as f32,
        grad: (a[2] / n) as f32,
        conn: (a[3] / n) as f32,
    };
    Ok(EvalReport {
        count: images.len(),
        detail_band: opts.detail_band,
        grad_sigma: opts.grad_sigma,
        conn_step: opts.conn_step,
        aggregate_whole: mk(&agg_w),
        aggregate_detail: mk(&agg_d),
        images,
    })
}

impl EvalReport {
    /// Fixed-column table with the whole-image block left and the detail
    /// block right.
    pub fn table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<20} {:>8} {:>9} {:>8} {:>8} | {:>8} {:>9} {:>8} {:>8}\n",
            "image", "SAD", "MSE", "Grad", "Conn", "SAD", "MSE", "Grad", "Conn"
        ));
        let row = |name: &str, w: &Metrics, d: &Metrics| {
            format!(
                "{:<20} {:>8.4} {:>9.6} {:>8.4} {:>8.4} | {:>8.4} {:>9.6} {:>8.4} {:>8.4}\n",
                name, w.sad, w.mse, w.grad, w.conn, d.sad, d.mse, d.grad, d.conn
            )
        };
        for img in &self.images {
            out.push_str(&row(&img.name, &img.whole, &img.detail));
        }
        out.push_str(&row(
            "aggregate",
            &self.aggregate_whole,
            &self.aggregate_detail,
        ));
        out
    }
}
