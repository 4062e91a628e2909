//! Basic image operations: square-kernel morphology, Gaussian blur and noise,
//! and bilinear resampling.
//!
//! Border policy is replicate throughout, so constant images are fixed points
//! of every filter here. All operations are pure; the noise op takes an
//! explicit seed.

use crate::error::{Error, Result};
use crate::image::{BinaryMask, ImageF32};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn check_odd_kernel(k: usize) -> Result<()> {
    if k < 1 || k % 2 == 0 {
        return Err(Error::InvalidArg(format!(
            "kernel side must be odd and >= 1, got {k}"
        )));
    }
    Ok(())
}

/// Running min/max over a sliding window of length `k`, indices clamped to the
/// valid range (replicate border). `select` picks min or max.
fn filter_1d(line: &[f32], k: usize, out: &mut [f32], select: fn(f32, f32) -> f32) {
    let n = line.len();
    let r = (k / 2) as isize;
    for i in 0..n {
        let lo = (i as isize - r).max(0) as usize;
        let hi = ((i as isize + r) as usize).min(n - 1);
        let mut acc = line[lo];
        for &v in &line[lo + 1..=hi] {
            acc = select(acc, v);
        }
        out[i] = acc;
    }
}

fn morph(mask: &BinaryMask, k: usize, select: fn(f32, f32) -> f32) -> Result<BinaryMask> {
    check_odd_kernel(k)?;
    if mask.channels != 1 {
        return Err(Error::Shape("morphology expects a single-channel mask".into()));
    }
    let (h, w) = (mask.height, mask.width);
    let mut tmp = ImageF32::new(h, w, 1);
    let mut row_out = vec![0.0f32; w];
    for y in 0..h {
        let row = &mask.data[y * w..(y + 1) * w];
        filter_1d(row, k, &mut row_out, select);
        tmp.data[y * w..(y + 1) * w].copy_from_slice(&row_out);
    }
    let mut out = ImageF32::new(h, w, 1);
    let mut col = vec![0.0f32; h];
    let mut col_out = vec![0.0f32; h];
    for x in 0..w {
        for y in 0..h {
            col[y] = tmp.data[y * w + x];
        }
        filter_1d(&col, k, &mut col_out, select);
        for y in 0..h {
            out.data[y * w + x] = col_out[y];
        }
    }
    Ok(out)
}

/// Minimum filter over a k x k window (replicate border).
pub fn erode(mask: &BinaryMask, k: usize) -> Result<BinaryMask> {
    morph(mask, k, f32::min)
}

/// Maximum filter over a k x k window (replicate border).
pub fn dilate(mask: &BinaryMask, k: usize) -> Result<BinaryMask> {
    morph(mask, k, f32::max)
}

/// Minimum filter that treats everything outside the frame as 0, so a kernel
/// reaching past the border always erodes. Guidance-mask generation uses this
/// variant: the frame boundary counts as background there.
pub fn erode_zero_border(mask: &BinaryMask, k: usize) -> Result<BinaryMask> {
    check_odd_kernel(k)?;
    if mask.channels != 1 {
        return Err(Error::Shape("morphology expects a single-channel mask".into()));
    }
    let (h, w) = (mask.height, mask.width);
    let r = (k / 2) as isize;
    let mut out = ImageF32::new(h, w, 1);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 1.0f32;
            'win: for dy in -r..=r {
                for dx in -r..=r {
                    let yy = y as isize + dy;
                    let xx = x as isize + dx;
                    let v = if yy < 0 || yy >= h as isize || xx < 0 || xx >= w as isize {
                        0.0
                    } else {
                        mask.data[yy as usize * w + xx as usize]
                    };
                    acc = acc.min(v);
                    if acc == 0.0 {
                        break 'win;
                    }
                }
            }
            out.data[y * w + x] = acc;
        }
    }
    Ok(out)
}

/// Truncated Gaussian kernel with radius `ceil(3 sigma)`, normalized to sum 1.
fn gaussian_kernel(sigma: f32) -> Vec<f32> {
    let r = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f32> = (-r..=r)
        .map(|i| (-((i * i) as f32) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f32 = k.iter().sum();
    for v in k.iter_mut() {
        *v /= sum;
    }
    k
}

/// Separable Gaussian blur, replicate border.
pub fn gaussian_blur(img: &ImageF32, sigma: f32) -> Result<ImageF32> {
    if sigma <= 0.0 {
        return Err(Error::InvalidArg(format!("sigma must be > 0, got {sigma}")));
    }
    let kernel = gaussian_kernel(sigma);
    let r = (kernel.len() / 2) as isize;
    let (h, w, c) = (img.height, img.width, img.channels);

    let mut tmp = ImageF32::new(h, w, c);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0f32;
                for (ki, &kv) in kernel.iter().enumerate() {
                    let xx = x as isize + ki as isize - r;
                    acc += kv * img.at_clamped(y as isize, xx, ch);
                }
                tmp.set(y, x, ch, acc);
            }
        }
    }
    let mut out = ImageF32::new(h, w, c);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0f32;
                for (ki, &kv) in kernel.iter().enumerate() {
                    let yy = y as isize + ki as isize - r;
                    acc += kv * tmp.at_clamped(yy, x as isize, ch);
                }
                out.set(y, x, ch, acc);
            }
        }
    }
    Ok(out)
}

/// Add i.i.d. N(0, sigma^2) to every sample and clamp to [0, 1].
/// Deterministic for a given seed.
pub fn add_gaussian_noise(img: &ImageF32, sigma: f32, seed: u64) -> Result<ImageF32> {
    if sigma < 0.0 {
        return Err(Error::InvalidArg(format!("sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0f32, sigma).expect("sigma checked above");
    let mut out = img.clone();
    for v in out.data.iter_mut() {
        *v = (*v + normal.sample(&mut rng)).clamp(0.0, 1.0);
    }
    Ok(out)
}

/// Bilinear resize with the align-corners-false convention:
/// `src = (dst + 0.5) * (src_size / dst_size) - 0.5`, clamped into the frame.
pub fn resize_bilinear(img: &ImageF32, new_h: usize, new_w: usize) -> Result<ImageF32> {
    if new_h < 1 || new_w < 1 {
        return Err(Error::InvalidArg("target size must be >= 1".into()));
    }
    if new_h == img.height && new_w == img.width {
        return Ok(img.clone());
    }
    let (h, w, c) = (img.height, img.width, img.channels);
    let sy = h as f32 / new_h as f32;
    let sx = w as f32 / new_w as f32;
    let mut out = ImageF32::new(new_h, new_w, c);
    for dy in 0..new_h {
        let fy = ((dy as f32 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f32);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let wy = fy - y0 as f32;
        for dx in 0..new_w {
            let fx = ((dx as f32 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f32);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let wx = fx - x0 as f32;
            for ch in 0..c {
                let v00 = img.at(y0, x0, ch);
                let v01 = img.at(y0, x1, ch);
                let v10 = img.at(y1, x0, ch);
                let v11 = img.at(y1, x1, ch);
                let top = v00 + (v01 - v00) * wx;
                let bot = v10 + (v11 - v10) * wx;
                out.set(dy, dx, ch, top + (bot - top) * wy);
            }
        }
    }
    Ok(out)
}
