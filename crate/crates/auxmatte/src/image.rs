//! Raster container shared by the whole pipeline.
//!
//! An [`ImageF32`] is a row-major, channel-last buffer of `f32` samples.
//! Images, alpha mattes, binary masks, and activation maps are all carried
//! by the same type; masks are the special case `channels == 1` with every
//! sample in `{0.0, 1.0}`.

use crate::error::{Error, Result};

/// H x W x C floating-point raster. Sample index: `(y * width + x) * channels + c`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageF32 {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl ImageF32 {
    /// All-zero image.
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        assert!(channels >= 1 && channels <= 3, "channels must be 1..=3");
        Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    /// Constant-valued image.
    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Self {
        let mut img = Self::new(height, width, channels);
        img.data.fill(value);
        img
    }

    /// Wrap an existing buffer; `data.len()` must equal `height * width * channels`.
    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "buffer of {} samples does not fit {}x{}x{}",
                data.len(),
                height,
                width,
                channels
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, value: f32) {
        self.data[(y * self.width + x) * self.channels + c] = value;
    }

    /// Sample with coordinates clamped to the frame (replicate border).
    #[inline]
    pub fn at_clamped(&self, y: isize, x: isize, c: usize) -> f32 {
        let yy = y.clamp(0, self.height as isize - 1) as usize;
        let xx = x.clamp(0, self.width as isize - 1) as usize;
        self.at(yy, xx, c)
    }

    pub fn same_size(&self, other: &ImageF32) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// True when every sample is 0.0 or 1.0 and the image is single-channel.
    pub fn is_binary_mask(&self) -> bool {
        self.channels == 1 && self.data.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    /// Mean over all samples.
    pub fn mean(&self) -> f32 {
        if self.data.is_empty() {
            return 0.0;
        }
        let sum: f64 = self.data.iter().map(|&v| v as f64).sum();
        (sum / self.data.len() as f64) as f32
    }

    /// Repack interleaved samples as channel planes (CHW), the layout the
    /// network's tensors use.
    pub fn to_planar(&self) -> Vec<f32> {
        let n = self.height * self.width;
        let mut out = vec![0.0f32; self.channels * n];
        for p in 0..n {
            for c in 0..self.channels {
                out[c * n + p] = self.data[p * self.channels + c];
            }
        }
        out
    }

    /// Channel-mean grayscale copy of an image; 1-channel images pass through.
    pub fn to_gray(&self) -> ImageF32 {
        if self.channels == 1 {
            return self.clone();
        }
        let mut out = ImageF32::new(self.height, self.width, 1);
        let c = self.channels as f32;
        for i in 0..self.height * self.width {
            let base = i * self.channels;
            let sum: f32 = self.data[base..base + self.channels].iter().sum();
            out.data[i] = sum / c;
        }
        out
    }
}

/// A binary mask is an `ImageF32` with one channel and values in {0, 1}.
pub type BinaryMask = ImageF32;
