//! File I/O: 8-bit PNG for images and masks, and the FLD1 container for
//! float fields.
//!
//! FLD1 layout: bytes 0-3 `"FLD1"`, then height, width, channels as u32
//! little-endian, then `h*w*c` f32 little-endian samples, row-major and
//! channel-last. Write-then-read reproduces the float data bit for bit.
//!
//! PNG samples map linearly to [0,1] as `x / 255`; writing quantizes with
//! round-half-up, so 0.5 stores as byte 128.

use crate::error::{Error, Result};
use crate::image::ImageF32;
use std::fs;
use std::io::Write;
use std::path::Path;

const FLD1_MAGIC: &[u8; 4] = b"FLD1";

/// Write `bytes` to `path` through a temp file in the same directory, renaming
/// on success so partial outputs are never left behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp-partial");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    let res = f
        .write_all(bytes)
        .and_then(|_| f.flush())
        .map_err(|e| Error::io(&tmp, e));
    drop(f);
    if let Err(e) = res {
        let _ = fs::remove_file(&tmp);
        return Err(e);
    }
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

/// Read an 8-bit grayscale or RGB PNG into [0,1] floats.
pub fn read_png(path: &Path) -> Result<ImageF32> {
    let dynimg = image::open(path).map_err(|e| Error::Png {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    match dynimg {
        image::DynamicImage::ImageLuma8(img) => {
            let (w, h) = (img.width() as usize, img.height() as usize);
            let data = img.into_raw().iter().map(|&b| b as f32 / 255.0).collect();
            ImageF32::from_vec(h, w, 1, data)
        }
        image::DynamicImage::ImageRgb8(img) => {
            let (w, h) = (img.width() as usize, img.height() as usize);
            let data = img.into_raw().iter().map(|&b| b as f32 / 255.0).collect();
            ImageF32::from_vec(h, w, 3, data)
        }
        other => Err(Error::Format(format!(
            "{}: unsupported PNG color type {:?}; expected 8-bit grayscale or RGB",
            path.display(),
            other.color()
        ))),
    }
}

fn quantize(v: f32) -> u8 {
    // round-half-up on [0,1]
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

/// Encode to an 8-bit PNG (grayscale for 1 channel, RGB for 3) and write
/// atomically.
pub fn write_png(path: &Path, img: &ImageF32) -> Result<()> {
    let bytes: Vec<u8> = img.data.iter().map(|&v| quantize(v)).collect();
    let (w, h) = (img.width as u32, img.height as u32);
    let mut encoded = Vec::new();
    let encoder = image::codecs::png::PngEncoder::new(&mut encoded);
    use image::ImageEncoder;
    let color = match img.channels {
        1 => image::ExtendedColorType::L8,
        3 => image::ExtendedColorType::Rgb8,
        c => {
            return Err(Error::Format(format!(
                "cannot write {c}-channel image as PNG; expected 1 or 3"
            )))
        }
    };
    encoder
        .write_image(&bytes, w, h, color)
        .map_err(|e| Error::Png {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    write_atomic(path, &encoded)
}

/// Read an FLD1 float field.
pub fn read_field(path: &Path) -> Result<ImageF32> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 || &bytes[0..4] != FLD1_MAGIC {
        return Err(Error::Format(format!(
            "{}: not an FLD1 file",
            path.display()
        )));
    }
    let h = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let w = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let c = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let expected = 16 + h * w * c * 4;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "{}: FLD1 payload is {} bytes, expected {} for {}x{}x{}",
            path.display(),
            bytes.len(),
            expected,
            h,
            w,
            c
        )));
    }
    let data = bytes[16..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    ImageF32::from_vec(h, w, c, data)
}

/// Write an FLD1 float field atomically.
pub fn write_field(path: &Path, img: &ImageF32) -> Result<()> {
    let mut bytes = Vec::with_capacity(16 + img.data.len() * 4);
    bytes.extend_from_slice(FLD1_MAGIC);
    bytes.extend_from_slice(&(img.height as u32).to_le_bytes());
    bytes.extend_from_slice(&(img.width as u32).to_le_bytes());
    bytes.extend_from_slice(&(img.channels as u32).to_le_bytes());
    for &v in &img.data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write_atomic(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn field_round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.fld");
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data: Vec<f32> = (0..5 * 4 * 2).map(|_| rng.gen::<f32>() * 100.0 - 50.0).collect();
        let img = ImageF32::from_vec(5, 4, 2, data).unwrap();
        write_field(&path, &img).unwrap();
        let back = read_field(&path).unwrap();
        assert_eq!(back.height, 5);
        assert_eq!(back.width, 4);
        assert_eq!(back.channels, 2);
        for (a, b) in img.data.iter().zip(back.data.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn png_round_trip_exact_on_representable_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("i.png");
        let img = ImageF32::from_vec(1, 3, 1, vec![0.0, 128.0 / 255.0, 1.0]).unwrap();
        write_png(&path, &img).unwrap();
        let back = read_png(&path).unwrap();
        assert_eq!(back.data, img.data);
    }

    #[test]
    fn png_quantizes_half_up() {
        assert_eq!(quantize(0.5), 128);
        assert_eq!(quantize(0.0), 0);
        assert_eq!(quantize(1.0), 255);
    }

    #[test]
    fn rgb_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rgb.png");
        let img =
            ImageF32::from_vec(2, 1, 3, vec![0.0, 0.5, 1.0, 1.0, 0.25, 0.75]).unwrap();
        write_png(&path, &img).unwrap();
        let back = read_png(&path).unwrap();
        assert_eq!(back.channels, 3);
        for (a, b) in img.data.iter().zip(back.data.iter()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.fld");
        std::fs::write(&path, b"NOPE").unwrap();
        assert!(read_field(&path).is_err());
    }

    #[test]
    fn atomic_write_leaves_no_temp() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.bin");
        write_atomic(&path, b"hello").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"hello");
        let entries: Vec<_> = std::fs::read_dir(dir.path()).unwrap().collect();
        assert_eq!(entries.len(), 1);
    }
}
