//! Image I/O, normalization, and protection-target construction.
//!
//! Decoded pixels are mapped to `[0, 1]` by dividing by 255; saving maps
//! `v` to `round(v * 255)`. The resize policy is fixed: scale the shorter
//! side to the requested size with bilinear interpolation, then center-crop
//! to a square. Only 8-bit inputs are accepted.

use std::path::Path;

use image::{imageops::FilterType, DynamicImage, GenericImageView, ImageFormat};

use crate::tensor::Tensor;
use crate::{Error, Result};

/// Loads a PNG or binary PPM as a 3-channel tensor in `[0, 1]`.
///
/// With `resize_to = Some(s)` the shorter side is scaled to `s` (bilinear)
/// and the long side center-cropped, yielding an `s x s` image.
pub fn load_image(path: impl AsRef<Path>, resize_to: Option<usize>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let img = image::load_from_memory(&bytes)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    tensor_from_dynamic(img, resize_to, path)
}

fn tensor_from_dynamic(
    img: DynamicImage,
    resize_to: Option<usize>,
    path: &Path,
) -> Result<Tensor> {
    // 8-bit variants only; 16-bit and float inputs are out of contract.
    let rgb = match img {
        DynamicImage::ImageRgb8(_)
        | DynamicImage::ImageRgba8(_)
        | DynamicImage::ImageLuma8(_)
        | DynamicImage::ImageLumaA8(_) => img.to_rgb8(),
        other => {
            return Err(Error::Format(format!(
                "{}: unsupported bit depth or color type {:?}",
                path.display(),
                other.color()
            )))
        }
    };
    let img = DynamicImage::ImageRgb8(rgb);
    let img = match resize_to {
        None => img,
        Some(s) => {
            if s == 0 {
                return Err(Error::Dimension("resize_to must be positive".into()));
            }
            let (w, h) = img.dimensions();
            let s32 = s as u32;
            // Scale the shorter side to s, keeping aspect ratio.
            let (nw, nh) = if w <= h {
                (s32, ((h as f64) * (s as f64) / (w as f64)).round() as u32)
            } else {
                (((w as f64) * (s as f64) / (h as f64)).round() as u32, s32)
            };
            let resized = img.resize_exact(nw, nh, FilterType::Triangle);
            let x0 = (nw - s32) / 2;
            let y0 = (nh - s32) / 2;
            resized.crop_imm(x0, y0, s32, s32)
        }
    };
    let (w, h) = img.dimensions();
    let rgb = img.to_rgb8();
    let mut t = Tensor::zeros(3, h as usize, w as usize);
    for (x, y, p) in rgb.enumerate_pixels() {
        for c in 0..3 {
            *t.at_mut(c, y as usize, x as usize) = p.0[c] as f64 / 255.0;
        }
    }
    Ok(t)
}

/// Writes a 1- or 3-channel image-valued tensor as an 8-bit PNG.
/// Values must already lie in `[0, 1]`; callers clip first.
pub fn save_image(img: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if img.c != 1 && img.c != 3 {
        return Err(Error::Dimension(format!(
            "save_image needs 1 or 3 channels, got {}",
            img.c
        )));
    }
    if !img.is_image_valued() {
        return Err(Error::Contract(
            "save_image requires values in [0,1]; clip before saving".into(),
        ));
    }
    let (w, h) = (img.w as u32, img.h as u32);
    let to_byte = |v: f64| (v * 255.0).round() as u8;
    let encoded: DynamicImage = if img.c == 1 {
        let mut buf = image::GrayImage::new(w, h);
        for (x, y, p) in buf.enumerate_pixels_mut() {
            p.0[0] = to_byte(img.at(0, y as usize, x as usize));
        }
        DynamicImage::ImageLuma8(buf)
    } else {
        let mut buf = image::RgbImage::new(w, h);
        for (x, y, p) in buf.enumerate_pixels_mut() {
            for c in 0..3 {
                p.0[c] = to_byte(img.at(c, y as usize, x as usize));
            }
        }
        DynamicImage::ImageRgb8(buf)
    };
    encoded
        .save_with_format(path, ImageFormat::Png)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Deterministic built-in protection target: a binary checkerboard with
/// `cell`-pixel squares, identical across the three channels, white in the
/// top-left cell.
pub fn make_target(height: usize, width: usize, cell: usize) -> Result<Tensor> {
    if height % 16 != 0 || width % 16 != 0 {
        return Err(Error::Dimension(format!(
            "target dims must be divisible by 16, got {height}x{width}"
        )));
    }
    if cell == 0 {
        return Err(Error::Dimension("cell size must be positive".into()));
    }
    let mut t = Tensor::zeros(3, height, width);
    for y in 0..height {
        for x in 0..width {
            let v = if ((y / cell) + (x / cell)) % 2 == 0 {
                1.0
            } else {
                0.0
            };
            for c in 0..3 {
                *t.at_mut(c, y, x) = v;
            }
        }
    }
    Ok(t)
}

/// Default 32-pixel checkerboard.
pub fn make_default_target(height: usize, width: usize) -> Result<Tensor> {
    make_target(height, width, 32)
}

/// Single-channel template mask: Rec.601 luminance of the target,
/// `0.299 R + 0.587 G + 0.114 B`, values stay in `[0, 1]`.
pub fn derive_mask(target: &Tensor) -> Result<Tensor> {
    target.expect_channels(3, "derive_mask target")?;
    let mut m = Tensor::zeros(1, target.h, target.w);
    for y in 0..target.h {
        for x in 0..target.w {
            m.data[y * target.w + x] = 0.299 * target.at(0, y, x)
                + 0.587 * target.at(1, y, x)
                + 0.114 * target.at(2, y, x);
        }
    }
    Ok(m)
}

/// Luminance plane of a 1- or 3-channel image (1-channel passes through).
pub fn luminance(img: &Tensor) -> Result<Tensor> {
    match img.c {
        1 => Ok(img.clone()),
        3 => derive_mask(img),
        c => Err(Error::Dimension(format!(
            "luminance needs 1 or 3 channels, got {c}"
        ))),
    }
}
