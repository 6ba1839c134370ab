//! Conversion between 8-bit RGB images and `[3, 32, 32]` tensors in `[-1, 1]`.

use std::io::Cursor;
use std::path::Path;

use image::{ImageFormat, RgbImage};

use crate::error::{Error, Result};
use crate::model::{IMAGE_CHANNELS, IMAGE_SIZE};
use crate::tensor::Tensor;

pub fn load_image(path: &Path) -> Result<RgbImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_image(&bytes)
}

/// Decodes any supported image (PNG) to 8-bit RGB.
pub fn decode_image(bytes: &[u8]) -> Result<RgbImage> {
    Ok(image::load_from_memory(bytes)?.to_rgb8())
}

pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

pub fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    let bytes = encode_png(img)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Bilinear resampling with half-pixel centres, per channel.
pub fn resize_bilinear(img: &RgbImage, width: u32, height: u32) -> Vec<[f32; 3]> {
    let (sw, sh) = (img.width() as usize, img.height() as usize);
    let sx = sw as f32 / width as f32;
    let sy = sh as f32 / height as f32;
    let axis = |i: usize, scale: f32, len: usize| {
        let pos = ((i as f32 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f32);
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(len - 1);
        (lo, hi, pos - lo as f32)
    };
    let mut out = Vec::with_capacity(width as usize * height as usize);
    for y in 0..height as usize {
        let (y0, y1, fy) = axis(y, sy, sh);
        for x in 0..width as usize {
            let (x0, x1, fx) = axis(x, sx, sw);
            let px = |xx: usize, yy: usize| img.get_pixel(xx as u32, yy as u32).0;
            let (a, b, c, d) = (px(x0, y0), px(x1, y0), px(x0, y1), px(x1, y1));
            let mut rgb = [0.0; 3];
            for ch in 0..3 {
                let top = a[ch] as f32 * (1.0 - fx) + b[ch] as f32 * fx;
                let bottom = c[ch] as f32 * (1.0 - fx) + d[ch] as f32 * fx;
                rgb[ch] = top * (1.0 - fy) + bottom * fy;
            }
            out.push(rgb);
        }
    }
    out
}

/// Resizes to 32×32 if needed and maps `[0, 255]` to `[-1, 1]`, channel-first.
pub fn preprocess(img: &RgbImage) -> Tensor<f32> {
    let side = IMAGE_SIZE as u32;
    let pixels: Vec<[f32; 3]> = if img.dimensions() == (side, side) {
        img.pixels().map(|p| p.0.map(f32::from)).collect()
    } else {
        resize_bilinear(img, side, side)
    };
    let area = IMAGE_SIZE * IMAGE_SIZE;
    let mut data = vec![0.0f32; IMAGE_CHANNELS * area];
    for (i, rgb) in pixels.iter().enumerate() {
        for ch in 0..IMAGE_CHANNELS {
            data[ch * area + i] = rgb[ch] / 255.0 * 2.0 - 1.0;
        }
    }
    Tensor::new(&[IMAGE_CHANNELS, IMAGE_SIZE, IMAGE_SIZE], data).expect("fixed shape")
}

/// Inverse of [`preprocess`] with clamping; accepts `[3,H,W]` or `[1,3,H,W]`.
pub fn postprocess(t: &Tensor<f32>) -> Result<RgbImage> {
    let s = t.shape();
    let (h, w) = match s {
        [3, h, w] | [1, 3, h, w] => (*h, *w),
        _ => {
            return Err(Error::Shape(format!(
                "postprocess expects [3, H, W] or [1, 3, H, W], got {s:?}"
            )))
        }
    };
    let area = h * w;
    let data = t.data();
    Ok(RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        image::Rgb([0, 1, 2].map(|ch| to_byte(data[ch * area + i])))
    }))
}

#[inline]
fn to_byte(v: f32) -> u8 {
    ((v + 1.0) * 0.5 * 255.0).round().clamp(0.0, 255.0) as u8
}
