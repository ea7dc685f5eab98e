//! 8-bit PNG conversion of `[C, H, W]` tensors in `[0, 1]`.

use std::path::Path;

use image::{ImageBuffer, Rgb, Rgba};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn planar_to_interleaved(t: &Tensor<f32>, channels: usize) -> Result<(u32, u32, Vec<u8>)> {
    let s = t.shape();
    if s.len() != 3 || s[0] != channels {
        return Err(Error::Data(format!("expected [{channels}, H, W] image, got {s:?}")));
    }
    let (h, w) = (s[1], s[2]);
    let mut buf = Vec::with_capacity(channels * h * w);
    for i in 0..h * w {
        for c in 0..channels {
            buf.push(quantize(t.data()[c * h * w + i]));
        }
    }
    Ok((w as u32, h as u32, buf))
}

fn interleaved_to_planar(buf: &[u8], channels: usize, w: usize, h: usize) -> Tensor<f32> {
    let mut out = vec![0.0f32; channels * h * w];
    for i in 0..h * w {
        for c in 0..channels {
            out[c * h * w + i] = buf[i * channels + c] as f32 / 255.0;
        }
    }
    Tensor::new(vec![channels, h, w], out).expect("sized")
}

fn save<P: image::Pixel<Subpixel = u8> + image::PixelWithColorType>(
    path: &Path,
    w: u32,
    h: u32,
    buf: Vec<u8>,
) -> Result<()>
where
    [P::Subpixel]: image::EncodableLayout,
{
    let img: ImageBuffer<P, Vec<u8>> = ImageBuffer::from_raw(w, h, buf).expect("sized buffer");
    img.save_with_format(path, image::ImageFormat::Png).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

fn open(path: &Path) -> Result<image::DynamicImage> {
    image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes a `[3, H, W]` sRGB tensor.
pub fn write_png(path: &Path, t: &Tensor<f32>) -> Result<()> {
    let (w, h, buf) = planar_to_interleaved(t, 3)?;
    save::<Rgb<u8>>(path, w, h, buf)
}

pub fn read_png(path: &Path) -> Result<Tensor<f32>> {
    let img = open(path)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(interleaved_to_planar(img.as_raw(), 3, w, h))
}

/// Writes a `[4, h, w]` RGGB mosaic as an RGBA PNG (R, G₁, G₂, B in the
/// R, G, B, A channels).
pub fn write_raw_png(path: &Path, t: &Tensor<f32>) -> Result<()> {
    let (w, h, buf) = planar_to_interleaved(t, 4)?;
    save::<Rgba<u8>>(path, w, h, buf)
}

pub fn read_raw_png(path: &Path) -> Result<Tensor<f32>> {
    let img = open(path)?.to_rgba8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(interleaved_to_planar(img.as_raw(), 4, w, h))
}
