//! PNG reading and writing for frames (8-bit RGB) and masks (8-bit, 0/255).

use std::path::Path;

use image::{GrayImage, ImageBuffer, Luma, Rgb};

use crate::error::{Error, Result};
use crate::raster::{Mask, RgbImage};

fn image_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

pub fn write_rgb_bytes(path: &Path, height: usize, width: usize, rgb: Vec<u8>) -> Result<()> {
    let buf: ImageBuffer<Rgb<u8>, _> = ImageBuffer::from_raw(width as u32, height as u32, rgb)
        .ok_or_else(|| image_err(path, "buffer size mismatch"))?;
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| image_err(path, e))
}

pub fn write_image(path: &Path, image: &RgbImage) -> Result<()> {
    write_rgb_bytes(path, image.height, image.width, image.to_bytes())
}

pub fn read_image(path: &Path) -> Result<RgbImage> {
    let img = image::open(path).map_err(|e| image_err(path, e))?.to_rgb8();
    let (w, h) = img.dimensions();
    RgbImage::from_rgb_bytes(h as usize, w as usize, img.as_raw())
}

pub fn write_mask(path: &Path, mask: &Mask) -> Result<()> {
    let buf: GrayImage =
        ImageBuffer::<Luma<u8>, _>::from_raw(mask.width as u32, mask.height as u32, mask.to_bytes())
            .ok_or_else(|| image_err(path, "buffer size mismatch"))?;
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| image_err(path, e))
}

pub fn read_mask(path: &Path) -> Result<Mask> {
    let img = image::open(path).map_err(|e| image_err(path, e))?.to_luma8();
    let (w, h) = img.dimensions();
    Mask::from_bytes(h as usize, w as usize, img.as_raw())
}

pub fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}
