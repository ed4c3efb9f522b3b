//! PNG input and output for frames, masks and the real-image pool.

use std::path::{Path, PathBuf};

use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::render::Image;

use super::Mask;

/// Loads an externally produced mask for `step`, thresholding at half
/// intensity and resizing by nearest neighbour when the size differs.
pub fn mask_from_file(path: &Path, step: usize, width: usize, height: usize) -> Result<Mask> {
    let decoded = image::open(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        message: format!("step {step}: {e}"),
    })?;
    let gray = decoded.to_luma8();
    let (sw, sh) = (gray.width() as usize, gray.height() as usize);
    if sw == 0 || sh == 0 {
        return Err(Error::Io {
            path: path.to_path_buf(),
            message: format!("step {step}: empty image"),
        });
    }
    Ok(Mask::from_fn(width, height, |r, c| {
        let sr = r * sh / height;
        let sc = c * sw / width;
        gray.get_pixel(sc as u32, sr as u32).0[0] > 127
    }))
}

/// `<dir>/<prefix><step:06>.png`, the naming used for per-step mask files.
pub fn step_file(dir: &Path, prefix: &str, step: usize) -> PathBuf {
    dir.join(format!("{prefix}{step:06}.png"))
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn rgb_to_png(img: &Image) -> RgbImage {
    ImageBuffer::from_fn(img.width as u32, img.height as u32, |x, y| {
        let p = img.get(y as usize, x as usize);
        Rgb([to_u8(p[0]), to_u8(p[1]), to_u8(p[2])])
    })
}

pub fn mask_to_png(mask: &Mask) -> GrayImage {
    ImageBuffer::from_fn(mask.width as u32, mask.height as u32, |x, y| {
        Luma([if mask.get(y as usize, x as usize) { 255 } else { 0 }])
    })
}

pub fn save_rgb(img: &Image, path: &Path) -> Result<()> {
    rgb_to_png(img).save(path).map_err(|e| Error::io(path, e))
}

pub fn save_mask(mask: &Mask, path: &Path) -> Result<()> {
    mask_to_png(mask).save(path).map_err(|e| Error::io(path, e))
}

/// Loads an RGB PNG into [0,1] floats, resized by nearest neighbour.
pub fn load_rgb(path: &Path, width: usize, height: usize) -> Result<Image> {
    let rgb = image::open(path).map_err(|e| Error::io(path, e))?.to_rgb8();
    let (sw, sh) = (rgb.width() as usize, rgb.height() as usize);
    let mut out = Image::filled(width, height, [0.0; 3]);
    for r in 0..height {
        for c in 0..width {
            let p = rgb.get_pixel((c * sw / width) as u32, (r * sh / height) as u32).0;
            out.set(r, c, p.map(|v| f32::from(v) / 255.0));
        }
    }
    Ok(out)
}

/// Every `*.png` in `dir`, sorted by file name for deterministic pools.
pub fn load_image_pool(dir: &Path, width: usize, height: usize) -> Result<Vec<Image>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::io(dir, "no PNG images found"));
    }
    paths.iter().map(|p| load_rgb(p, width, height)).collect()
}
