//! Train-time image and sensor augmentations.
//!
//! Random shift acts on whole stacked observations so the mask planes move
//! with the RGB planes. Photometric changes and image mixing only ever see RGB.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::render::Image;

use super::Planar;

/// Replicate-pads by `pad` and crops the window whose top-left corner is
/// `(dx, dy)` in padded coordinates; `(pad, pad)` is the identity.
pub fn shift_into(
    src: &[f32],
    channels: usize,
    height: usize,
    width: usize,
    pad: usize,
    dx: usize,
    dy: usize,
    dst: &mut [f32],
) {
    let n = height * width;
    for c in 0..channels {
        let plane = &src[c * n..(c + 1) * n];
        let out = &mut dst[c * n..(c + 1) * n];
        for r in 0..height {
            let sr = (r + dy).saturating_sub(pad).min(height - 1);
            let row = &plane[sr * width..(sr + 1) * width];
            let orow = &mut out[r * width..(r + 1) * width];
            for (col, o) in orow.iter_mut().enumerate() {
                let sc = (col + dx).saturating_sub(pad).min(width - 1);
                *o = row[sc];
            }
        }
    }
}

pub fn shift(image: &Planar, pad: usize, dx: usize, dy: usize) -> Planar {
    let mut out = Planar::zeros(image.channels, image.height, image.width);
    shift_into(
        &image.data,
        image.channels,
        image.height,
        image.width,
        pad,
        dx,
        dy,
        &mut out.data,
    );
    out
}

/// Draws a shift uniformly from `{0..2·pad}²`.
pub fn sample_shift(pad: usize, rng: &mut impl Rng) -> (usize, usize) {
    (rng.gen_range(0..=2 * pad), rng.gen_range(0..=2 * pad))
}

pub fn random_shift(image: &Planar, pad: usize, rng: &mut impl Rng) -> Planar {
    let (dx, dy) = sample_shift(pad, rng);
    shift(image, pad, dx, dy)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhotometricFactors {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    /// Gaussian blur standard deviation in pixels; `None` disables blur.
    pub blur_sigma: Option<f64>,
}

impl PhotometricFactors {
    pub fn identity() -> Self {
        PhotometricFactors {
            brightness: 1.0,
            contrast: 1.0,
            saturation: 1.0,
            blur_sigma: None,
        }
    }
}

/// Sampling ranges for [`PhotometricFactors`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhotometricRanges {
    pub brightness: [f64; 2],
    pub contrast: [f64; 2],
    pub saturation: [f64; 2],
    pub blur_sigma: Option<[f64; 2]>,
}

impl Default for PhotometricRanges {
    fn default() -> Self {
        PhotometricRanges {
            brightness: [0.8, 1.2],
            contrast: [0.8, 1.2],
            saturation: [0.8, 1.2],
            blur_sigma: Some([0.8, 1.2]),
        }
    }
}

impl PhotometricRanges {
    pub fn sample(&self, rng: &mut impl Rng) -> PhotometricFactors {
        let mut draw = |[lo, hi]: [f64; 2]| if lo < hi { rng.gen_range(lo..=hi) } else { lo };
        PhotometricFactors {
            brightness: draw(self.brightness),
            contrast: draw(self.contrast),
            saturation: draw(self.saturation),
            blur_sigma: self.blur_sigma.map(&mut draw),
        }
    }

    pub fn admits(&self, f: &PhotometricFactors) -> bool {
        let inside = |v: f64, [lo, hi]: [f64; 2]| v >= lo && v <= hi;
        inside(f.brightness, self.brightness)
            && inside(f.contrast, self.contrast)
            && inside(f.saturation, self.saturation)
            && match (f.blur_sigma, self.blur_sigma) {
                (None, _) => true,
                (Some(s), Some(r)) => inside(s, r),
                (Some(_), None) => false,
            }
    }
}

fn luma(px: &[f32]) -> f32 {
    0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2]
}

/// Brightness, contrast, saturation, then blur; the result is clamped to [0,1].
/// Brightness multiplies each value, contrast blends with the mean luma and
/// saturation blends with per-pixel luma.
pub fn photometric_augment(image: &Image, f: &PhotometricFactors) -> Result<Image> {
    let finite = [f.brightness, f.contrast, f.saturation, f.blur_sigma.unwrap_or(1.0)];
    if finite.iter().any(|v| !v.is_finite() || *v < 0.0) || f.blur_sigma.is_some_and(|s| s <= 0.0) {
        return Err(Error::input(format!("invalid photometric factors {f:?}")));
    }
    let mut px = image.pixels.clone();
    let b = f.brightness as f32;
    px.iter_mut().for_each(|v| *v *= b);

    if f.contrast != 1.0 {
        let mean = px.chunks_exact(3).map(luma).sum::<f32>() / (image.width * image.height) as f32;
        let c = f.contrast as f32;
        px.iter_mut().for_each(|v| *v = mean + c * (*v - mean));
    }
    if f.saturation != 1.0 {
        let s = f.saturation as f32;
        for p in px.chunks_exact_mut(3) {
            let y = luma(p);
            p.iter_mut().for_each(|v| *v = y + s * (*v - y));
        }
    }
    let mut out = Image {
        width: image.width,
        height: image.height,
        pixels: px,
    };
    if let Some(sigma) = f.blur_sigma {
        out = gaussian_blur(&out, sigma);
    }
    out.pixels.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    Ok(out)
}

fn gaussian_kernel(sigma: f64) -> Vec<f32> {
    let radius = (2.0 * sigma).ceil().max(1.0) as i64;
    let raw: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|k| (k / total) as f32).collect()
}

/// Separable Gaussian blur with replicated borders.
pub fn gaussian_blur(image: &Image, sigma: f64) -> Image {
    let k = gaussian_kernel(sigma);
    let radius = (k.len() / 2) as i64;
    let (w, h) = (image.width as i64, image.height as i64);
    let pass = |src: &[f32], horizontal: bool| -> Vec<f32> {
        let mut dst = vec![0.0f32; src.len()];
        for r in 0..h {
            for c in 0..w {
                for ch in 0..3 {
                    let mut acc = 0.0f32;
                    for (j, kv) in k.iter().enumerate() {
                        let o = j as i64 - radius;
                        let (rr, cc) = if horizontal {
                            (r, (c + o).clamp(0, w - 1))
                        } else {
                            ((r + o).clamp(0, h - 1), c)
                        };
                        acc += kv * src[((rr * w + cc) * 3 + ch) as usize];
                    }
                    dst[((r * w + c) * 3 + ch) as usize] = acc;
                }
            }
        }
        dst
    };
    let tmp = pass(&image.pixels, true);
    Image {
        width: image.width,
        height: image.height,
        pixels: pass(&tmp, false),
    }
}

/// `alpha · sim + (1 − alpha) · real` per pixel and channel.
pub fn image_mix(sim: &Image, real: &Image, alpha: f64) -> Result<Image> {
    if !sim.same_size(real) {
        return Err(Error::input(format!(
            "cannot mix {}x{} with {}x{}",
            sim.width, sim.height, real.width, real.height
        )));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::input(format!("mix weight {alpha} outside [0,1]")));
    }
    let a = alpha as f32;
    Ok(Image {
        width: sim.width,
        height: sim.height,
        pixels: sim
            .pixels
            .iter()
            .zip(&real.pixels)
            .map(|(s, r)| a * s + (1.0 - a) * r)
            .collect(),
    })
}

/// Adds i.i.d. `N(0, sigma²)` noise to each reading.
pub fn sensor_noise(readings: &[f64], sigma: f64, rng: &mut impl Rng) -> Result<Vec<f64>> {
    if sigma == 0.0 {
        return Ok(readings.to_vec());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::input(format!("noise sigma {sigma}: {e}")))?;
    Ok(readings.iter().map(|q| q + normal.sample(rng)).collect())
}
