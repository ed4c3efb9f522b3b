//! Hue/saturation/value thresholding.

use serde::{Deserialize, Serialize};

use crate::render::Image;

use super::Mask;

/// Hue interval in degrees. `start > end` wraps through 0°.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HueWindow {
    pub start: f64,
    pub end: f64,
}

impl HueWindow {
    pub fn centered(hue: f64, half_width: f64) -> Self {
        HueWindow {
            start: (hue - half_width).rem_euclid(360.0),
            end: (hue + half_width).rem_euclid(360.0),
        }
    }

    pub fn width(&self) -> f64 {
        (self.end - self.start).rem_euclid(360.0)
    }

    pub fn contains(&self, hue: f64) -> bool {
        let h = hue.rem_euclid(360.0);
        if self.start <= self.end {
            (self.start..=self.end).contains(&h)
        } else {
            h >= self.start || h <= self.end
        }
    }
}

/// Returns (hue degrees, saturation, value).
pub fn rgb_to_hsv([r, g, b]: [f64; 3]) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let hue = if delta == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    let sat = if max == 0.0 { 0.0 } else { delta / max };
    (hue, sat, max)
}

/// Endpoint representation keeps every window narrower than a full turn.
pub fn color_filter_mask(rgb: &Image, window: HueWindow, sat_min: f64, val_min: f64) -> Mask {
    Mask::from_fn(rgb.width, rgb.height, |r, c| {
        let (h, s, v) = rgb_to_hsv(rgb.get(r, c).map(f64::from));
        s >= sat_min && v >= val_min && window.contains(h)
    })
}
