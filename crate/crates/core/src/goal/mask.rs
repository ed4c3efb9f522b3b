use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Single-channel binary image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn zeros(width: usize, height: usize) -> Self {
        Mask {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for r in 0..height {
            for c in 0..width {
                bits.push(f(r, c));
            }
        }
        Mask { width, height, bits }
    }

    pub fn from_rows(rows: &[&[u8]]) -> Self {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.len());
        Mask::from_fn(width, height, |r, c| rows[r][c] != 0)
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: bool) {
        self.bits[row * self.width + col] = v;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }

    pub fn intersection_over_union(&self, other: &Mask) -> f64 {
        let (mut inter, mut union) = (0usize, 0usize);
        for (a, b) in self.bits.iter().zip(&other.bits) {
            inter += usize::from(*a && *b);
            union += usize::from(*a || *b);
        }
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }
}

/// Pixel rectangle `[u_min, u_max) × [v_min, v_max)`; u indexes columns, v rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoiRect {
    pub u_min: usize,
    pub v_min: usize,
    pub u_max: usize,
    pub v_max: usize,
}

impl RoiRect {
    /// Rectangle from fractions of the image size.
    pub fn from_fractions(width: usize, height: usize, u: [f64; 2], v: [f64; 2]) -> Self {
        let px = |f: f64, n: usize| ((f * n as f64).round() as usize).min(n);
        RoiRect {
            u_min: px(u[0], width),
            u_max: px(u[1], width),
            v_min: px(v[0], height),
            v_max: px(v[1], height),
        }
    }

    /// Horizontally centered, 30% of the width, rows from 55% to 90% of the height.
    pub fn between_fingers(width: usize, height: usize) -> Self {
        RoiRect::from_fractions(width, height, [0.35, 0.65], [0.55, 0.90])
    }

    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        if self.u_min < self.u_max && self.u_max <= width && self.v_min < self.v_max && self.v_max <= height {
            Ok(())
        } else {
            Err(Error::input(format!(
                "invalid ROI {self:?} for a {width}x{height} image"
            )))
        }
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        (self.u_min..self.u_max).contains(&col) && (self.v_min..self.v_max).contains(&row)
    }

    pub fn is_border(&self, row: usize, col: usize) -> bool {
        self.contains(row, col)
            && (row == self.v_min || row + 1 == self.v_max || col == self.u_min || col + 1 == self.u_max)
    }
}

/// Keeps only the mask pixels inside the ROI.
pub fn roi_filter(mask: &Mask, roi: &RoiRect) -> Result<Mask> {
    roi.validate(mask.width, mask.height)?;
    Ok(Mask::from_fn(mask.width, mask.height, |r, c| {
        mask.get(r, c) && roi.contains(r, c)
    }))
}

/// True when the mask is non-empty and every active pixel lies inside the ROI.
pub fn mask_within_roi(mask: &Mask, roi: &RoiRect) -> bool {
    let mut any = false;
    for r in 0..mask.height {
        for c in 0..mask.width {
            if mask.get(r, c) {
                if !roi.contains(r, c) {
                    return false;
                }
                any = true;
            }
        }
    }
    any
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roi_inside_and_outside() {
        let roi = RoiRect {
            u_min: 2,
            v_min: 2,
            u_max: 6,
            v_max: 5,
        };
        let inside = Mask::from_fn(8, 8, |r, c| (3..5).contains(&r) && (3..5).contains(&c));
        assert_eq!(roi_filter(&inside, &roi).unwrap(), inside);
        assert!(mask_within_roi(&inside, &roi));
        let outside = Mask::from_fn(8, 8, |r, c| r == 7 && c < 3);
        assert!(roi_filter(&outside, &roi).unwrap().is_empty());
        assert!(!mask_within_roi(&outside, &roi));
    }

    #[test]
    fn roi_keeps_exactly_contained_pixels() {
        // Ten-pixel horizontal blob on row 3, columns 0..10; ROI covers columns 4..8.
        let roi = RoiRect {
            u_min: 4,
            v_min: 0,
            u_max: 8,
            v_max: 6,
        };
        let blob = Mask::from_fn(12, 6, |r, c| r == 3 && c < 10);
        assert_eq!(blob.count(), 10);
        let out = roi_filter(&blob, &roi).unwrap();
        // Per-pixel containment oracle.
        let mut expected = Mask::zeros(12, 6);
        for c in 0..10 {
            if (4..8).contains(&c) {
                expected.set(3, c, true);
            }
        }
        assert_eq!(out, expected);
        assert_eq!(out.count(), 4);
    }

    #[test]
    fn invalid_roi_rejected() {
        let m = Mask::zeros(8, 8);
        assert!(roi_filter(
            &m,
            &RoiRect {
                u_min: 4,
                v_min: 0,
                u_max: 4,
                v_max: 3
            }
        )
        .is_err());
        assert!(roi_filter(
            &m,
            &RoiRect {
                u_min: 0,
                v_min: 0,
                u_max: 9,
                v_max: 3
            }
        )
        .is_err());
    }

    #[test]
    fn default_roi_geometry() {
        let roi = RoiRect::between_fingers(80, 45);
        assert_eq!(
            roi,
            RoiRect {
                u_min: 28,
                u_max: 52,
                v_min: 25,
                v_max: 41
            }
        );
        roi.validate(80, 45).unwrap();
    }
}
