//! Per-step frames and the three-frame observation stack.
//!
//! Network inputs are channel-major (`C × H × W`). A mask-mode frame carries
//! four planes `[R, G, B, mask]`; the stacked observation orders frames newest
//! first, giving `[R_t G_t B_t M_t, R_{t-1} .. M_{t-1}, R_{t-2} .. M_{t-2}]`.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::render::Image;

use super::Mask;

pub const STACK_DEPTH: usize = 3;

/// Channel-major float image.
#[derive(Debug, Clone, PartialEq)]
pub struct Planar {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Planar {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Planar {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.height * self.width;
        &mut self.data[c * n..(c + 1) * n]
    }
}

/// Channels `[R, G, B]` or `[R, G, B, mask]` of one time step.
pub type Frame = Planar;

/// Appends the mask as a fourth plane; mask pixels become 0.0 or 1.0.
pub fn append_mask(rgb: &Image, mask: &Mask) -> Result<Frame> {
    if rgb.width != mask.width || rgb.height != mask.height {
        return Err(Error::input(format!(
            "mask is {}x{} but image is {}x{}",
            mask.width, mask.height, rgb.width, rgb.height
        )));
    }
    let mut f = rgb_frame(rgb, 4);
    for (dst, b) in f.plane_mut(3).iter_mut().zip(mask.bits()) {
        *dst = if *b { 1.0 } else { 0.0 };
    }
    Ok(f)
}

/// RGB-only frame used by goal modes without a mask channel.
pub fn rgb_frame(rgb: &Image, channels: usize) -> Frame {
    let (h, w) = (rgb.height, rgb.width);
    let mut f = Planar::zeros(channels, h, w);
    for (i, px) in rgb.pixels.chunks_exact(3).enumerate() {
        for c in 0..3 {
            f.data[c * h * w + i] = px[c];
        }
    }
    f
}

/// Inverse of [`append_mask`] / [`rgb_frame`].
pub fn split_frame(frame: &Frame) -> (Image, Option<Mask>) {
    let (h, w) = (frame.height, frame.width);
    let mut img = Image::filled(w, h, [0.0; 3]);
    for i in 0..h * w {
        for c in 0..3 {
            img.pixels[i * 3 + c] = frame.data[c * h * w + i];
        }
    }
    let mask = (frame.channels == 4).then(|| Mask::from_fn(w, h, |r, c| frame.plane(3)[r * w + c] > 0.5));
    (img, mask)
}

/// 8-bit storage form of a frame, used by the replay store.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedFrame {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    data: Vec<u8>,
}

impl PackedFrame {
    pub fn pack(frame: &Frame) -> Self {
        PackedFrame {
            channels: frame.channels,
            height: frame.height,
            width: frame.width,
            data: frame
                .data
                .iter()
                .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn unpack_into(&self, out: &mut [f32]) {
        for (o, v) in out.iter_mut().zip(&self.data) {
            *o = f32::from(*v) * (1.0 / 255.0);
        }
    }

    pub fn unpack(&self) -> Frame {
        let mut f = Planar::zeros(self.channels, self.height, self.width);
        self.unpack_into(&mut f.data);
        f
    }
}

/// Ring of the most recent frames, newest first.
#[derive(Debug, Clone, Default)]
pub struct FrameStack {
    frames: Vec<Arc<PackedFrame>>,
}

impl FrameStack {
    /// Starts an episode: the first frame fills every slot.
    pub fn reset(&mut self, first: PackedFrame) {
        let f = Arc::new(first);
        self.frames = vec![f; STACK_DEPTH];
    }

    pub fn push(&mut self, frame: PackedFrame) {
        self.frames.insert(0, Arc::new(frame));
        self.frames.truncate(STACK_DEPTH);
    }

    pub fn frames(&self) -> &[Arc<PackedFrame>] {
        &self.frames
    }

    pub fn snapshot(&self) -> Result<[Arc<PackedFrame>; STACK_DEPTH]> {
        stack_slots(&self.frames)
    }
}

fn stack_slots(ring: &[Arc<PackedFrame>]) -> Result<[Arc<PackedFrame>; STACK_DEPTH]> {
    let oldest = ring.last().ok_or_else(|| Error::state("frame ring is empty"))?;
    Ok(std::array::from_fn(|i| ring.get(i).unwrap_or(oldest).clone()))
}

/// Concatenates the ring (newest first) on the channel axis. Missing history
/// repeats the oldest available frame.
pub fn stack_frames(ring: &[Arc<PackedFrame>]) -> Result<Planar> {
    let slots = stack_slots(ring)?;
    let f0 = &slots[0];
    let mut out = Planar::zeros(f0.channels * STACK_DEPTH, f0.height, f0.width);
    for (i, f) in slots.iter().enumerate() {
        f.unpack_into(&mut out.data[i * f0.len()..(i + 1) * f0.len()]);
    }
    Ok(out)
}
