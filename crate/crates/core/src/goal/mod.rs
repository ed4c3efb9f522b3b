//! Goal representations, observation frames and image augmentation.

pub mod augment;
mod color;
mod encode;
pub mod files;
mod frame;
mod mask;

pub use color::{color_filter_mask, rgb_to_hsv, HueWindow};
pub use encode::{
    embedding_path, encode_goal, one_hot, read_embedding, render_close_up, write_embedding, GoalMode, GoalPayload,
    GoalSources, CLOSE_UP_SIZE, EMBEDDING_DIM, ONE_HOT_DIM,
};
pub use frame::{
    append_mask, rgb_frame, split_frame, stack_frames, Frame, FrameStack, PackedFrame, Planar, STACK_DEPTH,
};
pub use mask::{mask_within_roi, roi_filter, Mask, RoiRect};
