//! Mask-conditioned reaching from pixels: a desk-scale arm simulator,
//! eye-in-hand renderer, goal encodings, mask-size rewards and a pixel
//! soft actor-critic learner.
//!
//! The guide in `book/` walks through each module; its code blocks run as
//! doctests of this crate.

pub mod env;
pub mod error;
pub mod goal;
pub mod harness;
pub mod nn;
pub mod render;
pub mod rewards;
pub mod sac;
pub mod sim;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/scene.md")]
    mod scene {}
    #[doc = include_str!("../../../book/src/goals.md")]
    mod goals {}
    #[doc = include_str!("../../../book/src/rewards.md")]
    mod rewards {}
    #[doc = include_str!("../../../book/src/networks.md")]
    mod networks {}
    #[doc = include_str!("../../../book/src/learner.md")]
    mod learner {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
