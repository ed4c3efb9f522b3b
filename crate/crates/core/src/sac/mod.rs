//! Goal-conditioned soft actor-critic over image observations.
//!
//! The encoder is trained only through the critic loss; the actor sees its
//! output as a constant. Each critic regresses towards a target built from
//! the minimum over a random subset of Polyak-averaged target critics. Images
//! are randomly shifted when a batch is drawn from replay.

mod agent;
mod config;
pub mod policy;
mod replay;
mod train;

pub use agent::{encoder_spec, soft_target, ActorStats, Agent, CriticStats, UpdateStats};
pub use config::{ActorObjective, SacConfig, UpdateMode};
pub use replay::{Batch, ReplayStore, Transition};
pub use train::{EpisodeRecord, LossSummary, Sink, Trainer};
