use std::path::Path;

use crate::error::{Error, Result};
use crate::goal::files::{save_mask, save_rgb};
use crate::goal::{Mask, RoiRect};
use crate::render::{render_rgb, Image};
use crate::rewards::{RewardFamily, RewardTracker, StepSignals};
use crate::sim::Outcome;

use super::config::RunConfig;
use super::eval::write_file;
use super::policy::ScriptedOracle;

const FAMILIES: [RewardFamily; 4] = [
    RewardFamily::Sparse,
    RewardFamily::Distance,
    RewardFamily::Mask,
    RewardFamily::Pickup,
];

/// Paints the ROI border in mid-gray on a mask image.
pub fn mask_with_roi(mask: &Mask, roi: &RoiRect) -> Image {
    let mut img = Image::filled(mask.width, mask.height, [0.0; 3]);
    for r in 0..mask.height {
        for c in 0..mask.width {
            if mask.get(r, c) {
                img.set(r, c, [1.0; 3]);
            } else if roi.is_border(r, c) {
                img.set(r, c, [0.5; 3]);
            }
        }
    }
    img
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub distance: f64,
    pub mask_pixels: usize,
    /// Rewards in the order sparse, distance, mask, pick-up.
    pub rewards: [f64; 4],
}

/// Drives the scripted oracle for up to `steps` steps from `seed`, writing
/// `rgb_NNNNNN.png`, `mask_NNNNNN.png` and `rewards.csv` into `out`.
pub fn render_command(
    cfg: &RunConfig,
    seed: u64,
    steps: usize,
    out: &Path,
    roi_overlay: bool,
) -> Result<Vec<TraceRow>> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut env = cfg.environment(&cfg.pool_ids(), None)?;
    env.reset(seed)?;
    let roi = cfg
        .reward
        .roi
        .unwrap_or_default()
        .rect(cfg.camera.width, cfg.camera.height);
    let mut trackers: Vec<RewardTracker> = FAMILIES
        .iter()
        .map(|f| {
            RewardTracker::new(cfg.reward.clone()).map(|mut t| {
                t.config.family = *f;
                t
            })
        })
        .collect::<Result<_>>()?;
    let oracle = ScriptedOracle::default();
    let mut rows = Vec::new();
    let mut csv = String::from("step,distance,mask_pixels,sparse,distance_reward,mask_reward,pickup_reward\n");
    for step in 0..steps {
        let state = env.state().expect("reset").clone();
        if state.outcome != Outcome::Running {
            break;
        }
        let action = oracle.action(&env.sim, &state)?;
        let output = env.step(&action)?;
        let next = env.state().expect("stepped");
        let cam = env.camera(next);
        save_rgb(
            &render_rgb(next, &cam, &env.style),
            &out.join(format!("rgb_{step:06}.png")),
        )?;
        let mask = env.last_mask().clone();
        let mask_path = out.join(format!("mask_{step:06}.png"));
        if roi_overlay {
            save_rgb(&mask_with_roi(&mask, &roi), &mask_path)?;
        } else {
            save_mask(&mask, &mask_path)?;
        }
        let signals = StepSignals {
            distance: output.distance,
            reached: output.outcome == Outcome::Success,
            mask: &mask,
            double_contact: env.sim.contact_flags(next).both(),
            height_gap: env.sim.height_gap(next),
            at_height: env.sim.target_lifted(next),
        };
        let mut rewards = [0.0; 4];
        for (r, t) in rewards.iter_mut().zip(&mut trackers) {
            *r = t.reward(&signals)?;
        }
        csv.push_str(&format!(
            "{step},{:.6},{},{:.9},{:.9},{:.9},{:.9}\n",
            output.distance,
            mask.count(),
            rewards[0],
            rewards[1],
            rewards[2],
            rewards[3]
        ));
        rows.push(TraceRow {
            step,
            distance: output.distance,
            mask_pixels: mask.count(),
            rewards,
        });
    }
    write_file(&out.join("rewards.csv"), &csv)?;
    Ok(rows)
}
