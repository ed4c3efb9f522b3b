//! Reward family: sparse, distance, mask-size and the staged pick-up reward.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::goal::{mask_within_roi, roi_filter, Mask, RoiRect};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardFamily {
    Sparse,
    Distance,
    Mask,
    Pickup,
}

/// `gain / (1 + exp(-scale · x)) + offset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SigmoidParams {
    pub gain: f64,
    pub scale: f64,
    pub offset: f64,
}

impl Default for SigmoidParams {
    fn default() -> Self {
        SigmoidParams {
            gain: 2.0,
            scale: 10.0,
            offset: -1.0,
        }
    }
}

impl SigmoidParams {
    pub fn apply(&self, x: f64) -> f64 {
        self.gain / (1.0 + (-self.scale * x).exp()) + self.offset
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PickupConstants {
    pub base: f64,
    pub first_contact: f64,
    pub repeat_contact: f64,
    pub lift_offset: f64,
    pub lift_slope: f64,
    pub goal_bonus: f64,
}

impl Default for PickupConstants {
    fn default() -> Self {
        PickupConstants {
            base: -1.1,
            first_contact: 10.0,
            repeat_contact: 0.1,
            lift_offset: 1.0,
            lift_slope: 3.3,
            goal_bonus: 10.0,
        }
    }
}

/// Source of the approach term inside the pick-up reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReachTerm {
    /// Negative end-effector to target distance.
    Distance,
    /// Mask reward of the ROI-gated target mask.
    Mask,
}

/// How the ROI gates the mask before the reward is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoiGate {
    /// Reward the part of the mask inside the ROI.
    #[default]
    Intersection,
    /// Reward the whole mask only when none of it lies outside the ROI.
    StrictInside,
}

/// ROI as fractions of the image size, so it follows the camera resolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoiFractions {
    pub u: [f64; 2],
    pub v: [f64; 2],
}

impl Default for RoiFractions {
    fn default() -> Self {
        RoiFractions {
            u: [0.35, 0.65],
            v: [0.55, 0.90],
        }
    }
}

impl RoiFractions {
    pub fn rect(&self, width: usize, height: usize) -> RoiRect {
        RoiRect::from_fractions(width, height, self.u, self.v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardConfig {
    pub family: RewardFamily,
    /// Termination and reach threshold in meters.
    pub epsilon: f64,
    pub r_term: f64,
    #[serde(default = "defaults::step_penalty")]
    pub step_penalty: f64,
    /// Adds `r_term` on success for the mask family.
    #[serde(default = "defaults::yes")]
    pub mask_terminal_bonus: bool,
    #[serde(default)]
    pub sigmoid: SigmoidParams,
    #[serde(default)]
    pub pickup: PickupConstants,
    #[serde(default = "defaults::reach_term")]
    pub reach_term: ReachTerm,
    /// When set, mask rewards see only the ROI-gated mask.
    #[serde(default)]
    pub roi: Option<RoiFractions>,
    #[serde(default)]
    pub roi_gate: RoiGate,
}

mod defaults {
    use super::ReachTerm;

    pub fn step_penalty() -> f64 {
        -1.0
    }

    pub fn yes() -> bool {
        true
    }

    pub fn reach_term() -> ReachTerm {
        ReachTerm::Mask
    }
}

impl RewardConfig {
    pub fn new(family: RewardFamily, epsilon: f64, r_term: f64) -> Self {
        RewardConfig {
            family,
            epsilon,
            r_term,
            step_penalty: defaults::step_penalty(),
            mask_terminal_bonus: true,
            sigmoid: SigmoidParams::default(),
            pickup: PickupConstants::default(),
            reach_term: defaults::reach_term(),
            roi: None,
            roi_gate: RoiGate::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        let p = &self.pickup;
        let s = &self.sigmoid;
        let constants = [
            self.r_term,
            self.step_penalty,
            s.gain,
            s.scale,
            s.offset,
            p.base,
            p.first_contact,
            p.repeat_contact,
            p.lift_offset,
            p.lift_slope,
            p.goal_bonus,
        ];
        if constants.iter().any(|c| !c.is_finite()) {
            return Err(Error::config("reward constants must be finite"));
        }
        Ok(())
    }

    /// Applies the configured ROI gate, or returns the mask unchanged.
    pub fn gate_mask(&self, mask: &Mask) -> Result<Mask> {
        let Some(f) = self.roi else {
            return Ok(mask.clone());
        };
        let roi = f.rect(mask.width, mask.height);
        match self.roi_gate {
            RoiGate::Intersection => roi_filter(mask, &roi),
            RoiGate::StrictInside => {
                roi.validate(mask.width, mask.height)?;
                Ok(if mask_within_roi(mask, &roi) {
                    mask.clone()
                } else {
                    Mask::zeros(mask.width, mask.height)
                })
            }
        }
    }
}

pub fn sparse_reward(reached: bool, r_term: f64) -> f64 {
    if reached {
        r_term
    } else {
        0.0
    }
}

pub fn distance_reward(d: f64, epsilon: f64, r_term: f64) -> Result<f64> {
    if !(d >= 0.0) {
        return Err(Error::input(format!("distance must be non-negative, got {d}")));
    }
    Ok(if d <= epsilon { -d + r_term } else { -d })
}

/// Fraction of active pixels.
pub fn mask_fraction(mask: &Mask) -> f64 {
    let total = mask.width * mask.height;
    if total == 0 {
        return 0.0;
    }
    mask.count() as f64 / total as f64
}

pub fn mask_reward(mask: &Mask) -> f64 {
    mask_reward_with(mask, &SigmoidParams::default())
}

pub fn mask_reward_with(mask: &Mask, sigmoid: &SigmoidParams) -> f64 {
    sigmoid.apply(mask_fraction(mask))
}

pub fn mask_step_reward(mask: &Mask, reached: bool, r_term: f64, step_penalty: f64) -> f64 {
    mask_reward(mask) + step_penalty + sparse_reward(reached, r_term)
}

/// Contact and lift history for one pick-up episode.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PickupStage {
    pub ever_double_contact: bool,
    pub currently_double_contact: bool,
    /// Remaining distance to the lift target, meters.
    pub height_gap: f64,
    pub reached_height: bool,
    /// This step is the first with both fingers touching.
    pub first_contact_now: bool,
    /// This step is the first at the target height.
    pub reached_now: bool,
}

impl PickupStage {
    /// Folds one step's observations into the history.
    pub fn advance(&self, double_contact: bool, height_gap: f64, at_height: bool) -> PickupStage {
        let ever = self.ever_double_contact || double_contact;
        let reached = self.reached_height || (at_height && ever);
        PickupStage {
            ever_double_contact: ever,
            currently_double_contact: double_contact,
            height_gap,
            reached_height: reached,
            first_contact_now: double_contact && !self.ever_double_contact,
            reached_now: reached && !self.reached_height,
        }
    }
}

/// Staged pick-up reward. `reach_component` counts only until the first
/// double contact.
pub fn pickup_reward(stage: &PickupStage, reach_component: f64, c: &PickupConstants) -> Result<f64> {
    let d = stage.height_gap;
    if !(d >= 0.0) {
        return Err(Error::input(format!("height gap must be non-negative, got {d}")));
    }
    let mut r = c.base;
    // `ever_double_contact` already includes this step, so the approach term
    // stops on the first contact step.
    if !stage.ever_double_contact {
        r += reach_component;
    }
    if stage.first_contact_now {
        r += c.first_contact;
    } else if stage.currently_double_contact {
        r += c.repeat_contact;
    }
    if stage.ever_double_contact {
        r += c.lift_offset - c.lift_slope * d;
    }
    if stage.reached_now {
        r += c.goal_bonus;
    }
    Ok(r)
}

/// Per-step quantities from which every reward family is computed.
#[derive(Debug, Clone, Copy)]
pub struct StepSignals<'a> {
    /// End effector to target center, meters.
    pub distance: f64,
    /// Task success on this step.
    pub reached: bool,
    /// Target mask before ROI gating.
    pub mask: &'a Mask,
    pub double_contact: bool,
    pub height_gap: f64,
    pub at_height: bool,
}

/// Computes rewards step by step, holding the pick-up history.
#[derive(Debug, Clone)]
pub struct RewardTracker {
    pub config: RewardConfig,
    stage: PickupStage,
}

impl RewardTracker {
    pub fn new(config: RewardConfig) -> Result<Self> {
        config.validate()?;
        Ok(RewardTracker {
            config,
            stage: PickupStage::default(),
        })
    }

    pub fn reset(&mut self) {
        self.stage = PickupStage::default();
    }

    pub fn stage(&self) -> &PickupStage {
        &self.stage
    }

    pub fn reward(&mut self, s: &StepSignals) -> Result<f64> {
        self.reward_for(self.config.family, s)
    }

    /// Reward under `family`, advancing the pick-up history when the family
    /// is pick-up.
    pub fn reward_for(&mut self, family: RewardFamily, s: &StepSignals) -> Result<f64> {
        let cfg = &self.config;
        match family {
            RewardFamily::Sparse => Ok(sparse_reward(s.reached, cfg.r_term)),
            RewardFamily::Distance => distance_reward(s.distance, cfg.epsilon, cfg.r_term),
            RewardFamily::Mask => {
                let m = cfg.gate_mask(s.mask)?;
                let bonus = if cfg.mask_terminal_bonus {
                    sparse_reward(s.reached, cfg.r_term)
                } else {
                    0.0
                };
                Ok(mask_reward_with(&m, &cfg.sigmoid) + cfg.step_penalty + bonus)
            }
            RewardFamily::Pickup => {
                let reach = match cfg.reach_term {
                    ReachTerm::Distance => -s.distance,
                    ReachTerm::Mask => mask_reward_with(&cfg.gate_mask(s.mask)?, &cfg.sigmoid),
                };
                self.stage = self.stage.advance(s.double_contact, s.height_gap, s.at_height);
                pickup_reward(&self.stage, reach, &self.config.pickup)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mask_with(count: usize, w: usize, h: usize) -> Mask {
        Mask::from_fn(w, h, |r, c| r * w + c < count)
    }

    #[test]
    fn sparse_values() {
        assert_eq!(sparse_reward(false, 5.0), 0.0);
        assert_eq!(sparse_reward(true, 5.0), 5.0);
        assert_eq!(sparse_reward(true, 1.0), 1.0);
    }

    #[test]
    fn distance_values() {
        assert!((distance_reward(0.3, 0.1, 5.0).unwrap() + 0.3).abs() < 1e-12);
        assert!((distance_reward(0.1, 0.1, 5.0).unwrap() - 4.9).abs() < 1e-12);
        assert_eq!(distance_reward(0.0, 0.1, 5.0).unwrap(), 5.0);
        assert!(matches!(distance_reward(-0.01, 0.1, 5.0), Err(Error::Input(_))));
    }

    #[test]
    fn fraction_matches_pixel_loop() {
        assert_eq!(mask_fraction(&Mask::zeros(160, 90)), 0.0);
        assert!((mask_fraction(&mask_with(1440, 160, 90)) - 0.1).abs() < 1e-15);
        let m = Mask::from_fn(37, 23, |r, c| (r * 7 + c * 13) % 5 == 0);
        let mut n = 0;
        for r in 0..23 {
            for c in 0..37 {
                n += usize::from(m.get(r, c));
            }
        }
        assert_eq!(mask_fraction(&m), n as f64 / (37.0 * 23.0));
    }

    #[test]
    fn mask_reward_values() {
        assert_eq!(mask_reward(&Mask::zeros(160, 90)), 0.0);
        assert!((mask_reward(&mask_with(1440, 160, 90)) - 0.462117).abs() < 1e-6);
        assert!((mask_reward(&mask_with(14400, 160, 90)) - 0.9999092).abs() < 1e-6);
        let m = mask_with(1440, 160, 90);
        assert!((mask_step_reward(&Mask::zeros(160, 90), false, 5.0, -1.0) + 1.0).abs() < 1e-12);
        assert!((mask_step_reward(&m, false, 5.0, -1.0) + 0.537883).abs() < 1e-6);
        assert!((mask_step_reward(&m, true, 5.0, -1.0) - 4.462117).abs() < 1e-6);
    }

    #[test]
    fn pickup_examples() {
        let c = PickupConstants::default();
        let pre = PickupStage::default().advance(false, 0.3, false);
        assert!((pickup_reward(&pre, 0.46, &c).unwrap() + 0.64).abs() < 1e-12);

        let first = pre.advance(true, 0.30, false);
        assert!((pickup_reward(&first, 0.46, &c).unwrap() - 8.91).abs() < 1e-9);

        let top = first.advance(true, 0.0, true);
        assert!((pickup_reward(&top, 0.46, &c).unwrap() - 10.0).abs() < 1e-9);

        let bad = PickupStage {
            height_gap: -0.1,
            ..top
        };
        assert!(pickup_reward(&bad, 0.0, &c).is_err());
    }

    #[test]
    fn bonuses_paid_once_per_episode() {
        let c = PickupConstants::default();
        let contacts = [false, true, true, false, true, true, true, true];
        let heights = [false, false, false, false, false, true, true, true];
        let mut stage = PickupStage::default();
        let (mut contact_bonus, mut goal_bonus) = (0, 0);
        for (k, (&dc, &h)) in contacts.iter().zip(&heights).enumerate() {
            stage = stage.advance(dc, 0.1, h);
            contact_bonus += usize::from(stage.first_contact_now);
            goal_bonus += usize::from(stage.reached_now);
            assert!(!stage.reached_height || stage.ever_double_contact);
            pickup_reward(&stage, 0.2, &c).unwrap();
            if k == 1 {
                assert!(stage.first_contact_now);
            }
        }
        assert_eq!((contact_bonus, goal_bonus), (1, 1));
    }

    #[test]
    fn height_without_contact_is_not_reached() {
        let s = PickupStage::default().advance(false, 0.0, true);
        assert!(!s.reached_height);
    }

    #[test]
    fn roi_gates() {
        let mut cfg = RewardConfig::new(RewardFamily::Mask, 0.05, 5.0);
        cfg.roi = Some(RoiFractions::default());
        let (w, h) = (80, 45);
        let outside = Mask::from_fn(w, h, |r, c| r < 5 && c < 5);
        let inside = Mask::from_fn(w, h, |r, c| (30..35).contains(&r) && (38..42).contains(&c));
        let both = Mask::from_fn(w, h, |r, c| outside.get(r, c) || inside.get(r, c));
        assert!(cfg.gate_mask(&outside).unwrap().is_empty());
        assert_eq!(cfg.gate_mask(&both).unwrap(), inside);
        cfg.roi_gate = RoiGate::StrictInside;
        assert!(cfg.gate_mask(&both).unwrap().is_empty());
        assert_eq!(cfg.gate_mask(&inside).unwrap(), inside);
    }

    #[test]
    fn tracker_families() {
        let mask = mask_with(1440, 160, 90);
        let sig = StepSignals {
            distance: 0.04,
            reached: true,
            mask: &mask,
            double_contact: false,
            height_gap: 0.2,
            at_height: false,
        };
        let mut t = RewardTracker::new(RewardConfig::new(RewardFamily::Mask, 0.05, 5.0)).unwrap();
        assert!((t.reward(&sig).unwrap() - 4.462117).abs() < 1e-6);
        t.config.mask_terminal_bonus = false;
        assert!((t.reward(&sig).unwrap() + 0.537883).abs() < 1e-6);
        assert!((t.reward_for(RewardFamily::Distance, &sig).unwrap() - 4.96).abs() < 1e-12);
        assert!(RewardTracker::new(RewardConfig::new(RewardFamily::Sparse, 0.0, 5.0)).is_err());
    }

    proptest! {
        #[test]
        fn mask_reward_increases_with_nested_masks(a in 0usize..3600, extra in 1usize..400) {
            let small = mask_with(a, 80, 45);
            let large = mask_with((a + extra).min(3600), 80, 45);
            prop_assume!(large.count() > small.count());
            let (rs, rl) = (mask_reward(&small), mask_reward(&large));
            prop_assert!(rs < rl);
            prop_assert!((0.0..1.0).contains(&rs) && rl < 1.0);
            prop_assert_eq!(rs == 0.0, a == 0);
        }

        #[test]
        fn distance_reward_envelope(d in 0.0f64..2.0, eps in 0.01f64..0.5) {
            let r = distance_reward(d, eps, 5.0).unwrap();
            let expected_jump = if d <= eps { 5.0 } else { 0.0 };
            prop_assert!((r - (-d + expected_jump)).abs() < 1e-12);
        }
    }
}
