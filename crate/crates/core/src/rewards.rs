//! The three reward strategies: goal-only (GOR), dense proximity (DPR), and
//! milestone-augmented (MAR).
//!
//! All three agree on the terminal cases — a positive goal bonus and a
//! negative collision penalty — and differ only in the progress signal paid
//! out on ordinary steps. Penalty constants are stored positive and applied
//! with their sign at evaluation time.

use serde::{Deserialize, Serialize};

use crate::geometry::Vec2;
use crate::{Error, Result};

/// Reward strategy selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardStrategy {
    Gor,
    Dpr,
    Mar,
}

impl RewardStrategy {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gor" => Ok(Self::Gor),
            "dpr" => Ok(Self::Dpr),
            "mar" => Ok(Self::Mar),
            other => Err(Error::InvalidConfig(format!(
                "unknown reward strategy '{other}' (expected gor, dpr, or mar)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Gor => "gor",
            Self::Dpr => "dpr",
            Self::Mar => "mar",
        }
    }
}

/// Shared reward constants. Penalties are stored as positive magnitudes.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RewardParams {
    /// Bonus paid on reaching the goal region (applied positive).
    pub goal_bonus: f64,
    /// Penalty on collision (applied negated).
    pub collision_penalty: f64,
    /// Small per-step penalty discouraging idling (applied negated).
    pub living_penalty: f64,
    /// DPR intercept.
    pub dpr_offset: f64,
    /// DPR distance slope.
    pub dpr_scale: f64,
    /// MAR shaping offset; must dominate every distance reachable from the
    /// milestone disk so the shaped term stays nonnegative.
    pub mar_offset: f64,
    /// Minimum sensor reading that counts as a collision (meters).
    pub collision_threshold: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        Self {
            goal_bonus: 100.0,
            collision_penalty: 100.0,
            living_penalty: 0.1,
            dpr_offset: 0.5,
            dpr_scale: 0.025,
            mar_offset: 20.0,
            collision_threshold: 0.3,
        }
    }
}

impl RewardParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.goal_bonus > 0.0
            && self.collision_penalty > 0.0
            && self.living_penalty > 0.0
            && self.dpr_offset > 0.0
            && self.dpr_scale > 0.0
            && self.mar_offset > 0.0
            && self.collision_threshold > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "reward params must all be positive: {self:?}"
            )))
        }
    }
}

/// Per-step inputs to the reward functions.
#[derive(Debug, Clone, Copy)]
pub struct RewardContext {
    pub agent_pos: Vec2,
    pub target_pos: Vec2,
    /// Closest detected obstacle distance; zero when the body is in contact.
    pub min_ray: f64,
    pub in_goal: bool,
    pub milestone_latched: bool,
}

/// Euclidean distance between 3-component positions.
pub fn euclidean(a: [f64; 3], b: [f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Goal-only reward: terminal feedback plus a constant living penalty.
pub fn reward_gor(ctx: &RewardContext, p: &RewardParams) -> f64 {
    if ctx.in_goal {
        p.goal_bonus
    } else if ctx.min_ray <= p.collision_threshold {
        -p.collision_penalty
    } else {
        -p.living_penalty
    }
}

/// Dense proximity reward: terminal cases as GOR, otherwise an affine
/// function of the distance to the goal that grows as the vehicle closes in.
pub fn reward_dpr(ctx: &RewardContext, p: &RewardParams) -> f64 {
    if ctx.in_goal {
        p.goal_bonus
    } else if ctx.min_ray <= p.collision_threshold {
        -p.collision_penalty
    } else {
        p.dpr_offset - p.dpr_scale * ctx.agent_pos.distance(ctx.target_pos)
    }
}

/// Milestone-augmented reward: behaves like GOR until the milestone latch is
/// set, then pays a nonnegative distance-shaped signal.
pub fn reward_mar(ctx: &RewardContext, p: &RewardParams) -> f64 {
    if ctx.in_goal {
        p.goal_bonus
    } else if ctx.min_ray <= p.collision_threshold {
        -p.collision_penalty
    } else if ctx.milestone_latched {
        p.mar_offset - ctx.agent_pos.distance(ctx.target_pos)
    } else {
        -p.living_penalty
    }
}

/// 1 iff the agent is within `radius` of the milestone center (inclusive).
pub fn milestone_indicator(agent: Vec2, milestone: Vec2, radius: f64) -> u8 {
    u8::from(agent.distance(milestone) <= radius)
}

/// Evaluate the selected strategy.
pub fn reward(strategy: RewardStrategy, ctx: &RewardContext, p: &RewardParams) -> f64 {
    match strategy {
        RewardStrategy::Gor => reward_gor(ctx, p),
        RewardStrategy::Dpr => reward_dpr(ctx, p),
        RewardStrategy::Mar => reward_mar(ctx, p),
    }
}
