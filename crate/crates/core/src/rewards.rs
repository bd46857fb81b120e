//! Format consistency, spatial consistency and composite rewards.

use serde::{Deserialize, Serialize};

use crate::geometry::GridPoint;
use crate::point_protocol::ParseOutcome;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    /// Awarded to any well-formed message.
    pub r_base: f64,
    /// Scaled by the agreement between declared and emitted point counts.
    pub r_extra: f64,
    /// Largest possible squared distance on the grid (grid units²).
    pub d_max: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            r_base: 0.2,
            r_extra: 0.8,
            d_max: 1000.0 * 1000.0 + 1000.0 * 1000.0,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if self.r_base < 0.0 || self.r_extra < 0.0 || self.r_base + self.r_extra > 1.0 + 1e-12 {
            return Err(Error::validation(format!(
                "reward weights must be nonnegative with r_base + r_extra <= 1, got {} + {}",
                self.r_base, self.r_extra
            )));
        }
        if !(self.d_max > 0.0) {
            return Err(Error::validation("d_max must be positive"));
        }
        Ok(())
    }
}

/// Zero for an invalid message, otherwise
/// `r_base + r_extra * min(N_ref, N_actual) / max(N_ref, N_actual)`, with the
/// ratio taken as 1 when both counts are zero.
pub fn format_reward(outcome: &ParseOutcome, cfg: &RewardConfig) -> f64 {
    let Some(n_ref) = outcome.n_ref.filter(|_| outcome.valid_format) else {
        return 0.0;
    };
    let n_actual = outcome.n_actual;
    let hi = n_ref.max(n_actual);
    let ratio = if hi == 0 {
        1.0
    } else {
        n_ref.min(n_actual) as f64 / hi as f64
    };
    cfg.r_base + cfg.r_extra * ratio
}

/// Exponential of the negated mean squared nearest-target distance over
/// `d_max`.
pub fn spatial_reward(pred: &[GridPoint], targets: &[GridPoint], cfg: &RewardConfig) -> Result<f64> {
    if pred.is_empty() || targets.is_empty() {
        return Err(Error::UndefinedReward(format!(
            "{} predicted and {} target points",
            pred.len(),
            targets.len()
        )));
    }
    let total: f64 = pred.iter().map(|p| nearest_dist2(p, targets)).sum();
    Ok((-total / (cfg.d_max * pred.len() as f64)).exp())
}

/// Squared distance from `p` to its nearest target.
pub fn nearest_dist2(p: &GridPoint, targets: &[GridPoint]) -> f64 {
    targets
        .iter()
        .map(|t| p.dist2(t))
        .fold(f64::INFINITY, f64::min)
}

/// Format plus spatial reward. The spatial term is zero for invalid messages
/// and for messages without points.
pub fn total_reward(outcome: &ParseOutcome, targets: &[GridPoint], cfg: &RewardConfig) -> f64 {
    let format = format_reward(outcome, cfg);
    if !outcome.valid_format || outcome.points.is_empty() || targets.is_empty() {
        return format;
    }
    format + spatial_reward(&outcome.points, targets, cfg).unwrap_or(0.0)
}

/// Fraction of targets that are the nearest target of at least one
/// prediction. Reported alongside the spatial reward, which ignores coverage.
pub fn target_coverage(pred: &[GridPoint], targets: &[GridPoint]) -> f64 {
    if targets.is_empty() {
        return 0.0;
    }
    let mut hit = vec![false; targets.len()];
    for p in pred {
        if let Some((j, _)) = targets
            .iter()
            .enumerate()
            .min_by(|a, b| p.dist2(a.1).total_cmp(&p.dist2(b.1)))
        {
            hit[j] = true;
        }
    }
    hit.iter().filter(|h| **h).count() as f64 / targets.len() as f64
}
