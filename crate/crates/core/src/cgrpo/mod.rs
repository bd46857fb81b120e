//! Group relative policy optimization with the format + spatial reward.
//!
//! Each round samples a group of outputs per context from a frozen snapshot
//! of the policy, scores them, standardizes rewards within the group and
//! takes one gradient-ascent step on the clipped surrogate
//!
//! ```text
//! J = 1/N Σ_i 1/|o_i| Σ_t [ min(r·A, clip(r, 1-ε, 1+ε)·A) - β·k ]
//! r = π_θ(o_t) / π_old(o_t)
//! k = π_ref/π_θ - 1 - log(π_ref/π_θ)
//! ```
//!
//! `k` is a per-token KL estimate against the frozen reference policy; it is
//! nonnegative for every probability pair.

mod policy;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub use policy::{
    stream_rng, Delimiter, Head, PolicyContext, PolicyShape, Rollout, TokenChoice, ToyPolicy,
    EMIT, OMIT, POLICY_MAGIC, POLICY_VERSION,
};

use crate::geometry::GridPoint;
use crate::point_protocol::parse;
use crate::rewards::{format_reward, nearest_dist2, total_reward, RewardConfig};
use crate::{Error, FixationSet, Result};

/// Added to the group std before dividing.
pub const ADVANTAGE_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GrpoConfig {
    pub group_size: usize,
    pub clip_eps: f64,
    pub beta: f64,
    pub learning_rate: f64,
    pub iterations: usize,
    pub seed: u64,
    pub bins: usize,
    pub k_max: usize,
    pub stochastic_delimiters: bool,
    /// Probability that a fresh policy emits all four delimiters.
    pub initial_validity: f64,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self {
            group_size: 8,
            clip_eps: 0.2,
            beta: 0.04,
            learning_rate: 16.0,
            iterations: 3000,
            seed: 0,
            bins: 10,
            k_max: 8,
            stochastic_delimiters: true,
            initial_validity: 0.5,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.group_size < 2 {
            return Err(Error::validation("group size must be at least 2"));
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return Err(Error::validation("clip epsilon must be in (0, 1)"));
        }
        if !(self.beta >= 0.0) {
            return Err(Error::validation("beta must be nonnegative"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::validation("learning rate must be positive"));
        }
        if self.bins == 0 || self.k_max == 0 {
            return Err(Error::validation("bins and k_max must be positive"));
        }
        Ok(())
    }

    pub fn shape(&self, contexts: usize) -> PolicyShape {
        PolicyShape {
            contexts,
            k_max: self.k_max,
            bins: self.bins,
            stochastic_delimiters: self.stochastic_delimiters,
        }
    }
}

/// Standardized rewards: `(r - mean) / (std + 1e-8)` with the population std.
pub fn group_advantages(rewards: &[f64]) -> Vec<f64> {
    if rewards.is_empty() {
        return Vec::new();
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let std = (rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt();
    rewards.iter().map(|r| (r - mean) / (std + ADVANTAGE_EPS)).collect()
}

/// `min(r·A, clip(r, 1-ε, 1+ε)·A)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, clip_eps: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps);
    (ratio * advantage).min(clipped * advantage)
}

/// Per-token KL estimate `x - 1 - ln x` with `x = π_ref / π_θ`.
pub fn kl_estimator(logp_theta: f64, logp_ref: f64) -> f64 {
    let log_x = logp_ref - logp_theta;
    (log_x.exp() - 1.0 - log_x).max(0.0)
}

/// A rollout paired with its group-relative advantage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredRollout {
    pub rollout: Rollout,
    pub reward: f64,
    pub advantage: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TokenTerm {
    pub ratio: f64,
    pub surrogate: f64,
    pub kl: f64,
}

fn check_batch(
    policy: &ToyPolicy,
    reference: &ToyPolicy,
    old: &ToyPolicy,
    batch: &[ScoredRollout],
) -> Result<()> {
    let shape = policy.shape();
    if reference.shape() != shape || old.shape() != shape {
        return Err(Error::Shape("policy, reference and old policy differ in shape".into()));
    }
    for s in batch {
        let r = &s.rollout;
        if r.context >= shape.contexts {
            return Err(Error::Shape(format!("rollout context {} out of range", r.context)));
        }
        if r.tokens.is_empty() {
            return Err(Error::Shape("empty rollout".into()));
        }
        for t in &r.tokens {
            let width = shape.head_range(0, t.head).len();
            let head_ok = match t.head {
                Head::Slot(k) => k < shape.k_max,
                Head::Delimiter(_) => shape.stochastic_delimiters,
                Head::Ref | Head::Count => true,
            };
            if !head_ok || t.choice >= width {
                return Err(Error::Shape(format!("token {t:?} does not fit the policy")));
            }
        }
    }
    Ok(())
}

/// Cache of log-softmax vectors per (context, head) for one policy.
struct HeadCache<'a> {
    policy: &'a ToyPolicy,
    cache: HashMap<(usize, Head), Vec<f64>>,
}

impl<'a> HeadCache<'a> {
    fn new(policy: &'a ToyPolicy) -> Self {
        Self {
            policy,
            cache: HashMap::new(),
        }
    }

    fn log_probs(&mut self, context: usize, head: Head) -> &[f64] {
        let policy = self.policy;
        self.cache
            .entry((context, head))
            .or_insert_with(|| policy::log_softmax(policy.logits(context, head)))
    }
}

/// Ratio, clipped surrogate and KL estimate of every token in the batch.
pub fn token_terms(
    policy: &ToyPolicy,
    reference: &ToyPolicy,
    old: &ToyPolicy,
    batch: &[ScoredRollout],
    cfg: &GrpoConfig,
) -> Result<Vec<Vec<TokenTerm>>> {
    check_batch(policy, reference, old, batch)?;
    let (mut cur, mut refc, mut oldc) = (HeadCache::new(policy), HeadCache::new(reference), HeadCache::new(old));
    Ok(batch
        .iter()
        .map(|s| {
            let ctx = s.rollout.context;
            s.rollout
                .tokens
                .iter()
                .map(|t| {
                    let lp = cur.log_probs(ctx, t.head)[t.choice];
                    let lp_old = oldc.log_probs(ctx, t.head)[t.choice];
                    let lp_ref = refc.log_probs(ctx, t.head)[t.choice];
                    let ratio = (lp - lp_old).exp();
                    TokenTerm {
                        ratio,
                        surrogate: clipped_surrogate(ratio, s.advantage, cfg.clip_eps),
                        kl: kl_estimator(lp, lp_ref),
                    }
                })
                .collect()
        })
        .collect())
}

/// The objective `J` (to be maximized).
pub fn objective(
    policy: &ToyPolicy,
    reference: &ToyPolicy,
    old: &ToyPolicy,
    batch: &[ScoredRollout],
    cfg: &GrpoConfig,
) -> Result<f64> {
    let terms = token_terms(policy, reference, old, batch, cfg)?;
    if terms.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = terms
        .iter()
        .map(|ts| ts.iter().map(|t| t.surrogate - cfg.beta * t.kl).sum::<f64>() / ts.len() as f64)
        .sum();
    Ok(total / terms.len() as f64)
}

/// Objective and its gradient with respect to every policy logit.
pub fn objective_gradient(
    policy: &ToyPolicy,
    reference: &ToyPolicy,
    old: &ToyPolicy,
    batch: &[ScoredRollout],
    cfg: &GrpoConfig,
) -> Result<(f64, Vec<f64>)> {
    check_batch(policy, reference, old, batch)?;
    let shape = policy.shape();
    let mut grad = vec![0.0; shape.total()];
    if batch.is_empty() {
        return Ok((0.0, grad));
    }
    let (mut cur, mut refc, mut oldc) = (HeadCache::new(policy), HeadCache::new(reference), HeadCache::new(old));
    let n = batch.len() as f64;
    let mut total = 0.0;
    for s in batch {
        let ctx = s.rollout.context;
        let weight = 1.0 / (n * s.rollout.tokens.len() as f64);
        let adv = s.advantage;
        for t in &s.rollout.tokens {
            let lp_old = oldc.log_probs(ctx, t.head)[t.choice];
            let lp_ref = refc.log_probs(ctx, t.head)[t.choice];
            let lps = cur.log_probs(ctx, t.head);
            let lp = lps[t.choice];
            let ratio = (lp - lp_old).exp();
            total += weight * (clipped_surrogate(ratio, adv, cfg.clip_eps) - cfg.beta * kl_estimator(lp, lp_ref));

            // d/dlogπ of the surrogate: r·A on the unclipped branch, else 0.
            let unclipped = if adv >= 0.0 {
                ratio <= 1.0 + cfg.clip_eps
            } else {
                ratio >= 1.0 - cfg.clip_eps
            };
            let d_surr = if unclipped { ratio * adv } else { 0.0 };
            // d/dlogπ of k = x - 1 - ln x, x = π_ref/π: 1 - x.
            let d_kl = 1.0 - (lp_ref - lp).exp();
            let coef = weight * (d_surr - cfg.beta * d_kl);
            if coef == 0.0 {
                continue;
            }
            let range = shape.head_range(ctx, t.head);
            for (j, (g, l)) in grad[range].iter_mut().zip(lps).enumerate() {
                let indicator = if j == t.choice { 1.0 } else { 0.0 };
                *g += coef * (indicator - l.exp());
            }
        }
    }
    Ok((total, grad))
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    /// Negated objective before the update.
    pub loss: f64,
    pub grad_norm: f64,
    pub policy: ToyPolicy,
}

/// One gradient-ascent step on the objective.
pub fn grpo_step(
    policy: &ToyPolicy,
    reference: &ToyPolicy,
    old: &ToyPolicy,
    batch: &[ScoredRollout],
    cfg: &GrpoConfig,
) -> Result<StepOutcome> {
    let (j, grad) = objective_gradient(policy, reference, old, batch, cfg)?;
    let mut updated = policy.clone();
    for (p, g) in updated.params_mut().iter_mut().zip(&grad) {
        *p += cfg.learning_rate * g;
    }
    Ok(StepOutcome {
        loss: -j,
        grad_norm: grad.iter().map(|g| g * g).sum::<f64>().sqrt(),
        policy: updated,
    })
}

/// One training prompt: its conditioning context and target fixations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainExample {
    pub context: PolicyContext,
    pub targets: FixationSet,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub mean_reward: f64,
    pub format_validity: f64,
    /// Mean over scored outputs of the mean nearest-target distance per
    /// predicted point (grid units).
    pub mean_nn_distance: f64,
    pub mean_kl: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub rows: Vec<TraceRow>,
}

/// Score of one decoded output.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputScore {
    pub valid: bool,
    pub r_format: f64,
    pub r_total: f64,
    pub points: Vec<GridPoint>,
    /// Mean nearest-target distance per point; `None` when nothing to score.
    pub nn_distance: Option<f64>,
}

pub fn score_output(text: &str, targets: &[GridPoint], reward: &RewardConfig) -> OutputScore {
    let outcome = parse(text);
    let nn_distance = (outcome.valid_format && !outcome.points.is_empty() && !targets.is_empty()).then(|| {
        outcome
            .points
            .iter()
            .map(|p| nearest_dist2(p, targets).sqrt())
            .sum::<f64>()
            / outcome.points.len() as f64
    });
    OutputScore {
        valid: outcome.valid_format,
        r_format: format_reward(&outcome, reward),
        r_total: total_reward(&outcome, targets, reward),
        points: outcome.points,
        nn_distance,
    }
}

fn round_seed(seed: u64, iteration: usize) -> u64 {
    let mut rng = stream_rng(seed, &[iteration as u64]);
    rand::Rng::random(&mut rng)
}

#[derive(Debug, Default)]
struct RoundStats {
    reward: f64,
    valid: f64,
    nn_sum: f64,
    nn_count: f64,
    outputs: f64,
}

fn sample_round(
    policy: &ToyPolicy,
    dataset: &[TrainExample],
    group_size: usize,
    seed: u64,
    reward: &RewardConfig,
) -> (Vec<ScoredRollout>, RoundStats) {
    let mut batch = Vec::with_capacity(dataset.len() * group_size);
    let mut stats = RoundStats::default();
    for (ctx, example) in dataset.iter().enumerate() {
        let group = policy.sample_group(ctx, group_size, seed);
        let scores: Vec<OutputScore> = group
            .iter()
            .map(|r| score_output(&policy.decode(r), &example.targets, reward))
            .collect();
        let rewards: Vec<f64> = scores.iter().map(|s| s.r_total).collect();
        let adv = group_advantages(&rewards);
        for ((rollout, score), a) in group.into_iter().zip(&scores).zip(adv) {
            stats.reward += score.r_total;
            stats.valid += f64::from(u8::from(score.valid));
            if let Some(d) = score.nn_distance {
                stats.nn_sum += d;
                stats.nn_count += 1.0;
            }
            stats.outputs += 1.0;
            batch.push(ScoredRollout {
                rollout,
                reward: score.r_total,
                advantage: a,
            });
        }
    }
    (batch, stats)
}

fn mean_kl_to_reference(policy: &ToyPolicy, reference: &ToyPolicy, batch: &[ScoredRollout]) -> f64 {
    let mut sum = 0.0;
    let mut n = 0.0;
    for s in batch {
        for t in &s.rollout.tokens {
            let ctx = s.rollout.context;
            sum += kl_estimator(policy.log_prob(ctx, t), reference.log_prob(ctx, t));
            n += 1.0;
        }
    }
    if n > 0.0 {
        sum / n
    } else {
        0.0
    }
}

/// Runs GRPO from a fresh policy. The reference is the initial policy and the
/// sampling snapshot is refreshed every iteration.
pub fn train(
    dataset: &[TrainExample],
    cfg: &GrpoConfig,
    reward: &RewardConfig,
) -> Result<(ToyPolicy, TrainTrace)> {
    let initial = ToyPolicy::new(cfg.shape(dataset.len().max(1)), cfg.initial_validity)?;
    train_from(initial, dataset, cfg, reward)
}

pub fn train_from(
    initial: ToyPolicy,
    dataset: &[TrainExample],
    cfg: &GrpoConfig,
    reward: &RewardConfig,
) -> Result<(ToyPolicy, TrainTrace)> {
    cfg.validate()?;
    reward.validate()?;
    if dataset.is_empty() {
        return Err(Error::validation("training dataset is empty"));
    }
    if initial.shape().contexts != dataset.len() {
        return Err(Error::Shape(format!(
            "policy has {} contexts, dataset has {}",
            initial.shape().contexts,
            dataset.len()
        )));
    }
    let reference = initial.clone();
    let mut policy = initial;
    let mut trace = TrainTrace::default();
    for iteration in 0..cfg.iterations {
        let old = policy.clone();
        let seed = round_seed(cfg.seed, iteration);
        let (batch, stats) = sample_round(&old, dataset, cfg.group_size, seed, reward);
        let mean_kl = mean_kl_to_reference(&old, &reference, &batch);
        let step = grpo_step(&policy, &reference, &old, &batch, cfg)?;
        policy = step.policy;
        trace.rows.push(TraceRow {
            iteration,
            mean_reward: stats.reward / stats.outputs,
            format_validity: stats.valid / stats.outputs,
            mean_nn_distance: if stats.nn_count > 0.0 {
                stats.nn_sum / stats.nn_count
            } else {
                f64::NAN
            },
            mean_kl,
            loss: step.loss,
        });
    }
    Ok((policy, trace))
}

/// Monte-Carlo summary of a policy on a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyEval {
    pub mean_reward: f64,
    pub format_validity: f64,
    pub mean_nn_distance: f64,
    pub mean_kl: f64,
    /// Mean predicted x (grid units) per context over valid outputs.
    pub mean_x: Vec<f64>,
}

pub fn evaluate_policy(
    policy: &ToyPolicy,
    reference: &ToyPolicy,
    dataset: &[TrainExample],
    samples_per_context: usize,
    seed: u64,
    reward: &RewardConfig,
) -> PolicyEval {
    let (batch, stats) = sample_round(policy, dataset, samples_per_context, seed, reward);
    let mut sum_x = vec![0.0; dataset.len()];
    let mut n_x = vec![0.0; dataset.len()];
    for s in &batch {
        let out = parse(&policy.decode(&s.rollout));
        if out.valid_format {
            for p in &out.points {
                sum_x[s.rollout.context] += p.gx;
                n_x[s.rollout.context] += 1.0;
            }
        }
    }
    PolicyEval {
        mean_reward: stats.reward / stats.outputs,
        format_validity: stats.valid / stats.outputs,
        mean_nn_distance: if stats.nn_count > 0.0 {
            stats.nn_sum / stats.nn_count
        } else {
            f64::NAN
        },
        mean_kl: mean_kl_to_reference(policy, reference, &batch),
        mean_x: sum_x
            .iter()
            .zip(&n_x)
            .map(|(s, n)| if *n > 0.0 { s / n } else { f64::NAN })
            .collect(),
    }
}
