//! On-policy optimization mechanism: generalized advantage estimation, the
//! clipped surrogate objective, value regression, entropy bonus, and the
//! composite actor-critic update.

use serde::{Deserialize, Serialize};

use crate::nn::{
    gaussian_log_prob, GaussianPolicy, Gradients, Mlp, OptAlgo, OptimizerState,
};
use crate::rng::SimRng;
use crate::{Error, Result};

/// On-policy trainer hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct OnPomConfig {
    pub clip_epsilon: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub epochs_per_batch: u32,
    pub minibatch_size: usize,
    /// Environment steps per iteration, aggregated across workers.
    pub rollout_horizon: usize,
}

impl Default for OnPomConfig {
    fn default() -> Self {
        Self {
            clip_epsilon: 0.3,
            gamma: 0.99,
            gae_lambda: 0.95,
            value_coef: 0.5,
            entropy_coef: 0.01,
            epochs_per_batch: 4,
            minibatch_size: 512,
            rollout_horizon: 4096,
        }
    }
}

impl OnPomConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.clip_epsilon > 0.0
            && self.clip_epsilon < 1.0
            && (0.0..1.0).contains(&self.gamma)
            && (0.0..=1.0).contains(&self.gae_lambda)
            && self.value_coef >= 0.0
            && self.entropy_coef >= 0.0
            && self.epochs_per_batch >= 1
            && self.minibatch_size >= 1
            && self.rollout_horizon >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("bad onpom config: {self:?}")))
        }
    }
}

/// How a stored step relates to the one after it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepEnd {
    /// Episode continues within the segment.
    Continue,
    /// Episode truly ended (goal/collision): zero bootstrap.
    Terminal,
    /// Episode was cut off; bootstrap with the critic's value of the state
    /// that followed.
    TruncatedWith(f64),
}

impl StepEnd {
    pub fn is_boundary(self) -> bool {
        !matches!(self, StepEnd::Continue)
    }
}

/// GAE over one contiguous segment from a single environment instance.
///
/// `tail_bootstrap` is the critic's value of the state following the last
/// step, used when the segment stops mid-episode.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    ends: &[StepEnd],
    tail_bootstrap: f64,
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    if values.len() != n || ends.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "gae arrays disagree: rewards {n}, values {}, ends {}",
            values.len(),
            ends.len()
        )));
    }
    let mut advantages = vec![0.0; n];
    let mut returns = vec![0.0; n];
    let mut acc = 0.0;
    for t in (0..n).rev() {
        let next_value = match ends[t] {
            StepEnd::Terminal => 0.0,
            StepEnd::TruncatedWith(v) => v,
            StepEnd::Continue => {
                if t + 1 < n {
                    values[t + 1]
                } else {
                    tail_bootstrap
                }
            }
        };
        let delta = rewards[t] + gamma * next_value - values[t];
        acc = if ends[t].is_boundary() {
            delta
        } else {
            delta + gamma * lambda * acc
        };
        advantages[t] = acc;
        returns[t] = acc + values[t];
    }
    Ok((advantages, returns))
}

/// Pessimistic clipped objective for one sample.
pub fn clipped_surrogate(ratio: f64, advantage: f64, epsilon: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon);
    (ratio * advantage).min(clipped * advantage)
}

/// Mean squared error between predicted values and empirical returns.
pub fn value_loss(values: &[f64], returns: &[f64]) -> f64 {
    assert_eq!(values.len(), returns.len());
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    values
        .iter()
        .zip(returns)
        .map(|(v, r)| (v - r) * (v - r))
        .sum::<f64>()
        / n
}

/// One instance's contiguous slice of experience.
#[derive(Debug, Clone, Default)]
pub struct RolloutSegment {
    pub observations: Vec<f64>,
    pub obs_dim: usize,
    pub actions: Vec<f64>,
    pub log_probs_old: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub ends: Vec<StepEnd>,
    pub tail_bootstrap: f64,
}

impl RolloutSegment {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// Merged experience with derived advantages and returns.
#[derive(Debug, Clone)]
pub struct RolloutBatch {
    pub observations: Vec<f64>,
    pub obs_dim: usize,
    pub actions: Vec<f64>,
    pub log_probs_old: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl RolloutBatch {
    /// Merge per-instance segments (already in canonical instance order) and
    /// run GAE per segment.
    pub fn from_segments(segments: &[RolloutSegment], cfg: &OnPomConfig) -> Result<Self> {
        let obs_dim = segments.first().map_or(0, |s| s.obs_dim);
        let total: usize = segments.iter().map(RolloutSegment::len).sum();
        let mut batch = RolloutBatch {
            observations: Vec::with_capacity(total * obs_dim),
            obs_dim,
            actions: Vec::with_capacity(total),
            log_probs_old: Vec::with_capacity(total),
            rewards: Vec::with_capacity(total),
            values: Vec::with_capacity(total),
            advantages: Vec::with_capacity(total),
            returns: Vec::with_capacity(total),
        };
        for seg in segments {
            let (adv, ret) = compute_gae(
                &seg.rewards,
                &seg.values,
                &seg.ends,
                seg.tail_bootstrap,
                cfg.gamma,
                cfg.gae_lambda,
            )?;
            batch.observations.extend_from_slice(&seg.observations);
            batch.actions.extend_from_slice(&seg.actions);
            batch.log_probs_old.extend_from_slice(&seg.log_probs_old);
            batch.rewards.extend_from_slice(&seg.rewards);
            batch.values.extend_from_slice(&seg.values);
            batch.advantages.extend(adv);
            batch.returns.extend(ret);
        }
        if !batch.advantages.iter().all(|a| a.is_finite()) {
            return Err(Error::NonFinite("advantage estimate".into()));
        }
        Ok(batch)
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Composite loss value and gradients for one minibatch.
#[derive(Debug)]
pub struct CompositeLoss {
    pub loss: f64,
    pub policy_term: f64,
    pub value_term: f64,
    pub entropy_term: f64,
    pub mean_ratio: f64,
    pub policy_grads: Gradients,
    pub critic_grads: Gradients,
}

/// Evaluate `-L_clip + c1 L_vf - c2 H` over the minibatch rows `idx`,
/// with advantages normalized inside the minibatch, and backpropagate
/// through both networks.
pub fn composite_loss(
    policy: &GaussianPolicy,
    critic: &Mlp,
    batch: &RolloutBatch,
    idx: &[usize],
    cfg: &OnPomConfig,
) -> Result<CompositeLoss> {
    let b = idx.len();
    if b == 0 {
        return Err(Error::Usage("empty minibatch".into()));
    }
    let d = batch.obs_dim;
    let mut obs = Vec::with_capacity(b * d);
    for &i in idx {
        obs.extend_from_slice(&batch.observations[i * d..(i + 1) * d]);
    }

    // Normalize advantages inside the minibatch.
    let mut adv: Vec<f64> = idx.iter().map(|&i| batch.advantages[i]).collect();
    let mean = adv.iter().sum::<f64>() / b as f64;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / b as f64;
    let std = var.sqrt();
    for a in adv.iter_mut() {
        *a = (*a - mean) / (std + 1e-8);
    }

    let pcache = policy.net.forward_batch(&obs, b)?;
    let vcache = critic.forward_batch(&obs, b)?;
    let pout = pcache.output().to_vec();
    let vout = vcache.output().to_vec();

    let bn = b as f64;
    let mut d_policy = vec![0.0; b * 2];
    let mut d_value = vec![0.0; b];
    let mut policy_term = 0.0;
    let mut value_term = 0.0;
    let mut entropy_term = 0.0;
    let mut mean_ratio = 0.0;
    for (row, &i) in idx.iter().enumerate() {
        let head = GaussianPolicy::head_from_output(&pout[row * 2..row * 2 + 2]);
        let a = batch.actions[i];
        let z = (a - head.mean) / head.sigma;
        let lp = gaussian_log_prob(a, head.mean, head.sigma);
        let ratio = (lp - batch.log_probs_old[i]).exp();
        mean_ratio += ratio / bn;

        let advantage = adv[row];
        policy_term -= clipped_surrogate(ratio, advantage, cfg.clip_epsilon) / bn;
        // The surrogate only passes gradient while the unclipped branch is
        // active.
        let clip_blocked = (advantage >= 0.0 && ratio > 1.0 + cfg.clip_epsilon)
            || (advantage < 0.0 && ratio < 1.0 - cfg.clip_epsilon);
        let d_lp = if clip_blocked {
            0.0
        } else {
            -ratio * advantage / bn
        };

        // Entropy bonus: H = log sigma + const.
        entropy_term += (head.log_sigma() + 0.5 * (1.0 + 1.8378770664093453)) / bn;

        let d_mean = d_lp * (z / head.sigma);
        let d_log_sigma = d_lp * (z * z - 1.0) - cfg.entropy_coef / bn;
        d_policy[row * 2] = d_mean;
        d_policy[row * 2 + 1] = d_log_sigma * head.clamp_mask();

        let v = vout[row];
        let r = batch.returns[i];
        value_term += (v - r) * (v - r) / bn;
        d_value[row] = cfg.value_coef * 2.0 * (v - r) / bn;
    }

    let loss = policy_term + cfg.value_coef * value_term - cfg.entropy_coef * entropy_term;
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!(
            "composite loss diverged: policy {policy_term}, value {value_term}"
        )));
    }

    let mut policy_grads = Gradients::zeros_like(&policy.net);
    policy.net.backward_batch(&pcache, &d_policy, &mut policy_grads, false)?;
    let mut critic_grads = Gradients::zeros_like(critic);
    critic.backward_batch(&vcache, &d_value, &mut critic_grads, false)?;
    if !policy_grads.is_finite() || !critic_grads.is_finite() {
        return Err(Error::NonFinite("composite loss gradients".into()));
    }

    Ok(CompositeLoss {
        loss,
        policy_term,
        value_term,
        entropy_term,
        mean_ratio,
        policy_grads,
        critic_grads,
    })
}

/// Per-update diagnostics averaged over the epoch sweeps.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct UpdateMetrics {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
}

/// Actor, critic, and their optimizers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OnPomLearner {
    pub policy: GaussianPolicy,
    pub critic: Mlp,
    pub policy_opt: OptimizerState,
    pub critic_opt: OptimizerState,
}

impl OnPomLearner {
    pub fn new(
        obs_dim: usize,
        hidden: &[usize],
        algo: OptAlgo,
        learning_rate: f64,
        rng: &mut SimRng,
    ) -> Self {
        let policy = GaussianPolicy::new(obs_dim, hidden, rng);
        let mut dims = vec![obs_dim];
        dims.extend_from_slice(hidden);
        dims.push(1);
        let critic = Mlp::new(&dims, rng, 1.0);
        let policy_opt = OptimizerState::new(algo, learning_rate, &policy.net);
        let critic_opt = OptimizerState::new(algo, learning_rate, &critic);
        Self {
            policy,
            critic,
            policy_opt,
            critic_opt,
        }
    }

    /// Run `epochs_per_batch` shuffled minibatch sweeps over the rollout and
    /// apply the composite update after each minibatch.
    pub fn update(
        &mut self,
        batch: &RolloutBatch,
        cfg: &OnPomConfig,
        rng: &mut SimRng,
    ) -> Result<UpdateMetrics> {
        if batch.is_empty() {
            return Err(Error::Usage("update on an empty rollout".into()));
        }
        let mut order: Vec<usize> = (0..batch.len()).collect();
        let mut metrics = UpdateMetrics::default();
        let mut count = 0usize;
        for _ in 0..cfg.epochs_per_batch {
            rng.shuffle(&mut order);
            for chunk in order.chunks(cfg.minibatch_size) {
                let out = composite_loss(&self.policy, &self.critic, batch, chunk, cfg)?;
                self.policy_opt.apply(&mut self.policy.net, &out.policy_grads)?;
                self.critic_opt.apply(&mut self.critic, &out.critic_grads)?;
                metrics.policy_loss += out.policy_term;
                metrics.value_loss += out.value_term;
                metrics.entropy += out.entropy_term;
                count += 1;
            }
        }
        let k = count.max(1) as f64;
        metrics.policy_loss /= k;
        metrics.value_loss /= k;
        metrics.entropy /= k;
        Ok(metrics)
    }
}
