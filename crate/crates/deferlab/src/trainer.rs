//! Constrained PPO training loop.
//!
//! Episodes are collected on-policy; reward and cost streams each get their
//! own critic, Monte Carlo returns and GAE advantages. The policy objective
//! is the clipped reward surrogate minus multiplier-weighted clipped cost
//! surrogates (pessimistic clipping on the constraint side), plus the value
//! errors and an entropy bonus. The two nonnegative multipliers track the
//! undiscounted episode cost fraction against a budget band: the upper one
//! grows while cost exceeds the band, the lower one while cost undershoots
//! it.

use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{coverage, Action, Environment, EpisodeConfig};
use crate::error::{Error, Result};
use crate::net::{log_softmax2, sample_action, NetConfig, Network, OutputGrad};
use crate::rng::stream_rng;

/// Budget band on the episode cost fraction (deferred fraction of steps).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Budget {
    pub lower: f64,
    pub upper: f64,
}

impl Budget {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lower)
            || !(0.0..=1.0).contains(&self.upper)
            || self.lower >= self.upper
        {
            return Err(Error::Config(format!(
                "budget band must satisfy 0 <= lower < upper <= 1, got [{}, {}]",
                self.lower, self.upper
            )));
        }
        Ok(())
    }
}

impl Default for Budget {
    fn default() -> Self {
        Budget {
            lower: 0.35,
            upper: 0.45,
        }
    }
}

/// All optimisation knobs, serde-loadable from the run config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: u64,
    pub episodes_per_iter: u64,
    pub minibatch_episodes: usize,
    pub update_epochs: u32,
    pub gamma: f64,
    pub gamma_cost: f64,
    pub gae_lambda: f64,
    pub clip_epsilon: f64,
    pub entropy_coef: f64,
    /// Linearly decay the entropy bonus to zero over training. Keeping the
    /// bonus flat leaves the converged policy noticeably stochastic, which
    /// hurts the greedy deployment mode.
    pub entropy_anneal: bool,
    pub value_coef: f64,
    pub learning_rate: f64,
    pub warmup_fraction: f64,
    pub max_grad_norm: f64,
    pub multiplier_lr: f64,
    pub multiplier_init: f64,
    pub multiplier_mode: MultiplierMode,
    pub budget: Budget,
    /// Save a checkpoint every this many iterations (0 = only on demand).
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 300,
            episodes_per_iter: 16,
            minibatch_episodes: 4,
            update_epochs: 4,
            gamma: 0.99,
            gamma_cost: 1.0,
            gae_lambda: 0.95,
            clip_epsilon: 0.2,
            entropy_coef: 0.001,
            entropy_anneal: true,
            value_coef: 0.5,
            learning_rate: 4e-4,
            warmup_fraction: 0.01,
            max_grad_norm: 0.5,
            multiplier_lr: 0.3,
            multiplier_init: 0.001,
            multiplier_mode: MultiplierMode::PlainGradient,
            budget: Budget::default(),
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.budget.validate()?;
        if self.iterations == 0 || self.episodes_per_iter == 0 || self.minibatch_episodes == 0 {
            return Err(Error::Config("iteration and batch counts must be positive".into()));
        }
        if self.minibatch_episodes as u64 > self.episodes_per_iter {
            return Err(Error::Config(
                "minibatch_episodes cannot exceed episodes_per_iter".into(),
            ));
        }
        if self.update_epochs == 0 {
            return Err(Error::Config("update_epochs must be positive".into()));
        }
        for (name, v, lo, hi) in [
            ("gamma", self.gamma, 0.0, 1.0),
            ("gamma_cost", self.gamma_cost, 0.0, 1.0),
            ("gae_lambda", self.gae_lambda, 0.0, 1.0),
            ("warmup_fraction", self.warmup_fraction, 0.0, 1.0),
        ] {
            if !(lo..=hi).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [{lo}, {hi}], got {v}")));
            }
        }
        if self.clip_epsilon <= 0.0 || self.clip_epsilon >= 1.0 {
            return Err(Error::Config("clip_epsilon must lie in (0, 1)".into()));
        }
        for (name, v) in [
            ("learning_rate", self.learning_rate),
            ("multiplier_lr", self.multiplier_lr),
            ("max_grad_norm", self.max_grad_norm),
        ] {
            if v <= 0.0 {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.entropy_coef < 0.0 || self.value_coef < 0.0 || self.multiplier_init < 0.0 {
            return Err(Error::Config("coefficients must be nonnegative".into()));
        }
        Ok(())
    }
}

/// One collected episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub episode_index: u64,
    pub features: Vec<Vec<f64>>,
    pub wfracs: Vec<f64>,
    pub actions: Vec<Action>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub costs: Vec<f64>,
    pub reward_values: Vec<f64>,
    pub cost_values: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Undiscounted deferred fraction of the episode.
    pub fn cost_fraction(&self) -> f64 {
        self.costs.iter().sum::<f64>() / self.len() as f64
    }

    pub fn reward_fraction(&self) -> f64 {
        self.rewards.iter().sum::<f64>() / self.len() as f64
    }
}

fn run_episode(net: &Network, env_cfg: &EpisodeConfig, episode_index: u64) -> Result<Trajectory> {
    let mut env = Environment::new(env_cfg.clone())?;
    env.set_next_episode(episode_index);
    let mut state = env.reset()?;
    let mut action_rng = stream_rng(env_cfg.seed, "action", episode_index);
    let mut hidden = net.initial_hidden();
    let t = env_cfg.length as usize;
    let mut traj = Trajectory {
        episode_index,
        features: Vec::with_capacity(t),
        wfracs: Vec::with_capacity(t),
        actions: Vec::with_capacity(t),
        log_probs: Vec::with_capacity(t),
        rewards: Vec::with_capacity(t),
        costs: Vec::with_capacity(t),
        reward_values: Vec::with_capacity(t),
        cost_values: Vec::with_capacity(t),
    };
    loop {
        let (out, next_hidden) = net.forward_step(&state.features, state.workload_fraction, &hidden);
        hidden = next_hidden;
        let (action, log_prob) = sample_action(out.logits, &mut action_rng);
        let outcome = env.step(action)?;
        traj.features.push(state.features.clone());
        traj.wfracs.push(state.workload_fraction);
        traj.actions.push(action);
        traj.log_probs.push(log_prob);
        traj.rewards.push(outcome.reward);
        traj.costs.push(outcome.cost);
        traj.reward_values.push(out.reward_value);
        traj.cost_values.push(out.cost_value);
        match outcome.next_state {
            Some(s) => state = s,
            None => break,
        }
    }
    Ok(traj)
}

/// Collect `count` on-policy episodes, indexed from `first_episode`. Each
/// episode derives its own random streams from its index, so the result is
/// identical whatever the worker count or completion order.
pub fn collect_batch(
    net: &Network,
    env_cfg: &EpisodeConfig,
    first_episode: u64,
    count: u64,
) -> Result<Vec<Trajectory>> {
    (0..count)
        .into_par_iter()
        .map(|i| run_episode(net, env_cfg, first_episode + i))
        .collect()
}

/// Discounted suffix sums: `R_t = x_t + gamma * R_{t+1}`.
pub fn discounted_returns(xs: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; xs.len()];
    let mut acc = 0.0;
    for t in (0..xs.len()).rev() {
        acc = xs[t] + gamma * acc;
        out[t] = acc;
    }
    out
}

/// Generalised advantage estimates with a terminal value of zero:
/// `delta_t = x_t + gamma * V_{t+1} - V_t`,
/// `A_t = delta_t + gamma * lambda * A_{t+1}`.
pub fn gae_advantages(xs: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Vec<f64> {
    assert_eq!(xs.len(), values.len());
    let n = xs.len();
    let mut out = vec![0.0; n];
    let mut acc = 0.0;
    for t in (0..n).rev() {
        let next_v = if t + 1 < n { values[t + 1] } else { 0.0 };
        let delta = xs[t] + gamma * next_v - values[t];
        acc = delta + gamma * lambda * acc;
        out[t] = acc;
    }
    out
}

/// Discounted horizon length `1 + gamma + ... + gamma^(len-1)`: the largest
/// return reachable with unit per-step signals. Dividing rewards by it keeps
/// critic regression targets in `[0, 1]` regardless of episode length, so the
/// value loss cannot drown the policy gradient in the shared trunk.
/// Advantages are normalized batch-wide afterwards, so the policy objective
/// itself is unaffected by the rescaling.
pub fn horizon_scale(gamma: f64, len: usize) -> f64 {
    if (gamma - 1.0).abs() < 1e-12 {
        len.max(1) as f64
    } else {
        (1.0 - gamma.powi(len as i32)) / (1.0 - gamma)
    }
}

/// Shift and scale the whole batch of advantages to zero mean and unit
/// standard deviation. A separate pass from GAE so the raw estimates stay
/// inspectable.
pub fn normalize_advantages(advs: &mut [Vec<f64>]) {
    let n: usize = advs.iter().map(Vec::len).sum();
    if n == 0 {
        return;
    }
    let mean = advs.iter().flatten().sum::<f64>() / n as f64;
    let var = advs
        .iter()
        .flatten()
        .map(|a| (a - mean) * (a - mean))
        .sum::<f64>()
        / n as f64;
    let scale = 1.0 / (var.sqrt() + 1e-8);
    for ep in advs.iter_mut() {
        for a in ep.iter_mut() {
            *a = (*a - mean) * scale;
        }
    }
}

/// Clipped surrogate `min(r A, clip(r) A)` (or `max` when `pessimistic`),
/// returning the value and its derivative with respect to the log-prob of
/// the taken action. The derivative is `r A` while the selected branch still
/// responds to the ratio and zero once clipping saturates.
pub fn clipped_surrogate(ratio: f64, adv: f64, eps: f64, pessimistic: bool) -> (f64, f64) {
    let unclipped = ratio * adv;
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps) * adv;
    let pick_unclipped = if pessimistic {
        unclipped >= clipped
    } else {
        unclipped <= clipped
    };
    if pick_unclipped {
        (unclipped, unclipped)
    } else {
        (clipped, 0.0)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LossStats {
    pub total: f64,
    pub reward_surrogate: f64,
    pub cost_upper_surrogate: f64,
    pub cost_lower_surrogate: f64,
    pub value: f64,
    pub entropy: f64,
}

/// The per-iteration batch together with its targets. Advantages are the
/// normalized batch; returns are raw Monte Carlo.
pub struct PpoBatch<'a> {
    pub trajs: &'a [Trajectory],
    pub adv_reward: &'a [Vec<f64>],
    pub adv_cost: &'a [Vec<f64>],
    pub ret_reward: &'a [Vec<f64>],
    pub ret_cost: &'a [Vec<f64>],
}

/// Loss and full parameter gradient over the selected episodes.
///
/// loss = -J_r + lambda_u * J_c_max - lambda_l * J_c_min
///        + value_coef * (MSE_r + MSE_c) - entropy_coef * H,
///
/// all terms averaged per step over the minibatch. `J_c_max` clips the cost
/// surrogate pessimistically for the upper constraint; `J_c_min` optimisti-
/// cally for the lower one.
pub fn ppo_loss_and_grad(
    net: &Network,
    batch: &PpoBatch,
    episodes: &[usize],
    lambda_upper: f64,
    lambda_lower: f64,
    cfg: &TrainConfig,
) -> (LossStats, Vec<f64>) {
    let n_steps: usize = episodes.iter().map(|&e| batch.trajs[e].len()).sum();
    let inv_n = 1.0 / n_steps as f64;
    let eps = cfg.clip_epsilon;

    let mut stats = LossStats::default();
    let mut grad = vec![0.0; net.param_len()];
    for &e in episodes {
        let traj = &batch.trajs[e];
        let (outs, trace) = net.forward_episode(&traj.features, &traj.wfracs);
        let mut out_grads = Vec::with_capacity(traj.len());
        for t in 0..traj.len() {
            let lp = log_softmax2(outs[t].logits);
            let p = [lp[0].exp(), lp[1].exp()];
            let a = match traj.actions[t] {
                Action::Ai => 0,
                Action::Human => 1,
            };
            let ratio = (lp[a] - traj.log_probs[t]).exp();

            let (s_r, g_r) = clipped_surrogate(ratio, batch.adv_reward[e][t], eps, false);
            let (s_cu, g_cu) = clipped_surrogate(ratio, batch.adv_cost[e][t], eps, true);
            let (s_cl, g_cl) = clipped_surrogate(ratio, batch.adv_cost[e][t], eps, false);
            let entropy = -(p[0] * lp[0] + p[1] * lp[1]);

            stats.reward_surrogate += s_r * inv_n;
            stats.cost_upper_surrogate += s_cu * inv_n;
            stats.cost_lower_surrogate += s_cl * inv_n;
            stats.entropy += entropy * inv_n;

            // d loss / d logp_a, then through the softmax.
            let dlogp = (-g_r + lambda_upper * g_cu - lambda_lower * g_cl) * inv_n;
            let mut dlogits = [0.0; 2];
            for k in 0..2 {
                let indicator = if k == a { 1.0 } else { 0.0 };
                dlogits[k] = dlogp * (indicator - p[k]);
                // Entropy bonus: dH/dl_k = -p_k (lp_k + H).
                dlogits[k] += cfg.entropy_coef * inv_n * p[k] * (lp[k] + entropy);
            }

            let vr_err = outs[t].reward_value - batch.ret_reward[e][t];
            let vc_err = outs[t].cost_value - batch.ret_cost[e][t];
            stats.value += cfg.value_coef * (vr_err * vr_err + vc_err * vc_err) * inv_n;
            out_grads.push(OutputGrad {
                dlogits,
                dreward_value: cfg.value_coef * 2.0 * vr_err * inv_n,
                dcost_value: cfg.value_coef * 2.0 * vc_err * inv_n,
            });
        }
        net.backward_episode(&traj.features, &traj.wfracs, &trace, &out_grads, &mut grad);
    }
    stats.total = -stats.reward_surrogate + lambda_upper * stats.cost_upper_surrogate
        - lambda_lower * stats.cost_lower_surrogate
        + stats.value
        - cfg.entropy_coef * stats.entropy;
    (stats, grad)
}

/// Scale the gradient down to `max_norm` if it exceeds it; returns the
/// pre-clip norm.
pub fn clip_grad_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in grad.iter_mut() {
            *g *= scale;
        }
    }
    norm
}

/// Standard Adam over the flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(len: usize) -> Self {
        Adam {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        assert_eq!(params.len(), grad.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// How the multiplier gradients are applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MultiplierMode {
    /// Plain ascent: `lambda += lr * gradient`, then projection to `>= 0`.
    PlainGradient,
    /// Adam on each multiplier's gradient, then projection to `>= 0`.
    Adam,
}

/// The two dual variables. `update` takes the measured episode cost fraction
/// and moves the upper multiplier along `jc - upper` and the lower one along
/// `lower - jc`, projecting both back to the nonnegative orthant.
#[derive(Debug, Clone)]
pub struct Multipliers {
    pub upper: f64,
    pub lower: f64,
    lr: f64,
    mode: MultiplierMode,
    adam_state: [(f64, f64); 2], // (m, v) per multiplier
    t: u64,
}

impl Multipliers {
    pub fn new(init: f64, lr: f64, mode: MultiplierMode) -> Self {
        Multipliers {
            upper: init,
            lower: init,
            lr,
            mode,
            adam_state: [(0.0, 0.0); 2],
            t: 0,
        }
    }

    pub fn update(&mut self, jc: f64, budget: &Budget) {
        let grads = [jc - budget.upper, budget.lower - jc];
        match self.mode {
            MultiplierMode::PlainGradient => {
                self.upper = (self.upper + self.lr * grads[0]).max(0.0);
                self.lower = (self.lower + self.lr * grads[1]).max(0.0);
            }
            MultiplierMode::Adam => {
                self.t += 1;
                let (b1, b2, eps) = (0.9, 0.999, 1e-8);
                let bc1 = 1.0 - b1_pow(b1, self.t);
                let bc2 = 1.0 - b1_pow(b2, self.t);
                let mut vals = [self.upper, self.lower];
                for i in 0..2 {
                    let (m, v) = &mut self.adam_state[i];
                    *m = b1 * *m + (1.0 - b1) * grads[i];
                    *v = b2 * *v + (1.0 - b2) * grads[i] * grads[i];
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    vals[i] = (vals[i] + self.lr * m_hat / (v_hat.sqrt() + eps)).max(0.0);
                }
                self.upper = vals[0];
                self.lower = vals[1];
            }
        }
    }
}

fn b1_pow(b: f64, t: u64) -> f64 {
    b.powi(t as i32)
}

/// Cosine schedule with a linear warmup over the first `warmup_fraction` of
/// all gradient updates.
pub fn learning_rate(cfg: &TrainConfig, update_step: u64, total_updates: u64) -> f64 {
    let warmup = ((cfg.warmup_fraction * total_updates as f64).ceil() as u64).max(1);
    if update_step < warmup {
        cfg.learning_rate * (update_step + 1) as f64 / warmup as f64
    } else {
        let span = (total_updates.saturating_sub(warmup)).max(1) as f64;
        let progress = (update_step - warmup) as f64 / span;
        cfg.learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

/// One line of the training log.
#[derive(Debug, Clone)]
pub struct TrainLogRow {
    pub iteration: u64,
    pub reward_rate: f64,
    pub cost_rate: f64,
    pub coverage: f64,
    pub lambda_upper: f64,
    pub lambda_lower: f64,
    pub loss: f64,
    pub entropy: f64,
    pub learning_rate: f64,
}

pub fn write_training_log(path: &Path, rows: &[TrainLogRow]) -> Result<()> {
    let mut text = String::from(
        "iteration,reward_rate,cost_rate,coverage,lambda_upper,lambda_lower,loss,entropy,learning_rate\n",
    );
    for r in rows {
        text.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.iteration,
            r.reward_rate,
            r.cost_rate,
            r.coverage,
            r.lambda_upper,
            r.lambda_lower,
            r.loss,
            r.entropy,
            r.learning_rate
        ));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub struct TrainResult {
    pub net: Network,
    pub log: Vec<TrainLogRow>,
}

/// Full training run. The environment seed doubles as the master seed for
/// initialisation, action sampling and minibatch shuffling, so a run is a
/// pure function of its configuration.
pub fn train(
    env_cfg: &EpisodeConfig,
    net_cfg: NetConfig,
    cfg: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainResult> {
    cfg.validate()?;
    env_cfg.validate()?;
    let seed = env_cfg.seed;
    let mut net = Network::new(net_cfg, &mut stream_rng(seed, "init", 0));
    let mut optimizer = Adam::new(net.param_len());
    let mut multipliers = Multipliers::new(cfg.multiplier_init, cfg.multiplier_lr, cfg.multiplier_mode);

    let minibatches_per_epoch =
        (cfg.episodes_per_iter as usize).div_ceil(cfg.minibatch_episodes) as u64;
    let total_updates = cfg.iterations * u64::from(cfg.update_epochs) * minibatches_per_epoch;
    let mut update_step = 0u64;
    let mut log = Vec::with_capacity(cfg.iterations as usize);

    for iter in 0..cfg.iterations {
        let trajs = collect_batch(&net, env_cfg, iter * cfg.episodes_per_iter, cfg.episodes_per_iter)?;
        let jc = trajs.iter().map(Trajectory::cost_fraction).sum::<f64>() / trajs.len() as f64;
        let reward_rate =
            trajs.iter().map(Trajectory::reward_fraction).sum::<f64>() / trajs.len() as f64;

        // Critics regress horizon-scaled returns; the recorded values are in
        // the same scaled units, so GAE sees consistent inputs.
        let scale_r = horizon_scale(cfg.gamma, env_cfg.length as usize);
        let scale_c = horizon_scale(cfg.gamma_cost, env_cfg.length as usize);
        let scaled: Vec<(Vec<f64>, Vec<f64>)> = trajs
            .iter()
            .map(|t| {
                (
                    t.rewards.iter().map(|r| r / scale_r).collect(),
                    t.costs.iter().map(|c| c / scale_c).collect(),
                )
            })
            .collect();
        let ret_reward: Vec<Vec<f64>> = scaled
            .iter()
            .map(|(r, _)| discounted_returns(r, cfg.gamma))
            .collect();
        let ret_cost: Vec<Vec<f64>> = scaled
            .iter()
            .map(|(_, c)| discounted_returns(c, cfg.gamma_cost))
            .collect();
        let mut adv_reward: Vec<Vec<f64>> = scaled
            .iter()
            .zip(trajs.iter())
            .map(|((r, _), t)| gae_advantages(r, &t.reward_values, cfg.gamma, cfg.gae_lambda))
            .collect();
        let mut adv_cost: Vec<Vec<f64>> = scaled
            .iter()
            .zip(trajs.iter())
            .map(|((_, c), t)| gae_advantages(c, &t.cost_values, cfg.gamma_cost, cfg.gae_lambda))
            .collect();
        normalize_advantages(&mut adv_reward);
        normalize_advantages(&mut adv_cost);
        let batch = PpoBatch {
            trajs: &trajs,
            adv_reward: &adv_reward,
            adv_cost: &adv_cost,
            ret_reward: &ret_reward,
            ret_cost: &ret_cost,
        };

        let mut iter_cfg = cfg.clone();
        if cfg.entropy_anneal {
            let progress = iter as f64 / cfg.iterations as f64;
            iter_cfg.entropy_coef = cfg.entropy_coef * (1.0 - progress);
        }

        let mut last_stats = LossStats::default();
        let mut last_lr = 0.0;
        for epoch in 0..u64::from(cfg.update_epochs) {
            let mut order: Vec<usize> = (0..trajs.len()).collect();
            let mut shuffle_rng =
                stream_rng(seed, "shuffle", iter * u64::from(cfg.update_epochs) + epoch);
            order.shuffle(&mut shuffle_rng);
            for chunk in order.chunks(cfg.minibatch_episodes) {
                let (stats, mut grad) = ppo_loss_and_grad(
                    &net,
                    &batch,
                    chunk,
                    multipliers.upper,
                    multipliers.lower,
                    &iter_cfg,
                );
                if !stats.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                    return Err(Error::Numeric(format!(
                        "non-finite loss or gradient at iteration {iter}"
                    )));
                }
                clip_grad_norm(&mut grad, cfg.max_grad_norm);
                let lr = learning_rate(cfg, update_step, total_updates);
                optimizer.step(&mut net.params, &grad, lr);
                update_step += 1;
                last_stats = stats;
                last_lr = lr;
            }
        }
        multipliers.update(jc, &cfg.budget);

        log.push(TrainLogRow {
            iteration: iter,
            reward_rate,
            cost_rate: jc,
            coverage: coverage(&[jc]),
            lambda_upper: multipliers.upper,
            lambda_lower: multipliers.lower,
            loss: last_stats.total,
            entropy: last_stats.entropy,
            learning_rate: last_lr,
        });

        if let Some(dir) = checkpoint_dir {
            if cfg.checkpoint_every > 0 && (iter + 1) % cfg.checkpoint_every == 0 {
                crate::net::save_checkpoint(&dir.join(format!("checkpoint_{:05}.json", iter + 1)), &net)?;
            }
        }
    }
    Ok(TrainResult { net, log })
}
