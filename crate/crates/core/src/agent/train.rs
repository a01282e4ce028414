//! Single-actor, single-learner training loop: act with exploration noise,
//! store transitions, fit the quantile critic on distributional Bellman
//! targets, ascend the actor through the critic's risk functional, and
//! soft-update the target copies. Deterministic given the seed.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use super::nn::{Adam, DenseNet, OutputActivation};
use super::quantile::{quantile_huber_loss, quantile_taus};
use super::replay::{ReplayBuffer, TransitionSample};
use super::StateNorm;
use crate::analytics::var_pnl;
use crate::env::HedgeEnv;
use crate::error::{Error, Result};
use crate::strategies::RlPolicy;
use crate::util::mix_seed;

/// Scalar risk functional the actor maximizes, read off the critic's
/// quantile locations (lowest fixed probabilities = left tail).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum RiskObjective {
    /// Mean of the worst 1% of quantiles.
    #[default]
    Tail1,
    /// Mean of the worst 5% of quantiles.
    Tail5,
    /// Plain expectation.
    Mean,
}

impl RiskObjective {
    /// Number of left-tail locations averaged for `n` quantiles.
    pub fn tail_count(&self, n: usize) -> usize {
        match self {
            RiskObjective::Tail1 => ((n as f64 * 0.01).round() as usize).max(1),
            RiskObjective::Tail5 => ((n as f64 * 0.05).round() as usize).max(1),
            RiskObjective::Mean => n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub episodes: usize,
    pub batch_size: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    /// Target-network soft-update rate.
    pub soft_tau: f64,
    /// Std-dev of Gaussian noise added to the pre-squash action.
    pub noise_sigma: f64,
    /// Return discount inside the Bellman target.
    pub gamma: f64,
    pub buffer_capacity: usize,
    pub n_quantiles: usize,
    /// Huber threshold of the quantile loss; 0 selects the pure pinball loss.
    pub huber_kappa: f64,
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub objective: RiskObjective,
    pub seed: u64,
    /// Transitions collected before updates begin.
    pub warmup_transitions: usize,
    /// Environment steps between gradient updates.
    pub update_every: usize,
    /// Episodes between held-out evaluations (0 disables them).
    pub eval_every: usize,
    pub eval_episodes: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            episodes: 5000,
            batch_size: 256,
            actor_lr: 1e-4,
            critic_lr: 1e-3,
            soft_tau: 5e-3,
            noise_sigma: 0.1,
            gamma: 1.0,
            buffer_capacity: 1_000_000,
            n_quantiles: 100,
            huber_kappa: 1.0,
            actor_hidden: vec![256, 256, 256],
            critic_hidden: vec![512, 512, 256],
            objective: RiskObjective::Tail1,
            seed: 2024,
            warmup_transitions: 1000,
            update_every: 1,
            eval_every: 500,
            eval_episodes: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0
            || self.buffer_capacity == 0
            || self.n_quantiles == 0
            || self.update_every == 0
        {
            return Err(Error::invalid("train sizes must be positive"));
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0 && self.soft_tau > 0.0) {
            return Err(Error::invalid("learning rates must be positive"));
        }
        if self.noise_sigma < 0.0 || self.huber_kappa < 0.0 {
            return Err(Error::invalid("noise and huber threshold must be >= 0"));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::invalid("gamma must lie in (0, 1]"));
        }
        if self.actor_hidden.is_empty() || self.critic_hidden.is_empty() {
            return Err(Error::invalid("networks need at least one hidden layer"));
        }
        Ok(())
    }
}

/// One training-log record (one per episode).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainLogRow {
    pub episode: usize,
    pub steps: usize,
    pub total_reward: f64,
    pub pnl: f64,
    /// Mean critic loss over the episode's updates (0 before warmup).
    pub critic_loss: f64,
    /// Held-out 95% VaR of PnL when evaluated this episode.
    pub eval_var95: Option<f64>,
}

pub struct TrainOutput {
    pub policy: RlPolicy,
    pub critic: DenseNet,
    pub log: Vec<TrainLogRow>,
    pub updates: usize,
}

/// Offset mixing training seeds away from held-out evaluation seeds.
const EVAL_SEED_SALT: u64 = 0x5EED_0E7A_1000_0000;

fn concat_state_action(states: &[f64], actions: &[f64], dim: usize, batch: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(batch * (dim + 1));
    for b in 0..batch {
        out.extend_from_slice(&states[b * dim..(b + 1) * dim]);
        out.push(actions[b]);
    }
    out
}

/// Greedy rollouts of `actor` on held-out seeds; returns per-episode PnL.
pub fn evaluate_actor(
    env: &mut HedgeEnv,
    actor: &DenseNet,
    norm: &StateNorm,
    base_seed: u64,
    episodes: usize,
) -> Result<Vec<f64>> {
    let mut pnls = Vec::with_capacity(episodes);
    for i in 0..episodes {
        let seed = mix_seed(base_seed ^ EVAL_SEED_SALT, i as u64);
        env.reset(seed)?;
        while !env.is_terminal() {
            let feat = norm.features(env.state());
            let a = actor.forward(&feat)[0].clamp(0.0, 1.0);
            env.step(a)?;
        }
        pnls.push(env.current_value());
    }
    Ok(pnls)
}

pub fn train(env: &mut HedgeEnv, cfg: &TrainConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    let norm = StateNorm::from_note(&env.config().note);
    let state_dim = norm.feature_dim();
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);

    let mut actor_sizes = vec![state_dim];
    actor_sizes.extend_from_slice(&cfg.actor_hidden);
    actor_sizes.push(1);
    let mut critic_sizes = vec![state_dim + 1];
    critic_sizes.extend_from_slice(&cfg.critic_hidden);
    critic_sizes.push(cfg.n_quantiles);

    let mut actor = DenseNet::new(&actor_sizes, OutputActivation::Sigmoid, &mut rng);
    let mut critic = DenseNet::new(&critic_sizes, OutputActivation::Linear, &mut rng);
    let mut actor_target = actor.clone();
    let mut critic_target = critic.clone();
    let mut adam_actor = Adam::new(&actor, cfg.actor_lr);
    let mut adam_critic = Adam::new(&critic, cfg.critic_lr);
    let taus = quantile_taus(cfg.n_quantiles);
    let tail_count = cfg.objective.tail_count(cfg.n_quantiles);

    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity);
    let mut log = Vec::with_capacity(cfg.episodes);
    let mut updates = 0usize;
    let mut env_steps = 0usize;
    let mut guard_losses: Vec<f64> = Vec::new();
    let mut guard_level = f64::INFINITY;
    let normal = rand_distr::Normal::new(0.0, 1.0).expect("valid normal");

    for episode in 0..cfg.episodes {
        let episode_seed = mix_seed(cfg.seed, episode as u64);
        env.reset(episode_seed)?;
        let mut feat = norm.features(env.state());
        let mut total_reward = 0.0;
        let mut steps = 0usize;
        let mut loss_sum = 0.0;
        let mut loss_n = 0usize;

        while !env.is_terminal() {
            let logit = actor.forward_preactivation(&feat)[0];
            let noise: f64 = normal.sample(&mut rng) * cfg.noise_sigma;
            let action = (1.0 / (1.0 + (-(logit + noise)).exp())).clamp(0.0, 1.0);
            let tr = env.step(action)?;
            let next_feat = norm.features(&tr.next_state);
            buffer.push(TransitionSample {
                state: feat,
                action,
                reward: tr.reward,
                next_state: next_feat.clone(),
                terminal: tr.terminal,
            });
            feat = next_feat;
            total_reward += tr.reward;
            steps += 1;
            env_steps += 1;

            if buffer.len() >= cfg.warmup_transitions.max(cfg.batch_size)
                && env_steps % cfg.update_every == 0
            {
                let loss = update_once(
                    &mut actor,
                    &mut critic,
                    &actor_target,
                    &critic_target,
                    &mut adam_actor,
                    &mut adam_critic,
                    &buffer,
                    &mut rng,
                    cfg,
                    &taus,
                    tail_count,
                    state_dim,
                )?;
                updates += 1;
                loss_sum += loss;
                loss_n += 1;
                if guard_losses.len() < 50 {
                    guard_losses.push(loss);
                    if guard_losses.len() == 50 {
                        let avg =
                            guard_losses.iter().sum::<f64>() / guard_losses.len() as f64;
                        guard_level = 1e3 * avg.max(1e-9);
                    }
                } else if loss > guard_level {
                    return Err(Error::TrainingDiverged {
                        update: updates,
                        loss,
                    });
                }
                actor_target.soft_update_from(&actor, cfg.soft_tau);
                critic_target.soft_update_from(&critic, cfg.soft_tau);
            }
        }

        let eval_var95 = if cfg.eval_every > 0
            && cfg.eval_episodes > 0
            && (episode + 1) % cfg.eval_every == 0
        {
            let pnls = evaluate_actor(env, &actor, &norm, cfg.seed, cfg.eval_episodes)?;
            Some(var_pnl(&pnls, 0.95)?)
        } else {
            None
        };

        log.push(TrainLogRow {
            episode,
            steps,
            total_reward,
            pnl: env.current_value(),
            critic_loss: if loss_n > 0 {
                loss_sum / loss_n as f64
            } else {
                0.0
            },
            eval_var95,
        });
    }

    Ok(TrainOutput {
        policy: RlPolicy { actor, norm },
        critic,
        log,
        updates,
    })
}

#[allow(clippy::too_many_arguments)]
fn update_once(
    actor: &mut DenseNet,
    critic: &mut DenseNet,
    actor_target: &DenseNet,
    critic_target: &DenseNet,
    adam_actor: &mut Adam,
    adam_critic: &mut Adam,
    buffer: &ReplayBuffer,
    rng: &mut ChaCha12Rng,
    cfg: &TrainConfig,
    taus: &[f64],
    tail_count: usize,
    state_dim: usize,
) -> Result<f64> {
    let idx = buffer.sample_indices(rng, cfg.batch_size);
    let batch = idx.len();
    let nq = cfg.n_quantiles;

    let mut states = Vec::with_capacity(batch * state_dim);
    let mut actions = Vec::with_capacity(batch);
    let mut rewards = Vec::with_capacity(batch);
    let mut next_states = Vec::with_capacity(batch * state_dim);
    let mut terminals = Vec::with_capacity(batch);
    for &i in &idx {
        let s = buffer.get(i);
        states.extend_from_slice(&s.state);
        actions.push(s.action);
        rewards.push(s.reward);
        next_states.extend_from_slice(&s.next_state);
        terminals.push(s.terminal);
    }

    // Distributional Bellman targets from the target networks.
    let next_actions = actor_target.forward_batch(&next_states, batch);
    let next_sa = concat_state_action(&next_states, next_actions.output(), state_dim, batch);
    let next_thetas = critic_target.forward_batch(&next_sa, batch);
    let mut targets = vec![0.0; batch * nq];
    for b in 0..batch {
        for j in 0..nq {
            targets[b * nq + j] = if terminals[b] {
                rewards[b]
            } else {
                rewards[b] + cfg.gamma * next_thetas.output()[b * nq + j]
            };
        }
    }

    // Critic step on the quantile Huber loss.
    let sa = concat_state_action(&states, &actions, state_dim, batch);
    let cache = critic.forward_batch(&sa, batch);
    let mut dl = vec![0.0; batch * nq];
    let mut loss_total = 0.0;
    for b in 0..batch {
        let theta = &cache.output()[b * nq..(b + 1) * nq];
        let target = &targets[b * nq..(b + 1) * nq];
        let (loss, grad) = quantile_huber_loss(theta, target, taus, cfg.huber_kappa);
        loss_total += loss / batch as f64;
        for j in 0..nq {
            dl[b * nq + j] = grad[j] / batch as f64;
        }
    }
    let (critic_grads, _) = critic.backward(&cache, &dl);
    adam_critic.step(critic, &critic_grads);

    // Actor step: ascend the risk functional through the (frozen) critic.
    let actor_cache = actor.forward_batch(&states, batch);
    let sa_pred = concat_state_action(&states, actor_cache.output(), state_dim, batch);
    let critic_cache = critic.forward_batch(&sa_pred, batch);
    let mut dl_theta = vec![0.0; batch * nq];
    let weight = -1.0 / (batch * tail_count) as f64;
    for b in 0..batch {
        for j in 0..tail_count {
            dl_theta[b * nq + j] = weight;
        }
    }
    let (_, dl_dsa) = critic.backward(&critic_cache, &dl_theta);
    let mut dl_da = vec![0.0; batch];
    for b in 0..batch {
        dl_da[b] = dl_dsa[b * (state_dim + 1) + state_dim];
    }
    let (actor_grads, _) = actor.backward(&actor_cache, &dl_da);
    adam_actor.step(actor, &actor_grads);

    Ok(loss_total)
}
