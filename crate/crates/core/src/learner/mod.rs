//! Off-policy multi-agent actor-critic learners.
//!
//! [`Learner`] implements the Lagrangian-constrained learner with a
//! bootstrapped cost critic for the policy gradient and a one-step cost
//! estimator for the multiplier update. The unconstrained baseline is the
//! same learner with only the reward critic.

mod buffer;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{Activation, Adam, Checkpoint, Gradients, Mlp, NnError, Tape};

pub use buffer::ReplayBuffer;

#[derive(Debug, Error)]
pub enum LearnerError {
    #[error("at most one ablation flag may be set")]
    ConflictingFlags,
    #[error("ablation flags only apply to the constrained learner")]
    AblationOnBaseline,
    #[error("non-finite {what} in update {update}")]
    NonFinite { what: &'static str, update: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Madelc,
    MaddpgBaseline,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Madelc => "madelc",
            Algorithm::MaddpgBaseline => "maddpg_baseline",
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "madelc" => Ok(Algorithm::Madelc),
            "maddpg_baseline" => Ok(Algorithm::MaddpgBaseline),
            other => Err(format!("unknown algorithm `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Ablation {
    /// Actor penalty uses the one-step estimator instead of the cost critic.
    pub no_cost_critic: bool,
    /// Multiplier update uses the cost critic instead of the estimator.
    pub no_cost_estimator: bool,
    /// Rewards are replaced by zero; only the cost term drives the actor.
    pub no_q_loss: bool,
}

impl Ablation {
    pub fn validate(&self) -> Result<(), LearnerError> {
        let set = [self.no_cost_critic, self.no_cost_estimator, self.no_q_loss]
            .iter()
            .filter(|&&f| f)
            .count();
        if set > 1 {
            Err(LearnerError::ConflictingFlags)
        } else {
            Ok(())
        }
    }

    pub fn any(&self) -> bool {
        self.no_cost_critic || self.no_cost_estimator || self.no_q_loss
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnerConfig {
    pub algorithm: Algorithm,
    pub ablation: Ablation,
    pub hidden: Vec<usize>,
    pub lr_critic: f64,
    pub lr_actor: f64,
    pub lr_alpha: f64,
    pub lr_estimator: f64,
    pub tau: f64,
    pub gamma: f64,
    pub alpha_init: f64,
    pub noise_std: f64,
    pub cost_limit: f64,
    pub batch_size: usize,
    pub critic_updates: usize,
    pub actor_updates: usize,
    pub grad_clip: Option<f64>,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            algorithm: Algorithm::Madelc,
            ablation: Ablation::default(),
            hidden: vec![64, 64],
            lr_critic: 1e-3,
            lr_actor: 1e-4,
            lr_alpha: 1e-4,
            lr_estimator: 1e-3,
            tau: 0.01,
            gamma: 0.99,
            alpha_init: 1.0,
            noise_std: 1.0,
            cost_limit: -0.5,
            batch_size: 128,
            critic_updates: 10,
            actor_updates: 1,
            grad_clip: None,
        }
    }
}

/// One stored step, already in model-input coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Experience {
    /// Scaled global state.
    pub state: Vec<f64>,
    /// Actor input per agent (scaled, padded observation plus one-hot id).
    pub actor_inputs: Vec<Vec<f64>>,
    pub action: Vec<f64>,
    pub reward: f64,
    /// Normalized cost.
    pub cost: f64,
    pub next_state: Vec<f64>,
    pub next_actor_inputs: Vec<Vec<f64>>,
    /// Absorbing end; no bootstrapping from `next_state`.
    pub terminal: bool,
}

/// Call counts used to check which models each variant touches.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counters {
    pub estimator_queries: usize,
    pub estimator_updates: usize,
    pub cost_critic_actor_queries: usize,
    pub cost_critic_alpha_queries: usize,
    pub critic_updates: usize,
    pub actor_updates: usize,
    pub alpha_updates: usize,
}

/// Losses of one update round, measured before each optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateStats {
    pub loss_r: f64,
    pub loss_c: Option<f64>,
    pub loss_estimator: Option<f64>,
    pub loss_actor: f64,
    pub alpha: Option<f64>,
}

struct Critic {
    net: Mlp,
    target: Mlp,
    opt: Adam,
}

impl Critic {
    fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Result<Self, NnError> {
        let net = Mlp::new(sizes, Activation::Relu, Activation::Identity, rng)?;
        Ok(Critic {
            target: net.clone(),
            opt: Adam::new(&net),
            net,
        })
    }
}

/// Concatenates state and joint action into a critic input.
pub fn critic_input(state: &[f64], action: &[f64]) -> Vec<f64> {
    let mut x = Vec::with_capacity(state.len() + action.len());
    x.extend_from_slice(state);
    x.extend_from_slice(action);
    x
}

/// Pads an observation to `width` and appends a one-hot agent id.
pub fn actor_input(obs: &[f64], width: usize, agent: usize, n_agents: usize) -> Vec<f64> {
    let mut x = Vec::with_capacity(width + n_agents);
    x.extend_from_slice(obs);
    x.resize(width, 0.0);
    x.extend((0..n_agents).map(|k| if k == agent { 1.0 } else { 0.0 }));
    x
}

fn clip(grads: &mut Gradients, max_norm: Option<f64>) {
    if let Some(max) = max_norm {
        let n = grads.norm();
        if n > max {
            grads.scale(max / n);
        }
    }
}

pub struct Learner {
    cfg: LearnerConfig,
    n_agents: usize,
    state_dim: usize,
    actor: Mlp,
    actor_target: Mlp,
    actor_opt: Adam,
    reward_critic: Critic,
    cost_critic: Option<Critic>,
    estimator: Option<(Mlp, Adam)>,
    alpha: f64,
    counters: Counters,
    updates: usize,
}

impl Learner {
    pub fn new<R: Rng + ?Sized>(
        cfg: LearnerConfig,
        n_agents: usize,
        obs_width: usize,
        state_dim: usize,
        rng: &mut R,
    ) -> Result<Self, LearnerError> {
        cfg.ablation.validate()?;
        let constrained = cfg.algorithm == Algorithm::Madelc;
        if !constrained && cfg.ablation.any() {
            return Err(LearnerError::AblationOnBaseline);
        }
        let sizes = |input: usize| {
            let mut s = vec![input];
            s.extend(&cfg.hidden);
            s.push(1);
            s
        };
        let actor = Mlp::new(&sizes(obs_width + n_agents), Activation::Relu, Activation::Tanh, rng)?;
        let critic_in = state_dim + n_agents;
        let reward_critic = Critic::new(&sizes(critic_in), rng)?;
        let cost_critic = if constrained && !cfg.ablation.no_cost_critic {
            Some(Critic::new(&sizes(critic_in), rng)?)
        } else {
            None
        };
        let estimator = if constrained && !cfg.ablation.no_cost_estimator {
            let net = Mlp::new(&sizes(critic_in), Activation::Relu, Activation::Identity, rng)?;
            let opt = Adam::new(&net);
            Some((net, opt))
        } else {
            None
        };
        Ok(Learner {
            alpha: cfg.alpha_init.max(0.0),
            actor_target: actor.clone(),
            actor_opt: Adam::new(&actor),
            actor,
            reward_critic,
            cost_critic,
            estimator,
            n_agents,
            state_dim,
            counters: Counters::default(),
            updates: 0,
            cfg,
        })
    }

    pub fn config(&self) -> &LearnerConfig {
        &self.cfg
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn set_alpha(&mut self, alpha: f64) {
        self.alpha = alpha.max(0.0);
    }

    pub fn counters(&self) -> Counters {
        self.counters
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn actor(&self) -> &Mlp {
        &self.actor
    }

    pub fn actor_mut(&mut self) -> &mut Mlp {
        &mut self.actor
    }

    pub fn reward_critic(&self) -> &Mlp {
        &self.reward_critic.net
    }

    pub fn reward_critic_mut(&mut self) -> &mut Mlp {
        &mut self.reward_critic.net
    }

    pub fn reward_critic_target_mut(&mut self) -> &mut Mlp {
        &mut self.reward_critic.target
    }

    pub fn cost_critic(&self) -> Option<&Mlp> {
        self.cost_critic.as_ref().map(|c| &c.net)
    }

    pub fn cost_critic_mut(&mut self) -> Option<&mut Mlp> {
        self.cost_critic.as_mut().map(|c| &mut c.net)
    }

    pub fn cost_critic_target_mut(&mut self) -> Option<&mut Mlp> {
        self.cost_critic.as_mut().map(|c| &mut c.target)
    }

    pub fn estimator(&self) -> Option<&Mlp> {
        self.estimator.as_ref().map(|(n, _)| n)
    }

    pub fn estimator_mut(&mut self) -> Option<&mut Mlp> {
        self.estimator.as_mut().map(|(n, _)| n)
    }

    pub fn actor_target_mut(&mut self) -> &mut Mlp {
        &mut self.actor_target
    }

    fn joint_action(actor: &Mlp, inputs: &[Vec<f64>]) -> Result<Vec<f64>, NnError> {
        inputs
            .iter()
            .map(|x| actor.predict(x).map(|y| y[0]))
            .collect()
    }

    /// Deterministic policy output per agent, plus clipped Gaussian noise
    /// when exploring.
    pub fn select_actions<R: Rng + ?Sized>(
        &self,
        actor_inputs: &[Vec<f64>],
        explore: bool,
        rng: &mut R,
    ) -> Result<Vec<f64>, LearnerError> {
        let mut a = Self::joint_action(&self.actor, actor_inputs)?;
        if explore && self.cfg.noise_std > 0.0 {
            let noise = Normal::new(0.0, self.cfg.noise_std).expect("positive std");
            for x in &mut a {
                *x = (*x + noise.sample(rng)).clamp(-1.0, 1.0);
            }
        }
        Ok(a)
    }

    fn estimator_value(&mut self, x: &[f64]) -> Result<f64, NnError> {
        self.counters.estimator_queries += 1;
        let (net, _) = self.estimator.as_ref().expect("estimator present");
        Ok(net.predict(x)?[0])
    }

    /// TD targets `(y_r, y_c)`; `y_c` is absent without a cost critic.
    pub fn critic_targets(&self, batch: &[&Experience]) -> Result<(Vec<f64>, Option<Vec<f64>>), LearnerError> {
        let gamma = self.cfg.gamma;
        let mut y_r = Vec::with_capacity(batch.len());
        let mut y_c = self.cost_critic.as_ref().map(|_| Vec::with_capacity(batch.len()));
        for e in batch {
            if e.terminal {
                y_r.push(e.reward);
                if let Some(y) = y_c.as_mut() {
                    y.push(e.cost);
                }
                continue;
            }
            let next_a = Self::joint_action(&self.actor_target, &e.next_actor_inputs)?;
            let x = critic_input(&e.next_state, &next_a);
            y_r.push(e.reward + gamma * self.reward_critic.target.predict(&x)?[0]);
            if let (Some(y), Some(c)) = (y_c.as_mut(), self.cost_critic.as_ref()) {
                y.push(e.cost + gamma * c.target.predict(&x)?[0]);
            }
        }
        Ok((y_r, y_c))
    }

    fn regress(
        net: &mut Mlp,
        opt: &mut Adam,
        inputs: &[Vec<f64>],
        targets: &[f64],
        lr: f64,
        clip_norm: Option<f64>,
    ) -> Result<f64, NnError> {
        let mut grads = Gradients::zeros_like(net);
        let b = inputs.len() as f64;
        let mut loss = 0.0;
        for (x, &y) in inputs.iter().zip(targets) {
            let (out, tape) = net.forward(x)?;
            let err = out[0] - y;
            loss += err * err;
            net.backward_accumulate(&tape, &[2.0 * err / b], &mut grads)?;
        }
        clip(&mut grads, clip_norm);
        opt.step(net, &grads, lr)?;
        Ok(loss / b)
    }

    /// One Adam step on each critic against fixed TD targets.
    pub fn update_critics(&mut self, batch: &[&Experience]) -> Result<(f64, Option<f64>), LearnerError> {
        let (y_r, y_c) = self.critic_targets(batch)?;
        let inputs: Vec<Vec<f64>> = batch.iter().map(|e| critic_input(&e.state, &e.action)).collect();
        let lr = self.cfg.lr_critic;
        let clip_norm = self.cfg.grad_clip;
        let loss_r = Self::regress(&mut self.reward_critic.net, &mut self.reward_critic.opt, &inputs, &y_r, lr, clip_norm)?;
        let loss_c = match (self.cost_critic.as_mut(), y_c) {
            (Some(c), Some(y)) => Some(Self::regress(&mut c.net, &mut c.opt, &inputs, &y, lr, clip_norm)?),
            _ => None,
        };
        self.counters.critic_updates += 1;
        Ok((loss_r, loss_c))
    }

    /// Regresses the one-step estimator onto the recorded normalized costs.
    pub fn update_cost_estimator(&mut self, batch: &[&Experience]) -> Result<Option<f64>, LearnerError> {
        let Some((net, opt)) = self.estimator.as_mut() else {
            return Ok(None);
        };
        let inputs: Vec<Vec<f64>> = batch.iter().map(|e| critic_input(&e.state, &e.action)).collect();
        let targets: Vec<f64> = batch.iter().map(|e| e.cost).collect();
        let loss = Self::regress(net, opt, &inputs, &targets, self.cfg.lr_estimator, self.cfg.grad_clip)?;
        self.counters.estimator_updates += 1;
        Ok(Some(loss))
    }

    /// One Adam step on the shared actor, minimising
    /// `-Q_r(s, pi(o)) + alpha * penalty(s, pi(o))` with the critics frozen.
    pub fn update_actor(&mut self, batch: &[&Experience]) -> Result<f64, LearnerError> {
        let b = batch.len() as f64;
        let n = self.n_agents;
        let constrained = self.cfg.algorithm == Algorithm::Madelc;
        let use_reward = !(constrained && self.cfg.ablation.no_q_loss);
        let alpha = self.alpha;
        let mut grads = Gradients::zeros_like(&self.actor);
        let mut loss = 0.0;
        for e in batch {
            let mut tapes: Vec<Tape> = Vec::with_capacity(n);
            let mut action = Vec::with_capacity(n);
            for x in &e.actor_inputs {
                let (y, tape) = self.actor.forward(x)?;
                action.push(y[0]);
                tapes.push(tape);
            }
            let x = critic_input(&e.state, &action);
            let mut d_action = vec![0.0; n];
            let mut accumulate = |net: &Mlp, weight: f64, loss: &mut f64| -> Result<(), NnError> {
                let (q, tape) = net.forward(&x)?;
                *loss += weight * q[0];
                let g = net.input_gradient(&tape, &[weight / b])?;
                for (d, gi) in d_action.iter_mut().zip(&g[self.state_dim..]) {
                    *d += gi;
                }
                Ok(())
            };
            if use_reward {
                accumulate(&self.reward_critic.net, -1.0, &mut loss)?;
            }
            if constrained {
                if let Some(c) = self.cost_critic.as_ref() {
                    self.counters.cost_critic_actor_queries += 1;
                    accumulate(&c.net, alpha, &mut loss)?;
                } else if let Some((est, _)) = self.estimator.as_ref() {
                    self.counters.estimator_queries += 1;
                    accumulate(est, alpha, &mut loss)?;
                }
            }
            for (tape, d) in tapes.iter().zip(&d_action) {
                self.actor.backward_accumulate(tape, &[*d], &mut grads)?;
            }
        }
        clip(&mut grads, self.cfg.grad_clip);
        self.actor_opt.step(&mut self.actor, &grads, self.cfg.lr_actor)?;
        self.counters.actor_updates += 1;
        Ok(loss / b)
    }

    /// Gradient step on `alpha * (c - C_hat(s, pi(s)))`, projected onto
    /// `alpha >= 0`. Returns the new multiplier.
    pub fn update_alpha(&mut self, batch: &[&Experience]) -> Result<f64, LearnerError> {
        if self.cfg.algorithm != Algorithm::Madelc {
            return Ok(self.alpha);
        }
        let mut sum = 0.0;
        for e in batch {
            let a = Self::joint_action(&self.actor, &e.actor_inputs)?;
            let x = critic_input(&e.state, &a);
            let c_hat = if self.estimator.is_some() {
                self.estimator_value(&x)?
            } else {
                let c = self.cost_critic.as_ref().expect("a cost model is always present");
                self.counters.cost_critic_alpha_queries += 1;
                c.net.predict(&x)?[0]
            };
            sum += self.cfg.cost_limit - c_hat;
        }
        let grad = sum / batch.len() as f64;
        self.alpha = (self.alpha - self.cfg.lr_alpha * grad).max(0.0);
        self.counters.alpha_updates += 1;
        Ok(self.alpha)
    }

    /// Polyak update of the target actor and critics.
    pub fn soft_update_targets(&mut self) -> Result<(), LearnerError> {
        let tau = self.cfg.tau;
        self.actor_target.soft_update_from(&self.actor, tau)?;
        self.reward_critic.target.soft_update_from(&self.reward_critic.net, tau)?;
        if let Some(c) = self.cost_critic.as_mut() {
            c.target.soft_update_from(&c.net, tau)?;
        }
        Ok(())
    }

    /// A full update round: critic steps on fresh minibatches, then
    /// estimator, actor and multiplier steps on a shared minibatch, then
    /// target updates. Returns `None` while the buffer is smaller than one
    /// batch.
    pub fn update_round<R: Rng + ?Sized>(
        &mut self,
        buffer: &ReplayBuffer<Experience>,
        rng: &mut R,
    ) -> Result<Option<UpdateStats>, LearnerError> {
        let bs = self.cfg.batch_size;
        if buffer.len() < bs {
            return Ok(None);
        }
        self.updates += 1;
        let update = self.updates;
        let (mut loss_r, mut loss_c) = (0.0, None);
        for _ in 0..self.cfg.critic_updates {
            let batch = buffer.sample(bs, rng).expect("buffer holds a batch");
            let (r, c) = self.update_critics(&batch)?;
            loss_r = r;
            loss_c = c;
        }
        let (mut loss_est, mut loss_actor) = (None, 0.0);
        for _ in 0..self.cfg.actor_updates {
            let batch = buffer.sample(bs, rng).expect("buffer holds a batch");
            loss_est = self.update_cost_estimator(&batch)?;
            loss_actor = self.update_actor(&batch)?;
            self.update_alpha(&batch)?;
        }
        self.soft_update_targets()?;

        let check = |x: f64, what: &'static str| {
            if x.is_finite() {
                Ok(())
            } else {
                Err(LearnerError::NonFinite { what, update })
            }
        };
        check(loss_r, "reward critic loss")?;
        check(loss_c.unwrap_or(0.0), "cost critic loss")?;
        check(loss_est.unwrap_or(0.0), "estimator loss")?;
        check(loss_actor, "actor loss")?;
        check(self.alpha, "alpha")?;
        Ok(Some(UpdateStats {
            loss_r,
            loss_c,
            loss_estimator: loss_est,
            loss_actor,
            alpha: (self.cfg.algorithm == Algorithm::Madelc).then_some(self.alpha),
        }))
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut nets = vec![
            ("actor".to_string(), self.actor.clone()),
            ("actor_target".to_string(), self.actor_target.clone()),
            ("reward_critic".to_string(), self.reward_critic.net.clone()),
            ("reward_critic_target".to_string(), self.reward_critic.target.clone()),
        ];
        if let Some(c) = &self.cost_critic {
            nets.push(("cost_critic".into(), c.net.clone()));
            nets.push(("cost_critic_target".into(), c.target.clone()));
        }
        if let Some((e, _)) = &self.estimator {
            nets.push(("cost_estimator".into(), e.clone()));
        }
        let scalars = if self.cfg.algorithm == Algorithm::Madelc {
            vec![("alpha".to_string(), self.alpha)]
        } else {
            vec![]
        };
        Checkpoint { nets, scalars }
    }
}
