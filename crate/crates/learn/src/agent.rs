//! Twin-critic deterministic-policy agents with delayed actor updates,
//! target-policy smoothing and confidence-weighted policy distillation from
//! a peer agent, plus the single-critic and no-distillation baselines.

use std::collections::VecDeque;
use std::io::Write;
use std::path::Path;

use log::debug;
use ndarray::Axis;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::graph::{Bound, Graph, Mat, Var};
use crate::mlp::{Activation, Mlp};
use crate::optim::Adam;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    /// Twin critics, delayed actor, smoothing, distillation from a peer.
    DualDistill,
    /// Same machinery with the distillation weight forced to zero.
    Td3NoDistill,
    /// One critic, no target smoothing, actor updated every step.
    DdpgSingleCritic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub discount: f64,
    pub soft_update_rate: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub exploration_noise_sd: f64,
    pub target_noise_sd: f64,
    pub target_noise_clip: f64,
    pub actor_delay: u64,
    pub distill_confidence: f64,
    pub advantage_clamp: f64,
    pub learning_rate: f64,
    pub distill_period_episodes: usize,
    pub hidden_layer_sizes: Vec<usize>,
    /// Weight of the distillation term in the actor loss.
    pub distill_weight: f64,
    /// Bootstrap from the next state even on the final step of an episode.
    pub bootstrap_at_episode_end: bool,
    /// Multiplier applied to rewards before they enter the buffer.
    pub reward_scale: f64,
    /// Standardize sampled rewards with running mean and deviation.
    pub normalize_rewards: bool,
    /// Steps of uniform random actions before the actor takes over.
    pub warmup_steps: u64,
    /// Most recent peer states handed over for distillation.
    pub distill_pool: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            discount: 0.99,
            soft_update_rate: 0.005,
            batch_size: 128,
            buffer_capacity: 100_000,
            exploration_noise_sd: 0.1,
            target_noise_sd: 0.2,
            target_noise_clip: 0.5,
            actor_delay: 2,
            distill_confidence: 1.0,
            advantage_clamp: 5.0,
            learning_rate: 1e-3,
            distill_period_episodes: 1,
            hidden_layer_sizes: vec![256, 256],
            distill_weight: 1.0,
            bootstrap_at_episode_end: false,
            reward_scale: 1.0,
            normalize_rewards: false,
            warmup_steps: 1000,
            distill_pool: 20_000,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return Err(Error::Config("discount must lie in (0, 1)".into()));
        }
        if !(self.soft_update_rate > 0.0 && self.soft_update_rate <= 1.0) {
            return Err(Error::Config("soft_update_rate must lie in (0, 1]".into()));
        }
        if self.batch_size == 0 || self.buffer_capacity < self.batch_size {
            return Err(Error::Config("need 1 <= batch_size <= buffer_capacity".into()));
        }
        if self.actor_delay == 0 || self.distill_period_episodes == 0 {
            return Err(Error::Config("actor_delay and distill_period_episodes must be >= 1".into()));
        }
        if self.hidden_layer_sizes.is_empty() || self.hidden_layer_sizes.contains(&0) {
            return Err(Error::Config("hidden layers must be non-empty and positive".into()));
        }
        let non_negative = [
            self.exploration_noise_sd,
            self.target_noise_sd,
            self.target_noise_clip,
            self.advantage_clamp,
            self.distill_weight,
        ];
        if non_negative.iter().any(|x| !(*x >= 0.0)) || !(self.learning_rate > 0.0) {
            return Err(Error::Config("noise, clamp and weights must be >= 0, learning rate > 0".into()));
        }
        Ok(())
    }
}

/// Mean squared error of `net(input)` against the column `y`.
pub fn critic_loss(g: &mut Graph, net: &Mlp, b: &Bound, input: &Mat, y: &Mat) -> Var {
    let x = g.constant(input.clone());
    let q = net.forward(g, b, x);
    g.mse(q, y.clone())
}

/// `−mean Q1(s, π(s))` with the critic frozen.
pub fn actor_loss(g: &mut Graph, actor: &Mlp, b: &Bound, q1: &Mlp, states: &Mat) -> Var {
    let s = g.constant(states.clone());
    let a = actor.forward(g, b, s);
    let qb = g.bind_frozen(&q1.params);
    let sa = g.concat_cols(&[s, a]);
    let q = q1.forward(g, &qb, sa);
    let mean_q = g.mean_all(q);
    g.scale(mean_q, -1.0)
}

/// `mean_i ‖π(s_i) − target_i‖²·w_i`.
pub fn distill_loss_graph(g: &mut Graph, actor: &Mlp, b: &Bound, states: &Mat, targets: &Mat, weights: &[f64]) -> Var {
    let s = g.constant(states.clone());
    let own = actor.forward(g, b, s);
    let t = g.constant(targets.clone());
    let gap = g.sub(own, t);
    let sq = g.square(gap);
    let per_state = g.sum_cols(sq);
    let w = g.constant(Mat::from_shape_vec((weights.len(), 1), weights.to_vec()).expect("column"));
    let weighted = g.mul_col(per_state, w);
    g.mean_all(weighted)
}

/// `r + γ·min(q1, q2)`, or `r` on a terminal transition.
pub fn twin_target(reward: f64, discount: f64, q1: f64, q2: f64, terminal: bool) -> f64 {
    if terminal {
        reward
    } else {
        reward + discount * q1.min(q2)
    }
}

/// Per-sample distillation weight `exp(α·ξ)`.
pub fn distill_weight(confidence: f64, advantage: f64) -> f64 {
    (confidence * advantage).exp()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub terminal: bool,
}

#[derive(Debug, Clone)]
pub struct Batch {
    pub states: Mat,
    pub actions: Mat,
    pub rewards: Vec<f64>,
    pub next_states: Mat,
    pub terminals: Vec<bool>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn from_transitions(items: &[&Transition]) -> Result<Self> {
        let first = items.first().ok_or_else(|| Error::Contract("empty batch".into()))?;
        let (sd, ad) = (first.state.len(), first.action.len());
        let n = items.len();
        let mut b = Batch {
            states: Mat::zeros((n, sd)),
            actions: Mat::zeros((n, ad)),
            rewards: Vec::with_capacity(n),
            next_states: Mat::zeros((n, sd)),
            terminals: Vec::with_capacity(n),
        };
        for (i, t) in items.iter().enumerate() {
            if t.state.len() != sd || t.action.len() != ad || t.next_state.len() != sd {
                return Err(Error::Contract("transition shapes differ within a batch".into()));
            }
            b.states.row_mut(i).assign(&ndarray::ArrayView1::from(&t.state));
            b.actions.row_mut(i).assign(&ndarray::ArrayView1::from(&t.action));
            b.next_states.row_mut(i).assign(&ndarray::ArrayView1::from(&t.next_state));
            b.rewards.push(t.reward);
            b.terminals.push(t.terminal);
        }
        Ok(b)
    }
}

/// Fixed-capacity FIFO replay memory.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    /// `k` transitions drawn uniformly with replacement.
    pub fn sample(&self, k: usize, rng: &mut impl Rng) -> Result<Batch> {
        if self.items.is_empty() || k == 0 {
            return Err(Error::Contract("cannot sample an empty batch".into()));
        }
        let picks: Vec<&Transition> = (0..k).map(|_| &self.items[rng.random_range(0..self.items.len())]).collect();
        Batch::from_transitions(&picks)
    }

    /// States of the most recent `limit` transitions.
    pub fn recent_states(&self, limit: usize) -> Mat {
        let n = self.items.len().min(limit);
        let dim = self.items.front().map_or(0, |t| t.state.len());
        let mut m = Mat::zeros((n, dim));
        for (i, t) in self.items.iter().skip(self.items.len() - n).enumerate() {
            m.row_mut(i).assign(&ndarray::ArrayView1::from(&t.state));
        }
        m
    }
}

/// Frozen copy of an agent's policy and critics plus states from its
/// replay buffer, handed to the other agent for distillation.
#[derive(Debug, Clone, PartialEq)]
pub struct PeerSnapshot {
    pub actor: Mlp,
    pub q1: Mlp,
    pub q2: Option<Mlp>,
    pub states: Mat,
}

impl PeerSnapshot {
    pub fn value(&self, states: &Mat) -> Vec<f64> {
        policy_value(&self.actor, &self.q1, self.q2.as_ref(), states)
    }
}

fn critic_input(states: &Mat, actions: &Mat) -> Mat {
    ndarray::concatenate(Axis(1), &[states.view(), actions.view()]).expect("batch sizes agree")
}

/// `min(Q1(s, π(s)), Q2(s, π(s)))`, or `Q1` alone without a second critic.
pub fn policy_value(actor: &Mlp, q1: &Mlp, q2: Option<&Mlp>, states: &Mat) -> Vec<f64> {
    let input = critic_input(states, &actor.predict(states));
    let v1 = q1.predict(&input);
    match q2 {
        Some(q2) => {
            let v2 = q2.predict(&input);
            v1.iter().zip(v2.iter()).map(|(a, b)| a.min(*b)).collect()
        }
        None => v1.iter().copied().collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UpdateKind {
    Critic,
    Actor,
    Target,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ActorLoss {
    pub policy: f64,
    pub distill: f64,
    /// Share of distillation states where the peer's value was higher.
    pub peer_better_fraction: f64,
}

#[derive(Debug, Clone)]
pub struct Agent {
    pub id: usize,
    pub kind: AgentKind,
    pub config: AgentConfig,
    state_dim: usize,
    action_dim: usize,
    actor: Mlp,
    actor_target: Mlp,
    q1: Mlp,
    q1_target: Mlp,
    q2: Option<Mlp>,
    q2_target: Option<Mlp>,
    actor_opt: Adam,
    q1_opt: Adam,
    q2_opt: Option<Adam>,
    buffer: ReplayBuffer,
    rng: ChaCha8Rng,
    step: u64,
    actor_updates: u64,
    critic_updates: u64,
    peer: Option<PeerSnapshot>,
    trace: Option<Vec<(u64, UpdateKind)>>,
    reward_stats: RunningStats,
}

/// Welford running mean and variance.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub count: u64,
    pub mean: f64,
    m2: f64,
}

impl RunningStats {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn sd(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            (self.m2 / (self.count - 1) as f64).sqrt()
        }
    }
}

impl Agent {
    pub fn new(
        id: usize,
        kind: AgentKind,
        config: AgentConfig,
        state_dim: usize,
        action_dim: usize,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sizes = vec![state_dim];
        sizes.extend(&config.hidden_layer_sizes);
        sizes.push(action_dim);
        let actor = Mlp::new(&sizes, Activation::Relu, Activation::Sigmoid, &mut rng);
        let mut csizes = vec![state_dim + action_dim];
        csizes.extend(&config.hidden_layer_sizes);
        csizes.push(1);
        let q1 = Mlp::new(&csizes, Activation::Relu, Activation::Identity, &mut rng);
        let q2 = match kind {
            AgentKind::DdpgSingleCritic => None,
            _ => Some(Mlp::new(&csizes, Activation::Relu, Activation::Identity, &mut rng)),
        };
        let lr = config.learning_rate;
        Ok(Self {
            id,
            kind,
            state_dim,
            action_dim,
            actor_opt: Adam::new(&actor.params, lr),
            q1_opt: Adam::new(&q1.params, lr),
            q2_opt: q2.as_ref().map(|q| Adam::new(&q.params, lr)),
            actor_target: actor.clone(),
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            actor,
            q1,
            q2,
            buffer: ReplayBuffer::new(config.buffer_capacity),
            config,
            rng,
            step: 0,
            actor_updates: 0,
            critic_updates: 0,
            peer: None,
            trace: None,
            reward_stats: RunningStats::default(),
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn actor(&self) -> &Mlp {
        &self.actor
    }

    pub fn actor_mut(&mut self) -> &mut Mlp {
        &mut self.actor
    }

    pub fn q1_mut(&mut self) -> &mut Mlp {
        &mut self.q1
    }

    pub fn q2_mut(&mut self) -> Option<&mut Mlp> {
        self.q2.as_mut()
    }

    pub fn targets_mut(&mut self) -> (&mut Mlp, &mut Mlp, Option<&mut Mlp>) {
        (&mut self.actor_target, &mut self.q1_target, self.q2_target.as_mut())
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn actor_updates(&self) -> u64 {
        self.actor_updates
    }

    pub fn critic_updates(&self) -> u64 {
        self.critic_updates
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn buffer_mut(&mut self) -> &mut ReplayBuffer {
        &mut self.buffer
    }

    /// Records `(step, update)` pairs from now on.
    pub fn enable_update_trace(&mut self) {
        self.trace = Some(Vec::new());
    }

    pub fn update_trace(&self) -> &[(u64, UpdateKind)] {
        self.trace.as_deref().unwrap_or(&[])
    }

    fn log(&mut self, kind: UpdateKind) {
        let step = self.step;
        if let Some(t) = &mut self.trace {
            t.push((step, kind));
        }
    }

    fn twin(&self) -> bool {
        self.kind != AgentKind::DdpgSingleCritic
    }

    fn delay(&self) -> u64 {
        if self.twin() {
            self.config.actor_delay
        } else {
            1
        }
    }

    pub fn set_peer(&mut self, peer: Option<PeerSnapshot>) {
        self.peer = peer;
    }

    pub fn peer(&self) -> Option<&PeerSnapshot> {
        self.peer.as_ref()
    }

    pub fn snapshot(&self) -> PeerSnapshot {
        PeerSnapshot {
            actor: self.actor.clone(),
            q1: self.q1.clone(),
            q2: self.q2.clone(),
            states: self.buffer.recent_states(self.config.distill_pool),
        }
    }

    /// Deterministic actor output; with `explore`, Gaussian noise clipped to
    /// the unit box is added.
    pub fn select_action(&mut self, state: &[f64], explore: bool) -> Vec<f64> {
        let mut a = self.actor.predict_row(state);
        let sd = self.config.exploration_noise_sd;
        if explore && sd > 0.0 {
            let noise = Normal::new(0.0, sd).expect("finite sd");
            for x in &mut a {
                *x = (*x + noise.sample(&mut self.rng)).clamp(0.0, 1.0);
            }
        }
        a
    }

    /// Target-policy action for a batch of next states, smoothed with
    /// clipped Gaussian noise for the twin-critic kinds.
    pub fn target_action(&mut self, next_states: &Mat) -> Mat {
        let mut a = self.actor_target.predict(next_states);
        let (sd, clip) = (self.config.target_noise_sd, self.config.target_noise_clip);
        if self.twin() && sd > 0.0 {
            let noise = Normal::new(0.0, sd).expect("finite sd");
            a.mapv_inplace(|x| (x + noise.sample(&mut self.rng).clamp(-clip, clip)).clamp(0.0, 1.0));
        }
        a
    }

    /// Regression targets for the critics.
    pub fn critic_target(&mut self, rewards: &[f64], next_states: &Mat, terminals: &[bool]) -> Vec<f64> {
        let a = self.target_action(next_states);
        let input = critic_input(next_states, &a);
        let v1 = self.q1_target.predict(&input);
        let v2 = self.q2_target.as_ref().map(|q| q.predict(&input));
        let gamma = self.config.discount;
        let boot = self.config.bootstrap_at_episode_end;
        (0..rewards.len())
            .map(|i| {
                let q1 = v1[[i, 0]];
                let q2 = v2.as_ref().map_or(q1, |v| v[[i, 0]]);
                twin_target(rewards[i], gamma, q1, q2, terminals[i] && !boot)
            })
            .collect()
    }

    fn fit_critic(net: &mut Mlp, opt: &mut Adam, input: &Mat, y: &Mat) -> f64 {
        let mut g = Graph::new();
        let b = g.bind(&net.params);
        let loss = critic_loss(&mut g, net, &b, input, y);
        g.backward(loss);
        let grads = g.grads_of(&b);
        opt.step(&mut net.params, &grads);
        g.scalar(loss)
    }

    /// One regression step of each critic toward the shared target.
    pub fn update_critics(&mut self, batch: &Batch) -> Result<(f64, f64)> {
        if batch.is_empty() {
            return Err(Error::Contract("empty batch".into()));
        }
        let y = self.critic_target(&batch.rewards, &batch.next_states, &batch.terminals);
        let y = Mat::from_shape_vec((y.len(), 1), y).expect("column");
        let input = critic_input(&batch.states, &batch.actions);
        let l1 = Self::fit_critic(&mut self.q1, &mut self.q1_opt, &input, &y);
        let l2 = match (&mut self.q2, &mut self.q2_opt) {
            (Some(q), Some(o)) => Self::fit_critic(q, o, &input, &y),
            _ => 0.0,
        };
        self.critic_updates += 1;
        self.log(UpdateKind::Critic);
        Ok((l1, l2))
    }

    /// Peer advantage `clamp(V̂_peer(s) − V̂_self(s))` per state row.
    pub fn advantage(&self, peer: &PeerSnapshot, states: &Mat) -> Vec<f64> {
        let own = policy_value(&self.actor, &self.q1, self.q2.as_ref(), states);
        let theirs = peer.value(states);
        let c = self.config.advantage_clamp;
        own.iter().zip(&theirs).map(|(s, p)| (p - s).clamp(-c, c)).collect()
    }

    /// Distillation loss on `states`: mean of `‖π(s) − π̃(s)‖²·exp(α·ξ(s))`.
    pub fn distill_loss(&self, states: &Mat) -> f64 {
        match (&self.peer, self.kind) {
            (Some(peer), AgentKind::DualDistill) if states.nrows() > 0 => {
                let xi = self.advantage(peer, states);
                let gap = &self.actor.predict(states) - &peer.actor.predict(states);
                let sq = gap.mapv(|x| x * x).sum_axis(Axis(1));
                let alpha = self.config.distill_confidence;
                sq.iter().zip(&xi).map(|(d, x)| d * distill_weight(alpha, *x)).sum::<f64>() / states.nrows() as f64
            }
            _ => 0.0,
        }
    }

    fn distill_states(&mut self) -> Option<Mat> {
        let peer = self.peer.as_ref()?;
        if self.kind != AgentKind::DualDistill || peer.states.nrows() == 0 || self.config.distill_weight == 0.0 {
            return None;
        }
        let n = peer.states.nrows();
        let rows: Vec<usize> = (0..self.config.batch_size).map(|_| self.rng.random_range(0..n)).collect();
        Some(peer.states.select(Axis(0), &rows))
    }

    /// Policy step ascending `mean Q1(s, π(s))`, plus the weighted
    /// distillation term when a peer is present. Only allowed on steps that
    /// are multiples of the actor delay.
    pub fn update_actor(&mut self, batch: &Batch) -> Result<ActorLoss> {
        if self.step % self.delay() != 0 {
            return Err(Error::Contract(format!(
                "actor update at step {} is off the every-{} schedule",
                self.step,
                self.delay()
            )));
        }
        let distill_states = self.distill_states();
        let mut g = Graph::new();
        let b = g.bind(&self.actor.params);
        let policy = actor_loss(&mut g, &self.actor, &b, &self.q1, &batch.states);
        let mut out = ActorLoss {
            policy: g.scalar(policy),
            ..ActorLoss::default()
        };
        let mut total = policy;
        if let Some(ds) = distill_states {
            let (distill, fraction) = self.distill_term(&mut g, &b, ds);
            out.distill = g.scalar(distill);
            out.peer_better_fraction = fraction;
            let scaled = g.scale(distill, self.config.distill_weight);
            total = g.add(total, scaled);
        }
        g.backward(total);
        let grads = g.grads_of(&b);
        self.actor_opt.step(&mut self.actor.params, &grads);
        self.actor_updates += 1;
        self.log(UpdateKind::Actor);
        Ok(out)
    }

    fn distill_term(&self, g: &mut Graph, b: &Bound, states: Mat) -> (Var, f64) {
        let peer = self.peer.as_ref().expect("caller checked the peer");
        let xi = self.advantage(peer, &states);
        let fraction = xi.iter().filter(|x| **x > 0.0).count() as f64 / xi.len().max(1) as f64;
        let alpha = self.config.distill_confidence;
        let weights: Vec<f64> = xi.iter().map(|x| distill_weight(alpha, *x)).collect();
        let peer_actions = peer.actor.predict(&states);
        (distill_loss_graph(g, &self.actor, b, &states, &peer_actions, &weights), fraction)
    }

    /// One actor step on the distillation loss alone over `states` drawn
    /// from the peer's buffer. Returns the loss before the step; zero and no
    /// step without a peer or for the no-distillation kinds.
    pub fn distill_from_peer(&mut self, states: &Mat) -> Result<f64> {
        if self.peer.is_none() || self.kind != AgentKind::DualDistill || states.nrows() == 0 {
            return Ok(0.0);
        }
        let mut g = Graph::new();
        let b = g.bind(&self.actor.params);
        let (loss, _) = self.distill_term(&mut g, &b, states.clone());
        let scaled = g.scale(loss, self.config.distill_weight);
        g.backward(scaled);
        let grads = g.grads_of(&b);
        self.actor_opt.step(&mut self.actor.params, &grads);
        Ok(g.scalar(loss))
    }

    /// `target ← τ·online + (1 − τ)·target` for every target network.
    pub fn soft_update(&mut self, tau: f64) {
        self.actor_target.params.soft_update_from(&self.actor.params, tau);
        self.q1_target.params.soft_update_from(&self.q1.params, tau);
        if let (Some(t), Some(o)) = (&mut self.q2_target, &self.q2) {
            t.params.soft_update_from(&o.params, tau);
        }
        self.log(UpdateKind::Target);
    }

    /// Stores a transition and performs the updates scheduled for this step.
    /// Returns the actor loss when the actor was updated.
    pub fn observe(&mut self, t: Transition) -> Result<Option<ActorLoss>> {
        let mut t = t;
        t.reward *= self.config.reward_scale;
        self.reward_stats.push(t.reward);
        self.buffer.push(t);
        let mut result = None;
        if self.buffer.len() >= self.config.batch_size {
            let mut batch = self.buffer.sample(self.config.batch_size, &mut self.rng)?;
            if self.config.normalize_rewards {
                let (mean, sd) = (self.reward_stats.mean, self.reward_stats.sd().max(1e-8));
                batch.rewards.iter_mut().for_each(|r| *r = (*r - mean) / sd);
            }
            self.update_critics(&batch)?;
            if self.step % self.delay() == 0 {
                result = Some(self.update_actor(&batch)?);
                self.soft_update(self.config.soft_update_rate);
            }
        }
        self.step += 1;
        Ok(result)
    }

    /// Exploratory action for training: uniform during warm-up, then the
    /// noisy actor.
    pub fn act_for_training(&mut self, state: &[f64]) -> Vec<f64> {
        if self.step < self.config.warmup_steps {
            (0..self.action_dim).map(|_| self.rng.random::<f64>()).collect()
        } else {
            self.select_action(state, true)
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let ck = AgentCheckpoint {
            id: self.id,
            kind: self.kind,
            config: self.config.clone(),
            state_dim: self.state_dim,
            action_dim: self.action_dim,
            actor: self.actor.clone(),
            actor_target: self.actor_target.clone(),
            q1: self.q1.clone(),
            q1_target: self.q1_target.clone(),
            q2: self.q2.clone(),
            q2_target: self.q2_target.clone(),
            step: self.step,
            actor_updates: self.actor_updates,
            critic_updates: self.critic_updates,
        };
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(f, &ck)?;
        Ok(())
    }

    /// Restores networks, configuration and counters. Optimizer moments and
    /// the replay buffer start empty.
    pub fn load(path: impl AsRef<Path>, seed: u64) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        let ck: AgentCheckpoint = serde_json::from_reader(f)?;
        let mut a = Agent::new(ck.id, ck.kind, ck.config, ck.state_dim, ck.action_dim, seed)?;
        if a.actor.sizes != ck.actor.sizes || a.q1.sizes != ck.q1.sizes {
            return Err(Error::Config("checkpoint networks do not match its config".into()));
        }
        a.actor = ck.actor;
        a.actor_target = ck.actor_target;
        a.q1 = ck.q1;
        a.q1_target = ck.q1_target;
        a.q2 = ck.q2;
        a.q2_target = ck.q2_target;
        a.step = ck.step;
        a.actor_updates = ck.actor_updates;
        a.critic_updates = ck.critic_updates;
        Ok(a)
    }

    /// Networks in the order actor, actor target, Q1, Q1 target, Q2, Q2 target.
    pub fn networks(&self) -> Vec<Option<&Mlp>> {
        vec![
            Some(&self.actor),
            Some(&self.actor_target),
            Some(&self.q1),
            Some(&self.q1_target),
            self.q2.as_ref(),
            self.q2_target.as_ref(),
        ]
    }
}

#[derive(Serialize, Deserialize)]
struct AgentCheckpoint {
    id: usize,
    kind: AgentKind,
    config: AgentConfig,
    state_dim: usize,
    action_dim: usize,
    actor: Mlp,
    actor_target: Mlp,
    q1: Mlp,
    q1_target: Mlp,
    q2: Option<Mlp>,
    q2_target: Option<Mlp>,
    step: u64,
    actor_updates: u64,
    critic_updates: u64,
}

/// Per-state choice between an agent's policy and its peer's.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridChoice {
    pub actions: Vec<Vec<f64>>,
    pub peer_chosen: Vec<bool>,
}

impl HybridChoice {
    pub fn peer_fraction(&self) -> f64 {
        if self.peer_chosen.is_empty() {
            0.0
        } else {
            self.peer_chosen.iter().filter(|c| **c).count() as f64 / self.peer_chosen.len() as f64
        }
    }
}

/// Hybrid policy: the peer's action where its advantage is positive, the
/// agent's own action otherwise.
///
/// A literal form of this rule also circulates as
/// `π*(s) = π(s) if ξ^π̃(s) > 0, π̃(s) otherwise`. A positive ξ means the
/// peer's value is higher, so that branch would keep the worse policy; the
/// selection here is the one that can only improve on both.
pub fn hybrid_policy_eval(agent: &Agent, peer: &PeerSnapshot, states: &Mat) -> HybridChoice {
    let xi = agent.advantage(peer, states);
    let own = agent.actor.predict(states);
    let theirs = peer.actor.predict(states);
    let mut actions = Vec::with_capacity(states.nrows());
    let mut chosen = Vec::with_capacity(states.nrows());
    for (i, x) in xi.iter().enumerate() {
        let use_peer = *x > 0.0;
        let src = if use_peer { &theirs } else { &own };
        actions.push(src.row(i).to_vec());
        chosen.push(use_peer);
    }
    HybridChoice {
        actions,
        peer_chosen: chosen,
    }
}

/// Episodic environment with flat real-valued states and actions in `[0,1]`.
pub trait TaskEnv {
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn reset(&mut self, seed: u64) -> Result<Vec<f64>>;
    /// Returns `(next_state, reward, done)`; the next state is all zeros
    /// once done.
    fn step(&mut self, action: &[f64]) -> Result<(Vec<f64>, f64, bool)>;
}

/// Builds the environment and reset seed for `(agent, episode)`.
pub trait EnvFactory {
    fn make(&self, agent: usize, episode: usize) -> Result<(Box<dyn TaskEnv>, u64)>;
}

impl<F> EnvFactory for F
where
    F: Fn(usize, usize) -> Result<(Box<dyn TaskEnv>, u64)>,
{
    fn make(&self, agent: usize, episode: usize) -> Result<(Box<dyn TaskEnv>, u64)> {
        self(agent, episode)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStats {
    pub episode: usize,
    pub agent_id: usize,
    pub reward: f64,
    pub distill_loss_mean: f64,
    pub peer_chosen_fraction: f64,
}

/// Runs one training episode of `agent`.
pub fn train_episode(agent: &mut Agent, env: &mut dyn TaskEnv, seed: u64, episode: usize) -> Result<EpisodeStats> {
    if env.state_dim() != agent.state_dim || env.action_dim() != agent.action_dim {
        return Err(Error::Contract("environment and agent dimensions differ".into()));
    }
    let mut state = env.reset(seed)?;
    let mut total = 0.0;
    let (mut distill_sum, mut peer_sum, mut updates) = (0.0, 0.0, 0usize);
    loop {
        let action = agent.act_for_training(&state);
        let (next, reward, done) = env.step(&action)?;
        total += reward;
        let loss = agent.observe(Transition {
            state,
            action,
            reward,
            next_state: next.clone(),
            terminal: done,
        })?;
        if let Some(l) = loss {
            distill_sum += l.distill;
            peer_sum += l.peer_better_fraction;
            updates += 1;
        }
        if done {
            break;
        }
        state = next;
    }
    let n = updates.max(1) as f64;
    Ok(EpisodeStats {
        episode,
        agent_id: agent.id,
        reward: total,
        distill_loss_mean: distill_sum / n,
        peer_chosen_fraction: peer_sum / n,
    })
}

/// Trains one agent alone for `episodes` episodes.
pub fn train_single(agent: &mut Agent, factory: &dyn EnvFactory, episodes: usize) -> Result<Vec<EpisodeStats>> {
    let mut curve = Vec::with_capacity(episodes);
    for e in 0..episodes {
        let (mut env, seed) = factory.make(agent.id, e)?;
        let stats = train_episode(agent, env.as_mut(), seed, e)?;
        debug!("agent {} episode {e}: reward {:.2}", agent.id, stats.reward);
        curve.push(stats);
    }
    Ok(curve)
}

/// Trains two agents on their own environments, exchanging frozen
/// snapshots every `distill_period_episodes` episodes.
pub fn train_pair(
    pair: &mut [Agent; 2],
    factory: &dyn EnvFactory,
    episodes: usize,
) -> Result<[Vec<EpisodeStats>; 2]> {
    let mut curves = [Vec::with_capacity(episodes), Vec::with_capacity(episodes)];
    for e in 0..episodes {
        for (k, agent) in pair.iter_mut().enumerate() {
            let (mut env, seed) = factory.make(agent.id, e)?;
            let stats = train_episode(agent, env.as_mut(), seed, e)?;
            debug!("agent {} episode {e}: reward {:.2}", agent.id, stats.reward);
            curves[k].push(stats);
        }
        if (e + 1) % pair[0].config.distill_period_episodes == 0 {
            let s0 = pair[0].snapshot();
            let s1 = pair[1].snapshot();
            pair[0].set_peer(Some(s1));
            pair[1].set_peer(Some(s0));
        }
    }
    Ok(curves)
}

/// Total reward of one episode under a fixed policy.
pub fn evaluate_episode(env: &mut dyn TaskEnv, seed: u64, mut policy: impl FnMut(&[f64]) -> Vec<f64>) -> Result<f64> {
    let mut state = env.reset(seed)?;
    let mut total = 0.0;
    loop {
        let a = policy(&state);
        let (next, r, done) = env.step(&a)?;
        total += r;
        if done {
            return Ok(total);
        }
        state = next;
    }
}

pub fn write_episode_csv(path: impl AsRef<Path>, rows: &[EpisodeStats]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "episode,agent_id,reward,distill_loss_mean,peer_chosen_fraction")?;
    for r in rows {
        writeln!(
            f,
            "{},{},{},{},{}",
            r.episode, r.agent_id, r.reward, r.distill_loss_mean, r.peer_chosen_fraction
        )?;
    }
    f.flush()?;
    Ok(())
}
