//! Amortized negotiation: per-agent noise-to-action networks trained with
//! message-passing Stein directions against a centralized soft critic.
//!
//! Agent `i`'s network reads `state ‖ ξ_i ‖ ξ_j for j in C_i \ {i}`
//! (blanket agents ascending) and emits `bound * tanh(·)`.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffgraph::{bind, logsumexp, Activation, Graph, GraphError, MlpSpec, ParamCheckpoint, Tensor};
use crate::envs::{Env, EnvError};
use crate::kernels::{eval_with_grads, project, KernelConfig};
use crate::negotiation::{validate_nested, NegotiationError, NegotiationSchedule};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Schedule(#[from] NegotiationError),
    #[error("negotiation sets are not nested; no ordering lets conditionals represent a joint policy")]
    NotNested,
    #[error("invalid agent configuration: {0}")]
    Config(String),
    #[error("critic gradient is not finite at sample {sample}")]
    NonFiniteGradient { sample: usize },
    #[error("direction shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value during episode {episode}; last good checkpoint is from episode {}", checkpoint.episode)]
    Diverged { episode: usize, checkpoint: Box<AgentCheckpoint> },
}

/// `alpha(episode) = base + exp(-rate * max(episode - delay, 0)) * spike`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlphaSchedule {
    pub base: f64,
    pub spike: f64,
    pub rate: f64,
    pub delay: f64,
}

impl Default for AlphaSchedule {
    fn default() -> Self {
        AlphaSchedule { base: 1.0, spike: 500.0, rate: 0.1, delay: 10.0 }
    }
}

impl AlphaSchedule {
    pub fn with_base(base: f64) -> Self {
        AlphaSchedule { base, ..AlphaSchedule::default() }
    }

    pub fn at(&self, episode: usize) -> f64 {
        self.base + (-self.rate * (episode as f64 - self.delay).max(0.0)).exp() * self.spike
    }
}

pub fn anneal_alpha(schedule: &AlphaSchedule, episode: usize) -> f64 {
    schedule.at(episode)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    /// Width of both hidden layers of every network.
    pub hidden: usize,
    pub policy_lr: f64,
    pub critic_lr: f64,
    pub batch: usize,
    pub buffer: usize,
    /// Policy samples per state for the Stein direction.
    pub particles: usize,
    /// Policy samples per next state for the soft value; defaults to `particles`.
    pub value_samples: Option<usize>,
    /// States drawn from replay per policy update.
    pub policy_states: usize,
    pub target_sync: usize,
    pub gamma: f64,
    pub alpha: AlphaSchedule,
    /// Completed episodes per schedule step.
    pub alpha_stride: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Transitions collected before the first update.
    pub warmup: usize,
    /// Environment steps between update rounds.
    pub update_every: usize,
    /// Critic and policy updates per round.
    pub updates_per_round: usize,
    pub kernel: KernelConfig,
    /// Reject negotiation wirings that are not nested. Ablations turn this off.
    pub require_nested: bool,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            hidden: 100,
            policy_lr: 1e-3,
            critic_lr: 1e-3,
            batch: 512,
            buffer: 1_000_000,
            particles: 32,
            value_samples: None,
            policy_states: 4,
            target_sync: 100,
            gamma: 1.0,
            alpha: AlphaSchedule::with_base(0.2),
            alpha_stride: 30,
            beta1: 0.0,
            beta2: 0.999,
            adam_eps: 1e-8,
            warmup: 1,
            update_every: 1,
            updates_per_round: 1,
            kernel: KernelConfig::default(),
            require_nested: true,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |msg: &str| Err(AgentError::Config(msg.into()));
        if self.hidden == 0 {
            return bad("hidden width must be positive");
        }
        if !(self.policy_lr >= 0.0 && self.critic_lr >= 0.0) {
            return bad("learning rates must be non-negative");
        }
        if self.batch == 0 || self.buffer == 0 || self.policy_states == 0 {
            return bad("batch, buffer and policy_states must be positive");
        }
        if !(16..=64).contains(&self.particles) {
            return bad("particles must lie in [16, 64]");
        }
        if self.value_samples == Some(0) {
            return bad("value_samples must be positive");
        }
        if self.target_sync == 0 || self.update_every == 0 || self.alpha_stride == 0 {
            return bad("target_sync, update_every and alpha_stride must be positive");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if !(self.alpha.base > 0.0) || !(self.alpha.spike >= 0.0) || !(self.alpha.rate >= 0.0) {
            return bad("alpha schedule needs base > 0 and non-negative spike and rate");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.adam_eps > 0.0) {
            return bad("adam moments must lie in [0, 1) with positive epsilon");
        }
        Ok(())
    }

    fn value_samples(&self) -> usize {
        self.value_samples.unwrap_or(self.particles)
    }
}

/// Per-agent sampler networks with the negotiation wiring of their noises.
#[derive(Debug, Clone)]
pub struct PolicyBundle {
    pub nets: Vec<Graph>,
    pub schedule: NegotiationSchedule,
    pub state_dim: usize,
    pub action_dim: usize,
    pub bound: f64,
}

impl PolicyBundle {
    pub fn new<R: Rng + ?Sized>(
        schedule: NegotiationSchedule,
        state_dim: usize,
        action_dim: usize,
        bound: f64,
        hidden: usize,
        require_nested: bool,
        rng: &mut R,
    ) -> Result<Self, AgentError> {
        schedule.validate()?;
        if require_nested && !validate_nested(&schedule.sets).valid {
            return Err(AgentError::NotNested);
        }
        let nets = (0..schedule.agents())
            .map(|i| {
                let input = state_dim + action_dim * (1 + schedule.blanket(i).len());
                let mut spec = MlpSpec::new(vec![input, hidden, hidden, action_dim], Activation::Relu, Activation::Tanh);
                spec.output_scale = Some(bound);
                Graph::mlp(&spec, rng)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(PolicyBundle { nets, schedule, state_dim, action_dim, bound })
    }

    pub fn agents(&self) -> usize {
        self.nets.len()
    }

    pub fn joint_dim(&self) -> usize {
        self.agents() * self.action_dim
    }

    /// Noise agents feeding agent `i`, in input order.
    pub fn noise_sources(&self, i: usize) -> Vec<usize> {
        std::iter::once(i).chain(self.schedule.blanket(i)).collect()
    }

    fn agent_input(&self, i: usize, states: &[&[f64]], noises: &[Vec<f64>]) -> Tensor {
        let sources = self.noise_sources(i);
        let d = self.action_dim;
        let width = self.state_dim + d * sources.len();
        let mut data = Vec::with_capacity(states.len() * width);
        for (s, xi) in states.iter().zip(noises) {
            data.extend_from_slice(s);
            for &j in &sources {
                data.extend_from_slice(&xi[j * d..(j + 1) * d]);
            }
        }
        Tensor::new(vec![states.len(), width], data).expect("row widths agree")
    }

    /// Joint actions for each (state, joint noise) row.
    pub fn actions(&mut self, states: &[&[f64]], noises: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, AgentError> {
        let d = self.action_dim;
        let n = self.agents();
        let mut out = vec![vec![0.0; n * d]; states.len()];
        for i in 0..n {
            let x = self.agent_input(i, states, noises);
            let y = self.nets[i].forward_x(x)?;
            for (row, u) in out.iter_mut().enumerate() {
                u[i * d..(i + 1) * d].copy_from_slice(y.row(row));
            }
        }
        Ok(out)
    }

    pub fn draw_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.joint_dim()).map(|_| rng.sample(StandardNormal)).collect()
    }

    /// Draws `ξ ~ N(0, I)` for every agent and returns the joint action with
    /// the noise that produced it.
    pub fn sample_joint<R: Rng + ?Sized>(&mut self, state: &[f64], rng: &mut R) -> Result<(Vec<f64>, Vec<f64>), AgentError> {
        let xi = self.draw_noise(rng);
        let u = self.actions(&[state], std::slice::from_ref(&xi))?.remove(0);
        Ok((u, xi))
    }

    pub fn export(&self) -> Vec<ParamCheckpoint> {
        self.nets.iter().map(Graph::export_params).collect()
    }

    pub fn import(&mut self, checkpoints: &[ParamCheckpoint]) -> Result<(), AgentError> {
        if checkpoints.len() != self.nets.len() {
            return Err(AgentError::Config(format!("checkpoint has {} policies, expected {}", checkpoints.len(), self.nets.len())));
        }
        for (net, ck) in self.nets.iter_mut().zip(checkpoints) {
            net.import_params(ck)?;
        }
        Ok(())
    }
}

/// Centralized soft critic `Q(s, u)` with a target copy.
#[derive(Debug, Clone)]
pub struct Critic {
    pub net: Graph,
    pub target: Graph,
    pub state_dim: usize,
    pub joint_dim: usize,
}

impl Critic {
    pub fn new<R: Rng + ?Sized>(state_dim: usize, joint_dim: usize, hidden: usize, rng: &mut R) -> Result<Self, AgentError> {
        let net = Graph::mlp(&MlpSpec::default_hidden(state_dim + joint_dim, 1, hidden), rng)?;
        Ok(Critic { target: net.clone(), net, state_dim, joint_dim })
    }

    /// Builds a critic from an arbitrary graph reading input `"x"` of shape
    /// `[B, state_dim + joint_dim]` and producing `[B, 1]`.
    pub fn from_graph(net: Graph, state_dim: usize, joint_dim: usize) -> Self {
        Critic { target: net.clone(), net, state_dim, joint_dim }
    }

    fn rows(&self, states: &[&[f64]], actions: &[Vec<f64>]) -> Tensor {
        let width = self.state_dim + self.joint_dim;
        let mut data = Vec::with_capacity(states.len() * width);
        for (s, u) in states.iter().zip(actions) {
            data.extend_from_slice(s);
            data.extend_from_slice(u);
        }
        Tensor::new(vec![states.len(), width], data).expect("row widths agree")
    }

    pub fn values(&mut self, states: &[&[f64]], actions: &[Vec<f64>]) -> Result<Vec<f64>, AgentError> {
        Ok(self.net.forward_x(self.rows(states, actions))?.into_data())
    }

    pub fn target_values(&mut self, states: &[&[f64]], actions: &[Vec<f64>]) -> Result<Vec<f64>, AgentError> {
        Ok(self.target.forward_x(self.rows(states, actions))?.into_data())
    }

    /// `∇_u Q(s, u)` for every row.
    pub fn action_gradients(&mut self, states: &[&[f64]], actions: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, AgentError> {
        let x = self.rows(states, actions);
        let b = bind("x", x);
        self.net.forward(&b)?;
        let report = self.net.backward(&b, &Tensor::filled(&[states.len(), 1], 1.0))?;
        let g = report.get("x").expect("critic reads x");
        let mut out = Vec::with_capacity(states.len());
        for row in 0..states.len() {
            let grad = g.row(row)[self.state_dim..].to_vec();
            if grad.iter().any(|v| !v.is_finite()) {
                return Err(AgentError::NonFiniteGradient { sample: row });
            }
            out.push(grad);
        }
        Ok(out)
    }

    pub fn sync_target(&mut self) {
        self.target = self.net.clone();
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub terminal: bool,
}

/// Fixed-capacity ring of transitions with uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    slots: Vec<Transition>,
    capacity: usize,
    next: usize,
    pushed: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayBuffer { slots: Vec::new(), capacity, next: 0, pushed: 0 }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Total number of pushes, including overwritten records.
    pub fn pushed(&self) -> usize {
        self.pushed
    }

    pub fn push(&mut self, t: Transition) {
        if self.slots.len() < self.capacity {
            self.slots.push(t);
        } else {
            self.slots[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
        self.pushed += 1;
    }

    /// Occupied slots in storage order.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.slots.iter()
    }

    /// `n` records drawn uniformly with replacement; empty when the buffer is.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<&Transition> {
        if self.slots.is_empty() {
            return Vec::new();
        }
        (0..n).map(|_| &self.slots[rng.gen_range(0..self.slots.len())]).collect()
    }
}

/// Adaptive-moment optimizer; `beta1 = 0` disables momentum.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    steps: u64,
    first: BTreeMap<String, Vec<f64>>,
    second: BTreeMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam { lr, beta1, beta2, eps, steps: 0, first: BTreeMap::new(), second: BTreeMap::new() }
    }

    /// One descent step along `grads` (named like the graph's parameters).
    pub fn step(&mut self, graph: &mut Graph, grads: &BTreeMap<String, Tensor>) {
        self.steps += 1;
        let t = self.steps as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (name, param) in graph.params_mut() {
            let Some(g) = grads.get(name) else { continue };
            let m = self.first.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            let v = self.second.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            for (k, p) in param.data_mut().iter_mut().enumerate() {
                let gk = g.data()[k];
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * gk;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * gk * gk;
                *p -= self.lr * (m[k] / c1) / ((v[k] / c2).sqrt() + self.eps);
            }
        }
    }
}

/// `alpha * log(mean(exp(q / alpha)))`, computed with max-subtraction.
pub fn soft_value(q: &[f64], alpha: f64) -> f64 {
    assert!(!q.is_empty() && alpha > 0.0, "soft_value needs samples and a positive temperature");
    let scaled: Vec<f64> = q.iter().map(|v| v / alpha).collect();
    alpha * (logsumexp(&scaled) - (q.len() as f64).ln())
}

/// Stein directions for every agent at one state.
///
/// `out[i][a]` is `(1/M) sum_b [κ_i(a,b) ∇_{u_i} Q(s, u^b) + alpha ∇_{u^b_i} κ_i(a,b)]`
/// with `κ_i` an RBF kernel on the coordinates of agent `i` and its blanket.
pub fn delta_f(
    critic: &mut Critic,
    schedule: &NegotiationSchedule,
    action_dim: usize,
    state: &[f64],
    samples: &[Vec<f64>],
    kernel: &KernelConfig,
    alpha: f64,
) -> Result<Vec<Vec<Vec<f64>>>, AgentError> {
    let states: Vec<&[f64]> = vec![state; samples.len()];
    let grads = critic.action_gradients(&states, samples)?;
    Ok(stein_directions(schedule, action_dim, samples, &grads, kernel, alpha))
}

fn stein_directions(
    schedule: &NegotiationSchedule,
    action_dim: usize,
    samples: &[Vec<f64>],
    grads: &[Vec<f64>],
    kernel: &KernelConfig,
    alpha: f64,
) -> Vec<Vec<Vec<f64>>> {
    let layout = schedule.layout(action_dim);
    let m = samples.len() as f64;
    (0..schedule.agents())
        .map(|i| {
            let own = &layout.groups[i];
            let local = layout.local_coords(i);
            let ev = eval_with_grads(&project(samples, &local), kernel);
            let own_pos: Vec<usize> = own.iter().map(|c| local.iter().position(|l| l == c).expect("own in local")).collect();
            (0..samples.len())
                .map(|a| {
                    let mut dir = vec![0.0; own.len()];
                    for b in 0..samples.len() {
                        let k = ev.gram[a][b];
                        for (slot, (&c, &p)) in dir.iter_mut().zip(own.iter().zip(&own_pos)) {
                            *slot += k * grads[b][c] + alpha * ev.grad_wrt_second[a][b][p];
                        }
                    }
                    dir.iter().map(|v| v / m).collect()
                })
                .collect()
        })
        .collect()
}

/// Policy optimizers, one per agent.
#[derive(Debug, Clone)]
pub struct PolicyOptimizer {
    pub agents: Vec<Adam>,
}

impl PolicyOptimizer {
    pub fn new(agents: usize, config: &AgentConfig) -> Self {
        PolicyOptimizer {
            agents: (0..agents).map(|_| Adam::new(config.policy_lr, config.beta1, config.beta2, config.adam_eps)).collect(),
        }
    }
}

/// Pushes each agent's outputs along `directions[i][row]` by one optimizer
/// step: the directions act as a fixed cotangent on the squashed actions.
pub fn policy_step(
    bundle: &mut PolicyBundle,
    optimizer: &mut PolicyOptimizer,
    directions: &[Vec<Vec<f64>>],
    states: &[&[f64]],
    noises: &[Vec<f64>],
) -> Result<(), AgentError> {
    let d = bundle.action_dim;
    if directions.len() != bundle.agents() || directions.iter().any(|rows| rows.len() != states.len()) {
        return Err(AgentError::Shape(format!(
            "expected {} agents x {} rows of directions",
            bundle.agents(),
            states.len()
        )));
    }
    if noises.len() != states.len() {
        return Err(AgentError::Shape(format!("{} noises for {} states", noises.len(), states.len())));
    }
    let rows = states.len() as f64;
    for i in 0..bundle.agents() {
        if directions[i].iter().any(|r| r.len() != d) {
            return Err(AgentError::Shape(format!("agent {i} directions must have {d} coordinates")));
        }
        let x = bundle.agent_input(i, states, noises);
        let b = bind("x", x);
        bundle.nets[i].forward(&b)?;
        // ascent on sum_rows <dir, f>: descend its negation, averaged over rows
        let cot = Tensor::new(vec![states.len(), d], directions[i].iter().flatten().map(|v| -v / rows).collect())?;
        let report = bundle.nets[i].backward(&b, &cot)?;
        optimizer.agents[i].step(&mut bundle.nets[i], &report.grads);
    }
    Ok(())
}

/// One gradient step on `0.5 * mean((r + V̄(s') - Q(s, u))^2)`; returns the
/// loss before the step. Terminal transitions use `V̄(s') = 0`.
pub fn critic_step<R: Rng + ?Sized>(
    critic: &mut Critic,
    optimizer: &mut Adam,
    batch: &[&Transition],
    bundle: &mut PolicyBundle,
    alpha: f64,
    gamma: f64,
    value_samples: usize,
    rng: &mut R,
) -> Result<f64, AgentError> {
    if batch.is_empty() {
        return Ok(0.0);
    }
    let live: Vec<usize> = (0..batch.len()).filter(|&k| !batch[k].terminal).collect();
    let mut next_values = vec![0.0; batch.len()];
    if !live.is_empty() {
        let mut states: Vec<&[f64]> = Vec::with_capacity(live.len() * value_samples);
        let mut noises = Vec::with_capacity(live.len() * value_samples);
        for &k in &live {
            for _ in 0..value_samples {
                states.push(&batch[k].next_state);
                noises.push(bundle.draw_noise(rng));
            }
        }
        let actions = bundle.actions(&states, &noises)?;
        let q = critic.target_values(&states, &actions)?;
        for (slot, chunk) in live.iter().zip(q.chunks(value_samples)) {
            next_values[*slot] = soft_value(chunk, alpha);
        }
    }
    let states: Vec<&[f64]> = batch.iter().map(|t| t.state.as_slice()).collect();
    let actions: Vec<Vec<f64>> = batch.iter().map(|t| t.action.clone()).collect();
    let x = critic.rows(&states, &actions);
    let b = bind("x", x);
    let q = critic.net.forward(&b)?.into_data();
    let n = batch.len() as f64;
    let mut loss = 0.0;
    let mut cot = Vec::with_capacity(batch.len());
    for (k, t) in batch.iter().enumerate() {
        let y = t.reward + gamma * next_values[k];
        let err = q[k] - y;
        loss += 0.5 * err * err / n;
        cot.push(err / n);
    }
    let report = critic.net.backward(&b, &Tensor::new(vec![batch.len(), 1], cot)?)?;
    optimizer.step(&mut critic.net, &report.grads);
    Ok(loss)
}

/// Metrics row emitted after every episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub episode: usize,
    #[serde(rename = "return")]
    pub ret: f64,
    pub alpha: f64,
    /// Mean critic loss over the episode's updates (0 when none ran).
    pub critic_loss: f64,
    pub max_direction_norm: f64,
    pub clamp_count: usize,
}

/// One executed joint action during training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionRecord {
    pub step: usize,
    pub action: Vec<f64>,
    pub reward: f64,
}

pub const AGENT_CHECKPOINT_FORMAT: &str = "svnr-agent/1";

/// Everything needed to reload a trained agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentCheckpoint {
    pub format: String,
    pub episode: usize,
    pub policies: Vec<ParamCheckpoint>,
    pub critic: ParamCheckpoint,
    pub target: ParamCheckpoint,
    pub buffer_len: usize,
    pub buffer_capacity: usize,
    pub buffer_pushed: usize,
    pub updates: usize,
    /// Environment steps taken so far.
    pub steps: usize,
}

/// Full training state.
#[derive(Debug, Clone)]
pub struct Learner {
    pub bundle: PolicyBundle,
    pub critic: Critic,
    pub config: AgentConfig,
    pub buffer: ReplayBuffer,
    pub policy_opt: PolicyOptimizer,
    pub critic_opt: Adam,
    pub rng: ChaCha8Rng,
    pub episode: usize,
    pub steps: usize,
    pub updates: usize,
}

impl Learner {
    pub fn new(env: &Env, schedule: NegotiationSchedule, config: AgentConfig, seed: u64) -> Result<Self, AgentError> {
        config.validate()?;
        if schedule.agents() != env.agents() {
            return Err(AgentError::Config(format!("schedule has {} agents, environment has {}", schedule.agents(), env.agents())));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bundle =
            PolicyBundle::new(schedule, env.state_dim(), env.action_dim(), env.action_bound(), config.hidden, config.require_nested, &mut rng)?;
        let critic = Critic::new(env.state_dim(), env.joint_dim(), config.hidden, &mut rng)?;
        Ok(Learner {
            policy_opt: PolicyOptimizer::new(bundle.agents(), &config),
            critic_opt: Adam::new(config.critic_lr, config.beta1, config.beta2, config.adam_eps),
            buffer: ReplayBuffer::new(config.buffer),
            bundle,
            critic,
            config,
            rng,
            episode: 0,
            steps: 0,
            updates: 0,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.config.alpha.at(self.episode / self.config.alpha_stride)
    }

    pub fn checkpoint(&self) -> AgentCheckpoint {
        AgentCheckpoint {
            format: AGENT_CHECKPOINT_FORMAT.into(),
            episode: self.episode,
            policies: self.bundle.export(),
            critic: self.critic.net.export_params(),
            target: self.critic.target.export_params(),
            buffer_len: self.buffer.len(),
            buffer_capacity: self.buffer.capacity(),
            buffer_pushed: self.buffer.pushed(),
            updates: self.updates,
            steps: self.steps,
        }
    }

    /// Loads network parameters and counters. The replay contents and
    /// optimizer moments are not part of the checkpoint.
    pub fn restore(&mut self, ck: &AgentCheckpoint) -> Result<(), AgentError> {
        if ck.format != AGENT_CHECKPOINT_FORMAT {
            return Err(AgentError::Config(format!("unknown checkpoint format {:?}", ck.format)));
        }
        self.bundle.import(&ck.policies)?;
        self.critic.net.import_params(&ck.critic)?;
        self.critic.target.import_params(&ck.target)?;
        self.episode = ck.episode;
        self.updates = ck.updates;
        self.steps = ck.steps;
        Ok(())
    }

    /// One critic update and one policy update; returns the critic loss and
    /// the largest Stein direction norm.
    pub fn update(&mut self) -> Result<(f64, f64), AgentError> {
        let alpha = self.alpha();
        let cfg = self.config.clone();
        let batch: Vec<Transition> = self.buffer.sample(cfg.batch, &mut self.rng).into_iter().cloned().collect();
        let refs: Vec<&Transition> = batch.iter().collect();
        let loss = critic_step(
            &mut self.critic,
            &mut self.critic_opt,
            &refs,
            &mut self.bundle,
            alpha,
            cfg.gamma,
            cfg.value_samples(),
            &mut self.rng,
        )?;

        let picked: Vec<Vec<f64>> =
            self.buffer.sample(cfg.policy_states, &mut self.rng).into_iter().map(|t| t.state.clone()).collect();
        let m = cfg.particles;
        let mut states: Vec<&[f64]> = Vec::with_capacity(picked.len() * m);
        let mut noises = Vec::with_capacity(picked.len() * m);
        for s in &picked {
            for _ in 0..m {
                states.push(s);
                noises.push(self.bundle.draw_noise(&mut self.rng));
            }
        }
        let actions = self.bundle.actions(&states, &noises)?;
        let grads = self.critic.action_gradients(&states, &actions)?;
        let n = self.bundle.agents();
        let mut directions: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(states.len()); n];
        let mut worst: f64 = 0.0;
        for (chunk_u, chunk_g) in actions.chunks(m).zip(grads.chunks(m)) {
            let dirs = stein_directions(&self.bundle.schedule, self.bundle.action_dim, chunk_u, chunk_g, &cfg.kernel, alpha);
            for (i, rows) in dirs.into_iter().enumerate() {
                for r in rows {
                    worst = worst.max(r.iter().map(|v| v * v).sum::<f64>().sqrt());
                    directions[i].push(r);
                }
            }
        }
        policy_step(&mut self.bundle, &mut self.policy_opt, &directions, &states, &noises)?;

        self.updates += 1;
        if self.updates % cfg.target_sync == 0 {
            self.critic.sync_target();
        }
        Ok((loss, worst))
    }

    /// Runs one training episode, appending executed actions to `log`.
    pub fn run_episode(&mut self, env: &mut Env, log: &mut Vec<ActionRecord>) -> Result<EpisodeMetrics, AgentError> {
        let mut state = env.reset();
        let alpha = self.alpha();
        let mut ret = 0.0;
        let mut losses = Vec::new();
        let mut worst: f64 = 0.0;
        loop {
            let (u, _) = self.bundle.sample_joint(&state, &mut self.rng)?;
            let out = env.step(&u)?;
            ret += out.reward;
            self.steps += 1;
            log.push(ActionRecord { step: self.steps, action: u.clone(), reward: out.reward });
            self.buffer.push(Transition {
                state: state.clone(),
                action: u,
                reward: out.reward,
                next_state: out.state.clone(),
                terminal: out.done,
            });
            if self.buffer.len() >= self.config.warmup && self.steps % self.config.update_every == 0 {
                for _ in 0..self.config.updates_per_round {
                    let (loss, norm) = self.update()?;
                    losses.push(loss);
                    worst = worst.max(norm);
                }
            }
            state = out.state;
            if out.done {
                break;
            }
        }
        let critic_loss = if losses.is_empty() { 0.0 } else { losses.iter().sum::<f64>() / losses.len() as f64 };
        let metrics =
            EpisodeMetrics { episode: self.episode, ret, alpha, critic_loss, max_direction_norm: worst, clamp_count: env.clamp_count() };
        self.episode += 1;
        Ok(metrics)
    }
}

/// Output of [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub metrics: Vec<EpisodeMetrics>,
    pub actions: Vec<ActionRecord>,
}

/// Algorithm 1: collect, sample, update critic, update policies, sync the
/// target, for `episodes` episodes. `on_episode` sees every metrics row as
/// it is produced. A non-finite update aborts with the last checkpoint
/// taken at an episode boundary.
pub fn train(
    learner: &mut Learner,
    env: &mut Env,
    episodes: usize,
    mut on_episode: impl FnMut(&EpisodeMetrics),
) -> Result<TrainOutcome, AgentError> {
    let mut metrics = Vec::with_capacity(episodes);
    let mut actions = Vec::new();
    for _ in 0..episodes {
        let good = learner.checkpoint();
        let episode = learner.episode;
        let row = match learner.run_episode(env, &mut actions) {
            Ok(row) if row.ret.is_finite() && row.critic_loss.is_finite() && row.max_direction_norm.is_finite() => row,
            Ok(_) | Err(AgentError::Graph(GraphError::NonFinite(_))) | Err(AgentError::NonFiniteGradient { .. }) => {
                return Err(AgentError::Diverged { episode, checkpoint: Box::new(good) });
            }
            Err(e) => return Err(e),
        };
        on_episode(&row);
        metrics.push(row);
    }
    Ok(TrainOutcome { metrics, actions })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// One seed per episode generates the joint noise every agent reads.
    SharedNoise,
    /// All noises are zero.
    Deterministic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub mean: f64,
    pub std: f64,
    pub returns: Vec<f64>,
}

/// Runs `episodes` evaluation episodes. Episode `k` uses environment seed
/// and noise seed derived from `seed + k`, so results are reproducible.
pub fn evaluate(
    bundle: &mut PolicyBundle,
    env: &mut Env,
    episodes: usize,
    mode: EvalMode,
    seed: u64,
) -> Result<EvalSummary, AgentError> {
    let mut returns = Vec::with_capacity(episodes);
    for k in 0..episodes {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(k as u64));
        if let Env::Gather(g) = env {
            *g = crate::envs::Gather::new(g.params, seed.wrapping_add(k as u64))?;
        }
        let mut state = env.reset();
        let mut ret = 0.0;
        loop {
            let xi = match mode {
                EvalMode::SharedNoise => bundle.draw_noise(&mut rng),
                EvalMode::Deterministic => vec![0.0; bundle.joint_dim()],
            };
            let u = bundle.actions(&[&state], &[xi])?.remove(0);
            let out = env.step(&u)?;
            ret += out.reward;
            state = out.state;
            if out.done {
                break;
            }
        }
        returns.push(ret);
    }
    let n = returns.len().max(1) as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let std = (returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt();
    Ok(EvalSummary { mean, std, returns })
}
