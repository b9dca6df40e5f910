use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use svnr::agent::{AgentConfig, AlphaSchedule, EvalMode};
use svnr::envs::Scenario;
use svnr::kernels::KernelConfig;
use svnr::negotiation::{Flavor, NegotiationSchedule};

use crate::HarnessError;

/// Which negotiation sets the agents' samplers are wired with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// Agent `i` reads the noises of every agent after it.
    Nested,
    /// Every agent reads every other agent's noise.
    Full,
    /// Every agent reads only its own noise.
    Marginal,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::Nested, Algorithm::Full, Algorithm::Marginal];

    pub fn flavor(self) -> Flavor {
        match self {
            Algorithm::Nested => Flavor::NESTED,
            Algorithm::Full => Flavor::FULL,
            Algorithm::Marginal => Flavor::MARGINAL,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Algorithm::Nested => "nested",
            Algorithm::Full => "full",
            Algorithm::Marginal => "marginal",
        }
    }

    pub fn parse(s: &str) -> Result<Self, HarnessError> {
        match s.trim() {
            "nested" | "svnr" => Ok(Algorithm::Nested),
            "full" | "svnr-f" => Ok(Algorithm::Full),
            "marginal" | "svnr-m" => Ok(Algorithm::Marginal),
            other => Err(HarnessError::Config(format!("unknown algorithm {other:?}; expected nested, full or marginal"))),
        }
    }
}

/// Training and evaluation knobs. Missing keys take the defaults listed
/// on each field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparameters {
    /// Hidden width of every network. Default 100.
    pub hidden: usize,
    /// Sampler learning rate. Default 1e-3.
    pub policy_lr: f64,
    /// Critic learning rate. Default 1e-3.
    pub critic_lr: f64,
    /// Critic minibatch size. Default 512.
    pub batch: usize,
    /// Replay capacity. Default 1e6.
    pub buffer: usize,
    /// Samples per state for the policy direction (M). Default 32.
    pub particles: usize,
    /// Samples per next state for the soft value. Default: `particles`.
    pub value_samples: Option<usize>,
    /// Replay states per policy update. Default 4.
    pub policy_states: usize,
    /// Updates between target-critic syncs. Default 100.
    pub target_sync: usize,
    /// Discount on the soft value of the next state. Default 1.
    pub gamma: f64,
    /// Final temperature α′. Default 0.2.
    pub alpha: f64,
    /// Initial temperature excess. Default 500.
    pub alpha_spike: f64,
    /// Decay rate of the excess per schedule step. Default 0.1.
    pub alpha_rate: f64,
    /// Schedule steps before decay starts. Default 10.
    pub alpha_delay: f64,
    /// Episodes per schedule step. Default 30.
    pub alpha_stride: usize,
    /// Adam first-moment decay. Default 0.
    pub beta1: f64,
    /// Adam second-moment decay. Default 0.999.
    pub beta2: f64,
    /// Transitions gathered before the first update. Default 1.
    pub warmup: usize,
    /// Environment steps between update rounds. Default 1.
    pub update_every: usize,
    /// Updates per round. Default 1.
    pub updates_per_round: usize,
    /// Fixed kernel bandwidth; the median heuristic when absent. Default absent.
    pub bandwidth: Option<f64>,
    /// Negotiation rounds K recorded in the schedule. Default 100.
    pub rounds: usize,
    /// Negotiation step ε recorded in the schedule. Default 0.1.
    pub step: f64,
    /// Evaluation episodes per seed. Default 100.
    pub eval_episodes: usize,
    /// Evaluation noise protocol. Default shared_noise.
    pub eval_mode: EvalMode,
    /// Episodes between checkpoints; 0 keeps only the initial and final ones. Default 1000.
    pub checkpoint_every: usize,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        let agent = AgentConfig::default();
        Hyperparameters {
            hidden: agent.hidden,
            policy_lr: agent.policy_lr,
            critic_lr: agent.critic_lr,
            batch: agent.batch,
            buffer: agent.buffer,
            particles: agent.particles,
            value_samples: agent.value_samples,
            policy_states: agent.policy_states,
            target_sync: agent.target_sync,
            gamma: agent.gamma,
            alpha: agent.alpha.base,
            alpha_spike: agent.alpha.spike,
            alpha_rate: agent.alpha.rate,
            alpha_delay: agent.alpha.delay,
            alpha_stride: agent.alpha_stride,
            beta1: agent.beta1,
            beta2: agent.beta2,
            warmup: agent.warmup,
            update_every: agent.update_every,
            updates_per_round: agent.updates_per_round,
            bandwidth: None,
            rounds: 100,
            step: 0.1,
            eval_episodes: 100,
            eval_mode: EvalMode::SharedNoise,
            checkpoint_every: 1000,
        }
    }
}

impl Hyperparameters {
    pub fn agent_config(&self, algorithm: Algorithm) -> Result<AgentConfig, HarnessError> {
        let kernel = match self.bandwidth {
            Some(h) => KernelConfig::fixed(h).map_err(|e| HarnessError::Config(e.to_string()))?,
            None => KernelConfig::default(),
        };
        let cfg = AgentConfig {
            hidden: self.hidden,
            policy_lr: self.policy_lr,
            critic_lr: self.critic_lr,
            batch: self.batch,
            buffer: self.buffer,
            particles: self.particles,
            value_samples: self.value_samples,
            policy_states: self.policy_states,
            target_sync: self.target_sync,
            gamma: self.gamma,
            alpha: AlphaSchedule { base: self.alpha, spike: self.alpha_spike, rate: self.alpha_rate, delay: self.alpha_delay },
            alpha_stride: self.alpha_stride,
            beta1: self.beta1,
            beta2: self.beta2,
            adam_eps: 1e-8,
            warmup: self.warmup,
            update_every: self.update_every,
            updates_per_round: self.updates_per_round,
            kernel,
            // the marginal ablation is deliberately outside the nested family
            require_nested: algorithm != Algorithm::Marginal,
        };
        cfg.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(cfg)
    }
}

/// One experiment: a scenario, an algorithm, and the seeds to run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    #[serde(default = "default_algorithm")]
    pub algorithm: Algorithm,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_episodes")]
    pub episodes: usize,
    #[serde(default)]
    pub hyperparameters: Hyperparameters,
    pub output_dir: PathBuf,
}

fn default_algorithm() -> Algorithm {
    Algorithm::Nested
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2, 3, 4]
}

fn default_episodes() -> usize {
    5000
}

impl ExperimentConfig {
    pub fn new(scenario: Scenario, algorithm: Algorithm, output_dir: impl Into<PathBuf>) -> Self {
        ExperimentConfig {
            scenario,
            algorithm,
            seeds: default_seeds(),
            episodes: default_episodes(),
            hyperparameters: Hyperparameters::default(),
            output_dir: output_dir.into(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.seeds.is_empty() {
            return Err(HarnessError::Config("seeds must not be empty".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(HarnessError::Config("seeds must be distinct".into()));
        }
        if self.hyperparameters.eval_episodes == 0 {
            return Err(HarnessError::Config("eval_episodes must be positive".into()));
        }
        if !(self.hyperparameters.rounds > 0 && self.hyperparameters.step > 0.0) {
            return Err(HarnessError::Config("rounds and step must be positive".into()));
        }
        svnr::envs::make_env(&self.scenario, 0).map_err(|e| HarnessError::Config(e.to_string()))?;
        self.hyperparameters.agent_config(self.algorithm)?;
        Ok(())
    }

    pub fn schedule(&self, agents: usize) -> NegotiationSchedule {
        NegotiationSchedule::new(&self.algorithm.flavor(), agents)
            .with_rounds(self.hyperparameters.rounds)
            .with_step(self.hyperparameters.step)
    }

    /// Directory for one seed's artifacts.
    pub fn seed_dir(&self, seed: u64) -> PathBuf {
        self.output_dir.join(format!("seed_{seed}"))
    }
}
