//! Benchmark environments: the three-agent differential game and the
//! four-agent Particle Gather world.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("unknown scenario {name:?}; expected one of: max_of_three, two_modalities, particle_gather, diff_game")]
    UnknownScenario { name: String },
    #[error("invalid scenario parameters: {0}")]
    Params(String),
    #[error("joint action has {got} coordinates, expected {expected}")]
    ActionDim { got: usize, expected: usize },
    #[error("episode already finished; call reset")]
    StepAfterDone,
}

/// Reward surface `max(g1, g2)` of the differential game where
/// `g1 = 0.8 [-((u1+5)/3)^2 - ((u2+5)/3)^2 - ((u3-3)/3)^2] + c1` and
/// `g2 = h2 [-((u1-x2)/s2)^2 - ((u2-y2)/s2)^2 - ((u3-z2)/s2)^2] + c2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiffGameParams {
    pub h2: f64,
    pub x2: f64,
    pub y2: f64,
    pub z2: f64,
    pub c1: f64,
    pub c2: f64,
    pub s2: f64,
}

pub const DIFF_ACTION_BOUND: f64 = 10.0;
pub const DIFF_AGENTS: usize = 3;

impl DiffGameParams {
    pub fn max_of_three(s2: f64) -> Self {
        DiffGameParams { h2: 1.0, x2: 7.0, y2: 7.0, z2: -4.0, c1: 0.0, c2: 10.0, s2 }
    }

    pub fn two_modalities() -> Self {
        DiffGameParams { h2: 1.0, x2: 7.0, y2: 7.0, z2: -3.0, c1: 10.0, c2: 10.0, s2: 2.0 }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let all = [self.h2, self.x2, self.y2, self.z2, self.c1, self.c2, self.s2];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(EnvError::Params("non-finite reward parameter".into()));
        }
        if !(self.s2 > 0.0) {
            return Err(EnvError::Params(format!("s2 must be positive, got {}", self.s2)));
        }
        Ok(())
    }

    pub fn local_branch(&self, u: &[f64]) -> f64 {
        let q = |v: f64, c: f64| ((v - c) / 3.0).powi(2);
        0.8 * -(q(u[0], -5.0) + q(u[1], -5.0) + q(u[2], 3.0)) + self.c1
    }

    pub fn peak_branch(&self, u: &[f64]) -> f64 {
        let q = |v: f64, c: f64| ((v - c) / self.s2).powi(2);
        self.h2 * -(q(u[0], self.x2) + q(u[1], self.y2) + q(u[2], self.z2)) + self.c2
    }
}

/// Team reward of the differential game for a 3-coordinate joint action.
pub fn diff_reward(u: &[f64], params: &DiffGameParams) -> f64 {
    params.local_branch(u).max(params.peak_branch(u))
}

/// Particle Gather constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatherParams {
    pub world_half_width: f64,
    pub landmark: [f64; 2],
    pub landmark_radius: f64,
    pub start_min_radius: f64,
    pub start_max_radius: f64,
    pub dt: f64,
    pub damping: f64,
    pub max_speed: f64,
    pub max_accel: f64,
    pub horizon: usize,
    pub both_reward: f64,
    pub one_reward: f64,
}

impl Default for GatherParams {
    fn default() -> Self {
        GatherParams {
            world_half_width: 1.0,
            landmark: [0.0, 0.0],
            landmark_radius: 0.2,
            start_min_radius: 0.5,
            start_max_radius: 0.9,
            dt: 0.1,
            damping: 0.25,
            max_speed: 1.0,
            max_accel: 5.0,
            horizon: 25,
            both_reward: 5.0,
            one_reward: -2.0,
        }
    }
}

impl GatherParams {
    pub fn validate(&self) -> Result<(), EnvError> {
        let ok = self.world_half_width > 0.0
            && self.landmark_radius > 0.0
            && 0.0 <= self.start_min_radius
            && self.start_min_radius <= self.start_max_radius
            && self.dt > 0.0
            && (0.0..1.0).contains(&self.damping)
            && self.max_speed > 0.0
            && self.max_accel > 0.0
            && self.horizon > 0;
        if ok {
            Ok(())
        } else {
            Err(EnvError::Params("gather constants out of range".into()))
        }
    }
}

/// Scenario selection as it appears in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Scenario {
    MaxOfThree {
        s2: f64,
    },
    TwoModalities,
    ParticleGather {
        #[serde(default)]
        params: GatherParams,
    },
    DiffGame {
        params: DiffGameParams,
    },
}

impl Scenario {
    pub fn from_name(name: &str) -> Result<Self, EnvError> {
        match name {
            "max_of_three" => Ok(Scenario::MaxOfThree { s2: 3.0 }),
            "two_modalities" => Ok(Scenario::TwoModalities),
            "particle_gather" => Ok(Scenario::ParticleGather { params: GatherParams::default() }),
            _ => Err(EnvError::UnknownScenario { name: name.to_string() }),
        }
    }

    /// Short label used in tables, e.g. `max_of_three(1.5)`.
    pub fn label(&self) -> String {
        match self {
            Scenario::MaxOfThree { s2 } => format!("max_of_three({s2})"),
            Scenario::TwoModalities => "two_modalities".into(),
            Scenario::ParticleGather { .. } => "particle_gather".into(),
            Scenario::DiffGame { .. } => "diff_game".into(),
        }
    }

    pub fn diff_params(&self) -> Option<DiffGameParams> {
        match self {
            Scenario::MaxOfThree { s2 } => Some(DiffGameParams::max_of_three(*s2)),
            Scenario::TwoModalities => Some(DiffGameParams::two_modalities()),
            Scenario::DiffGame { params } => Some(*params),
            Scenario::ParticleGather { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvStep {
    pub state: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffGame {
    pub params: DiffGameParams,
    done: bool,
    clamps: usize,
}

impl DiffGame {
    pub fn new(params: DiffGameParams) -> Result<Self, EnvError> {
        params.validate()?;
        Ok(DiffGame { params, done: false, clamps: 0 })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GatherState {
    pub pos: [[f64; 2]; 2],
    pub vel: [[f64; 2]; 2],
    pub t: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gather {
    pub params: GatherParams,
    state: GatherState,
    rng: ChaCha8Rng,
    done: bool,
    clamps: usize,
}

impl Gather {
    pub fn new(params: GatherParams, seed: u64) -> Result<Self, EnvError> {
        params.validate()?;
        let mut g = Gather { params, state: GatherState::default(), rng: ChaCha8Rng::seed_from_u64(seed), done: true, clamps: 0 };
        g.reset();
        Ok(g)
    }

    pub fn state(&self) -> &GatherState {
        &self.state
    }

    /// Places the particles explicitly, e.g. to probe reward events.
    pub fn set_state(&mut self, state: GatherState) {
        self.state = state;
        self.done = false;
    }

    fn observe(&self) -> Vec<f64> {
        let s = &self.state;
        vec![
            s.pos[0][0],
            s.pos[0][1],
            s.pos[1][0],
            s.pos[1][1],
            s.vel[0][0],
            s.vel[0][1],
            s.vel[1][0],
            s.vel[1][1],
            s.t as f64 / self.params.horizon as f64,
        ]
    }

    fn reset(&mut self) -> Vec<f64> {
        let p = self.params;
        let mut pos = [[0.0; 2]; 2];
        for slot in &mut pos {
            let r = self.rng.gen_range(p.start_min_radius..=p.start_max_radius);
            let theta = self.rng.gen_range(0.0..std::f64::consts::TAU);
            *slot = [p.landmark[0] + r * theta.cos(), p.landmark[1] + r * theta.sin()];
            for c in slot.iter_mut() {
                *c = c.clamp(-p.world_half_width, p.world_half_width);
            }
        }
        self.state = GatherState { pos, vel: [[0.0; 2]; 2], t: 0 };
        self.done = false;
        self.clamps = 0;
        self.observe()
    }

    pub fn inside(&self, particle: usize) -> bool {
        let p = self.state.pos[particle];
        let dx = p[0] - self.params.landmark[0];
        let dy = p[1] - self.params.landmark[1];
        (dx * dx + dy * dy).sqrt() <= self.params.landmark_radius
    }

    fn step(&mut self, accel: &[f64]) -> EnvStep {
        let p = self.params;
        for k in 0..2 {
            let a = [accel[2 * k], accel[2 * k + 1]];
            let v = &mut self.state.vel[k];
            for d in 0..2 {
                v[d] = v[d] * (1.0 - p.damping) + a[d] * p.dt;
            }
            let speed = (v[0] * v[0] + v[1] * v[1]).sqrt();
            if speed > p.max_speed {
                v[0] *= p.max_speed / speed;
                v[1] *= p.max_speed / speed;
            }
            let x = &mut self.state.pos[k];
            for d in 0..2 {
                x[d] = (x[d] + v[d] * p.dt).clamp(-p.world_half_width, p.world_half_width);
            }
        }
        self.state.t += 1;
        let hits = (0..2).filter(|&k| self.inside(k)).count();
        let reward = match hits {
            2 => p.both_reward,
            1 => p.one_reward,
            _ => 0.0,
        };
        self.done = hits > 0 || self.state.t >= p.horizon;
        EnvStep { state: self.observe(), reward, done: self.done }
    }
}

/// One of the benchmark environments behind a common interface.
#[derive(Debug, Clone, PartialEq)]
pub enum Env {
    Diff(DiffGame),
    Gather(Gather),
}

pub fn make_env(scenario: &Scenario, seed: u64) -> Result<Env, EnvError> {
    match scenario {
        Scenario::ParticleGather { params } => Ok(Env::Gather(Gather::new(*params, seed)?)),
        other => Ok(Env::Diff(DiffGame::new(other.diff_params().expect("differential scenario"))?)),
    }
}

impl Env {
    pub fn agents(&self) -> usize {
        match self {
            Env::Diff(_) => DIFF_AGENTS,
            Env::Gather(_) => 4,
        }
    }

    /// Action coordinates per agent.
    pub fn action_dim(&self) -> usize {
        1
    }

    pub fn joint_dim(&self) -> usize {
        self.agents() * self.action_dim()
    }

    pub fn state_dim(&self) -> usize {
        match self {
            Env::Diff(_) => 1,
            Env::Gather(_) => 9,
        }
    }

    pub fn horizon(&self) -> usize {
        match self {
            Env::Diff(_) => 1,
            Env::Gather(g) => g.params.horizon,
        }
    }

    /// Symmetric bound on every action coordinate.
    pub fn action_bound(&self) -> f64 {
        match self {
            Env::Diff(_) => DIFF_ACTION_BOUND,
            Env::Gather(g) => g.params.max_accel,
        }
    }

    /// Out-of-range action coordinates clamped during the current episode.
    pub fn clamp_count(&self) -> usize {
        match self {
            Env::Diff(g) => g.clamps,
            Env::Gather(g) => g.clamps,
        }
    }

    pub fn reset(&mut self) -> Vec<f64> {
        match self {
            Env::Diff(g) => {
                g.done = false;
                g.clamps = 0;
                vec![1.0]
            }
            Env::Gather(g) => g.reset(),
        }
    }

    pub fn step(&mut self, joint: &[f64]) -> Result<EnvStep, EnvError> {
        let expected = self.joint_dim();
        if joint.len() != expected {
            return Err(EnvError::ActionDim { got: joint.len(), expected });
        }
        let bound = self.action_bound();
        let clamped: Vec<f64> = joint.iter().map(|v| v.clamp(-bound, bound)).collect();
        let n_clamped = joint.iter().zip(&clamped).filter(|(a, b)| a != b).count();
        match self {
            Env::Diff(g) => {
                if g.done {
                    return Err(EnvError::StepAfterDone);
                }
                g.clamps += n_clamped;
                g.done = true;
                Ok(EnvStep { state: vec![1.0], reward: diff_reward(&clamped, &g.params), done: true })
            }
            Env::Gather(g) => {
                if g.done {
                    return Err(EnvError::StepAfterDone);
                }
                g.clamps += n_clamped;
                Ok(g.step(&clamped))
            }
        }
    }
}
