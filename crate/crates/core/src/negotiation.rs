//! Negotiation sets, the nested-structure check and K-round particle
//! negotiation over a joint action.
//!
//! Every agent owns a block of coordinates of the joint action. Agent `i`
//! updates its block with a message-passing Stein step whose kernel reads
//! its own block and the blocks of the agents in its negotiation set.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernels::{sq_dist, KernelConfig};
use crate::stein::{self, Factorization, ParticleSet, SteinError, Target};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NegotiationError {
    #[error("agent {agent} out of range for {agents} agents")]
    Agent { agent: usize, agents: usize },
    #[error("invalid schedule: {0}")]
    Schedule(String),
    #[error(transparent)]
    Stein(#[from] SteinError),
    #[error("negotiation diverged in round {}", trace.len())]
    Diverged { trace: Vec<Vec<f64>> },
}

/// How negotiation sets are chosen.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", untagged)]
pub enum Flavor {
    Named(NamedFlavor),
    Custom(Vec<Vec<usize>>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NamedFlavor {
    /// Agent `i` negotiates with agents `0..=i`.
    Nested,
    /// Agent `i` negotiates with every other agent.
    Full,
    /// No negotiation; agents act on their marginals.
    Marginal,
}

impl Flavor {
    pub const NESTED: Flavor = Flavor::Named(NamedFlavor::Nested);
    pub const FULL: Flavor = Flavor::Named(NamedFlavor::Full);
    pub const MARGINAL: Flavor = Flavor::Named(NamedFlavor::Marginal);

    /// Negotiation sets for `n` agents (0-based indices).
    pub fn sets(&self, n: usize) -> Vec<Vec<usize>> {
        match self {
            Flavor::Named(NamedFlavor::Nested) => (0..n).map(|i| (0..=i).collect()).collect(),
            Flavor::Named(NamedFlavor::Full) => (0..n).map(|i| (0..n).filter(|&j| j != i).collect()).collect(),
            Flavor::Named(NamedFlavor::Marginal) => vec![Vec::new(); n],
            Flavor::Custom(sets) => sets.clone(),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Flavor::Named(NamedFlavor::Nested) => "nested",
            Flavor::Named(NamedFlavor::Full) => "full",
            Flavor::Named(NamedFlavor::Marginal) => "marginal",
            Flavor::Custom(_) => "custom",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NegotiationSchedule {
    /// `sets[i]` lists the agents whose actions agent `i` conditions on.
    /// It may contain `i` itself, which carries no extra meaning.
    pub sets: Vec<Vec<usize>>,
    /// Maximum number of rounds.
    pub rounds: usize,
    pub step: f64,
    pub tol: f64,
    pub kernel: KernelConfig,
    /// When set, every coordinate is clipped to `[-bound, bound]` after each
    /// agent update.
    pub bound: Option<f64>,
}

pub const DEFAULT_ROUNDS: usize = 100;
pub const DEFAULT_STEP: f64 = 0.1;
pub const DEFAULT_TOL: f64 = 1e-3;

impl NegotiationSchedule {
    pub fn new(flavor: &Flavor, agents: usize) -> Self {
        NegotiationSchedule {
            sets: flavor.sets(agents),
            rounds: DEFAULT_ROUNDS,
            step: DEFAULT_STEP,
            tol: DEFAULT_TOL,
            kernel: KernelConfig::default(),
            bound: None,
        }
    }

    pub fn with_bound(mut self, bound: f64) -> Self {
        self.bound = Some(bound);
        self
    }

    pub fn with_rounds(mut self, rounds: usize) -> Self {
        self.rounds = rounds;
        self
    }

    pub fn with_step(mut self, step: f64) -> Self {
        self.step = step;
        self
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn agents(&self) -> usize {
        self.sets.len()
    }

    pub fn validate(&self) -> Result<(), NegotiationError> {
        let n = self.sets.len();
        if n == 0 {
            return Err(NegotiationError::Schedule("no agents".into()));
        }
        if let Some((i, j)) = self
            .sets
            .iter()
            .enumerate()
            .find_map(|(i, c)| c.iter().find(|&&j| j >= n).map(|&j| (i, j)))
        {
            return Err(NegotiationError::Schedule(format!("agent {i} names unknown agent {j}")));
        }
        if !(self.step > 0.0) {
            return Err(NegotiationError::Schedule(format!("step must be positive, got {}", self.step)));
        }
        if let Some(b) = self.bound {
            if !(b > 0.0) {
                return Err(NegotiationError::Schedule(format!("bound must be positive, got {b}")));
            }
        }
        if !(self.tol > 0.0) {
            return Err(NegotiationError::Schedule(format!("tol must be positive, got {}", self.tol)));
        }
        Ok(())
    }

    /// The agents `i` conditions on, excluding itself, ascending.
    pub fn blanket(&self, i: usize) -> Vec<usize> {
        let mut b: Vec<usize> = self.sets[i].iter().copied().filter(|&j| j != i).collect();
        b.sort_unstable();
        b.dedup();
        b
    }

    /// Coordinate layout for agents with `action_dim` coordinates each.
    pub fn layout(&self, action_dim: usize) -> Factorization {
        let n = self.agents();
        Factorization {
            groups: (0..n).map(|i| (i * action_dim..(i + 1) * action_dim).collect()).collect(),
            blankets: (0..n).map(|i| self.blanket(i)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NestedWitness {
    pub valid: bool,
    /// `permutation[agent]` is the agent's position; present when valid.
    pub permutation: Option<Vec<usize>>,
}

/// Whether some ordering places each agent before all agents it conditions
/// on: the agent in position `p` must have every agent in positions after `p`
/// in its set. Such sets can represent any joint policy by conditionals.
///
/// Up to 8 agents every permutation is tried; beyond that a greedy
/// front-to-back construction is used, which is exact because any agent that
/// qualifies for the front can be moved there in every valid ordering.
pub fn validate_nested(sets: &[Vec<usize>]) -> NestedWitness {
    let n = sets.len();
    let order = if n <= 8 { exhaustive_order(sets) } else { greedy_order(sets) };
    match order {
        Some(order) => {
            let mut position = vec![0; n];
            for (p, &agent) in order.iter().enumerate() {
                position[agent] = p;
            }
            NestedWitness { valid: true, permutation: Some(position) }
        }
        None => NestedWitness { valid: false, permutation: None },
    }
}

/// Checks an agent ordering (agents listed front to back).
pub fn order_is_nested(sets: &[Vec<usize>], order: &[usize]) -> bool {
    order
        .iter()
        .enumerate()
        .all(|(p, &agent)| order[p + 1..].iter().all(|later| sets[agent].contains(later)))
}

fn exhaustive_order(sets: &[Vec<usize>]) -> Option<Vec<usize>> {
    let n = sets.len();
    let mut order: Vec<usize> = (0..n).collect();
    // Heap's algorithm, iterative.
    let mut c = vec![0usize; n];
    if order_is_nested(sets, &order) {
        return Some(order);
    }
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                order.swap(0, i);
            } else {
                order.swap(c[i], i);
            }
            if order_is_nested(sets, &order) {
                return Some(order);
            }
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    None
}

fn greedy_order(sets: &[Vec<usize>]) -> Option<Vec<usize>> {
    let n = sets.len();
    let mut remaining: Vec<usize> = (0..n).collect();
    let mut order = Vec::with_capacity(n);
    while !remaining.is_empty() {
        let pick = remaining
            .iter()
            .position(|&a| remaining.iter().all(|&b| b == a || sets[a].contains(&b)))?;
        order.push(remaining.remove(pick));
    }
    Some(order)
}

/// One Stein step on agent `agent`'s coordinates. Returns the updated set and
/// the largest per-particle direction norm.
pub fn negotiation_round(
    ps: &ParticleSet,
    agent: usize,
    schedule: &NegotiationSchedule,
    action_dim: usize,
    target: &dyn Target,
) -> Result<(ParticleSet, f64), NegotiationError> {
    let layout = schedule.layout(action_dim);
    let dir = agent_direction(ps, agent, schedule, &layout, target)?;
    let norm = stein::max_norm(&dir);
    let mut out = ps.clone();
    out.shift_coords(&layout.groups[agent], &dir, schedule.step);
    if let Some(b) = schedule.bound {
        out.clamp_coords(&layout.groups[agent], b);
    }
    Ok((out, norm))
}

fn agent_direction(
    ps: &ParticleSet,
    agent: usize,
    schedule: &NegotiationSchedule,
    layout: &Factorization,
    target: &dyn Target,
) -> Result<Vec<Vec<f64>>, NegotiationError> {
    let n = schedule.agents();
    if agent >= n {
        return Err(NegotiationError::Agent { agent, agents: n });
    }
    if layout.groups.iter().flatten().any(|&c| c >= ps.dim()) {
        return Err(NegotiationError::Schedule(format!(
            "{n} agents do not fit a {}-dimensional joint action",
            ps.dim()
        )));
    }
    Ok(stein::mpsvgd_direction(ps, target, layout, agent, &schedule.kernel)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Agreement {
    pub particles: ParticleSet,
    pub rounds_used: usize,
    pub converged: bool,
    /// `trace[r][i]`: agent `i`'s largest direction norm in round `r`.
    pub trace: Vec<Vec<f64>>,
}

/// Sweeps agents in ascending order for up to `schedule.rounds` rounds.
///
/// After a round in which every agent's direction norm fell below `tol`, the
/// directions are re-evaluated on the final particles without moving them;
/// the agreement is reported converged only if that probe also passes.
pub fn negotiate(
    ps: &ParticleSet,
    schedule: &NegotiationSchedule,
    action_dim: usize,
    target: &dyn Target,
) -> Result<Agreement, NegotiationError> {
    schedule.validate()?;
    let layout = schedule.layout(action_dim);
    let n = schedule.agents();
    let mut cur = ps.clone();
    let mut trace = Vec::new();
    let mut converged = false;
    for _ in 0..schedule.rounds {
        let mut norms = Vec::with_capacity(n);
        for agent in 0..n {
            let dir = agent_direction(&cur, agent, schedule, &layout, target)?;
            norms.push(stein::max_norm(&dir));
            cur.shift_coords(&layout.groups[agent], &dir, schedule.step);
            if let Some(b) = schedule.bound {
                cur.clamp_coords(&layout.groups[agent], b);
            }
        }
        let worst = norms.iter().copied().fold(0.0, f64::max);
        trace.push(norms);
        if !(worst <= stein::DIVERGENCE_NORM) {
            return Err(NegotiationError::Diverged { trace });
        }
        if worst < schedule.tol {
            let mut settled = true;
            for agent in 0..n {
                let dir = agent_direction(&cur, agent, schedule, &layout, target)?;
                if stein::max_norm(&dir) >= schedule.tol {
                    settled = false;
                    break;
                }
            }
            if settled {
                converged = true;
                break;
            }
        }
    }
    Ok(Agreement { rounds_used: trace.len(), particles: cur, converged, trace })
}

/// Energy distance `2E|X-Y| - E|X-X'| - E|Y-Y'|` between two samples, using
/// V-statistics so that a sample's distance to itself is exactly zero.
pub fn energy_distance(xs: &[Vec<f64>], ys: &[Vec<f64>]) -> f64 {
    let mean_dist = |a: &[Vec<f64>], b: &[Vec<f64>]| {
        let mut total = 0.0;
        for p in a {
            for q in b {
                total += sq_dist(p, q).sqrt();
            }
        }
        total / (a.len() * b.len()) as f64
    };
    let d = 2.0 * mean_dist(xs, ys) - mean_dist(xs, xs) - mean_dist(ys, ys);
    d.max(0.0)
}

/// Energy distance between agreement particles and reference samples.
pub fn agreement_distance(agreement: &Agreement, reference: &[Vec<f64>]) -> f64 {
    energy_distance(agreement.particles.particles(), reference)
}
