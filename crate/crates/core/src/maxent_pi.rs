//! Maximum-entropy policy iteration with negotiated policy improvement, for
//! small tabular games (exact sums) and stateless continuous games
//! (particles).

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffgraph::logsumexp;
use crate::envs::DiffGameParams;
use crate::kernels::{median_bandwidth, project, sq_dist, DEFAULT_FLOOR};
use crate::negotiation::{energy_distance, negotiate, Agreement, NegotiationError, NegotiationSchedule};
use crate::stein::{ParticleSet, Target};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("invalid game: {0}")]
    Game(String),
    #[error("discount must lie in [0, 1), got {0}")]
    Discount(f64),
    #[error("temperature must be positive, got {0}")]
    Temperature(f64),
    #[error("tolerance must be positive, got {0}")]
    Tolerance(f64),
    #[error("{0} joint actions exceed the enumeration limit")]
    TooLarge(usize),
    #[error("policy does not match the game: {0}")]
    Policy(String),
    #[error(transparent)]
    Negotiation(#[from] NegotiationError),
    #[error("no convergence within {} iterations", trace.len())]
    NotConverged { trace: Vec<f64> },
}

pub const ENUMERATION_LIMIT: usize = 1_000_000;

/// Finite multi-agent game. Joint actions are indexed in mixed radix with the
/// last agent varying fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmallGame {
    /// Number of discrete actions of each agent.
    pub actions: Vec<usize>,
    pub states: usize,
    /// `reward[s][joint]`.
    pub reward: Vec<Vec<f64>>,
    /// `transition[s][joint][s']`; absent means every step is terminal.
    #[serde(default)]
    pub transition: Option<Vec<Vec<Vec<f64>>>>,
    pub gamma: f64,
    /// Optional action values per agent, for discretized continuous games.
    #[serde(default)]
    pub action_grids: Option<Vec<Vec<f64>>>,
}

impl SmallGame {
    pub fn from_json(text: &str) -> Result<Self, PolicyError> {
        let game: SmallGame = serde_json::from_str(text).map_err(|e| PolicyError::Game(e.to_string()))?;
        game.validate()?;
        Ok(game)
    }

    /// Single-state game with terminal steps and reward `reward(joint)`.
    pub fn stateless(actions: Vec<usize>, reward: impl Fn(&[usize]) -> f64) -> Self {
        let mut game = SmallGame { actions, states: 1, reward: Vec::new(), transition: None, gamma: 0.0, action_grids: None };
        let row = (0..game.joint_count()).map(|j| reward(&game.decode(j))).collect();
        game.reward = vec![row];
        game
    }

    /// Stateless game on a grid of `points` values per agent over the
    /// differential game's action range.
    pub fn diff_grid(params: &DiffGameParams, points: usize) -> Self {
        let bound = crate::envs::DIFF_ACTION_BOUND;
        let grid: Vec<f64> = (0..points).map(|k| -bound + 2.0 * bound * k as f64 / (points - 1) as f64).collect();
        let g = grid.clone();
        let mut game = SmallGame::stateless(vec![points; 3], move |u| {
            let x: Vec<f64> = u.iter().map(|&k| g[k]).collect();
            crate::envs::diff_reward(&x, params)
        });
        game.action_grids = Some(vec![grid; 3]);
        game
    }

    /// Random game with rewards in `[-1, 1]` and random transition rows.
    pub fn random<R: Rng + ?Sized>(states: usize, actions: Vec<usize>, gamma: f64, rng: &mut R) -> Self {
        let joint: usize = actions.iter().product();
        let reward = (0..states).map(|_| (0..joint).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let transition = (0..states)
            .map(|_| {
                (0..joint)
                    .map(|_| {
                        let raw: Vec<f64> = (0..states).map(|_| rng.gen_range(0.0..1.0)).collect();
                        let total: f64 = raw.iter().sum();
                        raw.iter().map(|v| v / total).collect()
                    })
                    .collect()
            })
            .collect();
        SmallGame { actions, states, reward, transition: Some(transition), gamma, action_grids: None }
    }

    pub fn agents(&self) -> usize {
        self.actions.len()
    }

    pub fn joint_count(&self) -> usize {
        self.actions.iter().product()
    }

    pub fn decode(&self, mut joint: usize) -> Vec<usize> {
        let mut u = vec![0; self.actions.len()];
        for (slot, &n) in u.iter_mut().zip(&self.actions).rev() {
            *slot = joint % n;
            joint /= n;
        }
        u
    }

    pub fn encode(&self, u: &[usize]) -> usize {
        u.iter().zip(&self.actions).fold(0, |acc, (&a, &n)| acc * n + a)
    }

    /// Action values of a joint index (grid values when present, otherwise
    /// the indices themselves).
    pub fn joint_values(&self, joint: usize) -> Vec<f64> {
        let u = self.decode(joint);
        match &self.action_grids {
            Some(grids) => u.iter().zip(grids).map(|(&k, g)| g[k]).collect(),
            None => u.iter().map(|&k| k as f64).collect(),
        }
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        if self.actions.is_empty() || self.actions.contains(&0) || self.states == 0 {
            return Err(PolicyError::Game("need at least one state, one agent and one action per agent".into()));
        }
        let joint = self.actions.iter().fold(1usize, |acc, &n| acc.saturating_mul(n));
        if joint > ENUMERATION_LIMIT {
            return Err(PolicyError::TooLarge(joint));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(PolicyError::Discount(self.gamma));
        }
        if self.reward.len() != self.states || self.reward.iter().any(|r| r.len() != joint || r.iter().any(|v| !v.is_finite())) {
            return Err(PolicyError::Game("reward table must be states x joint actions and finite".into()));
        }
        if let Some(p) = &self.transition {
            let ok = p.len() == self.states
                && p.iter().all(|rows| {
                    rows.len() == joint
                        && rows.iter().all(|row| {
                            row.len() == self.states
                                && row.iter().all(|&v| v >= 0.0)
                                && (row.iter().sum::<f64>() - 1.0).abs() <= 1e-12
                        })
                });
            if !ok {
                return Err(PolicyError::Game("transition rows must be distributions over states".into()));
            }
        }
        if let Some(grids) = &self.action_grids {
            if grids.len() != self.actions.len() || grids.iter().zip(&self.actions).any(|(g, &n)| g.len() != n) {
                return Err(PolicyError::Game("action grids must match the action counts".into()));
            }
        }
        Ok(())
    }

    /// Uniform joint policy in every state.
    pub fn uniform_policy(&self) -> Vec<Vec<f64>> {
        let j = self.joint_count();
        vec![vec![1.0 / j as f64; j]; self.states]
    }
}

/// Soft state-action values and the temperature they were computed at.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftQTable {
    /// `q[s][joint]`.
    pub q: Vec<Vec<f64>>,
    pub alpha: f64,
}

impl SoftQTable {
    pub fn zeros(game: &SmallGame, alpha: f64) -> Self {
        SoftQTable { q: vec![vec![0.0; game.joint_count()]; game.states], alpha }
    }

    pub fn sup_distance(&self, other: &SoftQTable) -> f64 {
        self.q.iter().flatten().zip(other.q.iter().flatten()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

fn xlogx(p: f64) -> f64 {
    if p > 0.0 {
        p * p.ln()
    } else {
        0.0
    }
}

/// `sum_u pi(u) [Q(u) - alpha log pi(u)]`, with zero-probability actions
/// contributing nothing.
pub fn soft_state_value(q: &[f64], pi: &[f64], alpha: f64) -> f64 {
    q.iter().zip(pi).map(|(&qv, &p)| if p > 0.0 { p * qv - alpha * xlogx(p) } else { 0.0 }).sum()
}

fn check_policy(game: &SmallGame, pi: &[Vec<f64>]) -> Result<(), PolicyError> {
    let j = game.joint_count();
    if pi.len() != game.states || pi.iter().any(|row| row.len() != j) {
        return Err(PolicyError::Policy("expected one distribution over joint actions per state".into()));
    }
    if pi.iter().any(|row| (row.iter().sum::<f64>() - 1.0).abs() > 1e-9 || row.iter().any(|&p| p < 0.0)) {
        return Err(PolicyError::Policy("rows must be probability distributions".into()));
    }
    Ok(())
}

/// `Q'(s,u) = r(s,u) + gamma sum_s' P(s'|s,u) V(s')` with the soft value of
/// `pi` at temperature `q.alpha`.
pub fn soft_bellman_backup(q: &SoftQTable, pi: &[Vec<f64>], game: &SmallGame) -> SoftQTable {
    let values: Vec<f64> = q.q.iter().zip(pi).map(|(qs, ps)| soft_state_value(qs, ps, q.alpha)).collect();
    let next = game
        .reward
        .iter()
        .enumerate()
        .map(|(s, rewards)| {
            rewards
                .iter()
                .enumerate()
                .map(|(u, &r)| match &game.transition {
                    Some(p) => r + game.gamma * p[s][u].iter().zip(&values).map(|(pr, v)| pr * v).sum::<f64>(),
                    None => r,
                })
                .collect()
        })
        .collect();
    SoftQTable { q: next, alpha: q.alpha }
}

/// Iterates the soft Bellman operator from zero. Stops once the a-posteriori
/// bound `gamma / (1 - gamma) * |Q_k+1 - Q_k|` on the remaining error is below
/// `tol`. Returns the table and the number of backups.
pub fn evaluate_policy(pi: &[Vec<f64>], game: &SmallGame, alpha: f64, tol: f64) -> Result<(SoftQTable, usize), PolicyError> {
    game.validate()?;
    check_policy(game, pi)?;
    if !(tol > 0.0) {
        return Err(PolicyError::Tolerance(tol));
    }
    if !(game.gamma < 1.0) {
        return Err(PolicyError::Discount(game.gamma));
    }
    if !(alpha >= 0.0) {
        return Err(PolicyError::Temperature(alpha));
    }
    let factor = game.gamma / (1.0 - game.gamma);
    let mut q = SoftQTable::zeros(game, alpha);
    for k in 1..=100_000 {
        let next = soft_bellman_backup(&q, pi, game);
        let delta = next.sup_distance(&q);
        q = next;
        if factor * delta < tol || game.transition.is_none() {
            return Ok((q, k));
        }
    }
    Err(PolicyError::NotConverged { trace: Vec::new() })
}

/// Agent `i`'s improvement target `softmax_{u_i}(Q_i(u_i, u_B) / alpha)`,
/// indexed by joint action (constant across the agents outside `i` and `B`).
///
/// `Q_i(u_S)` is the soft value of the remaining agents under `pi`:
/// `E[Q(u) - alpha log pi(u_rest | u_S) | u_S]`, falling back to a uniform
/// conditional where `pi` gives `u_S` no mass.
fn agent_target(game: &SmallGame, q: &[f64], pi: &[f64], agent: usize, blanket: &[usize], alpha: f64) -> Vec<f64> {
    let n = game.agents();
    let mut kept = vec![false; n];
    kept[agent] = true;
    for &b in blanket {
        kept[b] = true;
    }
    let rest_count: usize = (0..n).filter(|&a| !kept[a]).map(|a| game.actions[a]).product();
    let key = |u: &[usize]| -> usize { (0..n).filter(|&a| kept[a]).fold(0, |acc, a| acc * game.actions[a] + u[a]) };
    let s_count: usize = (0..n).filter(|&a| kept[a]).map(|a| game.actions[a]).product();
    let mut mass = vec![0.0; s_count];
    let mut weighted = vec![0.0; s_count];
    let mut plain = vec![0.0; s_count];
    let keys: Vec<usize> = (0..game.joint_count()).map(|j| key(&game.decode(j))).collect();
    for (j, &k) in keys.iter().enumerate() {
        mass[k] += pi[j];
        weighted[k] += pi[j] * q[j];
        plain[k] += q[j];
    }
    let mut ent = vec![0.0; s_count];
    for (j, &k) in keys.iter().enumerate() {
        if pi[j] > 0.0 && mass[k] > 0.0 {
            ent[k] -= pi[j] * (pi[j] / mass[k]).ln();
        }
    }
    let cond: Vec<f64> = (0..s_count)
        .map(|k| {
            if mass[k] > 1e-300 {
                (weighted[k] + alpha * ent[k]) / mass[k]
            } else {
                plain[k] / rest_count as f64 + alpha * (rest_count as f64).ln()
            }
        })
        .collect();
    // normalize over the agent's own action for each blanket value
    let own = game.actions[agent];
    let own_stride: usize = (agent + 1..n).filter(|&a| kept[a]).map(|a| game.actions[a]).product();
    let mut target_s = vec![0.0; s_count];
    for k in 0..s_count {
        let own_val = (k / own_stride) % own;
        if own_val != 0 {
            continue;
        }
        let logits: Vec<f64> = (0..own).map(|v| cond[k + v * own_stride] / alpha).collect();
        let lse = logsumexp(&logits);
        for (v, l) in logits.iter().enumerate() {
            target_s[k + v * own_stride] = (l - lse).exp();
        }
    }
    keys.iter().map(|&k| target_s[k]).collect()
}

/// Replaces agent `i`'s conditional in `joint`: `q(u_-i) * target(u_i | u_B)`.
fn substitute_conditional(game: &SmallGame, joint: &[f64], agent: usize, target: &[f64]) -> Vec<f64> {
    let own = game.actions[agent];
    let stride: usize = game.actions[agent + 1..].iter().product();
    let mut out = vec![0.0; joint.len()];
    for j in 0..joint.len() {
        let v = (j / stride) % own;
        if v != 0 {
            continue;
        }
        let marginal: f64 = (0..own).map(|w| joint[j + w * stride]).sum();
        for w in 0..own {
            out[j + w * stride] = marginal * target[j + w * stride];
        }
    }
    out
}

/// Exact negotiated improvement: each state's joint table is rebuilt by
/// sweeping agents in ascending order, replacing each agent's conditional by
/// its Boltzmann target, until the table moves less than `schedule.tol` or
/// `schedule.rounds` sweeps have run. Nested sets finish in one sweep.
pub fn improve_policy(
    q: &SoftQTable,
    pi: &[Vec<f64>],
    schedule: &NegotiationSchedule,
    game: &SmallGame,
) -> Result<Vec<Vec<f64>>, PolicyError> {
    if !(q.alpha > 0.0) {
        return Err(PolicyError::Temperature(q.alpha));
    }
    check_policy(game, pi)?;
    schedule.validate()?;
    if schedule.agents() != game.agents() {
        return Err(PolicyError::Policy(format!("schedule has {} agents, game has {}", schedule.agents(), game.agents())));
    }
    let n = game.agents();
    let mut next = Vec::with_capacity(game.states);
    for s in 0..game.states {
        let targets: Vec<Vec<f64>> =
            (0..n).map(|i| agent_target(game, &q.q[s], &pi[s], i, &schedule.blanket(i), q.alpha)).collect();
        let mut joint = pi[s].clone();
        for _ in 0..schedule.rounds.max(1) {
            let before = joint.clone();
            for (i, t) in targets.iter().enumerate() {
                joint = substitute_conditional(game, &joint, i, t);
            }
            let moved = joint.iter().zip(&before).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            if moved < schedule.tol {
                break;
            }
        }
        next.push(joint);
    }
    Ok(next)
}

/// Geometric temperature annealing `alpha_k = max(start * factor^k, floor)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Annealing {
    pub start: f64,
    pub factor: f64,
    pub floor: f64,
}

impl Annealing {
    pub fn constant(alpha: f64) -> Self {
        Annealing { start: alpha, factor: 1.0, floor: alpha }
    }

    pub fn geometric(start: f64, floor: f64) -> Self {
        Annealing { start, factor: 0.9, floor }
    }

    pub fn at(&self, k: usize) -> f64 {
        (self.start * self.factor.powi(k.min(i32::MAX as usize) as i32)).max(self.floor)
    }

    /// Index of the first stage that sits on the floor.
    pub fn stages(&self) -> usize {
        (0..100_000).find(|&k| self.at(k) <= self.floor).unwrap_or(100_000) + 1
    }

    fn validate(&self) -> Result<(), PolicyError> {
        if !(self.floor > 0.0) || !(self.start >= self.floor) || !(self.factor > 0.0 && self.factor <= 1.0) {
            return Err(PolicyError::Temperature(self.floor));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationOutcome {
    pub policy: Vec<Vec<f64>>,
    pub q: SoftQTable,
    pub iterations: usize,
    /// Largest per-entry policy change in each outer iteration.
    pub trace: Vec<f64>,
}

/// Alternates evaluation and negotiated improvement from the uniform policy
/// until, at the annealing floor, the policy changes by less than `tol`.
pub fn policy_iteration(
    game: &SmallGame,
    schedule: &NegotiationSchedule,
    annealing: Annealing,
    tol: f64,
    max_iters: usize,
) -> Result<IterationOutcome, PolicyError> {
    game.validate()?;
    annealing.validate()?;
    let mut pi = game.uniform_policy();
    let mut trace = Vec::new();
    for k in 0..max_iters {
        let alpha = annealing.at(k);
        let (q, _) = evaluate_policy(&pi, game, alpha, tol * 1e-2)?;
        let next = improve_policy(&q, &pi, schedule, game)?;
        let change = next.iter().flatten().zip(pi.iter().flatten()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        trace.push(change);
        pi = next;
        if change < tol && alpha <= annealing.floor {
            let (q, _) = evaluate_policy(&pi, game, alpha, tol * 1e-2)?;
            return Ok(IterationOutcome { policy: pi, q, iterations: k + 1, trace });
        }
    }
    Err(PolicyError::NotConverged { trace })
}

/// Soft-optimal values and the Boltzmann policy `softmax(Q* / alpha)`.
pub fn soft_optimal(game: &SmallGame, alpha: f64, tol: f64) -> Result<(SoftQTable, Vec<Vec<f64>>), PolicyError> {
    game.validate()?;
    if !(alpha > 0.0) {
        return Err(PolicyError::Temperature(alpha));
    }
    if !(game.gamma < 1.0) {
        return Err(PolicyError::Discount(game.gamma));
    }
    let factor = game.gamma / (1.0 - game.gamma);
    let mut q = SoftQTable::zeros(game, alpha);
    loop {
        let values: Vec<f64> = q.q.iter().map(|row| alpha * logsumexp(&row.iter().map(|v| v / alpha).collect::<Vec<_>>())).collect();
        let next: Vec<Vec<f64>> = game
            .reward
            .iter()
            .enumerate()
            .map(|(s, rewards)| {
                rewards
                    .iter()
                    .enumerate()
                    .map(|(u, &r)| match &game.transition {
                        Some(p) => r + game.gamma * p[s][u].iter().zip(&values).map(|(pr, v)| pr * v).sum::<f64>(),
                        None => r,
                    })
                    .collect()
            })
            .collect();
        let next = SoftQTable { q: next, alpha };
        let delta = next.sup_distance(&q);
        q = next;
        if factor * delta < tol || game.transition.is_none() {
            break;
        }
    }
    let pi = q.q.iter().map(|row| boltzmann(row, alpha)).collect();
    Ok((q, pi))
}

/// `softmax(values / alpha)`.
pub fn boltzmann(values: &[f64], alpha: f64) -> Vec<f64> {
    let logits: Vec<f64> = values.iter().map(|v| v / alpha).collect();
    let lse = logsumexp(&logits);
    logits.iter().map(|l| (l - lse).exp()).collect()
}

/// Marginal of a joint table over all agents except `agent`, indexed by the
/// joint index with the agent's action set to zero.
fn others_marginal(game: &SmallGame, joint: &[f64], agent: usize) -> BTreeMap<usize, f64> {
    let stride: usize = game.actions[agent + 1..].iter().product();
    let own = game.actions[agent];
    let mut m = BTreeMap::new();
    for (j, &p) in joint.iter().enumerate() {
        let base = j - ((j / stride) % own) * stride;
        *m.entry(base).or_insert(0.0) += p;
    }
    m
}

/// `min over pi_i of KL(pi_i x rho || target)` for a fixed opponent
/// distribution `rho`, attained at `pi_i ∝ exp(E_rho[log target])`.
fn best_individual_kl(game: &SmallGame, target: &[f64], rho: &BTreeMap<usize, f64>, agent: usize) -> f64 {
    let stride: usize = game.actions[agent + 1..].iter().product();
    let own = game.actions[agent];
    let neg_entropy: f64 = rho.values().map(|&p| xlogx(p)).sum();
    let scores: Vec<f64> = (0..own)
        .map(|v| {
            rho.iter()
                .filter(|(_, &p)| p > 0.0)
                .map(|(&base, &p)| p * target[base + v * stride].max(f64::MIN_POSITIVE).ln())
                .sum()
        })
        .collect();
    neg_entropy - logsumexp(&scores)
}

/// Perceived relative over-generalization: for each state and agent, how
/// much closer the agent's best individual policy could get to the
/// soft-optimal joint policy (in KL) if it perceived the optimal opponent
/// marginal instead of the one implied by `pi`. The largest gap is returned;
/// zero means the perception is as good as the optimal one.
pub fn pro_gap(pi: &[Vec<f64>], game: &SmallGame, alpha: f64) -> Result<f64, PolicyError> {
    game.validate()?;
    check_policy(game, pi)?;
    let (_, optimal) = soft_optimal(game, alpha, 1e-10)?;
    let mut worst: f64 = 0.0;
    for s in 0..game.states {
        for agent in 0..game.agents() {
            let perceived = best_individual_kl(game, &optimal[s], &others_marginal(game, &pi[s], agent), agent);
            let ideal = best_individual_kl(game, &optimal[s], &others_marginal(game, &optimal[s], agent), agent);
            worst = worst.max(perceived - ideal);
        }
    }
    Ok(worst)
}

/// Most probable joint action per state.
pub fn greedy_actions(pi: &[Vec<f64>]) -> Vec<usize> {
    pi.iter()
        .map(|row| row.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(j, _)| j).unwrap_or(0))
        .collect()
}

/// Differentiable stateless team objective over a joint action.
pub trait JointObjective {
    fn dim(&self) -> usize;
    fn value(&self, u: &[f64]) -> f64;
    fn gradient(&self, u: &[f64]) -> Vec<f64>;
}

impl JointObjective for DiffGameParams {
    fn dim(&self) -> usize {
        3
    }

    fn value(&self, u: &[f64]) -> f64 {
        crate::envs::diff_reward(u, self)
    }

    fn gradient(&self, u: &[f64]) -> Vec<f64> {
        if self.local_branch(u) >= self.peak_branch(u) {
            let centers = [-5.0, -5.0, 3.0];
            u.iter().zip(centers).map(|(&v, c)| -0.8 * 2.0 * (v - c) / 9.0).collect()
        } else {
            let centers = [self.x2, self.y2, self.z2];
            let s2 = self.s2 * self.s2;
            u.iter().zip(centers).map(|(&v, c)| -self.h2 * 2.0 * (v - c) / s2).collect()
        }
    }
}

/// Score of the negotiation target in particle mode.
///
/// For agent `i` with kernel coordinates `S = {i} ∪ B`, the score at `x` is
/// `(1/alpha) sum_b w_b grad_i Q(x_S, u^b_rest) / sum_b w_b` over a reference
/// particle set, with importance weights
/// `w_b = exp(-|x_S - u^b_S|^2 / h_S + Q(x_S, u^b_rest) / alpha)`.
/// The reference particles act as proposals for the actions of the agents
/// outside `S`, reweighted toward their Boltzmann conditional, so the score
/// estimates the gradient of the soft value of those agents.
pub struct PerceivedTarget<'a> {
    objective: &'a dyn JointObjective,
    reference: &'a ParticleSet,
    alpha: f64,
    bandwidths: BTreeMap<Vec<usize>, f64>,
}

impl<'a> PerceivedTarget<'a> {
    pub fn new(
        objective: &'a dyn JointObjective,
        reference: &'a ParticleSet,
        schedule: &NegotiationSchedule,
        action_dim: usize,
        alpha: f64,
    ) -> Self {
        let layout = schedule.layout(action_dim);
        let bandwidths = (0..schedule.agents())
            .map(|i| {
                let mut s = layout.local_coords(i);
                s.sort_unstable();
                let h = median_bandwidth(&project(reference.particles(), &s), DEFAULT_FLOOR);
                (s, h)
            })
            .collect();
        PerceivedTarget { objective, reference, alpha, bandwidths }
    }
}

impl Target for PerceivedTarget<'_> {
    fn dim(&self) -> usize {
        self.objective.dim()
    }

    fn score(&self, x: &[f64]) -> Vec<f64> {
        self.objective.gradient(x).iter().map(|g| g / self.alpha).collect()
    }

    fn conditional_score(&self, coords: &[usize], given: &[usize], x: &[f64]) -> Vec<f64> {
        let mut s: Vec<usize> = coords.iter().chain(given).copied().collect();
        s.sort_unstable();
        if s.len() == x.len() {
            let g = self.objective.gradient(x);
            return coords.iter().map(|&c| g[c] / self.alpha).collect();
        }
        let h = self.bandwidths.get(&s).copied().unwrap_or_else(|| {
            median_bandwidth(&project(self.reference.particles(), &s), DEFAULT_FLOOR)
        });
        let xs: Vec<f64> = s.iter().map(|&c| x[c]).collect();
        let mut log_w = Vec::with_capacity(self.reference.len());
        let mut grads = Vec::with_capacity(self.reference.len());
        let mut point = vec![0.0; x.len()];
        for p in self.reference.particles() {
            let ps: Vec<f64> = s.iter().map(|&c| p[c]).collect();
            point.copy_from_slice(p);
            for &c in &s {
                point[c] = x[c];
            }
            log_w.push(-sq_dist(&xs, &ps) / h + self.objective.value(&point) / self.alpha);
            let g = self.objective.gradient(&point);
            grads.push(coords.iter().map(|&c| g[c]).collect::<Vec<f64>>());
        }
        let top = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        let mut acc = vec![0.0; coords.len()];
        for (lw, g) in log_w.iter().zip(&grads) {
            let w = (lw - top).exp();
            total += w;
            for (a, v) in acc.iter_mut().zip(g) {
                *a += w * v;
            }
        }
        acc.iter().map(|a| a / (total * self.alpha)).collect()
    }
}

/// Particle-mode improvement: negotiates the particles against the
/// perceived target built from the current particles at temperature `alpha`.
pub fn improve_particles(
    ps: &ParticleSet,
    objective: &dyn JointObjective,
    schedule: &NegotiationSchedule,
    action_dim: usize,
    alpha: f64,
) -> Result<Agreement, PolicyError> {
    if !(alpha > 0.0) {
        return Err(PolicyError::Temperature(alpha));
    }
    let target = PerceivedTarget::new(objective, ps, schedule, action_dim, alpha);
    Ok(negotiate(ps, schedule, action_dim, &target)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleOutcome {
    pub particles: ParticleSet,
    pub iterations: usize,
    /// Energy distance between consecutive particle sets.
    pub trace: Vec<f64>,
}

/// Repeats particle improvement with annealed temperature until, at the
/// floor, consecutive particle sets are within `tol` in energy distance.
pub fn particle_policy_iteration(
    ps: &ParticleSet,
    objective: &dyn JointObjective,
    schedule: &NegotiationSchedule,
    action_dim: usize,
    annealing: Annealing,
    tol: f64,
    max_iters: usize,
) -> Result<ParticleOutcome, PolicyError> {
    annealing.validate()?;
    let mut cur = ps.clone();
    let mut trace = Vec::new();
    for k in 0..max_iters {
        let alpha = annealing.at(k);
        let next = improve_particles(&cur, objective, schedule, action_dim, alpha)?.particles;
        let change = energy_distance(next.particles(), cur.particles());
        trace.push(change);
        cur = next;
        if alpha <= annealing.floor && change < tol {
            return Ok(ParticleOutcome { particles: cur, iterations: k + 1, trace });
        }
    }
    Err(PolicyError::NotConverged { trace })
}

/// Executed joint action and the particles it was read from.
#[derive(Debug, Clone, PartialEq)]
pub struct Execution {
    pub action: Vec<f64>,
    pub particles: ParticleSet,
}

/// Negotiates through every annealing stage down to the floor, then lets each
/// agent execute its own coordinates of particle 0. Because all agents read
/// the same particle index, their actions come from one joint sample.
pub fn extract_execution(
    ps: &ParticleSet,
    objective: &dyn JointObjective,
    schedule: &NegotiationSchedule,
    action_dim: usize,
    annealing: Annealing,
) -> Result<Execution, PolicyError> {
    annealing.validate()?;
    let mut cur = ps.clone();
    for k in 0..annealing.stages() {
        cur = improve_particles(&cur, objective, schedule, action_dim, annealing.at(k))?.particles;
    }
    Ok(Execution { action: cur.point(0).to_vec(), particles: cur })
}
