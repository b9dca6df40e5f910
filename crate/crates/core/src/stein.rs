//! Stein variational gradient descent over particle sets, in the full form
//! and in the message-passing form that updates one coordinate group at a
//! time with a kernel local to the group and its Markov blanket.

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::kernels::{eval_with_grads, project, KernelConfig};
use crate::linalg;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SteinError {
    #[error("particle set must be non-empty with equal, non-zero dimensions")]
    BadParticles,
    #[error("non-finite score at particle {particle}")]
    NonFiniteScore { particle: usize },
    #[error("invalid factorization: {0}")]
    Layout(String),
    #[error("step size must be positive, got {0}")]
    Step(f64),
    #[error("transport diverged after {} iterations", trace.iterations)]
    Diverged { trace: TransportTrace },
}

/// `M` points in `D` dimensions, read as the empirical measure
/// `(1/M) sum_l delta(x - x_l)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSet {
    particles: Vec<Vec<f64>>,
}

impl ParticleSet {
    pub fn new(particles: Vec<Vec<f64>>) -> Result<Self, SteinError> {
        let Some(first) = particles.first() else {
            return Err(SteinError::BadParticles);
        };
        let d = first.len();
        if d == 0 || particles.iter().any(|p| p.len() != d || p.iter().any(|v| !v.is_finite())) {
            return Err(SteinError::BadParticles);
        }
        Ok(ParticleSet { particles })
    }

    /// `m` draws from `N(0, scale^2 I)` in `dim` dimensions.
    pub fn gaussian<R: Rng + ?Sized>(m: usize, dim: usize, scale: f64, rng: &mut R) -> Self {
        let particles = (0..m)
            .map(|_| (0..dim).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        ParticleSet { particles }
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.particles[0].len()
    }

    pub fn particles(&self) -> &[Vec<f64>] {
        &self.particles
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.particles[i]
    }

    pub fn into_particles(self) -> Vec<Vec<f64>> {
        self.particles
    }

    pub fn mean(&self) -> Vec<f64> {
        let m = self.len() as f64;
        let mut mu = vec![0.0; self.dim()];
        for p in &self.particles {
            for (acc, v) in mu.iter_mut().zip(p) {
                *acc += v / m;
            }
        }
        mu
    }

    /// Population (1/M) covariance.
    pub fn covariance(&self) -> Vec<Vec<f64>> {
        let mu = self.mean();
        let d = self.dim();
        let m = self.len() as f64;
        let mut cov = vec![vec![0.0; d]; d];
        for p in &self.particles {
            for i in 0..d {
                for j in 0..d {
                    cov[i][j] += (p[i] - mu[i]) * (p[j] - mu[j]) / m;
                }
            }
        }
        cov
    }

    /// Clips the listed coordinates of every particle to `[-bound, bound]`.
    pub fn clamp_coords(&mut self, coords: &[usize], bound: f64) {
        for p in &mut self.particles {
            for &c in coords {
                p[c] = p[c].clamp(-bound, bound);
            }
        }
    }

    /// Adds `step * directions[l]` to the coordinates `coords` of each particle.
    pub fn shift_coords(&mut self, coords: &[usize], directions: &[Vec<f64>], step: f64) {
        for (p, dir) in self.particles.iter_mut().zip(directions) {
            for (&c, v) in coords.iter().zip(dir) {
                p[c] += step * v;
            }
        }
    }
}

/// Coordinate groups and their Markov blankets (as group indices).
#[derive(Debug, Clone, PartialEq)]
pub struct Factorization {
    pub groups: Vec<Vec<usize>>,
    pub blankets: Vec<Vec<usize>>,
}

impl Factorization {
    /// One coordinate per group, no blankets.
    pub fn independent(dim: usize) -> Self {
        Factorization { groups: (0..dim).map(|d| vec![d]).collect(), blankets: vec![Vec::new(); dim] }
    }

    /// One coordinate per group, each group's blanket all other groups.
    pub fn fully_connected(dim: usize) -> Self {
        Factorization {
            groups: (0..dim).map(|d| vec![d]).collect(),
            blankets: (0..dim).map(|d| (0..dim).filter(|&o| o != d).collect()).collect(),
        }
    }

    pub fn validate(&self, dim: usize) -> Result<(), SteinError> {
        if self.groups.len() != self.blankets.len() {
            return Err(SteinError::Layout("groups and blankets differ in length".into()));
        }
        let mut seen = vec![false; dim];
        for (g, coords) in self.groups.iter().enumerate() {
            if coords.is_empty() {
                return Err(SteinError::Layout(format!("group {g} is empty")));
            }
            for &c in coords {
                if c >= dim || seen[c] {
                    return Err(SteinError::Layout(format!("coordinate {c} invalid or shared")));
                }
                seen[c] = true;
            }
        }
        for (g, blanket) in self.blankets.iter().enumerate() {
            if blanket.contains(&g) {
                return Err(SteinError::Layout(format!("blanket of group {g} contains the group itself")));
            }
            if let Some(b) = blanket.iter().find(|&&b| b >= self.groups.len()) {
                return Err(SteinError::Layout(format!("blanket of group {g} names unknown group {b}")));
            }
        }
        Ok(())
    }

    pub fn blanket_coords(&self, group: usize) -> Vec<usize> {
        let mut c: Vec<usize> = self.blankets[group].iter().flat_map(|&b| self.groups[b].iter().copied()).collect();
        c.sort_unstable();
        c
    }

    /// Coordinates of the group followed by its blanket, i.e. the kernel
    /// arguments of the local update.
    pub fn local_coords(&self, group: usize) -> Vec<usize> {
        let mut c = self.groups[group].clone();
        c.extend(self.blanket_coords(group));
        c
    }
}

/// A differentiable log density, known up to a constant.
pub trait Target {
    fn dim(&self) -> usize;

    /// Gradient of `log p` at `x`.
    fn score(&self, x: &[f64]) -> Vec<f64>;

    /// Gradient of `log p(x_coords | x_given)` with respect to `x_coords`.
    ///
    /// The default restricts the joint score, which is exact whenever
    /// `given` contains the full Markov blanket of `coords`.
    fn conditional_score(&self, coords: &[usize], given: &[usize], x: &[f64]) -> Vec<f64> {
        let _ = given;
        let s = self.score(x);
        coords.iter().map(|&c| s[c]).collect()
    }
}

/// Target defined by a score closure.
pub struct FnTarget<F> {
    dim: usize,
    score: F,
}

impl<F: Fn(&[f64]) -> Vec<f64>> FnTarget<F> {
    pub fn new(dim: usize, score: F) -> Self {
        FnTarget { dim, score }
    }
}

impl<F: Fn(&[f64]) -> Vec<f64>> Target for FnTarget<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn score(&self, x: &[f64]) -> Vec<f64> {
        (self.score)(x)
    }
}

/// Multivariate normal with closed-form conditionals and an exact sampler.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    mean: Vec<f64>,
    cov: Vec<Vec<f64>>,
    precision: Vec<Vec<f64>>,
    chol: Vec<Vec<f64>>,
}

impl Gaussian {
    pub fn new(mean: Vec<f64>, cov: Vec<Vec<f64>>) -> Option<Self> {
        if cov.len() != mean.len() || cov.iter().any(|r| r.len() != mean.len()) {
            return None;
        }
        let chol = linalg::cholesky(&cov)?;
        let precision = linalg::inverse_spd(&cov)?;
        Some(Gaussian { mean, cov, precision, chol })
    }

    pub fn standard(dim: usize) -> Self {
        let cov = (0..dim).map(|i| (0..dim).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
        Gaussian::new(vec![0.0; dim], cov).expect("identity is positive definite")
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn cov(&self) -> &[Vec<f64>] {
        &self.cov
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let z: Vec<f64> = (0..self.mean.len()).map(|_| rng.sample(StandardNormal)).collect();
        let lz = linalg::mat_vec(&self.chol, &z);
        self.mean.iter().zip(lz).map(|(m, v)| m + v).collect()
    }

    /// Mean and covariance of `x_coords | x_given`.
    pub fn conditional(&self, coords: &[usize], given: &[usize], x: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let s_aa = linalg::submatrix(&self.cov, coords, coords);
        if given.is_empty() {
            return (coords.iter().map(|&c| self.mean[c]).collect(), s_aa);
        }
        let s_ab = linalg::submatrix(&self.cov, coords, given);
        let s_bb = linalg::submatrix(&self.cov, given, given);
        let l = linalg::cholesky(&s_bb).expect("sub-covariance of an SPD matrix is SPD");
        let resid: Vec<f64> = given.iter().map(|&g| x[g] - self.mean[g]).collect();
        let w = linalg::cholesky_solve(&l, &resid);
        let mu: Vec<f64> = coords
            .iter()
            .zip(&s_ab)
            .map(|(&c, row)| self.mean[c] + row.iter().zip(&w).map(|(p, q)| p * q).sum::<f64>())
            .collect();
        let mut cov = s_aa;
        for (i, row_i) in s_ab.iter().enumerate() {
            let solved = linalg::cholesky_solve(&l, row_i);
            for (j, row_j) in s_ab.iter().enumerate() {
                cov[i][j] -= row_j.iter().zip(&solved).map(|(p, q)| p * q).sum::<f64>();
            }
        }
        (mu, cov)
    }
}

impl Target for Gaussian {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn score(&self, x: &[f64]) -> Vec<f64> {
        let r: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| m - a).collect();
        linalg::mat_vec(&self.precision, &r)
    }

    fn conditional_score(&self, coords: &[usize], given: &[usize], x: &[f64]) -> Vec<f64> {
        let (mu, cov) = self.conditional(coords, given, x);
        let l = linalg::cholesky(&cov).expect("conditional covariance is SPD");
        let r: Vec<f64> = coords.iter().zip(&mu).map(|(&c, m)| m - x[c]).collect();
        linalg::cholesky_solve(&l, &r)
    }
}

fn check_scores(scores: &[Vec<f64>]) -> Result<(), SteinError> {
    match scores.iter().position(|s| s.iter().any(|v| !v.is_finite())) {
        Some(particle) => Err(SteinError::NonFiniteScore { particle }),
        None => Ok(()),
    }
}

/// Full SVGD direction
/// `phi(x_a) = (1/M) sum_b [k(x_a, x_b) score(x_b) + grad_{x_b} k(x_a, x_b)]`.
pub fn svgd_direction(ps: &ParticleSet, target: &dyn Target, kernel: &KernelConfig) -> Result<Vec<Vec<f64>>, SteinError> {
    let scores: Vec<Vec<f64>> = ps.particles.iter().map(|x| target.score(x)).collect();
    check_scores(&scores)?;
    let ev = eval_with_grads(&ps.particles, kernel);
    Ok(stein_combine(&ev.gram, &ev.grad_wrt_second, &scores, &(0..ps.dim()).collect::<Vec<_>>(), 1.0))
}

/// `(1/M) sum_b [gram[a][b] scores[b] + repulsion * grad[a][b][own]]` where
/// `own` selects which kernel-argument positions receive the update.
pub(crate) fn stein_combine(
    gram: &[Vec<f64>],
    grad: &[Vec<Vec<f64>>],
    scores: &[Vec<f64>],
    own: &[usize],
    repulsion: f64,
) -> Vec<Vec<f64>> {
    let m = gram.len();
    let inv_m = 1.0 / m as f64;
    (0..m)
        .map(|a| {
            let mut phi = vec![0.0; own.len()];
            for b in 0..m {
                let k = gram[a][b];
                for (slot, (&pos, s)) in phi.iter_mut().zip(own.iter().zip(&scores[b])) {
                    *slot += k * s + repulsion * grad[a][b][pos];
                }
            }
            phi.iter_mut().for_each(|v| *v *= inv_m);
            phi
        })
        .collect()
}

/// Message-passing direction for one coordinate group; the kernel reads only
/// the group's coordinates and its blanket's.
pub fn mpsvgd_direction(
    ps: &ParticleSet,
    target: &dyn Target,
    layout: &Factorization,
    group: usize,
    kernel: &KernelConfig,
) -> Result<Vec<Vec<f64>>, SteinError> {
    if group >= layout.groups.len() {
        return Err(SteinError::Layout(format!("unknown group {group}")));
    }
    layout.validate(ps.dim())?;
    let coords = &layout.groups[group];
    let given = layout.blanket_coords(group);
    let local = layout.local_coords(group);
    let scores: Vec<Vec<f64>> = ps.particles.iter().map(|x| target.conditional_score(coords, &given, x)).collect();
    check_scores(&scores)?;
    let ev = eval_with_grads(&project(&ps.particles, &local), kernel);
    let own: Vec<usize> = (0..coords.len()).collect();
    Ok(stein_combine(&ev.gram, &ev.grad_wrt_second, &scores, &own, 1.0))
}

/// `x_l <- x_l + step * phi(x_l)` on all coordinates.
pub fn transport_step(ps: &ParticleSet, directions: &[Vec<f64>], step: f64) -> ParticleSet {
    let mut out = ps.clone();
    let coords: Vec<usize> = (0..ps.dim()).collect();
    out.shift_coords(&coords, directions, step);
    out
}

pub fn max_norm(directions: &[Vec<f64>]) -> f64 {
    directions.iter().map(|d| d.iter().map(|v| v * v).sum::<f64>().sqrt()).fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TransportTrace {
    /// Largest particle direction norm seen in each iteration.
    pub norms: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunConfig {
    pub step: f64,
    pub tol: f64,
    pub max_iters: usize,
    pub kernel: KernelConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig { step: 0.1, tol: 1e-3, max_iters: 2000, kernel: KernelConfig::default() }
    }
}

pub const DIVERGENCE_NORM: f64 = 1e6;

#[derive(Debug, Clone, PartialEq)]
pub enum Mode<'a> {
    Full,
    /// Sweeps the groups in `sweep` order, updating each in place.
    MessagePassing { layout: &'a Factorization, sweep: &'a [usize] },
}

/// Iterates transport until the largest direction norm drops below `tol`
/// or `max_iters` is reached.
pub fn run(
    ps: &ParticleSet,
    target: &dyn Target,
    config: &RunConfig,
    mode: Mode<'_>,
) -> Result<(ParticleSet, TransportTrace), SteinError> {
    if !(config.step > 0.0) {
        return Err(SteinError::Step(config.step));
    }
    if let Mode::MessagePassing { layout, sweep } = &mode {
        layout.validate(ps.dim())?;
        if let Some(g) = sweep.iter().find(|&&g| g >= layout.groups.len()) {
            return Err(SteinError::Layout(format!("sweep names unknown group {g}")));
        }
    }
    let mut cur = ps.clone();
    let mut trace = TransportTrace::default();
    for _ in 0..config.max_iters {
        let norm = match &mode {
            Mode::Full => {
                let dir = svgd_direction(&cur, target, &config.kernel)?;
                let n = max_norm(&dir);
                if n < config.tol {
                    trace.norms.push(n);
                    trace.iterations += 1;
                    trace.converged = true;
                    break;
                }
                cur = transport_step(&cur, &dir, config.step);
                n
            }
            Mode::MessagePassing { layout, sweep } => {
                let mut worst: f64 = 0.0;
                for &g in sweep.iter() {
                    let dir = mpsvgd_direction(&cur, target, layout, g, &config.kernel)?;
                    worst = worst.max(max_norm(&dir));
                    cur.shift_coords(&layout.groups[g], &dir, config.step);
                }
                worst
            }
        };
        trace.norms.push(norm);
        trace.iterations += 1;
        if !(norm <= DIVERGENCE_NORM) {
            return Err(SteinError::Diverged { trace });
        }
        if norm < config.tol {
            trace.converged = true;
            break;
        }
    }
    Ok((cur, trace))
}
