use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use svnr::kernels::KernelConfig;
use svnr::stein::{
    mpsvgd_direction, run, svgd_direction, transport_step, Factorization, FnTarget, Gaussian, Mode, ParticleSet,
    RunConfig, Target,
};

fn moments(ps: &ParticleSet, coord: usize) -> (f64, f64) {
    let xs: Vec<f64> = ps.particles().iter().map(|p| p[coord]).collect();
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
    (mean, var)
}

fn frobenius(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter().flatten().zip(b.iter().flatten()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

#[test]
fn single_particle_direction_is_the_score_at_two() {
    let ps = ParticleSet::new(vec![vec![2.0]]).unwrap();
    let dir = svgd_direction(&ps, &Gaussian::standard(1), &KernelConfig::default()).unwrap();
    assert!((dir[0][0] + 2.0).abs() < 1e-12);
}

#[test]
fn fifty_particles_recover_standard_normal_moments() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let ps = ParticleSet::new((0..50).map(|_| vec![rng.gen_range(-4.0..4.0)]).collect()).unwrap();
    let config = RunConfig { max_iters: 500, tol: 1e-12, ..RunConfig::default() };
    let (out, _) = run(&ps, &Gaussian::standard(1), &config, Mode::Full).unwrap();
    let (mean, var) = moments(&out, 0);
    assert!(mean.abs() < 0.05, "mean {mean}");
    assert!((var - 1.0).abs() < 0.1, "variance {var}");
}

#[test]
fn fifty_particles_converge_within_2000_iterations() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let ps = ParticleSet::gaussian(50, 1, 2.0, &mut rng);
    let (out, trace) = run(&ps, &Gaussian::standard(1), &RunConfig::default(), Mode::Full).unwrap();
    assert!(trace.converged, "final norm {:?}", trace.norms.last());
    assert!(trace.iterations <= 2000);
    let (mean, var) = moments(&out, 0);
    assert!(mean.abs() < 0.05 && (var - 1.0).abs() < 0.1);
}

fn mixture_score(x: &[f64]) -> Vec<f64> {
    // equal mixture of unit normals at -3 and +3
    let (a, b) = (-(x[0] + 3.0).powi(2) / 2.0, -(x[0] - 3.0).powi(2) / 2.0);
    let m = a.max(b);
    let (wa, wb) = ((a - m).exp(), (b - m).exp());
    vec![(wa * -(x[0] + 3.0) + wb * -(x[0] - 3.0)) / (wa + wb)]
}

#[test]
fn mixture_modes_each_hold_thirty_percent() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let ps = ParticleSet::new((0..100).map(|_| vec![rng.gen_range(-6.0..6.0)]).collect()).unwrap();
    let target = FnTarget::new(1, mixture_score);
    let (out, _) = run(&ps, &target, &RunConfig::default(), Mode::Full).unwrap();
    let near = |c: f64| out.particles().iter().filter(|p| (p[0] - c).abs() <= 1.0).count();
    assert!(near(-3.0) >= 30, "left {}", near(-3.0));
    assert!(near(3.0) >= 30, "right {}", near(3.0));
}

#[test]
fn fully_conditioned_group_matches_restricted_svgd() {
    let target = Gaussian::new(vec![0.5, -1.0, 2.0], vec![vec![1.0, 0.3, 0.1], vec![0.3, 2.0, -0.4], vec![0.1, -0.4, 1.5]]).unwrap();
    let layout = Factorization { groups: vec![vec![0], vec![1, 2]], blankets: vec![vec![1], vec![0]] };
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ps = ParticleSet::gaussian(12, 3, 1.5, &mut rng);
        let full = svgd_direction(&ps, &target, &KernelConfig::default()).unwrap();
        for (g, coords) in layout.groups.iter().enumerate() {
            let local = mpsvgd_direction(&ps, &target, &layout, g, &KernelConfig::default()).unwrap();
            for (a, row) in local.iter().enumerate() {
                for (k, &c) in coords.iter().enumerate() {
                    assert!((row[k] - full[a][c]).abs() < 1e-12, "seed {seed} group {g}");
                }
            }
        }
    }
}

#[test]
fn message_passing_recovers_correlated_covariance() {
    let cov = vec![vec![1.0, 0.5], vec![0.5, 1.0]];
    let target = Gaussian::new(vec![0.0, 0.0], cov.clone()).unwrap();
    let layout = Factorization { groups: vec![vec![0], vec![1]], blankets: vec![vec![1], vec![0]] };
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let ps = ParticleSet::gaussian(100, 2, 1.0, &mut rng);
    let sweep = [0, 1];
    let (out, tr) = run(&ps, &target, &RunConfig::default(), Mode::MessagePassing { layout: &layout, sweep: &sweep }).unwrap();
    let err = frobenius(&out.covariance(), &cov);
    assert!(err < 0.1, "frobenius {err} {:?} {:?} {}", out.covariance(), out.mean(), tr.iterations);
}

#[test]
fn zero_step_leaves_particles_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let ps = ParticleSet::gaussian(5, 2, 1.0, &mut rng);
    let dirs = vec![vec![3.0, -1.0]; 5];
    assert_eq!(transport_step(&ps, &dirs, 0.0), ps);
    assert_eq!(transport_step(&ps, &vec![vec![0.0, 0.0]; 5], 0.3), ps);
}

#[test]
fn squared_moment_error_shrinks_for_small_steps() {
    let target = Gaussian::new(vec![1.0, -1.0], vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut ps = ParticleSet::new((0..40).map(|_| vec![rng.gen_range(2.0..4.0), rng.gen_range(-4.0..-2.0)]).collect()).unwrap();
    let proxy = |ps: &ParticleSet| -> f64 {
        let m = ps.mean();
        let c = ps.covariance();
        (m[0] - 1.0).powi(2) + (m[1] + 1.0).powi(2) + frobenius(&c, &[vec![1.0, 0.0], vec![0.0, 1.0]]).powi(2)
    };
    let mut prev = proxy(&ps);
    for it in 0..300 {
        let dir = svgd_direction(&ps, &target, &KernelConfig::default()).unwrap();
        ps = transport_step(&ps, &dir, 0.01);
        let cur = proxy(&ps);
        assert!(cur <= prev * 1.05 + 1e-9, "iteration {it}: {prev} -> {cur}");
        prev = cur;
    }
}

proptest! {
    #[test]
    fn single_particle_svgd_equals_score(x in prop::collection::vec(-5.0f64..5.0, 2), mx in -2.0f64..2.0, my in -2.0f64..2.0, rho in -0.9f64..0.9) {
        let target = Gaussian::new(vec![mx, my], vec![vec![1.0, rho], vec![rho, 1.0]]).unwrap();
        let ps = ParticleSet::new(vec![x.clone()]).unwrap();
        let dir = svgd_direction(&ps, &target, &KernelConfig::default()).unwrap();
        let score = target.score(&x);
        prop_assert!((dir[0][0] - score[0]).abs() < 1e-12 && (dir[0][1] - score[1]).abs() < 1e-12);
    }

    #[test]
    fn transport_preserves_shape(m in 1usize..12, d in 1usize..4, seed in 0u64..1000, step in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ps = ParticleSet::gaussian(m, d, 1.0, &mut rng);
        let dir = svgd_direction(&ps, &Gaussian::standard(d), &KernelConfig::default()).unwrap();
        let out = transport_step(&ps, &dir, step);
        prop_assert_eq!((out.len(), out.dim()), (m, d));
    }
}
