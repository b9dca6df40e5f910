use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use svnr::diffgraph::{bind, logsumexp, Activation, Graph, MlpSpec, NodeId, Tensor};

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Graph applying a single primitive to input `x` (and parameter `y` for
/// binary primitives).
fn primitive(kind: usize, rng: &mut ChaCha8Rng) -> (Graph, Tensor) {
    let mut g = Graph::new();
    let x = g.input("x").unwrap();
    let binary = |g: &mut Graph, rng: &mut ChaCha8Rng| -> NodeId { g.param("y", random_tensor(rng, &[2, 3], -1.0, 1.0)).unwrap() };
    let out = match kind {
        0 => {
            let w = g.param("w", random_tensor(rng, &[4, 3], -1.0, 1.0)).unwrap();
            let b = g.param("b", random_tensor(rng, &[4], -1.0, 1.0)).unwrap();
            g.affine(x, w, b)
        }
        1 => g.tanh(x),
        2 => g.relu(x),
        3 => g.exp(x),
        4 => {
            // keep the argument of log away from zero
            let e = g.exp(x);
            g.log(e)
        }
        5 => g.sum(x),
        6 => {
            let y = binary(&mut g, rng);
            g.sqdist(x, y)
        }
        7 => g.logsumexp(x),
        8 => g.scale(x, -1.7),
        9 => {
            let y = binary(&mut g, rng);
            g.add(x, y)
        }
        _ => {
            let y = binary(&mut g, rng);
            g.mul(x, y)
        }
    };
    g.set_output(out);
    let mut input = random_tensor(rng, &[2, 3], -2.0, 2.0);
    if kind == 2 {
        // relu has a kink at zero; keep finite differences on one side
        for v in input.data_mut() {
            if v.abs() < 0.05 {
                *v += 0.1;
            }
        }
    }
    (g, input)
}

#[test]
fn every_primitive_matches_finite_differences_on_100_seeds() {
    for kind in 0..11 {
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (mut g, x) = primitive(kind, &mut rng);
            let err = g.check_gradient(&bind("x", x), 1e-5).unwrap();
            assert!(err < 1e-4, "primitive {kind} seed {seed}: {err}");
        }
    }
}

#[test]
fn random_two_layer_network_parameters_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let spec = MlpSpec::new(vec![3, 6, 2], Activation::Tanh, Activation::Linear);
    let mut g = Graph::mlp(&spec, &mut rng).unwrap();
    let x = random_tensor(&mut rng, &[4, 3], -1.0, 1.0);
    assert!(g.check_gradient(&bind("x", x), 1e-5).unwrap() < 1e-4);
}

proptest! {
    #[test]
    fn forward_is_pure(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = MlpSpec::default_hidden(3, 2, 8);
        let mut g = Graph::mlp(&spec, &mut rng).unwrap();
        let x = random_tensor(&mut rng, &[5, 3], -3.0, 3.0);
        let a = g.forward_x(x.clone()).unwrap();
        let b = g.forward_x(x).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn logsumexp_exceeds_max_by_at_most_log_n(xs in prop::collection::vec(-500.0f64..500.0, 1..20)) {
        let top = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let gap = logsumexp(&xs) - top;
        prop_assert!(gap >= 0.0);
        prop_assert!(gap <= (xs.len() as f64).ln() + 1e-12);
    }
}
