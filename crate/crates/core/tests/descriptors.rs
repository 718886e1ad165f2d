mod suites;

use irb_core::autodiff::{sigmoid, Graph};
use irb_core::irb::{self, local_max_mask, strict_peak_mask, AttentionActivation};
use irb_core::params::ParamSet;
use irb_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use suites::oracles::naive_conv;

#[test]
fn transition_matches_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let x = Tensor::uniform(&[8, 6, 6], -1.0, 1.0, &mut rng);
    let w = Tensor::uniform(&[3, 8, 1, 1], -1.0, 1.0, &mut rng);
    let b = Tensor::uniform(&[3], -1.0, 1.0, &mut rng);
    let want = naive_conv(&x, &w, b.values(), 1, 0);
    let mut set = ParamSet::new();
    set.push("transition.weight", w);
    set.push("transition.bias", b);
    let mut g = Graph::new();
    let p = set.bind(&mut g, false);
    let xi = g.constant(x);
    let x1 = irb::instance_transition(&mut g, xi, &p).unwrap();
    assert_eq!(g.shape(x1.node), &[3, 6, 6]);
    for (a, b) in g.value(x1.node).values().iter().zip(&want) {
        assert!((a - b).abs() < 1e-10);
    }
}

#[test]
fn attention_matches_elementwise_recomputation() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..20 {
        let x1 = Tensor::uniform(&[4, 5, 5], -2.0, 2.0, &mut rng);
        let w = Tensor::uniform(&[1, 4, 1, 1], -1.0, 1.0, &mut rng);
        let b = rng.gen_range(-1.0..1.0);
        let mut g = Graph::new();
        let xi = g.constant(x1.clone());
        let wi = g.constant(w.clone());
        let bi = g.constant(Tensor::new(&[1], vec![b]).unwrap());
        let x2 = irb::spatial_attention(&mut g, xi, wi, bi, AttentionActivation::Sigmoid).unwrap();
        let out = g.value(x2.node);
        for i in 0..5 {
            for j in 0..5 {
                let z: f64 = b + (0..4).map(|c| w.values()[c] * x1.at(&[c, i, j])).sum::<f64>();
                let a = sigmoid(z);
                for c in 0..4 {
                    assert!((out.at(&[c, i, j]) - x1.at(&[c, i, j]) * a).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn descriptors_preserve_shape() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let mut g = Graph::new();
    let x1 = g.constant(Tensor::randn(&[5, 7, 6], 1.0, &mut rng));
    let w = g.constant(Tensor::randn(&[1, 5, 1, 1], 1.0, &mut rng));
    let b = g.constant(Tensor::zeros(&[1]));
    for act in [AttentionActivation::Sigmoid, AttentionActivation::Linear] {
        let x2 = irb::spatial_attention(&mut g, x1, w, b, act).unwrap();
        assert_eq!(g.shape(x2.node), &[5, 7, 6]);
    }
    let x3 = irb::local_max_select(&mut g, x1, 5).unwrap();
    let x4 = irb::cacpr(&mut g, x1, 3, 5).unwrap();
    assert_eq!(g.shape(x3.node), &[5, 7, 6]);
    assert_eq!(g.shape(x4.node), &[5, 7, 6]);
}

#[test]
fn peak_support_is_inside_local_max_support() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    for _ in 0..200 {
        let x = Tensor::randn(&[3, 7, 7], 1.0, &mut rng);
        let mut g = Graph::new();
        let xi = g.constant(x);
        let x3 = irb::local_max_select(&mut g, xi, 3).unwrap().node;
        let x4 = irb::cacpr(&mut g, xi, 3, 5).unwrap().node;
        let (s3, s4) = (g.value(x3).values(), g.value(x4).values());
        for (a, b) in s3.iter().zip(s4) {
            assert!(*b == 0.0 || *a != 0.0);
        }
        let peaks = s4.iter().filter(|v| **v != 0.0).count();
        let maxima = s3.iter().filter(|v| **v != 0.0).count();
        assert!(peaks <= maxima);
    }
}

#[test]
fn masks_are_positively_homogeneous() {
    let mut rng = ChaCha8Rng::seed_from_u64(34);
    for _ in 0..100 {
        let x = Tensor::randn(&[2, 6, 6], 1.0, &mut rng);
        let lambda = rng.gen_range(0.01..100.0);
        let scaled = x.map(|v| v * lambda);
        for w in [3, 5] {
            assert_eq!(local_max_mask(&x, w).unwrap(), local_max_mask(&scaled, w).unwrap());
            assert_eq!(strict_peak_mask(&x, w).unwrap(), strict_peak_mask(&scaled, w).unwrap());
        }
        let mut g = Graph::new();
        let (a, b) = (g.constant(x), g.constant(scaled));
        let x3a = irb::local_max_select(&mut g, a, 3).unwrap().node;
        let x3b = irb::local_max_select(&mut g, b, 3).unwrap().node;
        for (u, v) in g.value(x3a).values().iter().zip(g.value(x3b).values()) {
            assert!((u * lambda - v).abs() <= 1e-12 * v.abs().max(1.0));
        }
    }
}
