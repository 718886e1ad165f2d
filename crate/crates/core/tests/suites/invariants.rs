//! Distribution and loss invariants over random inputs.

use irb_core::autodiff::Graph;
use irb_core::fusion;
use irb_core::irb::build_bank;
use irb_core::irb::RepresentationBank;
use irb_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct DistributionReport {
    /// Largest `|sum - 1|` over every Y and Y_d.
    pub max_sum_error: f64,
    /// Whether every entry was inside [0, 1]. Entries reach exactly 0 once
    /// logit gaps exceed the f64 exponent range.
    pub unit_interval: bool,
    /// Smallest and largest observed L_sealig.
    pub sealig_range: (f64, f64),
}

fn random_bank(g: &mut Graph, rng: &mut ChaCha8Rng) -> RepresentationBank {
    let n = rng.gen_range(2..=6);
    let hw = rng.gen_range(1..=6);
    let scale = [0.1, 1.0, 10.0][rng.gen_range(0..3)];
    let ids: Vec<_> = (0..4)
        .map(|_| g.constant(Tensor::uniform(&[n, hw, hw], -scale, scale, rng)))
        .collect();
    build_bank(g, ids[0], ids[1], ids[2], ids[3]).unwrap()
}

/// Y and Y_d on 1000 random banks.
pub fn distributions() -> DistributionReport {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut report = DistributionReport {
        max_sum_error: 0.0,
        unit_interval: true,
        sealig_range: (f64::INFINITY, f64::NEG_INFINITY),
    };
    for _ in 0..1000 {
        let mut g = Graph::new();
        let bank = random_bank(&mut g, &mut rng);
        let fused = fusion::aggregate_bank(&mut g, &bank).unwrap().node;
        let y = fusion::bag_distribution(&mut g, fused).unwrap();
        let diff = fusion::difference_map(&mut g, &bank).unwrap().node;
        let y_d = fusion::alignment_distribution(&mut g, diff).unwrap();
        let l = fusion::alignment_loss(&mut g, y_d).unwrap();
        for d in [y, y_d] {
            let v = g.value(d).values();
            report.max_sum_error = report.max_sum_error.max((v.iter().sum::<f64>() - 1.0).abs());
            report.unit_interval &= v.iter().all(|&p| (0.0..=1.0).contains(&p));
        }
        let l = g.value(l).item();
        report.sealig_range.0 = report.sealig_range.0.min(l);
        report.sealig_range.1 = report.sealig_range.1.max(l);
    }
    report
}

/// L_sealig of the uniform two-way distribution.
pub fn sealig_uniform_pair() -> f64 {
    let mut g = Graph::new();
    let y = g.constant(Tensor::new(&[2], vec![0.5, 0.5]).unwrap());
    let l = fusion::alignment_loss(&mut g, y).unwrap();
    g.value(l).item()
}
