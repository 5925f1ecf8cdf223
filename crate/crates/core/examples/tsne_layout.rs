//! Runs exact t-SNE on two Gaussian clusters and reports the KL drop.

use etymo::layout::tsne;
use etymo::LayoutConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let noise = Normal::new(0.0, 0.3).unwrap();
    let mut points = Vec::new();
    for (cluster, center) in [(0, 0.0), (1, 4.0)] {
        for i in 0..20 {
            let v = (0..10).map(|_| center + noise.sample(&mut rng)).collect();
            points.push((format!("c{cluster}-{i:02}"), v));
        }
    }
    let config = LayoutConfig { perplexity: 10.0, ..LayoutConfig::default() };
    let run = tsne(&points, &config).unwrap();
    println!("KL {:.4} -> {:.4}", run.initial_kl, run.final_kl);
    for id in ["c0-00", "c0-01", "c1-00", "c1-01"] {
        let p = run.layout.get(id).unwrap();
        println!("{id}  ({:8.3}, {:8.3})", p.x, p.y);
    }
}
