//! Size distribution of trees drawn from the depth-penalizing split prior.

use qfbart::bart::sample_prior_shape;
use qfbart::rng::{stream, StreamTag};

fn main() {
    let n = 100_000;
    for &(alpha, zeta) in &[(0.95, 2.0), (0.95, 1.0), (0.5, 2.0)] {
        let mut rng = stream(0, StreamTag::Simulate, 0, 0);
        let mut counts = [0usize; 6];
        for _ in 0..n {
            let (leaves, _) = sample_prior_shape(alpha, zeta, &mut rng);
            counts[leaves.min(6) - 1] += 1;
        }
        let shares: Vec<String> = counts.iter().map(|&c| format!("{:.3}", c as f64 / n as f64)).collect();
        println!("alpha={alpha} zeta={zeta}: P(1..5, >=6 leaves) = [{}]", shares.join(", "));
    }
}
