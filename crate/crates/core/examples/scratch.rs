use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use zimed_core::fiducial::hdi;

fn main() {
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal: Vec<f64> = (0..10_000)
            .map(|_| {
                let v: f64 = StandardNormal.sample(&mut rng);
                v
            })
            .collect();
        let (lo, hi) = hdi(&normal, 0.05);
        eprintln!(
            "seed {seed:2}: lo {lo:+.4} hi {hi:+.4}  err ({:+.4}, {:+.4})",
            lo + 1.96,
            hi - 1.96
        );
    }
}
