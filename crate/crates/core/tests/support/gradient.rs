//! Central-difference check of the training gradient.

use groundwork_core::dcg::{CompiledCorpus, WeightVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Largest norm-wise relative error of the analytic gradient against
/// central differences over `vectors` random weight vectors.
pub fn gradient_error(c: &CompiledCorpus, l2: f64, vectors: usize, seed: u64) -> f64 {
    let h = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 0.5).unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..vectors {
        let w: Vec<f64> = (0..c.dim()).map(|_| normal.sample(&mut rng)).collect();
        let analytic = c.gradient(&WeightVector::new(w.clone()).unwrap(), l2);
        let mut numeric = vec![0.0; c.dim()];
        let mut probe = w.clone();
        for k in 0..c.dim() {
            probe[k] = w[k] + h;
            let up = c.objective(&WeightVector::new(probe.clone()).unwrap(), l2);
            probe[k] = w[k] - h;
            let down = c.objective(&WeightVector::new(probe.clone()).unwrap(), l2);
            probe[k] = w[k];
            numeric[k] = (up - down) / (2.0 * h);
        }
        let diff: f64 = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let scale = norm(&analytic).max(norm(&numeric)).max(1e-12);
        worst = worst.max(diff / scale);
    }
    worst
}
