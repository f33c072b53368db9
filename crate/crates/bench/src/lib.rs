//! Shared workloads for the criterion benches.

use convabs_core::batch::{adversarial_query, LoadedQuery};
use convabs_core::synth::{labelled_network, CnnShape, BENCH_SHAPE};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Adversarial queries over one seeded network of [`BENCH_SHAPE`], one per
/// radius.
pub fn adversarial_workload(seed: u64, radii: &[f64]) -> Vec<LoadedQuery> {
    workload_with_shape(seed, &BENCH_SHAPE, radii)
}

pub fn workload_with_shape(seed: u64, shape: &CnnShape, radii: &[f64]) -> Vec<LoadedQuery> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (net, ts) = labelled_network(&mut rng, shape, radii.len().max(1), "bench");
    radii
        .iter()
        .enumerate()
        .map(|(i, &eps)| {
            adversarial_query(format!("eps{eps}"), &net, ts.clone(), i, eps, None).expect("sample exists")
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn workload_is_seeded() {
        let a = adversarial_workload(1, &[0.1, 0.2]);
        let b = adversarial_workload(1, &[0.1, 0.2]);
        assert_eq!(a.len(), 2);
        assert_eq!(a[1].query.input_box(), b[1].query.input_box());
    }
}
