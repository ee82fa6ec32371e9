//! Shared fixtures for the criterion benchmarks.

use ttjac_core::grid::Grid1D;
use ttjac_core::jac::{Activation, FeatureMapSpec, GeneratorSpec, Scorer};
use ttjac_core::{SampleSet, TTTensor};

/// Random tensor train with `d` modes of size `n` and interior rank `r`.
pub fn random_tt(d: usize, n: usize, r: usize, seed: u64) -> TTTensor {
    let mut ranks = vec![r; d + 1];
    ranks[0] = 1;
    ranks[d] = 1;
    TTTensor::random(&vec![n; d], &ranks, seed).expect("valid shape")
}

/// Tanh MLP generator with a random projection head.
pub fn mlp_scorer(d: usize, seed: u64) -> Scorer {
    let gen =
        GeneratorSpec::random_mlp(d, &[2 * d], 2 * d, Activation::Tanh, seed).expect("valid sizes");
    Scorer::new(
        gen,
        FeatureMapSpec::random_projection(2 * d, d + d / 2, seed + 1),
    )
    .expect("valid scorer")
}

/// Samples whose values come from a random rank-`r` tensor train.
pub fn tt_samples(d: usize, n: usize, r: usize, m: usize, seed: u64) -> (TTTensor, SampleSet) {
    let truth = random_tt(d, n, r, seed);
    let grid = Grid1D::equal_mass(n, 1e-4).expect("valid grid");
    let latents = ttjac_core::jac::draw_latents(m, d, seed + 1);
    let probe = SampleSet::new(latents, vec![0.0; m], grid, "bench").expect("finite latents");
    let values = truth
        .eval_batch(&probe.index_batch())
        .expect("indices in range");
    (truth, probe.with_values(values).expect("finite values"))
}
