//! Fixtures shared by the benchmarks.

use lps_core::{random_reversible, square, ChainModel, MarkovOperator, VectorField};

/// `T = S²` for a dense random chain on `n` atoms, with a random field of dimension `d`.
pub fn fixture(n: usize, d: usize, seed: u64) -> (MarkovOperator, VectorField) {
    let t = square(&random_reversible(n, seed, ChainModel::Dense).expect("n ≥ 1").operator);
    let f = VectorField::random(t.space().clone(), d, seed);
    (t, f)
}
