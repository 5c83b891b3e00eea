//! Benchmark fixtures: seeded datasets and Gram matrices at reference sizes.

use dsgee_core::gee::{correlation_matrix, ClusterWeights, WorkingCovariance};
use dsgee_core::lp::LpProblem;
use dsgee_core::selector::{build_gram, GramMatrix};
use dsgee_core::simulate::{replicate_data, SimDesign, Simulator};
use dsgee_core::{ClusteredDataset, CorrelationKind, Matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Replicate 0 of the continuous reference design with `p` columns.
pub fn continuous(p: usize) -> ClusteredDataset {
    let design = SimDesign::continuous(100, p, 3, 2024);
    replicate_data(&Simulator::new(&design).unwrap(), design.seed, 0).unwrap()
}

/// Replicate 0 of the binary reference design with `p` columns.
pub fn binary(p: usize) -> ClusteredDataset {
    let design = SimDesign::binary(100, p, 3, 2024);
    replicate_data(&Simulator::new(&design).unwrap(), design.seed, 0).unwrap()
}

/// AR(0.3)-weighted Gram of `data`.
pub fn ar1_gram(data: &ClusteredDataset) -> GramMatrix {
    let v = correlation_matrix(CorrelationKind::Ar1, 0.3, data.k()).unwrap();
    let wc = WorkingCovariance::fixed(v).unwrap();
    build_gram(data, &ClusterWeights::linear(&wc)).unwrap()
}

/// Feasible, bounded standard-form LP with `m` rows and `n` columns.
pub fn random_lp(m: usize, n: usize, seed: u64) -> LpProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = Matrix::zeros(m, n);
    for j in 0..n {
        a[(0, j)] = rng.gen_range(0.5..2.0);
    }
    for i in 1..m {
        for j in 0..n {
            a[(i, j)] = rng.gen_range(-2.0..2.0);
        }
    }
    let x0: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
    let b = a.matvec(&x0);
    let c = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    LpProblem::new(c, a, b).unwrap()
}
