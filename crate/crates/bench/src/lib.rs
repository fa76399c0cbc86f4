//! Seeded fixtures shared by the benchmarks.

use boundnet::eval::{generate_synthetic_net, sample_from_network};
use boundnet::{BayesNet, CategoricalDataset, KTree};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub struct Fixture {
    pub net: BayesNet,
    pub ktree: KTree,
    pub data: CategoricalDataset,
}

/// A random network of treewidth at most `k` over `n` variables and `rows`
/// samples drawn from it.
pub fn fixture(n: usize, k: usize, max_arity: usize, rows: usize, seed: u64) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (net, ktree) = generate_synthetic_net(n, k, max_arity, &mut rng).expect("valid generator arguments");
    let data = sample_from_network(&net, rows, &mut rng).expect("sampling a valid network");
    Fixture { net, ktree, data }
}
