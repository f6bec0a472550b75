#![allow(dead_code)]

use hgcn::dataset::{DatasetBundle, Splits};
use hgcn::graph::Graph;
use hgcn::sparse::CsrMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Connected random graph: a random tree plus extra edges, integer weights.
pub fn random_graph(n: usize, extra: f64, rng: &mut ChaCha8Rng) -> Graph {
    let mut edges = Vec::new();
    for v in 1..n {
        edges.push((rng.random_range(0..v), v, rng.random_range(1..=2) as f64));
    }
    for u in 0..n {
        for v in u + 1..n {
            if rng.random_bool(extra) && !edges.iter().any(|&(a, b, _)| (a, b) == (u, v)) {
                edges.push((u, v, 1.0));
            }
        }
    }
    Graph::from_edges(n, &edges).unwrap()
}

/// Small labeled dataset over `graph` with dense positive features and a
/// 50/25/25 split.
pub fn bundle_on(graph: Graph, dim: usize, classes: usize, seed: u64) -> DatasetBundle {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = graph.n();
    let mut triplets = Vec::new();
    for r in 0..n {
        for c in 0..dim {
            triplets.push((r, c, rng.random_range(0.1..1.0)));
        }
    }
    let labels = (0..n).map(|v| Some(v % classes)).collect();
    let train = (0..n).filter(|v| v % 4 < 2).collect();
    let val = (0..n).filter(|v| v % 4 == 2).collect();
    let test = (0..n).filter(|v| v % 4 == 3).collect();
    DatasetBundle {
        name: "toy".into(),
        graph,
        features: CsrMatrix::from_triplets(n, dim, triplets).unwrap(),
        labels,
        num_classes: classes,
        splits: Splits { train, val, test },
    }
}

pub fn toy_bundle(n: usize, seed: u64) -> DatasetBundle {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = random_graph(n, 0.15, &mut rng);
    bundle_on(g, 6, 3, seed)
}
