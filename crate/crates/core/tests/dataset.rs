mod common;

use std::path::PathBuf;

use hgcn::coarsen::coarsen_dataset;
use hgcn::dataset::{load_dataset, save_dataset};

#[test]
fn save_then_load_is_the_identity() {
    for seed in 0..3 {
        let mut bundle = common::toy_bundle(25, seed);
        bundle.labels[24] = None;
        bundle.splits.train.retain(|&v| v != 24);
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&bundle, dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back, bundle);
        assert_eq!(back.fingerprint(), bundle.fingerprint());
    }
}

#[test]
fn coarse_levels_round_trip_with_node_weights() {
    let bundle = common::toy_bundle(30, 4);
    let (coarse, m) = coarsen_dataset(&bundle).unwrap();
    assert_eq!(coarse.graph.n(), m.n_coarse());
    assert!(coarse.graph.node_weights().iter().any(|&w| w > 1));
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&coarse, dir.path()).unwrap();
    assert_eq!(load_dataset(dir.path()).unwrap(), coarse);
}

fn data_dir(name: &str) -> Option<PathBuf> {
    let root = std::env::var_os("HGCN_DATA")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data"));
    let dir = root.join(name);
    dir.is_dir().then_some(dir)
}

#[test]
fn citation_graphs_have_the_standard_shapes() {
    for (name, n, classes, dim) in [
        ("cora", 2708, 7, 1433),
        ("citeseer", 3327, 6, 3703),
        ("pubmed", 19717, 3, 500),
    ] {
        let Some(dir) = data_dir(name) else {
            eprintln!("skipping {name}: no data directory");
            continue;
        };
        let b = load_dataset(dir).unwrap();
        assert_eq!((b.graph.n(), b.num_classes, b.features.cols()), (n, classes, dim), "{name}");
        assert_eq!(b.splits.train.len(), 20 * classes, "{name}");
        assert_eq!(b.splits.val.len(), 500, "{name}");
        assert_eq!(b.splits.test.len(), 1000, "{name}");
    }
}
