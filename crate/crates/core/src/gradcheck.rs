//! Whole-model finite-difference gradient check on a small random instance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::Tape;
use crate::dataset::{DatasetBundle, Splits};
use crate::error::Result;
use crate::graph::Graph;
use crate::model::{hierarchy_for, init_model, prepare_features, HgcnConfig, ModelState};
use crate::sparse::CsrMatrix;

#[derive(Clone, Debug)]
pub struct GradcheckConfig {
    pub seed: u64,
    pub max_nodes: usize,
    pub use_node_weight_embedding: bool,
    pub step: f64,
    pub l2: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            seed: 0,
            max_nodes: 12,
            use_node_weight_embedding: true,
            step: 1e-5,
            l2: 1e-2,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GradcheckReport {
    pub nodes: usize,
    pub scalars: usize,
    pub max_rel_error: f64,
    pub worst_param: String,
}

/// Relative error between an analytic and a numeric derivative. The floor
/// keeps derivatives that are zero up to rounding from dominating.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-7)
}

/// Random connected graph with integer edge weights, dense random features,
/// three classes and every node in the train split.
pub fn random_instance(seed: u64, max_nodes: usize) -> Result<DatasetBundle> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(max_nodes.clamp(2, 8)..=max_nodes.max(2));
    let mut edges = Vec::new();
    for v in 1..n {
        let u = rng.random_range(0..v);
        edges.push((u, v, rng.random_range(1..=3) as f64));
    }
    for u in 0..n {
        for v in u + 2..n {
            if rng.random_bool(0.2) && !edges.iter().any(|&(a, b, _)| (a, b) == (u, v)) {
                edges.push((u, v, rng.random_range(1..=3) as f64));
            }
        }
    }
    let graph = Graph::from_edges(n, &edges)?;
    let dim = 5;
    let features = CsrMatrix::from_triplets(
        n,
        dim,
        (0..n)
            .flat_map(|r| (0..dim).map(move |c| (r, c)))
            .map(|(r, c)| (r, c, rng.random_range(0.1..1.0)))
            .collect::<Vec<_>>(),
    )?;
    let num_classes = 3;
    let labels = (0..n).map(|v| Some(v % num_classes)).collect();
    let bundle = DatasetBundle {
        name: "gradcheck".into(),
        graph,
        features,
        labels,
        num_classes,
        splits: Splits {
            train: (0..n).collect(),
            val: vec![],
            test: vec![],
        },
    };
    bundle.validate()?;
    Ok(bundle)
}

/// Model used by the check: five layers, two channels, embedding width four,
/// dropout disabled.
pub fn gradcheck_config(use_node_weight_embedding: bool) -> HgcnConfig {
    HgcnConfig {
        layers: 5,
        channels: 2,
        hidden: 6,
        nwe_dim: 4,
        nwe_buckets: 8,
        dropout: 0.0,
        use_node_weight_embedding,
        ..HgcnConfig::default()
    }
}

fn loss(ms: &ModelState, bundle: &DatasetBundle, features: &CsrMatrix, l2: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let pass = ms.forward(&mut tape, features, None)?;
    let ce = tape.masked_softmax_cross_entropy(pass.logits, &bundle.labels, &bundle.splits.train)?;
    let penalty = tape.l2_penalty(&pass.regularized, l2)?;
    let total = tape.add(ce, penalty)?;
    Ok(tape.value(total).item())
}

/// Compares reverse-mode gradients of cross-entropy plus l2 against central
/// differences for every scalar parameter.
pub fn run_gradcheck(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let bundle = random_instance(cfg.seed, cfg.max_nodes)?;
    let hc = gradcheck_config(cfg.use_node_weight_embedding);
    let hierarchy = hierarchy_for(&hc, &bundle.graph);
    let mut ms = init_model(&hc, &bundle, hierarchy, cfg.seed.wrapping_add(1))?;
    let features = prepare_features(&hc, &bundle.features);

    let mut tape = Tape::new();
    let pass = ms.forward(&mut tape, &features, None)?;
    let ce = tape.masked_softmax_cross_entropy(pass.logits, &bundle.labels, &bundle.splits.train)?;
    let penalty = tape.l2_penalty(&pass.regularized, cfg.l2)?;
    let total = tape.add(ce, penalty)?;
    ms.params.zero_grad();
    tape.backward_into(total, &mut ms.params)?;
    drop(tape);

    let mut worst = (0.0f64, String::new());
    let ids: Vec<_> = ms.params.ids().collect();
    for id in ids {
        let analytic = ms.params.grad(id).clone();
        for i in 0..analytic.as_slice().len() {
            let orig = ms.params.value(id).as_slice()[i];
            ms.params.get_mut(id).value.as_mut_slice()[i] = orig + cfg.step;
            let up = loss(&ms, &bundle, &features, cfg.l2)?;
            ms.params.get_mut(id).value.as_mut_slice()[i] = orig - cfg.step;
            let down = loss(&ms, &bundle, &features, cfg.l2)?;
            ms.params.get_mut(id).value.as_mut_slice()[i] = orig;
            let numeric = (up - down) / (2.0 * cfg.step);
            let err = relative_error(analytic.as_slice()[i], numeric);
            if err > worst.0 || worst.1.is_empty() {
                worst = (err, format!("{}[{i}]", ms.params.get(id).name));
            }
        }
    }
    Ok(GradcheckReport {
        nodes: bundle.graph.n(),
        scalars: ms.params.num_scalars(),
        max_rel_error: worst.0,
        worst_param: worst.1,
    })
}
