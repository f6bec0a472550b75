//! The hierarchical GCN: coarsening layers, symmetric refining layers with
//! shortcut connections, node-weight embeddings and multi-channel GCN blocks.
//!
//! With `k = (layers - 1) / 2` coarsening steps the forward pass is
//!
//! ```text
//! F_1 = X
//! for i in 1..=k:      G_i = block(Â_i, [F_i | S_i]);  F_{i+1} = M_iᵀ G_i
//! for j in 1..=k:      c = k - j + 1
//!                      G = block(Â_{c+1}, [F | S_{c+1}]);  F = M_c G + G_c
//! logits = ReLU(Â_1 · dropout(F) · θ_out)
//! ```
//!
//! where `S_i` holds the embedding rows looked up by node weight and each
//! block is a weighted sum of per-channel `ReLU(Â Z θ^j)` over the dropped-out
//! input `Z`. The channel weights of a layer are stored side by side as one
//! matrix `Θ = [θ^1 | … | θ^c]`, so a block costs one sparse product and one
//! GEMM: `(Â Z) Θ`.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{dropout_sparse, ParamId, ParamStore, Tape, Var};
use crate::coarsen::{build_hierarchy, GroupingMatrix, Hierarchy};
use crate::dataset::DatasetBundle;
use crate::error::{Error, Result};
use crate::graph::{normalized_adjacency, Graph};
use crate::matrix::Matrix;
use crate::sparse::CsrMatrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HgcnConfig {
    /// Total layer count `l`: coarsening + refining + output. Odd, at least 3.
    pub layers: usize,
    pub channels: usize,
    pub hidden: usize,
    pub nwe_dim: usize,
    /// Rows of the node-weight embedding table; larger weights share the last row.
    pub nwe_buckets: usize,
    /// Drop probability applied to the input of every GCN block.
    pub dropout: f64,
    pub use_coarsening: bool,
    pub use_node_weight_embedding: bool,
    /// Apply ReLU to the output-layer logits before the softmax.
    pub output_relu: bool,
    /// Scale every feature row to unit sum before the first layer.
    pub normalize_features: bool,
}

impl Default for HgcnConfig {
    fn default() -> Self {
        HgcnConfig {
            layers: 9,
            channels: 4,
            hidden: 64,
            nwe_dim: 16,
            nwe_buckets: 64,
            dropout: 0.85,
            use_coarsening: true,
            use_node_weight_embedding: true,
            output_relu: true,
            normalize_features: true,
        }
    }
}

impl HgcnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers < 3 || self.layers.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "layer count must be odd and at least 3, got {}",
                self.layers
            )));
        }
        if self.channels == 0 || self.hidden == 0 {
            return Err(Error::Config("channels and hidden width must be positive".into()));
        }
        if self.use_node_weight_embedding && (self.nwe_dim == 0 || self.nwe_buckets == 0) {
            return Err(Error::Config(
                "node-weight embedding needs a positive dimension and bucket count".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }

    /// Number of coarsening (and of refining) layers.
    pub fn coarsening_levels(&self) -> usize {
        (self.layers - 1) / 2
    }

    fn embed_width(&self) -> usize {
        if self.use_node_weight_embedding {
            self.nwe_dim
        } else {
            0
        }
    }
}

/// Hierarchy the model expects for `g`: real coarsening, or identity steps when
/// coarsening is ablated.
pub fn hierarchy_for(cfg: &HgcnConfig, g: &Graph) -> Hierarchy {
    let k = cfg.coarsening_levels();
    if cfg.use_coarsening {
        build_hierarchy(g, k)
    } else {
        Hierarchy::flat(g, k)
    }
}

/// Features as consumed by the first layer.
pub fn prepare_features(cfg: &HgcnConfig, x: &CsrMatrix) -> CsrMatrix {
    if cfg.normalize_features {
        x.row_normalized()
    } else {
        x.clone()
    }
}

/// Weights of one GCN block: `theta` is `fan_in x (channels * hidden)`,
/// `channel_weights` is `1 x channels`.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub theta: ParamId,
    pub channel_weights: ParamId,
}

#[derive(Clone, Debug)]
pub struct ModelState {
    pub config: HgcnConfig,
    pub params: ParamStore,
    /// `k` coarsening layers followed by `k` refining layers.
    pub layers: Vec<LayerParams>,
    pub output: ParamId,
    pub embedding: Option<ParamId>,
    pub hierarchy: Hierarchy,
    pub num_classes: usize,
    pub input_dim: usize,
    adjacency: Vec<Arc<CsrMatrix>>,
    groupings: Vec<Arc<GroupingMatrix>>,
    weight_rows: Vec<Arc<Vec<usize>>>,
}

/// Values a forward pass leaves on the tape.
pub struct ForwardPass {
    /// `n_1 x num_classes`, after the optional output ReLU.
    pub logits: Var,
    /// Tape snapshots of every regularized parameter (GCN weights and the embedding table).
    pub regularized: Vec<Var>,
}

fn glorot(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-limit..limit))
        .collect();
    Matrix::from_vec(rows, cols, data).expect("length matches shape")
}

/// `channels` independent Glorot draws of shape `rows x cols`, laid side by side.
fn glorot_channels(rows: usize, cols: usize, channels: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let mut out = Matrix::zeros(rows, cols * channels);
    for j in 0..channels {
        let block = glorot(rows, cols, rng);
        for r in 0..rows {
            out.row_mut(r)[j * cols..(j + 1) * cols].copy_from_slice(block.row(r));
        }
    }
    out
}

/// Embedding row used for a node of weight `w`: weight 1 maps to row 0 and
/// weights beyond the table share its last row.
pub fn weight_bucket(w: u64, buckets: usize) -> usize {
    (w.max(1) as usize).min(buckets) - 1
}

/// Builds a freshly initialized model for `bundle` over a precomputed hierarchy.
pub fn init_model(
    cfg: &HgcnConfig,
    bundle: &DatasetBundle,
    hierarchy: Hierarchy,
    seed: u64,
) -> Result<ModelState> {
    cfg.validate()?;
    let k = cfg.coarsening_levels();
    if hierarchy.depth() != k {
        return Err(Error::Config(format!(
            "{} layers need {k} coarsening levels, hierarchy has {}",
            cfg.layers,
            hierarchy.depth()
        )));
    }
    if hierarchy.levels[0].n() != bundle.graph.n() {
        return Err(Error::Config(format!(
            "hierarchy is over {} nodes, dataset has {}",
            hierarchy.levels[0].n(),
            bundle.graph.n()
        )));
    }
    if !cfg.use_coarsening && !hierarchy.groupings.iter().all(GroupingMatrix::is_identity) {
        return Err(Error::Config(
            "coarsening is disabled but the hierarchy is not flat".into(),
        ));
    }
    if bundle.num_classes == 0 {
        return Err(Error::Config("dataset has no label classes".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamStore::new();
    let p = cfg.embed_width();
    let input_dim = bundle.features.cols();
    let mut layers = Vec::with_capacity(2 * k);
    for layer in 0..2 * k {
        let fan_in = if layer == 0 { input_dim + p } else { cfg.hidden + p };
        let theta = params.add(
            format!("layer{layer}.theta"),
            glorot_channels(fan_in, cfg.hidden, cfg.channels, &mut rng),
        );
        let channel_weights = params.add(
            format!("layer{layer}.channel_weights"),
            Matrix::filled(1, cfg.channels, 1.0 / cfg.channels as f64),
        );
        layers.push(LayerParams {
            theta,
            channel_weights,
        });
    }
    let output = params.add(
        "output.theta",
        glorot(cfg.hidden, bundle.num_classes, &mut rng),
    );
    let embedding = cfg.use_node_weight_embedding.then(|| {
        let data = (0..cfg.nwe_buckets * cfg.nwe_dim)
            .map(|_| rng.random_range(-0.1..0.1))
            .collect();
        params.add(
            "embedding",
            Matrix::from_vec(cfg.nwe_buckets, cfg.nwe_dim, data).expect("length matches shape"),
        )
    });

    let adjacency = hierarchy
        .levels
        .iter()
        .map(|g| Arc::new(normalized_adjacency(g)))
        .collect();
    let groupings = hierarchy.groupings.iter().cloned().map(Arc::new).collect();
    let weight_rows = hierarchy
        .levels
        .iter()
        .map(|g| {
            Arc::new(
                g.node_weights()
                    .iter()
                    .map(|&w| weight_bucket(w, cfg.nwe_buckets.max(1)))
                    .collect(),
            )
        })
        .collect();

    Ok(ModelState {
        config: cfg.clone(),
        params,
        layers,
        output,
        embedding,
        hierarchy,
        num_classes: bundle.num_classes,
        input_dim,
        adjacency,
        groupings,
        weight_rows,
    })
}

/// Dropout settings for a forward pass; `None` means inference.
pub type DropoutRng<'a> = Option<&'a mut ChaCha8Rng>;

/// One multi-channel GCN block over a dense input:
/// `Σ_j w_j ReLU(Â · dropout(Z) · θ^j)`, computed as `(Â Z) Θ` followed by
/// [`Tape::channel_mix`].
#[allow(clippy::too_many_arguments)]
pub fn gcn_block(
    tape: &mut Tape,
    adjacency: &Arc<CsrMatrix>,
    input: Var,
    theta: Var,
    channel_weights: Var,
    dropout: f64,
    rng: &mut ChaCha8Rng,
    training: bool,
) -> Result<Var> {
    if adjacency.rows() != tape.shape(input).0 {
        return Err(Error::Config(format!(
            "block input has {} rows for a {}-node graph",
            tape.shape(input).0,
            adjacency.rows()
        )));
    }
    if tape.shape(theta).0 != tape.shape(input).1 {
        return Err(Error::Config(format!(
            "input width {} does not match weight {:?}",
            tape.shape(input).1,
            tape.shape(theta)
        )));
    }
    let z = tape.dropout(input, dropout, rng, training)?;
    let az = tape.spmm(adjacency.clone(), z)?;
    let h = tape.matmul(az, theta)?;
    tape.channel_mix(h, channel_weights)
}

impl ModelState {
    pub fn adjacency(&self, level: usize) -> &Arc<CsrMatrix> {
        &self.adjacency[level]
    }

    /// Parameters covered by the l2 penalty: all GCN weights and the embedding table.
    pub fn regularized_params(&self) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = self.layers.iter().map(|l| l.theta).collect();
        ids.push(self.output);
        ids.extend(self.embedding);
        ids
    }

    /// Embedding rows `S` for a hierarchy level.
    pub fn embed_node_weights(&self, tape: &mut Tape, table: Var, level: usize) -> Result<Var> {
        tape.gather_rows(table, self.weight_rows[level].clone())
    }

    /// Records a full forward pass. `dropout_rng` enables training-mode dropout.
    pub fn forward(&self, tape: &mut Tape, features: &CsrMatrix, mut dropout_rng: DropoutRng) -> Result<ForwardPass> {
        let cfg = &self.config;
        let n = self.hierarchy.levels[0].n();
        if features.rows() != n || features.cols() != self.input_dim {
            return Err(Error::Config(format!(
                "features {:?} do not match the model's {}x{} input",
                features.shape(),
                n,
                self.input_dim
            )));
        }
        let training = dropout_rng.is_some();
        let mut scratch = ChaCha8Rng::seed_from_u64(0);
        let k = cfg.coarsening_levels();

        let mut regularized = Vec::new();
        let layer_vars: Vec<(Var, Var)> = self
            .layers
            .iter()
            .map(|l| {
                let t = tape.param(&self.params, l.theta);
                let w = tape.param(&self.params, l.channel_weights);
                regularized.push(t);
                (t, w)
            })
            .collect();
        let output = tape.param(&self.params, self.output);
        regularized.push(output);
        let table = self.embedding.map(|id| tape.param(&self.params, id));
        regularized.extend(table);

        // Coarsening layers.
        let mut shortcuts = Vec::with_capacity(k);
        let mut current: Option<Var> = None;
        for (level, &(theta, weights)) in layer_vars[..k].iter().enumerate() {
            let s = table
                .map(|t| self.embed_node_weights(tape, t, level))
                .transpose()?;
            let rng = dropout_rng.as_deref_mut().unwrap_or(&mut scratch);
            let g = match current {
                None => self.first_block(tape, features, s, theta, weights, rng, training)?,
                Some(f) => {
                    let z = match s {
                        Some(s) => tape.concat_cols(f, s)?,
                        None => f,
                    };
                    gcn_block(tape, &self.adjacency[level], z, theta, weights, cfg.dropout, rng, training)?
                }
            };
            shortcuts.push(g);
            current = Some(tape.pool_rows(g, self.groupings[level].clone())?);
        }

        // Refining layers, each paired with the coarsening level it undoes.
        let mut f = current.expect("at least one coarsening layer");
        for (j, &(theta, weights)) in layer_vars[k..].iter().enumerate() {
            let c = k - 1 - j;
            let level = c + 1;
            let z = match table {
                Some(t) => {
                    let s = self.embed_node_weights(tape, t, level)?;
                    tape.concat_cols(f, s)?
                }
                None => f,
            };
            let rng = dropout_rng.as_deref_mut().unwrap_or(&mut scratch);
            let g = gcn_block(tape, &self.adjacency[level], z, theta, weights, cfg.dropout, rng, training)?;
            let up = tape.expand_rows(g, self.groupings[c].clone())?;
            f = tape.add(up, shortcuts[c])?;
        }

        // Output layer on the original graph.
        let rng = dropout_rng.unwrap_or(&mut scratch);
        let z = tape.dropout(f, cfg.dropout, rng, training)?;
        let h = tape.matmul(z, output)?;
        let mut logits = tape.spmm(self.adjacency[0].clone(), h)?;
        if cfg.output_relu {
            logits = tape.relu(logits);
        }
        Ok(ForwardPass {
            logits,
            regularized,
        })
    }

    /// First coarsening block, whose raw-feature input stays sparse:
    /// `Â ([X | S] Θ) = Â (X Θ[..d_1] + S Θ[d_1..])`.
    #[allow(clippy::too_many_arguments)]
    fn first_block(
        &self,
        tape: &mut Tape,
        features: &CsrMatrix,
        embedded: Option<Var>,
        theta: Var,
        weights: Var,
        rng: &mut ChaCha8Rng,
        training: bool,
    ) -> Result<Var> {
        let rate = self.config.dropout;
        let d1 = features.cols();
        let x = Arc::new(if training {
            dropout_sparse(features, rate, rng)?
        } else {
            features.clone()
        });
        let s = embedded
            .map(|s| tape.dropout(s, rate, rng, training))
            .transpose()?;
        let width = d1 + s.map_or(0, |s| tape.shape(s).1);
        let rows = tape.shape(theta).0;
        if rows != width {
            return Err(Error::Config(format!(
                "first-layer input width {width} does not match weight with {rows} rows"
            )));
        }
        let top = tape.slice_rows(theta, 0..d1)?;
        let mut h = tape.spmm(x, top)?;
        if let Some(s) = s {
            let bottom = tape.slice_rows(theta, d1..rows)?;
            let hs = tape.matmul(s, bottom)?;
            h = tape.add(h, hs)?;
        }
        let h = tape.spmm(self.adjacency[0].clone(), h)?;
        tape.channel_mix(h, weights)
    }

    /// Inference-mode logits.
    pub fn logits(&self, features: &CsrMatrix) -> Result<Matrix> {
        let mut tape = Tape::new();
        let pass = self.forward(&mut tape, features, None)?;
        Ok(tape.value(pass.logits).clone())
    }

    /// Inference-mode class probabilities (row softmax of the logits).
    pub fn predict_proba(&self, features: &CsrMatrix) -> Result<Matrix> {
        Ok(self.logits(features)?.softmax_rows())
    }

    /// Snapshot of all parameter values.
    pub fn parameter_values(&self) -> Vec<Matrix> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    pub fn set_parameter_values(&mut self, values: &[Matrix]) {
        for (id, v) in self.params.ids().zip(values) {
            self.params.get_mut(id).value.clone_from(v);
        }
    }

    pub fn to_saved(&self, fingerprint: String) -> SavedModel {
        SavedModel {
            config: self.config.clone(),
            num_classes: self.num_classes,
            input_dim: self.input_dim,
            fingerprint,
            params: self
                .params
                .iter()
                .map(|p| SavedParam {
                    name: p.name.clone(),
                    rows: p.value.rows(),
                    cols: p.value.cols(),
                    data: p.value.as_slice().to_vec(),
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SavedParam {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    /// Row-major values.
    pub data: Vec<f64>,
}

/// On-disk model: configuration, every parameter matrix and the fingerprint of
/// the dataset it was trained on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SavedModel {
    pub config: HgcnConfig,
    pub num_classes: usize,
    pub input_dim: usize,
    pub fingerprint: String,
    pub params: Vec<SavedParam>,
}

impl SavedModel {
    /// Rebuilds the model for `bundle`, recomputing the hierarchy.
    pub fn restore(&self, bundle: &DatasetBundle) -> Result<ModelState> {
        let found = bundle.fingerprint();
        if found != self.fingerprint {
            return Err(Error::Fingerprint {
                expected: self.fingerprint.clone(),
                found,
            });
        }
        let hierarchy = hierarchy_for(&self.config, &bundle.graph);
        let mut ms = init_model(&self.config, bundle, hierarchy, 0)?;
        if ms.params.len() != self.params.len() {
            return Err(Error::Config(format!(
                "saved model has {} parameters, configuration implies {}",
                self.params.len(),
                ms.params.len()
            )));
        }
        for (id, saved) in ms.params.ids().collect::<Vec<_>>().into_iter().zip(&self.params) {
            let p = ms.params.get_mut(id);
            if p.name != saved.name || p.value.shape() != (saved.rows, saved.cols) {
                return Err(Error::Config(format!(
                    "saved parameter {} {}x{} does not match expected {} {:?}",
                    saved.name,
                    saved.rows,
                    saved.cols,
                    p.name,
                    p.value.shape()
                )));
            }
            p.value = Matrix::from_vec(saved.rows, saved.cols, saved.data.clone())?;
        }
        Ok(ms)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Splits;

    fn bundle(graph: Graph, features: Matrix, classes: usize) -> DatasetBundle {
        let n = graph.n();
        DatasetBundle {
            name: "t".into(),
            graph,
            features: CsrMatrix::from_dense(&features),
            labels: (0..n).map(|v| Some(v % classes)).collect(),
            num_classes: classes,
            splits: Splits {
                train: (0..n).collect(),
                ..Default::default()
            },
        }
    }

    fn small_cfg() -> HgcnConfig {
        HgcnConfig {
            layers: 5,
            channels: 2,
            hidden: 3,
            nwe_dim: 2,
            nwe_buckets: 4,
            dropout: 0.5,
            ..Default::default()
        }
    }

    #[test]
    fn config_validation() {
        assert!(HgcnConfig::default().validate().is_ok());
        for layers in [1, 4] {
            let cfg = HgcnConfig { layers, ..Default::default() };
            assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        }
        let cfg = HgcnConfig { nwe_dim: 0, ..Default::default() };
        assert!(cfg.validate().is_err());
        let cfg = HgcnConfig { nwe_dim: 0, use_node_weight_embedding: false, ..Default::default() };
        assert!(cfg.validate().is_ok());
        assert_eq!(HgcnConfig::default().coarsening_levels(), 4);
    }

    #[test]
    fn weight_buckets_are_one_based_and_clamped() {
        assert_eq!(weight_bucket(1, 64), 0);
        assert_eq!(weight_bucket(3, 64), 2);
        assert_eq!(weight_bucket(69, 64), 63);
    }

    #[test]
    fn init_layout_and_determinism() {
        let g = Graph::from_edges(4, &[(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0)]).unwrap();
        let b = bundle(g, Matrix::identity(4), 2);
        let cfg = small_cfg();
        let h = hierarchy_for(&cfg, &b.graph);
        let a = init_model(&cfg, &b, h.clone(), 3).unwrap();
        assert_eq!(a.layers.len(), 4);
        assert_eq!(a.params.value(a.layers[0].theta).shape(), (4 + 2, 2 * 3));
        assert_eq!(a.params.value(a.layers[1].theta).shape(), (3 + 2, 2 * 3));
        assert_eq!(a.params.value(a.output).shape(), (3, 2));
        assert_eq!(a.params.value(a.layers[2].channel_weights).as_slice(), &[0.5, 0.5]);
        assert_eq!(a.params.get(a.layers[2].theta).name, "layer2.theta");
        let again = init_model(&cfg, &b, h.clone(), 3).unwrap();
        assert_eq!(a.parameter_values(), again.parameter_values());
        let other = init_model(&cfg, &b, h, 4).unwrap();
        assert_ne!(a.parameter_values(), other.parameter_values());

        let single = HgcnConfig { channels: 1, ..small_cfg() };
        let h = hierarchy_for(&single, &b.graph);
        let m = init_model(&single, &b, h, 0).unwrap();
        assert_eq!(m.params.value(m.layers[0].channel_weights).as_slice(), &[1.0]);
    }

    #[test]
    fn init_rejects_mismatched_hierarchy() {
        let g = Graph::from_edges(3, &[(0, 1, 1.0)]).unwrap();
        let b = bundle(g.clone(), Matrix::identity(3), 2);
        let cfg = small_cfg();
        let shallow = build_hierarchy(&g, 1);
        assert!(matches!(init_model(&cfg, &b, shallow, 0), Err(Error::Config(_))));
        let flat_cfg = HgcnConfig { use_coarsening: false, ..small_cfg() };
        let real = build_hierarchy(&g, 2);
        assert!(init_model(&flat_cfg, &b, real, 0).is_err());
    }

    #[test]
    fn embedding_lookup_by_node_weight() {
        let a = CsrMatrix::from_triplets(3, 3, [(0, 1, 1.0), (1, 0, 1.0)]).unwrap();
        let g = Graph::new(a, vec![3, 1, 9]).unwrap();
        let b = bundle(g, Matrix::identity(3), 2);
        let cfg = small_cfg();
        let h = Hierarchy::flat(&b.graph, 2);
        let cfg = HgcnConfig { use_coarsening: false, ..cfg };
        let ms = init_model(&cfg, &b, h, 0).unwrap();
        let mut tape = Tape::new();
        let table = tape.param(&ms.params, ms.embedding.unwrap());
        let s = ms.embed_node_weights(&mut tape, table, 0).unwrap();
        let v = ms.params.value(ms.embedding.unwrap());
        assert_eq!(tape.value(s).row(0), v.row(2));
        assert_eq!(tape.value(s).row(1), v.row(0));
        assert_eq!(tape.value(s).row(2), v.row(3));
    }

    #[test]
    fn gcn_block_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let adj = Arc::new(normalized_adjacency(&Graph::empty(1)));
        let mut tape = Tape::new();
        let x = tape.constant(Matrix::from_rows(&[[0.5, 2.0]]));
        let theta = tape.leaf(Matrix::identity(2));
        let one = tape.leaf(Matrix::scalar(1.0));
        let out = gcn_block(&mut tape, &adj, x, theta, one, 0.9, &mut rng, false).unwrap();
        assert_eq!(tape.value(out), tape.value(x));

        let neg = tape.leaf(Matrix::from_rows(&[[-1.0, 0.0], [0.0, -1.0]]));
        let out = gcn_block(&mut tape, &adj, x, neg, one, 0.0, &mut rng, false).unwrap();
        assert_eq!(tape.value(out).as_slice(), &[0.0, 0.0]);

        // Two identical channels averaged equal one channel.
        let g = Graph::from_edges(3, &[(0, 1, 1.0), (1, 2, 2.0)]).unwrap();
        let adj = Arc::new(normalized_adjacency(&g));
        let x = tape.constant(Matrix::from_rows(&[[1.0, -1.0], [0.5, 2.0], [3.0, 0.0]]));
        let theta = tape.leaf(Matrix::from_rows(&[[0.3, -0.7], [1.1, 0.2]]));
        let single = gcn_block(&mut tape, &adj, x, theta, one, 0.0, &mut rng, false).unwrap();
        let twice = tape.leaf(Matrix::from_rows(&[[0.3, -0.7, 0.3, -0.7], [1.1, 0.2, 1.1, 0.2]]));
        let halves = tape.leaf(Matrix::from_rows(&[[0.5, 0.5]]));
        let double = gcn_block(&mut tape, &adj, x, twice, halves, 0.0, &mut rng, false).unwrap();
        assert!(tape.value(single).max_abs_diff(tape.value(double)) < 1e-15);

        // Against the dense definition ReLU(Â X θ).
        let dense = adj.to_dense().matmul(tape.value(x)).unwrap().matmul(tape.value(theta)).unwrap();
        let want = dense.map(|v| v.max(0.0));
        assert!(tape.value(single).max_abs_diff(&want) < 1e-15);

        let wide = tape.leaf(Matrix::zeros(3, 2));
        assert!(matches!(
            gcn_block(&mut tape, &adj, x, wide, one, 0.0, &mut rng, false),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn forward_shapes_and_probabilities() {
        let g = Graph::from_edges(
            6,
            &[(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0), (3, 4, 1.0), (4, 5, 1.0), (5, 0, 1.0)],
        )
        .unwrap();
        let feats = Matrix::from_rows(&[
            [1.0, 0.0, 2.0],
            [0.0, 1.0, 0.0],
            [1.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
            [3.0, 0.0, 1.0],
            [0.0, 2.0, 2.0],
        ]);
        let b = bundle(g, feats, 3);
        for cfg in [
            small_cfg(),
            HgcnConfig { use_coarsening: false, ..small_cfg() },
            HgcnConfig { use_node_weight_embedding: false, ..small_cfg() },
            HgcnConfig { output_relu: false, normalize_features: false, ..small_cfg() },
        ] {
            let h = hierarchy_for(&cfg, &b.graph);
            let ms = init_model(&cfg, &b, h, 1).unwrap();
            let x = prepare_features(&cfg, &b.features);
            let p = ms.predict_proba(&x).unwrap();
            assert_eq!(p.shape(), (6, 3));
            for r in 0..6 {
                assert!((p.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
            // Inference is a pure function of parameters and features.
            assert_eq!(ms.logits(&x).unwrap(), ms.logits(&x).unwrap());
            // Training-mode forward runs and is reproducible for a fixed dropout seed.
            let run = |seed| {
                let mut tape = Tape::new();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let pass = ms.forward(&mut tape, &x, Some(&mut rng)).unwrap();
                tape.value(pass.logits).clone()
            };
            assert_eq!(run(5), run(5));
        }
    }

    #[test]
    fn saved_model_round_trip_and_fingerprint_check() {
        let g = Graph::from_edges(4, &[(0, 1, 1.0), (2, 3, 1.0)]).unwrap();
        let b = bundle(g, Matrix::identity(4), 2);
        let cfg = small_cfg();
        let ms = init_model(&cfg, &b, hierarchy_for(&cfg, &b.graph), 9).unwrap();
        let saved = ms.to_saved(b.fingerprint());
        let json = serde_json::to_string(&saved).unwrap();
        let back: SavedModel = serde_json::from_str(&json).unwrap();
        let restored = back.restore(&b).unwrap();
        assert_eq!(restored.parameter_values(), ms.parameter_values());

        let mut other = b.clone();
        other.features = CsrMatrix::from_dense(&Matrix::filled(4, 4, 2.0));
        assert!(matches!(back.restore(&other), Err(Error::Fingerprint { .. })));
    }
}
