//! Structure-driven graph coarsening.
//!
//! One coarsening step first merges structurally equivalent nodes (identical
//! neighbor sets), then greedily pairs the remaining nodes with the unmarked
//! neighbor of largest normalized connection strength
//! `A_jk / sqrt(w_j * w_k)`. Nodes left without an unmarked neighbor become
//! singleton hyper-nodes. The result is a [`GroupingMatrix`] `M` and the coarse
//! graph `Mᵀ A M` whose node weights are the summed fine weights.
//!
//! Coarsening reads only the adjacency and node weights, never features, so a
//! whole [`Hierarchy`] can be built once before training.

use std::collections::HashMap;

use crate::dataset::{DatasetBundle, Splits};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::matrix::Matrix;
use crate::sparse::CsrMatrix;

/// Assignment of every fine node to exactly one coarse node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroupingMatrix {
    assignment: Vec<usize>,
    n_coarse: usize,
}

impl GroupingMatrix {
    /// Validates that the assignment is total and leaves no coarse index empty.
    pub fn new(assignment: Vec<usize>, n_coarse: usize) -> Result<Self> {
        let mut hit = vec![false; n_coarse];
        for (j, &k) in assignment.iter().enumerate() {
            if k >= n_coarse {
                return Err(Error::Argument(format!(
                    "fine node {j} assigned to {k}, outside 0..{n_coarse}"
                )));
            }
            hit[k] = true;
        }
        if let Some(k) = hit.iter().position(|h| !h) {
            return Err(Error::Argument(format!("coarse node {k} has no members")));
        }
        Ok(GroupingMatrix {
            assignment,
            n_coarse,
        })
    }

    pub fn identity(n: usize) -> Self {
        GroupingMatrix {
            assignment: (0..n).collect(),
            n_coarse: n,
        }
    }

    /// Numbers groups in order of their first member in fine-index order.
    pub fn from_groups(n_fine: usize, groups: &[Vec<usize>]) -> Result<Self> {
        let mut group_of = vec![usize::MAX; n_fine];
        for (g, members) in groups.iter().enumerate() {
            for &v in members {
                if v >= n_fine {
                    return Err(Error::Argument(format!("group member {v} outside 0..{n_fine}")));
                }
                if group_of[v] != usize::MAX {
                    return Err(Error::Argument(format!("node {v} is in two groups")));
                }
                group_of[v] = g;
            }
        }
        if let Some(v) = group_of.iter().position(|&g| g == usize::MAX) {
            return Err(Error::Argument(format!("node {v} is in no group")));
        }
        let mut coarse_of_group = vec![usize::MAX; groups.len()];
        let mut next = 0;
        let assignment = group_of
            .into_iter()
            .map(|g| {
                if coarse_of_group[g] == usize::MAX {
                    coarse_of_group[g] = next;
                    next += 1;
                }
                coarse_of_group[g]
            })
            .collect();
        Ok(GroupingMatrix {
            assignment,
            n_coarse: next,
        })
    }

    #[inline]
    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    #[inline]
    pub fn n_fine(&self) -> usize {
        self.assignment.len()
    }

    #[inline]
    pub fn n_coarse(&self) -> usize {
        self.n_coarse
    }

    pub fn is_identity(&self) -> bool {
        self.n_coarse == self.n_fine() && self.assignment.iter().enumerate().all(|(j, &k)| j == k)
    }

    /// Members of each coarse node, in ascending fine order.
    pub fn groups(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.n_coarse];
        for (j, &k) in self.assignment.iter().enumerate() {
            groups[k].push(j);
        }
        groups
    }

    /// The explicit binary `n_fine x n_coarse` matrix.
    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::zeros(self.n_fine(), self.n_coarse);
        for (j, &k) in self.assignment.iter().enumerate() {
            m[(j, k)] = 1.0;
        }
        m
    }
}

/// Graphs from finest (`levels[0]`, the input) to coarsest, with
/// `groupings[i]` mapping `levels[i]` onto `levels[i + 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Hierarchy {
    pub levels: Vec<Graph>,
    pub groupings: Vec<GroupingMatrix>,
}

impl Hierarchy {
    /// Number of coarsening steps.
    pub fn depth(&self) -> usize {
        self.groupings.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.levels.iter().map(Graph::n).collect()
    }

    /// `k` identity steps over `g`: every level is `g` itself.
    pub fn flat(g: &Graph, k: usize) -> Self {
        Hierarchy {
            levels: vec![g.clone(); k + 1],
            groupings: vec![GroupingMatrix::identity(g.n()); k],
        }
    }
}

/// Normalized connection strength `A_jk / sqrt(w_j * w_k)`; zero for non-adjacent pairs.
pub fn connection_strength(g: &Graph, j: usize, k: usize) -> Result<f64> {
    if j == k {
        return Err(Error::Argument(format!(
            "connection strength needs two distinct nodes, got {j} twice"
        )));
    }
    if j >= g.n() || k >= g.n() {
        return Err(Error::Argument(format!(
            "node pair ({j}, {k}) outside 0..{}",
            g.n()
        )));
    }
    Ok(strength(g, j, k, g.edge_weight(j, k)))
}

#[inline]
fn strength(g: &Graph, j: usize, k: usize, a_jk: f64) -> f64 {
    let w = g.node_weights();
    a_jk / ((w[j] * w[k]) as f64).sqrt()
}

/// Groups formed so far and which nodes they cover.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartialGrouping {
    pub groups: Vec<Vec<usize>>,
    pub marked: Vec<bool>,
}

/// Merges every class of nodes sharing an identical, non-empty neighbor set.
///
/// Neighbor sets exclude the node itself, so two adjacent nodes are never
/// equivalent. Isolated nodes are left unmarked. Groups are ordered by their
/// smallest member and list members in ascending order.
pub fn structural_equivalence_grouping(g: &Graph) -> PartialGrouping {
    let mut classes: HashMap<Vec<usize>, Vec<usize>> = HashMap::new();
    for v in 0..g.n() {
        let nbrs: Vec<usize> = g.neighbors(v).map(|(u, _)| u).collect();
        if !nbrs.is_empty() {
            classes.entry(nbrs).or_default().push(v);
        }
    }
    let mut groups: Vec<Vec<usize>> = classes.into_values().filter(|c| c.len() > 1).collect();
    groups.sort_unstable_by_key(|c| c[0]);
    let mut marked = vec![false; g.n()];
    for &v in groups.iter().flatten() {
        marked[v] = true;
    }
    PartialGrouping { groups, marked }
}

/// Completes a partial grouping by greedy strongest-neighbor pairing.
///
/// Unmarked nodes are visited once, in ascending order of neighbor count
/// (ties by index). Each still-unmarked node is paired with the unmarked
/// neighbor of largest connection strength, ties going to the lowest index;
/// a node with no unmarked neighbor becomes a singleton.
pub fn structural_similarity_grouping(g: &Graph, partial: PartialGrouping) -> Vec<Vec<usize>> {
    let PartialGrouping {
        mut groups,
        mut marked,
    } = partial;
    let mut order: Vec<usize> = (0..g.n()).filter(|&v| !marked[v]).collect();
    order.sort_by_key(|&v| (g.degree(v), v));
    for j in order {
        if marked[j] {
            continue;
        }
        let mut best: Option<(usize, f64)> = None;
        for (k, a_jk) in g.neighbors(j) {
            if marked[k] {
                continue;
            }
            let s = strength(g, j, k, a_jk);
            // Neighbors arrive in ascending index order, so strict `>` keeps the lowest on ties.
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((k, s));
            }
        }
        marked[j] = true;
        match best {
            Some((k, _)) => {
                marked[k] = true;
                groups.push(vec![j.min(k), j.max(k)]);
            }
            None => groups.push(vec![j]),
        }
    }
    groups
}

/// The grouping one coarsening step would produce, without building the coarse graph.
pub fn grouping(g: &Graph) -> GroupingMatrix {
    let partial = structural_equivalence_grouping(g);
    let groups = structural_similarity_grouping(g, partial);
    GroupingMatrix::from_groups(g.n(), &groups).expect("grouping covers every node exactly once")
}

/// The graph `Mᵀ A M` with summed node weights; diagonal entries hold intra-group weight.
pub fn coarse_graph(g: &Graph, m: &GroupingMatrix) -> Result<Graph> {
    if m.n_fine() != g.n() {
        return Err(Error::Argument(format!(
            "grouping over {} nodes applied to a graph of {}",
            m.n_fine(),
            g.n()
        )));
    }
    let a = m.assignment();
    let adjacency = CsrMatrix::from_triplets(
        m.n_coarse(),
        m.n_coarse(),
        g.adjacency().iter().map(|(r, c, v)| (a[r], a[c], v)),
    )?;
    let mut weights = vec![0u64; m.n_coarse()];
    for (j, &w) in g.node_weights().iter().enumerate() {
        weights[a[j]] += w;
    }
    Graph::new(adjacency, weights)
}

/// One coarsening step.
pub fn coarsen(g: &Graph) -> (Graph, GroupingMatrix) {
    let m = grouping(g);
    let coarse = coarse_graph(g, &m).expect("grouping matches the graph it was built from");
    (coarse, m)
}

/// `Mᵀ G`: each coarse row is the sum of its members' rows.
pub fn coarsen_features(m: &GroupingMatrix, fine: &Matrix) -> Result<Matrix> {
    if fine.rows() != m.n_fine() {
        return Err(Error::Argument(format!(
            "{} feature rows for a grouping over {} fine nodes",
            fine.rows(),
            m.n_fine()
        )));
    }
    let mut out = Matrix::zeros(m.n_coarse(), fine.cols());
    for (j, &k) in m.assignment().iter().enumerate() {
        for (d, s) in out.row_mut(k).iter_mut().zip(fine.row(j)) {
            *d += s;
        }
    }
    Ok(out)
}

/// `M G`: each fine row copies its hyper-node's row.
pub fn refine_features(m: &GroupingMatrix, coarse: &Matrix) -> Result<Matrix> {
    if coarse.rows() != m.n_coarse() {
        return Err(Error::Argument(format!(
            "{} feature rows for a grouping onto {} coarse nodes",
            coarse.rows(),
            m.n_coarse()
        )));
    }
    let mut out = Matrix::zeros(m.n_fine(), coarse.cols());
    for (j, &k) in m.assignment().iter().enumerate() {
        out.row_mut(j).copy_from_slice(coarse.row(k));
    }
    Ok(out)
}

/// Applies [`coarsen`] `k` times, keeping every level even when a step
/// does not shrink the graph.
pub fn build_hierarchy(g: &Graph, k: usize) -> Hierarchy {
    let mut levels = Vec::with_capacity(k + 1);
    let mut groupings = Vec::with_capacity(k);
    levels.push(g.clone());
    for _ in 0..k {
        let (coarse, m) = coarsen(levels.last().unwrap());
        levels.push(coarse);
        groupings.push(m);
    }
    Hierarchy { levels, groupings }
}

/// One coarsening step applied to a whole dataset. Features are summed per
/// hyper-node and each hyper-node takes the majority label of its labeled
/// members (ties to the lowest class). Splits do not carry over.
pub fn coarsen_dataset(bundle: &DatasetBundle) -> Result<(DatasetBundle, GroupingMatrix)> {
    let (graph, m) = coarsen(&bundle.graph);
    let a = m.assignment();
    let features = CsrMatrix::from_triplets(
        m.n_coarse(),
        bundle.features.cols(),
        bundle.features.iter().map(|(r, c, v)| (a[r], c, v)),
    )?;
    let mut votes = vec![vec![0usize; bundle.num_classes]; m.n_coarse()];
    for (v, label) in bundle.labels.iter().enumerate() {
        if let Some(y) = *label {
            votes[a[v]][y] += 1;
        }
    }
    let labels = votes
        .iter()
        .map(|counts| {
            let best = counts.iter().copied().max().unwrap_or(0);
            (best > 0).then(|| counts.iter().position(|&c| c == best).unwrap())
        })
        .collect();
    let coarse = DatasetBundle {
        name: bundle.name.clone(),
        graph,
        features,
        labels,
        num_classes: bundle.num_classes,
        splits: Splits::default(),
    };
    Ok((coarse, m))
}
