//! Portable dataset directories and the in-memory [`DatasetBundle`].
//!
//! A dataset directory holds:
//!
//! - `meta.json`: `{"name", "n", "num_edges", "num_classes", "num_features"}`
//! - `edges.tsv`: `u\tv[\tweight]` per undirected edge, 0-based, weight defaults to 1
//! - `features.tsv`: `node\tfeature_index\tvalue` per non-zero feature
//! - `labels.tsv`: `node\tclass_index` per labeled node
//! - `splits.json`: `{"train": [...], "val": [...], "test": [...]}`
//! - `node_weights.tsv` (optional): `node\tweight`, absent nodes weigh 1
//!
//! Features stay in CSR form in memory; the first model layer consumes them
//! through a sparse product.

use std::collections::HashSet;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::sparse::CsrMatrix;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Meta {
    pub name: String,
    pub n: usize,
    pub num_edges: usize,
    pub num_classes: usize,
    pub num_features: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetBundle {
    pub name: String,
    pub graph: Graph,
    pub features: CsrMatrix,
    /// Class index per node, `None` for unlabeled nodes.
    pub labels: Vec<Option<usize>>,
    pub num_classes: usize,
    pub splits: Splits,
}

impl DatasetBundle {
    /// Checks the cross-field invariants: feature rows, label range, and
    /// pairwise disjoint, fully labeled splits.
    pub fn validate(&self) -> Result<()> {
        let n = self.graph.n();
        if self.features.rows() != n {
            return Err(Error::Validation(format!(
                "feature matrix has {} rows for {n} nodes",
                self.features.rows()
            )));
        }
        if self.labels.len() != n {
            return Err(Error::Validation(format!(
                "{} labels for {n} nodes",
                self.labels.len()
            )));
        }
        if let Some(c) = self.labels.iter().flatten().find(|&&c| c >= self.num_classes) {
            return Err(Error::Validation(format!(
                "label {c} outside 0..{}",
                self.num_classes
            )));
        }
        let mut seen = HashSet::new();
        for (name, list) in [
            ("train", &self.splits.train),
            ("val", &self.splits.val),
            ("test", &self.splits.test),
        ] {
            for &v in list {
                if v >= n {
                    return Err(Error::Validation(format!(
                        "{name} split node {v} outside 0..{n}"
                    )));
                }
                if self.labels[v].is_none() {
                    return Err(Error::Validation(format!(
                        "{name} split node {v} has no label"
                    )));
                }
                if !seen.insert(v) {
                    return Err(Error::Validation(format!(
                        "node {v} appears twice across splits"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn meta(&self) -> Meta {
        Meta {
            name: self.name.clone(),
            n: self.graph.n(),
            num_edges: self.graph.edges().count(),
            num_classes: self.num_classes,
            num_features: self.features.cols(),
        }
    }

    /// Label of `v`; panics on unlabeled nodes, which validated splits never contain.
    pub fn label(&self, v: usize) -> usize {
        self.labels[v].expect("split nodes are labeled")
    }

    /// SHA-256 over graph, node weights, features and labels (not splits,
    /// so reduced-label variants share the fingerprint of their source).
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.graph.n() as u64).to_le_bytes());
        for (u, v, w) in self.graph.edges() {
            h.update((u as u64).to_le_bytes());
            h.update((v as u64).to_le_bytes());
            h.update(w.to_bits().to_le_bytes());
        }
        for &w in self.graph.node_weights() {
            h.update(w.to_le_bytes());
        }
        h.update((self.features.cols() as u64).to_le_bytes());
        for (r, c, v) in self.features.iter() {
            h.update((r as u64).to_le_bytes());
            h.update((c as u64).to_le_bytes());
            h.update(v.to_bits().to_le_bytes());
        }
        h.update((self.num_classes as u64).to_le_bytes());
        for l in &self.labels {
            h.update(l.map_or(u64::MAX, |c| c as u64).to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::format(path, "file is missing")
        } else {
            Error::io(path, e)
        }
    })
}

/// Splits a TSV line into exactly `min..=max` fields.
fn fields<'a>(path: &Path, lineno: usize, line: &'a str, min: usize, max: usize) -> Result<Vec<&'a str>> {
    let parts: Vec<&str> = line.split('\t').map(str::trim).collect();
    if parts.len() < min || parts.len() > max {
        return Err(Error::format(
            path,
            format!("line {}: expected {min}..={max} fields, got {}", lineno + 1, parts.len()),
        ));
    }
    Ok(parts)
}

fn parse<T: std::str::FromStr>(path: &Path, lineno: usize, s: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::format(path, format!("line {}: cannot parse {s:?}", lineno + 1)))
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
}

fn check_node(v: usize, n: usize, what: &str) -> Result<()> {
    if v >= n {
        Err(Error::Validation(format!("{what} node {v} outside 0..{n}")))
    } else {
        Ok(())
    }
}

/// Reads and validates a dataset directory.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<DatasetBundle> {
    let dir = dir.as_ref();
    let meta_path = dir.join("meta.json");
    let meta: Meta = serde_json::from_str(&read(&meta_path)?)
        .map_err(|e| Error::format(&meta_path, e.to_string()))?;
    let n = meta.n;

    let path = dir.join("edges.tsv");
    let text = read(&path)?;
    let mut edges = Vec::new();
    for (i, line) in data_lines(&text) {
        let f = fields(&path, i, line, 2, 3)?;
        let u: usize = parse(&path, i, f[0])?;
        let v: usize = parse(&path, i, f[1])?;
        let w: f64 = if f.len() == 3 { parse(&path, i, f[2])? } else { 1.0 };
        check_node(u, n, "edge")?;
        check_node(v, n, "edge")?;
        edges.push((u, v, w));
    }
    let mut graph = Graph::from_edges(n, &edges)?;
    let num_edges = graph.edges().count();
    if num_edges != meta.num_edges {
        return Err(Error::Validation(format!(
            "meta.json declares {} edges, edges.tsv holds {num_edges}",
            meta.num_edges
        )));
    }

    let path = dir.join("node_weights.tsv");
    if path.exists() {
        let text = read(&path)?;
        let mut weights = vec![1u64; n];
        for (i, line) in data_lines(&text) {
            let f = fields(&path, i, line, 2, 2)?;
            let v: usize = parse(&path, i, f[0])?;
            check_node(v, n, "node weight")?;
            weights[v] = parse(&path, i, f[1])?;
        }
        graph = Graph::new(graph.adjacency().clone(), weights)?;
    }

    let path = dir.join("features.tsv");
    let text = read(&path)?;
    let mut triplets = Vec::new();
    for (i, line) in data_lines(&text) {
        let f = fields(&path, i, line, 3, 3)?;
        let v: usize = parse(&path, i, f[0])?;
        let c: usize = parse(&path, i, f[1])?;
        let x: f64 = parse(&path, i, f[2])?;
        check_node(v, n, "feature")?;
        if c >= meta.num_features {
            return Err(Error::Validation(format!(
                "feature index {c} outside 0..{}",
                meta.num_features
            )));
        }
        if !(x.is_finite() && x >= 0.0) {
            return Err(Error::Validation(format!(
                "feature ({v}, {c}) has invalid value {x}"
            )));
        }
        triplets.push((v, c, x));
    }
    let features = CsrMatrix::from_triplets(n, meta.num_features, triplets.iter().copied())?;
    if features.nnz() != triplets.len() {
        return Err(Error::Validation(
            "features.tsv lists a (node, feature) pair more than once".into(),
        ));
    }

    let path = dir.join("labels.tsv");
    let text = read(&path)?;
    let mut labels = vec![None; n];
    for (i, line) in data_lines(&text) {
        let f = fields(&path, i, line, 2, 2)?;
        let v: usize = parse(&path, i, f[0])?;
        check_node(v, n, "label")?;
        labels[v] = Some(parse(&path, i, f[1])?);
    }

    let path = dir.join("splits.json");
    let splits: Splits =
        serde_json::from_str(&read(&path)?).map_err(|e| Error::format(&path, e.to_string()))?;

    let bundle = DatasetBundle {
        name: meta.name,
        graph,
        features,
        labels,
        num_classes: meta.num_classes,
        splits,
    };
    bundle.validate()?;
    Ok(bundle)
}

/// Writes `bundle` as a dataset directory that [`load_dataset`] reads back unchanged.
pub fn save_dataset(bundle: &DatasetBundle, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let write = |name: &str, body: &dyn Fn(&mut dyn Write) -> std::io::Result<()>| -> Result<()> {
        let path = dir.join(name);
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(file);
        body(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(&path, e))
    };

    let meta = serde_json::to_string_pretty(&bundle.meta())?;
    write("meta.json", &|w| writeln!(w, "{meta}"))?;
    write("edges.tsv", &|w| {
        for (u, v, x) in bundle.graph.edges() {
            if x == 1.0 {
                writeln!(w, "{u}\t{v}")?;
            } else {
                writeln!(w, "{u}\t{v}\t{x}")?;
            }
        }
        Ok(())
    })?;
    write("features.tsv", &|w| {
        for (v, c, x) in bundle.features.iter() {
            writeln!(w, "{v}\t{c}\t{x}")?;
        }
        Ok(())
    })?;
    write("labels.tsv", &|w| {
        for (v, l) in bundle.labels.iter().enumerate() {
            if let Some(c) = l {
                writeln!(w, "{v}\t{c}")?;
            }
        }
        Ok(())
    })?;
    let splits = serde_json::to_string(&bundle.splits)?;
    write("splits.json", &|w| writeln!(w, "{splits}"))?;

    let weights = bundle.graph.node_weights();
    let path = dir.join("node_weights.tsv");
    if weights.iter().any(|&w| w != 1) {
        write("node_weights.tsv", &|w| {
            for (v, x) in weights.iter().enumerate() {
                writeln!(w, "{v}\t{x}")?;
            }
            Ok(())
        })?;
    } else if path.exists() {
        fs::remove_file(&path).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}
