//! Experiment plumbing shared by the `hgcn` binary and its tests.

use std::path::{Path, PathBuf};

use hgcn::coarsen::Hierarchy;
use hgcn::dataset::DatasetBundle;
use hgcn::model::{hierarchy_for, init_model, HgcnConfig, ModelState};
use hgcn::train::{fit, mean_std, reduced_label_split, RunReport, TrainConfig};
use serde::{Deserialize, Serialize};

/// Everything needed to reproduce a batch of training runs. Doubles as the
/// JSON schema of `--config` files.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSpec {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub model: HgcnConfig,
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    /// Reduced-label sweep points; empty means the train split as given.
    pub labels_per_class: Vec<usize>,
}

impl ExperimentSpec {
    /// Resolves flag interactions: an embedding width of zero disables the embedding.
    pub fn normalize(&mut self) {
        if self.model.nwe_dim == 0 {
            self.model.use_node_weight_embedding = false;
        }
        if self.seeds.is_empty() {
            self.seeds.push(self.train.seed);
        }
    }
}

/// One trained model with its report.
pub struct Run {
    pub labels_per_class: Option<usize>,
    pub report: RunReport,
    pub model: ModelState,
}

/// Trains one model per seed on `bundle`, sharing a single coarsening hierarchy.
pub fn train_seeds(
    bundle: &DatasetBundle,
    hierarchy: &Hierarchy,
    model: &HgcnConfig,
    train: &TrainConfig,
    seeds: &[u64],
) -> hgcn::Result<Vec<(RunReport, ModelState)>> {
    seeds
        .iter()
        .map(|&seed| {
            let mut ms = init_model(model, bundle, hierarchy.clone(), seed)?;
            let tc = TrainConfig {
                seed,
                ..train.clone()
            };
            let report = fit(&mut ms, bundle, &tc)?;
            Ok((report, ms))
        })
        .collect()
}

/// Runs every (label count, seed) point of `spec`. Reduced splits are drawn
/// with the run's seed, so each seed sees its own subset.
pub fn run_experiment(spec: &ExperimentSpec, bundle: &DatasetBundle) -> hgcn::Result<Vec<Run>> {
    let hierarchy = hierarchy_for(&spec.model, &bundle.graph);
    let points: Vec<Option<usize>> = if spec.labels_per_class.is_empty() {
        vec![None]
    } else {
        spec.labels_per_class.iter().copied().map(Some).collect()
    };
    let mut runs = Vec::new();
    for lpc in points {
        for &seed in &spec.seeds {
            let data = match lpc {
                Some(k) => reduced_label_split(bundle, k, seed)?,
                None => bundle.clone(),
            };
            for (report, model) in train_seeds(&data, &hierarchy, &spec.model, &spec.train, &[seed])? {
                runs.push(Run {
                    labels_per_class: lpc,
                    report,
                    model,
                });
            }
        }
    }
    Ok(runs)
}

/// Test accuracies of `runs` summarized as `(mean, std)`.
pub fn summarize<'a>(runs: impl IntoIterator<Item = &'a RunReport>) -> (f64, f64) {
    let accs: Vec<f64> = runs.into_iter().filter_map(|r| r.test_accuracy).collect();
    mean_std(&accs)
}

/// Tab-separated `dataset, seeds, mean_acc, std`.
pub fn summary_line(dataset: &str, seeds: usize, mean: f64, std: f64) -> String {
    format!("{dataset}\t{seeds}\t{mean:.4}\t{std:.4}")
}

/// File name for the serialized model of one run.
pub fn model_file_name(labels_per_class: Option<usize>, seed: u64) -> String {
    match labels_per_class {
        Some(k) => format!("model_lpc{k}_seed{seed}.json"),
        None => format!("model_seed{seed}.json"),
    }
}

/// Parses `--seeds`: a bare count `N` means `base..base + N`, a comma list is taken verbatim.
pub fn parse_seeds(arg: &str, base: u64) -> Result<Vec<u64>, String> {
    let arg = arg.trim();
    if arg.contains(',') {
        let seeds = parse_list::<u64>(arg)?;
        let mut sorted = seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != seeds.len() {
            return Err(format!("seed list `{arg}` repeats a seed"));
        }
        Ok(seeds)
    } else {
        let n: u64 = arg
            .parse()
            .map_err(|_| format!("`{arg}` is neither a seed count nor a comma-separated list"))?;
        if n == 0 {
            return Err("seed count must be at least 1".into());
        }
        Ok((base..base + n).collect())
    }
}

pub fn parse_list<T: std::str::FromStr>(arg: &str) -> Result<Vec<T>, String> {
    arg.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| format!("cannot parse `{}` in list `{arg}`", s.trim()))
        })
        .collect()
}

/// Writes pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| anyhow::anyhow!("writing {}: {e}", path.display()))
}
