//! Full-batch training with best-validation model selection.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::dataset::DatasetBundle;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{prepare_features, ModelState};
use crate::optim::AdamState;

/// Stream id mixed into the seed for training-time dropout, so that it never
/// shares draws with parameter initialization.
const DROPOUT_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub l2: f64,
    pub seed: u64,
    /// Restore the parameters of the best-validation epoch after training.
    pub model_selection: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 250,
            lr: 0.03,
            l2: 7e-4,
            seed: 0,
            model_selection: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(Error::Config(format!("l2 factor must be >= 0, got {}", self.l2)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: Option<f64>,
}

/// Outcome of one seeded run. Wall-clock time is kept out of the JSON form so
/// that reruns serialize to identical bytes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub dataset: String,
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters the model holds after `fit`.
    pub selected_epoch: usize,
    pub val_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

/// Fraction of `split` whose row argmax (ties to the lowest class) matches the label.
pub fn accuracy(logits: &Matrix, labels: &[Option<usize>], split: &[usize]) -> Result<f64> {
    if split.is_empty() {
        return Err(Error::Argument("accuracy over an empty split".into()));
    }
    let pred = logits.argmax_rows();
    let mut correct = 0usize;
    for &v in split {
        let y = labels
            .get(v)
            .copied()
            .flatten()
            .ok_or_else(|| Error::Argument(format!("node {v} has no label")))?;
        correct += usize::from(pred[v] == y);
    }
    Ok(correct as f64 / split.len() as f64)
}

/// Inference-mode accuracy of `ms` on the nodes in `split`.
pub fn evaluate(ms: &ModelState, bundle: &DatasetBundle, split: &[usize]) -> Result<f64> {
    if split.is_empty() {
        return Err(Error::Argument("cannot evaluate an empty split".into()));
    }
    let logits = ms.logits(&prepare_features(&ms.config, &bundle.features))?;
    accuracy(&logits, &bundle.labels, split)
}

fn optional_accuracy(logits: &Matrix, labels: &[Option<usize>], split: &[usize]) -> Result<Option<f64>> {
    if split.is_empty() {
        Ok(None)
    } else {
        accuracy(logits, labels, split).map(Some)
    }
}

/// Trains `ms` in place and reports per-epoch progress.
///
/// Each epoch takes one Adam step on the whole graph, then scores the
/// validation split in inference mode. With model selection on, the
/// parameters of the first epoch reaching the highest validation accuracy
/// are restored at the end.
pub fn fit(ms: &mut ModelState, bundle: &DatasetBundle, tc: &TrainConfig) -> Result<RunReport> {
    tc.validate()?;
    let splits = &bundle.splits;
    if splits.train.is_empty() {
        return Err(Error::Config("train split is empty".into()));
    }
    if tc.model_selection && splits.val.is_empty() {
        return Err(Error::Config("model selection needs a validation split".into()));
    }
    let start = Instant::now();
    let features = prepare_features(&ms.config, &bundle.features);
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed ^ DROPOUT_STREAM);
    let mut adam = AdamState::new(&ms.params, tc.lr);
    ms.params.zero_grad();

    let mut records = Vec::with_capacity(tc.epochs);
    let mut best: Option<(f64, usize, Vec<Matrix>)> = None;
    for epoch in 1..=tc.epochs {
        let mut tape = Tape::new();
        let pass = ms.forward(&mut tape, &features, Some(&mut rng))?;
        let ce = tape.masked_softmax_cross_entropy(pass.logits, &bundle.labels, &splits.train)?;
        let penalty = tape.l2_penalty(&pass.regularized, tc.l2)?;
        let loss = tape.add(ce, penalty)?;
        let train_loss = tape.value(loss).item();
        if !train_loss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                loss: train_loss,
            });
        }
        tape.backward_into(loss, &mut ms.params)?;
        drop(tape);
        adam.step(&mut ms.params);

        let logits = ms.logits(&features)?;
        let train_accuracy = accuracy(&logits, &bundle.labels, &splits.train)?;
        let val_accuracy = optional_accuracy(&logits, &bundle.labels, &splits.val)?;
        if tc.model_selection {
            let acc = val_accuracy.expect("validation split checked above");
            if best.as_ref().is_none_or(|(b, _, _)| acc > *b) {
                best = Some((acc, epoch, ms.parameter_values()));
            }
        }
        records.push(EpochRecord {
            epoch,
            train_loss,
            train_accuracy,
            val_accuracy,
        });
    }

    let selected_epoch = match best {
        Some((_, epoch, values)) => {
            ms.set_parameter_values(&values);
            epoch
        }
        None => tc.epochs,
    };
    let logits = ms.logits(&features)?;
    Ok(RunReport {
        dataset: bundle.name.clone(),
        seed: tc.seed,
        epochs: records,
        selected_epoch,
        val_accuracy: optional_accuracy(&logits, &bundle.labels, &splits.val)?,
        test_accuracy: optional_accuracy(&logits, &bundle.labels, &splits.test)?,
        wall_clock_secs: start.elapsed().as_secs_f64(),
    })
}

/// Copy of `bundle` whose train split keeps `per_class` random nodes of each
/// class, drawn with `seed`; validation and test are untouched.
pub fn reduced_label_split(bundle: &DatasetBundle, per_class: usize, seed: u64) -> Result<DatasetBundle> {
    let mut by_class = vec![Vec::new(); bundle.num_classes];
    for &v in &bundle.splits.train {
        let y = bundle.labels[v].ok_or_else(|| Error::Argument(format!("train node {v} has no label")))?;
        by_class[y].push(v);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::with_capacity(per_class * bundle.num_classes);
    for (class, nodes) in by_class.iter_mut().enumerate() {
        if nodes.len() < per_class {
            return Err(Error::Argument(format!(
                "class {class} has {} training nodes, {per_class} requested",
                nodes.len()
            )));
        }
        nodes.sort_unstable();
        nodes.shuffle(&mut rng);
        train.extend_from_slice(&nodes[..per_class]);
    }
    train.sort_unstable();
    let mut out = bundle.clone();
    out.splits.train = train;
    Ok(out)
}

/// Mean and sample standard deviation (zero for fewer than two values).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_counts_hand_labeled_case() {
        let logits = Matrix::from_rows(&[[2.0, 1.0], [0.0, 3.0], [1.0, 0.0], [5.0, 4.0]]);
        let labels = vec![Some(0), Some(1), Some(1), Some(0)];
        assert_eq!(accuracy(&logits, &labels, &[0, 1, 2, 3]).unwrap(), 0.75);
    }

    #[test]
    fn uniform_logits_predict_the_lowest_class() {
        let logits = Matrix::filled(3, 4, 0.5);
        let labels = vec![Some(0), Some(0), Some(2)];
        assert!((accuracy(&logits, &labels, &[0, 1, 2]).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn empty_split_is_an_argument_error() {
        let logits = Matrix::zeros(1, 2);
        assert!(matches!(accuracy(&logits, &[Some(0)], &[]), Err(Error::Argument(_))));
    }

    #[test]
    fn config_rejects_zero_epochs_and_bad_rates() {
        assert!(TrainConfig { epochs: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { lr: 0.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { l2: -1.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }

    #[test]
    fn mean_std_of_small_samples() {
        assert_eq!(mean_std(&[0.5]), (0.5, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
    }

    #[test]
    fn wall_clock_is_not_serialized() {
        let r = RunReport {
            dataset: "d".into(),
            seed: 1,
            epochs: vec![],
            selected_epoch: 1,
            val_accuracy: None,
            test_accuracy: Some(1.0),
            wall_clock_secs: 12.5,
        };
        let json = serde_json::to_string(&r).unwrap();
        assert!(!json.contains("wall_clock"));
    }
}
