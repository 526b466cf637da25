//! Supervised evaluation: labeled pixel sets, the repeated per-class
//! train/test sampling protocol, OA/AA/Kappa metrics and the report type.
//!
//! The reference protocol draws a fixed number of training samples per class
//! (default 100), trains a random forest (default 10 trees), classifies the
//! remaining pixels and repeats the whole process (default 25 times),
//! reporting the mean and standard deviation of each metric.

mod forest;

pub use forest::{train_forest, train_forest_with, DecisionTree, ForestModel, ForestOptions};

use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cube::FeatureStack;
use crate::label::LabelMap;
use crate::seed;
use crate::{Error, Result};

/// Feature rows with class labels, the classifier's input currency.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPixels {
    features: Vec<f32>,
    dim: usize,
    labels: Vec<u32>,
    class_names: Vec<String>,
}

impl LabeledPixels {
    pub fn new(
        features: Vec<f32>,
        dim: usize,
        labels: Vec<u32>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        if dim == 0 || features.len() != labels.len() * dim {
            return Err(Error::ShapeMismatch(format!(
                "{} feature values for {} labels of width {}",
                features.len(),
                labels.len(),
                dim
            )));
        }
        let classes = class_names.len() as u32;
        if classes == 0 {
            return Err(Error::InvalidInput("no class names".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::InvalidInput(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        Ok(Self {
            features,
            dim,
            labels,
            class_names,
        })
    }

    /// Collect the labeled (non-background) pixels of a feature stack.
    /// Returns the pixel set and the plane index of every row, so
    /// predictions can be painted back into an image.
    pub fn from_stack(stack: &FeatureStack, truth: &LabelMap) -> Result<(Self, Vec<usize>)> {
        if stack.rows() != truth.rows() || stack.cols() != truth.cols() {
            return Err(Error::ShapeMismatch(format!(
                "stack {}x{} vs labels {}x{}",
                stack.rows(),
                stack.cols(),
                truth.rows(),
                truth.cols()
            )));
        }
        let plane = stack.plane_len();
        let d = stack.channels();
        let pixel_indices: Vec<usize> = (0..plane).filter(|&p| truth.labels()[p] != 0).collect();
        let mut features = Vec::with_capacity(pixel_indices.len() * d);
        let mut labels = Vec::with_capacity(pixel_indices.len());
        let data = stack.data();
        for &p in &pixel_indices {
            for c in 0..d {
                features.push(data[c * plane + p]);
            }
            labels.push(truth.labels()[p] as u32 - 1);
        }
        let set = Self::new(features, d, labels, truth.class_names().to_vec())?;
        Ok((set, pixel_indices))
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    /// Row-major feature matrix (n × d).
    pub fn features(&self) -> &[f32] {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn feature(&self, i: usize, c: usize) -> f32 {
        self.features[i * self.dim + c]
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Self {
            features,
            dim: self.dim,
            labels,
            class_names: self.class_names.clone(),
        }
    }
}

/// Pick `per_class` training indices per class uniformly without
/// replacement; everything else becomes the test set. Both halves are
/// returned sorted, and they are disjoint by construction.
pub fn sample_split_indices(
    labels: &[u32],
    n_classes: usize,
    per_class: usize,
    seed_value: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l as usize].push(i);
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed_value);
    let mut train = Vec::with_capacity(per_class * n_classes);
    let mut test = Vec::new();
    for (c, mut members) in by_class.into_iter().enumerate() {
        if members.is_empty() {
            continue; // class absent from this set
        }
        if members.len() <= per_class {
            return Err(Error::InvalidInput(format!(
                "class {c} has {} samples, needs more than {per_class}",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        train.extend_from_slice(&members[..per_class]);
        test.extend_from_slice(&members[per_class..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Per-class sampling split of a labeled set.
pub fn sample_split(
    data: &LabeledPixels,
    per_class: usize,
    seed_value: u64,
) -> Result<(LabeledPixels, LabeledPixels)> {
    let (train, test) =
        sample_split_indices(data.labels(), data.n_classes(), per_class, seed_value)?;
    Ok((data.subset(&train), data.subset(&test)))
}

/// C × C confusion counts; rows are true classes, columns predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    n_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(n_classes: usize) -> Self {
        Self {
            n_classes,
            counts: vec![0; n_classes * n_classes],
        }
    }

    pub fn from_counts(n_classes: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != n_classes * n_classes {
            return Err(Error::ShapeMismatch(format!(
                "{} counts for a {n_classes}x{n_classes} matrix",
                counts.len()
            )));
        }
        Ok(Self { n_classes, counts })
    }

    pub fn from_predictions(truth: &[u32], predicted: &[u32], n_classes: usize) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} truths vs {} predictions",
                truth.len(),
                predicted.len()
            )));
        }
        let mut cm = Self::new(n_classes);
        for (&t, &p) in truth.iter().zip(predicted) {
            if t as usize >= n_classes || p as usize >= n_classes {
                return Err(Error::InvalidInput(format!(
                    "label pair ({t}, {p}) outside {n_classes} classes"
                )));
            }
            cm.counts[t as usize * n_classes + p as usize] += 1;
        }
        Ok(cm)
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn at(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.n_classes + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_sum(&self, truth: usize) -> u64 {
        (0..self.n_classes).map(|p| self.at(truth, p)).sum()
    }

    pub fn col_sum(&self, predicted: usize) -> u64 {
        (0..self.n_classes).map(|t| self.at(t, predicted)).sum()
    }

    fn trace(&self) -> u64 {
        (0..self.n_classes).map(|c| self.at(c, c)).sum()
    }
}

/// Overall accuracy, average (per-class) accuracy and Cohen's kappa.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub oa: f64,
    pub aa: f64,
    pub kappa: f64,
}

/// Compute OA = trace/total, AA = mean of per-class recalls, and
/// κ = (p_o − p_e)/(1 − p_e) with p_e from the row/column marginals.
pub fn metrics(cm: &ConfusionMatrix) -> Result<Metrics> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Degenerate("empty confusion matrix".into()));
    }
    let total_f = total as f64;
    let oa = cm.trace() as f64 / total_f;

    let mut aa = 0.0;
    for c in 0..cm.n_classes() {
        let row = cm.row_sum(c);
        if row == 0 {
            return Err(Error::Degenerate(format!(
                "class {c} has no samples; AA undefined"
            )));
        }
        aa += cm.at(c, c) as f64 / row as f64;
    }
    aa /= cm.n_classes() as f64;

    let off_diagonal = total - cm.trace();
    let kappa = if off_diagonal == 0 {
        1.0
    } else {
        let pe: f64 = (0..cm.n_classes())
            .map(|c| cm.row_sum(c) as f64 * cm.col_sum(c) as f64)
            .sum::<f64>()
            / (total_f * total_f);
        if (1.0 - pe).abs() < 1e-12 {
            0.0
        } else {
            (oa - pe) / (1.0 - pe)
        }
    };
    Ok(Metrics { oa, aa, kappa })
}

/// Evaluation protocol: per-class training samples, repeat count, forest
/// size and the master seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Protocol {
    #[serde(default = "default_per_class")]
    pub per_class: usize,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default = "default_trees")]
    pub trees: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_per_class() -> usize {
    100
}
fn default_repeats() -> usize {
    25
}
fn default_trees() -> usize {
    10
}
fn default_seed() -> u64 {
    42
}

impl Default for Protocol {
    fn default() -> Self {
        Self {
            per_class: default_per_class(),
            repeats: default_repeats(),
            trees: default_trees(),
            seed: default_seed(),
        }
    }
}

/// Confusion matrices and metric statistics over repeated splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub class_names: Vec<String>,
    pub protocol: Protocol,
    /// Split seed of every repeat (`protocol.seed + r`).
    pub split_seeds: Vec<u64>,
    pub matrices: Vec<ConfusionMatrix>,
    pub oa: Vec<f64>,
    pub aa: Vec<f64>,
    pub kappa: Vec<f64>,
    pub oa_mean: f64,
    pub oa_sd: f64,
    pub aa_mean: f64,
    pub aa_sd: f64,
    pub kappa_mean: f64,
    pub kappa_sd: f64,
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Run the full repeated protocol on a labeled pixel set.
///
/// Repeat r splits with seed `protocol.seed + r` and trains with a forest
/// seed derived from the same pair, so reports are reproducible and repeats
/// can run in parallel.
pub fn evaluate(data: &LabeledPixels, protocol: &Protocol) -> Result<EvalReport> {
    if protocol.repeats == 0 {
        return Err(Error::InvalidInput("protocol needs repeats >= 1".into()));
    }
    let runs: Vec<Result<(u64, ConfusionMatrix)>> = (0..protocol.repeats)
        .into_par_iter()
        .map(|r| {
            let split_seed = protocol.seed.wrapping_add(r as u64);
            let (train, test) = sample_split(data, protocol.per_class, split_seed)?;
            let forest_seed = seed::derive(protocol.seed, 0x4652_0000 + r as u64);
            let model = train_forest(&train, protocol.trees, forest_seed)?;
            let predictions = model.predict(test.features(), test.dim())?;
            let cm =
                ConfusionMatrix::from_predictions(test.labels(), &predictions, data.n_classes())?;
            Ok((split_seed, cm))
        })
        .collect();

    let mut split_seeds = Vec::with_capacity(protocol.repeats);
    let mut matrices = Vec::with_capacity(protocol.repeats);
    let mut oa = Vec::with_capacity(protocol.repeats);
    let mut aa = Vec::with_capacity(protocol.repeats);
    let mut kappa = Vec::with_capacity(protocol.repeats);
    for run in runs {
        let (seed_value, cm) = run?;
        let m = metrics(&cm)?;
        split_seeds.push(seed_value);
        oa.push(m.oa);
        aa.push(m.aa);
        kappa.push(m.kappa);
        matrices.push(cm);
    }
    let (oa_mean, oa_sd) = mean_sd(&oa);
    let (aa_mean, aa_sd) = mean_sd(&aa);
    let (kappa_mean, kappa_sd) = mean_sd(&kappa);
    Ok(EvalReport {
        class_names: data.class_names().to_vec(),
        protocol: *protocol,
        split_seeds,
        matrices,
        oa,
        aa,
        kappa,
        oa_mean,
        oa_sd,
        aa_mean,
        aa_sd,
        kappa_mean,
        kappa_sd,
    })
}

/// Evaluate a feature stack against ground truth; background pixels
/// (label 0) never enter training or testing.
pub fn evaluate_stack(
    stack: &FeatureStack,
    truth: &LabelMap,
    protocol: &Protocol,
) -> Result<EvalReport> {
    let (data, _) = LabeledPixels::from_stack(stack, truth)?;
    evaluate(&data, protocol)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cm(rows: &[&[u64]]) -> ConfusionMatrix {
        let n = rows.len();
        let counts: Vec<u64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        ConfusionMatrix::from_counts(n, counts).unwrap()
    }

    #[test]
    fn metrics_perfect_classifier() {
        let m = metrics(&cm(&[&[50, 0], &[0, 50]])).unwrap();
        assert_eq!(m.oa, 1.0);
        assert_eq!(m.aa, 1.0);
        assert_eq!(m.kappa, 1.0);
    }

    #[test]
    fn metrics_chance_agreement() {
        let m = metrics(&cm(&[&[25, 25], &[25, 25]])).unwrap();
        assert_eq!(m.oa, 0.5);
        assert_eq!(m.aa, 0.5);
        assert_eq!(m.kappa, 0.0);
    }

    #[test]
    fn metrics_hand_computed_case() {
        let m = metrics(&cm(&[&[40, 10], &[20, 30]])).unwrap();
        assert!((m.oa - 0.70).abs() < 1e-15);
        assert!((m.aa - 0.70).abs() < 1e-15);
        assert!((m.kappa - 0.40).abs() < 1e-12);
    }

    #[test]
    fn metrics_errors() {
        assert!(metrics(&ConfusionMatrix::new(2)).is_err());
        // one class never occurs: AA undefined
        assert!(metrics(&cm(&[&[10, 0], &[0, 0]])).is_err());
    }

    #[test]
    fn kappa_zero_for_rank_one_matrices() {
        // counts proportional to an outer product of the marginals
        let m = metrics(&cm(&[&[20, 20], &[10, 10]])).unwrap();
        assert!(m.kappa.abs() < 1e-12);
    }

    #[test]
    fn oa_invariant_under_class_permutation() {
        let a = metrics(&cm(&[&[40, 10], &[20, 30]])).unwrap();
        let b = metrics(&cm(&[&[30, 20], &[10, 40]])).unwrap();
        assert!((a.oa - b.oa).abs() < 1e-15);
        assert!((a.aa - b.aa).abs() < 1e-15);
    }

    fn toy_data(sizes: &[usize]) -> LabeledPixels {
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for (c, &n) in sizes.iter().enumerate() {
            for i in 0..n {
                features.push(c as f32 * 10.0 + (i % 7) as f32 * 0.1);
                labels.push(c as u32);
            }
        }
        LabeledPixels::new(
            features,
            1,
            labels,
            (0..sizes.len()).map(|c| format!("class{c}")).collect(),
        )
        .unwrap()
    }

    #[test]
    fn split_respects_per_class_counts() {
        let data = toy_data(&[10791, 23528, 85000]);
        let (train, test) = sample_split(&data, 100, 1).unwrap();
        assert_eq!(train.len(), 300);
        assert_eq!(test.len(), 119_019);
        for c in 0..3u32 {
            assert_eq!(train.labels().iter().filter(|&&l| l == c).count(), 100);
        }
    }

    #[test]
    fn split_is_disjoint_and_leaves_singletons() {
        let data = toy_data(&[5, 8]);
        let (train_idx, test_idx) =
            sample_split_indices(data.labels(), data.n_classes(), 4, 3).unwrap();
        let mut union = train_idx.clone();
        union.extend_from_slice(&test_idx);
        union.sort_unstable();
        union.dedup();
        assert_eq!(union.len(), 13);
        // class 0 keeps exactly one test sample
        let class0_test = test_idx.iter().filter(|&&i| data.labels()[i] == 0).count();
        assert_eq!(class0_test, 1);

        assert!(sample_split(&data, 5, 3).is_err());
        assert!(sample_split(&data, 6, 3).is_err());
    }

    #[test]
    fn evaluation_on_one_hot_features_is_perfect() {
        // degenerate features: the one-hot encoding of the label itself
        let n_per = 120;
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for c in 0..3u32 {
            for _ in 0..n_per {
                for k in 0..3 {
                    features.push(if k == c { 1.0 } else { 0.0 });
                }
                labels.push(c);
            }
        }
        let data = LabeledPixels::new(
            features,
            3,
            labels,
            vec!["a".into(), "b".into(), "c".into()],
        )
        .unwrap();
        let protocol = Protocol {
            per_class: 100,
            repeats: 25,
            trees: 10,
            seed: 5,
        };
        let report = evaluate(&data, &protocol).unwrap();
        assert_eq!(report.matrices.len(), 25);
        assert_eq!(report.aa_mean, 1.0);
        assert_eq!(report.oa_mean, 1.0);
        assert_eq!(report.kappa_mean, 1.0);
        assert_eq!(report.aa_sd, 0.0);
    }

    #[test]
    fn evaluation_is_deterministic() {
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for c in 0..2u32 {
            for i in 0..150 {
                // overlapping classes so accuracy is nontrivial
                features.push(c as f32 + ((i * 37 + 11) % 100) as f32 / 60.0);
                labels.push(c);
            }
        }
        let data = LabeledPixels::new(features, 1, labels, vec!["a".into(), "b".into()]).unwrap();
        let protocol = Protocol {
            per_class: 40,
            repeats: 8,
            trees: 5,
            seed: 77,
        };
        let a = evaluate(&data, &protocol).unwrap();
        let b = evaluate(&data, &protocol).unwrap();
        assert_eq!(a, b);
        assert!(a.oa_mean > 0.5 && a.oa_mean < 1.0);
        assert!(a.oa_sd >= 0.0);
    }

    #[test]
    fn from_stack_excludes_background() {
        let stack =
            FeatureStack::new(2, 3, vec!["f".into()], vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let truth = LabelMap::new(
            2,
            3,
            vec![0, 1, 0, 2, 1, 0],
            vec!["chalk".into(), "ink".into()],
        )
        .unwrap();
        let (data, pixels) = LabeledPixels::from_stack(&stack, &truth).unwrap();
        assert_eq!(data.len(), 3);
        assert_eq!(pixels, vec![1, 3, 4]);
        assert_eq!(data.labels(), &[0, 1, 0]);
        assert_eq!(data.features(), &[1.0, 3.0, 4.0]);
    }
}
