//! Snapshot-only random forest and teacher-student distillation.
//!
//! The forest is the fast inference path: it consumes one raw (unnormalized)
//! snapshot and votes 0 or 1, with no window buffer and no normalization
//! stage. It can be trained two ways: distilled from a calibrated recurrent
//! teacher (labels are the teacher's thresholded decisions) or directly from
//! ground-truth labels as a comparison baseline.

mod tree;

pub use tree::{gini, DecisionTree, TreeNode};

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::GruClassifier;
use crate::telemetry::{feature, FeatureVector, ProcessTrace};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    /// Features considered per split; ceil(sqrt(26)) = 6 by default.
    pub feature_subsample: usize,
    pub seed: u64,
    /// Permit training on a dataset where only one label occurs.
    pub allow_single_class: bool,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 100,
            max_depth: 16,
            min_samples_leaf: 5,
            feature_subsample: 6,
            seed: 0,
            allow_single_class: false,
        }
    }
}

const FOREST_FORMAT: &str = "prockill.forest.v1";

/// Bagged ensemble of CART trees; prediction is a majority vote with exact
/// ties resolved to benign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestClassifier {
    pub trees: Vec<DecisionTree>,
    pub tree_seeds: Vec<u64>,
    pub config: ForestConfig,
}

#[derive(Serialize, Deserialize)]
struct ForestFile {
    format: String,
    forest: ForestClassifier,
}

impl ForestClassifier {
    /// Majority vote over a raw snapshot.
    pub fn predict(&self, snapshot: &FeatureVector) -> u8 {
        self.predict_slice(snapshot.as_slice())
            .expect("FeatureVector has the right arity")
    }

    /// Majority vote over a raw feature slice; errors on arity mismatch.
    pub fn predict_slice(&self, features: &[f64]) -> Result<u8> {
        if features.len() != feature::COUNT {
            return Err(Error::input(format!(
                "snapshot has {} features, expected {}",
                features.len(),
                feature::COUNT
            )));
        }
        let ones: usize = self
            .trees
            .iter()
            .map(|t| t.predict(features) as usize)
            .sum();
        Ok(if 2 * ones > self.trees.len() { 1 } else { 0 })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = ForestFile {
            format: FOREST_FORMAT.to_string(),
            forest: self.clone(),
        };
        let text = serde_json::to_string_pretty(&file)
            .map_err(|e| Error::input(format!("serialize forest: {e}")))?;
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::input(format!("{}: {e}", path.display())))?;
        let file: ForestFile = serde_json::from_str(&text)
            .map_err(|e| Error::input(format!("{}: not a forest file: {e}", path.display())))?;
        if file.format != FOREST_FORMAT {
            return Err(Error::input(format!(
                "{}: unsupported forest format {:?}, expected {:?}",
                path.display(),
                file.format,
                FOREST_FORMAT
            )));
        }
        Ok(file.forest)
    }
}

/// Train a bagged forest on (snapshot, label) pairs. Each tree sees a
/// bootstrap resample of the full dataset drawn from its own recorded seed.
pub fn train_forest(dataset: &[(FeatureVector, u8)], config: &ForestConfig) -> Result<ForestClassifier> {
    if dataset.is_empty() {
        return Err(Error::input("empty forest training dataset"));
    }
    if !config.allow_single_class {
        let has_zero = dataset.iter().any(|(_, y)| *y == 0);
        let has_one = dataset.iter().any(|(_, y)| *y == 1);
        if !has_zero || !has_one {
            return Err(Error::input(
                "forest training data contains a single class; both labels are required",
            ));
        }
    }

    let xs: Vec<FeatureVector> = dataset.iter().map(|(x, _)| *x).collect();
    let ys: Vec<u8> = dataset.iter().map(|(_, y)| *y).collect();

    let mut seed_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let tree_seeds: Vec<u64> = (0..config.n_trees).map(|_| seed_rng.gen()).collect();

    let grow = tree::GrowConfig {
        max_depth: config.max_depth,
        min_samples_leaf: config.min_samples_leaf,
        feature_subsample: config.feature_subsample,
    };

    let trees: Vec<DecisionTree> = tree_seeds
        .iter()
        .map(|&seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut indices: Vec<usize> =
                (0..xs.len()).map(|_| rng.gen_range(0..xs.len())).collect();
            tree::grow_tree(&xs, &ys, &mut indices, &grow, &mut rng)
        })
        .collect();

    Ok(ForestClassifier {
        trees,
        tree_seeds,
        config: *config,
    })
}

/// Label every window position of every trace with the teacher's thresholded
/// decision, paired with the window's most recent *raw* snapshot.
///
/// The labels are what the teacher would do, not ground truth; a snapshot is
/// positive exactly when the teacher's window score strictly exceeds its
/// calibrated threshold.
pub fn teacher_label(
    teacher: &GruClassifier,
    traces: &[ProcessTrace],
) -> Vec<(FeatureVector, u8)> {
    let mut dataset = Vec::new();
    for trace in traces {
        let scores = teacher.score_trace(trace);
        for (snap, score) in trace.snapshots.iter().zip(scores) {
            dataset.push((
                snap.features,
                if score > teacher.threshold { 1 } else { 0 },
            ));
        }
    }
    dataset
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistillConfig {
    pub forest: ForestConfig,
    /// Fraction of labeled snapshots held out for the agreement measurement.
    pub holdout_frac: f64,
    /// Optional cap on the number of labeled snapshots used (seeded
    /// subsample); all window positions are used when absent.
    pub label_subsample: Option<usize>,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            forest: ForestConfig {
                allow_single_class: true,
                ..ForestConfig::default()
            },
            holdout_frac: 0.2,
            label_subsample: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistillReport {
    /// Student-teacher decision agreement on the held-out snapshots.
    pub agreement: f64,
    pub train_size: usize,
    pub holdout_size: usize,
    /// Fraction of teacher labels that were positive.
    pub teacher_positive_frac: f64,
}

/// Distill the teacher into a forest: label snapshots with the teacher's
/// decisions, hold out a split, train on the rest, and report agreement on
/// the holdout.
pub fn distill(
    teacher: &GruClassifier,
    training_traces: &[ProcessTrace],
    config: &DistillConfig,
) -> Result<(ForestClassifier, DistillReport)> {
    let mut dataset = teacher_label(teacher, training_traces);
    if dataset.is_empty() {
        return Err(Error::input("no snapshots to distill from"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.forest.seed ^ 0xD15711);
    dataset.shuffle(&mut rng);
    if let Some(cap) = config.label_subsample {
        dataset.truncate(cap.max(1));
    }

    let positives = dataset.iter().filter(|(_, y)| *y == 1).count();
    let teacher_positive_frac = positives as f64 / dataset.len() as f64;

    let holdout_size = ((dataset.len() as f64 * config.holdout_frac) as usize)
        .min(dataset.len().saturating_sub(1));
    let (holdout, train_set) = dataset.split_at(holdout_size);

    let forest = train_forest(train_set, &config.forest)?;

    let agreement = if holdout.is_empty() {
        1.0
    } else {
        let agree = holdout
            .iter()
            .filter(|(x, y)| forest.predict(x) == *y)
            .count();
        agree as f64 / holdout.len() as f64
    };

    Ok((
        forest,
        DistillReport {
            agreement,
            train_size: train_set.len(),
            holdout_size: holdout.len(),
            teacher_positive_frac,
        },
    ))
}

/// Baseline forest trained on ground-truth application labels instead of
/// teacher decisions, over the same snapshot set.
pub fn train_forest_direct(
    training_traces: &[ProcessTrace],
    config: &ForestConfig,
) -> Result<ForestClassifier> {
    let mut dataset = Vec::new();
    for trace in training_traces {
        let y = if trace.label.is_malicious() { 1 } else { 0 };
        for snap in &trace.snapshots {
            dataset.push((snap.features, y));
        }
    }
    train_forest(&dataset, config)
}
