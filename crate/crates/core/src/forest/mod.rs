//! Bagged ensembles of binary CART trees over integer level features.

mod matrix;
mod split;
mod tree;

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use split::{best_split, class_counts, gini, gini_gain, Split, GAIN_TOLERANCE};
pub use tree::{bootstrap_indices, majority, train_tree, Node, Tree};

use crate::dataset::{Dataset, Label};
use crate::error::{Error, Result};
use crate::seed;
use tree::NodeRecord;

/// How many candidate features each split examines.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureSubsample {
    /// `ceil(sqrt(d))`.
    #[default]
    Sqrt,
    All,
    Count(usize),
}

impl FeatureSubsample {
    pub fn resolve(self, feature_dim: usize) -> usize {
        let k = match self {
            FeatureSubsample::Sqrt => (feature_dim as f64).sqrt().ceil() as usize,
            FeatureSubsample::All | FeatureSubsample::Count(0) => feature_dim,
            FeatureSubsample::Count(k) => k,
        };
        k.clamp(1, feature_dim.max(1))
    }
}

impl fmt::Display for FeatureSubsample {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureSubsample::Sqrt => f.write_str("sqrt"),
            FeatureSubsample::All => f.write_str("all"),
            FeatureSubsample::Count(k) => write!(f, "{k}"),
        }
    }
}

impl FromStr for FeatureSubsample {
    type Err = Error;

    /// Accepts `sqrt`, `all`, or a count where 0 means all.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sqrt" => Ok(FeatureSubsample::Sqrt),
            "all" | "0" => Ok(FeatureSubsample::All),
            n => n
                .parse()
                .map(FeatureSubsample::Count)
                .map_err(|_| Error::Config(format!("bad feature subsample `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub num_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub feature_subsample: FeatureSubsample,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            num_trees: 100,
            max_depth: 64,
            min_leaf: 64,
            feature_subsample: FeatureSubsample::Sqrt,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_trees == 0 || self.max_depth == 0 || self.min_leaf == 0 {
            return Err(Error::Config(format!(
                "trees, max depth and min leaf must all be >= 1 (got {}, {}, {})",
                self.num_trees, self.max_depth, self.min_leaf
            )));
        }
        Ok(())
    }

    /// Bootstrap seed of tree `t`.
    pub fn tree_seed(&self, t: usize) -> u64 {
        seed::derive(self.seed, t as u64)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Forest {
    trees: Vec<Tree>,
    config: TrainConfig,
    feature_dim: usize,
}

/// Trains `num_trees` trees independently; tree `t` draws from the stream
/// seeded by `(config.seed, t)`, so the result does not depend on scheduling.
pub fn train_forest(train: &Dataset, cfg: &TrainConfig) -> Result<Forest> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let matrix = matrix::TrainMatrix::new(train);
    let trees = (0..cfg.num_trees)
        .into_par_iter()
        .map(|t| tree::train_tree_on(&matrix, cfg.tree_seed(t), cfg))
        .collect();
    Ok(Forest {
        trees,
        config: cfg.clone(),
        feature_dim: train.feature_dim(),
    })
}

impl Forest {
    pub fn from_trees(trees: Vec<Tree>, config: TrainConfig, feature_dim: usize) -> Self {
        Forest {
            trees,
            config,
            feature_dim,
        }
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    /// Majority vote over trees; an even split votes low.
    pub fn predict(&self, features: &[u8]) -> Result<Label> {
        if features.len() != self.feature_dim {
            return Err(Error::DimensionMismatch {
                expected: self.feature_dim,
                got: features.len(),
            });
        }
        Ok(self.vote(self.trees.iter().map(|t| t.predict(features))))
    }

    fn vote(&self, votes: impl Iterator<Item = Label>) -> Label {
        let high = votes.filter(|l| l.is_high()).count();
        if 2 * high > self.trees.len() {
            Label::High
        } else {
            Label::Low
        }
    }

    /// Predictions for every example of `data`, in order.
    pub fn predict_dataset(&self, data: &Dataset) -> Result<Vec<Label>> {
        if data.feature_dim() != self.feature_dim {
            return Err(Error::DimensionMismatch {
                expected: self.feature_dim,
                got: data.feature_dim(),
            });
        }
        Ok((0..data.len())
            .into_par_iter()
            .map(|i| self.vote(self.trees.iter().map(|t| t.predict_example(data, i))))
            .collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text =
            serde_json::to_string(&ForestFile::from(self)).map_err(|e| Error::json(path, e))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                msg,
            },
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&ForestFile::from(self)).expect("forest serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ForestFile =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("forest JSON: {e}")))?;
        let trees = file
            .trees
            .iter()
            .enumerate()
            .map(|(t, recs)| {
                let tree = Tree::from_records(recs).ok_or_else(|| {
                    Error::Config(format!("tree {t} is not a complete pre-order listing"))
                })?;
                if let Some(f) = tree.nodes().iter().find_map(|n| match n {
                    Node::Split { feature, .. } if *feature >= file.feature_dim => Some(*feature),
                    _ => None,
                }) {
                    return Err(Error::Config(format!(
                        "tree {t} splits on feature {f}, forest has {} features",
                        file.feature_dim
                    )));
                }
                Ok(tree)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Forest {
            trees,
            config: file.config,
            feature_dim: file.feature_dim,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct ForestFile {
    config: TrainConfig,
    feature_dim: usize,
    trees: Vec<Vec<NodeRecord>>,
}

impl From<&Forest> for ForestFile {
    fn from(f: &Forest) -> Self {
        ForestFile {
            config: f.config.clone(),
            feature_dim: f.feature_dim,
            trees: f.trees.iter().map(Tree::to_records).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowAccuracy {
    pub row_id: u32,
    pub correct: u64,
    pub total: u64,
}

impl RowAccuracy {
    /// `None` when the row has no evaluation examples.
    pub fn accuracy(&self) -> Option<f64> {
        (self.total > 0).then(|| self.correct as f64 / self.total as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowEvaluation {
    /// One entry per row id from 1 to the largest row seen.
    pub rows: Vec<RowAccuracy>,
    pub correct: u64,
    pub total: u64,
}

impl RowEvaluation {
    pub fn overall(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }

    pub fn populated(&self) -> impl Iterator<Item = &RowAccuracy> {
        self.rows.iter().filter(|r| r.total > 0)
    }
}

/// Accuracy of `predictions` against `data`, grouped by predicted row.
pub fn score_by_row(data: &Dataset, predictions: &[Label]) -> RowEvaluation {
    let max_row = data
        .meta()
        .map(|m| m.grid.rows as u32)
        .unwrap_or(0)
        .max(data.examples().iter().map(|e| e.row_id).max().unwrap_or(0));
    let mut rows: Vec<RowAccuracy> = (1..=max_row)
        .map(|row_id| RowAccuracy {
            row_id,
            correct: 0,
            total: 0,
        })
        .collect();
    for (ex, pred) in data.examples().iter().zip(predictions) {
        let r = &mut rows[ex.row_id as usize - 1];
        r.total += 1;
        r.correct += u64::from(ex.label == *pred);
    }
    let correct = rows.iter().map(|r| r.correct).sum();
    let total = rows.iter().map(|r| r.total).sum();
    RowEvaluation {
        rows,
        correct,
        total,
    }
}

pub fn evaluate_by_row(forest: &Forest, eval: &Dataset) -> Result<RowEvaluation> {
    if eval.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let predictions = forest.predict_dataset(eval)?;
    Ok(score_by_row(eval, &predictions))
}
