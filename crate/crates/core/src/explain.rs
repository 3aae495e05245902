//! Decision conditions harvested from a forest, and the influence scores
//! derived from them.
//!
//! A condition is an internal node `x[f] <= t`. Its influence is the node's
//! impurity decrease weighted by the share of bootstrap examples reaching it,
//! normalized so the whole forest sums to one (mean decrease in impurity).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::FeatureMode;
use crate::error::{Error, Result};
use crate::forest::{Forest, Node, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionRecord {
    pub tree: usize,
    pub feature_index: usize,
    pub threshold: f64,
    /// Smallest level routed to the right branch, `ceil(threshold)`.
    pub attributed_level: u8,
    /// 1 for the row just before the predicted row, `p` for the oldest.
    pub time_interval: usize,
    pub gain_share: f64,
}

/// How a forest's features map back onto level-grid rows.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub p: usize,
    pub grid_cols: usize,
    pub feature_mode: FeatureMode,
}

impl FeatureLayout {
    pub fn feature_dim(&self) -> usize {
        self.feature_mode.feature_dim(self.p, self.grid_cols)
    }

    pub fn time_interval(&self, feature_index: usize) -> usize {
        self.feature_mode
            .time_interval(feature_index, self.p, self.grid_cols)
    }

    pub fn features_per_interval(&self) -> usize {
        self.feature_mode.features_per_interval(self.grid_cols)
    }
}

/// One record per internal node of every tree, trees in order and nodes in
/// pre-order.
pub fn harvest_conditions(forest: &Forest, layout: &FeatureLayout) -> Result<Vec<ConditionRecord>> {
    if layout.p == 0 {
        return Err(Error::Config("window size p must be >= 1".into()));
    }
    if forest.feature_dim() != layout.feature_dim() {
        return Err(Error::Config(format!(
            "forest has {} features but p={}, {} columns and {} mode imply {}",
            forest.feature_dim(),
            layout.p,
            layout.grid_cols,
            layout.feature_mode,
            layout.feature_dim()
        )));
    }
    let mut records = Vec::new();
    for (t, tree) in forest.trees().iter().enumerate() {
        for node in tree.nodes() {
            if let Node::Split {
                feature,
                threshold,
                gain,
                ..
            } = node
            {
                records.push(ConditionRecord {
                    tree: t,
                    feature_index: *feature,
                    threshold: *threshold,
                    attributed_level: threshold.ceil().clamp(0.0, 255.0) as u8,
                    time_interval: layout.time_interval(*feature),
                    gain_share: *gain,
                });
            }
        }
    }
    let total: f64 = records.iter().map(|r| r.gain_share).sum();
    if total > 0.0 {
        for r in &mut records {
            r.gain_share /= total;
        }
    }
    Ok(records)
}

/// Number of conditions attributed to each level; index 0 is level 1.
pub fn condition_level_frequencies(records: &[ConditionRecord], num_levels: u8) -> Vec<u64> {
    let mut hist = vec![0u64; num_levels as usize];
    for r in records {
        if (1..=num_levels).contains(&r.attributed_level) {
            hist[r.attributed_level as usize - 1] += 1;
        }
    }
    hist
}

/// Summed influence per feature.
pub fn influence_by_feature(records: &[ConditionRecord]) -> BTreeMap<usize, f64> {
    let mut map = BTreeMap::new();
    for r in records {
        *map.entry(r.feature_index).or_insert(0.0) += r.gain_share;
    }
    map
}

/// Average per-feature influence of each interval `1..=p` (index 0 is
/// interval 1): total influence of the interval divided by how many
/// features it spans.
pub fn influence_by_interval(
    records: &[ConditionRecord],
    p: usize,
    features_per_interval: usize,
) -> Vec<f64> {
    let mut sums = vec![0.0; p];
    for r in records {
        if (1..=p).contains(&r.time_interval) {
            sums[r.time_interval - 1] += r.gain_share;
        }
    }
    let width = features_per_interval.max(1) as f64;
    sums.into_iter().map(|s| s / width).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplainConfig {
    #[serde(flatten)]
    pub layout: FeatureLayout,
    pub num_levels: u8,
    pub train: TrainConfig,
}

/// Explanation artifacts of one forest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InfluenceTable {
    pub config: ExplainConfig,
    pub num_conditions: usize,
    /// Condition counts for levels `1..=num_levels`.
    pub level_frequencies: Vec<u64>,
    /// Average influence for intervals `1..=p`.
    pub per_interval: Vec<f64>,
    /// Influence of every feature that appears in at least one condition.
    pub per_feature: BTreeMap<usize, f64>,
}

pub fn explain(forest: &Forest, layout: &FeatureLayout, num_levels: u8) -> Result<InfluenceTable> {
    let records = harvest_conditions(forest, layout)?;
    Ok(InfluenceTable {
        config: ExplainConfig {
            layout: *layout,
            num_levels,
            train: forest.config().clone(),
        },
        num_conditions: records.len(),
        level_frequencies: condition_level_frequencies(&records, num_levels),
        per_interval: influence_by_interval(&records, layout.p, layout.features_per_interval()),
        per_feature: influence_by_feature(&records),
    })
}

impl InfluenceTable {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}
