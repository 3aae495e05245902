//! Windowed classification datasets built from level matrices.
//!
//! Each grid cell `(i, j)` becomes one example whose label says whether the
//! cell's level exceeds the high threshold. Features are the `p` rows before
//! row `i`, either whole rows concatenated (`row-concat`) or only column `j`
//! of those rows (`column-window`). History above the first row reads as
//! all-zero virtual rows.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attention::{GridSpec, LevelMatrix};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureMode {
    RowConcat,
    ColumnWindow,
}

impl FeatureMode {
    /// Number of features per example for window size `p`.
    pub fn feature_dim(self, p: usize, grid_cols: usize) -> usize {
        match self {
            FeatureMode::RowConcat => p * grid_cols,
            FeatureMode::ColumnWindow => p,
        }
    }

    /// Distance `k` (1 = the row just before the predicted one) of the row a
    /// feature was read from. Feature blocks are laid out oldest row first.
    pub fn time_interval(self, feature_index: usize, p: usize, grid_cols: usize) -> usize {
        match self {
            FeatureMode::RowConcat => p - feature_index / grid_cols,
            FeatureMode::ColumnWindow => p - feature_index,
        }
    }

    /// How many features share one time interval.
    pub fn features_per_interval(self, grid_cols: usize) -> usize {
        match self {
            FeatureMode::RowConcat => grid_cols,
            FeatureMode::ColumnWindow => 1,
        }
    }
}

impl fmt::Display for FeatureMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureMode::RowConcat => "row-concat",
            FeatureMode::ColumnWindow => "column-window",
        })
    }
}

impl FromStr for FeatureMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "row-concat" => Ok(FeatureMode::RowConcat),
            "column-window" => Ok(FeatureMode::ColumnWindow),
            other => Err(Error::Config(format!(
                "unknown feature mode `{other}` (expected row-concat or column-window)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BuildConfig {
    /// Number of previous rows in the window.
    pub p: usize,
    /// Levels strictly above this are labelled high.
    pub high_threshold: u8,
    pub feature_mode: FeatureMode,
    pub split_fraction: f64,
    pub seed: u64,
}

impl Default for BuildConfig {
    fn default() -> Self {
        BuildConfig {
            p: 4,
            high_threshold: 5,
            feature_mode: FeatureMode::RowConcat,
            split_fraction: 0.8,
            seed: 0,
        }
    }
}

impl BuildConfig {
    pub fn validate(&self, grid: &GridSpec) -> Result<()> {
        if self.p == 0 || self.p >= grid.rows {
            return Err(Error::Config(format!(
                "window size p={} must satisfy 1 <= p < {}",
                self.p, grid.rows
            )));
        }
        if self.high_threshold >= grid.levels {
            return Err(Error::Config(format!(
                "high threshold {} must be below the level count {}",
                self.high_threshold, grid.levels
            )));
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(Error::Config(format!(
                "split fraction {} must lie in (0, 1)",
                self.split_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Low,
    High,
}

impl Label {
    pub fn of_level(level: u8, high_threshold: u8) -> Label {
        if level > high_threshold {
            Label::High
        } else {
            Label::Low
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_high(self) -> bool {
        self == Label::High
    }
}

/// One labelled cell. Features live in the owning [`Dataset`]; several
/// examples may point at the same feature vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Example {
    /// Index into [`Dataset::utterance_ids`].
    pub utterance: u32,
    /// 1-based row of the predicted cell.
    pub row_id: u32,
    /// 1-based column of the predicted cell.
    pub col_id: u32,
    pub label: Label,
    feature_row: u32,
}

/// Construction context carried by datasets built from level matrices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub config: BuildConfig,
    pub grid: GridSpec,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    examples: Vec<Example>,
    features: Arc<Vec<u8>>,
    feature_dim: usize,
    utterance_ids: Arc<Vec<String>>,
    meta: Option<DatasetMeta>,
}

impl Dataset {
    /// Assembles a dataset from explicit feature vectors, one per example.
    pub fn from_rows(rows: Vec<(Vec<u8>, Label)>) -> Result<Self> {
        let n = rows.len();
        let dim = rows.first().map_or(0, |r| r.0.len());
        let mut features = Vec::with_capacity(n * dim);
        let mut examples = Vec::with_capacity(n);
        for (k, (f, label)) in rows.into_iter().enumerate() {
            if f.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: f.len(),
                });
            }
            features.extend_from_slice(&f);
            examples.push(Example {
                utterance: 0,
                row_id: 1,
                col_id: 1,
                label,
                feature_row: k as u32,
            });
        }
        Ok(Dataset {
            examples,
            features: Arc::new(features),
            feature_dim: dim,
            utterance_ids: Arc::new(vec![String::new()]),
            meta: None,
        })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn meta(&self) -> Option<&DatasetMeta> {
        self.meta.as_ref()
    }

    pub fn utterance_ids(&self) -> &[String] {
        &self.utterance_ids
    }

    pub fn utterance_id(&self, ex: &Example) -> &str {
        &self.utterance_ids[ex.utterance as usize]
    }

    pub fn features(&self, ex: &Example) -> &[u8] {
        let start = ex.feature_row as usize * self.feature_dim;
        &self.features[start..start + self.feature_dim]
    }

    pub(crate) fn feature_row_index(&self, ex: &Example) -> usize {
        ex.feature_row as usize
    }

    pub(crate) fn stored_rows(&self) -> usize {
        self.features
            .len()
            .checked_div(self.feature_dim)
            .unwrap_or(self.examples.len())
    }

    pub(crate) fn stored_row(&self, r: usize) -> &[u8] {
        &self.features[r * self.feature_dim..(r + 1) * self.feature_dim]
    }

    /// Feature `f` of example number `idx`.
    #[inline]
    pub fn feature(&self, idx: usize, f: usize) -> u8 {
        self.features[self.examples[idx].feature_row as usize * self.feature_dim + f]
    }

    #[inline]
    pub fn label(&self, idx: usize) -> Label {
        self.examples[idx].label
    }

    /// Examples at `indices`, in that order, sharing this dataset's feature store.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            examples: indices.iter().map(|&i| self.examples[i]).collect(),
            features: Arc::clone(&self.features),
            feature_dim: self.feature_dim,
            utterance_ids: Arc::clone(&self.utterance_ids),
            meta: self.meta.clone(),
        }
    }
}

struct MatrixBlock {
    examples: Vec<Example>,
    features: Vec<u8>,
}

fn build_matrix(m: &LevelMatrix, utterance: u32, cfg: &BuildConfig) -> MatrixBlock {
    let grid = m.grid;
    let p = cfg.p;
    let mut examples = Vec::with_capacity(grid.cells());
    let mut features = Vec::with_capacity(grid.cells() * cfg.feature_mode.feature_dim(p, 1));
    let mut feature_rows = 0u32;
    for i in 0..grid.rows {
        match cfg.feature_mode {
            FeatureMode::RowConcat => {
                for r in i as isize - p as isize..i as isize {
                    if r < 0 {
                        features.extend(std::iter::repeat_n(0u8, grid.cols));
                    } else {
                        features.extend_from_slice(m.row(r as usize));
                    }
                }
                for j in 0..grid.cols {
                    examples.push(Example {
                        utterance,
                        row_id: i as u32 + 1,
                        col_id: j as u32 + 1,
                        label: Label::of_level(m.get(i, j), cfg.high_threshold),
                        feature_row: feature_rows,
                    });
                }
                feature_rows += 1;
            }
            FeatureMode::ColumnWindow => {
                for j in 0..grid.cols {
                    for r in i as isize - p as isize..i as isize {
                        features.push(if r < 0 { 0 } else { m.get(r as usize, j) });
                    }
                    examples.push(Example {
                        utterance,
                        row_id: i as u32 + 1,
                        col_id: j as u32 + 1,
                        label: Label::of_level(m.get(i, j), cfg.high_threshold),
                        feature_row: feature_rows,
                    });
                    feature_rows += 1;
                }
            }
        }
    }
    MatrixBlock { examples, features }
}

/// Emits one example per grid cell of every matrix, in matrix order then
/// row-major order.
pub fn build_examples(levels: &[LevelMatrix], cfg: &BuildConfig) -> Result<Dataset> {
    let first = levels.first().ok_or(Error::Empty("no level matrices"))?;
    let grid = first.grid;
    cfg.validate(&grid)?;
    if let Some(m) = levels.iter().find(|m| m.grid != grid) {
        return Err(Error::Config(format!(
            "level matrix `{}` uses grid {:?}, expected {:?}",
            m.id, m.grid, grid
        )));
    }
    let blocks: Vec<MatrixBlock> = levels
        .par_iter()
        .enumerate()
        .map(|(u, m)| build_matrix(m, u as u32, cfg))
        .collect();

    let dim = cfg.feature_mode.feature_dim(cfg.p, grid.cols);
    let total: usize = blocks.iter().map(|b| b.examples.len()).sum();
    let mut examples = Vec::with_capacity(total);
    let mut features = Vec::with_capacity(blocks.iter().map(|b| b.features.len()).sum());
    for block in blocks {
        let offset = (features.len() / dim) as u32;
        examples.extend(block.examples.into_iter().map(|mut e| {
            e.feature_row += offset;
            e
        }));
        features.extend_from_slice(&block.features);
    }
    Ok(Dataset {
        examples,
        features: Arc::new(features),
        feature_dim: dim,
        utterance_ids: Arc::new(levels.iter().map(|m| m.id.clone()).collect()),
        meta: Some(DatasetMeta {
            config: cfg.clone(),
            grid,
        }),
    })
}

/// Size of the training side: `floor(fraction * n)`.
pub fn train_size(n: usize, fraction: f64) -> usize {
    // The small bias keeps decimal fractions such as 0.29 * 100 from landing
    // one below the exact product.
    ((fraction * n as f64) + 1e-9).floor() as usize
}

/// Seeded shuffle followed by a `split_fraction` / remainder split.
pub fn shuffle_split(d: &Dataset, cfg: &BuildConfig) -> Result<(Dataset, Dataset)> {
    if d.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let n = d.len();
    let n_train = train_size(n, cfg.split_fraction);
    if n_train == 0 || n_train == n {
        return Err(Error::Config(format!(
            "split fraction {} of {n} examples leaves one side empty",
            cfg.split_fraction
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed::derive(cfg.seed, 0x5_9117)));
    Ok((d.subset(&order[..n_train]), d.subset(&order[n_train..])))
}

/// Writes `utterance_id,row_id,col_id,label,features...` lines.
pub fn write_dump(path: &Path, d: &Dataset) -> Result<()> {
    let mut out = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| Error::csv(path, e))?;
    let mut record: Vec<String> = Vec::with_capacity(4 + d.feature_dim());
    for ex in d.examples() {
        record.clear();
        record.push(d.utterance_id(ex).to_string());
        record.push(ex.row_id.to_string());
        record.push(ex.col_id.to_string());
        record.push(ex.label.index().to_string());
        record.extend(d.features(ex).iter().map(u8::to_string));
        out.write_record(&record).map_err(|e| Error::csv(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Reads a dump written by [`write_dump`]. Consecutive lines with the same
/// utterance id form one utterance.
pub fn read_dump(path: &Path) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::csv(path, e))?;
    let mut ids: Vec<String> = Vec::new();
    let mut examples = Vec::new();
    let mut features = Vec::new();
    let mut dim = 0;
    for record in reader.records() {
        let record = record.map_err(|e| Error::csv(path, e))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let parse_err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        if record.len() < 4 {
            return Err(parse_err(format!(
                "{} fields, need at least 4",
                record.len()
            )));
        }
        let num = |k: usize, what: &str| -> Result<u32> {
            record[k]
                .parse()
                .map_err(|_| parse_err(format!("bad {what} `{}`", &record[k])))
        };
        let row_id = num(1, "row_id")?;
        let col_id = num(2, "col_id")?;
        let label = match num(3, "label")? {
            0 => Label::Low,
            1 => Label::High,
            other => return Err(parse_err(format!("label {other} is not 0/1"))),
        };
        for tok in record.iter().skip(4) {
            let v: u8 = tok
                .parse()
                .map_err(|_| parse_err(format!("bad feature `{tok}`")))?;
            features.push(v);
        }
        dim = record.len() - 4;
        let id = &record[0];
        if ids.last().map(String::as_str) != Some(id) {
            ids.push(id.to_string());
        }
        examples.push(Example {
            utterance: (ids.len() - 1) as u32,
            row_id,
            col_id,
            label,
            feature_row: examples.len() as u32,
        });
    }
    if examples.is_empty() {
        return Err(Error::Empty("dataset dump"));
    }
    Ok(Dataset {
        examples,
        features: Arc::new(features),
        feature_dim: dim,
        utterance_ids: Arc::new(ids),
        meta: None,
    })
}
