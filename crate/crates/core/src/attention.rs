//! Attention weight matrices, corpus manifests, equal-frequency level
//! boundaries and quantization into fixed-size level grids.
//!
//! Rows of an attention matrix index encoder states and columns index
//! decoder steps. Levels run from 1 to `levels`; 0 marks a grid cell that
//! lies outside the utterance's matrix (a vacancy).

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Level code for grid cells outside the used region.
pub const VACANCY: u8 = 0;

/// Shape of the level grid every matrix is padded to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    pub levels: u8,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            rows: 100,
            cols: 659,
            levels: 10,
        }
    }
}

impl GridSpec {
    pub fn new(rows: usize, cols: usize, levels: u8) -> Result<Self> {
        let grid = GridSpec { rows, cols, levels };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::Config(format!(
                "grid must be at least 1x1, got {}x{}",
                self.rows, self.cols
            )));
        }
        if self.levels < 2 {
            return Err(Error::Config(format!(
                "need at least 2 levels, got {}",
                self.levels
            )));
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.rows * self.cols
    }
}

/// Raw attention weights of one utterance, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMatrix {
    id: String,
    rows: usize,
    cols: usize,
    weights: Vec<f64>,
}

impl AttentionMatrix {
    /// Builds a matrix, rejecting empty shapes and any weight that is not
    /// finite and strictly positive.
    pub fn new(id: impl Into<String>, rows: usize, cols: usize, weights: Vec<f64>) -> Result<Self> {
        let id = id.into();
        if rows == 0 || cols == 0 {
            return Err(Error::Config(format!(
                "utterance `{id}`: matrix must be at least 1x1, got {rows}x{cols}"
            )));
        }
        if weights.len() != rows * cols {
            return Err(Error::Config(format!(
                "utterance `{id}`: {} weights for a {rows}x{cols} matrix",
                weights.len()
            )));
        }
        if let Some(k) = weights.iter().position(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::InvalidWeight {
                id,
                row: k / cols,
                col: k % cols,
                value: weights[k],
            });
        }
        Ok(AttentionMatrix {
            id,
            rows,
            cols,
            weights,
        })
    }

    pub fn from_rows(id: impl Into<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        let id = id.into();
        let n = rows.len();
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(Error::Config(format!(
                "utterance `{id}`: ragged rows ({} vs {cols} values)",
                bad.len()
            )));
        }
        Self::new(id, n, cols, rows.into_iter().flatten().collect())
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.weights[row * self.cols..(row + 1) * self.cols]
    }

    pub fn check_fits(&self, grid: &GridSpec) -> Result<()> {
        if self.rows > grid.rows {
            return Err(Error::ExceedsGrid {
                id: self.id.clone(),
                dim: "rows",
                size: self.rows,
                limit: grid.rows,
            });
        }
        if self.cols > grid.cols {
            return Err(Error::ExceedsGrid {
                id: self.id.clone(),
                dim: "cols",
                size: self.cols,
                limit: grid.cols,
            });
        }
        Ok(())
    }
}

/// Cut points `b_1 <= ... <= b_{L-1}` separating the `L` levels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecileBoundaries {
    cuts: Vec<f64>,
}

impl DecileBoundaries {
    pub fn new(cuts: Vec<f64>) -> Result<Self> {
        if cuts.is_empty() {
            return Err(Error::Config("boundaries need at least one cut".into()));
        }
        if cuts.iter().any(|c| !c.is_finite()) || cuts.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Config(
                "boundary cuts must be finite and non-decreasing".into(),
            ));
        }
        if cuts.len() > u8::MAX as usize - 1 {
            return Err(Error::Config(format!("too many cuts ({})", cuts.len())));
        }
        Ok(DecileBoundaries { cuts })
    }

    pub fn cuts(&self) -> &[f64] {
        &self.cuts
    }

    pub fn num_levels(&self) -> u8 {
        (self.cuts.len() + 1) as u8
    }

    /// `1 + |{k : w > b_k}|`. A weight equal to a cut stays in the lower level.
    pub fn level(&self, w: f64) -> u8 {
        1 + self.cuts.partition_point(|&b| b < w) as u8
    }
}

/// Quantized attention grid of `grid.rows x grid.cols` levels, row-major.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelMatrix {
    pub id: String,
    pub grid: GridSpec,
    pub used_rows: usize,
    pub used_cols: usize,
    levels: Vec<u8>,
}

impl LevelMatrix {
    /// Builds a level grid from the used region only; everything else is a vacancy.
    pub fn from_used(
        id: impl Into<String>,
        grid: GridSpec,
        used_rows: usize,
        used_cols: usize,
        used: &[u8],
    ) -> Result<Self> {
        let id = id.into();
        if used_rows > grid.rows || used_cols > grid.cols {
            return Err(Error::ExceedsGrid {
                id,
                dim: if used_rows > grid.rows {
                    "rows"
                } else {
                    "cols"
                },
                size: used_rows.max(used_cols),
                limit: if used_rows > grid.rows {
                    grid.rows
                } else {
                    grid.cols
                },
            });
        }
        if used.len() != used_rows * used_cols {
            return Err(Error::Config(format!(
                "level matrix `{id}`: {} levels for a {used_rows}x{used_cols} region",
                used.len()
            )));
        }
        if let Some(bad) = used.iter().find(|&&l| l == VACANCY || l > grid.levels) {
            return Err(Error::Config(format!(
                "level matrix `{id}`: level {bad} outside 1..={}",
                grid.levels
            )));
        }
        let mut levels = vec![VACANCY; grid.cells()];
        for r in 0..used_rows {
            levels[r * grid.cols..r * grid.cols + used_cols]
                .copy_from_slice(&used[r * used_cols..(r + 1) * used_cols]);
        }
        Ok(LevelMatrix {
            id,
            grid,
            used_rows,
            used_cols,
            levels,
        })
    }

    pub fn levels(&self) -> &[u8] {
        &self.levels
    }

    /// Level at 0-based (row, col).
    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.levels[row * self.grid.cols + col]
    }

    /// Full grid row, including trailing vacancies.
    pub fn row(&self, row: usize) -> &[u8] {
        &self.levels[row * self.grid.cols..(row + 1) * self.grid.cols]
    }

    /// Levels inside the used region, row-major.
    pub fn used_region(&self) -> Vec<u8> {
        (0..self.used_rows)
            .flat_map(|r| self.row(r)[..self.used_cols].iter().copied())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub path: String,
    pub rows: usize,
    pub cols: usize,
}

/// JSON index of a corpus: grid plus one entry per matrix file. Entry paths
/// are relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub grid: GridSpec,
    pub entries: Vec<ManifestEntry>,
}

impl CorpusManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: CorpusManifest =
            serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        manifest.grid.validate()?;
        let mut seen = HashSet::new();
        for e in &manifest.entries {
            if !seen.insert(e.id.as_str()) {
                return Err(Error::DuplicateId(e.id.clone()));
            }
        }
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Matrices of a corpus together with the grid declared by its manifest.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub grid: GridSpec,
    pub matrices: Vec<AttentionMatrix>,
}

/// Reads a headerless CSV of decimal values, one matrix row per line.
pub fn read_matrix_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::csv(path, e))?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::csv(path, e))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let row = record
            .iter()
            .map(|tok| {
                tok.parse::<f64>().map_err(|_| Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    msg: format!("not a number: `{tok}`"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

/// Writes weights with shortest round-trip formatting, so reading the file
/// back reproduces every value bit for bit.
pub fn write_matrix_csv(path: &Path, m: &AttentionMatrix) -> Result<()> {
    let mut out = String::with_capacity(m.weights.len() * 12);
    for r in 0..m.rows {
        for (c, w) in m.row(r).iter().enumerate() {
            if c > 0 {
                out.push(',');
            }
            write!(out, "{w:?}").expect("write to string");
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn load_entry(base: &Path, entry: &ManifestEntry, grid: &GridSpec) -> Result<AttentionMatrix> {
    let path = base.join(&entry.path);
    let rows = read_matrix_csv(&path)?;
    let mismatch = |found: String| Error::ShapeMismatch {
        path: path.clone(),
        id: entry.id.clone(),
        expected_rows: entry.rows,
        expected_cols: entry.cols,
        found,
    };
    if rows.len() != entry.rows {
        return Err(mismatch(format!("{} rows", rows.len())));
    }
    if let Some((r, row)) = rows.iter().enumerate().find(|(_, r)| r.len() != entry.cols) {
        return Err(mismatch(format!("{} values on row {}", row.len(), r + 1)));
    }
    let m = AttentionMatrix::from_rows(entry.id.clone(), rows)?;
    m.check_fits(grid)?;
    Ok(m)
}

/// Loads every matrix listed in a manifest, in manifest order.
pub fn load_corpus(manifest_path: &Path) -> Result<Corpus> {
    let manifest = CorpusManifest::load(manifest_path)?;
    let base = manifest_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let matrices = manifest
        .entries
        .par_iter()
        .map(|e| load_entry(&base, e, &manifest.grid))
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus {
        grid: manifest.grid,
        matrices,
    })
}

fn file_stem_for(index: usize, id: &str) -> String {
    let clean: String = id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("{index:05}_{clean}.csv")
}

/// Writes one CSV per matrix plus `manifest.json` into `dir`. Returns the
/// manifest path.
pub fn save_corpus(dir: &Path, grid: GridSpec, matrices: &[AttentionMatrix]) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(matrices.len());
    for (i, m) in matrices.iter().enumerate() {
        m.check_fits(&grid)?;
        let name = file_stem_for(i, m.id());
        write_matrix_csv(&dir.join(&name), m)?;
        entries.push(ManifestEntry {
            id: m.id().to_string(),
            path: name,
            rows: m.rows(),
            cols: m.cols(),
        });
    }
    let manifest = CorpusManifest { grid, entries };
    let path = dir.join("manifest.json");
    manifest.save(&path)?;
    Ok(path)
}

/// 1-based rank `ceil(k*n/levels)` of the k-th cut in the sorted pool.
fn cut_rank(k: usize, n: usize, levels: usize) -> usize {
    (k * n).div_ceil(levels)
}

/// Fits equal-frequency boundaries on the pooled weights of all matrices.
///
/// The pool is sorted ascending and cut `k` is the element at 1-based rank
/// `ceil(k*N/L)`.
pub fn compute_decile_boundaries(
    matrices: &[AttentionMatrix],
    grid: &GridSpec,
) -> Result<DecileBoundaries> {
    grid.validate()?;
    let levels = grid.levels as usize;
    let n: usize = matrices.iter().map(|m| m.weights.len()).sum();
    if n < levels {
        return Err(Error::TooFewWeights {
            needed: levels,
            got: n,
        });
    }
    let mut pool: Vec<f64> = Vec::with_capacity(n);
    for m in matrices {
        pool.extend_from_slice(&m.weights);
    }
    pool.par_sort_unstable_by(f64::total_cmp);
    let cuts = (1..levels)
        .map(|k| pool[cut_rank(k, n, levels) - 1])
        .collect();
    DecileBoundaries::new(cuts)
}

/// Maps a matrix onto the level grid, padding everything outside the used
/// region with [`VACANCY`].
pub fn quantize_matrix(
    m: &AttentionMatrix,
    b: &DecileBoundaries,
    grid: &GridSpec,
) -> Result<LevelMatrix> {
    m.check_fits(grid)?;
    if b.num_levels() != grid.levels {
        return Err(Error::Config(format!(
            "boundaries define {} levels, grid expects {}",
            b.num_levels(),
            grid.levels
        )));
    }
    let used: Vec<u8> = m.weights.iter().map(|&w| b.level(w)).collect();
    LevelMatrix::from_used(m.id(), *grid, m.rows(), m.cols(), &used)
}

pub fn quantize_all(
    matrices: &[AttentionMatrix],
    b: &DecileBoundaries,
    grid: &GridSpec,
) -> Result<Vec<LevelMatrix>> {
    matrices
        .par_iter()
        .map(|m| quantize_matrix(m, b, grid))
        .collect()
}

/// Counts of each level `0..=num_levels` over every grid cell of every matrix.
pub fn level_distribution(levels: &[LevelMatrix], num_levels: u8) -> Vec<u64> {
    let mut hist = vec![0u64; num_levels as usize + 1];
    for m in levels {
        for &l in m.levels() {
            hist[l as usize] += 1;
        }
    }
    hist
}
