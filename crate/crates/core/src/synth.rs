//! Synthetic attention-level corpora with a known dependency structure.
//!
//! Every column of every matrix is an independent chain over rows. Rows in
//! the silence prefix sit at level 1. The next `markov_order` rows are drawn
//! uniformly to seed the history, and every later row follows the
//! transition rule, replaced by a uniform draw with probability `noise`.
//! Levels are turned into weights through a fixed table of representative
//! values, one per level, taken from the middle of each decile of a seeded
//! pool.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attention::{save_corpus, AttentionMatrix, GridSpec, LevelMatrix};
use crate::error::{Error, Result};
use crate::seed;

const POOL_SEED: u64 = 0xA77E_4710_4C0D_E5ED;
const POOL_SIZE: usize = 10_000;

/// Next level of a column as a function of the `m` rows before it (oldest first).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TransitionRule {
    /// Repeat the oldest level of the window if it is above `pivot`,
    /// otherwise take the window's median (upper median for even windows).
    StickyHighMedian { pivot: u8 },
    /// Repeat the oldest level of the window.
    Copy,
}

impl Default for TransitionRule {
    fn default() -> Self {
        TransitionRule::StickyHighMedian { pivot: 7 }
    }
}

impl TransitionRule {
    pub fn apply(self, window: &[u8], scratch: &mut Vec<u8>) -> u8 {
        let oldest = window[0];
        match self {
            TransitionRule::Copy => oldest,
            TransitionRule::StickyHighMedian { pivot } => {
                if oldest > pivot {
                    oldest
                } else {
                    scratch.clear();
                    scratch.extend_from_slice(window);
                    scratch.sort_unstable();
                    scratch[window.len() / 2]
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_matrices: usize,
    pub grid: GridSpec,
    pub markov_order: usize,
    pub noise: f64,
    pub silence_prefix: usize,
    #[serde(default)]
    pub rule: TransitionRule,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_matrices: 200,
            grid: GridSpec {
                rows: 100,
                cols: 40,
                levels: 10,
            },
            markov_order: 1,
            noise: 0.05,
            silence_prefix: 10,
            rule: TransitionRule::default(),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.num_matrices == 0 {
            return Err(Error::Config("need at least one matrix".into()));
        }
        if self.markov_order == 0 || self.markov_order >= self.grid.rows {
            return Err(Error::Config(format!(
                "markov order {} must satisfy 1 <= m < {}",
                self.markov_order, self.grid.rows
            )));
        }
        if self.silence_prefix >= self.grid.rows {
            return Err(Error::Config(format!(
                "silence prefix {} must be below the row count {}",
                self.silence_prefix, self.grid.rows
            )));
        }
        if !(0.0..1.0).contains(&self.noise) {
            return Err(Error::Config(format!(
                "noise {} must lie in [0, 1)",
                self.noise
            )));
        }
        if let TransitionRule::StickyHighMedian { pivot } = self.rule {
            if pivot == 0 || pivot >= self.grid.levels {
                return Err(Error::Config(format!(
                    "pivot {pivot} must lie in 1..{}",
                    self.grid.levels
                )));
            }
        }
        Ok(())
    }
}

/// One weight per level, strictly increasing: the middle element of each
/// equal-count slice of a fixed seeded pool.
pub fn representative_weights(levels: u8) -> Vec<f64> {
    let mut rng = seed::rng(POOL_SEED);
    let mut pool: Vec<f64> = (0..POOL_SIZE).map(|_| 1.0 - rng.gen::<f64>()).collect();
    pool.sort_unstable_by(f64::total_cmp);
    let l = levels as usize;
    (1..=l)
        .map(|k| pool[(2 * k - 1) * POOL_SIZE / (2 * l)])
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthCorpus {
    pub config: SynthConfig,
    pub matrices: Vec<AttentionMatrix>,
    /// Generator levels for each matrix, aligned with `matrices`.
    pub truth: Vec<LevelMatrix>,
    pub representative_weights: Vec<f64>,
}

fn generate_levels(cfg: &SynthConfig, index: usize) -> Vec<u8> {
    let grid = cfg.grid;
    let m = cfg.markov_order;
    let top = grid.levels;
    let mut rng = seed::rng(seed::derive(cfg.seed, index as u64));
    let mut out = vec![0u8; grid.cells()];
    let mut column = vec![0u8; grid.rows];
    let mut scratch = Vec::with_capacity(m);
    for j in 0..grid.cols {
        for r in 0..grid.rows {
            column[r] = if r < cfg.silence_prefix {
                1
            } else if r < cfg.silence_prefix + m {
                rng.gen_range(1..=top)
            } else {
                let next = cfg.rule.apply(&column[r - m..r], &mut scratch);
                if rng.gen::<f64>() < cfg.noise {
                    rng.gen_range(1..=top)
                } else {
                    next.clamp(1, top)
                }
            };
        }
        for r in 0..grid.rows {
            out[r * grid.cols + j] = column[r];
        }
    }
    out
}

pub fn generate_corpus(cfg: &SynthConfig) -> Result<SynthCorpus> {
    cfg.validate()?;
    let grid = cfg.grid;
    let reps = representative_weights(grid.levels);
    let pairs = (0..cfg.num_matrices)
        .into_par_iter()
        .map(|i| {
            let id = format!("synth-{i:05}");
            let levels = generate_levels(cfg, i);
            let weights = levels.iter().map(|&l| reps[l as usize - 1]).collect();
            let matrix = AttentionMatrix::new(id.clone(), grid.rows, grid.cols, weights)?;
            let truth = LevelMatrix::from_used(id, grid, grid.rows, grid.cols, &levels)?;
            Ok((matrix, truth))
        })
        .collect::<Result<Vec<_>>>()?;
    let (matrices, truth) = pairs.into_iter().unzip();
    Ok(SynthCorpus {
        config: cfg.clone(),
        matrices,
        truth,
        representative_weights: reps,
    })
}

/// Whether equal-frequency boundaries fitted on weights drawn from this level
/// histogram (index `k-1` for level `k`) put every level back where it was.
///
/// With one weight value per level, cut `k` lands at rank `ceil(k*N/L)`, and
/// recovery holds exactly when that rank falls inside level `k`.
pub fn decile_compatible(counts: &[u64]) -> bool {
    let l = counts.len() as u64;
    let n: u64 = counts.iter().sum();
    let mut below = 0u64;
    for (k, &c) in counts
        .iter()
        .enumerate()
        .take(counts.len().saturating_sub(1))
    {
        let rank = ((k as u64 + 1) * n).div_ceil(l);
        if !(below < rank && rank <= below + c) {
            return false;
        }
        below += c;
    }
    true
}

impl SynthCorpus {
    /// Level histogram of the generator truth, levels `1..=L`.
    pub fn truth_histogram(&self) -> Vec<u64> {
        let mut hist = vec![0u64; self.config.grid.levels as usize];
        for m in &self.truth {
            for &l in m.levels() {
                hist[l as usize - 1] += 1;
            }
        }
        hist
    }

    /// Writes matrices, `manifest.json` and `truth.json` into `dir`; returns
    /// the manifest path.
    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        let manifest = save_corpus(dir, self.config.grid, &self.matrices)?;
        let truth = TruthFile {
            config: self.config.clone(),
            representative_weights: self.representative_weights.clone(),
            matrices: self
                .truth
                .iter()
                .map(|m| TruthMatrix {
                    id: m.id.clone(),
                    levels: (0..m.used_rows)
                        .map(|r| m.row(r)[..m.used_cols].to_vec())
                        .collect(),
                })
                .collect(),
        };
        let path = dir.join("truth.json");
        let text = serde_json::to_string(&truth).map_err(|e| Error::json(&path, e))?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(manifest)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthMatrix {
    pub id: String,
    pub levels: Vec<Vec<u8>>,
}

/// Generator record written next to a synthetic corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthFile {
    pub config: SynthConfig,
    pub representative_weights: Vec<f64>,
    pub matrices: Vec<TruthMatrix>,
}

impl TruthFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }
}
