//! End-to-end analysis: load, fit boundaries, quantize, then for each window
//! size build, split, train, evaluate and explain. Produces a [`RunReport`]
//! and the per-figure CSV tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::attention::{
    compute_decile_boundaries, level_distribution, load_corpus, quantize_all, Corpus,
    DecileBoundaries, GridSpec,
};
use crate::dataset::{build_examples, shuffle_split, BuildConfig};
use crate::error::{Error, Result};
use crate::explain::{explain, FeatureLayout};
use crate::forest::{evaluate_by_row, train_forest, TrainConfig};

pub const REPORT_FILE: &str = "report.json";
pub const TIMINGS_FILE: &str = "timings.json";
pub const FIG1_FILE: &str = "fig1_row_accuracy.csv";
pub const FIG2_FILE: &str = "fig2_level_distribution.csv";
pub const FIG3_FILE: &str = "fig3_accuracy_vs_p.csv";
pub const FIG4_FILE: &str = "fig4_condition_frequencies.csv";
pub const FIG5_FILE: &str = "fig5_influence_by_interval.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub p_list: Vec<usize>,
    /// Window size inside is ignored; each entry of `p_list` replaces it.
    pub build: BuildConfig,
    pub train: TrainConfig,
    /// Reuse these boundaries instead of fitting on the input corpus.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundaries: Option<DecileBoundaries>,
}

impl PipelineConfig {
    pub fn validate(&self, grid: &GridSpec) -> Result<()> {
        if self.p_list.is_empty() {
            return Err(Error::Config("p list is empty".into()));
        }
        for &p in &self.p_list {
            BuildConfig {
                p,
                ..self.build.clone()
            }
            .validate(grid)?;
        }
        self.train.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowPoint {
    pub row_id: u32,
    pub n: u64,
    pub accuracy: f64,
}

/// Results for one window size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowResult {
    pub p: usize,
    pub train_examples: usize,
    pub eval_examples: usize,
    pub overall_accuracy: f64,
    /// Rows without evaluation examples are left out.
    pub per_row_accuracy: Vec<RowPoint>,
    pub num_conditions: usize,
    /// Condition counts for levels `1..=L`.
    pub condition_frequencies: Vec<u64>,
    /// Average influence for intervals `1..=p`.
    pub influence_by_interval: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: PipelineConfig,
    pub grid: GridSpec,
    pub matrices: usize,
    pub boundaries: Vec<f64>,
    /// Counts of levels `0..=L` over all grid cells (0 = vacancy).
    pub level_distribution: Vec<u64>,
    pub accuracy_vs_p: BTreeMap<usize, f64>,
    pub windows: Vec<WindowResult>,
    /// Wall-clock times; kept out of `report.json` so reports stay reproducible.
    #[serde(skip)]
    pub timings: Vec<StageTiming>,
}

fn staged<T>(stage: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Stage {
        stage,
        source: Box::new(e),
    })
}

struct Clock {
    timings: Vec<StageTiming>,
    last: Instant,
}

impl Clock {
    fn new() -> Self {
        Clock {
            timings: Vec::new(),
            last: Instant::now(),
        }
    }

    fn lap(&mut self, stage: String) {
        let now = Instant::now();
        self.timings.push(StageTiming {
            stage,
            seconds: (now - self.last).as_secs_f64(),
        });
        self.last = now;
    }
}

/// Runs every stage after loading on an in-memory corpus.
pub fn analyze(corpus: &Corpus, cfg: &PipelineConfig) -> Result<RunReport> {
    let grid = corpus.grid;
    staged("config", cfg.validate(&grid))?;
    let mut clock = Clock::new();

    let boundaries = match &cfg.boundaries {
        Some(b) => b.clone(),
        None => staged(
            "boundaries",
            compute_decile_boundaries(&corpus.matrices, &grid),
        )?,
    };
    clock.lap("boundaries".into());
    let levels = staged(
        "quantize",
        quantize_all(&corpus.matrices, &boundaries, &grid),
    )?;
    let level_hist = level_distribution(&levels, grid.levels);
    clock.lap("quantize".into());

    let mut windows = Vec::with_capacity(cfg.p_list.len());
    for &p in &cfg.p_list {
        let build = BuildConfig {
            p,
            ..cfg.build.clone()
        };
        let dataset = staged("build", build_examples(&levels, &build))?;
        let (train, eval) = staged("split", shuffle_split(&dataset, &build))?;
        drop(dataset);
        clock.lap(format!("build p={p}"));
        let forest = staged("train", train_forest(&train, &cfg.train))?;
        clock.lap(format!("train p={p}"));
        let evaluation = staged("evaluate", evaluate_by_row(&forest, &eval))?;
        clock.lap(format!("evaluate p={p}"));
        let layout = FeatureLayout {
            p,
            grid_cols: grid.cols,
            feature_mode: build.feature_mode,
        };
        let table = staged("explain", explain(&forest, &layout, grid.levels))?;
        clock.lap(format!("explain p={p}"));
        windows.push(WindowResult {
            p,
            train_examples: train.len(),
            eval_examples: eval.len(),
            overall_accuracy: evaluation.overall(),
            per_row_accuracy: evaluation
                .populated()
                .map(|r| RowPoint {
                    row_id: r.row_id,
                    n: r.total,
                    accuracy: r.accuracy().unwrap_or(0.0),
                })
                .collect(),
            num_conditions: table.num_conditions,
            condition_frequencies: table.level_frequencies,
            influence_by_interval: table.per_interval,
        });
    }

    Ok(RunReport {
        config: cfg.clone(),
        grid,
        matrices: corpus.matrices.len(),
        boundaries: boundaries.cuts().to_vec(),
        level_distribution: level_hist,
        accuracy_vs_p: windows.iter().map(|w| (w.p, w.overall_accuracy)).collect(),
        windows,
        timings: clock.timings,
    })
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn window(&self, p: usize) -> Option<&WindowResult> {
        self.windows.iter().find(|w| w.p == p)
    }
}

fn fig_tables(r: &RunReport) -> Vec<(&'static str, String)> {
    let mut fig1 = String::from("p,row_id,n,accuracy\n");
    let mut fig3 = String::from("p,accuracy\n");
    let mut fig4 = String::from("p,level,count\n");
    let mut fig5 = String::from("p,interval,score\n");
    for w in &r.windows {
        for pt in w.per_row_accuracy.iter().filter(|pt| pt.n > 0) {
            writeln!(fig1, "{},{},{},{}", w.p, pt.row_id, pt.n, pt.accuracy).unwrap();
        }
        writeln!(fig3, "{},{}", w.p, w.overall_accuracy).unwrap();
        for (k, c) in w.condition_frequencies.iter().enumerate() {
            writeln!(fig4, "{},{},{}", w.p, k + 1, c).unwrap();
        }
        for (k, s) in w.influence_by_interval.iter().enumerate() {
            writeln!(fig5, "{},{},{}", w.p, k + 1, s).unwrap();
        }
    }
    let mut fig2 = String::from("level,count\n");
    for (level, c) in r.level_distribution.iter().enumerate() {
        writeln!(fig2, "{level},{c}").unwrap();
    }
    vec![
        (FIG1_FILE, fig1),
        (FIG2_FILE, fig2),
        (FIG3_FILE, fig3),
        (FIG4_FILE, fig4),
        (FIG5_FILE, fig5),
    ]
}

fn write_all(out_dir: &Path, files: &[(&str, String)]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    for (name, body) in files {
        let path = out_dir.join(name);
        if let Err(e) = fs::write(&path, body) {
            for p in &written {
                let _ = fs::remove_file(p);
            }
            return Err(Error::io(path, e));
        }
        written.push(path);
    }
    Ok(written)
}

/// Writes the five figure tables into `out_dir`.
pub fn emit_figure_tables(r: &RunReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    write_all(out_dir, &fig_tables(r))
}

/// Writes `report.json`, `timings.json` and the figure tables. Either all
/// files are written or none are left behind.
pub fn write_outputs(r: &RunReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let timings = serde_json::to_string_pretty(&r.timings).expect("timings serialize") + "\n";
    let mut files = vec![(REPORT_FILE, r.to_json()), (TIMINGS_FILE, timings)];
    files.extend(fig_tables(r));
    write_all(out_dir, &files)
}

/// Loads the manifest, runs [`analyze`], and writes all outputs when
/// `out_dir` is given.
pub fn run_pipeline(
    manifest_path: &Path,
    cfg: &PipelineConfig,
    out_dir: Option<&Path>,
) -> Result<RunReport> {
    let started = Instant::now();
    let corpus = staged("load", load_corpus(manifest_path))?;
    let load_secs = started.elapsed().as_secs_f64();
    let mut report = analyze(&corpus, cfg)?;
    report.timings.insert(
        0,
        StageTiming {
            stage: "load".into(),
            seconds: load_secs,
        },
    );
    if let Some(dir) = out_dir {
        staged("write", write_outputs(&report, dir))?;
    }
    Ok(report)
}
