//! Command-line front end: each subcommand runs one stage on files written
//! by the previous one, and `pipeline` runs them all.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use attnexplain::attention::quantize_all;
use attnexplain::dataset::{read_dump, write_dump, DatasetMeta};
use attnexplain::report::{write_outputs, RowPoint, StageTiming};
use attnexplain::{
    analyze, build_examples, compute_decile_boundaries, evaluate_by_row, explain, generate_corpus,
    level_distribution, load_corpus, shuffle_split, train_forest, BuildConfig, Corpus,
    DecileBoundaries, FeatureLayout, FeatureMode, FeatureSubsample, Forest, GridSpec, LevelMatrix,
    PipelineConfig, SynthConfig, TrainConfig, TransitionRule,
};
use clap::{Args, Parser, Subcommand, ValueEnum};

const BOUNDARIES_FILE: &str = "boundaries.json";
const LEVELS_FILE: &str = "levels.json";
const TRAIN_DUMP: &str = "train.csv";
const EVAL_DUMP: &str = "eval.csv";
const META_FILE: &str = "dataset.json";
const FOREST_FILE: &str = "forest.json";
const EVALUATION_FILE: &str = "evaluation.json";
const EXPLANATION_FILE: &str = "explanation.json";

#[derive(Parser)]
#[command(
    name = "attnexplain",
    version,
    about = "Explain attention dynamics with random forests"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus with known level dynamics.
    Synth(SynthArgs),
    /// Fit decile boundaries and quantize a corpus into level grids.
    Quantize(QuantizeArgs),
    /// Turn level grids into train and evaluation example dumps.
    Build(BuildArgs),
    /// Train a forest on an example dump.
    Train(TrainArgs),
    /// Harvest and score the conditions of a trained forest.
    Explain(ExplainArgs),
    /// Run every stage for each window size and write the report.
    Pipeline(PipelineArgs),
}

#[derive(Args, Default)]
struct GridArgs {
    /// Override the grid row count.
    #[arg(long)]
    grid_rows: Option<usize>,
    /// Override the grid column count.
    #[arg(long)]
    grid_cols: Option<usize>,
    /// Override the number of levels.
    #[arg(long)]
    levels: Option<u8>,
}

impl GridArgs {
    fn apply(&self, mut grid: GridSpec) -> GridSpec {
        grid.rows = self.grid_rows.unwrap_or(grid.rows);
        grid.cols = self.grid_cols.unwrap_or(grid.cols);
        grid.levels = self.levels.unwrap_or(grid.levels);
        grid
    }

    fn is_set(&self) -> bool {
        self.grid_rows.is_some() || self.grid_cols.is_some() || self.levels.is_some()
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    RowConcat,
    ColumnWindow,
}

impl From<ModeArg> for FeatureMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::RowConcat => FeatureMode::RowConcat,
            ModeArg::ColumnWindow => FeatureMode::ColumnWindow,
        }
    }
}

#[derive(Args)]
struct ExampleArgs {
    /// Levels above this count as high.
    #[arg(long, default_value_t = 5)]
    threshold: u8,
    #[arg(long, value_enum, default_value = "row-concat")]
    feature_mode: ModeArg,
    /// Fraction of examples used for training.
    #[arg(long, default_value_t = 0.8)]
    split: f64,
}

#[derive(Args)]
struct ForestArgs {
    #[arg(long, default_value_t = 100)]
    trees: usize,
    #[arg(long, default_value_t = 64)]
    max_depth: usize,
    #[arg(long, default_value_t = 64)]
    min_leaf: usize,
    /// Features tried per split: `sqrt`, `all`, or a count.
    #[arg(long, default_value = "sqrt")]
    features: FeatureSubsample,
}

impl ForestArgs {
    fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            num_trees: self.trees,
            max_depth: self.max_depth,
            min_leaf: self.min_leaf,
            feature_subsample: self.features,
            seed,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum RuleArg {
    StickyHighMedian,
    Copy,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    matrices: usize,
    /// Rows each generated level depends on.
    #[arg(long, default_value_t = 1)]
    order: usize,
    /// Probability of replacing a level with a uniform draw.
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    #[arg(long, default_value_t = 10)]
    silence_prefix: usize,
    #[arg(long, value_enum, default_value = "sticky-high-median")]
    rule: RuleArg,
    /// Levels above this repeat themselves under the sticky rule.
    #[arg(long, default_value_t = 7)]
    pivot: u8,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    grid: GridArgs,
}

#[derive(Args)]
struct QuantizeArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Reuse boundaries from an earlier run instead of fitting them.
    #[arg(long)]
    boundaries: Option<PathBuf>,
    #[command(flatten)]
    grid: GridArgs,
}

#[derive(Args)]
struct BuildArgs {
    /// Level grids written by `quantize`.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Window size in rows.
    #[arg(long, default_value_t = 4)]
    p: usize,
    #[command(flatten)]
    examples: ExampleArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    /// Training dump written by `build`.
    #[arg(long)]
    train: PathBuf,
    /// Optional evaluation dump; per-row accuracy is written when given.
    #[arg(long)]
    eval: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    forest: ForestArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ExplainArgs {
    #[arg(long)]
    forest: PathBuf,
    /// Dataset description written by `build`; supplies the feature layout.
    #[arg(long)]
    meta: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    feature_mode: Option<ModeArg>,
    #[command(flatten)]
    grid: GridArgs,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Window sizes, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
    p: Vec<usize>,
    #[arg(long)]
    boundaries: Option<PathBuf>,
    #[command(flatten)]
    examples: ExampleArgs,
    #[command(flatten)]
    forest: ForestArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    grid: GridArgs,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => synth(a).context("synth"),
        Command::Quantize(a) => quantize(a).context("quantize"),
        Command::Build(a) => build(a).context("build"),
        Command::Train(a) => train(a).context("train"),
        Command::Explain(a) => run_explain(a).context("explain"),
        Command::Pipeline(a) => pipeline(a).context("pipeline"),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", chain_message(&e));
            ExitCode::FAILURE
        }
    }
}

/// Joins the error chain, skipping causes whose text a parent already includes.
fn chain_message(e: &anyhow::Error) -> String {
    let mut msg = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if msg.ends_with(&text) {
            continue;
        }
        if !msg.is_empty() {
            msg.push_str(": ");
        }
        msg.push_str(&text);
    }
    msg
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Loads a corpus and applies grid overrides, rechecking that every matrix fits.
fn load_with_grid(manifest: &Path, overrides: &GridArgs) -> Result<Corpus> {
    let mut corpus = load_corpus(manifest)?;
    if overrides.is_set() {
        corpus.grid = overrides.apply(corpus.grid);
        corpus.grid.validate()?;
        for m in &corpus.matrices {
            m.check_fits(&corpus.grid)?;
        }
    }
    Ok(corpus)
}

fn synth(a: SynthArgs) -> Result<()> {
    let defaults = SynthConfig::default();
    let cfg = SynthConfig {
        num_matrices: a.matrices,
        grid: a.grid.apply(defaults.grid),
        markov_order: a.order,
        noise: a.noise,
        silence_prefix: a.silence_prefix,
        rule: match a.rule {
            RuleArg::StickyHighMedian => TransitionRule::StickyHighMedian { pivot: a.pivot },
            RuleArg::Copy => TransitionRule::Copy,
        },
        seed: a.seed,
    };
    let corpus = generate_corpus(&cfg)?;
    create_dir(&a.out)?;
    let manifest = corpus.save(&a.out)?;
    println!(
        "wrote {} matrices, manifest {}",
        corpus.matrices.len(),
        manifest.display()
    );
    Ok(())
}

fn quantize(a: QuantizeArgs) -> Result<()> {
    let corpus = load_with_grid(&a.manifest, &a.grid)?;
    let boundaries = match &a.boundaries {
        Some(path) => read_json::<DecileBoundaries>(path)?,
        None => compute_decile_boundaries(&corpus.matrices, &corpus.grid)?,
    };
    let levels = quantize_all(&corpus.matrices, &boundaries, &corpus.grid)?;
    create_dir(&a.out)?;
    write_json(&a.out.join(BOUNDARIES_FILE), &boundaries)?;
    write_json(&a.out.join(LEVELS_FILE), &levels)?;
    let hist = level_distribution(&levels, corpus.grid.levels);
    println!("quantized {} matrices; level counts {hist:?}", levels.len());
    Ok(())
}

fn build(a: BuildArgs) -> Result<()> {
    let levels: Vec<LevelMatrix> = read_json(&a.input)?;
    let cfg = BuildConfig {
        p: a.p,
        high_threshold: a.examples.threshold,
        feature_mode: a.examples.feature_mode.into(),
        split_fraction: a.examples.split,
        seed: a.seed,
    };
    let dataset = build_examples(&levels, &cfg)?;
    let (train, eval) = shuffle_split(&dataset, &cfg)?;
    create_dir(&a.out)?;
    write_dump(&a.out.join(TRAIN_DUMP), &train)?;
    write_dump(&a.out.join(EVAL_DUMP), &eval)?;
    let meta: &DatasetMeta = dataset.meta().context("dataset lost its metadata")?;
    write_json(&a.out.join(META_FILE), meta)?;
    println!(
        "{} examples of {} features: {} train, {} eval",
        dataset.len(),
        dataset.feature_dim(),
        train.len(),
        eval.len()
    );
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let data = read_dump(&a.train)?;
    let forest = train_forest(&data, &a.forest.config(a.seed))?;
    create_dir(&a.out)?;
    forest.save(&a.out.join(FOREST_FILE))?;
    println!(
        "trained {} trees on {} examples",
        forest.trees().len(),
        data.len()
    );
    if let Some(path) = &a.eval {
        let eval = read_dump(path)?;
        let result = evaluate_by_row(&forest, &eval)?;
        let rows: Vec<RowPoint> = result
            .populated()
            .map(|r| RowPoint {
                row_id: r.row_id,
                n: r.total,
                accuracy: r.accuracy().unwrap_or(0.0),
            })
            .collect();
        write_json(
            &a.out.join(EVALUATION_FILE),
            &serde_json::json!({
                "overall_accuracy": result.overall(),
                "examples": result.total,
                "per_row_accuracy": rows,
            }),
        )?;
        println!(
            "eval accuracy {:.4} over {} examples",
            result.overall(),
            result.total
        );
    }
    Ok(())
}

fn run_explain(a: ExplainArgs) -> Result<()> {
    let forest = Forest::load(&a.forest)?;
    let meta: Option<DatasetMeta> = a.meta.as_deref().map(read_json).transpose()?;
    let grid = match &meta {
        Some(m) => a.grid.apply(m.grid),
        None => a.grid.apply(GridSpec::default()),
    };
    let (p, mode) = match (&meta, a.p, a.feature_mode) {
        (_, Some(p), Some(mode)) => (p, mode.into()),
        (Some(m), p, mode) => (
            p.unwrap_or(m.config.p),
            mode.map_or(m.config.feature_mode, Into::into),
        ),
        (None, ..) => bail!("need --meta, or both --p and --feature-mode"),
    };
    let layout = FeatureLayout {
        p,
        grid_cols: grid.cols,
        feature_mode: mode,
    };
    let table = explain(&forest, &layout, grid.levels)?;
    create_dir(&a.out)?;
    table.save(&a.out.join(EXPLANATION_FILE))?;
    println!(
        "{} conditions; influence by interval {:?}",
        table.num_conditions, table.per_interval
    );
    Ok(())
}

fn pipeline(a: PipelineArgs) -> Result<()> {
    let boundaries = a
        .boundaries
        .as_deref()
        .map(read_json::<DecileBoundaries>)
        .transpose()?;
    let cfg = PipelineConfig {
        p_list: a.p.clone(),
        build: BuildConfig {
            p: a.p.first().copied().unwrap_or(1),
            high_threshold: a.examples.threshold,
            feature_mode: a.examples.feature_mode.into(),
            split_fraction: a.examples.split,
            seed: a.seed,
        },
        train: a.forest.config(a.seed),
        boundaries,
    };
    let started = Instant::now();
    let corpus = load_with_grid(&a.manifest, &a.grid).context("load stage failed")?;
    let load_secs = started.elapsed().as_secs_f64();
    let mut report = analyze(&corpus, &cfg)?;
    report.timings.insert(
        0,
        StageTiming {
            stage: "load".into(),
            seconds: load_secs,
        },
    );
    create_dir(&a.out)?;
    let written = write_outputs(&report, &a.out).context("write stage failed")?;
    for (p, acc) in &report.accuracy_vs_p {
        println!("p={p}: accuracy {acc:.4}");
    }
    println!("wrote {} files to {}", written.len(), a.out.display());
    Ok(())
}
