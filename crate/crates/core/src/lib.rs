//! Explaining how attention states influence later attention states.
//!
//! Attention weight matrices are quantized into equal-frequency levels and
//! padded onto a fixed grid ([`attention`]). Each cell becomes a binary
//! example labelled by whether its level is high, with the preceding rows
//! as features ([`dataset`]). A bagged CART forest learns the labels
//! ([`forest`]); its decision conditions are then harvested and scored by
//! level and by time interval ([`explain`]). [`synth`] generates corpora
//! with known dependency structure, and [`report`] chains all stages.

pub mod attention;
pub mod dataset;
pub mod error;
pub mod explain;
pub mod forest;
pub mod report;
pub mod seed;
pub mod synth;

pub use attention::{
    compute_decile_boundaries, level_distribution, load_corpus, quantize_matrix, save_corpus,
    AttentionMatrix, Corpus, CorpusManifest, DecileBoundaries, GridSpec, LevelMatrix,
    ManifestEntry,
};
pub use dataset::{
    build_examples, shuffle_split, BuildConfig, Dataset, Example, FeatureMode, Label,
};
pub use error::{Error, Result};
pub use explain::{
    condition_level_frequencies, explain, harvest_conditions, influence_by_interval,
    ConditionRecord, FeatureLayout, InfluenceTable,
};
pub use forest::{
    best_split, evaluate_by_row, train_forest, train_tree, FeatureSubsample, Forest, RowEvaluation,
    TrainConfig,
};
pub use report::{analyze, emit_figure_tables, run_pipeline, PipelineConfig, RunReport};
pub use synth::{generate_corpus, SynthConfig, SynthCorpus, TransitionRule};
