//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits nonzero if any criterion fails.
//!
//! Run with `cargo test -p attnexplain-core --test acceptance`.

use std::collections::HashMap;
use std::fs;
use std::time::{Duration, Instant};

use attnexplain::attention::{quantize_all, AttentionMatrix, GridSpec};
use attnexplain::dataset::{
    build_examples, shuffle_split, BuildConfig, Dataset, FeatureMode, Label,
};
use attnexplain::explain::{
    condition_level_frequencies, explain, harvest_conditions, FeatureLayout,
};
use attnexplain::forest::{
    best_split, evaluate_by_row, train_forest, FeatureSubsample, Forest, Node, TrainConfig,
};
use attnexplain::report::{analyze, run_pipeline, PipelineConfig, FIG2_FILE, REPORT_FILE};
use attnexplain::synth::{generate_corpus, SynthConfig, TransitionRule};
use attnexplain::{compute_decile_boundaries, Corpus};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MAX_DEPTH: usize = 64;
const MIN_LEAF: usize = 64;
const NUM_TREES: usize = 100;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn synth_cfg(order: usize) -> SynthConfig {
    SynthConfig {
        num_matrices: 200,
        grid: GridSpec::new(100, 40, 10).unwrap(),
        markov_order: order,
        noise: 0.05,
        silence_prefix: 10,
        rule: TransitionRule::StickyHighMedian { pivot: 7 },
        seed: 2024,
    }
}

fn train_cfg() -> TrainConfig {
    TrainConfig {
        num_trees: NUM_TREES,
        max_depth: MAX_DEPTH,
        min_leaf: MIN_LEAF,
        feature_subsample: FeatureSubsample::Sqrt,
        seed: 17,
    }
}

fn build_cfg(p: usize) -> BuildConfig {
    BuildConfig {
        p,
        high_threshold: 5,
        feature_mode: FeatureMode::ColumnWindow,
        split_fraction: 0.8,
        seed: 99,
    }
}

// ---------------------------------------------------------------- quantiles

fn quantile_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10_000);
    let weights: Vec<f64> = (0..10_000).map(|_| 1.0 - rng.gen::<f64>()).collect();
    let grid = GridSpec::new(1, 10_000, 10).unwrap();
    let start = Instant::now();
    let m = AttentionMatrix::new("u", 1, 10_000, weights.clone()).unwrap();
    let b = compute_decile_boundaries(std::slice::from_ref(&m), &grid).unwrap();
    let mut got = [0usize; 10];
    for &w in &weights {
        got[b.level(w) as usize - 1] += 1;
    }
    let elapsed = start.elapsed();

    // Oracle: rank every weight in an independently sorted copy; rank r falls
    // in the first bucket k with r <= ceil(k*N/10).
    let mut sorted = weights.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    let mut expected = [0usize; 10];
    for r in 1..=n {
        let k = (1..=10).find(|&k| r <= (k * n).div_ceil(10)).unwrap();
        expected[k - 1] += 1;
    }
    let spread = got.iter().max().unwrap() - got.iter().min().unwrap();
    outcome(
        got == expected && spread <= 1 && elapsed < Duration::from_secs(1),
        format!("occupancies {got:?}, oracle {expected:?}, spread {spread}, {elapsed:.2?}"),
    )
}

// ------------------------------------------------------------- split search

fn gini_oracle(low: usize, high: usize) -> f64 {
    let n = (low + high) as f64;
    let pl = low as f64 / n;
    let ph = high as f64 / n;
    1.0 - pl * pl - ph * ph
}

/// Exhaustive search: every feature, every midpoint between consecutive
/// distinct values, partitioned directly.
fn brute_force(
    rows: &[(Vec<u8>, Label)],
    features: &[usize],
    min_leaf: usize,
) -> Option<(usize, f64, f64)> {
    let low = rows.iter().filter(|r| r.1 == Label::Low).count();
    let parent = gini_oracle(low, rows.len() - low);
    let mut best: Option<(usize, f64, f64)> = None;
    let mut feats = features.to_vec();
    feats.sort_unstable();
    for &f in &feats {
        let mut values: Vec<u8> = rows.iter().map(|r| r.0[f]).collect();
        values.sort_unstable();
        values.dedup();
        for pair in values.windows(2) {
            let t = (pair[0] as f64 + pair[1] as f64) / 2.0;
            let (left, right): (Vec<_>, Vec<_>) = rows.iter().partition(|r| (r.0[f] as f64) <= t);
            if left.len() < min_leaf || right.len() < min_leaf {
                continue;
            }
            let ll = left.iter().filter(|r| r.1 == Label::Low).count();
            let rl = right.iter().filter(|r| r.1 == Label::Low).count();
            let n = rows.len() as f64;
            let gain = parent
                - left.len() as f64 / n * gini_oracle(ll, left.len() - ll)
                - right.len() as f64 / n * gini_oracle(rl, right.len() - rl);
            let better = match best {
                None => gain > 1e-12,
                Some((_, _, g)) => gain > g + 1e-12,
            };
            if better {
                best = Some((f, t, gain));
            }
        }
    }
    best
}

fn split_search() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    let start = Instant::now();
    let mut mismatches = 0;
    let mut found = 0;
    for _ in 0..200 {
        let n = rng.gen_range(1..=30);
        let d = rng.gen_range(1..=5);
        let span = rng.gen_range(1..=11u8);
        let rows: Vec<(Vec<u8>, Label)> = (0..n)
            .map(|_| {
                let f = (0..d).map(|_| rng.gen_range(0..span)).collect();
                let l = if rng.gen_bool(0.5) {
                    Label::High
                } else {
                    Label::Low
                };
                (f, l)
            })
            .collect();
        let candidates: Vec<usize> = (0..d).filter(|_| rng.gen_bool(0.8)).collect();
        let min_leaf = rng.gen_range(1..=3);
        let data = Dataset::from_rows(rows.clone()).unwrap();
        let indices: Vec<u32> = (0..n as u32).collect();
        let got = best_split(&data, &indices, &candidates, min_leaf);
        let want = brute_force(&rows, &candidates, min_leaf);
        let same = match (got, want) {
            (None, None) => true,
            (Some(s), Some((f, t, g))) => {
                found += 1;
                s.feature == f && s.threshold == t && (s.gain - g).abs() <= 1e-12
            }
            _ => false,
        };
        if !same {
            mismatches += 1;
        }
    }
    let elapsed = start.elapsed();
    outcome(
        mismatches == 0 && elapsed < Duration::from_secs(10),
        format!("200 instances ({found} with a split), {mismatches} mismatches, {elapsed:.2?}"),
    )
}

// --------------------------------------------------------- shared fixtures

struct OrderOneRun {
    corpus: Corpus,
    forest: Forest,
    eval: Dataset,
    elapsed: Duration,
}

fn order_one_run() -> OrderOneRun {
    let start = Instant::now();
    let synth = generate_corpus(&synth_cfg(1)).unwrap();
    let grid = synth.config.grid;
    let corpus = Corpus {
        grid,
        matrices: synth.matrices,
    };
    let b = compute_decile_boundaries(&corpus.matrices, &grid).unwrap();
    let levels = quantize_all(&corpus.matrices, &b, &grid).unwrap();
    let data = build_examples(&levels, &build_cfg(1)).unwrap();
    let (train, eval) = shuffle_split(&data, &build_cfg(1)).unwrap();
    let forest = train_forest(&train, &train_cfg()).unwrap();
    OrderOneRun {
        corpus,
        forest,
        eval,
        elapsed: start.elapsed(),
    }
}

// ------------------------------------------------------- structural bounds

fn structural_bounds(forest: &Forest) -> Outcome {
    let cfg = forest.config();
    let mut deepest = 0;
    let mut smallest_leaf = usize::MAX;
    let mut violations = 0;
    for tree in forest.trees() {
        let nodes = tree.nodes();
        for node in nodes {
            deepest = deepest.max(node.depth());
            if node.depth() > cfg.max_depth {
                violations += 1;
            }
            if let Node::Split {
                left,
                right,
                counts,
                ..
            } = node
            {
                let parent = (counts[0] + counts[1]) as usize;
                for child in [&nodes[*left], &nodes[*right]] {
                    let c = child.counts();
                    let size = (c[0] + c[1]) as usize;
                    if child.is_leaf() {
                        smallest_leaf = smallest_leaf.min(size);
                    }
                    if parent >= 2 * cfg.min_leaf && size < cfg.min_leaf {
                        violations += 1;
                    }
                }
            }
        }
    }
    outcome(
        violations == 0 && cfg.max_depth == MAX_DEPTH && cfg.min_leaf == MIN_LEAF,
        format!(
            "{} trees, deepest node {deepest} (limit {}), smallest leaf {smallest_leaf} (limit {}), {violations} violations",
            forest.trees().len(),
            cfg.max_depth,
            cfg.min_leaf
        ),
    )
}

// ------------------------------------------------------------ order-1 run

fn order_one_recovery(run: &OrderOneRun) -> Outcome {
    let start = Instant::now();
    let evaluation = evaluate_by_row(&run.forest, &run.eval).unwrap();
    let layout = FeatureLayout {
        p: 1,
        grid_cols: run.corpus.grid.cols,
        feature_mode: FeatureMode::ColumnWindow,
    };
    let table = explain(&run.forest, &layout, 10).unwrap();
    let per_interval = &table.per_interval;
    let interval_max =
        per_interval[0] > 0.0 && per_interval.iter().skip(1).all(|&s| per_interval[0] > s);
    let silence: Vec<f64> = evaluation
        .rows
        .iter()
        .filter(|r| r.row_id <= 10)
        .filter_map(|r| r.accuracy())
        .collect();
    let silence_ok = silence.len() == 10 && silence.iter().all(|&a| a >= 0.95);
    let elapsed = run.elapsed + start.elapsed();
    let overall = evaluation.overall();
    outcome(
        overall >= 0.90 && interval_max && silence_ok && elapsed < Duration::from_secs(300),
        format!(
            "accuracy {overall:.4} (>= 0.90), per_interval {per_interval:?}, silence rows min accuracy {:.4} (>= 0.95), {elapsed:.2?}",
            silence.iter().cloned().fold(f64::INFINITY, f64::min)
        ),
    )
}
fn condition_signature(run: &OrderOneRun) -> Outcome {
    let layout = FeatureLayout {
        p: 1,
        grid_cols: run.corpus.grid.cols,
        feature_mode: FeatureMode::ColumnWindow,
    };
    let records = harvest_conditions(&run.forest, &layout).unwrap();
    let hist = condition_level_frequencies(&records, 10);
    let total: u64 = hist.iter().sum();
    let high: u64 = hist[7..10].iter().sum();
    let share = high as f64 / total.max(1) as f64;
    outcome(
        share >= 0.40,
        format!("levels 8-10 hold {high}/{total} = {share:.3} of conditions (>= 0.40), histogram {hist:?}"),
    )
}

// ------------------------------------------------------------ order-4 run

fn order_four_recovery() -> Outcome {
    let start = Instant::now();
    let synth = generate_corpus(&synth_cfg(4)).unwrap();
    let corpus = Corpus {
        grid: synth.config.grid,
        matrices: synth.matrices,
    };
    let report = analyze(
        &corpus,
        &PipelineConfig {
            p_list: (1..=8).collect(),
            build: build_cfg(1),
            train: train_cfg(),
            boundaries: None,
        },
    )
    .unwrap();
    let elapsed = start.elapsed();
    let acc = |p: usize| report.accuracy_vs_p[&p];
    let rise = acc(4) - acc(1);
    let drift = (5..=8).map(|p| (acc(p) - acc(4)).abs()).fold(0.0, f64::max);
    let curve: Vec<String> = (1..=8).map(|p| format!("{p}:{:.4}", acc(p))).collect();
    outcome(
        rise >= 0.03 && drift <= 0.02 && elapsed < Duration::from_secs(1200),
        format!(
            "accuracy_vs_p [{}], rise p1->p4 {:.4} (>= 0.03), max |acc(p)-acc(4)| for p in 5..8 {:.4} (<= 0.02), {elapsed:.2?}",
            curve.join(" "),
            rise,
            drift
        ),
    )
}

// -------------------------------------------------------------- determinism

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig {
        num_matrices: 30,
        markov_order: 2,
        ..synth_cfg(2)
    };
    let manifest = generate_corpus(&cfg)
        .unwrap()
        .save(&dir.path().join("corpus"))
        .unwrap();
    let pipeline = PipelineConfig {
        p_list: vec![1, 2, 3],
        build: build_cfg(1),
        train: TrainConfig {
            num_trees: 20,
            ..train_cfg()
        },
        boundaries: None,
    };
    let a = dir.path().join("run-a");
    let b = dir.path().join("run-b");
    run_pipeline(&manifest, &pipeline, Some(&a)).unwrap();
    run_pipeline(&manifest, &pipeline, Some(&b)).unwrap();
    let ra = fs::read(a.join(REPORT_FILE)).unwrap();
    let rb = fs::read(b.join(REPORT_FILE)).unwrap();
    outcome(
        ra == rb,
        format!("report.json {} bytes, identical: {}", ra.len(), ra == rb),
    )
}

// -------------------------------------------------------------- conservation

fn conservation(run: &OrderOneRun) -> Outcome {
    // fig2 histogram from an emitted table.
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig {
        num_matrices: 12,
        ..synth_cfg(1)
    };
    let manifest = generate_corpus(&cfg)
        .unwrap()
        .save(&dir.path().join("corpus"))
        .unwrap();
    let out = dir.path().join("out");
    run_pipeline(
        &manifest,
        &PipelineConfig {
            p_list: vec![1],
            build: build_cfg(1),
            train: TrainConfig {
                num_trees: 5,
                ..train_cfg()
            },
            boundaries: None,
        },
        Some(&out),
    )
    .unwrap();
    let fig2 = fs::read_to_string(out.join(FIG2_FILE)).unwrap();
    let fig2_sum: u64 = fig2
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse::<u64>().unwrap())
        .sum();
    let cells = (cfg.num_matrices * cfg.grid.rows * cfg.grid.cols) as u64;

    // gain shares of the order-1 forest.
    let layout = FeatureLayout {
        p: 1,
        grid_cols: run.corpus.grid.cols,
        feature_mode: FeatureMode::ColumnWindow,
    };
    let records = harvest_conditions(&run.forest, &layout).unwrap();
    let share_sum: f64 = records.iter().map(|r| r.gain_share).sum();

    // shuffle_split on a random 1,000-example dataset, compared by counting.
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    let rows: Vec<(Vec<u8>, Label)> = (0..1000)
        .map(|_| {
            let f = (0..3).map(|_| rng.gen_range(0..11)).collect();
            (
                f,
                if rng.gen_bool(0.4) {
                    Label::High
                } else {
                    Label::Low
                },
            )
        })
        .collect();
    let data = Dataset::from_rows(rows.clone()).unwrap();
    let (train, eval) = shuffle_split(&data, &build_cfg(1)).unwrap();
    let mut counts: HashMap<(Vec<u8>, Label), i64> = HashMap::new();
    for r in rows {
        *counts.entry(r).or_default() += 1;
    }
    for part in [&train, &eval] {
        for ex in part.examples() {
            *counts
                .entry((part.features(ex).to_vec(), ex.label))
                .or_default() -= 1;
        }
    }
    let multiset_ok = counts.values().all(|&c| c == 0) && train.len() == 800 && eval.len() == 200;

    let eval_total = run.eval.len();
    outcome(
        fig2_sum == cells && (share_sum - 1.0).abs() <= 1e-9 && multiset_ok,
        format!(
            "fig2 sum {fig2_sum} vs {cells} cells; gain_share sum {share_sum:.15} over {} conditions; split 800/200 multiset preserved: {multiset_ok} (order-1 eval set {eval_total})",
            records.len()
        ),
    )
}

fn main() {
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    let mut record = |name, o: Outcome| {
        println!(
            "[{}] {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        results.push((name, o));
    };

    record("quantile correctness", quantile_correctness());
    record("split-search correctness", split_search());
    let run = order_one_run();
    record("structural bounds", structural_bounds(&run.forest));
    record("oracle recovery, order 1", order_one_recovery(&run));
    record("oracle recovery, order 4", order_four_recovery());
    record("condition signature", condition_signature(&run));
    record("determinism", determinism());
    record("conservation identities", conservation(&run));

    let failed: Vec<&str> = results
        .iter()
        .filter(|(_, o)| !o.pass)
        .map(|(n, _)| *n)
        .collect();
    println!(
        "acceptance: {} passed, {} failed",
        results.len() - failed.len(),
        failed.len()
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
