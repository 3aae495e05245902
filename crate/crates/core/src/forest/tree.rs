use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::matrix::TrainMatrix;
use super::split::best_split_in;
use super::TrainConfig;
use crate::dataset::{Dataset, Label};
use crate::seed;

/// Tree node. Children of a split are stored as arena indices; the arena is
/// laid out in pre-order.
#[derive(Clone, Debug, PartialEq)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        /// Impurity decrease times the fraction of bootstrap examples reaching the node.
        gain: f64,
        depth: usize,
        counts: [u32; 2],
        left: usize,
        right: usize,
    },
    Leaf {
        label: Label,
        depth: usize,
        counts: [u32; 2],
    },
}

impl Node {
    pub fn depth(&self) -> usize {
        match self {
            Node::Split { depth, .. } | Node::Leaf { depth, .. } => *depth,
        }
    }

    pub fn counts(&self) -> [u32; 2] {
        match self {
            Node::Split { counts, .. } | Node::Leaf { counts, .. } => *counts,
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, Node::Leaf { .. })
    }
}

/// Majority label; ties go to low.
pub fn majority(counts: [u32; 2]) -> Label {
    if counts[1] > counts[0] {
        Label::High
    } else {
        Label::Low
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    #[cfg(test)]
    pub(crate) fn from_nodes(nodes: Vec<Node>) -> Self {
        Tree { nodes }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn root(&self) -> &Node {
        &self.nodes[0]
    }

    pub fn max_depth(&self) -> usize {
        self.nodes.iter().map(Node::depth).max().unwrap_or(0)
    }

    pub fn num_splits(&self) -> usize {
        self.nodes.iter().filter(|n| !n.is_leaf()).count()
    }

    /// Routes left when `features[feature] <= threshold`.
    pub fn leaf_for(&self, mut feature_of: impl FnMut(usize) -> u8) -> &Node {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    at = if (feature_of(*feature) as f64) <= *threshold {
                        *left
                    } else {
                        *right
                    };
                }
                leaf => return leaf,
            }
        }
    }

    pub fn predict(&self, features: &[u8]) -> Label {
        match self.leaf_for(|f| features[f]) {
            Node::Leaf { label, .. } => *label,
            Node::Split { .. } => unreachable!(),
        }
    }

    pub(crate) fn predict_example(&self, data: &Dataset, idx: usize) -> Label {
        match self.leaf_for(|f| data.feature(idx, f)) {
            Node::Leaf { label, .. } => *label,
            Node::Split { .. } => unreachable!(),
        }
    }
}

/// `n` draws with replacement from `0..n`.
pub fn bootstrap_indices(n: usize, rng: &mut ChaCha8Rng) -> Vec<u32> {
    (0..n).map(|_| rng.gen_range(0..n) as u32).collect()
}

struct Grower<'a> {
    data: &'a TrainMatrix,
    cfg: &'a TrainConfig,
    per_split: usize,
    root_size: f64,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
}

impl Grower<'_> {
    fn candidates(&mut self) -> Vec<usize> {
        let d = self.data.dim();
        if self.per_split >= d {
            (0..d).collect()
        } else {
            let mut picked = index::sample(&mut self.rng, d, self.per_split).into_vec();
            picked.sort_unstable();
            picked
        }
    }

    fn grow(&mut self, indices: &mut [u32], depth: usize) -> usize {
        let counts = self.data.class_counts(indices);
        let at = self.nodes.len();
        let leaf = Node::Leaf {
            label: majority(counts),
            depth,
            counts,
        };
        let n = indices.len();
        let min_leaf = self.cfg.min_leaf;
        if counts[0] == 0 || counts[1] == 0 || depth >= self.cfg.max_depth || n < 2 * min_leaf {
            self.nodes.push(leaf);
            return at;
        }
        let candidates = self.candidates();
        let Some(split) = best_split_in(self.data, indices, counts, &candidates, min_leaf) else {
            self.nodes.push(leaf);
            return at;
        };
        self.nodes.push(leaf);

        let data = self.data;
        let mut mid = 0;
        for k in 0..n {
            if (data.value(indices[k], split.feature) as f64) <= split.threshold {
                indices.swap(k, mid);
                mid += 1;
            }
        }
        let (lo, hi) = indices.split_at_mut(mid);
        let left = self.grow(lo, depth + 1);
        let right = self.grow(hi, depth + 1);
        self.nodes[at] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            gain: split.gain * n as f64 / self.root_size,
            depth,
            counts,
            left,
            right,
        };
        at
    }
}

/// Grows one tree on a bootstrap resample of `train`.
///
/// The resample and the per-split feature subsets both come from the stream
/// seeded by `bootstrap_seed`.
pub fn train_tree(train: &Dataset, bootstrap_seed: u64, cfg: &TrainConfig) -> Tree {
    train_tree_on(&TrainMatrix::new(train), bootstrap_seed, cfg)
}

pub(crate) fn train_tree_on(train: &TrainMatrix, bootstrap_seed: u64, cfg: &TrainConfig) -> Tree {
    let mut rng = seed::rng(bootstrap_seed);
    let mut indices = bootstrap_indices(train.len(), &mut rng);
    // Split search is order-independent; sorting only improves locality.
    indices.sort_unstable();
    let mut grower = Grower {
        data: train,
        cfg,
        per_split: cfg.feature_subsample.resolve(train.dim()),
        root_size: indices.len().max(1) as f64,
        rng,
        nodes: Vec::new(),
    };
    grower.grow(&mut indices, 0);
    Tree {
        nodes: grower.nodes,
    }
}

/// Serialized node, listed in pre-order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub(crate) enum NodeRecord {
    Split {
        feature: usize,
        threshold: f64,
        gain: f64,
        counts: [u32; 2],
    },
    Leaf {
        counts: [u32; 2],
    },
}

impl Tree {
    pub(crate) fn to_records(&self) -> Vec<NodeRecord> {
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![0usize];
        while let Some(at) = stack.pop() {
            match &self.nodes[at] {
                Node::Split {
                    feature,
                    threshold,
                    gain,
                    counts,
                    left,
                    right,
                    ..
                } => {
                    out.push(NodeRecord::Split {
                        feature: *feature,
                        threshold: *threshold,
                        gain: *gain,
                        counts: *counts,
                    });
                    stack.push(*right);
                    stack.push(*left);
                }
                Node::Leaf { counts, .. } => out.push(NodeRecord::Leaf { counts: *counts }),
            }
        }
        out
    }

    pub(crate) fn from_records(records: &[NodeRecord]) -> Option<Tree> {
        fn build(
            records: &[NodeRecord],
            pos: &mut usize,
            depth: usize,
            nodes: &mut Vec<Node>,
        ) -> Option<usize> {
            let rec = records.get(*pos)?;
            *pos += 1;
            let at = nodes.len();
            match rec {
                NodeRecord::Leaf { counts } => nodes.push(Node::Leaf {
                    label: majority(*counts),
                    depth,
                    counts: *counts,
                }),
                NodeRecord::Split {
                    feature,
                    threshold,
                    gain,
                    counts,
                } => {
                    nodes.push(Node::Leaf {
                        label: Label::Low,
                        depth,
                        counts: *counts,
                    });
                    let left = build(records, pos, depth + 1, nodes)?;
                    let right = build(records, pos, depth + 1, nodes)?;
                    nodes[at] = Node::Split {
                        feature: *feature,
                        threshold: *threshold,
                        gain: *gain,
                        depth,
                        counts: *counts,
                        left,
                        right,
                    };
                }
            }
            Some(at)
        }
        let mut nodes = Vec::with_capacity(records.len());
        let mut pos = 0;
        build(records, &mut pos, 0, &mut nodes)?;
        (pos == records.len()).then_some(Tree { nodes })
    }
}
