use super::matrix::TrainMatrix;
use crate::dataset::Dataset;

/// Gains closer than this are treated as equal, and a split must beat it to
/// count as positive.
pub const GAIN_TOLERANCE: f64 = 1e-12;

/// Gini impurity of a node with `[low, high]` class counts.
#[inline]
pub fn gini(counts: [u32; 2]) -> f64 {
    let n = counts[0] as f64 + counts[1] as f64;
    if n == 0.0 {
        return 0.0;
    }
    let a = counts[0] as f64;
    let b = counts[1] as f64;
    1.0 - (a * a + b * b) / (n * n)
}

/// Impurity decrease of splitting `parent` into `left` and the remainder.
#[inline]
pub fn gini_gain(parent: [u32; 2], left: [u32; 2]) -> f64 {
    let right = [parent[0] - left[0], parent[1] - left[1]];
    let n = (parent[0] + parent[1]) as f64;
    let nl = (left[0] + left[1]) as f64;
    let nr = (right[0] + right[1]) as f64;
    gini(parent) - nl / n * gini(left) - nr / n * gini(right)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
}

pub fn class_counts(data: &Dataset, indices: &[u32]) -> [u32; 2] {
    let mut counts = [0u32; 2];
    for &i in indices {
        counts[data.label(i as usize).index()] += 1;
    }
    counts
}

/// Best Gini split of the examples at `indices` over `candidates`.
///
/// Thresholds sit at midpoints between consecutive distinct values of a
/// feature. Splits leaving fewer than `min_leaf` examples on either side are
/// skipped. Equal gains go to the lower feature index, then the lower
/// threshold. Returns `None` when no admissible split has positive gain.
pub fn best_split(
    data: &Dataset,
    indices: &[u32],
    candidates: &[usize],
    min_leaf: usize,
) -> Option<Split> {
    let m = TrainMatrix::new(data);
    let parent = m.class_counts(indices);
    best_split_in(&m, indices, parent, candidates, min_leaf)
}

pub(crate) fn best_split_in(
    m: &TrainMatrix,
    indices: &[u32],
    parent: [u32; 2],
    candidates: &[usize],
    min_leaf: usize,
) -> Option<Split> {
    if indices.is_empty() || parent[0] == 0 || parent[1] == 0 {
        return None;
    }
    let n = indices.len();
    let mut sorted: Vec<usize> = candidates.to_vec();
    sorted.sort_unstable();
    sorted.dedup();

    let mut best: Option<Split> = None;
    let mut hist = [[0u32; 2]; 256];
    for f in sorted {
        let mut lo = u8::MAX;
        let mut hi = 0u8;
        m.for_each(f, indices, |v, label| {
            hist[v as usize][label as usize] += 1;
            lo = lo.min(v);
            hi = hi.max(v);
        });
        let mut left = [0u32; 2];
        let mut prev: Option<u8> = None;
        for v in lo..=hi {
            let c = hist[v as usize];
            if c[0] + c[1] == 0 {
                continue;
            }
            if let Some(pv) = prev {
                let nl = (left[0] + left[1]) as usize;
                if nl >= min_leaf && n - nl >= min_leaf {
                    let gain = gini_gain(parent, left);
                    let better = match best {
                        None => gain > GAIN_TOLERANCE,
                        Some(b) => gain > b.gain + GAIN_TOLERANCE,
                    };
                    if better {
                        best = Some(Split {
                            feature: f,
                            threshold: (pv as f64 + v as f64) / 2.0,
                            gain,
                        });
                    }
                }
            }
            left[0] += c[0];
            left[1] += c[1];
            prev = Some(v);
        }
        for v in lo..=hi {
            hist[v as usize] = [0, 0];
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Label;

    fn data(rows: &[(&[u8], bool)]) -> Dataset {
        Dataset::from_rows(
            rows.iter()
                .map(|(f, h)| (f.to_vec(), if *h { Label::High } else { Label::Low }))
                .collect(),
        )
        .unwrap()
    }

    fn all(d: &Dataset) -> Vec<u32> {
        (0..d.len() as u32).collect()
    }

    #[test]
    fn gini_values() {
        assert_eq!(gini([5, 0]), 0.0);
        assert!((gini([5, 5]) - 0.5).abs() < 1e-15);
        assert!((gini([1, 3]) - 0.375).abs() < 1e-15);
    }

    #[test]
    fn pure_node_has_no_split() {
        let d = data(&[(&[1, 2], true), (&[3, 4], true), (&[5, 0], true)]);
        assert_eq!(best_split(&d, &all(&d), &[0, 1], 1), None);
    }

    #[test]
    fn perfect_binary_split() {
        let d = data(&[(&[0], false), (&[0], false), (&[1], true), (&[1], true)]);
        let s = best_split(&d, &all(&d), &[0], 1).unwrap();
        assert_eq!(s.feature, 0);
        assert_eq!(s.threshold, 0.5);
        assert!((s.gain - gini([2, 2])).abs() < 1e-15);
    }

    #[test]
    fn ties_prefer_lower_feature() {
        let d = data(&[(&[0, 0], false), (&[1, 1], true)]);
        let s = best_split(&d, &all(&d), &[1, 0], 1).unwrap();
        assert_eq!(s.feature, 0);
    }

    #[test]
    fn min_leaf_blocks_small_children() {
        let d = data(&[(&[0], false), (&[1], true), (&[1], true), (&[1], true)]);
        assert!(best_split(&d, &all(&d), &[0], 1).is_some());
        assert_eq!(best_split(&d, &all(&d), &[0], 2), None);
    }
}
