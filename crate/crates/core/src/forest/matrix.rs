use crate::dataset::Dataset;

/// Column-major copy of a dataset's features for fast split search.
///
/// Feature vectors shared by several examples (row-concat mode) are stored
/// once; `row_of` maps each example to its stored vector.
pub(crate) struct TrainMatrix {
    columns: Vec<u8>,
    stored: usize,
    row_of: Vec<u32>,
    labels: Vec<u8>,
    dim: usize,
    identity: bool,
}

impl TrainMatrix {
    pub fn new(data: &Dataset) -> Self {
        let dim = data.feature_dim();
        let n = data.len();
        // Distinct feature vectors in order of first use.
        let mut slot_of = vec![u32::MAX; data.stored_rows()];
        let mut first_use: Vec<usize> = Vec::new();
        let mut row_of = Vec::with_capacity(n);
        for ex in data.examples() {
            let r = data.feature_row_index(ex);
            if slot_of[r] == u32::MAX {
                slot_of[r] = first_use.len() as u32;
                first_use.push(r);
            }
            row_of.push(slot_of[r]);
        }
        let stored = first_use.len();
        let mut columns = vec![0u8; dim * stored];
        for (slot, &r) in first_use.iter().enumerate() {
            for (k, &v) in data.stored_row(r).iter().enumerate() {
                columns[k * stored + slot] = v;
            }
        }
        let labels = data
            .examples()
            .iter()
            .map(|e| e.label.index() as u8)
            .collect();
        let identity = row_of.iter().enumerate().all(|(i, &r)| r as usize == i);
        TrainMatrix {
            identity,
            columns,
            stored,
            row_of,
            labels,
            dim,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn column(&self, f: usize) -> &[u8] {
        &self.columns[f * self.stored..(f + 1) * self.stored]
    }

    /// Calls `visit(value, label)` for feature `f` of every example in `indices`.
    #[inline]
    pub fn for_each(&self, f: usize, indices: &[u32], mut visit: impl FnMut(u8, u8)) {
        let col = self.column(f);
        let labels = &self.labels[..];
        if self.identity {
            for &i in indices {
                visit(col[i as usize], labels[i as usize]);
            }
        } else {
            let rows = &self.row_of[..];
            for &i in indices {
                visit(col[rows[i as usize] as usize], labels[i as usize]);
            }
        }
    }

    #[inline]
    pub fn value(&self, idx: u32, f: usize) -> u8 {
        let r = if self.identity {
            idx as usize
        } else {
            self.row_of[idx as usize] as usize
        };
        self.columns[f * self.stored + r]
    }

    pub fn class_counts(&self, indices: &[u32]) -> [u32; 2] {
        let mut counts = [0u32; 2];
        for &i in indices {
            counts[self.labels[i as usize] as usize] += 1;
        }
        counts
    }
}
