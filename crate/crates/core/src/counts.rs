//! Sparse multinomial count data, group partitions and the estimated
//! group-mean PMFs every statistic is built from.
//!
//! Counts are stored row-major with sorted column indices. Statistics that
//! need column-wise access go through [`CountMatrix::columns`], a transposed
//! view built with one counting-sort pass over the nonzeros.

use serde::{Deserialize, Serialize};

use crate::error::{DelveError, Result};

/// `n x p` matrix of nonnegative integer counts, one row per multinomial draw.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountMatrix {
    n: usize,
    p: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<u64>,
    row_totals: Vec<u64>,
}

impl CountMatrix {
    /// Builds a matrix from `(row, col, count)` triples in any order.
    ///
    /// Zero counts are rejected rather than silently dropped, and so is any
    /// repeated `(row, col)` pair.
    pub fn from_triples(triples: &[(usize, usize, u64)], n: usize, p: usize) -> Result<Self> {
        for &(row, col, count) in triples {
            if row >= n || col >= p {
                return Err(DelveError::IndexOutOfRange { row, col, n, p });
            }
            if count == 0 {
                return Err(DelveError::ZeroCount { row, col });
            }
        }
        let mut sorted: Vec<(usize, usize, u64)> = triples.to_vec();
        sorted.sort_unstable_by_key(|&(r, c, _)| (r, c));
        for w in sorted.windows(2) {
            if w[0].0 == w[1].0 && w[0].1 == w[1].1 {
                return Err(DelveError::DuplicateEntry {
                    row: w[0].0,
                    col: w[0].1,
                });
            }
        }

        let mut row_ptr = vec![0usize; n + 1];
        for &(r, _, _) in &sorted {
            row_ptr[r + 1] += 1;
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        let mut row_totals = vec![0u64; n];
        let mut col_idx = Vec::with_capacity(sorted.len());
        let mut values = Vec::with_capacity(sorted.len());
        for (r, c, v) in sorted {
            row_totals[r] += v;
            col_idx.push(c);
            values.push(v);
        }
        Ok(Self {
            n,
            p,
            row_ptr,
            col_idx,
            values,
            row_totals,
        })
    }

    /// Builds a matrix from dense rows; zeros are dropped.
    pub fn from_dense<R: AsRef<[u64]>>(rows: &[R], p: usize) -> Result<Self> {
        let mut triples = Vec::new();
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != p {
                return Err(DelveError::InvalidParameter(format!(
                    "row {i} has {} entries, expected {p}",
                    row.len()
                )));
            }
            for (j, &v) in row.iter().enumerate() {
                if v > 0 {
                    triples.push((i, j, v));
                }
            }
        }
        Self::from_triples(&triples, rows.len(), p)
    }

    pub fn n_rows(&self) -> usize {
        self.n
    }

    pub fn n_cols(&self) -> usize {
        self.p
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_totals(&self) -> &[u64] {
        &self.row_totals
    }

    pub fn row_total(&self, i: usize) -> u64 {
        self.row_totals[i]
    }

    pub fn total(&self) -> u64 {
        self.row_totals.iter().sum()
    }

    /// Nonzero `(col, count)` pairs of row `i`, in increasing column order.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, u64)> + '_ {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    /// All stored entries as `(row, col, count)`, sorted by `(row, col)`.
    pub fn triples(&self) -> Vec<(usize, usize, u64)> {
        (0..self.n)
            .flat_map(|i| self.row(i).map(move |(j, v)| (i, j, v)))
            .collect()
    }

    pub fn to_dense(&self) -> Vec<Vec<u64>> {
        let mut out = vec![vec![0u64; self.p]; self.n];
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                out[i][j] = v;
            }
        }
        out
    }

    /// Relabels columns: old column `j` becomes column `perm[j]`.
    pub fn permute_columns(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.p {
            return Err(DelveError::InvalidParameter(format!(
                "permutation has length {}, expected {}",
                perm.len(),
                self.p
            )));
        }
        let triples: Vec<_> = self
            .triples()
            .into_iter()
            .map(|(i, j, v)| (i, perm[j], v))
            .collect();
        Self::from_triples(&triples, self.n, self.p)
    }

    /// New matrix whose row `r` is row `rows[r]` of `self`.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut triples = Vec::new();
        for (r, &i) in rows.iter().enumerate() {
            triples.extend(self.row(i).map(|(j, v)| (r, j, v)));
        }
        Self::from_triples(&triples, rows.len(), self.p).expect("rows of a valid matrix")
    }

    /// Stacks `other` below `self`.
    pub fn vstack(&self, other: &CountMatrix) -> Result<Self> {
        if self.p != other.p {
            return Err(DelveError::InvalidParameter(format!(
                "column counts differ: {} vs {}",
                self.p, other.p
            )));
        }
        let mut triples = self.triples();
        triples.extend(
            other
                .triples()
                .into_iter()
                .map(|(i, j, v)| (i + self.n, j, v)),
        );
        Self::from_triples(&triples, self.n + other.n, self.p)
    }

    /// Errors on the first row whose total is below `required`.
    pub fn require_min_total(&self, required: u64) -> Result<()> {
        match self
            .row_totals
            .iter()
            .position(|&total| total < required)
        {
            Some(row) => Err(DelveError::RowTooShort {
                row,
                total: self.row_totals[row],
                required,
            }),
            None => Ok(()),
        }
    }

    /// Column-major copy of the nonzeros.
    pub fn columns(&self) -> ColumnView {
        let mut col_ptr = vec![0usize; self.p + 1];
        for &c in &self.col_idx {
            col_ptr[c + 1] += 1;
        }
        for j in 0..self.p {
            col_ptr[j + 1] += col_ptr[j];
        }
        let mut next = col_ptr.clone();
        let mut rows = vec![0usize; self.nnz()];
        let mut values = vec![0u64; self.nnz()];
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                let slot = next[j];
                rows[slot] = i;
                values[slot] = v;
                next[j] += 1;
            }
        }
        ColumnView {
            col_ptr,
            rows,
            values,
        }
    }
}

/// Transposed (CSC) copy of a [`CountMatrix`]; rows within a column are increasing.
#[derive(Debug, Clone)]
pub struct ColumnView {
    col_ptr: Vec<usize>,
    rows: Vec<usize>,
    values: Vec<u64>,
}

impl ColumnView {
    pub fn n_cols(&self) -> usize {
        self.col_ptr.len() - 1
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = (usize, u64)> + '_ {
        let range = self.col_ptr[j]..self.col_ptr[j + 1];
        self.rows[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    pub fn is_empty_column(&self, j: usize) -> bool {
        self.col_ptr[j] == self.col_ptr[j + 1]
    }
}

/// Assignment of rows to `K` disjoint, non-empty groups.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupPartition {
    labels: Vec<usize>,
    k: usize,
}

impl GroupPartition {
    pub fn new(labels: Vec<usize>, k: usize) -> Result<Self> {
        let mut seen = vec![false; k];
        for (row, &label) in labels.iter().enumerate() {
            if label >= k {
                return Err(DelveError::LabelOutOfRange { row, label, k });
            }
            seen[label] = true;
        }
        if let Some(group) = seen.iter().position(|s| !s) {
            return Err(DelveError::EmptyGroup { group });
        }
        Ok(Self { labels, k })
    }

    /// Infers `K` as one past the largest label.
    pub fn from_labels(labels: Vec<usize>) -> Result<Self> {
        let k = labels.iter().max().map_or(0, |m| m + 1);
        Self::new(labels, k)
    }

    /// Every row in its own group (`K = n`).
    pub fn singletons(n: usize) -> Self {
        Self {
            labels: (0..n).collect(),
            k: n,
        }
    }

    /// `k` contiguous blocks of `n / k` rows each.
    pub fn equal_blocks(n: usize, k: usize) -> Result<Self> {
        if k == 0 || !n.is_multiple_of(k) {
            return Err(DelveError::InvalidParameter(format!(
                "K = {k} does not divide n = {n}"
            )));
        }
        let size = n / k;
        Self::new((0..n).map(|i| i / size).collect(), k)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, row: usize) -> usize {
        self.labels[row]
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }

    pub fn members(&self, group: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == group)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn is_singletons(&self) -> bool {
        self.k == self.labels.len()
    }

    pub fn check_rows(&self, rows: usize) -> Result<()> {
        if self.labels.len() != rows {
            return Err(DelveError::PartitionMismatch {
                labels: self.labels.len(),
                rows,
            });
        }
        Ok(())
    }
}

/// Group-wise and pooled totals, column sums and estimated PMFs.
#[derive(Debug, Clone)]
pub struct GroupSummaries {
    pub group_sizes: Vec<usize>,
    /// `n_k * Nbar_k`, the total count of group `k`.
    pub group_totals: Vec<u64>,
    /// `n * Nbar`.
    pub total: u64,
    pub p: usize,
    /// Active columns, increasing.
    pub active_cols: Vec<usize>,
    /// Column totals `sum_i X_ij`, aligned with `active_cols`.
    pub col_totals: Vec<u64>,
    /// `(group, Y_kj)` pairs per active column; `entry_ptr` delimits columns.
    pub entry_ptr: Vec<usize>,
    pub entries: Vec<(usize, u64)>,
}

impl GroupSummaries {
    pub fn new(x: &CountMatrix, g: &GroupPartition) -> Result<Self> {
        g.check_rows(x.n_rows())?;
        x.require_min_total(1)?;
        let k = g.k();
        let mut group_totals = vec![0u64; k];
        for (i, &t) in x.row_totals().iter().enumerate() {
            group_totals[g.label(i)] += t;
        }
        if let Some(group) = group_totals.iter().position(|&t| t == 0) {
            return Err(DelveError::ZeroGroupTotal { group });
        }
        let total = group_totals.iter().sum();

        let cols = x.columns();
        let mut slot = vec![usize::MAX; k];
        let mut active_cols = Vec::new();
        let mut col_totals = Vec::new();
        let mut entry_ptr = vec![0usize];
        let mut entries: Vec<(usize, u64)> = Vec::with_capacity(x.nnz());
        for j in 0..x.n_cols() {
            if cols.is_empty_column(j) {
                continue;
            }
            let start = entries.len();
            let mut c = 0u64;
            for (i, v) in cols.column(j) {
                let grp = g.label(i);
                c += v;
                if slot[grp] == usize::MAX || slot[grp] < start {
                    slot[grp] = entries.len();
                    entries.push((grp, v));
                } else {
                    entries[slot[grp]].1 += v;
                }
            }
            active_cols.push(j);
            col_totals.push(c);
            entry_ptr.push(entries.len());
        }
        Ok(Self {
            group_sizes: g.group_sizes(),
            group_totals,
            total,
            p: x.n_cols(),
            active_cols,
            col_totals,
            entry_ptr,
            entries,
        })
    }

    pub fn k(&self) -> usize {
        self.group_totals.len()
    }

    /// Mean row length `Nbar_k` of group `k`.
    pub fn mean_length(&self, k: usize) -> f64 {
        self.group_totals[k] as f64 / self.group_sizes[k] as f64
    }

    pub fn pooled_mean_length(&self) -> f64 {
        self.total as f64 / self.group_sizes.iter().sum::<usize>() as f64
    }

    /// `1/(n_k Nbar_k) - 1/(n Nbar)`, evaluated as `(N - T_k) / (T_k N)`
    /// so the numerator is an exact integer difference.
    pub fn correction_coef(&self, k: usize) -> f64 {
        let tk = self.group_totals[k];
        (self.total - tk) as f64 / (tk as f64 * self.total as f64)
    }

    /// Group entries `(k, Y_kj)` of the `a`-th active column.
    pub fn column_entries(&self, a: usize) -> &[(usize, u64)] {
        &self.entries[self.entry_ptr[a]..self.entry_ptr[a + 1]]
    }

    /// Sparse `mu_hat_k` as `(col, value)` pairs.
    pub fn group_pmf(&self, k: usize) -> Vec<(usize, f64)> {
        let tk = self.group_totals[k] as f64;
        let mut out = Vec::new();
        for (a, &j) in self.active_cols.iter().enumerate() {
            for &(grp, y) in self.column_entries(a) {
                if grp == k {
                    out.push((j, y as f64 / tk));
                }
            }
        }
        out
    }

    /// Sparse pooled `mu_hat` as `(col, value)` pairs.
    pub fn pooled_pmf(&self) -> Vec<(usize, f64)> {
        let n = self.total as f64;
        self.active_cols
            .iter()
            .zip(&self.col_totals)
            .map(|(&j, &c)| (j, c as f64 / n))
            .collect()
    }

    /// Group column sums `Y_kj` as a dense `K x p` table.
    pub fn group_column_sums_dense(&self) -> Vec<Vec<u64>> {
        let mut out = vec![vec![0u64; self.p]; self.k()];
        for (a, &j) in self.active_cols.iter().enumerate() {
            for &(grp, y) in self.column_entries(a) {
                out[grp][j] = y;
            }
        }
        out
    }

    pub fn pooled_pmf_norm(&self) -> f64 {
        let n = self.total as f64;
        self.col_totals
            .iter()
            .map(|&c| {
                let m = c as f64 / n;
                m * m
            })
            .sum::<f64>()
            .sqrt()
    }
}

/// `group_summaries(X, g)`.
pub fn group_summaries(x: &CountMatrix, g: &GroupPartition) -> Result<GroupSummaries> {
    GroupSummaries::new(x, g)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense(pmf: &[(usize, f64)], p: usize) -> Vec<f64> {
        let mut out = vec![0.0; p];
        for &(j, v) in pmf {
            out[j] = v;
        }
        out
    }

    #[test]
    fn builds_row_totals() {
        let x = CountMatrix::from_triples(&[(0, 0, 2), (1, 1, 2)], 2, 2).unwrap();
        assert_eq!(x.row_totals(), &[2, 2]);
        assert_eq!(x.nnz(), 2);
    }

    #[test]
    fn empty_row_is_accepted() {
        let x = CountMatrix::from_triples(&[], 1, 3).unwrap();
        assert_eq!(x.row_totals(), &[0]);
        assert!(matches!(
            x.require_min_total(2),
            Err(DelveError::RowTooShort { row: 0, .. })
        ));
    }

    #[test]
    fn rejects_duplicates_and_bad_indices() {
        assert!(matches!(
            CountMatrix::from_triples(&[(0, 0, 1), (0, 0, 1)], 1, 1),
            Err(DelveError::DuplicateEntry { row: 0, col: 0 })
        ));
        assert!(matches!(
            CountMatrix::from_triples(&[(0, 3, 1)], 1, 3),
            Err(DelveError::IndexOutOfRange { .. })
        ));
        assert!(matches!(
            CountMatrix::from_triples(&[(0, 1, 0)], 1, 3),
            Err(DelveError::ZeroCount { .. })
        ));
    }

    #[test]
    fn triples_are_sorted() {
        let x = CountMatrix::from_triples(&[(1, 2, 1), (0, 1, 3), (1, 0, 4)], 2, 3).unwrap();
        assert_eq!(x.triples(), vec![(0, 1, 3), (1, 0, 4), (1, 2, 1)]);
    }

    #[test]
    fn partition_rejects_empty_group() {
        assert!(matches!(
            GroupPartition::new(vec![0, 0, 2], 3),
            Err(DelveError::EmptyGroup { group: 1 })
        ));
        assert!(GroupPartition::new(vec![0, 3], 3).is_err());
    }

    #[test]
    fn disjoint_support_pmfs() {
        let x = CountMatrix::from_dense(&[[2, 0], [0, 2]], 2).unwrap();
        let g = GroupPartition::new(vec![0, 1], 2).unwrap();
        let s = group_summaries(&x, &g).unwrap();
        assert_eq!(dense(&s.group_pmf(0), 2), vec![1.0, 0.0]);
        assert_eq!(dense(&s.group_pmf(1), 2), vec![0.0, 1.0]);
        assert_eq!(dense(&s.pooled_pmf(), 2), vec![0.5, 0.5]);
    }

    #[test]
    fn identical_rows_one_group() {
        let x = CountMatrix::from_dense(&[[1, 1], [1, 1]], 2).unwrap();
        let g = GroupPartition::new(vec![0, 0], 1).unwrap();
        let s = group_summaries(&x, &g).unwrap();
        assert_eq!(dense(&s.group_pmf(0), 2), vec![0.5, 0.5]);
        assert_eq!(dense(&s.pooled_pmf(), 2), vec![0.5, 0.5]);
    }

    #[test]
    fn hand_sum_single_group() {
        let x = CountMatrix::from_dense(&[[3, 1], [1, 3]], 2).unwrap();
        let g = GroupPartition::new(vec![0, 0], 1).unwrap();
        let s = group_summaries(&x, &g).unwrap();
        assert_eq!(dense(&s.pooled_pmf(), 2), vec![0.5, 0.5]);
        assert_eq!(s.mean_length(0), 4.0);
    }

    #[test]
    fn zero_total_group_rejected() {
        let x = CountMatrix::from_triples(&[(0, 0, 1)], 2, 2).unwrap();
        let g = GroupPartition::new(vec![0, 1], 2).unwrap();
        assert!(matches!(
            group_summaries(&x, &g),
            Err(DelveError::RowTooShort { row: 1, .. })
        ));
    }

    #[test]
    fn correction_coef_matches_difference() {
        let x = CountMatrix::from_dense(&[[3, 1], [1, 3], [2, 5]], 2).unwrap();
        let g = GroupPartition::new(vec![0, 0, 1], 2).unwrap();
        let s = group_summaries(&x, &g).unwrap();
        let direct = 1.0 / 8.0 - 1.0 / 15.0;
        assert!((s.correction_coef(0) - direct).abs() < 1e-15);
    }

    #[test]
    fn summaries_invariants_hold() {
        let x = CountMatrix::from_dense(&[[3, 0, 1, 2], [0, 4, 1, 0], [2, 2, 0, 1], [1, 0, 0, 5]], 4)
            .unwrap();
        let g = GroupPartition::new(vec![0, 1, 0, 1], 2).unwrap();
        let s = group_summaries(&x, &g).unwrap();
        let pooled = dense(&s.pooled_pmf(), 4);
        let mut mix = [0.0; 4];
        for k in 0..2 {
            let pmf = dense(&s.group_pmf(k), 4);
            assert!((pmf.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let w = s.group_totals[k] as f64 / s.total as f64;
            for j in 0..4 {
                mix[j] += w * pmf[j];
            }
        }
        for j in 0..4 {
            assert!((mix[j] - pooled[j]).abs() < 1e-12);
        }
        let y = s.group_column_sums_dense();
        assert_eq!(y, vec![vec![5, 2, 1, 3], vec![1, 4, 1, 5]]);
    }
}
