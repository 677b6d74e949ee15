//! Dirichlet pseudo-count tables.
//!
//! Counts are stored column-sparse: every entry not explicitly set sits at
//! [`COUNT_FLOOR`]. This keeps state growth cheap (a new row or column is a
//! floor fill, which costs nothing) and makes belief propagation linear in the
//! number of explicit entries rather than quadratic in the state count.
//!
//! Columns are the conditioning variable: entry `(r, c)` is the count behind
//! `P(r | c)`.

use serde::{Deserialize, Serialize};

use crate::categorical::Categorical;
use crate::error::{Error, Result};

/// Minimum pseudo-count. Every entry is clamped to at least this value.
pub const COUNT_FLOOR: f64 = 1e-3;

/// Maximum pseudo-count. Keeps multiplicative learning finite on long runs.
pub const COUNT_CEILING: f64 = 1e6;

#[derive(Debug, Clone, Default, PartialEq)]
struct Column {
    /// Explicit entries sorted by row.
    entries: Vec<(u32, f64)>,
    /// `Σ (count - floor)` over explicit entries.
    excess: f64,
}

impl Column {
    fn get(&self, row: usize) -> f64 {
        match self.entries.binary_search_by_key(&(row as u32), |e| e.0) {
            Ok(i) => self.entries[i].1,
            Err(_) => COUNT_FLOOR,
        }
    }

    fn set(&mut self, row: usize, value: f64) {
        let value = clamp_count(value);
        match self.entries.binary_search_by_key(&(row as u32), |e| e.0) {
            Ok(i) => {
                if value == COUNT_FLOOR {
                    self.entries.remove(i);
                } else {
                    self.entries[i].1 = value;
                }
            }
            Err(i) => {
                if value != COUNT_FLOOR {
                    self.entries.insert(i, (row as u32, value));
                }
            }
        }
        self.excess = self.entries.iter().map(|e| e.1 - COUNT_FLOOR).sum();
    }
}

/// Clamps a raw count into `[COUNT_FLOOR, COUNT_CEILING]`. NaN maps to the floor.
pub fn clamp_count(value: f64) -> f64 {
    if value.is_nan() {
        COUNT_FLOOR
    } else {
        value.clamp(COUNT_FLOOR, COUNT_CEILING)
    }
}

/// A `rows × cols` matrix of Dirichlet pseudo-counts, one distribution per column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CountsRepr", into = "CountsRepr")]
pub struct DirichletCounts {
    rows: usize,
    columns: Vec<Column>,
}

impl DirichletCounts {
    /// A table with every entry at the floor.
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            columns: vec![Column::default(); cols],
        }
    }

    /// Builds a table from a row-major dense buffer. Entries below the floor are clamped.
    pub fn from_dense(rows: usize, cols: usize, row_major: &[f64]) -> Result<Self> {
        if row_major.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                found: row_major.len(),
            });
        }
        let mut counts = Self::new(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                counts.columns[c].set(r, row_major[r * cols + c]);
            }
        }
        Ok(counts)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.columns.len()
    }

    fn check(&self, row: usize, col: usize) -> Result<()> {
        if col >= self.columns.len() {
            return Err(Error::IndexOutOfRange {
                what: "column",
                index: col,
                len: self.columns.len(),
            });
        }
        if row >= self.rows {
            return Err(Error::IndexOutOfRange {
                what: "row",
                index: row,
                len: self.rows,
            });
        }
        Ok(())
    }

    /// Count at `(row, col)`. Panics on out-of-range indices.
    pub fn get(&self, row: usize, col: usize) -> f64 {
        debug_assert!(row < self.rows);
        self.columns[col].get(row)
    }

    pub fn try_get(&self, row: usize, col: usize) -> Result<f64> {
        self.check(row, col)?;
        Ok(self.columns[col].get(row))
    }

    /// Sets a count, clamped into the valid range. Returns the stored value.
    pub fn set(&mut self, row: usize, col: usize, value: f64) -> Result<f64> {
        self.check(row, col)?;
        self.columns[col].set(row, value);
        Ok(self.columns[col].get(row))
    }

    /// Adds `delta` to a count (then clamps). Returns the stored value.
    pub fn add(&mut self, row: usize, col: usize, delta: f64) -> Result<f64> {
        self.check(row, col)?;
        let v = self.columns[col].get(row) + delta;
        self.columns[col].set(row, v);
        Ok(self.columns[col].get(row))
    }

    /// Total pseudo-count of a column.
    pub fn column_sum(&self, col: usize) -> f64 {
        COUNT_FLOOR * self.rows as f64 + self.columns[col].excess
    }

    /// `P(row | col)`.
    pub fn prob(&self, row: usize, col: usize) -> f64 {
        self.get(row, col) / self.column_sum(col)
    }

    /// Probability carried by any entry still at the floor in this column.
    pub fn floor_prob(&self, col: usize) -> f64 {
        COUNT_FLOOR / self.column_sum(col)
    }

    /// Explicit (above-floor) entries of a column, sorted by row.
    pub fn explicit(&self, col: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.columns[col].entries.iter().map(|&(r, v)| (r as usize, v))
    }

    pub fn explicit_len(&self, col: usize) -> usize {
        self.columns[col].entries.len()
    }

    /// Normalizes one column into a categorical.
    pub fn normalize(&self, col: usize) -> Result<Categorical> {
        if col >= self.columns.len() {
            return Err(Error::IndexOutOfRange {
                what: "column",
                index: col,
                len: self.columns.len(),
            });
        }
        let sum = self.column_sum(col);
        if self.rows == 0 || sum <= 0.0 {
            return Err(Error::InvariantViolation(format!("column {col} has zero mass")));
        }
        let mut probs = vec![COUNT_FLOOR / sum; self.rows];
        for (r, v) in self.explicit(col) {
            probs[r] = v / sum;
        }
        Categorical::new(probs)
    }

    /// Row index with the largest count in a column (lowest index on ties).
    pub fn column_argmax(&self, col: usize) -> Option<usize> {
        if self.rows == 0 {
            return None;
        }
        let mut best: Option<(usize, f64)> = None;
        for (r, v) in self.explicit(col) {
            if best.is_none_or(|(_, bv)| v > bv) {
                best = Some((r, v));
            }
        }
        match best {
            Some((r, _)) => Some(r),
            // All entries at the floor: lowest index wins.
            None => Some(0),
        }
    }

    /// Appends a row at the floor and returns its index.
    pub fn push_row(&mut self) -> usize {
        self.rows += 1;
        self.rows - 1
    }

    /// Appends a column at the floor and returns its index.
    pub fn push_col(&mut self) -> usize {
        self.columns.push(Column::default());
        self.columns.len() - 1
    }

    /// `out[r] = Σ_c weights[c] · P(r | c)`, computed in `O(cols + nnz)`.
    pub fn propagate(&self, weights: &[f64]) -> Vec<f64> {
        debug_assert_eq!(weights.len(), self.cols());
        let mut base = 0.0;
        let mut out = vec![0.0; self.rows];
        for (c, &w) in weights.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let sum = self.column_sum(c);
            base += w * COUNT_FLOOR / sum;
            for &(r, v) in &self.columns[c].entries {
                out[r as usize] += w * (v - COUNT_FLOOR) / sum;
            }
        }
        for o in &mut out {
            *o += base;
        }
        out
    }

    /// `Σ_c weights[c] · P(row | c)` for a single row.
    pub fn weighted_row(&self, row: usize, weights: &[f64]) -> f64 {
        weights
            .iter()
            .enumerate()
            .filter(|(_, w)| **w != 0.0)
            .map(|(c, w)| w * self.prob(row, c))
            .sum()
    }
}

#[derive(Serialize, Deserialize)]
struct CountsRepr {
    rows: usize,
    cols: usize,
    floor: f64,
    /// `(row, col, count)` for every above-floor entry, row-major order.
    entries: Vec<(usize, usize, f64)>,
}

impl From<DirichletCounts> for CountsRepr {
    fn from(value: DirichletCounts) -> Self {
        let mut entries: Vec<(usize, usize, f64)> = value
            .columns
            .iter()
            .enumerate()
            .flat_map(|(c, col)| col.entries.iter().map(move |&(r, v)| (r as usize, c, v)))
            .collect();
        entries.sort_by_key(|e| (e.0, e.1));
        CountsRepr {
            rows: value.rows,
            cols: value.columns.len(),
            floor: COUNT_FLOOR,
            entries,
        }
    }
}

impl TryFrom<CountsRepr> for DirichletCounts {
    type Error = Error;

    fn try_from(repr: CountsRepr) -> Result<Self> {
        if repr.floor != COUNT_FLOOR {
            return Err(Error::InvariantViolation(format!(
                "count floor {} does not match {}",
                repr.floor, COUNT_FLOOR
            )));
        }
        let mut counts = DirichletCounts::new(repr.rows, repr.cols);
        for (r, c, v) in repr.entries {
            counts.set(r, c, v)?;
        }
        Ok(counts)
    }
}

/// A stack of square count tables, one per action: `P(next | prev, action)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionCounts {
    slices: Vec<DirichletCounts>,
}

impl TransitionCounts {
    pub fn new(dim: usize, n_actions: usize) -> Self {
        Self {
            slices: vec![DirichletCounts::new(dim, dim); n_actions],
        }
    }

    pub fn dim(&self) -> usize {
        self.slices.first().map_or(0, |s| s.cols())
    }

    pub fn n_actions(&self) -> usize {
        self.slices.len()
    }

    pub fn slice(&self, action: usize) -> &DirichletCounts {
        &self.slices[action]
    }

    pub fn slice_mut(&mut self, action: usize) -> &mut DirichletCounts {
        &mut self.slices[action]
    }

    pub fn slices(&self) -> impl Iterator<Item = &DirichletCounts> {
        self.slices.iter()
    }

    /// Grows every slice by one row and column; returns the new index.
    pub fn push_dim(&mut self) -> usize {
        for s in &mut self.slices {
            s.push_row();
            s.push_col();
        }
        self.dim() - 1
    }

    /// `P(next | prev, action)`.
    pub fn prob(&self, next: usize, prev: usize, action: usize) -> f64 {
        self.slices[action].prob(next, prev)
    }

    /// Pushes a belief over `prev` through one action slice.
    pub fn predict(&self, belief: &[f64], action: usize) -> Vec<f64> {
        self.slices[action].propagate(belief)
    }
}
