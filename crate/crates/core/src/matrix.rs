//! Small row-major containers for the aspect and interaction matrices.

use serde::{Deserialize, Serialize};

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Builds a matrix from row slices. Panics if the rows are ragged.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            let row = row.as_ref();
            assert_eq!(row.len(), cols, "ragged rows");
            data.extend_from_slice(row);
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.cols + col] = value;
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    pub fn row_mut(&mut self, row: usize) -> &mut [f64] {
        &mut self.data[row * self.cols..(row + 1) * self.cols]
    }

    /// Sets every entry of column `col` to zero.
    pub fn zero_column(&mut self, col: usize) {
        for r in 0..self.rows {
            self.data[r * self.cols + col] = 0.0;
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Sparse binary user-item matrix, one sorted item list per user.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionMatrix {
    items: usize,
    rows: Vec<Vec<usize>>,
}

impl InteractionMatrix {
    pub fn new(users: usize, items: usize) -> Self {
        Self {
            items,
            rows: vec![Vec::new(); users],
        }
    }

    pub fn users(&self) -> usize {
        self.rows.len()
    }

    pub fn items(&self) -> usize {
        self.items
    }

    pub fn insert(&mut self, user: usize, item: usize) {
        let row = &mut self.rows[user];
        if let Err(pos) = row.binary_search(&item) {
            row.insert(pos, item);
        }
    }

    pub fn contains(&self, user: usize, item: usize) -> bool {
        self.rows[user].binary_search(&item).is_ok()
    }

    /// Items the user interacted with, ascending.
    pub fn row(&self, user: usize) -> &[usize] {
        &self.rows[user]
    }

    /// Total number of ones.
    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    /// Iterates `(user, item)` pairs in row-major order.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(u, row)| row.iter().map(move |&i| (u, i)))
    }
}
