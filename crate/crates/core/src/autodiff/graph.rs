//! Sparse structure used by the message-passing and readout ops.

use ndarray::Array2;

use crate::scalar::Scalar;

/// Directed edges grouped by target row (CSR layout). Edge `e` in
/// `row_ptr[i]..row_ptr[i+1]` carries information from `cols[e]` into `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeList {
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
}

impl EdgeList {
    /// Builds edges from a dense 0/1 matrix; every nonzero `(i, j)` is an edge.
    pub fn from_dense<T: Scalar>(adjacency: &Array2<T>) -> Self {
        let (n, m) = adjacency.dim();
        assert_eq!(n, m, "adjacency must be square");
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        row_ptr.push(0);
        for i in 0..n {
            for j in 0..n {
                if adjacency[[i, j]] != T::zero() {
                    cols.push(j);
                }
            }
            row_ptr.push(cols.len());
        }
        Self { row_ptr, cols }
    }

    /// Block-diagonal union of several graphs, shifting node indices.
    pub fn block_diagonal<'a>(parts: impl IntoIterator<Item = &'a EdgeList>) -> Self {
        let mut row_ptr = vec![0];
        let mut cols = Vec::new();
        let mut offset = 0;
        for part in parts {
            for i in 0..part.num_nodes() {
                cols.extend(part.neighbors(i).iter().map(|&j| j + offset));
                row_ptr.push(cols.len());
            }
            offset += part.num_nodes();
        }
        Self { row_ptr, cols }
    }

    pub fn num_nodes(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn num_edges(&self) -> usize {
        self.cols.len()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.cols[self.row_ptr[i]..self.row_ptr[i + 1]]
    }

    pub fn edge_range(&self, i: usize) -> std::ops::Range<usize> {
        self.row_ptr[i]..self.row_ptr[i + 1]
    }

    pub fn cols(&self) -> &[usize] {
        &self.cols
    }
}

/// Contiguous row ranges, one per graph in a batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segments {
    offsets: Vec<usize>,
}

impl Segments {
    pub fn from_sizes(sizes: impl IntoIterator<Item = usize>) -> Self {
        let mut offsets = vec![0];
        for s in sizes {
            let last = *offsets.last().unwrap();
            offsets.push(last + s);
        }
        Self { offsets }
    }

    pub fn single(n: usize) -> Self {
        Self::from_sizes([n])
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn total_rows(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn range(&self, s: usize) -> std::ops::Range<usize> {
        self.offsets[s]..self.offsets[s + 1]
    }

    pub fn size(&self, s: usize) -> usize {
        self.offsets[s + 1] - self.offsets[s]
    }

    /// Column holding, for every row, the size of the segment it belongs to.
    pub fn size_per_row<T: Scalar>(&self) -> Array2<T> {
        let mut out = Array2::zeros((self.total_rows(), 1));
        for s in 0..self.len() {
            let n = T::from_count(self.size(s));
            for r in self.range(s) {
                out[[r, 0]] = n;
            }
        }
        out
    }
}
