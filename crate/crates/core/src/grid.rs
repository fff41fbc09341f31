//! Lattice adjacency over raster cells in compressed-sparse-row form.
//!
//! Cell `(row, col)` has node index `row * width + col`. Each undirected edge
//! is stored twice, once in each endpoint's neighbor list, and neighbor lists
//! are sorted ascending.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Serialized as the neighbor count, `4` or `8`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub enum Connectivity {
    /// Rook adjacency: N, S, E, W.
    #[default]
    Four,
    /// Queen adjacency: rook plus diagonals.
    Eight,
}

impl TryFrom<u32> for Connectivity {
    type Error = Error;

    fn try_from(n: u32) -> Result<Self> {
        Self::from_count(n)
    }
}

impl From<Connectivity> for u32 {
    fn from(c: Connectivity) -> u32 {
        c.count()
    }
}

impl Connectivity {
    pub fn from_count(n: u32) -> Result<Self> {
        match n {
            4 => Ok(Connectivity::Four),
            8 => Ok(Connectivity::Eight),
            other => Err(Error::Config(format!(
                "connectivity must be 4 or 8, got {other}"
            ))),
        }
    }

    pub fn count(self) -> u32 {
        match self {
            Connectivity::Four => 4,
            Connectivity::Eight => 8,
        }
    }

    fn offsets(self) -> &'static [(isize, isize)] {
        match self {
            Connectivity::Four => &[(-1, 0), (0, -1), (0, 1), (1, 0)],
            Connectivity::Eight => &[
                (-1, -1),
                (-1, 0),
                (-1, 1),
                (0, -1),
                (0, 1),
                (1, -1),
                (1, 0),
                (1, 1),
            ],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridGraph {
    width: usize,
    height: usize,
    connectivity: Connectivity,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    degrees: Vec<usize>,
    /// `1/√(δ_i δ_j)` aligned with `col_idx`.
    norm: Vec<f64>,
}

impl GridGraph {
    pub fn build(width: usize, height: usize, connectivity: Connectivity) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::shape("build_grid_graph", (height, width), (1, 1)));
        }
        let n = width * height;
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::with_capacity(n * connectivity.count() as usize);
        row_ptr.push(0);
        // offsets are listed in row-major order, so each list comes out sorted
        for r in 0..height as isize {
            for c in 0..width as isize {
                for &(dr, dc) in connectivity.offsets() {
                    let (rr, cc) = (r + dr, c + dc);
                    if rr >= 0 && cc >= 0 && (rr as usize) < height && (cc as usize) < width {
                        col_idx.push(rr as usize * width + cc as usize);
                    }
                }
                row_ptr.push(col_idx.len());
            }
        }
        let degrees: Vec<usize> = row_ptr.windows(2).map(|w| w[1] - w[0]).collect();
        let mut norm = Vec::with_capacity(col_idx.len());
        for i in 0..n {
            for &j in &col_idx[row_ptr[i]..row_ptr[i + 1]] {
                norm.push(1.0 / ((degrees[i] * degrees[j]) as f64).sqrt());
            }
        }
        Ok(Self {
            width,
            height,
            connectivity,
            row_ptr,
            col_idx,
            degrees,
            norm,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn connectivity(&self) -> Connectivity {
        self.connectivity
    }

    pub fn node_count(&self) -> usize {
        self.degrees.len()
    }

    /// Undirected edge count (each stored pair counted once).
    pub fn edge_count(&self) -> usize {
        self.col_idx.len() / 2
    }

    /// Number of stored directed entries, `2 × edge_count`.
    pub fn entry_count(&self) -> usize {
        self.col_idx.len()
    }

    pub fn degree(&self, i: usize) -> usize {
        self.degrees[i]
    }

    pub fn degrees(&self) -> &[usize] {
        &self.degrees
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]]
    }

    /// Range of stored entries belonging to node `i`.
    pub fn entry_range(&self, i: usize) -> std::ops::Range<usize> {
        self.row_ptr[i]..self.row_ptr[i + 1]
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn norms(&self) -> &[f64] {
        &self.norm
    }

    /// Stored entry index of the directed pair `i → j`.
    pub fn entry(&self, i: usize, j: usize) -> Option<usize> {
        if i >= self.node_count() {
            return None;
        }
        let range = self.entry_range(i);
        self.col_idx[range.clone()]
            .binary_search(&j)
            .ok()
            .map(|k| range.start + k)
    }

    /// `1/√(δ_i δ_j)` for an existing edge.
    pub fn edge_norm(&self, i: usize, j: usize) -> Result<f64> {
        self.entry(i, j)
            .map(|e| self.norm[e])
            .ok_or(Error::NotAnEdge(i, j))
    }

    pub fn node_index(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }

    pub fn cell_of(&self, node: usize) -> (usize, usize) {
        (node / self.width, node % self.width)
    }

    /// Iterates undirected edges once each as `(i, j)` with `i < j`.
    pub fn undirected_edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.node_count()).flat_map(move |i| {
            self.neighbors(i)
                .iter()
                .filter(move |&&j| j > i)
                .map(move |&j| (i, j))
        })
    }
}
