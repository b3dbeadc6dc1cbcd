//! Block-sparse storage keyed by (row cell, column cell).
//!
//! Every block is a dense `bs x bs` row-major array, where `bs` is the number
//! of local degrees of freedom per cell. The stabilization couples cells that
//! do not share a face, so the sparsity pattern is a free map of cell pairs
//! rather than a face stencil.

use std::collections::BTreeMap;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Accumulates blocks before freezing them into a [`BlockMatrix`].
#[derive(Debug, Clone)]
pub struct BlockMatrixBuilder {
    n_cells: usize,
    bs: usize,
    blocks: BTreeMap<(usize, usize), Vec<f64>>,
}

impl BlockMatrixBuilder {
    pub fn new(n_cells: usize, bs: usize) -> Self {
        Self {
            n_cells,
            bs,
            blocks: BTreeMap::new(),
        }
    }

    pub fn block_size(&self) -> usize {
        self.bs
    }

    /// Add `value` to entry `(i, j)` of block `(row, col)`.
    pub fn add(&mut self, row: usize, col: usize, i: usize, j: usize, value: f64) {
        debug_assert!(row < self.n_cells && col < self.n_cells);
        debug_assert!(i < self.bs && j < self.bs);
        let bs = self.bs;
        let block = self
            .blocks
            .entry((row, col))
            .or_insert_with(|| vec![0.0; bs * bs]);
        block[i * bs + j] += value;
    }

    /// Add a full row-major block scaled by `scale`.
    pub fn add_block(&mut self, row: usize, col: usize, values: &[f64], scale: f64) {
        debug_assert_eq!(values.len(), self.bs * self.bs);
        let bs = self.bs;
        let block = self
            .blocks
            .entry((row, col))
            .or_insert_with(|| vec![0.0; bs * bs]);
        for (b, v) in block.iter_mut().zip(values) {
            *b += scale * v;
        }
    }

    pub fn build(self) -> BlockMatrix {
        let mut row_ptr = vec![0usize; self.n_cells + 1];
        for &(r, _) in self.blocks.keys() {
            row_ptr[r + 1] += 1;
        }
        for r in 0..self.n_cells {
            row_ptr[r + 1] += row_ptr[r];
        }
        let mut cols = Vec::with_capacity(self.blocks.len());
        let mut data = Vec::with_capacity(self.blocks.len() * self.bs * self.bs);
        // BTreeMap iterates in (row, col) order, which is CSR order.
        for ((_, c), block) in self.blocks {
            cols.push(c);
            data.extend_from_slice(&block);
        }
        BlockMatrix {
            n_cells: self.n_cells,
            bs: self.bs,
            row_ptr,
            cols,
            data,
        }
    }
}

/// Immutable block-CSR matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockMatrix {
    n_cells: usize,
    bs: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    data: Vec<f64>,
}

impl BlockMatrix {
    pub fn zeros(n_cells: usize, bs: usize) -> Self {
        BlockMatrixBuilder::new(n_cells, bs).build()
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn block_size(&self) -> usize {
        self.bs
    }

    pub fn dim(&self) -> usize {
        self.n_cells * self.bs
    }

    pub fn n_blocks(&self) -> usize {
        self.cols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cols.is_empty()
    }

    pub fn block(&self, row: usize, col: usize) -> Option<&[f64]> {
        let bb = self.bs * self.bs;
        let range = self.row_ptr[row]..self.row_ptr[row + 1];
        self.cols[range.clone()]
            .binary_search(&col)
            .ok()
            .map(|k| &self.data[(range.start + k) * bb..(range.start + k + 1) * bb])
    }

    /// Scalar entry at global `(row, col)` dof indices.
    pub fn entry(&self, row: usize, col: usize) -> f64 {
        let (rc, i) = (row / self.bs, row % self.bs);
        let (cc, j) = (col / self.bs, col % self.bs);
        self.block(rc, cc).map_or(0.0, |b| b[i * self.bs + j])
    }

    /// Iterate over `(row_cell, col_cell, block)`.
    pub fn blocks(&self) -> impl Iterator<Item = (usize, usize, &[f64])> + '_ {
        let bb = self.bs * self.bs;
        (0..self.n_cells).flat_map(move |r| {
            (self.row_ptr[r]..self.row_ptr[r + 1])
                .map(move |k| (r, self.cols[k], &self.data[k * bb..(k + 1) * bb]))
        })
    }

    /// `y += scale * self * x`.
    pub fn mul_add(&self, x: &[f64], y: &mut [f64], scale: f64) {
        assert_eq!(x.len(), self.dim());
        assert_eq!(y.len(), self.dim());
        let bs = self.bs;
        let bb = bs * bs;
        for r in 0..self.n_cells {
            let yr = &mut y[r * bs..(r + 1) * bs];
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.cols[k];
                let block = &self.data[k * bb..(k + 1) * bb];
                let xc = &x[c * bs..(c + 1) * bs];
                for i in 0..bs {
                    let mut acc = 0.0;
                    for j in 0..bs {
                        acc += block[i * bs + j] * xc[j];
                    }
                    yr[i] += scale * acc;
                }
            }
        }
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim()];
        self.mul_add(x, &mut y, 1.0);
        y
    }

    /// `self + other`, both with identical shape.
    pub fn sum(&self, other: &BlockMatrix) -> BlockMatrix {
        assert_eq!(self.n_cells, other.n_cells);
        assert_eq!(self.bs, other.bs);
        let mut b = BlockMatrixBuilder::new(self.n_cells, self.bs);
        for (r, c, blk) in self.blocks().chain(other.blocks()) {
            b.add_block(r, c, blk, 1.0);
        }
        b.build()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let bs = self.bs;
        let mut m = DMatrix::zeros(n, n);
        for (r, c, blk) in self.blocks() {
            for i in 0..bs {
                for j in 0..bs {
                    m[(r * bs + i, c * bs + j)] += blk[i * bs + j];
                }
            }
        }
        m
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Nonzero scalar entries as `(row, col, value)` triples.
    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let bs = self.bs;
        let mut out = Vec::new();
        for (r, c, blk) in self.blocks() {
            for i in 0..bs {
                for j in 0..bs {
                    let v = blk[i * bs + j];
                    if v != 0.0 {
                        out.push((r * bs + i, c * bs + j, v));
                    }
                }
            }
        }
        out
    }
}

/// Block-diagonal symmetric positive definite matrix with cached inverses.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockDiagonal {
    bs: usize,
    blocks: Vec<f64>,
    inverses: Vec<f64>,
}

impl BlockDiagonal {
    /// Build from row-major blocks, one per cell.
    pub fn new(bs: usize, blocks: Vec<f64>) -> Result<Self> {
        let bb = bs * bs;
        if blocks.len() % bb != 0 {
            return Err(Error::Dimension {
                expected: bb,
                got: blocks.len() % bb,
            });
        }
        let mut inverses = Vec::with_capacity(blocks.len());
        for (cell, blk) in blocks.chunks(bb).enumerate() {
            let m = DMatrix::from_row_slice(bs, bs, blk);
            let inv = m
                .clone()
                .cholesky()
                .map(|c| c.inverse())
                .ok_or_else(|| Error::Singular(format!("mass block of cell {cell}")))?;
            for i in 0..bs {
                for j in 0..bs {
                    inverses.push(inv[(i, j)]);
                }
            }
        }
        Ok(Self {
            bs,
            blocks,
            inverses,
        })
    }

    pub fn block_size(&self) -> usize {
        self.bs
    }

    pub fn n_cells(&self) -> usize {
        self.blocks.len() / (self.bs * self.bs)
    }

    pub fn dim(&self) -> usize {
        self.n_cells() * self.bs
    }

    pub fn block(&self, cell: usize) -> &[f64] {
        let bb = self.bs * self.bs;
        &self.blocks[cell * bb..(cell + 1) * bb]
    }

    /// In-place `x <- M^{-1} x`.
    pub fn solve_in_place(&self, x: &mut [f64]) {
        let bs = self.bs;
        let bb = bs * bs;
        let mut tmp = vec![0.0; bs];
        for (cell, xc) in x.chunks_mut(bs).enumerate() {
            let inv = &self.inverses[cell * bb..(cell + 1) * bb];
            for i in 0..bs {
                tmp[i] = (0..bs).map(|j| inv[i * bs + j] * xc[j]).sum();
            }
            xc.copy_from_slice(&tmp);
        }
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let bs = self.bs;
        let bb = bs * bs;
        let mut y = vec![0.0; x.len()];
        for (cell, (xc, yc)) in x.chunks(bs).zip(y.chunks_mut(bs)).enumerate() {
            let blk = &self.blocks[cell * bb..(cell + 1) * bb];
            for i in 0..bs {
                yc[i] = (0..bs).map(|j| blk[i * bs + j] * xc[j]).sum();
            }
        }
        y
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let bs = self.bs;
        let mut m = DMatrix::zeros(n, n);
        for cell in 0..self.n_cells() {
            let blk = self.block(cell);
            for i in 0..bs {
                for j in 0..bs {
                    m[(cell * bs + i, cell * bs + j)] = blk[i * bs + j];
                }
            }
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builder_accumulates_and_multiplies() {
        let mut b = BlockMatrixBuilder::new(3, 2);
        b.add(0, 0, 0, 0, 1.0);
        b.add(0, 0, 0, 0, 2.0);
        b.add(2, 1, 1, 0, -4.0);
        let m = b.build();
        assert_eq!(m.n_blocks(), 2);
        assert_eq!(m.entry(0, 0), 3.0);
        assert_eq!(m.entry(5, 2), -4.0);
        let y = m.mul(&[1.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        assert_eq!(y, vec![3.0, 0.0, 0.0, 0.0, 0.0, -4.0]);
        let dense = m.to_dense();
        assert_eq!(dense[(5, 2)], -4.0);
    }

    #[test]
    fn block_diagonal_solve_inverts_mul() {
        let d = BlockDiagonal::new(2, vec![2.0, 0.5, 0.5, 1.0, 4.0, 0.0, 0.0, 0.25]).unwrap();
        let x = vec![1.0, -2.0, 3.0, 0.5];
        let mut y = d.mul(&x);
        d.solve_in_place(&mut y);
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn singular_mass_block_rejected() {
        assert!(BlockDiagonal::new(1, vec![1.0, 0.0]).is_err());
    }
}
