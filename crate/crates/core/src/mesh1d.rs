//! One-dimensional model meshes on the unit interval.
//!
//! A background mesh of `N` equal cells of width `h = 1/N` in which some
//! cells are split into a small cell of width `alpha * h` followed by a large
//! cell of width `(1 - alpha) * h`. The small cell of every pair is the one
//! that receives the stabilization.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// A split background cell: `left` is the index of the small cell, the large
/// cell is `left + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutPair {
    pub left: usize,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mesh1D {
    h: f64,
    // Widths are the primary data: recomputing `alpha * h` from edge
    // differences loses relative accuracy for tiny cells.
    widths: Vec<f64>,
    edges: Vec<f64>,
    cut_pairs: Vec<CutPair>,
    stabilized: Vec<bool>,
}

/// Variants of the split-cell mesh used for the 1D experiments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scenario1D {
    /// Every cell in `[0.1, 0.9)` split with the same fraction.
    S1 { alpha: f64 },
    /// Fractions `0.1 * X + 1e-6` with `X` uniform, drawn from `seed`.
    S2 { seed: u64 },
    /// No splitting.
    S3,
}

impl Mesh1D {
    fn from_widths(h: f64, widths: Vec<f64>, cut_pairs: Vec<CutPair>) -> Result<Self> {
        let mut edges = Vec::with_capacity(widths.len() + 1);
        edges.push(0.0);
        let mut x = 0.0;
        for w in &widths {
            x += w;
            edges.push(x);
        }
        *edges.last_mut().expect("nonempty") = 1.0;
        if edges.windows(2).any(|e| e[1] <= e[0]) {
            return Err(Error::InvalidMesh("edges not strictly increasing".into()));
        }
        let mut stabilized = vec![false; widths.len()];
        for p in &cut_pairs {
            stabilized[p.left] = true;
        }
        if (1..stabilized.len()).any(|j| stabilized[j] && stabilized[j - 1])
            || (stabilized.len() > 1 && stabilized[0] && stabilized[stabilized.len() - 1])
        {
            return Err(Error::InvalidMesh("adjacent stabilized cells".into()));
        }
        Ok(Self {
            h,
            widths,
            edges,
            cut_pairs,
            stabilized,
        })
    }

    /// Equidistant mesh of `n` cells.
    pub fn uniform(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(invalid("N", "need at least 2 cells"));
        }
        let h = 1.0 / n as f64;
        Self::from_widths(h, vec![h; n], Vec::new())
    }

    /// Background cell indices `split` (0-based, ascending) replaced by pairs.
    fn split(n: usize, split: &[(usize, f64)]) -> Result<Self> {
        let h = 1.0 / n as f64;
        let mut widths = Vec::with_capacity(n + split.len());
        let mut pairs = Vec::with_capacity(split.len());
        let mut next = split.iter().peekable();
        for j in 0..n {
            match next.peek() {
                Some(&&(s, alpha)) if s == j => {
                    next.next();
                    if !(alpha > 0.0 && alpha <= 0.5) {
                        return Err(invalid("alpha", format!("{alpha} outside (0, 1/2]")));
                    }
                    pairs.push(CutPair {
                        left: widths.len(),
                        alpha,
                    });
                    widths.push(alpha * h);
                    widths.push((1.0 - alpha) * h);
                }
                _ => widths.push(h),
            }
        }
        Self::from_widths(h, widths, pairs)
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn num_cells(&self) -> usize {
        self.widths.len()
    }

    pub fn widths(&self) -> &[f64] {
        &self.widths
    }

    pub fn width(&self, j: usize) -> f64 {
        self.widths[j]
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn left(&self, j: usize) -> f64 {
        self.edges[j]
    }

    pub fn right(&self, j: usize) -> f64 {
        self.edges[j + 1]
    }

    pub fn center(&self, j: usize) -> f64 {
        self.edges[j] + 0.5 * self.widths[j]
    }

    pub fn cut_pairs(&self) -> &[CutPair] {
        &self.cut_pairs
    }

    pub fn is_stabilized(&self, j: usize) -> bool {
        self.stabilized[j]
    }

    pub fn stabilized(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.num_cells()).filter(|&j| self.stabilized[j])
    }

    /// Cell containing `x`, taking the right cell on an edge.
    pub fn locate(&self, x: f64) -> usize {
        match self.edges.partition_point(|&e| e <= x) {
            0 => 0,
            p => (p - 1).min(self.num_cells() - 1),
        }
    }

    /// Writes `cell_index,x_left,x_right,is_stabilized`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "cell_index,x_left,x_right,is_stabilized")?;
        for j in 0..self.num_cells() {
            writeln!(
                w,
                "{},{:e},{:e},{}",
                j,
                self.left(j),
                self.right(j),
                u8::from(self.stabilized[j])
            )?;
        }
        Ok(())
    }
}

/// Model problem mesh: `n` background cells, background cell `k` (1-based)
/// split into `(alpha h, (1 - alpha) h)`.
pub fn build_mp_mesh(n: usize, alpha: f64, k: usize) -> Result<Mesh1D> {
    if n < 4 {
        return Err(invalid("N", format!("{n} < 4")));
    }
    if !(k > 1 && k < n) {
        return Err(invalid("k", format!("split cell {k} must satisfy 1 < k < {n}")));
    }
    Mesh1D::split(n, &[(k - 1, alpha)])
}

impl Scenario1D {
    /// Cut fractions for the `count` split cells.
    pub fn alphas(&self, count: usize) -> Vec<f64> {
        match *self {
            Scenario1D::S1 { alpha } => vec![alpha; count],
            Scenario1D::S2 { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..count).map(|_| 0.1 * rng.gen::<f64>() + 1e-6).collect()
            }
            Scenario1D::S3 => Vec::new(),
        }
    }
}

/// Scenario mesh with `n` background cells; `n` must be a multiple of 10 so
/// that 0.1 and 0.9 are background edges.
pub fn build_scenario_mesh(scenario: Scenario1D, n: usize) -> Result<Mesh1D> {
    if n == 0 || n % 10 != 0 {
        return Err(invalid("N", format!("{n} is not a positive multiple of 10")));
    }
    if let Scenario1D::S3 = scenario {
        return Mesh1D::uniform(n);
    }
    let first = n / 10;
    let last = 9 * n / 10;
    let alphas = scenario.alphas(last - first);
    let split: Vec<_> = (first..last).zip(alphas).collect();
    Mesh1D::split(n, &split)
}
