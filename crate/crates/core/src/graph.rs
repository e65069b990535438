//! Fully connected token graph built from thresholded cosine similarities.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureGrid;

/// Norms below this are treated as zero; such tokens get similarity 0 to everything.
pub const ZERO_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EdgeMode {
    /// Edge weight 1 above the threshold, `eps` below.
    #[default]
    Binary,
    /// Edge weight equal to the similarity above the threshold, `eps` below.
    Continuous,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphConfig {
    pub tau: f64,
    pub eps: f64,
    pub edge_mode: EdgeMode,
    pub include_self_loops: bool,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            tau: 0.2,
            eps: 1e-5,
            edge_mode: EdgeMode::Binary,
            include_self_loops: true,
        }
    }
}

impl GraphConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.tau) {
            return Err(Error::Input(format!("tau must lie in [0, 1), got {}", self.tau)));
        }
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return Err(Error::Input(format!("eps must lie in (0, 1), got {}", self.eps)));
        }
        if self.tau != 0.0 && self.eps >= self.tau {
            return Err(Error::Input(format!(
                "eps ({}) must be below tau ({})",
                self.eps, self.tau
            )));
        }
        Ok(())
    }
}

/// Dense symmetric edge matrix `E` with its degree vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityGraph {
    n: usize,
    edges: Vec<f64>,
    degrees: Vec<f64>,
    grid_shape: (usize, usize),
}

impl AffinityGraph {
    /// Wraps an explicit row-major `n × n` edge matrix.
    ///
    /// The matrix must be exactly symmetric with nonnegative finite entries and
    /// every row sum strictly positive. `grid_shape` must multiply out to `n`.
    pub fn from_edges(edges: Vec<f64>, grid_shape: (usize, usize)) -> Result<Self> {
        let n = grid_shape.0 * grid_shape.1;
        if n < 2 {
            return Err(Error::Input(format!("graph needs at least 2 nodes, got {n}")));
        }
        if edges.len() != n * n {
            return Err(Error::Input(format!(
                "edge matrix has {} entries, expected {}",
                edges.len(),
                n * n
            )));
        }
        for i in 0..n {
            for j in 0..n {
                let w = edges[i * n + j];
                if !w.is_finite() || w < 0.0 {
                    return Err(Error::Input(format!("edge ({i}, {j}) = {w} is not a weight")));
                }
                if w != edges[j * n + i] {
                    return Err(Error::Input(format!("edge matrix asymmetric at ({i}, {j})")));
                }
            }
        }
        let degrees = row_sums(&edges, n);
        if let Some(i) = degrees.iter().position(|&d| d <= 0.0) {
            return Err(Error::Input(format!("node {i} has zero degree")));
        }
        Ok(AffinityGraph {
            n,
            edges,
            degrees,
            grid_shape,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edge(&self, i: usize, j: usize) -> f64 {
        self.edges[i * self.n + j]
    }

    /// Row-major edge matrix.
    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.edges[i * self.n..(i + 1) * self.n]
    }

    pub fn degrees(&self) -> &[f64] {
        &self.degrees
    }

    pub fn grid_shape(&self) -> (usize, usize) {
        self.grid_shape
    }

    /// True when every edge carries the same weight, so the graph has no structure to cut.
    pub fn is_uniform(&self) -> bool {
        let first = self.edges[0];
        self.edges.iter().all(|&w| w == first)
    }
}

fn row_sums(edges: &[f64], n: usize) -> Vec<f64> {
    edges.chunks_exact(n).map(|row| row.iter().sum()).collect()
}

/// Cosine similarity clamped to `[-1, 1]`; 0 when either vector has (near) zero norm.
pub fn cosine_similarity(a: &[f32], b: &[f32]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (f64::from(x), f64::from(y));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    let (na, nb) = (na.sqrt(), nb.sqrt());
    if na < ZERO_NORM || nb < ZERO_NORM {
        return 0.0;
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

pub fn build_graph(grid: &FeatureGrid, cfg: &GraphConfig) -> Result<AffinityGraph> {
    cfg.validate()?;
    let n = grid.len();
    if n < 2 {
        return Err(Error::Input(format!("graph needs at least 2 tokens, got {n}")));
    }

    let tokens: Vec<Vec<f64>> = grid
        .tokens()
        .map(|v| v.iter().map(|&x| f64::from(x)).collect())
        .collect();
    let norms: Vec<f64> = tokens
        .iter()
        .map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();

    let weight = |s: f64| -> f64 {
        if s >= cfg.tau {
            match cfg.edge_mode {
                EdgeMode::Binary => 1.0,
                EdgeMode::Continuous => s.max(cfg.eps),
            }
        } else {
            cfg.eps
        }
    };

    // Upper triangle per row; the lower triangle is mirrored afterwards so E is exactly symmetric.
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let (vi, ni) = (&tokens[i], norms[i]);
            ((i + 1)..n)
                .map(|j| {
                    let nj = norms[j];
                    let s = if ni < ZERO_NORM || nj < ZERO_NORM {
                        0.0
                    } else {
                        let dot: f64 = vi.iter().zip(&tokens[j]).map(|(a, b)| a * b).sum();
                        (dot / (ni * nj)).clamp(-1.0, 1.0)
                    };
                    weight(s)
                })
                .collect()
        })
        .collect();

    let diagonal = if cfg.include_self_loops { 1.0 } else { cfg.eps };
    let mut edges = vec![0.0; n * n];
    for (i, row) in upper.iter().enumerate() {
        edges[i * n + i] = diagonal;
        for (offset, &w) in row.iter().enumerate() {
            let j = i + 1 + offset;
            edges[i * n + j] = w;
            edges[j * n + i] = w;
        }
    }
    let degrees = row_sums(&edges, n);

    Ok(AffinityGraph {
        n,
        edges,
        degrees,
        grid_shape: grid.shape(),
    })
}
