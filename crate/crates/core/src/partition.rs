//! From eigenvector to detection: mean split, foreground choice, grid
//! components, and the final patch mask and pixel box.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::features::{patch_to_pixel_box, FeatureGrid, PatchExtent};
use crate::graph::{build_graph, AffinityGraph, GraphConfig};
use crate::metrics::PixelBox;
use crate::spectral::{argmax_abs, solve_second_eigenpair_with, CutSolution, EigenMethod};

/// Spread below which an eigenvector is treated as constant.
pub const CONSTANT_VECTOR_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    /// Tokens with `y1 <= mean`.
    A,
    /// Tokens with `y1 > mean`.
    B,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ComponentRule {
    /// The foreground component that contains the strongest token.
    #[default]
    Vmax,
    /// The largest foreground component (lowest id on ties).
    Largest,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DiscoveryConfig {
    pub graph: GraphConfig,
    pub component_rule: ComponentRule,
    pub eigen_method: EigenMethod,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bipartition {
    pub labels: Vec<Side>,
    pub mean: f64,
    /// The vector was constant, so side B is empty by construction.
    pub degenerate: bool,
}

pub fn bipartition_by_mean(y1: &[f64]) -> Bipartition {
    let n = y1.len() as f64;
    let mean = y1.iter().sum::<f64>() / n;
    let (lo, hi) = y1
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if hi - lo <= CONSTANT_VECTOR_TOLERANCE {
        return Bipartition {
            labels: vec![Side::A; y1.len()],
            mean,
            degenerate: true,
        };
    }
    let labels = y1
        .iter()
        .map(|&v| if v <= mean { Side::A } else { Side::B })
        .collect();
    Bipartition {
        labels,
        mean,
        degenerate: false,
    }
}

/// Returns the side holding `argmax |y1|` and that index.
pub fn select_foreground(labels: &[Side], y1: &[f64]) -> (Side, usize) {
    let vmax = argmax_abs(y1).expect("eigenvector is non-empty");
    (labels[vmax], vmax)
}

/// 4-connected components of the tokens marked in `members`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComponentMap {
    pub rows: usize,
    pub cols: usize,
    /// Component id per token; `None` for tokens outside the set.
    pub labels: Vec<Option<usize>>,
    /// Token count per component id.
    pub sizes: Vec<usize>,
}

impl ComponentMap {
    pub fn len(&self) -> usize {
        self.sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sizes.is_empty()
    }

    pub fn members(&self, id: usize) -> impl Iterator<Item = usize> + '_ {
        self.labels
            .iter()
            .enumerate()
            .filter(move |(_, l)| **l == Some(id))
            .map(|(i, _)| i)
    }
}

/// Labels maximal 4-connected components; ids follow raster-scan discovery order.
pub fn connected_components(members: &[bool], rows: usize, cols: usize) -> ComponentMap {
    assert_eq!(members.len(), rows * cols, "membership mask must match the grid");
    let mut labels = vec![None; members.len()];
    let mut sizes = Vec::new();
    let mut queue = VecDeque::new();

    for seed in 0..members.len() {
        if !members[seed] || labels[seed].is_some() {
            continue;
        }
        let id = sizes.len();
        let mut size = 0;
        labels[seed] = Some(id);
        queue.push_back(seed);
        while let Some(i) = queue.pop_front() {
            size += 1;
            let (r, c) = (i / cols, i % cols);
            let neighbors = [
                (r > 0).then(|| i - cols),
                (r + 1 < rows).then(|| i + cols),
                (c > 0).then(|| i - 1),
                (c + 1 < cols).then(|| i + 1),
            ];
            for j in neighbors.into_iter().flatten() {
                if members[j] && labels[j].is_none() {
                    labels[j] = Some(id);
                    queue.push_back(j);
                }
            }
        }
        sizes.push(size);
    }
    ComponentMap {
        rows,
        cols,
        labels,
        sizes,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscoveryResult {
    pub labels: Vec<Side>,
    pub mean: f64,
    pub foreground_side: Side,
    pub vmax_index: usize,
    pub component_map: ComponentMap,
    pub selected_component: usize,
    /// Row-major `rows × cols` mask of the selected component.
    pub patch_mask: Vec<bool>,
    pub pixel_box: PixelBox,
    pub lambda1: f64,
    /// No usable split: the mask covers the grid and the box the whole image.
    pub degenerate: bool,
    pub repeated_eigenvalue: bool,
}

impl DiscoveryResult {
    /// Token count of every foreground component, indexed by component id.
    pub fn component_sizes(&self) -> &[usize] {
        &self.component_map.sizes
    }
}

pub fn discover(grid: &FeatureGrid, cfg: &DiscoveryConfig) -> Result<DiscoveryResult> {
    let (graph, solution) = solve_grid(grid, cfg)?;
    discover_from_solution(grid, &graph, &solution, cfg)
}

/// Graph construction and eigen-solve, the expensive half of [`discover`].
pub fn solve_grid(grid: &FeatureGrid, cfg: &DiscoveryConfig) -> Result<(AffinityGraph, CutSolution)> {
    let graph = build_graph(grid, &cfg.graph)?;
    let solution = solve_second_eigenpair_with(&graph, cfg.eigen_method)?;
    Ok((graph, solution))
}

/// Turns a solved eigenpair into a detection.
///
/// A uniform graph or a repeated second eigenvalue leaves the eigenvector
/// arbitrary; both are reported as degenerate together with a constant vector.
pub fn discover_from_solution(
    grid: &FeatureGrid,
    graph: &AffinityGraph,
    solution: &CutSolution,
    cfg: &DiscoveryConfig,
) -> Result<DiscoveryResult> {
    let (rows, cols) = grid.shape();
    let y1 = &solution.y1;
    let split = bipartition_by_mean(y1);
    let degenerate = split.degenerate || graph.is_uniform() || solution.repeated_eigenvalue;

    if degenerate {
        let all = vec![true; grid.len()];
        return Ok(DiscoveryResult {
            labels: vec![Side::A; grid.len()],
            mean: split.mean,
            foreground_side: Side::A,
            vmax_index: argmax_abs(y1).unwrap_or(0),
            component_map: connected_components(&all, rows, cols),
            selected_component: 0,
            patch_mask: all,
            pixel_box: PixelBox::new(0.0, 0.0, grid.image_width as f64, grid.image_height as f64),
            lambda1: solution.lambda1,
            degenerate: true,
            repeated_eigenvalue: solution.repeated_eigenvalue,
        });
    }

    let (foreground_side, vmax_index) = select_foreground(&split.labels, y1);
    let members: Vec<bool> = split.labels.iter().map(|&s| s == foreground_side).collect();
    let component_map = connected_components(&members, rows, cols);
    let selected_component = match cfg.component_rule {
        ComponentRule::Vmax => component_map.labels[vmax_index]
            .expect("the strongest token lies on the foreground side"),
        ComponentRule::Largest => {
            let mut best = 0;
            for (id, &size) in component_map.sizes.iter().enumerate() {
                if size > component_map.sizes[best] {
                    best = id;
                }
            }
            best
        }
    };
    let patch_mask: Vec<bool> = component_map
        .labels
        .iter()
        .map(|&l| l == Some(selected_component))
        .collect();
    let pixel_box = mask_pixel_box(&patch_mask, grid)?;

    Ok(DiscoveryResult {
        labels: split.labels,
        mean: split.mean,
        foreground_side,
        vmax_index,
        component_map,
        selected_component,
        patch_mask,
        pixel_box,
        lambda1: solution.lambda1,
        degenerate: false,
        repeated_eigenvalue: solution.repeated_eigenvalue,
    })
}

/// Tight patch extent of a non-empty mask, scaled to pixels.
pub fn mask_pixel_box(mask: &[bool], grid: &FeatureGrid) -> Result<PixelBox> {
    let mut extent: Option<PatchExtent> = None;
    for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        let at = grid.grid_index_of(i);
        let e = extent.get_or_insert(PatchExtent {
            row_min: at.row,
            row_max: at.row,
            col_min: at.col,
            col_max: at.col,
        });
        e.row_min = e.row_min.min(at.row);
        e.row_max = e.row_max.max(at.row);
        e.col_min = e.col_min.min(at.col);
        e.col_max = e.col_max.max(at.col);
    }
    let extent = extent.ok_or_else(|| crate::Error::Logic("empty patch mask".into()))?;
    patch_to_pixel_box(extent, grid)
}
