#![allow(dead_code)]

//! Fixtures and independent oracles shared by the integration tests.

use std::path::Path;

use patchcut::features::write_feature_grid;
use patchcut::{AffinityGraph, FeatureGrid, PixelBox};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Inclusive patch rectangle.
#[derive(Debug, Clone, Copy)]
pub struct Block {
    pub row0: usize,
    pub row1: usize,
    pub col0: usize,
    pub col1: usize,
}

impl Block {
    pub fn contains(&self, r: usize, c: usize) -> bool {
        (self.row0..=self.row1).contains(&r) && (self.col0..=self.col1).contains(&c)
    }

    pub fn area(&self) -> usize {
        (self.row1 - self.row0 + 1) * (self.col1 - self.col0 + 1)
    }

    pub fn pixel_box(&self, k: usize) -> PixelBox {
        PixelBox::new(
            (self.col0 * k) as f64,
            (self.row0 * k) as f64,
            ((self.col1 + 1) * k) as f64,
            ((self.row1 + 1) * k) as f64,
        )
    }
}

/// A grid with a planted foreground rectangle.
///
/// Foreground tokens are `e0 + a·e1 + noise_fg`, background tokens
/// `e1 + b·e0 + noise_bg`, with `a, b ∈ [0, cross/2]` and the two noise terms
/// living in disjoint coordinate ranges, so every foreground/background cosine
/// is at most `cross`.
pub struct Planted {
    pub grid: FeatureGrid,
    pub block: Block,
}

pub fn planted_grid(
    rows: usize,
    cols: usize,
    block: Block,
    dim: usize,
    patch_size: usize,
    cross: f64,
    noise: f64,
    seed: u64,
) -> Planted {
    assert!(dim >= 4);
    let mut r = rng(seed);
    let half = 2 + (dim - 2) / 2;
    let mut data = Vec::with_capacity(rows * cols * dim);
    for row in 0..rows {
        for col in 0..cols {
            let fg = block.contains(row, col);
            let mut v = vec![0.0f32; dim];
            let mix = r.gen_range(0.0..=cross / 2.0) as f32;
            if fg {
                v[0] = 1.0;
                v[1] = mix;
            } else {
                v[1] = 1.0;
                v[0] = mix;
            }
            let range = if fg { 2..half } else { half..dim };
            let width = range.len() as f64;
            for x in &mut v[range] {
                *x = (r.gen_range(-1.0..1.0) * noise / width.sqrt()) as f32;
            }
            data.extend(v);
        }
    }
    let grid = FeatureGrid::with_exact_image(rows, cols, dim, patch_size, data).unwrap();
    Planted { grid, block }
}

/// Random planted fixture: grid 6..=16 per side, block under 40% of the grid.
pub fn random_planted(seed: u64, cross: f64) -> Planted {
    let mut r = rng(seed ^ 0x5eed);
    let rows = r.gen_range(6..=16);
    let cols = r.gen_range(6..=16);
    loop {
        let h = r.gen_range(2..=rows * 2 / 3);
        let w = r.gen_range(2..=cols * 2 / 3);
        if h * w * 5 > rows * cols * 2 {
            continue;
        }
        let row0 = r.gen_range(0..=rows - h);
        let col0 = r.gen_range(0..=cols - w);
        let block = Block {
            row0,
            row1: row0 + h - 1,
            col0,
            col1: col0 + w - 1,
        };
        let dim = r.gen_range(8..=32);
        let noise = r.gen_range(0.0..0.6);
        return planted_grid(rows, cols, block, dim, 8, cross, noise, seed);
    }
}

/// Largest foreground/background cosine in a planted fixture.
pub fn max_cross_similarity(p: &Planted) -> f64 {
    let g = &p.grid;
    let mut worst = f64::NEG_INFINITY;
    for i in 0..g.len() {
        let a = g.grid_index_of(i);
        for j in 0..g.len() {
            let b = g.grid_index_of(j);
            if p.block.contains(a.row, a.col) && !p.block.contains(b.row, b.col) {
                worst = worst.max(patchcut::graph::cosine_similarity(g.token(i), g.token(j)));
            }
        }
    }
    worst
}

/// Random feature grid with entries drawn from multiples of 1/64 in [-2, 2].
pub fn random_grid(seed: u64, rows: usize, cols: usize, dim: usize) -> FeatureGrid {
    let mut r = rng(seed);
    let data = (0..rows * cols * dim)
        .map(|_| r.gen_range(-128i32..=128) as f32 / 64.0)
        .collect();
    FeatureGrid::with_exact_image(rows, cols, dim, 8, data).unwrap()
}

/// Random low-dimensional grid whose cosine similarities spread around typical thresholds.
pub fn random_clustered_grid(seed: u64, n: usize) -> FeatureGrid {
    let mut r = rng(seed);
    let dim = r.gen_range(3..=6);
    let centers: Vec<Vec<f32>> = (0..r.gen_range(2..=4))
        .map(|_| (0..dim).map(|_| r.gen_range(-1.0f32..1.0)).collect())
        .collect();
    let mut data = Vec::with_capacity(n * dim);
    for _ in 0..n {
        let c = &centers[r.gen_range(0..centers.len())];
        data.extend(c.iter().map(|x| x + r.gen_range(-0.6f32..0.6)));
    }
    FeatureGrid::with_exact_image(1, n, dim, 8, data).unwrap()
}

/// Renders the planted block as a two-tone RGB image.
pub fn planted_image(p: &Planted) -> image::RgbImage {
    let k = p.grid.patch_size;
    image::RgbImage::from_fn(p.grid.image_width as u32, p.grid.image_height as u32, |x, y| {
        let (r, c) = (y as usize / k, x as usize / k);
        if p.block.contains(r, c) {
            image::Rgb([220, 60, 40])
        } else {
            image::Rgb([30, 90, 200])
        }
    })
}

/// Writes `count` planted fixtures (features + images) into `features`/`images`.
pub fn write_corpus(features: &Path, images: &Path, count: u64) -> Vec<Planted> {
    std::fs::create_dir_all(features).unwrap();
    std::fs::create_dir_all(images).unwrap();
    (0..count)
        .map(|i| {
            let p = random_planted(1000 + i, 0.1);
            write_feature_grid(&p.grid, features.join(format!("img{i:03}.tkcf"))).unwrap();
            planted_image(&p).save(images.join(format!("img{i:03}.png"))).unwrap();
            p
        })
        .collect()
}

/// Cyclic Jacobi eigenvalue algorithm for a dense symmetric matrix.
///
/// Returns eigenvalues ascending with matching eigenvector columns (`vectors[k]`).
pub fn jacobi_eigen(a: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut m = a.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i][j] * m[i][j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if m[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[k][p], m[k][q]);
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p][k], m[q][k]);
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| m[x][x].total_cmp(&m[y][y]));
    let values = order.iter().map(|&k| m[k][k]).collect();
    let vectors = order
        .iter()
        .map(|&k| (0..n).map(|i| v[i][k]).collect())
        .collect();
    (values, vectors)
}

/// Generalized eigenpairs of `(D − E) y = λ D y` via Jacobi on the symmetric reduction.
pub fn generalized_oracle(graph: &AffinityGraph) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = graph.n();
    let d = graph.degrees();
    let a: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let l = if i == j { d[i] - graph.edge(i, j) } else { -graph.edge(i, j) };
                    l / (d[i] * d[j]).sqrt()
                })
                .collect()
        })
        .collect();
    let (values, zs) = jacobi_eigen(&a);
    let ys = zs
        .into_iter()
        .map(|z| {
            let y: Vec<f64> = z.iter().zip(d).map(|(zi, di)| zi / di.sqrt()).collect();
            let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
            y.into_iter().map(|v| v / norm).collect()
        })
        .collect();
    (values, ys)
}

/// Union-find labeling with 4-connectivity; returns the partition as sorted member lists.
pub fn union_find_components(members: &[bool], rows: usize, cols: usize) -> Vec<Vec<usize>> {
    let n = rows * cols;
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], x: usize) -> usize {
        let mut root = x;
        while parent[root] != root {
            root = parent[root];
        }
        let mut cur = x;
        while parent[cur] != root {
            let next = parent[cur];
            parent[cur] = root;
            cur = next;
        }
        root
    }
    for i in 0..n {
        if !members[i] {
            continue;
        }
        let (r, c) = (i / cols, i % cols);
        if c + 1 < cols && members[i + 1] {
            let (a, b) = (find(&mut parent, i), find(&mut parent, i + 1));
            parent[a] = b;
        }
        if r + 1 < rows && members[i + cols] {
            let (a, b) = (find(&mut parent, i), find(&mut parent, i + cols));
            parent[a] = b;
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for i in (0..n).filter(|&i| members[i]) {
        let root = find(&mut parent, i);
        groups.entry(root).or_default().push(i);
    }
    let mut out: Vec<Vec<usize>> = groups.into_values().collect();
    out.sort();
    out
}

/// Exhaustive-threshold maxFβ / IoU / accuracy, one pass over pixels per threshold.
pub fn saliency_oracle(pred: &[f64], gt: &[bool], beta_squared: f64) -> (f64, f64, f64) {
    let mut best = 0.0f64;
    for k in 1..=255u32 {
        let t = f64::from(k) / 255.0;
        let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
        for (&c, &g) in pred.iter().zip(gt) {
            match (c >= t, g) {
                (true, true) => tp += 1.0,
                (true, false) => fp += 1.0,
                (false, true) => fn_ += 1.0,
                _ => {}
            }
        }
        let p = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let r = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
        let f = if beta_squared * p + r > 0.0 {
            (1.0 + beta_squared) * p * r / (beta_squared * p + r)
        } else {
            0.0
        };
        best = best.max(f);
    }
    let (mut inter, mut union, mut right) = (0.0, 0.0, 0.0);
    for (&c, &g) in pred.iter().zip(gt) {
        let b = c > 0.5;
        if b && g {
            inter += 1.0;
        }
        if b || g {
            union += 1.0;
        }
        if b == g {
            right += 1.0;
        }
    }
    let iou = if union > 0.0 { inter / union } else { 0.0 };
    (best, iou, right / pred.len() as f64)
}

/// Runs the `patchcut` binary with `args`.
pub fn run_cli<I, S>(args: I) -> std::process::Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    std::process::Command::new(env!("CARGO_BIN_EXE_patchcut"))
        .args(args)
        .output()
        .expect("binary runs")
}

/// Writes a 0/255 grayscale mask.
pub fn write_mask(path: &Path, width: u32, height: u32, values: &[u8]) {
    image::GrayImage::from_raw(width, height, values.to_vec())
        .unwrap()
        .save(path)
        .unwrap();
}
