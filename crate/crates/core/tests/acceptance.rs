//! Acceptance suite: one pass/fail line per criterion, nonzero exit if any fails.

mod common;

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use patchcut::graph::build_graph;
use patchcut::metrics::{
    box_iou, corloc, f_beta, saliency_scores, EvalRecord, DEFAULT_BETA_SQUARED,
};
use patchcut::partition::{bipartition_by_mean, Side};
use patchcut::spectral::{brute_force_min_ncut, solve_second_eigenpair, solve_second_eigenpair_with, EigenMethod};
use patchcut::{discover, AffinityGraph, DiscoveryConfig, EdgeMode, FeatureGrid, GraphConfig, PixelBox};
use rand::Rng;
use tempfile::TempDir;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond { Ok(()) } else { Err(msg()) }
}

/// `‖(D − E) y − λ D y‖ / ‖D y‖` with λ the Rayleigh quotient of `y`.
fn independent_residual(g: &AffinityGraph, y: &[f64]) -> (f64, f64) {
    let n = g.n();
    let d: Vec<f64> = (0..n).map(|i| (0..n).map(|j| g.edge(i, j)).sum()).collect();
    let ly: Vec<f64> = (0..n)
        .map(|i| d[i] * y[i] - (0..n).map(|j| g.edge(i, j) * y[j]).sum::<f64>())
        .collect();
    let lambda = ly.iter().zip(y).map(|(a, b)| a * b).sum::<f64>()
        / y.iter().zip(&d).map(|(v, d)| d * v * v).sum::<f64>();
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..n {
        let r = ly[i] - lambda * d[i] * y[i];
        num += r * r;
        den += (d[i] * y[i]).powi(2);
    }
    ((num / den).sqrt(), lambda)
}

fn eigensolver_correctness() -> Outcome {
    let mut r = common::rng(0xace1);
    let start = Instant::now();
    let (mut worst_res, mut worst_orth) = (0.0f64, 0.0f64);
    for k in 0..200u64 {
        let n = r.gen_range(4..=400);
        let grid = common::random_clustered_grid(10_000 + k, n);
        let edge_mode = if k % 2 == 0 { EdgeMode::Binary } else { EdgeMode::Continuous };
        let tau = r.gen_range(0.0..0.6);
        let g = build_graph(&grid, &GraphConfig { tau, edge_mode, ..GraphConfig::default() }).map_err(|e| e.to_string())?;
        let sol = solve_second_eigenpair(&g).map_err(|e| format!("graph {k} (N={n}): {e}"))?;
        let (res, _) = independent_residual(&g, &sol.y1);
        let d = g.degrees();
        let y_d_1: f64 = sol.y1.iter().zip(d).map(|(y, d)| y * d).sum();
        let dy: f64 = sol.y1.iter().zip(d).map(|(y, d)| d * y * y).sum::<f64>().sqrt();
        let d1: f64 = d.iter().sum::<f64>().sqrt();
        let orth = y_d_1.abs() / (dy * d1);
        worst_res = worst_res.max(res).max(sol.residual);
        worst_orth = worst_orth.max(orth);
        check(res <= 1e-8 && sol.residual <= 1e-8, || format!("graph {k} (N={n}): residual {res:.3e}"))?;
        check(orth <= 1e-8, || format!("graph {k} (N={n}): scaled |y1'D1| {orth:.3e}"))?;
    }
    let secs = start.elapsed().as_secs_f64();
    check(secs < 5.0, || format!("took {secs:.2} s"))?;
    Ok(format!("200 graphs, max residual {worst_res:.1e}, max scaled |y1'D1| {worst_orth:.1e}, {secs:.2} s"))
}

fn random_weight_graph(seed: u64, n: usize) -> AffinityGraph {
    let mut r = common::rng(seed);
    let mut edges = vec![0.0; n * n];
    let sparse = r.gen_range(0.0..0.8);
    for i in 0..n {
        for j in i + 1..n {
            let w = if r.gen_bool(sparse) { 1e-5 } else { r.gen_range(1e-5..1.0) };
            edges[i * n + j] = w;
            edges[j * n + i] = w;
        }
        edges[i * n + i] = 1.0;
    }
    AffinityGraph::from_edges(edges, (1, n)).unwrap()
}

/// Exhaustive minimum Ncut over all nontrivial bipartitions.
fn exhaustive_min_ncut(g: &AffinityGraph) -> f64 {
    let n = g.n();
    let mut best = f64::INFINITY;
    for mask in 1u32..(1 << n) - 1 {
        let a = |i: usize| mask & (1 << i) != 0;
        let (mut cut, mut assoc_a, mut assoc_b) = (0.0, 0.0, 0.0);
        for i in 0..n {
            for j in 0..n {
                let w = g.edge(i, j);
                if a(i) { assoc_a += w } else { assoc_b += w }
                if a(i) && !a(j) {
                    cut += w;
                }
            }
        }
        best = best.min(cut / assoc_a + cut / assoc_b);
    }
    best
}

fn relaxation_lower_bound() -> Outcome {
    let mut r = common::rng(0xb0b);
    let mut tightest = f64::INFINITY;
    for k in 0..100u64 {
        let n = r.gen_range(2..=12);
        let g = random_weight_graph(20_000 + k, n);
        let sol = solve_second_eigenpair(&g).map_err(|e| e.to_string())?;
        let oracle = exhaustive_min_ncut(&g);
        let (_, brute) = brute_force_min_ncut(&g).map_err(|e| e.to_string())?;
        check((brute - oracle).abs() <= 1e-12 * oracle.max(1.0), || {
            format!("graph {k}: brute force {brute} vs exhaustive {oracle}")
        })?;
        check(sol.lambda1 <= brute + 1e-10, || format!("graph {k} (N={n}): λ1 {} > {brute}", sol.lambda1))?;
        tightest = tightest.min(brute - sol.lambda1);
    }
    Ok(format!("100 graphs, zero violations beyond 1e-10 slack (min brute - λ1 = {tightest:.1e})"))
}

fn block_recovery() -> Outcome {
    let mut r = common::rng(0xb10c);
    for k in 0..50u64 {
        let rows = r.gen_range(2..=14);
        let cols = r.gen_range(2..=14);
        let (h, w) = (r.gen_range(1..=rows), r.gen_range(1..=cols));
        if h * w == rows * cols {
            continue;
        }
        let (row0, col0) = (r.gen_range(0..=rows - h), r.gen_range(0..=cols - w));
        let block = common::Block { row0, row1: row0 + h - 1, col0, col1: col0 + w - 1 };
        let noise = r.gen_range(0.0..0.6);
        let p = common::planted_grid(rows, cols, block, 12, 8, 0.0, noise, 30_000 + k);
        let g = build_graph(&p.grid, &GraphConfig::default()).map_err(|e| e.to_string())?;
        let sol = solve_second_eigenpair(&g).map_err(|e| e.to_string())?;
        let split = bipartition_by_mean(&sol.y1);
        let truth: Vec<bool> = (0..rows * cols).map(|i| block.contains(i / cols, i % cols)).collect();
        let got: Vec<bool> = split.labels.iter().map(|s| *s == Side::A).collect();
        let flipped: Vec<bool> = got.iter().map(|v| !v).collect();
        check(got == truth || flipped == truth, || format!("case {k}: {rows}x{cols} block {block:?} not recovered"))?;
    }
    Ok("50 random sizes recovered exactly".into())
}

fn synthetic_discovery() -> Outcome {
    let start = Instant::now();
    let (mut hits, mut worst, mut worst_cross) = (0, 1.0f64, 0.0f64);
    let mut misses = Vec::new();
    for k in 0..25u64 {
        let cross = 0.15 * k as f64 / 24.0;
        let p = common::random_planted(40_000 + k, cross);
        let measured = common::max_cross_similarity(&p);
        check(measured <= 0.15 + 1e-6, || format!("fixture {k}: cross-similarity {measured}"))?;
        worst_cross = worst_cross.max(measured);
        let found = discover(&p.grid, &DiscoveryConfig::default()).map_err(|e| e.to_string())?;
        let iou = box_iou(&found.pixel_box, &p.block.pixel_box(p.grid.patch_size));
        worst = worst.min(iou);
        if iou >= 0.9 { hits += 1 } else { misses.push(format!("{k}:{iou:.3}")) }
    }
    let secs = start.elapsed().as_secs_f64();
    check(hits >= 24, || format!("{hits}/25 with IoU >= 0.9, misses {misses:?}"))?;
    check(secs < 10.0, || format!("took {secs:.2} s"))?;
    Ok(format!("{hits}/25 with IoU >= 0.9 (min {worst:.3}, max cross-similarity {worst_cross:.3}), {secs:.2} s"))
}

fn record(pred: PixelBox, gts: Vec<PixelBox>) -> EvalRecord {
    EvalRecord { image: String::new(), predicted_box: Some(pred), gt_boxes: gts, ..Default::default() }
}

fn close(a: f64, b: f64, what: &str) -> Result<(), String> {
    check((a - b).abs() <= 1e-9, || format!("{what}: {a} vs {b}"))
}

fn metric_oracles() -> Outcome {
    let unit = PixelBox::new(0.0, 0.0, 10.0, 10.0);
    // Hand-enumerated box IoUs.
    close(box_iou(&unit, &PixelBox::new(5.0, 0.0, 15.0, 10.0)), 50.0 / 150.0, "half overlap")?;
    close(box_iou(&unit, &PixelBox::new(2.0, 2.0, 4.0, 4.0)), 4.0 / 100.0, "nested")?;
    close(box_iou(&unit, &PixelBox::new(10.0, 0.0, 20.0, 10.0)), 0.0, "touching")?;
    close(box_iou(&unit, &PixelBox::new(5.0, 5.0, 15.0, 15.0)), 25.0 / 175.0, "corner")?;

    // CorLoc: IoUs 0.6, 0.4, 0.9 and a second GT box that rescues one record.
    let h = |frac: f64| PixelBox::new(0.0, 0.0, 10.0, 10.0 * frac);
    let recs = vec![
        record(h(0.6), vec![unit]),
        record(h(0.4), vec![unit]),
        record(h(0.9), vec![unit]),
        record(h(0.4), vec![unit, h(0.5)]),
    ];
    close(corloc(&recs).map_err(|e| e.to_string())?, 3.0 / 4.0, "corloc")?;
    let boundary = corloc(&[record(h(0.5), vec![unit])]).map_err(|e| e.to_string())?;
    check(boundary == 0.0, || "IoU = 0.5 counted as correct".into())?;

    // Fβ by hand.
    close(f_beta(0.5, 0.25, 0.3), 1.3 * 0.125 / (0.15 + 0.25), "f_beta")?;
    close(f_beta(0.0, 0.0, 0.3), 0.0, "f_beta 0/0")?;

    // Mask metrics against the exhaustive-threshold oracle.
    let pred: Vec<f64> = (0..16).map(|i| f64::from(15 - i) / 15.0).collect();
    let gt: Vec<bool> = (0..16).map(|i| i / 4 < 2 && i % 4 < 2).collect();
    let s = saliency_scores(&pred, &gt, DEFAULT_BETA_SQUARED).map_err(|e| e.to_string())?;
    close(s.max_f_beta, f_beta(1.0, 0.5, 0.3), "ramp maxF")?;
    close(s.iou, 0.5, "ramp IoU")?;
    close(s.accuracy, 0.75, "ramp accuracy")?;
    let mut r = common::rng(0x5a1);
    for k in 0..100 {
        let n = r.gen_range(1..300);
        let pred: Vec<f64> = (0..n)
            .map(|_| if r.gen_bool(0.5) { f64::from(r.gen_range(0u8..=255)) / 255.0 } else { r.gen_range(0.0..=1.0) })
            .collect();
        let density = r.gen_range(0.0..=1.0);
        let gt: Vec<bool> = (0..n).map(|_| r.gen_bool(density)).collect();
        let s = saliency_scores(&pred, &gt, DEFAULT_BETA_SQUARED).map_err(|e| e.to_string())?;
        let (f, iou, acc) = common::saliency_oracle(&pred, &gt, DEFAULT_BETA_SQUARED);
        close(s.max_f_beta, f, &format!("maxF fixture {k}"))?;
        close(s.iou, iou, &format!("IoU fixture {k}"))?;
        close(s.accuracy, acc, &format!("accuracy fixture {k}"))?;
    }
    Ok("box IoU, CorLoc, Fβ, maxFβ, IoU, accuracy match oracles; IoU = 0.5 counted incorrect".into())
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    files
        .into_iter()
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect()
}

fn determinism() -> Outcome {
    let tmp = TempDir::new().map_err(|e| e.to_string())?;
    let (feats, imgs) = (tmp.path().join("features"), tmp.path().join("images"));
    common::write_corpus(&feats, &imgs, 8);
    let s = |p: &Path| p.to_str().unwrap().to_owned();
    let mut runs = Vec::new();
    for (run, jobs) in [(0, "1"), (1, "1"), (2, "4"), (3, "4")] {
        let out = tmp.path().join(format!("run{run}"));
        fs::create_dir_all(&out).unwrap();
        let det = common::run_cli(["detect", "--features", &s(&feats), "--jobs", jobs, "--out", &s(&out.join("boxes.jsonl"))]);
        check(det.status.success(), || format!("detect failed: {}", String::from_utf8_lossy(&det.stderr)))?;
        let seg = common::run_cli([
            "segment", "--features", &s(&feats), "--jobs", jobs, "--out", &s(&out.join("masks")),
            "--refine", "--images", &s(&imgs),
        ]);
        check(seg.status.success(), || format!("segment failed: {}", String::from_utf8_lossy(&seg.stderr)))?;
        let mut snap = snapshot(&out.join("masks"));
        snap.push(("boxes.jsonl".into(), fs::read(out.join("boxes.jsonl")).unwrap()));
        runs.push(snap);
    }
    check(runs[0].len() == 9, || format!("expected 9 outputs, got {}", runs[0].len()))?;
    for (k, other) in runs.iter().enumerate().skip(1) {
        check(*other == runs[0], || format!("run {k} differs from run 0"))?;
    }
    Ok("4 runs (--jobs 1, 1, 4, 4), 9 outputs each, byte-identical".into())
}

fn degenerate_inputs() -> Outcome {
    let token = [0.25f32, -1.0, 0.5, 2.0];
    for (rows, cols, k) in [(1, 2, 16), (5, 7, 8), (12, 9, 16)] {
        let data: Vec<f32> = (0..rows * cols).flat_map(|_| token).collect();
        let grid = FeatureGrid::with_exact_image(rows, cols, 4, k, data).map_err(|e| e.to_string())?;
        for edge_mode in [EdgeMode::Binary, EdgeMode::Continuous] {
            for eigen_method in [EigenMethod::Dense, EigenMethod::Lanczos] {
                let cfg = DiscoveryConfig {
                    graph: GraphConfig { edge_mode, ..GraphConfig::default() },
                    eigen_method,
                    ..DiscoveryConfig::default()
                };
                let found = discover(&grid, &cfg).map_err(|e| format!("{rows}x{cols}: {e}"))?;
                let full = PixelBox::new(0.0, 0.0, grid.image_width as f64, grid.image_height as f64);
                check(found.degenerate, || format!("{rows}x{cols} {edge_mode:?}: not flagged"))?;
                check(found.pixel_box == full, || format!("{rows}x{cols}: box {:?}", found.pixel_box))?;
                check(found.lambda1.is_finite() && found.mean.is_finite(), || "NaN in result".into())?;
            }
        }
    }
    // The solver itself also stays finite on a uniform graph.
    let g = AffinityGraph::from_edges(vec![1.0; 36], (6, 1)).map_err(|e| e.to_string())?;
    let sol = solve_second_eigenpair_with(&g, EigenMethod::Dense).map_err(|e| e.to_string())?;
    check(sol.y1.iter().all(|v| v.is_finite()) && sol.repeated_eigenvalue, || "uniform graph not flagged".into())?;
    Ok("constant grids flagged with full-image box, no NaN".into())
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 7] = [
        ("eigensolver correctness", eigensolver_correctness),
        ("relaxation lower bound", relaxation_lower_bound),
        ("block recovery", block_recovery),
        ("synthetic discovery", synthetic_discovery),
        ("metric oracles", metric_oracles),
        ("determinism", determinism),
        ("degenerate inputs", degenerate_inputs),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, criterion) in criteria {
        let outcome = panic::catch_unwind(AssertUnwindSafe(criterion))
            .unwrap_or_else(|e| Err(format!("panicked: {:?}", e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string())))));
        match outcome {
            Ok(detail) => println!("[PASS] {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("[FAIL] {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 7 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
